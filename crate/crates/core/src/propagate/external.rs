use std::io::{Read, Write};
use std::path::PathBuf;
use std::process::{Command, Stdio};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::montecarlo::{FieldContext, ForwardStrengthModel};
use crate::error::{ensure, Error, Result};
use crate::klfield::{SectionGrid, WrinkleField, WrinkleParams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExternalSpec {
    /// Program followed by its arguments. The path of the wrinkle CSV is
    /// appended as the last argument.
    pub command: Vec<String>,
    pub timeout_s: f64,
    /// Further attempts after a failed one.
    pub retries: usize,
    pub fidelity: Option<u64>,
}

impl ExternalSpec {
    pub fn validate(&self) -> Result<()> {
        ensure!(!self.command.is_empty(), Parameter, "external model command is empty");
        ensure!(self.timeout_s > 0.0, Parameter, "timeout must be positive");
        Ok(())
    }
}

/// Runs a user command per sample. The command receives the wrinkle
/// displacement on a grid as `x1_mm,x3_mm,W_mm` and prints `{"M_c": value}`.
pub struct ExternalModel<'a> {
    pub spec: ExternalSpec,
    pub field: FieldContext<'a>,
    /// Points at which the displacement is written.
    pub export: SectionGrid,
    pub workdir: PathBuf,
}

#[derive(Deserialize)]
struct Reply {
    #[serde(rename = "M_c")]
    mc: f64,
}

impl ExternalModel<'_> {
    fn write_field(&self, xi: &WrinkleParams, path: &std::path::Path) -> Result<()> {
        let basis = self.field.cache.get(xi.length_scale)?;
        let w = WrinkleField::new(xi, &basis, self.field.decay)?;
        let mut out = csv::Writer::from_path(path)?;
        out.write_record(["x1_mm", "x3_mm", "W_mm"])?;
        for p in self.export.points() {
            out.write_record([
                format!("{:.9}", p.x1),
                format!("{:.9}", p.x3),
                format!("{:.12e}", w.displacement_unchecked(p)),
            ])?;
        }
        out.flush()?;
        Ok(())
    }

    fn attempt(&self, path: &std::path::Path) -> Result<f64> {
        let mut child = Command::new(&self.spec.command[0])
            .args(&self.spec.command[1..])
            .arg(path)
            .stdin(Stdio::null())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .spawn()
            .map_err(|e| Error::External(format!("cannot start {}: {e}", self.spec.command[0])))?;
        let mut stdout = child.stdout.take().expect("piped stdout");
        let reader = std::thread::spawn(move || {
            let mut s = String::new();
            stdout.read_to_string(&mut s).map(|_| s)
        });
        let deadline = Instant::now() + Duration::from_secs_f64(self.spec.timeout_s);
        let status = loop {
            if let Some(status) = child.try_wait()? {
                break status;
            }
            if Instant::now() >= deadline {
                let _ = child.kill();
                let _ = child.wait();
                return Err(Error::External(format!(
                    "timed out after {} s",
                    self.spec.timeout_s
                )));
            }
            std::thread::sleep(Duration::from_millis(5));
        };
        let text = reader
            .join()
            .map_err(|_| Error::External("stdout reader panicked".into()))??;
        if !status.success() {
            let mut err = String::new();
            if let Some(mut e) = child.stderr.take() {
                let _ = e.read_to_string(&mut err);
            }
            return Err(Error::External(format!("exited with {status}: {}", err.trim())));
        }
        let reply: Reply = serde_json::from_str(text.trim())
            .map_err(|e| Error::External(format!("bad reply {:?}: {e}", text.trim())))?;
        ensure!(
            reply.mc.is_finite() && reply.mc > 0.0,
            External,
            "model returned non-positive strength {}",
            reply.mc
        );
        Ok(reply.mc)
    }
}

impl ForwardStrengthModel for ExternalModel<'_> {
    fn id(&self) -> String {
        format!("external({})", self.spec.command.join(" "))
    }

    fn fidelity(&self) -> Option<u64> {
        self.spec.fidelity
    }

    fn evaluate(&self, xi: &WrinkleParams) -> Result<f64> {
        self.spec.validate()?;
        let mut file = tempfile::Builder::new()
            .prefix("wrinkle-")
            .suffix(".csv")
            .tempfile_in(&self.workdir)?;
        self.write_field(xi, file.path())?;
        file.flush()?;
        let mut last = None;
        for _ in 0..=self.spec.retries {
            match self.attempt(file.path()) {
                Ok(m) => return Ok(m),
                Err(e) => last = Some(e),
            }
        }
        Err(last.expect("at least one attempt"))
    }
}

#[cfg(all(test, unix))]
mod tests {
    use super::*;
    use crate::klfield::{BasisCache, CovarianceSpec, GeometrySpec};

    fn run(script: &str, timeout_s: f64, retries: usize) -> Result<f64> {
        let geom = GeometrySpec::default();
        let cov = CovarianceSpec::new(0.1425, 12.9, geom.arc_length(), 64).unwrap();
        let cache = BasisCache::new(cov, 4, 0.05).unwrap();
        let decay = geom.decay(4.8, 4, 1e-6).unwrap();
        let grid = SectionGrid::for_geometry(&geom);
        let dir = tempfile::tempdir().unwrap();
        let model = ExternalModel {
            spec: ExternalSpec {
                command: vec!["sh".into(), "-c".into(), script.into(), "model".into()],
                timeout_s,
                retries,
                fidelity: None,
            },
            field: FieldContext { cache: &cache, decay: &decay, grid: &grid },
            export: SectionGrid::uniform(geom.arc_length(), 5, geom.thickness(), 3),
            workdir: dir.path().to_path_buf(),
        };
        model.evaluate(&WrinkleParams::new(vec![1.0, 0.0, 0.0, 0.0], 12.9))
    }

    #[test]
    fn reads_reply_and_sees_field() {
        // the script counts data rows of the CSV it was handed
        let m = run(r#"n=$(($(wc -l < "$1") - 1)); echo "{\"M_c\": $n.5}""#, 10.0, 0).unwrap();
        assert_eq!(m, 15.5);
    }

    #[test]
    fn failures_and_timeouts() {
        assert!(matches!(run("exit 3", 10.0, 1), Err(Error::External(_))));
        assert!(matches!(run("echo nonsense", 10.0, 0), Err(Error::External(_))));
        assert!(matches!(run("echo '{\"M_c\": -1}'", 10.0, 0), Err(Error::External(_))));
        let e = run("sleep 5", 0.2, 0).unwrap_err();
        assert!(e.to_string().contains("timed out"));
    }
}
