use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileDigest {
    /// Path relative to the run directory.
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

/// Record of one stage run. Everything except `timings_s` is a function of
/// the configuration, the seed and the input files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub stage: String,
    pub seed: u64,
    pub config: serde_json::Value,
    pub inputs: Vec<FileDigest>,
    pub artifacts: Vec<FileDigest>,
    pub warnings: Vec<String>,
    pub exit_code: i32,
    pub timings_s: BTreeMap<String, f64>,
}

pub fn sha256_file(path: &Path) -> Result<(String, u64)> {
    let mut f = File::open(path).map_err(|e| CliError::io(path, e))?;
    let mut hasher = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    let mut total = 0u64;
    loop {
        let n = f.read(&mut buf).map_err(|e| CliError::io(path, e))?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
        total += n as u64;
    }
    Ok((hex::encode(hasher.finalize()), total))
}

fn relative(root: &Path, path: &Path) -> String {
    path.strip_prefix(root)
        .unwrap_or(path)
        .to_string_lossy()
        .replace('\\', "/")
}

pub fn digest(root: &Path, path: &Path) -> Result<FileDigest> {
    let (sha256, bytes) = sha256_file(path)?;
    Ok(FileDigest {
        path: relative(root, path),
        sha256,
        bytes,
    })
}

impl RunManifest {
    pub fn read(path: &Path) -> Result<Self> {
        let f = File::open(path).map_err(|e| CliError::io(path, e))?;
        serde_json::from_reader(f).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    /// Artifacts whose current checksum differs from the recorded one.
    pub fn verify(&self, root: &Path) -> Result<Vec<String>> {
        let mut bad = Vec::new();
        for a in &self.artifacts {
            let p = root.join(&a.path);
            match sha256_file(&p) {
                Ok((h, _)) if h == a.sha256 => {}
                _ => bad.push(a.path.clone()),
            }
        }
        Ok(bad)
    }
}

/// Output directory of one stage; tracks written files and timings.
pub struct StageWriter {
    pub root: PathBuf,
    pub dir: PathBuf,
    stage: String,
    artifacts: Vec<PathBuf>,
    inputs: Vec<PathBuf>,
    timings: BTreeMap<String, f64>,
    started: Instant,
    pub warnings: Vec<String>,
}

impl StageWriter {
    /// Creates `root/stage`, removing files left by an earlier run.
    pub fn create(root: &Path, stage: &str) -> Result<Self> {
        let dir = root.join(stage);
        if dir.exists() {
            std::fs::remove_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
        }
        std::fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
        Ok(Self {
            root: root.to_path_buf(),
            dir,
            stage: stage.to_string(),
            artifacts: Vec::new(),
            inputs: Vec::new(),
            timings: BTreeMap::new(),
            started: Instant::now(),
            warnings: Vec::new(),
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    pub fn input(&mut self, path: &Path) {
        self.inputs.push(path.to_path_buf());
    }

    pub fn time(&mut self, label: &str, since: Instant) {
        self.timings.insert(label.to_string(), since.elapsed().as_secs_f64());
    }

    /// Writes a file through a buffered writer and records it.
    pub fn write<F>(&mut self, name: &str, body: F) -> Result<PathBuf>
    where
        F: FnOnce(&mut BufWriter<File>) -> defect_chain::Result<()>,
    {
        let path = self.path(name);
        let f = File::create(&path).map_err(|e| CliError::io(&path, e))?;
        let mut w = BufWriter::new(f);
        body(&mut w).map_err(|source| CliError::Core {
            context: format!("writing {}", path.display()),
            source,
        })?;
        w.flush().map_err(|e| CliError::io(&path, e))?;
        self.artifacts.push(path.clone());
        Ok(path)
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<PathBuf> {
        self.write(name, |w| {
            serde_json::to_writer_pretty(&mut *w, value)?;
            w.write_all(b"\n")?;
            Ok(())
        })
    }

    /// Records a file written by other means.
    pub fn record(&mut self, path: PathBuf) {
        self.artifacts.push(path);
    }

    pub fn finish<C: Serialize>(mut self, config: &C, seed: u64, exit_code: i32) -> Result<RunManifest> {
        self.timings
            .insert("total".into(), self.started.elapsed().as_secs_f64());
        let inputs = self
            .inputs
            .iter()
            .map(|p| digest(&self.root, p))
            .collect::<Result<_>>()?;
        let artifacts = self
            .artifacts
            .iter()
            .map(|p| digest(&self.root, p))
            .collect::<Result<_>>()?;
        let manifest = RunManifest {
            tool: "defect-chain".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            stage: self.stage.clone(),
            seed,
            config: serde_json::to_value(config).map_err(|e| CliError::Config(e.to_string()))?,
            inputs,
            artifacts,
            warnings: self.warnings.clone(),
            exit_code,
            timings_s: self.timings.clone(),
        };
        let path = self.path("manifest.json");
        let f = File::create(&path).map_err(|e| CliError::io(&path, e))?;
        let mut w = BufWriter::new(f);
        serde_json::to_writer_pretty(&mut w, &manifest).map_err(|e| CliError::Config(e.to_string()))?;
        w.write_all(b"\n").map_err(|e| CliError::io(&path, e))?;
        w.flush().map_err(|e| CliError::io(&path, e))?;
        Ok(manifest)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn manifest_tracks_and_verifies() {
        let tmp = tempfile::tempdir().unwrap();
        let mut s = StageWriter::create(tmp.path(), "demo").unwrap();
        let p = s
            .write("a.txt", |w| {
                w.write_all(b"abc")?;
                Ok(())
            })
            .unwrap();
        let m = s.finish(&serde_json::json!({"k": 1}), 7, 0).unwrap();
        assert_eq!(m.artifacts[0].path, "demo/a.txt");
        assert_eq!(
            m.artifacts[0].sha256,
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
        assert!(m.verify(tmp.path()).unwrap().is_empty());
        std::fs::write(&p, b"abd").unwrap();
        assert_eq!(m.verify(tmp.path()).unwrap(), vec!["demo/a.txt".to_string()]);
        let back = RunManifest::read(&tmp.path().join("demo/manifest.json")).unwrap();
        assert_eq!(back, m);
    }
}
