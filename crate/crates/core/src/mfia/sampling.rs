use std::collections::HashSet;
use std::io::{Read, Write};

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{estimate_angle, GrayImage, TrialFibreConfig};
use crate::error::{ensure, Result};

/// One measured misalignment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MisalignmentSample {
    pub x1_mm: f64,
    pub x3_mm: f64,
    pub phi_rad: f64,
}

/// Misalignment measurements taken from one image.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MisalignmentSamples {
    pub source: String,
    pub points: Vec<MisalignmentSample>,
}

impl MisalignmentSamples {
    pub fn new(source: impl Into<String>, points: Vec<MisalignmentSample>) -> Result<Self> {
        let s = Self {
            source: source.into(),
            points,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        for p in &self.points {
            ensure!(
                p.phi_rad.is_finite() && p.phi_rad.abs() < std::f64::consts::FRAC_PI_2,
                Data,
                "misalignment {} out of range",
                p.phi_rad
            );
            ensure!(
                p.x1_mm.is_finite() && p.x3_mm.is_finite(),
                Data,
                "non-finite sample position"
            );
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for p in &self.points {
            w.serialize(p)?;
        }
        if self.points.is_empty() {
            w.write_record(["x1_mm", "x3_mm", "phi_rad"])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(input: R, source: impl Into<String>) -> Result<Self> {
        let mut r = csv::Reader::from_reader(input);
        let points = r.deserialize().collect::<Result<Vec<_>, _>>()?;
        Self::new(source, points)
    }
}

/// Rectangle of pixels `[col0, col1) x [row0, row1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Cell {
    pub col0: usize,
    pub col1: usize,
    pub row0: usize,
    pub row1: usize,
}

impl Cell {
    pub fn contains(&self, col: usize, row: usize) -> bool {
        (self.col0..self.col1).contains(&col) && (self.row0..self.row1).contains(&row)
    }

    pub fn area(&self) -> usize {
        (self.col1 - self.col0) * (self.row1 - self.row0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellStats {
    pub cell: Cell,
    /// Points measured inside the cell up to and including this level.
    pub points: usize,
    pub mean_abs_phi: f64,
    pub gamma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelRecord {
    pub level: usize,
    pub budget: usize,
    /// New points drawn at this level, one entry per allocation region:
    /// the level-0 cells, or the parent cells for deeper levels.
    pub allocated: Vec<usize>,
    /// Points whose angle could not be measured.
    pub failed: usize,
    /// Whether the allocation fell back to uniform because the parent
    /// level saw no misalignment.
    pub uniform_fallback: bool,
    pub cells: Vec<CellStats>,
}

impl LevelRecord {
    pub fn total_allocated(&self) -> usize {
        self.allocated.iter().sum()
    }
}

/// Cell statistics of every sampling level, for inspection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleAllocationTree {
    pub base_cols: usize,
    pub base_rows: usize,
    pub levels: Vec<LevelRecord>,
}

impl SampleAllocationTree {
    pub fn write_json<W: Write>(&self, out: W) -> Result<()> {
        serde_json::to_writer_pretty(out, self)?;
        Ok(())
    }

    pub fn read_json<R: Read>(input: R) -> Result<Self> {
        Ok(serde_json::from_reader(input)?)
    }
}

/// Shape of the hierarchical sampling: `base_cols x base_rows` level-0
/// cells, each split in four at every further level, with `budgets[j]`
/// points requested at level `j`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingPlan {
    pub base_cols: usize,
    pub base_rows: usize,
    pub budgets: Vec<usize>,
}

impl Default for SamplingPlan {
    fn default() -> Self {
        Self {
            base_cols: 4,
            base_rows: 3,
            budgets: vec![600; 3],
        }
    }
}

impl SamplingPlan {
    pub fn levels(&self) -> usize {
        self.budgets.len()
    }

    pub fn cells_at(&self, level: usize) -> usize {
        (self.base_cols * self.base_rows) << (2 * level)
    }
}

/// Splits `[0, w) x [0, h)` into `ncols x nrows` cells. Edges are rounded
/// multiples of `w / ncols`, so doubling the count nests exactly.
fn cells(w: usize, h: usize, ncols: usize, nrows: usize) -> Vec<Cell> {
    let edge = |k: usize, n: usize, len: usize| ((k * len) as f64 / n as f64).round() as usize;
    let mut out = Vec::with_capacity(ncols * nrows);
    for r in 0..nrows {
        for c in 0..ncols {
            out.push(Cell {
                col0: edge(c, ncols, w),
                col1: edge(c + 1, ncols, w),
                row0: edge(r, nrows, h),
                row1: edge(r + 1, nrows, h),
            });
        }
    }
    out
}

fn stream_rng(seed: u64, level: usize, region: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((level as u64) << 32) | region as u64);
    rng
}

/// Adaptive multilevel misalignment sampling.
///
/// Level 0 draws `ceil(N0 / m0)` pixels in every base cell. Each deeper level
/// draws `ceil(gamma_i N_j)` new pixels inside every cell `i` of the level
/// above, where `gamma_i` is that cell's share of the summed mean absolute
/// misalignment. Pixels are drawn without replacement and never revisited;
/// columns too close to the side edges for any fibre are excluded.
pub fn hierarchical_sample(
    img: &GrayImage,
    cfg: &TrialFibreConfig,
    plan: &SamplingPlan,
    seed: u64,
    source: &str,
) -> Result<(SampleAllocationTree, MisalignmentSamples)> {
    cfg.validate()?;
    ensure!(plan.levels() >= 1, Parameter, "at least one sampling level is required");
    ensure!(
        plan.base_cols >= 1 && plan.base_rows >= 1,
        Parameter,
        "need at least one base cell"
    );
    let deepest = plan.levels() - 1;
    ensure!(
        plan.base_cols << deepest <= img.width() && plan.base_rows << deepest <= img.height(),
        Parameter,
        "{} levels of {}x{} cells do not fit a {}x{} image",
        plan.levels(),
        plan.base_cols,
        plan.base_rows,
        img.width(),
        img.height()
    );

    let margin = cfg.edge_margin();
    let usable = |col: usize| col >= margin && col + margin < img.width();
    let mut taken: HashSet<(usize, usize)> = HashSet::new();
    let mut measured: Vec<(usize, usize, f64)> = Vec::new();
    let mut levels = Vec::with_capacity(plan.levels());
    let mut parent_gamma: Vec<f64> = Vec::new();

    for (j, &budget) in plan.budgets.iter().enumerate() {
        let regions = if j == 0 {
            cells(img.width(), img.height(), plan.base_cols, plan.base_rows)
        } else {
            cells(
                img.width(),
                img.height(),
                plan.base_cols << (j - 1),
                plan.base_rows << (j - 1),
            )
        };
        let mut fallback = false;
        let counts: Vec<usize> = if j == 0 {
            vec![budget.div_ceil(regions.len()); regions.len()]
        } else {
            if parent_gamma.iter().all(|&g| g == 0.0) || parent_gamma.iter().any(|g| !g.is_finite()) {
                fallback = true;
                parent_gamma = vec![1.0 / regions.len() as f64; regions.len()];
            }
            parent_gamma
                .iter()
                .map(|g| (g * budget as f64).ceil() as usize)
                .collect()
        };

        let draws: Vec<Vec<(usize, usize)>> = regions
            .iter()
            .zip(&counts)
            .enumerate()
            .map(|(i, (cell, &n))| {
                let free: Vec<(usize, usize)> = (cell.row0..cell.row1)
                    .flat_map(|r| (cell.col0..cell.col1).map(move |c| (c, r)))
                    .filter(|&(c, r)| usable(c) && !taken.contains(&(c, r)))
                    .collect();
                let n = n.min(free.len());
                let mut rng = stream_rng(seed, j, i);
                index::sample(&mut rng, free.len(), n)
                    .into_iter()
                    .map(|k| free[k])
                    .collect()
            })
            .collect();

        let allocated: Vec<usize> = draws.iter().map(Vec::len).collect();
        let results: Vec<Vec<(usize, usize, Option<f64>)>> = draws
            .par_iter()
            .map(|pts| {
                pts.iter()
                    .map(|&(c, r)| {
                        let phi = estimate_angle(img, (c as f64, r as f64), cfg)
                            .ok()
                            .map(|t| img.physical_angle(t));
                        (c, r, phi)
                    })
                    .collect()
            })
            .collect();
        let mut failed = 0;
        for (c, r, phi) in results.into_iter().flatten() {
            taken.insert((c, r));
            match phi {
                Some(p) => measured.push((c, r, p)),
                None => failed += 1,
            }
        }

        let level_cells = cells(
            img.width(),
            img.height(),
            plan.base_cols << j,
            plan.base_rows << j,
        );
        let mut stats: Vec<CellStats> = level_cells
            .iter()
            .map(|&cell| {
                let (n, sum) = measured
                    .iter()
                    .filter(|(c, r, _)| cell.contains(*c, *r))
                    .fold((0usize, 0.0), |(n, s), (_, _, p)| (n + 1, s + p.abs()));
                CellStats {
                    cell,
                    points: n,
                    mean_abs_phi: if n > 0 { sum / n as f64 } else { 0.0 },
                    gamma: 0.0,
                }
            })
            .collect();
        let total: f64 = stats.iter().map(|s| s.mean_abs_phi).sum();
        for s in &mut stats {
            s.gamma = if total > 0.0 { s.mean_abs_phi / total } else { 0.0 };
        }
        parent_gamma = stats.iter().map(|s| s.gamma).collect();
        levels.push(LevelRecord {
            level: j,
            budget,
            allocated,
            failed,
            uniform_fallback: fallback,
            cells: stats,
        });
    }

    let points = measured
        .into_iter()
        .map(|(c, r, phi)| {
            let (x1, x3) = img.to_mm(c as f64, r as f64);
            MisalignmentSample {
                x1_mm: x1,
                x3_mm: x3,
                phi_rad: phi,
            }
        })
        .collect();
    let tree = SampleAllocationTree {
        base_cols: plan.base_cols,
        base_rows: plan.base_rows,
        levels,
    };
    Ok((tree, MisalignmentSamples::new(source, points)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn flat_stripes() -> GrayImage {
        GrayImage::from_fn(120, 90, [0.1, 0.05], |_, r| {
            128.0 + 90.0 * (2.0 * std::f64::consts::PI * r as f64 / 9.0).sin()
        })
        .unwrap()
    }

    #[test]
    fn cells_nest_exactly() {
        let parents = cells(347, 199, 4, 3);
        let children = cells(347, 199, 8, 6);
        for (i, p) in parents.iter().enumerate() {
            let (pc, pr) = (i % 4, i / 4);
            let kids: Vec<&Cell> = (0..4)
                .map(|k| &children[(2 * pr + k / 2) * 8 + 2 * pc + k % 2])
                .collect();
            assert_eq!(kids.iter().map(|c| c.area()).sum::<usize>(), p.area());
            assert!(kids.iter().all(|c| p.contains(c.col0, c.row0) && p.contains(c.col1 - 1, c.row1 - 1)));
        }
        assert_eq!(children.iter().map(Cell::area).sum::<usize>(), 347 * 199);
    }

    #[test]
    fn aligned_image_falls_back_to_uniform() {
        let img = flat_stripes();
        let plan = SamplingPlan {
            base_cols: 2,
            base_rows: 2,
            budgets: vec![40, 40, 40],
        };
        let (tree, samples) =
            hierarchical_sample(&img, &TrialFibreConfig::default(), &plan, 7, "flat").unwrap();
        assert!(samples.points.iter().all(|p| p.phi_rad == 0.0));
        assert!(tree.levels[1].uniform_fallback && tree.levels[2].uniform_fallback);
        assert_eq!(tree.levels[0].allocated, vec![10; 4]);
        assert_eq!(tree.levels[1].allocated, vec![10; 4]);
        assert_eq!(tree.levels[2].allocated, vec![3; 16]);
        assert_eq!(samples.len(), 40 + 40 + 48);
    }

    #[test]
    fn allocation_arithmetic_and_conservation() {
        let img = super::super::fibre::tests::stripes(6.0, 10.0);
        let plan = SamplingPlan {
            base_cols: 2,
            base_rows: 2,
            budgets: vec![30, 50, 70],
        };
        let (tree, samples) =
            hierarchical_sample(&img, &TrialFibreConfig::default(), &plan, 3, "s").unwrap();
        for (j, lvl) in tree.levels.iter().enumerate() {
            let m = plan.cells_at(j);
            assert_eq!(lvl.cells.len(), m);
            assert!(lvl.total_allocated() >= lvl.budget);
            assert!(lvl.total_allocated() <= lvl.budget + m);
            let g: f64 = lvl.cells.iter().map(|c| c.gamma).sum();
            assert!((g - 1.0).abs() < 1e-12);
        }
        let mut seen = HashSet::new();
        for p in &samples.points {
            assert!(seen.insert(((p.x1_mm * 1e6) as i64, (p.x3_mm * 1e6) as i64)));
        }
        let again = hierarchical_sample(&img, &TrialFibreConfig::default(), &plan, 3, "s").unwrap();
        assert_eq!(again.1, samples);
    }

    #[test]
    fn csv_and_json_round_trip() {
        let img = flat_stripes();
        let plan = SamplingPlan {
            base_cols: 2,
            base_rows: 1,
            budgets: vec![10],
        };
        let (tree, samples) =
            hierarchical_sample(&img, &TrialFibreConfig::default(), &plan, 1, "x").unwrap();
        let mut buf = Vec::new();
        samples.write_csv(&mut buf).unwrap();
        assert!(buf.starts_with(b"x1_mm,x3_mm,phi_rad\n"));
        assert_eq!(MisalignmentSamples::read_csv(buf.as_slice(), "x").unwrap(), samples);
        let mut js = Vec::new();
        tree.write_json(&mut js).unwrap();
        assert_eq!(SampleAllocationTree::read_json(js.as_slice()).unwrap(), tree);
    }

    #[test]
    fn rejects_oversized_plans() {
        let img = flat_stripes();
        let plan = SamplingPlan {
            base_cols: 70,
            base_rows: 50,
            budgets: vec![10, 10],
        };
        assert!(hierarchical_sample(&img, &TrialFibreConfig::default(), &plan, 1, "x").is_err());
        let empty = SamplingPlan {
            budgets: vec![],
            ..SamplingPlan::default()
        };
        assert!(hierarchical_sample(&img, &TrialFibreConfig::default(), &empty, 1, "x").is_err());
    }
}
