//! Synthetic conditional 2-D datasets.
//!
//! Sample `i` is assigned condition `i mod K`, so classes are balanced to
//! within one sample. Draws then come from a ChaCha8 stream seeded with the
//! dataset seed, in sample order:
//!
//! * `gauss8`: `x = μ_c + 0.05·z`, `μ_c = (cos 2πc/8, sin 2πc/8)`.
//! * `spiral2`: `u ~ U(0,1)`, `r = 0.1 + 0.9u + 0.05·z`, `θ = 3πu + πc`,
//!   `x = r·(cos θ, sin θ)`.
//! * `stdnormal`: one condition, `x ~ N(0, I)`.

use std::f64::consts::PI;
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use ndarray::{Array2, ArrayView1};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{arg, Error, Result};

pub const DATA_DIM: usize = 2;
pub const GAUSS8_STD: f64 = 0.05;
pub const SPIRAL_NOISE: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetKind {
    Gauss8,
    Spiral2,
    Stdnormal,
}

impl DatasetKind {
    pub fn num_conditions(self) -> usize {
        match self {
            DatasetKind::Gauss8 => 8,
            DatasetKind::Spiral2 => 2,
            DatasetKind::Stdnormal => 1,
        }
    }
}

impl fmt::Display for DatasetKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DatasetKind::Gauss8 => "gauss8",
            DatasetKind::Spiral2 => "spiral2",
            DatasetKind::Stdnormal => "stdnormal",
        })
    }
}

impl FromStr for DatasetKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gauss8" => Ok(DatasetKind::Gauss8),
            "spiral2" => Ok(DatasetKind::Spiral2),
            "stdnormal" => Ok(DatasetKind::Stdnormal),
            other => arg(format!("unknown dataset kind {other:?}")),
        }
    }
}

/// Mode centres of the `gauss8` benchmark.
pub fn gauss8_means() -> [[f64; 2]; 8] {
    std::array::from_fn(|c| {
        let a = 2.0 * PI * c as f64 / 8.0;
        [a.cos(), a.sin()]
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticDataset {
    pub kind: DatasetKind,
    pub seed: u64,
    /// One sample per row.
    pub points: Array2<f64>,
    pub labels: Vec<u32>,
}

impl SyntheticDataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn num_conditions(&self) -> usize {
        self.kind.num_conditions()
    }

    /// CSV with header `x0,x1,c`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "x0,x1,c")?;
        for (p, c) in self.points.rows().into_iter().zip(&self.labels) {
            writeln!(out, "{},{},{}", p[0], p[1], c)?;
        }
        Ok(())
    }
}

pub fn make_dataset(kind: DatasetKind, n_samples: usize, seed: u64) -> Result<SyntheticDataset> {
    if n_samples == 0 {
        return arg("dataset needs at least one sample");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = kind.num_conditions();
    let means = gauss8_means();
    let mut points = Array2::zeros((n_samples, DATA_DIM));
    let mut labels = Vec::with_capacity(n_samples);
    for (i, mut row) in points.rows_mut().into_iter().enumerate() {
        let c = i % k;
        let z0: f64 = rng.sample(StandardNormal);
        match kind {
            DatasetKind::Gauss8 => {
                let z1: f64 = rng.sample(StandardNormal);
                row[0] = means[c][0] + GAUSS8_STD * z0;
                row[1] = means[c][1] + GAUSS8_STD * z1;
            }
            DatasetKind::Spiral2 => {
                let u: f64 = rng.random();
                let r = 0.1 + 0.9 * u + SPIRAL_NOISE * z0;
                let theta = 3.0 * PI * u + PI * c as f64;
                row[0] = r * theta.cos();
                row[1] = r * theta.sin();
            }
            DatasetKind::Stdnormal => {
                let z1: f64 = rng.sample(StandardNormal);
                row[0] = z0;
                row[1] = z1;
            }
        }
        labels.push(c as u32);
    }
    Ok(SyntheticDataset {
        kind,
        seed,
        points,
        labels,
    })
}

/// Nearest `gauss8` mode; ties go to the smallest index.
pub fn mode_assignment(x: ArrayView1<f64>, kind: DatasetKind) -> Result<u32> {
    if kind != DatasetKind::Gauss8 {
        return arg(format!("mode assignment is only defined for gauss8, not {kind}"));
    }
    if x.len() != DATA_DIM {
        return arg(format!("expected a {DATA_DIM}-D point, got {}", x.len()));
    }
    let d2: Vec<f64> = gauss8_means()
        .iter()
        .map(|m| (x[0] - m[0]).powi(2) + (x[1] - m[1]).powi(2))
        .collect();
    let best = d2.iter().copied().fold(f64::INFINITY, f64::min);
    // Mode radii are 1 only up to rounding, so exact ties need a tolerance.
    let tol = 1e-12 * (1.0 + best);
    Ok(d2.iter().position(|&d| d <= best + tol).expect("eight modes") as u32)
}
