use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use wildmhd::algebra::check_dimension;
use wildmhd::scheme::{Domain, IterationConfig};
use wildmhd::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum OmegaKind {
    Ball,
    Box,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OmegaSpec {
    pub kind: OmegaKind,
    /// Radius of the ball, or half the side of the cube, centered at 0.
    pub size: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub n: usize,
    pub m: f64,
    /// Lattice points per axis.
    pub grid: usize,
    pub omega: OmegaSpec,
    pub iters: usize,
    pub delta: f64,
    pub kappa: f64,
    pub sigma_budget: f64,
    pub seed: u64,
    pub atom_count: usize,
    pub out_dir: PathBuf,
    pub certify_samples: usize,
    pub retry_cap: u32,
}

impl Default for RunConfig {
    fn default() -> Self {
        let it = IterationConfig::default();
        RunConfig {
            n: it.n,
            m: it.m,
            grid: it.points_per_axis,
            omega: OmegaSpec { kind: OmegaKind::Ball, size: 0.3 },
            iters: it.iters,
            delta: it.delta,
            kappa: it.kappa,
            sigma_budget: it.sigma_budget,
            seed: it.seed,
            atom_count: it.atom_count,
            out_dir: PathBuf::from("out"),
            certify_samples: it.certify_samples,
            retry_cap: it.retry_cap,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn domain(&self) -> Domain {
        let k = self.n + 1;
        match self.omega.kind {
            OmegaKind::Ball => Domain::ball(k, self.omega.size),
            OmegaKind::Box => Domain::cube(k, self.omega.size),
        }
    }

    pub fn iteration(&self) -> IterationConfig {
        IterationConfig {
            n: self.n,
            m: self.m,
            iters: self.iters,
            points_per_axis: self.grid,
            omega: self.domain(),
            delta: self.delta,
            kappa: self.kappa,
            sigma_budget: self.sigma_budget,
            seed: self.seed,
            atom_count: self.atom_count,
            r_schedule: None,
            certify_samples: self.certify_samples,
            retry_cap: self.retry_cap,
        }
    }

    pub fn validate(&self) -> Result<()> {
        // the dimension check comes first so n = 3 reports itself as such
        check_dimension(self.n)?;
        self.iteration().validate()
    }
}
