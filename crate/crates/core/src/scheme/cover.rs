//! Space-time domains and greedy disjoint ball covers.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fields::Support;
use crate::qmc::{unit_ball_volume, Halton};
use crate::waves::Anchor;

/// Ω, a ball or an axis-aligned box in R^(n+1).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Domain {
    Ball { center: Vec<f64>, radius: f64 },
    Box { lo: Vec<f64>, hi: Vec<f64> },
}

impl Domain {
    /// Ball of the given radius at the origin of R^k.
    pub fn ball(k: usize, radius: f64) -> Self {
        Domain::Ball { center: vec![0.0; k], radius }
    }

    /// Cube [-half, half]^k.
    pub fn cube(k: usize, half: f64) -> Self {
        Domain::Box { lo: vec![-half; k], hi: vec![half; k] }
    }

    pub fn dim(&self) -> usize {
        match self {
            Domain::Ball { center, .. } => center.len(),
            Domain::Box { lo, .. } => lo.len(),
        }
    }

    /// Rejects empty or malformed domains.
    pub fn validate(&self) -> Result<()> {
        match self {
            Domain::Ball { center, radius } => {
                if center.is_empty() || !(*radius > 0.0) || !radius.is_finite() {
                    return Err(Error::Config(format!("empty ball domain (radius {radius})")));
                }
            }
            Domain::Box { lo, hi } => {
                if lo.is_empty() || lo.len() != hi.len() || lo.iter().zip(hi).any(|(a, b)| !(b > a)) {
                    return Err(Error::Config("empty box domain".into()));
                }
            }
        }
        Ok(())
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        self.inner_distance(x) > 0.0
    }

    /// Distance from x to the complement (negative outside).
    pub fn inner_distance(&self, x: &[f64]) -> f64 {
        match self {
            Domain::Ball { center, radius } => {
                radius - x.iter().zip(center).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
            }
            Domain::Box { lo, hi } => {
                (0..lo.len()).map(|a| (x[a] - lo[a]).min(hi[a] - x[a])).fold(f64::INFINITY, f64::min)
            }
        }
    }

    pub fn volume(&self) -> f64 {
        match self {
            Domain::Ball { center, radius } => unit_ball_volume(center.len()) * radius.powi(center.len() as i32),
            Domain::Box { lo, hi } => lo.iter().zip(hi).map(|(a, b)| b - a).product(),
        }
    }

    pub fn bounding_box(&self) -> (Vec<f64>, Vec<f64>) {
        match self {
            Domain::Ball { center, radius } => {
                (center.iter().map(|c| c - radius).collect(), center.iter().map(|c| c + radius).collect())
            }
            Domain::Box { lo, hi } => (lo.clone(), hi.clone()),
        }
    }

    /// Volume by quasi-Monte Carlo in the bounding box.
    pub fn volume_mc(&self, samples: usize) -> f64 {
        let (lo, hi) = self.bounding_box();
        let k = lo.len();
        let mut hal = Halton::plain(k);
        let mut u = vec![0.0; k];
        let mut x = vec![0.0; k];
        let mut inside = 0usize;
        for _ in 0..samples {
            hal.next_point(&mut u);
            for a in 0..k {
                x[a] = lo[a] + u[a] * (hi[a] - lo[a]);
            }
            inside += self.contains(&x) as usize;
        }
        let boxv: f64 = lo.iter().zip(&hi).map(|(a, b)| b - a).product();
        boxv * inside as f64 / samples.max(1) as f64
    }

    /// Storage support for fields living in Ω and their mollifications at
    /// radius `pad`.
    pub fn support(&self, pad: f64) -> Support {
        match self {
            Domain::Ball { center, radius } => Support::Ball { center: center.clone(), radius: radius + pad },
            Domain::Box { .. } => Support::Full,
        }
    }

    /// Largest side of the bounding box.
    pub fn extent(&self) -> f64 {
        let (lo, hi) = self.bounding_box();
        lo.iter().zip(&hi).map(|(a, b)| b - a).fold(0.0, f64::max)
    }
}

/// Candidates tried per radius level.
const PASS_CANDIDATES: usize = 2048;
const RADIUS_LEVELS: usize = 10;
pub const BALL_CAP: usize = 10_000;

/// Greedy disjoint balls inside Ω with radii below `kappa`, placed until the
/// uncovered fraction drops below `sigma_budget`.
///
/// Each candidate point gets the largest ball that fits (capped just under
/// kappa); it is kept when that radius reaches the current level, so large
/// balls go first.
pub fn vitali_cover(omega: &Domain, kappa: f64, sigma_budget: f64, seed: u64) -> Result<Vec<Anchor>> {
    omega.validate()?;
    if !(kappa > 0.0) || !kappa.is_finite() {
        return Err(Error::InvalidParameter { name: "kappa", value: kappa });
    }
    if !(sigma_budget > 0.0 && sigma_budget < 1.0) {
        return Err(Error::InvalidParameter { name: "sigma_budget", value: sigma_budget });
    }
    let k = omega.dim();
    let vol = omega.volume();
    let vk = unit_ball_volume(k);
    let (lo, hi) = omega.bounding_box();
    let rmax = kappa * (1.0 - 1e-9);
    let mut hal = Halton::new(k, seed, "vitali");
    let mut u = vec![0.0; k];
    let mut x = vec![0.0; k];
    let mut balls: Vec<Anchor> = Vec::new();
    let mut covered = 0.0;
    let target = 1.0 - sigma_budget;
    let top = rmax.min(0.5 * omega.extent());
    for level in 0..RADIUS_LEVELS * k {
        let t = top * 2f64.powf(-(level as f64) / k as f64);
        for _ in 0..PASS_CANDIDATES {
            hal.next_point(&mut u);
            for a in 0..k {
                x[a] = lo[a] + u[a] * (hi[a] - lo[a]);
            }
            let mut fit = rmax.min(omega.inner_distance(&x));
            if fit < t {
                continue;
            }
            for b in &balls {
                let d = x.iter().zip(&b.center).map(|(p, q)| (p - q) * (p - q)).sum::<f64>().sqrt();
                fit = fit.min(d - b.radius);
                if fit < t {
                    break;
                }
            }
            if fit < t {
                continue;
            }
            covered += vk * fit.powi(k as i32) / vol;
            balls.push(Anchor { center: x.clone(), radius: fit });
            if covered > target {
                return Ok(balls);
            }
            if balls.len() >= BALL_CAP {
                return Err(Error::Covering { achieved: covered, target });
            }
        }
    }
    Err(Error::Covering { achieved: covered, target })
}

/// 1 - total ball volume / |Ω|.
pub fn uncovered_fraction(omega: &Domain, balls: &[Anchor]) -> f64 {
    let k = omega.dim();
    let covered: f64 = balls.iter().map(|b| unit_ball_volume(k) * b.radius.powi(k as i32)).sum();
    1.0 - covered / omega.volume()
}
