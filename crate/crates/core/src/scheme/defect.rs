//! Compatibility defect of an iterate and pointwise saturation statistics.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::Serialize;

use super::cover::Domain;
use crate::algebra::{state_dim, State};
use crate::error::{Error, Result};
use crate::fields::FieldGrid;

#[derive(Debug, Clone)]
pub struct CompatDefect {
    /// L^m(Ω) norms of F and G (Frobenius pointwise).
    pub f_norm: f64,
    pub g_norm: f64,
    /// Spatial divergences div F, div G (n components, zero on the box
    /// boundary layer).
    pub f_grid: FieldGrid,
    pub g_grid: FieldGrid,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DefectNorms {
    pub f_norm: f64,
    pub g_norm: f64,
    pub div_f_max: f64,
    pub div_g_max: f64,
}

impl CompatDefect {
    pub fn norms(&self) -> DefectNorms {
        let amax = |g: &FieldGrid| {
            g.values.par_chunks(g.comps).map(|v| v.iter().map(|x| x * x).sum::<f64>().sqrt()).reduce(|| 0.0, f64::max)
        };
        DefectNorms { f_norm: self.f_norm, g_norm: self.g_norm, div_f_max: amax(&self.f_grid), div_g_max: amax(&self.g_grid) }
    }
}

/// F = u(x)u - b(x)b - M - (|u|^2 - |b|^2) I / n and G = b(x)u - u(x)b - Q.
pub fn defect_tensors(z: &State) -> (DMatrix<f64>, DMatrix<f64>) {
    let r = &z.reduced;
    let n = z.n();
    let t = (r.u.norm_squared() - r.b.norm_squared()) / n as f64;
    let f = &r.u * r.u.transpose() - &r.b * r.b.transpose() - &r.m - DMatrix::identity(n, n) * t;
    let g = &r.b * r.u.transpose() - &r.u * r.b.transpose() - &r.q;
    (f, g)
}

/// Row-wise divergence over the n spatial axes of an n x n tensor grid.
fn spatial_divergence(t: &FieldGrid, n: usize) -> FieldGrid {
    let mut out = t.zeros_like(n);
    let p = t.spec.points_per_axis;
    let k = n + 1;
    let spec = &t.spec;
    out.values.par_chunks_mut(n).enumerate().for_each_init(
        || vec![0usize; k],
        |mi, (slot, v)| {
            let idx = t.site(slot);
            spec.multi(idx, mi);
            if mi.iter().any(|&i| i == 0 || i + 1 == p) {
                return;
            }
            let zero = vec![0.0; n * n];
            for j in 0..n {
                let stride = p.pow((k - 1 - j) as u32);
                let f = t.at(idx + stride).unwrap_or(&zero);
                let b = t.at(idx - stride).unwrap_or(&zero);
                let h2 = 2.0 * spec.step(j);
                for (i, o) in v.iter_mut().enumerate() {
                    *o += (f[i * n + j] - b[i * n + j]) / h2;
                }
            }
        },
    );
    out
}

/// Defect of a sampled state grid; norms are taken over lattice points in Ω.
pub fn compat_defect_grid(g: &FieldGrid, omega: &Domain, m: f64) -> Result<CompatDefect> {
    let n = g.spec.n;
    if g.comps != state_dim(n) {
        return Err(Error::Config("defect needs a full-state grid".into()));
    }
    let mut fg = g.zeros_like(n * n);
    let mut gg = g.zeros_like(n * n);
    let tensors: Vec<(DMatrix<f64>, DMatrix<f64>)> =
        (0..g.active_points()).into_par_iter().map(|s| defect_tensors(&g.state(s))).collect();
    for (s, (f, q)) in tensors.iter().enumerate() {
        for i in 0..n {
            for j in 0..n {
                fg.values[s * n * n + i * n + j] = f[(i, j)];
                gg.values[s * n * n + i * n + j] = q[(i, j)];
            }
        }
    }
    let norm = |t: &FieldGrid| {
        let s = t.reduce(|x, v| {
            if omega.contains(x) {
                v.iter().map(|a| a * a).sum::<f64>().sqrt().powf(m)
            } else {
                0.0
            }
        });
        (s * t.spec.cell_volume()).powf(1.0 / m)
    };
    Ok(CompatDefect {
        f_norm: norm(&fg),
        g_norm: norm(&gg),
        f_grid: spatial_divergence(&fg, n),
        g_grid: spatial_divergence(&gg, n),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SaturationStats {
    pub points: usize,
    pub mean_u_norm: f64,
    pub mean_b_norm: f64,
    /// (eps, fraction of points with |u| >= 1 - eps and |b| >= 1 - eps).
    pub frac_above: Vec<(f64, f64)>,
}

pub const SATURATION_EPS: [f64; 3] = [0.1, 0.05, 0.01];

/// Pointwise |u|, |b| statistics over lattice points in Ω.
pub fn saturation_stats_grid(g: &FieldGrid, omega: &Domain) -> SaturationStats {
    let n = g.spec.n;
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let inside = |x: &[f64]| omega.contains(x) as u8 as f64;
    let count = g.reduce(|x, _| inside(x));
    let su = g.reduce(|x, v| inside(x) * norm(&v[..n]));
    let sb = g.reduce(|x, v| inside(x) * norm(&v[n..2 * n]));
    let frac_above = SATURATION_EPS
        .iter()
        .map(|&eps| {
            let hits = g.reduce(|x, v| {
                let ok = norm(&v[..n]) >= 1.0 - eps && norm(&v[n..2 * n]) >= 1.0 - eps;
                inside(x) * ok as u8 as f64
            });
            (eps, if count > 0.0 { hits / count } else { 0.0 })
        })
        .collect();
    let mean = |s: f64| if count > 0.0 { s / count } else { 0.0 };
    SaturationStats { points: count as usize, mean_u_norm: mean(su), mean_b_norm: mean(sb), frac_above }
}
