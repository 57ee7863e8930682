//! Sphere moments and the discretized averaging map T.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::algebra::{check_dimension, k_atom, reduced_dim};
use crate::error::{Error, Result};
use crate::qmc::SphereSampler;

pub const MIN_MOMENT_SAMPLES: usize = 10_000;

#[derive(Debug, Clone, Serialize)]
pub struct SphereMoments {
    pub n: usize,
    pub samples: usize,
    /// E[u1^2], E[u1^2 u2^2], E[(u1^2 - 1/n)^2].
    pub gamma: [f64; 3],
    pub std_err: [f64; 3],
}

pub fn sphere_moments(n: usize, samples: usize, seed: u64) -> Result<SphereMoments> {
    check_dimension(n)?;
    if samples < MIN_MOMENT_SAMPLES {
        return Err(Error::InvalidParameter { name: "samples", value: samples as f64 });
    }
    let mut s = SphereSampler::new(n, seed, "sphere-moments");
    let mut p = vec![0.0; n];
    let mut sum = [0.0; 3];
    let mut sq = [0.0; 3];
    let inv_n = 1.0 / n as f64;
    for _ in 0..samples {
        s.next_point(&mut p);
        let a = p[0] * p[0];
        let v = [a, a * p[1] * p[1], (a - inv_n) * (a - inv_n)];
        for k in 0..3 {
            sum[k] += v[k];
            sq[k] += v[k] * v[k];
        }
    }
    let ns = samples as f64;
    let mut gamma = [0.0; 3];
    let mut std_err = [0.0; 3];
    for k in 0..3 {
        gamma[k] = sum[k] / ns;
        let var = (sq[k] / ns - gamma[k] * gamma[k]).max(0.0) * ns / (ns - 1.0);
        std_err[k] = (var / ns).sqrt();
    }
    Ok(SphereMoments { n, samples, gamma, std_err })
}

#[derive(Debug, Clone, Serialize)]
pub struct TImageReport {
    pub n: usize,
    pub samples: usize,
    pub family_names: Vec<String>,
    pub family_ranks: Vec<usize>,
    pub rank: usize,
    pub target_rank: usize,
    pub smallest_kept_singular_value: f64,
}

/// Test functions of one family evaluated at (u, b).
fn family_values(fam: usize, n: usize, u: &[f64], b: &[f64], out: &mut Vec<f64>) {
    out.clear();
    let inv_n = 1.0 / n as f64;
    match fam {
        0 => {
            out.extend_from_slice(u);
            out.extend_from_slice(b);
        }
        1 => {
            for i in 0..n {
                for j in i + 1..n {
                    out.push(u[i] * u[j]);
                }
            }
            for i in 0..n {
                for j in i + 1..n {
                    out.push(-b[i] * b[j]);
                }
            }
        }
        2 => {
            for i in 0..n {
                out.push(u[i] * u[i] - inv_n);
            }
            for i in 0..n {
                out.push(-b[i] * b[i] + inv_n);
            }
        }
        _ => {
            for i in 0..n {
                for j in i + 1..n {
                    out.push(u[i] * b[j]);
                }
            }
        }
    }
}

fn numeric_rank(rows: &[Vec<f64>], dim: usize, tol: f64) -> (usize, f64) {
    if rows.is_empty() {
        return (0, 0.0);
    }
    let m = DMatrix::from_fn(rows.len(), dim, |i, j| rows[i][j]);
    let sv = m.singular_values();
    let kept: Vec<f64> = sv.iter().cloned().filter(|&s| s > tol).collect();
    (kept.len(), kept.iter().cloned().fold(f64::INFINITY, f64::min))
}

/// Rank of the images of the four test-function families under the sampled
/// averaging map phi -> E[(u, b, u(x)u - b(x)b, b(x)u - u(x)b) phi(u, b)].
pub fn t_image_rank(n: usize, samples: usize, seed: u64) -> Result<TImageReport> {
    check_dimension(n)?;
    let d = reduced_dim(n);
    let mut s = SphereSampler::new(2 * n, seed, "t-image");
    let mut p = vec![0.0; 2 * n];
    let mut images: Vec<Vec<Vec<f64>>> = Vec::new();
    let mut vals = Vec::new();
    for fam in 0..4 {
        family_values(fam, n, &vec![0.0; n], &vec![0.0; n], &mut vals);
        images.push(vec![vec![0.0; d]; vals.len()]);
    }
    for _ in 0..samples {
        s.next_point(&mut p);
        let u = DVector::from_column_slice(&p[..n]);
        let b = DVector::from_column_slice(&p[n..]);
        if u.norm() < 1e-9 || b.norm() < 1e-9 {
            continue;
        }
        let (u, b) = (u.normalize(), b.normalize());
        let c = k_atom(u.clone(), b.clone())?.reduced().coords();
        for (fam, img) in images.iter_mut().enumerate() {
            family_values(fam, n, u.as_slice(), b.as_slice(), &mut vals);
            for (row, &phi) in img.iter_mut().zip(&vals) {
                for (r, x) in row.iter_mut().zip(&c) {
                    *r += x * phi;
                }
            }
        }
    }
    let inv = 1.0 / samples as f64;
    for img in images.iter_mut() {
        for row in img.iter_mut() {
            row.iter_mut().for_each(|x| *x *= inv);
        }
    }
    let tol = 1e-8;
    let family_ranks = images.iter().map(|img| numeric_rank(img, d, tol).0).collect();
    let all: Vec<Vec<f64>> = images.into_iter().flatten().collect();
    let (rank, smin) = numeric_rank(&all, d, tol);
    Ok(TImageReport {
        n,
        samples,
        family_names: ["u_i, b_i", "u_i u_j, -b_i b_j", "u_i^2 - 1/n, 1/n - b_i^2", "u_i b_j"]
            .iter()
            .map(|s| s.to_string())
            .collect(),
        family_ranks,
        rank,
        target_rank: d,
        smallest_kept_singular_value: smin,
    })
}
