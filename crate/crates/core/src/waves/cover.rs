//! Greedy packing of the unit ball by scaled translates of an ellipsoid.

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::qmc::BallSampler;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoverPiece {
    pub center: Vec<f64>,
    pub radius: f64,
}

/// Candidates tried per pass.
const PASS_CANDIDATES: usize = 4096;
/// Points on the thin axis of the ellipsoid tried first in each pass.
const AXIAL_CANDIDATES: usize = 128;
/// Radius levels tried before giving up.
const RADIUS_LEVELS: usize = 8;

/// Upper bound on max_{|w| <= 1} |c + r G w|^2 from the S-lemma dual
/// phi(l) = l + |c'|^2 + sum g_i^2 / (l - h_i), with c' = U^t c, h_i = r^2 s_i^2
/// and g_i = r s_i c'_i for G = U diag(s) V^t. Every l > max h is valid; the
/// bisection only tightens it.
fn farthest_sq(cp: &[f64], s: &[f64], r: f64) -> f64 {
    let h: Vec<f64> = s.iter().map(|x| r * r * x * x).collect();
    let g: Vec<f64> = s.iter().zip(cp).map(|(x, c)| r * x * c).collect();
    let hmax = h.iter().cloned().fold(0.0, f64::max);
    let gn = g.iter().map(|x| x * x).sum::<f64>().sqrt();
    let c2: f64 = cp.iter().map(|x| x * x).sum();
    let phi = |l: f64| l + c2 + g.iter().zip(&h).map(|(gi, hi)| gi * gi / (l - hi)).sum::<f64>();
    let dphi = |l: f64| 1.0 - g.iter().zip(&h).map(|(gi, hi)| gi * gi / ((l - hi) * (l - hi))).sum::<f64>();
    let (mut lo, mut hi) = (hmax, hmax + gn + 1e-12 * (1.0 + hmax));
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if dphi(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    phi(hi)
}

/// Packs pieces c + r A^{-t} B1 into B1, pairwise disjoint, until their total
/// volume reaches `target` |B1|. Returns the pieces and the achieved fraction.
///
/// Disjointness is exact in the coordinates y = A^t x, where every piece is a
/// round ball; containment uses the dual bound of `farthest_sq`.
pub fn pack_cover(a: &DMatrix<f64>, target: f64, piece_cap: usize) -> Result<(Vec<CoverPiece>, f64)> {
    let k = a.nrows();
    if !(target > 0.0 && target <= 1.0) {
        return Err(Error::InvalidParameter { name: "cover target", value: target });
    }
    let det = a.determinant().abs();
    if det <= 1e-10 {
        return Err(Error::NumericalDegeneracy("basis change is singular"));
    }
    let g = a.transpose().try_inverse().ok_or(Error::NumericalDegeneracy("basis change is singular"))?;
    let svd = g.svd(true, false);
    let u = svd.u.expect("requested U");
    let s: Vec<f64> = svd.singular_values.iter().cloned().collect();
    let reach = s.iter().cloned().fold(0.0, f64::max);
    let thin_idx = (0..k).fold(0, |b, i| if s[i] < s[b] { i } else { b });
    let thin: Vec<f64> = u.column(thin_idx).iter().cloned().collect();
    let at = a.transpose();
    let r_max = 1.0 / reach;
    let frac_of = |r: f64| r.powi(k as i32) / det;

    let mut pieces = vec![CoverPiece { center: vec![0.0; k], radius: r_max }];
    let mut images: Vec<Vec<f64>> = vec![vec![0.0; k]];
    let mut fraction = frac_of(r_max);
    let mut sampler = BallSampler::new(k);
    let mut c = vec![0.0; k];
    let mut cp = vec![0.0; k];
    let passes = RADIUS_LEVELS * (k - 1);
    let mut pass = 0;
    while fraction < target && pass < passes && pieces.len() < piece_cap {
        let r = r_max * 2f64.powf(-(pass as f64) / (k - 1) as f64);
        for t in 0..AXIAL_CANDIDATES + PASS_CANDIDATES {
            if t < AXIAL_CANDIDATES {
                // both caps along the thin axis first
                let h = (1 + t / 2) as f64 / (AXIAL_CANDIDATES / 2 + 1) as f64;
                let sign = if t % 2 == 0 { 1.0 } else { -1.0 };
                c.iter_mut().zip(thin.iter()).for_each(|(o, v)| *o = sign * h * v);
            } else {
                sampler.next_point(&mut c);
            }
            let y: Vec<f64> = (0..k).map(|i| (0..k).map(|j| at[(i, j)] * c[j]).sum()).collect();
            let clear = images.iter().zip(&pieces).all(|(yj, p)| {
                let d2: f64 = yj.iter().zip(&y).map(|(a, b)| (a - b) * (a - b)).sum();
                d2 >= (r + p.radius) * (r + p.radius)
            });
            if !clear {
                continue;
            }
            for (i, o) in cp.iter_mut().enumerate() {
                *o = (0..k).map(|j| u[(j, i)] * c[j]).sum();
            }
            if farthest_sq(&cp, &s, r) > 1.0 {
                continue;
            }
            pieces.push(CoverPiece { center: c.clone(), radius: r });
            images.push(y);
            fraction += frac_of(r);
            if fraction >= target || pieces.len() >= piece_cap {
                break;
            }
        }
        pass += 1;
    }
    if fraction < target {
        return Err(Error::Covering { achieved: fraction, target });
    }
    Ok((pieces, fraction))
}
