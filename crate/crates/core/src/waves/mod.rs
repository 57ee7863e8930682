//! Localized plane waves: antisymmetric potentials, the second-order
//! operator L, basis changes that move the kernel to e1, and the assembled
//! building block.

mod block;
mod cover;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::algebra::{check_dimension, EmbeddedMatrix};
use crate::error::{Error, Result};
use crate::wavecone::WaveDirection;

pub use block::{block_metrics, build_block, Anchor, BlockMetrics, BlockParams, BlockSummary, BuildingBlock};
pub use cover::{pack_cover, CoverPiece};

/// Radial C^4 bump: 1 on [0, inner], 0 on [outer, inf).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CutoffSpec {
    pub inner: f64,
    pub outer: f64,
    pub order: u32,
}

impl Default for CutoffSpec {
    fn default() -> Self {
        CutoffSpec { inner: 0.5, outer: 1.0, order: 4 }
    }
}

/// Degree-9 smoothstep and its first two derivatives on [0,1].
fn smoothstep(s: f64) -> (f64, f64, f64) {
    let s2 = s * s;
    let v = s2 * s2 * s * (126.0 + s * (-420.0 + s * (540.0 + s * (-315.0 + 70.0 * s))));
    let t = s * (1.0 - s);
    let d1 = 630.0 * t * t * t * t;
    let d2 = 2520.0 * t * t * t * (1.0 - 2.0 * s);
    (v, d1, d2)
}

impl CutoffSpec {
    /// (psi, psi', psi'') at radius r.
    pub fn radial(&self, r: f64) -> (f64, f64, f64) {
        if r <= self.inner {
            return (1.0, 0.0, 0.0);
        }
        if r >= self.outer {
            return (0.0, 0.0, 0.0);
        }
        let w = self.outer - self.inner;
        let (v, d1, d2) = smoothstep((r - self.inner) / w);
        (1.0 - v, -d1 / w, -d2 / (w * w))
    }
}

/// Number of independent Hessian entries in dimension k.
pub fn hess_len(k: usize) -> usize {
    k * (k + 1) / 2
}

fn hess_index(k: usize, a: usize, b: usize) -> usize {
    let (a, b) = if a <= b { (a, b) } else { (b, a) };
    a * k - a * (a + 1) / 2 + b
}

/// Upper-triangular Hessian of g(v) = psi(|v|) sin(N v_1) / N^2.
/// Returns false (and leaves `h` untouched) when v is outside the support.
pub fn profile_hessian(cut: &CutoffSpec, freq: f64, v: &[f64], h: &mut [f64]) -> bool {
    let k = v.len();
    let r = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if r >= cut.outer {
        return false;
    }
    let (sn, cs) = (freq * v[0]).sin_cos();
    let f = sn / (freq * freq);
    let f0 = cs / freq;
    let f00 = -sn;
    h.iter_mut().for_each(|x| *x = 0.0);
    if r <= cut.inner {
        h[0] = f00;
        return true;
    }
    let (psi, d1, d2) = cut.radial(r);
    let inv = 1.0 / r;
    let mut idx = 0;
    for a in 0..k {
        let ga = d1 * v[a] * inv;
        for b in a..k {
            let gb = d1 * v[b] * inv;
            let mut hp = d2 * v[a] * v[b] * inv * inv - d1 * v[a] * v[b] * inv * inv * inv;
            if a == b {
                hp += d1 * inv;
            }
            let mut x = hp * f;
            if b == 0 {
                x += ga * f0;
            }
            if a == 0 {
                x += gb * f0;
            }
            if a == 0 && b == 0 {
                x += psi * f00;
            }
            h[idx] = x;
            idx += 1;
        }
    }
    true
}

/// Potential pair for an amplitude whose kernel contains e1.
#[derive(Debug, Clone, PartialEq)]
pub struct PotentialPair {
    pub amplitude: EmbeddedMatrix,
    pub frequency: u32,
    pub cutoff: CutoffSpec,
    /// E^{kl}_{ij} stored at [((i*k + j)*k + kk)*k + l] for the U block.
    sym: Vec<f64>,
    /// Same layout for the V block after the sign flip of its last row.
    skew: Vec<f64>,
    /// Hessian entries -> row-major embedded-matrix entries.
    response: DMatrix<f64>,
}

fn tensor_from(x: &DMatrix<f64>) -> Vec<f64> {
    let k = x.nrows();
    let mut s = vec![0.0; k * k * k * k];
    let at = |i: usize, j: usize, a: usize, b: usize| ((i * k + j) * k + a) * k + b;
    for a in 1..k {
        for b in 1..k {
            let v = x[(a, b)];
            s[at(0, a, 0, b)] = v;
            s[at(a, 0, b, 0)] = v;
            s[at(a, 0, 0, b)] = -v;
            s[at(0, a, b, 0)] = -v;
        }
    }
    s
}

/// Sign flip of the last row.
pub fn flip_last_row(v: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = v.clone();
    let k = v.nrows();
    for j in 0..v.ncols() {
        out[(k - 1, j)] = -out[(k - 1, j)];
    }
    out
}

pub fn aligned_potential(amplitude: &EmbeddedMatrix, frequency: u32) -> Result<PotentialPair> {
    let n = amplitude.n();
    check_dimension(n)?;
    if frequency == 0 {
        return Err(Error::InvalidParameter { name: "frequency", value: 0.0 });
    }
    let col = amplitude.entries.column(0).norm();
    if col > 1e-12 * amplitude.norm().max(f64::MIN_POSITIVE) && col > 0.0 {
        return Err(Error::Misaligned { norm: col });
    }
    let k = n + 1;
    let sym = tensor_from(&amplitude.upper());
    let skew = tensor_from(&flip_last_row(&amplitude.lower()));
    let mut p = PotentialPair {
        amplitude: amplitude.clone(),
        frequency,
        cutoff: CutoffSpec::default(),
        sym,
        skew,
        response: DMatrix::zeros(2 * k * k, hess_len(k)),
    };
    let mut hm = DMatrix::zeros(k, k);
    for a in 0..k {
        for b in a..k {
            hm.fill(0.0);
            hm[(a, b)] = 1.0;
            hm[(b, a)] = 1.0;
            let w = p.contract(&hm);
            let col = hess_index(k, a, b);
            for i in 0..2 * k {
                for j in 0..k {
                    p.response[(i * k + j, col)] = w.entries[(i, j)];
                }
            }
        }
    }
    Ok(p)
}

impl PotentialPair {
    fn k(&self) -> usize {
        self.amplitude.n() + 1
    }

    /// L applied to the potentials with a given symmetric Hessian of the profile.
    fn contract(&self, hm: &DMatrix<f64>) -> EmbeddedMatrix {
        let k = self.k();
        let at = |i: usize, j: usize, a: usize, b: usize| ((i * k + j) * k + a) * k + b;
        let mut u = DMatrix::zeros(k, k);
        let mut v = DMatrix::zeros(k, k);
        for i in 0..k {
            for j in 0..k {
                let mut su = 0.0;
                let mut sv = 0.0;
                for kk in 0..k {
                    for l in 0..k {
                        let hv = hm[(kk, l)];
                        if hv == 0.0 {
                            continue;
                        }
                        let e_il_kj = self.sym[at(kk, j, i, l)];
                        let e_jl_ki = self.sym[at(kk, i, j, l)];
                        su += hv * (e_il_kj + e_jl_ki);
                        let f_il_kj = self.skew[at(kk, j, i, l)];
                        let f_jl_ki = self.skew[at(kk, i, j, l)];
                        sv += hv * (f_jl_ki - f_il_kj);
                    }
                }
                u[(i, j)] = 0.5 * su;
                v[(i, j)] = 0.5 * sv;
            }
        }
        EmbeddedMatrix::from_blocks(&u, &flip_last_row(&v))
    }

    /// Largest violation of the antisymmetries of both tensors, including the
    /// vanishing (n+1, n+1) slot.
    pub fn antisymmetry_defect(&self) -> f64 {
        let k = self.k();
        let at = |i: usize, j: usize, a: usize, b: usize| ((i * k + j) * k + a) * k + b;
        let mut d: f64 = 0.0;
        for t in [&self.sym, &self.skew] {
            for i in 0..k {
                for j in 0..k {
                    for a in 0..k {
                        for b in 0..k {
                            d = d.max((t[at(i, j, a, b)] + t[at(j, i, a, b)]).abs());
                            d = d.max((t[at(i, j, a, b)] + t[at(i, j, b, a)]).abs());
                        }
                    }
                    d = d.max(t[at(k - 1, i, k - 1, j)].abs());
                }
            }
        }
        d
    }

    pub fn response(&self) -> &DMatrix<f64> {
        &self.response
    }
}

pub fn apply_l(p: &PotentialPair, y: &[f64]) -> EmbeddedMatrix {
    let k = p.k();
    let mut h = vec![0.0; hess_len(k)];
    let mut out = EmbeddedMatrix::zeros(k - 1);
    if !profile_hessian(&p.cutoff, p.frequency as f64, y, &mut h) {
        return out;
    }
    let flat = &p.response * DVector::from_column_slice(&h);
    for i in 0..2 * k {
        for j in 0..k {
            out.entries[(i, j)] = flat[i * k + j];
        }
    }
    out
}

/// Basis A with A e1 = xi and A e_{n+1} = e_{n+1}; the middle columns are
/// coordinate vectors orthonormalized against xi and the time axis, then
/// scaled by sqrt(1 - |s|), the smaller singular value of the (xi, e_{n+1})
/// block (s = time component of the unit xi). The scaling leaves only one
/// long axis in A^{-t} B1 and is 1 for spatial xi.
pub fn basis_change(dir: &WaveDirection) -> Result<DMatrix<f64>> {
    let xi = dir.xi_vector();
    let k = xi.len();
    let n = k - 1;
    let spatial = xi.rows(0, n).norm();
    if spatial <= 1e-12 * xi.norm() {
        return Err(Error::DegenerateDirection);
    }
    let mut p = 0;
    for i in 1..n {
        if xi[i].abs() > xi[p].abs() * (1.0 + 1e-12) {
            p = i;
        }
    }
    let mut a = DMatrix::zeros(k, k);
    a.set_column(0, &xi);
    a[(n, n)] = 1.0;
    let mut time = DVector::zeros(k);
    time[n] = 1.0;
    let zeta = xi.rows(0, n).into_owned().normalize();
    let mut zeta_k = DVector::zeros(k);
    zeta_k.rows_mut(0, n).copy_from(&zeta);
    let mut done: Vec<DVector<f64>> = vec![zeta_k, time];
    for j in 1..n {
        let src = if j == p { 0 } else { j };
        let mut c = DVector::zeros(k);
        c[src] = 1.0;
        for _ in 0..2 {
            for q in &done {
                let d = q.dot(&c);
                c -= q * d;
            }
        }
        let nrm = c.norm();
        if nrm < 1e-8 {
            return Err(Error::NumericalDegeneracy("basis completion collapsed"));
        }
        c /= nrm;
        // exact zeros keep permutation bases exact
        c.iter_mut().for_each(|x| {
            if x.abs() < 1e-15 {
                *x = 0.0
            }
        });
        a.set_column(j, &c);
        done.push(c);
    }
    let mu = (1.0 - (xi[n] / xi.norm()).abs()).sqrt();
    if mu < 1.0 {
        for j in 1..n {
            let mut c = a.column_mut(j);
            c *= mu;
        }
    }
    let det = a.determinant();
    if det.abs() <= 1e-10 {
        return Err(Error::NumericalDegeneracy("basis change is singular"));
    }
    Ok(a)
}

/// J A J with J = diag(1, ..., 1, -1).
pub fn flipped_basis(a: &DMatrix<f64>) -> DMatrix<f64> {
    let k = a.nrows();
    let mut out = a.clone();
    for i in 0..k {
        for j in 0..k {
            if (i == k - 1) != (j == k - 1) {
                out[(i, j)] = -out[(i, j)];
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algebra::{k_atom, pack_state, State};

    fn e(n: usize, i: usize) -> DVector<f64> {
        let mut v = DVector::zeros(n);
        v[i] = 1.0;
        v
    }

    /// Lambda-state with kernel e1 (difference of atoms sharing b, u in e2/e3).
    fn aligned_amplitude() -> EmbeddedMatrix {
        let a = k_atom(e(4, 1), e(4, 2)).unwrap();
        let b = k_atom(e(4, 3), e(4, 2)).unwrap();
        pack_state(&State { reduced: a.reduced().sub(b.reduced()).scaled(0.5), pressure: 0.0 })
    }

    #[test]
    fn cutoff_profile() {
        let c = CutoffSpec::default();
        assert_eq!(c.radial(0.3), (1.0, 0.0, 0.0));
        assert_eq!(c.radial(1.2), (0.0, 0.0, 0.0));
        let (v, _, _) = c.radial(0.75);
        assert!((v - 0.5).abs() < 1e-14);
        // derivative matches a difference quotient
        let h = 1e-6;
        let (_, d1, d2) = c.radial(0.7);
        assert!((d1 - (c.radial(0.7 + h).0 - c.radial(0.7 - h).0) / (2.0 * h)).abs() < 1e-6);
        assert!((d2 - (c.radial(0.7 + h).1 - c.radial(0.7 - h).1) / (2.0 * h)).abs() < 1e-5);
    }

    #[test]
    fn hessian_matches_finite_differences() {
        let c = CutoffSpec::default();
        let y = [0.3, -0.4, 0.2, 0.35, -0.1];
        let g = |y: &[f64]| {
            let r = y.iter().map(|x| x * x).sum::<f64>().sqrt();
            c.radial(r).0 * (3.0 * y[0]).sin() / 9.0
        };
        let mut h = vec![0.0; 15];
        assert!(profile_hessian(&c, 3.0, &y, &mut h));
        let s = 1e-4;
        for a in 0..5 {
            for b in a..5 {
                let mut p = y;
                let mut num = 0.0;
                for (da, db, w) in [(1.0, 1.0, 1.0), (1.0, -1.0, -1.0), (-1.0, 1.0, -1.0), (-1.0, -1.0, 1.0)] {
                    p = y;
                    p[a] += da * s;
                    p[b] += db * s;
                    num += w * g(&p);
                }
                let _ = p;
                num /= 4.0 * s * s;
                assert!((num - h[hess_index(5, a, b)]).abs() < 1e-6, "({a},{b})");
            }
        }
    }

    #[test]
    fn potential_reproduces_the_wave_inside() {
        let w = aligned_amplitude();
        let p = aligned_potential(&w, 4).unwrap();
        assert!(p.antisymmetry_defect() == 0.0);
        for y in [[0.1, 0.2, -0.1, 0.0, 0.3], [0.45, 0.0, 0.0, 0.0, 0.1], [-0.2, 0.1, 0.1, 0.1, -0.2]] {
            let got = apply_l(&p, &y);
            let want = &w.entries * (4.0 * y[0]).sin();
            assert!((&got.entries - &want).amax() <= 1e-15);
        }
        let far = apply_l(&p, &[0.8, 0.7, 0.0, 0.0, 0.0]);
        assert_eq!(far.entries.amax(), 0.0);
        let mid = apply_l(&p, &[0.5, 0.4, -0.2, 0.1, 0.2]);
        let (du, dv) = mid.structure_deviation();
        assert!(du <= 1e-12 && dv <= 1e-12);
    }

    #[test]
    fn potential_guards() {
        let zero = EmbeddedMatrix::zeros(4);
        let p = aligned_potential(&zero, 1).unwrap();
        assert_eq!(apply_l(&p, &[0.1; 5]).entries.amax(), 0.0);
        assert!(aligned_potential(&aligned_amplitude(), 0).is_err());
        let bad = pack_state(&k_atom(e(4, 0), e(4, 1)).unwrap().state());
        assert!(matches!(aligned_potential(&bad, 1), Err(Error::Misaligned { .. })));
    }

    #[test]
    fn basis_examples() {
        let d = WaveDirection { xi: vec![0.0, 0.0, 0.0, 1.0, 0.0], residual: 0.0 };
        let a = basis_change(&d).unwrap();
        let mut perm = DMatrix::identity(5, 5);
        perm.swap_columns(0, 3);
        assert_eq!(a, perm);
        assert_eq!(a.determinant(), -1.0);
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let d = WaveDirection { xi: vec![s, s, 0.0, 0.0, 0.0], residual: 0.0 };
        let a = basis_change(&d).unwrap();
        assert!(a.determinant().abs() > 1e-10);
        assert_eq!(a.column(4), e(5, 4));
        assert_eq!(a.column(0), DVector::from_column_slice(&d.xi));
        let d = WaveDirection { xi: vec![0.0, 0.0, 0.0, 0.0, 1.0], residual: 0.0 };
        assert_eq!(basis_change(&d), Err(Error::DegenerateDirection));
    }
}
