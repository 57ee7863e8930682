//! The constraint set K through a finite atom library, LP membership in its
//! hull, Carathéodory reduction and interior margins.

pub mod moments;
pub mod simplex;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::algebra::{check_dimension, k_atom, reduced_dim, state_dim, KAtom, ReducedState, State};
use crate::error::{Error, Result};
use crate::qmc::SphereSampler;
use simplex::{LpStatus, Tableau};

pub use moments::{sphere_moments, t_image_rank, SphereMoments, TImageReport};

/// Margins below this are treated as zero.
pub const MARGIN_TOL: f64 = 1e-9;

/// Probe extents are capped here; the hull of unit atoms is far smaller.
const PROBE_CAP: f64 = 16.0;

#[derive(Debug, Clone, PartialEq)]
pub struct AtomLibrary {
    n: usize,
    seed: u64,
    atoms: Vec<KAtom>,
    /// Row-major reduced_dim x count.
    coords: Vec<f64>,
}

pub fn min_library_size(n: usize) -> usize {
    4 * state_dim(n)
}

pub fn build_atom_library(n: usize, count: usize, seed: u64) -> Result<AtomLibrary> {
    check_dimension(n)?;
    if count < min_library_size(n) {
        return Err(Error::InvalidParameter { name: "atom count", value: count as f64 });
    }
    let mut sampler = SphereSampler::new(2 * n, seed, "atom-library");
    let mut p = vec![0.0; 2 * n];
    let mut atoms = Vec::with_capacity(count);
    while atoms.len() < count {
        sampler.next_point(&mut p);
        let u = DVector::from_column_slice(&p[..n]);
        let b = DVector::from_column_slice(&p[n..]);
        if u.norm() < 1e-6 || b.norm() < 1e-6 {
            continue;
        }
        atoms.push(k_atom(u.normalize(), b.normalize())?);
    }
    AtomLibrary::from_atoms(n, atoms, seed)
}

impl AtomLibrary {
    pub fn from_atoms(n: usize, atoms: Vec<KAtom>, seed: u64) -> Result<Self> {
        check_dimension(n)?;
        if atoms.len() < min_library_size(n) {
            return Err(Error::InvalidParameter { name: "atom count", value: atoms.len() as f64 });
        }
        if atoms.iter().any(|a| a.n() != n) {
            return Err(Error::Degenerate("atoms of mixed dimension"));
        }
        let d = reduced_dim(n);
        let k = atoms.len();
        let mut coords = vec![0.0; d * k];
        for (j, a) in atoms.iter().enumerate() {
            for (i, c) in a.reduced().coords().into_iter().enumerate() {
                coords[i * k + j] = c;
            }
        }
        Ok(AtomLibrary { n, seed, atoms, coords })
    }

    /// Prepends extra atoms to the library.
    pub fn with_extra_atoms(&self, extra: Vec<KAtom>) -> Result<Self> {
        let mut atoms = extra;
        atoms.extend(self.atoms.iter().cloned());
        AtomLibrary::from_atoms(self.n, atoms, self.seed)
    }

    pub fn n(&self) -> usize {
        self.n
    }
    pub fn seed(&self) -> u64 {
        self.seed
    }
    pub fn count(&self) -> usize {
        self.atoms.len()
    }
    pub fn atoms(&self) -> &[KAtom] {
        &self.atoms
    }
    pub fn dim(&self) -> usize {
        reduced_dim(self.n)
    }

    fn coord(&self, i: usize, k: usize) -> f64 {
        self.coords[i * self.atoms.len() + k]
    }

    /// Constraint rows [atoms; 1] with `extra` trailing columns set to zero.
    fn hull_rows(&self, extra: usize) -> (usize, usize, Vec<f64>) {
        let d = self.dim();
        let k = self.count();
        let cols = k + extra;
        let rows = d + 1;
        let mut a = vec![0.0; rows * cols];
        for i in 0..d {
            a[i * cols..i * cols + k].copy_from_slice(&self.coords[i * k..(i + 1) * k]);
        }
        for j in 0..k {
            a[d * cols + j] = 1.0;
        }
        (rows, cols, a)
    }

    /// Convex weights over the whole library reproducing `x`.
    pub fn hull_weights(&self, x: &[f64]) -> Result<Vec<f64>> {
        let (rows, cols, a) = self.hull_rows(0);
        let mut b = x.to_vec();
        b.push(1.0);
        let mut tab = Tableau::new(rows, cols, &a, &b);
        match tab.phase_one() {
            (LpStatus::Optimal, _) => Ok(tab.solution()),
            (LpStatus::Infeasible, r) => Err(Error::OutsideHull { separation: r }),
            _ => Err(Error::NumericalDegeneracy("simplex iteration limit")),
        }
    }

    /// Largest t with x + t*sign*e_k in the hull, or None if x is outside.
    pub fn probe_extent(&self, x: &[f64], k: usize, sign: f64) -> Option<f64> {
        let (rows, cols, mut a) = self.hull_rows(1);
        a[k * cols + cols - 1] = -sign;
        let mut b = x.to_vec();
        b.push(1.0);
        let mut c = vec![0.0; cols];
        c[cols - 1] = -1.0;
        let mut tab = Tableau::new(rows, cols, &a, &b);
        if tab.phase_one().0 != LpStatus::Optimal {
            return None;
        }
        match tab.phase_two(&c) {
            LpStatus::Optimal => Some(tab.solution()[cols - 1].min(PROBE_CAP)),
            LpStatus::Unbounded => Some(PROBE_CAP),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CaratheodoryDecomp {
    pub weights: Vec<f64>,
    pub atoms: Vec<KAtom>,
    pub reconstruction_error: f64,
}

impl CaratheodoryDecomp {
    pub fn reconstruct(&self) -> ReducedState {
        let n = self.atoms[0].n();
        let mut z = ReducedState::zeros(n);
        for (w, a) in self.weights.iter().zip(&self.atoms) {
            z = z.add(&a.reduced().scaled(*w));
        }
        z
    }
}

/// Removes atoms along affine dependences until at most `dim + 1` remain.
/// `points` are coordinate vectors of the candidate atoms.
pub fn caratheodory_reduce(weights: &[f64], points: &[Vec<f64>]) -> Result<Vec<f64>> {
    let dim = points.first().map_or(0, |p| p.len());
    let mut w = weights.to_vec();
    loop {
        let active: Vec<usize> = (0..w.len()).filter(|&k| w[k] > 0.0).collect();
        if active.len() <= dim + 1 {
            break;
        }
        // any dim+2 points are affinely dependent
        let sub = &active[..dim + 2];
        let mut a = DMatrix::zeros(dim + 1, dim + 2);
        for (c, &k) in sub.iter().enumerate() {
            for i in 0..dim {
                a[(i, c)] = points[k][i];
            }
            a[(dim, c)] = 1.0;
        }
        // pad to square so the SVD exposes the null direction
        let mut sq = DMatrix::zeros(dim + 2, dim + 2);
        sq.view_mut((0, 0), (dim + 1, dim + 2)).copy_from(&a);
        let svd = sq.svd(false, true);
        let vt = svd.v_t.ok_or(Error::NumericalDegeneracy("svd failed"))?;
        let (imin, _) = svd
            .singular_values
            .iter()
            .enumerate()
            .fold((0, f64::INFINITY), |acc, (i, &s)| if s < acc.1 { (i, s) } else { acc });
        let mut mu: Vec<f64> = vt.row(imin).iter().cloned().collect();
        if mu.iter().all(|&m| m <= 1e-14) {
            mu.iter_mut().for_each(|m| *m = -*m);
        }
        let mut step = f64::INFINITY;
        let mut drop_at = None;
        for (c, &k) in sub.iter().enumerate() {
            if mu[c] > 1e-14 {
                let t = w[k] / mu[c];
                if t < step {
                    step = t;
                    drop_at = Some(c);
                }
            }
        }
        let Some(dc) = drop_at else {
            return Err(Error::NumericalDegeneracy("affine dependence without positive entries"));
        };
        for (c, &k) in sub.iter().enumerate() {
            w[k] -= step * mu[c];
            if w[k] < 1e-15 {
                w[k] = 0.0;
            }
        }
        w[sub[dc]] = 0.0;
    }
    let s: f64 = w.iter().sum();
    if s <= 0.0 {
        return Err(Error::NumericalDegeneracy("weights vanished during reduction"));
    }
    Ok(w.into_iter().map(|x| x / s).collect())
}

pub fn decompose(zr: &ReducedState, lib: &AtomLibrary) -> Result<CaratheodoryDecomp> {
    if zr.n() != lib.n() {
        return Err(Error::Degenerate("state and library dimensions differ"));
    }
    let x = zr.coords();
    let weights = lib.hull_weights(&x)?;
    let active: Vec<usize> = (0..weights.len()).filter(|&k| weights[k] > 0.0).collect();
    let pts: Vec<Vec<f64>> = active
        .iter()
        .map(|&k| (0..lib.dim()).map(|i| lib.coord(i, k)).collect())
        .collect();
    let w0: Vec<f64> = active.iter().map(|&k| weights[k]).collect();
    let reduced = caratheodory_reduce(&w0, &pts)?;
    let mut out_w = Vec::new();
    let mut out_a = Vec::new();
    for (c, &k) in active.iter().enumerate() {
        if reduced[c] > 0.0 {
            out_w.push(reduced[c]);
            out_a.push(lib.atoms()[k].clone());
        }
    }
    let mut d = CaratheodoryDecomp { weights: out_w, atoms: out_a, reconstruction_error: 0.0 };
    d.reconstruction_error = d.reconstruct().sub(zr).amax();
    if d.atoms.len() > state_dim(lib.n()) {
        return Err(Error::NumericalDegeneracy("reduction left too many atoms"));
    }
    Ok(d)
}

/// min over the 2*dim signed coordinate probes of the feasible extent.
pub fn hull_margin(zr: &ReducedState, lib: &AtomLibrary) -> f64 {
    let x = zr.coords();
    if lib.hull_weights(&x).is_err() {
        return 0.0;
    }
    let mut rho = f64::INFINITY;
    for k in 0..lib.dim() {
        for sign in [1.0, -1.0] {
            match lib.probe_extent(&x, k, sign) {
                Some(t) => rho = rho.min(t),
                None => return 0.0,
            }
        }
    }
    if rho < MARGIN_TOL {
        0.0
    } else {
        rho
    }
}

pub fn in_relaxed_set(z: &State, lib: &AtomLibrary) -> bool {
    z.pressure.abs() < 1.0 && hull_margin(&z.reduced, lib) > 0.0
}

/// Cheap one-LP interior certificate: for x with Minkowski gauge g < 1 the
/// cross-polytope of radius (1-g)*rho0 around x is inside the hull, where
/// rho0 is the probe margin of the origin.
#[derive(Debug, Clone)]
pub struct GaugeCertifier {
    rho0: f64,
    base: Tableau,
    cols: usize,
    dim: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Certificate {
    pub gauge: f64,
    /// Lower bound on the probe margin (negative when outside).
    pub margin: f64,
}

impl GaugeCertifier {
    pub fn new(lib: &AtomLibrary) -> Result<Self> {
        let rho0 = hull_margin(&ReducedState::zeros(lib.n()), lib);
        if rho0 <= 0.0 {
            return Err(Error::Degenerate("origin is not interior to the atom hull"));
        }
        let (rows, cols, a) = lib.hull_rows(1);
        let mut b = vec![0.0; rows];
        b[rows - 1] = 1.0;
        let mut base = Tableau::new(rows, cols, &a, &b);
        if base.phase_one().0 != LpStatus::Optimal {
            return Err(Error::NumericalDegeneracy("origin hull LP failed"));
        }
        Ok(GaugeCertifier { rho0, base, cols, dim: lib.dim() })
    }

    pub fn rho0(&self) -> f64 {
        self.rho0
    }

    /// Minkowski gauge of reduced coordinates x.
    pub fn gauge(&self, x: &[f64]) -> f64 {
        assert_eq!(x.len(), self.dim);
        if x.iter().all(|v| v.abs() < 1e-14) {
            return 0.0;
        }
        let mut tab = self.base.clone();
        let mut col: Vec<f64> = x.iter().map(|v| -v).collect();
        col.push(0.0);
        tab.set_column(self.cols - 1, &col);
        let mut c = vec![0.0; self.cols];
        c[self.cols - 1] = -1.0;
        match tab.phase_two(&c) {
            LpStatus::Optimal => {
                let lambda = tab.solution()[self.cols - 1];
                if lambda <= 0.0 {
                    f64::INFINITY
                } else {
                    1.0 / lambda
                }
            }
            LpStatus::Unbounded => 0.0,
            _ => f64::INFINITY,
        }
    }

    pub fn certify(&self, x: &[f64]) -> Certificate {
        let gauge = self.gauge(x);
        let margin = if gauge.is_finite() { (1.0 - gauge) * self.rho0 } else { -self.rho0 };
        Certificate { gauge, margin }
    }

    /// State coordinates (reduced then q): interior with margin and |q| < 1.
    pub fn admissible(&self, z: &[f64]) -> (bool, f64) {
        let c = self.certify(&z[..self.dim]);
        (c.margin > MARGIN_TOL && z[self.dim].abs() < 1.0, c.margin)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn e(n: usize, i: usize) -> DVector<f64> {
        let mut v = DVector::zeros(n);
        v[i] = 1.0;
        v
    }

    fn lib() -> AtomLibrary {
        build_atom_library(4, 200, 7).unwrap()
    }

    #[test]
    fn library_is_deterministic_and_balanced() {
        let a = lib();
        assert_eq!(a, lib());
        let mut mean = DVector::zeros(4);
        for at in a.atoms() {
            mean += at.u() / 200.0;
        }
        assert!(mean.norm() <= 0.1);
        assert!(build_atom_library(4, 95, 7).is_err());
        assert!(build_atom_library(3, 200, 7).is_err());
    }

    #[test]
    fn symmetric_decomposition_of_origin() {
        let extra = vec![
            k_atom(e(4, 0), e(4, 0)).unwrap(),
            k_atom(e(4, 0), -e(4, 0)).unwrap(),
            k_atom(-e(4, 0), e(4, 0)).unwrap(),
            k_atom(-e(4, 0), -e(4, 0)).unwrap(),
        ];
        let l = lib().with_extra_atoms(extra).unwrap();
        let d = decompose(&ReducedState::zeros(4), &l).unwrap();
        assert!(d.reconstruction_error <= 1e-9);
        assert!(d.atoms.len() <= 24);
        assert!((d.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn extreme_point_is_a_single_atom() {
        let l = lib();
        let a = l.atoms()[17].clone();
        let d = decompose(a.reduced(), &l).unwrap();
        assert_eq!(d.atoms.len(), 1);
        assert!((d.weights[0] - 1.0).abs() < 1e-12);
        assert_eq!(d.atoms[0], a);
    }

    #[test]
    fn two_atom_midpoint() {
        let l = lib();
        let z = l.atoms()[3].reduced().scaled(0.5).add(&l.atoms()[101].reduced().scaled(0.5));
        let d = decompose(&z, &l).unwrap();
        assert!(d.reconstruction_error <= 1e-9);
        assert!(d.atoms.len() <= 24);
    }

    #[test]
    fn margins() {
        let l = lib();
        let z0 = ReducedState::zeros(4);
        let rho = hull_margin(&z0, &l);
        assert!(rho > 0.0);
        assert_eq!(hull_margin(&l.atoms()[0].reduced().scaled(2.0), &l), 0.0);
        assert!(hull_margin(l.atoms()[0].reduced(), &l) < 1e-8);
        // shrinking toward the origin never loses margin
        let z = l.atoms()[5].reduced().scaled(0.6);
        let m1 = hull_margin(&z, &l);
        let m2 = hull_margin(&z.scaled(0.5), &l);
        assert!(m2 >= m1 - 1e-12);
        assert!(matches!(decompose(&l.atoms()[0].reduced().scaled(2.0), &l), Err(Error::OutsideHull { .. })));
    }

    #[test]
    fn relaxed_set_membership() {
        let l = lib();
        assert!(in_relaxed_set(&State::zeros(4), &l));
        let mut z = State::zeros(4);
        z.pressure = 1.0;
        assert!(!in_relaxed_set(&z, &l));
        assert!(!in_relaxed_set(&l.atoms()[9].state(), &l));
    }

    #[test]
    fn gauge_certificate_is_conservative() {
        let l = lib();
        let cert = GaugeCertifier::new(&l).unwrap();
        assert_eq!(cert.gauge(&vec![0.0; 23]), 0.0);
        let a = l.atoms()[11].reduced().coords();
        let g = cert.gauge(&a);
        assert!((g - 1.0).abs() < 1e-9, "atom gauge {g}");
        for s in [0.2, 0.5, 0.8] {
            let z = l.atoms()[11].reduced().scaled(s).add(&l.atoms()[40].reduced().scaled(0.1));
            let c = cert.certify(&z.coords());
            let exact = hull_margin(&z, &l);
            assert!(c.margin <= exact + 1e-9, "bound {} exact {}", c.margin, exact);
        }
    }

    #[test]
    fn reduction_keeps_weights_valid() {
        let pts: Vec<Vec<f64>> = (0..8).map(|k| vec![(k as f64).cos(), (k as f64 * 1.7).sin()]).collect();
        let w = vec![0.125; 8];
        let r = caratheodory_reduce(&w, &pts).unwrap();
        assert!(r.iter().filter(|&&x| x > 0.0).count() <= 3);
        let target: Vec<f64> = (0..2).map(|i| pts.iter().map(|p| p[i] * 0.125).sum()).collect();
        for i in 0..2 {
            let got: f64 = pts.iter().zip(&r).map(|(p, w)| p[i] * w).sum();
            assert!((got - target[i]).abs() < 1e-12);
        }
    }
}
