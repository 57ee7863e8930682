//! Wave-cone membership, the explicit direction solver for atom differences,
//! and segments built from a hull decomposition.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::algebra::{
    canonical_vector, check_dimension, k_atom, null_space, orthonormal_span, pack_state, power_constant, state_dim,
    EmbeddedMatrix, ReducedState, State, UNIT_TOL,
};
use crate::error::{Error, Result};
use crate::kgeometry::{hull_margin, AtomLibrary, CaratheodoryDecomp, MARGIN_TOL};

/// Relative singular-value threshold for rank decisions.
pub const RANK_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WaveDirection {
    pub xi: Vec<f64>,
    pub residual: f64,
}

impl WaveDirection {
    pub fn xi_vector(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.xi)
    }
}

/// |W xi| / (|W| |xi|).
pub fn relative_residual(w: &EmbeddedMatrix, xi: &DVector<f64>) -> f64 {
    let nw = w.norm();
    if nw == 0.0 {
        return 0.0;
    }
    (&w.entries * xi).norm() / (nw * xi.norm())
}

pub fn wave_cone_kernel(z: &State) -> Result<Option<WaveDirection>> {
    let w = pack_state(z);
    if w.entries.amax() == 0.0 {
        return Err(Error::Degenerate("zero state lies in every kernel"));
    }
    let basis = null_space(&w.entries, RANK_TOL);
    let Some(xi) = canonical_vector(&basis, z.n() + 1) else {
        return Ok(None);
    };
    let residual = relative_residual(&w, &xi);
    Ok(Some(WaveDirection { xi: xi.iter().cloned().collect(), residual }))
}

/// Embedded matrix of the atom difference a1 - a2 (q = 0).
pub fn atom_difference_matrix(
    u1: &DVector<f64>,
    b1: &DVector<f64>,
    u2: &DVector<f64>,
    b2: &DVector<f64>,
) -> Result<EmbeddedMatrix> {
    let a1 = k_atom(u1.clone(), b1.clone())?;
    let a2 = k_atom(u2.clone(), b2.clone())?;
    Ok(pack_state(&State { reduced: a1.reduced().sub(a2.reduced()), pressure: 0.0 }))
}

pub fn lambda_direction(
    u1: &DVector<f64>,
    b1: &DVector<f64>,
    u2: &DVector<f64>,
    b2: &DVector<f64>,
) -> Result<WaveDirection> {
    let n = u1.len();
    check_dimension(n)?;
    for (what, v) in [("u1", u1), ("b1", b1), ("u2", u2), ("b2", b2)] {
        if v.len() != n {
            return Err(Error::Degenerate("inputs of different lengths"));
        }
        let norm = v.norm();
        if (norm - 1.0).abs() > UNIT_TOL {
            return Err(Error::NonUnitVector { what, norm });
        }
    }
    let span = orthonormal_span(&[u1 - u2, b1.clone(), b2.clone()], 1e-12);
    let coords: Vec<DVector<f64>> = (0..n)
        .map(|k| {
            let mut e = DVector::zeros(n);
            e[k] = 1.0;
            e
        })
        .collect();
    let mut full = span.clone();
    full.extend(coords);
    let complement: Vec<DVector<f64>> = orthonormal_span(&full, 1e-9).into_iter().skip(span.len()).collect();
    let zeta = canonical_vector(&complement, n)
        .ok_or(Error::NumericalDegeneracy("orthogonal complement of the spanning set is trivial"))?;
    let s = -u1.dot(&zeta);
    let mut xi = DVector::zeros(n + 1);
    xi.rows_mut(0, n).copy_from(&zeta);
    xi[n] = s;
    let xi = xi.normalize();
    let w = atom_difference_matrix(u1, b1, u2, b2)?;
    let residual = relative_residual(&w, &xi);
    Ok(WaveDirection { xi: xi.iter().cloned().collect(), residual })
}

/// Dimension of { z : pack(z) xi = 0 } over states with q = 0, the space in
/// which segment directions live. Letting q vary adds one for every xi.
pub fn kernel_space_dimension(n: usize, xi: &DVector<f64>, abs_tol: f64) -> usize {
    let d = state_dim(n) - 1;
    let rows = 2 * n + 2;
    let mut a = DMatrix::zeros(d.max(rows), d);
    let mut c = vec![0.0; d];
    for k in 0..d {
        c.iter_mut().for_each(|x| *x = 0.0);
        c[k] = 1.0;
        let z = State { reduced: ReducedState::from_coords(n, &c), pressure: 0.0 };
        let col = &pack_state(&z).entries * xi;
        for i in 0..rows {
            a[(i, k)] = col[i];
        }
    }
    a.singular_values().iter().filter(|&&s| s < abs_tol).count()
}

#[derive(Debug, Clone, PartialEq)]
pub struct LambdaSegment {
    pub base: State,
    /// Direction z-bar; its q-component is zero by construction.
    pub direction: ReducedState,
    pub half_length: f64,
    pub certificate: WaveDirection,
    pub base_margin: f64,
    pub endpoint_margins: [f64; 2],
}

impl LambdaSegment {
    pub fn direction_state(&self) -> State {
        State { reduced: self.direction.scaled(self.half_length), pressure: 0.0 }
    }

    /// min endpoint margin / base margin.
    pub fn margin_ratio(&self) -> f64 {
        self.endpoint_margins[0].min(self.endpoint_margins[1]) / self.base_margin
    }

    /// |(u-bar, b-bar)| of the unit-length direction.
    pub fn temporal_norm(&self) -> f64 {
        (self.direction.u.norm_squared() + self.direction.b.norm_squared()).sqrt()
    }
}

/// Index of the largest value (lowest index on ties).
fn argmax(vals: impl Iterator<Item = f64>) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, v) in vals.enumerate() {
        if best.map_or(true, |(_, b)| v > b) {
            best = Some((i, v));
        }
    }
    best.map(|(i, _)| i)
}

/// Picks (atom 1, atom l) from a decomposition; None when every candidate
/// has zero weighted distance.
pub fn select_atoms(decomp: &CaratheodoryDecomp) -> Option<(usize, usize)> {
    let first = argmax(decomp.weights.iter().cloned())?;
    let a1 = &decomp.atoms[first];
    let scores = decomp.atoms.iter().enumerate().map(|(k, a)| {
        if k == first {
            return f64::NEG_INFINITY;
        }
        let du = (a.u() - a1.u()).norm_squared();
        let db = (a.b() - a1.b()).norm_squared();
        decomp.weights[k] * (du + db).sqrt()
    });
    let scores: Vec<f64> = scores.collect();
    let l = argmax(scores.iter().cloned())?;
    if scores[l] <= 1e-14 {
        return None;
    }
    Some((first, l))
}

pub fn segment_from_decomposition(z: &State, decomp: &CaratheodoryDecomp, lib: &AtomLibrary) -> Result<LambdaSegment> {
    if decomp.atoms.is_empty() {
        return Err(Error::Degenerate("empty decomposition"));
    }
    if decomp.reconstruct().sub(&z.reduced).amax() > 1e-9 {
        return Err(Error::Degenerate("decomposition does not reproduce the state"));
    }
    let (first, l) = select_atoms(decomp).ok_or(Error::AtConstraintSet)?;
    let a1 = &decomp.atoms[first];
    let al = &decomp.atoms[l];
    let direction = al.reduced().sub(a1.reduced()).scaled(0.5 * decomp.weights[l]);
    let certificate = lambda_direction(al.u(), al.b(), a1.u(), a1.b())?;
    let base_margin = hull_margin(&z.reduced, lib);
    let mut endpoint_margins = [0.0; 2];
    for (slot, sign) in [(0usize, 1i8), (1, -1)] {
        let end = z.reduced.add(&direction.scaled(sign as f64));
        let margin = hull_margin(&end, lib);
        if margin <= MARGIN_TOL || z.pressure.abs() >= 1.0 {
            return Err(Error::EndpointOutside { sign, margin });
        }
        endpoint_margins[slot] = margin;
    }
    Ok(LambdaSegment { base: z.clone(), direction, half_length: 1.0, certificate, base_margin, endpoint_margins })
}

/// C0 = 2^m n(n+2) C(m).
pub fn amplitude_bound_constant(n: usize, m: f64) -> f64 {
    2f64.powf(m) * state_dim(n) as f64 * power_constant(m)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AmplitudeBoundCheck {
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
}

/// Temporal amplitude against the energy deficit of the base state:
/// eps^(m-1) (2 - |u|^m - |b|^m) / C0 <= |(u-bar, b-bar)|^m + 2 eps^m / C0.
pub fn verify_amplitude_bound(z: &State, seg: &LambdaSegment, eps: f64, m: f64) -> AmplitudeBoundCheck {
    let n = z.n();
    let c0 = amplitude_bound_constant(n, m);
    let deficit = 2.0 - z.reduced.u.norm().powf(m) - z.reduced.b.norm().powf(m);
    let lhs = eps.powf(m - 1.0) * deficit / c0;
    let rhs = seg.temporal_norm().powf(m) + 2.0 * eps.powf(m) / c0;
    AmplitudeBoundCheck { lhs, rhs, holds: lhs <= rhs }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algebra::relaxed_vars;
    use crate::kgeometry::{build_atom_library, decompose};

    fn e(n: usize, i: usize) -> DVector<f64> {
        let mut v = DVector::zeros(n);
        v[i] = 1.0;
        v
    }

    #[test]
    fn kernel_of_a_difference_state() {
        let a = k_atom(e(4, 0), e(4, 2)).unwrap();
        let b = k_atom(e(4, 1), e(4, 2)).unwrap();
        let z = State { reduced: a.reduced().sub(b.reduced()).scaled(0.5), pressure: 0.0 };
        let k = wave_cone_kernel(&z).unwrap().unwrap();
        assert_eq!(k.xi, vec![0.0, 0.0, 0.0, 1.0, 0.0]);
        assert!(k.residual <= 1e-12);
    }

    /// Rank by Gaussian elimination with partial pivoting.
    fn rank_by_elimination(a: &DMatrix<f64>) -> usize {
        let mut m = a.clone();
        let (rows, cols) = m.shape();
        let mut rank = 0;
        for c in 0..cols {
            let p = (rank..rows).max_by(|&i, &j| m[(i, c)].abs().total_cmp(&m[(j, c)].abs()));
            let Some(p) = p else { break };
            if m[(p, c)].abs() < 1e-12 {
                continue;
            }
            m.swap_rows(p, rank);
            for i in rank + 1..rows {
                let f = m[(i, c)] / m[(rank, c)];
                for j in c..cols {
                    m[(i, j)] -= f * m[(rank, j)];
                }
            }
            rank += 1;
        }
        rank
    }

    #[test]
    fn planar_state_is_rank_deficient() {
        // (e1, e2) only touch the first two coordinates, so e3 and e4 are in
        // the kernel of the embedding
        let z = relaxed_vars(&e(4, 0), &e(4, 1), 0.0);
        assert_eq!(rank_by_elimination(&pack_state(&z).entries), 3);
        let k = wave_cone_kernel(&z).unwrap().unwrap();
        assert_eq!(k.xi, vec![0.0, 0.0, 1.0, 0.0, 0.0]);
        assert!(wave_cone_kernel(&State::zeros(4)).is_err());
    }

    #[test]
    fn generic_state_has_no_kernel() {
        let u = DVector::from_vec(vec![0.3, -0.5, 0.2, 0.7]);
        let b = DVector::from_vec(vec![-0.1, 0.4, 0.6, -0.2]);
        let z = relaxed_vars(&u, &b, 0.3);
        assert_eq!(rank_by_elimination(&pack_state(&z).entries), 5);
        assert_eq!(wave_cone_kernel(&z).unwrap(), None);
    }

    #[test]
    fn direction_examples() {
        let d = lambda_direction(&e(4, 0), &e(4, 2), &e(4, 1), &e(4, 2)).unwrap();
        assert_eq!(d.xi, vec![0.0, 0.0, 0.0, 1.0, 0.0]);
        let d = lambda_direction(&e(4, 0), &e(4, 1), &e(4, 0), &e(4, 2)).unwrap();
        assert!(d.residual <= 1e-12);
        // zeta lies in span{e1, e4}
        assert!(d.xi[1].abs() < 1e-15 && d.xi[2].abs() < 1e-15);
        assert!(lambda_direction(&e(3, 0), &e(3, 1), &e(3, 0), &e(3, 2)).is_err());
    }

    #[test]
    fn kernel_dimension_counts() {
        for n in [4usize, 5] {
            let mut xi = DVector::from_fn(n + 1, |i, _| 1.0 + 0.3 * i as f64);
            xi = xi.normalize();
            assert_eq!(kernel_space_dimension(n, &xi, 1e-8), n * n - 2);
            assert_eq!(kernel_space_dimension(n, &e(n + 1, 0), 1e-8), n * n - 2);
            // the time axis only constrains u and b
            assert_eq!(kernel_space_dimension(n, &e(n + 1, n), 1e-8), n * n - 1);
        }
    }

    #[test]
    fn segment_from_symmetric_decomposition() {
        let lib = build_atom_library(4, 200, 7).unwrap();
        let atoms = vec![
            k_atom(e(4, 0), e(4, 0)).unwrap(),
            k_atom(e(4, 0), -e(4, 0)).unwrap(),
            k_atom(-e(4, 0), e(4, 0)).unwrap(),
            k_atom(-e(4, 0), -e(4, 0)).unwrap(),
        ];
        let d = CaratheodoryDecomp { weights: vec![0.25; 4], atoms, reconstruction_error: 0.0 };
        let z = State::zeros(4);
        let seg = segment_from_decomposition(&z, &d, &lib).unwrap();
        // atom 1 = (e1,e1), l = (-e1,-e1): direction = 1/8 (a_l - a_1)
        assert_eq!(seg.direction.u, e(4, 0) * -0.25);
        assert_eq!(seg.direction.b, e(4, 0) * -0.25);
        assert_eq!(seg.direction.m.amax(), 0.0);
        let chk = verify_amplitude_bound(&z, &seg, 0.25, 2.0);
        assert!(chk.holds);
        // independent arithmetic: lhs = 0.25 * 2 / 384, rhs = 0.125 + 2/16/384
        assert!((chk.lhs - 0.5 / 384.0).abs() < 1e-15);
        assert!((chk.rhs - (0.125 + 0.125 / 384.0)).abs() < 1e-15);
    }

    #[test]
    fn single_atom_is_at_the_constraint_set() {
        let lib = build_atom_library(4, 200, 7).unwrap();
        let a = lib.atoms()[0].clone();
        let d = CaratheodoryDecomp { weights: vec![1.0], atoms: vec![a.clone()], reconstruction_error: 0.0 };
        assert_eq!(segment_from_decomposition(&a.state(), &d, &lib), Err(Error::AtConstraintSet));
    }

    #[test]
    fn interior_segments_keep_half_the_margin() {
        let lib = build_atom_library(4, 200, 7).unwrap();
        for k in 0..4 {
            let zr = lib.atoms()[k].reduced().scaled(0.3).add(&lib.atoms()[50 + k].reduced().scaled(0.2));
            let z = State { reduced: zr.clone(), pressure: 0.1 };
            let d = decompose(&zr, &lib).unwrap();
            let seg = segment_from_decomposition(&z, &d, &lib).unwrap();
            assert!(seg.margin_ratio() >= 0.5 - 1e-9, "ratio {}", seg.margin_ratio());
            let w = pack_state(&seg.direction_state());
            assert!(relative_residual(&w, &seg.certificate.xi_vector()) <= 1e-10);
        }
    }
}
