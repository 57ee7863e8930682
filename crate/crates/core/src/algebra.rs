//! Relaxed states, the stacked matrix embedding and shared linear algebra.
//!
//! A state is z = (u, b, M, Q, q) with M symmetric trace-free and Q skew.
//! Besides the structured types, every state has a flat coordinate vector in
//! an orthonormal (Frobenius) basis; the LP and grid code works on those.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub const MIN_DIMENSION: usize = 4;

/// Tolerance for unit-norm inputs.
pub const UNIT_TOL: f64 = 1e-12;

/// Tolerance for the block structure of an embedded matrix.
pub const STRUCTURE_TOL: f64 = 1e-12;

pub fn check_dimension(n: usize) -> Result<()> {
    if n < MIN_DIMENSION {
        return Err(Error::UnsupportedDimension { n });
    }
    Ok(())
}

/// Number of coordinates of (u, b, M, Q).
pub fn reduced_dim(n: usize) -> usize {
    n * (n + 2) - 1
}

/// Number of coordinates of (u, b, M, Q, q).
pub fn state_dim(n: usize) -> usize {
    n * (n + 2)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReducedState {
    pub u: DVector<f64>,
    pub b: DVector<f64>,
    pub m: DMatrix<f64>,
    pub q: DMatrix<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct State {
    pub reduced: ReducedState,
    /// Modified pressure q = p + (|u|^2 - |b|^2)/n.
    pub pressure: f64,
}

fn sym_deviation(a: &DMatrix<f64>) -> f64 {
    (a - a.transpose()).amax()
}

fn skew_deviation(a: &DMatrix<f64>) -> f64 {
    (a + a.transpose()).amax()
}

impl ReducedState {
    pub fn zeros(n: usize) -> Self {
        ReducedState {
            u: DVector::zeros(n),
            b: DVector::zeros(n),
            m: DMatrix::zeros(n, n),
            q: DMatrix::zeros(n, n),
        }
    }

    /// Checked constructor.
    pub fn new(u: DVector<f64>, b: DVector<f64>, m: DMatrix<f64>, q: DMatrix<f64>) -> Result<Self> {
        let n = u.len();
        check_dimension(n)?;
        if b.len() != n || m.shape() != (n, n) || q.shape() != (n, n) {
            return Err(Error::Degenerate("component shapes disagree"));
        }
        let scale = 1.0_f64.max(m.amax()).max(q.amax());
        let dev = sym_deviation(&m).max(m.trace().abs());
        if dev > STRUCTURE_TOL * scale {
            return Err(Error::Structural { block: "M", deviation: dev });
        }
        let dev = skew_deviation(&q);
        if dev > STRUCTURE_TOL * scale {
            return Err(Error::Structural { block: "Q", deviation: dev });
        }
        Ok(ReducedState { u, b, m, q })
    }

    pub fn n(&self) -> usize {
        self.u.len()
    }

    /// Coordinates in the orthonormal basis: u, b, off-diagonal M, Helmert
    /// diagonal of M, then Q above the diagonal.
    pub fn coords(&self) -> Vec<f64> {
        let n = self.n();
        let mut c = Vec::with_capacity(reduced_dim(n));
        c.extend(self.u.iter());
        c.extend(self.b.iter());
        let r2 = std::f64::consts::SQRT_2;
        for i in 0..n {
            for j in i + 1..n {
                c.push(r2 * 0.5 * (self.m[(i, j)] + self.m[(j, i)]));
            }
        }
        for k in 1..n {
            let mut s = 0.0;
            for i in 0..k {
                s += self.m[(i, i)];
            }
            s -= k as f64 * self.m[(k, k)];
            c.push(s / ((k * (k + 1)) as f64).sqrt());
        }
        for i in 0..n {
            for j in i + 1..n {
                c.push(r2 * 0.5 * (self.q[(i, j)] - self.q[(j, i)]));
            }
        }
        c
    }

    pub fn from_coords(n: usize, c: &[f64]) -> Self {
        assert_eq!(c.len(), reduced_dim(n), "coordinate length");
        let mut z = ReducedState::zeros(n);
        let mut p = 0;
        for i in 0..n {
            z.u[i] = c[p];
            p += 1;
        }
        for i in 0..n {
            z.b[i] = c[p];
            p += 1;
        }
        let h = std::f64::consts::FRAC_1_SQRT_2;
        for i in 0..n {
            for j in i + 1..n {
                z.m[(i, j)] = c[p] * h;
                z.m[(j, i)] = c[p] * h;
                p += 1;
            }
        }
        for k in 1..n {
            let w = c[p] / ((k * (k + 1)) as f64).sqrt();
            for i in 0..k {
                z.m[(i, i)] += w;
            }
            z.m[(k, k)] -= k as f64 * w;
            p += 1;
        }
        for i in 0..n {
            for j in i + 1..n {
                z.q[(i, j)] = c[p] * h;
                z.q[(j, i)] = -c[p] * h;
                p += 1;
            }
        }
        z
    }

    pub fn scaled(&self, s: f64) -> Self {
        ReducedState {
            u: &self.u * s,
            b: &self.b * s,
            m: &self.m * s,
            q: &self.q * s,
        }
    }

    pub fn add(&self, o: &Self) -> Self {
        ReducedState {
            u: &self.u + &o.u,
            b: &self.b + &o.b,
            m: &self.m + &o.m,
            q: &self.q + &o.q,
        }
    }

    pub fn sub(&self, o: &Self) -> Self {
        self.add(&o.scaled(-1.0))
    }

    /// Max-norm over all matrix and vector entries.
    pub fn amax(&self) -> f64 {
        self.u.amax().max(self.b.amax()).max(self.m.amax()).max(self.q.amax())
    }
}

impl State {
    pub fn zeros(n: usize) -> Self {
        State { reduced: ReducedState::zeros(n), pressure: 0.0 }
    }

    pub fn new(reduced: ReducedState, pressure: f64) -> Result<Self> {
        if !pressure.is_finite() {
            return Err(Error::InvalidParameter { name: "q", value: pressure });
        }
        Ok(State { reduced, pressure })
    }

    pub fn n(&self) -> usize {
        self.reduced.n()
    }

    /// Reduced coordinates followed by q.
    pub fn coords(&self) -> Vec<f64> {
        let mut c = self.reduced.coords();
        c.push(self.pressure);
        c
    }

    pub fn from_coords(n: usize, c: &[f64]) -> Self {
        assert_eq!(c.len(), state_dim(n), "coordinate length");
        let d = reduced_dim(n);
        State { reduced: ReducedState::from_coords(n, &c[..d]), pressure: c[d] }
    }

    pub fn scaled(&self, s: f64) -> Self {
        State { reduced: self.reduced.scaled(s), pressure: self.pressure * s }
    }

    pub fn add(&self, o: &Self) -> Self {
        State { reduced: self.reduced.add(&o.reduced), pressure: self.pressure + o.pressure }
    }

    pub fn sub(&self, o: &Self) -> Self {
        self.add(&o.scaled(-1.0))
    }
}

/// The (2n+2)x(n+1) matrix [M+qI, u; u^t, 0; Q, b; b^t, 0].
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddedMatrix {
    pub entries: DMatrix<f64>,
}

impl EmbeddedMatrix {
    pub fn zeros(n: usize) -> Self {
        EmbeddedMatrix { entries: DMatrix::zeros(2 * n + 2, n + 1) }
    }

    pub fn n(&self) -> usize {
        self.entries.ncols() - 1
    }

    /// Upper (n+1)x(n+1) block U.
    pub fn upper(&self) -> DMatrix<f64> {
        let n = self.n();
        self.entries.view((0, 0), (n + 1, n + 1)).into_owned()
    }

    /// Lower (n+1)x(n+1) block V.
    pub fn lower(&self) -> DMatrix<f64> {
        let n = self.n();
        self.entries.view((n + 1, 0), (n + 1, n + 1)).into_owned()
    }

    pub fn from_blocks(u: &DMatrix<f64>, v: &DMatrix<f64>) -> Self {
        let k = u.nrows();
        let mut e = DMatrix::zeros(2 * k, k);
        e.view_mut((0, 0), (k, k)).copy_from(u);
        e.view_mut((k, 0), (k, k)).copy_from(v);
        EmbeddedMatrix { entries: e }
    }

    pub fn norm(&self) -> f64 {
        self.entries.norm()
    }

    /// Largest violation of the block structure (U in K1, V in K2).
    pub fn structure_deviation(&self) -> (f64, f64) {
        let n = self.n();
        let u = self.upper();
        let v = self.lower();
        let du = sym_deviation(&u).max(u[(n, n)].abs());
        let mut dv = v[(n, n)].abs();
        for i in 0..n {
            for j in 0..n {
                dv = dv.max((v[(i, j)] + v[(j, i)]).abs());
            }
            dv = dv.max((v[(i, n)] - v[(n, i)]).abs());
        }
        (du, dv)
    }
}

pub fn pack_state(z: &State) -> EmbeddedMatrix {
    let n = z.n();
    let r = &z.reduced;
    let mut w = EmbeddedMatrix::zeros(n);
    let e = &mut w.entries;
    for i in 0..n {
        for j in 0..n {
            e[(i, j)] = r.m[(i, j)];
            e[(n + 1 + i, j)] = r.q[(i, j)];
        }
        e[(i, i)] += z.pressure;
        e[(i, n)] = r.u[i];
        e[(n, i)] = r.u[i];
        e[(n + 1 + i, n)] = r.b[i];
        e[(2 * n + 1, i)] = r.b[i];
    }
    w
}

pub fn unpack_state(w: &EmbeddedMatrix) -> Result<State> {
    let n = w.n();
    check_dimension(n)?;
    if w.entries.nrows() != 2 * n + 2 {
        return Err(Error::Degenerate("embedded matrix must have 2n+2 rows"));
    }
    let scale = 1.0_f64.max(w.entries.amax());
    let (du, dv) = w.structure_deviation();
    if du > STRUCTURE_TOL * scale {
        return Err(Error::Structural { block: "U (symmetric, zero corner)", deviation: du });
    }
    if dv > STRUCTURE_TOL * scale {
        return Err(Error::Structural { block: "V (skew part, zero corner)", deviation: dv });
    }
    Ok(unpack_unchecked(w))
}

/// Linear left inverse of `pack_state`; symmetrizes instead of checking.
pub fn unpack_unchecked(w: &EmbeddedMatrix) -> State {
    let n = w.n();
    let e = &w.entries;
    let mut z = State::zeros(n);
    let q = (0..n).map(|i| e[(i, i)]).sum::<f64>() / n as f64;
    z.pressure = q;
    let r = &mut z.reduced;
    for i in 0..n {
        r.u[i] = 0.5 * (e[(i, n)] + e[(n, i)]);
        r.b[i] = 0.5 * (e[(n + 1 + i, n)] + e[(2 * n + 1, i)]);
        for j in 0..n {
            r.m[(i, j)] = 0.5 * (e[(i, j)] + e[(j, i)]);
            r.q[(i, j)] = 0.5 * (e[(n + 1 + i, j)] - e[(n + 1 + j, i)]);
        }
        r.m[(i, i)] -= q;
    }
    z
}

/// Dense matrices of the linear maps between state coordinates and the
/// row-major entries of the embedded matrix.
#[derive(Debug, Clone)]
pub struct EmbeddingMaps {
    pub n: usize,
    /// (2n+2)(n+1) x n(n+2), coordinates -> entries.
    pub pack: DMatrix<f64>,
    /// n(n+2) x (2n+2)(n+1), entries -> coordinates (left inverse).
    pub unpack: DMatrix<f64>,
}

impl EmbeddingMaps {
    pub fn new(n: usize) -> Self {
        let d = state_dim(n);
        let rows = 2 * n + 2;
        let cols = n + 1;
        let mut pack = DMatrix::zeros(rows * cols, d);
        let mut basis = vec![0.0; d];
        for k in 0..d {
            basis.iter_mut().for_each(|x| *x = 0.0);
            basis[k] = 1.0;
            let w = pack_state(&State::from_coords(n, &basis));
            for i in 0..rows {
                for j in 0..cols {
                    pack[(i * cols + j, k)] = w.entries[(i, j)];
                }
            }
        }
        let mut unpack = DMatrix::zeros(d, rows * cols);
        let mut w = EmbeddedMatrix::zeros(n);
        for i in 0..rows {
            for j in 0..cols {
                w.entries.fill(0.0);
                w.entries[(i, j)] = 1.0;
                let c = unpack_unchecked(&w).coords();
                for k in 0..d {
                    unpack[(k, i * cols + j)] = c[k];
                }
            }
        }
        EmbeddingMaps { n, pack, unpack }
    }
}

/// A point of the constraint set K; M and Q are derived from u and b.
#[derive(Debug, Clone, PartialEq)]
pub struct KAtom {
    reduced: ReducedState,
}

pub fn k_atom(u: DVector<f64>, b: DVector<f64>) -> Result<KAtom> {
    let n = u.len();
    check_dimension(n)?;
    if b.len() != n {
        return Err(Error::Degenerate("u and b have different lengths"));
    }
    for (what, v) in [("u", &u), ("b", &b)] {
        let norm = v.norm();
        if (norm - 1.0).abs() > UNIT_TOL {
            return Err(Error::NonUnitVector { what, norm });
        }
    }
    let m = &u * u.transpose() - &b * b.transpose();
    let q = &b * u.transpose() - &u * b.transpose();
    Ok(KAtom { reduced: ReducedState { u, b, m, q } })
}

impl KAtom {
    pub fn u(&self) -> &DVector<f64> {
        &self.reduced.u
    }
    pub fn b(&self) -> &DVector<f64> {
        &self.reduced.b
    }
    pub fn m(&self) -> &DMatrix<f64> {
        &self.reduced.m
    }
    pub fn q(&self) -> &DMatrix<f64> {
        &self.reduced.q
    }
    pub fn reduced(&self) -> &ReducedState {
        &self.reduced
    }
    pub fn n(&self) -> usize {
        self.reduced.n()
    }
    /// The atom as a state with q = 0.
    pub fn state(&self) -> State {
        State { reduced: self.reduced.clone(), pressure: 0.0 }
    }
}

pub fn relaxed_vars(u: &DVector<f64>, b: &DVector<f64>, p: f64) -> State {
    let n = u.len();
    let t = (u.norm_squared() - b.norm_squared()) / n as f64;
    let m = u * u.transpose() - b * b.transpose() - DMatrix::identity(n, n) * t;
    let q = b * u.transpose() - u * b.transpose();
    State { reduced: ReducedState { u: u.clone(), b: b.clone(), m, q }, pressure: p + t }
}

/// 2^m (m-1)^(m-1).
pub fn power_constant(m: f64) -> f64 {
    2f64.powf(m) * (m - 1.0).powf(m - 1.0)
}

/// Returns the bound (1+eps) a^m + C(m) eps^(1-m) c^m and whether (a+c)^m stays below it.
pub fn power_sum_bound(a: f64, c: f64, eps: f64, m: f64) -> Result<(f64, bool)> {
    if !(a >= 0.0 && a.is_finite()) {
        return Err(Error::InvalidParameter { name: "a", value: a });
    }
    if !(c >= 0.0 && c.is_finite()) {
        return Err(Error::InvalidParameter { name: "c", value: c });
    }
    if !(eps > 0.0 && eps < 1.0) {
        return Err(Error::InvalidParameter { name: "eps", value: eps });
    }
    if !(m > 1.0 && m.is_finite()) {
        return Err(Error::InvalidParameter { name: "m", value: m });
    }
    let bound = (1.0 + eps) * a.powf(m) + power_constant(m) * eps.powf(1.0 - m) * c.powf(m);
    Ok((bound, (a + c).powf(m) <= bound))
}

/// Orthonormal basis of span(vs) by modified Gram-Schmidt; vectors whose
/// residual falls below `tol` are dropped.
pub fn orthonormal_span(vs: &[DVector<f64>], tol: f64) -> Vec<DVector<f64>> {
    let mut out: Vec<DVector<f64>> = Vec::new();
    for v in vs {
        let mut w = v.clone();
        for _ in 0..2 {
            for q in &out {
                let d = q.dot(&w);
                w -= q * d;
            }
        }
        let nrm = w.norm();
        if nrm > tol {
            out.push(w / nrm);
        }
    }
    out
}

/// Deterministic unit vector of a subspace given by an orthonormal basis:
/// project each coordinate vector, keep the longest projection (lowest index
/// on ties), normalize, and make the first nonzero component positive.
pub fn canonical_vector(basis: &[DVector<f64>], dim: usize) -> Option<DVector<f64>> {
    if basis.is_empty() {
        return None;
    }
    let norms: Vec<f64> = (0..dim)
        .map(|k| basis.iter().map(|q| q[k] * q[k]).sum::<f64>().sqrt())
        .collect();
    let best = norms.iter().cloned().fold(0.0_f64, f64::max);
    if best <= 1e-12 {
        return None;
    }
    let k = norms.iter().position(|&x| x >= best * (1.0 - 1e-9))?;
    let mut v = DVector::zeros(dim);
    for q in basis {
        v += q * q[k];
    }
    let mut v = v.normalize();
    // snap roundoff so exact directions come out exact
    v.iter_mut().for_each(|x| {
        if x.abs() < 1e-13 {
            *x = 0.0
        }
    });
    Some(fix_sign(v.normalize()))
}

pub fn fix_sign(v: DVector<f64>) -> DVector<f64> {
    match v.iter().find(|x| x.abs() > 1e-12) {
        Some(&x) if x < 0.0 => -v,
        _ => v,
    }
}

/// Orthonormal basis of the null space of `a` by SVD, singular values below
/// `rel_tol * sigma_max` counted as zero.
pub fn null_space(a: &DMatrix<f64>, rel_tol: f64) -> Vec<DVector<f64>> {
    let cols = a.ncols();
    // Work with the square Gram-free form: SVD of a padded to at least cols rows.
    let padded = if a.nrows() < cols {
        let mut p = DMatrix::zeros(cols, cols);
        p.view_mut((0, 0), (a.nrows(), cols)).copy_from(a);
        p
    } else {
        a.clone()
    };
    let svd = padded.svd(false, true);
    let vt = svd.v_t.expect("v_t requested");
    let smax = svd.singular_values.iter().cloned().fold(0.0_f64, f64::max);
    let thresh = rel_tol * smax.max(f64::MIN_POSITIVE);
    let vs: Vec<DVector<f64>> = svd
        .singular_values
        .iter()
        .enumerate()
        .filter(|(_, &s)| s <= thresh)
        .map(|(i, _)| vt.row(i).transpose())
        .collect();
    orthonormal_span(&vs, 1e-8)
}
