//! The assembled building block: aligned potential, basis change, cover, and
//! anchor, with certified frequency.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{aligned_potential, basis_change, flipped_basis, hess_len, pack_cover, profile_hessian, CoverPiece, CutoffSpec};
use crate::algebra::{pack_state, state_dim, unpack_unchecked, EmbeddedMatrix, State};
use crate::error::{Error, Result};
use crate::qmc::BallSampler;
use crate::wavecone::{LambdaSegment, WaveDirection};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Anchor {
    pub center: Vec<f64>,
    pub radius: f64,
}

impl Anchor {
    /// Unit ball at the origin of R^k.
    pub fn unit(k: usize) -> Self {
        Anchor { center: vec![0.0; k], radius: 1.0 }
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        let d2: f64 = x.iter().zip(&self.center).map(|(a, b)| (a - b) * (a - b)).sum();
        d2 < self.radius * self.radius
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlockParams {
    /// Sup-distance to the segment allowed, in state coordinates.
    pub delta: f64,
    pub min_cover_fraction: f64,
    pub piece_cap: usize,
    pub coarse_samples: usize,
    pub certify_samples: usize,
    pub min_frequency: u32,
    pub max_frequency: u32,
}

impl Default for BlockParams {
    fn default() -> Self {
        BlockParams {
            delta: 0.1,
            min_cover_fraction: 0.5,
            piece_cap: 10_000,
            coarse_samples: 4096,
            certify_samples: 100_000,
            min_frequency: 1,
            max_frequency: 1 << 20,
        }
    }
}

#[derive(Debug, Clone)]
pub struct BuildingBlock {
    /// z-bar (q-bar = 0); the field oscillates along the segment [-z-bar, z-bar].
    pub amplitude: State,
    pub certificate: WaveDirection,
    pub basis: DMatrix<f64>,
    pub frequency: u32,
    pub delta: f64,
    /// Largest sampled distance to the segment.
    pub sup_distance: f64,
    pub cover: Vec<CoverPiece>,
    pub cover_fraction: f64,
    pub anchor: Anchor,
    cutoff: CutoffSpec,
    a_t: DMatrix<f64>,
    /// |A^{-t}|, the radius of A^{-t} B1.
    reach: f64,
    /// Hessian entries -> state coordinates.
    response: DMatrix<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct BlockSummary {
    pub xi: Vec<f64>,
    pub certificate_residual: f64,
    pub basis_det: f64,
    pub frequency: u32,
    pub delta: f64,
    pub sup_distance: f64,
    pub cover_pieces: usize,
    pub cover_fraction: f64,
    pub amplitude_norm: f64,
    pub anchor: Anchor,
}

/// Shared quasi-random points of the unit ball, flattened.
fn ball_points(k: usize, count: usize) -> Arc<Vec<f64>> {
    static CACHE: OnceLock<Mutex<HashMap<usize, Arc<Vec<f64>>>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    let mut map = cache.lock().expect("point cache poisoned");
    if let Some(p) = map.get(&k) {
        if p.len() >= count * k {
            return p.clone();
        }
    }
    let flat: Vec<f64> = BallSampler::new(k).take(count).into_iter().flatten().collect();
    let p = Arc::new(flat);
    map.insert(k, p.clone());
    p
}

fn segment_distance(v: &[f64], amp: &[f64], amp2: f64) -> f64 {
    let t = (v.iter().zip(amp).map(|(a, b)| a * b).sum::<f64>() / amp2).clamp(-1.0, 1.0);
    v.iter().zip(amp).map(|(a, b)| (a - t * b) * (a - t * b)).sum::<f64>().sqrt()
}

fn sup_distance(resp: &DMatrix<f64>, amp: &[f64], cut: &CutoffSpec, freq: f64, pts: &[f64], k: usize) -> f64 {
    let amp2: f64 = amp.iter().map(|x| x * x).sum();
    pts.par_chunks(k)
        .map_init(
            || (vec![0.0; hess_len(k)], vec![0.0; resp.nrows()]),
            |(h, v), y| {
                if !profile_hessian(cut, freq, y, h) {
                    return 0.0;
                }
                matvec(resp, h, v);
                segment_distance(v, amp, amp2)
            },
        )
        .reduce(|| 0.0, f64::max)
}

/// out = m * x.
fn matvec(m: &DMatrix<f64>, x: &[f64], out: &mut [f64]) {
    out.iter_mut().for_each(|o| *o = 0.0);
    for (j, &xj) in x.iter().enumerate() {
        if xj == 0.0 {
            continue;
        }
        for (o, a) in out.iter_mut().zip(m.column(j).iter()) {
            *o += a * xj;
        }
    }
}

pub fn build_block(seg: &LambdaSegment, params: &BlockParams, anchor: Anchor) -> Result<BuildingBlock> {
    let amplitude = seg.direction_state();
    let n = amplitude.n();
    let k = n + 1;
    if !(params.delta > 0.0) {
        return Err(Error::InvalidParameter { name: "delta", value: params.delta });
    }
    if !(anchor.radius > 0.0) || anchor.center.len() != k {
        return Err(Error::InvalidParameter { name: "anchor radius", value: anchor.radius });
    }
    let r = &amplitude.reduced;
    if (r.u.norm_squared() + r.b.norm_squared()).sqrt() <= 1e-14 {
        return Err(Error::ZeroTemporalColumn);
    }
    let a = basis_change(&seg.certificate)?;
    let a_inv = a.clone().try_inverse().ok_or(Error::NumericalDegeneracy("basis change is singular"))?;
    let af = flipped_basis(&a);
    let af_inv = af.clone().try_inverse().ok_or(Error::NumericalDegeneracy("basis change is singular"))?;

    // amplitude in aligned coordinates: U~ = A^t U A, V~ = (JAJ)^t V A
    let w = pack_state(&amplitude);
    let aligned = EmbeddedMatrix::from_blocks(&(a.transpose() * w.upper() * &a), &(af.transpose() * w.lower() * &a));
    let pot = aligned_potential(&aligned, 1)?;

    let hl = hess_len(k);
    let mut response = DMatrix::zeros(state_dim(n), hl);
    let (a_inv_t, af_inv_t) = (a_inv.transpose(), af_inv.transpose());
    let mut wt = EmbeddedMatrix::zeros(n);
    for c in 0..hl {
        let col = pot.response().column(c);
        for i in 0..2 * k {
            for j in 0..k {
                wt.entries[(i, j)] = col[i * k + j];
            }
        }
        let u = &a_inv_t * wt.upper() * &a_inv;
        let v = &af_inv_t * wt.lower() * &a_inv;
        let z = unpack_unchecked(&EmbeddedMatrix::from_blocks(&u, &v)).coords();
        response.set_column(c, &DVector::from_vec(z));
    }

    let amp = amplitude.coords();
    let count = params.certify_samples.max(params.coarse_samples);
    let pts = ball_points(k, count);
    let coarse = &pts[..params.coarse_samples.min(count) * k];
    let all = &pts[..count * k];
    let cutoff = pot.cutoff;
    let mut freq = params.min_frequency.max(1).next_power_of_two();
    let sup = loop {
        if freq > params.max_frequency {
            return Err(Error::InvalidParameter { name: "frequency", value: freq as f64 });
        }
        let f = freq as f64;
        if sup_distance(&response, &amp, &cutoff, f, coarse, k) < params.delta {
            let d = sup_distance(&response, &amp, &cutoff, f, all, k);
            if d < params.delta {
                break d;
            }
        }
        freq *= 2;
    };

    let (cover, cover_fraction) = pack_cover(&a, params.min_cover_fraction, params.piece_cap)?;
    let smin = a.singular_values().iter().cloned().fold(f64::INFINITY, f64::min);
    Ok(BuildingBlock {
        amplitude,
        certificate: seg.certificate.clone(),
        a_t: a.transpose(),
        basis: a,
        frequency: freq,
        delta: params.delta,
        sup_distance: sup,
        cover,
        cover_fraction,
        anchor,
        cutoff,
        reach: 1.0 / smin,
        response,
    })
}

impl BuildingBlock {
    pub fn n(&self) -> usize {
        self.amplitude.n()
    }

    /// Adds the block's state coordinates at anchor-local x (anchor = unit
    /// ball) to `out`; false when x is outside every piece.
    pub fn add_local(&self, x: &[f64], out: &mut [f64]) -> bool {
        let k = x.len();
        let r2: f64 = x.iter().map(|v| v * v).sum();
        if r2 >= 1.0 {
            return false;
        }
        let mut d = vec![0.0; k];
        let mut y = vec![0.0; k];
        let mut h = vec![0.0; hess_len(k)];
        for p in &self.cover {
            let mut dn = 0.0;
            for i in 0..k {
                d[i] = x[i] - p.center[i];
                dn += d[i] * d[i];
            }
            if dn.sqrt() >= p.radius * self.reach {
                continue;
            }
            for i in 0..k {
                y[i] = (0..k).map(|j| self.a_t[(i, j)] * d[j]).sum::<f64>() / p.radius;
            }
            if !profile_hessian(&self.cutoff, self.frequency as f64, &y, &mut h) {
                continue;
            }
            for (j, &hj) in h.iter().enumerate() {
                if hj == 0.0 {
                    continue;
                }
                for (o, a) in out.iter_mut().zip(self.response.column(j).iter()) {
                    *o += a * hj;
                }
            }
            // pieces are disjoint
            return true;
        }
        false
    }

    /// Adds the block's state coordinates at global x to `out`.
    pub fn add_at(&self, x: &[f64], out: &mut [f64]) -> bool {
        if !self.anchor.contains(x) {
            return false;
        }
        let local: Vec<f64> = x.iter().zip(&self.anchor.center).map(|(a, c)| (a - c) / self.anchor.radius).collect();
        self.add_local(&local, out)
    }

    pub fn evaluate(&self, x: &[f64]) -> State {
        let mut c = vec![0.0; state_dim(self.n())];
        self.add_at(x, &mut c);
        State::from_coords(self.n(), &c)
    }

    /// Same block scaled by s (linear in the amplitude).
    pub fn scaled(&self, s: f64) -> BuildingBlock {
        let mut b = self.clone();
        b.amplitude = b.amplitude.scaled(s);
        b.response *= s;
        b.sup_distance *= s.abs();
        b.delta *= s.abs();
        b
    }

    /// Same block moved to another anchor.
    pub fn anchored(&self, anchor: Anchor) -> BuildingBlock {
        let mut b = self.clone();
        b.anchor = anchor;
        b
    }

    pub fn summary(&self) -> BlockSummary {
        BlockSummary {
            xi: self.certificate.xi.clone(),
            certificate_residual: self.certificate.residual,
            basis_det: self.basis.determinant(),
            frequency: self.frequency,
            delta: self.delta,
            sup_distance: self.sup_distance,
            cover_pieces: self.cover.len(),
            cover_fraction: self.cover_fraction,
            amplitude_norm: self.amplitude.coords().iter().map(|x| x * x).sum::<f64>().sqrt(),
            anchor: self.anchor.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BlockMetrics {
    pub m: f64,
    pub samples: usize,
    /// Mean over the anchor ball of |W e_{n+1}|^m / |W-bar e_{n+1}|^m.
    pub mass_ratio: f64,
    pub std_err: f64,
    /// mass_ratio - 3 std_err.
    pub alpha_est: f64,
    /// |mean of the field| / |z-bar|.
    pub mean_norm: f64,
}

/// Quasi-Monte Carlo quadrature over the anchor ball.
pub fn block_metrics(blk: &BuildingBlock, m: f64, samples: usize) -> Result<BlockMetrics> {
    let r = &blk.amplitude.reduced;
    let n = blk.n();
    let k = n + 1;
    let temporal = (r.u.norm_squared() + r.b.norm_squared()).sqrt();
    if temporal <= 1e-14 {
        return Err(Error::ZeroTemporalColumn);
    }
    if !(m >= 1.0) || samples < 2 {
        return Err(Error::InvalidParameter { name: "m", value: m });
    }
    let d = state_dim(n);
    let pts = ball_points(k, samples);
    // fixed chunks summed in order keep the result independent of the pool
    let parts: Vec<(f64, f64, Vec<f64>)> = pts[..samples * k]
        .par_chunks(1024 * k)
        .map(|chunk| {
            let mut v = vec![0.0; d];
            let mut acc = (0.0, 0.0, vec![0.0; d]);
            for x in chunk.chunks(k) {
                v.iter_mut().for_each(|o| *o = 0.0);
                blk.add_local(x, &mut v);
                let t2: f64 = v[..2 * n].iter().map(|a| a * a).sum();
                let q = (t2.sqrt() / temporal).powf(m);
                acc.0 += q;
                acc.1 += q * q;
                acc.2.iter_mut().zip(&v).for_each(|(a, b)| *a += b);
            }
            acc
        })
        .collect();
    let (mut s1, mut s2, mut mean) = (0.0, 0.0, vec![0.0; d]);
    for (a, b, c) in parts {
        s1 += a;
        s2 += b;
        mean.iter_mut().zip(&c).for_each(|(x, y)| *x += y);
    }
    let ns = samples as f64;
    let mass_ratio = s1 / ns;
    let var = (s2 / ns - mass_ratio * mass_ratio).max(0.0) * ns / (ns - 1.0);
    let std_err = (var / ns).sqrt();
    let amp_norm = blk.amplitude.coords().iter().map(|x| x * x).sum::<f64>().sqrt();
    let mean_norm = mean.iter().map(|x| x * x / (ns * ns)).sum::<f64>().sqrt() / amp_norm;
    Ok(BlockMetrics { m, samples, mass_ratio, std_err, alpha_est: mass_ratio - 3.0 * std_err, mean_norm })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algebra::ReducedState;
    use crate::testkit::{aligned_segment, e, general_segment, segment};

    fn params() -> BlockParams {
        BlockParams { certify_samples: 20_000, min_cover_fraction: 0.2, ..BlockParams::default() }
    }

    #[test]
    fn aligned_block_reproduces_the_sine_inside() {
        let seg = aligned_segment();
        let blk = build_block(&seg, &params(), Anchor::unit(5)).unwrap();
        assert_eq!(blk.basis, DMatrix::identity(5, 5));
        assert_eq!(blk.cover.len(), 1);
        assert!(blk.sup_distance < 0.1);
        let amp = seg.direction_state().coords();
        let n = blk.frequency as f64;
        let mut pts = BallSampler::new(5);
        let mut x = vec![0.0; 5];
        for _ in 0..2000 {
            pts.next_point(&mut x);
            x.iter_mut().for_each(|v| *v *= 0.5);
            let got = blk.evaluate(&x).coords();
            for (g, a) in got.iter().zip(&amp) {
                assert!((g - a * (n * x[0]).sin()).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn support_stays_inside_the_anchor() {
        let anchor = Anchor { center: vec![0.1, 0.0, -0.2, 0.0, 0.3], radius: 0.25 };
        let blk = build_block(&general_segment(), &params(), anchor.clone()).unwrap();
        let mut s = crate::qmc::Halton::plain(5);
        let mut x = vec![0.0; 5];
        let mut probes = 0;
        while probes < 10_000 {
            s.next_point(&mut x);
            x.iter_mut().for_each(|v| *v = 2.0 * *v - 1.0);
            if anchor.contains(&x) {
                continue;
            }
            probes += 1;
            assert!(blk.evaluate(&x).coords().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn general_block_stays_near_the_segment() {
        let seg = general_segment();
        let blk = build_block(&seg, &params(), Anchor::unit(5)).unwrap();
        assert!(blk.basis.determinant().abs() > 1e-10);
        assert_eq!(blk.basis.column(4), e(5, 4));
        assert!(blk.cover_fraction >= 0.2);
        let amp = seg.direction_state().coords();
        let amp2: f64 = amp.iter().map(|x| x * x).sum();
        let xi = seg.certificate.xi_vector();
        let n = blk.frequency as f64;
        let mut pts = BallSampler::new(5);
        let mut x = vec![0.0; 5];
        let mut interior = 0;
        for _ in 0..20_000 {
            pts.next_point(&mut x);
            let v = blk.evaluate(&x);
            let (du, dv) = pack_state(&v).structure_deviation();
            assert!(du <= 1e-12 && dv <= 1e-12);
            let c = v.coords();
            assert!(segment_distance(&c, &amp, amp2) < blk.delta);
            // inner half of the centered piece: exact plane wave
            let p = &blk.cover[0];
            let y = (blk.basis.transpose() * DVector::from_column_slice(&x)) / p.radius;
            if y.norm() <= 0.5 {
                interior += 1;
                let phase = (n * xi.dot(&DVector::from_column_slice(&x)) / p.radius).sin();
                for (g, a) in c.iter().zip(&amp) {
                    assert!((g - a * phase).abs() <= 1e-12);
                }
            }
        }
        assert!(interior > 100);
    }

    #[test]
    fn aligned_mass_matches_the_radial_integral() {
        let cut = CutoffSpec::default();
        // mean of |sin|^m times the radial profile integral over B1
        let radial = |m: f64| {
            let steps = 20_000;
            let h = 1.0 / steps as f64;
            (0..steps).map(|i| {
                let r = (i as f64 + 0.5) * h;
                cut.radial(r).0.powf(m) * 5.0 * r.powi(4) * h
            }).sum::<f64>()
        };
        let blk = build_block(&aligned_segment(), &BlockParams { delta: 0.02, ..params() }, Anchor::unit(5)).unwrap();
        for (m, mean) in [(2.0, 0.5), (4.0, 0.375)] {
            let want = mean * radial(m);
            let got = block_metrics(&blk, m, 200_000).unwrap();
            assert!((got.mass_ratio - want).abs() < 0.05 * want, "m={m}: {} vs {want}", got.mass_ratio);
            assert!(got.mass_ratio >= got.alpha_est && got.alpha_est > 0.0);
            assert!(got.mean_norm < 0.01);
        }
        let m2 = block_metrics(&blk, 2.0, 200_000).unwrap();
        assert!(m2.alpha_est >= 2f64.powi(-7));
        // the inner half ball alone gives 2^-6
        assert!(radial(2.0) * 0.5 > 2f64.powi(-6));
    }

    #[test]
    fn guards() {
        let mut seg = aligned_segment();
        assert!(build_block(&seg, &BlockParams { delta: 0.0, ..params() }, Anchor::unit(5)).is_err());
        assert!(build_block(&seg, &params(), Anchor { center: vec![0.0; 5], radius: 0.0 }).is_err());
        seg.certificate.xi = vec![0.0, 0.0, 0.0, 0.0, 1.0];
        assert_eq!(build_block(&seg, &params(), Anchor::unit(5)).unwrap_err(), Error::DegenerateDirection);
        // a pure M/Q amplitude has no temporal column
        let mut z = ReducedState::zeros(4);
        z.m[(1, 2)] = 0.5;
        z.m[(2, 1)] = 0.5;
        let seg = segment(z, vec![1.0, 0.0, 0.0, 0.0, 0.0]);
        assert_eq!(build_block(&seg, &params(), Anchor::unit(5)).unwrap_err(), Error::ZeroTemporalColumn);
    }

    #[test]
    fn scaling_is_linear() {
        let blk = build_block(&general_segment(), &params(), Anchor::unit(5)).unwrap();
        let half = blk.scaled(0.5);
        let x = [0.1, 0.05, -0.2, 0.1, 0.02];
        let a = blk.evaluate(&x).coords();
        let b = half.evaluate(&x).coords();
        for (p, q) in a.iter().zip(&b) {
            assert!((0.5 * p - q).abs() < 1e-15);
        }
    }
}
