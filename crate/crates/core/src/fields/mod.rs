//! Lattice sampling of block sums, midpoint quadrature, mollification, and
//! finite-difference divergence.
//!
//! Grids are cell-centered on an axis-aligned box in space-time. Storage can
//! be restricted to a ball (`Support::Ball`); lattice points outside it are
//! treated as zero, which is exact for fields supported inside the ball.

mod io;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::algebra::{check_dimension, pack_state, state_dim, State};
use crate::error::{Error, Result};
use crate::waves::{BuildingBlock, CutoffSpec};

pub use io::{read_mhdf, read_mhdf_records, write_mhdf, write_mhdf_records, MhdfData, MHDF_MAGIC, MHDF_VERSION};

pub const MIN_POINTS_PER_AXIS: usize = 8;
/// Refuse grids whose storage would exceed this.
pub const MAX_GRID_BYTES: usize = 2 << 30;
const NONE: u32 = u32::MAX;
/// Points per reduction chunk; chunks are combined in order.
const CHUNK: usize = 4096;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub n: usize,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub points_per_axis: usize,
}

impl GridSpec {
    pub fn new(n: usize, lo: Vec<f64>, hi: Vec<f64>, points_per_axis: usize) -> Result<Self> {
        check_dimension(n)?;
        if points_per_axis < MIN_POINTS_PER_AXIS {
            return Err(Error::Config(format!(
                "points_per_axis = {points_per_axis} is below the minimum {MIN_POINTS_PER_AXIS}"
            )));
        }
        if lo.len() != n + 1 || hi.len() != n + 1 || lo.iter().zip(&hi).any(|(a, b)| !(b > a)) {
            return Err(Error::Config("grid bounds must be a nondegenerate box in R^(n+1)".into()));
        }
        Ok(GridSpec { n, lo, hi, points_per_axis })
    }

    /// Cube center +- half.
    pub fn cube(n: usize, center: &[f64], half: f64, points_per_axis: usize) -> Result<Self> {
        let lo = center.iter().map(|c| c - half).collect();
        let hi = center.iter().map(|c| c + half).collect();
        GridSpec::new(n, lo, hi, points_per_axis)
    }

    pub fn k(&self) -> usize {
        self.n + 1
    }

    pub fn step(&self, axis: usize) -> f64 {
        (self.hi[axis] - self.lo[axis]) / self.points_per_axis as f64
    }

    /// Largest step over the axes.
    pub fn h(&self) -> f64 {
        (0..self.k()).map(|a| self.step(a)).fold(0.0, f64::max)
    }

    pub fn cell_volume(&self) -> f64 {
        (0..self.k()).map(|a| self.step(a)).product()
    }

    pub fn lattice_size(&self) -> usize {
        self.points_per_axis.pow(self.k() as u32)
    }

    /// Multi-index of a row-major lattice index.
    pub fn multi(&self, mut idx: usize, out: &mut [usize]) {
        let p = self.points_per_axis;
        for a in (0..self.k()).rev() {
            out[a] = idx % p;
            idx /= p;
        }
    }

    pub fn point(&self, idx: usize, out: &mut [f64]) {
        let p = self.points_per_axis;
        let mut idx = idx;
        for a in (0..self.k()).rev() {
            out[a] = self.lo[a] + ((idx % p) as f64 + 0.5) * self.step(a);
            idx /= p;
        }
    }

    /// Distance from `x` to the box complement (negative outside).
    pub fn inner_distance(&self, x: &[f64]) -> f64 {
        (0..self.k()).map(|a| (x[a] - self.lo[a]).min(self.hi[a] - x[a])).fold(f64::INFINITY, f64::min)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Support {
    Full,
    Ball { center: Vec<f64>, radius: f64 },
}

impl Support {
    pub fn contains(&self, x: &[f64]) -> bool {
        match self {
            Support::Full => true,
            Support::Ball { center, radius } => {
                x.iter().zip(center).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() < radius * radius
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FieldGrid {
    pub spec: GridSpec,
    pub comps: usize,
    pub support: Support,
    /// lattice index -> storage slot (NONE outside the support)
    slot_of: Vec<u32>,
    /// storage slot -> lattice index
    sites: Vec<u32>,
    pub values: Vec<f64>,
    pub provenance: Vec<String>,
}

impl FieldGrid {
    pub fn zeros(spec: &GridSpec, comps: usize, support: Support) -> Result<Self> {
        let size = spec.lattice_size();
        if size >= NONE as usize {
            return Err(Error::GridTooLarge { bytes: size.saturating_mul(comps * 8) as u64 });
        }
        let k = spec.k();
        let mut x = vec![0.0; k];
        let mut slot_of = vec![NONE; size];
        let mut sites = Vec::new();
        for (idx, s) in slot_of.iter_mut().enumerate() {
            spec.point(idx, &mut x);
            if support.contains(&x) {
                *s = sites.len() as u32;
                sites.push(idx as u32);
            }
        }
        let bytes = sites.len() * comps * 8 + size * 4;
        if bytes > MAX_GRID_BYTES {
            return Err(Error::GridTooLarge { bytes: bytes as u64 });
        }
        Ok(FieldGrid {
            spec: spec.clone(),
            comps,
            support,
            slot_of,
            values: vec![0.0; sites.len() * comps],
            sites,
            provenance: Vec::new(),
        })
    }

    /// Zero grid with the same lattice and support.
    pub fn zeros_like(&self, comps: usize) -> Self {
        FieldGrid {
            spec: self.spec.clone(),
            comps,
            support: self.support.clone(),
            slot_of: self.slot_of.clone(),
            sites: self.sites.clone(),
            values: vec![0.0; self.sites.len() * comps],
            provenance: Vec::new(),
        }
    }

    pub fn active_points(&self) -> usize {
        self.sites.len()
    }

    pub fn site(&self, slot: usize) -> usize {
        self.sites[slot] as usize
    }

    pub fn slot(&self, idx: usize) -> Option<usize> {
        let s = self.slot_of[idx];
        (s != NONE).then_some(s as usize)
    }

    pub fn site_point(&self, slot: usize, out: &mut [f64]) {
        self.spec.point(self.site(slot), out);
    }

    pub fn value(&self, slot: usize) -> &[f64] {
        &self.values[slot * self.comps..(slot + 1) * self.comps]
    }

    /// Values at a lattice index (zeros outside the support).
    pub fn at(&self, idx: usize) -> Option<&[f64]> {
        self.slot(idx).map(|s| self.value(s))
    }

    pub fn state(&self, slot: usize) -> State {
        State::from_coords(self.spec.n, self.value(slot))
    }

    fn same_layout(&self, o: &FieldGrid) -> bool {
        self.spec == o.spec && self.comps == o.comps && self.support == o.support
    }

    /// self + s * o.
    pub fn axpy(&self, s: f64, o: &FieldGrid) -> Result<FieldGrid> {
        if !self.same_layout(o) {
            return Err(Error::Config("grids have different layouts".into()));
        }
        let mut out = self.clone();
        out.values.iter_mut().zip(&o.values).for_each(|(a, b)| *a += s * b);
        out.provenance.extend(o.provenance.iter().cloned());
        Ok(out)
    }

    /// Sets every stored value from a function of the lattice point.
    pub fn fill_with<F>(&mut self, f: F)
    where
        F: Fn(&[f64], &mut [f64]) + Sync,
    {
        let k = self.spec.k();
        let comps = self.comps;
        let spec = &self.spec;
        let sites = &self.sites;
        self.values.par_chunks_mut(comps).enumerate().for_each_init(
            || vec![0.0; k],
            |x, (slot, v)| {
                spec.point(sites[slot] as usize, x);
                v.iter_mut().for_each(|o| *o = 0.0);
                f(x, v);
            },
        );
    }

    /// Deterministic sum over stored points of f(point, value).
    pub fn reduce<F>(&self, f: F) -> f64
    where
        F: Fn(&[f64], &[f64]) -> f64 + Sync,
    {
        let k = self.spec.k();
        let parts: Vec<f64> = (0..self.sites.len())
            .collect::<Vec<_>>()
            .par_chunks(CHUNK)
            .map(|slots| {
                let mut x = vec![0.0; k];
                slots
                    .iter()
                    .map(|&s| {
                        self.site_point(s, &mut x);
                        f(&x, self.value(s))
                    })
                    .sum::<f64>()
            })
            .collect();
        parts.iter().sum()
    }
}

/// Storage slots of the lattice points strictly inside the ball, in lattice
/// order.
pub fn slots_in_ball(g: &FieldGrid, center: &[f64], radius: f64) -> Vec<usize> {
    let spec = &g.spec;
    let k = spec.k();
    let p = spec.points_per_axis as isize;
    let ranges: Vec<(usize, usize)> = (0..k)
        .map(|ax| {
            let h = spec.step(ax);
            let lo = (((center[ax] - radius - spec.lo[ax]) / h - 0.5).floor() as isize).clamp(0, p - 1);
            let hi = (((center[ax] + radius - spec.lo[ax]) / h - 0.5).ceil() as isize).clamp(0, p - 1);
            (lo as usize, hi as usize)
        })
        .collect();
    let r2 = radius * radius;
    let mut slots = Vec::new();
    let mut mi: Vec<usize> = ranges.iter().map(|r| r.0).collect();
    let mut x = vec![0.0; k];
    'outer: loop {
        let idx = mi.iter().fold(0usize, |acc, &i| acc * spec.points_per_axis + i);
        spec.point(idx, &mut x);
        let d2: f64 = x.iter().zip(center).map(|(a, b)| (a - b) * (a - b)).sum();
        if d2 < r2 {
            if let Some(s) = g.slot(idx) {
                slots.push(s);
            }
        }
        for ax in (0..k).rev() {
            if mi[ax] < ranges[ax].1 {
                mi[ax] += 1;
                continue 'outer;
            }
            mi[ax] = ranges[ax].0;
        }
        break;
    }
    slots
}

/// Pointwise sum of block evaluations on the lattice.
pub fn sample_field(blocks: &[BuildingBlock], spec: &GridSpec, support: Support) -> Result<FieldGrid> {
    let mut g = FieldGrid::zeros(spec, state_dim(spec.n), support)?;
    add_blocks(&mut g, blocks)?;
    Ok(g)
}

/// Adds blocks to a state grid, visiting only lattice points inside each
/// anchor ball. Blocks are added in order.
pub fn add_blocks(g: &mut FieldGrid, blocks: &[BuildingBlock]) -> Result<()> {
    let spec = g.spec.clone();
    let k = spec.k();
    let comps = g.comps;
    if comps != state_dim(spec.n) {
        return Err(Error::Config("block sums need a full-state grid".into()));
    }
    for (bi, blk) in blocks.iter().enumerate() {
        if blk.n() != spec.n {
            return Err(Error::Placement);
        }
        let a = &blk.anchor;
        if spec.inner_distance(&a.center) < a.radius {
            return Err(Error::Placement);
        }
        if let Support::Ball { center, radius } = &g.support {
            let d: f64 = a.center.iter().zip(center).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
            if d + a.radius > *radius {
                return Err(Error::Placement);
            }
        }
        let slots = slots_in_ball(g, &a.center, a.radius);
        let sites = &g.sites;
        let vals: Vec<f64> = slots
            .par_iter()
            .flat_map_iter(|&s| {
                let mut x = vec![0.0; k];
                spec.point(sites[s] as usize, &mut x);
                let mut v = vec![0.0; comps];
                blk.add_at(&x, &mut v);
                v.into_iter()
            })
            .collect();
        for (j, &s) in slots.iter().enumerate() {
            for c in 0..comps {
                g.values[s * comps + c] += vals[j * comps + c];
            }
        }
        g.provenance.push(format!("block:{bi}"));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Component {
    U,
    B,
    /// |u|^m + |b|^m
    All,
    /// Euclidean norm of the full state coordinates
    State,
}

/// Midpoint rule for the integral of |f|^m over the stored points (the m-th
/// power of the L^m norm).
pub fn lm_norm(g: &FieldGrid, m: f64, component: Component) -> f64 {
    let n = g.spec.n;
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let s = g.reduce(|_, v| match component {
        Component::U => norm(&v[..n]).powf(m),
        Component::B => norm(&v[n..2 * n]).powf(m),
        Component::All => norm(&v[..n]).powf(m) + norm(&v[n..2 * n]).powf(m),
        Component::State => norm(v).powf(m),
    });
    s * g.spec.cell_volume()
}

/// Lattice offsets and normalized weights of the radial bump of radius r.
fn kernel(spec: &GridSpec, r: f64) -> Vec<(Vec<isize>, f64)> {
    let k = spec.k();
    let cut = CutoffSpec::default();
    let reach: Vec<isize> = (0..k).map(|a| (r / spec.step(a)).ceil() as isize).collect();
    let mut out = Vec::new();
    let mut off: Vec<isize> = reach.iter().map(|&x| -x).collect();
    'outer: loop {
        let d2: f64 = (0..k).map(|a| (off[a] as f64 * spec.step(a)).powi(2)).sum();
        let w = cut.radial(d2.sqrt() / r).0;
        if w > 0.0 {
            out.push((off.clone(), w));
        }
        for a in (0..k).rev() {
            if off[a] < reach[a] {
                off[a] += 1;
                continue 'outer;
            }
            off[a] = -reach[a];
        }
        break;
    }
    let total: f64 = out.iter().map(|(_, w)| w).sum();
    out.iter_mut().for_each(|(_, w)| *w /= total);
    out
}

/// Discrete convolution with the normalized bump psi(|x|/r).
pub fn mollify(g: &FieldGrid, r: f64) -> Result<FieldGrid> {
    let h = g.spec.h();
    if !(r >= 2.0 * h) {
        return Err(Error::UnderResolvedKernel { r, h });
    }
    let ker = kernel(&g.spec, r);
    let k = g.spec.k();
    let p = g.spec.points_per_axis;
    let stride: Vec<isize> = (0..k).map(|a| p.pow((k - 1 - a) as u32) as isize).collect();
    let reach: Vec<usize> = (0..k).map(|a| ker.iter().map(|(o, _)| o[a].unsigned_abs()).max().unwrap_or(0)).collect();
    let flat: Vec<(isize, f64)> =
        ker.iter().map(|(o, w)| (o.iter().zip(&stride).map(|(a, b)| a * b).sum(), *w)).collect();
    let comps = g.comps;
    let mut out = g.zeros_like(comps);
    out.provenance = g.provenance.clone();
    let spec = &g.spec;
    out.values.par_chunks_mut(comps).enumerate().for_each_init(
        || vec![0usize; k],
        |mi, (slot, v)| {
            let idx = g.site(slot);
            spec.multi(idx, mi);
            let interior = (0..k).all(|a| mi[a] >= reach[a] && mi[a] + reach[a] < p);
            for (j, (d, w)) in flat.iter().enumerate() {
                if !interior {
                    let off = &ker[j].0;
                    let outside = (0..k).any(|a| {
                        let c = mi[a] as isize + off[a];
                        c < 0 || c >= p as isize
                    });
                    if outside {
                        continue;
                    }
                }
                if let Some(src) = g.at((idx as isize + d) as usize) {
                    for (o, s) in v.iter_mut().zip(src) {
                        *o += w * s;
                    }
                }
            }
        },
    );
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DivResidual {
    pub max_res: f64,
    pub l2_res: f64,
}

/// Central-difference divergence of the packed field at lattice index `idx`;
/// None on the boundary layer of the box.
pub fn divergence_at(g: &FieldGrid, idx: usize) -> Option<Vec<f64>> {
    let n = g.spec.n;
    let k = n + 1;
    let p = g.spec.points_per_axis;
    let mut mi = vec![0usize; k];
    g.spec.multi(idx, &mut mi);
    if mi.iter().any(|&i| i == 0 || i + 1 == p) {
        return None;
    }
    let zero = vec![0.0; g.comps];
    let mut div = vec![0.0; 2 * k];
    for a in 0..k {
        let stride = p.pow((k - 1 - a) as u32);
        let h = g.spec.step(a);
        let wf = pack_state(&State::from_coords(n, g.at(idx + stride).unwrap_or(&zero)));
        let wb = pack_state(&State::from_coords(n, g.at(idx - stride).unwrap_or(&zero)));
        for i in 0..2 * k {
            div[i] += (wf.entries[(i, a)] - wb.entries[(i, a)]) / (2.0 * h);
        }
    }
    Some(div)
}

/// Central differences of the packed (2n+2) x (n+1) field, row by row, at
/// interior lattice points. Stored values must be full states.
pub fn div_residual(g: &FieldGrid) -> Result<DivResidual> {
    if g.comps != state_dim(g.spec.n) {
        return Err(Error::Config("divergence needs a full-state grid".into()));
    }
    let parts: Vec<(f64, f64)> = (0..g.active_points())
        .collect::<Vec<_>>()
        .par_chunks(CHUNK)
        .map(|slots| {
            let (mut mx, mut sq) = (0.0f64, 0.0);
            for &s in slots {
                if let Some(div) = divergence_at(g, g.site(s)) {
                    let r2: f64 = div.iter().map(|x| x * x).sum();
                    mx = mx.max(r2.sqrt());
                    sq += r2;
                }
            }
            (mx, sq)
        })
        .collect();
    let max_res = parts.iter().map(|p| p.0).fold(0.0, f64::max);
    let l2_res = (parts.iter().map(|p| p.1).sum::<f64>() * g.spec.cell_volume()).sqrt();
    Ok(DivResidual { max_res, l2_res })
}

/// Central-difference divergence of the packed field of `f` at x, step h.
pub fn probe_divergence<F>(n: usize, f: F, x: &[f64], h: f64) -> Vec<f64>
where
    F: Fn(&[f64]) -> State,
{
    let k = n + 1;
    let mut div = vec![0.0; 2 * k];
    let mut y = x.to_vec();
    for a in 0..k {
        y[a] = x[a] + h;
        let wf = pack_state(&f(&y));
        y[a] = x[a] - h;
        let wb = pack_state(&f(&y));
        y[a] = x[a];
        for i in 0..2 * k {
            div[i] += (wf.entries[(i, a)] - wb.entries[(i, a)]) / (2.0 * h);
        }
    }
    div
}

/// Largest probe divergence over `points` at steps h0, h0/2, ..., h0/2^levels.
pub fn divergence_refinement<F>(n: usize, f: F, points: &[Vec<f64>], h0: f64, levels: usize) -> Vec<f64>
where
    F: Fn(&[f64]) -> State + Sync,
{
    (0..=levels)
        .map(|l| {
            let h = h0 / 2f64.powi(l as i32);
            points
                .par_iter()
                .map(|x| probe_divergence(n, &f, x, h).iter().map(|v| v * v).sum::<f64>().sqrt())
                .reduce(|| 0.0, f64::max)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algebra::pack_state;
    use crate::testkit::{aligned_segment, general_segment};
    use crate::waves::{block_metrics, build_block, Anchor, BlockParams};

    fn slow_params() -> BlockParams {
        // huge delta keeps N = 1 so the lattice resolves the block
        BlockParams { delta: 100.0, certify_samples: 4096, min_cover_fraction: 0.4, ..BlockParams::default() }
    }

    fn spec(p: usize) -> GridSpec {
        GridSpec::cube(4, &[0.0; 5], 1.0, p).unwrap()
    }

    #[test]
    fn spec_guards() {
        assert!(GridSpec::cube(4, &[0.0; 5], 1.0, 4).is_err());
        assert!(GridSpec::cube(3, &[0.0; 4], 1.0, 8).is_err());
        let s = spec(8);
        assert_eq!(s.lattice_size(), 32768);
        let mut x = vec![0.0; 5];
        s.point(0, &mut x);
        assert_eq!(x, vec![-0.875; 5]);
        let mut mi = vec![0; 5];
        s.multi(8 * 8 * 8 * 8 + 3, &mut mi);
        assert_eq!(mi, vec![1, 0, 0, 0, 3]);
    }

    #[test]
    fn sampling_matches_direct_evaluation() {
        let s = spec(8);
        let g = sample_field(&[], &s, Support::Full).unwrap();
        assert!(g.values.iter().all(|&v| v == 0.0));
        assert_eq!(lm_norm(&g, 2.0, Component::All), 0.0);

        let a = build_block(&general_segment(), &slow_params(), Anchor { center: vec![-0.4, 0.0, 0.0, 0.0, 0.0], radius: 0.5 }).unwrap();
        let b = build_block(&aligned_segment(), &slow_params(), Anchor { center: vec![0.45, 0.0, 0.0, 0.0, 0.0], radius: 0.5 }).unwrap();
        let one = sample_field(std::slice::from_ref(&a), &s, Support::Full).unwrap();
        let two = sample_field(&[a.clone(), b.clone()], &s, Support::Full).unwrap();
        let mut x = vec![0.0; 5];
        for slot in 0..one.active_points() {
            one.site_point(slot, &mut x);
            let mut va = vec![0.0; 24];
            a.add_at(&x, &mut va);
            assert_eq!(one.value(slot), va.as_slice());
            // disjoint anchors: each block alone on its support
            let mut vb = vec![0.0; 24];
            b.add_at(&x, &mut vb);
            let want = if a.anchor.contains(&x) { va } else { vb };
            assert_eq!(two.value(slot), want.as_slice());
        }
        assert_eq!(two.provenance.len(), 2);
        let escaping = build_block(&aligned_segment(), &slow_params(), Anchor { center: vec![0.8, 0.0, 0.0, 0.0, 0.0], radius: 0.5 }).unwrap();
        assert_eq!(sample_field(&[escaping], &s, Support::Full).unwrap_err(), Error::Placement);
    }

    #[test]
    fn masked_grid_agrees_with_full_grid() {
        let s = spec(10);
        let a = build_block(&general_segment(), &slow_params(), Anchor { center: vec![0.1, 0.0, 0.0, 0.0, 0.0], radius: 0.6 }).unwrap();
        let full = sample_field(std::slice::from_ref(&a), &s, Support::Full).unwrap();
        let ball = Support::Ball { center: vec![0.0; 5], radius: 0.75 };
        let masked = sample_field(std::slice::from_ref(&a), &s, ball).unwrap();
        assert!(masked.active_points() < full.active_points() / 4);
        for m in [2.0, 3.0] {
            let (f, g) = (lm_norm(&full, m, Component::State), lm_norm(&masked, m, Component::State));
            assert!((f - g).abs() <= 1e-13 * f);
        }
    }

    #[test]
    fn constant_unit_velocity_has_unit_mass() {
        let s = GridSpec::new(4, vec![0.0; 5], vec![1.0; 5], 8).unwrap();
        let mut g = FieldGrid::zeros(&s, 24, Support::Full).unwrap();
        g.fill_with(|_, v| v[0] = 1.0);
        assert!((lm_norm(&g, 2.0, Component::U) - 1.0).abs() < 1e-12);
        assert!((lm_norm(&g, 2.0, Component::All) - 1.0).abs() < 1e-12);
        assert_eq!(lm_norm(&g, 2.0, Component::B), 0.0);
    }

    #[test]
    fn lattice_mass_matches_block_quadrature() {
        let blk = build_block(&aligned_segment(), &slow_params(), Anchor::unit(5)).unwrap();
        assert_eq!(blk.frequency, 1);
        let g = sample_field(std::slice::from_ref(&blk), &GridSpec::cube(4, &[0.0; 5], 1.0, 16).unwrap(), Support::Full).unwrap();
        let lattice = lm_norm(&g, 2.0, Component::All);
        let met = block_metrics(&blk, 2.0, 200_000).unwrap();
        let r = &blk.amplitude.reduced;
        let t2 = r.u.norm_squared() + r.b.norm_squared();
        let quad = met.mass_ratio * crate::qmc::unit_ball_volume(5) * t2;
        let err = quad * (0.05f64 + 3.0 * met.std_err / met.mass_ratio);
        assert!((lattice - quad).abs() < 2.0 * err, "{lattice} vs {quad}");
    }

    #[test]
    fn mollifier_properties() {
        let s = spec(10);
        let mut c = FieldGrid::zeros(&s, 3, Support::Full).unwrap();
        c.fill_with(|_, v| v.copy_from_slice(&[1.0, -2.0, 0.5]));
        assert!(matches!(mollify(&c, 0.3), Err(Error::UnderResolvedKernel { .. })));
        let r = 0.4;
        let mc = mollify(&c, r).unwrap();
        let mut x = vec![0.0; 5];
        for slot in 0..mc.active_points() {
            mc.site_point(slot, &mut x);
            if s.inner_distance(&x) > r {
                for (a, b) in mc.value(slot).iter().zip([1.0, -2.0, 0.5]) {
                    assert!((a - b).abs() < 1e-12);
                }
            }
        }
        let mut g1 = FieldGrid::zeros(&s, 3, Support::Full).unwrap();
        g1.fill_with(|x, v| {
            v[0] = (3.0 * x[0]).sin() * x[1];
            v[2] = (x[2] * x[3]).cos();
        });
        let mut g2 = FieldGrid::zeros(&s, 3, Support::Full).unwrap();
        g2.fill_with(|x, v| v[1] = x[4] - x[0] * x[0]);
        let lhs = mollify(&g1.axpy(1.0, &g2).unwrap(), r).unwrap();
        let rhs = mollify(&g1, r).unwrap().axpy(1.0, &mollify(&g2, r).unwrap()).unwrap();
        assert!(lhs.values.iter().zip(&rhs.values).all(|(a, b)| (a - b).abs() < 1e-12));
        // contraction in max norm
        let amax = |g: &FieldGrid| g.values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(amax(&mollify(&g1, r).unwrap()) <= amax(&g1) + 1e-15);
    }

    #[test]
    fn mollifying_a_fast_block_kills_it() {
        // N = 16 is resolved by h = 1/8 and the kernel spans about two periods
        let params = BlockParams { min_frequency: 16, ..slow_params() };
        let blk = build_block(&aligned_segment(), &params, Anchor::unit(5)).unwrap();
        assert_eq!(blk.frequency, 16);
        let ball = Support::Ball { center: vec![0.0; 5], radius: 1.0 };
        let g = sample_field(std::slice::from_ref(&blk), &spec(16), ball).unwrap();
        let mg = mollify(&g, 0.375).unwrap();
        let sup = |g: &FieldGrid| g.values.chunks(24).map(|v| v.iter().map(|x| x * x).sum::<f64>().sqrt()).fold(0.0, f64::max);
        // root mean square over the anchor ball
        let rms = (lm_norm(&g, 2.0, Component::State) / crate::qmc::unit_ball_volume(5)).sqrt();
        assert!(sup(&mg) < 2.0 * rms, "{} vs {}", sup(&mg), rms);
        assert!(sup(&mg) < 0.2 * sup(&g));
    }

    #[test]
    fn divergence_of_constants_and_plane_waves() {
        let s = spec(8);
        let mut g = FieldGrid::zeros(&s, 24, Support::Full).unwrap();
        g.fill_with(|_, v| v.iter_mut().enumerate().for_each(|(i, o)| *o = i as f64 * 0.1 - 1.0));
        assert_eq!(div_residual(&g).unwrap(), DivResidual { max_res: 0.0, l2_res: 0.0 });
        let amp = aligned_segment().direction_state();
        assert!(pack_state(&amp).entries.column(0).amax() == 0.0);
        let c = amp.coords();
        g.fill_with(|x, v| v.iter_mut().zip(&c).for_each(|(o, a)| *o = a * (7.0 * x[0]).sin()));
        assert!(div_residual(&g).unwrap().max_res <= 1e-10);
    }

    #[test]
    fn block_divergence_converges_at_second_order() {
        let blk = build_block(&general_segment(), &slow_params(), Anchor::unit(5)).unwrap();
        let center = [0.3, 0.1, 0.0, -0.1, 0.2];
        let half = 0.2;
        let coarse = GridSpec::cube(4, &center, half, 8).unwrap();
        // the fine lattice, shifted by h/4, contains every coarse point
        let q = coarse.step(0) / 4.0;
        let shifted: Vec<f64> = center.iter().map(|c| c + q).collect();
        let fine = GridSpec::cube(4, &shifted, half, 16).unwrap();
        let fill = |s: &GridSpec| {
            let mut g = FieldGrid::zeros(s, 24, Support::Full).unwrap();
            g.fill_with(|x, v| {
                blk.add_at(x, v);
            });
            g
        };
        let (gc, gf) = (fill(&coarse), fill(&fine));
        let norm = |d: Vec<f64>| d.iter().map(|v| v * v).sum::<f64>().sqrt();
        let (mut rc, mut rf) = (0.0f64, 0.0f64);
        let mut mi = vec![0; 5];
        for idx in 0..coarse.lattice_size() {
            coarse.multi(idx, &mut mi);
            if mi.iter().any(|&i| i < 1 || i > 6) {
                continue;
            }
            let fidx = mi.iter().fold(0, |acc, &i| acc * 16 + 2 * i);
            rc = rc.max(norm(divergence_at(&gc, idx).unwrap()));
            rf = rf.max(norm(divergence_at(&gf, fidx).unwrap()));
        }
        assert!((3.0..=5.0).contains(&(rc / rf)), "{rc} {rf}");
        // sample_field refuses anchors that leave the box
        assert_eq!(sample_field(std::slice::from_ref(&blk), &coarse, Support::Full).unwrap_err(), Error::Placement);
    }

    #[test]
    fn probe_divergence_of_a_block() {
        let blk = build_block(&general_segment(), &slow_params(), Anchor::unit(5)).unwrap();
        let x = [0.3, 0.1, 0.0, -0.1, 0.2];
        let f = |y: &[f64]| blk.evaluate(y);
        let mut prev = f64::NAN;
        for h in [0.04, 0.02, 0.01, 0.005] {
            let d = probe_divergence(4, f, &x, h);
            let r = d.iter().map(|v| v * v).sum::<f64>().sqrt();
            if prev.is_finite() {
                assert!((3.0..=5.0).contains(&(prev / r)), "{prev} {r}");
            }
            prev = r;
        }
    }

    #[test]
    fn mhdf_roundtrip() {
        let s = spec(8);
        let mut g = FieldGrid::zeros(&s, 2, Support::Ball { center: vec![0.0; 5], radius: 0.9 }).unwrap();
        g.fill_with(|x, v| {
            v[0] = x[0];
            v[1] = x[4] * 2.0;
        });
        let path = std::env::temp_dir().join(format!("mhdf-test-{}.mhdf", std::process::id()));
        write_mhdf(&path, &g).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        assert_eq!(&bytes[..4], b"MHDF");
        assert_eq!(bytes.len(), 20 + 8 * 2 * 32768);
        let d = read_mhdf(&path).unwrap();
        assert_eq!((d.n, d.points_per_axis, d.comps), (4, 8, 2));
        for idx in 0..s.lattice_size() {
            let want = g.at(idx).map(|v| v.to_vec()).unwrap_or(vec![0.0, 0.0]);
            assert_eq!(&d.values[2 * idx..2 * idx + 2], want.as_slice());
        }
        std::fs::write(&path, b"MHDX").unwrap();
        assert!(matches!(read_mhdf(&path), Err(Error::Format(_))));
        std::fs::remove_file(&path).ok();
    }

    #[test]
    fn refinement_over_a_point_set_is_second_order() {
        let blk = build_block(&general_segment(), &slow_params(), Anchor::unit(5)).unwrap();
        let pts = crate::qmc::BallSampler::new(5).take(64).into_iter().map(|p| p.iter().map(|v| 0.9 * v).collect()).collect::<Vec<Vec<f64>>>();
        let res = divergence_refinement(4, |y: &[f64]| blk.evaluate(y), &pts, 0.04, 3);
        assert_eq!(res.len(), 4);
        for w in res.windows(2) {
            assert!((3.0..=5.0).contains(&(w[0] / w[1])), "{res:?}");
        }
    }

    #[test]
    fn record_dumps_round_trip() {
        let path = std::env::temp_dir().join(format!("mhdf-rec-{}.mhdf", std::process::id()));
        let vals: Vec<f64> = (0..24).map(|i| i as f64 * 0.5 - 3.0).collect();
        write_mhdf_records(&path, 4, 3, 8, &vals).unwrap();
        let d = read_mhdf_records(&path).unwrap();
        assert_eq!((d.n, d.points_per_axis, d.comps), (4, 3, 8));
        assert_eq!(d.values, vals);
        assert!(matches!(read_mhdf(&path), Err(Error::Format(_))));
        assert!(write_mhdf_records(&path, 4, 3, 7, &vals).is_err());
        std::fs::remove_file(&path).ok();
    }
}
