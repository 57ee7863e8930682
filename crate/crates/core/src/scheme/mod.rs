//! Energy-growth perturbation over a disjoint ball cover, and the iterated
//! scheme with its mollification ladder.
//!
//! An iterate is a sum of anchored building blocks on top of a background
//! that is zero for every iterate the scheme produces. All pointwise checks
//! run on the lattice of a [`SchemeGrid`].

mod cover;
mod defect;

use std::collections::{BTreeMap, HashMap};
use std::sync::{Arc, Mutex};

use rand::RngCore;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::algebra::{check_dimension, reduced_dim, state_dim, State};
use crate::error::{Error, Result};
use crate::fields::{add_blocks, div_residual, mollify, slots_in_ball, DivResidual, FieldGrid, GridSpec, Support};
use crate::kgeometry::{build_atom_library, decompose, AtomLibrary, GaugeCertifier};
use crate::qmc::substream;
use crate::wavecone::{segment_from_decomposition, verify_amplitude_bound, AmplitudeBoundCheck, LambdaSegment};
use crate::waves::{build_block, Anchor, BlockParams, BuildingBlock};

pub use cover::{uncovered_fraction, vitali_cover, Domain, BALL_CAP};
pub use defect::{
    compat_defect_grid, defect_tensors, saturation_stats_grid, CompatDefect, DefectNorms, SaturationStats,
    SATURATION_EPS,
};

/// A center counts as saturated when |u| or |b| is this close to 1.
pub const SATURATION_TOL: f64 = 1e-9;
/// Amplitude halvings tried before a ball's block is dropped.
pub const MAX_HALVINGS: u32 = 6;
/// Samples for the quasi-Monte Carlo volume of Ω.
pub const VOLUME_SAMPLES: usize = 1_000_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Background {
    Zero,
    /// Constant state coordinates on Ω (zero outside).
    Constant(Vec<f64>),
}

/// Lattice on which iterates are sampled: the bounding box of Ω grown by a
/// pad, storing points within the pad of Ω.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemeGrid {
    pub spec: GridSpec,
    pub support: Support,
}

impl SchemeGrid {
    pub fn around(n: usize, omega: &Domain, points_per_axis: usize, pad: f64) -> Result<Self> {
        omega.validate()?;
        if omega.dim() != n + 1 {
            return Err(Error::Config(format!("domain has dimension {}, expected {}", omega.dim(), n + 1)));
        }
        let (lo, hi) = omega.bounding_box();
        let lo = lo.iter().map(|x| x - pad).collect();
        let hi = hi.iter().map(|x| x + pad).collect();
        let spec = GridSpec::new(n, lo, hi, points_per_axis)?;
        Ok(SchemeGrid { spec, support: omega.support(pad) })
    }

    pub fn zeros(&self) -> Result<FieldGrid> {
        FieldGrid::zeros(&self.spec, state_dim(self.spec.n), self.support.clone())
    }
}

#[derive(Debug, Clone)]
pub struct RelaxedSolution {
    pub n: usize,
    pub blocks: Vec<BuildingBlock>,
    pub omega: Domain,
    pub generation: usize,
    pub background: Background,
    /// Lattice and minimum LP margin over its points in Ω, once certified.
    certified: Option<(GridSpec, f64)>,
}

impl RelaxedSolution {
    /// The base iterate z = 0.
    pub fn zero(n: usize, omega: Domain) -> Result<Self> {
        check_dimension(n)?;
        omega.validate()?;
        if omega.dim() != n + 1 {
            return Err(Error::Config(format!("domain has dimension {}, expected {}", omega.dim(), n + 1)));
        }
        Ok(RelaxedSolution { n, blocks: Vec::new(), omega, generation: 0, background: Background::Zero, certified: None })
    }

    /// Constant state on Ω, for synthetic checks.
    pub fn constant(omega: Domain, z: &State) -> Result<Self> {
        let mut s = RelaxedSolution::zero(z.n(), omega)?;
        s.background = Background::Constant(z.coords());
        Ok(s)
    }

    /// Adds the iterate's state coordinates at x to `out`.
    pub fn add_at(&self, x: &[f64], out: &mut [f64]) {
        if let Background::Constant(c) = &self.background {
            if self.omega.contains(x) {
                out.iter_mut().zip(c).for_each(|(o, v)| *o += v);
            }
        }
        for b in &self.blocks {
            b.add_at(x, out);
        }
    }

    pub fn evaluate(&self, x: &[f64]) -> State {
        let mut c = vec![0.0; state_dim(self.n)];
        self.add_at(x, &mut c);
        State::from_coords(self.n, &c)
    }

    pub fn sample(&self, grid: &SchemeGrid) -> Result<FieldGrid> {
        if grid.spec.n != self.n {
            return Err(Error::Config("grid dimension differs from the iterate".into()));
        }
        let mut g = grid.zeros()?;
        if let Background::Constant(c) = &self.background {
            let omega = &self.omega;
            g.fill_with(|x, v| {
                if omega.contains(x) {
                    v.copy_from_slice(c);
                }
            });
        }
        add_blocks(&mut g, &self.blocks)?;
        Ok(g)
    }

    /// Certified minimum LP margin on `spec`, if known.
    pub fn certified_margin(&self, spec: &GridSpec) -> Option<f64> {
        self.certified.as_ref().filter(|(s, _)| s == spec).map(|(_, m)| *m)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepParams {
    pub kappa: f64,
    pub sigma_budget: f64,
    pub delta: f64,
    pub grid: SchemeGrid,
    pub seed: u64,
    /// Block construction settings; `delta` is replaced per ball.
    pub block: BlockParams,
    /// Multiplies the certified frequency of every new block.
    pub frequency_boost: u32,
}

impl StepParams {
    pub fn new(kappa: f64, sigma_budget: f64, delta: f64, grid: SchemeGrid, seed: u64) -> Self {
        let block = BlockParams { min_cover_fraction: 0.4, certify_samples: 20_000, ..BlockParams::default() };
        StepParams { kappa, sigma_budget, delta, grid, seed, block, frequency_boost: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepReport {
    /// Generation of the iterate after the step.
    pub generation: usize,
    pub m: f64,
    /// Lattice integrals over Ω of |u|^m + |b|^m.
    pub energy_before: f64,
    pub energy_after: f64,
    /// 2 |Ω|_h - energy, with |Ω|_h the lattice volume of Ω.
    pub gap_before: f64,
    pub gap_after: f64,
    pub beta_measured: f64,
    pub balls_total: usize,
    pub balls_used: usize,
    pub balls_saturated: usize,
    pub balls_failed: usize,
    pub balls_rejected: usize,
    pub failure_kinds: BTreeMap<String, usize>,
    pub amplitude_halvings: u32,
    pub uncovered_fraction: f64,
    /// Lower bound on the LP margin over lattice points of Ω.
    pub min_margin: f64,
    pub amp_bound_checked: usize,
    pub amp_bound_all_hold: bool,
    /// min over used centers of rhs - lhs.
    pub amp_bound_min_slack: f64,
    pub eps: f64,
    pub frequency_min: u32,
    pub frequency_max: u32,
    pub block_delta_min: f64,
    pub cover_fraction_min: f64,
    pub saturated: bool,
    /// |(z_new - z_old) * rho_{r_i}|_{L^m(Ω)} for earlier radii, filled by the scheme.
    pub moll_distances: Vec<f64>,
}

/// Lattice volume of Ω and the integral of |u|^m + |b|^m over it.
fn energy(g: &FieldGrid, omega: &Domain, m: f64) -> (f64, f64) {
    let n = g.spec.n;
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let cv = g.spec.cell_volume();
    let count = g.reduce(|x, _| omega.contains(x) as u8 as f64);
    let e = g.reduce(|x, v| if omega.contains(x) { norm(&v[..n]).powf(m) + norm(&v[n..2 * n]).powf(m) } else { 0.0 });
    (count * cv, e * cv)
}

/// (integral over Ω of |a - b|^m)^(1/m), Euclidean in state coordinates;
/// `b = None` means zero.
pub fn lm_distance(a: &FieldGrid, b: Option<&FieldGrid>, omega: &Domain, m: f64) -> Result<f64> {
    let d = match b {
        Some(b) => a.axpy(-1.0, b)?,
        None => a.clone(),
    };
    let s = d.reduce(|x, v| if omega.contains(x) { v.iter().map(|t| t * t).sum::<f64>().sqrt().powf(m) } else { 0.0 });
    Ok((s * d.spec.cell_volume()).powf(1.0 / m))
}

enum Skip {
    Saturated,
    Failed(String),
}

fn error_kind(e: &Error) -> String {
    let s = format!("{e:?}");
    s.split(|c: char| c == ' ' || c == '(' || c == '{').next().unwrap_or("").to_string()
}

struct Prepared {
    seg: LambdaSegment,
    block: BuildingBlock,
}

/// Segment at a center state and its unit-anchored block.
fn prepare(zc: &State, lib: &AtomLibrary, params: &StepParams) -> std::result::Result<Prepared, Skip> {
    let r = &zc.reduced;
    if r.u.norm() >= 1.0 - SATURATION_TOL || r.b.norm() >= 1.0 - SATURATION_TOL {
        return Err(Skip::Saturated);
    }
    let fail = |e: Error| match e {
        Error::AtConstraintSet => Skip::Saturated,
        e => Skip::Failed(error_kind(&e)),
    };
    let decomp = decompose(r, lib).map_err(fail)?;
    let seg = segment_from_decomposition(zc, &decomp, lib).map_err(fail)?;
    let dnorm = seg.direction_state().coords().iter().map(|x| x * x).sum::<f64>().sqrt();
    let s = (seg.base_margin / dnorm).min(1.0);
    // margins are concave along the segment, so every point of the scaled
    // segment keeps at least the smaller of these
    let floor = seg.base_margin.min(seg.endpoint_margins[0]).min(seg.endpoint_margins[1]);
    let mut bp = params.block;
    bp.delta = params.delta.min(floor / (2.0 * (reduced_dim(zc.n()) as f64).sqrt()));
    let scaled = LambdaSegment { direction: seg.direction.scaled(s), ..seg.clone() };
    let k = zc.n() + 1;
    let mut block = build_block(&scaled, &bp, Anchor::unit(k)).map_err(fail)?;
    if params.frequency_boost > 1 {
        bp.min_frequency = block.frequency.saturating_mul(params.frequency_boost);
        block = build_block(&scaled, &bp, Anchor::unit(k)).map_err(fail)?;
    }
    Ok(Prepared { seg, block })
}

enum Outcome {
    Used { block: BuildingBlock, min_margin: f64, halvings: u32, amp: AmplitudeBoundCheck },
    Saturated,
    Failed(String),
    Rejected { halvings: u32 },
}

fn process_ball(
    ball: &Anchor,
    prep: &std::result::Result<Arc<Prepared>, Arc<Skip>>,
    base: &FieldGrid,
    cert: &GaugeCertifier,
    m: f64,
    eps: f64,
) -> Outcome {
    let prep = match prep {
        Ok(p) => p,
        Err(s) => {
            return match s.as_ref() {
                Skip::Saturated => Outcome::Saturated,
                Skip::Failed(k) => Outcome::Failed(k.clone()),
            }
        }
    };
    let n = base.spec.n;
    let k = n + 1;
    let comps = base.comps;
    let amp = verify_amplitude_bound(&prep.seg.base, &prep.seg, eps, m);
    let block = prep.block.anchored(ball.clone());
    let slots = slots_in_ball(base, &ball.center, ball.radius);
    let mut w = vec![0.0; slots.len() * comps];
    let mut x = vec![0.0; k];
    for (j, &s) in slots.iter().enumerate() {
        base.site_point(s, &mut x);
        block.add_at(&x, &mut w[j * comps..(j + 1) * comps]);
    }
    let norm = |v: &[f64]| v.iter().map(|t| t * t).sum::<f64>().sqrt();
    let touched: Vec<usize> = (0..slots.len()).filter(|&j| w[j * comps..(j + 1) * comps].iter().any(|&t| t != 0.0)).collect();
    let mut scale = 1.0;
    let mut z = vec![0.0; comps];
    for halvings in 0..=MAX_HALVINGS {
        let gain = |sign: f64| -> f64 {
            touched
                .iter()
                .map(|&j| {
                    let old = base.value(slots[j]);
                    let wj = &w[j * comps..(j + 1) * comps];
                    let u: Vec<f64> = (0..n).map(|i| old[i] + sign * scale * wj[i]).collect();
                    let b: Vec<f64> = (n..2 * n).map(|i| old[i] + sign * scale * wj[i]).collect();
                    norm(&u).powf(m) + norm(&b).powf(m)
                })
                .sum()
        };
        let sign = if gain(-1.0) > gain(1.0) { -1.0 } else { 1.0 };
        let mut min_margin = f64::INFINITY;
        let mut ok = true;
        for &j in &touched {
            let old = base.value(slots[j]);
            for c in 0..comps {
                z[c] = old[c] + sign * scale * w[j * comps + c];
            }
            let (adm, margin) = cert.admissible(&z);
            min_margin = min_margin.min(margin);
            if !adm {
                ok = false;
                break;
            }
        }
        if ok {
            return Outcome::Used { block: block.scaled(sign * scale), min_margin, halvings, amp };
        }
        scale *= 0.5;
    }
    Outcome::Rejected { halvings: MAX_HALVINGS + 1 }
}

/// Minimum certified margin over lattice points of Ω.
fn certify_grid(g: &FieldGrid, omega: &Domain, cert: &GaugeCertifier) -> f64 {
    let mut x = vec![0.0; g.spec.k()];
    let slots: Vec<usize> = (0..g.active_points())
        .filter(|&s| {
            g.site_point(s, &mut x);
            omega.contains(&x)
        })
        .collect();
    slots.par_iter().map(|&s| cert.admissible(g.value(s)).1).reduce(|| f64::INFINITY, f64::min)
}

fn check_step_inputs(z: &RelaxedSolution, m: f64, lib: &AtomLibrary, params: &StepParams) -> Result<()> {
    if !(m >= 2.0) || !m.is_finite() {
        return Err(Error::InvalidParameter { name: "m", value: m });
    }
    if lib.n() != z.n || params.grid.spec.n != z.n {
        return Err(Error::Config("library, grid and iterate dimensions differ".into()));
    }
    if !(params.delta > 0.0) {
        return Err(Error::InvalidParameter { name: "delta", value: params.delta });
    }
    if params.frequency_boost == 0 {
        return Err(Error::InvalidParameter { name: "frequency_boost", value: 0.0 });
    }
    Ok(())
}

/// One perturbation step given the iterate's sampled grid; returns the new
/// iterate, its report and its grid.
fn step_on_grid(
    z: &RelaxedSolution,
    base: &FieldGrid,
    m: f64,
    lib: &AtomLibrary,
    cert: &GaugeCertifier,
    params: &StepParams,
) -> Result<(RelaxedSolution, StepReport, FieldGrid)> {
    check_step_inputs(z, m, lib, params)?;
    let omega = &z.omega;
    let (vol_h, e_before) = energy(base, omega, m);
    let gap_before = 2.0 * vol_h - e_before;
    let prev_margin = match z.certified_margin(&base.spec) {
        Some(mm) => mm,
        None => certify_grid(base, omega, cert),
    };
    let cover_seed = substream(params.seed, &format!("cover/{}", z.generation)).next_u64();
    let balls = vitali_cover(omega, params.kappa, params.sigma_budget, cover_seed)?;
    let eps = (gap_before / (8.0 * vol_h)).clamp(1e-12, 1.0 - 1e-12);

    type Memo = HashMap<Vec<u64>, std::result::Result<Arc<Prepared>, Arc<Skip>>>;
    let memo: Mutex<Memo> = Mutex::new(HashMap::new());
    let outcomes: Vec<Outcome> = balls
        .par_iter()
        .map(|ball| {
            let zc = z.evaluate(&ball.center);
            let key: Vec<u64> = zc.coords().iter().map(|v| v.to_bits()).collect();
            let cached = memo.lock().expect("memo poisoned").get(&key).cloned();
            let prep = match cached {
                Some(p) => p,
                None => {
                    let p = prepare(&zc, lib, params).map(Arc::new).map_err(Arc::new);
                    memo.lock().expect("memo poisoned").entry(key).or_insert(p).clone()
                }
            };
            process_ball(ball, &prep, base, cert, m, eps)
        })
        .collect();

    let mut report = StepReport {
        generation: z.generation,
        m,
        energy_before: e_before,
        energy_after: e_before,
        gap_before,
        gap_after: gap_before,
        beta_measured: 0.0,
        balls_total: balls.len(),
        balls_used: 0,
        balls_saturated: 0,
        balls_failed: 0,
        balls_rejected: 0,
        failure_kinds: BTreeMap::new(),
        amplitude_halvings: 0,
        uncovered_fraction: uncovered_fraction(omega, &balls),
        min_margin: prev_margin,
        amp_bound_checked: 0,
        amp_bound_all_hold: true,
        amp_bound_min_slack: f64::MAX,
        eps,
        frequency_min: 0,
        frequency_max: 0,
        block_delta_min: 0.0,
        cover_fraction_min: 0.0,
        saturated: false,
        moll_distances: Vec::new(),
    };
    let mut new_blocks = Vec::new();
    for o in outcomes {
        match o {
            Outcome::Used { block, min_margin, halvings, amp } => {
                report.balls_used += 1;
                report.amplitude_halvings += halvings;
                report.min_margin = report.min_margin.min(min_margin);
                report.amp_bound_checked += 1;
                report.amp_bound_all_hold &= amp.holds;
                report.amp_bound_min_slack = report.amp_bound_min_slack.min(amp.rhs - amp.lhs);
                new_blocks.push(block);
            }
            Outcome::Saturated => report.balls_saturated += 1,
            Outcome::Failed(kind) => {
                report.balls_failed += 1;
                *report.failure_kinds.entry(kind).or_insert(0) += 1;
            }
            Outcome::Rejected { halvings } => {
                report.balls_rejected += 1;
                report.amplitude_halvings += halvings;
            }
        }
    }
    if new_blocks.is_empty() {
        report.saturated = true;
        report.amp_bound_min_slack = 0.0;
        let mut same = z.clone();
        same.certified = Some((base.spec.clone(), prev_margin));
        return Ok((same, report, base.clone()));
    }
    report.frequency_min = new_blocks.iter().map(|b| b.frequency).min().unwrap_or(0);
    report.frequency_max = new_blocks.iter().map(|b| b.frequency).max().unwrap_or(0);
    report.block_delta_min = new_blocks.iter().map(|b| b.delta).fold(f64::INFINITY, f64::min);
    report.cover_fraction_min = new_blocks.iter().map(|b| b.cover_fraction).fold(f64::INFINITY, f64::min);

    let mut grid = base.clone();
    add_blocks(&mut grid, &new_blocks)?;
    let (_, e_after) = energy(&grid, omega, m);
    report.energy_after = e_after;
    report.gap_after = 2.0 * vol_h - e_after;
    report.beta_measured = if gap_before > 0.0 { (e_after - e_before) / gap_before.powf(m) } else { 0.0 };
    report.generation = z.generation + 1;

    let mut next = z.clone();
    next.blocks.extend(new_blocks);
    next.generation += 1;
    next.certified = Some((base.spec.clone(), report.min_margin));
    Ok((next, report, grid))
}

/// Inserts one block per ball of a fresh Vitali cover of Ω, each built from
/// the segment at the ball's center and certified on the lattice.
pub fn perturb_step(
    z: &RelaxedSolution,
    m: f64,
    lib: &AtomLibrary,
    params: &StepParams,
) -> Result<(RelaxedSolution, StepReport)> {
    check_step_inputs(z, m, lib, params)?;
    let cert = GaugeCertifier::new(lib)?;
    let base = z.sample(&params.grid)?;
    let (next, report, _) = step_on_grid(z, &base, m, lib, &cert, params)?;
    Ok((next, report))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IterationConfig {
    pub n: usize,
    pub m: f64,
    /// J, the number of steps.
    pub iters: usize,
    pub points_per_axis: usize,
    pub omega: Domain,
    pub delta: f64,
    pub kappa: f64,
    pub sigma_budget: f64,
    pub seed: u64,
    pub atom_count: usize,
    /// Mollifier radii r_1..r_J; defaults to the smallest resolved radius.
    pub r_schedule: Option<Vec<f64>>,
    pub certify_samples: usize,
    pub retry_cap: u32,
}

impl Default for IterationConfig {
    fn default() -> Self {
        IterationConfig {
            n: 4,
            m: 2.0,
            iters: 3,
            points_per_axis: 16,
            omega: Domain::ball(5, 0.3),
            delta: 0.1,
            kappa: 0.15,
            sigma_budget: 0.9,
            seed: 1,
            atom_count: 200,
            r_schedule: None,
            certify_samples: 20_000,
            retry_cap: 5,
        }
    }
}

impl IterationConfig {
    /// Mollifier radii. The default is r = 2h on a box padded by r, that is
    /// r = 2 L / (P - 4) for extent L and P points per axis.
    pub fn radii(&self) -> Vec<f64> {
        match &self.r_schedule {
            Some(r) => r.clone(),
            None => {
                let p = self.points_per_axis as f64;
                let r = 2.0 * self.omega.extent() / (p - 4.0) * (1.0 + 1e-9);
                vec![r; self.iters]
            }
        }
    }

    pub fn grid(&self) -> Result<SchemeGrid> {
        let pad = self.radii().iter().cloned().fold(0.0, f64::max);
        SchemeGrid::around(self.n, &self.omega, self.points_per_axis, pad)
    }

    pub fn validate(&self) -> Result<()> {
        check_dimension(self.n)?;
        if !(self.m >= 2.0) || !self.m.is_finite() {
            return Err(Error::InvalidParameter { name: "m", value: self.m });
        }
        if self.iters == 0 {
            return Err(Error::Config("J must be at least 1".into()));
        }
        if self.points_per_axis < crate::fields::MIN_POINTS_PER_AXIS {
            return Err(Error::Config(format!(
                "points_per_axis = {} is below the minimum {}",
                self.points_per_axis,
                crate::fields::MIN_POINTS_PER_AXIS
            )));
        }
        for (name, v) in [("delta", self.delta), ("kappa", self.kappa)] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::InvalidParameter { name, value: v });
            }
        }
        if !(self.sigma_budget > 0.0 && self.sigma_budget < 1.0) {
            return Err(Error::InvalidParameter { name: "sigma_budget", value: self.sigma_budget });
        }
        self.omega.validate()?;
        let radii = self.radii();
        if radii.len() != self.iters {
            return Err(Error::Config(format!("r_schedule has {} entries for J = {}", radii.len(), self.iters)));
        }
        let grid = self.grid()?;
        let h = grid.spec.h();
        for (j, &r) in radii.iter().enumerate() {
            let cap = 0.5f64.powi(j as i32 + 1);
            if !(r > 0.0 && r < cap) {
                return Err(Error::Config(format!("r_{} = {r} must lie in (0, {cap})", j + 1)));
            }
            if r < 2.0 * h {
                return Err(Error::Config(format!("r_{} = {r} is below twice the grid step {h}", j + 1)));
            }
        }
        Ok(())
    }

    pub fn step_params(&self, grid: SchemeGrid, boost: u32) -> StepParams {
        let mut p = StepParams::new(self.kappa, self.sigma_budget, self.delta, grid, self.seed);
        p.block.certify_samples = self.certify_samples;
        p.frequency_boost = boost;
        p
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IterationRecord {
    pub j: usize,
    pub r_j: f64,
    /// 2^-j
    pub cap: f64,
    pub retries: u32,
    pub frequency_boost: u32,
    pub step: StepReport,
    /// |z_j - z_j * rho_{r_j}|_{L^m(Ω)}
    pub moll_self: f64,
    /// |(z_j - z_{j-1}) * rho_{r_i}|_{L^m(Ω)} for i < j
    pub moll_cross: Vec<f64>,
    pub ladder_ok: bool,
    pub div_residual: DivResidual,
    pub defect: DefectNorms,
    pub saturation: SaturationStats,
    /// mean over Ω of 2 - |u|^m - |b|^m
    pub mean_deficit: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunReport {
    pub config: IterationConfig,
    pub radii: Vec<f64>,
    pub grid: GridSpec,
    pub grid_h: f64,
    pub omega_volume: f64,
    pub omega_volume_mc: f64,
    pub lattice_volume: f64,
    pub rho0: f64,
    /// E_0..E_J and the gaps 2 |Ω|_h - E_j.
    pub energies: Vec<f64>,
    pub gaps: Vec<f64>,
    pub betas: Vec<f64>,
    pub beta_min: f64,
    /// E_j >= E_{j-1} + beta_min (2 |Ω|_h - E_{j-1})^m for every j.
    pub recursion_holds: bool,
    pub ladder_ok: bool,
    pub iterations: Vec<IterationRecord>,
}

pub fn run_scheme(config: &IterationConfig) -> Result<RunReport> {
    run_scheme_with(config, |_, _| Ok(()))
}

/// Runs the scheme, handing each accepted iterate's grid to `on_iter`.
pub fn run_scheme_with<F>(config: &IterationConfig, mut on_iter: F) -> Result<RunReport>
where
    F: FnMut(usize, &FieldGrid) -> Result<()>,
{
    config.validate()?;
    let m = config.m;
    let omega = &config.omega;
    let lib = build_atom_library(config.n, config.atom_count, config.seed)?;
    let cert = GaugeCertifier::new(&lib)?;
    let grid = config.grid()?;
    let radii = config.radii();
    let key = |r: f64| r.to_bits();

    let mut z = RelaxedSolution::zero(config.n, omega.clone())?;
    let mut g = z.sample(&grid)?;
    let (vol_h, e0) = energy(&g, omega, m);
    // mollified previous iterate per radius; z_0 = 0
    let mut prev_moll: HashMap<u64, FieldGrid> = HashMap::new();
    let mut energies = vec![e0];
    let mut iterations = Vec::new();

    for j in 1..=config.iters {
        let r_j = radii[j - 1];
        let cap = 0.5f64.powi(j as i32);
        let mut boost = 1u32;
        let mut retries = 0u32;
        let (z_new, mut rep, g_new, moll, moll_self, moll_cross) = loop {
            let params = config.step_params(grid.clone(), boost);
            let (z_new, rep, g_new) = step_on_grid(&z, &g, m, &lib, &cert, &params)?;
            let mut moll: HashMap<u64, FieldGrid> = HashMap::new();
            for &r in &radii[..j] {
                if !moll.contains_key(&key(r)) {
                    moll.insert(key(r), mollify(&g_new, r)?);
                }
            }
            let moll_self = lm_distance(&g_new, Some(&moll[&key(r_j)]), omega, m)?;
            let mut moll_cross = Vec::new();
            for &r in &radii[..j - 1] {
                let prev = prev_moll.get(&key(r));
                let d = match prev {
                    Some(p) => lm_distance(&moll[&key(r)], Some(p), omega, m)?,
                    None => lm_distance(&moll[&key(r)], None, omega, m)?,
                };
                moll_cross.push(d);
            }
            let ok = moll_self < cap && moll_cross.iter().all(|&d| d < cap);
            if ok {
                break (z_new, rep, g_new, moll, moll_self, moll_cross);
            }
            if retries >= config.retry_cap {
                let mut distances = vec![moll_self];
                distances.extend(moll_cross);
                return Err(Error::Ladder { j, distances });
            }
            retries += 1;
            boost = boost.saturating_mul(2);
        };
        rep.moll_distances = moll_cross.clone();
        let (_, e_j) = energy(&g_new, omega, m);
        energies.push(e_j);
        let defect = compat_defect_grid(&g_new, omega, m)?.norms();
        let record = IterationRecord {
            j,
            r_j,
            cap,
            retries,
            frequency_boost: boost,
            step: rep,
            moll_self,
            moll_cross,
            ladder_ok: true,
            div_residual: div_residual(&g_new)?,
            defect,
            saturation: saturation_stats_grid(&g_new, omega),
            mean_deficit: (2.0 * vol_h - e_j) / vol_h,
        };
        on_iter(j, &g_new)?;
        iterations.push(record);
        z = z_new;
        g = g_new;
        prev_moll = moll;
    }

    let gaps: Vec<f64> = energies.iter().map(|e| 2.0 * vol_h - e).collect();
    let betas: Vec<f64> = iterations.iter().map(|r| r.step.beta_measured).collect();
    let positive: Vec<f64> = betas.iter().cloned().filter(|&b| b > 0.0).collect();
    let beta_min = positive.iter().cloned().fold(f64::INFINITY, f64::min);
    let beta_min = if beta_min.is_finite() { beta_min } else { 0.0 };
    // equality holds at the step attaining beta_min, up to rounding
    let recursion_holds = (1..energies.len()).all(|j| {
        let bound = energies[j - 1] + beta_min * gaps[j - 1].max(0.0).powf(m);
        energies[j] >= bound - 1e-12 * bound.abs()
    });
    Ok(RunReport {
        config: config.clone(),
        radii,
        grid_h: grid.spec.h(),
        grid: grid.spec,
        omega_volume: omega.volume(),
        omega_volume_mc: omega.volume_mc(VOLUME_SAMPLES),
        lattice_volume: vol_h,
        rho0: cert.rho0(),
        energies,
        gaps,
        betas,
        beta_min,
        recursion_holds,
        ladder_ok: iterations.iter().all(|r| r.ladder_ok),
        iterations,
    })
}
