//! Property battery behind `wildmhd verify`.

use std::path::Path;

use nalgebra::DVector;
use rand::Rng;
use serde::Serialize;
use serde_json::{json, Value};
use wildmhd::algebra::{
    check_dimension, pack_state, power_sum_bound, reduced_dim, state_dim, unpack_state, ReducedState, State,
};
use wildmhd::fields::{lm_norm, mollify, read_mhdf, write_mhdf, Component, FieldGrid, GridSpec, Support};
use wildmhd::kgeometry::{build_atom_library, decompose, hull_margin, sphere_moments, t_image_rank};
use wildmhd::qmc::{substream, BallSampler, Halton, SphereSampler};
use wildmhd::wavecone::{kernel_space_dimension, lambda_direction};
use wildmhd::waves::{block_metrics, build_block, Anchor, BlockParams, BuildingBlock};
use wildmhd::{Error, Result};

use crate::config::RunConfig;
use crate::segments::{SegmentFile, SegmentKind};

pub const ROUND_TRIPS: usize = 1000;
pub const QUADRUPLES: usize = 1000;
pub const HULL_POINTS: usize = 100;
pub const MOMENT_SAMPLES: usize = 1_000_000;
pub const T_IMAGE_SAMPLES: usize = 20_000;
pub const SUPPORT_PROBES: usize = 10_000;
pub const METRIC_SAMPLES: usize = 200_000;
pub const REFINEMENT_LEVELS: usize = 3;
/// Largest grid the fields suite allocates per axis.
const FIELD_GRID_CAP: usize = 10;

#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: Value,
}

#[derive(Debug, Clone, Serialize)]
pub struct Suite {
    pub name: &'static str,
    pub passed: bool,
    pub checks: Vec<Check>,
}

#[derive(Debug, Clone, Serialize)]
pub struct VerifyReport {
    pub config: RunConfig,
    pub passed: bool,
    pub suites: Vec<Suite>,
}

/// A library error inside a check fails that check; it does not abort the run.
fn check(name: &'static str, f: impl FnOnce() -> Result<(bool, Value)>) -> Check {
    match f() {
        Ok((passed, detail)) => Check { name, passed, detail },
        Err(e) => Check { name, passed: false, detail: json!({ "error": e.to_string() }) },
    }
}

fn suite(name: &'static str, checks: Vec<Check>) -> Suite {
    Suite { name, passed: checks.iter().all(|c| c.passed), checks }
}

fn random_state(n: usize, rng: &mut impl Rng) -> State {
    let c: Vec<f64> = (0..state_dim(n)).map(|_| rng.gen_range(-1.0..1.0)).collect();
    State::from_coords(n, &c)
}

fn algebra_suite(cfg: &RunConfig) -> Suite {
    let n = cfg.n;
    let mut rng = substream(cfg.seed, "verify/algebra");
    let states: Vec<State> = (0..ROUND_TRIPS).map(|_| random_state(n, &mut rng)).collect();
    let coeffs: Vec<(f64, f64)> = (0..ROUND_TRIPS).map(|_| (rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0))).collect();
    let triples: Vec<[f64; 3]> =
        (0..ROUND_TRIPS).map(|_| [rng.gen_range(0.0..2.0), rng.gen_range(0.0..2.0), rng.gen_range(0.01..0.99)]).collect();
    suite("algebra", vec![
        check("pack_unpack_round_trip", || {
            // the pressure rides on the diagonal and comes back through a
            // trace, so equality holds to rounding rather than bit for bit
            let (mut worst, mut exact) = (0.0f64, 0usize);
            for z in &states {
                let back = unpack_state(&pack_state(z))?;
                exact += (back == *z) as usize;
                let d = back.coords().iter().zip(z.coords()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
                worst = worst.max(d);
            }
            Ok((worst <= 1e-15, json!({ "states": states.len(), "bit_exact": exact, "max_error": worst })))
        }),
        check("pack_is_linear", || {
            let mut worst = 0.0f64;
            for (i, (a, b)) in coeffs.iter().enumerate() {
                let (z1, z2) = (&states[i], &states[(i + 1) % states.len()]);
                let lhs = pack_state(&z1.scaled(*a).add(&z2.scaled(*b))).entries;
                let rhs = pack_state(z1).entries * *a + pack_state(z2).entries * *b;
                worst = worst.max((lhs - rhs).amax());
            }
            Ok((worst <= 1e-13, json!({ "max_error": worst })))
        }),
        check("power_sum_bound", || {
            let mut held = 0;
            for &[a, c, eps] in &triples {
                held += power_sum_bound(a, c, eps, cfg.m)?.1 as usize;
            }
            Ok((held == triples.len(), json!({ "cases": triples.len(), "held": held })))
        }),
        check("dimension_guard", || {
            let err = check_dimension(3).err();
            Ok((err == Some(Error::UnsupportedDimension { n: 3 }), json!({ "n3": err.map(|e| e.to_string()) })))
        }),
    ])
}

fn sphere_vec(s: &mut SphereSampler, n: usize) -> DVector<f64> {
    let mut p = vec![0.0; n];
    s.next_point(&mut p);
    DVector::from_vec(p)
}

fn wavecone_suite(cfg: &RunConfig) -> Suite {
    let n = cfg.n;
    suite("wavecone", vec![
        check("lambda_direction_residual", || {
            let mut s = SphereSampler::new(n, cfg.seed, "verify/quadruples");
            let mut worst = 0.0f64;
            for _ in 0..QUADRUPLES {
                let [u1, b1, u2, b2] = [(); 4].map(|_| sphere_vec(&mut s, n));
                worst = worst.max(lambda_direction(&u1, &b1, &u2, &b2)?.residual);
            }
            Ok((worst <= 1e-10, json!({ "quadruples": QUADRUPLES, "max_residual": worst })))
        }),
        check("three_dimensions_rejected", || {
            let v = DVector::from_vec(vec![1.0, 0.0, 0.0]);
            let err = lambda_direction(&v, &v, &v, &v).err();
            Ok((err == Some(Error::UnsupportedDimension { n: 3 }), json!({ "error": err.map(|e| e.to_string()) })))
        }),
        check("kernel_dimension", || {
            let mut rows = Vec::new();
            let mut ok = true;
            for nn in [4, 5] {
                let mut s = SphereSampler::new(nn, cfg.seed, "verify/kernel");
                let [u1, b1, u2, b2] = [(); 4].map(|_| sphere_vec(&mut s, nn));
                let generic = lambda_direction(&u1, &b1, &u2, &b2)?.xi_vector();
                let mut spatial = DVector::zeros(nn + 1);
                spatial[0] = 1.0;
                for (label, xi) in [("generic", generic), ("spatial", spatial)] {
                    let d = kernel_space_dimension(nn, &xi, 1e-8);
                    ok &= d == nn * nn - 2;
                    rows.push(json!({ "n": nn, "xi": label, "dimension": d, "expected": nn * nn - 2 }));
                }
            }
            Ok((ok, Value::Array(rows)))
        }),
    ])
}

fn kgeometry_suite(cfg: &RunConfig) -> Suite {
    let n = cfg.n;
    let lib = build_atom_library(n, cfg.atom_count, cfg.seed);
    let mut checks = vec![check("origin_margin", || {
        let lib = lib.clone()?;
        let rho = hull_margin(&ReducedState::zeros(n), &lib);
        Ok((rho > 0.0, json!({ "atoms": lib.count(), "margin": rho })))
    })];
    checks.push(check("decompose_reconstructs", || {
        let lib = lib.clone()?;
        let mut rng = substream(cfg.seed, "verify/hull-points");
        let (mut worst, mut most) = (0.0f64, 0usize);
        for _ in 0..HULL_POINTS {
            // random convex combination of a handful of library atoms
            let mut z = ReducedState::zeros(n);
            let picks: Vec<(usize, f64)> =
                (0..8).map(|_| (rng.gen_range(0..lib.count()), -rng.gen_range(1e-9f64..1.0).ln())).collect();
            let total: f64 = picks.iter().map(|p| p.1).sum();
            for (k, w) in picks {
                z = z.add(&lib.atoms()[k].reduced().scaled(w / total));
            }
            let d = decompose(&z, &lib)?;
            worst = worst.max(d.reconstruction_error);
            most = most.max(d.atoms.len());
        }
        let ok = worst <= 1e-9 && most <= state_dim(n);
        Ok((ok, json!({ "points": HULL_POINTS, "max_error": worst, "max_atoms": most, "atom_cap": state_dim(n) })))
    }));
    checks.push(check("sphere_moment_gamma1", || {
        let m = sphere_moments(n, MOMENT_SAMPLES, cfg.seed)?;
        let dev = (m.gamma[0] - 1.0 / n as f64).abs();
        Ok((dev <= 3.0 * m.std_err[0], json!({ "gamma1": m.gamma[0], "std_err": m.std_err[0], "target": 1.0 / n as f64 })))
    }));
    checks.push(check("t_image_rank", || {
        let r = t_image_rank(n, T_IMAGE_SAMPLES, cfg.seed)?;
        Ok((r.rank >= reduced_dim(n), serde_json::to_value(&r).expect("report serializes")))
    }));
    suite("kgeometry", checks)
}

pub fn block_params(delta: f64) -> BlockParams {
    BlockParams { delta, certify_samples: 20_000, min_cover_fraction: 0.2, ..BlockParams::default() }
}

/// Max probe divergence over 64 interior points at h0 = 0.1 / N and its
/// halvings, with the successive ratios.
pub fn refinement(blk: &BuildingBlock) -> (f64, Vec<f64>, Vec<f64>) {
    let n = blk.n();
    let c = &blk.anchor.center;
    let r = blk.anchor.radius;
    let pts: Vec<Vec<f64>> = BallSampler::new(n + 1)
        .take(64)
        .into_iter()
        .map(|p| p.iter().zip(c).map(|(v, c)| c + 0.9 * r * v).collect())
        .collect();
    let h0 = 0.1 / blk.frequency as f64;
    let res = wildmhd::fields::divergence_refinement(n, |y: &[f64]| blk.evaluate(y), &pts, h0, REFINEMENT_LEVELS);
    let ratios = res.windows(2).map(|w| w[0] / w[1]).collect();
    (h0, res, ratios)
}

/// Lattice-independent probes outside the anchor: every coordinate must be 0.
fn zero_outside(blk: &BuildingBlock, seed: u64) -> (usize, usize) {
    let k = blk.n() + 1;
    let mut hal = Halton::new(k, seed, "verify/support");
    let mut u = vec![0.0; k];
    let (mut probes, mut nonzero) = (0, 0);
    while probes < SUPPORT_PROBES {
        hal.next_point(&mut u);
        let x: Vec<f64> = u.iter().zip(&blk.anchor.center).map(|(v, c)| c + 3.0 * blk.anchor.radius * (v - 0.5)).collect();
        if blk.anchor.contains(&x) {
            continue;
        }
        probes += 1;
        nonzero += blk.evaluate(&x).coords().iter().any(|&v| v != 0.0) as usize;
    }
    (probes, nonzero)
}

fn waves_suite(cfg: &RunConfig) -> Suite {
    let n = cfg.n;
    let k = n + 1;
    let params = block_params(cfg.delta);
    let aligned = SegmentFile::demo(SegmentKind::Aligned, n)
        .segment()
        .and_then(|s| Ok((build_block(&s, &params, Anchor::unit(k))?, s)));
    let anchor = Anchor { center: (0..k).map(|a| 0.1 * (a as f64 - 1.0)).collect(), radius: 0.25 };
    let general = SegmentFile::demo(SegmentKind::General, n).segment().and_then(|s| build_block(&s, &params, anchor));
    let mut checks = vec![check("aligned_interior_slice", || {
        let (blk, seg) = aligned.clone()?;
        let amp = seg.direction_state().coords();
        let freq = blk.frequency as f64;
        let mut pts = BallSampler::new(k);
        let mut x = vec![0.0; k];
        let mut worst = 0.0f64;
        for _ in 0..2000 {
            pts.next_point(&mut x);
            x.iter_mut().for_each(|v| *v *= 0.5);
            let got = blk.evaluate(&x).coords();
            for (g, a) in got.iter().zip(&amp) {
                worst = worst.max((g - a * (freq * x[0]).sin()).abs());
            }
        }
        Ok((worst <= 1e-12, json!({ "frequency": blk.frequency, "max_error": worst })))
    })];
    for (label, blk) in [("aligned", aligned.clone().map(|p| p.0)), ("general", general.clone())] {
        let name = if label == "aligned" { "aligned_support" } else { "general_support" };
        let blk2 = blk.clone();
        checks.push(check(name, move || {
            let blk = blk2?;
            let (probes, nonzero) = zero_outside(&blk, cfg.seed);
            Ok((nonzero == 0, json!({ "probes": probes, "nonzero": nonzero })))
        }));
        let name = if label == "aligned" { "aligned_sup_distance" } else { "general_sup_distance" };
        let blk2 = blk.clone();
        checks.push(check(name, move || {
            let blk = blk2?;
            Ok((blk.sup_distance < cfg.delta, json!({ "sup_distance": blk.sup_distance, "delta": cfg.delta })))
        }));
        let name = if label == "aligned" { "aligned_refinement" } else { "general_refinement" };
        checks.push(check(name, move || {
            let blk = blk?;
            let (h0, res, ratios) = refinement(&blk);
            let ok = ratios.iter().all(|r| (3.0..=5.0).contains(r));
            Ok((ok, json!({ "h0": h0, "residuals": res, "ratios": ratios })))
        }));
    }
    checks.push(check("aligned_alpha", || {
        let (blk, _) = aligned?;
        let met = block_metrics(&blk, 2.0, METRIC_SAMPLES)?;
        let floor = 2f64.powi(-7);
        Ok((met.alpha_est >= floor, json!({ "metrics": met, "floor": floor })))
    }));
    checks.push(check("time_axis_refused", || {
        let seg = SegmentFile::demo(SegmentKind::TimeAxis, n).segment()?;
        let err = build_block(&seg, &params, Anchor::unit(k)).err();
        Ok((err == Some(Error::DegenerateDirection), json!({ "error": err.map(|e| e.to_string()) })))
    }));
    suite("waves", checks)
}

fn fields_suite(cfg: &RunConfig, scratch: &Path) -> Suite {
    let n = cfg.n;
    let p = cfg.grid.min(FIELD_GRID_CAP);
    let spec = GridSpec::cube(n, &vec![0.0; n + 1], 1.0, p);
    let comps = 2 * n;
    let constant: Vec<f64> = (0..comps).map(|i| 0.25 + 0.1 * i as f64).collect();
    let constant_grid = || -> Result<FieldGrid> {
        let mut g = FieldGrid::zeros(spec.as_ref().map_err(Clone::clone)?, comps, Support::Full)?;
        g.fill_with(|_, v| v.copy_from_slice(&constant));
        Ok(g)
    };
    let wavy_grid = |shift: f64| -> Result<FieldGrid> {
        let mut g = FieldGrid::zeros(spec.as_ref().map_err(Clone::clone)?, comps, Support::Ball { center: vec![0.0; n + 1], radius: 0.9 })?;
        g.fill_with(|x, v| {
            for (i, o) in v.iter_mut().enumerate() {
                *o = (x[i % (n + 1)] * (i + 1) as f64 + shift).sin();
            }
        });
        Ok(g)
    };
    suite("fields", vec![
        check("mollifier_unit_mass", || {
            let g = constant_grid()?;
            let h = g.spec.h();
            let r = 2.5 * h;
            let mg = mollify(&g, r)?;
            let mut x = vec![0.0; n + 1];
            let (mut worst, mut interior) = (0.0f64, 0usize);
            for s in 0..mg.active_points() {
                mg.site_point(s, &mut x);
                if g.spec.inner_distance(&x) > r + h {
                    interior += 1;
                    for (a, b) in mg.value(s).iter().zip(&constant) {
                        worst = worst.max((a - b).abs());
                    }
                }
            }
            Ok((interior > 0 && worst <= 1e-12, json!({ "grid": p, "interior_points": interior, "max_error": worst })))
        }),
        check("mollifier_linear", || {
            let (g1, g2) = (wavy_grid(0.0)?, wavy_grid(0.7)?);
            let r = 2.0 * g1.spec.h();
            let lhs = mollify(&g1.axpy(-1.5, &g2)?, r)?;
            let rhs = mollify(&g1, r)?.axpy(-1.5, &mollify(&g2, r)?)?;
            let worst = lhs.values.iter().zip(&rhs.values).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            Ok((worst <= 1e-13, json!({ "max_error": worst })))
        }),
        check("under_resolved_kernel_refused", || {
            let g = constant_grid()?;
            let err = mollify(&g, g.spec.h()).err();
            Ok((matches!(err, Some(Error::UnderResolvedKernel { .. })), json!({ "error": err.map(|e| e.to_string()) })))
        }),
        check("lm_norm_of_a_constant", || {
            let g = constant_grid()?;
            let vol = g.spec.cell_volume() * g.spec.lattice_size() as f64;
            let c2: f64 = constant.iter().map(|x| x * x).sum();
            let got = lm_norm(&g, cfg.m, Component::State);
            let want = c2.sqrt().powf(cfg.m) * vol;
            let rel = (got / want - 1.0).abs();
            Ok((rel <= 1e-12, json!({ "value": got, "expected": want })))
        }),
        check("mhdf_round_trip", || {
            let g = wavy_grid(0.3)?;
            let path = scratch.join("verify-round-trip.mhdf");
            write_mhdf(&path, &g)?;
            let d = read_mhdf(&path);
            std::fs::remove_file(&path).ok();
            let d = d?;
            let zero = vec![0.0; comps];
            let same = (0..g.spec.lattice_size())
                .all(|idx| d.values[idx * comps..(idx + 1) * comps] == *g.at(idx).unwrap_or(&zero));
            let header = (d.n, d.points_per_axis, d.comps) == (n, p, comps);
            Ok((same && header, json!({ "values": d.values.len() })))
        }),
    ])
}

/// Runs every suite. `scratch` must be writable.
pub fn run_battery(cfg: &RunConfig, scratch: &Path) -> VerifyReport {
    let suites = vec![
        algebra_suite(cfg),
        wavecone_suite(cfg),
        kgeometry_suite(cfg),
        waves_suite(cfg),
        fields_suite(cfg, scratch),
    ];
    VerifyReport { config: cfg.clone(), passed: suites.iter().all(|s| s.passed), suites }
}
