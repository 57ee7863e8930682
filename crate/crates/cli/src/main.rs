//! `wildmhd`: verify, run, block, moments and dump-atoms.

mod config;
mod segments;
mod verify;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::json;
use wildmhd::fields::{write_mhdf, write_mhdf_records};
use wildmhd::kgeometry::{build_atom_library, sphere_moments, t_image_rank};
use wildmhd::scheme::run_scheme_with;
use wildmhd::waves::{block_metrics, build_block, Anchor};
use wildmhd::{Error, Result};

use config::{OmegaKind, RunConfig};
use segments::{SegmentFile, SegmentKind};

#[derive(Parser, Debug)]
#[command(name = "wildmhd", version, about = "Convex integration experiments for relaxed ideal MHD")]
struct Cli {
    #[command(flatten)]
    flags: Flags,
    #[command(subcommand)]
    command: Command,
}

/// Every flag overrides the matching field of --config (or the default).
#[derive(Args, Debug, Default)]
struct Flags {
    /// JSON configuration file
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    n: Option<usize>,
    #[arg(long, global = true)]
    m: Option<f64>,
    /// Lattice points per axis
    #[arg(long, global = true)]
    grid: Option<usize>,
    #[arg(long, global = true, value_enum)]
    omega_kind: Option<OmegaKind>,
    /// Ball radius or cube half-side
    #[arg(long, global = true)]
    omega_size: Option<f64>,
    #[arg(long, global = true)]
    iters: Option<usize>,
    #[arg(long, global = true)]
    delta: Option<f64>,
    #[arg(long, global = true)]
    kappa: Option<f64>,
    /// Uncovered-volume budget of the ball cover
    #[arg(long, global = true)]
    sigma: Option<f64>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    atoms: Option<usize>,
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Write each iterate as out/iter_<j>.mhdf
    #[arg(long, global = true)]
    dump_fields: bool,
    /// Worker threads (default: available parallelism)
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Property battery over algebra, wavecone, kgeometry, waves and fields
    Verify,
    /// Iterate the perturbation scheme and write report.json
    Run,
    /// Build one block from a demo or file segment and write block.json
    Block {
        #[arg(long, value_enum, default_value = "aligned")]
        segment: SegmentKind,
        /// JSON segment {u1, b1, u2, b2, scale?, xi?}; overrides --segment
        #[arg(long)]
        segment_file: Option<PathBuf>,
        #[arg(long, default_value_t = verify::METRIC_SAMPLES)]
        samples: usize,
    },
    /// Sphere moments and the T-image rank, to moments.json
    Moments {
        #[arg(long, default_value_t = verify::MOMENT_SAMPLES)]
        samples: usize,
        #[arg(long, default_value_t = verify::T_IMAGE_SAMPLES)]
        t_samples: usize,
    },
    /// Write the atom library as out/atoms.mhdf (u then b per record)
    DumpAtoms,
}

impl Flags {
    fn resolve(&self) -> Result<RunConfig> {
        let mut c = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        macro_rules! take {
            ($($flag:ident => $field:expr),* $(,)?) => {
                $(if let Some(v) = self.$flag.clone() { $field = v; })*
            };
        }
        take! {
            n => c.n,
            m => c.m,
            grid => c.grid,
            omega_kind => c.omega.kind,
            omega_size => c.omega.size,
            iters => c.iters,
            delta => c.delta,
            kappa => c.kappa,
            sigma => c.sigma_budget,
            seed => c.seed,
            atoms => c.atom_count,
            out => c.out_dir,
        }
        Ok(c)
    }
}

/// 0: every check passed. 1: a check failed. 2: an error.
enum Outcome {
    Passed,
    Failed,
}

fn write_json(dir: &Path, name: &str, value: &impl Serialize) -> Result<PathBuf> {
    std::fs::create_dir_all(dir).map_err(|e| Error::Io(format!("{}: {e}", dir.display())))?;
    let path = dir.join(name);
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::Format(e.to_string()))?;
    text.push('\n');
    std::fs::write(&path, text).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    Ok(path)
}

fn outcome(ok: bool) -> Outcome {
    if ok {
        Outcome::Passed
    } else {
        Outcome::Failed
    }
}

fn cmd_verify(cfg: &RunConfig) -> Result<Outcome> {
    std::fs::create_dir_all(&cfg.out_dir).map_err(|e| Error::Io(format!("{}: {e}", cfg.out_dir.display())))?;
    let report = verify::run_battery(cfg, &cfg.out_dir);
    for s in &report.suites {
        for c in &s.checks {
            eprintln!("{} {}::{}", if c.passed { "ok  " } else { "FAIL" }, s.name, c.name);
        }
    }
    let path = write_json(&cfg.out_dir, "verify.json", &report)?;
    println!("{}", path.display());
    Ok(outcome(report.passed))
}

fn cmd_run(cfg: &RunConfig, dump: bool) -> Result<Outcome> {
    let out = cfg.out_dir.clone();
    std::fs::create_dir_all(&out).map_err(|e| Error::Io(format!("{}: {e}", out.display())))?;
    let report = run_scheme_with(&cfg.iteration(), |j, g| {
        if dump {
            write_mhdf(&out.join(format!("iter_{j}.mhdf")), g)?;
        }
        Ok(())
    })?;
    for rec in &report.iterations {
        eprintln!(
            "j={} gap={:.6e} beta={:.3e} balls={}/{} retries={}",
            rec.j, report.gaps[rec.j], rec.step.beta_measured, rec.step.balls_used, rec.step.balls_total, rec.retries
        );
    }
    let path = write_json(&out, "report.json", &report)?;
    println!("{}", path.display());
    Ok(outcome(report.ladder_ok && report.recursion_holds))
}

fn cmd_block(cfg: &RunConfig, kind: SegmentKind, file: Option<&Path>, samples: usize) -> Result<Outcome> {
    let spec = match file {
        Some(p) => SegmentFile::load(p)?,
        None => SegmentFile::demo(kind, cfg.n),
    };
    if spec.u1.len() != cfg.n {
        return Err(Error::Config(format!("segment vectors have length {}, config has n = {}", spec.u1.len(), cfg.n)));
    }
    let seg = spec.segment()?;
    let blk = build_block(&seg, &verify::block_params(cfg.delta), Anchor::unit(cfg.n + 1))?;
    let metrics = block_metrics(&blk, cfg.m, samples)?;
    let (h0, residuals, ratios) = verify::refinement(&blk);
    let floor = 2f64.powi(-7);
    let checks = json!({
        "sup_distance_below_delta": blk.sup_distance < cfg.delta,
        "refinement_ratios_in_3_5": ratios.iter().all(|r| (3.0..=5.0).contains(r)),
        "alpha_above_floor": (cfg.m == 2.0).then(|| metrics.alpha_est >= floor),
    });
    let ok = checks.as_object().expect("object").values().all(|v| v.as_bool() != Some(false));
    let report = json!({
        "n": cfg.n,
        "m": cfg.m,
        "segment": file.map_or_else(|| json!(kind), |p| json!(p.display().to_string())),
        "block": blk.summary(),
        "metrics": metrics,
        "alpha_floor": floor,
        "divergence_refinement": { "h0": h0, "residuals": residuals, "ratios": ratios },
        "checks": checks,
    });
    let path = write_json(&cfg.out_dir, "block.json", &report)?;
    println!("{}", path.display());
    Ok(outcome(ok))
}

fn cmd_moments(cfg: &RunConfig, samples: usize, t_samples: usize) -> Result<Outcome> {
    let mom = sphere_moments(cfg.n, samples, cfg.seed)?;
    let rank = t_image_rank(cfg.n, t_samples, cfg.seed)?;
    let target = 1.0 / cfg.n as f64;
    let gamma_ok = (mom.gamma[0] - target).abs() <= 3.0 * mom.std_err[0];
    let rank_ok = rank.rank >= rank.target_rank;
    let report = json!({
        "sphere_moments": mom,
        "gamma1_target": target,
        "t_image": rank,
        "checks": { "gamma1_within_3_std_err": gamma_ok, "rank_reaches_target": rank_ok },
    });
    let path = write_json(&cfg.out_dir, "moments.json", &report)?;
    println!("{}", path.display());
    Ok(outcome(gamma_ok && rank_ok))
}

fn cmd_dump_atoms(cfg: &RunConfig) -> Result<Outcome> {
    let lib = build_atom_library(cfg.n, cfg.atom_count, cfg.seed)?;
    let values: Vec<f64> = lib.atoms().iter().flat_map(|a| a.u().iter().chain(a.b().iter()).cloned().collect::<Vec<_>>()).collect();
    std::fs::create_dir_all(&cfg.out_dir).map_err(|e| Error::Io(format!("{}: {e}", cfg.out_dir.display())))?;
    let path = cfg.out_dir.join("atoms.mhdf");
    write_mhdf_records(&path, cfg.n, lib.count(), 2 * cfg.n, &values)?;
    println!("{}", path.display());
    Ok(Outcome::Passed)
}

fn execute(cli: &Cli) -> Result<Outcome> {
    let cfg = cli.flags.resolve()?;
    cfg.validate()?;
    if let Some(t) = cli.flags.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    }
    match &cli.command {
        Command::Verify => cmd_verify(&cfg),
        Command::Run => cmd_run(&cfg, cli.flags.dump_fields),
        Command::Block { segment, segment_file, samples } => cmd_block(&cfg, *segment, segment_file.as_deref(), *samples),
        Command::Moments { samples, t_samples } => cmd_moments(&cfg, *samples, *t_samples),
        Command::DumpAtoms => cmd_dump_atoms(&cfg),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(Outcome::Passed) => ExitCode::SUCCESS,
        Ok(Outcome::Failed) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
