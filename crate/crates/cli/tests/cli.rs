use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use wildmhd::fields::{read_mhdf, read_mhdf_records};

fn wildmhd(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_wildmhd"))
        .args(args)
        .arg("--out")
        .arg(out)
        .output()
        .expect("binary runs")
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn verify_passes_on_the_default_config() {
    let dir = tempfile::tempdir().unwrap();
    let o = wildmhd(&["verify"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let rep = json(&dir.path().join("verify.json"));
    assert_eq!(rep["passed"], true);
    let names: Vec<&str> = rep["suites"].as_array().unwrap().iter().map(|s| s["name"].as_str().unwrap()).collect();
    assert_eq!(names, ["algebra", "wavecone", "kgeometry", "waves", "fields"]);
    assert!(!dir.path().join("verify-round-trip.mhdf").exists());
}

#[test]
fn invalid_configs_exit_with_diagnostics() {
    let dir = tempfile::tempdir().unwrap();
    let o = wildmhd(&["--n", "3", "verify"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("unsupported dimension n = 3"), "{}", stderr(&o));
    let o = wildmhd(&["--grid", "4", "verify"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("configuration error"), "{}", stderr(&o));
    let o = wildmhd(&["--iters", "0", "run"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(!dir.path().join("report.json").exists());
}

#[test]
fn unwritable_out_dir_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let blocker = dir.path().join("file");
    std::fs::write(&blocker, b"x").unwrap();
    let o = wildmhd(&["dump-atoms"], &blocker.join("sub"));
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("i/o error"), "{}", stderr(&o));
}

#[test]
fn runs_are_reproducible_and_dump_fields() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let args = ["--iters", "2", "--grid", "12", "run"];
    let oa = wildmhd(&[&args[..], &["--dump-fields"]].concat(), a.path());
    assert_eq!(oa.status.code(), Some(0), "{}", stderr(&oa));
    let ob = wildmhd(&args, b.path());
    assert_eq!(ob.status.code(), Some(0), "{}", stderr(&ob));
    let ra = std::fs::read(a.path().join("report.json")).unwrap();
    assert_eq!(ra, std::fs::read(b.path().join("report.json")).unwrap());

    let rep = json(&a.path().join("report.json"));
    assert_eq!(rep["iterations"].as_array().unwrap().len(), 2);
    let gaps: Vec<f64> = rep["gaps"].as_array().unwrap().iter().map(|g| g.as_f64().unwrap()).collect();
    assert!(gaps.windows(2).all(|w| w[1] < w[0]), "{gaps:?}");
    for j in 1..=2 {
        let d = read_mhdf(&a.path().join(format!("iter_{j}.mhdf"))).unwrap();
        assert_eq!((d.n, d.points_per_axis, d.comps), (4, 12, 24));
        assert!(d.values.iter().all(|v| v.is_finite()));
        assert!(d.values.iter().any(|&v| v != 0.0));
    }
    assert!(!b.path().join("iter_1.mhdf").exists());
}

#[test]
fn block_command_reports_alpha_and_refinement() {
    let dir = tempfile::tempdir().unwrap();
    let o = wildmhd(&["block", "--segment", "aligned", "--samples", "50000"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let rep = json(&dir.path().join("block.json"));
    assert!(rep["metrics"]["alpha_est"].as_f64().unwrap() >= 2f64.powi(-7));
    for r in rep["divergence_refinement"]["ratios"].as_array().unwrap() {
        assert!((3.0..=5.0).contains(&r.as_f64().unwrap()));
    }
    assert!(rep["block"]["sup_distance"].as_f64().unwrap() < 0.1);

    let o = wildmhd(&["block", "--segment", "time-axis"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("time axis"), "{}", stderr(&o));
}

#[test]
fn segment_files_and_config_files_merge_with_flags() {
    let dir = tempfile::tempdir().unwrap();
    let seg = dir.path().join("seg.json");
    std::fs::write(&seg, r#"{"u1":[0,1,0,0,0],"b1":[0,0,1,0,0],"u2":[0,0,0,1,0],"b2":[0,0,1,0,0]}"#).unwrap();
    let cfg = dir.path().join("cfg.json");
    std::fs::write(&cfg, r#"{"n": 4, "delta": 0.2, "seed": 9}"#).unwrap();
    let (c, s) = (cfg.to_str().unwrap(), seg.to_str().unwrap());

    // the file says n = 4, the flag wins
    let o = wildmhd(&["--config", c, "--n", "5", "block", "--segment-file", s, "--samples", "20000"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let rep = json(&dir.path().join("block.json"));
    assert_eq!(rep["n"], 5);
    assert_eq!(rep["block"]["delta"], 0.2);

    // without the override the 5-vectors no longer match n
    let o = wildmhd(&["--config", c, "block", "--segment-file", s], dir.path());
    assert_eq!(o.status.code(), Some(2));

    std::fs::write(&cfg, r#"{"n": 4, "bogus": 1}"#).unwrap();
    let o = wildmhd(&["--config", c, "verify"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("bogus"), "{}", stderr(&o));
}

#[test]
fn moments_and_atom_dumps() {
    let dir = tempfile::tempdir().unwrap();
    let o = wildmhd(&["moments", "--samples", "100000"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let rep = json(&dir.path().join("moments.json"));
    assert_eq!(rep["t_image"]["rank"], 23);

    let o = wildmhd(&["--atoms", "120", "dump-atoms"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let d = read_mhdf_records(&dir.path().join("atoms.mhdf")).unwrap();
    assert_eq!((d.n, d.points_per_axis, d.comps), (4, 120, 8));
    for rec in d.values.chunks(8) {
        let nu: f64 = rec[..4].iter().map(|x| x * x).sum();
        let nb: f64 = rec[4..].iter().map(|x| x * x).sum();
        assert!((nu - 1.0).abs() < 1e-12 && (nb - 1.0).abs() < 1e-12);
    }
}
