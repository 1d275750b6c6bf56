use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use hypobridge::config::KvConfig;
use hypobridge::net::{Activation, NetworkParams};
use hypobridge::score::ScoreModel;
use hypobridge::stats;
use hypobridge::train::TrainingConfig;
use serde_json::Value;
use tempfile::TempDir;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_hypobridge"))
}

fn run(verb: &str, cfg: &Path, out: &Path, extra: &[&str]) -> Output {
    bin()
        .arg(verb)
        .arg("--config")
        .arg(cfg)
        .arg("--out")
        .arg(out)
        .arg("--quiet")
        .args(extra)
        .output()
        .expect("binary runs")
}

fn ok(o: &Output) {
    assert!(o.status.success(), "exit {:?}: {}", o.status.code(), String::from_utf8_lossy(&o.stderr));
}

fn write_cfg(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

/// Header and data rows of a CSV file.
fn read_csv(path: &Path) -> (Vec<String>, Vec<Vec<f64>>) {
    let text = fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    let header = lines.next().unwrap().split(',').map(str::to_string).collect();
    let rows = lines
        .map(|l| l.split(',').map(|c| c.parse().unwrap()).collect())
        .collect();
    (header, rows)
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

const SMALL_SIM: &str = "geometry = heisenberg\nx0 = 0, 0, 0\nT = 1\nn = 4\nK = 2\nseed = 11\n";

#[test]
fn simulate_writes_one_row_per_path_and_time() {
    let dir = TempDir::new().unwrap();
    let cfg = write_cfg(dir.path(), "s.cfg", SMALL_SIM);
    let out = dir.path().join("out");
    ok(&run("simulate", &cfg, &out, &[]));
    let (header, rows) = read_csv(&out.join("paths.csv"));
    assert_eq!(header, ["path_id", "step", "t", "x", "y", "z"]);
    assert_eq!(rows.len(), 10);
    assert_eq!(rows[0][..3], [0.0, 0.0, 0.0]);
    assert_eq!(rows[9][..3], [1.0, 4.0, 1.0]);
    let m = read_json(&out.join("manifest.json"));
    assert_eq!(m["command"], "simulate");
    assert_eq!(m["seed"], 11);
    assert_eq!(m["outputs"][0], "paths.csv");
}

#[test]
fn simulate_is_reproducible_and_seed_flag_overrides() {
    let dir = TempDir::new().unwrap();
    let cfg = write_cfg(dir.path(), "s.cfg", SMALL_SIM);
    let (a, b, c) = (dir.path().join("a"), dir.path().join("b"), dir.path().join("c"));
    ok(&run("simulate", &cfg, &a, &[]));
    ok(&run("simulate", &cfg, &b, &[]));
    ok(&run("simulate", &cfg, &c, &["--seed", "12"]));
    let bytes = |d: &Path| fs::read(d.join("paths.csv")).unwrap();
    assert_eq!(bytes(&a), bytes(&b));
    assert_ne!(bytes(&a), bytes(&c));
    assert_eq!(read_json(&c.join("manifest.json"))["seed"], 12);
}

#[test]
fn simulated_heisenberg_area_variance() {
    let dir = TempDir::new().unwrap();
    let cfg = write_cfg(
        dir.path(),
        "s.cfg",
        "geometry = heisenberg\nx0 = 0, 0, 0\nT = 1\nn = 20\nK = 10000\nseed = 3\n",
    );
    let out = dir.path().join("out");
    ok(&run("simulate", &cfg, &out, &[]));
    let (_, rows) = read_csv(&out.join("paths.csv"));
    let z: Vec<f64> = rows.iter().filter(|r| r[1] == 20.0).map(|r| r[5]).collect();
    assert_eq!(z.len(), 10000);
    let v = stats::variance(&z);
    assert!((v / 0.25 - 1.0).abs() < 0.05, "Var(z_T) = {v}");
}

#[test]
fn bad_key_exits_with_config_code() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("out");
    let cfg = write_cfg(dir.path(), "s.cfg", &format!("{SMALL_SIM}colour = red\n"));
    let o = run("simulate", &cfg, &out, &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("colour"));

    let cfg = write_cfg(dir.path(), "g.cfg", "geometry = heisenberg\nx0 = 0, 0\n");
    assert_eq!(run("simulate", &cfg, &out, &[]).status.code(), Some(2));
    assert_eq!(run("simulate", &dir.path().join("missing.cfg"), &out, &[]).status.code(), Some(2));
    assert_eq!(run("simulate", &cfg, &out, &["--svg"]).status.code(), Some(2));
    assert!(!out.join("manifest.json").exists());
}

#[test]
fn zero_epochs_keeps_initial_parameters() {
    let dir = TempDir::new().unwrap();
    let text = "geometry = heisenberg\nx0 = 0.5, 0, 0.8\nn = 10\nK = 4\nbatches_per_epoch = 1\nepochs = 0\nseed = 9\n";
    let cfg = write_cfg(dir.path(), "t.cfg", text);
    let out = dir.path().join("out");
    ok(&run("train", &cfg, &out, &[]));
    let theta = NetworkParams::from_json(&read_json(&out.join("theta.json"))).unwrap();
    let kv = KvConfig::parse(text).unwrap();
    let fresh = TrainingConfig::from_kv(&kv).unwrap().initial_params().unwrap();
    assert_eq!(theta, fresh);
    let (header, rows) = read_csv(&out.join("loss.csv"));
    assert_eq!(header, ["epoch", "loss"]);
    assert!(rows.is_empty());
}

#[test]
fn short_training_run_records_losses() {
    let dir = TempDir::new().unwrap();
    let text = "geometry = euclidean\nx0 = 0\nn = 10\nK = 8\nbatches_per_epoch = 2\nepochs = 3\nseed = 2\n";
    let cfg = write_cfg(dir.path(), "t.cfg", text);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    ok(&run("train", &cfg, &a, &[]));
    ok(&run("train", &cfg, &b, &[]));
    let (_, rows) = read_csv(&a.join("loss.csv"));
    assert_eq!(rows.len(), 3);
    assert!(rows.iter().all(|r| r[1].is_finite()));
    assert_eq!(fs::read(a.join("theta.json")).unwrap(), fs::read(b.join("theta.json")).unwrap());
    assert_eq!(read_json(&a.join("manifest.json"))["layer_sizes"], serde_json::json!([2, 15, 15, 15, 1]));
}

fn zero_theta(dir: &Path) -> PathBuf {
    let p = dir.join("zero.json");
    let net = NetworkParams::zeros(&[4, 15, 15, 15, 2], Activation::Elu).unwrap();
    fs::write(&p, net.to_json().to_string()).unwrap();
    p
}

#[test]
fn scoregrid_single_point_matches_forward() {
    let dir = TempDir::new().unwrap();
    let mut net = NetworkParams::zeros(&[4, 5, 2], Activation::Elu).unwrap();
    for (i, v) in net.params_mut().iter_mut().enumerate() {
        *v = ((i as f64) * 0.37).sin();
    }
    let theta = dir.path().join("theta.json");
    fs::write(&theta, net.to_json().to_string()).unwrap();
    let cfg = write_cfg(
        dir.path(),
        "g.cfg",
        "geometry = heisenberg\naxis_1 = 0.3, 0.3, 1\naxis_2 = -0.2, -0.2, 1\naxis_3 = 0.1, 0.1, 1\nt = 0.5\n",
    );
    let out = dir.path().join("out");
    ok(&run("scoregrid", &cfg, &out, &["--theta", theta.to_str().unwrap()]));
    let (header, rows) = read_csv(&out.join("scoregrid.csv"));
    assert_eq!(header, ["x", "y", "z", "s1", "s2", "v_x", "v_y", "v_z"]);
    assert_eq!(rows.len(), 1);
    let s = net.forward(0.5, &[0.3, -0.2, 0.1]).unwrap();
    assert_eq!(rows[0][3..5], s[..]);
    // frame columns at (x, y) are (1, 0, −y/2) and (0, 1, x/2)
    assert!((rows[0][7] - (0.1 * s[0] + 0.15 * s[1])).abs() < 1e-15);
}

#[test]
fn scoregrid_slice_with_zero_network() {
    let dir = TempDir::new().unwrap();
    let theta = zero_theta(dir.path());
    let cfg = write_cfg(
        dir.path(),
        "g.cfg",
        &format!(
            "geometry = heisenberg\nx0 = 0.5, 0, 0.8\naxis_1 = -1, 1, 11\naxis_2 = -1, 1\naxis_3 = 0.2, 0.2, 1\nt = 0.5\ntheta = {}\n",
            theta.display()
        ),
    );
    let out = dir.path().join("out");
    ok(&run("scoregrid", &cfg, &out, &["--svg"]));
    let (_, rows) = read_csv(&out.join("scoregrid.csv"));
    assert_eq!(rows.len(), 121);
    assert!(rows.iter().all(|r| r[3..].iter().all(|&v| v == 0.0)));
    assert!(rows.iter().all(|r| r[2] == 0.2));
    assert!(fs::read_to_string(out.join("scoregrid.svg")).unwrap().starts_with("<svg"));
}

#[test]
fn scoregrid_rejects_malformed_axes() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("out");
    for axes in ["axis_1 = 1, 0\n", "axis_1 = 0, 1, 2.5\n", "axis_1 = 0, 1, 1\n", ""] {
        let cfg = write_cfg(
            dir.path(),
            "g.cfg",
            &format!("geometry = euclidean\n{axes}t = 1\nscore = analytic-euclidean\n"),
        );
        assert_eq!(run("scoregrid", &cfg, &out, &[]).status.code(), Some(2), "{axes}");
    }
}

#[test]
fn theta_geometry_mismatch_is_rejected() {
    let dir = TempDir::new().unwrap();
    let theta = zero_theta(dir.path());
    let cfg = write_cfg(
        dir.path(),
        "b.cfg",
        &format!("geometry = euclidean\nx0 = 0\nxT = 1\nn = 10\ntheta = {}\n", theta.display()),
    );
    let o = run("bridge", &cfg, &dir.path().join("out"), &[]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn single_bridge_path_with_svg() {
    let dir = TempDir::new().unwrap();
    let theta = zero_theta(dir.path());
    let cfg = write_cfg(
        dir.path(),
        "b.cfg",
        "geometry = heisenberg\nx0 = 0.5, 0, 0.8\nxT = 0, 0, 0\nT = 1\nn = 20\nnum_samples = 1\nseed = 4\n",
    );
    let out = dir.path().join("out");
    ok(&run("bridge", &cfg, &out, &["--svg", "--theta", theta.to_str().unwrap()]));
    let (_, rows) = read_csv(&out.join("ensemble.csv"));
    assert_eq!(rows.len(), 21);
    assert!(rows.iter().all(|r| r[0] == 0.0));
    let svgs: Vec<_> = fs::read_dir(&out)
        .unwrap()
        .filter_map(|e| e.ok())
        .filter(|e| e.path().extension().is_some_and(|x| x == "svg"))
        .collect();
    assert_eq!(svgs.len(), 1);
    let summary = read_json(&out.join("summary.json"));
    assert_eq!(summary["grid"].as_array().unwrap().len(), 21);
    assert_eq!(summary["score"], "network");
}

#[test]
fn analytic_euclidean_bridge_hits_its_endpoint() {
    let dir = TempDir::new().unwrap();
    let cfg = write_cfg(
        dir.path(),
        "b.cfg",
        "geometry = euclidean\nx0 = 0.7\nxT = -0.4\nT = 1\nn = 512\nnum_samples = 2000\nscore = analytic-euclidean\nseed = 5\n",
    );
    let out = dir.path().join("out");
    ok(&run("bridge", &cfg, &out, &[]));
    let (_, rows) = read_csv(&out.join("ensemble.csv"));
    // rows run forward in time: step 0 is the x0 end, the last step sits at xT
    let ends: Vec<f64> = rows.iter().filter(|r| r[1] == 0.0).map(|r| r[3]).collect();
    assert_eq!(ends.len(), 2000);
    assert!(rows.iter().filter(|r| r[1] == 512.0).all(|r| r[3] == -0.4));
    let ends = &ends;
    let mean = stats::mean(ends);
    assert!((mean - 0.7).abs() < 3.0 * stats::std_error(ends), "mean {mean}");
    assert!(stats::variance(ends).sqrt() < 3.0 * (1.0f64 / 512.0).sqrt());
}

#[test]
fn several_horizons_write_one_summary_each() {
    let dir = TempDir::new().unwrap();
    let cfg = write_cfg(
        dir.path(),
        "b.cfg",
        "geometry = heisenberg\nx0 = 0.5, 0, 0.8\nxT = 0, 0, 0\nT = 0.1, 0.2, 0.5, 1\nn = 10\nnum_samples = 5\nscore = analytic-heisenberg\n",
    );
    let out = dir.path().join("out");
    ok(&run("bridge", &cfg, &out, &[]));
    for t in ["0.1", "0.2", "0.5", "1"] {
        let s = read_json(&out.join(format!("summary_T{t}.json")));
        assert_eq!(s["T"].as_f64().unwrap().to_string(), t);
        assert!(out.join(format!("ensemble_T{t}.csv")).exists());
    }
    assert_eq!(read_json(&out.join("manifest.json"))["midpoint"].as_array().unwrap().len(), 4);
}

#[test]
fn manifest_reruns_reproduce_outputs() {
    let dir = TempDir::new().unwrap();
    let cfg = write_cfg(
        dir.path(),
        "b.cfg",
        "geometry = heisenberg\nx0 = 0.5, 0, 0.8\nxT = 0, 0, 0\nT = 0.5\nn = 16\nnum_samples = 7\nscore = analytic-heisenberg\n",
    );
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    ok(&run("bridge", &cfg, &a, &["--seed", "77"]));
    ok(&run("bridge", &a.join("manifest.json"), &b, &[]));
    let m = read_json(&a.join("manifest.json"));
    assert_eq!(m["seed"], 77);
    for f in m["outputs"].as_array().unwrap() {
        let f = f.as_str().unwrap();
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }

    let sim = write_cfg(dir.path(), "s.cfg", SMALL_SIM);
    let (c, d) = (dir.path().join("c"), dir.path().join("d"));
    ok(&run("simulate", &sim, &c, &[]));
    ok(&run("simulate", &c.join("manifest.json"), &d, &[]));
    assert_eq!(fs::read(c.join("paths.csv")).unwrap(), fs::read(d.join("paths.csv")).unwrap());
}

fn shipped(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

#[test]
fn shipped_heisenberg_config_uses_the_reference_recipe() {
    let kv = KvConfig::from_file(&shipped("heisenberg_denoising.cfg")).unwrap();
    let c = TrainingConfig::from_kv(&kv).unwrap();
    kv.finish().unwrap();
    assert_eq!(c.layer_sizes(), [4, 15, 15, 15, 2]);
    assert_eq!(c.activation, Activation::Elu);
    assert_eq!((c.epochs, c.batch_size, c.batches_per_epoch), (2500, 64, 8));
    assert_eq!(c.x0.as_slice(), [0.5, 0.0, 0.8]);
}

#[test]
fn shipped_scoregrid_config_gives_the_slice() {
    let dir = TempDir::new().unwrap();
    let theta = zero_theta(dir.path());
    let out = dir.path().join("out");
    ok(&run(
        "scoregrid",
        &shipped("scoregrid_heisenberg.cfg"),
        &out,
        &["--theta", theta.to_str().unwrap()],
    ));
    let (_, rows) = read_csv(&out.join("scoregrid.csv"));
    assert_eq!(rows.len(), 121);
    assert!(rows.iter().all(|r| r[2] == 0.2 && r[0].abs() <= 1.0 && r[1].abs() <= 1.0));
}
