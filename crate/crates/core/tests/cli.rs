use std::path::{Path, PathBuf};
use std::process::Command;

use fot_core::evaluate::matching_loss;
use fot_core::funcdata::{load_dataset, DataFormat, Domain};
use fot_core::operator::{MapFile, OperatorCoeffs};

fn fot(args: &[&str]) -> (i32, String, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_fot"))
        .args(args)
        .env_remove("FOT_OUT")
        .output()
        .expect("binary runs");
    (
        out.status.code().unwrap_or(-1),
        String::from_utf8_lossy(&out.stdout).into_owned(),
        String::from_utf8_lossy(&out.stderr).into_owned(),
    )
}

fn write_config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, text).unwrap();
    path
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn generate_fit_push_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let gen = dir.path().join("gen");
    let (code, _, err) = fot(&["generate", "--preset", "fig2-left", "--out", s(&gen)]);
    assert_eq!(code, 0, "{err}");
    let manifest = json(&gen.join("manifest.json"));
    assert_eq!(manifest["details"]["k_star"], serde_json::json!([15, 15]));
    assert_eq!(manifest["details"]["n_source"], 30);
    assert_eq!(manifest["details"]["n_target"], 30);

    let config = write_config(
        dir.path(),
        "fit.toml",
        r#"
[data]
source = "gen/source.json"
target = "gen/target.json"

[solver]
k_source = 6
k_target = 6
max_outer = 30
coefficient_rule = "trapezoid"

[push]
map = "fit/map.json"
curves = "gen/source.json"
"#,
    );
    let fit_dir = dir.path().join("fit");
    let (code, _, err) = fot(&["fit", "--config", s(&config), "--out", s(&fit_dir)]);
    assert_eq!(code, 0, "{err}");
    for file in ["fit.json", "map.json", "trace.csv", "plan.csv", "manifest.json"] {
        assert!(fit_dir.join(file).exists(), "{file} missing");
    }
    let trace = std::fs::read_to_string(fit_dir.join("trace.csv")).unwrap();
    assert!(trace.starts_with("iteration,total,transport,entropy,power,hs\n"));

    let push_dir = dir.path().join("push");
    let (code, _, err) = fot(&["push", "--config", s(&config), "--out", s(&push_dir)]);
    assert_eq!(code, 0, "{err}");

    // the command matches the library pushforward of the training curves
    let map: MapFile = serde_json::from_value(json(&fit_dir.join("map.json"))).unwrap();
    let op = OperatorCoeffs::try_from(map).unwrap();
    let source = load_dataset(&gen.join("source.json"), DataFormat::Json, Domain::Source).unwrap();
    let pushed = load_dataset(&push_dir.join("pushed.json"), DataFormat::Json, Domain::Target).unwrap();
    for (s, p) in source.samples.iter().zip(&pushed.samples) {
        assert_eq!(op.pushforward(s, &s.x).unwrap().y, p.y);
    }
}

#[test]
fn out_of_sample_push_stays_close_to_training_loss() {
    let dir = tempfile::tempdir().unwrap();
    let gen = |seed: &str, name: &str| {
        let out = dir.path().join(name);
        let (code, _, err) = fot(&["generate", "--preset", "fig2-left", "--seed", seed, "--out", s(&out)]);
        assert_eq!(code, 0, "{err}");
        out
    };
    let train = gen("0", "train");
    let config = write_config(
        dir.path(),
        "fit.toml",
        "[data]\nsource = \"train/source.json\"\ntarget = \"train/target.json\"\n\n[solver]\nk_source = 15\nk_target = 15\nmax_outer = 300\ncoefficient_rule = \"trapezoid\"\n",
    );
    let fit_dir = dir.path().join("fit");
    assert_eq!(fot(&["fit", "--config", s(&config), "--out", s(&fit_dir)]).0, 0);
    let op = OperatorCoeffs::try_from(serde_json::from_value::<MapFile>(json(&fit_dir.join("map.json"))).unwrap()).unwrap();
    let load = |dir: &Path, name: &str| load_dataset(&dir.join(name), DataFormat::Json, Domain::Source).unwrap();
    let push = |data: &fot_core::funcdata::FunctionalDataset| {
        let samples = data.samples.iter().map(|s| op.pushforward(s, &s.x).unwrap()).collect();
        fot_core::funcdata::FunctionalDataset::new(Domain::Target, samples).unwrap()
    };
    let train_loss = matching_loss(&push(&load(&train, "source.json")), &load(&train, "target.json"), None).unwrap().loss;

    // fresh source curves pushed through the same ground truth operator
    let truth: MapFile = serde_json::from_value(json(&train.join("truth_map.json"))).unwrap();
    let truth = OperatorCoeffs::try_from(truth).unwrap();
    let held = gen("9", "held");
    let held_source = load(&held, "source.json");
    let held_target = fot_core::funcdata::pushforward_dataset_by_groundtruth(
        &held_source,
        &truth,
        &fot_core::funcdata::PointsRule::RandomRange { min: 80, max: 120 },
        5,
    )
    .unwrap();
    let held_loss = matching_loss(&push(&held_source), &held_target, None).unwrap().loss;
    assert!(held_loss.is_finite());
    assert!(held_loss < 2.0 * train_loss, "held-out {held_loss} vs training {train_loss}");
}

#[test]
fn zero_curve_pushes_to_zero() {
    let dir = tempfile::tempdir().unwrap();
    let curves = dir.path().join("zero.csv");
    std::fs::write(&curves, "sample_id,x,y\n0,0.1,0\n0,0.5,0\n0,0.9,0\n").unwrap();
    let map = dir.path().join("map.json");
    let op = OperatorCoeffs::new(
        nalgebra::DMatrix::from_fn(3, 4, |i, j| (i + 2 * j) as f64 - 2.5),
        fot_core::basis::BasisSet::brownian(4).unwrap(),
        fot_core::basis::BasisSet::brownian(3).unwrap(),
    )
    .unwrap();
    std::fs::write(&map, serde_json::to_string(&MapFile::from(&op)).unwrap()).unwrap();
    let out = dir.path().join("out");
    let (code, _, err) = fot(&["push", "--map", s(&map), "--curves", s(&curves), "--out", s(&out)]);
    assert_eq!(code, 0, "{err}");
    let pushed = load_dataset(&out.join("pushed.json"), DataFormat::Json, Domain::Target).unwrap();
    assert!(pushed.samples[0].y.iter().all(|&v| v == 0.0));
}

#[test]
fn experiment_bundles_have_expected_rows() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(
        dir.path(),
        "exp.toml",
        r#"
[eval.fig2_left]
k_grid = [3, 6]
seeds = [0]

[eval.baselines]
n_source = 10
n_target = 10
n_test = 10
seeds = [1]
settings = { methods = ["fot", "gpot"] }
"#,
    );
    let left = dir.path().join("left");
    assert_eq!(fot(&["experiment", "fig2-left", "--config", s(&config), "--out", s(&left)]).0, 0);
    let csv = std::fs::read_to_string(left.join("fig2_left.csv")).unwrap();
    assert_eq!(csv.lines().next(), Some("k1,k2,loss"));
    assert_eq!(csv.lines().count(), 3);

    let base = dir.path().join("base");
    assert_eq!(fot(&["experiment", "baselines", "--config", s(&config), "--out", s(&base)]).0, 0);
    let csv = std::fs::read_to_string(base.join("baselines.csv")).unwrap();
    let methods: Vec<&str> = csv.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(methods, ["FOT", "GPOT"]);
    let manifest = json(&base.join("manifest.json"));
    assert!(manifest["config_hash"].as_str().unwrap().len() == 64);
    assert!(manifest["files"]["baselines.csv"].is_string());
}

#[test]
fn config_hash_changes_with_config_only() {
    let dir = tempfile::tempdir().unwrap();
    let hash = |text: &str, extra: &[&str]| {
        let path = write_config(dir.path(), "c.toml", text);
        let mut args = vec!["validate-config", "--config", s(&path)];
        args.extend_from_slice(extra);
        let (code, out, err) = fot(&args);
        assert_eq!(code, 0, "{err}");
        out.trim().rsplit(' ').next().unwrap().to_string()
    };
    let base = hash("[solver]\neta = 0.5\n", &[]);
    assert_eq!(base, hash("[solver]\neta = 0.5\n", &["--out", "/tmp/elsewhere"]));
    assert_eq!(base, hash("[solver]\neta   =   0.5 # spacing and comments\n", &[]));
    assert_ne!(base, hash("[solver]\neta = 0.25\n", &[]));
    assert_ne!(base, hash("[solver]\neta = 0.5\n", &["--seed", "3"]));
}

#[test]
fn exit_codes_follow_error_kind() {
    let dir = tempfile::tempdir().unwrap();
    let bad = write_config(dir.path(), "bad.toml", "[solver]\nlearning_rate = 1\n");
    assert_eq!(fot(&["validate-config", "--config", s(&bad)]).0, 2);

    let missing = dir.path().join("absent.toml");
    assert_eq!(fot(&["validate-config", "--config", s(&missing)]).0, 4);

    let empty = write_config(dir.path(), "zero.toml", "[data.generator]\nkind = \"mixture\"\nn_source = 0\n");
    let out = dir.path().join("never");
    assert_eq!(fot(&["generate", "--config", s(&empty), "--out", s(&out)]).0, 2);
    assert!(!out.exists());

    let diverge = write_config(
        dir.path(),
        "diverge.toml",
        "[data.generator]\nkind = \"mixture\"\n\n[solver]\nk_source = 5\nk_target = 5\nlr_lambda = 10.0\nmax_outer = 50\n",
    );
    let out = dir.path().join("diverged");
    let (code, _, err) = fot(&["fit", "--config", s(&diverge), "--out", s(&out)]);
    assert_eq!(code, 3, "{err}");
    assert!(out.join("failure_trace.csv").exists());
}
