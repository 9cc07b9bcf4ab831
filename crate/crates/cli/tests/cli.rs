use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use aging_core::{AgeGrid, CareerPanel, TransformSpec};

fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures")
}

fn aging(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_aging"))
        .args(args)
        .arg("--out")
        .arg(out)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn parse_curve(path: &Path) -> Vec<(i32, f64)> {
    let text = std::fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    assert!(lines.next().unwrap().starts_with("age,estimate"));
    lines
        .map(|l| {
            let mut f = l.split(',');
            let age = f.next().unwrap().parse().unwrap();
            let est: f64 = f.next().unwrap().parse().unwrap();
            assert!(est.is_finite());
            (age, est)
        })
        .collect()
}

#[test]
fn mlb_pipeline_runs_on_fixture() {
    let dir = tempfile::tempdir().unwrap();
    let (b, p) = (fixtures().join("Batting.csv"), fixtures().join("People.csv"));
    let out = aging(
        &[
            "pipeline-mlb",
            "--batting",
            b.to_str().unwrap(),
            "--people",
            p.to_str().unwrap(),
            "--m",
            "3",
        ],
        dir.path(),
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for name in [
        "observed_curve.csv",
        "pooled_curve.csv",
        "pooled_curve_ops.csv",
        "imputed_curve_3.csv",
    ] {
        let curve = parse_curve(&dir.path().join(name));
        assert_eq!(curve.len(), 19, "{name}");
        assert_eq!(curve[0].0, 21);
    }
    for name in ["curves.svg", "kde.svg", "trace_mean.svg", "manifest.toml", "traces.csv"] {
        assert!(dir.path().join(name).exists(), "{name}");
    }
    let summary = std::fs::read_to_string(dir.path().join("summary.txt")).unwrap();
    assert!(summary.contains("n_players = 3"));
    assert!(!dir.path().join("FAILED").exists());
}

#[test]
fn exit_codes_name_the_failing_stage() {
    let dir = tempfile::tempdir().unwrap();
    let out = aging(&["pipeline-sim", "--span", "2"], dir.path());
    assert_eq!(out.status.code(), Some(2));

    let missing = dir.path().join("nope.csv");
    let p = fixtures().join("People.csv");
    let out = aging(
        &[
            "pipeline-mlb",
            "--batting",
            missing.to_str().unwrap(),
            "--people",
            p.to_str().unwrap(),
        ],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(3));
    let marker = std::fs::read_to_string(dir.path().join("FAILED")).unwrap();
    assert!(marker.contains("stage = ingest"));

    // an impossible imputation: a fully observed panel
    let panel = dir.path().join("full.csv");
    let grid = AgeGrid::default();
    let values: Vec<f64> = (0..3)
        .flat_map(|p| grid.ages().map(move |a| 0.6 + 0.01 * f64::from(a % 7 + p)))
        .collect();
    let full = CareerPanel::fully_observed(
        vec!["a".into(), "b".into(), "c".into()],
        grid,
        values,
        TransformSpec::default(),
    )
    .unwrap();
    full.write_csv(std::fs::File::create(&panel).unwrap()).unwrap();
    let out = aging(&["impute", "--panel", panel.to_str().unwrap()], dir.path());
    assert_eq!(out.status.code(), Some(4));
    assert!(std::fs::read_to_string(dir.path().join("FAILED"))
        .unwrap()
        .contains("stage = impute"));
}

#[test]
fn manifest_reruns_the_same_study() {
    let dir = tempfile::tempdir().unwrap();
    let first = dir.path().join("first");
    let out = aging(
        &[
            "pipeline-sim",
            "--players",
            "150",
            "--seed",
            "9",
            "--mechanism",
            "random30",
            "--iters",
            "5",
        ],
        &first,
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let second = dir.path().join("second");
    let manifest = first.join("manifest.toml");
    let out = aging(&["run", "--config", manifest.to_str().unwrap()], &second);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for name in [
        "dropout_panel.csv",
        "imputed_2.csv",
        "pooled_curve.csv",
        "kde.csv",
        "traces.csv",
        "mae.txt",
    ] {
        assert_eq!(
            std::fs::read(first.join(name)).unwrap(),
            std::fs::read(second.join(name)).unwrap(),
            "{name}"
        );
    }
}

#[test]
fn stages_chain_through_files() {
    let dir = tempfile::tempdir().unwrap();
    let sim = dir.path().join("sim");
    let out = aging(&["simulate", "--players", "120", "--mechanism", "rolling4"], &sim);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let sidecar = std::fs::read_to_string(sim.join("dropout.toml")).unwrap();
    assert!(sidecar.contains("mechanism = \"rolling4\""));

    let fit = dir.path().join("fit");
    let dropped = sim.join("dropout_panel.csv");
    let out = aging(&["fit", "--panel", dropped.to_str().unwrap()], &fit);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let fit_file = fit.join("fit.txt");
    assert!(std::fs::read_to_string(&fit_file).unwrap().contains("tau2"));

    let resim = dir.path().join("resim");
    let out = aging(
        &["simulate", "--players", "50", "--fit", fit_file.to_str().unwrap()],
        &resim,
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let imp = dir.path().join("imp");
    let out = aging(
        &[
            "impute",
            "--panel",
            dropped.to_str().unwrap(),
            "--m",
            "2",
            "--iters",
            "4",
        ],
        &imp,
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let completed = std::fs::read_to_string(imp.join("imputed_2.csv")).unwrap();
    assert!(!completed.contains("NA"));

    let curve = dir.path().join("curve");
    let out = aging(&["curve", "--panel", dropped.to_str().unwrap()], &curve);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(parse_curve(&curve.join("curve_ops.csv")).len(), 19);
}
