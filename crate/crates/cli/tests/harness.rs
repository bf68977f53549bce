use std::path::Path;
use std::process::Command;

use fairgame_cli::config::{FisherSpec, PlayerSpec, PriorSpec, TableSpec};
use fairgame_cli::experiments::{fairshare_records, synthetic_rows};
use fairgame_cli::output::{
    emit_records, emit_svg, parse_records, parse_summary, parse_synthetic, record_rows, render_records, render_summary,
    render_synthetic, sha256_hex, summary_rows, Series, Style,
};
use fairgame_cli::{default_synthetic, run_experiment, ExperimentConfig, ExperimentKind};
use fairgame_core::{analytic_fisher, run_stats, FeatureTable};
use nalgebra::{DMatrix, DVector};

fn fairgame(args: &[&str], threads: Option<&str>) -> std::process::Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_fairgame"));
    cmd.args(args);
    match threads {
        Some(t) => cmd.env("FAIRGAME_THREADS", t),
        None => cmd.env_remove("FAIRGAME_THREADS"),
    };
    cmd.output().unwrap()
}

fn two_player(seed: u64, variances: [f64; 2]) -> ExperimentConfig {
    let mut cfg = default_synthetic(seed);
    cfg.experiment = ExperimentKind::Fairshare;
    cfg.players = variances.iter().map(|&v| PlayerSpec::Direct { variance: v }).collect();
    cfg.fairshare.iterations = 15;
    cfg
}

fn write_json(dir: &Path, name: &str, cfg: &ExperimentConfig) -> String {
    let path = dir.join(name);
    std::fs::write(&path, serde_json::to_vec_pretty(cfg).unwrap()).unwrap();
    path.display().to_string()
}

#[test]
fn smallest_synthetic_run() {
    let mut cfg = default_synthetic(3);
    cfg.synthetic.trials = 1;
    cfg.synthetic.m_grid = vec![16];
    let rows = synthetic_rows(&cfg.resolve(Path::new(".")).unwrap()).unwrap();
    assert_eq!(rows.len(), 3);
    assert_eq!(rows.iter().map(|r| r.pair).collect::<Vec<_>>(), vec![(0, 1), (0, 2), (1, 2)]);
    assert!(rows.iter().all(|r| r.m == 16 && r.trial == 0 && r.limit.is_finite()));
    assert_eq!(parse_synthetic(&render_synthetic(&rows).unwrap()).unwrap(), rows);
}

#[test]
fn default_synthetic_players_have_the_expected_fishers() {
    let resolved = default_synthetic(0).resolve(Path::new(".")).unwrap();
    let eye = DMatrix::<f64>::identity(4, 4);
    let expected = [eye.clone(), &eye * 0.4, &eye / 1.21];
    for (i, want) in expected.iter().enumerate() {
        let source = resolved.source(i, 0).unwrap();
        let sd = match source.model() {
            fairgame_core::PlayerModel::Linear(m) if !m.noise_known() => Some(m.true_noise_sd()),
            _ => None,
        };
        let got = analytic_fisher(source.model(), sd).unwrap();
        assert!((got.matrix() - want).amax() < 1e-14, "player {i}");
    }
}

#[test]
fn symmetric_players_satisfy_the_window_immediately() {
    let resolved = two_player(5, [1.0, 1.0]).resolve(Path::new(".")).unwrap();
    let (fs, records) = fairshare_records(&resolved).unwrap();
    let stats = run_stats(&records, &fs).unwrap();
    assert_eq!(stats[0].1.iter, Some(1));
}

#[test]
fn run_records_round_trip_through_csv() {
    let mut cfg = two_player(6, [1.0, 0.25]);
    cfg.players.push(PlayerSpec::Linear { noise_sd: 1.1, noise_known: false });
    let resolved = cfg.resolve(Path::new(".")).unwrap();
    let (fs, records) = fairshare_records(&resolved).unwrap();
    let rows = record_rows(&records);
    assert_eq!(rows.len(), 3 * records.len());
    assert_eq!(parse_records(&render_records(&rows).unwrap()).unwrap(), rows);
    let summary = summary_rows(&run_stats(&records, &fs).unwrap());
    assert_eq!(parse_summary(&render_summary(&summary).unwrap()).unwrap(), summary);
}

#[test]
fn empty_emits_create_no_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("records.csv");
    assert!(emit_records(&path, &[]).is_err());
    assert!(!path.exists());
    let svg = dir.path().join("plot.svg");
    assert!(emit_svg(&svg, "t", "x", "y", &[]).is_err());
    assert!(!svg.exists());
    let series = [Series { name: "a".into(), points: vec![], style: Style::Line, colour: 0 }];
    assert!(emit_svg(&svg, "t", "x", "y", &series).is_err());
    assert!(!svg.exists());
}

#[test]
fn fairshare_outputs_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let files = run_experiment(two_player(8, [1.0, 0.25]), Path::new("."), dir.path()).unwrap();
    let names: Vec<String> = files.iter().map(|f| f.file_name().unwrap().to_string_lossy().into_owned()).collect();
    assert_eq!(names, ["records.csv", "summary.csv", "shapley.svg", "counts.svg", "manifest.json"]);

    let records = std::fs::read_to_string(dir.path().join("records.csv")).unwrap();
    assert!(records.starts_with("iteration,player,m_cum,shapley,logdet_fisher_hat,delta\n"));
    for svg in ["shapley.svg", "counts.svg"] {
        let text = std::fs::read_to_string(dir.path().join(svg)).unwrap();
        assert_eq!(text.matches("<polyline").count(), 2, "{svg}");
    }
    let summary = std::fs::read_to_string(dir.path().join("summary.csv")).unwrap();
    assert!(summary.starts_with("pair,lowest,average,stdev,iter\n0-1,"));

    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 8);
    assert_eq!(manifest["experiment"], "fairshare");
    for out in manifest["outputs"].as_array().unwrap() {
        let bytes = std::fs::read(dir.path().join(out["path"].as_str().unwrap())).unwrap();
        assert_eq!(out["sha256"].as_str().unwrap(), sha256_hex(&bytes));
    }
    let resolved = &manifest["resolved_config"];
    assert_eq!(
        manifest["config_sha256"].as_str().unwrap(),
        sha256_hex(
            &serde_json::to_vec(&serde_json::from_value::<ExperimentConfig>(resolved.clone()).unwrap()).unwrap()
        )
    );
}

#[test]
fn csv_table_players_record_their_inputs() {
    let dir = tempfile::tempdir().unwrap();
    let table = FeatureTable::synthetic(400, &DVector::from_vec(vec![1.0, -1.0, 0.5, 2.0]), 0.5, 4).unwrap();
    let mut bytes = Vec::new();
    table.write_csv(&mut bytes).unwrap();
    std::fs::write(dir.path().join("features.csv"), &bytes).unwrap();

    let mut cfg = default_synthetic(2);
    cfg.experiment = ExperimentKind::Valuate;
    cfg.theta = None;
    cfg.players = vec![
        PlayerSpec::Bundle {
            table: TableSpec::Csv("features.csv".into()),
            pool_size: Some(200),
            subset_size: 12,
            sampling: fairgame_cli::config::SamplingSpec::Leverage,
            budget: None,
        },
        PlayerSpec::NoisyObserver {
            table: TableSpec::Csv("features.csv".into()),
            ratio: 0.5,
            nan_fraction: 0.2,
            sigma: 1.0,
            budget: None,
        },
    ];
    cfg.valuate.counts = Some(vec![30, 30]);
    let config_path = write_json(dir.path(), "config.json", &cfg);
    let out = dir.path().join("out");
    let status = fairgame(&["valuate", "--config", &config_path, "--out", out.to_str().unwrap()], None);
    assert!(status.status.success(), "{}", String::from_utf8_lossy(&status.stderr));

    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["inputs"][0]["path"], "features.csv");
    assert_eq!(manifest["inputs"][0]["sha256"].as_str().unwrap(), fairgame_cli::output::git_blob_hash(&bytes));
    let attribution = std::fs::read_to_string(out.join("attribution.csv")).unwrap();
    assert_eq!(attribution.lines().count(), 3);
    let game = std::fs::read_to_string(out.join("game.csv")).unwrap();
    assert_eq!(game.lines().count(), 5);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let out = out.to_str().unwrap();

    let mut bad = serde_json::to_value(two_player(1, [1.0, 1.0])).unwrap();
    bad["fairshare"]["iteratons"] = serde_json::json!(3);
    let path = dir.path().join("bad.json");
    std::fs::write(&path, bad.to_string()).unwrap();
    let res = fairgame(&["fairshare", "--config", path.to_str().unwrap(), "--out", out], None);
    assert_eq!(res.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&res.stderr);
    assert!(stderr.contains("fairshare") && stderr.contains("iteratons"), "{stderr}");

    assert_eq!(fairgame(&["synthetic", "--out", out], None).status.code(), Some(2));
    assert_eq!(fairgame(&["fairshare", "--out", out], None).status.code(), Some(2));

    let mut wrong_kind = two_player(1, [1.0, 1.0]);
    wrong_kind.prior = PriorSpec::Normal { mean: vec![0.0; 4], variance: 1.0 };
    let path = write_json(dir.path(), "fs.json", &wrong_kind);
    assert_eq!(fairgame(&["valuate", "--config", &path, "--out", out], None).status.code(), Some(2));

    let mut exhausted = two_player(1, [1.0, 1.0]);
    exhausted.theta = None;
    exhausted.players = vec![
        PlayerSpec::NoisyObserver {
            table: TableSpec::Synthetic { rows: 100, beta: vec![1.0, 2.0, 3.0, 4.0], noise_sd: 0.1, seed: 1 },
            ratio: 1.0,
            nan_fraction: 0.0,
            sigma: 1.0,
            budget: Some(20),
        };
        2
    ];
    exhausted.fairshare.fisher = FisherSpec::Analytic;
    let path = write_json(dir.path(), "ex.json", &exhausted);
    let res = fairgame(&["fairshare", "--config", &path, "--out", out], None);
    assert_eq!(res.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&res.stderr).contains("exhausted"));

    let res = fairgame(&["synthetic", "--seed", "1", "--out", out], Some("zero"));
    assert_eq!(res.status.code(), Some(2));
}

#[test]
fn seed_and_trials_flags_override_the_config() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = default_synthetic(1);
    cfg.synthetic.m_grid = vec![16, 32];
    let path = write_json(dir.path(), "syn.json", &cfg);
    let out = dir.path().join("o");
    let res = fairgame(
        &["synthetic", "--config", &path, "--seed", "42", "--trials", "2", "--out", out.to_str().unwrap()],
        None,
    );
    assert!(res.status.success());
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 42);
    assert_eq!(manifest["resolved_config"]["synthetic"]["trials"], 2);
    assert_eq!(std::fs::read_to_string(out.join("synthetic.csv")).unwrap().lines().count(), 1 + 2 * 2 * 3);
}
