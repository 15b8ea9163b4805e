use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use fofl_cli::config::{preset, ExperimentConfig, Preset};
use fofl_cli::run::read_model;
use fofl_core::fedcore::model_for;

fn fofl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fofl")).args(args).output().expect("binary runs")
}

fn smoke_config(dir: &Path, tweak: impl FnOnce(&mut ExperimentConfig)) -> PathBuf {
    let mut cfg = preset(Preset::Smoke);
    cfg.data_dir = dir.join("data");
    cfg.output_dir = dir.join("runs");
    tweak(&mut cfg);
    let path = dir.join("config.json");
    fs::write(&path, cfg.to_json()).unwrap();
    path
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn ok(out: &Output) {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
}

/// CSV text with the timing columns removed.
fn without_timing(csv: &str) -> String {
    csv.lines()
        .map(|l| l.split(',').take(9).collect::<Vec<_>>().join(","))
        .collect::<Vec<_>>()
        .join("\n")
}

#[test]
fn shipped_configs_parse_validate_and_round_trip() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut n = 0;
    for entry in fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "json") {
            let cfg = ExperimentConfig::load(&path).unwrap();
            let back: ExperimentConfig = serde_json::from_str(&cfg.to_json()).unwrap();
            assert_eq!(back, cfg, "{}", path.display());
            n += 1;
        }
    }
    assert!(n >= 3);
}

#[test]
fn generate_data_is_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = smoke_config(tmp.path(), |_| {});
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    ok(&fofl(&["generate-data", "--config", s(&cfg), "--out", s(&a)]));
    ok(&fofl(&["generate-data", "--config", s(&cfg), "--out", s(&b)]));
    let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(a.join("manifest.json")).unwrap()).unwrap();
    let clients = manifest["clients"].as_array().unwrap();
    assert_eq!(clients.len(), 4);
    for name in ["manifest.json", "clients/client_000.csv", "clients/client_003.csv"] {
        assert_eq!(fs::read(a.join(name)).unwrap(), fs::read(b.join(name)).unwrap(), "{name}");
    }
}

#[test]
fn single_client_config() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = smoke_config(tmp.path(), |c| {
        c.fed.clients = 1;
        c.fleet.num_clients = 1;
    });
    ok(&fofl(&["generate-data", "--config", s(&cfg)]));
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(tmp.path().join("data/manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["clients"].as_array().unwrap().len(), 1);
    ok(&fofl(&["run", "--config", s(&cfg), "--seed", "3"]));
    assert!(tmp.path().join("runs/seed_3/summary.json").is_file());
}

#[test]
fn run_writes_artifacts_and_replays() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = smoke_config(tmp.path(), |_| {});
    ok(&fofl(&["generate-data", "--config", s(&cfg)]));
    let (a, b) = (tmp.path().join("ra"), tmp.path().join("rb"));
    ok(&fofl(&["run", "--config", s(&cfg), "--seed", "1", "--out", s(&a)]));
    ok(&fofl(&["run", "--config", s(&cfg), "--seed", "1", "--out", s(&b)]));

    let csv_a = fs::read_to_string(a.join("seed_1/metrics_round.csv")).unwrap();
    let csv_b = fs::read_to_string(b.join("seed_1/metrics_round.csv")).unwrap();
    assert_eq!(csv_a.lines().count(), 1 + 5);
    assert!(csv_a.starts_with("seed,round,algorithm,rmse,mae,mape,d_mean,d_cv,n_participants,t_train_s,t_diag_s"));
    assert_eq!(without_timing(&csv_a), without_timing(&csv_b));
    assert_eq!(fs::read(a.join("seed_1/model_final.bin")).unwrap(), fs::read(b.join("seed_1/model_final.bin")).unwrap());

    let loaded = ExperimentConfig::load(&cfg).unwrap();
    let data = fofl_cli::data::load_datasets(&loaded, &loaded.data_dir).unwrap();
    let params = read_model(&fs::read(a.join("seed_1/model_final.bin")).unwrap()).unwrap();
    assert_eq!(params.len(), model_for(&loaded.fed, &data).unwrap().num_params());

    let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(a.join("seed_1/summary.json")).unwrap()).unwrap();
    assert_eq!(summary["algorithm"], "FO-RI-FedAvg");
    assert_eq!(summary["rounds"], 5);
    assert!(summary["final_metrics"]["rmse"].as_f64().unwrap() >= summary["final_metrics"]["mae"].as_f64().unwrap());
}

#[test]
fn algorithm_override_and_unknown_name() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = smoke_config(tmp.path(), |_| {});
    ok(&fofl(&["generate-data", "--config", s(&cfg)]));
    ok(&fofl(&["run", "--config", s(&cfg), "--seed", "2", "--algorithm", "SCAFFOLD"]));
    let csv = fs::read_to_string(tmp.path().join("runs/seed_2/metrics_round.csv")).unwrap();
    assert!(csv.lines().nth(1).unwrap().contains(",SCAFFOLD,"));

    let out = fofl(&["run", "--config", s(&cfg), "--seed", "2", "--algorithm", "FedMagic"]);
    assert_eq!(out.status.code(), Some(3));
    let err = String::from_utf8_lossy(&out.stderr);
    for name in ["FedAvg", "FedProx", "SCAFFOLD", "FedNova", "FedAdam", "RI-FedAvg", "FO-FedAvg", "FO-RI-FedAvg"] {
        assert!(err.contains(name), "{err}");
    }
}

#[test]
fn error_classes_have_distinct_exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = smoke_config(tmp.path(), |_| {});
    let out = fofl(&["run", "--config", s(&cfg), "--seed", "1"]);
    assert_eq!(out.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&out.stderr).contains("generate-data"));

    let bad = tmp.path().join("bad.json");
    let mut v: serde_json::Value = serde_json::from_str(&fs::read_to_string(&cfg).unwrap()).unwrap();
    v["fed"]["participation"] = serde_json::json!(1.5);
    fs::write(&bad, v.to_string()).unwrap();
    assert_eq!(fofl(&["generate-data", "--config", s(&bad)]).status.code(), Some(3));
    fs::write(&bad, "{ not json").unwrap();
    assert_eq!(fofl(&["run", "--config", s(&bad)]).status.code(), Some(3));
    assert_eq!(fofl(&["run", "--config", "/nonexistent/cfg.json"]).status.code(), Some(3));
    assert_eq!(fofl(&["run"]).status.code(), Some(2));
}

#[test]
fn report_pools_seeds_and_refuses_mixed_configs() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = smoke_config(tmp.path(), |_| {});
    ok(&fofl(&["generate-data", "--config", s(&cfg)]));
    for seed in ["1", "2"] {
        ok(&fofl(&["run", "--config", s(&cfg), "--seed", seed, "--algorithm", "FedAvg"]));
    }
    let other = tmp.path().join("other");
    ok(&fofl(&["run", "--config", s(&cfg), "--seed", "1", "--algorithm", "FO-RI-FedAvg", "--out", s(&other)]));

    let rep = tmp.path().join("rep/summary.csv");
    ok(&fofl(&["report", "--runs", s(&tmp.path().join("runs")), s(&other), "--out", s(&rep)]));
    let text = fs::read_to_string(&rep).unwrap();
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 2);
    let col = |name: &str| header.iter().position(|h| *h == name).unwrap();
    let fedavg = rows.iter().find(|r| r[0] == "FedAvg").unwrap();
    assert_eq!(fedavg[col("n_seeds")], "2");
    let single = rows.iter().find(|r| r[0] == "FO-RI-FedAvg").unwrap();
    assert_eq!(single[col("rmse_std")], "0");
    for f in ["summary.json", "summary_sweep.csv", "summary_rounds_to_threshold.csv"] {
        assert!(tmp.path().join("rep").join(f).is_file(), "{f}");
    }

    fs::create_dir_all(tmp.path().join("m")).unwrap();
    let mixed_cfg = smoke_config(&tmp.path().join("m"), |c| c.fed.eta0 = 0.01);
    ok(&fofl(&["generate-data", "--config", s(&mixed_cfg)]));
    ok(&fofl(&["run", "--config", s(&mixed_cfg), "--seed", "1"]));
    let out = fofl(&["report", "--runs", s(&tmp.path().join("runs")), s(&tmp.path().join("m/runs")), "--out", s(&rep)]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("different configurations"));
}

#[test]
fn presets_materialize() {
    let out = fofl(&["print-config", "--preset", "full"]);
    ok(&out);
    let cfg: ExperimentConfig = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!((cfg.fed.clients, cfg.fed.rounds), (100, 300));
}
