use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use smrc::config::ExperimentConfig;
use smrc::data::ImageShape;
use smrc::evaluation::SweepResult;
use smrc::model::Architecture;

fn smrc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_smrc")).args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn data_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data")
}

/// Small MNIST run: a few hundred examples, one epoch, narrow network.
fn tiny_config(dir: &Path, extra: &str) -> PathBuf {
    let text = format!(
        r#"{{
            "seed": 5,
            "output_dir": "{out}",
            "data": {{"name": "mnist", "root": "{root}", "train_subset": 128, "test_subset": 100}},
            "topology": {{"layers": [{{"symbols": 8}}, {{"symbols": 8}}]}},
            "train": {{"epochs": 1, "pretrain_epochs": 1, "batch_size": 32}},
            "channel": {{"snr_db": [0, 4, 8, 12]}}
            {extra}
        }}"#,
        out = dir.join("runs").display(),
        root = data_root().display(),
    );
    let mut cfg = ExperimentConfig::from_json(&text).unwrap();
    cfg.eval.sscc_images = 10;
    cfg.arch = Some(Architecture::conv_pair(ImageShape::new(1, 28, 28), 2));
    let path = dir.join("config.json");
    std::fs::write(&path, cfg.to_json().unwrap()).unwrap();
    path
}

#[test]
fn plan_prints_the_worked_example() {
    let o = smrc(&["plan"]);
    assert!(o.status.success());
    let out = stdout(&o);
    for cost in ["21.00B", "18.00B", "11.05B", "221/20"] {
        assert!(out.contains(cost), "{cost} missing from\n{out}");
    }
    assert!(stderr(&o).contains("using 1.05"));

    let o = smrc(&["plan", "--eta", "1"]);
    assert!(o.status.success());
    assert!(stdout(&o).contains("10.67B") && stderr(&o).is_empty());
}

#[test]
fn plan_reads_tables_and_reports_bad_lines() {
    let dir = tempfile::tempdir().unwrap();
    let good = dir.path().join("good.csv");
    std::fs::write(&good, "block_symbols,rate\n1,1/3\n2,1/2\n4,2/3\n6,3/4\n").unwrap();
    let o = smrc(&["plan", "--tiers", good.to_str().unwrap(), "--eta", "1.05"]);
    assert!(o.status.success());
    assert!(stdout(&o).contains("11.05B"));

    let bad = dir.path().join("bad.csv");
    std::fs::write(&bad, "block_symbols,rate\n1,1/3\n2,-1/2\n").unwrap();
    let o = smrc(&["plan", "--tiers", bad.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("line 3"), "{}", stderr(&o));

    let o = smrc(&["plan", "--tiers", dir.path().join("absent.csv").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn train_rejects_symbol_mismatch() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path(), "");
    let mut c = ExperimentConfig::from_path(&cfg).unwrap();
    c.topology.layers.iter_mut().for_each(|l| l.symbols = 40);
    c.topology.decoder_input_symbols = Some(vec![40, 100]);
    std::fs::write(&cfg, c.to_json().unwrap()).unwrap();
    let o = smrc(&["train", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    let err = stderr(&o);
    assert!(err.contains("decoder_input_symbols[1]") && err.contains("100"), "{err}");
    assert!(!dir.path().join("runs").exists());
}

#[test]
fn train_eval_plot_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path(), "");
    let o = smrc(&["train", "--config", cfg.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let run = PathBuf::from(stdout(&o).trim());
    assert!(run.starts_with(dir.path().join("runs")));
    assert!(run.join("config.json").is_file());
    assert!(!run.join(".lock").exists());
    for snr in ["0", "4", "8", "12"] {
        assert!(run.join(format!("snr_{snr}/checkpoint.json")).is_file());
        assert!(run.join(format!("snr_{snr}/curve.csv")).is_file());
        assert!(run.join(format!("baseline/snr_{snr}/checkpoint.json")).is_file());
    }
    let snapshot = ExperimentConfig::from_path(&run.join("config.json")).unwrap();
    assert_eq!(snapshot.run_dir().unwrap(), run);

    let again = smrc(&["train", "--config", cfg.to_str().unwrap()]);
    assert_eq!(again.status.code(), Some(1));
    assert!(stderr(&again).contains("--force"));

    let o = smrc(&["eval", run.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("informational"));
    let sweep = std::fs::read_to_string(run.join("sweep.csv")).unwrap();
    assert_eq!(sweep.lines().count(), 9);
    assert_eq!(sweep.lines().next().unwrap(), SweepResult::header(10).join(","));
    assert_eq!(std::fs::read_to_string(run.join("baseline_sweep.csv")).unwrap().lines().count(), 5);
    assert_eq!(std::fs::read_to_string(run.join("sscc.csv")).unwrap().lines().next().unwrap(), "snr_db,psnr_db");
    for fig in ["psnr.svg", "recall.svg"] {
        let p = run.join(fig);
        std::fs::remove_file(&p).unwrap();
        let o = smrc(&["plot", run.to_str().unwrap()]);
        assert!(o.status.success(), "{}", stderr(&o));
        assert!(std::fs::metadata(&p).unwrap().len() > 0);
    }

    let o = smrc(&["eval", run.to_str().unwrap(), "--snr-grid", "0,20"]);
    assert_ne!(o.status.code(), Some(0));
    assert!(stderr(&o).contains("snr_20"), "{}", stderr(&o));

    let o = smrc(&["train", "--config", cfg.to_str().unwrap(), "--snr-grid", "4", "--seed", "9"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_ne!(PathBuf::from(stdout(&o).trim()), run);

    let o = smrc(&["train", "--config", cfg.to_str().unwrap(), "--force"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(PathBuf::from(stdout(&o).trim()), run);
}

#[test]
fn locked_run_is_refused() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path(), "");
    let run = ExperimentConfig::from_path(&cfg).unwrap().run_dir().unwrap();
    std::fs::create_dir_all(&run).unwrap();
    std::fs::write(run.join(".lock"), "").unwrap();
    let o = smrc(&["train", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("locked"));
}

#[test]
fn beta_run_emits_all_figures() {
    let dir = tempfile::tempdir().unwrap();
    let extra = r#", "loss": {"beta": {"2": {"1": [1,1,1,1,1,0,0,0,0,0], "2": [1,1,1,1,1,0.5,0.5,0.5,0.5,0.5]}}},
        "eval": {"single_head_baseline": false, "sweep_heads": [1, 2],
                 "beta_schemes": {"keep": 5, "dropped_head": 1, "halved_head": 2, "pooled_head": 3, "snr_db": 8},
                 "crossed_first_db": [0, 8], "crossed_later_db": [0, 15], "crossed_model_snr_db": 8}"#;
    let cfg = tiny_config(dir.path(), extra);
    let mut c = ExperimentConfig::from_path(&cfg).unwrap();
    let heads = r#"[{"classes": "all"}, {"classes": "all"}, {"classes": {"pool_tail": {"keep": 5}}}]"#;
    c.topology.layers[1].heads = serde_json::from_str(heads).unwrap();
    c.channel.snr_db = vec![8.0];
    std::fs::write(&cfg, c.to_json().unwrap()).unwrap();

    let o = smrc(&["train", "--config", cfg.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let run = PathBuf::from(stdout(&o).trim());
    assert!(!run.join("baseline").exists());
    let o = smrc(&["eval", run.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let beta = std::fs::read_to_string(run.join("beta.csv")).unwrap();
    assert_eq!(beta.lines().next().unwrap(), "scheme,layer,recall_0_4,precision_0_4,recall_5_9,precision_5_9");
    assert_eq!(beta.lines().count(), 5);
    assert_eq!(std::fs::read_to_string(run.join("crossed.csv")).unwrap().lines().count(), 1 + 2 * 2 * 2);
    for fig in ["psnr.svg", "recall.svg", "beta.svg"] {
        assert!(std::fs::metadata(run.join(fig)).unwrap().len() > 0, "{fig}");
    }
}

#[test]
fn pretrain_reports_every_extractor() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path(), "");
    let o = smrc(&["pretrain", "--config", cfg.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(stdout(&o).lines().filter(|l| l.contains("raw test accuracy")).count(), 2);
}

#[test]
fn missing_data_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path(), "");
    let mut c = ExperimentConfig::from_path(&cfg).unwrap();
    c.data.root = Some(dir.path().join("nowhere"));
    std::fs::write(&cfg, c.to_json().unwrap()).unwrap();
    let o = smrc(&["train", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
}
