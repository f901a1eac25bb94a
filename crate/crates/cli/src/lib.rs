//! Subcommands of the `smrc` binary: training runs, evaluation sweeps,
//! figures and the multicast cost planner.

use std::fs;
use std::path::{Path, PathBuf};

use num_rational::Rational64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use smrc::config::{CodecConfig, ExperimentConfig};
use smrc::data::{load_dataset, Split};
use smrc::evaluation::{
    beta_scheme_report, crossed_recall_sweep, snr_sweep, sscc_curve, write_beta_csv, BetaRow, CrossedRow, ImageCodec, LadderCodec, McsTable,
    SweepResult,
};
use smrc::model::{ModelTopology, SmrcModel};
use smrc::objective::LossConfig;
use smrc::planner::{breakeven_eta, parse_exact, parse_tier_table, example_tiers, MulticastPlan};
use smrc::training::{raw_extractor_accuracy, run_training, Trainer};
use smrc::{plot, Checkpoint32, Dataset32, Error, Model32, Result};

pub const CONFIG_SNAPSHOT: &str = "config.json";
pub const LOCK_FILE: &str = ".lock";
pub const RESULTS_FILE: &str = "results.json";
pub const DEFAULT_ETA: &str = "1.05";

/// 1 for invalid input, 2 for failures while computing, 3 for I/O and
/// external tools.
pub fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Shape(_) | Error::Domain(_) | Error::Config(_) | Error::Parse { .. } | Error::Scenario(_) => 1,
        Error::DegenerateInput | Error::Divergence { .. } => 2,
        Error::Load { .. } | Error::ExternalTool(_) | Error::Io(_) | Error::Json(_) | Error::Csv(_) => 3,
    }
}

/// Command-line values that take precedence over the config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub snr_grid: Option<Vec<f64>>,
}

/// Comma-separated SNR list, e.g. `0,4,8,12`.
pub fn parse_grid(text: &str) -> Result<Vec<f64>> {
    text.split(',')
        .map(|s| {
            let s = s.trim();
            s.parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| Error::Config(format!("--snr-grid: '{s}' is not a number")))
        })
        .collect()
}

pub fn load_config(path: &Path, overrides: &Overrides) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::from_path(path)?;
    if let Some(o) = &overrides.out {
        cfg.output_dir = o.clone();
    }
    if let Some(s) = overrides.seed {
        cfg.seed = s;
    }
    if let Some(g) = &overrides.snr_grid {
        cfg.channel.snr_db = g.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Held while a command writes into a run directory.
struct RunLock(PathBuf);

impl RunLock {
    fn acquire(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir)?;
        let path = dir.join(LOCK_FILE);
        match fs::OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(_) => Ok(Self(path)),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                Err(Error::Config(format!("{} is locked by another run; remove {} if it is stale", dir.display(), path.display())))
            }
            Err(e) => Err(e.into()),
        }
    }
}

impl Drop for RunLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.0);
    }
}

pub fn snr_dir(run: &Path, snr_db: f64) -> PathBuf {
    run.join(format!("snr_{snr_db}"))
}

pub fn baseline_dir(run: &Path, snr_db: f64) -> PathBuf {
    run.join("baseline").join(format!("snr_{snr_db}"))
}

fn load_split(cfg: &ExperimentConfig, split: Split) -> Result<Dataset32> {
    let data = load_dataset(cfg.data.spec(split), &cfg.data.resolved_root())?;
    let limit = match split {
        Split::Train => cfg.data.train_subset,
        Split::Test => cfg.data.test_subset,
    };
    Ok(match limit {
        Some(n) => data.take(n),
        None => data,
    })
}

fn baseline_loss(cfg: &ExperimentConfig, topo: &ModelTopology, reference: &LossConfig) -> LossConfig {
    let alpha = reference.alpha.last().and_then(|a| a.first()).copied().unwrap_or(1.0);
    let mut loss = LossConfig::uniform(topo, alpha, 1.0);
    loss.mse_reduction = cfg.loss.mse_reduction;
    loss
}

/// Creates the run directory for `cfg`, refusing to reuse one that already
/// holds a run unless `force` is set, and writes the resolved config.
fn open_run(cfg: &ExperimentConfig, force: bool) -> Result<(PathBuf, RunLock)> {
    let dir = cfg.run_dir()?;
    let snapshot = dir.join(CONFIG_SNAPSHOT);
    if snapshot.exists() && !force {
        return Err(Error::Config(format!("{} already holds this run (config hash {}); pass --force to overwrite", dir.display(), cfg.hash()?)));
    }
    let lock = RunLock::acquire(&dir)?;
    fs::write(&snapshot, cfg.to_json()?)?;
    Ok((dir, lock))
}

/// Trains one model per training SNR, plus the single-head baseline when
/// enabled, and returns the run directory.
pub fn cmd_train(config: &Path, overrides: &Overrides, force: bool) -> Result<PathBuf> {
    let cfg = load_config(config, overrides)?;
    let topo = cfg.topology()?;
    let loss = cfg.loss(&topo)?;
    let arch = cfg.architecture();
    let (dir, _lock) = open_run(&cfg, force)?;
    let train = load_split(&cfg, Split::Train)?;
    eprintln!("run {} ({} training examples)", dir.display(), train.len());
    for &snr in &cfg.channel.snr_db {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let model = Model32::new(topo.clone(), arch.clone(), &mut rng)?;
        let out = run_training(model, &train, loss.clone(), cfg.train_config(snr), Some(&snr_dir(&dir, snr)))?;
        eprintln!("  {snr} dB: final total loss {:.5}", out.epochs.last().map_or(f64::NAN, |e| e.total));
        if cfg.eval.single_head_baseline {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            let base = Model32::single_head_baseline(&topo, arch.clone(), &mut rng)?;
            let base_loss = baseline_loss(&cfg, base.topology(), &loss);
            let out = run_training(base, &train, base_loss, cfg.train_config(snr), Some(&baseline_dir(&dir, snr)))?;
            eprintln!("  {snr} dB baseline: final total loss {:.5}", out.epochs.last().map_or(f64::NAN, |e| e.total));
        }
    }
    Ok(dir)
}

/// Raw-image accuracy of one extractor after pretraining.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PretrainRow {
    pub layer: usize,
    pub head: usize,
    pub train_loss: f64,
    pub test_accuracy: f64,
}

/// Pretrains the semantic extractors on raw images and reports their test
/// accuracy; writes `pretrain/pretrain.csv` in the run directory.
pub fn cmd_pretrain(config: &Path, overrides: &Overrides) -> Result<Vec<PretrainRow>> {
    let cfg = load_config(config, overrides)?;
    let topo = cfg.topology()?;
    let loss = cfg.loss(&topo)?;
    let dir = cfg.run_dir()?.join("pretrain");
    let _lock = RunLock::acquire(&dir)?;
    let train = load_split(&cfg, Split::Train)?;
    let test = load_split(&cfg, Split::Test)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let model = Model32::new(topo.clone(), cfg.architecture(), &mut rng)?;
    let mut trainer = Trainer::new(model, loss, cfg.train_config(cfg.channel.snr_db[0]))?;
    let curve = trainer.pretrain_extractors(&train, cfg.train.pretrain_epochs)?;
    let last = curve.last().copied().unwrap_or(f64::NAN);
    let mut rows = Vec::new();
    for (l, k) in topo.links() {
        let acc = raw_extractor_accuracy(trainer.model(), &test, l, k)?;
        rows.push(PretrainRow { layer: l + 1, head: k + 1, train_loss: last, test_accuracy: acc });
    }
    let mut w = csv_writer(&dir.join("pretrain.csv"))?;
    for r in &rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(rows)
}

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    Ok(csv::Writer::from_path(path)?)
}

/// Everything `eval` computes; persisted so `plot` can redraw figures.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResults {
    pub num_classes: usize,
    pub sweep: SweepResult,
    pub baseline: Option<SweepResult>,
    pub sscc: Vec<(f64, f64)>,
    pub sscc_codec: String,
    /// Whether the last layer beats separate coding at every grid point;
    /// only computed with an external codec.
    pub jscc_beats_sscc: Option<bool>,
    pub crossed: Vec<CrossedRow>,
    pub beta: Option<Vec<BetaRow>>,
    pub beta_keep: usize,
}

fn load_run_config(run: &Path) -> Result<ExperimentConfig> {
    let cfg = ExperimentConfig::from_path(&run.join(CONFIG_SNAPSHOT))?;
    cfg.validate()?;
    Ok(cfg)
}

fn load_models(dirs: &[(f64, PathBuf)], topo: Option<&ModelTopology>) -> Result<Vec<(f64, Model32)>> {
    dirs.iter().map(|(snr, d)| Ok((*snr, Checkpoint32::load(&d.join("checkpoint.json"), topo)?.model))).collect()
}

fn codec(cfg: &ExperimentConfig) -> (Box<dyn ImageCodec>, String) {
    match &cfg.eval.codec {
        CodecConfig::Ladder => (Box::new(LadderCodec::default()), "ladder".to_string()),
        CodecConfig::External(e) => (Box::new(e.clone()), format!("external:{}", e.program)),
    }
}

/// Evaluates every checkpoint of a run at its training SNR (or the given
/// subset of the grid), writes CSVs, `results.json` and figures.
pub fn cmd_eval(run: &Path, grid: Option<&[f64]>) -> Result<EvalResults> {
    let cfg = load_run_config(run)?;
    let topo = cfg.topology()?;
    let grid: Vec<f64> = grid.map(<[f64]>::to_vec).unwrap_or_else(|| cfg.channel.snr_db.clone());
    let test = load_split(&cfg, Split::Test)?;
    let heads: Option<Vec<usize>> = cfg.eval.sweep_heads.as_ref().map(|h| h.iter().map(|k| k - 1).collect());
    let seed = cfg.eval.seed;

    let models = load_models(&grid.iter().map(|&s| (s, snr_dir(run, s))).collect::<Vec<_>>(), Some(&topo))?;
    let refs: Vec<(f64, &SmrcModel<f32>)> = models.iter().map(|(s, m)| (*s, m)).collect();
    let sweep = snr_sweep(&refs, &test, &grid, heads.as_deref(), seed)?;
    write_sweep(&run.join("sweep.csv"), &sweep, topo.num_classes)?;

    let baseline = if cfg.eval.single_head_baseline {
        let base = load_models(&grid.iter().map(|&s| (s, baseline_dir(run, s))).collect::<Vec<_>>(), None)?;
        let refs: Vec<(f64, &SmrcModel<f32>)> = base.iter().map(|(s, m)| (*s, m)).collect();
        let b = snr_sweep(&refs, &test, &grid, None, seed)?;
        write_sweep(&run.join("baseline_sweep.csv"), &b, topo.num_classes)?;
        Some(b)
    } else {
        None
    };

    let table = match &cfg.eval.mcs_table {
        Some(p) => McsTable::from_path(p)?,
        None => McsTable::lte_cqi(),
    };
    let (codec, codec_name) = codec(&cfg);
    let sscc = sscc_curve(&test, cfg.eval.sscc_images, &grid, &table, codec.as_ref(), topo.total_symbols())?;
    let mut w = csv_writer(&run.join("sscc.csv"))?;
    for &(snr_db, psnr_db) in &sscc {
        w.serialize(&SsccRow { snr_db, psnr_db })?;
    }
    w.flush()?;
    let jscc_beats_sscc = matches!(cfg.eval.codec, CodecConfig::External(_)).then(|| {
        let last = topo.num_layers();
        sscc.iter().all(|&(snr, s)| sweep.row(snr, last).is_some_and(|r| r.psnr_db > s))
    });

    let crossed = if cfg.eval.crossed_first_db.is_empty() {
        Vec::new()
    } else {
        let at = cfg.eval.crossed_model_snr_db.unwrap_or(cfg.channel.snr_db[0]);
        let model = Checkpoint32::load(&snr_dir(run, at).join("checkpoint.json"), Some(&topo))?.model;
        let rows = crossed_recall_sweep(&model, &test, &cfg.eval.crossed_first_db, &cfg.eval.crossed_later_db, heads.as_deref(), seed)?;
        let mut w = csv_writer(&run.join("crossed.csv"))?;
        for r in &rows {
            w.serialize(r)?;
        }
        w.flush()?;
        rows
    };

    let (beta, beta_keep) = match &cfg.eval.beta_schemes {
        Some(b) => {
            let model = Checkpoint32::load(&snr_dir(run, b.snr_db).join("checkpoint.json"), Some(&topo))?.model;
            let rows = beta_scheme_report(&model, &test, b.snr_db, &b.schemes(), b.keep, seed)?;
            write_beta_csv(&rows, fs::File::create(run.join("beta.csv"))?)?;
            (Some(rows), b.keep)
        }
        None => (None, 0),
    };

    let results = EvalResults {
        num_classes: topo.num_classes,
        sweep,
        baseline,
        sscc,
        sscc_codec: codec_name,
        jscc_beats_sscc,
        crossed,
        beta,
        beta_keep,
    };
    fs::write(run.join(RESULTS_FILE), serde_json::to_string_pretty(&results)?)?;
    render(run, &results)?;
    Ok(results)
}

#[derive(Serialize)]
struct SsccRow {
    snr_db: f64,
    psnr_db: f64,
}

fn write_sweep(path: &Path, sweep: &SweepResult, num_classes: usize) -> Result<()> {
    sweep.write_csv(fs::File::create(path)?, num_classes)
}

fn render(run: &Path, r: &EvalResults) -> Result<Vec<PathBuf>> {
    let mut out = vec![run.join("psnr.svg"), run.join("recall.svg")];
    plot::psnr_figure(&out[0], &r.sweep, r.baseline.as_ref(), Some(&r.sscc))?;
    plot::recall_figure(&out[1], &r.sweep, &r.crossed)?;
    if let Some(rows) = &r.beta {
        let p = run.join("beta.svg");
        plot::beta_figure(&p, rows, r.beta_keep)?;
        out.push(p);
    }
    Ok(out)
}

/// Redraws the figures of an evaluated run.
pub fn cmd_plot(run: &Path) -> Result<Vec<PathBuf>> {
    let path = run.join(RESULTS_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::Load { path: path.clone(), reason: format!("{e}; run eval first") })?;
    let results: EvalResults = serde_json::from_str(&text)?;
    render(run, &results)
}

/// Printed report and an optional note for stderr.
#[derive(Debug, Clone, PartialEq)]
pub struct PlanReport {
    pub plan: MulticastPlan<Rational64>,
    pub text: String,
    pub note: Option<String>,
}

fn ratio(r: Rational64) -> f64 {
    *r.numer() as f64 / *r.denom() as f64
}

/// Costs of serving every tier, in units of the base block size `B`.
/// `tiers` is a CSV table path; without it the four-tier example is used.
pub fn cmd_plan(tiers: Option<&Path>, eta: Option<&str>) -> Result<PlanReport> {
    let spec = match tiers {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| Error::Load { path: p.to_path_buf(), reason: e.to_string() })?;
            parse_tier_table(&text)?
        }
        None => example_tiers(),
    };
    let note = eta.is_none().then(|| format!("note: --eta not given, using {DEFAULT_ETA}"));
    let eta_text = eta.unwrap_or(DEFAULT_ETA);
    let eta = parse_exact(eta_text).ok_or_else(|| Error::Config(format!("--eta: '{eta_text}' is not a number")))?;
    let plan = MulticastPlan::new(&spec, eta)?;
    let (vs_a, vs_b) = plan.savings();
    let mut text = String::new();
    text += &format!("tiers: {}\n", spec.len());
    text += &format!("cost_a (each tier separately):       {:.2}B  ({})\n", ratio(plan.cost_separate), plan.cost_separate);
    text += &format!("cost_b (best block at weakest rate): {:.2}B  ({})\n", ratio(plan.cost_single_best), plan.cost_single_best);
    text += &format!("cost_c (multi-resolution, eta={}):  {:.2}B  ({})\n", eta_text, ratio(plan.cost_mr), plan.cost_mr);
    text += &format!("cost_c/cost_a = {:.3}, cost_c/cost_b = {:.3}\n", ratio(vs_a), ratio(vs_b));
    if let Some(b) = breakeven_eta(&spec) {
        text += &format!("break-even eta against cost_b: {} ({:.3})\n", b, ratio(b));
    }
    Ok(PlanReport { plan, text, note })
}
