//! Experiment configuration: one JSON document that fixes data, topology,
//! loss, training, channel and evaluation settings, and whose hash names the
//! run.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::channel::ChannelScenario;
use crate::data::{DatasetName, DatasetSpec, PoolingMap, Split};
use crate::error::{Error, Result};
use crate::evaluation::{BetaScheme, ExternalCodec};
use crate::model::{Architecture, HeadTopology, LayerTopology, ModelTopology};
use crate::objective::{LossConfig, MseReduction};
use crate::training::{fingerprint, TrainConfig};

/// Environment variable consulted when `data.root` is absent.
pub const DATA_ROOT_ENV: &str = "SMRC_DATA_ROOT";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub name: DatasetName,
    #[serde(default)]
    pub root: Option<PathBuf>,
    #[serde(default)]
    pub train_subset: Option<usize>,
    #[serde(default)]
    pub test_subset: Option<usize>,
}

impl DataConfig {
    pub fn spec(&self, split: Split) -> DatasetSpec {
        DatasetSpec::new(self.name, split)
    }

    /// `root`, else the environment variable, else `./data`.
    pub fn resolved_root(&self) -> PathBuf {
        self.root
            .clone()
            .or_else(|| std::env::var_os(DATA_ROOT_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("data"))
    }
}

/// Class set of a head: all dataset classes, the first `keep` classes plus
/// one catch-all, or an explicit pooling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassSet {
    All,
    PoolTail { keep: usize },
    Mapping { mapping: Vec<usize>, catch_all: Option<usize> },
}

impl ClassSet {
    pub fn to_pooling(&self, num_classes: usize) -> Result<PoolingMap> {
        match self {
            Self::All => Ok(PoolingMap::identity(num_classes)),
            Self::PoolTail { keep } => PoolingMap::pool_tail(num_classes, *keep),
            Self::Mapping { mapping, catch_all } => PoolingMap::new(mapping.clone(), *catch_all),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeadConfig {
    #[serde(default = "all_classes")]
    pub classes: ClassSet,
}

fn all_classes() -> ClassSet {
    ClassSet::All
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerConfig {
    pub symbols: usize,
    #[serde(default = "one_head")]
    pub heads: Vec<HeadConfig>,
}

fn one_head() -> Vec<HeadConfig> {
    vec![HeadConfig { classes: ClassSet::All }]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopologyConfig {
    pub layers: Vec<LayerConfig>,
    /// Optional check: symbols each layer's decoders expect.
    #[serde(default)]
    pub decoder_input_symbols: Option<Vec<usize>>,
}

/// A value for every link, or one per `[layer][head]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PerLink {
    Uniform(f64),
    Each(Vec<Vec<f64>>),
}

impl PerLink {
    fn expand(&self, topo: &ModelTopology, what: &str) -> Result<Vec<Vec<f64>>> {
        match self {
            Self::Uniform(v) => Ok(topo.layers.iter().map(|l| vec![*v; l.heads.len()]).collect()),
            Self::Each(v) => {
                let fits = v.len() == topo.num_layers() && v.iter().zip(&topo.layers).all(|(a, l)| a.len() == l.heads.len());
                if !fits {
                    return Err(Error::Config(format!("loss.{what} must give one value per (layer, head)")));
                }
                Ok(v.clone())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossSection {
    #[serde(default = "default_alpha")]
    pub alpha: PerLink,
    /// `layer → head → weights`, one-based keys; missing entries are all
    /// ones.
    #[serde(default)]
    pub beta: BTreeMap<String, BTreeMap<String, Vec<f64>>>,
    #[serde(default = "default_c")]
    pub c: PerLink,
    #[serde(default)]
    pub mse_reduction: MseReduction,
}

fn default_alpha() -> PerLink {
    PerLink::Uniform(0.9)
}

fn default_c() -> PerLink {
    PerLink::Uniform(1.0)
}

impl Default for LossSection {
    fn default() -> Self {
        Self { alpha: default_alpha(), beta: BTreeMap::new(), c: default_c(), mse_reduction: MseReduction::Mean }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub learning_rate: f64,
    pub epochs: usize,
    pub pretrain_epochs: usize,
    pub batch_size: usize,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self { learning_rate: t.learning_rate, epochs: t.epochs, pretrain_epochs: t.pretrain_epochs, batch_size: t.batch_size }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelSection {
    #[serde(default = "single_user")]
    pub scenario: ChannelScenario,
    /// Training SNR grid; one model is trained per point.
    pub snr_db: Vec<f64>,
}

fn single_user() -> ChannelScenario {
    ChannelScenario::SingleUser
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CodecConfig {
    Ladder,
    External(ExternalCodec),
}

/// Which layer-2 heads carry the class-weighting variants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BetaReportConfig {
    pub keep: usize,
    pub dropped_head: usize,
    pub halved_head: usize,
    pub pooled_head: usize,
    #[serde(default = "eight_db")]
    pub snr_db: f64,
}

fn eight_db() -> f64 {
    8.0
}

impl BetaReportConfig {
    /// Scheme to zero-based head index.
    pub fn schemes(&self) -> Vec<(BetaScheme, usize)> {
        vec![
            (BetaScheme::Dropped, self.dropped_head - 1),
            (BetaScheme::Halved, self.halved_head - 1),
            (BetaScheme::Pooled, self.pooled_head - 1),
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub codec: CodecConfig,
    pub mcs_table: Option<PathBuf>,
    pub sscc_images: usize,
    pub single_head_baseline: bool,
    /// One-based head representing each layer in sweeps.
    pub sweep_heads: Option<Vec<usize>>,
    pub beta_schemes: Option<BetaReportConfig>,
    /// Per-sub-block SNR sweep: first sub-block over `first`, later
    /// sub-blocks at each of `later`.
    pub crossed_first_db: Vec<f64>,
    pub crossed_later_db: Vec<f64>,
    /// Training SNR of the checkpoint used for the crossed sweep; defaults
    /// to the first grid point.
    pub crossed_model_snr_db: Option<f64>,
    pub seed: u64,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            codec: CodecConfig::Ladder,
            mcs_table: None,
            sscc_images: 200,
            single_head_baseline: true,
            sweep_heads: None,
            beta_schemes: None,
            crossed_first_db: Vec::new(),
            crossed_later_db: vec![0.0, 8.0, 15.0],
            crossed_model_snr_db: None,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "runs_dir")]
    pub output_dir: PathBuf,
    pub data: DataConfig,
    pub topology: TopologyConfig,
    #[serde(default)]
    pub arch: Option<Architecture>,
    #[serde(default)]
    pub loss: LossSection,
    #[serde(default)]
    pub train: TrainSection,
    pub channel: ChannelSection,
    #[serde(default)]
    pub eval: EvalSection,
}

fn runs_dir() -> PathBuf {
    PathBuf::from("runs")
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(format!("config: {e}")))
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Load { path: path.to_path_buf(), reason: e.to_string() })?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn topology(&self) -> Result<ModelTopology> {
        let spec = self.data.spec(Split::Train);
        let nc = spec.num_classes();
        let layers = self
            .topology
            .layers
            .iter()
            .enumerate()
            .map(|(l, layer)| {
                let heads = layer
                    .heads
                    .iter()
                    .enumerate()
                    .map(|(k, h)| {
                        h.classes
                            .to_pooling(nc)
                            .map(|classes| HeadTopology { classes })
                            .map_err(|e| Error::Config(format!("topology.layers[{l}].heads[{k}].classes: {e}")))
                    })
                    .collect::<Result<_>>()?;
                Ok(LayerTopology { symbols: layer.symbols, heads })
            })
            .collect::<Result<_>>()?;
        let topo = ModelTopology { image_shape: spec.image_shape(), num_classes: nc, layers };
        topo.validate()?;
        Ok(topo)
    }

    pub fn architecture(&self) -> Architecture {
        self.arch.clone().unwrap_or_else(|| match self.data.name {
            DatasetName::Mnist => Architecture::mnist(),
            DatasetName::Cifar10 => Architecture::cifar10(),
        })
    }

    pub fn loss(&self, topo: &ModelTopology) -> Result<LossConfig> {
        let mut beta: Vec<Vec<Vec<f64>>> = topo
            .layers
            .iter()
            .map(|l| l.heads.iter().map(|h| vec![1.0; h.classes.pooled_num_classes()]).collect())
            .collect();
        for (lk, heads) in &self.loss.beta {
            for (hk, w) in heads {
                let at = |s: &str| s.parse::<usize>().ok().filter(|&v| v >= 1).map(|v| v - 1);
                let (Some(l), Some(k)) = (at(lk), at(hk)) else {
                    return Err(Error::Config(format!("loss.beta.{lk}.{hk}: keys are one-based layer and head numbers")));
                };
                let slot = beta
                    .get_mut(l)
                    .and_then(|hs| hs.get_mut(k))
                    .ok_or_else(|| Error::Config(format!("loss.beta.{lk}.{hk}: no such head")))?;
                *slot = w.clone();
            }
        }
        let cfg = LossConfig {
            alpha: self.loss.alpha.expand(topo, "alpha")?,
            beta,
            c: self.loss.c.expand(topo, "c")?,
            mse_reduction: self.loss.mse_reduction,
        };
        cfg.validate(topo)?;
        Ok(cfg)
    }

    pub fn train_config(&self, snr_db: f64) -> TrainConfig {
        TrainConfig {
            learning_rate: self.train.learning_rate,
            epochs: self.train.epochs,
            pretrain_epochs: self.train.pretrain_epochs,
            batch_size: self.train.batch_size,
            seed: self.seed,
            training_snr_db: snr_db,
        }
    }

    /// Checks internal consistency; messages name the offending field.
    pub fn validate(&self) -> Result<()> {
        let topo = self.topology()?;
        if let Some(expected) = &self.topology.decoder_input_symbols {
            if expected.len() != topo.num_layers() {
                return Err(Error::Config(format!(
                    "topology.decoder_input_symbols has {} entries for {} layers",
                    expected.len(),
                    topo.num_layers()
                )));
            }
            for (l, &e) in expected.iter().enumerate() {
                let got = topo.cumulative_symbols(l);
                if e != got {
                    return Err(Error::Config(format!(
                        "topology.decoder_input_symbols[{l}]: decoder of layer {} expects {e} symbols but sub-blocks 1..{} carry {got}",
                        l + 1,
                        l + 1
                    )));
                }
            }
        }
        self.loss(&topo)?;
        if self.channel.snr_db.is_empty() {
            return Err(Error::Config("channel.snr_db must list at least one training SNR".into()));
        }
        if self.channel.snr_db.iter().any(|s| !s.is_finite()) {
            return Err(Error::Config("channel.snr_db entries must be finite".into()));
        }
        if self.channel.scenario != ChannelScenario::SingleUser {
            return Err(Error::Config("channel.scenario: training runs over a single-user channel".into()));
        }
        self.train_config(self.channel.snr_db[0]).validate()?;
        if let Some(h) = &self.eval.sweep_heads {
            if h.len() != topo.num_layers() || h.iter().enumerate().any(|(l, &k)| k == 0 || k > topo.heads(l)) {
                return Err(Error::Config("eval.sweep_heads must name one existing head per layer (one-based)".into()));
            }
        }
        for (what, snr) in [("eval.crossed_model_snr_db", self.eval.crossed_model_snr_db), ("eval.beta_schemes.snr_db", self.eval.beta_schemes.as_ref().map(|b| b.snr_db))] {
            if let Some(s) = snr {
                if !self.channel.snr_db.contains(&s) {
                    return Err(Error::Config(format!("{what}: no model is trained at {s} dB")));
                }
            }
        }
        if let Some(b) = &self.eval.beta_schemes {
            if topo.num_layers() < 2 {
                return Err(Error::Config("eval.beta_schemes needs two layers".into()));
            }
            for (s, k) in [(BetaScheme::Dropped, b.dropped_head), (BetaScheme::Halved, b.halved_head), (BetaScheme::Pooled, b.pooled_head)] {
                if k == 0 || k > topo.heads(1) {
                    return Err(Error::Config(format!("eval.beta_schemes: {} head {k} does not exist in layer 2", s.name())));
                }
            }
        }
        Ok(())
    }

    /// Hex digest of the normalized config; names the run directory.
    pub fn hash(&self) -> Result<String> {
        fingerprint(self)
    }

    pub fn run_dir(&self) -> Result<PathBuf> {
        Ok(self.output_dir.join(&self.hash()?[..16]))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "data": {"name": "mnist"},
        "topology": {"layers": [{"symbols": 40}, {"symbols": 40}]},
        "channel": {"snr_db": [0, 4, 8, 12]}
    }"#;

    #[test]
    fn minimal_config_fills_defaults() {
        let c = ExperimentConfig::from_json(MINIMAL).unwrap();
        c.validate().unwrap();
        let topo = c.topology().unwrap();
        assert_eq!(topo.symbols(), vec![40, 40]);
        let loss = c.loss(&topo).unwrap();
        assert_eq!(loss.alpha, vec![vec![0.9], vec![0.9]]);
        assert_eq!(loss.beta[1][0], vec![1.0; 10]);
        assert_eq!(c.train_config(4.0).learning_rate, 1e-3);
        assert_eq!(c.architecture(), Architecture::mnist());
    }

    #[test]
    fn decoder_symbol_mismatch_is_named() {
        let mut c = ExperimentConfig::from_json(MINIMAL).unwrap();
        c.topology.decoder_input_symbols = Some(vec![40, 100]);
        let msg = c.validate().unwrap_err().to_string();
        assert!(msg.contains("decoder_input_symbols[1]") && msg.contains("100") && msg.contains("80"), "{msg}");
        c.topology.decoder_input_symbols = Some(vec![40, 80]);
        c.validate().unwrap();
    }

    #[test]
    fn beta_and_pooling_are_checked() {
        let text = r#"{
            "data": {"name": "mnist"},
            "topology": {"layers": [
                {"symbols": 40},
                {"symbols": 40, "heads": [{"classes": "all"}, {"classes": {"pool_tail": {"keep": 5}}}]}
            ]},
            "loss": {"beta": {"2": {"1": [1,1,1,1,1,0,0,0,0,0], "2": [1,1,1,1,1,1]}}},
            "channel": {"snr_db": [8]},
            "eval": {"beta_schemes": {"keep": 5, "dropped_head": 1, "halved_head": 1, "pooled_head": 2}}
        }"#;
        let mut c = ExperimentConfig::from_json(text).unwrap();
        c.validate().unwrap();
        let loss = c.loss(&c.topology().unwrap()).unwrap();
        assert_eq!(loss.beta[1][1].len(), 6);
        c.loss.beta.get_mut("2").unwrap().insert("2".into(), vec![1.0; 10]);
        assert!(c.validate().is_err());
        c.loss.beta.clear();
        c.loss.beta.insert("3".into(), BTreeMap::from([("1".into(), vec![1.0; 10])]));
        assert!(c.validate().is_err());
    }

    #[test]
    fn rejects_inconsistent_configs() {
        let base = ExperimentConfig::from_json(MINIMAL).unwrap();
        let mut c = base.clone();
        c.channel.snr_db.clear();
        assert!(c.validate().is_err());
        let mut c = base.clone();
        c.train.epochs = 0;
        assert!(c.validate().is_err());
        let mut c = base.clone();
        c.loss.alpha = PerLink::Uniform(1.5);
        assert!(c.validate().is_err());
        let mut c = base.clone();
        c.channel.scenario = ChannelScenario::MultiuserAwgn;
        assert!(c.validate().is_err());
        assert!(ExperimentConfig::from_json(r#"{"data": {"name": "svhn"}, "topology": {"layers": []}, "channel": {"snr_db": [1]}}"#).is_err());
        assert!(ExperimentConfig::from_json(&MINIMAL.replace("\"seed\"", "\"sed\"").replace("\"data\"", "\"bogus\": 1, \"data\"")).is_err());
    }

    #[test]
    fn hash_is_stable_and_sensitive() {
        let a = ExperimentConfig::from_json(MINIMAL).unwrap();
        let b = ExperimentConfig::from_json(&a.to_json().unwrap()).unwrap();
        assert_eq!(a.hash().unwrap(), b.hash().unwrap());
        let mut c = a.clone();
        c.seed = 1;
        assert_ne!(a.hash().unwrap(), c.hash().unwrap());
        assert_eq!(a.run_dir().unwrap().parent().unwrap(), Path::new("runs"));
    }
}
