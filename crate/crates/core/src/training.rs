//! Extractor pretraining and the alternating optimization: each epoch first
//! updates encoder, heads and decoders against the total loss with the
//! extractors frozen, then refreshes the extractors on reconstructions.

use std::fs;
use std::io::Write as _;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::channel::{ChannelScenario, LinkNoiseSpec};
use crate::data::{apply_pooling, batch_indices, Dataset};
use crate::error::{Error, Result};
use crate::model::{argmax_rows, ModelTopology, ParamScope, SmrcModel};
use crate::nn::Adam;
use crate::objective::{composite_loss, weighted_nll_batch, FullMask, LinkTerms, LossConfig, MaskProvider};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub pretrain_epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub training_snr_db: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { learning_rate: 1e-3, epochs: 5, pretrain_epochs: 5, batch_size: 64, seed: 0, training_snr_db: 8.0 }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning_rate must be positive, got {}", self.learning_rate)));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if !self.training_snr_db.is_finite() {
            return Err(Error::Config("training_snr_db must be finite".into()));
        }
        Ok(())
    }
}

/// Mean phase-A losses of one epoch plus the mean phase-B extractor loss.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub links: Vec<Vec<LinkTerms>>,
    pub total: f64,
    pub extractor_loss: f64,
}

/// One row of the training curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub epoch: usize,
    pub layer: usize,
    pub head: usize,
    pub mse: f64,
    pub semantic: f64,
    pub total: f64,
}

impl EpochStats {
    /// Layers and heads are one-based in the rows.
    pub fn rows(&self) -> Vec<CurveRow> {
        let mut out = Vec::new();
        for (l, hs) in self.links.iter().enumerate() {
            for (k, t) in hs.iter().enumerate() {
                out.push(CurveRow { epoch: self.epoch, layer: l + 1, head: k + 1, mse: t.mse, semantic: t.semantic, total: t.link });
            }
        }
        out
    }
}

pub fn write_curve_csv(path: &Path, rows: &[CurveRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Hex SHA-256 of the JSON form of `value`.
pub fn fingerprint<S: Serialize>(value: &S) -> Result<String> {
    let bytes = serde_json::to_vec(value)?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Holds a model with its optimizer state and noise generator across epochs.
pub struct Trainer<'m, T: Scalar> {
    model: SmrcModel<T>,
    loss: LossConfig,
    config: TrainConfig,
    links: LinkNoiseSpec,
    scenario: ChannelScenario,
    masks: &'m dyn MaskProvider<T>,
    grads: SmrcModel<T>,
    ae_opt: Adam<T>,
    ext_opt: Adam<T>,
    rng: ChaCha8Rng,
    epoch: usize,
}

impl<'m, T: Scalar> Trainer<'m, T> {
    /// Single-user channel at the configured training SNR with full masks.
    pub fn new(model: SmrcModel<T>, loss: LossConfig, config: TrainConfig) -> Result<Self> {
        let links = LinkNoiseSpec::uniform(model.num_layers(), config.training_snr_db)?;
        Self::with_channel(model, loss, config, links, ChannelScenario::SingleUser, &FullMask)
    }

    pub fn with_channel(
        model: SmrcModel<T>,
        loss: LossConfig,
        config: TrainConfig,
        links: LinkNoiseSpec,
        scenario: ChannelScenario,
        masks: &'m dyn MaskProvider<T>,
    ) -> Result<Self> {
        config.validate()?;
        loss.validate(model.topology())?;
        let grads = model.zeros_like();
        let rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed_c0de);
        Ok(Self {
            ae_opt: Adam::new(config.learning_rate),
            ext_opt: Adam::new(config.learning_rate),
            model,
            loss,
            config,
            links,
            scenario,
            masks,
            grads,
            rng,
            epoch: 0,
        })
    }

    pub fn model(&self) -> &SmrcModel<T> {
        &self.model
    }

    pub fn into_model(self) -> SmrcModel<T> {
        self.model
    }

    pub fn epochs_done(&self) -> usize {
        self.epoch
    }

    fn check_labels(&self, data: &Dataset<T>) -> Result<()> {
        let topo = self.model.topology();
        if data.num_classes() != topo.num_classes || data.shape() != topo.image_shape {
            return Err(Error::Config(format!(
                "dataset has {} classes of shape {}, model expects {} of shape {}",
                data.num_classes(),
                data.shape(),
                topo.num_classes,
                topo.image_shape
            )));
        }
        Ok(())
    }

    fn zero_grads(&mut self, scope: ParamScope) {
        for p in self.grads.params_mut(scope) {
            p.fill(T::zero());
        }
    }

    /// One extractor step on the given inputs for every `(l, k)`; inputs are
    /// `[layer][head]` → `(batch, pixels)`, or the same raw batch for all.
    fn extractor_step(&mut self, inputs: &dyn Fn(usize, usize) -> ndarray::Array2<T>, labels: &[usize]) -> Result<f64> {
        self.zero_grads(ParamScope::EXTRACTORS);
        let topo = self.model.topology().clone();
        let mut loss = 0.0;
        for (l, k) in topo.links() {
            let targets: Vec<usize> = labels.iter().map(|&y| apply_pooling(y, topo.classes(l, k))).collect::<Result<_>>()?;
            let net = &self.model.extractors()[l][k];
            let (logits, tape) = net.forward_tape(inputs(l, k));
            let (v, g) = weighted_nll_batch(logits.view(), &targets, &self.loss.beta[l][k]);
            net.backward(&tape, g, Some(self.grads.extractor_mut(l, k)), false);
            loss += v;
        }
        self.ext_opt.update(self.model.params_mut(ParamScope::EXTRACTORS), self.grads.params(ParamScope::EXTRACTORS));
        Ok(loss)
    }

    /// Trains every extractor on raw images with its class-weighted
    /// cross-entropy. Returns the mean summed extractor loss per epoch.
    pub fn pretrain_extractors(&mut self, data: &Dataset<T>, epochs: usize) -> Result<Vec<f64>> {
        self.check_labels(data)?;
        let mut curve = Vec::with_capacity(epochs);
        for e in 0..epochs {
            let mut sum = 0.0;
            let order = batch_indices(data.len(), self.config.batch_size, self.config.seed.wrapping_add(1000 + e as u64))?;
            for idx in &order {
                let b = data.gather(idx);
                let images = b.images;
                let v = self.extractor_step(&|_, _| images.clone(), &b.labels)?;
                if !v.is_finite() {
                    return Err(Error::Divergence { epoch: e, batch: curve.len(), loss: v });
                }
                sum += v;
            }
            curve.push(sum / order.len() as f64);
        }
        Ok(curve)
    }

    /// One alternating epoch over `data` (phase A then phase B).
    pub fn train_epoch(&mut self, data: &Dataset<T>) -> Result<EpochStats> {
        self.check_labels(data)?;
        let epoch = self.epoch;
        let topo = self.model.topology().clone();
        let order = batch_indices(data.len(), self.config.batch_size, self.config.seed.wrapping_add(epoch as u64))?;
        let mut links: Vec<Vec<LinkTerms>> = topo.layers.iter().map(|l| vec![LinkTerms::default(); l.heads.len()]).collect();
        let mut total = 0.0;
        let nb = order.len() as f64;

        for (bi, idx) in order.iter().enumerate() {
            let b = data.gather(idx);
            let (outputs, tape) = self.model.forward_tape(b.images.view(), &self.links, self.scenario, &mut self.rng)?;
            let eval = composite_loss(&outputs, b.images.view(), &b.labels, &topo, &self.loss, self.masks, true)?;
            if !eval.total.is_finite() {
                return Err(Error::Divergence { epoch, batch: bi, loss: eval.total });
            }
            self.zero_grads(ParamScope::AUTOENCODER);
            self.model.backward(&tape, eval.d_recon, eval.d_logits, &mut self.grads, ParamScope::AUTOENCODER);
            self.ae_opt.update(self.model.params_mut(ParamScope::AUTOENCODER), self.grads.params(ParamScope::AUTOENCODER));
            total += eval.total / nb;
            for (acc, got) in links.iter_mut().flatten().zip(eval.links.iter().flatten()) {
                acc.mse += got.mse / nb;
                acc.semantic += got.semantic / nb;
                acc.link += got.link / nb;
            }
        }

        let mut ext = 0.0;
        let order = batch_indices(data.len(), self.config.batch_size, self.config.seed.wrapping_add(5000 + epoch as u64))?;
        for (bi, idx) in order.iter().enumerate() {
            let b = data.gather(idx);
            let outputs = self.model.forward(b.images.view(), &self.links, self.scenario, &mut self.rng)?;
            let v = self.extractor_step(&|l, k| outputs[l].reconstructions[k].clone(), &b.labels)?;
            if !v.is_finite() {
                return Err(Error::Divergence { epoch, batch: bi, loss: v });
            }
            ext += v / order.len() as f64;
        }

        self.epoch += 1;
        Ok(EpochStats { epoch: epoch + 1, links, total, extractor_loss: ext })
    }
}

/// Top-1 accuracy of extractor `(layer, head)` on raw images, with labels
/// pooled into its class set.
pub fn raw_extractor_accuracy<T: Scalar>(model: &SmrcModel<T>, data: &Dataset<T>, layer: usize, head: usize) -> Result<f64> {
    let map = model.topology().classes(layer, head);
    let mut hits = 0usize;
    for idx in batch_indices(data.len(), 500, 0)? {
        let b = data.gather(&idx);
        let pred = argmax_rows(model.extract_batch(layer, head, b.images.view())?.view());
        for (p, &y) in pred.iter().zip(&b.labels) {
            hits += usize::from(*p == apply_pooling(y, map)?);
        }
    }
    Ok(hits as f64 / data.len() as f64)
}

/// Trained model with everything needed to reload and identify it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct Checkpoint<T> {
    pub config_hash: String,
    pub train: TrainConfig,
    pub loss: LossConfig,
    pub epochs_done: usize,
    pub model: SmrcModel<T>,
}

impl<T: Scalar> Checkpoint<T> {
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = fs::File::create(path)?;
        serde_json::to_writer(&mut f, self)?;
        f.flush()?;
        Ok(())
    }

    /// Reads a checkpoint, rejecting it when `expected` is given and differs
    /// from the stored topology.
    pub fn load(path: &Path, expected: Option<&ModelTopology>) -> Result<Self> {
        let text = fs::read(path).map_err(|e| Error::Load { path: path.to_path_buf(), reason: e.to_string() })?;
        let ck: Self = serde_json::from_slice(&text).map_err(|e| Error::Load { path: path.to_path_buf(), reason: e.to_string() })?;
        if let Some(t) = expected {
            if ck.model.topology() != t {
                return Err(Error::Config(format!("checkpoint {} was trained for a different topology", path.display())));
            }
        }
        Ok(ck)
    }
}

/// Result of [`run_training`].
pub struct TrainOutcome<T> {
    pub checkpoint: Checkpoint<T>,
    pub pretrain_curve: Vec<f64>,
    pub curve: Vec<CurveRow>,
    pub epochs: Vec<EpochStats>,
}

/// Pretrains the extractors, then runs `config.epochs` alternating epochs
/// over a single-user channel at `config.training_snr_db`. When `out_dir` is
/// given, writes `checkpoint.json` and `curve.csv` there.
pub fn run_training<T: Scalar>(
    model: SmrcModel<T>,
    data: &Dataset<T>,
    loss: LossConfig,
    config: TrainConfig,
    out_dir: Option<&Path>,
) -> Result<TrainOutcome<T>> {
    let hash = fingerprint(&(model.topology(), model.architecture(), &loss, &config))?;
    let mut trainer = Trainer::new(model, loss.clone(), config.clone())?;
    let pretrain_curve = trainer.pretrain_extractors(data, config.pretrain_epochs)?;
    let mut epochs = Vec::with_capacity(config.epochs);
    for _ in 0..config.epochs {
        epochs.push(trainer.train_epoch(data)?);
    }
    let curve: Vec<CurveRow> = epochs.iter().flat_map(EpochStats::rows).collect();
    let checkpoint = Checkpoint { config_hash: hash, train: config, loss, epochs_done: trainer.epochs_done(), model: trainer.into_model() };
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir)?;
        checkpoint.save(&dir.join("checkpoint.json"))?;
        write_curve_csv(&dir.join("curve.csv"), &curve)?;
    }
    Ok(TrainOutcome { checkpoint, pretrain_curve, curve, epochs })
}
