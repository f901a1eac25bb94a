//! Per-link composite loss (RoI-masked reconstruction error plus
//! class-weighted negative log-likelihood) and the weighted total over links.

use std::collections::BTreeMap;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::data::{apply_pooling, ImageShape};
use crate::error::{Error, Result};
use crate::model::{argmax_rows, LayerOutput, ModelTopology};
use crate::scalar::Scalar;

/// Element-wise reconstruction weights in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RoIMask<T> {
    values: Array1<T>,
    shape: ImageShape,
}

impl<T: Scalar> RoIMask<T> {
    pub fn new(values: Array1<T>, shape: ImageShape) -> Result<Self> {
        if values.len() != shape.len() {
            return Err(Error::Shape(format!("mask has {} entries, shape {shape} needs {}", values.len(), shape.len())));
        }
        if values.iter().any(|&m| !(m >= T::zero() && m <= T::one())) {
            return Err(Error::Domain("mask entries must lie in [0, 1]".into()));
        }
        Ok(Self { values, shape })
    }

    pub fn ones(shape: ImageShape) -> Self {
        Self { values: Array1::ones(shape.len()), shape }
    }

    pub fn values(&self) -> &Array1<T> {
        &self.values
    }

    pub fn shape(&self) -> ImageShape {
        self.shape
    }
}

pub fn roi_apply<T: Scalar>(x: ArrayView1<'_, T>, mask: &RoIMask<T>) -> Result<Array1<T>> {
    if x.len() != mask.values.len() {
        return Err(Error::Shape(format!("tensor has {} entries, mask {}", x.len(), mask.values.len())));
    }
    Ok(&x * &mask.values)
}

/// Mean over elements of `(M ⊙ (x - x̂))²`.
pub fn masked_mse<T: Scalar>(x: ArrayView1<'_, T>, xh: ArrayView1<'_, T>, mask: &RoIMask<T>) -> Result<T> {
    if x.len() != xh.len() || x.len() != mask.values.len() {
        return Err(Error::Shape(format!("lengths {} / {} / mask {}", x.len(), xh.len(), mask.values.len())));
    }
    if x.is_empty() {
        return Err(Error::Shape("empty tensors".into()));
    }
    let sum: T = x.iter().zip(&xh).zip(&mask.values).map(|((&a, &b), &m)| (m * (a - b)).powi(2)).sum();
    Ok(sum / T::of(x.len() as f64))
}

/// Numerically stable `log(softmax(logits))`.
pub fn log_softmax<T: Scalar>(logits: ArrayView1<'_, T>) -> Array1<T> {
    let mx = logits.fold(T::neg_infinity(), |a, &b| a.max(b));
    let lse = logits.iter().map(|&z| (z - mx).exp()).sum::<T>().ln() + mx;
    logits.mapv(|z| z - lse)
}

pub fn softmax<T: Scalar>(logits: ArrayView1<'_, T>) -> Array1<T> {
    log_softmax(logits).mapv(T::exp)
}

/// `-Σ_i y_i β_i log σ(ŷ)_i`: class-weighted negative log-likelihood.
pub fn semantic_loss<T: Scalar>(y_onehot: ArrayView1<'_, T>, beta: ArrayView1<'_, T>, logits: ArrayView1<'_, T>) -> Result<T> {
    if y_onehot.len() != beta.len() || beta.len() != logits.len() {
        return Err(Error::Shape(format!(
            "one-hot {}, beta {}, logits {} must match",
            y_onehot.len(),
            beta.len(),
            logits.len()
        )));
    }
    let lp = log_softmax(logits);
    Ok(-y_onehot.iter().zip(&beta).zip(&lp).map(|((&y, &b), &l)| if y == T::zero() { T::zero() } else { y * b * l }).sum::<T>())
}

/// `α·mse + (1-α)·semantic`.
pub fn link_loss<T: Scalar>(alpha: T, mse: T, semantic: T) -> Result<T> {
    if !(alpha >= T::zero() && alpha <= T::one()) {
        return Err(Error::Domain(format!("alpha must lie in [0, 1], got {alpha}")));
    }
    Ok(alpha * mse + (T::one() - alpha) * semantic)
}

/// `Σ_l Σ_k c_lk L_lk`, both indexed `[layer][head]`.
pub fn total_loss<T: Scalar>(losses: &[Vec<T>], weights: &[Vec<T>]) -> Result<T> {
    if losses.len() != weights.len() || losses.iter().zip(weights).any(|(a, b)| a.len() != b.len()) {
        return Err(Error::Shape("per-link losses and weights cover different (layer, head) sets".into()));
    }
    Ok(losses.iter().zip(weights).flat_map(|(ls, cs)| ls.iter().zip(cs).map(|(&l, &c)| c * l)).sum())
}

/// How the squared reconstruction error is reduced over pixels.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MseReduction {
    #[default]
    Mean,
    /// Squared norm of the masked error; weights reconstruction in
    /// proportion to the pixel count.
    Sum,
}

/// `α_lk`, `β_lk`, and `c_lk` for every link, indexed `[layer][head]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub alpha: Vec<Vec<f64>>,
    pub beta: Vec<Vec<Vec<f64>>>,
    pub c: Vec<Vec<f64>>,
    #[serde(default)]
    pub mse_reduction: MseReduction,
}

impl LossConfig {
    /// Same `α` and `c` on every link, unit class weights.
    pub fn uniform(topology: &ModelTopology, alpha: f64, c: f64) -> Self {
        let per = |v: f64| topology.layers.iter().map(|l| vec![v; l.heads.len()]).collect();
        let beta = topology
            .layers
            .iter()
            .map(|l| l.heads.iter().map(|h| vec![1.0; h.classes.pooled_num_classes()]).collect())
            .collect();
        Self { alpha: per(alpha), beta, c: per(c), mse_reduction: MseReduction::Mean }
    }

    pub fn validate(&self, topology: &ModelTopology) -> Result<()> {
        let layers = topology.num_layers();
        if self.alpha.len() != layers || self.beta.len() != layers || self.c.len() != layers {
            return Err(Error::Config(format!("loss config must cover {layers} layers")));
        }
        for (l, (k, head)) in topology.links().into_iter().map(|(l, k)| (l, (k, &topology.layers[l].heads[k]))) {
            let at = format!("({},{})", l + 1, k + 1);
            let alpha = *self.alpha[l].get(k).ok_or_else(|| Error::Config(format!("missing alpha for {at}")))?;
            let c = *self.c[l].get(k).ok_or_else(|| Error::Config(format!("missing c for {at}")))?;
            let beta = self.beta[l].get(k).ok_or_else(|| Error::Config(format!("missing beta for {at}")))?;
            if !(0.0..=1.0).contains(&alpha) {
                return Err(Error::Config(format!("alpha{at} = {alpha} outside [0, 1]")));
            }
            if !(c >= 0.0) {
                return Err(Error::Config(format!("c{at} = {c} must be non-negative")));
            }
            let classes = head.classes.pooled_num_classes();
            if beta.len() != classes {
                return Err(Error::Config(format!("beta{at} has {} entries, head has {classes} classes", beta.len())));
            }
            if beta.iter().any(|b| !(0.0..=1.0).contains(b)) {
                return Err(Error::Config(format!("beta{at} entries must lie in [0, 1]")));
            }
        }
        if self.alpha.iter().zip(&topology.layers).any(|(a, l)| a.len() != l.heads.len())
            || self.c.iter().zip(&topology.layers).any(|(a, l)| a.len() != l.heads.len())
            || self.beta.iter().zip(&topology.layers).any(|(a, l)| a.len() != l.heads.len())
        {
            return Err(Error::Config("loss config has entries for heads the topology lacks".into()));
        }
        Ok(())
    }
}

/// Builds the RoI mask of layer `layer` from the base-head predictions of
/// earlier layers.
pub trait MaskProvider<T: Scalar>: Send + Sync {
    fn mask(&self, layer: usize, previous_predictions: &[usize], shape: ImageShape) -> RoIMask<T>;
}

/// No region of interest: every pixel counts fully.
#[derive(Debug, Clone, Copy, Default)]
pub struct FullMask;

impl<T: Scalar> MaskProvider<T> for FullMask {
    fn mask(&self, _layer: usize, _previous: &[usize], shape: ImageShape) -> RoIMask<T> {
        RoIMask::ones(shape)
    }
}

/// Axis-aligned pixel rectangle, half-open.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rect {
    pub top: usize,
    pub left: usize,
    pub bottom: usize,
    pub right: usize,
}

/// Weights a class-specific rectangle by 1 and everything else by
/// `outside`, keyed on the class predicted by the previous layer. Layer 1
/// and unlisted classes get the full mask.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassRegionMask {
    pub regions: BTreeMap<usize, Rect>,
    pub outside: f64,
}

impl<T: Scalar> MaskProvider<T> for ClassRegionMask {
    fn mask(&self, layer: usize, previous: &[usize], shape: ImageShape) -> RoIMask<T> {
        let Some(rect) = (layer > 0).then(|| previous.last().and_then(|c| self.regions.get(c))).flatten() else {
            return RoIMask::ones(shape);
        };
        let out = T::of(self.outside.clamp(0.0, 1.0));
        let mut v = Array1::from_elem(shape.len(), out);
        for c in 0..shape.channels {
            for y in rect.top..rect.bottom.min(shape.height) {
                for x in rect.left..rect.right.min(shape.width) {
                    v[(c * shape.height + y) * shape.width + x] = T::one();
                }
            }
        }
        RoIMask { values: v, shape }
    }
}

/// Batch means of the loss terms of one link.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LinkTerms {
    pub mse: f64,
    pub semantic: f64,
    pub link: f64,
}

/// Batch-averaged composite loss and, on request, its gradients with respect
/// to every reconstruction and logit block.
#[derive(Debug, Clone)]
pub struct CompositeLoss<T> {
    pub links: Vec<Vec<LinkTerms>>,
    pub total: f64,
    pub d_recon: Vec<Vec<Array2<T>>>,
    pub d_logits: Vec<Vec<Array2<T>>>,
}

/// Evaluates the weighted total of per-link losses over a batch.
///
/// Masks are built per example from earlier layers' predictions and are
/// treated as constants when differentiating.
pub fn composite_loss<T: Scalar>(
    outputs: &[LayerOutput<T>],
    images: ArrayView2<'_, T>,
    labels: &[usize],
    topology: &ModelTopology,
    cfg: &LossConfig,
    masks: &dyn MaskProvider<T>,
    want_grad: bool,
) -> Result<CompositeLoss<T>> {
    let batch = images.nrows();
    if labels.len() != batch || outputs.len() != topology.num_layers() {
        return Err(Error::Shape("outputs, images and labels disagree".into()));
    }
    if batch == 0 {
        return Err(Error::Shape("empty batch".into()));
    }
    let shape = topology.image_shape;
    let pixels = shape.len();
    let inv_b = 1.0 / batch as f64;
    let per_pixel = match cfg.mse_reduction {
        MseReduction::Mean => 1.0 / pixels as f64,
        MseReduction::Sum => 1.0,
    };
    let predictions: Vec<Vec<usize>> = outputs.iter().map(|o| argmax_rows(o.logits[0].view())).collect();
    let mut links = Vec::new();
    let mut d_recon = Vec::new();
    let mut d_logits = Vec::new();
    let mut total = 0.0;

    for (l, out) in outputs.iter().enumerate() {
        let (mut lt, mut dr, mut dl) = (Vec::new(), Vec::new(), Vec::new());
        let masks: Vec<RoIMask<T>> = (0..batch)
            .map(|b| {
                let prev: Vec<usize> = predictions[..l].iter().map(|p| p[b]).collect();
                masks.mask(l, &prev, shape)
            })
            .collect();
        for k in 0..topology.heads(l) {
            let (alpha, c) = (cfg.alpha[l][k], cfg.c[l][k]);
            let beta = &cfg.beta[l][k];
            let classes = topology.classes(l, k);
            let xh = &out.reconstructions[k];
            let logits = &out.logits[k];
            let mut terms = LinkTerms::default();
            let mut g_r = if want_grad { Array2::zeros((batch, pixels)) } else { Array2::zeros((0, 0)) };
            let mut g_l = if want_grad { Array2::zeros(logits.dim()) } else { Array2::zeros((0, 0)) };
            for b in 0..batch {
                let m = masks[b].values();
                let x = images.row(b);
                let r = xh.row(b);
                let mut sq = 0.0;
                for p in 0..pixels {
                    let e = (m[p] * (x[p] - r[p])).as_f64();
                    sq += e * e;
                }
                let mse = sq * per_pixel;
                let y = apply_pooling(labels[b], classes)?;
                let lp = log_softmax(logits.row(b));
                let sem = -beta[y] * lp[y].as_f64();
                terms.mse += mse * inv_b;
                terms.semantic += sem * inv_b;
                if want_grad {
                    let gm = T::of(-2.0 * c * alpha * inv_b * per_pixel);
                    let mut row = g_r.row_mut(b);
                    for p in 0..pixels {
                        row[p] = gm * m[p] * m[p] * (x[p] - r[p]);
                    }
                    let gs = T::of(c * (1.0 - alpha) * inv_b * beta[y]);
                    let mut grow = g_l.row_mut(b);
                    for (i, g) in grow.iter_mut().enumerate() {
                        let ind = if i == y { T::one() } else { T::zero() };
                        *g = gs * (lp[i].exp() - ind);
                    }
                }
            }
            terms.link = alpha * terms.mse + (1.0 - alpha) * terms.semantic;
            total += c * terms.link;
            lt.push(terms);
            dr.push(g_r);
            dl.push(g_l);
        }
        links.push(lt);
        d_recon.push(dr);
        d_logits.push(dl);
    }
    Ok(CompositeLoss { links, total, d_recon, d_logits })
}

/// Class-weighted cross-entropy over a logit batch, with its gradient. Used
/// to train extractors on their own.
pub fn weighted_nll_batch<T: Scalar>(logits: ArrayView2<'_, T>, targets: &[usize], beta: &[f64]) -> (f64, Array2<T>) {
    let batch = logits.nrows();
    let inv_b = 1.0 / batch.max(1) as f64;
    let mut loss = 0.0;
    let mut grad = Array2::zeros(logits.dim());
    for (b, (row, mut g)) in logits.axis_iter(Axis(0)).zip(grad.axis_iter_mut(Axis(0))).enumerate() {
        let y = targets[b];
        let lp = log_softmax(row);
        loss -= beta[y] * lp[y].as_f64() * inv_b;
        let w = T::of(beta[y] * inv_b);
        for (i, gi) in g.iter_mut().enumerate() {
            let ind = if i == y { T::one() } else { T::zero() };
            *gi = w * (lp[i].exp() - ind);
        }
    }
    (loss, grad)
}
