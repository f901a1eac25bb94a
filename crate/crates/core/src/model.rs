//! Multi-head layered autoencoder.
//!
//! A shared trunk maps the image to a latent; head `(l, k)` maps the latent
//! to a unit-power sub-block of `n_l` symbols. Decoder `(l, k)` reads the
//! received sub-blocks of the base path (head 0 of layers `1..l`) followed by
//! its own head's sub-block, so it consumes `n_1 + ... + n_l` symbols. Each
//! reconstruction feeds a semantic extractor that classifies into the head's
//! (possibly pooled) class set.

use ndarray::{concatenate, s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::channel::{transmit_batch, ChannelScenario, LinkNoiseSpec, PowerNorm};
use crate::data::{ImageShape, PoolingMap};
use crate::error::{Error, Result};
use crate::nn::{Dims, LayerSpec, Sequential, Tape};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HeadTopology {
    /// Class set of this head's extractor, as a pooling of the dataset labels.
    pub classes: PoolingMap,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerTopology {
    pub symbols: usize,
    pub heads: Vec<HeadTopology>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelTopology {
    pub image_shape: ImageShape,
    /// Number of classes in the dataset labels.
    pub num_classes: usize,
    pub layers: Vec<LayerTopology>,
}

impl ModelTopology {
    /// Layers with one head each and the full (unpooled) class set.
    pub fn uniform(image_shape: ImageShape, num_classes: usize, symbols: &[usize]) -> Self {
        Self {
            image_shape,
            num_classes,
            layers: symbols
                .iter()
                .map(|&n| LayerTopology { symbols: n, heads: vec![HeadTopology { classes: PoolingMap::identity(num_classes) }] })
                .collect(),
        }
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn heads(&self, layer: usize) -> usize {
        self.layers[layer].heads.len()
    }

    pub fn symbols(&self) -> Vec<usize> {
        self.layers.iter().map(|l| l.symbols).collect()
    }

    /// Symbols consumed by the decoders of `layer` (zero-based).
    pub fn cumulative_symbols(&self, layer: usize) -> usize {
        self.layers[..=layer].iter().map(|l| l.symbols).sum()
    }

    pub fn total_symbols(&self) -> usize {
        self.layers.iter().map(|l| l.symbols).sum()
    }

    pub fn classes(&self, layer: usize, head: usize) -> &PoolingMap {
        &self.layers[layer].heads[head].classes
    }

    /// Every `(layer, head)` pair in layer-major order.
    pub fn links(&self) -> Vec<(usize, usize)> {
        self.layers.iter().enumerate().flat_map(|(l, t)| (0..t.heads.len()).map(move |k| (l, k))).collect()
    }

    /// Checks counts and the hierarchical nesting of class sets: each class
    /// of a layer-`l` head must be contained in some class of a layer-`l-1`
    /// head. Catch-all (dummy) classes are exempt.
    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::Config("topology needs at least one layer".into()));
        }
        for (l, layer) in self.layers.iter().enumerate() {
            if layer.symbols == 0 {
                return Err(Error::Config(format!("layer {} has zero symbols", l + 1)));
            }
            if layer.heads.is_empty() {
                return Err(Error::Config(format!("layer {} has no heads", l + 1)));
            }
            for (k, head) in layer.heads.iter().enumerate() {
                if head.classes.num_original() != self.num_classes {
                    return Err(Error::Config(format!(
                        "head ({},{}) pools {} classes but the dataset has {}",
                        l + 1,
                        k + 1,
                        head.classes.num_original(),
                        self.num_classes
                    )));
                }
            }
        }
        for l in 1..self.layers.len() {
            let parents: Vec<Vec<usize>> = self.layers[l - 1]
                .heads
                .iter()
                .flat_map(|h| (0..h.classes.pooled_num_classes()).map(|c| h.classes.preimage(c)))
                .collect();
            for (k, head) in self.layers[l].heads.iter().enumerate() {
                for c in 0..head.classes.pooled_num_classes() {
                    if head.classes.catch_all() == Some(c) {
                        continue;
                    }
                    let members = head.classes.preimage(c);
                    if !parents.iter().any(|p| members.iter().all(|m| p.contains(m))) {
                        return Err(Error::Config(format!(
                            "class {c} of head ({},{}) (labels {members:?}) is not nested in any layer-{} class",
                            l + 1,
                            k + 1,
                            l
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    /// One layer carrying all `Σ n_l` symbols, with the class set of the
    /// reference model's final base head.
    pub fn single_head_baseline(&self) -> Self {
        let last = self.layers.last().expect("validated topology");
        Self {
            image_shape: self.image_shape,
            num_classes: self.num_classes,
            layers: vec![LayerTopology { symbols: self.total_symbols(), heads: vec![last.heads[0].clone()] }],
        }
    }
}

/// Network stacks, recorded in configs so architectures are reproducible.
///
/// `decoder` starts from the flat received symbols and must end at the image
/// shape (a final sigmoid is appended). `extractor` starts from the image; a
/// final dense layer sized to the head's class count is appended. Heads are a
/// single linear layer from the trunk output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    pub trunk: Vec<LayerSpec>,
    pub decoder: Vec<LayerSpec>,
    pub extractor: Vec<LayerSpec>,
}

fn conv(channels: usize, kernel: usize, stride: usize, padding: usize) -> LayerSpec {
    LayerSpec::Conv { channels, kernel, stride, padding }
}

fn deconv(channels: usize) -> LayerSpec {
    LayerSpec::Deconv { channels, kernel: 4, stride: 2, padding: 1 }
}

impl Architecture {
    /// Two stride-2 convolutions down to a quarter-resolution map, mirrored
    /// by two stride-2 transposed convolutions.
    pub fn conv_pair(shape: ImageShape, width: usize) -> Self {
        let act = LayerSpec::LeakyRelu { slope: 0.1 };
        let (h, w) = (shape.height / 4, shape.width / 4);
        Self {
            trunk: vec![conv(width, 5, 2, 2), act, conv(2 * width, 5, 2, 2), act],
            decoder: vec![
                LayerSpec::Dense { units: 2 * width * h * w },
                act,
                LayerSpec::Reshape { channels: 2 * width, height: h, width: w },
                deconv(width),
                act,
                deconv(shape.channels),
            ],
            extractor: vec![
                conv(8, 5, 2, 2),
                LayerSpec::Relu,
                conv(16, 5, 2, 2),
                LayerSpec::Relu,
                LayerSpec::Dense { units: 64 },
                LayerSpec::Relu,
            ],
        }
    }

    pub fn mnist() -> Self {
        Self::conv_pair(ImageShape::new(1, 28, 28), 16)
    }

    pub fn cifar10() -> Self {
        Self::conv_pair(ImageShape::new(3, 32, 32), 32)
    }

    /// Small smooth network for gradient checks on `8x8`-style inputs.
    pub fn tiny(shape: ImageShape) -> Self {
        let (h, w) = (shape.height / 2, shape.width / 2);
        Self {
            trunk: vec![conv(2, 3, 2, 1), LayerSpec::Tanh],
            decoder: vec![
                LayerSpec::Dense { units: 2 * h * w },
                LayerSpec::Tanh,
                LayerSpec::Reshape { channels: 2, height: h, width: w },
                deconv(shape.channels),
            ],
            extractor: vec![conv(2, 3, 2, 1), LayerSpec::Tanh],
        }
    }
}

/// Decoder outputs for one layer: a reconstruction and class logits per head.
#[derive(Debug, Clone)]
pub struct LayerOutput<T> {
    /// `[head]` → `(batch, pixels)` in `[0, 1]`.
    pub reconstructions: Vec<Array2<T>>,
    /// `[head]` → `(batch, classes)`.
    pub logits: Vec<Array2<T>>,
}

impl<T: Scalar> LayerOutput<T> {
    /// Base-head reconstruction.
    pub fn reconstruction(&self) -> &Array2<T> {
        &self.reconstructions[0]
    }

    /// Predicted class of the base head for each example.
    pub fn predictions(&self, head: usize) -> Vec<usize> {
        argmax_rows(self.logits[head].view())
    }
}

pub fn argmax_rows<T: Scalar>(m: ArrayView2<'_, T>) -> Vec<usize> {
    m.axis_iter(Axis(0))
        .map(|r| r.iter().enumerate().fold((0, T::neg_infinity()), |b, (i, &v)| if v > b.1 { (i, v) } else { b }).0)
        .collect()
}

/// Which parameter groups a backward pass should produce gradients for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamScope {
    /// Trunk, heads and decoders.
    pub autoencoder: bool,
    pub extractors: bool,
}

impl ParamScope {
    pub const ALL: Self = Self { autoencoder: true, extractors: true };
    pub const AUTOENCODER: Self = Self { autoencoder: true, extractors: false };
    pub const EXTRACTORS: Self = Self { autoencoder: false, extractors: true };
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmrcModel<T> {
    topology: ModelTopology,
    architecture: Architecture,
    trunk: Sequential<T>,
    heads: Vec<Vec<Sequential<T>>>,
    decoders: Vec<Vec<Sequential<T>>>,
    extractors: Vec<Vec<Sequential<T>>>,
}

/// Intermediate state of a training forward pass.
pub struct ForwardTape<T> {
    trunk: Tape<T>,
    heads: Vec<Vec<(Tape<T>, PowerNorm<T>)>>,
    decoders: Vec<Vec<Tape<T>>>,
    extractors: Vec<Vec<Tape<T>>>,
}

impl<T: Scalar> SmrcModel<T> {
    pub fn new<R: Rng + ?Sized>(topology: ModelTopology, architecture: Architecture, rng: &mut R) -> Result<Self> {
        topology.validate()?;
        let shape = topology.image_shape;
        let image = Dims::new(shape.channels, shape.height, shape.width);
        let trunk = Sequential::build(image, &architecture.trunk, rng)?;
        let latent = Dims::flat(trunk.output_dims().len());
        let mut heads = Vec::new();
        let mut decoders = Vec::new();
        let mut extractors = Vec::new();
        for (l, layer) in topology.layers.iter().enumerate() {
            let consumed = topology.cumulative_symbols(l);
            let (mut hs, mut ds, mut es) = (Vec::new(), Vec::new(), Vec::new());
            for head in &layer.heads {
                hs.push(Sequential::build(latent, &[LayerSpec::Dense { units: layer.symbols }], rng)?);
                let mut dspec = architecture.decoder.clone();
                dspec.push(LayerSpec::Sigmoid);
                let dec = Sequential::build(Dims::flat(consumed), &dspec, rng)?;
                if dec.output_dims() != image {
                    return Err(Error::Config(format!(
                        "decoder produces {:?}, image is {:?}",
                        dec.output_dims(),
                        image
                    )));
                }
                ds.push(dec);
                let mut espec = architecture.extractor.clone();
                espec.push(LayerSpec::Dense { units: head.classes.pooled_num_classes() });
                es.push(Sequential::build(image, &espec, rng)?);
            }
            heads.push(hs);
            decoders.push(ds);
            extractors.push(es);
        }
        Ok(Self { topology, architecture, trunk, heads, decoders, extractors })
    }

    /// One-layer model with the same stacks carrying all symbols of
    /// `reference`, used as the upper bound for the layered decoders.
    pub fn single_head_baseline<R: Rng + ?Sized>(reference: &ModelTopology, architecture: Architecture, rng: &mut R) -> Result<Self> {
        Self::new(reference.single_head_baseline(), architecture, rng)
    }

    pub fn topology(&self) -> &ModelTopology {
        &self.topology
    }

    pub fn architecture(&self) -> &Architecture {
        &self.architecture
    }

    pub fn num_layers(&self) -> usize {
        self.topology.num_layers()
    }

    fn check_images(&self, images: ArrayView2<'_, T>) -> Result<()> {
        let want = self.topology.image_shape.len();
        if images.ncols() != want {
            return Err(Error::Shape(format!(
                "image has {} values, topology {} needs {want}",
                images.ncols(),
                self.topology.image_shape
            )));
        }
        Ok(())
    }

    /// Power-normalized sub-blocks, `[layer][head]` → `(batch, n_l)`.
    pub fn encode_batch(&self, images: ArrayView2<'_, T>) -> Result<Vec<Vec<Array2<T>>>> {
        self.check_images(images)?;
        let latent = self.trunk.forward(images);
        self.heads
            .iter()
            .map(|hs| hs.iter().map(|h| Ok(PowerNorm::forward(h.forward(latent.view()).view())?.output)).collect())
            .collect()
    }

    /// Sub-blocks of a single image, one per layer (base heads).
    pub fn encode(&self, image: ArrayView1<'_, T>) -> Result<Vec<Array1<T>>> {
        let blocks = self.encode_batch(image.insert_axis(Axis(0)))?;
        Ok(blocks.into_iter().map(|mut hs| hs.swap_remove(0).row(0).to_owned()).collect())
    }

    /// Reconstruction by decoder `(layer, head)` from its received symbols.
    pub fn decode_batch(&self, layer: usize, head: usize, received: ArrayView2<'_, T>) -> Result<Array2<T>> {
        let dec = self.decoder(layer, head)?;
        if received.ncols() != dec.input_dims().len() {
            return Err(Error::Shape(format!(
                "decoder {} expects {} symbols, got {}",
                layer + 1,
                dec.input_dims().len(),
                received.ncols()
            )));
        }
        Ok(dec.forward(received))
    }

    pub fn decode(&self, layer: usize, received: ArrayView1<'_, T>) -> Result<Array1<T>> {
        Ok(self.decode_batch(layer, 0, received.insert_axis(Axis(0)))?.row(0).to_owned())
    }

    pub fn extract_batch(&self, layer: usize, head: usize, images: ArrayView2<'_, T>) -> Result<Array2<T>> {
        self.check_images(images)?;
        let ex = self
            .extractors
            .get(layer)
            .and_then(|e| e.get(head))
            .ok_or_else(|| Error::Shape(format!("no extractor ({}, {})", layer + 1, head + 1)))?;
        Ok(ex.forward(images))
    }

    pub fn extract(&self, layer: usize, head: usize, image: ArrayView1<'_, T>) -> Result<Array1<T>> {
        Ok(self.extract_batch(layer, head, image.insert_axis(Axis(0)))?.row(0).to_owned())
    }

    fn decoder(&self, layer: usize, head: usize) -> Result<&Sequential<T>> {
        self.decoders
            .get(layer)
            .and_then(|d| d.get(head))
            .ok_or_else(|| Error::Shape(format!("no decoder ({}, {})", layer + 1, head + 1)))
    }

    /// Passes sub-blocks through the links and assembles every decoder's
    /// input. Noise is drawn in a fixed order so equal seeds give equal
    /// channel realizations.
    pub fn receive<R: Rng + ?Sized>(
        &self,
        blocks: &[Vec<Array2<T>>],
        links: &LinkNoiseSpec,
        scenario: ChannelScenario,
        rng: &mut R,
    ) -> Result<Vec<Vec<Array2<T>>>> {
        let layers = self.num_layers();
        if links.layers() != layers {
            return Err(Error::Shape(format!("link SNR matrix is {0}x{0}, model has {layers} layers", links.layers())));
        }
        if let Err(v) = crate::channel::validate_scenario(scenario, links) {
            return Err(Error::Scenario(v.to_string()));
        }
        let mut inputs = Vec::with_capacity(layers);
        if scenario.shares_reception() {
            let received: Vec<Vec<Array2<T>>> = blocks
                .iter()
                .enumerate()
                .map(|(j, hs)| hs.iter().map(|b| transmit_batch(b.view(), links.variance(j, j), rng)).collect())
                .collect::<Result<_>>()?;
            for l in 0..layers {
                let mut per_head = Vec::new();
                for k in 0..blocks[l].len() {
                    let mut parts: Vec<ArrayView2<'_, T>> = (0..l).map(|j| received[j][0].view()).collect();
                    parts.push(received[l][k].view());
                    per_head.push(concatenate(Axis(1), &parts).map_err(|e| Error::Shape(e.to_string()))?);
                }
                inputs.push(per_head);
            }
        } else {
            for l in 0..layers {
                let mut per_head = Vec::new();
                for k in 0..blocks[l].len() {
                    let mut parts = Vec::with_capacity(l + 1);
                    for j in 0..l {
                        parts.push(transmit_batch(blocks[j][0].view(), links.variance(j, l), rng)?);
                    }
                    parts.push(transmit_batch(blocks[l][k].view(), links.variance(l, l), rng)?);
                    let views: Vec<_> = parts.iter().map(|p| p.view()).collect();
                    per_head.push(concatenate(Axis(1), &views).map_err(|e| Error::Shape(e.to_string()))?);
                }
                inputs.push(per_head);
            }
        }
        Ok(inputs)
    }

    /// Decodes and classifies given the received decoder inputs.
    pub fn decode_all(&self, received: &[Vec<Array2<T>>]) -> Result<Vec<LayerOutput<T>>> {
        received
            .iter()
            .enumerate()
            .map(|(l, hs)| {
                let mut out = LayerOutput { reconstructions: Vec::new(), logits: Vec::new() };
                for (k, r) in hs.iter().enumerate() {
                    let xh = self.decode_batch(l, k, r.view())?;
                    out.logits.push(self.extractors[l][k].forward(xh.view()));
                    out.reconstructions.push(xh);
                }
                Ok(out)
            })
            .collect()
    }

    /// End-to-end pass: encode, transmit over every link, decode, classify.
    pub fn forward<R: Rng + ?Sized>(
        &self,
        images: ArrayView2<'_, T>,
        links: &LinkNoiseSpec,
        scenario: ChannelScenario,
        rng: &mut R,
    ) -> Result<Vec<LayerOutput<T>>> {
        let blocks = self.encode_batch(images)?;
        let received = self.receive(&blocks, links, scenario, rng)?;
        self.decode_all(&received)
    }

    /// Same as [`forward`](Self::forward) but records what the backward pass
    /// needs. Consumes exactly the same noise draws.
    pub fn forward_tape<R: Rng + ?Sized>(
        &self,
        images: ArrayView2<'_, T>,
        links: &LinkNoiseSpec,
        scenario: ChannelScenario,
        rng: &mut R,
    ) -> Result<(Vec<LayerOutput<T>>, ForwardTape<T>)> {
        self.check_images(images)?;
        let (latent, trunk) = self.trunk.forward_tape(images.to_owned());
        let mut head_tapes = Vec::new();
        let mut blocks = Vec::new();
        for hs in &self.heads {
            let mut tapes = Vec::new();
            let mut bs = Vec::new();
            for h in hs {
                let (raw, tape) = h.forward_tape(latent.clone());
                let pn = PowerNorm::forward(raw.view())?;
                bs.push(pn.output.clone());
                tapes.push((tape, pn));
            }
            head_tapes.push(tapes);
            blocks.push(bs);
        }
        let received = self.receive(&blocks, links, scenario, rng)?;
        let mut outputs = Vec::new();
        let (mut dtapes, mut etapes) = (Vec::new(), Vec::new());
        for (l, hs) in received.into_iter().enumerate() {
            let mut out = LayerOutput { reconstructions: Vec::new(), logits: Vec::new() };
            let (mut dt, mut et) = (Vec::new(), Vec::new());
            for (k, r) in hs.into_iter().enumerate() {
                let (xh, dtape) = self.decoders[l][k].forward_tape(r);
                let (logits, etape) = self.extractors[l][k].forward_tape(xh.clone());
                out.reconstructions.push(xh);
                out.logits.push(logits);
                dt.push(dtape);
                et.push(etape);
            }
            outputs.push(out);
            dtapes.push(dt);
            etapes.push(et);
        }
        Ok((outputs, ForwardTape { trunk, heads: head_tapes, decoders: dtapes, extractors: etapes }))
    }

    /// Back-propagates loss gradients with respect to every reconstruction
    /// (`d_recon[l][k]`) and logit block (`d_logits[l][k]`), accumulating
    /// parameter gradients in `grads` for the groups in `scope`.
    ///
    /// Gradients always flow through the extractors into the
    /// reconstructions; `scope.extractors` only controls whether extractor
    /// parameter gradients are recorded.
    pub fn backward(
        &self,
        tape: &ForwardTape<T>,
        mut d_recon: Vec<Vec<Array2<T>>>,
        d_logits: Vec<Vec<Array2<T>>>,
        grads: &mut Self,
        scope: ParamScope,
    ) {
        for (l, dl) in d_logits.into_iter().enumerate() {
            for (k, g) in dl.into_iter().enumerate() {
                let gbuf = scope.extractors.then(|| &mut grads.extractors[l][k]);
                let dx = self.extractors[l][k].backward(&tape.extractors[l][k], g, gbuf, scope.autoencoder);
                if let Some(dx) = dx {
                    d_recon[l][k] += &dx;
                }
            }
        }
        if !scope.autoencoder {
            return;
        }
        let symbols = self.topology.symbols();
        let mut d_blocks: Vec<Vec<Array2<T>>> = self
            .heads
            .iter()
            .zip(&tape.heads)
            .map(|(hs, ts)| hs.iter().zip(ts).map(|(_, (_, pn))| Array2::zeros(pn.output.dim())).collect())
            .collect();
        for (l, dl) in d_recon.into_iter().enumerate() {
            for (k, g) in dl.into_iter().enumerate() {
                let dr = self.decoders[l][k]
                    .backward(&tape.decoders[l][k], g, Some(&mut grads.decoders[l][k]), true)
                    .expect("input gradient requested");
                let mut at = 0;
                for (j, &n) in symbols.iter().enumerate().take(l + 1) {
                    let target = if j == l { k } else { 0 };
                    d_blocks[j][target] += &dr.slice(s![.., at..at + n]);
                    at += n;
                }
            }
        }
        let mut d_latent: Option<Array2<T>> = None;
        for (l, db) in d_blocks.into_iter().enumerate() {
            for (k, g) in db.into_iter().enumerate() {
                let (htape, pn) = &tape.heads[l][k];
                let draw = pn.backward(g.view());
                let dz = self.heads[l][k]
                    .backward(htape, draw, Some(&mut grads.heads[l][k]), true)
                    .expect("input gradient requested");
                match &mut d_latent {
                    Some(acc) => *acc += &dz,
                    None => d_latent = Some(dz),
                }
            }
        }
        if let Some(dz) = d_latent {
            self.trunk.backward(&tape.trunk, dz, Some(&mut grads.trunk), false);
        }
    }

    /// Gradient buffer with this model's layout.
    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for p in z.params_mut(ParamScope::ALL) {
            p.fill(T::zero());
        }
        z
    }

    fn groups(&self, scope: ParamScope) -> Vec<&Sequential<T>> {
        let mut g = Vec::new();
        if scope.autoencoder {
            g.push(&self.trunk);
            g.extend(self.heads.iter().flatten());
            g.extend(self.decoders.iter().flatten());
        }
        if scope.extractors {
            g.extend(self.extractors.iter().flatten());
        }
        g
    }

    pub fn params(&self, scope: ParamScope) -> Vec<&[T]> {
        self.groups(scope).into_iter().flat_map(Sequential::params).collect()
    }

    pub fn params_mut(&mut self, scope: ParamScope) -> Vec<&mut [T]> {
        let mut out = Vec::new();
        if scope.autoencoder {
            out.extend(self.trunk.params_mut());
            for s in self.heads.iter_mut().flatten().chain(self.decoders.iter_mut().flatten()) {
                out.extend(s.params_mut());
            }
        }
        if scope.extractors {
            for s in self.extractors.iter_mut().flatten() {
                out.extend(s.params_mut());
            }
        }
        out
    }

    pub fn num_params(&self, scope: ParamScope) -> usize {
        self.params(scope).iter().map(|p| p.len()).sum()
    }

    /// Extractors, indexed `[layer][head]`.
    pub fn extractors(&self) -> &[Vec<Sequential<T>>] {
        &self.extractors
    }

    pub(crate) fn extractor_mut(&mut self, layer: usize, head: usize) -> &mut Sequential<T> {
        &mut self.extractors[layer][head]
    }

    /// Replaces the extractors with ones of identical shape (e.g. shared
    /// pretrained classifiers).
    pub fn set_extractors(&mut self, extractors: Vec<Vec<Sequential<T>>>) -> Result<()> {
        let same = extractors.len() == self.extractors.len()
            && extractors.iter().zip(&self.extractors).all(|(a, b)| {
                a.len() == b.len()
                    && a.iter().zip(b).all(|(x, y)| x.input_dims() == y.input_dims() && x.output_dims() == y.output_dims())
            });
        if !same {
            return Err(Error::Shape("extractor layout differs from model".into()));
        }
        self.extractors = extractors;
        Ok(())
    }
}
