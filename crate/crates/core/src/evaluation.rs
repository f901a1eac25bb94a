//! Reconstruction and classification metrics, SNR sweeps over layer
//! decoders, the separate source/channel coding reference, and the
//! class-weighting comparison.

use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::atomic::{AtomicUsize, Ordering};

use ndarray::{Array1, Array2, ArrayView1, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::channel::{ChannelScenario, LinkNoiseSpec};
use crate::data::{apply_pooling, Dataset, ImageShape, PoolingMap};
use crate::error::{Error, Result};
use crate::model::{HeadTopology, LayerOutput, ModelTopology, SmrcModel};
use crate::objective::LossConfig;
use crate::scalar::Scalar;

/// Examples per forward chunk; bounds the size of convolution buffers.
const CHUNK: usize = 250;

pub fn psnr_from_mse(mse: f64, max_value: f64) -> Result<f64> {
    if !(max_value > 0.0) {
        return Err(Error::Domain(format!("max value must be positive, got {max_value}")));
    }
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (max_value * max_value / mse).log10())
}

/// `10 log10(max² / MSE)` over all elements; identical inputs give +inf.
pub fn psnr<T: Scalar>(x: ArrayView1<'_, T>, xh: ArrayView1<'_, T>, max_value: f64) -> Result<f64> {
    if x.len() != xh.len() || x.is_empty() {
        return Err(Error::Shape(format!("cannot compare {} and {} values", x.len(), xh.len())));
    }
    let mse = x.iter().zip(&xh).map(|(&a, &b)| (a.as_f64() - b.as_f64()).powi(2)).sum::<f64>() / x.len() as f64;
    psnr_from_mse(mse, max_value)
}

/// Mean over rows of per-image PSNR.
pub fn mean_psnr<T: Scalar>(x: &Array2<T>, xh: &Array2<T>, max_value: f64) -> Result<f64> {
    if x.dim() != xh.dim() || x.nrows() == 0 {
        return Err(Error::Shape(format!("cannot compare {:?} and {:?}", x.dim(), xh.dim())));
    }
    let mut sum = 0.0;
    for (a, b) in x.axis_iter(Axis(0)).zip(xh.axis_iter(Axis(0))) {
        sum += psnr(a, b, max_value)?;
    }
    Ok(sum / x.nrows() as f64)
}

/// Counts indexed `(true class, predicted class)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    counts: Array2<u64>,
}

impl ConfusionMatrix {
    pub fn new(num_classes: usize) -> Self {
        Self { counts: Array2::zeros((num_classes, num_classes)) }
    }

    pub fn from_predictions(labels: &[usize], predictions: &[usize], num_classes: usize) -> Result<Self> {
        let mut cm = Self::new(num_classes);
        cm.record_all(labels, predictions)?;
        Ok(cm)
    }

    pub fn record_all(&mut self, labels: &[usize], predictions: &[usize]) -> Result<()> {
        if labels.len() != predictions.len() {
            return Err(Error::Shape(format!("{} labels vs {} predictions", labels.len(), predictions.len())));
        }
        let n = self.num_classes();
        for (&y, &p) in labels.iter().zip(predictions) {
            if y >= n || p >= n {
                return Err(Error::Domain(format!("class index out of range for {n} classes: ({y}, {p})")));
            }
            self.counts[[y, p]] += 1;
        }
        Ok(())
    }

    pub fn num_classes(&self) -> usize {
        self.counts.nrows()
    }

    pub fn counts(&self) -> &Array2<u64> {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.counts.sum()
    }
}

/// Per-class recall and precision; `None` where the denominator is zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub recall: Vec<Option<f64>>,
    pub precision: Vec<Option<f64>>,
    /// Example-weighted average recall, equal to trace / total and to the
    /// example-weighted average precision.
    pub average_accuracy: f64,
    /// Unweighted means over the defined entries.
    pub macro_recall: f64,
    pub macro_precision: f64,
}

fn defined_mean(v: &[Option<f64>]) -> f64 {
    let d: Vec<f64> = v.iter().flatten().copied().collect();
    if d.is_empty() {
        f64::NAN
    } else {
        d.iter().sum::<f64>() / d.len() as f64
    }
}

impl ClassMetrics {
    pub fn mean_recall(&self, classes: std::ops::Range<usize>) -> f64 {
        defined_mean(&self.recall[classes])
    }

    pub fn mean_precision(&self, classes: std::ops::Range<usize>) -> f64 {
        defined_mean(&self.precision[classes])
    }
}

pub fn classification_metrics(cm: &ConfusionMatrix) -> Result<ClassMetrics> {
    let total = cm.total();
    if cm.num_classes() == 0 || total == 0 {
        return Err(Error::Domain("confusion matrix is empty".into()));
    }
    let c = &cm.counts;
    let n = cm.num_classes();
    let ratio = |num: u64, den: u64| (den > 0).then(|| num as f64 / den as f64);
    let recall: Vec<_> = (0..n).map(|i| ratio(c[[i, i]], c.row(i).sum())).collect();
    let precision: Vec<_> = (0..n).map(|i| ratio(c[[i, i]], c.column(i).sum())).collect();
    let trace: u64 = (0..n).map(|i| c[[i, i]]).sum();
    Ok(ClassMetrics {
        macro_recall: defined_mean(&recall),
        macro_precision: defined_mean(&precision),
        recall,
        precision,
        average_accuracy: trace as f64 / total as f64,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McsEntry {
    pub min_snr_db: f64,
    pub bits_per_symbol: f64,
}

/// Modulation and coding schemes, sorted by SNR threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McsTable {
    entries: Vec<McsEntry>,
}

const LTE_CQI_CSV: &str = include_str!("../data/mcs_lte_cqi_v1.csv");

impl McsTable {
    pub fn new(entries: Vec<McsEntry>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::Config("MCS table is empty".into()));
        }
        for (i, e) in entries.iter().enumerate() {
            if !e.min_snr_db.is_finite() || !(e.bits_per_symbol > 0.0) {
                return Err(Error::Config(format!("MCS row {}: invalid entry {e:?}", i + 1)));
            }
            if i > 0 && (e.min_snr_db <= entries[i - 1].min_snr_db || e.bits_per_symbol < entries[i - 1].bits_per_symbol) {
                return Err(Error::Config(format!("MCS row {}: thresholds must increase and efficiencies not decrease", i + 1)));
            }
        }
        Ok(Self { entries })
    }

    /// The 4-bit CQI table of LTE (QPSK to 64QAM) with BLER-10% SNR
    /// thresholds.
    pub fn lte_cqi() -> Self {
        Self::from_reader(LTE_CQI_CSV.as_bytes()).expect("bundled MCS table parses")
    }

    pub fn from_reader<R: Read>(reader: R) -> Result<Self> {
        let mut rd = csv::Reader::from_reader(reader);
        let entries = rd.deserialize().collect::<std::result::Result<Vec<McsEntry>, _>>()?;
        Self::new(entries)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path).map_err(|e| Error::Load { path: path.to_path_buf(), reason: e.to_string() })?;
        Self::from_reader(f)
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        for e in &self.entries {
            wr.serialize(e)?;
        }
        wr.flush()?;
        Ok(())
    }

    pub fn entries(&self) -> &[McsEntry] {
        &self.entries
    }

    /// Highest scheme whose threshold does not exceed `snr_db`.
    pub fn select(&self, snr_db: f64) -> Option<McsEntry> {
        self.entries.iter().rev().find(|e| e.min_snr_db <= snr_db).copied()
    }
}

pub fn bit_budget(n_symbols: usize, bits_per_symbol: f64) -> usize {
    (n_symbols as f64 * bits_per_symbol).floor() as usize
}

/// Lossy image codec used by the separate-coding reference. Pixels are in
/// `[0, 1]`.
pub trait ImageCodec {
    /// Compresses to at most `max_bits` and returns the decoded image, or
    /// `None` when no operating point fits the budget.
    fn roundtrip(&self, image: ArrayView1<'_, f64>, shape: ImageShape, max_bits: usize) -> Result<Option<Array1<f64>>>;
}

/// Deterministic codec: block-average downsampling followed by uniform
/// quantization. Each rung is a (block size, bits per sample) pair; the
/// codec keeps the rung with the lowest distortion among those that fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LadderCodec {
    pub rungs: Vec<(usize, u32)>,
}

impl Default for LadderCodec {
    fn default() -> Self {
        let rungs = [4usize, 2, 1].iter().flat_map(|&b| (2..=8).map(move |q| (b, q))).collect();
        Self { rungs }
    }
}

impl LadderCodec {
    pub fn rung_bits(shape: ImageShape, block: usize, bits: u32) -> usize {
        shape.channels * shape.height.div_ceil(block) * shape.width.div_ceil(block) * bits as usize
    }

    pub fn apply(image: ArrayView1<'_, f64>, shape: ImageShape, block: usize, bits: u32) -> Array1<f64> {
        let (h, w) = (shape.height, shape.width);
        let levels = (1u64 << bits) as f64;
        let mut out = Array1::zeros(image.len());
        for c in 0..shape.channels {
            for by in (0..h).step_by(block) {
                for bx in (0..w).step_by(block) {
                    let (ye, xe) = ((by + block).min(h), (bx + block).min(w));
                    let mut sum = 0.0;
                    for y in by..ye {
                        for x in bx..xe {
                            sum += image[(c * h + y) * w + x];
                        }
                    }
                    let mean = sum / ((ye - by) * (xe - bx)) as f64;
                    let q = (mean.clamp(0.0, 1.0) * levels).floor().min(levels - 1.0);
                    let v = (q + 0.5) / levels;
                    for y in by..ye {
                        for x in bx..xe {
                            out[(c * h + y) * w + x] = v;
                        }
                    }
                }
            }
        }
        out
    }
}

impl ImageCodec for LadderCodec {
    fn roundtrip(&self, image: ArrayView1<'_, f64>, shape: ImageShape, max_bits: usize) -> Result<Option<Array1<f64>>> {
        let mut best: Option<(f64, Array1<f64>)> = None;
        for &(block, bits) in &self.rungs {
            if block == 0 || bits == 0 || Self::rung_bits(shape, block, bits) > max_bits {
                continue;
            }
            let rec = Self::apply(image, shape, block, bits);
            let err = image.iter().zip(&rec).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
            if best.as_ref().is_none_or(|(e, _)| err < *e) {
                best = Some((err, rec));
            }
        }
        Ok(best.map(|(_, r)| r))
    }
}

/// Runs an external program per image. Arguments may contain `{input}`,
/// `{output}` and `{max_bytes}`; the input is a binary PGM/PPM, the program
/// must write the decoded image to `{output}` in the same format and print
/// the compressed size in bytes on stdout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExternalCodec {
    pub program: String,
    pub args: Vec<String>,
}

static SCRATCH: AtomicUsize = AtomicUsize::new(0);

fn scratch_path(ext: &str) -> PathBuf {
    let n = SCRATCH.fetch_add(1, Ordering::Relaxed);
    std::env::temp_dir().join(format!("smrc-codec-{}-{n}.{ext}", std::process::id()))
}

pub fn write_pnm(path: &Path, image: ArrayView1<'_, f64>, shape: ImageShape) -> Result<()> {
    let (magic, chans) = match shape.channels {
        1 => ("P5", 1),
        3 => ("P6", 3),
        c => return Err(Error::Shape(format!("PNM needs 1 or 3 channels, got {c}"))),
    };
    let (h, w) = (shape.height, shape.width);
    let mut bytes = format!("{magic}\n{w} {h}\n255\n").into_bytes();
    for y in 0..h {
        for x in 0..w {
            for c in 0..chans {
                bytes.push((image[(c * h + y) * w + x].clamp(0.0, 1.0) * 255.0).round() as u8);
            }
        }
    }
    std::fs::write(path, bytes)?;
    Ok(())
}

pub fn read_pnm(path: &Path, shape: ImageShape) -> Result<Array1<f64>> {
    let bad = |why: &str| Error::ExternalTool(format!("{}: {why}", path.display()));
    let bytes = std::fs::read(path).map_err(|e| bad(&e.to_string()))?;
    let mut fields = Vec::new();
    let mut i = 0;
    while fields.len() < 4 {
        while i < bytes.len() && bytes[i].is_ascii_whitespace() {
            i += 1;
        }
        if i < bytes.len() && bytes[i] == b'#' {
            while i < bytes.len() && bytes[i] != b'\n' {
                i += 1;
            }
            continue;
        }
        let start = i;
        while i < bytes.len() && !bytes[i].is_ascii_whitespace() {
            i += 1;
        }
        if start == i {
            return Err(bad("truncated header"));
        }
        fields.push(String::from_utf8_lossy(&bytes[start..i]).into_owned());
    }
    i += 1;
    let chans = match fields[0].as_str() {
        "P5" => 1,
        "P6" => 3,
        _ => return Err(bad("not a binary PGM/PPM")),
    };
    let dims: Vec<usize> = fields[1..].iter().map(|f| f.parse().map_err(|_| bad("bad header number"))).collect::<Result<_>>()?;
    if chans != shape.channels || dims[0] != shape.width || dims[1] != shape.height || dims[2] != 255 {
        return Err(bad("decoded image has the wrong shape"));
    }
    let data = bytes.get(i..i + shape.len()).ok_or_else(|| bad("truncated pixels"))?;
    let (h, w) = (shape.height, shape.width);
    let mut out = Array1::zeros(shape.len());
    for y in 0..h {
        for x in 0..w {
            for c in 0..chans {
                out[(c * h + y) * w + x] = data[(y * w + x) * chans + c] as f64 / 255.0;
            }
        }
    }
    Ok(out)
}

impl ImageCodec for ExternalCodec {
    fn roundtrip(&self, image: ArrayView1<'_, f64>, shape: ImageShape, max_bits: usize) -> Result<Option<Array1<f64>>> {
        let ext = if shape.channels == 1 { "pgm" } else { "ppm" };
        let (input, output) = (scratch_path(ext), scratch_path(ext));
        write_pnm(&input, image, shape)?;
        let max_bytes = max_bits / 8;
        let args: Vec<String> = self
            .args
            .iter()
            .map(|a| {
                a.replace("{input}", &input.to_string_lossy())
                    .replace("{output}", &output.to_string_lossy())
                    .replace("{max_bytes}", &max_bytes.to_string())
            })
            .collect();
        let run = Command::new(&self.program).args(&args).output();
        let _ = std::fs::remove_file(&input);
        let result = (|| {
            let out = run.map_err(|e| Error::ExternalTool(format!("{}: {e}", self.program)))?;
            if !out.status.success() {
                return Err(Error::ExternalTool(format!(
                    "{} exited with {}: {}",
                    self.program,
                    out.status,
                    String::from_utf8_lossy(&out.stderr).trim()
                )));
            }
            let size: usize = String::from_utf8_lossy(&out.stdout)
                .trim()
                .parse()
                .map_err(|_| Error::ExternalTool(format!("{} did not print a byte count", self.program)))?;
            if size > max_bytes {
                return Ok(None);
            }
            read_pnm(&output, shape).map(Some)
        })();
        let _ = std::fs::remove_file(&output);
        result
    }
}

/// PSNR of separate source/channel coding of one image over `n_symbols`
/// channel uses at `snr_db`, assuming error-free delivery at the rate of the
/// selected scheme.
///
/// The receiver shows `fallback` when nothing is sent. That zero-rate option
/// is always open to the encoder, so the result is the better of the
/// fallback and the codec output when the codec fits the budget.
pub fn sscc_psnr(
    image: ArrayView1<'_, f64>,
    shape: ImageShape,
    snr_db: f64,
    table: &McsTable,
    codec: &dyn ImageCodec,
    n_symbols: usize,
    fallback: ArrayView1<'_, f64>,
) -> Result<f64> {
    if n_symbols == 0 {
        return Err(Error::Domain("n_symbols must be positive".into()));
    }
    let rec = match table.select(snr_db) {
        Some(m) => codec.roundtrip(image, shape, bit_budget(n_symbols, m.bits_per_symbol))?,
        None => None,
    };
    let floor = psnr(image, fallback, 1.0)?;
    match rec {
        Some(r) => Ok(psnr(image, r.view(), 1.0)?.max(floor)),
        None => Ok(floor),
    }
}

/// Mean `sscc_psnr` over the first `limit` test images at each SNR.
pub fn sscc_curve<T: Scalar>(
    test: &Dataset<T>,
    limit: usize,
    grid: &[f64],
    table: &McsTable,
    codec: &dyn ImageCodec,
    n_symbols: usize,
) -> Result<Vec<(f64, f64)>> {
    let n = limit.min(test.len());
    if n == 0 {
        return Err(Error::Shape("no test images".into()));
    }
    let fallback = test.mean_image().mapv(|v| v.as_f64());
    let images = test.images().slice(ndarray::s![..n, ..]).mapv(|v| v.as_f64());
    grid.iter()
        .map(|&snr| {
            let mut sum = 0.0;
            for row in images.axis_iter(Axis(0)) {
                sum += sscc_psnr(row, test.shape(), snr, table, codec, n_symbols, fallback.view())?;
            }
            Ok((snr, sum / n as f64))
        })
        .collect()
}

/// Metrics of one decoder head on a test set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadEval {
    pub layer: usize,
    pub head: usize,
    pub psnr_db: f64,
    pub metrics: ClassMetrics,
}

/// Runs the model over `test` in chunks and scores every `(layer, head)`.
/// Layers and heads are zero-based.
pub fn evaluate<T: Scalar>(
    model: &SmrcModel<T>,
    test: &Dataset<T>,
    links: &LinkNoiseSpec,
    scenario: ChannelScenario,
    seed: u64,
) -> Result<Vec<Vec<HeadEval>>> {
    let topo = model.topology();
    if test.is_empty() {
        return Err(Error::Shape("empty test set".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut psnr_sum: Vec<Vec<f64>> = topo.layers.iter().map(|l| vec![0.0; l.heads.len()]).collect();
    let mut cms: Vec<Vec<ConfusionMatrix>> =
        topo.layers.iter().map(|l| l.heads.iter().map(|h| ConfusionMatrix::new(h.classes.pooled_num_classes())).collect()).collect();
    let all: Vec<usize> = (0..test.len()).collect();
    for idx in all.chunks(CHUNK) {
        let b = test.gather(idx);
        let outs: Vec<LayerOutput<T>> = model.forward(b.images.view(), links, scenario, &mut rng)?;
        for (l, out) in outs.iter().enumerate() {
            for k in 0..out.reconstructions.len() {
                psnr_sum[l][k] += mean_psnr(&b.images, &out.reconstructions[k], 1.0)? * idx.len() as f64;
                let map = topo.classes(l, k);
                let y: Vec<usize> = b.labels.iter().map(|&y| apply_pooling(y, map)).collect::<Result<_>>()?;
                cms[l][k].record_all(&y, &out.predictions(k))?;
            }
        }
    }
    let n = test.len() as f64;
    psnr_sum
        .into_iter()
        .zip(cms)
        .enumerate()
        .map(|(l, (ps, cs))| {
            ps.into_iter()
                .zip(cs)
                .enumerate()
                .map(|(k, (p, cm))| Ok(HeadEval { layer: l, head: k, psnr_db: p / n, metrics: classification_metrics(&cm)? }))
                .collect()
        })
        .collect()
}

/// One `(training SNR, layer)` row of a sweep. Layers are one-based.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub training_snr_db: f64,
    pub layer: usize,
    pub psnr_db: f64,
    pub avg_recall: f64,
    pub recall: Vec<Option<f64>>,
    pub precision: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SweepResult {
    pub rows: Vec<SweepRow>,
}

impl SweepResult {
    pub fn header(num_classes: usize) -> Vec<String> {
        let mut h: Vec<String> = ["training_snr_db", "layer", "psnr_db", "avg_recall"].iter().map(|s| s.to_string()).collect();
        h.extend((0..num_classes).map(|i| format!("recall_{i}")));
        h.extend((0..num_classes).map(|i| format!("precision_{i}")));
        h
    }

    /// Undefined metrics are written as `nan`; classes a head does not
    /// have are left empty.
    pub fn write_csv<W: Write>(&self, w: W, num_classes: usize) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(Self::header(num_classes))?;
        let cell = |v: Option<&Option<f64>>| match v {
            None => String::new(),
            Some(None) => "nan".to_string(),
            Some(Some(x)) => x.to_string(),
        };
        for r in &self.rows {
            let mut rec = vec![r.training_snr_db.to_string(), r.layer.to_string(), r.psnr_db.to_string(), r.avg_recall.to_string()];
            rec.extend((0..num_classes).map(|i| cell(r.recall.get(i))));
            rec.extend((0..num_classes).map(|i| cell(r.precision.get(i))));
            wr.write_record(rec)?;
        }
        wr.flush()?;
        Ok(())
    }

    pub fn row(&self, training_snr_db: f64, layer: usize) -> Option<&SweepRow> {
        self.rows.iter().find(|r| r.training_snr_db == training_snr_db && r.layer == layer)
    }
}

/// Evaluates each checkpoint at its own training SNR over a single-user
/// channel. `heads[l]` picks the head that represents layer `l` (default
/// head 0). `checkpoints` pairs a training SNR with its model.
pub fn snr_sweep<T: Scalar>(
    checkpoints: &[(f64, &SmrcModel<T>)],
    test: &Dataset<T>,
    grid: &[f64],
    heads: Option<&[usize]>,
    seed: u64,
) -> Result<SweepResult> {
    let mut rows = Vec::new();
    for (gi, &snr) in grid.iter().enumerate() {
        let model = checkpoints
            .iter()
            .find(|(s, _)| *s == snr)
            .map(|(_, m)| *m)
            .ok_or_else(|| Error::Config(format!("no checkpoint trained at {snr} dB")))?;
        let layers = model.num_layers();
        let links = LinkNoiseSpec::uniform(layers, snr)?;
        let evals = evaluate(model, test, &links, ChannelScenario::SingleUser, seed.wrapping_add(gi as u64))?;
        for (l, per_head) in evals.into_iter().enumerate() {
            let k = heads.and_then(|h| h.get(l).copied()).unwrap_or(0);
            let e = per_head.into_iter().nth(k).ok_or_else(|| Error::Config(format!("layer {} has no head {}", l + 1, k + 1)))?;
            rows.push(SweepRow {
                training_snr_db: snr,
                layer: l + 1,
                psnr_db: e.psnr_db,
                avg_recall: e.metrics.average_accuracy,
                recall: e.metrics.recall,
                precision: e.metrics.precision,
            });
        }
    }
    Ok(SweepResult { rows })
}

/// Average recall per layer when sub-block 1 arrives at `first_snr_db` and
/// every later sub-block at `later_snr_db`. Layers are one-based.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossedRow {
    pub first_snr_db: f64,
    pub later_snr_db: f64,
    pub layer: usize,
    pub avg_recall: f64,
}

/// Sweeps per-sub-block SNRs for one trained model. Each decoder's inputs
/// are independent of the others' noise, so the multi-user AWGN scenario
/// yields the same per-decoder statistics as a single receiver.
pub fn crossed_recall_sweep<T: Scalar>(
    model: &SmrcModel<T>,
    test: &Dataset<T>,
    first: &[f64],
    later: &[f64],
    heads: Option<&[usize]>,
    seed: u64,
) -> Result<Vec<CrossedRow>> {
    let layers = model.num_layers();
    let mut rows = Vec::new();
    for (i, &a) in first.iter().enumerate() {
        for (j, &b) in later.iter().enumerate() {
            let per: Vec<f64> = (0..layers).map(|l| if l == 0 { a } else { b }).collect();
            let links = LinkNoiseSpec::per_sub_block(&per)?;
            let evals = evaluate(model, test, &links, ChannelScenario::MultiuserAwgn, seed.wrapping_add((i * later.len() + j) as u64))?;
            for (l, per_head) in evals.iter().enumerate() {
                let k = heads.and_then(|h| h.get(l).copied()).unwrap_or(0);
                let e = per_head.get(k).ok_or_else(|| Error::Config(format!("layer {} has no head {}", l + 1, k + 1)))?;
                rows.push(CrossedRow { first_snr_db: a, later_snr_db: b, layer: l + 1, avg_recall: e.metrics.average_accuracy });
            }
        }
    }
    Ok(rows)
}

/// Second-layer class weightings: emphasis on the first five classes with
/// the rest dropped, halved, or pooled into one catch-all class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BetaScheme {
    Dropped,
    Halved,
    Pooled,
}

impl BetaScheme {
    pub const ALL: [Self; 3] = [Self::Dropped, Self::Halved, Self::Pooled];

    pub fn name(self) -> &'static str {
        match self {
            Self::Dropped => "beta2_1",
            Self::Halved => "beta2_2",
            Self::Pooled => "beta2_3",
        }
    }

    pub fn classes(self, num_classes: usize, keep: usize) -> Result<PoolingMap> {
        match self {
            Self::Pooled => PoolingMap::pool_tail(num_classes, keep),
            _ => Ok(PoolingMap::identity(num_classes)),
        }
    }

    pub fn weights(self, num_classes: usize, keep: usize) -> Vec<f64> {
        let tail = match self {
            Self::Dropped => vec![0.0; num_classes - keep],
            Self::Halved => vec![0.5; num_classes - keep],
            Self::Pooled => vec![1.0],
        };
        [vec![1.0; keep], tail].concat()
    }
}

/// Two-layer topology whose second layer has one head per scheme (in
/// [`BetaScheme::ALL`] order) sharing the first layer, and the matching
/// loss configuration.
pub fn beta_scheme_setup(
    shape: ImageShape,
    num_classes: usize,
    symbols: [usize; 2],
    keep: usize,
    alpha: f64,
) -> Result<(ModelTopology, LossConfig)> {
    let mut topo = ModelTopology::uniform(shape, num_classes, &symbols);
    topo.layers[1].heads = BetaScheme::ALL
        .iter()
        .map(|s| s.classes(num_classes, keep).map(|classes| HeadTopology { classes }))
        .collect::<Result<_>>()?;
    let mut loss = LossConfig::uniform(&topo, alpha, 1.0);
    loss.beta[1] = BetaScheme::ALL.iter().map(|s| s.weights(num_classes, keep)).collect();
    loss.validate(&topo)?;
    Ok((topo, loss))
}

/// Recall and precision of the layer-1 decoder and of each layer-2 scheme
/// head. Mean columns cover `0..keep` and `keep..`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BetaRow {
    pub scheme: String,
    pub layer: usize,
    pub recall_head: f64,
    pub precision_head: f64,
    pub recall_tail: f64,
    pub precision_tail: f64,
    pub metrics: ClassMetrics,
}

/// `schemes` maps each scheme to its layer-2 head index.
pub fn beta_scheme_report<T: Scalar>(
    model: &SmrcModel<T>,
    test: &Dataset<T>,
    snr_db: f64,
    schemes: &[(BetaScheme, usize)],
    keep: usize,
    seed: u64,
) -> Result<Vec<BetaRow>> {
    if model.num_layers() < 2 {
        return Err(Error::Config("class-weighting comparison needs two layers".into()));
    }
    for s in BetaScheme::ALL {
        let Some(&(_, k)) = schemes.iter().find(|(t, _)| *t == s) else {
            return Err(Error::Config(format!("missing variant {}", s.name())));
        };
        if k >= model.topology().heads(1) {
            return Err(Error::Config(format!("variant {} points at missing head {}", s.name(), k + 1)));
        }
    }
    let links = LinkNoiseSpec::uniform(model.num_layers(), snr_db)?;
    let evals = evaluate(model, test, &links, ChannelScenario::SingleUser, seed)?;
    let row = |scheme: &str, layer: usize, m: &ClassMetrics| {
        let n = m.recall.len();
        let tail = if n > keep { keep..n } else { n..n };
        BetaRow {
            scheme: scheme.to_string(),
            layer,
            recall_head: m.mean_recall(0..keep),
            precision_head: m.mean_precision(0..keep),
            recall_tail: m.mean_recall(tail.clone()),
            precision_tail: m.mean_precision(tail),
            metrics: m.clone(),
        }
    };
    let mut rows = vec![row("layer1", 1, &evals[0][0].metrics)];
    for &(s, k) in schemes {
        rows.push(row(s.name(), 2, &evals[1][k].metrics));
    }
    Ok(rows)
}

pub fn write_beta_csv<W: Write>(rows: &[BetaRow], w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["scheme", "layer", "recall_0_4", "precision_0_4", "recall_5_9", "precision_5_9"])?;
    for r in rows {
        wr.write_record([
            r.scheme.clone(),
            r.layer.to_string(),
            r.recall_head.to_string(),
            r.precision_head.to_string(),
            r.recall_tail.to_string(),
            r.precision_tail.to_string(),
        ])?;
    }
    wr.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Architecture;
    use ndarray::array;
    use proptest::prelude::*;

    #[test]
    fn psnr_examples() {
        let x = array![0.1f64, 0.1];
        assert!((psnr(x.view(), array![0.2, 0.0].view(), 1.0).unwrap() - 20.0).abs() < 1e-9);
        assert!((psnr_from_mse(0.01, 1.0).unwrap() - 20.0).abs() < 1e-12);
        assert_eq!(psnr(x.view(), x.view(), 1.0).unwrap(), f64::INFINITY);
        assert!((psnr_from_mse(0.5, 1.0).unwrap() - 10.0 * 2f64.log10()).abs() < 1e-12);
        assert!(psnr(x.view(), array![0.0].view(), 1.0).is_err());
        assert!(psnr_from_mse(0.1, 0.0).is_err());
    }

    #[test]
    fn metric_examples() {
        let cm = ConfusionMatrix::from_predictions(&[0, 0, 1, 1], &[0, 1, 1, 1], 2).unwrap();
        let m = classification_metrics(&cm).unwrap();
        assert_eq!(m.recall, vec![Some(0.5), Some(1.0)]);
        assert_eq!(m.precision[0], Some(1.0));
        assert!((m.precision[1].unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(m.average_accuracy, 0.75);

        let perfect = ConfusionMatrix::from_predictions(&[0, 1, 2], &[0, 1, 2], 3).unwrap();
        let m = classification_metrics(&perfect).unwrap();
        assert!(m.recall.iter().chain(&m.precision).all(|v| *v == Some(1.0)));
        assert_eq!(m.average_accuracy, 1.0);

        let never = ConfusionMatrix::from_predictions(&[0, 1], &[0, 0], 2).unwrap();
        let m = classification_metrics(&never).unwrap();
        assert_eq!(m.precision[1], None);
        assert_eq!(m.recall[1], Some(0.0));
        assert_eq!(m.macro_precision, 0.5);

        assert!(classification_metrics(&ConfusionMatrix::new(3)).is_err());
    }

    #[test]
    fn mcs_table_is_valid_and_selects() {
        let t = McsTable::lte_cqi();
        assert_eq!(t.entries().len(), 15);
        assert!(t.select(-10.0).is_none());
        assert_eq!(t.select(8.1).unwrap().bits_per_symbol, 1.9141);
        assert_eq!(t.select(100.0).unwrap().bits_per_symbol, 5.5547);
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        assert!(buf.starts_with(b"min_snr_db,bits_per_symbol\n"));
        assert_eq!(McsTable::from_reader(buf.as_slice()).unwrap(), t);
        let bad = "min_snr_db,bits_per_symbol\n1.0,2.0\n0.5,3.0\n";
        assert!(McsTable::from_reader(bad.as_bytes()).is_err());
        assert_eq!(bit_budget(80, 2.0), 160);
        assert_eq!(bit_budget(80, 0.1523), 12);
    }

    fn stripes() -> (Array1<f64>, ImageShape) {
        let shape = ImageShape::new(1, 8, 8);
        (Array1::from_shape_fn(64, |i| ((i % 8) as f64 / 7.0 + (i / 8) as f64 / 14.0).min(1.0)), shape)
    }

    #[test]
    fn ladder_respects_budget_and_improves() {
        let (img, shape) = stripes();
        let codec = LadderCodec::default();
        assert!(codec.roundtrip(img.view(), shape, 7).unwrap().is_none());
        let mut last = f64::NEG_INFINITY;
        for bits in [8, 16, 32, 64, 128, 256, 512] {
            let rec = codec.roundtrip(img.view(), shape, bits).unwrap().unwrap();
            let p = psnr(img.view(), rec.view(), 1.0).unwrap();
            assert!(p >= last);
            last = p;
        }
    }

    #[test]
    fn sscc_uses_fallback_below_lowest_threshold() {
        let (img, shape) = stripes();
        let fallback = Array1::from_elem(64, 0.5);
        let table = McsTable::lte_cqi();
        let v = sscc_psnr(img.view(), shape, -20.0, &table, &LadderCodec::default(), 80, fallback.view()).unwrap();
        assert_eq!(v, psnr(img.view(), fallback.view(), 1.0).unwrap());
        assert!(sscc_psnr(img.view(), shape, 0.0, &table, &LadderCodec::default(), 0, fallback.view()).is_err());
    }

    #[cfg(unix)]
    #[test]
    fn external_codec_round_trips_and_reports_failures() {
        let (img, shape) = stripes();
        let copy = ExternalCodec {
            program: "sh".into(),
            args: vec!["-c".into(), "cp \"$0\" \"$1\" && echo 3".into(), "{input}".into(), "{output}".into()],
        };
        let rec = copy.roundtrip(img.view(), shape, 80).unwrap().unwrap();
        assert!(rec.iter().zip(&img).all(|(a, b)| (a - b).abs() <= 0.5 / 255.0 + 1e-12));
        assert!(copy.roundtrip(img.view(), shape, 16).unwrap().is_none());
        let failing = ExternalCodec { program: "sh".into(), args: vec!["-c".into(), "exit 4".into()] };
        assert!(matches!(failing.roundtrip(img.view(), shape, 80), Err(Error::ExternalTool(_))));
        let missing = ExternalCodec { program: "/nonexistent/codec".into(), args: vec![] };
        assert!(matches!(missing.roundtrip(img.view(), shape, 80), Err(Error::ExternalTool(_))));
    }

    fn toy() -> (SmrcModel<f64>, Dataset<f64>) {
        let shape = ImageShape::new(1, 8, 8);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (topo, _) = beta_scheme_setup(shape, 10, [4, 4], 5, 0.9).unwrap();
        let m = SmrcModel::new(topo, Architecture::tiny(shape), &mut rng).unwrap();
        let images = Array2::from_shape_fn((30, 64), |(i, p)| ((i * 7 + p) % 11) as f64 / 10.0);
        let labels = (0..30).map(|i| i % 10).collect();
        (m, Dataset::new(shape, 10, images, labels).unwrap())
    }

    #[test]
    fn sweep_bookkeeping() {
        let (m, data) = toy();
        let grid = [0.0, 4.0, 8.0, 12.0];
        let cps: Vec<(f64, &SmrcModel<f64>)> = grid.iter().map(|&s| (s, &m)).collect();
        let res = snr_sweep(&cps, &data, &grid, None, 0).unwrap();
        assert_eq!(res.rows.len(), 8);
        assert!(res.rows.iter().all(|r| r.psnr_db.is_finite()));
        let mut buf = Vec::new();
        res.write_csv(&mut buf, 10).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let header = text.lines().next().unwrap();
        assert!(header.starts_with("training_snr_db,layer,psnr_db,avg_recall,recall_0,"));
        assert!(header.ends_with(",precision_9"));
        assert_eq!(text.lines().count(), 9);
        assert!(snr_sweep(&cps[..2], &data, &grid, None, 0).is_err());

        // pooled head has six classes: the last four columns stay empty
        let pooled = snr_sweep(&cps, &data, &grid, Some(&[0, 2]), 0).unwrap();
        let mut buf = Vec::new();
        pooled.write_csv(&mut buf, 10).unwrap();
        let line = String::from_utf8(buf).unwrap().lines().nth(2).unwrap().to_string();
        assert!(line.ends_with(",,,,"), "{line}");
    }

    #[test]
    fn noiseless_untrained_sweep_is_finite() {
        let (m, data) = toy();
        let e = evaluate(&m, &data, &LinkNoiseSpec::uniform(2, 1e6).unwrap(), ChannelScenario::SingleUser, 0).unwrap();
        assert!(e.iter().flatten().all(|h| h.psnr_db.is_finite()));
    }

    #[test]
    fn beta_report_shapes_and_errors() {
        let (m, data) = toy();
        let schemes: Vec<_> = BetaScheme::ALL.iter().copied().zip(0..).collect();
        let rows = beta_scheme_report(&m, &data, 8.0, &schemes, 5, 0).unwrap();
        assert_eq!(rows.len(), 4);
        assert_eq!(rows[3].metrics.recall.len(), 6);
        assert!(beta_scheme_report(&m, &data, 8.0, &schemes[..2], 5, 0).is_err());
        assert_eq!(BetaScheme::Dropped.weights(10, 5), [vec![1.0; 5], vec![0.0; 5]].concat());
        assert_eq!(BetaScheme::Halved.weights(10, 5)[7], 0.5);
        assert_eq!(BetaScheme::Pooled.weights(10, 5), vec![1.0; 6]);
        let rows = crossed_recall_sweep(&m, &data, &[0.0, 8.0], &[0.0, 8.0, 15.0], None, 0).unwrap();
        assert_eq!(rows.len(), 2 * 3 * 2);
    }

    proptest! {
        #[test]
        fn metrics_match_counting(pairs in proptest::collection::vec((0usize..6, 0usize..6), 1..300)) {
            let (y, p): (Vec<usize>, Vec<usize>) = pairs.iter().copied().unzip();
            let m = classification_metrics(&ConfusionMatrix::from_predictions(&y, &p, 6).unwrap()).unwrap();
            for c in 0..6 {
                let tp = pairs.iter().filter(|&&(a, b)| a == c && b == c).count();
                let actual = y.iter().filter(|&&a| a == c).count();
                let predicted = p.iter().filter(|&&b| b == c).count();
                prop_assert_eq!(m.recall[c], (actual > 0).then(|| tp as f64 / actual as f64));
                prop_assert_eq!(m.precision[c], (predicted > 0).then(|| tp as f64 / predicted as f64));
            }
            let hits = pairs.iter().filter(|(a, b)| a == b).count() as f64;
            prop_assert_eq!(m.average_accuracy, hits / pairs.len() as f64);
            let weighted: f64 = (0..6).filter_map(|c| m.recall[c].map(|r| r * y.iter().filter(|&&a| a == c).count() as f64)).sum();
            prop_assert!((weighted / pairs.len() as f64 - m.average_accuracy).abs() < 1e-12);
        }

        #[test]
        fn psnr_decreases_with_mse(a in 1e-6f64..1.0, b in 1e-6f64..1.0) {
            prop_assume!(a < b);
            prop_assert!(psnr_from_mse(a, 1.0).unwrap() > psnr_from_mse(b, 1.0).unwrap());
        }

        #[test]
        fn sscc_is_monotone_in_snr(seed in 0u64..50) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            use rand::Rng;
            let shape = ImageShape::new(1, 8, 8);
            let img = Array1::from_shape_simple_fn(64, || rng.random_range(0.0..1.0));
            let fallback = Array1::from_elem(64, 0.5);
            let table = McsTable::lte_cqi();
            let codec = LadderCodec::default();
            let mut last = f64::NEG_INFINITY;
            for s in -10..30 {
                let v = sscc_psnr(img.view(), shape, s as f64, &table, &codec, 80, fallback.view()).unwrap();
                prop_assert!(v >= last, "{} dB after {} dB at {} dB SNR", v, last, s);
                last = v;
            }
        }
    }
}
