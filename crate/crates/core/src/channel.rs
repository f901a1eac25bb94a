//! Analog noisy links between encoder heads and decoders.
//!
//! Transmitted sub-blocks are scaled to unit average power, so the noise
//! variance of a link is fully determined by its SNR.

use ndarray::{Array2, ArrayView2, Axis, Zip};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Noise variance of a unit-power link at `snr_db`.
pub fn snr_db_to_noise_variance(snr_db: f64) -> f64 {
    10f64.powf(-snr_db / 10.0)
}

/// Scales `symbols` so that their mean square is one.
pub fn normalize_power<T: Scalar>(symbols: &[T]) -> Result<Vec<T>> {
    if symbols.is_empty() {
        return Err(Error::Shape("cannot normalize an empty symbol block".into()));
    }
    let energy: T = symbols.iter().map(|&s| s * s).sum();
    if energy <= T::zero() {
        return Err(Error::DegenerateInput);
    }
    let scale = (T::of(symbols.len() as f64) / energy).sqrt();
    Ok(symbols.iter().map(|&s| s * scale).collect())
}

/// Row-wise power normalization of a batch of sub-blocks, with the per-row
/// scale factors kept for the backward pass.
#[derive(Debug, Clone)]
pub struct PowerNorm<T> {
    pub output: Array2<T>,
    scales: Vec<T>,
}

/// Smallest row energy accepted before a row is treated as all-zero.
const MIN_ENERGY: f64 = 1e-20;

impl<T: Scalar> PowerNorm<T> {
    pub fn forward(x: ArrayView2<'_, T>) -> Result<Self> {
        let n = T::of(x.ncols() as f64);
        let mut scales = Vec::with_capacity(x.nrows());
        let mut output = x.to_owned();
        for mut row in output.axis_iter_mut(Axis(0)) {
            let energy: T = row.iter().map(|&s| s * s).sum();
            if !(energy.as_f64() > MIN_ENERGY) {
                return Err(Error::DegenerateInput);
            }
            let s = (n / energy).sqrt();
            row.mapv_inplace(|v| v * s);
            scales.push(s);
        }
        Ok(Self { output, scales })
    }

    /// Gradient with respect to the un-normalized input.
    ///
    /// For `y = s x` with `s = sqrt(n) / |x|`: `dx = s (g - y (y.g) / n)`.
    pub fn backward(&self, grad: ArrayView2<'_, T>) -> Array2<T> {
        let n = T::of(self.output.ncols() as f64);
        let mut dx = grad.to_owned();
        for ((mut d, y), &s) in dx.axis_iter_mut(Axis(0)).zip(self.output.axis_iter(Axis(0))).zip(&self.scales) {
            let proj = y.dot(&d) / n;
            Zip::from(&mut d).and(&y).for_each(|d, &y| *d = s * (*d - y * proj));
        }
        dx
    }
}

/// Adds i.i.d. zero-mean Gaussian noise of the given variance.
pub fn transmit<T: Scalar, R: Rng + ?Sized>(symbols: &[T], variance: f64, rng: &mut R) -> Result<Vec<T>> {
    check_variance(variance)?;
    if variance == 0.0 {
        return Ok(symbols.to_vec());
    }
    let sd = variance.sqrt();
    Ok(symbols.iter().map(|&s| s + T::of(sd * rng.sample::<f64, _>(StandardNormal))).collect())
}

/// Batch form of [`transmit`]; draws in row-major order.
pub fn transmit_batch<T: Scalar, R: Rng + ?Sized>(
    symbols: ArrayView2<'_, T>,
    variance: f64,
    rng: &mut R,
) -> Result<Array2<T>> {
    check_variance(variance)?;
    let mut out = symbols.to_owned();
    if variance > 0.0 {
        let sd = variance.sqrt();
        out.iter_mut().for_each(|s| *s += T::of(sd * rng.sample::<f64, _>(StandardNormal)));
    }
    Ok(out)
}

fn check_variance(variance: f64) -> Result<()> {
    if variance.is_nan() || variance < 0.0 {
        return Err(Error::Domain(format!("noise variance must be non-negative, got {variance}")));
    }
    Ok(())
}

/// Per-link SNR in dB, indexed `(head layer, decoder layer)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkNoiseSpec {
    snr_db: Array2<f64>,
}

impl LinkNoiseSpec {
    pub fn new(snr_db: Array2<f64>) -> Result<Self> {
        if snr_db.nrows() != snr_db.ncols() || snr_db.is_empty() {
            return Err(Error::Shape(format!("link SNR matrix must be L x L, got {:?}", snr_db.dim())));
        }
        if snr_db.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("link SNR entries must be finite".into()));
        }
        Ok(Self { snr_db })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let l = rows.len();
        if rows.iter().any(|r| r.len() != l) {
            return Err(Error::Shape("link SNR rows must all have length L".into()));
        }
        Self::new(Array2::from_shape_vec((l, l), rows.concat()).map_err(|e| Error::Shape(e.to_string()))?)
    }

    /// Every link at the same SNR (the single-user scenario).
    pub fn uniform(layers: usize, snr_db: f64) -> Result<Self> {
        Self::new(Array2::from_elem((layers, layers), snr_db))
    }

    /// Sub-block `j` reaches every decoder at `per_block[j]` dB.
    pub fn per_sub_block(per_block: &[f64]) -> Result<Self> {
        let l = per_block.len();
        Self::new(Array2::from_shape_fn((l, l), |(j, _)| per_block[j]))
    }

    pub fn layers(&self) -> usize {
        self.snr_db.nrows()
    }

    /// SNR of the link from the head of layer `head` to decoder `decoder`
    /// (both zero-based).
    pub fn snr_db(&self, head: usize, decoder: usize) -> f64 {
        self.snr_db[[head, decoder]]
    }

    pub fn variance(&self, head: usize, decoder: usize) -> f64 {
        snr_db_to_noise_variance(self.snr_db(head, decoder))
    }

    pub fn matrix(&self) -> &Array2<f64> {
        &self.snr_db
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChannelScenario {
    MultiuserBlockFading,
    MultiuserAwgn,
    SingleUser,
}

impl ChannelScenario {
    /// Whether all decoders see the same noisy copy of a sub-block. Only a
    /// single receiver makes this true.
    pub fn shares_reception(self) -> bool {
        matches!(self, Self::SingleUser)
    }
}

/// First violated equality constraint, with one-based indices.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioViolation {
    pub constraint: &'static str,
    pub first: (usize, usize),
    pub second: (usize, usize),
}

impl std::fmt::Display for ScenarioViolation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{}: z{:?} != z{:?} (one-based (head layer, decoder))",
            self.constraint, self.first, self.second
        )
    }
}

pub fn validate_scenario(scenario: ChannelScenario, spec: &LinkNoiseSpec) -> Result<(), ScenarioViolation> {
    let m = spec.matrix();
    let l = m.nrows();
    if scenario == ChannelScenario::SingleUser {
        for i in 0..l {
            for k in 1..l {
                if m[[k, i]] != m[[0, i]] {
                    return Err(ScenarioViolation {
                        constraint: "single user requires z_ki = z_li",
                        first: (1, i + 1),
                        second: (k + 1, i + 1),
                    });
                }
            }
        }
    }
    if matches!(scenario, ChannelScenario::SingleUser | ChannelScenario::MultiuserAwgn) {
        for row in 0..l {
            for j in 1..l {
                if m[[row, j]] != m[[row, 0]] {
                    return Err(ScenarioViolation {
                        constraint: "AWGN requires z_li = z_lj",
                        first: (row + 1, 1),
                        second: (row + 1, j + 1),
                    });
                }
            }
        }
    }
    Ok(())
}
