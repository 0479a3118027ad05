//! Measurement noise and its amplification by the recovery operator.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::conditioning::recovery_singular_values;
use crate::error::{Error, Result};
use crate::recovery::RecoveryOperator;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    Uniform,
    Gaussian,
    Poisson,
}

impl std::str::FromStr for NoiseKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform" => Ok(NoiseKind::Uniform),
            "gaussian" => Ok(NoiseKind::Gaussian),
            "poisson" => Ok(NoiseKind::Poisson),
            other => Err(Error::Config(format!("unknown noise model '{other}'"))),
        }
    }
}

/// `scale` is the half-width for uniform noise, the standard deviation for
/// Gaussian noise and the global SNR `‖a²‖ / E‖n‖` for Poisson noise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    pub kind: NoiseKind,
    pub scale: f64,
    pub seed: u64,
}

/// The seeded generator used for trial `index`.
pub fn trial_rng(seed: u64, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed.wrapping_add(index))
}

/// Photon scale `s` for which `Poisson(s a²) / s` has global SNR `snr`.
///
/// `E‖n‖² = sum(a²) / s`, so `s = snr² sum(a²) / ‖a²‖²`.
pub fn photon_scale(truth: &[f64], snr: f64) -> Result<f64> {
    let sum: f64 = truth.iter().sum();
    let sq: f64 = truth.iter().map(|x| x * x).sum();
    if sq == 0.0 || sum <= 0.0 {
        return Err(Error::InvalidInput("Poisson noise needs a nonzero spectrum".into()));
    }
    Ok(snr * snr * sum / sq)
}

/// Draws an additive noise realization for `truth`.
pub fn sample_noise<R: Rng>(model: &NoiseModel, truth: &[f64], rng: &mut R) -> Result<Vec<f64>> {
    if !(model.scale.is_finite() && model.scale > 0.0) {
        return Err(Error::InvalidInput(format!(
            "noise scale {} must be positive",
            model.scale
        )));
    }
    match model.kind {
        NoiseKind::Uniform => {
            let a = model.scale;
            Ok(truth.iter().map(|_| rng.random_range(-a..a)).collect())
        }
        NoiseKind::Gaussian => {
            let dist = Normal::new(0.0, model.scale)
                .map_err(|e| Error::InvalidInput(e.to_string()))?;
            Ok(truth.iter().map(|_| dist.sample(rng)).collect())
        }
        NoiseKind::Poisson => {
            if truth.iter().any(|&x| x < 0.0 || !x.is_finite()) {
                return Err(Error::InvalidInput(
                    "Poisson noise needs nonnegative intensities".into(),
                ));
            }
            let s = photon_scale(truth, model.scale)?;
            truth
                .iter()
                .map(|&x| {
                    let lambda = s * x;
                    if lambda <= 0.0 {
                        return Ok(0.0);
                    }
                    let dist =
                        Poisson::new(lambda).map_err(|e| Error::InvalidInput(e.to_string()))?;
                    let count: f64 = dist.sample(rng);
                    Ok(count / s - x)
                })
                .collect()
        }
    }
}

/// Noise over all of `J` for the measured set `W^c`, zero on the hole.
pub fn sample_noise_on_measured<R: Rng>(
    op: &RecoveryOperator,
    model: &NoiseModel,
    truth: &[f64],
    rng: &mut R,
) -> Result<Vec<f64>> {
    let hole = op.hole();
    if truth.len() != hole.grid().len() {
        return Err(Error::DimensionMismatch {
            expected: hole.grid().len(),
            got: truth.len(),
        });
    }
    let outer: Vec<usize> = hole.complement().positions();
    let t: Vec<f64> = outer.iter().map(|&p| truth[p]).collect();
    let n = sample_noise(model, &t, rng)?;
    let mut full = vec![0.0; truth.len()];
    for (&p, v) in outer.iter().zip(n) {
        full[p] = v;
    }
    Ok(full)
}

/// `‖R n‖ / ‖n‖` for noise given over `J`; entries on the hole are ignored.
pub fn amplification_ratio(op: &RecoveryOperator, n: &[Complex64]) -> Result<f64> {
    let grid = op.hole().grid();
    if n.len() != grid.len() {
        return Err(Error::DimensionMismatch {
            expected: grid.len(),
            got: n.len(),
        });
    }
    let mask = op.hole().mask();
    let norm: f64 = n
        .iter()
        .zip(mask)
        .filter(|(_, &h)| !h)
        .map(|(z, _)| z.norm_sqr())
        .sum::<f64>()
        .sqrt();
    if norm == 0.0 {
        return Err(Error::InvalidInput("noise vector is zero".into()));
    }
    let out = op.apply_complex(n);
    Ok(out.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt() / norm)
}

pub fn amplification_ratio_real(op: &RecoveryOperator, n: &[f64]) -> Result<f64> {
    let z: Vec<Complex64> = n.iter().map(|&x| Complex64::new(x, 0.0)).collect();
    amplification_ratio(op, &z)
}

/// Unit input direction `z_j` (0-based over the descending `nu_j`), the
/// preimage of the `j`-th singular value of the recovery operator.
pub fn input_singular_direction(op: &RecoveryOperator, j: usize) -> Result<Vec<Complex64>> {
    let rank = op.rank();
    if j >= rank {
        return Err(Error::InvalidInput(format!("direction {j} outside 0..{rank}")));
    }
    // nu is largest for the smallest sigma, the last right singular vector
    let v = op.svd().right_vector(rank - 1 - j);
    let z = op.apply_adjoint(&v);
    let norm = z.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
    if norm == 0.0 {
        return Err(Error::InvalidInput("direction lies in the null space".into()));
    }
    Ok(z.into_iter().map(|c| c / norm).collect())
}

/// `sqrt(sum nu_j^2 / |W^c|)`, a bound on the expected ratio for i.i.d. noise.
pub fn expected_amplification_bound(op: &RecoveryOperator) -> f64 {
    let sigma = &op.svd().sigma[..op.rank()];
    let outer = op.hole().grid().len() - op.hole().len();
    let sum: f64 = recovery_singular_values(sigma).iter().map(|x| x * x).sum();
    (sum / outer as f64).sqrt()
}

#[derive(Debug, Clone, Serialize)]
pub struct TrialSummary {
    pub trials: usize,
    pub mean: f64,
    /// Standard error of the mean.
    pub std_err: f64,
    pub median: f64,
    pub p95: f64,
    pub p99: f64,
    pub max: f64,
    pub bound_eq18: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct HistogramBin {
    pub left: f64,
    pub right: f64,
    pub count: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct NoiseTrials {
    pub model: NoiseModel,
    pub ratios: Vec<f64>,
    pub summary: TrialSummary,
    pub histogram: Vec<HistogramBin>,
}

/// Linear-interpolated quantile of sorted data.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

pub fn median(values: &[f64]) -> f64 {
    let mut s = values.to_vec();
    s.sort_by(f64::total_cmp);
    quantile(&s, 0.5)
}

/// Equal-width bins spanning the data range.
pub fn histogram(values: &[f64], bins: usize) -> Vec<HistogramBin> {
    if values.is_empty() || bins == 0 {
        return Vec::new();
    }
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let width = if hi > lo { (hi - lo) / bins as f64 } else { 1.0 };
    let mut counts = vec![0usize; bins];
    for &v in values {
        let b = (((v - lo) / width) as usize).min(bins - 1);
        counts[b] += 1;
    }
    counts
        .into_iter()
        .enumerate()
        .map(|(i, count)| HistogramBin {
            left: lo + i as f64 * width,
            right: lo + (i + 1) as f64 * width,
            count,
        })
        .collect()
}

pub fn summarize(ratios: &[f64], bound: f64) -> TrialSummary {
    let n = ratios.len();
    let mean = ratios.iter().sum::<f64>() / n as f64;
    let var = if n > 1 {
        ratios.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (n - 1) as f64
    } else {
        0.0
    };
    let mut sorted = ratios.to_vec();
    sorted.sort_by(f64::total_cmp);
    TrialSummary {
        trials: n,
        mean,
        std_err: (var / n as f64).sqrt(),
        median: quantile(&sorted, 0.5),
        p95: quantile(&sorted, 0.95),
        p99: quantile(&sorted, 0.99),
        max: sorted[n - 1],
        bound_eq18: bound,
    }
}

/// Runs `trials` noise draws; trial `t` uses seed `model.seed + t`.
pub fn run_noise_trials(
    op: &RecoveryOperator,
    model: &NoiseModel,
    truth: &[f64],
    trials: usize,
    bins: usize,
) -> Result<NoiseTrials> {
    if trials == 0 {
        return Err(Error::InvalidInput("trials must be at least 1".into()));
    }
    let mut ratios = Vec::with_capacity(trials);
    for t in 0..trials {
        let mut rng = trial_rng(model.seed, t as u64);
        let n = sample_noise_on_measured(op, model, truth, &mut rng)?;
        ratios.push(amplification_ratio_real(op, &n)?);
    }
    let summary = summarize(&ratios, expected_amplification_bound(op));
    let histogram = histogram(&ratios, bins);
    Ok(NoiseTrials {
        model: *model,
        ratios,
        summary,
        histogram,
    })
}
