//! Equal-weight diagonal Gaussian-mixture prior over the latent space.
//!
//! One component per factor combination. Means and variances are estimated
//! from encoded labeled samples; classification uses posterior
//! responsibilities so that an acceptance threshold lives in `[0, 1]`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_VARIANCE_FLOOR: f64 = 1e-4;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GmPrior {
    means: Vec<Vec<f64>>,
    variances: Vec<Vec<f64>>,
}

/// Outcome of thresholded classification of one code.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Classification {
    pub accepted: bool,
    /// Winning component, present only when accepted.
    pub component: Option<usize>,
    /// Largest posterior responsibility.
    pub responsibility: f64,
    /// Winning component regardless of acceptance.
    pub argmax: usize,
}

impl GmPrior {
    pub fn new(means: Vec<Vec<f64>>, variances: Vec<Vec<f64>>) -> Result<Self> {
        if means.is_empty() {
            return Err(Error::Config("prior needs at least one component".into()));
        }
        let dim = means[0].len();
        if dim == 0 || means.len() != variances.len() {
            return Err(Error::Shape("prior means/variances disagree".into()));
        }
        for (m, v) in means.iter().zip(&variances) {
            if m.len() != dim || v.len() != dim {
                return Err(Error::Shape("ragged prior component".into()));
            }
            if m.iter().any(|x| !x.is_finite()) || v.iter().any(|x| !(x.is_finite() && *x > 0.0)) {
                return Err(Error::Numeric(
                    "prior parameters must be finite with positive variances".into(),
                ));
            }
        }
        Ok(GmPrior { means, variances })
    }

    /// Unit-variance components at the given means.
    pub fn isotropic(means: Vec<Vec<f64>>, variance: f64) -> Result<Self> {
        let variances = means.iter().map(|m| vec![variance; m.len()]).collect();
        Self::new(means, variances)
    }

    pub fn n(&self) -> usize {
        self.means.len()
    }

    pub fn latent_dim(&self) -> usize {
        self.means[0].len()
    }

    pub fn means(&self) -> &[Vec<f64>] {
        &self.means
    }

    pub fn variances(&self) -> &[Vec<f64>] {
        &self.variances
    }

    pub fn mean(&self, i: usize) -> &[f64] {
        &self.means[i]
    }

    /// Rounds every parameter to the nearest `f32`, matching what a
    /// checkpoint stores.
    pub fn to_f32_precision(&self) -> Self {
        let round = |rows: &[Vec<f64>]| -> Vec<Vec<f64>> {
            rows.iter()
                .map(|r| r.iter().map(|&v| v as f32 as f64).collect())
                .collect()
        };
        GmPrior {
            means: round(&self.means),
            variances: round(&self.variances)
                .into_iter()
                .map(|r| r.into_iter().map(|v| v.max(f32::MIN_POSITIVE as f64)).collect())
                .collect(),
        }
    }

    /// Log density of `z` under component `i`.
    pub fn log_component_density(&self, i: usize, z: &[f64]) -> f64 {
        let (m, v) = (&self.means[i], &self.variances[i]);
        let mut acc = 0.0;
        for ((&x, &mu), &var) in z.iter().zip(m).zip(v) {
            let d = x - mu;
            acc += d * d / var + var.ln();
        }
        -0.5 * (acc + z.len() as f64 * LN_2PI)
    }

    pub fn log_component_densities(&self, z: &[f64]) -> Vec<f64> {
        debug_assert_eq!(z.len(), self.latent_dim());
        (0..self.n()).map(|i| self.log_component_density(i, z)).collect()
    }

    /// Mixture log density `logsumexp(log p_i) − log N`.
    pub fn log_density(&self, z: &[f64]) -> f64 {
        log_sum_exp(&self.log_component_densities(z)) - (self.n() as f64).ln()
    }

    /// Posterior responsibilities under equal weights.
    pub fn responsibilities(&self, z: &[f64]) -> Vec<f64> {
        softmax(&self.log_component_densities(z))
    }

    pub fn classify(&self, z: &[f64], alpha: f64) -> Classification {
        classify_log_densities(&self.log_component_densities(z), alpha)
    }

    pub fn sample_component_with<R: Rng>(&self, i: usize, n: usize, rng: &mut R) -> Result<Vec<Vec<f64>>> {
        if i >= self.n() {
            return Err(Error::IndexOutOfRange { index: i, n: self.n() });
        }
        Ok((0..n).map(|_| self.draw(i, rng)).collect())
    }

    pub fn sample_component(&self, i: usize, n: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
        self.sample_component_with(i, n, &mut ChaCha8Rng::seed_from_u64(seed))
    }

    /// One draw from component `i`. Panics if `i` is out of range.
    pub fn draw<R: Rng>(&self, i: usize, rng: &mut R) -> Vec<f64> {
        self.means[i]
            .iter()
            .zip(&self.variances[i])
            .map(|(&m, &v)| {
                let e: f64 = rng.sample(StandardNormal);
                m + v.sqrt() * e
            })
            .collect()
    }

    /// Draws from the mixture: a uniformly chosen component, then a Gaussian.
    pub fn sample<R: Rng>(&self, n: usize, rng: &mut R) -> Vec<Vec<f64>> {
        (0..n)
            .map(|_| {
                let i = rng.gen_range(0..self.n());
                self.draw(i, rng)
            })
            .collect()
    }
}

/// Thresholded argmax over responsibilities derived from log densities.
pub fn classify_log_densities(log_densities: &[f64], alpha: f64) -> Classification {
    let resp = softmax(log_densities);
    let (argmax, &best) = resp.iter().enumerate().fold(
        (0, &f64::NEG_INFINITY),
        |acc, (i, r)| if *r > *acc.1 { (i, r) } else { acc },
    );
    let accepted = best >= alpha;
    Classification {
        accepted,
        component: accepted.then_some(argmax),
        responsibility: best,
        argmax,
    }
}

pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

fn softmax(log_values: &[f64]) -> Vec<f64> {
    let max = log_values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = log_values.iter().map(|v| (v - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Estimates one component per combination from its encoded codes.
///
/// Means are sample means; variances are per-axis sample variances with
/// divisor `max(count − 1, 1)`, raised to at least `variance_floor`.
pub fn estimate_prior(codes_by_combination: &[Vec<Vec<f64>>], variance_floor: f64) -> Result<GmPrior> {
    if codes_by_combination.is_empty() {
        return Err(Error::Config("no combinations to estimate".into()));
    }
    if variance_floor <= 0.0 {
        return Err(Error::Config("variance floor must be positive".into()));
    }
    let mut means = Vec::with_capacity(codes_by_combination.len());
    let mut variances = Vec::with_capacity(codes_by_combination.len());
    for (i, codes) in codes_by_combination.iter().enumerate() {
        let first = codes
            .first()
            .ok_or_else(|| Error::InsufficientSamples(format!("combination {i} has no codes")))?;
        let dim = first.len();
        let count = codes.len() as f64;
        let mut mean = vec![0.0; dim];
        for c in codes {
            if c.len() != dim {
                return Err(Error::Shape(format!("combination {i} has ragged codes")));
            }
            for (m, &x) in mean.iter_mut().zip(c) {
                *m += x;
            }
        }
        mean.iter_mut().for_each(|m| *m /= count);
        let mut var = vec![0.0; dim];
        for c in codes {
            for ((s, &x), &m) in var.iter_mut().zip(c).zip(&mean) {
                *s += (x - m) * (x - m);
            }
        }
        let divisor = (count - 1.0).max(1.0);
        var.iter_mut().for_each(|s| *s = (*s / divisor).max(variance_floor));
        means.push(mean);
        variances.push(var);
    }
    GmPrior::new(means, variances)
}

/// I.i.d. draws from the warmup prior, uniform on `(−1, 1)^dim`.
pub fn warmup_sample_with<R: Rng>(n: usize, dim: usize, rng: &mut R) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| {
            (0..dim)
                .map(|_| loop {
                    let u: f64 = rng.gen_range(-1.0..1.0);
                    if u > -1.0 {
                        break u;
                    }
                })
                .collect()
        })
        .collect()
}

pub fn warmup_sample(n: usize, dim: usize, seed: u64) -> Vec<Vec<f64>> {
    warmup_sample_with(n, dim, &mut ChaCha8Rng::seed_from_u64(seed))
}
