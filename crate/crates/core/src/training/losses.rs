//! Loss terms and their analytic gradients with respect to network outputs.
//!
//! Every function returns the batch-mean loss and the gradient of that mean.

use crate::error::{Error, Result};
use crate::nn::{Matrix, Real};
use crate::prior::GmPrior;

/// Clamp applied to every probability that enters a logarithm.
pub const PROB_CLAMP: f64 = 1e-6;

fn clamp_prob<T: Real>(p: T) -> T {
    let lo = T::lit(PROB_CLAMP);
    p.max(lo).min(T::one() - lo)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReconKind {
    /// Per-pixel Bernoulli cross-entropy.
    Bernoulli,
    MeanSquared,
}

impl ReconKind {
    /// Cross-entropy for grayscale images, squared error for color.
    pub fn for_channels(channels: usize) -> Self {
        if channels == 1 {
            ReconKind::Bernoulli
        } else {
            ReconKind::MeanSquared
        }
    }
}

/// Mean per-pixel reconstruction loss of `x_hat` against `x`.
pub fn reconstruction_loss<T: Real>(x: &Matrix<T>, x_hat: &Matrix<T>, kind: ReconKind) -> Result<(T, Matrix<T>)> {
    if x.rows() != x_hat.rows() || x.cols() != x_hat.cols() {
        return Err(Error::Shape(format!(
            "reconstruction {}×{} vs target {}×{}",
            x_hat.rows(),
            x_hat.cols(),
            x.rows(),
            x.cols()
        )));
    }
    let count = T::from_usize(x.data().len().max(1)).unwrap();
    let mut grad = Matrix::zeros(x.rows(), x.cols());
    let mut total = T::zero();
    for ((g, &t), &p) in grad.data_mut().iter_mut().zip(x.data()).zip(x_hat.data()) {
        match kind {
            ReconKind::Bernoulli => {
                let q = clamp_prob(p);
                total = total - (t * q.ln() + (T::one() - t) * (T::one() - q).ln());
                *g = (q - t) / (q * (T::one() - q)) / count;
            }
            ReconKind::MeanSquared => {
                let d = p - t;
                total = total + d * d;
                *g = T::lit(2.0) * d / count;
            }
        }
    }
    Ok((total / count, grad))
}

/// `E_enc[log d] + E_prior[log(1 − d)]`: the quantity the discriminator
/// ascends, with encoded codes labeled 1 and prior samples labeled 0.
pub fn discriminator_objective<T: Real>(d_encoded: &[T], d_prior: &[T]) -> T {
    let mean = |v: &[T], f: &dyn Fn(T) -> T| {
        v.iter().map(|&p| f(clamp_prob(p))).sum::<T>() / T::from_usize(v.len().max(1)).unwrap()
    };
    mean(d_encoded, &|p| p.ln()) + mean(d_prior, &|p| (T::one() - p).ln())
}

/// Discriminator loss (negated objective) and its gradients with respect
/// to the probabilities on encoded codes and on prior samples.
pub fn discriminator_loss<T: Real>(d_encoded: &[T], d_prior: &[T]) -> (T, Vec<T>, Vec<T>) {
    let ne = T::from_usize(d_encoded.len().max(1)).unwrap();
    let np = T::from_usize(d_prior.len().max(1)).unwrap();
    let g_enc = d_encoded.iter().map(|&p| -T::one() / (clamp_prob(p) * ne)).collect();
    let g_prior = d_prior
        .iter()
        .map(|&p| T::one() / ((T::one() - clamp_prob(p)) * np))
        .collect();
    (-discriminator_objective(d_encoded, d_prior), g_enc, g_prior)
}

/// Encoder's adversarial loss `−E[log(1 − d(q(z)))]` and its gradient.
pub fn encoder_adversarial_loss<T: Real>(d_encoded: &[T]) -> (T, Vec<T>) {
    let n = T::from_usize(d_encoded.len().max(1)).unwrap();
    let loss = -d_encoded.iter().map(|&p| (T::one() - clamp_prob(p)).ln()).sum::<T>() / n;
    let grad = d_encoded
        .iter()
        .map(|&p| T::one() / ((T::one() - clamp_prob(p)) * n))
        .collect();
    (loss, grad)
}

/// Mean negative log density of each row of `z_out` under its target
/// component, with gradient `(z − μ)/σ²` per row.
pub fn relational_loss<T: Real>(prior: &GmPrior, z_out: &Matrix<T>, targets: &[usize]) -> Result<(T, Matrix<T>)> {
    if z_out.rows() != targets.len() || z_out.cols() != prior.latent_dim() {
        return Err(Error::Shape(format!(
            "relational output {}×{} for {} targets in {} dimensions",
            z_out.rows(),
            z_out.cols(),
            targets.len(),
            prior.latent_dim()
        )));
    }
    let n = targets.len().max(1) as f64;
    let mut grad = Matrix::zeros(z_out.rows(), z_out.cols());
    let mut total = 0.0;
    for (r, &t) in targets.iter().enumerate() {
        if t >= prior.n() {
            return Err(Error::IndexOutOfRange { index: t, n: prior.n() });
        }
        let z: Vec<f64> = z_out.row(r).iter().map(|v| v.to_f64().unwrap()).collect();
        total -= prior.log_component_density(t, &z);
        let (mu, var) = (prior.mean(t), &prior.variances()[t]);
        for (j, g) in grad.row_mut(r).iter_mut().enumerate() {
            *g = T::lit((z[j] - mu[j]) / var[j] / n);
        }
    }
    Ok((T::lit(total / n), grad))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reconstruction_fixed_points() {
        let x = Matrix::from_vec(2, 3, vec![0.5f64; 6]);
        let (l, _) = reconstruction_loss(&x, &x, ReconKind::MeanSquared).unwrap();
        assert_eq!(l, 0.0);
        let (l, g) = reconstruction_loss(&x, &x, ReconKind::Bernoulli).unwrap();
        assert!((l - std::f64::consts::LN_2).abs() < 1e-12);
        assert!(g.data().iter().all(|v| v.abs() < 1e-15));
        assert!(reconstruction_loss(&x, &Matrix::zeros(2, 2), ReconKind::Bernoulli).is_err());
    }

    #[test]
    fn chance_discriminator() {
        let half = vec![0.5f64; 8];
        let obj = discriminator_objective(&half, &half);
        assert!((obj + 2.0 * std::f64::consts::LN_2).abs() < 1e-12);
        let near_perfect = discriminator_objective(&[1.0 - 1e-9], &[1e-9]);
        assert!(near_perfect < 0.0 && near_perfect > -1e-5);
    }

    #[test]
    fn clamped_gradients_stay_finite() {
        let (l, a, b) = discriminator_loss(&[0.0f32, 1.0], &[0.0, 1.0]);
        assert!(l.is_finite() && a.iter().chain(&b).all(|v| v.is_finite()));
        let (l, g) = encoder_adversarial_loss(&[1.0f32]);
        assert!(l.is_finite() && g[0].is_finite());
    }

    #[test]
    fn relational_loss_at_mean() {
        let prior = GmPrior::isotropic(vec![vec![1.0, -2.0, 0.5], vec![4.0, 4.0, 4.0]], 1.0).unwrap();
        let z = Matrix::from_vec(1, 3, vec![1.0, -2.0, 0.5]);
        let (l, g) = relational_loss(&prior, &z, &[0]).unwrap();
        assert!((l - 1.5 * (2.0 * std::f64::consts::PI).ln()).abs() < 1e-12);
        assert!(g.data().iter().all(|&v| v == 0.0));
        assert!(relational_loss(&prior, &z, &[2]).is_err());
    }

    #[test]
    fn relational_loss_decreases_toward_mean() {
        let prior = GmPrior::isotropic(vec![vec![2.0, 2.0]], 0.5).unwrap();
        let mut last = f64::INFINITY;
        for k in 0..=10 {
            let t = k as f64 / 10.0;
            let z = Matrix::from_vec(1, 2, vec![-3.0 + 5.0 * t, 7.0 - 5.0 * t]);
            let (l, _) = relational_loss(&prior, &z, &[0]).unwrap();
            assert!(l < last);
            last = l;
        }
    }
}
