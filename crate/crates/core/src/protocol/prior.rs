use crate::bernoulli::{kl_block, BernoulliVector};
use crate::error::{check_len, Result};

/// `lambda * theta_hat + (1 - lambda) * last`, clamped.
pub fn mix_prior(
    theta_hat: &[f64],
    last: &[f64],
    lambda: f64,
    clamp: f64,
) -> Result<BernoulliVector> {
    check_len(theta_hat.len(), last.len())?;
    Ok(BernoulliVector::new(
        theta_hat
            .iter()
            .zip(last)
            .map(|(&a, &b)| lambda * a + (1.0 - lambda) * b)
            .collect(),
        clamp,
    ))
}

/// Grid point minimizing `KL(current || mix(lambda))`; ties go to the larger
/// `lambda`.
pub fn optimize_prior_mixing(
    theta_hat: &[f64],
    last_posterior_estimate: &[f64],
    current_posterior: &[f64],
    grid: &[f64],
    clamp: f64,
) -> Result<f64> {
    check_len(theta_hat.len(), current_posterior.len())?;
    let mut best = (f64::INFINITY, 1.0);
    for &lambda in grid {
        let prior = mix_prior(theta_hat, last_posterior_estimate, lambda, clamp)?;
        let kl = kl_block(current_posterior, prior.as_slice())?;
        if kl < best.0 || (kl == best.0 && lambda > best.1) {
            best = (kl, lambda);
        }
    }
    Ok(best.1)
}
