//! Bernoulli-vector models, their KL geometry, and the sigmoid maps between
//! the primal (probability) and dual (score) spaces used by mirror descent.
//!
//! All divergences are in nats.

use crate::error::{check_len, Error, Result};

pub use crate::randomness::BinaryVector;

/// Default clamp keeping every Bernoulli parameter in `[1e-4, 1 - 1e-4]`.
pub const DEFAULT_CLAMP: f64 = 1e-4;

/// Product-Bernoulli parameters with every entry clamped into
/// `[eps, 1 - eps]`, so all divergences against it are finite.
#[derive(Clone, Debug, PartialEq)]
pub struct BernoulliVector {
    params: Vec<f64>,
}

impl BernoulliVector {
    /// Clamps `params` into `[eps, 1 - eps]`. NaN entries become `0.5`.
    pub fn new(mut params: Vec<f64>, eps: f64) -> Self {
        for p in &mut params {
            *p = clamp_prob(*p, eps);
        }
        Self { params }
    }

    pub fn constant(len: usize, value: f64, eps: f64) -> Self {
        Self::new(vec![value; len], eps)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.params
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.params
    }
}

impl AsRef<[f64]> for BernoulliVector {
    fn as_ref(&self) -> &[f64] {
        &self.params
    }
}

/// Dual-space coordinates, `s = ln(theta / (1 - theta))`.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreVector {
    pub scores: Vec<f64>,
}

#[inline]
pub fn clamp_prob(p: f64, eps: f64) -> f64 {
    if p.is_nan() {
        0.5
    } else {
        p.clamp(eps, 1.0 - eps)
    }
}

/// `KL(Ber(q) || Ber(p))` in nats, with `0 ln 0 = 0`.
pub fn kl_bernoulli(q: f64, p: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&q) || !(0.0..=1.0).contains(&p) {
        return Err(Error::InvalidArgument(format!(
            "Bernoulli parameters out of [0,1]: q = {q}, p = {p}"
        )));
    }
    let term = |a: f64, b: f64| -> Result<f64> {
        if a == 0.0 {
            Ok(0.0)
        } else if b == 0.0 {
            Err(Error::InfiniteDivergence { q, p })
        } else {
            Ok(a * (a / b).ln())
        }
    };
    let kl = term(q, p)? + term(1.0 - q, 1.0 - p)?;
    // rounding can leave a tiny negative value when q ~ p
    Ok(kl.max(0.0))
}

/// Sum of entrywise Bernoulli divergences over two equal-length slices.
pub fn kl_block(q: &[f64], p: &[f64]) -> Result<f64> {
    check_len(q.len(), p.len())?;
    q.iter()
        .zip(p)
        .try_fold(0.0, |acc, (&qk, &pk)| Ok(acc + kl_bernoulli(qk, pk)?))
}

/// Entrywise divergences, used by the adaptive block allocators.
pub fn kl_per_param(q: &[f64], p: &[f64]) -> Result<Vec<f64>> {
    check_len(q.len(), p.len())?;
    q.iter().zip(p).map(|(&a, &b)| kl_bernoulli(a, b)).collect()
}

#[inline]
pub fn sigmoid(s: f64) -> f64 {
    1.0 / ((-s).exp() + 1.0)
}

#[inline]
pub fn logit(theta: f64) -> f64 {
    theta.ln() - (1.0 - theta).ln()
}

/// Dual to primal: `theta = 1 / (exp(-s) + 1)`, clamped.
pub fn sigmoid_map(scores: &ScoreVector, eps: f64) -> BernoulliVector {
    BernoulliVector::new(scores.scores.iter().map(|&s| sigmoid(s)).collect(), eps)
}

/// Primal to dual: `s = ln(theta / (1 - theta))`.
pub fn inv_sigmoid_map(theta: &BernoulliVector) -> ScoreVector {
    ScoreVector {
        scores: theta.as_slice().iter().map(|&t| logit(t)).collect(),
    }
}

/// One mirror-descent step under the negative-entropy mirror map: a gradient
/// step in score space, which is the exact minimizer of
/// `<g, theta> + KL(theta || theta_0) / lr` entrywise.
pub fn mirror_step(
    theta: &BernoulliVector,
    grad: &[f64],
    lr: f64,
    eps: f64,
) -> Result<BernoulliVector> {
    check_len(theta.len(), grad.len())?;
    let mut scores = inv_sigmoid_map(theta);
    for (s, g) in scores.scores.iter_mut().zip(grad) {
        *s -= lr * g;
    }
    Ok(sigmoid_map(&scores, eps))
}

/// Reverse Pinsker: `KL(q || p) <= 2 |q - p|^2 / min(p, 1 - p)`.
pub fn reverse_pinsker_bound(delta_abs: f64, p: f64) -> f64 {
    2.0 * delta_abs * delta_abs / p.min(1.0 - p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn kl_examples() {
        assert_eq!(kl_bernoulli(0.5, 0.5).unwrap(), 0.0);
        assert!((kl_bernoulli(1.0, 0.5).unwrap() - std::f64::consts::LN_2).abs() < 1e-15);
        // 0.75 ln 1.5 + 0.25 ln 0.5, evaluated in 40-digit arithmetic
        let expected = 0.130_812_035_941_136_96;
        assert!((kl_bernoulli(0.75, 0.5).unwrap() - expected).abs() < 1e-15);
    }

    #[test]
    fn kl_infinite_divergence() {
        assert!(matches!(
            kl_bernoulli(0.5, 0.0),
            Err(Error::InfiniteDivergence { .. })
        ));
        assert!(matches!(
            kl_bernoulli(0.2, 1.0),
            Err(Error::InfiniteDivergence { .. })
        ));
        assert_eq!(kl_bernoulli(1.0, 1.0).unwrap(), 0.0);
    }

    #[test]
    fn kl_block_additivity() {
        let q = [1.0, 0.0];
        let p = [0.5, 0.5];
        let expected = 2.0 * std::f64::consts::LN_2;
        assert!((kl_block(&q, &p).unwrap() - expected).abs() < 1e-15);
        assert!(matches!(
            kl_block(&[0.5], &[0.5, 0.5]),
            Err(Error::LengthMismatch { .. })
        ));
    }

    #[test]
    fn kl_grid_properties() {
        for i in 1..100 {
            for j in 1..100 {
                let (q, p) = (i as f64 / 100.0, j as f64 / 100.0);
                let kl = kl_bernoulli(q, p).unwrap();
                assert!(kl >= 0.0);
                if i == j {
                    assert_eq!(kl, 0.0);
                } else {
                    assert!(kl > 0.0, "kl({q},{p}) = {kl}");
                }
                // Pinsker
                assert!((q - p).abs() <= (kl / 2.0).sqrt() + 1e-12);
            }
        }
    }

    #[test]
    fn sigmoid_examples() {
        let half = BernoulliVector::constant(1, 0.5, DEFAULT_CLAMP);
        assert_eq!(inv_sigmoid_map(&half).scores[0], 0.0);
        let t = BernoulliVector::new(vec![0.73], DEFAULT_CLAMP);
        let back = sigmoid_map(&inv_sigmoid_map(&t), DEFAULT_CLAMP);
        assert!((back.as_slice()[0] - 0.73).abs() < 1e-12);
        let floor = sigmoid_map(
            &ScoreVector {
                scores: vec![-50.0, 50.0],
            },
            DEFAULT_CLAMP,
        );
        assert_eq!(floor.as_slice(), &[DEFAULT_CLAMP, 1.0 - DEFAULT_CLAMP]);
    }

    #[test]
    fn reverse_pinsker_examples() {
        assert_eq!(reverse_pinsker_bound(0.0, 0.3), 0.0);
        assert!((reverse_pinsker_bound(0.1, 0.5) - 0.04).abs() < 1e-15);
        assert!((reverse_pinsker_bound(0.1, 0.1) - 0.2).abs() < 1e-15);
    }

    /// Golden-section search on the KL-proximal objective; independent of
    /// the closed-form score step.
    fn proximal_minimizer(theta0: f64, g: f64, lr: f64) -> f64 {
        let objective = |t: f64| g * t + kl_bernoulli(t, theta0).unwrap() / lr;
        let (mut a, mut b) = (1e-12, 1.0 - 1e-12);
        let r = (5f64.sqrt() - 1.0) / 2.0;
        for _ in 0..200 {
            let c = b - r * (b - a);
            let d = a + r * (b - a);
            if objective(c) < objective(d) {
                b = d;
            } else {
                a = c;
            }
        }
        0.5 * (a + b)
    }

    #[test]
    fn mirror_step_is_kl_proximal() {
        for &(theta0, g, lr) in &[(0.5, 1.3, 0.1), (0.2, -2.0, 0.5), (0.9, 0.7, 1.0)] {
            let theta = BernoulliVector::new(vec![theta0], 0.0);
            let step = mirror_step(&theta, &[g], lr, 0.0).unwrap().as_slice()[0];
            let oracle = proximal_minimizer(theta0, g, lr);
            assert!((step - oracle).abs() < 1e-6, "{step} vs {oracle}");
        }
    }

    proptest! {
        #[test]
        fn map_round_trip(theta in DEFAULT_CLAMP..(1.0 - DEFAULT_CLAMP)) {
            let t = BernoulliVector::new(vec![theta], DEFAULT_CLAMP);
            let back = sigmoid_map(&inv_sigmoid_map(&t), DEFAULT_CLAMP);
            prop_assert!((back.as_slice()[0] - theta).abs() < 1e-10);
        }
    }
}
