use std::str::FromStr;

use crate::bernoulli::{inv_sigmoid_map, sigmoid, sigmoid_map, BernoulliVector, ScoreVector};
use crate::error::{check_len, Error, Result};
use crate::learners::data::Dataset;
use crate::learners::mlp::Mlp;
use crate::learners::optim::{OptimizerKind, OptimizerState};
use crate::randomness::{draw_bernoulli_vector, RandomStream};

/// Backward rule through the Bernoulli sampling step.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SteMode {
    /// Sampling is the identity: `dL/dtheta = dL/dmask`.
    Identity,
    /// `dL/dtheta = theta * dL/dmask`.
    ScaledByTheta,
}

impl FromStr for SteMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace(['-', '_'], "").as_str() {
            "identity" => Ok(Self::Identity),
            "scaledbytheta" | "theta" => Ok(Self::ScaledByTheta),
            _ => Err(Error::Config(format!(
                "unknown straight-through mode `{s}`"
            ))),
        }
    }
}

impl std::fmt::Display for SteMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Identity => "identity",
            Self::ScaledByTheta => "scaled-by-theta",
        })
    }
}

/// A frozen random network whose weights are gated by Bernoulli masks.
#[derive(Clone, Debug)]
pub struct MaskModel {
    pub net: Mlp,
    pub fixed_weights: Vec<f64>,
    pub theta: BernoulliVector,
}

impl MaskModel {
    pub fn new(net: Mlp, fixed_weights: Vec<f64>, theta: BernoulliVector) -> Result<Self> {
        check_len(fixed_weights.len(), net.num_params())?;
        check_len(theta.len(), net.num_params())?;
        Ok(Self {
            net,
            fixed_weights,
            theta,
        })
    }

    pub fn masked_weights(&self, mask: &[u8]) -> Vec<f64> {
        apply_mask(&self.fixed_weights, mask)
    }
}

fn apply_mask(weights: &[f64], mask: &[u8]) -> Vec<f64> {
    weights
        .iter()
        .zip(mask)
        .map(|(&w, &m)| if m == 1 { w } else { 0.0 })
        .collect()
}

/// Local mask-training hyperparameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MaskTraining {
    pub tau: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerKind,
    pub learning_rate: f64,
    pub ste: SteMode,
    pub clamp: f64,
}

impl Default for MaskTraining {
    fn default() -> Self {
        Self {
            tau: 3,
            batch_size: 128,
            optimizer: OptimizerKind::Adam,
            learning_rate: 0.1,
            ste: SteMode::Identity,
            clamp: crate::bernoulli::DEFAULT_CLAMP,
        }
    }
}

/// Indices of one minibatch: the whole shard in order when it fits,
/// otherwise a uniform draw without replacement.
pub fn batch_indices(n: usize, batch: usize, stream: &mut RandomStream) -> Vec<usize> {
    if batch >= n {
        (0..n).collect()
    } else {
        rand::seq::index::sample(stream, n, batch).into_vec()
    }
}

/// Gradient of the loss in the mask probabilities for one sampled mask,
/// under the chosen backward rule. Returns `(loss, dL/dtheta)`.
pub fn ste_gradient(
    net: &Mlp,
    fixed_weights: &[f64],
    theta: &[f64],
    mask: &[u8],
    x: &[f64],
    labels: &[u32],
    ste: SteMode,
) -> Result<(f64, Vec<f64>)> {
    let (loss, grad_w) = net.loss_and_grad(&apply_mask(fixed_weights, mask), x, labels)?;
    let grad_theta = grad_w
        .iter()
        .zip(fixed_weights)
        .zip(theta)
        .map(|((g, w), t)| {
            let grad_mask = g * w;
            match ste {
                SteMode::Identity => grad_mask,
                SteMode::ScaledByTheta => grad_mask * t,
            }
        })
        .collect();
    Ok((loss, grad_theta))
}

/// Runs `tau` mask-training steps in score space starting from
/// `theta_hat` and returns the clamped posterior.
pub fn local_train_mask(
    net: &Mlp,
    fixed_weights: &[f64],
    theta_hat: &BernoulliVector,
    shard: &Dataset,
    params: &MaskTraining,
    stream: &mut RandomStream,
) -> Result<BernoulliVector> {
    check_len(theta_hat.len(), net.num_params())?;
    if params.tau == 0 {
        return Ok(theta_hat.clone());
    }
    if shard.is_empty() {
        log::warn!("empty shard: returning the prior model unchanged");
        return Ok(theta_hat.clone());
    }
    let mut scores = inv_sigmoid_map(theta_hat).scores;
    let mut opt = OptimizerState::new(params.optimizer, params.learning_rate, scores.len());
    for _ in 0..params.tau {
        let theta: Vec<f64> = scores.iter().map(|&s| sigmoid(s)).collect();
        let mask = draw_bernoulli_vector(stream, &theta);
        let batch = shard.subset(&batch_indices(shard.len(), params.batch_size, stream));
        let (_, grad_theta) = ste_gradient(
            net,
            fixed_weights,
            &theta,
            mask.as_slice(),
            &batch.features,
            &batch.labels,
            params.ste,
        )?;
        // chain rule through theta = sigmoid(s)
        let grad_scores: Vec<f64> = grad_theta
            .iter()
            .zip(&theta)
            .map(|(g, t)| g * t * (1.0 - t))
            .collect();
        opt.step(&mut scores, &grad_scores)?;
    }
    Ok(sigmoid_map(&ScoreVector { scores }, params.clamp))
}

/// Average accuracy of the masked network over `n_eval_masks` sampled masks.
pub fn evaluate_mask(
    model: &MaskModel,
    data: &Dataset,
    n_eval_masks: usize,
    stream: &mut RandomStream,
) -> f64 {
    evaluate_mask_with_loss(model, data, n_eval_masks, stream).0
}

/// Average `(accuracy, loss)` over `n_eval_masks` sampled masks.
pub fn evaluate_mask_with_loss(
    model: &MaskModel,
    data: &Dataset,
    n_eval_masks: usize,
    stream: &mut RandomStream,
) -> (f64, f64) {
    let n = n_eval_masks.max(1);
    let (mut acc, mut loss) = (0.0, 0.0);
    for _ in 0..n {
        let mask = draw_bernoulli_vector(stream, model.theta.as_slice());
        let w = model.masked_weights(mask.as_slice());
        acc += model.net.accuracy(&w, data);
        loss += model.net.loss(&w, data);
    }
    (acc / n as f64, loss / n as f64)
}

/// Plain minibatch SGD hyperparameters for the gradient learner.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradientTraining {
    pub tau: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
}

/// Runs `tau` SGD steps from `w` and returns `(w - w_tau) / lr`.
pub fn local_train_gradient(
    net: &Mlp,
    w: &[f64],
    shard: &Dataset,
    params: &GradientTraining,
    stream: &mut RandomStream,
) -> Result<Vec<f64>> {
    check_len(w.len(), net.num_params())?;
    if shard.is_empty() {
        return Ok(vec![0.0; w.len()]);
    }
    if params.learning_rate <= 0.0 {
        return Err(Error::InvalidArgument(
            "learning rate must be positive".into(),
        ));
    }
    let mut current = w.to_vec();
    let mut opt = OptimizerState::new(OptimizerKind::Sgd, params.learning_rate, w.len());
    for _ in 0..params.tau {
        let batch = shard.subset(&batch_indices(shard.len(), params.batch_size, stream));
        let (_, grad) = net.loss_and_grad(&current, &batch.features, &batch.labels)?;
        opt.step(&mut current, &grad)?;
    }
    Ok(w.iter()
        .zip(&current)
        .map(|(a, b)| (a - b) / params.learning_rate)
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bernoulli::DEFAULT_CLAMP;
    use crate::learners::data::{make_dataset, Allocation, DatasetKind};
    use crate::randomness::{derive_stream, Party, Role, StreamKey};

    fn stream(seed: u64) -> RandomStream {
        derive_stream(&StreamKey::new(seed, Party::Client(0), Role::MaskSample))
    }

    fn blobs() -> Dataset {
        let mut s = derive_stream(&StreamKey::new(1, Party::Global, Role::DataShuffle));
        make_dataset(&DatasetKind::blobs(3, 4, 120), Allocation::Iid, 1, &mut s)
            .unwrap()
            .shards
            .remove(0)
    }

    #[test]
    fn tau_zero_and_empty_shard_are_identity() {
        let net = Mlp::new(vec![4, 3]).unwrap();
        let w = vec![0.3; 12];
        let theta = BernoulliVector::new(
            (0..12).map(|k| 0.1 + 0.06 * k as f64).collect(),
            DEFAULT_CLAMP,
        );
        let params = MaskTraining {
            tau: 0,
            ..Default::default()
        };
        let out = local_train_mask(&net, &w, &theta, &blobs(), &params, &mut stream(1)).unwrap();
        assert_eq!(out, theta);
        let empty = Dataset::new(vec![], vec![], 4, 3).unwrap();
        let out = local_train_mask(
            &net,
            &w,
            &theta,
            &empty,
            &MaskTraining::default(),
            &mut stream(1),
        )
        .unwrap();
        assert_eq!(out, theta);
    }

    #[test]
    fn zero_gradient_keeps_theta() {
        // zero fixed weights: the loss does not depend on the mask
        let net = Mlp::new(vec![4, 3]).unwrap();
        let theta = BernoulliVector::new(
            (0..12).map(|k| 0.1 + 0.06 * k as f64).collect(),
            DEFAULT_CLAMP,
        );
        let out = local_train_mask(
            &net,
            &[0.0; 12],
            &theta,
            &blobs(),
            &MaskTraining::default(),
            &mut stream(2),
        )
        .unwrap();
        for (a, b) in out.as_slice().iter().zip(theta.as_slice()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    /// `E_mask[loss]` by enumerating every mask.
    fn expected_loss(net: &Mlp, w: &[f64], theta: &[f64], x: &[f64], y: &[u32]) -> f64 {
        let d = w.len();
        (0u32..1 << d)
            .map(|bits| {
                let mask: Vec<u8> = (0..d).map(|k| ((bits >> k) & 1) as u8).collect();
                let prob: f64 = (0..d)
                    .map(|k| {
                        if mask[k] == 1 {
                            theta[k]
                        } else {
                            1.0 - theta[k]
                        }
                    })
                    .product();
                prob * net.loss_and_grad(&apply_mask(w, &mask), x, y).unwrap().0
            })
            .sum()
    }

    /// `E_mask[STE gradient]` by enumerating every mask.
    fn expected_ste(net: &Mlp, w: &[f64], theta: &[f64], x: &[f64], y: &[u32]) -> Vec<f64> {
        let d = w.len();
        let mut acc = vec![0.0; d];
        for bits in 0u32..1 << d {
            let mask: Vec<u8> = (0..d).map(|k| ((bits >> k) & 1) as u8).collect();
            let prob: f64 = (0..d)
                .map(|k| {
                    if mask[k] == 1 {
                        theta[k]
                    } else {
                        1.0 - theta[k]
                    }
                })
                .product();
            let (_, g) = ste_gradient(net, w, theta, &mask, x, y, SteMode::Identity).unwrap();
            acc.iter_mut().zip(g).for_each(|(a, gk)| *a += prob * gk);
        }
        acc
    }

    fn cosine(a: &[f64], b: &[f64]) -> f64 {
        let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
        let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
        dot / (na * nb)
    }

    #[test]
    fn straight_through_tracks_expected_loss_gradient() {
        // two parameters: one input, two logits
        let net = Mlp::new(vec![1, 2]).unwrap();
        let w = [1.3, -0.8];
        let x = [1.0, 0.5, -0.7, 2.0];
        let y = [0, 0, 1, 0];
        for theta in [[0.5, 0.5], [0.3, 0.8], [0.9, 0.2]] {
            let h = 1e-6;
            let fd: Vec<f64> = (0..2)
                .map(|k| {
                    let mut tp = theta;
                    tp[k] += h;
                    let mut tm = theta;
                    tm[k] -= h;
                    (expected_loss(&net, &w, &tp, &x, &y) - expected_loss(&net, &w, &tm, &x, &y))
                        / (2.0 * h)
                })
                .collect();
            let ste = expected_ste(&net, &w, &theta, &x, &y);
            let cos = cosine(&fd, &ste);
            assert!(cos > 0.95, "theta {theta:?}: cosine {cos}");
        }
    }

    #[test]
    fn analytic_logistic_gradient() {
        // binary softmax regression: dL/dw_c = mean_b (p_c - 1[y=c]) x_b
        let net = Mlp::new(vec![2, 2]).unwrap();
        let data = Dataset::new(vec![1.0, 2.0, -1.0, 0.5, 0.3, -0.2], vec![0, 1, 1], 2, 2).unwrap();
        let w = [0.1, -0.2, 0.4, 0.3];
        let params = GradientTraining {
            tau: 1,
            batch_size: 128,
            learning_rate: 0.1,
        };
        let g = local_train_gradient(&net, &w, &data, &params, &mut stream(3)).unwrap();
        let mut expected = [0.0; 4];
        for b in 0..3 {
            let row = data.row(b);
            let z0 = w[0] * row[0] + w[1] * row[1];
            let z1 = w[2] * row[0] + w[3] * row[1];
            let p1 = 1.0 / (1.0 + (z0 - z1).exp());
            let p = [1.0 - p1, p1];
            for c in 0..2 {
                let err = p[c] - f64::from(u8::from(data.labels[b] as usize == c));
                expected[2 * c] += err * row[0] / 3.0;
                expected[2 * c + 1] += err * row[1] / 3.0;
            }
        }
        for k in 0..4 {
            assert!(
                (g[k] - expected[k]).abs() < 1e-6,
                "{k}: {} vs {}",
                g[k],
                expected[k]
            );
        }
    }

    #[test]
    fn symmetric_data_gives_zero_gradient() {
        let net = Mlp::new(vec![2, 2]).unwrap();
        let data = Dataset::new(vec![1.0, 1.0, 1.0, 1.0], vec![0, 1], 2, 2).unwrap();
        let params = GradientTraining {
            tau: 1,
            batch_size: 8,
            learning_rate: 0.1,
        };
        let g = local_train_gradient(&net, &[0.0; 4], &data, &params, &mut stream(4)).unwrap();
        assert!(g.iter().all(|v| v.abs() < 1e-12));
        let empty = Dataset::new(vec![], vec![], 2, 2).unwrap();
        assert_eq!(
            local_train_gradient(&net, &[0.5; 4], &empty, &params, &mut stream(4)).unwrap(),
            vec![0.0; 4]
        );
    }

    #[test]
    fn identical_inputs_identical_gradients() {
        let net = Mlp::new(vec![4, 3]).unwrap();
        let shard = blobs();
        let params = GradientTraining {
            tau: 3,
            batch_size: 16,
            learning_rate: 0.1,
        };
        let a = local_train_gradient(&net, &[0.1; 12], &shard, &params, &mut stream(5)).unwrap();
        let b = local_train_gradient(&net, &[0.1; 12], &shard, &params, &mut stream(5)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn evaluation_edge_cases() {
        let net = Mlp::new(vec![4, 3]).unwrap();
        let mut s = derive_stream(&StreamKey::new(1, Party::Global, Role::ModelInit));
        let w = net.init_weights(&mut s);
        let data = blobs();
        let ones = MaskModel::new(
            net.clone(),
            w.clone(),
            BernoulliVector::constant(12, 1.0, 0.0),
        )
        .unwrap();
        assert_eq!(
            evaluate_mask(&ones, &data, 3, &mut stream(6)),
            net.accuracy(&w, &data)
        );
        let zeros = MaskModel::new(
            net.clone(),
            w.clone(),
            BernoulliVector::constant(12, 0.0, 0.0),
        )
        .unwrap();
        assert!((evaluate_mask(&zeros, &data, 3, &mut stream(6)) - 1.0 / 3.0).abs() < 1e-12);
        let half = MaskModel::new(net, w, BernoulliVector::constant(12, 0.5, 0.0)).unwrap();
        assert_eq!(
            evaluate_mask(&half, &data, 5, &mut stream(7)),
            evaluate_mask(&half, &data, 5, &mut stream(7))
        );
    }

    #[test]
    fn mask_training_improves_accuracy() {
        let net = Mlp::new(vec![4, 16, 3]).unwrap();
        let mut s = derive_stream(&StreamKey::new(2, Party::Global, Role::ModelInit));
        let w = net.init_weights(&mut s);
        let data = blobs();
        let mut theta = BernoulliVector::constant(net.num_params(), 0.5, DEFAULT_CLAMP);
        let start = evaluate_mask(
            &MaskModel::new(net.clone(), w.clone(), theta.clone()).unwrap(),
            &data,
            5,
            &mut stream(8),
        );
        let params = MaskTraining {
            tau: 60,
            ..Default::default()
        };
        theta = local_train_mask(&net, &w, &theta, &data, &params, &mut stream(9)).unwrap();
        let end = evaluate_mask(
            &MaskModel::new(net, w, theta).unwrap(),
            &data,
            5,
            &mut stream(8),
        );
        assert!(end > start + 0.1, "{start} -> {end}");
    }
}
