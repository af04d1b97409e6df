//! Bias-free multilayer perceptron with ReLU hidden layers and a softmax
//! cross-entropy head, with hand-written backpropagation.

use std::ops::Range;

use crate::error::{check_len, Error, Result};
use crate::learners::data::Dataset;
use crate::randomness::RandomStream;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mlp {
    sizes: Vec<usize>,
}

impl Mlp {
    /// `sizes = [inputs, hidden.., classes]`; two entries give a softmax
    /// regression.
    pub fn new(sizes: Vec<usize>) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::InvalidArgument(format!("bad layer sizes {sizes:?}")));
        }
        Ok(Self { sizes })
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn num_params(&self) -> usize {
        self.sizes.windows(2).map(|w| w[0] * w[1]).sum()
    }

    pub fn n_classes(&self) -> usize {
        *self.sizes.last().expect("at least two layers")
    }

    /// Parameter range of each weight matrix (stored `out x in`, row-major).
    pub fn layer_ranges(&self) -> Vec<Range<usize>> {
        let mut start = 0;
        self.sizes
            .windows(2)
            .map(|w| {
                let r = start..start + w[0] * w[1];
                start = r.end;
                r
            })
            .collect()
    }

    /// Symmetric uniform weights, `U(-sqrt(6/fan_in), sqrt(6/fan_in))`.
    pub fn init_weights(&self, stream: &mut RandomStream) -> Vec<f64> {
        let mut w = Vec::with_capacity(self.num_params());
        for win in self.sizes.windows(2) {
            let bound = (6.0 / win[0] as f64).sqrt();
            for _ in 0..win[0] * win[1] {
                w.push((2.0 * stream.next_uniform() - 1.0) * bound);
            }
        }
        w
    }

    /// Activations of every layer for a batch; the last entry holds logits.
    fn forward_all(&self, weights: &[f64], x: &[f64], batch: usize) -> Vec<Vec<f64>> {
        let ranges = self.layer_ranges();
        let mut acts = vec![x.to_vec()];
        for (l, range) in ranges.iter().enumerate() {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let w = &weights[range.clone()];
            let input = &acts[l];
            let mut out = vec![0.0; batch * n_out];
            for b in 0..batch {
                let row = &input[b * n_in..(b + 1) * n_in];
                for o in 0..n_out {
                    let wr = &w[o * n_in..(o + 1) * n_in];
                    out[b * n_out + o] = wr.iter().zip(row).map(|(a, c)| a * c).sum();
                }
            }
            if l + 1 < ranges.len() {
                out.iter_mut().for_each(|v| *v = v.max(0.0));
            }
            acts.push(out);
        }
        acts
    }

    pub fn logits(&self, weights: &[f64], x: &[f64], batch: usize) -> Vec<f64> {
        self.forward_all(weights, x, batch).pop().expect("logits")
    }

    /// Mean cross-entropy over the batch and its gradient in the weights.
    pub fn loss_and_grad(
        &self,
        weights: &[f64],
        x: &[f64],
        labels: &[u32],
    ) -> Result<(f64, Vec<f64>)> {
        check_len(weights.len(), self.num_params())?;
        let batch = labels.len();
        check_len(x.len(), batch * self.sizes[0])?;
        let mut grad = vec![0.0; weights.len()];
        if batch == 0 {
            return Ok((0.0, grad));
        }
        let acts = self.forward_all(weights, x, batch);
        let classes = self.n_classes();
        let logits = acts.last().expect("logits");

        let mut loss = 0.0;
        let mut delta = vec![0.0; batch * classes];
        for b in 0..batch {
            let row = &logits[b * classes..(b + 1) * classes];
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = row.iter().map(|v| (v - max).exp()).sum();
            let y = labels[b] as usize;
            loss += z.ln() + max - row[y];
            for c in 0..classes {
                let prob = (row[c] - max).exp() / z;
                delta[b * classes + c] = (prob - f64::from(u8::from(c == y))) / batch as f64;
            }
        }

        let ranges = self.layer_ranges();
        for l in (0..ranges.len()).rev() {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let input = &acts[l];
            let w = &weights[ranges[l].clone()];
            let g = &mut grad[ranges[l].clone()];
            for b in 0..batch {
                let row = &input[b * n_in..(b + 1) * n_in];
                for o in 0..n_out {
                    let dv = delta[b * n_out + o];
                    if dv != 0.0 {
                        for (gi, xi) in g[o * n_in..(o + 1) * n_in].iter_mut().zip(row) {
                            *gi += dv * xi;
                        }
                    }
                }
            }
            if l > 0 {
                let mut prev = vec![0.0; batch * n_in];
                for b in 0..batch {
                    for o in 0..n_out {
                        let dv = delta[b * n_out + o];
                        if dv != 0.0 {
                            for (p, wi) in prev[b * n_in..(b + 1) * n_in]
                                .iter_mut()
                                .zip(&w[o * n_in..(o + 1) * n_in])
                            {
                                *p += dv * wi;
                            }
                        }
                    }
                }
                // ReLU derivative
                for (p, a) in prev.iter_mut().zip(input) {
                    if *a <= 0.0 {
                        *p = 0.0;
                    }
                }
                delta = prev;
            }
        }
        Ok((loss / batch as f64, grad))
    }

    /// Predicted classes; ties go to the lowest class index.
    pub fn predict(&self, weights: &[f64], data: &Dataset) -> Vec<u32> {
        let logits = self.logits(weights, &data.features, data.len());
        let classes = self.n_classes();
        logits
            .chunks(classes)
            .map(|row| {
                let mut best = 0;
                for c in 1..classes {
                    if row[c] > row[best] {
                        best = c;
                    }
                }
                best as u32
            })
            .collect()
    }

    pub fn accuracy(&self, weights: &[f64], data: &Dataset) -> f64 {
        if data.is_empty() {
            return 0.0;
        }
        let hits = self
            .predict(weights, data)
            .iter()
            .zip(&data.labels)
            .filter(|(a, b)| a == b)
            .count();
        hits as f64 / data.len() as f64
    }

    pub fn loss(&self, weights: &[f64], data: &Dataset) -> f64 {
        self.loss_and_grad(weights, &data.features, &data.labels)
            .map(|(l, _)| l)
            .unwrap_or(f64::NAN)
    }
}
