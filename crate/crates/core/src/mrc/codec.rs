use crate::error::{check_len, Error, Result};
use crate::mrc::blocks::BlockPartition;
use crate::randomness::{derive_stream, draw_categorical, BinaryVector, RandomStream, StreamKey};

/// Bits needed to name one of `n` candidates, `ceil(log2 n)`.
pub fn index_bits(n: usize) -> u64 {
    if n <= 1 {
        0
    } else {
        u64::from(usize::BITS - (n - 1).leading_zeros())
    }
}

/// Selects one of `n` prior candidates with probability proportional to its
/// likelihood ratio `q(x) / p(x)`.
///
/// Candidate `i` occupies draws `i * len .. (i + 1) * len` of
/// `candidate_stream`; the index is drawn with a single uniform from
/// `index_stream`. Weights are accumulated in log space.
pub fn mrc_encode_block(
    posterior: &[f64],
    prior: &[f64],
    n: usize,
    candidate_stream: &mut RandomStream,
    index_stream: &mut RandomStream,
) -> Result<usize> {
    check_len(posterior.len(), prior.len())?;
    if n == 0 {
        return Err(Error::InvalidArgument(
            "MRC needs at least one candidate".into(),
        ));
    }
    let start = candidate_stream.position();
    if n == 1 {
        // the only candidate is index 0 whatever its weight, but keep the
        // stream consumption identical to n > 1
        candidate_stream.seek(start + prior.len() as u64);
        return Ok(0);
    }

    if let Some(weights) = linear_weights(posterior, prior, n, candidate_stream) {
        return draw_categorical(index_stream, &weights).map_err(|_| Error::NoFeasibleCandidate(n));
    }

    let log_one: Vec<f64> = posterior
        .iter()
        .zip(prior)
        .map(|(&q, &p)| q.ln() - p.ln())
        .collect();
    let log_zero: Vec<f64> = posterior
        .iter()
        .zip(prior)
        .map(|(&q, &p)| (1.0 - q).ln() - (1.0 - p).ln())
        .collect();

    let mut log_weights = Vec::with_capacity(n);
    for _ in 0..n {
        let mut lw = 0.0;
        for k in 0..prior.len() {
            let u = candidate_stream.next_uniform();
            lw += if u < prior[k] {
                log_one[k]
            } else {
                log_zero[k]
            };
        }
        log_weights.push(lw);
    }

    let max = log_weights
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY || max.is_nan() {
        return Err(Error::NoFeasibleCandidate(n));
    }
    let weights: Vec<f64> = log_weights.iter().map(|&lw| (lw - max).exp()).collect();
    draw_categorical(index_stream, &weights)
}

/// Short blocks whose likelihood-ratio products cannot overflow skip the log
/// domain. Returns `None` (without touching the stream) otherwise.
fn linear_weights(
    posterior: &[f64],
    prior: &[f64],
    n: usize,
    stream: &mut RandomStream,
) -> Option<Vec<f64>> {
    const MAX_LEN: usize = 16;
    if posterior.len() > MAX_LEN {
        return None;
    }
    let mut ratios = [(0.0, 0.0); MAX_LEN];
    let mut bound = 1.0f64;
    for (k, (&q, &p)) in posterior.iter().zip(prior).enumerate() {
        let r = (q / p, (1.0 - q) / (1.0 - p));
        if !(r.0.is_finite() && r.1.is_finite()) {
            return None;
        }
        bound *= r.0.max(r.1).max(1.0);
        ratios[k] = r;
    }
    if bound > 1e200 {
        return None;
    }
    let ratios = &ratios[..posterior.len()];
    Some(
        (0..n)
            .map(|_| {
                ratios.iter().zip(prior).fold(1.0, |w, (&(one, zero), &p)| {
                    w * if stream.next_uniform() < p { one } else { zero }
                })
            })
            .collect(),
    )
}

/// Regenerates candidate `index` from the shared candidate stream.
pub fn mrc_decode_block(
    index: usize,
    prior: &[f64],
    n: usize,
    candidate_stream: &mut RandomStream,
) -> Result<BinaryVector> {
    if index >= n {
        return Err(Error::IndexOutOfRange {
            index,
            candidates: n,
        });
    }
    let start = candidate_stream.position();
    candidate_stream.seek(start + (index * prior.len()) as u64);
    Ok(crate::randomness::draw_bernoulli_vector(
        candidate_stream,
        prior,
    ))
}

/// Indices chosen for one transmission, `indices[sample][block]`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EncodedUpdate {
    pub indices: Vec<Vec<u32>>,
    pub num_candidates: usize,
    pub bit_cost: u64,
}

impl EncodedUpdate {
    pub fn new(indices: Vec<Vec<u32>>, num_candidates: usize) -> Self {
        let count: usize = indices.iter().map(Vec::len).sum();
        let bit_cost = count as u64 * index_bits(num_candidates);
        Self {
            indices,
            num_candidates,
            bit_cost,
        }
    }

    pub fn num_samples(&self) -> usize {
        self.indices.len()
    }

    /// Row-major `[sample][block]` flattening.
    pub fn to_flat(&self) -> Vec<u32> {
        self.indices.iter().flatten().copied().collect()
    }

    pub fn from_flat(flat: &[u32], num_samples: usize, num_candidates: usize) -> Result<Self> {
        if num_samples == 0 {
            return Ok(Self::new(Vec::new(), num_candidates));
        }
        if !flat.len().is_multiple_of(num_samples) {
            return Err(Error::InvalidArgument(format!(
                "{} indices do not split into {num_samples} samples",
                flat.len()
            )));
        }
        if let Some(&bad) = flat.iter().find(|&&i| i as usize >= num_candidates) {
            return Err(Error::IndexOutOfRange {
                index: bad as usize,
                candidates: num_candidates,
            });
        }
        let per = flat.len() / num_samples;
        let indices = flat.chunks(per.max(1)).map(<[u32]>::to_vec).collect();
        Ok(Self::new(indices, num_candidates))
    }
}

/// Stream keys used by one MRC transmission. Block `j` of sample `m` uses
/// `candidates.with_block(j).with_sample(m)` and likewise for the index draw.
#[derive(Clone, Copy, Debug)]
pub struct TransmitKeys {
    pub candidates: StreamKey,
    pub index: StreamKey,
}

/// Sends `n_masks` samples of `posterior` block by block. Returns the
/// decoded samples (as the receiver reconstructs them) and the indices.
pub fn mrc_transmit(
    posterior: &[f64],
    prior: &[f64],
    partition: &BlockPartition,
    n: usize,
    n_masks: usize,
    keys: TransmitKeys,
) -> Result<(Vec<BinaryVector>, EncodedUpdate)> {
    check_len(posterior.len(), prior.len())?;
    check_len(partition.dim(), prior.len())?;
    let mut indices = Vec::with_capacity(n_masks);
    for m in 0..n_masks {
        let mut row = Vec::with_capacity(partition.num_blocks());
        for (j, range) in partition.ranges().iter().enumerate() {
            let block_key = keys.candidates.with_block(j as u64).with_sample(m as u64);
            let mut candidates = derive_stream(&block_key);
            let mut index_stream =
                derive_stream(&keys.index.with_block(j as u64).with_sample(m as u64));
            let index = mrc_encode_block(
                &posterior[range.clone()],
                &prior[range.clone()],
                n,
                &mut candidates,
                &mut index_stream,
            )?;
            row.push(index as u32);
        }
        indices.push(row);
    }
    let encoded = EncodedUpdate::new(indices, n);
    let samples = mrc_reconstruct(&encoded, prior, partition, keys.candidates)?;
    Ok((samples, encoded))
}

/// Receiver side: regenerates the selected candidates and concatenates the
/// blocks of each sample.
pub fn mrc_reconstruct(
    encoded: &EncodedUpdate,
    prior: &[f64],
    partition: &BlockPartition,
    candidate_key: StreamKey,
) -> Result<Vec<BinaryVector>> {
    check_len(partition.dim(), prior.len())?;
    encoded
        .indices
        .iter()
        .enumerate()
        .map(|(m, row)| {
            check_len(row.len(), partition.num_blocks())?;
            let mut sample = BinaryVector::zeros(0);
            for (j, (range, &index)) in partition.ranges().iter().zip(row).enumerate() {
                let key = candidate_key.with_block(j as u64).with_sample(m as u64);
                let mut stream = derive_stream(&key);
                let block = mrc_decode_block(
                    index as usize,
                    &prior[range.clone()],
                    encoded.num_candidates,
                    &mut stream,
                )?;
                sample.extend_from(&block);
            }
            Ok(sample)
        })
        .collect()
}

/// Per-entry empirical mean of a set of binary samples.
pub fn sample_mean(samples: &[BinaryVector], dim: usize) -> Vec<f64> {
    let counts = sample_counts(samples, dim);
    let n = samples.len().max(1) as f64;
    counts.iter().map(|&c| f64::from(c) / n).collect()
}

/// Per-entry count of ones.
pub fn sample_counts(samples: &[BinaryVector], dim: usize) -> Vec<u32> {
    let mut counts = vec![0u32; dim];
    for s in samples {
        for (c, &b) in counts.iter_mut().zip(s.as_slice()) {
            *c += u32::from(b);
        }
    }
    counts
}
