//! Stochastic gradient quantizers whose randomness is a product of
//! Bernoullis, so the quantized gradient can be sent with MRC.

mod elias;

pub use elias::{gamma_len, BitReader, BitWriter};

use crate::error::{check_len, Result};
use crate::mrc::{mrc_transmit, BlockPartition, TransmitKeys};
use crate::randomness::BinaryVector;

/// Logistic Bernoulli parameters for stochastic sign compression.
#[derive(Clone, Debug, PartialEq)]
pub struct SignSpec {
    pub temperature: f64,
    pub success_params: Vec<f64>,
}

/// `1 / (1 + exp(-x))`, evaluated so that `f(-x) == 1 - f(x)` bit for bit.
fn symmetric_logistic(x: f64) -> f64 {
    let pos = 1.0 / (1.0 + (-x.abs()).exp());
    if x >= 0.0 {
        pos
    } else {
        1.0 - pos
    }
}

/// `q_k = 1 / (1 + exp(-g_k / K))`. Bit 1 realizes `+1`, bit 0 `-1`.
pub fn sign_prepare(g: &[f64], temperature: f64) -> SignSpec {
    assert!(temperature > 0.0, "temperature must be positive");
    SignSpec {
        temperature,
        success_params: g
            .iter()
            .map(|&x| symmetric_logistic(x / temperature))
            .collect(),
    }
}

/// Median of `|g_k|`, falling back to the mean magnitude and then to 1 when
/// the median is zero.
pub fn median_abs_temperature(g: &[f64]) -> f64 {
    let mut mags: Vec<f64> = g
        .iter()
        .map(|x| x.abs())
        .filter(|x| x.is_finite())
        .collect();
    if mags.is_empty() {
        return 1.0;
    }
    mags.sort_by(f64::total_cmp);
    let mid = mags.len() / 2;
    let median = if mags.len().is_multiple_of(2) {
        0.5 * (mags[mid - 1] + mags[mid])
    } else {
        mags[mid]
    };
    if median > 0.0 {
        return median;
    }
    let mean = mags.iter().sum::<f64>() / mags.len() as f64;
    if mean > 0.0 {
        mean
    } else {
        1.0
    }
}

/// Maps sign bits to `{-1, +1}`.
pub fn sign_realize(bits: &BinaryVector) -> Vec<f64> {
    bits.as_slice()
        .iter()
        .map(|&b| if b == 1 { 1.0 } else { -1.0 })
        .collect()
}

/// Output of the `s`-level quantizer before its randomness is resolved.
#[derive(Clone, Debug, PartialEq)]
pub struct QuantizedGradientSpec {
    pub norm: f64,
    /// 1 where the entry is negative.
    pub signs: BinaryVector,
    pub levels: Vec<u32>,
    pub success_params: Vec<f64>,
    pub s: u32,
}

impl QuantizedGradientSpec {
    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }

    /// The two support points `(lo, hi)` of entry `k`.
    pub fn support(&self, k: usize) -> (f64, f64) {
        let sign = if self.signs.get(k) == 1 { -1.0 } else { 1.0 };
        let scale = self.norm * sign / f64::from(self.s);
        let level = f64::from(self.levels[k]);
        (scale * level, scale * (level + 1.0))
    }
}

/// Stochastic `s`-level quantizer: entry `k` becomes
/// `norm * sign * (l + 1) / s` with probability `q_k` and
/// `norm * sign * l / s` otherwise.
pub fn qsgd_prepare(v: &[f64], s: u32) -> QuantizedGradientSpec {
    assert!(s >= 1, "at least one quantization level is required");
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let d = v.len();
    let signs = BinaryVector::from_bits(v.iter().map(|&x| u8::from(x < 0.0)));
    if norm == 0.0 || !norm.is_finite() {
        return QuantizedGradientSpec {
            norm: 0.0,
            signs,
            levels: vec![0; d],
            success_params: vec![0.0; d],
            s,
        };
    }
    let sf = f64::from(s);
    let mut levels = Vec::with_capacity(d);
    let mut success = Vec::with_capacity(d);
    for &x in v {
        let scaled = x.abs() / norm * sf;
        let floor = scaled.floor();
        let (level, q) = if floor >= sf {
            (s - 1, 1.0)
        } else {
            (floor as u32, (scaled - floor).clamp(0.0, 1.0))
        };
        levels.push(level);
        success.push(q);
    }
    QuantizedGradientSpec {
        norm,
        signs,
        levels,
        success_params: success,
        s,
    }
}

/// Bit 1 selects the upper support point, bit 0 the lower.
pub fn qsgd_realize(spec: &QuantizedGradientSpec, bits: &BinaryVector) -> Result<Vec<f64>> {
    check_len(bits.len(), spec.len())?;
    Ok((0..spec.len())
        .map(|k| {
            let (lo, hi) = spec.support(k);
            if bits.get(k) == 1 {
                hi
            } else {
                lo
            }
        })
        .collect())
}

/// Exact bits to send the norm (32), one sign bit per entry and the
/// Elias-gamma code of every `l_k + 1`.
pub fn encode_side_info(spec: &QuantizedGradientSpec) -> u64 {
    32 + spec.len() as u64
        + spec
            .levels
            .iter()
            .map(|&l| gamma_len(u64::from(l) + 1))
            .sum::<u64>()
}

/// Serializes the side information; its length equals [`encode_side_info`].
pub fn write_side_info(spec: &QuantizedGradientSpec) -> BitWriter {
    let mut w = BitWriter::new();
    w.push_bits(u64::from((spec.norm as f32).to_bits()), 32);
    for &b in spec.signs.as_slice() {
        w.push_bit(b == 1);
    }
    for &l in &spec.levels {
        w.push_gamma(u64::from(l) + 1);
    }
    w
}

/// `C(Q_s(v))`: quantizes, sends the quantizer's Bernoullis with MRC against
/// `prior` and realizes the decoded bits.
pub fn compose_mrc(
    v: &[f64],
    prior: &[f64],
    s: u32,
    n_candidates: usize,
    partition: &BlockPartition,
    keys: TransmitKeys,
) -> Result<Vec<f64>> {
    let spec = qsgd_prepare(v, s);
    let (samples, _) = mrc_transmit(
        &spec.success_params,
        prior,
        partition,
        n_candidates,
        1,
        keys,
    )?;
    qsgd_realize(&spec, &samples[0])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::randomness::{derive_stream, draw_bernoulli_vector, Party, Role, StreamKey};
    use proptest::prelude::*;
    use rand_distr::{Distribution, StandardNormal};

    fn normal_vec(seed: u64, d: usize) -> Vec<f64> {
        let mut s = derive_stream(&StreamKey::new(seed, Party::Global, Role::TheoryTrial));
        (0..d).map(|_| StandardNormal.sample(&mut s)).collect()
    }

    #[test]
    fn sign_examples() {
        let k = 0.7;
        let spec = sign_prepare(&[0.0, 50.0 * k, k * 3f64.ln()], k);
        assert_eq!(spec.success_params[0], 0.5);
        assert!((spec.success_params[1] - 1.0).abs() < 1e-15);
        assert!((spec.success_params[2] - 0.75).abs() < 1e-15);
    }

    #[test]
    fn sign_symmetry() {
        let g = normal_vec(1, 1000);
        let neg: Vec<f64> = g.iter().map(|x| -x).collect();
        let a = sign_prepare(&g, 0.3);
        let b = sign_prepare(&neg, 0.3);
        for (qa, qb) in a.success_params.iter().zip(&b.success_params) {
            assert_eq!(*qb, 1.0 - qa);
        }
    }

    #[test]
    fn temperature_fallbacks() {
        assert_eq!(median_abs_temperature(&[1.0, -3.0, 2.0]), 2.0);
        assert_eq!(median_abs_temperature(&[0.0, 0.0, 3.0]), 1.0);
        assert_eq!(median_abs_temperature(&[0.0; 4]), 1.0);
        assert_eq!(median_abs_temperature(&[]), 1.0);
    }

    #[test]
    fn qsgd_zero_entry_and_vector() {
        let spec = qsgd_prepare(&[0.0, 3.0, -4.0], 4);
        assert_eq!(spec.levels[0], 0);
        assert_eq!(spec.success_params[0], 0.0);
        let zero = qsgd_realize(&spec, &BinaryVector::zeros(3)).unwrap();
        assert_eq!(zero[0], 0.0);

        let z = qsgd_prepare(&[0.0; 5], 3);
        assert_eq!(z.norm, 0.0);
        let out = qsgd_realize(&z, &BinaryVector::from_bits([1, 1, 0, 1, 0])).unwrap();
        assert!(out.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn qsgd_boundary_entry() {
        for s in [1, 2, 6, 16] {
            let spec = qsgd_prepare(&[0.0, -2.5, 0.0], s);
            assert_eq!(spec.levels[1], s - 1);
            assert_eq!(spec.success_params[1], 1.0);
            let (_, hi) = spec.support(1);
            assert_eq!(hi, -2.5);
        }
    }

    #[test]
    fn qsgd_realize_extremes() {
        let v = normal_vec(2, 32);
        let spec = qsgd_prepare(&v, 6);
        let lo = qsgd_realize(&spec, &BinaryVector::zeros(32)).unwrap();
        let hi = qsgd_realize(&spec, &BinaryVector::from_bits(vec![1; 32])).unwrap();
        for k in 0..32 {
            let sign = v[k].signum();
            let scale = spec.norm * sign / 6.0;
            assert_eq!(lo[k], scale * f64::from(spec.levels[k]));
            assert_eq!(hi[k], scale * f64::from(spec.levels[k] + 1));
        }
        assert!(qsgd_realize(&spec, &BinaryVector::zeros(3)).is_err());
    }

    #[test]
    fn side_info_bits() {
        let spec = QuantizedGradientSpec {
            norm: 1.0,
            signs: BinaryVector::zeros(8),
            levels: vec![0; 8],
            success_params: vec![0.0; 8],
            s: 4,
        };
        assert_eq!(encode_side_info(&spec), 32 + 8 + 8);
        let mut one = spec.clone();
        one.levels[3] = 1;
        assert_eq!(encode_side_info(&one), 32 + 8 + 7 + 3);
        let empty = qsgd_prepare(&[], 4);
        assert_eq!(encode_side_info(&empty), 32);
        assert_eq!(write_side_info(&one).len_bits(), encode_side_info(&one));
    }

    #[test]
    fn compose_zero_vector() {
        let keys = TransmitKeys {
            candidates: StreamKey::new(1, Party::Global, Role::UplinkCandidates),
            index: StreamKey::new(1, Party::Client(0), Role::IndexDraw),
        };
        let partition = BlockPartition::fixed(8, 1).unwrap();
        let out = compose_mrc(&[0.0; 8], &[0.5; 8], 4, 16, &partition, keys).unwrap();
        assert!(out.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn variance_matches_exact_form() {
        // Monte-Carlo against sum (norm/s)^2 q(1-q)
        let v = normal_vec(3, 16);
        let spec = qsgd_prepare(&v, 6);
        let exact: f64 = spec
            .success_params
            .iter()
            .map(|q| (spec.norm / 6.0).powi(2) * q * (1.0 - q))
            .sum();
        let mut stream = derive_stream(&StreamKey::new(4, Party::Global, Role::TheoryTrial));
        let trials = 20_000;
        let mut acc = 0.0;
        for _ in 0..trials {
            let bits = draw_bernoulli_vector(&mut stream, &spec.success_params);
            let out = qsgd_realize(&spec, &bits).unwrap();
            acc += out
                .iter()
                .zip(&v)
                .map(|(a, b)| (a - b).powi(2))
                .sum::<f64>();
        }
        let est = acc / trials as f64;
        assert!((est - exact).abs() < 0.05 * exact, "{est} vs {exact}");
    }

    proptest! {
        #[test]
        fn qsgd_invariants(v in proptest::collection::vec(-10.0f64..10.0, 1..40), s in 1u32..20) {
            let spec = qsgd_prepare(&v, s);
            for k in 0..v.len() {
                let q = spec.success_params[k];
                prop_assert!((0.0..=1.0).contains(&q));
                prop_assert!(spec.levels[k] < s);
                let (lo, hi) = spec.support(k);
                prop_assert!((q * hi + (1.0 - q) * lo - v[k]).abs() < 1e-12);
            }
        }
    }
}
