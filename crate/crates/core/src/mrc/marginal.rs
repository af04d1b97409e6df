use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, Zero};

/// Probability that scalar MRC with `n` candidates decodes a 1 when the
/// posterior is `Ber(q)` and the prior `Ber(p)`.
///
/// Evaluates `q * E[1 / ((b+1)/n * q/p + (n-b-1)/n * (1-q)/(1-p))]` for
/// `b ~ Binomial(n-1, p)`, summing all `n` terms with log-space binomial
/// coefficients.
pub fn exact_marginal(q: f64, p: f64, n: usize) -> f64 {
    if q == p {
        return q;
    }
    if n <= 1 {
        return p;
    }
    if q == 0.0 {
        return 0.0;
    }
    let m = n - 1;
    let one_ratio = q / p;
    let zero_ratio = (1.0 - q) / (1.0 - p);
    let log_fact = log_factorials(m);
    let (ln_p, ln_1p) = (p.ln(), (1.0 - p).ln());
    let nf = n as f64;
    let mut total = 0.0;
    for b in 0..=m {
        let log_pmf =
            log_fact[m] - log_fact[b] - log_fact[m - b] + b as f64 * ln_p + (m - b) as f64 * ln_1p;
        let mean_weight = (b + 1) as f64 / nf * one_ratio + (m - b) as f64 / nf * zero_ratio;
        total += log_pmf.exp() / mean_weight;
    }
    q * total
}

fn log_factorials(m: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(m + 1);
    let mut acc = 0.0;
    out.push(0.0);
    for k in 1..=m {
        acc += (k as f64).ln();
        out.push(acc);
    }
    out
}

/// The same expectation in exact rational arithmetic.
///
/// Terms are accumulated as an unreduced fraction and reduced once at the
/// end, which keeps the cost linear in `n` multiplications.
pub fn exact_marginal_rational(q: &BigRational, p: &BigRational, n: usize) -> BigRational {
    if q == p {
        return q.clone();
    }
    if n <= 1 {
        return p.clone();
    }
    if q.is_zero() {
        return BigRational::zero();
    }
    let one = BigRational::one();
    let m = n - 1;
    let one_ratio = q / p;
    let zero_ratio = (&one - q) / (&one - p);
    let one_minus_p = &one - p;
    let nb = BigInt::from(n);

    // running sum num / den
    let mut num = BigInt::zero();
    let mut den = BigInt::one();
    let mut binom = BigInt::one();
    for b in 0..=m {
        if b > 0 {
            binom = binom * BigInt::from(m - b + 1) / BigInt::from(b);
        }
        // pmf = binom * p^b (1-p)^(m-b)
        let pmf_num = &binom * p.numer().pow(b as u32) * one_minus_p.numer().pow((m - b) as u32);
        let pmf_den = p.denom().pow(b as u32) * one_minus_p.denom().pow((m - b) as u32);
        // mean weight = (b+1) one_ratio / n + (m-b) zero_ratio / n
        let w = (&one_ratio * BigInt::from(b + 1) + &zero_ratio * BigInt::from(m - b)) / &nb;
        let term_num = pmf_num * w.denom();
        let term_den = pmf_den * w.numer();
        num = num * &term_den + term_num * &den;
        den *= term_den;
    }
    q * BigRational::new(num, den)
}

/// `q * (max{p/q, (1-p)/(1-q), q/p, (1-q)/(1-p)} - 1)` in exact arithmetic.
/// Undefined ratios (division by zero) are skipped.
pub fn prop_bound_rational(q: &BigRational, p: &BigRational) -> BigRational {
    let one = BigRational::one();
    let (q1, p1) = (&one - q, &one - p);
    let mut worst = one.clone();
    for (a, b) in [(p, q), (&p1, &q1), (q, p), (&q1, &p1)] {
        if !b.is_zero() {
            let r = a / b;
            if r > worst {
                worst = r;
            }
        }
    }
    q * (worst - one)
}

/// Float form of [`prop_bound_rational`].
pub fn prop_bound(q: f64, p: f64) -> f64 {
    let ratios = [p / q, (1.0 - p) / (1.0 - q), q / p, (1.0 - q) / (1.0 - p)];
    let worst = ratios
        .iter()
        .copied()
        .filter(|r| r.is_finite())
        .fold(1.0, f64::max);
    q * (worst - 1.0)
}

/// `|a - b|` for rationals.
pub fn abs_diff(a: &BigRational, b: &BigRational) -> BigRational {
    (a - b).abs()
}
