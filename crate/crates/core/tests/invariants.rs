use mrcfl::mrc::{exact_marginal, mrc_decode_block, mrc_encode_block};
use mrcfl::quantizers::sign_prepare;
use mrcfl::randomness::{
    derive_stream, draw_bernoulli_vector, draw_categorical, Party, Role, StreamKey,
};
use proptest::prelude::*;

const ROLES: [Role; 8] = [
    Role::UplinkCandidates,
    Role::DownlinkCandidates,
    Role::IndexDraw,
    Role::DownlinkIndexDraw,
    Role::DataShuffle,
    Role::MaskSample,
    Role::TheoryTrial,
    Role::ModelInit,
];

fn party() -> impl Strategy<Value = Party> {
    prop_oneof![
        Just(Party::Federator),
        Just(Party::Global),
        (0u32..1000).prop_map(Party::Client),
    ]
}

fn key() -> impl Strategy<Value = StreamKey> {
    (
        any::<u64>(),
        any::<u64>(),
        party(),
        0usize..ROLES.len(),
        any::<u64>(),
        any::<u64>(),
    )
        .prop_map(|(seed, round, party, role, block, sample)| {
            StreamKey::new(seed, party, ROLES[role])
                .with_round(round)
                .with_block(block)
                .with_sample(sample)
        })
}

fn draws(key: &StreamKey, n: usize) -> Vec<u64> {
    let mut s = derive_stream(key);
    (0..n).map(|_| s.next_u64()).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn replay_is_bit_identical(k in key()) {
        prop_assert_eq!(draws(&k, 64), draws(&k, 64));
    }

    #[test]
    fn single_field_changes_separate_streams(k in key(), field in 0usize..6) {
        let other = match field {
            0 => StreamKey { master_seed: k.master_seed.wrapping_add(1), ..k },
            1 => k.with_round(k.round ^ 1),
            2 => k.with_party(match k.party {
                Party::Client(i) => Party::Client(i + 1),
                Party::Global => Party::Federator,
                Party::Federator => Party::Global,
            }),
            3 => {
                let pos = ROLES.iter().position(|&r| r == k.role).unwrap();
                k.with_role(ROLES[(pos + 1) % ROLES.len()])
            }
            4 => k.with_block(k.block ^ 1),
            _ => k.with_sample(k.sample ^ 1),
        };
        let (a, b) = (draws(&k, 64), draws(&other, 64));
        prop_assert!(a.iter().zip(&b).any(|(x, y)| x != y));
    }

    #[test]
    fn decoder_regenerates_encoder_candidates(
        k in key(),
        len in 1usize..24,
        n in 1usize..64,
        raw in prop::collection::vec((0.01f64..0.99, 0.01f64..0.99), 24),
    ) {
        let (posterior, prior): (Vec<f64>, Vec<f64>) = raw[..len].iter().copied().unzip();
        // the candidate matrix as an independent receiver would draw it
        let mut fresh = derive_stream(&k);
        let matrix: Vec<_> = (0..n).map(|_| draw_bernoulli_vector(&mut fresh, &prior)).collect();

        let mut candidates = derive_stream(&k);
        let mut index = derive_stream(&k.with_role(Role::IndexDraw));
        let i = mrc_encode_block(&posterior, &prior, n, &mut candidates, &mut index).unwrap();
        prop_assert_eq!(candidates.position(), (n * len) as u64);
        let mut decoder = derive_stream(&k);
        let decoded = mrc_decode_block(i, &prior, n, &mut decoder).unwrap();
        prop_assert_eq!(&decoded, &matrix[i]);
    }

    #[test]
    fn sign_probabilities_mirror_under_negation(
        g in prop::collection::vec(-50.0f64..50.0, 1..64),
        temperature in 0.01f64..10.0,
    ) {
        let neg: Vec<f64> = g.iter().map(|x| -x).collect();
        let a = sign_prepare(&g, temperature);
        let b = sign_prepare(&neg, temperature);
        for (x, y) in a.success_params.iter().zip(&b.success_params) {
            prop_assert_eq!(*y, 1.0 - *x);
        }
    }
}

#[test]
fn categorical_passes_chi_square() {
    let mut s = derive_stream(&StreamKey::new(5, Party::Global, Role::TheoryTrial));
    let weights: Vec<f64> = (0..8).map(|_| 0.05 + s.next_uniform()).collect();
    let total: f64 = weights.iter().sum();
    const DRAWS: usize = 10_000;
    let mut counts = [0usize; 8];
    for _ in 0..DRAWS {
        counts[draw_categorical(&mut s, &weights).unwrap()] += 1;
    }
    let chi2: f64 = counts
        .iter()
        .zip(&weights)
        .map(|(&c, &w)| {
            let expected = DRAWS as f64 * w / total;
            (c as f64 - expected).powi(2) / expected
        })
        .sum();
    // upper 1e-3 quantile of chi-square with 7 degrees of freedom
    assert!(chi2 < 24.322, "chi2 = {chi2}");
}

#[test]
fn equal_posterior_and_prior_decode_to_the_prior() {
    for p in [0.1, 0.35, 0.5, 0.9] {
        for n in [2, 16, 256] {
            assert_eq!(exact_marginal(p, p, n), p);
            let trials = 20_000u64;
            let mut ones = 0u64;
            for t in 0..trials {
                let k = StreamKey::new(21, Party::Client(3), Role::UplinkCandidates)
                    .with_round(t)
                    .with_block(n as u64);
                let mut c = derive_stream(&k);
                let mut idx = derive_stream(&k.with_role(Role::IndexDraw));
                let i = mrc_encode_block(&[p], &[p], n, &mut c, &mut idx).unwrap();
                c.seek(0);
                ones += u64::from(mrc_decode_block(i, &[p], n, &mut c).unwrap().get(0));
            }
            let freq = ones as f64 / trials as f64;
            let sigma = (p * (1.0 - p) / trials as f64).sqrt();
            assert!((freq - p).abs() <= 3.0 * sigma, "p={p} n={n} freq={freq}");
        }
    }
}
