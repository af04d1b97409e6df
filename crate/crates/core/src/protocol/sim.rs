//! Round-by-round simulator for every protocol variant.
//!
//! Federator and clients keep separate copies of everything they would hold
//! in a deployment; the only shared objects are stream keys (shared
//! randomness) and transmitted index lists, which are logged in the ledger.

use crate::bernoulli::{kl_block, kl_per_param, BernoulliVector};
use crate::error::{check_len, Error, Result};
use crate::experiment::ExperimentConfig;
use crate::learners::{
    evaluate_mask_with_loss, local_train_gradient, local_train_mask, make_dataset, FederatedData,
    GradientTraining, MaskModel, MaskTraining, Mlp,
};
use crate::mrc::{
    allocate_blocks, index_bits, mrc_reconstruct, mrc_transmit, needs_reallocation, sample_counts,
    BlockPartition, BlockStrategy, EncodedUpdate, TransmitKeys,
};
use crate::protocol::config::{LambdaMixing, RoundConfig, Variant, LAMBDA_GRID};
use crate::protocol::cost::setup_traffic;
use crate::protocol::ledger::CommLedger;
use crate::protocol::metrics::MetricsRow;
use crate::protocol::prior::{mix_prior, optimize_prior_mixing};
use crate::quantizers::{
    encode_side_info, median_abs_temperature, qsgd_prepare, qsgd_realize, sign_prepare,
    sign_realize,
};
use crate::randomness::{derive_stream, BinaryVector, Party, RandomStream, Role, StreamKey};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    Uplink,
    Downlink,
}

/// One logged message: MRC indices plus any side bits.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Transmission {
    pub direction: Direction,
    pub client: usize,
    /// Identical content delivered to every client (downlink only).
    pub shared: bool,
    pub indices: Vec<u32>,
    pub num_candidates: usize,
    pub extra_bits: u64,
}

impl Transmission {
    pub fn bits(&self) -> u64 {
        self.indices.len() as u64 * index_bits(self.num_candidates) + self.extra_bits
    }
}

#[derive(Clone, Debug)]
struct ClientState {
    theta_hat: BernoulliVector,
    /// Mean of the client's own uplink samples from the previous round.
    last_posterior_estimate: Option<BernoulliVector>,
}

#[derive(Clone, Debug)]
struct MaskState {
    fixed_weights: Vec<f64>,
    /// Federator's aggregate.
    theta: BernoulliVector,
    clients: Vec<ClientState>,
    /// Federator's copy of each client's estimate (private randomness).
    federator_views: Vec<BernoulliVector>,
    /// Federator's estimate of each client's previous posterior.
    federator_posteriors: Vec<Option<BernoulliVector>>,
}

#[derive(Clone, Debug)]
enum Model {
    Mask(MaskState),
    Real(Vec<f64>),
}

/// Everything a round reports besides the metrics row.
#[derive(Clone, Debug)]
pub struct RoundOutcome {
    pub metrics: MetricsRow,
    /// Per-client uplink divergence in nats.
    pub kl_ul: Vec<f64>,
}

pub struct Simulation {
    config: RoundConfig,
    seed: u64,
    eval_every: usize,
    net: Mlp,
    data: FederatedData,
    ledger: CommLedger,
    round: usize,
    model: Model,
    partition: Option<BlockPartition>,
    transcript: Vec<Transmission>,
}

impl Simulation {
    pub fn new(exp: &ExperimentConfig) -> Result<Self> {
        let config = exp.round.clone();
        config.validate()?;
        let n = config.n_clients;
        let mut data_stream =
            derive_stream(&StreamKey::new(exp.seed, Party::Global, Role::DataShuffle));
        let data = make_dataset(&exp.dataset_kind(), exp.allocation, n, &mut data_stream)?;
        let mut sizes = vec![data.train.n_features];
        sizes.extend(exp.hidden_layers());
        sizes.push(data.train.n_classes);
        let net = Mlp::new(sizes)?;
        let d = net.num_params();
        let mut init_stream =
            derive_stream(&StreamKey::new(exp.seed, Party::Global, Role::ModelInit));
        let init = net.init_weights(&mut init_stream);

        let model = if config.variant.is_mask() {
            let theta = BernoulliVector::constant(d, 0.5, config.clamp);
            Model::Mask(MaskState {
                fixed_weights: init,
                clients: vec![
                    ClientState {
                        theta_hat: theta.clone(),
                        last_posterior_estimate: None,
                    };
                    n
                ],
                federator_views: vec![theta.clone(); n],
                federator_posteriors: vec![None; n],
                theta,
            })
        } else if net.sizes().len() > 2 {
            Model::Real(init)
        } else {
            Model::Real(vec![0.0; d])
        };

        let mut ledger = CommLedger::new(d, n);
        for (i, s) in setup_traffic(&config, d).iter().enumerate() {
            ledger.add_setup_downlink(i, s.downlink_shared, true);
        }
        let partition = match config.block_strategy {
            BlockStrategy::Fixed => Some(BlockPartition::fixed(d, config.block_size)?),
            _ => None,
        };
        Ok(Self {
            config,
            seed: exp.seed,
            eval_every: exp.eval_every.max(1),
            net,
            data,
            ledger,
            round: 0,
            model,
            partition,
            transcript: Vec::new(),
        })
    }

    pub fn config(&self) -> &RoundConfig {
        &self.config
    }

    pub fn dim(&self) -> usize {
        self.net.num_params()
    }

    pub fn rounds_done(&self) -> usize {
        self.round
    }

    pub fn ledger(&self) -> &CommLedger {
        &self.ledger
    }

    pub fn data(&self) -> &FederatedData {
        &self.data
    }

    /// Messages of the most recent round.
    pub fn transcript(&self) -> &[Transmission] {
        &self.transcript
    }

    pub fn partition(&self) -> Option<&BlockPartition> {
        self.partition.as_ref()
    }

    /// The federator's model: mask probabilities or real weights.
    pub fn global_model(&self) -> &[f64] {
        match &self.model {
            Model::Mask(m) => m.theta.as_slice(),
            Model::Real(w) => w,
        }
    }

    /// Each client's estimate of the global mask probabilities. Empty for
    /// real-weight variants.
    pub fn client_estimates(&self) -> Vec<&[f64]> {
        match &self.model {
            Model::Mask(m) => m.clients.iter().map(|c| c.theta_hat.as_slice()).collect(),
            Model::Real(_) => Vec::new(),
        }
    }

    fn key(&self, party: Party, role: Role) -> StreamKey {
        StreamKey::new(self.seed, party, role).with_round(self.round as u64)
    }

    fn record(&mut self, tx: Transmission) {
        let bits = tx.bits();
        match (tx.direction, tx.shared) {
            (Direction::Uplink, _) => self.ledger.add_uplink(tx.client, bits),
            (Direction::Downlink, true) => self.ledger.add_downlink_shared(tx.client, bits),
            (Direction::Downlink, false) => self.ledger.add_downlink_private(tx.client, bits),
        }
        self.transcript.push(tx);
    }

    fn record_indices(
        &mut self,
        direction: Direction,
        client: usize,
        shared: bool,
        enc: &EncodedUpdate,
        extra: u64,
    ) {
        self.record(Transmission {
            direction,
            client,
            shared,
            indices: enc.to_flat(),
            num_candidates: enc.num_candidates,
            extra_bits: extra,
        });
    }

    /// Runs all remaining rounds up to `rounds` and returns their metrics.
    pub fn run(&mut self, rounds: usize) -> Result<Vec<MetricsRow>> {
        let mut rows = Vec::with_capacity(rounds);
        while self.round < rounds {
            rows.push(self.step(rounds)?.metrics);
        }
        Ok(rows)
    }

    /// Executes one round. `total_rounds` only decides whether the final
    /// round is evaluated when `eval_every > 1`.
    pub fn step(&mut self, total_rounds: usize) -> Result<RoundOutcome> {
        self.transcript.clear();
        self.ledger.begin_round();
        let (kl_ul, kl_dl) = match self.config.variant {
            Variant::Gr | Variant::GrReconst | Variant::Pr | Variant::PrSplitDl => {
                self.mask_mrc_round()?
            }
            Variant::FedPmUncompressed => self.fedpm_round()?,
            Variant::CflSign | Variant::CflQsgd | Variant::FedAvgBaseline => self.real_round()?,
        };
        let t = self.round;
        self.round += 1;
        let evaluate = self.round.is_multiple_of(self.eval_every) || self.round >= total_rounds;
        let (accuracy, loss) = if evaluate {
            self.evaluate(t)
        } else {
            (f64::NAN, f64::NAN)
        };
        let (uplink_bits, downlink_bits) = self.ledger.round_totals(t);
        let mean = |v: &[f64]| {
            if v.is_empty() {
                0.0
            } else {
                v.iter().sum::<f64>() / v.len() as f64
            }
        };
        Ok(RoundOutcome {
            metrics: MetricsRow {
                round: self.round,
                accuracy,
                loss,
                uplink_bits,
                downlink_bits,
                kl_ul_mean: mean(&kl_ul),
                kl_dl_mean: mean(&kl_dl),
            },
            kl_ul,
        })
    }

    /// Test accuracy and training loss of the federator's model.
    fn evaluate(&self, t: usize) -> (f64, f64) {
        match &self.model {
            Model::Mask(m) => {
                let model = MaskModel {
                    net: self.net.clone(),
                    fixed_weights: m.fixed_weights.clone(),
                    theta: m.theta.clone(),
                };
                let base =
                    StreamKey::new(self.seed, Party::Global, Role::MaskSample).with_round(t as u64);
                let (acc, _) = evaluate_mask_with_loss(
                    &model,
                    &self.data.test,
                    self.config.eval_masks,
                    &mut derive_stream(&base.with_sample(1)),
                );
                let (_, loss) = evaluate_mask_with_loss(
                    &model,
                    &self.data.train,
                    self.config.eval_masks,
                    &mut derive_stream(&base.with_sample(2)),
                );
                (acc, loss)
            }
            Model::Real(w) => (
                self.net.accuracy(w, &self.data.test),
                self.net.loss(w, &self.data.train),
            ),
        }
    }

    fn mask_training(&self) -> MaskTraining {
        MaskTraining {
            tau: self.config.tau,
            batch_size: self.config.batch_size,
            optimizer: self.config.optimizer,
            learning_rate: self.config.mask_lr,
            ste: self.config.ste,
            clamp: self.config.clamp,
        }
    }

    fn train_masks(&self, state: &MaskState) -> Result<Vec<BernoulliVector>> {
        let params = self.mask_training();
        (0..self.config.n_clients)
            .map(|i| {
                let mut stream =
                    derive_stream(&self.key(Party::Client(i as u32), Role::MaskSample));
                local_train_mask(
                    &self.net,
                    &state.fixed_weights,
                    &state.clients[i].theta_hat,
                    &self.data.shards[i],
                    &params,
                    &mut stream,
                )
            })
            .collect()
    }

    /// Re-allocates adaptive blocks from the clients' average per-parameter
    /// divergence when required, charging the boundary overhead.
    fn sync_partition(
        &mut self,
        posteriors: &[BernoulliVector],
        priors: &[BernoulliVector],
    ) -> Result<()> {
        if self.config.block_strategy == BlockStrategy::Fixed {
            return Ok(());
        }
        let d = self.dim();
        let mut avg = vec![0.0; d];
        for (q, p) in posteriors.iter().zip(priors) {
            for (a, k) in avg
                .iter_mut()
                .zip(kl_per_param(q.as_slice(), p.as_slice())?)
            {
                *a += k / posteriors.len() as f64;
            }
        }
        let stale = match &self.partition {
            None => true,
            Some(p) => needs_reallocation(p, &avg, self.config.deviation_factor),
        };
        if !stale {
            return Ok(());
        }
        let partition = allocate_blocks(
            self.config.block_strategy,
            d,
            &self.config.allocation_spec(),
            &avg,
        )?;
        let per_size =
            index_bits(self.config.max_block) + u64::from(!self.config.max_block.is_power_of_two());
        let overhead = match self.config.block_strategy {
            BlockStrategy::Adaptive => partition.num_blocks() as u64 * per_size,
            _ => per_size,
        };
        for i in 0..self.config.n_clients {
            self.record(Transmission {
                direction: Direction::Uplink,
                client: i,
                shared: false,
                indices: Vec::new(),
                num_candidates: 1,
                extra_bits: overhead,
            });
            self.record(Transmission {
                direction: Direction::Downlink,
                client: i,
                shared: true,
                indices: Vec::new(),
                num_candidates: 1,
                extra_bits: overhead,
            });
        }
        self.partition = Some(partition);
        Ok(())
    }

    /// Candidate stream for client `i`'s uplink. Under global randomness every
    /// party holds the master seed and can derive it; under private
    /// randomness only the federator and client `i` do.
    fn uplink_candidate_key(&self, client: usize) -> StreamKey {
        self.key(Party::Client(client as u32), Role::UplinkCandidates)
    }

    fn mask_mrc_round(&mut self) -> Result<(Vec<f64>, Vec<f64>)> {
        let Model::Mask(mut state) = std::mem::replace(&mut self.model, Model::Real(Vec::new()))
        else {
            return Err(Error::InvalidArgument(
                "mask round on a real-weight model".into(),
            ));
        };
        let result = self.mask_mrc_round_inner(&mut state);
        self.model = Model::Mask(state);
        result
    }

    fn mask_mrc_round_inner(&mut self, state: &mut MaskState) -> Result<(Vec<f64>, Vec<f64>)> {
        let cfg = self.config.clone();
        let n = cfg.n_clients;
        let clamp = cfg.clamp;
        let posteriors = self.train_masks(state)?;

        // uplink priors; client and federator derive the same vector
        let mut priors = Vec::with_capacity(n);
        let mut lambda_bits = vec![0u64; n];
        for i in 0..n {
            let client = &state.clients[i];
            let last = client
                .last_posterior_estimate
                .as_ref()
                .unwrap_or(&client.theta_hat);
            let lambda = match cfg.lambda {
                LambdaMixing::Fixed(l) => l,
                LambdaMixing::Auto => {
                    lambda_bits[i] = 32;
                    optimize_prior_mixing(
                        client.theta_hat.as_slice(),
                        last.as_slice(),
                        posteriors[i].as_slice(),
                        &LAMBDA_GRID,
                        clamp,
                    )?
                }
            };
            let prior = if lambda == 1.0 {
                client.theta_hat.clone()
            } else {
                mix_prior(client.theta_hat.as_slice(), last.as_slice(), lambda, clamp)?
            };
            let fed_last = state.federator_posteriors[i]
                .as_ref()
                .unwrap_or(&state.federator_views[i]);
            let fed_prior = if lambda == 1.0 {
                state.federator_views[i].clone()
            } else {
                mix_prior(
                    state.federator_views[i].as_slice(),
                    fed_last.as_slice(),
                    lambda,
                    clamp,
                )?
            };
            debug_assert_eq!(prior, fed_prior);
            priors.push((prior, fed_prior));
        }
        let client_priors: Vec<BernoulliVector> = priors.iter().map(|p| p.0.clone()).collect();
        self.sync_partition(&posteriors, &client_priors)?;
        let partition = self.partition.clone().expect("partition synchronized");

        let kl_ul = posteriors
            .iter()
            .zip(&client_priors)
            .map(|(q, p)| kl_block(q.as_slice(), p.as_slice()))
            .collect::<Result<Vec<f64>>>()?;

        // uplink
        let mut encoded = Vec::with_capacity(n);
        for i in 0..n {
            let keys = TransmitKeys {
                candidates: self.uplink_candidate_key(i),
                index: self.key(Party::Client(i as u32), Role::IndexDraw),
            };
            let (samples, enc) = mrc_transmit(
                posteriors[i].as_slice(),
                client_priors[i].as_slice(),
                &partition,
                cfg.candidates,
                cfg.masks_ul,
                keys,
            )?;
            self.record_indices(Direction::Uplink, i, false, &enc, lambda_bits[i]);
            let own = sample_counts(&samples, self.dim());
            state.clients[i].last_posterior_estimate =
                Some(mean_from_counts(&own, cfg.masks_ul, 0.0));
            encoded.push(enc);
        }

        // federator decodes and aggregates
        let d = self.dim();
        let mut total = vec![0u32; d];
        for i in 0..n {
            let samples = mrc_reconstruct(
                &encoded[i],
                priors[i].1.as_slice(),
                &partition,
                self.uplink_candidate_key(i),
            )?;
            let counts = sample_counts(&samples, d);
            for (t, c) in total.iter_mut().zip(&counts) {
                *t += c;
            }
            state.federator_posteriors[i] = Some(mean_from_counts(&counts, cfg.masks_ul, 0.0));
        }
        let theta_new = mean_from_counts(&total, n * cfg.masks_ul, clamp);

        let downlink_priors: Vec<BernoulliVector> =
            state.clients.iter().map(|c| c.theta_hat.clone()).collect();
        let kl_dl = downlink_priors
            .iter()
            .map(|p| kl_block(theta_new.as_slice(), p.as_slice()))
            .collect::<Result<Vec<f64>>>()?;

        match cfg.variant {
            Variant::Gr => {
                for j in 0..n {
                    let relayed: u64 = (0..n)
                        .filter(|&i| i != j)
                        .map(|i| encoded[i].bit_cost)
                        .sum();
                    let mut flat = Vec::new();
                    for (i, enc) in encoded.iter().enumerate() {
                        if i != j {
                            flat.extend(enc.to_flat());
                        }
                    }
                    debug_assert_eq!(flat.len() as u64 * index_bits(cfg.candidates), relayed);
                    self.record(Transmission {
                        direction: Direction::Downlink,
                        client: j,
                        shared: true,
                        indices: flat,
                        num_candidates: cfg.candidates,
                        extra_bits: 0,
                    });
                    // client j decodes every client's samples on its own
                    let mut counts = vec![0u32; d];
                    for (i, enc) in encoded.iter().enumerate() {
                        let prior = &state.clients[j].theta_hat;
                        let samples = mrc_reconstruct(
                            enc,
                            prior.as_slice(),
                            &partition,
                            self.uplink_candidate_key(i),
                        )?;
                        for (c, s) in counts.iter_mut().zip(sample_counts(&samples, d)) {
                            *c += s;
                        }
                    }
                    state.clients[j].theta_hat = mean_from_counts(&counts, n * cfg.masks_ul, clamp);
                    debug_assert_eq!(state.clients[j].theta_hat, theta_new);
                    state.federator_views[j] = theta_new.clone();
                }
            }
            Variant::GrReconst => {
                let dl_key = self.key(Party::Global, Role::DownlinkCandidates);
                let keys = TransmitKeys {
                    candidates: dl_key,
                    index: self.key(Party::Federator, Role::DownlinkIndexDraw),
                };
                // every client holds the same estimate, which is the prior
                let prior = state.federator_views[0].clone();
                let (fed_samples, enc) = mrc_transmit(
                    theta_new.as_slice(),
                    prior.as_slice(),
                    &partition,
                    cfg.candidates,
                    cfg.masks_dl(),
                    keys,
                )?;
                let fed_view =
                    mean_from_counts(&sample_counts(&fed_samples, d), cfg.masks_dl(), clamp);
                for j in 0..n {
                    self.record_indices(Direction::Downlink, j, true, &enc, 0);
                    let samples = mrc_reconstruct(
                        &enc,
                        state.clients[j].theta_hat.as_slice(),
                        &partition,
                        dl_key,
                    )?;
                    state.clients[j].theta_hat =
                        mean_from_counts(&sample_counts(&samples, d), cfg.masks_dl(), clamp);
                    debug_assert_eq!(state.clients[j].theta_hat, fed_view);
                    state.federator_views[j] = fed_view.clone();
                }
            }
            Variant::Pr | Variant::PrSplitDl => {
                for j in 0..n {
                    let blocks: Vec<usize> = if cfg.variant == Variant::PrSplitDl {
                        (j..partition.num_blocks()).step_by(n).collect()
                    } else {
                        (0..partition.num_blocks()).collect()
                    };
                    if blocks.is_empty() {
                        continue;
                    }
                    let keys = TransmitKeys {
                        candidates: self.key(Party::Client(j as u32), Role::DownlinkCandidates),
                        index: self.key(Party::Client(j as u32), Role::DownlinkIndexDraw),
                    };
                    let (fed_view, enc) = transmit_blocks(
                        theta_new.as_slice(),
                        &state.federator_views[j],
                        &partition,
                        &blocks,
                        cfg.candidates,
                        cfg.masks_dl(),
                        keys,
                        clamp,
                    )?;
                    self.record_indices(Direction::Downlink, j, false, &enc, 0);
                    let client_view = reconstruct_blocks(
                        &enc,
                        &state.clients[j].theta_hat,
                        &partition,
                        &blocks,
                        keys.candidates,
                        clamp,
                    )?;
                    debug_assert_eq!(fed_view, client_view);
                    state.federator_views[j] = fed_view;
                    state.clients[j].theta_hat = client_view;
                }
            }
            _ => unreachable!("not an MRC mask variant"),
        }
        state.theta = theta_new;
        Ok((kl_ul, kl_dl))
    }

    fn fedpm_round(&mut self) -> Result<(Vec<f64>, Vec<f64>)> {
        let Model::Mask(mut state) = std::mem::replace(&mut self.model, Model::Real(Vec::new()))
        else {
            return Err(Error::InvalidArgument(
                "mask round on a real-weight model".into(),
            ));
        };
        let outcome = (|| -> Result<(Vec<f64>, Vec<f64>)> {
            let n = self.config.n_clients;
            let d = self.dim();
            let raw = 32 * d as u64;
            let posteriors = self.train_masks(&state)?;
            let mut kl_ul = Vec::with_capacity(n);
            let mut sum = vec![0.0; d];
            for (i, q) in posteriors.iter().enumerate() {
                kl_ul.push(kl_block(
                    q.as_slice(),
                    state.clients[i].theta_hat.as_slice(),
                )?);
                self.record(raw_transmission(Direction::Uplink, i, false, raw));
                for (s, v) in sum.iter_mut().zip(q.as_slice()) {
                    *s += v;
                }
            }
            let theta_new = BernoulliVector::new(
                sum.iter().map(|s| s / n as f64).collect(),
                self.config.clamp,
            );
            let kl_dl = vec![kl_block(theta_new.as_slice(), state.theta.as_slice())?; n];
            for i in 0..n {
                self.record(raw_transmission(Direction::Downlink, i, true, raw));
                state.clients[i].theta_hat = theta_new.clone();
                state.federator_views[i] = theta_new.clone();
            }
            state.theta = theta_new;
            Ok((kl_ul, kl_dl))
        })();
        self.model = Model::Mask(state);
        outcome
    }

    fn real_round(&mut self) -> Result<(Vec<f64>, Vec<f64>)> {
        let Model::Real(mut w) = std::mem::replace(&mut self.model, Model::Real(Vec::new())) else {
            return Err(Error::InvalidArgument(
                "gradient round on a mask model".into(),
            ));
        };
        let outcome = self.real_round_inner(&mut w);
        self.model = Model::Real(w);
        outcome
    }

    fn real_round_inner(&mut self, w: &mut [f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let cfg = self.config.clone();
        let n = cfg.n_clients;
        let d = self.dim();
        let params = GradientTraining {
            tau: cfg.tau.max(1),
            batch_size: cfg.batch_size,
            learning_rate: cfg.local_lr,
        };
        let grads = (0..n)
            .map(|i| {
                let mut stream: RandomStream =
                    derive_stream(&self.key(Party::Client(i as u32), Role::DataShuffle));
                local_train_gradient(&self.net, w, &self.data.shards[i], &params, &mut stream)
            })
            .collect::<Result<Vec<Vec<f64>>>>()?;

        if cfg.variant == Variant::FedAvgBaseline {
            let raw = 32 * d as u64;
            let mut avg = vec![0.0; d];
            for (i, g) in grads.iter().enumerate() {
                self.record(raw_transmission(Direction::Uplink, i, false, raw));
                for (a, v) in avg.iter_mut().zip(g) {
                    *a += v / n as f64;
                }
            }
            for i in 0..n {
                self.record(raw_transmission(Direction::Downlink, i, true, raw));
            }
            for (wk, a) in w.iter_mut().zip(&avg) {
                *wk -= cfg.local_lr * a;
            }
            return Ok((vec![0.0; n], vec![0.0; n]));
        }

        let prior = BernoulliVector::constant(d, 0.5, 0.0);
        let posteriors_specs: Vec<(
            BernoulliVector,
            Option<crate::quantizers::QuantizedGradientSpec>,
            u64,
        )> = grads
            .iter()
            .map(|g| match cfg.variant {
                Variant::CflSign => {
                    let spec = sign_prepare(g, median_abs_temperature(g));
                    (
                        BernoulliVector::new(spec.success_params, cfg.clamp),
                        None,
                        32,
                    )
                }
                _ => {
                    let spec = qsgd_prepare(g, cfg.qsgd_levels(d));
                    let side = encode_side_info(&spec);
                    (
                        BernoulliVector::new(spec.success_params.clone(), cfg.clamp),
                        Some(spec),
                        side,
                    )
                }
            })
            .collect();
        let kl_ul = posteriors_specs
            .iter()
            .map(|(q, _, _)| kl_block(q.as_slice(), prior.as_slice()))
            .collect::<Result<Vec<f64>>>()?;
        self.sync_partition(
            &posteriors_specs
                .iter()
                .map(|p| p.0.clone())
                .collect::<Vec<_>>(),
            &vec![prior.clone(); n],
        )?;
        let partition = self.partition.clone().expect("partition synchronized");

        let mut encoded = Vec::with_capacity(n);
        let mut update = vec![0.0; d];
        for (i, (q, spec, side)) in posteriors_specs.iter().enumerate() {
            let keys = TransmitKeys {
                candidates: self.uplink_candidate_key(i),
                index: self.key(Party::Client(i as u32), Role::IndexDraw),
            };
            let (_, enc) = mrc_transmit(
                q.as_slice(),
                prior.as_slice(),
                &partition,
                cfg.candidates,
                cfg.masks_ul,
                keys,
            )?;
            self.record_indices(Direction::Uplink, i, false, &enc, *side);
            // federator side
            let samples = mrc_reconstruct(&enc, prior.as_slice(), &partition, keys.candidates)?;
            for bits in &samples {
                let realized = match spec {
                    None => sign_realize(bits),
                    Some(s) => qsgd_realize(s, bits)?,
                };
                for (u, r) in update.iter_mut().zip(realized) {
                    *u += r / (n * cfg.masks_ul) as f64;
                }
            }
            encoded.push((enc, if spec.is_some() { *side } else { 0 }));
        }
        // relay every other client's message
        for j in 0..n {
            let mut flat = Vec::new();
            let mut extra = 0;
            for (i, (enc, side)) in encoded.iter().enumerate() {
                if i != j {
                    flat.extend(enc.to_flat());
                    extra += side;
                }
            }
            self.record(Transmission {
                direction: Direction::Downlink,
                client: j,
                shared: true,
                indices: flat,
                num_candidates: cfg.candidates,
                extra_bits: extra,
            });
        }
        let eta = cfg.eta_s();
        for (wk, u) in w.iter_mut().zip(&update) {
            *wk -= eta * u;
        }
        Ok((kl_ul, vec![0.0; n]))
    }
}

fn raw_transmission(direction: Direction, client: usize, shared: bool, bits: u64) -> Transmission {
    Transmission {
        direction,
        client,
        shared,
        indices: Vec::new(),
        num_candidates: 1,
        extra_bits: bits,
    }
}

fn mean_from_counts(counts: &[u32], samples: usize, clamp: f64) -> BernoulliVector {
    let m = samples.max(1) as f64;
    BernoulliVector::new(counts.iter().map(|&c| f64::from(c) / m).collect(), clamp)
}

/// Partition restricted to `blocks`, re-based to start at 0.
fn sub_partition(partition: &BlockPartition, blocks: &[usize]) -> Result<BlockPartition> {
    let mut start = 0;
    let ranges = blocks
        .iter()
        .map(|&j| {
            let len = partition.ranges()[j].len();
            let r = start..start + len;
            start += len;
            r
        })
        .collect();
    BlockPartition::from_ranges(
        ranges,
        partition.strategy(),
        partition.target_kl_per_block(),
    )
}

fn gather(v: &[f64], partition: &BlockPartition, blocks: &[usize]) -> Vec<f64> {
    blocks
        .iter()
        .flat_map(|&j| v[partition.ranges()[j].clone()].iter().copied())
        .collect()
}

/// Replaces the selected blocks of `base` by the sample means.
fn scatter_means(
    base: &BernoulliVector,
    samples: &[BinaryVector],
    partition: &BlockPartition,
    blocks: &[usize],
    clamp: f64,
) -> Result<BernoulliVector> {
    let sub_len: usize = blocks.iter().map(|&j| partition.ranges()[j].len()).sum();
    let counts = sample_counts(samples, sub_len);
    let mut out = base.as_slice().to_vec();
    let mut pos = 0;
    for &j in blocks {
        for k in partition.ranges()[j].clone() {
            out[k] = f64::from(counts[pos]) / samples.len().max(1) as f64;
            pos += 1;
        }
    }
    check_len(pos, sub_len)?;
    Ok(BernoulliVector::new(out, clamp))
}

#[allow(clippy::too_many_arguments)]
fn transmit_blocks(
    target: &[f64],
    prior: &BernoulliVector,
    partition: &BlockPartition,
    blocks: &[usize],
    n_candidates: usize,
    n_masks: usize,
    keys: TransmitKeys,
    clamp: f64,
) -> Result<(BernoulliVector, EncodedUpdate)> {
    let sub = sub_partition(partition, blocks)?;
    let (samples, enc) = mrc_transmit(
        &gather(target, partition, blocks),
        &gather(prior.as_slice(), partition, blocks),
        &sub,
        n_candidates,
        n_masks,
        keys,
    )?;
    Ok((
        scatter_means(prior, &samples, partition, blocks, clamp)?,
        enc,
    ))
}

fn reconstruct_blocks(
    enc: &EncodedUpdate,
    prior: &BernoulliVector,
    partition: &BlockPartition,
    blocks: &[usize],
    candidate_key: StreamKey,
    clamp: f64,
) -> Result<BernoulliVector> {
    let sub = sub_partition(partition, blocks)?;
    let samples = mrc_reconstruct(
        enc,
        &gather(prior.as_slice(), partition, blocks),
        &sub,
        candidate_key,
    )?;
    scatter_means(prior, &samples, partition, blocks, clamp)
}
