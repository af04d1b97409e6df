use std::str::FromStr;

use crate::bernoulli::DEFAULT_CLAMP;
use crate::error::{Error, Result};
use crate::learners::{OptimizerKind, SteMode};
use crate::mrc::{AllocationSpec, BlockStrategy};

/// Protocol variant run by the simulator.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Variant {
    /// Global shared randomness; the federator relays every client's indices.
    Gr,
    /// Global shared randomness; the federator re-encodes the aggregate.
    GrReconst,
    /// Private shared randomness per client.
    Pr,
    /// Private randomness; each client receives a disjoint `1/n` of the blocks.
    PrSplitDl,
    /// Conventional gradients, stochastic sign quantization.
    CflSign,
    /// Conventional gradients, `s`-level quantization.
    CflQsgd,
    /// Uncompressed 32-bit weights both ways.
    FedAvgBaseline,
    /// Mask training with uncompressed 32-bit probabilities both ways.
    FedPmUncompressed,
}

impl Variant {
    pub const ALL: [Variant; 8] = [
        Variant::Gr,
        Variant::GrReconst,
        Variant::Pr,
        Variant::PrSplitDl,
        Variant::CflSign,
        Variant::CflQsgd,
        Variant::FedAvgBaseline,
        Variant::FedPmUncompressed,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Gr => "GR",
            Variant::GrReconst => "GR_Reconst",
            Variant::Pr => "PR",
            Variant::PrSplitDl => "PR_SplitDL",
            Variant::CflSign => "CFL_Sign",
            Variant::CflQsgd => "CFL_QSGD",
            Variant::FedAvgBaseline => "FedAvg",
            Variant::FedPmUncompressed => "FedPM",
        }
    }

    /// Trains Bernoulli masks rather than real weights.
    pub fn is_mask(self) -> bool {
        matches!(
            self,
            Variant::Gr
                | Variant::GrReconst
                | Variant::Pr
                | Variant::PrSplitDl
                | Variant::FedPmUncompressed
        )
    }

    pub fn is_private(self) -> bool {
        matches!(self, Variant::Pr | Variant::PrSplitDl)
    }

    pub fn is_cfl(self) -> bool {
        matches!(self, Variant::CflSign | Variant::CflQsgd)
    }

    /// Sends MRC indices (as opposed to raw 32-bit values).
    pub fn uses_mrc(self) -> bool {
        !matches!(self, Variant::FedAvgBaseline | Variant::FedPmUncompressed)
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.to_ascii_lowercase().replace(['-', '_', ' '], "");
        let v = match key.as_str() {
            "gr" | "grfixed" => Variant::Gr,
            "grreconst" | "grreconstfixed" => Variant::GrReconst,
            "pr" | "prfixed" => Variant::Pr,
            "prsplitdl" | "prfixedsplitdl" | "splitdl" => Variant::PrSplitDl,
            "cflsign" | "sign" => Variant::CflSign,
            "cflqsgd" | "qsgd" => Variant::CflQsgd,
            "fedavg" | "fedavgbaseline" => Variant::FedAvgBaseline,
            "fedpm" | "fedpmuncompressed" => Variant::FedPmUncompressed,
            _ => return Err(Error::Config(format!("unknown variant `{s}`"))),
        };
        Ok(v)
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Weight of the global-model estimate in the uplink prior
/// `lambda * theta_hat + (1 - lambda) * previous posterior estimate`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum LambdaMixing {
    Fixed(f64),
    /// Chosen per client and round from [`LAMBDA_GRID`]; costs 32 uplink bits.
    Auto,
}

pub const LAMBDA_GRID: [f64; 5] = [0.0, 0.25, 0.5, 0.75, 1.0];

impl FromStr for LambdaMixing {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s.trim().eq_ignore_ascii_case("auto") {
            return Ok(Self::Auto);
        }
        let v: f64 = s.trim().parse().map_err(|_| {
            Error::Config(format!(
                "lambda must be a number in [0,1] or `auto`, got `{s}`"
            ))
        })?;
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::Config(format!("lambda {v} outside [0,1]")));
        }
        Ok(Self::Fixed(v))
    }
}

impl std::fmt::Display for LambdaMixing {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Fixed(v) => write!(f, "{v}"),
            Self::Auto => f.write_str("auto"),
        }
    }
}

/// Every protocol hyperparameter of one run.
#[derive(Clone, Debug, PartialEq)]
pub struct RoundConfig {
    pub variant: Variant,
    pub n_clients: usize,
    pub tau: usize,
    pub candidates: usize,
    pub masks_ul: usize,
    /// `None` means `n_clients * masks_ul`.
    pub masks_dl: Option<usize>,
    pub block_strategy: BlockStrategy,
    pub block_size: usize,
    /// `None` means `ln candidates`.
    pub target_kl: Option<f64>,
    pub max_block: usize,
    pub deviation_factor: f64,
    pub lambda: LambdaMixing,
    /// Federator step for the gradient variants; `None` picks 0.005 for
    /// sign compression and the local learning rate otherwise.
    pub eta_s: Option<f64>,
    /// Levels for the `s`-level quantizer; `None` means `ceil(sqrt(2 d))`.
    pub qsgd_levels: Option<u32>,
    pub clamp: f64,
    pub batch_size: usize,
    pub mask_lr: f64,
    pub local_lr: f64,
    pub optimizer: OptimizerKind,
    pub ste: SteMode,
    pub eval_masks: usize,
}

impl Default for RoundConfig {
    fn default() -> Self {
        Self {
            variant: Variant::Gr,
            n_clients: 10,
            tau: 10,
            candidates: 256,
            masks_ul: 1,
            masks_dl: None,
            block_strategy: BlockStrategy::Fixed,
            block_size: 256,
            target_kl: None,
            max_block: 1024,
            deviation_factor: 2.0,
            lambda: LambdaMixing::Fixed(1.0),
            eta_s: None,
            qsgd_levels: None,
            clamp: DEFAULT_CLAMP,
            batch_size: 128,
            mask_lr: 0.1,
            local_lr: 0.1,
            optimizer: OptimizerKind::Adam,
            ste: SteMode::Identity,
            eval_masks: 4,
        }
    }
}

impl RoundConfig {
    pub fn masks_dl(&self) -> usize {
        self.masks_dl.unwrap_or(self.n_clients * self.masks_ul)
    }

    pub fn target_kl(&self) -> f64 {
        self.target_kl
            .unwrap_or_else(|| (self.candidates as f64).ln())
    }

    pub fn eta_s(&self) -> f64 {
        self.eta_s.unwrap_or(match self.variant {
            Variant::CflSign => 0.005,
            _ => self.local_lr,
        })
    }

    pub fn qsgd_levels(&self, d: usize) -> u32 {
        self.qsgd_levels
            .unwrap_or_else(|| ((2.0 * d as f64).sqrt().ceil() as u32).max(1))
    }

    pub fn allocation_spec(&self) -> AllocationSpec {
        AllocationSpec {
            block_size: self.block_size,
            target_kl: self.target_kl(),
            max_block: self.max_block,
            deviation_factor: self.deviation_factor,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.n_clients == 0 {
            return fail("n_clients must be positive".into());
        }
        if !self.candidates.is_power_of_two() {
            return fail(format!(
                "candidates must be a power of two, got {}",
                self.candidates
            ));
        }
        if self.variant.uses_mrc() && (self.masks_ul == 0 || self.masks_dl() == 0) {
            return fail("mask counts must be positive".into());
        }
        if self.block_size == 0 || self.max_block == 0 {
            return fail("block sizes must be positive".into());
        }
        if !(self.deviation_factor > 1.0) {
            return fail("deviation_factor must exceed 1".into());
        }
        if !(0.0..0.5).contains(&self.clamp) {
            return fail("clamp must lie in [0, 0.5)".into());
        }
        if let Some(t) = self.target_kl {
            if !(t > 0.0) {
                return fail("target_kl must be positive".into());
            }
        }
        if self.lambda != LambdaMixing::Fixed(1.0) && !self.variant.is_private() {
            return fail(format!(
                "prior mixing is only supported by private-randomness variants, not {}",
                self.variant
            ));
        }
        if self.batch_size == 0 || !(self.local_lr > 0.0) || !(self.mask_lr > 0.0) {
            return fail("batch size and learning rates must be positive".into());
        }
        if self.qsgd_levels == Some(0) {
            return fail("qsgd_levels must be positive".into());
        }
        Ok(())
    }
}
