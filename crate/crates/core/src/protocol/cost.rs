//! Closed-form communication cost of one round, without training.

use num_rational::Ratio;

use crate::error::{Error, Result};
use crate::mrc::{index_bits, BlockPartition, BlockStrategy};
use crate::protocol::config::{LambdaMixing, RoundConfig, Variant};
use crate::protocol::ledger::{ClientTraffic, CommLedger, LedgerReport};

/// Parameter count used by the cost table unless overridden: 240 blocks of
/// 256 parameters.
pub const DEFAULT_COST_DIM: usize = 61_440;

/// Bits per client for one round, as the simulator would record them.
pub fn round_traffic(config: &RoundConfig, d: usize) -> Result<Vec<ClientTraffic>> {
    config.validate()?;
    let n = config.n_clients;
    let raw = 32 * d as u64;
    if matches!(
        config.variant,
        Variant::FedAvgBaseline | Variant::FedPmUncompressed
    ) {
        return Ok(vec![
            ClientTraffic {
                uplink: raw,
                downlink_private: 0,
                downlink_shared: raw,
            };
            n
        ]);
    }
    if config.block_strategy != BlockStrategy::Fixed {
        return Err(Error::Config(
            "adaptive block allocation depends on the data; run the simulator instead".into(),
        ));
    }
    if config.variant == Variant::CflQsgd {
        return Err(Error::Config(
            "quantizer side information depends on the gradients; run the simulator instead".into(),
        ));
    }
    let partition = BlockPartition::fixed(d, config.block_size)?;
    let n_blocks = partition.num_blocks() as u64;
    let per_block = index_bits(config.candidates);
    let ul = config.masks_ul as u64;
    let dl = config.masks_dl() as u64;
    let up_indices = ul * n_blocks * per_block;
    let lambda_bits = if config.lambda == LambdaMixing::Auto {
        32
    } else {
        0
    };

    let traffic = (0..n)
        .map(|i| match config.variant {
            Variant::Gr => ClientTraffic {
                uplink: up_indices,
                downlink_private: 0,
                downlink_shared: (n as u64 - 1) * up_indices,
            },
            Variant::CflSign => ClientTraffic {
                uplink: up_indices + 32,
                downlink_private: 0,
                downlink_shared: (n as u64 - 1) * up_indices,
            },
            Variant::GrReconst => ClientTraffic {
                uplink: up_indices,
                downlink_private: 0,
                downlink_shared: dl * n_blocks * per_block,
            },
            Variant::Pr => ClientTraffic {
                uplink: up_indices + lambda_bits,
                downlink_private: dl * n_blocks * per_block,
                downlink_shared: 0,
            },
            Variant::PrSplitDl => ClientTraffic {
                uplink: up_indices + lambda_bits,
                downlink_private: dl
                    * split_block_count(partition.num_blocks(), n, i) as u64
                    * per_block,
                downlink_shared: 0,
            },
            Variant::CflQsgd | Variant::FedAvgBaseline | Variant::FedPmUncompressed => {
                unreachable!()
            }
        })
        .collect();
    Ok(traffic)
}

/// Blocks `j` with `j % n == client`.
pub fn split_block_count(n_blocks: usize, n_clients: usize, client: usize) -> usize {
    (client..n_blocks).step_by(n_clients).count()
}

/// One-off traffic before round 0: private-randomness variants ship the
/// initial model uncompressed.
pub fn setup_traffic(config: &RoundConfig, d: usize) -> Vec<ClientTraffic> {
    let bits = if config.variant.is_private() {
        32 * d as u64
    } else {
        0
    };
    vec![
        ClientTraffic {
            uplink: 0,
            downlink_private: 0,
            downlink_shared: bits,
        };
        config.n_clients
    ]
}

/// Ledger holding `rounds` copies of the analytic round.
pub fn analytic_ledger(config: &RoundConfig, d: usize, rounds: usize) -> Result<CommLedger> {
    let per_round = round_traffic(config, d)?;
    let mut ledger = CommLedger::new(d, config.n_clients);
    for (i, s) in setup_traffic(config, d).iter().enumerate() {
        ledger.add_setup_downlink(i, s.downlink_shared, true);
    }
    for _ in 0..rounds {
        ledger.begin_round();
        for (i, c) in per_round.iter().enumerate() {
            ledger.add_uplink(i, c.uplink);
            ledger.add_downlink_private(i, c.downlink_private);
            ledger.add_downlink_shared(i, c.downlink_shared);
        }
    }
    Ok(ledger)
}

pub fn analytic_report(config: &RoundConfig, d: usize) -> Result<LedgerReport> {
    Ok(analytic_ledger(config, d, 1)?.report())
}

/// Rounds a positive rational to `digits` significant figures, halves
/// rounded up, and renders it in plain decimal notation.
pub fn round_sig(x: Ratio<u128>, digits: u32) -> String {
    let (num, den) = (*x.numer(), *x.denom());
    if num == 0 || digits == 0 {
        return "0".into();
    }
    // exponent e with 10^e <= x < 10^(e+1)
    let mut e: i32 = 0;
    while num >= den * 10u128.pow((e + 1) as u32) {
        e += 1;
    }
    if num < den {
        while num * 10u128.pow((-e) as u32) < den {
            e -= 1;
        }
    }
    let shift = digits as i32 - 1 - e;
    let (sn, sd) = if shift >= 0 {
        (num * 10u128.pow(shift as u32), den)
    } else {
        (num, den * 10u128.pow((-shift) as u32))
    };
    let mut mantissa = (2 * sn + sd) / (2 * sd);
    let mut exp = -shift;
    if mantissa == 10u128.pow(digits) {
        mantissa /= 10;
        exp += 1;
    }
    if exp >= 0 {
        (mantissa * 10u128.pow(exp as u32)).to_string()
    } else {
        let digits_str = mantissa.to_string();
        let frac = (-exp) as usize;
        if digits_str.len() > frac {
            let (int, f) = digits_str.split_at(digits_str.len() - frac);
            format!("{int}.{f}")
        } else {
            format!("0.{}{}", "0".repeat(frac - digits_str.len()), digits_str)
        }
    }
}

/// Configuration of one cost-table row with the reference defaults
/// (`n = 10`, `N = 256`, block 256, one uplink mask, ten downlink masks).
pub fn table_config(variant: Variant) -> RoundConfig {
    RoundConfig {
        variant,
        ..RoundConfig::default()
    }
}

/// Variants shown by default in the cost table.
pub const TABLE_VARIANTS: [Variant; 7] = [
    Variant::Gr,
    Variant::GrReconst,
    Variant::Pr,
    Variant::PrSplitDl,
    Variant::CflSign,
    Variant::FedPmUncompressed,
    Variant::FedAvgBaseline,
];

/// Plain-text table: variant, total, broadcast, uplink, downlink (two
/// significant figures) followed by the exact values.
pub fn render_table(rows: &[(String, LedgerReport)]) -> String {
    let mut out = format!(
        "{:<12} {:>8} {:>9} {:>8} {:>9}   exact (total | broadcast | uplink | downlink)\n",
        "variant", "bpp", "bpp(BC)", "uplink", "downlink"
    );
    for (name, r) in rows {
        out.push_str(&format!(
            "{:<12} {:>8} {:>9} {:>8} {:>9}   {} | {} | {} | {}\n",
            name,
            round_sig(r.bpp_total, 2),
            round_sig(r.bpp_broadcast, 2),
            round_sig(r.bpp_uplink, 2),
            round_sig(r.bpp_downlink, 2),
            r.bpp_total,
            r.bpp_broadcast,
            r.bpp_uplink,
            r.bpp_downlink
        ));
    }
    out
}
