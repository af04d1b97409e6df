//! Federated protocol variants, their bit accounting and the round simulator.

pub mod config;
pub mod cost;
pub mod ledger;
pub mod metrics;
pub mod prior;
pub mod sim;

pub use config::{LambdaMixing, RoundConfig, Variant, LAMBDA_GRID};
pub use cost::{
    analytic_ledger, analytic_report, render_table, round_sig, round_traffic, setup_traffic,
    split_block_count, table_config, DEFAULT_COST_DIM, TABLE_VARIANTS,
};
pub use ledger::{ratio_to_f64, ClientTraffic, CommLedger, LedgerReport};
pub use metrics::{render_csv, MetricsRow, CSV_HEADER};
pub use prior::{mix_prior, optimize_prior_mixing};
pub use sim::{Direction, RoundOutcome, Simulation, Transmission};
