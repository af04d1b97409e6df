use std::fmt::Write as _;

/// One row of the per-round metrics file.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRow {
    pub round: usize,
    pub accuracy: f64,
    pub loss: f64,
    pub uplink_bits: u64,
    pub downlink_bits: u64,
    /// Mean over clients of the uplink divergence, in nats.
    pub kl_ul_mean: f64,
    /// Mean over clients of the downlink divergence, in nats.
    pub kl_dl_mean: f64,
}

pub const CSV_HEADER: &str = "round,accuracy,loss,uplink_bits,downlink_bits,kl_ul_mean,kl_dl_mean";

impl MetricsRow {
    pub fn to_csv(&self) -> String {
        format!(
            "{},{:.6},{:.6},{},{},{:.6},{:.6}",
            self.round,
            self.accuracy,
            self.loss,
            self.uplink_bits,
            self.downlink_bits,
            self.kl_ul_mean,
            self.kl_dl_mean
        )
    }
}

pub fn render_csv(rows: &[MetricsRow]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(out, "{}", r.to_csv());
    }
    out
}
