use num_rational::Ratio;

/// Bits exchanged with one client in one round.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ClientTraffic {
    pub uplink: u64,
    /// Downlink content addressed to this client only.
    pub downlink_private: u64,
    /// Downlink content every client receives identically, so a broadcast
    /// channel carries it once.
    pub downlink_shared: u64,
}

impl ClientTraffic {
    pub fn downlink(&self) -> u64 {
        self.downlink_private + self.downlink_shared
    }
}

/// Per-round, per-client bit counters.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CommLedger {
    dim: usize,
    n_clients: usize,
    rounds: Vec<Vec<ClientTraffic>>,
    setup: Vec<ClientTraffic>,
}

/// Rates in bits per parameter, per client and per round.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LedgerReport {
    pub bpp_total: Ratio<u128>,
    pub bpp_broadcast: Ratio<u128>,
    pub bpp_uplink: Ratio<u128>,
    pub bpp_downlink: Ratio<u128>,
    /// One-off traffic before the first round, amortized over the rounds.
    pub bpp_setup: Ratio<u128>,
}

pub fn ratio_to_f64(r: Ratio<u128>) -> f64 {
    *r.numer() as f64 / *r.denom() as f64
}

impl LedgerReport {
    pub fn as_f64(&self) -> [f64; 4] {
        [
            ratio_to_f64(self.bpp_total),
            ratio_to_f64(self.bpp_broadcast),
            ratio_to_f64(self.bpp_uplink),
            ratio_to_f64(self.bpp_downlink),
        ]
    }
}

impl CommLedger {
    pub fn new(dim: usize, n_clients: usize) -> Self {
        Self {
            dim,
            n_clients,
            rounds: Vec::new(),
            setup: vec![ClientTraffic::default(); n_clients],
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_clients(&self) -> usize {
        self.n_clients
    }

    pub fn num_rounds(&self) -> usize {
        self.rounds.len()
    }

    pub fn begin_round(&mut self) {
        self.rounds
            .push(vec![ClientTraffic::default(); self.n_clients]);
    }

    fn current(&mut self) -> &mut Vec<ClientTraffic> {
        if self.rounds.is_empty() {
            self.begin_round();
        }
        self.rounds.last_mut().expect("round exists")
    }

    pub fn add_uplink(&mut self, client: usize, bits: u64) {
        self.current()[client].uplink += bits;
    }

    pub fn add_downlink_private(&mut self, client: usize, bits: u64) {
        self.current()[client].downlink_private += bits;
    }

    pub fn add_downlink_shared(&mut self, client: usize, bits: u64) {
        self.current()[client].downlink_shared += bits;
    }

    pub fn add_setup_downlink(&mut self, client: usize, bits: u64, shared: bool) {
        let slot = &mut self.setup[client];
        if shared {
            slot.downlink_shared += bits;
        } else {
            slot.downlink_private += bits;
        }
    }

    pub fn round(&self, t: usize) -> &[ClientTraffic] {
        &self.rounds[t]
    }

    pub fn setup(&self) -> &[ClientTraffic] {
        &self.setup
    }

    /// Sum over clients of `(uplink, downlink)` in round `t`.
    pub fn round_totals(&self, t: usize) -> (u64, u64) {
        self.rounds[t]
            .iter()
            .fold((0, 0), |(u, d), c| (u + c.uplink, d + c.downlink()))
    }

    pub fn totals(&self) -> ClientTraffic {
        self.rounds
            .iter()
            .flatten()
            .fold(ClientTraffic::default(), |acc, c| ClientTraffic {
                uplink: acc.uplink + c.uplink,
                downlink_private: acc.downlink_private + c.downlink_private,
                downlink_shared: acc.downlink_shared + c.downlink_shared,
            })
    }

    /// Exact rates. With no recorded rounds (or zero traffic) every rate is 0.
    pub fn report(&self) -> LedgerReport {
        let zero = Ratio::from_integer(0);
        let denom = (self.n_clients * self.dim * self.rounds.len()) as u128;
        if denom == 0 {
            return LedgerReport {
                bpp_total: zero,
                bpp_broadcast: zero,
                bpp_uplink: zero,
                bpp_downlink: zero,
                bpp_setup: zero,
            };
        }
        let t = self.totals();
        let n = self.n_clients as u128;
        let up = Ratio::new(u128::from(t.uplink), denom);
        let down = Ratio::new(u128::from(t.downlink()), denom);
        // a shared message reaches all n clients in one broadcast
        let down_bc = Ratio::new(
            u128::from(t.downlink_private) * n + u128::from(t.downlink_shared),
            denom * n,
        );
        let setup_bits: u128 = self
            .setup
            .iter()
            .map(|c| u128::from(c.uplink) + u128::from(c.downlink()))
            .sum();
        LedgerReport {
            bpp_total: up + down,
            bpp_broadcast: up + down_bc,
            bpp_uplink: up,
            bpp_downlink: down,
            bpp_setup: Ratio::new(setup_bits, denom),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_ledger_reports_zero() {
        let l = CommLedger::new(100, 10);
        assert_eq!(l.report().as_f64(), [0.0; 4]);
        let mut one = CommLedger::new(100, 10);
        one.begin_round();
        assert_eq!(one.report().as_f64(), [0.0; 4]);
    }

    #[test]
    fn fedavg_style_rates() {
        let (d, n) = (1000, 10);
        let mut l = CommLedger::new(d, n);
        for _ in 0..3 {
            l.begin_round();
            for i in 0..n {
                l.add_uplink(i, 32 * d as u64);
                l.add_downlink_shared(i, 32 * d as u64);
            }
        }
        let r = l.report();
        assert_eq!(r.bpp_total, Ratio::from_integer(64));
        assert_eq!(r.bpp_broadcast, Ratio::new(176, 5));
        assert_eq!(r.bpp_uplink, Ratio::from_integer(32));
    }

    #[test]
    fn private_downlink_not_discounted() {
        let mut l = CommLedger::new(10, 2);
        l.begin_round();
        l.add_uplink(0, 5);
        l.add_downlink_private(0, 20);
        l.add_downlink_private(1, 20);
        let r = l.report();
        assert_eq!(r.bpp_total, r.bpp_broadcast);
        assert_eq!(r.bpp_downlink, Ratio::new(2, 1));
        l.add_setup_downlink(0, 40, false);
        assert_eq!(l.report().bpp_setup, Ratio::new(2, 1));
        assert_eq!(l.round_totals(0), (5, 40));
    }
}
