//! C ABI over the simulator.
//!
//! Every function returns an [`MrcflStatus`]. On failure a message is kept
//! per thread and can be read with [`mrcfl_last_error`]. Simulations are
//! opaque handles created by [`mrcfl_simulation_new`] and released with
//! [`mrcfl_simulation_free`]. Panics never cross the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use mrcfl::bernoulli::kl_bernoulli;
use mrcfl::experiment::ExperimentConfig;
use mrcfl::mrc::{exact_marginal, mrc_decode_block, mrc_encode_block};
use mrcfl::protocol::{analytic_report, ratio_to_f64, LedgerReport, Simulation, Variant};
use mrcfl::randomness::{derive_stream, Party, Role, StreamKey};
use mrcfl::Error;

/// Result code of every call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MrcflStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    ConfigError = 3,
    RuntimeError = 4,
    Panic = 5,
}

/// Metrics of one simulated round.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct MrcflRoundMetrics {
    pub round: u64,
    /// NaN when the round was not evaluated.
    pub accuracy: f64,
    pub loss: f64,
    pub uplink_bits: u64,
    pub downlink_bits: u64,
    pub kl_ul_mean: f64,
    pub kl_dl_mean: f64,
}

/// Bits per parameter, per client and per round.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct MrcflCostReport {
    pub bpp_total: f64,
    pub bpp_broadcast: f64,
    pub bpp_uplink: f64,
    pub bpp_downlink: f64,
    pub bpp_setup: f64,
}

/// Opaque simulation handle.
pub struct MrcflSimulation {
    sim: Simulation,
    rounds: usize,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let text = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(text).ok());
}

fn status_of(e: &Error) -> MrcflStatus {
    match e {
        Error::Config(_) | Error::Io { .. } | Error::Idx { .. } => MrcflStatus::ConfigError,
        Error::InvalidArgument(_)
        | Error::LengthMismatch { .. }
        | Error::IndexOutOfRange { .. } => MrcflStatus::InvalidArgument,
        _ => MrcflStatus::RuntimeError,
    }
}

/// Runs `f`, translating errors and panics into status codes.
fn guard(f: impl FnOnce() -> Result<(), (MrcflStatus, String)>) -> MrcflStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => MrcflStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(format!("internal panic: {msg}"));
            MrcflStatus::Panic
        }
    }
}

fn lib_err(e: Error) -> (MrcflStatus, String) {
    (status_of(&e), e.to_string())
}

fn null(what: &str) -> (MrcflStatus, String) {
    (MrcflStatus::NullPointer, format!("{what} is null"))
}

fn invalid(msg: impl Into<String>) -> (MrcflStatus, String) {
    (MrcflStatus::InvalidArgument, msg.into())
}

/// # Safety
/// `ptr` must be null or point to `len` readable values.
unsafe fn slice<'a, T>(
    ptr: *const T,
    len: usize,
    what: &str,
) -> Result<&'a [T], (MrcflStatus, String)> {
    if len == 0 {
        return Ok(&[]);
    }
    if ptr.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(ptr, len))
}

/// # Safety
/// `ptr` must be null or a NUL-terminated string.
unsafe fn text<'a>(ptr: *const c_char, what: &str) -> Result<&'a str, (MrcflStatus, String)> {
    if ptr.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(ptr)
        .to_str()
        .map_err(|_| invalid(format!("{what} is not valid UTF-8")))
}

fn cost_of(r: &LedgerReport) -> MrcflCostReport {
    MrcflCostReport {
        bpp_total: ratio_to_f64(r.bpp_total),
        bpp_broadcast: ratio_to_f64(r.bpp_broadcast),
        bpp_uplink: ratio_to_f64(r.bpp_uplink),
        bpp_downlink: ratio_to_f64(r.bpp_downlink),
        bpp_setup: ratio_to_f64(r.bpp_setup),
    }
}

fn block_keys(seed: u64, block: u64) -> (StreamKey, StreamKey) {
    (
        StreamKey::new(seed, Party::Global, Role::UplinkCandidates).with_block(block),
        StreamKey::new(seed, Party::Global, Role::IndexDraw).with_block(block),
    )
}

/// Message of the last failed call on this thread, or null. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn mrcfl_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Probability that MRC with `n` candidates decodes a 1 for posterior
/// `Ber(q)` and prior `Ber(p)`.
///
/// # Safety
/// `out` must be null or writable.
#[no_mangle]
pub unsafe extern "C" fn mrcfl_exact_marginal(
    q: f64,
    p: f64,
    n: usize,
    out: *mut f64,
) -> MrcflStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        if !(0.0..=1.0).contains(&q) || !(p > 0.0 && p < 1.0) || n == 0 {
            return Err(invalid("need q in [0,1], p in (0,1) and n > 0"));
        }
        *out = exact_marginal(q, p, n);
        Ok(())
    })
}

/// `KL(Ber(q) || Ber(p))` in nats.
///
/// # Safety
/// `out` must be null or writable.
#[no_mangle]
pub unsafe extern "C" fn mrcfl_kl_bernoulli(q: f64, p: f64, out: *mut f64) -> MrcflStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = kl_bernoulli(q, p).map_err(lib_err)?;
        Ok(())
    })
}

/// Encodes one block of `len` Bernoulli parameters with `n_candidates`
/// candidates drawn from the stream keyed by `(seed, block)`.
///
/// # Safety
/// `posterior` and `prior` must hold `len` values; `out_index` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mrcfl_encode_block(
    posterior: *const f64,
    prior: *const f64,
    len: usize,
    n_candidates: usize,
    seed: u64,
    block: u64,
    out_index: *mut u32,
) -> MrcflStatus {
    guard(|| {
        let q = slice(posterior, len, "posterior")?;
        let p = slice(prior, len, "prior")?;
        if out_index.is_null() {
            return Err(null("out_index"));
        }
        if n_candidates == 0 || n_candidates > u32::MAX as usize {
            return Err(invalid("n_candidates must be in 1..=2^32-1"));
        }
        let (cand_key, idx_key) = block_keys(seed, block);
        let index = mrc_encode_block(
            q,
            p,
            n_candidates,
            &mut derive_stream(&cand_key),
            &mut derive_stream(&idx_key),
        )
        .map_err(lib_err)?;
        *out_index = index as u32;
        Ok(())
    })
}

/// Regenerates candidate `index` of the block keyed by `(seed, block)` and
/// writes its `len` bits (0 or 1) to `out_bits`.
///
/// # Safety
/// `prior` must hold `len` values and `out_bits` must have room for `len` bytes.
#[no_mangle]
pub unsafe extern "C" fn mrcfl_decode_block(
    index: u32,
    prior: *const f64,
    len: usize,
    n_candidates: usize,
    seed: u64,
    block: u64,
    out_bits: *mut u8,
) -> MrcflStatus {
    guard(|| {
        let p = slice(prior, len, "prior")?;
        if out_bits.is_null() && len > 0 {
            return Err(null("out_bits"));
        }
        let (cand_key, _) = block_keys(seed, block);
        let bits = mrc_decode_block(
            index as usize,
            p,
            n_candidates,
            &mut derive_stream(&cand_key),
        )
        .map_err(lib_err)?;
        if len > 0 {
            std::slice::from_raw_parts_mut(out_bits, len).copy_from_slice(bits.as_slice());
        }
        Ok(())
    })
}

/// Creates a simulation from `key = value` configuration text (null or
/// empty for the defaults).
///
/// # Safety
/// `config_text` must be null or NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mrcfl_simulation_new(
    config_text: *const c_char,
    out: *mut *mut MrcflSimulation,
) -> MrcflStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let cfg = if config_text.is_null() {
            ExperimentConfig::default()
        } else {
            ExperimentConfig::parse_str(text(config_text, "config_text")?).map_err(lib_err)?
        };
        cfg.validate().map_err(lib_err)?;
        let sim = Simulation::new(&cfg).map_err(lib_err)?;
        *out = Box::into_raw(Box::new(MrcflSimulation {
            sim,
            rounds: cfg.rounds,
        }));
        Ok(())
    })
}

/// Runs one round. Rounds past the configured count are still executed.
///
/// # Safety
/// `sim` must come from [`mrcfl_simulation_new`]; `out` must be null or writable.
#[no_mangle]
pub unsafe extern "C" fn mrcfl_simulation_step(
    sim: *mut MrcflSimulation,
    out: *mut MrcflRoundMetrics,
) -> MrcflStatus {
    guard(|| {
        let handle = sim.as_mut().ok_or_else(|| null("sim"))?;
        let total = handle.rounds.max(handle.sim.rounds_done() + 1);
        let outcome = handle.sim.step(total).map_err(lib_err)?;
        if let Some(o) = out.as_mut() {
            let m = outcome.metrics;
            *o = MrcflRoundMetrics {
                round: m.round as u64,
                accuracy: m.accuracy,
                loss: m.loss,
                uplink_bits: m.uplink_bits,
                downlink_bits: m.downlink_bits,
                kl_ul_mean: m.kl_ul_mean,
                kl_dl_mean: m.kl_dl_mean,
            };
        }
        Ok(())
    })
}

/// Communication rates accumulated so far.
///
/// # Safety
/// `sim` must come from [`mrcfl_simulation_new`]; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mrcfl_simulation_report(
    sim: *const MrcflSimulation,
    out: *mut MrcflCostReport,
) -> MrcflStatus {
    guard(|| {
        let handle = sim.as_ref().ok_or_else(|| null("sim"))?;
        let o = out.as_mut().ok_or_else(|| null("out"))?;
        *o = cost_of(&handle.sim.ledger().report());
        Ok(())
    })
}

/// Releases a simulation. Null is ignored.
///
/// # Safety
/// `sim` must be null or come from [`mrcfl_simulation_new`], and must not be
/// used afterwards.
#[no_mangle]
pub unsafe extern "C" fn mrcfl_simulation_free(sim: *mut MrcflSimulation) {
    if !sim.is_null() {
        drop(Box::from_raw(sim));
    }
}

/// Analytic per-round cost of `variant` on a `dim`-parameter model, with the
/// remaining settings taken from `config_text` (null for the defaults).
///
/// # Safety
/// Strings must be null or NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mrcfl_cost_report(
    variant: *const c_char,
    config_text: *const c_char,
    dim: usize,
    out: *mut MrcflCostReport,
) -> MrcflStatus {
    guard(|| {
        let o = out.as_mut().ok_or_else(|| null("out"))?;
        let v: Variant = text(variant, "variant")?.parse().map_err(lib_err)?;
        let mut cfg = if config_text.is_null() {
            ExperimentConfig::default()
        } else {
            ExperimentConfig::parse_str(text(config_text, "config_text")?).map_err(lib_err)?
        };
        cfg.round.variant = v;
        if dim == 0 {
            return Err(invalid("dim must be positive"));
        }
        *o = cost_of(&analytic_report(&cfg.round, dim).map_err(lib_err)?);
        Ok(())
    })
}
