//! Minimal random coding over product-Bernoulli blocks.
//!
//! The encoder draws `N` candidates from the prior using a stream the decoder
//! can regenerate, weights them by the likelihood ratio of posterior to prior
//! and sends the index of one of them. The decoder regenerates the candidate
//! from the index alone.

pub mod blocks;
pub mod codec;
pub mod marginal;

pub use blocks::{
    allocate_blocks, needs_reallocation, AllocationSpec, BlockPartition, BlockStrategy,
};
pub use codec::{
    index_bits, mrc_decode_block, mrc_encode_block, mrc_reconstruct, mrc_transmit, sample_counts,
    sample_mean, EncodedUpdate, TransmitKeys,
};
pub use marginal::{
    abs_diff, exact_marginal, exact_marginal_rational, prop_bound, prop_bound_rational,
};
