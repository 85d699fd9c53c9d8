//! Named, seedable random streams.
//!
//! Every consumer of randomness draws from a stream identified by
//! (master seed, purpose label, id), so adding a consumer never shifts the
//! draws of another one and every run replays bit-for-bit.

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

use crate::crypto::Digest;

pub type StreamRng = ChaCha12Rng;

pub fn stream(master_seed: u64, label: &str, id: u64) -> StreamRng {
    let d = Digest::of_parts(&[
        b"parchain/stream/v1",
        &master_seed.to_be_bytes(),
        label.as_bytes(),
        &id.to_be_bytes(),
    ]);
    StreamRng::from_seed(d.0)
}

/// Stream keyed by an arbitrary digest, e.g. a transaction id.
pub fn stream_for(master_seed: u64, label: &str, key: &Digest, id: u64) -> StreamRng {
    let d = Digest::of_parts(&[
        b"parchain/stream/v1",
        &master_seed.to_be_bytes(),
        label.as_bytes(),
        key.as_bytes(),
        &id.to_be_bytes(),
    ]);
    StreamRng::from_seed(d.0)
}
