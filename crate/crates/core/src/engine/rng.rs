use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

pub fn seeded_rng(seed: u64) -> SimRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Per-client stream: same key as the run, separate ChaCha stream per client.
pub fn client_seed(run_seed: u64, client: u32) -> SimRng {
    let mut rng = ChaCha8Rng::seed_from_u64(run_seed);
    rng.set_stream(u64::from(client) + 1);
    rng
}
