use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Reproducible random stream for one replication: ChaCha8 keyed by the
/// master seed, with the replication number as the stream id, so streams
/// never overlap and do not depend on scheduling.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct RngStream {
    pub seed: u64,
    pub stream: u64,
}

impl RngStream {
    pub fn new(seed: u64, stream: u64) -> Self {
        RngStream { seed, stream }
    }

    pub fn rng(&self) -> ChaCha8Rng {
        let mut r = ChaCha8Rng::seed_from_u64(self.seed);
        r.set_stream(self.stream);
        r
    }
}
