//! Ground truth for the analytic methods.
//!
//! [`simulate_path`] draws exact sample paths of the network, and
//! [`simulate_ensemble`] aggregates many of them into empirical moments.
//! [`exact_transient_moments`] solves the forward Kolmogorov equations of
//! the chain truncated to a box, which gives exact moments for small models.

mod ensemble;
mod kolmogorov;
mod path;
mod rng;

pub use ensemble::{simulate_ensemble, EnsembleStats, MomentAccumulator, BLOCK_SIZE};
pub use kolmogorov::{exact_transient_moments, transient_distribution, Lattice, TransientDistribution, MAX_STATES};
pub use path::simulate_path;
pub use rng::RngStream;
