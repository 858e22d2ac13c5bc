//! Seeded sampling and the small amount of dense arithmetic the lab needs.

mod linalg;
mod rng;
mod sampling;

pub use linalg::{dot, mean, sample_std, sq_dist, Matrix};
pub use rng::{derive_seed, stream_id, RngStream};
pub(crate) use sampling::top2;
pub use sampling::{
    categorical_sample, dirichlet_sample, gamma_sample, random_permutation, shuffle, standard_normal, Simplex,
    SIMPLEX_TOL,
};
