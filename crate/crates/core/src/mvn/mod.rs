//! Multivariate normal probability kernels.
//!
//! Deterministic box probabilities for dimensions up to six, and a randomized
//! QMC estimator for the full joint distribution of up to about a thousand
//! statistics.

mod boxprob;
pub mod normal;
mod qmc;
pub(crate) mod quad;

pub use boxprob::{
    box2, box2_exceedance, box_k, repair_correlation, BoxProblem, MAX_BOX_DIM, PSD_TOLERANCE,
};
pub use normal::{density, phi, phi_inv, phi_inv_upper, phi_upper, two_sided_tail};
pub use qmc::{box_mc, McEstimate, QmcBox, MIN_SAMPLES, RANDOMIZATIONS};

#[cfg(test)]
pub(crate) use boxprob::{exceedance_with_points, recursive_exceedance};

#[cfg(test)]
mod tests;
