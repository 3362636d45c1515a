//! Special functions, conjugate solvers and seeded sampling.

pub mod conjugate;
pub mod rng;
pub mod sampling;
pub mod special;

pub use conjugate::{
    beta_moments, gamma_moments, solve_beta_from_moments, solve_beta_with, solve_gamma_from_moments,
    solve_gamma_with, ConjugateParams, PredictorMoments, SolverOptions,
};
pub use rng::RngStream;
pub use sampling::{Distribution, Draw};
pub use special::{digamma, ln_gamma, tetragamma, trigamma};
