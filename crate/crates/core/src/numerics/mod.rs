//! Dense linear algebra, special functions and seeded random streams.

mod linalg;
mod rng;
mod special;

pub use linalg::{logdet_spd, spd_inverse, Matrix};
pub(crate) use linalg::cholesky_psd;
pub use rng::{sample_normal, RngStream};
pub use special::{chi_square_survival, gamma_q, ln_gamma};
