//! Mean-field variational inference for Bayesian kernel machine regression
//! on cross-sectional data.
//!
//! The model is
//!
//! ```text
//! y ~ N(h + X beta, sigma^2 I),   h ~ N(0, tau K)
//! beta ~ N(mu, Sigma),  sigma^2 ~ Scale-Inv-chi^2(nu_sigma, sigma0^2),
//! tau ~ Scale-Inv-chi^2(nu_tau, tau0)
//! ```
//!
//! with `K` the repaired quadratic kernel of the exposure profiles. Flat
//! priors on `beta`, `sigma^2` and `tau` are also supported. The crate
//! provides the kernel construction ([`kernel`]), the coordinate-ascent
//! fit ([`engine`]), OLS prior elicitation ([`elicitation`]), the GLS
//! interval correction ([`gls`]) and a coverage simulation harness
//! ([`sim`]).

pub mod elicitation;
pub mod engine;
pub mod error;
pub mod gls;
pub mod kernel;
mod linalg;
pub mod model;
pub(crate) mod serde_util;
pub mod sim;

/// Version of this library.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub use engine::{fit, FitConfig, FitResult, InitStrategy};
pub use error::{Error, Result};
pub use kernel::{build_kernel, ExposureMatrix, KernelMatrix};
pub use model::{Dataset, InformativePrior, Interval, PriorSpec, VariationalPosterior};
