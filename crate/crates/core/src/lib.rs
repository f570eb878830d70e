//! Stochastic gradient Langevin dynamics for objectives with discontinuous
//! stochastic gradients, with the quantile, VaR/CVaR and portfolio CVaR
//! oracles, their data generators, and reference estimators.
//!
//! ```
//! use sgld_core::distributions::{DistributionSpec, ScalarStreamFactory};
//! use sgld_core::objectives::VarCvarObjective;
//! use sgld_core::sgld::{run_seeded_chain, terminal_only_stride, ParameterPoint, SgldConfig};
//!
//! let oracle = VarCvarObjective::new(0.95, 1e-8).unwrap();
//! let data = ScalarStreamFactory::iid(DistributionSpec::normal(0.0, 1.0).unwrap());
//! let config = SgldConfig::new(1e-3, 1e8, 20_000, ParameterPoint::scalar(0.0))
//!     .unwrap()
//!     .with_seed(7);
//! let trace = run_seeded_chain(&config, &oracle, &data, terminal_only_stride(&config)).unwrap();
//! assert!((trace.terminal[0] - 1.645).abs() < 0.3);
//! ```

pub mod distributions;
pub mod error;
pub mod metrics;
pub mod objectives;
mod quadrature;
pub mod reference;
pub mod rng;
pub mod sgld;

pub use error::{Error, Result};
