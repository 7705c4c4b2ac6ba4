//! Multi-element Polynomial-Chaos-Kriging surrogates and DRAM calibration.
//!
//! The crate builds piecewise surrogate models of expensive forward models:
//! the input domain is cut into regular blocks, each block gets its own
//! experimental design (grown with the Monte-Carlo intersite criterion), a
//! sparse Legendre chaos expansion selected by least-angle regression and BIC,
//! and a universal Kriging model that uses that expansion as its trend. The
//! assembled surrogate is cheap enough to sit inside an adaptive Metropolis
//! sampler with delayed rejection.
//!
//! Module map:
//!
//! * [`design`]: domains, block partitions, standardized coordinates
//! * [`sampling`]: experimental designs and MIPT enrichment
//! * [`pce`]: Legendre bases, hyperbolic truncation, LAR + BIC, Sobol indices
//! * [`kriging`]: Gaussian correlation, ML fit by genetic algorithm, BLUE/BLUP
//! * [`multielement`]: piecewise assembly and refinement
//! * [`metrics`]: validation-set error metrics
//! * [`dram`]: DRAM sampler, KDE modes and highest-density regions
//! * [`models`]: Drop-Wave benchmark and the TDS hydrogen-diffusion solver
//! * [`io`]: CSV and model-file persistence

pub mod design;
pub mod dram;
pub mod error;
pub mod io;
pub mod kriging;
pub mod metrics;
pub mod models;
pub mod multielement;
pub mod pce;
pub mod sampling;
pub mod rng;

pub use design::{Bounds, Domain, Partition};
pub use error::{Error, Result};
pub use kriging::{KrigingConfig, PckModel};
pub use models::ForwardModel;
pub use multielement::{BuildConfig, MultielementPck};
pub use pce::SparsePce;
pub use sampling::ExperimentalDesign;
