//! Calibration of a lumped-parameter building energy model against metered
//! data, organized around one question: how does the temporal resolution of
//! the measurements change what the calibration can recover?
//!
//! The pieces, bottom up:
//!
//! - [`series`]: metered energy series, aggregation across resolutions, gap
//!   infill, measurement/simulation alignment
//! - [`weather`]: weather series, solar geometry and the diffuse/direct split
//! - [`profiles`]: k-medoids mining of typical daily profiles and the
//!   schedule sets the simulator consumes
//! - [`metrics`]: CVRMSE / NMBE goodness-of-fit and batch distance scores
//! - [`sampler`]: the parameter space, Latin hypercube seeding, Gaussian
//!   mixture fitting and truncated resampling
//! - [`simulator`]: the single-zone RC model behind the `Simulator` trait
//! - [`synth`]: deterministic synthetic-site generator (weather, occupant
//!   behavior, noisy metered channels) for desk-scale experiments
//! - [`engine`]: the iterative calibration loop and cross-resolution
//!   evaluation
//! - [`cli`]: config file handling and the `prepare`/`calibrate`/`synth`/
//!   `report` commands

pub mod cli;
pub mod engine;
pub mod error;
pub mod metrics;
pub mod profiles;
pub mod sampler;
pub mod series;
pub mod simulator;
pub mod synth;
pub mod weather;

mod util;

pub use error::{Error, Result};

/// Every code block in the guide compiles and runs with the test suite.
#[cfg(doctest)]
mod book {
    macro_rules! chapter {
        ($name:ident, $path:literal) => {
            #[doc = include_str!($path)]
            mod $name {}
        };
    }
    chapter!(introduction, "../../../book/src/introduction.md");
    chapter!(series, "../../../book/src/series.md");
    chapter!(weather, "../../../book/src/weather.md");
    chapter!(profiles, "../../../book/src/profiles.md");
    chapter!(metrics, "../../../book/src/metrics.md");
    chapter!(sampler, "../../../book/src/sampler.md");
    chapter!(simulator, "../../../book/src/simulator.md");
    chapter!(engine, "../../../book/src/engine.md");
    chapter!(synthetic, "../../../book/src/synthetic.md");
    chapter!(cli, "../../../book/src/cli.md");
}
