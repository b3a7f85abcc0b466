//! Parameter-averaged Riccati feedback laws for a finite-difference
//! parabolic LQ tracking problem with an affinely parameterized uncertain
//! diffusion coefficient.
//!
//! The numerical core is generic over [`Real`] (`f32` or `f64`); the
//! aliases at the crate root fix double precision, which is what the
//! studies and the command-line driver use.

pub mod averaging;
pub mod cache;
pub mod closed_loop;
pub mod config;
pub mod error;
pub mod experiment;
pub mod linalg;
pub mod oracle;
pub mod qmc;
pub mod scalar;
pub mod riccati;
pub mod spatial;

pub use averaging::{average_feedback, feedback_distance, CubatureRule, Qoi, RateMethod};
pub use closed_loop::{simulate, Trajectory};
pub use config::ExperimentConfig;
pub use error::{Error, Result};
pub use riccati::{FeedbackLaw, RiccatiTrajectory, TimeGrid};
pub use scalar::Real;
pub use spatial::{
    assemble_family, forcing_r, DiffusionField, OperatorFamily, ProblemData, Scenario,
    SpatialGrid,
};

pub type OperatorFamilyF64 = OperatorFamily<f64>;
pub type ProblemDataF64 = ProblemData<f64>;
pub type FeedbackLawF64 = FeedbackLaw<f64>;
pub type RiccatiTrajectoryF64 = RiccatiTrajectory<f64>;
pub type TrajectoryF64 = Trajectory<f64>;
