//! Embedded optimal control of a bi-modal parallel hybrid electric vehicle.
//!
//! The switched (two-mode) power management problem is relaxed by
//! embedding: the binary mode signal becomes a fraction `v` in `[0, 1]` and
//! the vector field becomes the convex combination of the two mode fields.
//! The relaxed problem is transcribed by direct collocation, solved by SQP
//! inside a receding-horizon loop, and mapped back to a realizable mode
//! schedule by projection or pulse-width averaging.
//!
//! All numerical code is generic over a [`Real`] scalar. The aliases at the
//! crate root fix it to `f64`.

pub mod cost;
pub mod cycles;
pub mod linalg;
pub mod embedding;
pub mod model;
pub mod nmpc;
pub mod params;
pub mod plant;
pub mod scalar;
pub mod solver;
pub mod table;
pub mod toy;
pub mod transcription;

pub use scalar::{Dual, Eval, Real};

pub type VehicleParams = params::VehicleParams<f64>;
pub type CostWeights = cost::CostWeights<f64>;
pub type VehicleState = model::VehicleState<f64>;
pub type ControlVector = model::ControlVector<f64>;
pub type PowerFlows = model::PowerFlows<f64>;
pub type EmbeddedControl = embedding::EmbeddedControl<f64>;
pub type ModeSchedule = embedding::ModeSchedule<f64>;
pub type DriveCycle = cycles::DriveCycle<f64>;
pub type Mesh = transcription::Mesh<f64>;
pub type HevSystem = transcription::HevSystem<f64>;
pub type SolverConfig = solver::SolverConfig<f64>;
pub type SolverResult = solver::SolverResult<f64>;
pub type NmpcConfig = nmpc::NmpcConfig<f64>;
pub type RunConfig = nmpc::RunConfig<f64>;
pub type TrajectoryLog = nmpc::TrajectoryLog<f64>;

pub use model::{Mode, SignRule};
pub use params::ParameterFile;
