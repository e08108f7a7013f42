//! Simulation of a remote non-destructive parity measurement between two
//! qubits, each dispersively coupled to its own leaky resonator, with the
//! resonator outputs combined on a beam splitter and photodetected.
//!
//! The crate provides:
//! * truncated Fock-space states and operators ([`fock`]);
//! * closed-form conditional and unconditioned solutions ([`analytic`]);
//! * Lindblad master-equation integration ([`master_eq`]);
//! * photodetection trajectories, pure and mixed ([`trajectory`]);
//! * the measurement-and-feedback protocol ([`protocol`]);
//! * observables and ensemble statistics ([`metrics`]).
//!
//! Everything numeric is generic over the real type `T` (`f32` or `f64`);
//! the `*64` and `*32` aliases below fix it.

// `!(x > y)` is used deliberately so that NaN fails parameter checks.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analytic;
pub mod dense;
pub mod error;
pub mod fock;
pub mod integrator;
pub mod master_eq;
pub mod metrics;
pub mod params;
pub mod protocol;
pub mod record;
pub mod scalar;
mod sparse;
pub mod trajectory;

pub use error::{Error, Result};
pub use fock::{HilbertSpace, MixedState, Operator, PureState, QuantumState};
pub use integrator::IntegratorConfig;
pub use master_eq::{CollapseChannel, LindbladModel};
pub use metrics::{EnsembleStats, ObservableSet, TimeSeries};
pub use params::{CouplingSchedule, DriveModel, QubitAmplitudes, SystemParams};
pub use protocol::{EngineKind, FeedbackPhases, ProtocolOutcome, ProtocolParams, ProtocolRunner, Variant};
pub use record::{Channel, DetectionRecord};
pub use scalar::{Real, C};
pub use trajectory::{FixedThresholds, JumpSampler, RngStream, Trajectory};

pub type C64 = C<f64>;
pub type C32 = C<f32>;
pub type Operator64 = Operator<f64>;
pub type Operator32 = Operator<f32>;
pub type PureState64 = PureState<f64>;
pub type PureState32 = PureState<f32>;
pub type MixedState64 = MixedState<f64>;
pub type MixedState32 = MixedState<f32>;
pub type SystemParams64 = SystemParams<f64>;
pub type SystemParams32 = SystemParams<f32>;
pub type LindbladModel64 = LindbladModel<f64>;
pub type TimeSeries64 = TimeSeries<f64>;
pub type EnsembleStats64 = EnsembleStats<f64>;
pub type ProtocolParams64 = ProtocolParams<f64>;
