//! Behavioural model of cascaded Schmitt-Trigger stages: exact piecewise
//! simulation, outcome classification, input steering and characterisation.

pub mod characterize;
pub mod classifier;
pub mod model;
pub mod quasi;
pub mod selftest;
pub mod simulator;
pub mod steering;
pub mod waveform;

pub use model::{v1_v2, DerivedQuantities, ModelError, Polarity, Region, StageParams};
pub use simulator::{
    equilibrate, simulate, CascadeConfig, Event, EventKind, FixedPoint, SimError, SimOptions, Trace,
};
pub use waveform::{Waveform, WaveformError};
