//! Open-system simulation of two coupled transmons, each coupled to a ladder
//! of high-overtone bulk acoustic resonator modes.

pub mod cli;
pub mod dynamics;
pub mod error;
pub mod experiments;
pub mod model;
pub mod opalg;
pub mod pulses;

pub use error::{Error, Result};
pub use model::{reference_device, DeviceSpec, ModeSpec, QubitId, QubitSpec};
