//! Discrete-event simulation of battery-less LoRaWAN end devices.
//!
//! A harvester charges a capacitor that powers the device; the capacitor
//! voltage is advanced in closed form between state changes, the device
//! switches off below a low threshold and back on above a high one, and a
//! Class-A MAC model decides what the radio does.

pub mod analysis;
pub mod device;
pub mod energy;
pub mod engine;
pub mod harvester;
pub mod time;
pub mod trace;

pub use device::{CurrentTable, DeviceState, LorawanParams};
pub use energy::{Capacitor, CapacitorParams, Resistance};
pub use engine::{run, Metrics, RunOutput, ScenarioConfig};
pub use time::{SimDuration, SimTime};
