//! District-level wheat distribution model: cardholder estimation, weekly
//! stock-and-flow simulation, inter-district transport and calibration.

pub mod calibration;
pub mod demand;
pub mod domain;
pub mod engine;
pub mod io;
pub mod ration;
pub mod scenario;
pub mod synthetic;
pub mod transport;

pub use calibration::{aggregate_to_state_monthly, compare_series, depletion_rate_from_year, MonthlyStorage, YearMode};
pub use demand::{EntitlementPolicy, UndernourishmentModel};
pub use domain::*;
pub use engine::{EngineParams, Eq2Convention};
pub use scenario::{run, Metric, ScenarioEvent, ScenarioSpec, SimulationInputs, SimulationTrace};
pub use transport::{allocate, AllocationStrategy, Shipment};
