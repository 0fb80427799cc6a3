//! Simulation, scheduling policies and exact oracles for real-time flows
//! over unreliable wireless routing trees.

pub mod cli;
pub mod config;
pub mod engine;
pub mod experiments;
pub mod model;
pub mod oracle;
pub mod policies;

pub use config::{ConfigDocument, ConfigError, RunReport};
pub use engine::{
    begin_interval, is_schedule_legal, run, run_with, DebtLedger, DebtViews, EngineError, IntervalState,
    Position, RunMetrics, Schedule, Simulator,
};
pub use experiments::{fulfillment_check, sweep_region, RegionResult, RegionSpec, Scenario};
pub use model::{FlowId, FlowSpec, ModelError, RadioMode, SensorId, SystemConfig, Topology};
pub use oracle::{chain_delivery_probability, dp_value, policy_expected_value, OracleError, WeightVector};
pub use policies::{PolicyKind, PolicySpec, SchedulingPolicy, TieBreak};
