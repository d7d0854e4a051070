pub mod control;
pub mod error;
pub mod estimator;
pub mod network_sim;
pub mod numerics;
pub mod orchestrator;
pub mod plant;
pub mod remote_predictor;
pub mod scenarios;
pub mod trigger;
