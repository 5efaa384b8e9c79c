//! Scenario handling, orchestration and reports behind the `reserve-admm`
//! command.

pub mod commands;
pub mod report;
pub mod run;
pub mod scenario;
