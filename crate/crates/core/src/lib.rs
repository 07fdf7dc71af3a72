pub mod bookie;
pub mod dist;
pub mod engine;
pub mod error;
pub mod jvm;
pub mod storage;
pub mod time;
pub mod audit;
pub mod broker;
pub mod metrics;
pub mod routing;
pub mod scenario;
pub mod sim;
pub mod trace;
