pub mod dataset;
pub mod elastic_net;
pub mod features;
pub mod forest;
pub mod learner;
pub mod proxy;
pub mod regression;
pub mod stats;
pub mod inference;
#[cfg(any(test, feature = "oracle"))]
pub mod oracle;
pub mod synth;
pub mod config;
pub mod report;
pub mod app;
