pub mod config;
pub mod dataset;
pub mod dynamics;
pub mod metrics;
pub mod pipeline;
pub mod plancontact;
pub mod planners;
pub mod rollout;
pub mod simserver;
