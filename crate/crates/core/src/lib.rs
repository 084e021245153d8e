pub mod baselines;
pub mod cli;
pub mod cluster;
pub mod data;
pub mod envs;
pub mod error;
pub mod experiment;
pub mod gates;
pub mod hrm;
pub mod linalg;
pub mod metrics;
pub mod optim;
pub mod selftest;
