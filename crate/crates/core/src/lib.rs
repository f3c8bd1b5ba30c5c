pub mod cli;
pub mod clustering;
pub mod coordination;
pub mod distribution;
pub mod divergence;
pub mod error;
pub mod evaluation;
pub mod harness;
pub mod pipeline;
pub mod simulator;
