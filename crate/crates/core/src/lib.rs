pub mod container;
pub mod engine;
pub mod error;
pub mod lowrank;
pub mod metrics;
pub mod mixture;
pub mod observed;
pub mod random;
pub mod spatial;
pub mod synth;
pub mod tensor;
