//! Simulator for a RISC-V vector core with a digital in-memory-computing
//! (DIMC) tile integrated as an execution lane.

pub mod asm;
pub mod baseline;
pub mod isa;
pub mod mapper;
pub mod metrics;
pub mod pipeline;
pub mod sim;
pub mod tile;
pub mod workload;
