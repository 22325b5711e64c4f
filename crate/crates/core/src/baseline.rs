//! Analytic cycle cost of a layer on the plain vector core at INT8.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mapper::LayerDescriptor;
use crate::sim::TimingModel;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("baseline config: {0}")]
pub struct BaselineConfigError(pub String);

/// Per output element and kernel the baseline core runs
/// `ceil(ICH*KH*KW / lanes)` load + MAC pairs, one reduction and one store.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineCostConfig {
    /// INT8 elements per vector operation (VLEN / 8).
    pub lanes_int8: u64,
    pub c_load: u64,
    pub c_mac: u64,
    pub c_reduce: u64,
    pub c_store: u64,
}

impl Default for BaselineCostConfig {
    fn default() -> Self {
        BaselineCostConfig { lanes_int8: 8, c_load: 8, c_mac: 1, c_reduce: 4, c_store: 8 }
    }
}

impl BaselineCostConfig {
    /// Take load, store and MAC costs from a timing table; lanes and the
    /// reduction cost keep their defaults.
    pub fn from_timing(t: &TimingModel) -> Self {
        BaselineCostConfig {
            c_load: t.memory_latency as u64,
            c_store: t.memory_latency as u64,
            c_mac: t.vector_arith.latency as u64,
            ..BaselineCostConfig::default()
        }
    }

    pub fn validate(&self) -> Result<(), BaselineConfigError> {
        if self.lanes_int8 == 0 {
            return Err(BaselineConfigError("lanes_int8 must be at least 1".into()));
        }
        Ok(())
    }
}

pub fn baseline_cycles(layer: &LayerDescriptor, cfg: &BaselineCostConfig) -> u64 {
    let outputs = (layer.och * layer.positions()) as u64;
    let vector_ops = (layer.kernel_elements() as u64).div_ceil(cfg.lanes_int8.max(1));
    outputs * (vector_ops * (cfg.c_load + cfg.c_mac) + cfg.c_reduce + cfg.c_store)
}
