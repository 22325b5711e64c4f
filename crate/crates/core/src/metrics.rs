//! Throughput, speedup and area-normalized speedup, plus report output.

use std::io;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sim::ClassCounts;

/// Baseline area over DIMC-extended core area, back-solved from a
/// 217x speedup pairing with a 50x area-normalized speedup.
pub const DEFAULT_AREA_RATIO: f64 = 50.0 / 217.0;

#[derive(Debug, Clone, Copy, PartialEq, Error)]
pub enum MetricError {
    #[error("rate undefined for zero cycles")]
    ZeroCycles,
    #[error("area ratio must be positive and finite, got {0}")]
    BadAreaRatio(f64),
    #[error("frequency must be positive and finite, got {0}")]
    BadFrequency(f64),
}

/// Giga-operations per second.
pub fn gops(ops: u64, cycles: u64, freq_hz: f64) -> Result<f64, MetricError> {
    if cycles == 0 {
        return Err(MetricError::ZeroCycles);
    }
    if !(freq_hz.is_finite() && freq_hz > 0.0) {
        return Err(MetricError::BadFrequency(freq_hz));
    }
    Ok(ops as f64 * freq_hz / cycles as f64 / 1e9)
}

pub fn speedup(baseline_cycles: u64, dimc_cycles: u64) -> Result<f64, MetricError> {
    if dimc_cycles == 0 {
        return Err(MetricError::ZeroCycles);
    }
    Ok(baseline_cycles as f64 / dimc_cycles as f64)
}

pub fn ans(speedup: f64, area_ratio: f64) -> Result<f64, MetricError> {
    check_area_ratio(area_ratio)?;
    Ok(speedup * area_ratio)
}

pub fn check_area_ratio(area_ratio: f64) -> Result<(), MetricError> {
    if area_ratio.is_finite() && area_ratio > 0.0 {
        Ok(())
    } else {
        Err(MetricError::BadAreaRatio(area_ratio))
    }
}

/// Architectural ceiling: every element of a 1024-bit row multiplied and
/// accumulated once per cycle.
pub fn peak_gops(bits_per_element: u32, freq_hz: f64) -> f64 {
    2.0 * (1024 / bits_per_element) as f64 * freq_hz / 1e9
}

/// Share of cycles per operation class; the three fields sum to 1.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ClassFractions {
    pub computing: f64,
    pub loading: f64,
    pub storing: f64,
}

impl ClassFractions {
    pub fn from_cycles(c: &ClassCounts) -> Self {
        let total = c.total();
        if total == 0 {
            return ClassFractions::default();
        }
        let computing = c.computing as f64 / total as f64;
        let loading = c.loading as f64 / total as f64;
        // remainder keeps the sum exact up to one rounding
        ClassFractions { computing, loading, storing: (1.0 - computing - loading).max(0.0) }
    }
}

/// One row of a performance report. Field order is the CSV column order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerfReport {
    pub layer: String,
    pub ops: u64,
    pub dimc_cycles: u64,
    pub baseline_cycles: u64,
    pub gops: f64,
    pub speedup: f64,
    pub ans: f64,
    pub area_ratio: f64,
    pub computing: f64,
    pub loading: f64,
    pub storing: f64,
    pub tiling_factor: usize,
    pub group_count: usize,
}

impl PerfReport {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        layer: impl Into<String>,
        ops: u64,
        dimc_cycles: u64,
        class_cycles: &ClassCounts,
        baseline_cycles: u64,
        freq_hz: f64,
        area_ratio: f64,
        tiling_factor: usize,
        group_count: usize,
    ) -> Result<Self, MetricError> {
        let s = speedup(baseline_cycles, dimc_cycles)?;
        let f = ClassFractions::from_cycles(class_cycles);
        Ok(PerfReport {
            layer: layer.into(),
            ops,
            dimc_cycles,
            baseline_cycles,
            gops: gops(ops, dimc_cycles, freq_hz)?,
            speedup: s,
            ans: ans(s, area_ratio)?,
            area_ratio,
            computing: f.computing,
            loading: f.loading,
            storing: f.storing,
            tiling_factor,
            group_count,
        })
    }

    pub fn fractions(&self) -> ClassFractions {
        ClassFractions { computing: self.computing, loading: self.loading, storing: self.storing }
    }
}

pub const CSV_COLUMNS: [&str; 13] = [
    "layer",
    "ops",
    "dimc_cycles",
    "baseline_cycles",
    "gops",
    "speedup",
    "ans",
    "area_ratio",
    "computing",
    "loading",
    "storing",
    "tiling_factor",
    "group_count",
];

pub fn write_csv<W: io::Write>(rows: &[PerfReport], out: W) -> csv::Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record(CSV_COLUMNS)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}
