//! Per-layer analysis: plan, lower, time, and compare against the baseline.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::baseline::{baseline_cycles, BaselineConfigError, BaselineCostConfig};
use crate::mapper::{
    lower, ops_count, plan_mapping, run_layer, LayerData, LayerDescriptor, LayerOutput, LoweredLayer, MapError,
    OutputFlow, RunError,
};
use crate::metrics::{check_area_ratio, MetricError, PerfReport, DEFAULT_AREA_RATIO};
use crate::sim::{loop_compressed_cycles, CycleSummary, ExecOptions, TimingError, TimingModel, TraceRecord};
use crate::tile::QuantConfig;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AnalysisConfig {
    pub timing: TimingModel,
    pub baseline: BaselineCostConfig,
    pub area_ratio: f64,
    pub quant: QuantConfig,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        AnalysisConfig {
            timing: TimingModel::default(),
            baseline: BaselineCostConfig::default(),
            area_ratio: DEFAULT_AREA_RATIO,
            quant: QuantConfig::default(),
        }
    }
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error(transparent)]
    Timing(#[from] TimingError),
    #[error(transparent)]
    Baseline(#[from] BaselineConfigError),
    #[error(transparent)]
    Metric(#[from] MetricError),
}

impl AnalysisConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        self.timing.validate()?;
        self.baseline.validate()?;
        check_area_ratio(self.area_ratio)?;
        Ok(())
    }

    pub fn flow(&self) -> OutputFlow {
        OutputFlow::Final(self.quant)
    }
}

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error(transparent)]
    Map(#[from] MapError),
    #[error(transparent)]
    Timing(#[from] TimingError),
    #[error(transparent)]
    Metric(#[from] MetricError),
}

#[derive(Debug, Clone)]
pub struct LayerAnalysis {
    pub report: PerfReport,
    pub cycles: CycleSummary,
    pub lowered: LoweredLayer,
}

/// Time a layer with loop-compressed scoreboarding and build its report row.
pub fn analyze_layer(layer: &LayerDescriptor, cfg: &AnalysisConfig) -> Result<LayerAnalysis, AnalysisError> {
    let plan = plan_mapping(layer)?;
    let lowered = lower(layer, &plan, cfg.flow())?;
    let cycles = loop_compressed_cycles(&lowered.segments, &cfg.timing)?;
    let report = PerfReport::new(
        layer.name.clone(),
        ops_count(layer),
        cycles.total_cycles,
        &cycles.class_cycles,
        baseline_cycles(layer, &cfg.baseline),
        cfg.timing.freq_hz,
        cfg.area_ratio,
        plan.tiling_factor,
        plan.group_count,
    )?;
    Ok(LayerAnalysis { report, cycles, lowered })
}

#[derive(Debug, Clone)]
pub struct Verification {
    /// Cycles from executing every instruction.
    pub full_cycles: CycleSummary,
    pub output_matches: bool,
    pub mismatches: usize,
    pub trace: Option<Vec<TraceRecord>>,
}

impl Verification {
    pub fn passed(&self, analysis: &LayerAnalysis) -> bool {
        self.output_matches && self.full_cycles == analysis.cycles
    }
}

/// Run the full instruction stream on seeded random data and compare the
/// outputs with a direct convolution.
pub fn verify_layer(
    analysis: &LayerAnalysis,
    cfg: &AnalysisConfig,
    seed: u64,
    trace: bool,
) -> Result<Verification, RunError> {
    let layer = &analysis.lowered.layer;
    let data = LayerData::random(layer, &mut ChaCha8Rng::seed_from_u64(seed));
    let run = run_layer(&analysis.lowered, &data, &cfg.timing, &ExecOptions { trace })?;
    let expected = LayerOutput::reference(layer, &data, analysis.lowered.flow);
    let mismatches = match (&run.output, &expected) {
        (LayerOutput::Partials(a), LayerOutput::Partials(b)) => a.iter().zip(b).filter(|(x, y)| x != y).count(),
        (LayerOutput::Quantized(a), LayerOutput::Quantized(b)) => a.iter().zip(b).filter(|(x, y)| x != y).count(),
        _ => expected.len(),
    } + run.output.len().abs_diff(expected.len());
    Ok(Verification {
        full_cycles: run.outcome.cycles(),
        output_matches: mismatches == 0,
        mismatches,
        trace: run.outcome.trace,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepMode {
    /// Vary ICH with OCH = 32 and a 2x2 kernel.
    Tiling,
    /// Vary OCH with ICH = 32 and a 2x2 kernel.
    Grouping,
}

impl SweepMode {
    pub fn default_values(self) -> Vec<usize> {
        match self {
            SweepMode::Tiling => vec![16, 32, 64, 128, 256, 512, 1024, 2048],
            SweepMode::Grouping => vec![16, 32, 64, 128, 256, 512, 1024],
        }
    }

    pub fn swept_field(self) -> &'static str {
        match self {
            SweepMode::Tiling => "ich",
            SweepMode::Grouping => "och",
        }
    }

    /// The layer at sweep point `value` over a `size` x `size` input.
    pub fn layer(self, value: usize, size: usize) -> LayerDescriptor {
        let (ich, och) = match self {
            SweepMode::Tiling => (value, 32),
            SweepMode::Grouping => (32, value),
        };
        LayerDescriptor::conv(ich, och, size, size, 2, 2, 1, 0).named(format!("{}={value}", self.swept_field()))
    }
}

pub const DEFAULT_SWEEP_SIZE: usize = 16;

pub fn sweep(
    mode: SweepMode,
    values: &[usize],
    size: usize,
    cfg: &AnalysisConfig,
) -> Result<Vec<PerfReport>, AnalysisError> {
    values.iter().map(|&v| analyze_layer(&mode.layer(v, size), cfg).map(|a| a.report)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::peak_gops;
    use crate::workload::WorkloadFile;

    #[test]
    fn sweep_plans() {
        let cfg = AnalysisConfig::default();
        let t = sweep(SweepMode::Tiling, &[32, 64, 128, 256], 8, &cfg).unwrap();
        assert_eq!(t.iter().map(|r| r.tiling_factor).collect::<Vec<_>>(), [1, 1, 2, 4]);
        let g = sweep(SweepMode::Grouping, &[16, 32, 64], 8, &cfg).unwrap();
        assert_eq!(g.iter().map(|r| r.group_count).collect::<Vec<_>>(), [1, 1, 2]);
        assert_eq!(g[0].layer, "och=16");
    }

    #[test]
    fn verification_agrees_with_compressed_timing() {
        let cfg = AnalysisConfig::default();
        for layer in [
            LayerDescriptor::conv(64, 40, 5, 5, 2, 2, 1, 0),
            LayerDescriptor::fc(1024, 16),
            LayerDescriptor::conv(3, 8, 12, 12, 7, 7, 2, 3),
        ] {
            let a = analyze_layer(&layer, &cfg).unwrap();
            let v = verify_layer(&a, &cfg, 7, false).unwrap();
            assert!(v.passed(&a), "{layer:?}: {v:?}");
        }
    }

    #[test]
    fn ineligible_layer() {
        let layer = LayerDescriptor {
            precision: crate::mapper::LayerPrecision { bits: 8, ..Default::default() },
            ..LayerDescriptor::fc(8, 8)
        };
        assert!(matches!(
            analyze_layer(&layer, &AnalysisConfig::default()),
            Err(AnalysisError::Map(MapError::NotDimcEligible { .. }))
        ));
    }

    #[test]
    fn resnet50_rows() {
        let cfg = AnalysisConfig::default();
        let w = WorkloadFile::resnet50();
        for layer in &w.layers {
            let r = analyze_layer(layer, &cfg).unwrap().report;
            assert!(r.speedup > 1.0, "{r:?}");
            assert!(r.gops <= peak_gops(4, cfg.timing.freq_hz), "{r:?}");
        }
    }
}
