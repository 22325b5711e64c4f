//! Lowering of convolution and fully-connected layers onto the DIMC tile.
//!
//! A kernel is flattened along (input channel, kernel row, kernel column)
//! and split into 1024-bit chunks; each chunk occupies one DIMC row
//! (tiling). Up to `floor(32 / T)` kernels are resident at once (grouping);
//! weights are reloaded for every further group.

mod data;
mod lower;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tile::{ElementWidth, PrecisionMode, ROWS, ROW_BITS, SECTOR_BITS, SLICE_BITS};

pub use data::{build_memory, extract_outputs, run_layer, LayerData, LayerOutput, LayerRun, RunError};
pub use lower::{lower, Layout, LoweredLayer, OutputFlow};

/// Registers used by lowered streams.
pub mod regs {
    /// Patch and weight staging, four registers per sector.
    pub const STAGING: u8 = 0;
    /// Per-kernel partial accumulators when the kernel is tiled.
    pub const PARTIALS: u8 = 16;
    /// Packed 4-bit final outputs.
    pub const FINALS: u8 = 24;
    /// Never written; supplies the zero partial that starts each chain.
    pub const ZERO: u8 = 31;
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MapError {
    #[error("layer `{name}`: {reason}")]
    Malformed { name: String, reason: String },
    #[error("layer `{name}`: {bits}-bit precision is not DIMC eligible (the tile supports at most 4 bits)")]
    NotDimcEligible { name: String, bits: u32 },
    #[error("layer `{0}`: mapping plan does not belong to this layer")]
    PlanMismatch(String),
    #[error("layer `{name}`: {what} has {got} values, expected {expected}")]
    DataShape { name: String, what: &'static str, got: usize, expected: usize },
    #[error("layer `{name}`: {what} value {value} at index {index} outside {min}..={max}")]
    DataRange { name: String, what: &'static str, index: usize, value: i32, min: i32, max: i32 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LayerKind {
    Conv,
    Fc,
}

fn yes() -> bool {
    true
}

/// Element precision requested by a layer. May exceed what the DIMC supports.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerPrecision {
    pub bits: u32,
    #[serde(default = "yes")]
    pub input_signed: bool,
    #[serde(default = "yes")]
    pub weight_signed: bool,
}

impl Default for LayerPrecision {
    fn default() -> Self {
        LayerPrecision { bits: 4, input_signed: true, weight_signed: true }
    }
}

impl From<PrecisionMode> for LayerPrecision {
    fn from(m: PrecisionMode) -> Self {
        LayerPrecision { bits: m.width.bits(), input_signed: m.input_signed, weight_signed: m.weight_signed }
    }
}

fn one() -> usize {
    1
}

/// Shape of a convolution layer. A fully-connected layer is a 1x1
/// convolution over a 1x1 input whose channels are the flattened features.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerDescriptor {
    #[serde(default)]
    pub name: String,
    pub kind: LayerKind,
    pub ich: usize,
    pub och: usize,
    #[serde(default = "one")]
    pub h: usize,
    #[serde(default = "one")]
    pub w: usize,
    #[serde(default = "one")]
    pub kh: usize,
    #[serde(default = "one")]
    pub kw: usize,
    #[serde(default = "one")]
    pub stride: usize,
    #[serde(default)]
    pub padding: usize,
    #[serde(default)]
    pub precision: LayerPrecision,
}

impl LayerDescriptor {
    #[allow(clippy::too_many_arguments)]
    pub fn conv(
        ich: usize,
        och: usize,
        h: usize,
        w: usize,
        kh: usize,
        kw: usize,
        stride: usize,
        padding: usize,
    ) -> Self {
        LayerDescriptor {
            name: String::new(),
            kind: LayerKind::Conv,
            ich,
            och,
            h,
            w,
            kh,
            kw,
            stride,
            padding,
            precision: LayerPrecision::default(),
        }
    }

    pub fn fc(inputs: usize, outputs: usize) -> Self {
        LayerDescriptor { kind: LayerKind::Fc, ..LayerDescriptor::conv(inputs, outputs, 1, 1, 1, 1, 1, 0) }
    }

    pub fn named(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    pub fn with_precision(mut self, precision: impl Into<LayerPrecision>) -> Self {
        self.precision = precision.into();
        self
    }

    fn malformed(&self, reason: impl Into<String>) -> MapError {
        MapError::Malformed { name: self.name.clone(), reason: reason.into() }
    }

    pub fn validate(&self) -> Result<(), MapError> {
        for (field, v) in [
            ("ich", self.ich),
            ("och", self.och),
            ("h", self.h),
            ("w", self.w),
            ("kh", self.kh),
            ("kw", self.kw),
            ("stride", self.stride),
        ] {
            if v == 0 {
                return Err(self.malformed(format!("{field} must be at least 1")));
            }
        }
        if self.kind == LayerKind::Fc
            && (self.h, self.w, self.kh, self.kw, self.stride, self.padding) != (1, 1, 1, 1, 1, 0)
        {
            return Err(self.malformed("fc layers must have h = w = kh = kw = stride = 1 and no padding"));
        }
        if self.h + 2 * self.padding < self.kh || self.w + 2 * self.padding < self.kw {
            return Err(self.malformed(format!(
                "{}x{} kernel does not fit the {}x{} input with padding {}",
                self.kh, self.kw, self.h, self.w, self.padding
            )));
        }
        if self.precision.bits == 0 {
            return Err(self.malformed("precision bits must be at least 1"));
        }
        Ok(())
    }

    pub fn out_h(&self) -> usize {
        (self.h + 2 * self.padding - self.kh) / self.stride + 1
    }

    pub fn out_w(&self) -> usize {
        (self.w + 2 * self.padding - self.kw) / self.stride + 1
    }

    pub fn positions(&self) -> usize {
        self.out_h() * self.out_w()
    }

    /// Elements in one flattened kernel.
    pub fn kernel_elements(&self) -> usize {
        self.ich * self.kh * self.kw
    }

    pub fn macs(&self) -> u64 {
        (self.och * self.positions()) as u64 * self.kernel_elements() as u64
    }

    /// DIMC precision mode, or an error if the layer is wider than 4 bits.
    pub fn dimc_mode(&self) -> Result<PrecisionMode, MapError> {
        let width = match self.precision.bits {
            1 => ElementWidth::W1,
            2 => ElementWidth::W2,
            4 => ElementWidth::W4,
            // 3-bit data runs in 4-bit mode
            3 => ElementWidth::W4,
            bits => return Err(MapError::NotDimcEligible { name: self.name.clone(), bits }),
        };
        Ok(PrecisionMode {
            width,
            input_signed: self.precision.input_signed,
            weight_signed: self.precision.weight_signed,
        })
    }
}

/// Total operations of a layer, counting each MAC as two.
pub fn ops_count(layer: &LayerDescriptor) -> u64 {
    2 * layer.macs()
}

/// One chunk of a tiled kernel and how it is moved in 256-bit sectors.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Chunk {
    /// First flattened kernel element in this chunk.
    pub first_element: usize,
    pub elements: usize,
    /// Registers (64-bit slices) transferred for each sector, in sector order.
    pub sector_slices: Vec<u8>,
}

impl Chunk {
    pub fn sectors(&self) -> usize {
        self.sector_slices.len()
    }

    /// Bytes of the zero-padded chunk in memory.
    pub fn bytes(&self) -> usize {
        self.sector_slices.iter().map(|&n| n as usize * SLICE_BITS / 8).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MappingPlan {
    pub mode: PrecisionMode,
    pub kernel_bits: usize,
    /// DIMC rows per kernel (T).
    pub tiling_factor: usize,
    /// Kernels resident per group (G).
    pub kernels_per_group: usize,
    pub group_count: usize,
    pub chunks: Vec<Chunk>,
}

impl MappingPlan {
    pub fn is_tiled(&self) -> bool {
        self.tiling_factor > 1
    }

    pub fn is_grouped(&self) -> bool {
        self.group_count > 1
    }

    /// Kernels resident in group `g`; the last group may be partial.
    pub fn kernels_in_group(&self, g: usize, och: usize) -> usize {
        (och - g * self.kernels_per_group).min(self.kernels_per_group)
    }

    pub fn sectors_per_kernel(&self) -> usize {
        self.chunks.iter().map(Chunk::sectors).sum()
    }
}

fn split_sectors(bits: usize) -> Vec<u8> {
    let sectors = bits.div_ceil(SECTOR_BITS);
    (0..sectors)
        .map(|s| {
            let in_sector = (bits - s * SECTOR_BITS).min(SECTOR_BITS);
            in_sector.div_ceil(SLICE_BITS) as u8
        })
        .collect()
}

pub fn plan_mapping(layer: &LayerDescriptor) -> Result<MappingPlan, MapError> {
    layer.validate()?;
    let mode = layer.dimc_mode()?;
    let bits = mode.width.bits() as usize;
    let elements = layer.kernel_elements();
    let kernel_bits = elements * bits;
    let tiling_factor = kernel_bits.div_ceil(ROW_BITS);
    let kernels_per_group = ROWS / tiling_factor;
    if kernels_per_group == 0 {
        return Err(layer.malformed(format!(
            "kernel of {kernel_bits} bits needs {tiling_factor} rows, more than the {ROWS} available"
        )));
    }
    let group_count = layer.och.div_ceil(kernels_per_group);
    let per_row = mode.elements_per_row();
    let chunks: Vec<Chunk> = (0..tiling_factor)
        .map(|t| {
            let first_element = t * per_row;
            let n = (elements - first_element).min(per_row);
            Chunk { first_element, elements: n, sector_slices: split_sectors(n * bits) }
        })
        .collect();
    Ok(MappingPlan { mode, kernel_bits, tiling_factor, kernels_per_group, group_count, chunks })
}
