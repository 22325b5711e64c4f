use crate::isa::CustomInstruction;
use crate::sim::{DimcConfig, Instr, Segment};
use crate::tile::{QuantConfig, SECTOR_BITS};

use super::{plan_mapping, regs, Chunk, LayerDescriptor, MapError, MappingPlan};

/// What a lowered layer leaves in memory.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputFlow {
    /// 24-bit partial sums, one 32-bit word per output (DC.P everywhere).
    Partial,
    /// Quantized 4-bit outputs packed two per byte (DC.F on the last chunk).
    Final(QuantConfig),
}

/// Byte layout of the memory image a lowered layer runs against.
///
/// Weights are stored kernel by kernel and patches position by position,
/// both split into zero-padded chunks; outputs are stored group by group.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    /// Offset of each chunk within a kernel or patch record.
    pub chunk_offsets: Vec<usize>,
    /// Bytes of one kernel or patch record.
    pub record_bytes: usize,
    pub weights_base: usize,
    pub patches_base: usize,
    pub outputs_base: usize,
    /// Bytes written per position by one full group.
    pub output_stride: usize,
    /// Bytes of output for one group over all positions.
    pub group_output_bytes: usize,
    pub total_bytes: usize,
}

impl Layout {
    pub fn weight_addr(&self, kernel: usize, chunk: usize) -> usize {
        self.weights_base + kernel * self.record_bytes + self.chunk_offsets[chunk]
    }

    pub fn patch_addr(&self, position: usize, chunk: usize) -> usize {
        self.patches_base + position * self.record_bytes + self.chunk_offsets[chunk]
    }

    pub fn output_addr(&self, group: usize, position: usize) -> usize {
        self.outputs_base + group * self.group_output_bytes + position * self.output_stride
    }
}

#[derive(Debug, Clone)]
pub struct LoweredLayer {
    pub layer: LayerDescriptor,
    pub plan: MappingPlan,
    pub flow: OutputFlow,
    pub dimc: DimcConfig,
    pub layout: Layout,
    /// Per group: a weight-load prologue, then one segment repeated per position.
    pub segments: Vec<Segment>,
}

impl LoweredLayer {
    pub fn instruction_count(&self) -> u64 {
        self.segments.iter().map(Segment::instruction_count).sum()
    }
}

/// Registers stored per position for a group of `kernels`.
pub(super) fn store_registers(kernels: usize, flow: OutputFlow) -> usize {
    match flow {
        OutputFlow::Partial => kernels.div_ceil(2),
        OutputFlow::Final(_) => kernels.div_ceil(16),
    }
}

fn full_mask(nvec: u8) -> u8 {
    (1u8 << nvec) - 1
}

/// Emit vector loads for every sector of a chunk at `addr`, then the
/// matching DIMC loads produced by `dimc_load(sector, nvec)`.
fn load_chunk(body: &mut Vec<Instr>, chunk: &Chunk, addr: usize, dimc_load: impl Fn(u8, u8) -> CustomInstruction) {
    for (s, &nvec) in chunk.sector_slices.iter().enumerate() {
        body.push(Instr::VLoad {
            vd: regs::STAGING + 4 * s as u8,
            nregs: nvec,
            addr: (addr + s * SECTOR_BITS / 8) as u64,
        });
    }
    for (s, &nvec) in chunk.sector_slices.iter().enumerate() {
        body.push(Instr::Custom(dimc_load(s as u8, nvec)));
    }
}

/// Register half holding the running partial of kernel `j` in a tiled group.
fn partial_slot(j: usize) -> (u8, u8) {
    (regs::PARTIALS + (j / 2) as u8, (j % 2) as u8)
}

pub fn lower(layer: &LayerDescriptor, plan: &MappingPlan, flow: OutputFlow) -> Result<LoweredLayer, MapError> {
    if plan_mapping(layer)? != *plan {
        return Err(MapError::PlanMismatch(layer.name.clone()));
    }
    let t_rows = plan.tiling_factor;
    let g_max = plan.kernels_per_group;
    let positions = layer.positions();

    let mut chunk_offsets = Vec::with_capacity(t_rows);
    let mut record_bytes = 0;
    for c in &plan.chunks {
        chunk_offsets.push(record_bytes);
        record_bytes += c.bytes();
    }
    let output_stride = store_registers(g_max, flow) * 8;
    let weights_base = 0;
    let patches_base = weights_base + layer.och * record_bytes;
    let outputs_base = patches_base + positions * record_bytes;
    let group_output_bytes = positions * output_stride;
    let layout = Layout {
        chunk_offsets,
        record_bytes,
        weights_base,
        patches_base,
        outputs_base,
        output_stride,
        group_output_bytes,
        total_bytes: outputs_base + plan.group_count * group_output_bytes,
    };

    let mut segments = Vec::with_capacity(2 * plan.group_count);
    for g in 0..plan.group_count {
        let kernels = plan.kernels_in_group(g, layer.och);

        let mut prologue = Vec::new();
        for j in 0..kernels {
            for (t, chunk) in plan.chunks.iter().enumerate() {
                let m_row = (j * t_rows + t) as u8;
                load_chunk(&mut prologue, chunk, layout.weight_addr(g * g_max + j, t), |sec, nvec| {
                    CustomInstruction::DlM { vs1: regs::STAGING + 4 * sec, nvec, sec, mask: full_mask(nvec), m_row }
                });
            }
        }
        segments.push(Segment::once(prologue));

        let mut body = Vec::new();
        for (t, chunk) in plan.chunks.iter().enumerate() {
            load_chunk(&mut body, chunk, layout.patch_addr(0, t), |sec, nvec| CustomInstruction::DlI {
                vs1: regs::STAGING + 4 * sec,
                nvec,
                sec,
                mask: full_mask(nvec),
            });
            let last = t + 1 == t_rows;
            for j in 0..kernels {
                let m_row = (j * t_rows + t) as u8;
                let (vs1, sh) = if t == 0 { (regs::ZERO, 0) } else { partial_slot(j) };
                let instr = match flow {
                    OutputFlow::Final(_) if last => CustomInstruction::DcF {
                        vs1,
                        sh,
                        vd: regs::FINALS + (j / 16) as u8,
                        dh: ((j / 8) % 2) as u8,
                        bidx: ((j / 2) % 4) as u8,
                        m_row,
                    },
                    // untiled partials go straight to the staging registers
                    _ if t_rows == 1 => {
                        CustomInstruction::DcP { vs1, sh, vd: regs::STAGING + (j / 2) as u8, dh: (j % 2) as u8, m_row }
                    }
                    _ => {
                        let (vd, dh) = partial_slot(j);
                        CustomInstruction::DcP { vs1, sh, vd, dh, m_row }
                    }
                };
                body.push(Instr::Custom(instr));
            }
        }
        let first = match flow {
            OutputFlow::Final(_) => regs::FINALS,
            OutputFlow::Partial if t_rows == 1 => regs::STAGING,
            OutputFlow::Partial => regs::PARTIALS,
        };
        let count = store_registers(kernels, flow);
        let out = layout.output_addr(g, 0);
        for start in (0..count).step_by(8) {
            body.push(Instr::VStore {
                vs: first + start as u8,
                nregs: (count - start).min(8) as u8,
                addr: (out + start * 8) as u64,
            });
        }
        segments.push(Segment {
            body,
            repeat: positions as u64,
            load_stride: layout.record_bytes as u64,
            store_stride: layout.output_stride as u64,
        });
    }

    let quant = match flow {
        OutputFlow::Final(q) => q,
        OutputFlow::Partial => QuantConfig::default(),
    };
    Ok(LoweredLayer {
        layer: layer.clone(),
        plan: plan.clone(),
        flow,
        dimc: DimcConfig { precision: plan.mode, quant },
        layout,
        segments,
    })
}
