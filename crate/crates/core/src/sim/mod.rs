//! Cycle-approximate execution of vector + DIMC instruction streams.

mod machine;
mod timing;

use std::fmt;
use std::io;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use machine::{MemoryImage, VectorRegisterFile, VLEN_BITS, VREGS};
pub use timing::{
    flatten, loop_compressed_cycles, ClassCounts, ClassTiming, CycleSummary, InstrKind, IssueSlot, Scoreboard, Segment,
    TimingError, TimingModel, DEFAULT_FREQ_HZ,
};

use crate::isa::{CustomInstruction, DecodeError, EncodedWord, FieldError};
use crate::tile::{DimcTileState, PrecisionMode, QuantConfig, TileError};

/// Instructions understood by the simulator. Standard vector instructions
/// are modeled abstractly; only the DIMC instructions have a binary encoding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Instr {
    Custom(CustomInstruction),
    /// Unit-stride load of `nregs` (register group) consecutive registers from `addr`.
    VLoad {
        vd: u8,
        nregs: u8,
        addr: u64,
    },
    /// Unit-stride store of `nregs` consecutive registers to `addr`.
    VStore {
        vs: u8,
        nregs: u8,
        addr: u64,
    },
    /// Whole-register move.
    VMove {
        vd: u8,
        vs: u8,
    },
}

impl From<CustomInstruction> for Instr {
    fn from(i: CustomInstruction) -> Self {
        Instr::Custom(i)
    }
}

impl fmt::Display for Instr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Instr::Custom(c) => f.write_str(&crate::asm::format_instruction(c)),
            Instr::VLoad { vd, nregs, addr } => write!(f, "vle m{nregs} v{vd}, ({addr:#x})"),
            Instr::VStore { vs, nregs, addr } => write!(f, "vse m{nregs} v{vs}, ({addr:#x})"),
            Instr::VMove { vd, vs } => write!(f, "vmv.v.v v{vd}, v{vs}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OpClass {
    Computing,
    Loading,
    Storing,
}

impl OpClass {
    pub fn as_str(self) -> &'static str {
        match self {
            OpClass::Computing => "computing",
            OpClass::Loading => "loading",
            OpClass::Storing => "storing",
        }
    }
}

pub fn class_of(instr: &Instr) -> OpClass {
    InstrKind::of(instr).class()
}

/// DIMC datapath configuration in effect for a whole program.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct DimcConfig {
    pub precision: PrecisionMode,
    pub quant: QuantConfig,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SimErrorKind {
    #[error(transparent)]
    Decode(#[from] DecodeError),
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error(transparent)]
    Tile(#[from] TileError),
    #[error("register group v{first}..v{} exceeds v31", first + count - 1)]
    RegisterOutOfRange { first: u8, count: u8 },
    #[error("register group size {0} not in 1..=8")]
    BadGroupSize(u8),
    #[error("memory access of {len} bytes at {addr:#x} outside the {size}-byte image")]
    MemoryOutOfBounds { addr: u64, len: u64, size: u64 },
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SimError {
    #[error("pc {pc}: {kind}")]
    At { pc: usize, kind: SimErrorKind },
    #[error(transparent)]
    Timing(#[from] TimingError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub cycle: u64,
    pub class: OpClass,
    pub mnemonic: String,
}

/// Write a trace as CSV with header `cycle,class,mnemonic`.
pub fn write_trace_csv<W: io::Write>(records: &[TraceRecord], out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in records {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone)]
pub struct SimOutcome {
    pub total_cycles: u64,
    pub class_cycles: ClassCounts,
    pub instructions: ClassCounts,
    pub vrf: VectorRegisterFile,
    pub tile: DimcTileState,
    pub memory: MemoryImage,
    pub trace: Option<Vec<TraceRecord>>,
}

impl SimOutcome {
    pub fn cycles(&self) -> CycleSummary {
        CycleSummary {
            total_cycles: self.total_cycles,
            class_cycles: self.class_cycles,
            instructions: self.instructions,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct ExecOptions {
    pub trace: bool,
}

/// Execute a program functionally and time it with the in-order scoreboard.
pub fn execute<'a, I>(
    program: I,
    timing: &TimingModel,
    dimc: DimcConfig,
    memory: MemoryImage,
    opts: &ExecOptions,
) -> Result<SimOutcome, SimError>
where
    I: IntoIterator<Item = &'a Instr>,
{
    timing.validate()?;
    let mut machine = machine::Machine::new(dimc, memory);
    let mut sb = Scoreboard::new(timing.clone());
    let mut trace = opts.trace.then(Vec::new);
    for (pc, instr) in program.into_iter().enumerate() {
        machine.step(instr).map_err(|kind| SimError::At { pc, kind })?;
        let slot = sb.issue(instr);
        if let Some(t) = trace.as_mut() {
            t.push(TraceRecord { cycle: slot.issue, class: class_of(instr), mnemonic: instr.to_string() });
        }
    }
    let summary = sb.summary();
    let (vrf, tile, memory) = machine.into_parts();
    Ok(SimOutcome {
        total_cycles: summary.total_cycles,
        class_cycles: summary.class_cycles,
        instructions: summary.instructions,
        vrf,
        tile,
        memory,
        trace,
    })
}

/// Decode a binary stream of DIMC words and execute it.
pub fn execute_words(
    words: &[EncodedWord],
    timing: &TimingModel,
    dimc: DimcConfig,
    memory: MemoryImage,
    opts: &ExecOptions,
) -> Result<SimOutcome, SimError> {
    let program = words
        .iter()
        .enumerate()
        .map(|(pc, &w)| {
            CustomInstruction::decode(w).map(Instr::Custom).map_err(|e| SimError::At { pc, kind: e.into() })
        })
        .collect::<Result<Vec<_>, _>>()?;
    execute(&program, timing, dimc, memory, opts)
}
