//! Latency table and the in-order issue scoreboard.
//!
//! The core issues at most one instruction per cycle, in program order. An
//! instruction issues once every resource it reads is ready (RAW), once its
//! results would land strictly after any pending write to the same resource
//! (WAW), and once the issue interval of the previous instruction has elapsed.
//! Tracked resources are the 32 vector registers, the four input-buffer
//! sectors, the 32 DIMC rows, and a store fence: vector loads wait for every
//! older vector store to complete.
//!
//! Every elapsed cycle is charged to exactly one [`OpClass`]: the cycles from
//! the previous issue slot up to the end of an instruction's issue interval go
//! to that instruction, and the drain after the last issue goes to the
//! instruction that completes last.

use std::ops::{Add, AddAssign, Index, IndexMut, Mul, Sub};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{Instr, OpClass};
use crate::isa::CustomInstruction;

pub const DEFAULT_FREQ_HZ: f64 = 500e6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ClassTiming {
    pub latency: u32,
    pub interval: u32,
}

impl ClassTiming {
    pub const fn new(latency: u32, interval: u32) -> Self {
        ClassTiming { latency, interval }
    }
}

/// Per-class latencies and issue intervals, in cycles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TimingModel {
    /// Fixed external-memory latency; used as the vector load and store latency.
    pub memory_latency: u32,
    pub vector_load_interval: u32,
    pub vector_store_interval: u32,
    pub vector_arith: ClassTiming,
    pub dl_i: ClassTiming,
    pub dl_m: ClassTiming,
    pub dc_p: ClassTiming,
    pub dc_f: ClassTiming,
    pub freq_hz: f64,
}

impl Default for TimingModel {
    fn default() -> Self {
        TimingModel {
            memory_latency: 8,
            vector_load_interval: 1,
            vector_store_interval: 1,
            vector_arith: ClassTiming::new(1, 1),
            dl_i: ClassTiming::new(1, 1),
            dl_m: ClassTiming::new(1, 1),
            dc_p: ClassTiming::new(4, 1),
            dc_f: ClassTiming::new(4, 1),
            freq_hz: DEFAULT_FREQ_HZ,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("invalid timing model: {0}")]
pub struct TimingError(pub String);

/// Timing-relevant category of an instruction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum InstrKind {
    VectorLoad,
    VectorStore,
    VectorArith,
    DlI,
    DlM,
    DcP,
    DcF,
}

impl InstrKind {
    pub fn of(instr: &Instr) -> Self {
        match instr {
            Instr::VLoad { .. } => InstrKind::VectorLoad,
            Instr::VStore { .. } => InstrKind::VectorStore,
            Instr::VMove { .. } => InstrKind::VectorArith,
            Instr::Custom(CustomInstruction::DlI { .. }) => InstrKind::DlI,
            Instr::Custom(CustomInstruction::DlM { .. }) => InstrKind::DlM,
            Instr::Custom(CustomInstruction::DcP { .. }) => InstrKind::DcP,
            Instr::Custom(CustomInstruction::DcF { .. }) => InstrKind::DcF,
        }
    }

    pub fn class(self) -> OpClass {
        match self {
            InstrKind::DcP | InstrKind::DcF | InstrKind::VectorArith => OpClass::Computing,
            InstrKind::DlI | InstrKind::DlM | InstrKind::VectorLoad => OpClass::Loading,
            InstrKind::VectorStore => OpClass::Storing,
        }
    }
}

impl TimingModel {
    pub fn validate(&self) -> Result<(), TimingError> {
        let entries = [
            ("memory_latency", self.memory_latency),
            ("vector_load_interval", self.vector_load_interval),
            ("vector_store_interval", self.vector_store_interval),
            ("vector_arith.latency", self.vector_arith.latency),
            ("vector_arith.interval", self.vector_arith.interval),
            ("dl_i.latency", self.dl_i.latency),
            ("dl_i.interval", self.dl_i.interval),
            ("dl_m.latency", self.dl_m.latency),
            ("dl_m.interval", self.dl_m.interval),
            ("dc_p.latency", self.dc_p.latency),
            ("dc_p.interval", self.dc_p.interval),
            ("dc_f.latency", self.dc_f.latency),
            ("dc_f.interval", self.dc_f.interval),
        ];
        if let Some((name, _)) = entries.iter().find(|(_, v)| *v == 0) {
            return Err(TimingError(format!("{name} must be at least 1")));
        }
        if !(self.freq_hz.is_finite() && self.freq_hz > 0.0) {
            return Err(TimingError(format!("freq_hz must be positive, got {}", self.freq_hz)));
        }
        Ok(())
    }

    pub fn timing_of(&self, kind: InstrKind) -> ClassTiming {
        match kind {
            InstrKind::VectorLoad => ClassTiming::new(self.memory_latency, self.vector_load_interval),
            InstrKind::VectorStore => ClassTiming::new(self.memory_latency, self.vector_store_interval),
            InstrKind::VectorArith => self.vector_arith,
            InstrKind::DlI => self.dl_i,
            InstrKind::DlM => self.dl_m,
            InstrKind::DcP => self.dc_p,
            InstrKind::DcF => self.dc_f,
        }
    }
}

/// Counters split by operation class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct ClassCounts {
    pub computing: u64,
    pub loading: u64,
    pub storing: u64,
}

impl ClassCounts {
    pub fn total(&self) -> u64 {
        self.computing + self.loading + self.storing
    }
}

impl Index<OpClass> for ClassCounts {
    type Output = u64;
    fn index(&self, c: OpClass) -> &u64 {
        match c {
            OpClass::Computing => &self.computing,
            OpClass::Loading => &self.loading,
            OpClass::Storing => &self.storing,
        }
    }
}

impl IndexMut<OpClass> for ClassCounts {
    fn index_mut(&mut self, c: OpClass) -> &mut u64 {
        match c {
            OpClass::Computing => &mut self.computing,
            OpClass::Loading => &mut self.loading,
            OpClass::Storing => &mut self.storing,
        }
    }
}

impl Add for ClassCounts {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        ClassCounts {
            computing: self.computing + o.computing,
            loading: self.loading + o.loading,
            storing: self.storing + o.storing,
        }
    }
}

impl AddAssign for ClassCounts {
    fn add_assign(&mut self, o: Self) {
        *self = *self + o;
    }
}

impl Sub for ClassCounts {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        ClassCounts {
            computing: self.computing - o.computing,
            loading: self.loading - o.loading,
            storing: self.storing - o.storing,
        }
    }
}

impl Mul<u64> for ClassCounts {
    type Output = Self;
    fn mul(self, k: u64) -> Self {
        ClassCounts { computing: self.computing * k, loading: self.loading * k, storing: self.storing * k }
    }
}

const REG_BASE: usize = 0;
const SECTOR_BASE: usize = 32;
const ROW_BASE: usize = 36;
const STORE_FENCE: usize = 68;
const RESOURCES: usize = 69;

/// Fixed-capacity list of resource ids.
#[derive(Debug, Clone, Copy, Default)]
struct ResourceSet {
    ids: [u8; 12],
    len: usize,
}

impl ResourceSet {
    fn push(&mut self, id: usize) {
        self.ids[self.len] = id as u8;
        self.len += 1;
    }

    fn regs(&mut self, first: u8, count: u8) {
        for r in first..first.saturating_add(count) {
            self.push(REG_BASE + (r as usize).min(31));
        }
    }

    fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        self.ids[..self.len].iter().map(|&i| i as usize)
    }
}

fn resources(instr: &Instr) -> (ResourceSet, ResourceSet) {
    let mut reads = ResourceSet::default();
    let mut writes = ResourceSet::default();
    match *instr {
        Instr::VLoad { vd, nregs, .. } => {
            reads.push(STORE_FENCE);
            writes.regs(vd, nregs);
        }
        Instr::VStore { vs, nregs, .. } => {
            reads.regs(vs, nregs);
            writes.push(STORE_FENCE);
        }
        Instr::VMove { vd, vs } => {
            reads.regs(vs, 1);
            writes.regs(vd, 1);
        }
        Instr::Custom(CustomInstruction::DlI { vs1, nvec, sec, .. }) => {
            reads.regs(vs1, nvec);
            writes.push(SECTOR_BASE + sec as usize);
        }
        Instr::Custom(CustomInstruction::DlM { vs1, nvec, m_row, .. }) => {
            reads.regs(vs1, nvec);
            writes.push(ROW_BASE + m_row as usize);
        }
        Instr::Custom(CustomInstruction::DcP { vs1, vd, m_row, .. })
        | Instr::Custom(CustomInstruction::DcF { vs1, vd, m_row, .. }) => {
            reads.regs(vs1, 1);
            for s in 0..4 {
                reads.push(SECTOR_BASE + s);
            }
            reads.push(ROW_BASE + m_row as usize);
            writes.regs(vd, 1);
        }
    }
    (reads, writes)
}

/// Issue timing of one instruction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct IssueSlot {
    pub issue: u64,
    pub complete: u64,
}

/// Scoreboard state normalized to the current issue cycle. Two scoreboards
/// with equal snapshots behave identically on any future instruction stream,
/// up to a constant cycle offset.
#[derive(Debug, Clone, PartialEq, Eq)]
struct Snapshot {
    ready: [u64; RESOURCES],
    drain: u64,
    drain_class: Option<OpClass>,
}

/// Cycle accounting for a single in-order instruction stream.
#[derive(Debug, Clone)]
pub struct Scoreboard {
    timing: TimingModel,
    now: u64,
    ready: [u64; RESOURCES],
    last_complete: u64,
    last_class: OpClass,
    class_cycles: ClassCounts,
    instructions: ClassCounts,
}

/// Cycle totals of a finished stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct CycleSummary {
    pub total_cycles: u64,
    pub class_cycles: ClassCounts,
    pub instructions: ClassCounts,
}

impl Scoreboard {
    pub fn new(timing: TimingModel) -> Self {
        Scoreboard {
            timing,
            now: 0,
            ready: [0; RESOURCES],
            last_complete: 0,
            last_class: OpClass::Computing,
            class_cycles: ClassCounts::default(),
            instructions: ClassCounts::default(),
        }
    }

    pub fn issue(&mut self, instr: &Instr) -> IssueSlot {
        let kind = InstrKind::of(instr);
        let class = kind.class();
        let ClassTiming { latency, interval } = self.timing.timing_of(kind);
        let latency = latency as u64;
        let (reads, writes) = resources(instr);

        let mut issue = self.now;
        for r in reads.iter() {
            issue = issue.max(self.ready[r]);
        }
        for w in writes.iter() {
            // complete = issue + latency must land after ready[w]
            issue = issue.max((self.ready[w] + 1).saturating_sub(latency));
        }
        let next = issue + interval as u64;
        self.class_cycles[class] += next - self.now;
        self.instructions[class] += 1;
        self.now = next;

        let complete = issue + latency;
        for w in writes.iter() {
            self.ready[w] = complete;
        }
        if complete >= self.last_complete {
            self.last_complete = complete;
            self.last_class = class;
        }
        IssueSlot { issue, complete }
    }

    pub fn summary(&self) -> CycleSummary {
        let mut class_cycles = self.class_cycles;
        let mut total = self.now;
        if self.last_complete > self.now {
            class_cycles[self.last_class] += self.last_complete - self.now;
            total = self.last_complete;
        }
        CycleSummary { total_cycles: total, class_cycles, instructions: self.instructions }
    }

    fn snapshot(&self) -> Snapshot {
        let mut ready = [0; RESOURCES];
        for (rel, &r) in ready.iter_mut().zip(self.ready.iter()) {
            *rel = r.saturating_sub(self.now);
        }
        let drain = self.last_complete.saturating_sub(self.now);
        Snapshot { ready, drain, drain_class: (drain > 0).then_some(self.last_class) }
    }

    /// Skip ahead by `reps` repetitions of a body whose effect on the
    /// snapshot is the identity and whose per-iteration cost was `delta`.
    fn fast_forward(&mut self, delta_now: u64, delta_cycles: ClassCounts, delta_instr: ClassCounts, reps: u64) {
        let shift = delta_now * reps;
        let old_now = self.now;
        self.now += shift;
        for r in self.ready.iter_mut() {
            if *r > old_now {
                *r += shift;
            }
        }
        if self.last_complete > old_now {
            self.last_complete += shift;
        }
        self.class_cycles += delta_cycles * reps;
        self.instructions += delta_instr * reps;
    }
}

/// A straight-line body executed `repeat` times. Every vector load in the
/// body advances by `load_stride` bytes per iteration and every vector store
/// by `store_stride` bytes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Segment {
    pub body: Vec<Instr>,
    pub repeat: u64,
    pub load_stride: u64,
    pub store_stride: u64,
}

impl Segment {
    pub fn once(body: Vec<Instr>) -> Self {
        Segment { body, repeat: 1, load_stride: 0, store_stride: 0 }
    }

    /// The body as it executes in iteration `iter`.
    pub fn iteration(&self, iter: u64) -> impl Iterator<Item = Instr> + '_ {
        self.body.iter().map(move |instr| match *instr {
            Instr::VLoad { vd, nregs, addr } => Instr::VLoad { vd, nregs, addr: addr + iter * self.load_stride },
            Instr::VStore { vs, nregs, addr } => Instr::VStore { vs, nregs, addr: addr + iter * self.store_stride },
            other => other,
        })
    }

    pub fn instruction_count(&self) -> u64 {
        self.body.len() as u64 * self.repeat
    }
}

/// Expand segments into the full instruction stream.
pub fn flatten(segments: &[Segment]) -> Vec<Instr> {
    let len: u64 = segments.iter().map(Segment::instruction_count).sum();
    let mut out = Vec::with_capacity(len as usize);
    for seg in segments {
        for iter in 0..seg.repeat {
            out.extend(seg.iteration(iter));
        }
    }
    out
}

/// Cycle-count a segmented stream without functional execution.
///
/// Each segment's body is traced until one iteration leaves the normalized
/// scoreboard unchanged; the remaining iterations are then charged
/// analytically. Because issue timing never depends on addresses or operand
/// values, the result equals tracing the flattened stream.
pub fn loop_compressed_cycles(segments: &[Segment], timing: &TimingModel) -> Result<CycleSummary, TimingError> {
    timing.validate()?;
    let mut sb = Scoreboard::new(timing.clone());
    for seg in segments {
        let mut prev = sb.snapshot();
        let mut done = 0;
        while done < seg.repeat {
            let (now0, cyc0, ins0) = (sb.now, sb.class_cycles, sb.instructions);
            for instr in &seg.body {
                sb.issue(instr);
            }
            done += 1;
            let snap = sb.snapshot();
            if snap == prev && done < seg.repeat {
                sb.fast_forward(sb.now - now0, sb.class_cycles - cyc0, sb.instructions - ins0, seg.repeat - done);
                break;
            }
            prev = snap;
        }
    }
    Ok(sb.summary())
}
