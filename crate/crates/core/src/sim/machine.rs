use crate::isa::CustomInstruction;
use crate::tile::{DimcTileState, PartialSum, SectorData, SLICES_PER_SECTOR};

use super::{DimcConfig, Instr, SimErrorKind};

pub const VREGS: usize = 32;
pub const VLEN_BITS: usize = 64;
const MAX_GROUP: u8 = 8;

/// 32 registers of VLEN = 64 bits. Unwritten registers read as zero.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct VectorRegisterFile {
    regs: [u64; VREGS],
}

impl VectorRegisterFile {
    pub fn get(&self, reg: u8) -> u64 {
        self.regs[reg as usize]
    }

    pub fn set(&mut self, reg: u8, value: u64) {
        self.regs[reg as usize] = value;
    }

    /// 32-bit half `half` (0 = low) of register `reg`.
    pub fn half(&self, reg: u8, half: u8) -> u32 {
        (self.regs[reg as usize] >> (32 * half as u32)) as u32
    }

    pub fn set_half(&mut self, reg: u8, half: u8, value: u32) {
        let shift = 32 * half as u32;
        let r = &mut self.regs[reg as usize];
        *r = (*r & !(0xFFFF_FFFFu64 << shift)) | ((value as u64) << shift);
    }

    pub fn byte(&self, reg: u8, index: usize) -> u8 {
        (self.regs[reg as usize] >> (8 * index)) as u8
    }

    fn set_byte(&mut self, reg: u8, index: usize, value: u8) {
        let shift = 8 * index;
        let r = &mut self.regs[reg as usize];
        *r = (*r & !(0xFFu64 << shift)) | ((value as u64) << shift);
    }
}

/// Flat byte-addressed external memory.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct MemoryImage {
    bytes: Vec<u8>,
}

impl MemoryImage {
    pub fn zeroed(size: usize) -> Self {
        MemoryImage { bytes: vec![0; size] }
    }

    pub fn from_bytes(bytes: Vec<u8>) -> Self {
        MemoryImage { bytes }
    }

    pub fn len(&self) -> usize {
        self.bytes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bytes.is_empty()
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.bytes
    }

    pub fn bytes_mut(&mut self) -> &mut [u8] {
        &mut self.bytes
    }

    fn range(&self, addr: u64, len: u64) -> Result<std::ops::Range<usize>, SimErrorKind> {
        let size = self.bytes.len() as u64;
        match addr.checked_add(len) {
            Some(end) if end <= size => Ok(addr as usize..end as usize),
            _ => Err(SimErrorKind::MemoryOutOfBounds { addr, len, size }),
        }
    }

    pub fn read_u64(&self, addr: u64) -> Result<u64, SimErrorKind> {
        let r = self.range(addr, 8)?;
        Ok(u64::from_le_bytes(self.bytes[r].try_into().unwrap()))
    }

    pub fn write_u64(&mut self, addr: u64, value: u64) -> Result<(), SimErrorKind> {
        let r = self.range(addr, 8)?;
        self.bytes[r].copy_from_slice(&value.to_le_bytes());
        Ok(())
    }
}

fn check_group(first: u8, count: u8) -> Result<(), SimErrorKind> {
    if count == 0 || count > MAX_GROUP {
        return Err(SimErrorKind::BadGroupSize(count));
    }
    if first as usize + count as usize > VREGS {
        return Err(SimErrorKind::RegisterOutOfRange { first, count });
    }
    Ok(())
}

/// Target byte of the last low-nibble DC.F write, if the previous
/// instruction was such a write.
type NibbleLatch = Option<(u8, u8, u8)>;

pub(super) struct Machine {
    vrf: VectorRegisterFile,
    tile: DimcTileState,
    memory: MemoryImage,
    dimc: DimcConfig,
    latch: NibbleLatch,
}

impl Machine {
    pub fn new(dimc: DimcConfig, memory: MemoryImage) -> Self {
        Machine { vrf: VectorRegisterFile::default(), tile: DimcTileState::new(), memory, dimc, latch: None }
    }

    pub fn into_parts(self) -> (VectorRegisterFile, DimcTileState, MemoryImage) {
        (self.vrf, self.tile, self.memory)
    }

    fn gather(&self, vs1: u8, nvec: u8) -> Result<SectorData, SimErrorKind> {
        check_group(vs1, nvec)?;
        let mut data = [0u64; SLICES_PER_SECTOR];
        for (i, slot) in data.iter_mut().enumerate().take(nvec as usize) {
            *slot = self.vrf.get(vs1 + i as u8);
        }
        Ok(data)
    }

    pub fn step(&mut self, instr: &Instr) -> Result<(), SimErrorKind> {
        let latch = self.latch.take();
        match *instr {
            Instr::VLoad { vd, nregs, addr } => {
                check_group(vd, nregs)?;
                for i in 0..nregs {
                    let v = self.memory.read_u64(addr + 8 * i as u64)?;
                    self.vrf.set(vd + i, v);
                }
            }
            Instr::VStore { vs, nregs, addr } => {
                check_group(vs, nregs)?;
                for i in 0..nregs {
                    self.memory.write_u64(addr + 8 * i as u64, self.vrf.get(vs + i))?;
                }
            }
            Instr::VMove { vd, vs } => {
                check_group(vd, 1)?;
                check_group(vs, 1)?;
                self.vrf.set(vd, self.vrf.get(vs));
            }
            Instr::Custom(c) => {
                c.validate()?;
                match c {
                    CustomInstruction::DlI { vs1, nvec, sec, mask } => {
                        let data = self.gather(vs1, nvec)?;
                        self.tile.load_input_sector(sec as usize, &data, mask)?;
                    }
                    CustomInstruction::DlM { vs1, nvec, sec, mask, m_row } => {
                        let data = self.gather(vs1, nvec)?;
                        self.tile.load_memory_row(m_row as usize, sec as usize, &data, mask)?;
                    }
                    CustomInstruction::DcP { vs1, vd, sh, dh, m_row } => {
                        let incoming = PartialSum::from_word(self.vrf.half(vs1, sh));
                        let p = self.tile.compute_row(m_row as usize, self.dimc.precision, incoming)?;
                        self.vrf.set_half(vd, dh, p.to_word());
                    }
                    CustomInstruction::DcF { vs1, vd, sh, dh, m_row, bidx } => {
                        let incoming = PartialSum::from_word(self.vrf.half(vs1, sh));
                        let q = self.tile.compute_row_final(
                            m_row as usize,
                            self.dimc.precision,
                            incoming,
                            self.dimc.quant,
                        )?;
                        let target = (vd, dh, bidx);
                        let byte_index = 4 * dh as usize + bidx as usize;
                        if latch == Some(target) {
                            let low = self.vrf.byte(vd, byte_index) & 0x0F;
                            self.vrf.set_byte(vd, byte_index, low | (q << 4));
                        } else {
                            // Low nibble first; the high half stays zero until paired.
                            self.vrf.set_byte(vd, byte_index, q);
                            self.latch = Some(target);
                        }
                    }
                }
            }
        }
        Ok(())
    }
}
