//! Encoding of the four DIMC instructions in the RISC-V custom-0 opcode space.
//!
//! Word layout (bit ranges inclusive):
//!
//! | field   | DL.I    | DL.M    | DC.P    | DC.F    |
//! |---------|---------|---------|---------|---------|
//! | opcode  | 6:0     | 6:0     | 6:0     | 6:0     |
//! | vd      | -       | -       | 11:7    | 11:7    |
//! | m_row   | -       | 11:7    | 26:22   | 26:22   |
//! | funct3  | 14:12 = 000 | 001 | 010     | 011     |
//! | vs1     | 19:15   | 19:15   | 19:15   | 19:15   |
//! | nvec-1  | 21:20   | 21:20   | -       | -       |
//! | sec     | 23:22   | 23:22   | -       | -       |
//! | mask    | 28:25   | 28:25   | -       | -       |
//! | sh      | -       | -       | 20      | 20      |
//! | dh      | -       | -       | 21      | 21      |
//! | bidx    | -       | -       | -       | 28:27   |
//!
//! Every bit not listed for a variant is reserved and must be zero.

use std::fmt;

use thiserror::Error;

pub const CUSTOM0_OPCODE: u32 = 0b000_1011;

const FUNCT3_DL_I: u32 = 0b000;
const FUNCT3_DL_M: u32 = 0b001;
const FUNCT3_DC_P: u32 = 0b010;
const FUNCT3_DC_F: u32 = 0b011;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct EncodedWord(pub u32);

impl fmt::Display for EncodedWord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:#010x}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CustomInstruction {
    /// Load `nvec` registers starting at `vs1` into input-buffer sector `sec`.
    DlI { vs1: u8, nvec: u8, sec: u8, mask: u8 },
    /// Load `nvec` registers starting at `vs1` into sector `sec` of weight row `m_row`.
    DlM { vs1: u8, nvec: u8, sec: u8, mask: u8, m_row: u8 },
    /// Compute against `m_row`, chaining the partial from half `sh` of `vs1` into half `dh` of `vd`.
    DcP { vs1: u8, vd: u8, sh: u8, dh: u8, m_row: u8 },
    /// As `DcP`, then ReLU/quantize and write one nibble into byte `bidx` of half `dh` of `vd`.
    DcF { vs1: u8, vd: u8, sh: u8, dh: u8, m_row: u8, bidx: u8 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("field {field} = {value} out of range 0..={max}")]
pub struct FieldError {
    pub field: &'static str,
    pub value: u32,
    pub max: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum DecodeError {
    #[error("opcode {0:#09b} is not custom-0")]
    NotCustom0(u32),
    #[error("unknown funct3 {0:#05b}")]
    UnknownFunct3(u32),
    #[error("reserved bits set: {0:#010x}")]
    ReservedBitsSet(u32),
    #[error(transparent)]
    InvalidField(#[from] FieldError),
}

fn check(field: &'static str, value: u8, max: u32) -> Result<(), FieldError> {
    if (value as u32) <= max {
        Ok(())
    } else {
        Err(FieldError { field, value: value as u32, max })
    }
}

fn check_nvec(nvec: u8) -> Result<(), FieldError> {
    if (1..=4).contains(&nvec) {
        Ok(())
    } else {
        Err(FieldError { field: "nvec", value: nvec as u32, max: 4 })
    }
}

fn bits(word: u32, lo: u32, width: u32) -> u8 {
    ((word >> lo) & ((1 << width) - 1)) as u8
}

impl CustomInstruction {
    pub fn mnemonic(&self) -> &'static str {
        match self {
            CustomInstruction::DlI { .. } => "dl.i",
            CustomInstruction::DlM { .. } => "dl.m",
            CustomInstruction::DcP { .. } => "dc.p",
            CustomInstruction::DcF { .. } => "dc.f",
        }
    }

    /// Range-check every field. A load's mask may only flag slices that
    /// `nvec` actually supplies.
    pub fn validate(&self) -> Result<(), FieldError> {
        match *self {
            CustomInstruction::DlI { vs1, nvec, sec, mask } => {
                check("vs1", vs1, 31)?;
                check_nvec(nvec)?;
                check("sec", sec, 3)?;
                check("mask", mask, (1 << nvec) - 1)
            }
            CustomInstruction::DlM { vs1, nvec, sec, mask, m_row } => {
                check("vs1", vs1, 31)?;
                check_nvec(nvec)?;
                check("sec", sec, 3)?;
                check("mask", mask, (1 << nvec) - 1)?;
                check("m_row", m_row, 31)
            }
            CustomInstruction::DcP { vs1, vd, sh, dh, m_row } => {
                check("vs1", vs1, 31)?;
                check("vd", vd, 31)?;
                check("sh", sh, 1)?;
                check("dh", dh, 1)?;
                check("m_row", m_row, 31)
            }
            CustomInstruction::DcF { vs1, vd, sh, dh, m_row, bidx } => {
                check("vs1", vs1, 31)?;
                check("vd", vd, 31)?;
                check("sh", sh, 1)?;
                check("dh", dh, 1)?;
                check("m_row", m_row, 31)?;
                check("bidx", bidx, 3)
            }
        }
    }

    pub fn encode(&self) -> Result<EncodedWord, FieldError> {
        self.validate()?;
        let f = |v: u8, lo: u32| (v as u32) << lo;
        let word = match *self {
            CustomInstruction::DlI { vs1, nvec, sec, mask } => {
                FUNCT3_DL_I << 12 | f(vs1, 15) | f(nvec - 1, 20) | f(sec, 22) | f(mask, 25)
            }
            CustomInstruction::DlM { vs1, nvec, sec, mask, m_row } => {
                f(m_row, 7) | FUNCT3_DL_M << 12 | f(vs1, 15) | f(nvec - 1, 20) | f(sec, 22) | f(mask, 25)
            }
            CustomInstruction::DcP { vs1, vd, sh, dh, m_row } => {
                f(vd, 7) | FUNCT3_DC_P << 12 | f(vs1, 15) | f(sh, 20) | f(dh, 21) | f(m_row, 22)
            }
            CustomInstruction::DcF { vs1, vd, sh, dh, m_row, bidx } => {
                f(vd, 7) | FUNCT3_DC_F << 12 | f(vs1, 15) | f(sh, 20) | f(dh, 21) | f(m_row, 22) | f(bidx, 27)
            }
        };
        Ok(EncodedWord(word | CUSTOM0_OPCODE))
    }

    pub fn decode(word: EncodedWord) -> Result<Self, DecodeError> {
        let w = word.0;
        let opcode = w & 0x7F;
        if opcode != CUSTOM0_OPCODE {
            return Err(DecodeError::NotCustom0(opcode));
        }
        let funct3 = (w >> 12) & 0b111;
        // Bits each variant defines, including opcode and funct3.
        let used: u32 = match funct3 {
            FUNCT3_DL_I => 0x1EFF_F07F,
            FUNCT3_DL_M => 0x1EFF_FFFF,
            FUNCT3_DC_P => 0x07FF_FFFF,
            FUNCT3_DC_F => 0x1FFF_FFFF,
            other => return Err(DecodeError::UnknownFunct3(other)),
        };
        if w & !used != 0 {
            return Err(DecodeError::ReservedBitsSet(w & !used));
        }
        let vs1 = bits(w, 15, 5);
        let instr = match funct3 {
            FUNCT3_DL_I => {
                CustomInstruction::DlI { vs1, nvec: bits(w, 20, 2) + 1, sec: bits(w, 22, 2), mask: bits(w, 25, 4) }
            }
            FUNCT3_DL_M => CustomInstruction::DlM {
                vs1,
                nvec: bits(w, 20, 2) + 1,
                sec: bits(w, 22, 2),
                mask: bits(w, 25, 4),
                m_row: bits(w, 7, 5),
            },
            FUNCT3_DC_P => CustomInstruction::DcP {
                vs1,
                vd: bits(w, 7, 5),
                sh: bits(w, 20, 1),
                dh: bits(w, 21, 1),
                m_row: bits(w, 22, 5),
            },
            _ => CustomInstruction::DcF {
                vs1,
                vd: bits(w, 7, 5),
                sh: bits(w, 20, 1),
                dh: bits(w, 21, 1),
                m_row: bits(w, 22, 5),
                bidx: bits(w, 27, 2),
            },
        };
        instr.validate()?;
        Ok(instr)
    }
}

/// Serialize words as a little-endian byte stream.
pub fn words_to_bytes(words: &[EncodedWord]) -> Vec<u8> {
    words.iter().flat_map(|w| w.0.to_le_bytes()).collect()
}

/// Parse a little-endian byte stream; `None` if the length is not a multiple of four.
pub fn words_from_bytes(bytes: &[u8]) -> Option<Vec<EncodedWord>> {
    if !bytes.len().is_multiple_of(4) {
        return None;
    }
    Some(bytes.chunks_exact(4).map(|c| EncodedWord(u32::from_le_bytes([c[0], c[1], c[2], c[3]]))).collect())
}
