//! Functional model of the DIMC tile.
//!
//! The tile holds a 32 x 1024-bit weight array and a 1024-bit input buffer.
//! A compute operation multiplies every element of the input buffer with the
//! matching element of one weight row and accumulates the products into a
//! 24-bit partial sum. Timing is not modeled here; see [`crate::sim`].
//!
//! Element `k` of a 1024-bit vector occupies bits `[k*w, k*w + w)` where `w`
//! is the element width, counted little-endian from bit 0 of word 0.

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const ROWS: usize = 32;
pub const ROW_BITS: usize = 1024;
pub const SECTORS: usize = 4;
pub const SECTOR_BITS: usize = 256;
/// Width of one VRF register, and therefore of one masked slice of a sector.
pub const SLICE_BITS: usize = 64;
pub const SLICES_PER_SECTOR: usize = SECTOR_BITS / SLICE_BITS;

const WORDS: usize = ROW_BITS / 64;
const PARTIAL_BITS: u32 = 24;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum TileError {
    #[error("memory row {0} out of range 0..{ROWS}")]
    RowOutOfRange(usize),
    #[error("sector {0} out of range 0..{SECTORS}")]
    SectorOutOfRange(usize),
    #[error("valid mask {0:#06b} has bits above the four slice bits")]
    MaskOutOfRange(u8),
    #[error("element width {0} is not one of 1, 2, 4")]
    UnsupportedWidth(u32),
}

/// One 256-bit sector payload as four 64-bit slices, slice 0 first.
pub type SectorData = [u64; SLICES_PER_SECTOR];

/// A 1024-bit vector: a weight row or the input buffer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct Bits1024(pub [u64; WORDS]);

impl Bits1024 {
    pub const ZERO: Self = Bits1024([0; WORDS]);

    pub fn sector(&self, sector: usize) -> SectorData {
        let base = sector * SLICES_PER_SECTOR;
        let mut out = [0u64; SLICES_PER_SECTOR];
        out.copy_from_slice(&self.0[base..base + SLICES_PER_SECTOR]);
        out
    }

    fn write_masked(&mut self, sector: usize, data: &SectorData, mask: u8) {
        let base = sector * SLICES_PER_SECTOR;
        for (i, slice) in data.iter().enumerate() {
            if mask & (1 << i) != 0 {
                self.0[base + i] = *slice;
            }
        }
    }

    /// Raw (undecoded) bits of element `index` at the given width.
    pub fn element(&self, index: usize, width: ElementWidth) -> u8 {
        let w = width.bits() as usize;
        let bit = index * w;
        ((self.0[bit / 64] >> (bit % 64)) & width.mask()) as u8
    }

    pub fn set_element(&mut self, index: usize, width: ElementWidth, raw: u8) {
        let w = width.bits() as usize;
        let bit = index * w;
        let word = &mut self.0[bit / 64];
        let shift = bit % 64;
        *word = (*word & !(width.mask() << shift)) | ((raw as u64 & width.mask()) << shift);
    }
}

/// Bits per element in the DIMC datapath.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "u32", into = "u32")]
pub enum ElementWidth {
    W1,
    W2,
    W4,
}

impl ElementWidth {
    pub fn bits(self) -> u32 {
        match self {
            ElementWidth::W1 => 1,
            ElementWidth::W2 => 2,
            ElementWidth::W4 => 4,
        }
    }

    fn mask(self) -> u64 {
        (1u64 << self.bits()) - 1
    }

    pub fn elements_per_row(self) -> usize {
        ROW_BITS / self.bits() as usize
    }

    /// Inclusive range of values an element can hold.
    pub fn value_range(self, signed: bool) -> (i32, i32) {
        let b = self.bits();
        if signed {
            (-(1 << (b - 1)), (1 << (b - 1)) - 1)
        } else {
            (0, (1 << b) - 1)
        }
    }

    /// Interpret `raw` bits as an element value.
    pub fn decode(self, raw: u8, signed: bool) -> i32 {
        let b = self.bits();
        let v = (raw as u64 & self.mask()) as i32;
        if signed && v >> (b - 1) != 0 {
            v - (1 << b)
        } else {
            v
        }
    }

    /// Two's complement (or plain unsigned) bit pattern of `value`, truncated to the width.
    pub fn encode(self, value: i32) -> u8 {
        (value as u64 & self.mask()) as u8
    }
}

impl TryFrom<u32> for ElementWidth {
    type Error = TileError;

    fn try_from(bits: u32) -> Result<Self, TileError> {
        match bits {
            1 => Ok(ElementWidth::W1),
            2 => Ok(ElementWidth::W2),
            4 => Ok(ElementWidth::W4),
            other => Err(TileError::UnsupportedWidth(other)),
        }
    }
}

impl From<ElementWidth> for u32 {
    fn from(w: ElementWidth) -> u32 {
        w.bits()
    }
}

/// Element width plus independent signedness of each operand side.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PrecisionMode {
    pub width: ElementWidth,
    /// Signedness of input-buffer (activation) elements.
    pub input_signed: bool,
    /// Signedness of weight-row elements.
    pub weight_signed: bool,
}

impl PrecisionMode {
    pub fn signed(width: ElementWidth) -> Self {
        PrecisionMode { width, input_signed: true, weight_signed: true }
    }

    pub fn unsigned(width: ElementWidth) -> Self {
        PrecisionMode { width, input_signed: false, weight_signed: false }
    }

    pub fn elements_per_row(&self) -> usize {
        self.width.elements_per_row()
    }
}

impl Default for PrecisionMode {
    fn default() -> Self {
        PrecisionMode::signed(ElementWidth::W4)
    }
}

/// A 24-bit two's complement partial sum. Arithmetic wraps modulo 2^24.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct PartialSum(i32);

impl PartialSum {
    pub const ZERO: Self = PartialSum(0);
    pub const MIN: i32 = -(1 << (PARTIAL_BITS - 1));
    pub const MAX: i32 = (1 << (PARTIAL_BITS - 1)) - 1;

    /// Reduce an arbitrary integer into the signed 24-bit range.
    pub fn wrapping(value: i64) -> Self {
        let shift = 64 - PARTIAL_BITS;
        PartialSum(((value << shift) >> shift) as i32)
    }

    /// Sign-extend the low 24 bits of a 32-bit VRF word.
    pub fn from_word(word: u32) -> Self {
        PartialSum::wrapping(word as i32 as i64)
    }

    pub fn value(self) -> i32 {
        self.0
    }

    /// The partial padded to 32 bits for VRF alignment (sign-extended).
    pub fn to_word(self) -> u32 {
        self.0 as u32
    }

    pub fn wrapping_add(self, rhs: i64) -> Self {
        PartialSum::wrapping(self.0 as i64 + rhs)
    }
}

/// Requantization applied by the final compute instruction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct QuantConfig {
    pub right_shift: u32,
    pub out_bits: ElementWidth,
}

impl QuantConfig {
    /// ReLU, arithmetic right shift, then unsigned saturation to `out_bits`.
    pub fn apply(&self, partial: PartialSum) -> u8 {
        let relu = partial.value().max(0) as i64;
        let shifted = relu >> self.right_shift.min(63);
        let ceiling = (1i64 << self.out_bits.bits()) - 1;
        shifted.min(ceiling) as u8
    }
}

impl Default for QuantConfig {
    fn default() -> Self {
        QuantConfig { right_shift: 4, out_bits: ElementWidth::W4 }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DimcTileState {
    memory: Box<[Bits1024; ROWS]>,
    input: Bits1024,
}

impl Default for DimcTileState {
    fn default() -> Self {
        DimcTileState { memory: Box::new([Bits1024::ZERO; ROWS]), input: Bits1024::ZERO }
    }
}

fn check_sector(sector: usize) -> Result<(), TileError> {
    if sector < SECTORS {
        Ok(())
    } else {
        Err(TileError::SectorOutOfRange(sector))
    }
}

fn check_row(row: usize) -> Result<(), TileError> {
    if row < ROWS {
        Ok(())
    } else {
        Err(TileError::RowOutOfRange(row))
    }
}

fn check_mask(mask: u8) -> Result<(), TileError> {
    if mask < 1 << SLICES_PER_SECTOR {
        Ok(())
    } else {
        Err(TileError::MaskOutOfRange(mask))
    }
}

impl DimcTileState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn input_buffer(&self) -> &Bits1024 {
        &self.input
    }

    pub fn row(&self, row: usize) -> Result<&Bits1024, TileError> {
        check_row(row)?;
        Ok(&self.memory[row])
    }

    /// Write slice `i` of input sector `sector` from `data[i]` for every set bit `i` of `mask`.
    pub fn load_input_sector(&mut self, sector: usize, data: &SectorData, mask: u8) -> Result<(), TileError> {
        check_sector(sector)?;
        check_mask(mask)?;
        self.input.write_masked(sector, data, mask);
        Ok(())
    }

    /// Same slice/mask rule as [`Self::load_input_sector`], applied to one window of a weight row.
    pub fn load_memory_row(&mut self, row: usize, sector: usize, data: &SectorData, mask: u8) -> Result<(), TileError> {
        check_row(row)?;
        check_sector(sector)?;
        check_mask(mask)?;
        self.memory[row].write_masked(sector, data, mask);
        Ok(())
    }

    /// In-memory MAC between the input buffer and `row`, added to `incoming`.
    pub fn compute_row(&self, row: usize, mode: PrecisionMode, incoming: PartialSum) -> Result<PartialSum, TileError> {
        check_row(row)?;
        let dot = dot(&self.input, &self.memory[row], mode);
        Ok(incoming.wrapping_add(dot))
    }

    /// [`Self::compute_row`] followed by ReLU and requantization to a 4-bit nibble.
    pub fn compute_row_final(
        &self,
        row: usize,
        mode: PrecisionMode,
        incoming: PartialSum,
        quant: QuantConfig,
    ) -> Result<u8, TileError> {
        let partial = self.compute_row(row, mode, incoming)?;
        Ok(quant.apply(partial) & 0xF)
    }
}

fn dot(input: &Bits1024, weights: &Bits1024, mode: PrecisionMode) -> i64 {
    let w = mode.width.bits();
    let per_word = 64 / w;
    let mask = mode.width.mask();
    let mut acc = 0i64;
    for (&a, &b) in input.0.iter().zip(weights.0.iter()) {
        if a == 0 || b == 0 {
            continue;
        }
        for e in 0..per_word {
            let shift = e * w;
            let x = mode.width.decode(((a >> shift) & mask) as u8, mode.input_signed);
            let y = mode.width.decode(((b >> shift) & mask) as u8, mode.weight_signed);
            acc += (x * y) as i64;
        }
    }
    acc
}
