use rand::Rng;

use crate::sim::{execute, flatten, ExecOptions, MemoryImage, SimError, SimOutcome, TimingModel};
use crate::tile::PartialSum;

use super::{LayerDescriptor, LayerPrecision, LoweredLayer, MapError, OutputFlow};

/// Tensor contents for one layer. `input` is `[ich][h][w]` and `weights`
/// is `[och][ich][kh][kw]`, both row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerData {
    pub input: Vec<i32>,
    pub weights: Vec<i32>,
}

fn range(bits: u32, signed: bool) -> (i32, i32) {
    if signed {
        (-(1 << (bits - 1)), (1 << (bits - 1)) - 1)
    } else {
        (0, (1 << bits) - 1)
    }
}

impl LayerData {
    /// Uniformly random values spanning the layer's precision.
    pub fn random<R: Rng + ?Sized>(layer: &LayerDescriptor, rng: &mut R) -> Self {
        let LayerPrecision { bits, input_signed, weight_signed } = layer.precision;
        let (ilo, ihi) = range(bits, input_signed);
        let (wlo, whi) = range(bits, weight_signed);
        LayerData {
            input: (0..layer.ich * layer.h * layer.w).map(|_| rng.gen_range(ilo..=ihi)).collect(),
            weights: (0..layer.och * layer.kernel_elements()).map(|_| rng.gen_range(wlo..=whi)).collect(),
        }
    }

    pub fn validate(&self, layer: &LayerDescriptor) -> Result<(), MapError> {
        let p = layer.precision;
        let checks = [
            ("input", &self.input, layer.ich * layer.h * layer.w, p.input_signed),
            ("weights", &self.weights, layer.och * layer.kernel_elements(), p.weight_signed),
        ];
        for (what, values, expected, signed) in checks {
            if values.len() != expected {
                return Err(MapError::DataShape { name: layer.name.clone(), what, got: values.len(), expected });
            }
            let (min, max) = range(p.bits.min(31), signed);
            if let Some((index, &value)) = values.iter().enumerate().find(|(_, v)| !(min..=max).contains(*v)) {
                return Err(MapError::DataRange { name: layer.name.clone(), what, index, value, min, max });
            }
        }
        Ok(())
    }

    /// Flattened receptive field of output position `(oy, ox)`; padding reads as zero.
    pub fn patch(&self, layer: &LayerDescriptor, oy: usize, ox: usize) -> Vec<i32> {
        let mut out = Vec::with_capacity(layer.kernel_elements());
        for c in 0..layer.ich {
            for ky in 0..layer.kh {
                for kx in 0..layer.kw {
                    let iy = (oy * layer.stride + ky).checked_sub(layer.padding).filter(|&y| y < layer.h);
                    let ix = (ox * layer.stride + kx).checked_sub(layer.padding).filter(|&x| x < layer.w);
                    out.push(match (iy, ix) {
                        (Some(y), Some(x)) => self.input[(c * layer.h + y) * layer.w + x],
                        _ => 0,
                    });
                }
            }
        }
        out
    }

    pub fn kernel(&self, layer: &LayerDescriptor, k: usize) -> &[i32] {
        let n = layer.kernel_elements();
        &self.weights[k * n..(k + 1) * n]
    }
}

/// Layer results in `[och][out_h][out_w]` order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LayerOutput {
    /// Sign-extended 24-bit partial sums.
    Partials(Vec<i32>),
    /// Quantized unsigned outputs.
    Quantized(Vec<u8>),
}

impl LayerOutput {
    pub fn len(&self) -> usize {
        match self {
            LayerOutput::Partials(v) => v.len(),
            LayerOutput::Quantized(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Straightforward convolution over `data`, with the tile's 24-bit
    /// wraparound and quantization applied to the total.
    pub fn reference(layer: &LayerDescriptor, data: &LayerData, flow: OutputFlow) -> LayerOutput {
        let (oh, ow) = (layer.out_h(), layer.out_w());
        let mut sums = Vec::with_capacity(layer.och * oh * ow);
        let patches: Vec<Vec<i32>> = (0..oh * ow).map(|p| data.patch(layer, p / ow, p % ow)).collect();
        for k in 0..layer.och {
            let kernel = data.kernel(layer, k);
            for patch in &patches {
                let s: i64 = kernel.iter().zip(patch).map(|(&w, &x)| w as i64 * x as i64).sum();
                sums.push(PartialSum::wrapping(s));
            }
        }
        match flow {
            OutputFlow::Partial => LayerOutput::Partials(sums.into_iter().map(PartialSum::value).collect()),
            OutputFlow::Final(q) => LayerOutput::Quantized(sums.into_iter().map(|s| q.apply(s)).collect()),
        }
    }
}

fn put_element(bytes: &mut [u8], index: usize, bits: usize, raw: u8) {
    let bit = index * bits;
    bytes[bit / 8] |= raw << (bit % 8);
}

/// Memory image holding the layer's weights and pre-arranged input patches.
pub fn build_memory(lowered: &LoweredLayer, data: &LayerData) -> Result<MemoryImage, MapError> {
    let layer = &lowered.layer;
    data.validate(layer)?;
    let layout = &lowered.layout;
    let width = lowered.plan.mode.width;
    let bits = width.bits() as usize;
    let mut mem = MemoryImage::zeroed(layout.total_bytes);
    let bytes = mem.bytes_mut();
    let mut write_record = |base: usize, values: &[i32]| {
        for (t, chunk) in lowered.plan.chunks.iter().enumerate() {
            let start = base + layout.chunk_offsets[t];
            let dst = &mut bytes[start..start + chunk.bytes()];
            for (i, &v) in values[chunk.first_element..chunk.first_element + chunk.elements].iter().enumerate() {
                put_element(dst, i, bits, width.encode(v));
            }
        }
    };
    for k in 0..layer.och {
        write_record(layout.weight_addr(k, 0), data.kernel(layer, k));
    }
    let ow = layer.out_w();
    for p in 0..layer.positions() {
        write_record(layout.patch_addr(p, 0), &data.patch(layer, p / ow, p % ow));
    }
    Ok(mem)
}

/// Read the outputs a lowered layer left in `memory`.
pub fn extract_outputs(lowered: &LoweredLayer, memory: &MemoryImage) -> LayerOutput {
    let layer = &lowered.layer;
    let plan = &lowered.plan;
    let positions = layer.positions();
    let bytes = memory.as_bytes();
    let mut partials = Vec::new();
    let mut quantized = Vec::new();
    for k in 0..layer.och {
        let (g, j) = (k / plan.kernels_per_group, k % plan.kernels_per_group);
        for p in 0..positions {
            let base = lowered.layout.output_addr(g, p);
            match lowered.flow {
                OutputFlow::Partial => {
                    let at = base + 4 * j;
                    let word = u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap());
                    partials.push(PartialSum::from_word(word).value());
                }
                OutputFlow::Final(_) => {
                    let byte = bytes[base + j / 2];
                    quantized.push(if j % 2 == 0 { byte & 0x0F } else { byte >> 4 });
                }
            }
        }
    }
    match lowered.flow {
        OutputFlow::Partial => LayerOutput::Partials(partials),
        OutputFlow::Final(_) => LayerOutput::Quantized(quantized),
    }
}

#[derive(Debug, Clone)]
pub struct LayerRun {
    pub outcome: SimOutcome,
    pub output: LayerOutput,
}

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error(transparent)]
    Map(#[from] MapError),
    #[error(transparent)]
    Sim(#[from] SimError),
}

/// Execute the full instruction stream of a lowered layer on `data`.
pub fn run_layer(
    lowered: &LoweredLayer,
    data: &LayerData,
    timing: &TimingModel,
    opts: &ExecOptions,
) -> Result<LayerRun, RunError> {
    let memory = build_memory(lowered, data)?;
    let program = flatten(&lowered.segments);
    let outcome = execute(&program, timing, lowered.dimc, memory, opts)?;
    let output = extract_outputs(lowered, &outcome.memory);
    Ok(LayerRun { outcome, output })
}
