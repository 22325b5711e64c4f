//! Acceptance checks. Runs without the libtest harness and prints one
//! PASS/FAIL line per criterion; exits non-zero if any criterion fails.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use dimc_core::isa::CustomInstruction;
use dimc_core::mapper::{
    lower, plan_mapping, run_layer, LayerData, LayerDescriptor, LayerOutput, LayerPrecision, MapError, OutputFlow,
};
use dimc_core::metrics::{ans, speedup, PerfReport, DEFAULT_AREA_RATIO};
use dimc_core::pipeline::{analyze_layer, sweep, AnalysisConfig, SweepMode};
use dimc_core::sim::{ClassCounts, ExecOptions, TimingModel};
use dimc_core::tile::{ElementWidth, PrecisionMode, QuantConfig};
use dimc_core::workload::WorkloadFile;

// Pinned tolerances and limits.
const ORACLE_LAYERS: usize = 200;
const ORACLE_BUDGET: Duration = Duration::from_secs(30);
const SWEEP_BUDGET: Duration = Duration::from_secs(10);
const CODEC_BUDGET: Duration = Duration::from_secs(10);
const RESNET_BUDGET: Duration = Duration::from_secs(300);
const RANDOM_CODEC_CASES: usize = 1_000_000;
const METRIC_CASES: usize = 10_000;
const ANS_REL_TOL: f64 = 1e-12;
const ANS_ABS_TOL_AT_217: f64 = 1e-9;
const MIN_PEAK_GOPS: f64 = 100.0;
const MIN_COMPUTING_FRACTION: f64 = 0.5;

type Verdict = Result<String, String>;
type Criterion = (&'static str, fn() -> Verdict);

/// Nested-loop integer convolution, independent of the mapper.
fn oracle(layer: &LayerDescriptor, input: &[i32], weights: &[i32]) -> Vec<i64> {
    let oh = (layer.h + 2 * layer.padding - layer.kh) / layer.stride + 1;
    let ow = (layer.w + 2 * layer.padding - layer.kw) / layer.stride + 1;
    let mut out = Vec::with_capacity(layer.och * oh * ow);
    for k in 0..layer.och {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = 0i64;
                for c in 0..layer.ich {
                    for ky in 0..layer.kh {
                        for kx in 0..layer.kw {
                            let y = (oy * layer.stride + ky) as i64 - layer.padding as i64;
                            let x = (ox * layer.stride + kx) as i64 - layer.padding as i64;
                            if (0..layer.h as i64).contains(&y) && (0..layer.w as i64).contains(&x) {
                                let xi = input[(c * layer.h + y as usize) * layer.w + x as usize] as i64;
                                let wi = weights[((k * layer.ich + c) * layer.kh + ky) * layer.kw + kx] as i64;
                                acc += xi * wi;
                            }
                        }
                    }
                }
                out.push(acc);
            }
        }
    }
    out
}

fn wrap24(v: i64) -> i64 {
    (v + (1 << 23)).rem_euclid(1 << 24) - (1 << 23)
}

fn relu_shift_saturate(v: i64, shift: u32, out_bits: u32) -> i64 {
    (wrap24(v).max(0) >> shift).min((1 << out_bits) - 1)
}

fn span(bits: u32, signed: bool) -> (i32, i32) {
    if signed {
        (-(1 << (bits - 1)), (1 << (bits - 1)) - 1)
    } else {
        (0, (1 << bits) - 1)
    }
}

fn random_small_layer(rng: &mut ChaCha8Rng) -> LayerDescriptor {
    loop {
        let width = [ElementWidth::W1, ElementWidth::W2, ElementWidth::W4][rng.gen_range(0..3)];
        let mode = PrecisionMode { width, input_signed: rng.gen(), weight_signed: rng.gen() };
        let layer = LayerDescriptor::conv(
            rng.gen_range(1..=8),
            rng.gen_range(1..=8),
            rng.gen_range(1..=10),
            rng.gen_range(1..=10),
            rng.gen_range(1..=3),
            rng.gen_range(1..=3),
            rng.gen_range(1..=2),
            rng.gen_range(0..=1),
        )
        .with_precision(mode);
        if layer.validate().is_ok() {
            return layer;
        }
    }
}

fn functional_equivalence() -> Verdict {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0x00d1_3c01);
    let timing = TimingModel::default();
    let mut flows = [0usize; 2];
    let mut widths = [0usize; 3];
    for n in 0..ORACLE_LAYERS {
        let layer = random_small_layer(&mut rng);
        let p = layer.precision;
        let (ilo, ihi) = span(p.bits, p.input_signed);
        let (wlo, whi) = span(p.bits, p.weight_signed);
        let data = LayerData {
            input: (0..layer.ich * layer.h * layer.w).map(|_| rng.gen_range(ilo..=ihi)).collect(),
            weights: (0..layer.och * layer.ich * layer.kh * layer.kw).map(|_| rng.gen_range(wlo..=whi)).collect(),
        };
        let quant = QuantConfig { right_shift: rng.gen_range(0..4), out_bits: ElementWidth::W4 };
        let flow = if n % 2 == 0 { OutputFlow::Partial } else { OutputFlow::Final(quant) };
        flows[n % 2] += 1;
        widths[p.bits.trailing_zeros() as usize] += 1;
        let plan = plan_mapping(&layer).map_err(|e| e.to_string())?;
        let lowered = lower(&layer, &plan, flow).map_err(|e| e.to_string())?;
        let run = run_layer(&lowered, &data, &timing, &ExecOptions::default()).map_err(|e| e.to_string())?;
        let sums = oracle(&layer, &data.input, &data.weights);
        let got: Vec<i64> = match run.output {
            LayerOutput::Partials(v) => v.into_iter().map(i64::from).collect(),
            LayerOutput::Quantized(v) => v.into_iter().map(i64::from).collect(),
        };
        let want: Vec<i64> = match flow {
            OutputFlow::Partial => sums.iter().map(|&s| wrap24(s)).collect(),
            OutputFlow::Final(q) => sums.iter().map(|&s| relu_shift_saturate(s, q.right_shift, 4)).collect(),
        };
        if got != want {
            return Err(format!("layer {n} {layer:?} with {flow:?} differs from the oracle"));
        }
    }
    let elapsed = start.elapsed();
    if elapsed > ORACLE_BUDGET {
        return Err(format!("took {elapsed:?}"));
    }
    Ok(format!(
        "{ORACLE_LAYERS} layers exact ({} partial, {} final; 1/2/4-bit = {:?}) in {elapsed:.2?}",
        flows[0], flows[1], widths
    ))
}

fn peak_gops(bits: u32) -> f64 {
    2.0 * (1024 / bits) as f64 * 0.5
}

fn resnet_reports(cfg: &AnalysisConfig) -> Result<Vec<PerfReport>, String> {
    WorkloadFile::resnet50()
        .layers
        .iter()
        .map(|l| analyze_layer(l, cfg).map(|a| a.report).map_err(|e| e.to_string()))
        .collect()
}

fn throughput_ceiling() -> Verdict {
    let cfg = AnalysisConfig::default();
    let mut checked = 0;
    let mut worst: f64 = 0.0;
    let mut check = |layer: &LayerDescriptor| -> Result<(), String> {
        let a = analyze_layer(layer, &cfg).map_err(|e| e.to_string())?;
        let peak = peak_gops(a.lowered.plan.mode.width.bits());
        checked += 1;
        worst = worst.max(a.report.gops / peak);
        if a.report.gops > peak {
            return Err(format!("{} reports {} GOPS above {peak}", a.report.layer, a.report.gops));
        }
        Ok(())
    };
    for l in WorkloadFile::resnet50().layers {
        check(&l)?;
    }
    for mode in [SweepMode::Tiling, SweepMode::Grouping] {
        for v in mode.default_values() {
            check(&mode.layer(v, 16))?;
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..200 {
        check(&random_small_layer(&mut rng))?;
    }
    // large low-precision layers are the most likely to approach the bound
    for bits in [1u32, 2, 4] {
        let prec = LayerPrecision { bits, input_signed: true, weight_signed: true };
        check(&LayerDescriptor::conv(1024 / bits as usize, 32, 16, 16, 1, 1, 1, 0).with_precision(prec))?;
    }
    Ok(format!("{checked} layers, highest gops/peak = {worst:.4}"))
}

fn near_peak_utilization() -> Verdict {
    let reports = resnet_reports(&AnalysisConfig::default())?;
    let best = reports
        .iter()
        .filter(|r| r.computing > MIN_COMPUTING_FRACTION)
        .max_by(|a, b| a.gops.total_cmp(&b.gops))
        .ok_or("no compute-dominated layer")?;
    let msg = format!("{}: {:.2} GOPS, computing fraction {:.3}", best.layer, best.gops, best.computing);
    if best.gops >= MIN_PEAK_GOPS {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn metric_identities() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst: f64 = 0.0;
    for _ in 0..METRIC_CASES {
        let b: u64 = rng.gen_range(1..1u64 << 40);
        let d: u64 = rng.gen_range(1..1u64 << 40);
        let r: f64 = rng.gen_range(1e-3..1e3);
        let s = speedup(b, d).map_err(|e| e.to_string())?;
        let a = ans(s, r).map_err(|e| e.to_string())?;
        let expected = r * (b as f64) / (d as f64);
        worst = worst.max(((a - expected) / expected).abs());
    }
    if worst > ANS_REL_TOL {
        return Err(format!("relative error {worst:e}"));
    }
    let c = ClassCounts { computing: 600, loading: 300, storing: 100 };
    let report =
        PerfReport::new("x", 2, 1000, &c, 217_000, 5e8, DEFAULT_AREA_RATIO, 1, 1).map_err(|e| e.to_string())?;
    if report.speedup != 217.0 || (report.ans - 50.0).abs() > ANS_ABS_TOL_AT_217 {
        return Err(format!("speedup {} gave ans {}", report.speedup, report.ans));
    }
    Ok(format!("{METRIC_CASES} cases, max rel err {worst:.1e}; 217x -> ans {:.12}", report.ans))
}

fn degradation(mode: SweepMode, step: fn(&PerfReport) -> usize) -> Verdict {
    let start = Instant::now();
    let values = mode.default_values();
    let rows = sweep(mode, &values, 16, &AnalysisConfig::default()).map_err(|e| e.to_string())?;
    let mut steps = 0;
    for w in rows.windows(2) {
        if step(&w[1]) > step(&w[0]) {
            steps += 1;
            if w[1].speedup > w[0].speedup {
                return Err(format!(
                    "{} -> {}: speedup rose {} -> {}",
                    w[0].layer, w[1].layer, w[0].speedup, w[1].speedup
                ));
            }
        }
    }
    if let Some(r) = rows.iter().find(|r| r.speedup <= 1.0) {
        return Err(format!("{} speedup {}", r.layer, r.speedup));
    }
    let elapsed = start.elapsed();
    if elapsed > SWEEP_BUDGET {
        return Err(format!("took {elapsed:?}"));
    }
    let speedups: Vec<String> = rows.iter().map(|r| format!("{:.1}", r.speedup)).collect();
    Ok(format!("{} points, {steps} steps, speedups [{}] in {elapsed:.2?}", rows.len(), speedups.join(", ")))
}

fn codec_round_trip() -> Verdict {
    let start = Instant::now();
    let mut exhaustive = 0usize;
    let round = |i: CustomInstruction| -> Result<(), String> {
        let w = i.encode().map_err(|e| format!("{i:?}: {e}"))?;
        match CustomInstruction::decode(w) {
            Ok(back) if back == i => Ok(()),
            other => Err(format!("{i:?} -> {w} -> {other:?}")),
        }
    };
    for vs1 in 0..32u8 {
        for nvec in 1..=4u8 {
            for sec in 0..4u8 {
                for mask in 0..(1u8 << nvec) {
                    round(CustomInstruction::DlI { vs1, nvec, sec, mask })?;
                    exhaustive += 1;
                    for m_row in 0..32u8 {
                        round(CustomInstruction::DlM { vs1, nvec, sec, mask, m_row })?;
                        exhaustive += 1;
                    }
                }
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for n in 0..RANDOM_CODEC_CASES {
        let (vs1, vd, sh, dh, m_row) = (
            rng.gen_range(0..32),
            rng.gen_range(0..32),
            rng.gen_range(0..2),
            rng.gen_range(0..2),
            rng.gen_range(0..32),
        );
        let i = if n % 2 == 0 {
            CustomInstruction::DcP { vs1, vd, sh, dh, m_row }
        } else {
            CustomInstruction::DcF { vs1, vd, sh, dh, m_row, bidx: rng.gen_range(0..4) }
        };
        round(i)?;
    }
    let elapsed = start.elapsed();
    if elapsed > CODEC_BUDGET {
        return Err(format!("took {elapsed:?}"));
    }
    Ok(format!("{exhaustive} exhaustive DL.I/DL.M + {RANDOM_CODEC_CASES} random DC.P/DC.F in {elapsed:.2?}"))
}

/// Layers whose last group holds an odd number of kernels. All-ones data
/// makes every output min(kernel elements, 15), so each nibble is known.
fn packing_rule() -> Verdict {
    let cases = [
        // three kernels in one untiled group
        LayerDescriptor::conv(4, 3, 2, 2, 1, 1, 1, 0),
        // 6 rows per kernel: groups of 5 kernels, the last one partial (3)
        LayerDescriptor::fc(1400, 8),
        // 33 kernels: second group holds one
        LayerDescriptor::conv(8, 33, 2, 1, 1, 1, 1, 0),
    ];
    let quant = QuantConfig { right_shift: 0, out_bits: ElementWidth::W4 };
    let mut checked_bytes = 0;
    for layer in &cases {
        let plan = plan_mapping(layer).map_err(|e| e.to_string())?;
        let lowered = lower(layer, &plan, OutputFlow::Final(quant)).map_err(|e| e.to_string())?;
        let data = LayerData {
            input: vec![1; layer.ich * layer.h * layer.w],
            weights: vec![1; layer.och * layer.kernel_elements()],
        };
        let run =
            run_layer(&lowered, &data, &TimingModel::default(), &ExecOptions::default()).map_err(|e| e.to_string())?;
        let mem = run.outcome.memory.as_bytes();
        for g in 0..plan.group_count {
            let kernels = plan.kernels_in_group(g, layer.och);
            for p in 0..layer.positions() {
                let base = lowered.layout.output_addr(g, p);
                let bytes = &mem[base..base + kernels.div_ceil(2)];
                let nibble = layer.kernel_elements().min(15) as u8;
                let mut want = vec![nibble << 4 | nibble; kernels / 2];
                if kernels % 2 == 1 {
                    want.push(nibble);
                }
                if bytes != want.as_slice() {
                    return Err(format!("{layer:?} group {g} position {p}: {bytes:02x?}, expected {want:02x?}"));
                }
                checked_bytes += bytes.len();
            }
        }
        if plan.group_count * plan.kernels_per_group == layer.och && layer.och % 2 == 0 {
            return Err(format!("{layer:?} has no odd group"));
        }
    }
    Ok(format!("{} layers, {checked_bytes} output bytes match, trailing half-byte zero", cases.len()))
}

fn constraint_enforcement() -> Verdict {
    for bits in [5u32, 8, 16] {
        let l = LayerDescriptor::fc(16, 16).named("wide").with_precision(LayerPrecision {
            bits,
            input_signed: true,
            weight_signed: true,
        });
        match plan_mapping(&l) {
            Err(MapError::NotDimcEligible { bits: b, .. }) if b == bits => {}
            other => return Err(format!("{bits}-bit layer gave {other:?}")),
        }
    }
    for l in [
        LayerDescriptor::conv(0, 4, 4, 4, 1, 1, 1, 0),
        LayerDescriptor::conv(4, 4, 2, 2, 3, 3, 1, 0),
        LayerDescriptor::conv(4, 4, 4, 4, 1, 1, 0, 0),
        LayerDescriptor::fc(256 * 40, 1),
    ] {
        if !matches!(plan_mapping(&l), Err(MapError::Malformed { .. })) {
            return Err(format!("{l:?} accepted"));
        }
    }
    let start = Instant::now();
    let reports = resnet_reports(&AnalysisConfig::default())?;
    let elapsed = start.elapsed();
    if reports.len() != 54 {
        return Err(format!("{} rows", reports.len()));
    }
    if let Some(r) = reports.iter().find(|r| r.speedup <= 1.0) {
        return Err(format!("{} speedup {}", r.layer, r.speedup));
    }
    if elapsed > RESNET_BUDGET {
        return Err(format!("ResNet-50 took {elapsed:?}"));
    }
    let min = reports.iter().map(|r| r.speedup).fold(f64::INFINITY, f64::min);
    let max = reports.iter().map(|r| r.speedup).fold(0.0, f64::max);
    Ok(format!("rejections ok; ResNet-50 54 rows, speedup {min:.1}..{max:.1} in {elapsed:.2?}"))
}

fn main() -> ExitCode {
    let criteria: [Criterion; 9] = [
        ("functional equivalence", functional_equivalence),
        ("throughput ceiling", throughput_ceiling),
        ("near-peak utilization", near_peak_utilization),
        ("metric identities", metric_identities),
        ("tiling degradation", || degradation(SweepMode::Tiling, |r| r.tiling_factor)),
        ("grouping degradation", || degradation(SweepMode::Grouping, |r| r.group_count)),
        ("codec round trip", codec_round_trip),
        ("packing rule", packing_rule),
        ("constraint enforcement", constraint_enforcement),
    ];
    let mut failures = 0;
    for (n, (name, check)) in criteria.iter().enumerate() {
        match check() {
            Ok(detail) => println!("criterion {}: {name} ... PASS ({detail})", n + 1),
            Err(detail) => {
                failures += 1;
                println!("criterion {}: {name} ... FAIL ({detail})", n + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failures} failed", criteria.len() - failures);
    if failures == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
