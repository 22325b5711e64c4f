use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde_json::json;

use dimc_core::asm::{assemble, disassemble};
use dimc_core::baseline::BaselineCostConfig;
use dimc_core::isa::{words_from_bytes, words_to_bytes};
use dimc_core::mapper::MapError;
use dimc_core::metrics::{write_csv, PerfReport, DEFAULT_AREA_RATIO};
use dimc_core::pipeline::{
    analyze_layer, sweep, verify_layer, AnalysisConfig, AnalysisError, SweepMode, DEFAULT_SWEEP_SIZE,
};
use dimc_core::sim::TimingModel;
use dimc_core::workload::WorkloadFile;

#[derive(Parser)]
#[command(name = "dimc-sim", version, about = "Simulate CNN layers on a RISC-V vector core with a DIMC tile")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Map, time and report every layer of a workload file.
    Simulate(SimulateArgs),
    /// Sweep one layer dimension to expose tiling or grouping costs.
    Sweep(SweepArgs),
    /// Assemble DIMC instruction text into little-endian 32-bit words.
    Asm {
        input: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Disassemble a binary word stream.
    Disasm {
        input: PathBuf,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Args)]
struct ModelArgs {
    /// JSON latency table; missing fields keep their defaults.
    #[arg(long)]
    timing: Option<PathBuf>,
    /// JSON baseline cost constants.
    #[arg(long)]
    baseline: Option<PathBuf>,
    /// Baseline area divided by DIMC-extended core area.
    #[arg(long, default_value_t = DEFAULT_AREA_RATIO)]
    area_ratio: f64,
    /// Clock frequency in Hz; overrides the latency table.
    #[arg(long)]
    freq: Option<f64>,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    format: Format,
    /// Report path; standard output when omitted.
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct SimulateArgs {
    /// Workload JSON file; the bundled ResNet-50 description when omitted.
    workload: Option<PathBuf>,
    #[command(flatten)]
    model: ModelArgs,
    /// Execute every instruction on random data and check it against a direct convolution.
    #[arg(long)]
    verify: bool,
    /// Seed for verification data.
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Write an instruction trace (CSV) of every layer; implies full execution.
    #[arg(long)]
    trace: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum SweepKind {
    Tiling,
    Grouping,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(value_enum)]
    mode: SweepKind,
    /// Swept values (ICH for tiling, OCH for grouping).
    #[arg(long, value_delimiter = ',')]
    values: Option<Vec<usize>>,
    /// Input height and width.
    #[arg(long, default_value_t = DEFAULT_SWEEP_SIZE)]
    size: usize,
    #[command(flatten)]
    model: ModelArgs,
}

/// Failure kinds mapped to exit codes.
enum Failure {
    Verification(String),
    Input(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Input(e)
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path, what: &str) -> anyhow::Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {what} {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {what} {}", path.display()))
}

impl ModelArgs {
    fn config(&self) -> anyhow::Result<AnalysisConfig> {
        let mut timing = match &self.timing {
            Some(p) => read_json::<TimingModel>(p, "timing table")?,
            None => TimingModel::default(),
        };
        if let Some(f) = self.freq {
            timing.freq_hz = f;
        }
        let baseline = match &self.baseline {
            Some(p) => read_json::<BaselineCostConfig>(p, "baseline config")?,
            None => BaselineCostConfig::default(),
        };
        let cfg = AnalysisConfig { timing, baseline, area_ratio: self.area_ratio, ..AnalysisConfig::default() };
        cfg.validate()?;
        Ok(cfg)
    }

    fn emit(&self, bytes: Vec<u8>) -> anyhow::Result<()> {
        match &self.output {
            Some(p) => fs::write(p, bytes).with_context(|| format!("writing {}", p.display())),
            None => io::stdout().write_all(&bytes).context("writing report"),
        }
    }
}

fn csv_bytes(rows: &[PerfReport]) -> anyhow::Result<Vec<u8>> {
    let mut buf = Vec::new();
    write_csv(rows, &mut buf)?;
    Ok(buf)
}

fn json_bytes(value: serde_json::Value) -> Vec<u8> {
    let mut buf = serde_json::to_vec_pretty(&value).expect("report serializes");
    buf.push(b'\n');
    buf
}

struct LayerResult {
    report: Option<PerfReport>,
    ineligible: Option<String>,
    verify: Option<(bool, usize)>,
    trace: Vec<(u64, &'static str, String)>,
}

fn simulate(args: &SimulateArgs) -> Result<(), Failure> {
    let cfg = args.model.config()?;
    let workload = match &args.workload {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading workload {}", p.display()))?;
            WorkloadFile::parse(&text).with_context(|| format!("workload {}", p.display()))?
        }
        None => WorkloadFile::resnet50(),
    };
    let full_run = args.verify || args.trace.is_some();
    let results: Vec<anyhow::Result<LayerResult>> = workload
        .layers
        .par_iter()
        .enumerate()
        .map(|(i, layer)| {
            let analysis = match analyze_layer(layer, &cfg) {
                Ok(a) => a,
                Err(AnalysisError::Map(e @ MapError::NotDimcEligible { .. })) => {
                    return Ok(LayerResult {
                        report: None,
                        ineligible: Some(e.to_string()),
                        verify: None,
                        trace: vec![],
                    });
                }
                Err(e) => return Err(e).with_context(|| format!("layer `{}`", layer.name)),
            };
            let mut result =
                LayerResult { report: Some(analysis.report.clone()), ineligible: None, verify: None, trace: vec![] };
            if full_run {
                let seed = args.seed.wrapping_add(i as u64);
                let v = verify_layer(&analysis, &cfg, seed, args.trace.is_some())
                    .with_context(|| format!("executing layer `{}`", layer.name))?;
                result.verify = Some((v.passed(&analysis), v.mismatches));
                result.trace =
                    v.trace.unwrap_or_default().into_iter().map(|r| (r.cycle, r.class.as_str(), r.mnemonic)).collect();
            }
            Ok(result)
        })
        .collect();
    let results = results.into_iter().collect::<anyhow::Result<Vec<_>>>()?;

    let mut rows = Vec::new();
    let mut ineligible = Vec::new();
    let mut failed = Vec::new();
    let mut verification = Vec::new();
    for (layer, r) in workload.layers.iter().zip(&results) {
        if let Some(reason) = &r.ineligible {
            eprintln!("skipped: {reason}");
            ineligible.push(json!({ "layer": layer.name, "reason": reason }));
        }
        if let Some(report) = &r.report {
            rows.push(report.clone());
        }
        if args.verify {
            if let Some((passed, mismatches)) = r.verify {
                verification.push(json!({ "layer": layer.name, "passed": passed, "mismatches": mismatches }));
                if !passed {
                    failed.push(layer.name.clone());
                }
            }
        }
    }

    if let Some(path) = &args.trace {
        let mut out = String::from("layer,cycle,class,mnemonic\n");
        for (layer, r) in workload.layers.iter().zip(&results) {
            for (cycle, class, mnemonic) in &r.trace {
                out.push_str(&format!("{},{cycle},{class},\"{mnemonic}\"\n", layer.name));
            }
        }
        fs::write(path, out).with_context(|| format!("writing trace {}", path.display()))?;
    }

    let bytes = match args.model.format {
        Format::Csv => csv_bytes(&rows)?,
        Format::Json => {
            let mut report = json!({
                "network": workload.network,
                "freq_hz": cfg.timing.freq_hz,
                "area_ratio": cfg.area_ratio,
                "timing": cfg.timing,
                "baseline": cfg.baseline,
                "layers": rows,
                "ineligible": ineligible,
            });
            if args.verify {
                report["verification"] = json!(verification);
            }
            json_bytes(report)
        }
    };
    args.model.emit(bytes)?;

    if !failed.is_empty() {
        return Err(Failure::Verification(format!("verification failed for: {}", failed.join(", "))));
    }
    Ok(())
}

fn run_sweep(args: &SweepArgs) -> Result<(), Failure> {
    let cfg = args.model.config()?;
    let mode = match args.mode {
        SweepKind::Tiling => SweepMode::Tiling,
        SweepKind::Grouping => SweepMode::Grouping,
    };
    let values = args.values.clone().unwrap_or_else(|| mode.default_values());
    if values.is_empty() || values.contains(&0) {
        return Err(anyhow::anyhow!("sweep values must be a non-empty list of positive integers").into());
    }
    if args.size < 2 {
        return Err(anyhow::anyhow!("--size must be at least 2 for a 2x2 kernel").into());
    }
    let rows = sweep(mode, &values, args.size, &cfg).context("sweep")?;
    let bytes = match args.model.format {
        Format::Csv => csv_bytes(&rows)?,
        Format::Json => json_bytes(json!({
            "mode": mode.swept_field(),
            "freq_hz": cfg.timing.freq_hz,
            "area_ratio": cfg.area_ratio,
            "rows": rows,
        })),
    };
    args.model.emit(bytes)?;
    Ok(())
}

fn run_asm(input: &Path, output: &Path) -> anyhow::Result<()> {
    let text = fs::read_to_string(input).with_context(|| format!("reading {}", input.display()))?;
    let words = assemble(&text).with_context(|| format!("assembling {}", input.display()))?;
    fs::write(output, words_to_bytes(&words)).with_context(|| format!("writing {}", output.display()))
}

fn run_disasm(input: &Path, output: Option<&Path>) -> anyhow::Result<()> {
    let bytes = fs::read(input).with_context(|| format!("reading {}", input.display()))?;
    let Some(words) = words_from_bytes(&bytes) else {
        bail!("{}: length {} is not a multiple of 4 bytes", input.display(), bytes.len());
    };
    let text = disassemble(&words).with_context(|| format!("disassembling {}", input.display()))?;
    match output {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => io::stdout().write_all(text.as_bytes()).context("writing output"),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Sweep(a) => run_sweep(a),
        Command::Asm { input, output } => run_asm(input, output).map_err(Failure::Input),
        Command::Disasm { input, output } => run_disasm(input, output.as_deref()).map_err(Failure::Input),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Verification(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Input(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
