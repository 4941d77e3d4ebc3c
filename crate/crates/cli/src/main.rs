//! Command-line driver for the recognition engine.
//!
//! Five subcommands cover the operational surface: `recognize` runs the
//! streaming (or batch) recognizer over utterance files and prints the
//! tab-separated emission log, `bench-scaling` times the encoder scan
//! against a quadratic attention reference, `simulate-latency` scores an
//! emission log against ground-truth alignments, `inspect-weights` lists
//! the tensors in a weight bundle, and `selftest` runs the built-in
//! diagnostic suites.
//!
//! Every source of randomness flows from one seed, resolved once per
//! invocation (the `UMA_STREAM_SEED` environment variable overrides the
//! `--seed` flag) and recorded as a `# seed=N` header in any output the
//! seed could influence. Runs with the same inputs and seed are
//! byte-identical, regardless of `--jobs` or `--mode`.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use clap::{Args, Parser, Subcommand, ValueEnum};

use uma_stream::bench::{doubling_ratios, format_csv, run_scaling};
use uma_stream::engine::{
    emission_log_line, offline_recognize, ModelParams, RunOptions, RunResult, StreamHandle,
};
use uma_stream::frontend::{parse_f32_raw, parse_wav, FbankExtractor};
use uma_stream::latency::{
    chunk_timestamp_rule, compute_latency, parse_alignments_csv, parse_emission_log,
};
use uma_stream::selftest::{all_passed, format_reports, run_selftests};
use uma_stream::weights::{init_random, kernel_for_lookahead_ms, ModelConfig, TensorBundle};

// ======================================================================
// Argument surface
// ======================================================================

#[derive(Parser)]
#[command(
    name = "uma-stream",
    version,
    about = "Streaming speech recognizer: state-space encoder, unimodal aggregation, early-termination decoding"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Recognize utterance files and print the emission log.
    Recognize(RecognizeArgs),
    /// Time the encoder scan against a quadratic attention reference.
    BenchScaling(BenchScalingArgs),
    /// Score an emission log against ground-truth alignments.
    SimulateLatency(SimulateLatencyArgs),
    /// List every tensor in a weight bundle.
    InspectWeights(InspectWeightsArgs),
    /// Run the built-in diagnostic suites.
    Selftest(SelftestArgs),
}

#[derive(Args)]
struct RecognizeArgs {
    /// Model configuration as key=value lines; defaults apply when omitted.
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Weight bundle; omitted runs fresh seeded random weights.
    #[arg(long, value_name = "FILE")]
    bundle: Option<PathBuf>,

    /// Seed for random weights. UMA_STREAM_SEED overrides this flag.
    #[arg(long, default_value_t = 0)]
    seed: u64,

    /// How input files are decoded before feature extraction.
    #[arg(long, value_enum, default_value_t = InputFormat::Wav)]
    input_format: InputFormat,

    /// Frame-by-frame streaming or whole-utterance batch processing.
    #[arg(long, value_enum, default_value_t = Mode::Stream)]
    mode: Mode,

    /// Enable early-termination peak emission.
    #[arg(long)]
    et: bool,

    /// Lookahead horizon in milliseconds; must be a whole number of frames.
    #[arg(long, value_name = "MS")]
    lookahead_ms: Option<u32>,

    /// Write per-frame aggregation weights to this file.
    #[arg(long, value_name = "FILE")]
    dump_alpha: Option<PathBuf>,

    /// Worker threads over utterances; output order is unaffected.
    #[arg(long, default_value_t = 1)]
    jobs: usize,

    /// Emission log destination (default stdout).
    #[arg(long, value_name = "FILE")]
    output: Option<PathBuf>,

    /// Input utterances, one file each; the id is the file stem.
    #[arg(required = true, value_name = "FILE")]
    inputs: Vec<PathBuf>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum InputFormat {
    /// 16 kHz mono PCM WAV.
    Wav,
    /// Raw little-endian f32 samples at 16 kHz.
    F32,
    /// Raw little-endian f32 feature rows, feat_dim values per frame.
    Feat,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Mode {
    Stream,
    Offline,
}

#[derive(Args)]
struct BenchScalingArgs {
    /// Sequence lengths to time, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "1024,2048,4096,8192")]
    lengths: Vec<usize>,

    /// Timing repetitions per length; the median is reported.
    #[arg(long, default_value_t = 7)]
    reps: usize,

    /// Seed for the timing workload. UMA_STREAM_SEED overrides this flag.
    #[arg(long, default_value_t = 0)]
    seed: u64,

    /// CSV destination (default stdout).
    #[arg(long, value_name = "FILE")]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct SimulateLatencyArgs {
    /// Emission log: utt_id, token id, trigger, emit ms (tab separated).
    #[arg(long, value_name = "FILE")]
    emissions: PathBuf,

    /// Ground-truth rows utt_id,token_index,end_ms.
    #[arg(long, value_name = "FILE")]
    alignments: PathBuf,

    /// Round every emission up to the end of its serving chunk.
    #[arg(long, value_name = "MS")]
    chunk_ms: Option<u64>,
}

#[derive(Args)]
struct InspectWeightsArgs {
    /// Bundle file to describe.
    #[arg(long, value_name = "FILE")]
    bundle: PathBuf,
}

#[derive(Args)]
struct SelftestArgs {
    /// Only run suites whose name contains this substring.
    #[arg(long)]
    filter: Option<String>,

    /// Verify this bundle loads before anything else runs.
    #[arg(long, value_name = "FILE")]
    bundle: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Recognize(args) => cmd_recognize(args),
        Command::BenchScaling(args) => cmd_bench_scaling(args),
        Command::SimulateLatency(args) => cmd_simulate_latency(args),
        Command::InspectWeights(args) => cmd_inspect_weights(args),
        Command::Selftest(args) => cmd_selftest(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(message) => {
            eprintln!("error: {message}");
            ExitCode::FAILURE
        }
    }
}

// ======================================================================
// Shared helpers
// ======================================================================

/// Final seed for this invocation: the environment variable wins over
/// the flag so wrapper scripts can pin determinism without editing
/// command lines.
fn resolve_seed(flag: u64) -> Result<u64, String> {
    match std::env::var("UMA_STREAM_SEED") {
        Ok(text) => text
            .trim()
            .parse()
            .map_err(|_| format!("UMA_STREAM_SEED must be an unsigned integer, got {text:?}")),
        Err(std::env::VarError::NotPresent) => Ok(flag),
        Err(e) => Err(format!("UMA_STREAM_SEED: {e}")),
    }
}

fn read_bytes(path: &Path) -> Result<Vec<u8>, String> {
    fs::read(path).map_err(|e| format!("{}: {e}", path.display()))
}

fn read_text(path: &Path) -> Result<String, String> {
    fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))
}

/// Writes to the file when given, stdout otherwise.
fn write_output(path: Option<&Path>, text: &str) -> Result<(), String> {
    match path {
        Some(p) => fs::write(p, text).map_err(|e| format!("{}: {e}", p.display())),
        None => {
            print!("{text}");
            std::io::stdout().flush().map_err(|e| e.to_string())
        }
    }
}

// ======================================================================
// recognize
// ======================================================================

/// Validated description of one recognition run: flags folded into the
/// model config, every referenced file confirmed to exist, and the seed
/// resolved. Built before any work starts so a bad invocation fails
/// without producing partial output.
struct RunManifest {
    config: ModelConfig,
    bundle_path: Option<PathBuf>,
    inputs: Vec<PathBuf>,
    input_format: InputFormat,
    mode: Mode,
    seed: u64,
    dump_alpha: Option<PathBuf>,
    output: Option<PathBuf>,
    jobs: usize,
}

impl RunManifest {
    fn from_args(args: RecognizeArgs) -> Result<Self, String> {
        if args.jobs == 0 {
            return Err("--jobs must be at least 1".into());
        }
        let mut config = match &args.config {
            Some(path) => ModelConfig::from_kv_file(path).map_err(|e| e.to_string())?,
            None => ModelConfig::default(),
        };
        if let Some(ms) = args.lookahead_ms {
            config.lookahead_kernel =
                kernel_for_lookahead_ms(ms, config.frame_shift_ms).map_err(|e| e.to_string())?;
        }
        if args.et {
            config.et_enabled = true;
        }
        config.validate().map_err(|e| e.to_string())?;
        if let Some(path) = &args.bundle {
            if !path.is_file() {
                return Err(format!("weight bundle {}: file not found", path.display()));
            }
        }
        for path in &args.inputs {
            if !path.is_file() {
                return Err(format!("input {}: file not found", path.display()));
            }
        }
        Ok(RunManifest {
            config,
            bundle_path: args.bundle,
            inputs: args.inputs,
            input_format: args.input_format,
            mode: args.mode,
            seed: resolve_seed(args.seed)?,
            dump_alpha: args.dump_alpha,
            output: args.output,
            jobs: args.jobs,
        })
    }
}

fn cmd_recognize(args: RecognizeArgs) -> Result<(), String> {
    let manifest = RunManifest::from_args(args)?;
    let bundle = match &manifest.bundle_path {
        Some(path) => TensorBundle::load(path)
            .map_err(|e| format!("weight bundle {}: {e}", path.display()))?,
        None => init_random(&manifest.config, manifest.seed).map_err(|e| e.to_string())?,
    };
    let params = ModelParams::bind(&manifest.config, &bundle).map_err(|e| e.to_string())?;

    // Decode every input up front so a broken file is reported before
    // any output is written.
    let extractor = match manifest.input_format {
        InputFormat::Feat => None,
        _ => Some(FbankExtractor::new(manifest.config.feat_dim)),
    };
    let mut utts: Vec<(String, Vec<Vec<f32>>)> = Vec::with_capacity(manifest.inputs.len());
    for path in &manifest.inputs {
        let features = load_features(path, manifest.input_format, extractor.as_ref(), &manifest.config)?;
        utts.push((utt_id_for(path), features));
    }

    let options = RunOptions {
        dump_alpha: manifest.dump_alpha.is_some(),
        ..RunOptions::default()
    };
    let results = run_all(&params, &utts, options, manifest.mode, manifest.jobs)?;

    let mut log = format!("# seed={}\n", manifest.seed);
    for ((utt_id, _), result) in utts.iter().zip(&results) {
        for e in &result.emissions {
            log.push_str(&emission_log_line(utt_id, e));
            log.push('\n');
        }
    }
    write_output(manifest.output.as_deref(), &log)?;

    if let Some(path) = &manifest.dump_alpha {
        let mut dump = format!("# seed={}\n", manifest.seed);
        for ((utt_id, _), result) in utts.iter().zip(&results) {
            for (frame, alpha) in result.alphas.iter().enumerate() {
                dump.push_str(&format!("{utt_id}\t{frame}\t{alpha}\n"));
            }
        }
        fs::write(path, dump).map_err(|e| format!("{}: {e}", path.display()))?;
    }
    Ok(())
}

fn utt_id_for(path: &Path) -> String {
    match path.file_stem() {
        Some(stem) => stem.to_string_lossy().into_owned(),
        None => path.display().to_string(),
    }
}

fn load_features(
    path: &Path,
    format: InputFormat,
    extractor: Option<&FbankExtractor>,
    config: &ModelConfig,
) -> Result<Vec<Vec<f32>>, String> {
    let bytes = read_bytes(path)?;
    let ctx = |e: uma_stream::error::PipelineError| format!("{}: {e}", path.display());
    match format {
        InputFormat::Wav => {
            let audio = parse_wav(&bytes).map_err(ctx)?;
            Ok(extractor.expect("extractor built for audio formats").frames(&audio))
        }
        InputFormat::F32 => {
            let audio = parse_f32_raw(&bytes).map_err(ctx)?;
            Ok(extractor.expect("extractor built for audio formats").frames(&audio))
        }
        InputFormat::Feat => feature_rows(&bytes, config.feat_dim)
            .map_err(|m| format!("{}: {m}", path.display())),
    }
}

/// Splits a raw little-endian f32 file into feature rows.
fn feature_rows(bytes: &[u8], feat_dim: usize) -> Result<Vec<Vec<f32>>, String> {
    if bytes.len() % 4 != 0 {
        return Err(format!(
            "feature file length {} is not a multiple of 4 bytes",
            bytes.len()
        ));
    }
    let count = bytes.len() / 4;
    if count % feat_dim != 0 {
        return Err(format!(
            "feature file holds {count} floats, not a whole number of {feat_dim}-wide rows"
        ));
    }
    let values: Vec<f32> = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Ok(values.chunks_exact(feat_dim).map(<[f32]>::to_vec).collect())
}

/// Runs every utterance, `jobs` at a time, and returns results in input
/// order. Workers pull indices from a shared counter so the thread
/// count never changes what is produced, only how fast.
fn run_all(
    params: &ModelParams,
    utts: &[(String, Vec<Vec<f32>>)],
    options: RunOptions,
    mode: Mode,
    jobs: usize,
) -> Result<Vec<RunResult>, String> {
    let slots: Vec<Mutex<Option<Result<RunResult, String>>>> =
        utts.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    let workers = jobs.min(utts.len()).max(1);
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= utts.len() {
                    break;
                }
                let outcome = run_one(params, &utts[i].1, options, mode);
                *slots[i].lock().expect("no panics hold this lock") = Some(outcome);
            });
        }
    });
    slots
        .into_iter()
        .zip(utts)
        .map(|(slot, (utt_id, _))| {
            slot.into_inner()
                .expect("no panics hold this lock")
                .expect("every slot visited")
                .map_err(|e| format!("{utt_id}: {e}"))
        })
        .collect()
}

fn run_one(
    params: &ModelParams,
    features: &[Vec<f32>],
    options: RunOptions,
    mode: Mode,
) -> Result<RunResult, String> {
    match mode {
        Mode::Offline => offline_recognize(params, features, options).map_err(|e| e.to_string()),
        Mode::Stream => {
            let mut handle = StreamHandle::new(params, options).map_err(|e| e.to_string())?;
            for frame in features {
                handle.push_frame(frame).map_err(|e| e.to_string())?;
            }
            handle.finalize().map_err(|e| e.to_string())?;
            Ok(handle.into_result())
        }
    }
}

// ======================================================================
// bench-scaling
// ======================================================================

fn cmd_bench_scaling(args: BenchScalingArgs) -> Result<(), String> {
    let seed = resolve_seed(args.seed)?;
    let points = run_scaling(&args.lengths, args.reps, seed).map_err(|e| e.to_string())?;
    let csv = format!("# seed={seed}\n{}", format_csv(&points));
    write_output(args.output.as_deref(), &csv)?;
    for r in doubling_ratios(&points) {
        eprintln!(
            "# doubling {} -> {}: encoder x{:.2}, attention x{:.2}",
            r.from_len, r.to_len, r.encoder_ratio, r.attention_ratio
        );
    }
    Ok(())
}

// ======================================================================
// simulate-latency
// ======================================================================

fn cmd_simulate_latency(args: SimulateLatencyArgs) -> Result<(), String> {
    let emissions_text = read_text(&args.emissions)?;
    let alignments_text = read_text(&args.alignments)?;
    let mut emissions = parse_emission_log(&emissions_text)
        .map_err(|e| format!("{}: {e}", args.emissions.display()))?;
    let truths = parse_alignments_csv(&alignments_text)
        .map_err(|e| format!("{}: {e}", args.alignments.display()))?;
    if let Some(chunk_ms) = args.chunk_ms {
        for utt in &mut emissions {
            let times: Vec<u64> = utt.tokens.iter().map(|t| t.emit_ms).collect();
            let mapped = chunk_timestamp_rule(&times, chunk_ms).map_err(|e| e.to_string())?;
            for (token, ms) in utt.tokens.iter_mut().zip(mapped) {
                token.emit_ms = ms;
            }
        }
    }
    let report = compute_latency(&emissions, &truths).map_err(|e| e.to_string())?;
    println!("ft_ms            {:.3}", report.ft_ms);
    println!("lt_ms            {:.3}", report.lt_ms);
    println!("avg_ms           {:.3}", report.avg_ms);
    println!("tokens_total     {}", report.tokens_total);
    println!("tokens_excluded  {}", report.tokens_excluded);
    println!("tokens_unmatched {}", report.tokens_unmatched);
    Ok(())
}

// ======================================================================
// inspect-weights
// ======================================================================

fn cmd_inspect_weights(args: InspectWeightsArgs) -> Result<(), String> {
    let bundle = TensorBundle::load(&args.bundle)
        .map_err(|e| format!("weight bundle {}: {e}", args.bundle.display()))?;
    let name_width = bundle.iter().map(|t| t.name().len()).max().unwrap_or(0);
    let mut total = 0usize;
    for tensor in bundle.iter() {
        let numel = tensor.data().len();
        total += numel;
        println!(
            "{:<name_width$}  {:<16}  {numel}",
            tensor.name(),
            format!("{:?}", tensor.shape()),
        );
    }
    println!("{} tensors, {total} parameters", bundle.len());
    Ok(())
}

// ======================================================================
// selftest
// ======================================================================

fn cmd_selftest(args: SelftestArgs) -> Result<(), String> {
    let reports = run_selftests(args.filter.as_deref(), args.bundle.as_deref());
    if reports.is_empty() {
        return Err(format!(
            "no suites match filter {:?}",
            args.filter.as_deref().unwrap_or("")
        ));
    }
    print!("{}", format_reports(&reports));
    if all_passed(&reports) {
        Ok(())
    } else {
        Err("one or more suites failed".into())
    }
}
