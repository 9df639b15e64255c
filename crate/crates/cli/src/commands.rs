//! Subcommand definitions and their implementations.

use std::io::{BufWriter, Write};
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::thread;
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use scgnn_core::cycles::{network_report, RequantConvention};
use scgnn_core::model::{quantize_model, FloatModel};
use scgnn_core::qnn::infer_window;
use scgnn_core::random::{random_model, random_window};
use scgnn_core::{NetworkSpec, PackedModel, QuantTensor};
use scgnn_eval::dataset::{decode_signal_f32, read_bytes, read_dataset, write_dataset};
use scgnn_eval::runner::predictions;
use scgnn_eval::synth::Phase;
use scgnn_eval::{
    build_reference_model, evaluate, run_windows, synth_windows, Backend, InputQuantization, ReferenceConfig,
    SynthConfig,
};
use scgnn_link::{digest, mem_pair, tcp_connect, Device, HostClient, Stdio};
use scgnn_sim::{NdjsonSink, SimMachine, TraceSink};
use serde::Serialize;

use crate::config::Config;
use crate::error::{CliError, Result};
use crate::selftest;

#[derive(Debug, Parser)]
#[command(name = "scgnn", version, about = "Integer SCG CNN accelerator: cycle model, simulator, link and evaluation")]
pub struct Cli {
    /// TOML file with clock_hz, power_mw, requant_convention and measured_latency_ms.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Cmd,
}

#[derive(Debug, Subcommand)]
pub enum Cmd {
    /// Per-layer cycle breakdown, latency, throughput and energy.
    Analyze(AnalyzeArgs),
    /// Classify one window with the golden model, the simulator or both.
    Infer(InferArgs),
    /// Write the first cycles of a simulated run as NDJSON.
    Trace(TraceArgs),
    /// Fold, quantize and serialize a floating-point model.
    Pack(PackArgs),
    /// Write a random or reference model in the binary format.
    GenModel(GenModelArgs),
    /// Run the device emulator.
    Serve(ServeArgs),
    /// Stream a model to a running device and verify it.
    Load(LoadArgs),
    /// Classify one window on a running device.
    Run(RunArgs),
    /// Generate a labeled synthetic dataset.
    Synth(SynthArgs),
    /// Classify a dataset and report metrics.
    Eval(EvalArgs),
    /// Run every acceptance check and report pass or fail for each.
    Selftest(SelftestArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ConventionArg {
    Table1,
    Formula,
}

impl From<ConventionArg> for RequantConvention {
    fn from(c: ConventionArg) -> Self {
        match c {
            ConventionArg::Table1 => RequantConvention::TableI,
            ConventionArg::Formula => RequantConvention::FormulaText,
        }
    }
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    /// Model file; the default topology when omitted.
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub clock_hz: Option<f64>,
    #[arg(long)]
    pub power_mw: Option<f64>,
    #[arg(long, value_enum)]
    pub requant_convention: Option<ConventionArg>,
    /// Measured latency for throughput and energy.
    #[arg(long)]
    pub measured_latency_ms: Option<f64>,
    /// Width of the last convolution when no model is given.
    #[arg(long, default_value_t = 128)]
    pub l3_width: usize,
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum InputFormat {
    /// Decide from the file size.
    Auto,
    /// f32 little-endian samples, normalized and quantized on load.
    Raw,
    /// One u8 per sample, already quantized.
    Quantized,
}

#[derive(Debug, Args)]
pub struct InputArgs {
    /// Window file, or `-` for standard input.
    #[arg(long)]
    pub input: String,
    #[arg(long, value_enum, default_value_t = InputFormat::Auto)]
    pub input_format: InputFormat,
    /// Zero point of quantized input, and the target of raw normalization.
    #[arg(long, default_value_t = 128)]
    pub zero_point: u8,
    /// Standard deviations per input step for raw windows.
    #[arg(long, default_value_t = 1.0 / 16.0)]
    pub scale_divisor: f64,
}

#[derive(Debug, Args)]
#[group(multiple = false)]
pub struct BackendFlags {
    #[arg(long)]
    pub golden: bool,
    #[arg(long)]
    pub sim: bool,
    /// Run both and require bit-identical results.
    #[arg(long)]
    pub both: bool,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[command(flatten)]
    pub input: InputArgs,
    #[command(flatten)]
    pub backend: BackendFlags,
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct TraceArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[command(flatten)]
    pub input: InputArgs,
    /// Number of cycles to record; the run stops early when inference ends.
    #[arg(long)]
    pub cycles: u64,
    /// NDJSON output, or `-` for standard output.
    #[arg(long)]
    pub out: String,
}

#[derive(Debug, Args)]
pub struct PackArgs {
    /// JSON floating-point model.
    #[arg(long)]
    pub from_float: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct GenModelArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Build the calibrated reference classifier instead of random weights.
    #[arg(long)]
    pub reference: bool,
    /// Also write the floating-point reference model as JSON.
    #[arg(long, requires = "reference")]
    pub float_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    /// `stdio`, `mem` (in-process demonstration session) or a socket address.
    #[arg(long, default_value = "stdio")]
    pub transport: String,
    /// Stop after this many socket sessions.
    #[arg(long)]
    pub sessions: Option<usize>,
    /// Model for the `mem` demonstration; a random model otherwise.
    #[arg(long)]
    pub model: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct LinkArgs {
    #[arg(long)]
    pub connect: String,
    #[arg(long, default_value_t = 5)]
    pub retries: u32,
    #[arg(long, default_value_t = 2000)]
    pub timeout_ms: u64,
}

#[derive(Debug, Args)]
pub struct LoadArgs {
    #[command(flatten)]
    pub link: LinkArgs,
    #[arg(long)]
    pub model: PathBuf,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub link: LinkArgs,
    /// Model the window is shaped for; only its header is used.
    #[arg(long)]
    pub model: PathBuf,
    #[command(flatten)]
    pub input: InputArgs,
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 0.1)]
    pub noise: f64,
    /// Background, systolic and diastolic shares.
    #[arg(long, value_delimiter = ',', num_args = 3, default_values_t = [1.0, 1.0, 1.0])]
    pub proportions: Vec<f64>,
    #[arg(long, default_value_t = 40.0)]
    pub hr_min: f64,
    #[arg(long, default_value_t = 60.0)]
    pub hr_max: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BackendArg {
    Golden,
    Sim,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum, default_value_t = BackendArg::Golden)]
    pub backend: BackendArg,
    /// Real value of one logit step for the softmax confidences.
    #[arg(long, default_value_t = 1.0 / 256.0)]
    pub logit_scale: f64,
    #[arg(long, default_value_t = 128)]
    pub zero_point: u8,
    #[arg(long, default_value_t = 1.0 / 16.0)]
    pub scale_divisor: f64,
    /// Summary JSON.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Per-window CSV: index, label, predicted class, confidence, probabilities.
    #[arg(long)]
    pub predictions: Option<PathBuf>,
    /// Reliability-diagram CSV.
    #[arg(long)]
    pub reliability: Option<PathBuf>,
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct SelftestArgs {
    /// Smaller sample sizes; tolerances are unchanged.
    #[arg(long)]
    pub quick: bool,
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

fn read_model(path: &Path) -> Result<PackedModel> {
    let bytes = std::fs::read(path).map_err(|e| usage(format!("cannot read model {}: {e}", path.display())))?;
    Ok(PackedModel::deserialize(&bytes)?)
}

fn read_input(args: &InputArgs, net: &NetworkSpec) -> Result<QuantTensor> {
    let bytes = read_bytes(&args.input).map_err(|e| usage(format!("cannot read input {}: {e}", args.input)))?;
    let samples = net.layers[0].c_in * net.input_length;
    let format = match args.input_format {
        InputFormat::Auto if bytes.len() == 4 * samples => InputFormat::Raw,
        InputFormat::Auto if bytes.len() == samples => InputFormat::Quantized,
        InputFormat::Auto => {
            return Err(usage(format!(
                "input has {} bytes; the model expects {samples} quantized or {} raw bytes",
                bytes.len(),
                4 * samples
            )))
        }
        f => f,
    };
    match format {
        InputFormat::Raw => {
            let x = decode_signal_f32(&bytes)?;
            if x.len() != samples || net.layers[0].c_in != 1 {
                return Err(usage(format!("raw input needs {samples} single-channel samples, got {}", x.len())));
            }
            let q = InputQuantization { zero_point: args.zero_point, scale_divisor: args.scale_divisor };
            Ok(q.quantize(&x)?)
        }
        _ => {
            if bytes.len() != samples {
                return Err(usage(format!("quantized input needs {samples} bytes, got {}", bytes.len())));
            }
            Ok(QuantTensor::new(net.layers[0].c_in, net.input_length, bytes, 1.0, args.zero_point)?)
        }
    }
}

fn class_name(c: usize) -> &'static str {
    Phase::from_index(c).map_or("class", Phase::name)
}

fn grouped(n: u64) -> String {
    let s = n.to_string();
    let mut out = String::new();
    for (i, ch) in s.chars().enumerate() {
        if i > 0 && (s.len() - i).is_multiple_of(3) {
            out.push(',');
        }
        out.push(ch);
    }
    out
}

pub fn analyze(cfg: &Config, a: &AnalyzeArgs, out: &mut dyn Write) -> Result<()> {
    let net = match &a.model {
        Some(p) => read_model(p)?.network(),
        None => NetworkSpec::table1_with_width(a.l3_width),
    };
    let clock = a.clock_hz.unwrap_or(cfg.clock_hz);
    let power = a.power_mw.unwrap_or(cfg.power_mw);
    let conv = a.requant_convention.map(Into::into).unwrap_or(cfg.requant_convention);
    let measured = a.measured_latency_ms.or(cfg.measured_latency_ms).map(|ms| ms / 1e3);
    let report = network_report(&net, clock, power, measured, conv).map_err(|e| usage(e.to_string()))?;
    if a.json {
        writeln!(out, "{}", serde_json::to_string_pretty(&report)?)?;
    } else {
        write!(out, "{}", report.to_text())?;
    }
    Ok(())
}

#[derive(Serialize)]
struct InferOutput {
    logits: Vec<i32>,
    class: usize,
    label: &'static str,
    cycles: Option<u64>,
    exact_match: Option<bool>,
}

fn simulate(model: &PackedModel, x: &QuantTensor, conv: RequantConvention) -> Result<(SimMachine, scgnn_sim::RunResult)> {
    let mut m = SimMachine::new(conv);
    m.load_model(model)?;
    m.load_input(x)?;
    let r = m.run_inference()?;
    Ok((m, r))
}

pub fn infer(cfg: &Config, a: &InferArgs, out: &mut dyn Write) -> Result<()> {
    let model = read_model(&a.model)?;
    let net = model.network();
    let ws = model.weight_set();
    let x = read_input(&a.input, &net)?;
    let b = &a.backend;
    let (run_golden, run_sim) = match (b.golden, b.sim, b.both) {
        (_, true, _) => (false, true),
        (_, _, true) => (true, true),
        _ => (true, false),
    };
    let golden = if run_golden { Some(infer_window(&net, &ws, &x)?) } else { None };
    let sim = if run_sim { Some(simulate(&model, &x, cfg.requant_convention)?) } else { None };
    let mut exact = None;
    if let (Some(g), Some((m, r))) = (&golden, &sim) {
        let mut same = g.logits == r.logits;
        for (i, act) in g.activations.iter().enumerate() {
            same &= m.read_layer_activation(i)?.data() == act.data();
        }
        exact = Some(same);
    }
    let logits = match (&sim, &golden) {
        (Some((_, r)), _) => r.logits.clone(),
        (None, Some(g)) => g.logits.clone(),
        _ => unreachable!("one backend always runs"),
    };
    let o = InferOutput {
        class: logits.predicted_class,
        label: class_name(logits.predicted_class),
        logits: logits.values,
        cycles: sim.as_ref().map(|(_, r)| r.cycles),
        exact_match: exact,
    };
    if a.json {
        writeln!(out, "{}", serde_json::to_string_pretty(&o)?)?;
    } else {
        writeln!(out, "logits: {:?}", o.logits)?;
        writeln!(out, "class: {} ({})", o.class, o.label)?;
        if let Some(c) = o.cycles {
            writeln!(out, "cycles: {}", grouped(c))?;
        }
        if let Some(m) = exact {
            writeln!(out, "{}", if m { "EXACT MATCH" } else { "MISMATCH" })?;
        }
    }
    if exact == Some(false) {
        return Err(CliError::Runtime("golden model and simulator disagree".into()));
    }
    Ok(())
}

pub fn trace(cfg: &Config, a: &TraceArgs, out: &mut dyn Write) -> Result<()> {
    let model = read_model(&a.model)?;
    let x = read_input(&a.input, &model.network())?;
    let mut m = SimMachine::new(cfg.requant_convention);
    m.load_model(&model)?;
    m.load_input(&x)?;
    let sink_out: Box<dyn Write + Send> = if a.out == "-" {
        Box::new(std::io::stdout())
    } else {
        Box::new(std::fs::File::create(&a.out)?)
    };
    let mut sink = NdjsonSink::new(BufWriter::new(sink_out));
    m.start()?;
    let mut recorded = 0u64;
    while recorded < a.cycles && m.is_running() {
        sink.record(&m.step()?)?;
        recorded += 1;
    }
    sink.into_inner().flush()?;
    if a.out != "-" {
        writeln!(out, "recorded {recorded} cycles to {}", a.out)?;
    }
    Ok(())
}

fn write_model(path: &Path, model: &PackedModel) -> Result<[u8; 32]> {
    let bytes = model.serialize();
    std::fs::write(path, &bytes)?;
    Ok(digest(&bytes))
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn describe(model: &PackedModel, path: &Path, sha: &[u8; 32], out: &mut dyn Write) -> Result<()> {
    writeln!(
        out,
        "wrote {} ({} bytes, {} layers, {} weights), sha256 {}",
        path.display(),
        model.serialized_len(),
        model.layers.len(),
        model.total_weights(),
        hex(sha)
    )?;
    Ok(())
}

pub fn pack(a: &PackArgs, out: &mut dyn Write) -> Result<()> {
    let text = std::fs::read_to_string(&a.from_float)
        .map_err(|e| usage(format!("cannot read {}: {e}", a.from_float.display())))?;
    let float: FloatModel = serde_json::from_str(&text).map_err(|e| usage(format!("malformed float model: {e}")))?;
    let (net, ws) = quantize_model(&float)?;
    let packed = PackedModel::from_parts(&net, &ws)?;
    let sha = write_model(&a.out, &packed)?;
    for (i, l) in net.layers.iter().enumerate() {
        writeln!(out, "L{i}: multiplier {} shift {}", l.requant.multiplier, l.requant.shift)?;
    }
    describe(&packed, &a.out, &sha, out)
}

pub fn gen_model(a: &GenModelArgs, out: &mut dyn Write) -> Result<()> {
    let packed = if a.reference {
        let cfg = ReferenceConfig {
            calibration: SynthConfig { seed: a.seed, ..ReferenceConfig::default().calibration },
            ..ReferenceConfig::default()
        };
        let r = build_reference_model(&cfg)?;
        if let Some(p) = &a.float_out {
            std::fs::write(p, serde_json::to_string_pretty(&r.float)?)?;
        }
        r.packed
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
        let (net, ws) = random_model(&mut rng, &NetworkSpec::table1());
        PackedModel::from_parts(&net, &ws)?
    };
    let sha = write_model(&a.out, &packed)?;
    describe(&packed, &a.out, &sha, out)
}

fn serve_mem(cfg: &Config, a: &ServeArgs, out: &mut dyn Write) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let model = match &a.model {
        Some(p) => read_model(p)?,
        None => {
            let (net, ws) = random_model(&mut rng, &NetworkSpec::table1());
            PackedModel::from_parts(&net, &ws)?
        }
    };
    let net = model.network();
    let x = random_window(&mut rng, net.layers[0].c_in, net.input_length);
    let (mut host_end, dev_end) = mem_pair(None);
    host_end.set_timeout(Some(Duration::from_millis(1000)));
    let conv = cfg.requant_convention;
    let device = thread::spawn(move || Device::new(SimMachine::new(conv)).serve(dev_end));
    let mut host = HostClient::new(host_end, 3);
    let report = host.load_model(&model)?;
    let (logits, cycles) = host.run(&x)?;
    let golden = infer_window(&net, &model.weight_set(), &x)?.logits;
    drop(host);
    let stats = device.join().map_err(|_| CliError::Runtime("device thread panicked".into()))??;
    writeln!(out, "loaded {} bytes in {} frames, sha256 {}", report.bytes, report.frames, hex(&report.digest))?;
    writeln!(out, "logits: {:?} ({} cycles)", logits.values, grouped(cycles as u64))?;
    writeln!(out, "device served {} frames, {} responses", stats.frames, stats.responses)?;
    if logits != golden {
        return Err(CliError::Runtime("device logits differ from the golden model".into()));
    }
    writeln!(out, "EXACT MATCH")?;
    Ok(())
}

pub fn serve(cfg: &Config, a: &ServeArgs, out: &mut dyn Write) -> Result<()> {
    match a.transport.as_str() {
        "stdio" => {
            let mut device = Device::new(SimMachine::new(cfg.requant_convention));
            let stats = device.serve(Stdio)?;
            eprintln!("session ended: {} frames, {} responses", stats.frames, stats.responses);
            Ok(())
        }
        "mem" => serve_mem(cfg, a, out),
        addr => {
            let addr = addr.strip_prefix("tcp:").unwrap_or(addr);
            let listener = TcpListener::bind(addr).map_err(|e| usage(format!("cannot listen on {addr}: {e}")))?;
            writeln!(out, "listening on {}", listener.local_addr()?)?;
            out.flush()?;
            let mut device = Device::new(SimMachine::new(cfg.requant_convention));
            for (served, stream) in (1..).zip(listener.incoming()) {
                let stream = stream?;
                stream.set_nodelay(true)?;
                let stats = device.serve(stream)?;
                writeln!(out, "session ended: {} frames, {} responses", stats.frames, stats.responses)?;
                out.flush()?;
                if a.sessions.is_some_and(|n| served >= n) {
                    break;
                }
            }
            Ok(())
        }
    }
}

fn connect(a: &LinkArgs) -> Result<HostClient<std::net::TcpStream>> {
    let stream = tcp_connect(&a.connect, Some(Duration::from_millis(a.timeout_ms)))
        .map_err(|e| CliError::Runtime(format!("cannot connect to {}: {e}", a.connect)))?;
    Ok(HostClient::new(stream, a.retries))
}

pub fn load(a: &LoadArgs, out: &mut dyn Write) -> Result<()> {
    let model = read_model(&a.model)?;
    let mut host = connect(&a.link)?;
    let report = host.load_model(&model)?;
    let stats = host.stats();
    writeln!(
        out,
        "loaded {} bytes in {} frames ({} retransmissions), verified sha256 {}",
        report.bytes,
        report.frames,
        stats.retransmissions,
        hex(&report.digest)
    )?;
    Ok(())
}

pub fn run(a: &RunArgs, out: &mut dyn Write) -> Result<()> {
    let net = read_model(&a.model)?.network();
    let x = read_input(&a.input, &net)?;
    let mut host = connect(&a.link)?;
    let (logits, cycles) = host.run(&x)?;
    let o = InferOutput {
        class: logits.predicted_class,
        label: class_name(logits.predicted_class),
        logits: logits.values,
        cycles: Some(cycles as u64),
        exact_match: None,
    };
    if a.json {
        writeln!(out, "{}", serde_json::to_string_pretty(&o)?)?;
    } else {
        writeln!(out, "logits: {:?}", o.logits)?;
        writeln!(out, "class: {} ({})", o.class, o.label)?;
        writeln!(out, "cycles: {}", grouped(cycles as u64))?;
    }
    Ok(())
}

pub fn synth(a: &SynthArgs, out: &mut dyn Write) -> Result<()> {
    let cfg = SynthConfig {
        n: a.n,
        proportions: [a.proportions[0], a.proportions[1], a.proportions[2]],
        noise: a.noise,
        heart_rate_range: (a.hr_min, a.hr_max),
        seed: a.seed,
    };
    cfg.validate().map_err(|e| usage(e.to_string()))?;
    let set = synth_windows(&cfg)?;
    write_dataset(&a.out, &set)?;
    let c = set.class_counts();
    writeln!(
        out,
        "wrote {} windows to {} (background {}, systolic {}, diastolic {})",
        set.len(),
        a.out.display(),
        c[0],
        c[1],
        c[2]
    )?;
    Ok(())
}

pub fn eval(cfg: &Config, a: &EvalArgs, out: &mut dyn Write) -> Result<()> {
    let model = read_model(&a.model)?;
    let set = read_dataset(&a.data).map_err(|e| usage(format!("cannot read dataset {}: {e}", a.data.display())))?;
    if set.window_length() != model.input_length {
        return Err(usage(format!(
            "dataset windows have {} samples, the model expects {}",
            set.window_length(),
            model.input_length
        )));
    }
    if !(a.logit_scale > 0.0 && a.logit_scale.is_finite()) {
        return Err(usage("logit scale must be positive"));
    }
    let input = InputQuantization { zero_point: a.zero_point, scale_divisor: a.scale_divisor };
    let backend = match a.backend {
        BackendArg::Golden => Backend::Golden,
        BackendArg::Sim => Backend::Sim,
    };
    let results = run_windows(&model, &set.windows, &input, backend, cfg.requant_convention)?;
    let preds = predictions(&results, a.logit_scale);
    let summary = evaluate(&preds, &set.labels)?;
    if let Some(p) = &a.predictions {
        let mut w = csv::Writer::from_path(p)?;
        w.write_record(["index", "label", "predicted", "confidence", "p_background", "p_systolic", "p_diastolic"])?;
        for (i, (p, l)) in preds.iter().zip(&set.labels).enumerate() {
            let mut row = vec![i.to_string(), l.to_string(), p.class.to_string(), format!("{:.6}", p.confidence)];
            row.extend(p.probs.iter().map(|v| format!("{v:.6}")));
            w.write_record(&row)?;
        }
        w.flush()?;
    }
    if let Some(p) = &a.reliability {
        let mut w = csv::Writer::from_path(p)?;
        for b in &summary.reliability {
            w.serialize(b)?;
        }
        w.flush()?;
    }
    if let Some(p) = &a.out {
        std::fs::write(p, serde_json::to_string_pretty(&summary)?)?;
    }
    if a.json {
        writeln!(out, "{}", serde_json::to_string_pretty(&summary)?)?;
    } else {
        write!(out, "{}", summary.to_text())?;
    }
    Ok(())
}

pub fn selftest_cmd(a: &SelftestArgs, out: &mut dyn Write) -> Result<()> {
    let outcomes = if a.quick {
        vec![
            selftest::table_reproduction(),
            selftest::latency_and_fps(),
            selftest::throughput(),
            selftest::energy(),
            selftest::efficiencies(),
            selftest::bit_exactness(10, 30),
            selftest::multiplier_oracle(100_000),
            selftest::op_oracles(1_000),
            selftest::protocol(1_000),
            selftest::metrics_reproduction(),
        ]
    } else {
        selftest::run_all()
    };
    let mut failed = 0;
    for o in &outcomes {
        writeln!(out, "{o}")?;
        out.flush()?;
        failed += !o.passed as usize;
    }
    writeln!(out, "{} of {} checks passed", outcomes.len() - failed, outcomes.len())?;
    if failed > 0 {
        return Err(CliError::Runtime(format!("{failed} check(s) failed")));
    }
    Ok(())
}

pub fn dispatch(cli: &Cli, out: &mut dyn Write) -> Result<()> {
    let cfg = match &cli.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    match &cli.command {
        Cmd::Analyze(a) => analyze(&cfg, a, out),
        Cmd::Infer(a) => infer(&cfg, a, out),
        Cmd::Trace(a) => trace(&cfg, a, out),
        Cmd::Pack(a) => pack(a, out),
        Cmd::GenModel(a) => gen_model(a, out),
        Cmd::Serve(a) => serve(&cfg, a, out),
        Cmd::Load(a) => load(a, out),
        Cmd::Run(a) => run(a, out),
        Cmd::Synth(a) => synth(a, out),
        Cmd::Eval(a) => eval(&cfg, a, out),
        Cmd::Selftest(a) => selftest_cmd(a, out),
    }
}
