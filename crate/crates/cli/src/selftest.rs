//! Acceptance checks, shared by the `selftest` command and the acceptance
//! test suite. Each check prints nothing itself and reports its outcome.

use std::fmt;
use std::thread;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use scgnn_core::cycles::{array_efficiency, network_report, CycleReport, RequantConvention};
use scgnn_core::qnn::{
    conv1d_acc, global_avg_pool_shift, infer_window, maxpool2_acc, requantize_logit, requantize_u8, AccMap,
};
use scgnn_core::random::{random_model, random_small_network, random_window};
use scgnn_core::{LayerSpec, LayerWeights, NetworkSpec, PackedModel, PoolMode, QuantTensor, RequantParams, WeightSet};
use scgnn_eval::metrics::predictions_from_confusion;
use scgnn_eval::runner::predictions;
use scgnn_eval::{build_reference_model, evaluate, run_windows, synth_windows, Backend, ReferenceConfig, SynthConfig};
use scgnn_link::{mem_pair, Command, Decoder, Device, FaultInjector, Frame, HostClient};
use scgnn_sim::{mul64signed, SimMachine};

pub const CLOCK_HZ: f64 = 24e6;
pub const POWER_MW: f64 = 8.55;
pub const MEASURED_LATENCY_S: f64 = 0.0955;

pub const PRIME: [u64; 5] = [9_632, 154_112, 315_392, 630_784, 2_688];
pub const COMPUTE: [u64; 5] = [12_384, 198_144, 405_504, 450_560, 384];
pub const REQUANT: [u64; 5] = [24_768, 24_768, 25_344, 768, 18];
pub const TOTALS: [u64; 3] = [1_112_608, 1_066_976, 75_666];
pub const TOTAL_CYCLES: u64 = 2_255_250;
pub const REFERENCE_CONFUSION: [[u64; 3]; 3] = [[9469, 39, 383], [55, 9914, 125], [44, 45, 9926]];

#[derive(Debug, Clone)]
pub struct Outcome {
    pub id: u8,
    pub title: &'static str,
    pub passed: bool,
    pub detail: String,
    pub elapsed: Duration,
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "[{}] {:>2} {}: {} ({:.2} s)",
            if self.passed { "PASS" } else { "FAIL" },
            self.id,
            self.title,
            self.detail,
            self.elapsed.as_secs_f64()
        )
    }
}

/// Collects sub-results of one check.
struct Tally {
    failures: Vec<String>,
    notes: Vec<String>,
}

impl Tally {
    fn new() -> Self {
        Self { failures: Vec::new(), notes: Vec::new() }
    }

    fn expect(&mut self, ok: bool, what: impl Into<String>) {
        let what = what.into();
        if ok {
            self.notes.push(what);
        } else {
            self.failures.push(what);
        }
    }

    fn note(&mut self, what: impl Into<String>) {
        self.notes.push(what.into());
    }

    fn finish(self, id: u8, title: &'static str, start: Instant) -> Outcome {
        let passed = self.failures.is_empty();
        let detail = if passed { self.notes.join("; ") } else { format!("mismatch: {}", self.failures.join("; ")) };
        Outcome { id, title, passed, detail, elapsed: start.elapsed() }
    }
}

fn within_rel(x: f64, target: f64, rel: f64) -> bool {
    (x - target).abs() <= rel * target.abs()
}

fn default_report(measured: Option<f64>) -> CycleReport {
    network_report(&NetworkSpec::table1(), CLOCK_HZ, POWER_MW, measured, RequantConvention::TableI)
        .expect("default topology is valid")
}

pub fn table_reproduction() -> Outcome {
    let start = Instant::now();
    let r = default_report(None);
    let mut t = Tally::new();
    let col = |f: fn(&scgnn_core::cycles::LayerReport) -> u64| r.layers.iter().map(f).collect::<Vec<_>>();
    let prime = col(|l| l.cycles.prime);
    let compute = col(|l| l.cycles.compute);
    let requant = col(|l| l.cycles.requant);
    t.expect(prime == PRIME, format!("prime {prime:?}"));
    t.expect(compute == COMPUTE, format!("compute {compute:?}"));
    t.expect(requant == REQUANT, format!("requant {requant:?}"));
    let totals = [r.totals.prime, r.totals.compute, r.totals.requant];
    t.expect(totals == TOTALS, format!("totals {totals:?}"));
    let elapsed = start.elapsed();
    t.expect(elapsed < Duration::from_secs(1), format!("{:.1} ms", elapsed.as_secs_f64() * 1e3));
    t.finish(1, "per-layer cycle table", start)
}

pub fn latency_and_fps() -> Outcome {
    let start = Instant::now();
    let r = default_report(None);
    let mut t = Tally::new();
    t.expect(r.totals.cycles == TOTAL_CYCLES, format!("{} cycles", r.totals.cycles));
    t.expect(within_rel(r.totals.cycles as f64, 2.26e6, 0.01), "about 2.26M cycles");
    let ms = r.latency_s * 1e3;
    t.expect(within_rel(ms, 93.97, 0.01) && (ms - 93.97).abs() < 0.005, format!("{ms:.2} ms"));
    t.expect(within_rel(r.fps, 10.64, 0.01) && within_rel(r.fps, 10.6, 0.01), format!("{:.2} FPS", r.fps));
    t.finish(2, "latency and frame rate at 24 MHz", start)
}

pub fn throughput() -> Outcome {
    let start = Instant::now();
    let r = default_report(Some(MEASURED_LATENCY_S));
    let mut t = Tally::new();
    t.expect(r.totals.macs == 6 * 1_066_976, format!("{} MACs", r.totals.macs));
    t.expect((r.mmacs_per_s - 67.0).abs() <= 0.5, format!("{:.2} MMAC/s", r.mmacs_per_s));
    t.expect((r.mops_per_s - 134.0).abs() <= 1.0, format!("{:.2} MOps/s", r.mops_per_s));
    t.finish(3, "throughput over the measured latency", start)
}

pub fn energy() -> Outcome {
    let start = Instant::now();
    let r = default_report(Some(MEASURED_LATENCY_S));
    let mut t = Tally::new();
    t.expect((r.energy_uj - 816.5).abs() < 0.05, format!("{:.2} uJ", r.energy_uj));
    t.expect(within_rel(r.energy_uj, 819.1, 0.01), format!("{:.2}% below 819.1 uJ", 100.0 * (1.0 - r.energy_uj / 819.1)));
    t.finish(4, "energy per inference", start)
}

fn round_to(x: f64, decimals: i32) -> f64 {
    let f = 10f64.powi(decimals);
    (x * f).round() / f
}

pub fn efficiencies() -> Outcome {
    let start = Instant::now();
    let r = default_report(None);
    let mut t = Tally::new();
    for (k, stated) in [(9, 56.25), (5, 41.67), (1, 12.5)] {
        let v = round_to(100.0 * array_efficiency(k), 2);
        t.expect(v == stated, format!("array K={k} {v:.2}% (stated {stated}%)"));
    }
    for (layer, stated) in [(0, 26.5), (1, 52.6), (2, 53.3)] {
        let exact = 100.0 * r.layers[layer].cycles.sys_eff;
        let v = round_to(exact, 1);
        t.expect(v == stated, format!("system L{layer} {exact:.2}% -> {v:.1}% (stated {stated}%)"));
    }
    t.finish(5, "array and system efficiency", start)
}

/// Golden and simulated logits and activations of one pair, compared.
pub fn compare_pair(net: &NetworkSpec, ws: &WeightSet, x: &QuantTensor, machine: &mut SimMachine) -> Result<u64, String> {
    let g = infer_window(net, ws, x).map_err(|e| format!("golden: {e}"))?;
    let packed = PackedModel::from_parts(net, ws).map_err(|e| format!("pack: {e}"))?;
    machine.load_model(&packed).map_err(|e| format!("load: {e}"))?;
    machine.load_input(x).map_err(|e| format!("input: {e}"))?;
    let run = machine.run_inference().map_err(|e| format!("run: {e}"))?;
    if run.logits != g.logits {
        return Err(format!("logits {:?} vs {:?}", run.logits.values, g.logits.values));
    }
    for (i, a) in g.activations.iter().enumerate() {
        let s = machine.read_layer_activation(i).map_err(|e| format!("layer {i}: {e}"))?;
        if s.data() != a.data() || s.length() != a.length() || s.channels() != a.channels() {
            return Err(format!("activation of layer {i} differs"));
        }
    }
    Ok(run.cycles)
}

pub fn bit_exactness(default_pairs: usize, small_pairs: usize) -> Outcome {
    let start = Instant::now();
    let mut t = Tally::new();
    let mut rng = ChaCha8Rng::seed_from_u64(0xE0);
    let mut machine = SimMachine::default();
    let mut mismatches = Vec::new();
    let mut cycles = Vec::new();
    for i in 0..default_pairs {
        let (net, ws) = random_model(&mut rng, &NetworkSpec::table1());
        let x = random_window(&mut rng, 1, net.input_length);
        match compare_pair(&net, &ws, &x, &mut machine) {
            Ok(c) => cycles.push(c),
            Err(e) => mismatches.push(format!("default pair {i}: {e}")),
        }
    }
    t.expect(cycles.iter().all(|&c| c == TOTAL_CYCLES), "default runs take 2,255,250 cycles");
    let mut small_ok = 0;
    for i in 0..small_pairs {
        let shape = random_small_network(&mut rng, 48);
        let (net, ws) = random_model(&mut rng, &shape);
        let x = random_window(&mut rng, 1, net.input_length);
        match compare_pair(&net, &ws, &x, &mut machine) {
            Ok(_) => small_ok += 1,
            Err(e) => mismatches.push(format!("small pair {i}: {e}")),
        }
    }
    t.expect(mismatches.is_empty(), format!(
        "{} of {} default and {small_ok} of {small_pairs} small pairs identical{}",
        cycles.len(),
        default_pairs,
        mismatches.first().map(|m| format!(" (first: {m})")).unwrap_or_default()
    ));
    let elapsed = start.elapsed();
    t.expect(elapsed < Duration::from_secs(60), format!("{:.1} s", elapsed.as_secs_f64()));
    t.finish(6, "golden and simulator bit-exactness", start)
}

pub fn edge_operands() -> Vec<i32> {
    let mut v = vec![0, 1, -1, 2, -2, 1 << 15, -(1 << 15), (1 << 15) - 1, -((1 << 15) - 1), 1 << 16, -(1 << 16)];
    v.extend([(1 << 16) - 1, -((1 << 16) - 1), i32::MAX, i32::MIN, i32::MAX - 1, i32::MIN + 1, 1 << 30, -(1 << 30)]);
    v
}

pub fn multiplier_oracle(random_pairs: usize) -> Outcome {
    let start = Instant::now();
    let mut t = Tally::new();
    let edges = edge_operands();
    let mut bad = 0u64;
    for &a in &edges {
        for &b in &edges {
            bad += (mul64signed(a, b) != a as i64 * b as i64) as u64;
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0x64);
    for _ in 0..random_pairs {
        let (a, b): (i32, i32) = (rng.gen(), rng.gen());
        bad += (mul64signed(a, b) != a as i64 * b as i64) as u64;
    }
    t.expect(bad == 0, format!("{} edge and {random_pairs} random pairs, {bad} mismatches", edges.len().pow(2)));
    t.finish(7, "serial multiplier against direct multiplication", start)
}

fn random_conv_case(rng: &mut ChaCha8Rng) -> (LayerSpec, LayerWeights, QuantTensor) {
    let k = [1, 3, 5, 9][rng.gen_range(0..4)];
    let c_in = rng.gen_range(1..=4);
    let c_out = rng.gen_range(1..=4);
    let len = rng.gen_range(k.max(2)..=40);
    let layer = LayerSpec::conv(c_in, c_out, k, PoolMode::Bypass);
    let weights = LayerWeights {
        weights: (0..layer.weight_count()).map(|_| rng.gen_range(-127..=127)).collect(),
        biases: (0..c_out).map(|_| rng.gen_range(-100_000..=100_000)).collect(),
    };
    let data = (0..c_in * len).map(|_| rng.gen()).collect();
    let x = QuantTensor::new(c_in, len, data, 1.0, rng.gen()).unwrap();
    (layer, weights, x)
}

/// Direct evaluation of the same-padded correlation in 64-bit arithmetic.
fn conv_brute(x: &QuantTensor, layer: &LayerSpec, w: &LayerWeights) -> Vec<i64> {
    let len = x.length() as i64;
    let pad = (layer.kernel as i64 - 1) / 2;
    let mut out = Vec::new();
    for o in 0..layer.c_out {
        for t in 0..len {
            let mut acc = w.biases[o] as i64;
            for c in 0..layer.c_in {
                for k in 0..layer.kernel as i64 {
                    let i = t + k - pad;
                    if (0..len).contains(&i) {
                        let xv = x.get(c, i as usize) as i64 - x.zero_point as i64;
                        acc += xv * w.weights[(o * layer.c_in + c) * layer.kernel + k as usize] as i64;
                    }
                }
            }
            out.push(acc);
        }
    }
    out
}

/// `round(acc * m / 2^shift)` with ties away from zero, in exact rationals.
fn requant_brute(acc: i32, m: i32, shift: u8) -> i128 {
    let p = acc as i128 * m as i128;
    let d = 1i128 << shift;
    let q = p.abs() / d;
    let r = p.abs() % d;
    let mag = if 2 * r >= d { q + 1 } else { q };
    if p < 0 {
        -mag
    } else {
        mag
    }
}

pub fn op_oracles(instances: usize) -> Outcome {
    let start = Instant::now();
    let mut t = Tally::new();
    let mut rng = ChaCha8Rng::seed_from_u64(0x0AC1E);
    let (mut conv_bad, mut pool_bad, mut gap_bad, mut rq_bad) = (0, 0, 0, 0);
    for _ in 0..instances {
        let (layer, w, x) = random_conv_case(&mut rng);
        let acc = conv1d_acc(&x, &layer, &w).unwrap();
        let brute = conv_brute(&x, &layer, &w);
        conv_bad += (acc.data().iter().map(|&v| v as i64).collect::<Vec<_>>() != brute) as u32;

        let (c, len) = (rng.gen_range(1..=4), rng.gen_range(1..=33));
        let data: Vec<i32> = (0..c * len).map(|_| rng.gen_range(-1_000_000..=1_000_000)).collect();
        let a = AccMap::new(c, len, data.clone()).unwrap();
        let pooled = maxpool2_acc(&a);
        let expect: Vec<i32> = (0..c)
            .flat_map(|ch| {
                let row = &data[ch * len..(ch + 1) * len];
                (0..len.div_ceil(2)).map(move |i| row[2 * i].max(row.get(2 * i + 1).copied().unwrap_or(i32::MIN)))
            })
            .collect();
        pool_bad += (pooled.data() != expect.as_slice()) as u32;

        let depth = 1usize << rng.gen_range(0..=6);
        let data: Vec<i32> = (0..c * depth).map(|_| rng.gen_range(-8_000_000..=8_000_000)).collect();
        let gap = global_avg_pool_shift(&AccMap::new(c, depth, data.clone()).unwrap()).unwrap();
        let shift = depth.trailing_zeros();
        let expect: Vec<i32> = (0..c)
            .map(|ch| data[ch * depth..(ch + 1) * depth].iter().map(|&v| (v as f64 / (1u64 << shift) as f64).floor() as i32).sum())
            .collect();
        gap_bad += (gap != expect) as u32;

        let acc: i32 = rng.gen();
        let rp = RequantParams::new(rng.gen_range(1..i32::MAX), rng.gen_range(0..=62));
        let zp: u8 = rng.gen();
        let exact = requant_brute(acc, rp.multiplier, rp.shift);
        let u8_expect = (exact + zp as i128).clamp(0, 255) as u8;
        let logit_expect = exact.clamp(i32::MIN as i128, i32::MAX as i128) as i32;
        rq_bad += (requantize_u8(acc, rp, zp) != u8_expect || requantize_logit(acc, rp) != logit_expect) as u32;
    }
    t.expect(conv_bad == 0, format!("conv {conv_bad}/{instances}"));
    t.expect(pool_bad == 0, format!("max-pool {pool_bad}/{instances}"));
    t.expect(gap_bad == 0, format!("average-pool {gap_bad}/{instances}"));
    t.expect(rq_bad == 0, format!("requant {rq_bad}/{instances}"));
    t.finish(8, "golden ops against brute-force oracles", start)
}

fn spawn_device(device: Device) -> (scgnn_link::MemEnd, thread::JoinHandle<Device>) {
    let (mut host, dev) = mem_pair(None);
    host.set_timeout(Some(Duration::from_millis(500)));
    let handle = thread::spawn(move || {
        let mut device = device;
        device.serve(dev).expect("device session");
        device
    });
    (host, handle)
}

pub fn protocol(fuzz_frames: usize) -> Outcome {
    let start = Instant::now();
    let mut t = Tally::new();
    let mut rng = ChaCha8Rng::seed_from_u64(0x11);
    let (net, ws) = random_model(&mut rng, &NetworkSpec::table1());
    let packed = PackedModel::from_parts(&net, &ws).unwrap();
    let x = random_window(&mut rng, 1, net.input_length);
    let golden = infer_window(&net, &ws, &x).unwrap().logits;

    // clean session
    let (link, handle) = spawn_device(Device::default());
    let mut host = HostClient::new(link, 3);
    match host.load_model(&packed).and_then(|r| host.run(&x).map(|o| (r, o))) {
        Ok((report, (logits, cycles))) => {
            t.expect(logits == golden && cycles as u64 == TOTAL_CYCLES, format!(
                "LOAD ({} frames) -> VERIFY -> RUN matches golden, {cycles} cycles",
                report.frames
            ));
        }
        Err(e) => t.expect(false, format!("clean session: {e}")),
    }
    drop(host);
    let device = handle.join().unwrap();

    // one corrupted frame mid-load
    let (link, handle) = spawn_device(device);
    let mut host = HostClient::new(FaultInjector::new(link, 4, 100, 5), 3);
    match host.load_model(&packed).and_then(|_| host.run(&x)) {
        Ok((logits, _)) => {
            let rt = host.stats().retransmissions;
            t.expect(logits == golden && rt >= 1, format!("corrupted frame recovered with {rt} retransmission(s)"));
        }
        Err(e) => t.expect(false, format!("corrupted session: {e}")),
    }
    drop(host);
    handle.join().unwrap();

    // fuzzed frames, one response each
    let mut device = Device::default();
    let mut decoder = Decoder::default();
    let codes = [0x01, 0x02, 0x03, 0x04, 0x05, 0x80, 0x81, 0x82, 0x00, 0xFF];
    let mut unanswered = 0;
    for _ in 0..fuzz_frames {
        let len = if rng.gen_bool(0.1) { rng.gen_range(0..=4096) } else { rng.gen_range(0..64) };
        let frame = Frame::new(
            Command::from_code(codes[rng.gen_range(0..codes.len())]),
            if rng.gen_bool(0.5) { device.expected_seq() } else { rng.gen() },
            (0..len).map(|_| rng.gen()).collect(),
        );
        let mut bytes = frame.encode().unwrap();
        if rng.gen_bool(0.3) {
            let at = rng.gen_range(5..bytes.len());
            bytes[at] ^= 1 << rng.gen_range(0..8);
        }
        decoder.push(&bytes);
        let mut responses = 0;
        while let Some(item) = decoder.next_frame() {
            let resp = match item {
                Ok(f) => device.handle(&f),
                Err(e) => device.on_error(&e),
            };
            responses += resp.encode().is_ok() as usize;
        }
        unanswered += (responses != 1) as usize;
    }
    t.expect(unanswered == 0, format!("{fuzz_frames} fuzzed frames, {unanswered} without exactly one response"));
    device.begin_session();
    let (link, handle) = spawn_device(device);
    let mut host = HostClient::new(link, 3);
    let ok = host.load_model(&packed).and_then(|_| host.run(&x)).map(|(l, _)| l == golden).unwrap_or(false);
    t.expect(ok, "service still answers after fuzzing");
    drop(host);
    handle.join().unwrap();
    t.finish(9, "link protocol end to end", start)
}

pub fn metrics_reproduction() -> Outcome {
    let start = Instant::now();
    let mut t = Tally::new();
    let (preds, labels) = predictions_from_confusion(&REFERENCE_CONFUSION);
    let s = evaluate(&preds, &labels).expect("consistent shapes");
    let acc = 100.0 * s.accuracy;
    t.expect((acc - 97.70).abs() <= 0.01, format!("accuracy {acc:.2}%"));
    for (c, stated) in [95.73, 98.22, 99.11].into_iter().enumerate() {
        let row: u64 = REFERENCE_CONFUSION[c].iter().sum();
        let oracle = 100.0 * REFERENCE_CONFUSION[c][c] as f64 / row as f64;
        let r = 100.0 * s.per_class[c].recall;
        t.expect((r - oracle).abs() < 1e-9 && round_to(r, 2) == stated, format!("recall[{c}] {r:.2}%"));
    }
    t.finish(10, "metrics on the reference confusion matrix", start)
}

pub fn synthetic_smoke(test_windows: usize) -> Outcome {
    let start = Instant::now();
    let mut t = Tally::new();
    t.note("clinical validation accuracy and FP32/INT8 training comparison need private data; not reproduced");
    match build_reference_model(&ReferenceConfig::default()) {
        Ok(r) => {
            let set = synth_windows(&SynthConfig { n: test_windows, seed: 0xACC, ..SynthConfig::default() })
                .expect("valid config");
            match run_windows(&r.packed, &set.windows, &r.input, Backend::Golden, RequantConvention::TableI) {
                Ok(res) => {
                    let s = evaluate(&predictions(&res, r.logit_scale), &set.labels).unwrap();
                    t.expect(s.accuracy > 0.90, format!(
                        "integer reference model {:.2}% on {} synthetic windows",
                        100.0 * s.accuracy,
                        set.len()
                    ));
                }
                Err(e) => t.expect(false, format!("inference: {e}")),
            }
        }
        Err(e) => t.expect(false, format!("reference model: {e}")),
    }
    t.finish(11, "synthetic end-to-end smoke test", start)
}

/// Every check at its full size, in criterion order.
pub fn run_all() -> Vec<Outcome> {
    vec![
        table_reproduction(),
        latency_and_fps(),
        throughput(),
        energy(),
        efficiencies(),
        bit_exactness(100, 100),
        multiplier_oracle(1_000_000),
        op_oracles(1_000),
        protocol(10_000),
        metrics_reproduction(),
        synthetic_smoke(900),
    ]
}
