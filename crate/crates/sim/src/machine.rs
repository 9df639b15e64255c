//! The accelerator: systolic cluster, pooling, serial requantizer, packer and
//! the layer sequencer, advanced one clock per `step`.

use std::collections::VecDeque;

use scgnn_core::cycles::{RequantConvention, PE_COUNT, PRIME_CYCLES};
use scgnn_core::model::WEIGHT_MEM_WORDS;
use scgnn_core::qnn::gap_shift_for;
use scgnn_core::{Activation, LayerSpec, Logits, NetworkSpec, PackedModel, PoolMode, QuantTensor, RequantParams};
use serde::Serialize;

use crate::error::{Result, SimError};
use crate::memory::{MemorySubsystem, ACT_BUFFER_WORDS, BIAS_ROM_ENTRIES, INPUT_BUFFER_WORDS};
use crate::packer::{unpack, Packer};
use crate::requant::RequantUnit;
use crate::trace::{FsmState, MemOp, TraceEvent, TraceSink};

/// Six-PE weight-broadcast array. `x[0]` holds the newest sample.
#[derive(Debug, Clone, Default)]
pub struct SystolicCluster {
    pub x: [u8; PE_COUNT],
    pub acc: [i32; PE_COUNT],
    pub weight: i8,
    pub bias: i32,
}

impl SystolicCluster {
    fn shift_in(&mut self, sample: u8) {
        self.x.copy_within(0..PE_COUNT - 1, 1);
        self.x[0] = sample;
    }

    /// Accumulator value of output lane `j` (position `6b + j` of the batch).
    fn lane(&self, j: usize) -> i32 {
        self.acc[PE_COUNT - 1 - j]
    }
}

/// Cycle and MAC counts of one executed layer.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct LayerStats {
    pub prime: u64,
    pub compute: u64,
    pub requant: u64,
    pub macs: u64,
    pub weight_fetches: u64,
}

impl LayerStats {
    pub fn total(&self) -> u64 {
        self.prime + self.compute + self.requant
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunResult {
    pub logits: Logits,
    pub cycles: u64,
    pub layers: Vec<LayerStats>,
}

#[derive(Debug, Clone, Copy)]
enum Dest {
    Drop,
    Act { channel: usize, pos: usize },
    Result(usize),
}

#[derive(Debug, Clone, Copy)]
struct Job {
    value: i32,
    dest: Dest,
}

/// Sequencer configuration of one layer.
#[derive(Debug, Clone, Copy)]
struct LayerCtx {
    c_in: usize,
    c_out: usize,
    kernel: usize,
    pad: usize,
    w_in: usize,
    n_b: usize,
    out_len: usize,
    in_row_words: usize,
    out_row_words: usize,
    pool: PoolMode,
    requant: RequantParams,
    activation: Activation,
    zp_in: u8,
    zp_out: u8,
    gap_shift: u32,
    weight_base: u32,
    bias_base: usize,
    is_last: bool,
}

#[derive(Debug, Clone)]
struct Config {
    net: NetworkSpec,
    lengths: Vec<usize>,
    weight_bases: Vec<u32>,
    bias_bases: Vec<usize>,
    weight_words: usize,
    bias_count: usize,
}

#[derive(Debug, Clone)]
struct Fsm {
    state: FsmState,
    layer: usize,
    o: usize,
    b: usize,
    c: usize,
    step: usize,
    jobs: VecDeque<Job>,
    gap_sum: i32,
}

impl Default for Fsm {
    fn default() -> Self {
        Self {
            state: FsmState::Idle,
            layer: 0,
            o: 0,
            b: 0,
            c: 0,
            step: 0,
            jobs: VecDeque::new(),
            gap_sum: 0,
        }
    }
}

pub struct SimMachine {
    mem: MemorySubsystem,
    cluster: SystolicCluster,
    requant: RequantUnit,
    packer: Packer,
    fsm: Fsm,
    convention: RequantConvention,
    config: Option<Config>,
    input_zero_point: Option<u8>,
    ctx: Option<LayerCtx>,
    latched_word: Option<(u32, u16)>,
    requant_result: i32,
    cycle_counter: u64,
    run_start: u64,
    stats: Vec<LayerStats>,
    outputs: Vec<Option<Vec<u16>>>,
    results: Vec<i32>,
    last_run: Option<RunResult>,
    trace: Option<Box<dyn TraceSink>>,
    emit: bool,
    ops: Vec<MemOp>,
    macs_this_cycle: u8,
}

impl Default for SimMachine {
    fn default() -> Self {
        Self::new(RequantConvention::TableI)
    }
}

impl std::fmt::Debug for SimMachine {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SimMachine")
            .field("state", &self.fsm.state)
            .field("layer", &self.fsm.layer)
            .field("cycle_counter", &self.cycle_counter)
            .field("model_loaded", &self.config.is_some())
            .finish_non_exhaustive()
    }
}

fn row_words(len: usize) -> usize {
    len.div_ceil(2)
}

impl SimMachine {
    pub fn new(convention: RequantConvention) -> Self {
        Self {
            mem: MemorySubsystem::new(),
            cluster: SystolicCluster::default(),
            requant: RequantUnit::default(),
            packer: Packer::default(),
            fsm: Fsm::default(),
            convention,
            config: None,
            input_zero_point: None,
            ctx: None,
            latched_word: None,
            requant_result: 0,
            cycle_counter: 0,
            run_start: 0,
            stats: Vec::new(),
            outputs: Vec::new(),
            results: Vec::new(),
            last_run: None,
            trace: None,
            emit: false,
            ops: Vec::new(),
            macs_this_cycle: 0,
        }
    }

    pub fn convention(&self) -> RequantConvention {
        self.convention
    }

    pub fn set_trace(&mut self, sink: Option<Box<dyn TraceSink>>) {
        self.trace = sink;
    }

    pub fn memory(&self) -> &MemorySubsystem {
        &self.mem
    }

    /// Direct memory access for diagnostics and fault injection.
    pub fn memory_mut(&mut self) -> &mut MemorySubsystem {
        &mut self.mem
    }

    pub fn cluster(&self) -> &SystolicCluster {
        &self.cluster
    }

    pub fn cycle_counter(&self) -> u64 {
        self.cycle_counter
    }

    pub fn state(&self) -> FsmState {
        self.fsm.state
    }

    /// `(layer, c_out, batch, c_in, step)` loop counters.
    pub fn loop_counters(&self) -> (usize, usize, usize, usize, usize) {
        (self.fsm.layer, self.fsm.o, self.fsm.b, self.fsm.c, self.fsm.step)
    }

    pub fn is_running(&self) -> bool {
        self.fsm.state != FsmState::Idle
    }

    pub fn network(&self) -> Option<&NetworkSpec> {
        self.config.as_ref().map(|c| &c.net)
    }

    pub fn has_input(&self) -> bool {
        self.input_zero_point.is_some()
    }

    pub fn last_result(&self) -> Option<&RunResult> {
        self.last_run.as_ref()
    }

    /// Writes the weight image, bias ROM and scale registers and configures
    /// the sequencer. Any previous model and input are discarded.
    pub fn load_model(&mut self, model: &PackedModel) -> Result<()> {
        if self.is_running() {
            return Err(SimError::State("cannot load a model while a run is active".into()));
        }
        let net = model.network();
        net.validate().map_err(|e| SimError::Load(e.to_string()))?;
        if model.weight_words.len() > WEIGHT_MEM_WORDS {
            return Err(SimError::Load(format!(
                "{} weight words exceed the {WEIGHT_MEM_WORDS}-word memory",
                model.weight_words.len()
            )));
        }
        if model.weight_words.len() * 2 < model.total_weights() {
            return Err(SimError::Load("weight image shorter than the topology".into()));
        }
        if model.bias_table.len() > BIAS_ROM_ENTRIES || model.bias_table.len() != net.total_biases() {
            return Err(SimError::Load(format!(
                "bias table of {} entries does not fit the topology or the {BIAS_ROM_ENTRIES}-entry ROM",
                model.bias_table.len()
            )));
        }
        let lengths = net.layer_input_lengths().map_err(|e| SimError::Load(e.to_string()))?;
        let first = &net.layers[0];
        if first.c_in * row_words(net.input_length) > INPUT_BUFFER_WORDS {
            return Err(SimError::Load(format!(
                "{}x{} input exceeds the {INPUT_BUFFER_WORDS}-word input buffer",
                first.c_in, net.input_length
            )));
        }
        for (i, (layer, &w)) in net.layers.iter().zip(&lengths).enumerate() {
            let out = layer.output_length(w).map_err(|e| SimError::Load(e.to_string()))?;
            if layer.c_out * row_words(out) > ACT_BUFFER_WORDS {
                return Err(SimError::Load(format!(
                    "layer {i} output of {} words exceeds the {ACT_BUFFER_WORDS}-word activation buffer",
                    layer.c_out * row_words(out)
                )));
            }
        }
        self.mem.clear();
        for (i, &w) in model.weight_words.iter().enumerate() {
            self.mem.write_weight_word(i as u32, w).map_err(SimError::Load)?;
        }
        self.mem.write_biases(&model.bias_table).map_err(SimError::Load)?;
        self.mem.set_scale_regs(net.layers.iter().map(|l| l.requant).collect());
        self.config = Some(Config {
            weight_bases: model.layer_bases().iter().map(|a| a.0).collect(),
            bias_bases: model.bias_bases(),
            weight_words: model.weight_words.len(),
            bias_count: model.bias_table.len(),
            lengths,
            net,
        });
        self.input_zero_point = None;
        self.outputs.clear();
        self.results.clear();
        self.last_run = None;
        self.stats.clear();
        self.latched_word = None;
        Ok(())
    }

    /// Reconstructs the loaded model from memory contents and the sequencer
    /// configuration.
    pub fn readback_model(&self) -> Result<PackedModel> {
        let cfg = self.config.as_ref().ok_or_else(|| SimError::State("no model loaded".into()))?;
        let weight_words = (0..cfg.weight_words as u32)
            .map(|w| self.mem.read_weight_word(w))
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(SimError::Load)?;
        let mut layers = cfg.net.layers.clone();
        for (layer, rq) in layers.iter_mut().zip(self.mem.scale_regs()) {
            layer.requant = *rq;
        }
        Ok(PackedModel {
            input_length: cfg.net.input_length,
            layers,
            bias_table: self.mem.bias_rom()[..cfg.bias_count].to_vec(),
            weight_words,
        })
    }

    /// Packs the window two samples per word into the input buffer.
    pub fn load_input(&mut self, input: &QuantTensor) -> Result<()> {
        if self.is_running() {
            return Err(SimError::State("cannot load input while a run is active".into()));
        }
        let cfg = self.config.as_ref().ok_or_else(|| SimError::State("no model loaded".into()))?;
        let c_in = cfg.net.layers[0].c_in;
        if input.channels() != c_in || input.length() != cfg.net.input_length {
            return Err(SimError::Shape(format!(
                "model expects a {c_in}x{} window, got {}x{}",
                cfg.net.input_length,
                input.channels(),
                input.length()
            )));
        }
        let rw = row_words(input.length());
        for c in 0..c_in {
            for (j, pair) in input.row(c).chunks(2).enumerate() {
                let hi = pair.get(1).copied().unwrap_or(0) as u16;
                self.mem
                    .write_input_word(c * rw + j, (hi << 8) | pair[0] as u16)
                    .map_err(SimError::Load)?;
            }
        }
        self.input_zero_point = Some(input.zero_point);
        Ok(())
    }

    /// Sample `t` of input channel `c`, served through the byte read mux.
    pub fn read_input_sample(&self, c: usize, t: usize) -> Result<u8> {
        let cfg = self.config.as_ref().ok_or_else(|| SimError::State("no model loaded".into()))?;
        if !self.has_input() || t >= cfg.net.input_length || c >= cfg.net.layers[0].c_in {
            return Err(SimError::State(format!("no input sample ({c}, {t})")));
        }
        let word = self.mem.read_input_word(c * row_words(cfg.net.input_length) + t / 2).map_err(SimError::Load)?;
        Ok(if t.is_multiple_of(2) { word as u8 } else { (word >> 8) as u8 })
    }

    /// Packed output words written by `layer` during the latest run.
    pub fn layer_output_words(&self, layer: usize) -> Option<&[u16]> {
        self.outputs.get(layer).and_then(|o| o.as_deref())
    }

    /// Unpacks the output buffer of an executed ReLU layer.
    pub fn read_layer_activation(&self, layer: usize) -> Result<QuantTensor> {
        let cfg = self.config.as_ref().ok_or_else(|| SimError::State("no model loaded".into()))?;
        let words = self
            .layer_output_words(layer)
            .ok_or_else(|| SimError::State(format!("layer {layer} has not been executed")))?;
        let spec = &cfg.net.layers[layer];
        let out_len = spec.output_length(cfg.lengths[layer])?;
        let rw = row_words(out_len);
        let data = (0..spec.c_out)
            .flat_map(|o| unpack(&words[o * rw..(o + 1) * rw], out_len))
            .collect();
        Ok(QuantTensor::new(spec.c_out, out_len, data, 1.0, spec.output_zero_point)?)
    }

    /// Begins a run of the layer sequencer.
    pub fn start(&mut self) -> Result<()> {
        if self.is_running() {
            return Err(SimError::State("a run is already active".into()));
        }
        let n = match &self.config {
            None => return Err(SimError::State("no model loaded".into())),
            Some(cfg) => cfg.net.layers.len(),
        };
        if !self.has_input() {
            return Err(SimError::State("no input loaded".into()));
        }
        self.mem.reset_toggle();
        self.stats = vec![LayerStats::default(); n];
        self.outputs = vec![None; n];
        self.results.clear();
        self.packer = Packer::default();
        self.run_start = self.cycle_counter;
        self.latched_word = None;
        self.fsm = Fsm::default();
        self.enter_layer(0);
        Ok(())
    }

    /// Advances one clock and returns its trace record.
    pub fn step(&mut self) -> Result<TraceEvent> {
        Ok(self.tick(true)?.expect("event requested"))
    }

    /// Runs a full inference on the loaded model and input.
    pub fn run_inference(&mut self) -> Result<RunResult> {
        self.start()?;
        let emit = self.trace.is_some();
        while self.is_running() {
            self.tick(emit)?;
        }
        Ok(self.last_run.clone().expect("run completed"))
    }

    fn enter_layer(&mut self, index: usize) {
        let cfg = self.config.as_ref().expect("configured");
        let spec: &LayerSpec = &cfg.net.layers[index];
        let w_in = cfg.lengths[index];
        let out_len = spec.output_length(w_in).expect("validated at load");
        let zp_in = match index {
            0 => self.input_zero_point.expect("input loaded"),
            _ => cfg.net.layers[index - 1].output_zero_point,
        };
        self.ctx = Some(LayerCtx {
            c_in: spec.c_in,
            c_out: spec.c_out,
            kernel: spec.kernel,
            pad: spec.padding,
            w_in,
            n_b: w_in.div_ceil(PE_COUNT),
            out_len,
            in_row_words: row_words(w_in),
            out_row_words: row_words(out_len),
            pool: spec.pool_mode,
            requant: self.mem.scale_regs()[index],
            activation: spec.activation,
            zp_in,
            zp_out: spec.output_zero_point,
            gap_shift: match spec.pool_mode {
                PoolMode::GlobalAvgPool => gap_shift_for(w_in).expect("validated at load"),
                _ => 0,
            },
            weight_base: cfg.weight_bases[index],
            bias_base: cfg.bias_bases[index],
            is_last: index + 1 == cfg.net.layers.len(),
        });
        self.fsm.layer = index;
        self.fsm.o = 0;
        self.fsm.b = 0;
        self.fsm.c = 0;
        self.fsm.step = 0;
        self.fsm.gap_sum = 0;
        self.fsm.state = FsmState::Prime;
    }

    fn note(&mut self, op: MemOp) {
        if self.emit {
            self.ops.push(op);
        }
    }

    fn fault(&self, detail: impl Into<String>) -> SimError {
        let (l, o, b, c, s) = self.loop_counters();
        SimError::Fault {
            cycle: self.cycle_counter - self.run_start,
            state: format!("{} (layer {l}, c_out {o}, batch {b}, c_in {c}, step {s})", self.fsm.state),
            detail: detail.into(),
        }
    }

    /// Fetches sample `t` of channel `c` of the current layer's input;
    /// positions outside the signal read as the input zero point.
    fn read_sample(&mut self, ctx: &LayerCtx, c: usize, t: isize) -> Result<u8> {
        if t < 0 || t as usize >= ctx.w_in {
            return Ok(ctx.zp_in);
        }
        let t = t as usize;
        let word_index = c * ctx.in_row_words + t / 2;
        let word = if self.fsm.layer == 0 {
            self.note(MemOp::InputRead { word: word_index });
            self.mem.read_input_word(word_index)
        } else {
            let buffer = self.mem.read_buffer();
            self.note(MemOp::ActRead { buffer, word: word_index });
            self.mem.read_act(buffer, word_index)
        }
        .map_err(|e| self.fault(e))?;
        Ok(if t.is_multiple_of(2) { word as u8 } else { (word >> 8) as u8 })
    }

    fn batch_base(&self, ctx: &LayerCtx) -> isize {
        (PE_COUNT * self.fsm.b) as isize - ctx.pad as isize
    }

    fn tick(&mut self, want_event: bool) -> Result<Option<TraceEvent>> {
        if !self.is_running() {
            return Err(SimError::State("machine is idle".into()));
        }
        let ctx = self.ctx.expect("layer configured");
        self.emit = want_event || self.trace.is_some();
        self.ops.clear();
        self.macs_this_cycle = 0;
        let (state, layer, o, b, c, step) =
            (self.fsm.state, self.fsm.layer, self.fsm.o, self.fsm.b, self.fsm.c, self.fsm.step);
        match state {
            FsmState::Prime => self.prime_cycle(&ctx)?,
            FsmState::Compute => self.compute_cycle(&ctx)?,
            FsmState::Requant => self.requant_cycle(&ctx)?,
            FsmState::Idle => unreachable!(),
        }
        let event = self.emit.then(|| TraceEvent {
            cycle: self.cycle_counter - self.run_start,
            state,
            layer,
            c_out: o,
            batch: b,
            c_in: c,
            k: step,
            mem: std::mem::take(&mut self.ops),
            macs: self.macs_this_cycle,
        });
        self.cycle_counter += 1;
        if let (Some(sink), Some(ev)) = (self.trace.as_mut(), event.as_ref()) {
            sink.record(ev)?;
        }
        Ok(if want_event { event } else { None })
    }

    fn prime_cycle(&mut self, ctx: &LayerCtx) -> Result<()> {
        let step = self.fsm.step;
        if step == 0 {
            if self.fsm.c == 0 {
                let index = ctx.bias_base + self.fsm.o;
                self.note(MemOp::BiasRead { index });
                let bias = self.mem.bias(index).map_err(|e| self.fault(e))?;
                self.cluster.bias = bias;
                self.cluster.acc = [bias; PE_COUNT];
            }
        } else {
            let t = self.batch_base(ctx) + step as isize - 1;
            let sample = self.read_sample(ctx, self.fsm.c, t)?;
            self.cluster.shift_in(sample);
        }
        self.stats[self.fsm.layer].prime += 1;
        self.fsm.step += 1;
        if self.fsm.step as u64 == PRIME_CYCLES {
            self.fsm.step = 0;
            self.fsm.state = FsmState::Compute;
        }
        Ok(())
    }

    fn compute_cycle(&mut self, ctx: &LayerCtx) -> Result<()> {
        let (o, c, k) = (self.fsm.o, self.fsm.c, self.fsm.step);
        let addr = ctx.weight_base + ((o * ctx.c_in + c) * ctx.kernel + k) as u32;
        let word_addr = addr >> 1;
        let word = match self.latched_word {
            Some((a, w)) if a == word_addr => w,
            _ => {
                self.note(MemOp::WeightFetch { word: word_addr });
                let w = self.mem.read_weight_word(word_addr).map_err(|e| self.fault(e))?;
                self.stats[self.fsm.layer].weight_fetches += 1;
                self.latched_word = Some((word_addr, w));
                w
            }
        };
        self.cluster.weight = if addr & 1 == 0 { word as u8 } else { (word >> 8) as u8 } as i8;
        let w = self.cluster.weight as i32;
        let zp = ctx.zp_in as i32;
        for i in 0..PE_COUNT {
            let product = (self.cluster.x[i] as i32 - zp) * w;
            match self.cluster.acc[i].checked_add(product) {
                Some(v) => self.cluster.acc[i] = v,
                None => {
                    let pos = PE_COUNT * self.fsm.b + PE_COUNT - 1 - i;
                    return Err(self.fault(format!("accumulator overflow at channel {o}, position {pos}")));
                }
            }
        }
        self.macs_this_cycle = PE_COUNT as u8;
        let st = &mut self.stats[self.fsm.layer];
        st.compute += 1;
        st.macs += PE_COUNT as u64;
        if k + 1 < ctx.kernel {
            let t = self.batch_base(ctx) + (PE_COUNT + k) as isize;
            let sample = self.read_sample(ctx, c, t)?;
            self.cluster.shift_in(sample);
        }
        self.fsm.step += 1;
        if self.fsm.step == ctx.kernel {
            self.fsm.step = 0;
            self.fsm.c += 1;
            if self.fsm.c < ctx.c_in {
                self.fsm.state = FsmState::Prime;
            } else {
                self.fsm.c = 0;
                self.pool_batch(ctx)?;
                self.after_batch(ctx);
            }
        }
        Ok(())
    }

    fn dest(&self, ctx: &LayerCtx, pos: usize) -> Dest {
        let channel = self.fsm.o;
        if pos >= ctx.out_len {
            Dest::Drop
        } else if ctx.is_last {
            Dest::Result(channel * ctx.out_len + pos)
        } else {
            Dest::Act { channel, pos }
        }
    }

    /// Pools the finished batch and queues its requantization jobs.
    fn pool_batch(&mut self, ctx: &LayerCtx) -> Result<()> {
        let b = self.fsm.b;
        let valid = |j: usize| PE_COUNT * b + j < ctx.w_in;
        match ctx.pool {
            PoolMode::MaxPool2 => {
                for p in 0..PE_COUNT / 2 {
                    let lo = if valid(2 * p) { self.cluster.lane(2 * p) } else { i32::MIN };
                    let hi = if valid(2 * p + 1) { self.cluster.lane(2 * p + 1) } else { i32::MIN };
                    let dest = self.dest(ctx, PE_COUNT / 2 * b + p);
                    self.fsm.jobs.push_back(Job { value: lo.max(hi), dest });
                }
            }
            PoolMode::Bypass => {
                for j in (0..PE_COUNT).filter(|&j| valid(j)) {
                    let dest = self.dest(ctx, PE_COUNT * b + j);
                    self.fsm.jobs.push_back(Job { value: self.cluster.lane(j), dest });
                }
            }
            PoolMode::GlobalAvgPool => {
                if b == 0 {
                    self.fsm.gap_sum = 0;
                }
                for j in (0..PE_COUNT).filter(|&j| valid(j)) {
                    let v = self.cluster.lane(j) >> ctx.gap_shift;
                    self.fsm.gap_sum = match self.fsm.gap_sum.checked_add(v) {
                        Some(s) => s,
                        None => return Err(self.fault(format!("pooling overflow at channel {}", self.fsm.o))),
                    };
                }
                if b + 1 == ctx.n_b {
                    let dest = self.dest(ctx, 0);
                    self.fsm.jobs.push_back(Job { value: self.fsm.gap_sum, dest });
                }
            }
        }
        Ok(())
    }

    fn after_batch(&mut self, ctx: &LayerCtx) {
        if self.fsm.jobs.is_empty() {
            self.next_group(ctx);
        } else {
            self.fsm.step = 0;
            self.fsm.state = FsmState::Requant;
        }
    }

    fn requant_cycle(&mut self, ctx: &LayerCtx) -> Result<()> {
        let slot = self.convention.cycles_per_output() as usize;
        let stage = self.fsm.step;
        let job = *self.fsm.jobs.front().expect("queued job");
        if stage == 0 {
            self.requant.start(job.value, ctx.requant);
        }
        if self.requant.busy() && (self.requant.stage() as u64) < scgnn_core::cycles::MULTIPLIER_STAGES {
            self.requant.step();
        }
        if stage + 2 == slot {
            self.requant_result = self.requant.finish(ctx.requant.shift, ctx.activation, ctx.zp_out);
        }
        if stage + 1 == slot {
            self.write_result(ctx, job.dest)?;
        }
        self.stats[self.fsm.layer].requant += 1;
        self.fsm.step += 1;
        if self.fsm.step == slot {
            self.fsm.step = 0;
            self.fsm.jobs.pop_front();
            if self.fsm.jobs.is_empty() {
                self.next_group(ctx);
            }
        }
        Ok(())
    }

    fn write_result(&mut self, ctx: &LayerCtx, dest: Dest) -> Result<()> {
        let value = self.requant_result;
        match dest {
            Dest::Drop => {}
            Dest::Result(index) => {
                self.note(MemOp::ResultWrite { index, value });
                if self.results.len() <= index {
                    self.results.resize(index + 1, 0);
                }
                self.results[index] = value;
            }
            Dest::Act { channel, pos } => {
                let byte = value as u8;
                let mut word = self.packer.push(byte);
                if word.is_none() && pos + 1 == ctx.out_len {
                    word = self.packer.flush();
                }
                if let Some(word) = word {
                    let buffer = self.mem.write_buffer();
                    let index = channel * ctx.out_row_words + pos / 2;
                    self.note(MemOp::ActWrite { buffer, word: index, value: word });
                    self.mem.write_act(buffer, index, word).map_err(|e| self.fault(e))?;
                }
            }
        }
        Ok(())
    }

    fn next_group(&mut self, ctx: &LayerCtx) {
        self.fsm.state = FsmState::Prime;
        self.fsm.step = 0;
        self.fsm.b += 1;
        if self.fsm.b < ctx.n_b {
            return;
        }
        self.fsm.b = 0;
        self.fsm.o += 1;
        if self.fsm.o < ctx.c_out {
            return;
        }
        self.finish_layer(ctx);
    }

    fn finish_layer(&mut self, ctx: &LayerCtx) {
        let layer = self.fsm.layer;
        if !ctx.is_last {
            let words = ctx.c_out * ctx.out_row_words;
            self.outputs[layer] = Some(self.mem.act_buffer(self.mem.write_buffer())[..words].to_vec());
            self.mem.swap_buffers();
            self.enter_layer(layer + 1);
            return;
        }
        self.fsm = Fsm::default();
        self.ctx = None;
        self.last_run = Some(RunResult {
            logits: Logits::new(std::mem::take(&mut self.results)),
            cycles: self.cycle_counter + 1 - self.run_start,
            layers: self.stats.clone(),
        });
    }
}
