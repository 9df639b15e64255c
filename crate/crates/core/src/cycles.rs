//! Analytical cycle model of the accelerator.
//!
//! Every layer is time-multiplexed over six processing elements. For each
//! `(c_out, batch, c_in)` group the pipeline is primed for 7 cycles and then
//! streams `K` kernel taps. Pooled outputs are requantized serially.

use std::fmt::{self, Write as _};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::qnn::{LayerKind, LayerSpec, NetworkSpec, PoolMode};

/// Processing elements in the systolic cluster.
pub const PE_COUNT: usize = 6;
/// Cycles needed to fill the pipeline before the first MAC of a group.
pub const PRIME_CYCLES: u64 = 7;
/// Multiplier stages of the serial 32x32 requantizer.
pub const MULTIPLIER_STAGES: u64 = 4;

/// How many cycles each requantized output is charged.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RequantConvention {
    /// 6 cycles per pooled output, batch-padding positions included. Gives
    /// the reference per-layer cycle table.
    #[default]
    #[serde(rename = "table1")]
    TableI,
    /// 9 cycles per output over the same output count.
    #[serde(rename = "formula")]
    FormulaText,
}

impl RequantConvention {
    pub fn cycles_per_output(self) -> u64 {
        match self {
            Self::TableI => 6,
            Self::FormulaText => 9,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::TableI => "table1",
            Self::FormulaText => "formula",
        }
    }
}

impl std::str::FromStr for RequantConvention {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "table1" | "tablei" | "table" => Ok(Self::TableI),
            "formula" | "formulatext" | "text" => Ok(Self::FormulaText),
            other => Err(Error::Config(format!(
                "unknown requant convention {other:?} (expected table1 or formula)"
            ))),
        }
    }
}

impl fmt::Display for RequantConvention {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LayerCycles {
    pub prime: u64,
    pub compute: u64,
    pub requant: u64,
    pub n_batches: u64,
    /// Requantized outputs, batch-padding positions included.
    pub n_outputs: u64,
    pub array_eff: f64,
    pub sys_eff: f64,
}

impl LayerCycles {
    pub fn total(&self) -> u64 {
        self.prime + self.compute + self.requant
    }
}

pub fn n_batches(w_in: usize) -> u64 {
    w_in.div_ceil(PE_COUNT) as u64
}

/// Outputs that pass through the requantizer for one layer.
pub fn requant_outputs(layer: &LayerSpec, w_in: usize) -> u64 {
    let c_out = layer.c_out as u64;
    match layer.pool_mode {
        PoolMode::MaxPool2 => c_out * n_batches(w_in) * (PE_COUNT as u64 / 2),
        PoolMode::GlobalAvgPool => c_out,
        // Only positions inside the signal are requantized; for the fully
        // connected head that is exactly one per output channel.
        PoolMode::Bypass => c_out * w_in as u64,
    }
}

pub fn layer_cycles(layer: &LayerSpec, w_in: usize, convention: RequantConvention) -> LayerCycles {
    let n_batches = n_batches(w_in.max(1));
    let groups = layer.c_out as u64 * n_batches * layer.c_in as u64;
    let n_outputs = requant_outputs(layer, w_in.max(1));
    let mut lc = LayerCycles {
        prime: groups * PRIME_CYCLES,
        compute: groups * layer.kernel as u64,
        requant: n_outputs * convention.cycles_per_output(),
        n_batches,
        n_outputs,
        array_eff: array_efficiency(layer.kernel),
        sys_eff: 0.0,
    };
    lc.sys_eff = system_efficiency(&lc);
    lc
}

/// Fraction of primed-plus-compute cycles doing arithmetic, `K / (K + 7)`.
pub fn array_efficiency(kernel: usize) -> f64 {
    kernel as f64 / (kernel as f64 + PRIME_CYCLES as f64)
}

/// Compute cycles relative to the whole layer, 0 for an empty layer.
pub fn system_efficiency(lc: &LayerCycles) -> f64 {
    match lc.total() {
        0 => 0.0,
        total => lc.compute as f64 / total as f64,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerReport {
    pub index: usize,
    pub kind: LayerKind,
    pub in_depth: usize,
    pub out_depth: usize,
    pub c_in: usize,
    pub c_out: usize,
    pub kernel: usize,
    #[serde(flatten)]
    pub cycles: LayerCycles,
    /// Requant cycles under the other convention, for side-by-side reporting.
    pub requant_alt: u64,
    pub bottleneck: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CycleTotals {
    pub prime: u64,
    pub compute: u64,
    pub requant: u64,
    pub cycles: u64,
    pub macs: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CycleReport {
    pub layers: Vec<LayerReport>,
    pub totals: CycleTotals,
    pub requant_convention: RequantConvention,
    pub clock_hz: f64,
    /// Analytic latency, `total_cycles / clock_hz`.
    pub latency_s: f64,
    pub measured_latency_s: Option<f64>,
    pub fps: f64,
    pub mmacs_per_s: f64,
    pub mops_per_s: f64,
    pub peak_mmacs_per_s: f64,
    pub avg_power_mw: f64,
    pub energy_uj: f64,
}

fn bottleneck(lc: &LayerCycles) -> &'static str {
    let (p, c, r) = (lc.prime as f64, lc.compute as f64, lc.requant as f64);
    if r >= p && r >= c {
        "Requantization"
    } else if p > c {
        "Priming"
    } else {
        "Balanced"
    }
}

/// Whole-network cycle report. Throughput and energy use the measured
/// latency when one is supplied, the analytic latency otherwise.
pub fn network_report(
    net: &NetworkSpec,
    clock_hz: f64,
    avg_power_mw: f64,
    measured_latency_s: Option<f64>,
    convention: RequantConvention,
) -> Result<CycleReport> {
    if clock_hz.is_nan() || clock_hz <= 0.0 {
        return Err(Error::Config(format!("clock frequency must be positive, got {clock_hz}")));
    }
    if let Some(m) = measured_latency_s {
        if m.is_nan() || m <= 0.0 {
            return Err(Error::Config(format!("measured latency must be positive, got {m}")));
        }
    }
    let lengths = net.layer_input_lengths()?;
    let alt = match convention {
        RequantConvention::TableI => RequantConvention::FormulaText,
        RequantConvention::FormulaText => RequantConvention::TableI,
    };
    let mut layers = Vec::with_capacity(net.layers.len());
    for (i, (layer, &w_in)) in net.layers.iter().zip(&lengths).enumerate() {
        let cycles = layer_cycles(layer, w_in, convention);
        layers.push(LayerReport {
            index: i,
            kind: layer.kind,
            in_depth: w_in,
            out_depth: layer.output_length(w_in)?,
            c_in: layer.c_in,
            c_out: layer.c_out,
            kernel: layer.kernel,
            requant_alt: layer_cycles(layer, w_in, alt).requant,
            bottleneck: bottleneck(&cycles).into(),
            cycles,
        });
    }
    let sum = |f: fn(&LayerCycles) -> u64| layers.iter().map(|l| f(&l.cycles)).sum::<u64>();
    let prime = sum(|c| c.prime);
    let compute = sum(|c| c.compute);
    let requant = sum(|c| c.requant);
    let cycles = prime + compute + requant;
    let macs = PE_COUNT as u64 * compute;
    let latency_s = cycles as f64 / clock_hz;
    let effective = measured_latency_s.unwrap_or(latency_s);
    let mmacs_per_s = macs as f64 / effective / 1e6;
    Ok(CycleReport {
        layers,
        totals: CycleTotals {
            prime,
            compute,
            requant,
            cycles,
            macs,
        },
        requant_convention: convention,
        clock_hz,
        latency_s,
        measured_latency_s,
        fps: 1.0 / latency_s,
        mmacs_per_s,
        mops_per_s: 2.0 * mmacs_per_s,
        peak_mmacs_per_s: PE_COUNT as f64 * clock_hz / 1e6,
        avg_power_mw,
        // mW * s = mJ; x1000 for µJ
        energy_uj: avg_power_mw * effective * 1e3,
    })
}

fn group(n: u64) -> String {
    let s = n.to_string();
    let mut out = String::with_capacity(s.len() + s.len() / 3);
    for (i, ch) in s.chars().enumerate() {
        if i > 0 && (s.len() - i).is_multiple_of(3) {
            out.push(',');
        }
        out.push(ch);
    }
    out
}

fn pct(x: f64) -> String {
    format!("{:.2}%", 100.0 * x)
}

impl CycleReport {
    /// Aligned text table, one row per layer plus totals and derived metrics.
    pub fn to_text(&self) -> String {
        let alt_name = match self.requant_convention {
            RequantConvention::TableI => "Requant(9/out)",
            RequantConvention::FormulaText => "Requant(6/out)",
        };
        let header = [
            "Layer", "Type", "In", "Out", "Cin->Cout", "K", "Prime", "Compute", "Requant",
            alt_name, "ArrayEff", "SysEff", "Bottleneck",
        ];
        let mut rows: Vec<Vec<String>> = vec![header.iter().map(|s| s.to_string()).collect()];
        for l in &self.layers {
            rows.push(vec![
                format!("L{}", l.index),
                match l.kind {
                    LayerKind::Conv1d => "Conv1D".into(),
                    LayerKind::FullyConnected => "FC".into(),
                },
                l.in_depth.to_string(),
                l.out_depth.to_string(),
                format!("{}->{}", l.c_in, l.c_out),
                l.kernel.to_string(),
                group(l.cycles.prime),
                group(l.cycles.compute),
                group(l.cycles.requant),
                group(l.requant_alt),
                pct(l.cycles.array_eff),
                pct(l.cycles.sys_eff),
                l.bottleneck.clone(),
            ]);
        }
        let alt_total: u64 = self.layers.iter().map(|l| l.requant_alt).sum();
        rows.push(vec![
            "Total".into(),
            String::new(),
            String::new(),
            String::new(),
            String::new(),
            String::new(),
            group(self.totals.prime),
            group(self.totals.compute),
            group(self.totals.requant),
            group(alt_total),
            "-".into(),
            "-".into(),
            "-".into(),
        ]);
        let widths: Vec<usize> = (0..header.len())
            .map(|c| rows.iter().map(|r| r[c].len()).max().unwrap_or(0))
            .collect();
        let mut out = String::new();
        for (i, row) in rows.iter().enumerate() {
            let line: Vec<String> = row
                .iter()
                .zip(&widths)
                .enumerate()
                .map(|(c, (cell, w))| {
                    if c <= 1 || c == header.len() - 1 {
                        format!("{cell:<w$}")
                    } else {
                        format!("{cell:>w$}")
                    }
                })
                .collect();
            writeln!(out, "{}", line.join("  ").trim_end()).unwrap();
            if i == 0 || i == rows.len() - 2 {
                let total: usize = widths.iter().sum::<usize>() + 2 * (widths.len() - 1);
                writeln!(out, "{}", "-".repeat(total)).unwrap();
            }
        }
        writeln!(out).unwrap();
        writeln!(out, "requant convention : {}", self.requant_convention).unwrap();
        writeln!(out, "total cycles       : {}", group(self.totals.cycles)).unwrap();
        writeln!(out, "clock              : {:.3} MHz", self.clock_hz / 1e6).unwrap();
        writeln!(out, "latency (analytic) : {:.2} ms", self.latency_s * 1e3).unwrap();
        if let Some(m) = self.measured_latency_s {
            writeln!(out, "latency (measured) : {:.2} ms", m * 1e3).unwrap();
        }
        writeln!(out, "frame rate         : {:.2} FPS", self.fps).unwrap();
        writeln!(out, "MACs per inference : {}", group(self.totals.macs)).unwrap();
        writeln!(out, "throughput         : {:.1} MMAC/s, {:.1} MOps/s", self.mmacs_per_s, self.mops_per_s).unwrap();
        writeln!(out, "peak throughput    : {:.1} MMAC/s", self.peak_mmacs_per_s).unwrap();
        writeln!(out, "energy             : {:.1} uJ at {:.2} mW", self.energy_uj, self.avg_power_mw).unwrap();
        out
    }
}
