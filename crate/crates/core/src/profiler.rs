//! Inference-efficiency measurement: parameter and FLOP counts, a timed
//! end-to-end benchmark and the derived latency/throughput figures.

use std::fmt;
use std::hint::black_box;
use std::sync::atomic::{AtomicBool, Ordering};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::corpus::{Preprocessor, RawItem};
use crate::error::{Error, Result};
use crate::metrics::write_table;
use crate::model::{Model, ModelConfig, Parameters};

pub const DEFAULT_BATCH_SIZE: usize = 32;
pub const DEFAULT_WARMUP_BATCHES: usize = 5;

pub const FLOPS_CONVENTION: &str =
    "analytic forward pass per sample at the mean measured token count: 2*m*n per dense layer \
     (multiply-accumulate = 2), token_count*text_embed_dim additions for mean pooling, \
     activations and embedding reads not counted";

const BYTES_PER_MB: f64 = 1024.0 * 1024.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamCount {
    pub total: usize,
    pub active: usize,
}

/// Every parameter is used on every forward pass, so active equals total.
pub fn count_params(params: &Parameters) -> ParamCount {
    let total = params.len();
    ParamCount { total, active: total }
}

fn dense_flops(dims: &[(usize, usize)]) -> f64 {
    dims.iter().map(|&(m, n)| 2.0 * m as f64 * n as f64).sum()
}

/// Forward FLOPs for one sample with `token_count` tokens. See
/// [`FLOPS_CONVENTION`].
pub fn estimate_flops(config: &ModelConfig, token_count: usize) -> f64 {
    let d = config.text_embed_dim;
    let text = if token_count == 0 {
        0.0
    } else {
        (token_count * d) as f64 + dense_flops(&[(d, d)])
    };
    text + dense_flops(&config.image_layer_dims()) + dense_flops(&config.head_layer_dims())
}

/// [`estimate_flops`] at the benchmark's mean token count per sample, the
/// figure [`FLOPS_CONVENTION`] describes.
pub fn flops_at_mean_tokens(config: &ModelConfig, raw: &RawBenchmark) -> f64 {
    let mean = raw.measured_tokens as f64 / raw.measured_samples.max(1) as f64;
    estimate_flops(config, mean.round() as usize)
}

/// High-water accounting for the benchmark's own buffers.
#[derive(Debug, Default, Clone)]
pub struct MemoryMeter {
    current: usize,
    peak: usize,
}

impl MemoryMeter {
    pub fn acquire(&mut self, bytes: usize) {
        self.current += bytes;
        self.peak = self.peak.max(self.current);
    }

    pub fn release(&mut self, bytes: usize) {
        self.current = self.current.saturating_sub(bytes);
    }

    pub fn current(&self) -> usize {
        self.current
    }

    pub fn peak(&self) -> usize {
        self.peak
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawBenchmark {
    pub batch_size: usize,
    pub warmup_batches: usize,
    pub measured_batches: usize,
    pub measured_samples: usize,
    pub measured_tokens: usize,
    pub total_runtime_s: f64,
    pub peak_memory_bytes: usize,
}

static BENCH_RUNNING: AtomicBool = AtomicBool::new(false);

struct BenchGuard;

impl BenchGuard {
    fn acquire() -> Result<Self> {
        BENCH_RUNNING
            .compare_exchange(false, true, Ordering::Acquire, Ordering::Relaxed)
            .map(|_| BenchGuard)
            .map_err(|_| Error::BenchmarkBusy)
    }
}

impl Drop for BenchGuard {
    fn drop(&mut self) {
        BENCH_RUNNING.store(false, Ordering::Release);
    }
}

struct BatchStats {
    samples: usize,
    tokens: usize,
}

/// Preprocesses and predicts one batch. Items the preprocessor rejects are
/// dropped from the batch and from the counts.
fn run_batch(model: &Model, prep: &Preprocessor, raw: &[RawItem], meter: &mut MemoryMeter) -> Result<BatchStats> {
    let mut held = 0;
    let mut items = Vec::with_capacity(raw.len());
    for r in raw {
        if let Ok(item) = prep.process(r) {
            let bytes = item.text.len()
                + item.token_ids.len() * size_of::<u32>()
                + item.image.as_ref().map_or(0, |t| t.data.len() * size_of::<f32>());
            meter.acquire(bytes);
            held += bytes;
            items.push(item);
        }
    }
    let cfg = &model.config;
    let activations = (cfg.text_embed_dim
        + cfg.image_embed_dim
        + cfg.fused_dim()
        + cfg.head_hidden_dims.iter().sum::<usize>()
        + cfg.image_hidden_dims.iter().sum::<usize>()
        + 1)
        * size_of::<f64>();
    meter.acquire(activations);
    let mut tokens = 0;
    for item in &items {
        black_box(model.predict_item(black_box(item))?);
        tokens += item.token_count;
    }
    meter.release(activations + held);
    Ok(BatchStats {
        samples: items.len(),
        tokens,
    })
}

/// Runs `warmup_batches` untimed batches, then times every remaining batch
/// end to end (preprocessing plus forward pass) on a monotonic clock.
///
/// Only one benchmark may run per process at a time.
pub fn run_benchmark(
    model: &Model,
    prep: &Preprocessor,
    raw: &[RawItem],
    batch_size: usize,
    warmup_batches: usize,
) -> Result<RawBenchmark> {
    if batch_size == 0 {
        return Err(Error::Config("batch size must be at least 1".into()));
    }
    let batches: Vec<&[RawItem]> = raw.chunks(batch_size).collect();
    if batches.len() <= warmup_batches {
        return Err(Error::Config(format!(
            "{} batches of {batch_size} leave nothing to measure after {warmup_batches} warmup batches",
            batches.len()
        )));
    }
    let _guard = BenchGuard::acquire()?;

    let mut meter = MemoryMeter::default();
    meter.acquire(model.params.len() * size_of::<f64>());
    for batch in &batches[..warmup_batches] {
        run_batch(model, prep, batch, &mut meter)?;
    }

    let (mut samples, mut tokens) = (0, 0);
    let start = Instant::now();
    for batch in &batches[warmup_batches..] {
        let stats = run_batch(model, prep, batch, &mut meter)?;
        samples += stats.samples;
        tokens += stats.tokens;
    }
    let elapsed = start.elapsed().as_secs_f64();

    Ok(RawBenchmark {
        batch_size,
        warmup_batches,
        measured_batches: batches.len() - warmup_batches,
        measured_samples: samples,
        measured_tokens: tokens,
        total_runtime_s: elapsed.max(f64::MIN_POSITIVE),
        peak_memory_bytes: meter.peak(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EfficiencyReport {
    pub total_params_m: f64,
    pub active_params_m: f64,
    pub flops_g: f64,
    pub flops_convention: String,
    pub latency_ms_per_sample: f64,
    pub latency_ms_per_token: f64,
    pub throughput_samples_s: f64,
    pub throughput_tokens_s: f64,
    pub peak_memory_mb: f64,
    #[serde(flatten)]
    pub raw: RawBenchmark,
    pub hardware_descr: String,
    pub timing_scope: String,
}

pub fn derive_metrics(raw: RawBenchmark, params: ParamCount, flops: f64, hardware: &str) -> Result<EfficiencyReport> {
    if raw.measured_samples == 0 {
        return Err(Error::Empty("measured samples"));
    }
    if raw.measured_tokens == 0 {
        return Err(Error::Empty("measured tokens"));
    }
    let t = raw.total_runtime_s;
    if !(t > 0.0 && t.is_finite()) {
        return Err(Error::NonFinite {
            context: format!("benchmark runtime {t}"),
        });
    }
    let (s, k) = (raw.measured_samples as f64, raw.measured_tokens as f64);
    Ok(EfficiencyReport {
        total_params_m: params.total as f64 / 1e6,
        active_params_m: params.active as f64 / 1e6,
        flops_g: flops / 1e9,
        flops_convention: FLOPS_CONVENTION.into(),
        latency_ms_per_sample: 1000.0 * t / s,
        latency_ms_per_token: 1000.0 * t / k,
        throughput_samples_s: s / t,
        throughput_tokens_s: k / t,
        peak_memory_mb: raw.peak_memory_bytes as f64 / BYTES_PER_MB,
        raw,
        hardware_descr: hardware.into(),
        timing_scope: "end-to-end".into(),
    })
}

/// Short description of the machine running the benchmark.
pub fn host_description() -> String {
    let threads = std::thread::available_parallelism().map_or(1, |n| n.get());
    format!(
        "{} {} CPU, {threads} hardware thread{} (single-threaded measurement)",
        std::env::consts::OS,
        std::env::consts::ARCH,
        if threads == 1 { "" } else { "s" }
    )
}

impl fmt::Display for EfficiencyReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let rows = [
            ("Total Parameters (M)", format!("{:.6}", self.total_params_m)),
            ("Active Parameters (M)", format!("{:.6}", self.active_params_m)),
            ("FLOPs (G)", format!("{:.6}", self.flops_g)),
            ("Hardware", self.hardware_descr.clone()),
            ("Batch size", self.raw.batch_size.to_string()),
            ("Timing scope", self.timing_scope.clone()),
            ("Warmup batches", self.raw.warmup_batches.to_string()),
            ("Measured batches", self.raw.measured_batches.to_string()),
            ("Measured samples", self.raw.measured_samples.to_string()),
            ("Measured input tokens", self.raw.measured_tokens.to_string()),
            ("Total runtime (s)", format!("{:.4}", self.raw.total_runtime_s)),
            ("Latency (ms/sample)", format!("{:.4}", self.latency_ms_per_sample)),
            ("Latency (ms/token)", format!("{:.6}", self.latency_ms_per_token)),
            ("Throughput (samples/s)", format!("{:.2}", self.throughput_samples_s)),
            ("Throughput (tokens/s)", format!("{:.2}", self.throughput_tokens_s)),
            ("Peak memory allocated (MB)", format!("{:.4}", self.peak_memory_mb)),
            ("Acceleration techniques", "None".into()),
        ];
        write_table(f, ("Metric", "Value"), &rows)
    }
}
