//! Paired-latency harness: seeded input, warmups discarded, monotonic clock.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Form, Model};
use crate::tensor::Tensor;

/// Below this many timed runs a report is marked non-publishable.
pub const MIN_PUBLISHABLE_RUNS: usize = 30;

pub const INPUT_SEED: u64 = 0x5eed;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BenchOptions {
    pub resolution: usize,
    pub batch: usize,
    pub warmup: usize,
    pub runs: usize,
    pub threads: usize,
}

impl BenchOptions {
    pub fn for_model(model: &Model) -> Self {
        BenchOptions {
            resolution: model.config().input_resolution,
            batch: 1,
            warmup: 20,
            runs: 200,
            threads: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub model: String,
    pub form: Form,
    pub resolution: usize,
    pub batch: usize,
    pub warmup: usize,
    pub runs: usize,
    pub threads: usize,
    pub p50_ms: f64,
    pub p90_ms: f64,
    pub mean_ms: f64,
    pub host: String,
    pub publishable: bool,
    /// Raw per-run timings in milliseconds, in measurement order.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub samples_ms: Vec<f64>,
}

impl BenchReport {
    pub fn summary(&self) -> String {
        format!(
            "{} [{}] {}x{} batch {} threads {}: p50 {:.3} ms, p90 {:.3} ms, mean {:.3} ms over {} runs ({} warmup){}\nhost: {}",
            self.model,
            self.form,
            self.resolution,
            self.resolution,
            self.batch,
            self.threads,
            self.p50_ms,
            self.p90_ms,
            self.mean_ms,
            self.runs,
            self.warmup,
            if self.publishable { "" } else { " [NOT PUBLISHABLE]" },
            self.host
        )
    }
}

/// Nearest-rank percentile of an ascending slice.
pub fn percentile(sorted: &[f64], pct: f64) -> f64 {
    assert!(!sorted.is_empty());
    let rank = ((pct / 100.0) * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

pub fn host_descriptor() -> String {
    let cpus = std::thread::available_parallelism().map_or(1, |n| n.get());
    let cpu_model = std::fs::read_to_string("/proc/cpuinfo")
        .ok()
        .and_then(|s| {
            s.lines()
                .find(|l| l.starts_with("model name"))
                .and_then(|l| l.split(':').nth(1))
                .map(|m| m.trim().to_string())
        })
        .unwrap_or_else(|| "unknown cpu".into());
    format!(
        "{}-{}, {cpus} logical cpus, {cpu_model}",
        std::env::consts::OS,
        std::env::consts::ARCH
    )
}

/// Times `opts.runs` forwards of `model` inside a dedicated rayon pool of
/// `opts.threads` workers.
pub fn run(model: &Model, opts: &BenchOptions) -> Result<BenchReport> {
    if opts.runs == 0 || opts.batch == 0 || opts.threads == 0 {
        return Err(Error::config(
            "bench",
            "runs, batch and threads must all be at least 1",
        ));
    }
    let input = Tensor::random_uniform(
        [opts.batch, 3, opts.resolution, opts.resolution],
        -1.0,
        1.0,
        INPUT_SEED,
    );
    model.check_input(&input)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.threads)
        .build()
        .map_err(|e| Error::config("threads", e.to_string()))?;

    let samples = pool.install(|| -> Result<Vec<f64>> {
        for _ in 0..opts.warmup {
            std::hint::black_box(model.forward(&input)?);
        }
        let mut samples = Vec::with_capacity(opts.runs);
        for _ in 0..opts.runs {
            let start = Instant::now();
            std::hint::black_box(model.forward(&input)?);
            samples.push(start.elapsed().as_secs_f64() * 1e3);
        }
        Ok(samples)
    })?;

    let mut sorted = samples.clone();
    sorted.sort_by(f64::total_cmp);
    Ok(BenchReport {
        model: model.config().name.clone(),
        form: model.form(),
        resolution: opts.resolution,
        batch: opts.batch,
        warmup: opts.warmup,
        runs: opts.runs,
        threads: opts.threads,
        p50_ms: percentile(&sorted, 50.0),
        p90_ms: percentile(&sorted, 90.0),
        mean_ms: samples.iter().sum::<f64>() / samples.len() as f64,
        host: host_descriptor(),
        publishable: opts.runs >= MIN_PUBLISHABLE_RUNS,
        samples_ms: samples,
    })
}
