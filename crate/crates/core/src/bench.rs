//! Per-frame timing of the streaming enhancer.

use std::time::Instant;

use crate::datasim::{mix_at_snr, synth_clean, synth_noise};
use crate::dsp::{StftConfig, SAMPLE_RATE};
use crate::error::{Error, Result};
use crate::model::Model;
use crate::stream::{algorithmic_latency, StreamEnhancer, HOP};

/// Frames processed before timing starts.
pub const WARMUP_FRAMES: usize = 50;

#[derive(Clone, Debug, PartialEq)]
pub struct BenchReport {
    /// Duration of one analysis frame in milliseconds (the real-time budget).
    pub frame_ms: f64,
    pub frames: usize,
    pub mean_ms: f64,
    pub median_ms: f64,
    pub p99_ms: f64,
    /// Mean processing time divided by the frame duration.
    pub rtf: f64,
    pub latency_samples: usize,
    pub latency_ms: f64,
    pub platform: String,
}

impl BenchReport {
    pub fn real_time(&self) -> bool {
        self.mean_ms < self.frame_ms
    }
}

impl std::fmt::Display for BenchReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "platform: {}", self.platform)?;
        writeln!(f, "frames timed: {}", self.frames)?;
        writeln!(
            f,
            "per-frame ms: mean {:.3} median {:.3} p99 {:.3} (budget {:.1})",
            self.mean_ms, self.median_ms, self.p99_ms, self.frame_ms
        )?;
        writeln!(f, "real-time factor: {:.3}", self.rtf)?;
        write!(
            f,
            "algorithmic latency: {} samples ({:.1} ms)",
            self.latency_samples, self.latency_ms
        )
    }
}

/// Operating system, architecture and, where available, the CPU model.
pub fn platform_string() -> String {
    let cpu = std::fs::read_to_string("/proc/cpuinfo")
        .ok()
        .and_then(|info| {
            info.lines()
                .find(|l| l.starts_with("model name"))
                .and_then(|l| l.split(':').nth(1))
                .map(|s| s.trim().to_string())
        })
        .unwrap_or_else(|| "unknown cpu".into());
    format!("{}/{} {}", std::env::consts::OS, std::env::consts::ARCH, cpu)
}

fn percentile(sorted: &[f64], q: f64) -> f64 {
    let idx = ((sorted.len() - 1) as f64 * q).round() as usize;
    sorted[idx]
}

/// Streams `seconds` of a synthetic noisy signal through `model` one hop at
/// a time, repeating `reps` times, and summarizes the per-hop wall time.
pub fn stream_bench(model: &Model<f32>, seconds: f64, reps: usize) -> Result<BenchReport> {
    let samples = (seconds * SAMPLE_RATE as f64) as usize;
    let hops = samples / HOP;
    if hops <= WARMUP_FRAMES || reps == 0 {
        return Err(Error::InvalidConfig(format!(
            "benchmark needs more than {WARMUP_FRAMES} frames and at least one repetition"
        )));
    }
    let clean = synth_clean(1, samples);
    let noise = synth_noise(2, samples);
    let (x, _) = mix_at_snr(&clean, &noise, 5.0)?;

    let mut times = Vec::with_capacity(reps * (hops - WARMUP_FRAMES));
    let mut enhancer = StreamEnhancer::new(model)?;
    for _ in 0..reps {
        enhancer.reset();
        for (i, chunk) in x.chunks_exact(HOP).enumerate() {
            let start = Instant::now();
            let out = enhancer.push(chunk)?;
            let elapsed = start.elapsed().as_secs_f64() * 1e3;
            std::hint::black_box(out);
            if i >= WARMUP_FRAMES {
                times.push(elapsed);
            }
        }
    }
    let total: f64 = times.iter().sum();
    if total <= 0.0 {
        return Err(Error::InvalidConfig("timer resolution too coarse".into()));
    }
    times.sort_by(|a, b| a.total_cmp(b));
    let mean = total / times.len() as f64;
    let stft = StftConfig::default();
    let frame_ms = stft.window_len as f64 * 1e3 / SAMPLE_RATE as f64;
    let latency = algorithmic_latency(model.config.tau, &stft);
    Ok(BenchReport {
        frame_ms,
        frames: times.len(),
        mean_ms: mean,
        median_ms: percentile(&times, 0.5),
        p99_ms: percentile(&times, 0.99),
        rtf: mean / frame_ms,
        latency_samples: latency,
        latency_ms: latency as f64 * 1e3 / SAMPLE_RATE as f64,
        platform: platform_string(),
    })
}
