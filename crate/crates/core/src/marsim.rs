//! Data-size and transmission-latency accounting for the AR offload loop.
//!
//! Latency is payload over bitrate; queueing, propagation and compute time
//! are not modelled.

use std::fmt;

use rand::Rng;

use crate::channel::expected_flips;
use crate::error::{Error, Result};
use crate::evalsuite::BYTES_PER_KB;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TaskStream {
    /// Seconds between task arrivals.
    pub interval: f64,
    pub n_tasks: usize,
}

impl TaskStream {
    pub fn new(interval: f64, n_tasks: usize) -> Result<Self> {
        if !(interval > 0.0 && interval.is_finite()) {
            return Err(Error::config("sim_interval", "must be positive"));
        }
        if n_tasks < 1 {
            return Err(Error::config("sim_tasks", "must be at least 1"));
        }
        Ok(Self { interval, n_tasks })
    }

    /// Time span covered by the stream.
    pub fn duration(&self) -> f64 {
        self.interval * self.n_tasks as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TransmissionMode {
    /// Frame size in kilobytes, drawn uniformly from an inclusive range.
    RawVideo { min_kb: u64, max_kb: u64 },
    FeatureVector { bytes: u64 },
    EmergentMessage { len: u64, vocab: u64 },
}

impl TransmissionMode {
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            TransmissionMode::RawVideo { min_kb, max_kb } => min_kb > 0 && min_kb <= max_kb,
            TransmissionMode::FeatureVector { bytes } => bytes > 0,
            TransmissionMode::EmergentMessage { len, vocab } => len > 0 && vocab > 0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Argument(format!("invalid transmission mode {self:?}")))
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            TransmissionMode::RawVideo { .. } => "raw_video",
            TransmissionMode::FeatureVector { .. } => "feature_vector",
            TransmissionMode::EmergentMessage { .. } => "emergent_message",
        }
    }
}

impl fmt::Display for TransmissionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkSpec {
    /// Bits per second.
    pub bitrate: f64,
    /// Symbol error rate; affects emergent messages only.
    pub symbol_error_rate: f64,
}

impl LinkSpec {
    pub fn new(bitrate: f64, symbol_error_rate: f64) -> Result<Self> {
        if !(bitrate > 0.0 && bitrate.is_finite()) {
            return Err(Error::config("sim_bitrate", "must be positive"));
        }
        if !(0.0..=1.0).contains(&symbol_error_rate) {
            return Err(Error::config("sim_epsilon", "must lie in [0, 1]"));
        }
        Ok(Self {
            bitrate,
            symbol_error_rate,
        })
    }
}

/// Bits for one task. Raw frames draw a whole number of bytes uniformly
/// between the range ends; a kilobyte is 1024 bytes.
pub fn payload_bits<R: Rng + ?Sized>(mode: &TransmissionMode, rng: &mut R) -> u64 {
    match *mode {
        TransmissionMode::RawVideo { min_kb, max_kb } => {
            rng.random_range(min_kb * BYTES_PER_KB..=max_kb * BYTES_PER_KB) * 8
        }
        TransmissionMode::FeatureVector { bytes } => bytes * 8,
        TransmissionMode::EmergentMessage { len, vocab } => len * vocab,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimSummary {
    pub tasks: usize,
    pub total_bits: u64,
    /// Mean per-task transmission latency in seconds.
    pub mean_latency_s: f64,
    pub expected_flips: f64,
}

impl SimSummary {
    /// Summary of two streams run back to back.
    pub fn concat(&self, other: &SimSummary) -> SimSummary {
        let tasks = self.tasks + other.tasks;
        SimSummary {
            tasks,
            total_bits: self.total_bits + other.total_bits,
            mean_latency_s: (self.mean_latency_s * self.tasks as f64 + other.mean_latency_s * other.tasks as f64)
                / tasks as f64,
            expected_flips: self.expected_flips + other.expected_flips,
        }
    }
}

pub fn simulate<R: Rng + ?Sized>(
    stream: &TaskStream,
    mode: &TransmissionMode,
    link: &LinkSpec,
    rng: &mut R,
) -> Result<SimSummary> {
    mode.validate()?;
    let total_bits: u64 = (0..stream.n_tasks).map(|_| payload_bits(mode, rng)).sum();
    let flips = match *mode {
        TransmissionMode::EmergentMessage { len, .. } => {
            stream.n_tasks as f64 * expected_flips(len as usize, link.symbol_error_rate)
        }
        _ => 0.0,
    };
    Ok(SimSummary {
        tasks: stream.n_tasks,
        total_bits,
        // mean of bits_i / bitrate, in one division
        mean_latency_s: total_bits as f64 / (stream.n_tasks as f64 * link.bitrate),
        expected_flips: flips,
    })
}

/// One row of the simulator CSV.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SimRow {
    pub mode: String,
    pub tasks: usize,
    pub total_bits: u64,
    pub mean_latency_s: f64,
    pub expected_flips: f64,
}

pub const SIM_HEADER: [&str; 5] = ["mode", "tasks", "total_bits", "mean_latency_s", "expected_flips"];

impl SimRow {
    pub fn new(mode: &TransmissionMode, s: &SimSummary) -> Self {
        Self {
            mode: mode.name().to_string(),
            tasks: s.tasks,
            total_bits: s.total_bits,
            mean_latency_s: s.mean_latency_s,
            expected_flips: s.expected_flips,
        }
    }
}
