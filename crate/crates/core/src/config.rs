//! Flat TOML run configuration.
//!
//! Every key is optional and falls back to the shipped default; unknown keys
//! are rejected. Parse errors carry the line and column, validation errors the
//! offending key.

use std::path::{Path, PathBuf};

use crate::agents::AgentConfig;
use crate::autograd::AdamConfig;
use crate::error::{Error, Result};
use crate::evalsuite::DEFAULT_N_EVAL;
use crate::marsim::{LinkSpec, TaskStream, TransmissionMode};
use crate::trainer::TrainConfig;
use crate::world::EpisodeSpec;

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub out_dir: PathBuf,

    pub n_attr: usize,
    pub n_val: usize,
    pub min_constrained: usize,
    pub max_constrained: usize,
    pub holdout_fraction: f64,
    pub speaker_pos: usize,
    pub speaker_neg: usize,
    pub listener_pos: usize,
    pub listener_neg: usize,

    pub message_len: usize,
    pub vocab_size: usize,
    pub hidden: usize,
    pub embed: usize,

    pub train_epsilon: f64,
    pub epochs: usize,
    pub steps_per_epoch: usize,
    pub batch_size: usize,
    pub grad_shards: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub temp_start: f64,
    pub temp_end: f64,

    pub n_eval: usize,
    pub sweep_train_epsilons: Vec<f64>,
    pub test_epsilons: Vec<f64>,
    pub sweep_seeds: Vec<u64>,
    pub topsim_max_pairs: usize,
    pub topsim_permutations: usize,

    pub sim_tasks: usize,
    pub sim_interval: f64,
    pub sim_bitrate: f64,
    pub sim_epsilon: f64,
    pub feature_vector_bytes: u64,
    pub frame_kb_min: u64,
    pub frame_kb_max: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            seed: t.seed,
            out_dir: PathBuf::from("runs"),
            n_attr: t.agents.n_attr,
            n_val: t.agents.n_val,
            min_constrained: t.constrained.0,
            max_constrained: t.constrained.1,
            holdout_fraction: t.holdout_fraction,
            speaker_pos: t.episode.speaker_pos,
            speaker_neg: t.episode.speaker_neg,
            listener_pos: t.episode.listener_pos,
            listener_neg: t.episode.listener_neg,
            message_len: t.agents.message_len,
            vocab_size: t.agents.vocab,
            hidden: t.agents.hidden,
            embed: t.agents.embed,
            train_epsilon: t.train_epsilon,
            epochs: t.epochs,
            steps_per_epoch: t.steps_per_epoch,
            batch_size: t.batch_size,
            grad_shards: t.grad_shards,
            learning_rate: t.adam.learning_rate,
            beta1: t.adam.beta1,
            beta2: t.adam.beta2,
            adam_eps: t.adam.eps,
            temp_start: t.temp_start,
            temp_end: t.temp_end,
            n_eval: DEFAULT_N_EVAL,
            sweep_train_epsilons: vec![0.0, 0.02, 0.04, 0.08],
            test_epsilons: vec![0.0, 0.02, 0.04, 0.06, 0.08, 0.10],
            sweep_seeds: vec![0, 1, 2],
            topsim_max_pairs: crate::evalsuite::DEFAULT_MAX_PAIRS,
            topsim_permutations: crate::evalsuite::DEFAULT_NULL_PERMUTATIONS,
            sim_tasks: 1000,
            sim_interval: 0.1,
            sim_bitrate: 1e6,
            sim_epsilon: 0.1,
            feature_vector_bytes: 384,
            frame_kb_min: 70,
            frame_kb_max: 100,
        }
    }
}

fn check_epsilons(field: &str, xs: &[f64]) -> Result<()> {
    if xs.is_empty() {
        return Err(Error::config(field, "must not be empty"));
    }
    if let Some(x) = xs.iter().find(|x| !(0.0..=1.0).contains(*x)) {
        return Err(Error::config(field, format!("{x} is outside [0, 1]")));
    }
    Ok(())
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Format(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| e.context(format!("config {}", path.display())))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Format(format!("cannot serialise config: {e}")))
    }

    pub fn validate(&self) -> Result<()> {
        if self.seed > i64::MAX as u64 {
            return Err(Error::config("seed", format!("must be at most {}", i64::MAX)));
        }
        self.train_config().validate()?;
        if self.n_eval < 1 {
            return Err(Error::config("n_eval", "must be at least 1"));
        }
        check_epsilons("sweep_train_epsilons", &self.sweep_train_epsilons)?;
        check_epsilons("test_epsilons", &self.test_epsilons)?;
        if self.sweep_seeds.is_empty() {
            return Err(Error::config("sweep_seeds", "must not be empty"));
        }
        if let Some(s) = self.sweep_seeds.iter().find(|&&s| s > i64::MAX as u64) {
            return Err(Error::config("sweep_seeds", format!("{s} exceeds {}", i64::MAX)));
        }
        if self.topsim_max_pairs < 1 {
            return Err(Error::config("topsim_max_pairs", "must be at least 1"));
        }
        TaskStream::new(self.sim_interval, self.sim_tasks)?;
        LinkSpec::new(self.sim_bitrate, self.sim_epsilon)?;
        if self.feature_vector_bytes == 0 {
            return Err(Error::config("feature_vector_bytes", "must be positive"));
        }
        if self.frame_kb_min == 0 || self.frame_kb_min > self.frame_kb_max {
            return Err(Error::config("frame_kb_min", "must be positive and at most frame_kb_max"));
        }
        Ok(())
    }

    pub fn agents(&self) -> AgentConfig {
        AgentConfig {
            n_attr: self.n_attr,
            n_val: self.n_val,
            hidden: self.hidden,
            embed: self.embed,
            message_len: self.message_len,
            vocab: self.vocab_size,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            agents: self.agents(),
            constrained: (self.min_constrained, self.max_constrained),
            episode: EpisodeSpec {
                speaker_pos: self.speaker_pos,
                speaker_neg: self.speaker_neg,
                listener_pos: self.listener_pos,
                listener_neg: self.listener_neg,
            },
            train_epsilon: self.train_epsilon,
            epochs: self.epochs,
            steps_per_epoch: self.steps_per_epoch,
            batch_size: self.batch_size,
            grad_shards: self.grad_shards,
            adam: AdamConfig {
                learning_rate: self.learning_rate,
                beta1: self.beta1,
                beta2: self.beta2,
                eps: self.adam_eps,
            },
            temp_start: self.temp_start,
            temp_end: self.temp_end,
            holdout_fraction: self.holdout_fraction,
            seed: self.seed,
        }
    }

    pub fn task_stream(&self) -> Result<TaskStream> {
        TaskStream::new(self.sim_interval, self.sim_tasks)
    }

    pub fn link(&self) -> Result<LinkSpec> {
        LinkSpec::new(self.sim_bitrate, self.sim_epsilon)
    }

    /// The three modes compared by the simulator, largest payload first.
    pub fn transmission_modes(&self) -> [TransmissionMode; 3] {
        [
            TransmissionMode::RawVideo {
                min_kb: self.frame_kb_min,
                max_kb: self.frame_kb_max,
            },
            TransmissionMode::FeatureVector {
                bytes: self.feature_vector_bytes,
            },
            TransmissionMode::EmergentMessage {
                len: self.message_len as u64,
                vocab: self.vocab_size as u64,
            },
        ]
    }
}
