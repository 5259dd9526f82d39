use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::NORM_EPS;
use crate::dataset::ToyDatasetSpec;
use crate::error::{ensure, Result};
use crate::losses::LossWeights;
use crate::netblocks::{AttentionSpec, ExtractorSpec, MlpSpec};

/// Every hyperparameter of a run. Serialized as JSON for the CLI and inside
/// checkpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Dense point count N.
    pub n_points: usize,
    /// Sparse point count n.
    pub n_sparse: usize,
    /// Sampling rate r = N / n.
    pub ratio: usize,
    /// Neighbourhood size K of the down-shuffle grouping.
    pub k_group: usize,
    /// Neighbour count m of the distribution loss.
    pub m_dist: usize,
    /// Feature channels C.
    pub channels: usize,
    /// Embedded feature channels C'.
    pub attn_channels: usize,
    /// EdgeConv neighbour count.
    pub k_conv: usize,
    pub extractor_blocks: usize,
    pub extractor_growth: usize,
    pub dense_skips: bool,
    pub alpha: f64,
    pub beta: f64,
    pub lambda: f64,
    pub tau: f64,
    /// Skip each point's nearest restored point in the distribution loss.
    pub dist_skip_nearest: bool,
    /// Floor on vector lengths in the cosine of the distribution loss.
    pub angle_eps: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub lr: f64,
    pub lr_decay: f64,
    /// Epochs between learning-rate decays.
    pub decay_every: usize,
    pub lr_floor: f64,
    /// Global gradient-norm clip; 0 disables clipping.
    pub grad_clip: f64,
    pub seed: u64,
    pub fps_start: usize,
    pub augment: bool,
    pub scale_range: [f64; 2],
    pub jitter_sigma: f64,
    pub jitter_clip: f64,
    /// Worker threads for per-shape forward/backward passes; 1 is the
    /// reference single-threaded mode.
    pub threads: usize,
    pub dataset: Option<ToyDatasetSpec>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            n_points: 512,
            n_sparse: 128,
            ratio: 4,
            k_group: 8,
            m_dist: 8,
            channels: 32,
            attn_channels: 64,
            k_conv: 8,
            extractor_blocks: 3,
            extractor_growth: 24,
            dense_skips: true,
            alpha: 5.0,
            beta: 2.0,
            lambda: 100.0,
            tau: 1e-6,
            dist_skip_nearest: true,
            angle_eps: NORM_EPS,
            batch_size: 8,
            epochs: 60,
            lr: 1e-3,
            lr_decay: 0.5,
            decay_every: 20,
            lr_floor: 1e-6,
            grad_clip: 0.0,
            seed: 0,
            fps_start: 0,
            augment: true,
            scale_range: [0.8, 1.2],
            jitter_sigma: 0.005,
            jitter_clip: 0.015,
            threads: 1,
            dataset: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        ensure!(
            self.n_points > 0 && self.n_sparse > 0 && self.ratio > 0,
            Config,
            "point counts and ratio must be positive"
        );
        ensure!(
            self.ratio * self.n_sparse == self.n_points,
            Config,
            "ratio {} x n_sparse {} != n_points {}",
            self.ratio,
            self.n_sparse,
            self.n_points
        );
        ensure!(
            self.k_group > self.n_points / self.n_sparse,
            Config,
            "k_group {} must exceed N/n = {}",
            self.k_group,
            self.n_points / self.n_sparse
        );
        ensure!(
            self.k_group <= self.n_points,
            Config,
            "k_group {} exceeds N = {}",
            self.k_group,
            self.n_points
        );
        ensure!(
            self.m_dist >= 1 && self.m_dist < self.n_points,
            Config,
            "m_dist {} must lie in [1, N)",
            self.m_dist
        );
        ensure!(
            self.k_conv >= 1 && self.k_conv <= self.n_sparse,
            Config,
            "k_conv {} must lie in [1, n]",
            self.k_conv
        );
        ensure!(
            self.channels > 0 && self.attn_channels > 0 && self.extractor_growth > 0,
            Config,
            "channel counts must be positive"
        );
        ensure!(
            self.extractor_blocks >= 1,
            Config,
            "need at least one extractor block"
        );
        ensure!(self.fps_start < self.n_points, Config, "fps_start out of range");
        self.loss_weights().validate()?;
        ensure!(
            self.batch_size >= 1 && self.threads >= 1 && self.decay_every >= 1,
            Config,
            "batch_size, threads and decay_every must be positive"
        );
        ensure!(
            self.lr > 0.0 && self.lr_floor > 0.0 && self.lr_floor <= self.lr,
            Config,
            "need 0 < lr_floor <= lr"
        );
        ensure!(
            self.lr_decay > 0.0 && self.lr_decay <= 1.0,
            Config,
            "lr_decay must lie in (0, 1]"
        );
        ensure!(self.grad_clip >= 0.0, Config, "grad_clip must be >= 0");
        ensure!(
            self.scale_range[0] > 0.0 && self.scale_range[0] <= self.scale_range[1],
            Config,
            "invalid scale range"
        );
        ensure!(
            self.jitter_sigma >= 0.0 && self.jitter_clip >= 0.0,
            Config,
            "jitter parameters must be >= 0"
        );
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let cfg: Self = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn loss_weights(&self) -> LossWeights {
        LossWeights {
            alpha: self.alpha,
            beta: self.beta,
            lambda: self.lambda,
            tau: self.tau,
            m: self.m_dist,
            skip_nearest: self.dist_skip_nearest,
            angle_eps: self.angle_eps,
        }
    }

    pub fn extractor_spec(&self) -> ExtractorSpec {
        ExtractorSpec {
            blocks: self.extractor_blocks,
            growth: self.extractor_growth,
            k: self.k_conv,
            dense: self.dense_skips,
            out_channels: self.channels,
        }
    }

    pub fn attention_spec(&self) -> AttentionSpec {
        AttentionSpec {
            in_channels: self.channels,
            out_channels: self.attn_channels,
        }
    }

    /// Offset generator of the embedder: [C', C'/2, 3].
    pub fn embed_offset_spec(&self) -> MlpSpec {
        MlpSpec {
            widths: vec![self.attn_channels, (self.attn_channels / 2).max(1), 3],
        }
    }

    /// Offset generator of the restorer: [C+3, C, 3].
    pub fn restore_offset_spec(&self) -> MlpSpec {
        MlpSpec {
            widths: vec![self.channels + 3, self.channels, 3],
        }
    }

    /// Learning rate in effect during `epoch` (0-based).
    pub fn lr_at(&self, epoch: usize) -> f64 {
        let decays = (epoch / self.decay_every) as i32;
        (self.lr * self.lr_decay.powi(decays)).max(self.lr_floor)
    }
}
