//! Model and training configuration, the parameter-count closed form, and
//! the learning-rate schedule.

use serde::{Deserialize, Serialize};

use super::LmError;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub n_layers: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub vocab_size: usize,
    pub context_len: usize,
    pub tie_embeddings: bool,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), LmError> {
        if self.d_model == 0 || self.vocab_size == 0 || self.context_len == 0 {
            return Err(LmError::InvalidConfig("zero-sized dimension".into()));
        }
        if self.n_heads == 0 || self.d_model % self.n_heads != 0 {
            return Err(LmError::InvalidConfig(format!(
                "d_model {} not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if self.n_layers > 0 && self.d_ff == 0 {
            return Err(LmError::InvalidConfig("d_ff must be positive".into()));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    /// Desk-scale default shape: d_ff = 4 d, tied embeddings, context 256.
    pub fn desk(n_layers: usize, d_model: usize, n_heads: usize, vocab_size: usize) -> Self {
        Self {
            n_layers,
            d_model,
            n_heads,
            d_ff: 4 * d_model,
            vocab_size,
            context_len: 256,
            tie_embeddings: true,
        }
    }
}

/// Closed-form count of every trainable parameter, embeddings included.
///
/// Positions are sinusoidal (no parameters). The final norm only exists for
/// models with at least one block, so a 0-layer config is exactly the
/// embedding (plus the untied output matrix).
pub fn count_params(cfg: &ModelConfig) -> u64 {
    let d = cfg.d_model as u64;
    let v = cfg.vocab_size as u64;
    let ff = cfg.d_ff as u64;
    let l = cfg.n_layers as u64;
    let per_block = 4 * d * d + 2 * d * ff + 2 * d;
    let final_norm = if l > 0 { d } else { 0 };
    let out = if cfg.tie_embeddings { 0 } else { v * d };
    v * d + l * per_block + final_norm + out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub max_lr: f64,
    pub min_lr: f64,
    pub warmup_fraction: f64,
    pub clip_norm: f64,
    pub batch_tokens: usize,
    pub total_steps: u64,
    pub seed: u64,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), LmError> {
        if !(self.min_lr > 0.0 && self.min_lr <= self.max_lr) {
            return Err(LmError::InvalidConfig(format!(
                "need 0 < min_lr <= max_lr, got {} and {}",
                self.min_lr, self.max_lr
            )));
        }
        if !(self.warmup_fraction > 0.0 && self.warmup_fraction < 1.0) {
            return Err(LmError::InvalidConfig(format!(
                "warmup_fraction must be in (0,1), got {}",
                self.warmup_fraction
            )));
        }
        if !(self.clip_norm > 0.0) {
            return Err(LmError::InvalidConfig("clip_norm must be > 0".into()));
        }
        if self.batch_tokens == 0 || self.total_steps == 0 {
            return Err(LmError::InvalidConfig(
                "batch_tokens and total_steps must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Desk defaults; batch and step counts come from the planner.
    pub fn desk(batch_tokens: usize, total_steps: u64, seed: u64) -> Self {
        Self {
            max_lr: 5e-4,
            min_lr: 5e-5,
            warmup_fraction: 0.01,
            clip_norm: 0.5,
            batch_tokens,
            total_steps,
            seed,
        }
    }

    pub fn warmup_steps(&self) -> u64 {
        ((self.warmup_fraction * self.total_steps as f64).round() as u64).max(1)
    }
}

/// Learning rate at `step` (0 ..= total_steps): linear warmup from 0 to
/// max_lr over the warmup steps, then cosine decay to min_lr at the end.
pub fn lr_at(step: u64, cfg: &TrainConfig) -> f64 {
    debug_assert!(step <= cfg.total_steps);
    let w = cfg.warmup_steps();
    if step <= w {
        return cfg.max_lr * step as f64 / w as f64;
    }
    let span = (cfg.total_steps - w) as f64;
    if span <= 0.0 {
        return cfg.min_lr;
    }
    let t = (step - w) as f64 / span;
    cfg.min_lr + (cfg.max_lr - cfg.min_lr) * 0.5 * (1.0 + (std::f64::consts::PI * t).cos())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(total: u64) -> TrainConfig {
        TrainConfig::desk(2048, total, 0)
    }

    #[test]
    fn warmup_end_hits_max_lr() {
        let c = cfg(1000);
        assert_eq!(c.warmup_steps(), 10);
        assert_eq!(lr_at(10, &c), 5e-4);
        assert_eq!(lr_at(0, &c), 0.0);
        assert!(lr_at(5, &c) < 5e-4);
    }

    #[test]
    fn final_step_hits_min_lr() {
        let c = cfg(1000);
        let end = lr_at(1000, &c);
        assert!((end - 5e-5).abs() < 1e-18, "final lr {end}");
    }

    #[test]
    fn decay_midpoint_is_average() {
        let c = cfg(1000);
        let w = c.warmup_steps();
        let mid = w + (c.total_steps - w) / 2;
        let lr = lr_at(mid, &c);
        assert!((lr - (c.max_lr + c.min_lr) / 2.0).abs() < 1e-12);
    }

    #[test]
    fn count_is_linear_in_layers() {
        let base = ModelConfig::desk(2, 64, 4, 605);
        let n2 = count_params(&base);
        let mut deeper = base.clone();
        deeper.n_layers = 4;
        let n4 = count_params(&deeper);
        let per_block = 4 * 64 * 64 + 2 * 64 * 256 + 2 * 64;
        assert_eq!(n4 - n2, 2 * per_block as u64);
    }

    #[test]
    fn zero_layer_config_is_embedding_only() {
        let mut c = ModelConfig::desk(0, 32, 4, 100);
        c.d_ff = 0;
        assert_eq!(count_params(&c), 3200);
        c.tie_embeddings = false;
        assert_eq!(count_params(&c), 6400);
    }

    #[test]
    fn config_validation_rejects_bad_shapes() {
        let mut c = ModelConfig::desk(2, 64, 4, 100);
        c.n_heads = 5;
        assert!(c.validate().is_err());
        let mut t = TrainConfig::desk(2048, 100, 0);
        t.min_lr = 0.0;
        assert!(t.validate().is_err());
    }
}
