//! Teacher-forced scoring and incremental sampling with a KV cache.

use std::ops::Range;

use ndarray::{s, Array1, Array2};
use rand::Rng;

use super::checkpoint::Checkpoint;
use super::model::sequence_logits;
use super::{LmError, Scalar};
use crate::tokenize::EOS;
use crate::util::derive_rng;

/// Per-token log-likelihoods (nats) of `tokens[p]` given its prefix, for
/// p in `range`. Position 0 has no prefix, so the range must start at 1.
pub fn score_loglik<F: Scalar>(
    ckpt: &Checkpoint<F>,
    tokens: &[u32],
    range: Range<usize>,
) -> Result<Vec<f64>, LmError> {
    if range.start < 1 || range.end > tokens.len() || range.start >= range.end {
        return Err(LmError::BadScoreRange {
            start: range.start,
            end: range.end,
            len: tokens.len(),
        });
    }
    let logits = sequence_logits(ckpt, tokens)?;
    let mut out = Vec::with_capacity(range.len());
    for p in range {
        let row = logits.row(p - 1);
        let maxv = row.iter().fold(f64::NEG_INFINITY, |m, v| m.max(v.into_f64()));
        let lse = maxv
            + row
                .iter()
                .map(|v| (v.into_f64() - maxv).exp())
                .sum::<f64>()
                .ln();
        out.push(row[tokens[p] as usize].into_f64() - lse);
    }
    Ok(out)
}

/// Incremental decoding state: cached keys and values per layer.
pub struct DecodeState<'c, F: Scalar> {
    ckpt: &'c Checkpoint<F>,
    k_cache: Vec<Array2<F>>,
    v_cache: Vec<Array2<F>>,
    len: usize,
}

impl<'c, F: Scalar> DecodeState<'c, F> {
    pub fn new(ckpt: &'c Checkpoint<F>) -> Self {
        let d = ckpt.config.d_model;
        let t = ckpt.config.context_len;
        let l = ckpt.config.n_layers;
        Self {
            ckpt,
            k_cache: (0..l).map(|_| Array2::zeros((t, d))).collect(),
            v_cache: (0..l).map(|_| Array2::zeros((t, d))).collect(),
            len: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn remaining(&self) -> usize {
        self.ckpt.config.context_len - self.len
    }

    /// Feed one token; returns the logits predicting the next token.
    pub fn append(&mut self, token: u32) -> Result<Array1<F>, LmError> {
        let cfg = &self.ckpt.config;
        if token as usize >= cfg.vocab_size {
            return Err(LmError::TokenOutOfRange(token, cfg.vocab_size));
        }
        if self.len >= cfg.context_len {
            return Err(LmError::TooLong(self.len + 1, cfg.context_len));
        }
        let d = cfg.d_model;
        let hd = cfg.head_dim();
        let scale = 1.0 / (hd as f64).sqrt();
        let params = &self.ckpt.params;
        let pos = self.len;

        let mut x: Array1<F> = &params.emb.row(token as usize) + &self.ckpt.pos_table.row(pos);
        for (li, block) in params.blocks.iter().enumerate() {
            let xn1 = rms_row(&x, &block.ln1);
            let q = xn1.dot(&block.wq);
            let k = xn1.dot(&block.wk);
            let v = xn1.dot(&block.wv);
            self.k_cache[li].row_mut(pos).assign(&k);
            self.v_cache[li].row_mut(pos).assign(&v);

            let mut hcat: Array1<F> = Array1::zeros(d);
            for h in 0..cfg.n_heads {
                let cols = s![h * hd..(h + 1) * hd];
                let qh = q.slice(cols);
                let kh = self.k_cache[li].slice(s![..=pos, h * hd..(h + 1) * hd]);
                let vh = self.v_cache[li].slice(s![..=pos, h * hd..(h + 1) * hd]);
                let mut scores: Vec<f64> = kh
                    .rows()
                    .into_iter()
                    .map(|kr| {
                        qh.iter()
                            .zip(kr.iter())
                            .map(|(a, b)| a.into_f64() * b.into_f64())
                            .sum::<f64>()
                            * scale
                    })
                    .collect();
                let maxv = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let mut sum = 0.0;
                for sc in scores.iter_mut() {
                    *sc = (*sc - maxv).exp();
                    sum += *sc;
                }
                let mut ctx: Array1<F> = Array1::zeros(hd);
                for (j, a) in scores.iter().enumerate() {
                    let w = F::from_f64(a / sum);
                    let vr = vh.row(j);
                    for (c, vv) in ctx.iter_mut().zip(vr.iter()) {
                        *c = *c + w * *vv;
                    }
                }
                hcat.slice_mut(cols).assign(&ctx);
            }
            let attn_out = hcat.dot(&block.wo);
            x += &attn_out;

            let xn2 = rms_row(&x, &block.ln2);
            let h_pre = xn2.dot(&block.w1);
            let h_act = h_pre.mapv(super::model::gelu);
            let mlp_out = h_act.dot(&block.w2);
            x += &mlp_out;
        }
        let xf = if cfg.n_layers > 0 {
            rms_row(&x, &params.final_norm)
        } else {
            x
        };
        let out = params.out.as_ref().unwrap_or(&params.emb);
        self.len += 1;
        Ok(out.dot(&xf))
    }
}

fn rms_row<F: Scalar>(x: &Array1<F>, gain: &Array1<F>) -> Array1<F> {
    let d = x.len();
    let ms: f64 = x.iter().map(|v| v.into_f64() * v.into_f64()).sum::<f64>() / d as f64;
    let r = F::from_f64(1.0 / (ms + 1e-5).sqrt());
    let mut out = Array1::zeros(d);
    for ((o, v), g) in out.iter_mut().zip(x.iter()).zip(gain.iter()) {
        *o = *v * r * *g;
    }
    out
}

#[derive(Debug, Clone, Copy)]
pub struct SampleConfig {
    pub top_k: usize,
    pub temperature: f64,
    pub max_tokens: usize,
}

impl Default for SampleConfig {
    fn default() -> Self {
        Self {
            top_k: 25,
            temperature: 0.8,
            max_tokens: 150,
        }
    }
}

/// Sample a continuation of the prompt: temperature-scaled softmax over the
/// top-k logits, stopping at EOS, `max_tokens`, or the context boundary.
/// Returns the generated tokens (EOS included when it fired). Deterministic
/// given the seed.
pub fn generate<F: Scalar>(
    ckpt: &Checkpoint<F>,
    prompt: &[u32],
    cfg: &SampleConfig,
    seed: u64,
) -> Result<Vec<u32>, LmError> {
    if prompt.is_empty() {
        return Err(LmError::EmptyPrompt);
    }
    if prompt.len() > ckpt.config.context_len {
        return Err(LmError::TooLong(prompt.len(), ckpt.config.context_len));
    }
    if !(cfg.temperature > 0.0) {
        return Err(LmError::InvalidConfig(format!(
            "temperature must be > 0, got {}",
            cfg.temperature
        )));
    }
    let mut rng = derive_rng(seed, "generate", &[]);
    let mut state = DecodeState::new(ckpt);
    let mut logits = Array1::zeros(0);
    for t in prompt {
        logits = state.append(*t)?;
    }
    let mut out = Vec::new();
    while out.len() < cfg.max_tokens {
        let tok = sample_top_k(&logits, cfg.top_k, cfg.temperature, &mut rng);
        out.push(tok);
        if tok == EOS || out.len() >= cfg.max_tokens || state.remaining() == 0 {
            break;
        }
        logits = state.append(tok)?;
    }
    Ok(out)
}

/// Top-k restricted, temperature-scaled categorical draw. Ties in the top-k
/// cut order by token id, so the result is deterministic.
fn sample_top_k<F: Scalar>(
    logits: &Array1<F>,
    top_k: usize,
    temperature: f64,
    rng: &mut rand_chacha::ChaCha8Rng,
) -> u32 {
    let k = top_k.clamp(1, logits.len());
    let mut idx: Vec<u32> = (0..logits.len() as u32).collect();
    idx.sort_by(|a, b| {
        let (la, lb) = (logits[*a as usize], logits[*b as usize]);
        lb.partial_cmp(&la)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(b))
    });
    let top = &idx[..k];
    let maxl = logits[top[0] as usize].into_f64();
    let weights: Vec<f64> = top
        .iter()
        .map(|i| ((logits[*i as usize].into_f64() - maxl) / temperature).exp())
        .collect();
    let total: f64 = weights.iter().sum();
    let mut dart = rng.random::<f64>() * total;
    for (i, w) in top.iter().zip(&weights) {
        dart -= w;
        if dart <= 0.0 {
            return *i;
        }
    }
    top[k - 1]
}
