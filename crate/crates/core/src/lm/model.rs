//! Forward pass, exact backward pass, loss, and the train step.
//!
//! Shapes: activations are [n, d] with n = batch_rows * context; attention
//! weights are cached per (row, head) as [T, T]. Accumulation order is fixed
//! and single-threaded; loss terms accumulate in f64.

use ndarray::{s, Array1, Array2, ArrayView2};

use super::checkpoint::Checkpoint;
use super::config::{lr_at, ModelConfig, TrainConfig};
use super::optim::{adamw_update, clip_global_norm, global_grad_norm};
use super::params::Params;
use super::{LmError, Scalar};
use crate::interleave::PackedRow;

const RMS_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4;
const GELU_A: f64 = 0.044715;

pub(crate) struct LayerCache<F> {
    xhat1: Array2<F>,
    rstd1: Vec<F>,
    q: Array2<F>,
    k: Array2<F>,
    v: Array2<F>,
    attn: Vec<Array2<F>>,
    hcat: Array2<F>,
    xhat2: Array2<F>,
    rstd2: Vec<F>,
    h_pre: Array2<F>,
    h_act: Array2<F>,
}

pub(crate) struct ForwardCache<F> {
    b: usize,
    t: usize,
    layers: Vec<LayerCache<F>>,
    xf_hat: Array2<F>,
    rstd_f: Vec<F>,
    xf: Array2<F>,
    pub(crate) logits: Array2<F>,
}

/// RMS-normalize rows in place is avoided; returns (xhat, rstd) so backward
/// can reuse both.
fn rmsnorm<F: Scalar>(x: &ArrayView2<F>) -> (Array2<F>, Vec<F>) {
    let d = x.ncols();
    let mut xhat = Array2::zeros(x.raw_dim());
    let mut rstd = Vec::with_capacity(x.nrows());
    for (i, row) in x.rows().into_iter().enumerate() {
        let ms: f64 = row.iter().map(|v| v.into_f64() * v.into_f64()).sum::<f64>() / d as f64;
        let r = F::from_f64(1.0 / (ms + RMS_EPS).sqrt());
        rstd.push(r);
        let mut out = xhat.row_mut(i);
        for (o, v) in out.iter_mut().zip(row.iter()) {
            *o = *v * r;
        }
    }
    (xhat, rstd)
}

/// dx for y = (x * rstd) ⊙ g given upstream dy; also accumulates dg.
fn rmsnorm_backward<F: Scalar>(
    dy: &Array2<F>,
    xhat: &Array2<F>,
    rstd: &[F],
    gain: &Array1<F>,
    dgain: &mut Array1<F>,
) -> Array2<F> {
    let d = dy.ncols();
    let mut dx = Array2::zeros(dy.raw_dim());
    for i in 0..dy.nrows() {
        let dy_r = dy.row(i);
        let xh_r = xhat.row(i);
        // dg accumulates over rows.
        for j in 0..d {
            dgain[j] = dgain[j] + dy_r[j] * xh_r[j];
        }
        let mut dot = F::zero();
        for j in 0..d {
            dot = dot + dy_r[j] * gain[j] * xh_r[j];
        }
        let mean = dot / F::from_f64(d as f64);
        let r = rstd[i];
        let mut dx_r = dx.row_mut(i);
        for j in 0..d {
            dx_r[j] = r * (dy_r[j] * gain[j] - xh_r[j] * mean);
        }
    }
    dx
}

pub(crate) fn gelu<F: Scalar>(x: F) -> F {
    let xf = x.into_f64();
    let u = GELU_C * (xf + GELU_A * xf * xf * xf);
    F::from_f64(0.5 * xf * (1.0 + u.tanh()))
}

fn gelu_grad<F: Scalar>(x: F) -> F {
    let xf = x.into_f64();
    let u = GELU_C * (xf + GELU_A * xf * xf * xf);
    let th = u.tanh();
    let sech2 = 1.0 - th * th;
    F::from_f64(0.5 * (1.0 + th) + 0.5 * xf * sech2 * GELU_C * (1.0 + 3.0 * GELU_A * xf * xf))
}

fn output_matrix<'a, F: Scalar>(params: &'a Params<F>) -> &'a Array2<F> {
    params.out.as_ref().unwrap_or(&params.emb)
}

pub(crate) fn forward<F: Scalar>(
    params: &Params<F>,
    pos: &Array2<F>,
    cfg: &ModelConfig,
    tokens: &Array2<u32>,
) -> ForwardCache<F> {
    let (b, t) = tokens.dim();
    let n = b * t;
    let d = cfg.d_model;
    let hd = cfg.head_dim();
    let scale = F::from_f64(1.0 / (hd as f64).sqrt());

    let mut x = Array2::zeros((n, d));
    for bi in 0..b {
        for ti in 0..t {
            let tok = tokens[(bi, ti)] as usize;
            let mut row = x.row_mut(bi * t + ti);
            let e = params.emb.row(tok);
            let p = pos.row(ti);
            for j in 0..d {
                row[j] = e[j] + p[j];
            }
        }
    }

    let mut layers = Vec::with_capacity(cfg.n_layers);
    for block in &params.blocks {
        let (xhat1, rstd1) = rmsnorm(&x.view());
        let xn1 = &xhat1 * &block.ln1;
        let q = xn1.dot(&block.wq);
        let k = xn1.dot(&block.wk);
        let v = xn1.dot(&block.wv);

        let mut hcat = Array2::zeros((n, d));
        let mut attn = Vec::with_capacity(b * cfg.n_heads);
        for bi in 0..b {
            let row_range = s![bi * t..(bi + 1) * t, ..];
            for h in 0..cfg.n_heads {
                let col_range = s![.., h * hd..(h + 1) * hd];
                let qv = q.slice(row_range).slice_move(col_range);
                let kv = k.slice(row_range).slice_move(col_range);
                let vv = v.slice(row_range).slice_move(col_range);
                let mut scores = qv.dot(&kv.t());
                scores.mapv_inplace(|s| s * scale);
                for i in 0..t {
                    let mut row = scores.row_mut(i);
                    let mut maxv = F::neg_infinity();
                    for j in 0..=i {
                        if row[j] > maxv {
                            maxv = row[j];
                        }
                    }
                    let mut sum = F::zero();
                    for j in 0..=i {
                        let e = (row[j] - maxv).exp();
                        row[j] = e;
                        sum = sum + e;
                    }
                    let inv = F::one() / sum;
                    for j in 0..t {
                        if j <= i {
                            row[j] = row[j] * inv;
                        } else {
                            row[j] = F::zero();
                        }
                    }
                }
                let ctx = scores.dot(&vv);
                hcat.slice_mut(row_range)
                    .slice_move(col_range)
                    .assign(&ctx);
                attn.push(scores);
            }
        }

        let attn_out = hcat.dot(&block.wo);
        let x_mid = &x + &attn_out;
        let (xhat2, rstd2) = rmsnorm(&x_mid.view());
        let xn2 = &xhat2 * &block.ln2;
        let h_pre = xn2.dot(&block.w1);
        let h_act = h_pre.mapv(gelu);
        let mlp_out = h_act.dot(&block.w2);
        let x_out = &x_mid + &mlp_out;

        layers.push(LayerCache {
            xhat1,
            rstd1,
            q,
            k,
            v,
            attn,
            hcat,
            xhat2,
            rstd2,
            h_pre,
            h_act,
        });
        x = x_out;
    }

    let (xf, xf_hat, rstd_f) = if cfg.n_layers > 0 {
        let (xh, rs) = rmsnorm(&x.view());
        (&xh * &params.final_norm, xh, rs)
    } else {
        (x, Array2::zeros((0, 0)), Vec::new())
    };
    let logits = xf.dot(&output_matrix(params).t());

    ForwardCache {
        b,
        t,
        layers,
        xf_hat,
        rstd_f,
        xf,
        logits,
    }
}

pub(crate) fn backward<F: Scalar>(
    params: &Params<F>,
    cfg: &ModelConfig,
    tokens: &Array2<u32>,
    cache: &ForwardCache<F>,
    dlogits: &Array2<F>,
) -> Params<F> {
    let (b, t) = (cache.b, cache.t);
    let d = cfg.d_model;
    let hd = cfg.head_dim();
    let scale = F::from_f64(1.0 / (hd as f64).sqrt());
    let mut grads = params.zeros_like();

    // Output projection (tied weights fold into the embedding gradient).
    let d_wout = dlogits.t().dot(&cache.xf);
    match (&mut grads.out, cfg.tie_embeddings) {
        (Some(g), false) => *g += &d_wout,
        _ => grads.emb += &d_wout,
    }
    let d_xf = dlogits.dot(output_matrix(params));

    let mut dx = if cfg.n_layers > 0 {
        rmsnorm_backward(
            &d_xf,
            &cache.xf_hat,
            &cache.rstd_f,
            &params.final_norm,
            &mut grads.final_norm,
        )
    } else {
        d_xf
    };

    for (li, layer) in cache.layers.iter().enumerate().rev() {
        let block = &params.blocks[li];
        let gb = &mut grads.blocks[li];

        // MLP branch: x_out = x_mid + gelu(xn2·W1)·W2.
        let d_hact = dx.dot(&block.w2.t());
        gb.w2 += &layer.h_act.t().dot(&dx);
        let mut d_hpre = d_hact;
        d_hpre.zip_mut_with(&layer.h_pre, |dh, hp| *dh = *dh * gelu_grad(*hp));
        let xn2 = &layer.xhat2 * &block.ln2;
        gb.w1 += &xn2.t().dot(&d_hpre);
        let d_xn2 = d_hpre.dot(&block.w1.t());
        let d_mid_norm =
            rmsnorm_backward(&d_xn2, &layer.xhat2, &layer.rstd2, &block.ln2, &mut gb.ln2);
        let mut d_xmid = dx; // residual skip
        d_xmid += &d_mid_norm;

        // Attention branch: x_mid = x_in + (heads)·Wo.
        let d_attn_out = d_xmid.view();
        gb.wo += &layer.hcat.t().dot(&d_attn_out);
        let d_hcat = d_attn_out.dot(&block.wo.t());

        let n = b * t;
        let mut dq = Array2::<F>::zeros((n, d));
        let mut dk = Array2::<F>::zeros((n, d));
        let mut dv = Array2::<F>::zeros((n, d));
        for bi in 0..b {
            let row_range = s![bi * t..(bi + 1) * t, ..];
            for h in 0..cfg.n_heads {
                let col_range = s![.., h * hd..(h + 1) * hd];
                let a = &layer.attn[bi * cfg.n_heads + h];
                let d_ctx = d_hcat.slice(row_range).slice_move(col_range);
                let vv = layer.v.slice(row_range).slice_move(col_range);
                let qv = layer.q.slice(row_range).slice_move(col_range);
                let kv = layer.k.slice(row_range).slice_move(col_range);

                let d_a = d_ctx.dot(&vv.t());
                dv.slice_mut(row_range)
                    .slice_move(col_range)
                    .assign(&a.t().dot(&d_ctx));

                // Softmax backward per row; masked entries have a == 0.
                let mut ds = Array2::<F>::zeros((t, t));
                for i in 0..t {
                    let a_r = a.row(i);
                    let da_r = d_a.row(i);
                    let mut dot = F::zero();
                    for j in 0..=i {
                        dot = dot + a_r[j] * da_r[j];
                    }
                    let mut ds_r = ds.row_mut(i);
                    for j in 0..=i {
                        ds_r[j] = a_r[j] * (da_r[j] - dot) * scale;
                    }
                }
                dq.slice_mut(row_range)
                    .slice_move(col_range)
                    .assign(&ds.dot(&kv));
                dk.slice_mut(row_range)
                    .slice_move(col_range)
                    .assign(&ds.t().dot(&qv));
            }
        }

        let xn1 = &layer.xhat1 * &block.ln1;
        gb.wq += &xn1.t().dot(&dq);
        gb.wk += &xn1.t().dot(&dk);
        gb.wv += &xn1.t().dot(&dv);
        let mut d_xn1 = dq.dot(&block.wq.t());
        d_xn1 += &dk.dot(&block.wk.t());
        d_xn1 += &dv.dot(&block.wv.t());
        let d_in_norm =
            rmsnorm_backward(&d_xn1, &layer.xhat1, &layer.rstd1, &block.ln1, &mut gb.ln1);
        dx = d_xmid; // residual skip into the block input
        dx += &d_in_norm;
    }

    // Embedding lookup backward; positions are a fixed table.
    for bi in 0..b {
        for ti in 0..t {
            let tok = tokens[(bi, ti)] as usize;
            let src = dx.row(bi * t + ti);
            let mut dst = grads.emb.row_mut(tok);
            for j in 0..d {
                dst[j] = dst[j] + src[j];
            }
        }
    }
    grads
}

/// Cross-entropy over scored positions. A position t >= 1 is scored when its
/// loss-mask bit is set; the logits at t-1 predict it.
pub(crate) fn loss_and_dlogits<F: Scalar>(
    logits: &Array2<F>,
    tokens: &Array2<u32>,
    mask: &Array2<bool>,
    want_grad: bool,
) -> (f64, usize, Option<Array2<F>>) {
    let (b, t) = tokens.dim();
    let count = (0..b)
        .flat_map(|bi| (1..t).map(move |ti| (bi, ti)))
        .filter(|(bi, ti)| mask[(*bi, *ti)])
        .count();
    let mut dlogits = want_grad.then(|| Array2::zeros(logits.raw_dim()));
    let mut loss_sum = 0.0f64;
    if count == 0 {
        return (0.0, 0, dlogits);
    }
    let inv = 1.0 / count as f64;
    for bi in 0..b {
        for ti in 1..t {
            if !mask[(bi, ti)] {
                continue;
            }
            let p = bi * t + ti - 1;
            let target = tokens[(bi, ti)] as usize;
            let row = logits.row(p);
            let maxv = row.iter().fold(f64::NEG_INFINITY, |m, v| m.max(v.into_f64()));
            let mut sum = 0.0f64;
            for v in row.iter() {
                sum += (v.into_f64() - maxv).exp();
            }
            let lse = maxv + sum.ln();
            loss_sum += lse - row[target].into_f64();
            if let Some(dl) = dlogits.as_mut() {
                let mut drow = dl.row_mut(p);
                for (dv, v) in drow.iter_mut().zip(row.iter()) {
                    *dv = *dv + F::from_f64((v.into_f64() - lse).exp() * inv);
                }
                drow[target] = drow[target] - F::from_f64(inv);
            }
        }
    }
    (loss_sum * inv, count, dlogits)
}

fn rows_to_arrays(
    rows: &[PackedRow],
    cfg: &ModelConfig,
) -> Result<(Array2<u32>, Array2<bool>), LmError> {
    if rows.is_empty() {
        return Err(LmError::BatchMismatch("empty batch".into()));
    }
    let t = cfg.context_len;
    let b = rows.len();
    let mut tokens = Array2::zeros((b, t));
    let mut mask = Array2::from_elem((b, t), false);
    for (bi, row) in rows.iter().enumerate() {
        if row.tokens.len() != t {
            return Err(LmError::BatchMismatch(format!(
                "row has {} tokens, context is {t}",
                row.tokens.len()
            )));
        }
        for (ti, tok) in row.tokens.iter().enumerate() {
            if *tok as usize >= cfg.vocab_size {
                return Err(LmError::TokenOutOfRange(*tok, cfg.vocab_size));
            }
            tokens[(bi, ti)] = *tok;
            mask[(bi, ti)] = row.loss_mask[ti];
        }
    }
    Ok((tokens, mask))
}

#[derive(Debug, Clone, Copy)]
pub struct StepStats {
    pub loss: f64,
    pub lr: f64,
    pub grad_norm: f64,
    pub grad_norm_post_clip: f64,
    pub scored_tokens: usize,
}

/// One optimization step: forward, exact backward, global-norm clip, AdamW.
///
/// The step counter increments on success; a non-finite loss aborts with the
/// step and learning rate in the error.
pub fn train_step<F: Scalar>(
    ckpt: &mut Checkpoint<F>,
    rows: &[PackedRow],
    train_cfg: &TrainConfig,
) -> Result<StepStats, LmError> {
    let (tokens, mask) = rows_to_arrays(rows, &ckpt.config)?;
    let lr = lr_at((ckpt.step + 1).min(train_cfg.total_steps), train_cfg);
    let cache = forward(&ckpt.params, &ckpt.pos_table, &ckpt.config, &tokens);
    let (loss, scored, dlogits) = loss_and_dlogits(&cache.logits, &tokens, &mask, true);
    if !loss.is_finite() {
        return Err(LmError::NonFiniteLoss {
            step: ckpt.step,
            lr,
            loss,
        });
    }
    let dlogits = dlogits.expect("gradient requested");
    let mut grads = backward(&ckpt.params, &ckpt.config, &tokens, &cache, &dlogits);
    let pre = global_grad_norm(&grads);
    clip_global_norm(&mut grads, train_cfg.clip_norm);
    let post = global_grad_norm(&grads);
    ckpt.step += 1;
    adamw_update(&mut ckpt.params, &grads, &mut ckpt.opt, lr, ckpt.step);
    Ok(StepStats {
        loss,
        lr,
        grad_norm: pre,
        grad_norm_post_clip: post,
        scored_tokens: scored,
    })
}

#[derive(Debug, Clone, Copy)]
pub struct EvalResult {
    pub loss: f64,
    pub tokens: usize,
}

/// Teacher-forced loss over rows, restricted to targets accepted by `scope`
/// (PAD positions never count). Rows are processed in fixed-size chunks.
pub fn eval_loss<F: Scalar>(
    ckpt: &Checkpoint<F>,
    rows: &[PackedRow],
    scope: impl Fn(u32) -> bool,
) -> Result<EvalResult, LmError> {
    let mut total = 0.0f64;
    let mut count = 0usize;
    for chunk in rows.chunks(16) {
        let (tokens, mut mask) = rows_to_arrays(chunk, &ckpt.config)?;
        for bi in 0..tokens.nrows() {
            for ti in 0..tokens.ncols() {
                if mask[(bi, ti)] && !scope(tokens[(bi, ti)]) {
                    mask[(bi, ti)] = false;
                }
            }
        }
        let cache = forward(&ckpt.params, &ckpt.pos_table, &ckpt.config, &tokens);
        let (loss, n, _) = loss_and_dlogits(&cache.logits, &tokens, &mask, false);
        total += loss * n as f64;
        count += n;
    }
    Ok(EvalResult {
        loss: if count > 0 { total / count as f64 } else { f64::NAN },
        tokens: count,
    })
}

/// Logits for one unbatched sequence (teacher forcing); rows are positions.
pub fn sequence_logits<F: Scalar>(
    ckpt: &Checkpoint<F>,
    tokens: &[u32],
) -> Result<Array2<F>, LmError> {
    if tokens.is_empty() {
        return Err(LmError::EmptyPrompt);
    }
    if tokens.len() > ckpt.config.context_len {
        return Err(LmError::TooLong(tokens.len(), ckpt.config.context_len));
    }
    for tok in tokens {
        if *tok as usize >= ckpt.config.vocab_size {
            return Err(LmError::TokenOutOfRange(*tok, ckpt.config.vocab_size));
        }
    }
    let arr = Array2::from_shape_vec((1, tokens.len()), tokens.to_vec())
        .expect("shape matches data");
    let cache = forward(&ckpt.params, &ckpt.pos_table, &ckpt.config, &arr);
    Ok(cache.logits)
}

/// Mean over rows of the full-range per-position cross-entropy; used by
/// tests as an independent route to the training loss.
pub fn mean_row_loss<F: Scalar>(logits: &Array2<F>, targets: &[u32]) -> f64 {
    let mut sum = 0.0;
    for (p, target) in targets.iter().enumerate() {
        let row = logits.row(p);
        let maxv = row.iter().fold(f64::NEG_INFINITY, |m, v| m.max(v.into_f64()));
        let lse = maxv
            + row
                .iter()
                .map(|v| (v.into_f64() - maxv).exp())
                .sum::<f64>()
                .ln();
        sum += lse - row[*target as usize].into_f64();
    }
    sum / targets.len().max(1) as f64
}
