//! AdamW with decoupled weight decay and global gradient-norm clipping.

use super::params::Params;
use super::Scalar;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.95;
pub const ADAM_EPS: f64 = 1e-8;
pub const WEIGHT_DECAY: f64 = 0.01;

/// First and second moment estimates, shaped like the parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<F> {
    pub m: Params<F>,
    pub v: Params<F>,
}

impl<F: Scalar> AdamState<F> {
    pub fn zeros_like(params: &Params<F>) -> Self {
        Self {
            m: params.zeros_like(),
            v: params.zeros_like(),
        }
    }
}

/// L2 norm over every gradient element, accumulated in f64.
pub fn global_grad_norm<F: Scalar>(grads: &Params<F>) -> f64 {
    let mut sq = 0.0f64;
    for t in grads.tensors() {
        for g in t {
            let gf = g.into_f64();
            sq += gf * gf;
        }
    }
    sq.sqrt()
}

/// Scale all gradients so the global norm is at most `clip`.
pub fn clip_global_norm<F: Scalar>(grads: &mut Params<F>, clip: f64) {
    let norm = global_grad_norm(grads);
    if norm > clip {
        let scale = F::from_f64(clip / norm);
        for t in grads.tensors_mut() {
            for g in t {
                *g = *g * scale;
            }
        }
    }
}

/// Bias-corrected AdamW update; `step` is the 1-based step just taken.
pub fn adamw_update<F: Scalar>(
    params: &mut Params<F>,
    grads: &Params<F>,
    opt: &mut AdamState<F>,
    lr: f64,
    step: u64,
) {
    let b1 = F::from_f64(BETA1);
    let b2 = F::from_f64(BETA2);
    let one = F::one();
    let bc1 = F::from_f64(1.0 - BETA1.powi(step as i32));
    let bc2 = F::from_f64(1.0 - BETA2.powi(step as i32));
    let lr_f = F::from_f64(lr);
    let eps = F::from_f64(ADAM_EPS);
    let wd = F::from_f64(WEIGHT_DECAY);

    let mut p_t = params.tensors_mut();
    let g_t = grads.tensors();
    let mut m_t = opt.m.tensors_mut();
    let mut v_t = opt.v.tensors_mut();
    debug_assert_eq!(p_t.len(), g_t.len());
    for i in 0..p_t.len() {
        let p = &mut p_t[i];
        let g = g_t[i];
        let m = &mut m_t[i];
        let v = &mut v_t[i];
        for j in 0..p.len() {
            let gj = g[j];
            m[j] = b1 * m[j] + (one - b1) * gj;
            v[j] = b2 * v[j] + (one - b2) * gj * gj;
            let mhat = m[j] / bc1;
            let vhat = v[j] / bc2;
            p[j] = p[j] - lr_f * (mhat / (vhat.sqrt() + eps) + wd * p[j]);
        }
    }
}
