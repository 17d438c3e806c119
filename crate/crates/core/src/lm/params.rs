//! Parameter containers and initialization.

use ndarray::{Array1, Array2};
use rand_chacha::ChaCha8Rng;

use super::{ModelConfig, Scalar};
use crate::util::derive_rng;

#[derive(Debug, Clone, PartialEq)]
pub struct BlockParams<F> {
    pub ln1: Array1<F>,
    pub wq: Array2<F>,
    pub wk: Array2<F>,
    pub wv: Array2<F>,
    pub wo: Array2<F>,
    pub ln2: Array1<F>,
    pub w1: Array2<F>,
    pub w2: Array2<F>,
}

/// All trainable tensors. Weight matrices are stored [d_in, d_out] and
/// applied as `x.dot(w)`; the embedding is [vocab, d] and doubles as the
/// output matrix when tied.
#[derive(Debug, Clone, PartialEq)]
pub struct Params<F> {
    pub emb: Array2<F>,
    pub blocks: Vec<BlockParams<F>>,
    pub final_norm: Array1<F>,
    pub out: Option<Array2<F>>,
}

impl<F: Scalar> Params<F> {
    /// Gaussian init with std 0.02 for matrices, ones for norm gains.
    pub fn init(cfg: &ModelConfig, seed: u64) -> Self {
        let mut rng = derive_rng(seed, "param-init", &[]);
        let d = cfg.d_model;
        let std = 0.02;
        let mut mat = |r: usize, c: usize, rng: &mut ChaCha8Rng| gaussian_matrix(r, c, std, rng);
        let emb = mat(cfg.vocab_size, d, &mut rng);
        let blocks = (0..cfg.n_layers)
            .map(|_| BlockParams {
                ln1: Array1::from_elem(d, F::one()),
                wq: mat(d, d, &mut rng),
                wk: mat(d, d, &mut rng),
                wv: mat(d, d, &mut rng),
                wo: mat(d, d, &mut rng),
                ln2: Array1::from_elem(d, F::one()),
                w1: mat(d, cfg.d_ff, &mut rng),
                w2: mat(cfg.d_ff, d, &mut rng),
            })
            .collect();
        let final_norm = if cfg.n_layers > 0 {
            Array1::from_elem(d, F::one())
        } else {
            Array1::from_elem(0, F::one())
        };
        let out = if cfg.tie_embeddings {
            None
        } else {
            Some(mat(cfg.vocab_size, d, &mut rng))
        };
        Self {
            emb,
            blocks,
            final_norm,
            out,
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            emb: Array2::zeros(self.emb.raw_dim()),
            blocks: self
                .blocks
                .iter()
                .map(|b| BlockParams {
                    ln1: Array1::zeros(b.ln1.raw_dim()),
                    wq: Array2::zeros(b.wq.raw_dim()),
                    wk: Array2::zeros(b.wk.raw_dim()),
                    wv: Array2::zeros(b.wv.raw_dim()),
                    wo: Array2::zeros(b.wo.raw_dim()),
                    ln2: Array1::zeros(b.ln2.raw_dim()),
                    w1: Array2::zeros(b.w1.raw_dim()),
                    w2: Array2::zeros(b.w2.raw_dim()),
                })
                .collect(),
            final_norm: Array1::zeros(self.final_norm.raw_dim()),
            out: self.out.as_ref().map(|o| Array2::zeros(o.raw_dim())),
        }
    }

    /// Flat views over every tensor, in a fixed canonical order; the
    /// optimizer, clipper, and serializer all walk this.
    pub fn tensors(&self) -> Vec<&[F]> {
        let mut v: Vec<&[F]> = vec![self.emb.as_slice().expect("standard layout")];
        for b in &self.blocks {
            v.push(b.ln1.as_slice().expect("contiguous"));
            v.push(b.wq.as_slice().expect("standard layout"));
            v.push(b.wk.as_slice().expect("standard layout"));
            v.push(b.wv.as_slice().expect("standard layout"));
            v.push(b.wo.as_slice().expect("standard layout"));
            v.push(b.ln2.as_slice().expect("contiguous"));
            v.push(b.w1.as_slice().expect("standard layout"));
            v.push(b.w2.as_slice().expect("standard layout"));
        }
        v.push(self.final_norm.as_slice().expect("contiguous"));
        if let Some(o) = &self.out {
            v.push(o.as_slice().expect("standard layout"));
        }
        v
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [F]> {
        let mut v: Vec<&mut [F]> = vec![self.emb.as_slice_mut().expect("standard layout")];
        for b in &mut self.blocks {
            v.push(b.ln1.as_slice_mut().expect("contiguous"));
            v.push(b.wq.as_slice_mut().expect("standard layout"));
            v.push(b.wk.as_slice_mut().expect("standard layout"));
            v.push(b.wv.as_slice_mut().expect("standard layout"));
            v.push(b.wo.as_slice_mut().expect("standard layout"));
            v.push(b.ln2.as_slice_mut().expect("contiguous"));
            v.push(b.w1.as_slice_mut().expect("standard layout"));
            v.push(b.w2.as_slice_mut().expect("standard layout"));
        }
        v.push(self.final_norm.as_slice_mut().expect("contiguous"));
        if let Some(o) = &mut self.out {
            v.push(o.as_slice_mut().expect("standard layout"));
        }
        v
    }

    pub fn n_params(&self) -> u64 {
        self.tensors().iter().map(|t| t.len() as u64).sum()
    }

    /// Largest absolute elementwise difference; infinity on shape mismatch.
    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        let a = self.tensors();
        let b = other.tensors();
        if a.len() != b.len() {
            return f64::INFINITY;
        }
        let mut worst = 0.0f64;
        for (x, y) in a.iter().zip(&b) {
            if x.len() != y.len() {
                return f64::INFINITY;
            }
            for (p, q) in x.iter().zip(y.iter()) {
                worst = worst.max((p.into_f64() - q.into_f64()).abs());
            }
        }
        worst
    }
}

/// Standard normal matrix scaled by `std`, drawn via Box-Muller from the
/// given stream. Values are computed in f64 then cast, so f32 and f64
/// instantiations see the same underlying draw.
pub fn gaussian_matrix<F: Scalar>(
    rows: usize,
    cols: usize,
    std: f64,
    rng: &mut ChaCha8Rng,
) -> Array2<F> {
    let data: Vec<F> = (0..rows * cols)
        .map(|_| F::from_f64(std * standard_normal(rng)))
        .collect();
    Array2::from_shape_vec((rows, cols), data).expect("shape matches data")
}

pub fn standard_normal(rng: &mut ChaCha8Rng) -> f64 {
    use rand::Rng;
    // Box-Muller; one value per draw keeps the stream layout simple.
    let u1: f64 = rng.random::<f64>().max(1e-300);
    let u2: f64 = rng.random();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Sinusoidal positional table [context, d]; fixed, never trained.
pub fn position_table<F: Scalar>(context_len: usize, d_model: usize) -> Array2<F> {
    let mut table = Array2::zeros((context_len, d_model));
    for t in 0..context_len {
        for i in 0..d_model / 2 {
            let freq = 1.0 / 10000f64.powf(2.0 * i as f64 / d_model as f64);
            let angle = t as f64 * freq;
            table[(t, 2 * i)] = F::from_f64(angle.sin());
            table[(t, 2 * i + 1)] = F::from_f64(angle.cos());
        }
        if d_model % 2 == 1 {
            let freq = 1.0 / 10000f64.powf((d_model - 1) as f64 / d_model as f64);
            table[(t, d_model - 1)] = F::from_f64((t as f64 * freq).sin());
        }
    }
    table
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lm::count_params;

    #[test]
    fn closed_form_matches_instantiated_tensors() {
        let cases = [
            ModelConfig::desk(2, 64, 4, 605),
            ModelConfig::desk(5, 96, 6, 1105),
            ModelConfig::desk(1, 32, 2, 64),
            ModelConfig {
                tie_embeddings: false,
                ..ModelConfig::desk(3, 48, 4, 200)
            },
            ModelConfig {
                n_layers: 0,
                d_ff: 0,
                ..ModelConfig::desk(0, 40, 4, 77)
            },
        ];
        for cfg in cases {
            let p: Params<f32> = Params::init(&cfg, 1);
            assert_eq!(p.n_params(), count_params(&cfg), "config {cfg:?}");
        }
    }

    #[test]
    fn init_is_seed_deterministic() {
        let cfg = ModelConfig::desk(2, 32, 4, 100);
        let a: Params<f32> = Params::init(&cfg, 7);
        let b: Params<f32> = Params::init(&cfg, 7);
        assert_eq!(a, b);
        let c: Params<f32> = Params::init(&cfg, 8);
        assert!(a.max_abs_diff(&c) > 0.0);
    }

    #[test]
    fn f32_and_f64_inits_share_the_draw() {
        let cfg = ModelConfig::desk(1, 16, 2, 50);
        let a: Params<f32> = Params::init(&cfg, 3);
        let b: Params<f64> = Params::init(&cfg, 3);
        let diff = (a.emb[(0, 0)] as f64 - b.emb[(0, 0)]).abs();
        assert!(diff < 1e-7, "casting should be the only difference");
    }

    #[test]
    fn position_table_is_bounded_and_distinct() {
        let t: Array2<f64> = position_table(64, 32);
        assert!(t.iter().all(|v| v.abs() <= 1.0));
        assert_ne!(t.row(0), t.row(1));
    }
}
