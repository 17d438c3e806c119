//! Checkpoints: model + optimizer state with exact binary serialization.

use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::Array2;

use super::config::ModelConfig;
use super::optim::AdamState;
use super::params::{gaussian_matrix, position_table, Params};
use super::{LmError, Scalar};
use crate::tokenize::JointVocab;
use crate::util::derive_rng;

const MAGIC: &[u8; 8] = b"SLMCKPT1";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Provenance {
    Scratch,
    Twist { source: String },
}

/// Model parameters, optimizer state, and identity of the data they were
/// trained against. The positional table is derived from the config and is
/// rebuilt rather than stored.
#[derive(Debug, Clone)]
pub struct Checkpoint<F: Scalar> {
    pub config: ModelConfig,
    pub params: Params<F>,
    pub opt: AdamState<F>,
    pub step: u64,
    pub vocab_hash: String,
    pub provenance: Provenance,
    pub pos_table: Array2<F>,
}

impl<F: Scalar> Checkpoint<F> {
    pub fn assemble(
        config: ModelConfig,
        params: Params<F>,
        opt: AdamState<F>,
        step: u64,
        vocab_hash: String,
        provenance: Provenance,
    ) -> Self {
        let pos_table = position_table(config.context_len, config.d_model);
        Self {
            config,
            params,
            opt,
            step,
            vocab_hash,
            provenance,
            pos_table,
        }
    }
}

/// Fresh random model with zeroed optimizer state.
pub fn init_random<F: Scalar>(
    config: &ModelConfig,
    seed: u64,
    vocab_hash: &str,
) -> Result<Checkpoint<F>, LmError> {
    config.validate()?;
    let params = Params::init(config, seed);
    let opt = AdamState::zeros_like(&params);
    Ok(Checkpoint::assemble(
        config.clone(),
        params,
        opt,
        0,
        vocab_hash.to_string(),
        Provenance::Scratch,
    ))
}

/// Warm-start a joint-vocab model from a text-only checkpoint.
///
/// The text model's vocab must be exactly the joint vocab's text prefix
/// (specials + text range). Transformer blocks and the final norm copy
/// verbatim; embedding (and untied output) rows for shared tokens copy;
/// the new unit-token rows are drawn from a normal distribution matching
/// the mean and standard deviation of the copied embedding rows.
pub fn init_twist<F: Scalar>(
    text_ckpt: &Checkpoint<F>,
    joint_vocab: &JointVocab,
    seed: u64,
    source_id: &str,
) -> Result<Checkpoint<F>, LmError> {
    let prefix = joint_vocab.text_prefix_size();
    if text_ckpt.config.vocab_size != prefix {
        return Err(LmError::VocabMismatch(format!(
            "text checkpoint vocab {} != joint text prefix {}",
            text_ckpt.config.vocab_size, prefix
        )));
    }
    if text_ckpt.vocab_hash != joint_vocab.text_prefix_hash() {
        return Err(LmError::VocabMismatch(
            "text checkpoint was trained on a different text prefix".into(),
        ));
    }

    let mut config = text_ckpt.config.clone();
    config.vocab_size = joint_vocab.size();

    let mut params = text_ckpt.params.clone();
    params.emb = extend_rows(
        &text_ckpt.params.emb,
        joint_vocab.size(),
        derive_rng(seed, "twist-emb", &[]),
    );
    if let Some(out) = &text_ckpt.params.out {
        params.out = Some(extend_rows(
            out,
            joint_vocab.size(),
            derive_rng(seed, "twist-out", &[]),
        ));
    }

    let opt = AdamState::zeros_like(&params);
    Ok(Checkpoint::assemble(
        config,
        params,
        opt,
        0,
        joint_vocab.content_hash(),
        Provenance::Twist {
            source: source_id.to_string(),
        },
    ))
}

/// Copy existing rows and fill the rest with N(mean, std) of the copied
/// entries.
fn extend_rows<F: Scalar>(
    src: &Array2<F>,
    new_rows: usize,
    mut rng: rand_chacha::ChaCha8Rng,
) -> Array2<F> {
    let (old_rows, d) = src.dim();
    debug_assert!(new_rows >= old_rows);
    let n = (old_rows * d) as f64;
    let mean = src.iter().map(|v| v.into_f64()).sum::<f64>() / n;
    let var = src
        .iter()
        .map(|v| {
            let c = v.into_f64() - mean;
            c * c
        })
        .sum::<f64>()
        / n;
    let std = var.sqrt();

    let fresh: Array2<F> = gaussian_matrix(new_rows - old_rows, d, std, &mut rng);
    let mut out = Array2::zeros((new_rows, d));
    out.slice_mut(ndarray::s![..old_rows, ..]).assign(src);
    out.slice_mut(ndarray::s![old_rows.., ..])
        .zip_mut_with(&fresh, |o, f| *o = *f + F::from_f64(mean));
    out
}

pub fn save_checkpoint<F: Scalar>(
    path: impl AsRef<Path>,
    ckpt: &Checkpoint<F>,
) -> Result<(), LmError> {
    let tmp = path.as_ref().with_extension("ckpt.tmp");
    {
        let mut w = BufWriter::new(std::fs::File::create(&tmp)?);
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&[F::BYTES as u8])?;
        let c = &ckpt.config;
        for v in [
            c.n_layers,
            c.d_model,
            c.n_heads,
            c.d_ff,
            c.vocab_size,
            c.context_len,
        ] {
            w.write_all(&(v as u64).to_le_bytes())?;
        }
        w.write_all(&[u8::from(c.tie_embeddings)])?;
        w.write_all(&ckpt.step.to_le_bytes())?;
        write_str(&mut w, &ckpt.vocab_hash)?;
        match &ckpt.provenance {
            Provenance::Scratch => {
                w.write_all(&[0u8])?;
            }
            Provenance::Twist { source } => {
                w.write_all(&[1u8])?;
                write_str(&mut w, source)?;
            }
        }
        for group in [&ckpt.params, &ckpt.opt.m, &ckpt.opt.v] {
            let mut buf = Vec::new();
            for tensor in group.tensors() {
                buf.clear();
                buf.reserve(tensor.len() * F::BYTES);
                for v in tensor {
                    v.write_le(&mut buf);
                }
                w.write_all(&buf)?;
            }
        }
        w.flush()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load_checkpoint<F: Scalar>(path: impl AsRef<Path>) -> Result<Checkpoint<F>, LmError> {
    let mut r = BufReader::new(std::fs::File::open(path)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(LmError::BadCheckpoint("bad magic".into()));
    }
    let version = read_u32(&mut r)?;
    if version != VERSION {
        return Err(LmError::BadCheckpoint(format!("version {version}")));
    }
    let mut dtype = [0u8; 1];
    r.read_exact(&mut dtype)?;
    if dtype[0] as usize != F::BYTES {
        return Err(LmError::BadCheckpoint(format!(
            "dtype width {} does not match requested {}",
            dtype[0],
            F::BYTES
        )));
    }
    let mut dims = [0u64; 6];
    for d in dims.iter_mut() {
        *d = read_u64(&mut r)?;
    }
    let mut tie = [0u8; 1];
    r.read_exact(&mut tie)?;
    let config = ModelConfig {
        n_layers: dims[0] as usize,
        d_model: dims[1] as usize,
        n_heads: dims[2] as usize,
        d_ff: dims[3] as usize,
        vocab_size: dims[4] as usize,
        context_len: dims[5] as usize,
        tie_embeddings: tie[0] != 0,
    };
    config.validate()?;
    let step = read_u64(&mut r)?;
    let vocab_hash = read_str(&mut r)?;
    let mut tag = [0u8; 1];
    r.read_exact(&mut tag)?;
    let provenance = match tag[0] {
        0 => Provenance::Scratch,
        1 => Provenance::Twist {
            source: read_str(&mut r)?,
        },
        t => return Err(LmError::BadCheckpoint(format!("provenance tag {t}"))),
    };

    // Template params give the tensor shapes; contents are overwritten.
    let mut params = Params::<F>::init(&config, 0).zeros_like();
    let mut opt = AdamState::zeros_like(&params);
    for group in [&mut params, &mut opt.m, &mut opt.v] {
        for tensor in group.tensors_mut() {
            let mut buf = vec![0u8; tensor.len() * F::BYTES];
            r.read_exact(&mut buf).map_err(|_| {
                LmError::BadCheckpoint("tensor data truncated".into())
            })?;
            for (i, chunk) in buf.chunks_exact(F::BYTES).enumerate() {
                tensor[i] = F::read_le(chunk);
            }
        }
    }
    let mut trailing = Vec::new();
    r.read_to_end(&mut trailing)?;
    if !trailing.is_empty() {
        return Err(LmError::BadCheckpoint(format!(
            "{} trailing bytes",
            trailing.len()
        )));
    }
    Ok(Checkpoint::assemble(
        config, params, opt, step, vocab_hash, provenance,
    ))
}

fn write_str(w: &mut impl Write, s: &str) -> std::io::Result<()> {
    w.write_all(&(s.len() as u32).to_le_bytes())?;
    w.write_all(s.as_bytes())
}

fn read_str(r: &mut impl Read) -> Result<String, LmError> {
    let len = read_u32(r)? as usize;
    if len > 1 << 20 {
        return Err(LmError::BadCheckpoint("unreasonable string length".into()));
    }
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf)?;
    String::from_utf8(buf).map_err(|_| LmError::BadCheckpoint("non-utf8 string".into()))
}

fn read_u32(r: &mut impl Read) -> Result<u32, LmError> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read) -> Result<u64, LmError> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}
