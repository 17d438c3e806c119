//! Packed-shard binary format: fixed-length training rows with loss masks.
//!
//! Layout, all little-endian:
//!
//! ```text
//! magic    8  b"SLMSHRD1"
//! version  4  u32
//! vhash   64  vocab content hash, lowercase hex
//! context  4  u32
//! rows     8  u64
//! then per row: context u32 tokens, ceil(context/8) mask bytes (LSB first,
//! bit set = position counts toward the loss)
//! ```

use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::interleave::{MaskClass, PackedRow};
use crate::tokenize::JointVocab;

const MAGIC: &[u8; 8] = b"SLMSHRD1";
const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ShardError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad magic, not a shard file")]
    BadMagic,
    #[error("unsupported shard version {0}")]
    BadVersion(u32),
    #[error("shard truncated or malformed: {0}")]
    Malformed(String),
    #[error("vocab hash mismatch: shard has {shard}, expected {expected}")]
    VocabMismatch { shard: String, expected: String },
}

/// In-memory shard: rows all share one context length and vocab hash.
#[derive(Debug, Clone, PartialEq)]
pub struct Shard {
    pub vocab_hash: String,
    pub context_len: usize,
    pub rows: Vec<PackedRow>,
}

impl Shard {
    pub fn new(vocab_hash: String, context_len: usize, rows: Vec<PackedRow>) -> Self {
        debug_assert!(rows.iter().all(|r| r.tokens.len() == context_len));
        Self {
            vocab_hash,
            context_len,
            rows,
        }
    }

    pub fn total_tokens(&self) -> u64 {
        (self.rows.len() * self.context_len) as u64
    }

    pub fn non_pad_tokens(&self) -> u64 {
        self.rows.iter().map(|r| r.non_pad() as u64).sum()
    }

    /// Error out unless the shard was built against this vocab.
    pub fn check_vocab(&self, vocab: &JointVocab) -> Result<(), ShardError> {
        let expected = vocab.content_hash();
        if self.vocab_hash != expected {
            return Err(ShardError::VocabMismatch {
                shard: self.vocab_hash.clone(),
                expected,
            });
        }
        Ok(())
    }
}

pub fn write_shard(path: impl AsRef<Path>, shard: &Shard) -> Result<(), ShardError> {
    if shard.vocab_hash.len() != 64 {
        return Err(ShardError::Malformed(format!(
            "vocab hash must be 64 hex chars, got {}",
            shard.vocab_hash.len()
        )));
    }
    let tmp = path.as_ref().with_extension("shard.tmp");
    {
        let mut w = BufWriter::new(std::fs::File::create(&tmp)?);
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(shard.vocab_hash.as_bytes())?;
        w.write_all(&(shard.context_len as u32).to_le_bytes())?;
        w.write_all(&(shard.rows.len() as u64).to_le_bytes())?;
        let mask_bytes = shard.context_len.div_ceil(8);
        for row in &shard.rows {
            if row.tokens.len() != shard.context_len {
                return Err(ShardError::Malformed("row length != context".into()));
            }
            for t in &row.tokens {
                w.write_all(&t.to_le_bytes())?;
            }
            let mut bits = vec![0u8; mask_bytes];
            for (i, m) in row.loss_mask.iter().enumerate() {
                if *m {
                    bits[i / 8] |= 1 << (i % 8);
                }
            }
            w.write_all(&bits)?;
        }
        w.flush()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub fn read_shard(path: impl AsRef<Path>) -> Result<Shard, ShardError> {
    let mut r = BufReader::new(std::fs::File::open(path)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(ShardError::BadMagic);
    }
    let mut buf4 = [0u8; 4];
    r.read_exact(&mut buf4)?;
    let version = u32::from_le_bytes(buf4);
    if version != VERSION {
        return Err(ShardError::BadVersion(version));
    }
    let mut hash = [0u8; 64];
    r.read_exact(&mut hash)?;
    let vocab_hash = String::from_utf8(hash.to_vec())
        .map_err(|_| ShardError::Malformed("vocab hash is not utf-8".into()))?;
    r.read_exact(&mut buf4)?;
    let context_len = u32::from_le_bytes(buf4) as usize;
    let mut buf8 = [0u8; 8];
    r.read_exact(&mut buf8)?;
    let n_rows = u64::from_le_bytes(buf8) as usize;
    if context_len == 0 {
        return Err(ShardError::Malformed("zero context length".into()));
    }

    let mask_bytes = context_len.div_ceil(8);
    let mut rows = Vec::with_capacity(n_rows);
    let mut tok_buf = vec![0u8; context_len * 4];
    let mut bit_buf = vec![0u8; mask_bytes];
    for i in 0..n_rows {
        r.read_exact(&mut tok_buf)
            .map_err(|_| ShardError::Malformed(format!("row {i} truncated")))?;
        r.read_exact(&mut bit_buf)
            .map_err(|_| ShardError::Malformed(format!("row {i} mask truncated")))?;
        let tokens: Vec<u32> = tok_buf
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes(c.try_into().expect("chunk of 4")))
            .collect();
        let loss_mask: Vec<bool> = (0..context_len)
            .map(|j| bit_buf[j / 8] & (1 << (j % 8)) != 0)
            .collect();
        rows.push(PackedRow { tokens, loss_mask });
    }
    let mut trailing = Vec::new();
    r.read_to_end(&mut trailing)?;
    if !trailing.is_empty() {
        return Err(ShardError::Malformed(format!(
            "{} trailing bytes after declared rows",
            trailing.len()
        )));
    }
    Ok(Shard {
        vocab_hash,
        context_len,
        rows,
    })
}

/// Token-class accounting over shard rows, written next to each shard.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ShardStats {
    pub rows: u64,
    pub tokens_total: u64,
    pub tokens_pad: u64,
    pub tokens_text: u64,
    pub tokens_speech: u64,
    pub tokens_marker: u64,
    /// Realized speech-word ratio of the interleaver, when applicable.
    pub realized_eta: Option<f64>,
}

impl ShardStats {
    pub fn collect(shard: &Shard, vocab: &JointVocab) -> Self {
        let mut s = ShardStats {
            rows: shard.rows.len() as u64,
            ..Default::default()
        };
        for row in &shard.rows {
            for (t, m) in row.tokens.iter().zip(&row.loss_mask) {
                s.tokens_total += 1;
                if !*m {
                    s.tokens_pad += 1;
                } else if vocab.is_text(*t) {
                    s.tokens_text += 1;
                } else if vocab.is_unit(*t) {
                    s.tokens_speech += 1;
                } else {
                    s.tokens_marker += 1;
                }
            }
        }
        s
    }

    /// Fraction of non-PAD tokens that are speech units.
    pub fn speech_fraction(&self) -> f64 {
        let non_pad = self.tokens_total - self.tokens_pad;
        if non_pad == 0 {
            return 0.0;
        }
        self.tokens_speech as f64 / non_pad as f64
    }

    pub fn class_of(vocab: &JointVocab, token: u32) -> MaskClass {
        if vocab.is_text(token) {
            MaskClass::Text
        } else if vocab.is_unit(token) {
            MaskClass::Speech
        } else {
            MaskClass::Marker
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::lexicon;
    use crate::interleave::pack;

    fn sample_shard() -> (Shard, JointVocab) {
        let vocab = JointVocab::for_lexicon(lexicon(100), 50).unwrap();
        let seqs: Vec<Vec<u32>> = (0..40)
            .map(|i| {
                let n = 10 + (i * 7) % 60;
                (0..n).map(|j| 1 + ((i + j) % 100) as u32).collect()
            })
            .collect();
        let rows = pack(seqs, 64);
        (Shard::new(vocab.content_hash(), 64, rows), vocab)
    }

    #[test]
    fn shard_round_trips_bit_exactly() {
        let (shard, vocab) = sample_shard();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("train.shard");
        write_shard(&path, &shard).unwrap();
        let back = read_shard(&path).unwrap();
        assert_eq!(back, shard);
        back.check_vocab(&vocab).unwrap();
        let bytes_a = std::fs::read(&path).unwrap();
        write_shard(&path, &back).unwrap();
        assert_eq!(bytes_a, std::fs::read(&path).unwrap());
    }

    #[test]
    fn shard_rejects_corruption() {
        let (shard, _) = sample_shard();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("train.shard");
        write_shard(&path, &shard).unwrap();
        let bytes = std::fs::read(&path).unwrap();

        std::fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
        assert!(matches!(read_shard(&path), Err(ShardError::Malformed(_))));

        let mut bad_magic = bytes.clone();
        bad_magic[0] = b'X';
        std::fs::write(&path, &bad_magic).unwrap();
        assert!(matches!(read_shard(&path), Err(ShardError::BadMagic)));

        let mut extended = bytes.clone();
        extended.extend_from_slice(&[0u8; 7]);
        std::fs::write(&path, &extended).unwrap();
        assert!(matches!(read_shard(&path), Err(ShardError::Malformed(_))));
    }

    #[test]
    fn vocab_mismatch_detected() {
        let (shard, _) = sample_shard();
        let other = JointVocab::for_lexicon(lexicon(101), 50).unwrap();
        assert!(matches!(
            shard.check_vocab(&other),
            Err(ShardError::VocabMismatch { .. })
        ));
    }

    #[test]
    fn stats_partition_token_classes() {
        let (shard, vocab) = sample_shard();
        let stats = ShardStats::collect(&shard, &vocab);
        assert_eq!(stats.tokens_total, shard.total_tokens());
        assert_eq!(
            stats.tokens_pad + stats.tokens_text + stats.tokens_speech + stats.tokens_marker,
            stats.tokens_total
        );
        assert_eq!(
            stats.tokens_total - stats.tokens_pad,
            shard.non_pad_tokens()
        );
    }
}
