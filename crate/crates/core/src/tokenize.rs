//! Joint vocabulary over text tokens, speech-unit tokens, and modality
//! markers, plus the deterministic invertible pseudo-unit encoder that stands
//! in for an acoustic encoder + k-means front end.
//!
//! Id layout: five specials at 0-4, then a contiguous text range (one
//! reserved UNK slot followed by the closed word list), then K unit ids.
//! Each speaker owns a bijective codebook: a word's lexicon index is written
//! in base-K digits and the digits are mapped through a speaker-keyed
//! permutation. Encoding is injective per speaker over the lexicon and
//! exactly invertible, which later serves as an oracle transcriber for
//! generated speech.

use std::collections::HashMap;
use std::ops::Range;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::util::{derive_rng, hex32, stable_hash, stable_hash64};

pub const PAD: u32 = 0;
pub const BOS: u32 = 1;
pub const EOS: u32 = 2;
pub const TEXT_MARK: u32 = 3;
pub const SPEECH_MARK: u32 = 4;
pub const N_SPECIALS: u32 = 5;

pub const SPECIAL_NAMES: [&str; 5] = ["<pad>", "<bos>", "<eos>", "<text>", "<speech>"];
pub const UNK_NAME: &str = "<unk>";

#[derive(Debug, Error)]
pub enum TokenizeError {
    #[error("invalid vocab: {0}")]
    InvalidVocab(String),
    #[error("vocab id space overflows configured 32-bit width")]
    IdOverflow,
    #[error("word {0:?} is outside the closed lexicon")]
    UnknownWord(String),
    #[error("empty unit sequence")]
    EmptyUnits,
    #[error("token {0} is not a unit token")]
    NotUnitToken(u32),
    #[error("token {0} is not a text token")]
    NotTextToken(u32),
    #[error("undecodable units")]
    UndecodableUnits,
    #[error("vocab manifest hash mismatch: file says {file}, content is {computed}")]
    HashMismatch { file: String, computed: String },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("manifest parse error: {0}")]
    Parse(#[from] serde_json::Error),
}

/// Immutable joint vocabulary; share by reference, all lookups are pure.
#[derive(Debug, Clone, PartialEq)]
pub struct JointVocab {
    words: Vec<String>,
    word_ids: HashMap<String, u32>,
    text_vocab_size: usize,
    unit_count: usize,
}

impl JointVocab {
    /// Layout: `text_vocab_size` ids starting at 5 (UNK first, then the word
    /// list), followed by `k` unit ids. Requires `words.len() + 1 ==
    /// text_vocab_size` so every text id is meaningful.
    pub fn build(
        text_vocab_size: usize,
        k: usize,
        words: Vec<String>,
    ) -> Result<Self, TokenizeError> {
        if text_vocab_size < 2 || k < 2 {
            return Err(TokenizeError::InvalidVocab(
                "text_vocab_size and K must both be >= 2".into(),
            ));
        }
        if words.len() + 1 != text_vocab_size {
            return Err(TokenizeError::InvalidVocab(format!(
                "word list has {} entries, text range holds {} plus UNK",
                words.len(),
                text_vocab_size - 1
            )));
        }
        let total = N_SPECIALS as u64 + text_vocab_size as u64 + k as u64;
        if total > u32::MAX as u64 {
            return Err(TokenizeError::IdOverflow);
        }
        if words.len() as u64 > (k as u64).saturating_mul(k as u64) {
            return Err(TokenizeError::InvalidVocab(format!(
                "lexicon of {} words cannot be addressed by 2 base-{k} digits",
                words.len()
            )));
        }
        let mut word_ids = HashMap::with_capacity(words.len());
        for (i, w) in words.iter().enumerate() {
            let clash = word_ids.insert(w.clone(), N_SPECIALS + 1 + i as u32);
            if clash.is_some() {
                return Err(TokenizeError::InvalidVocab(format!("duplicate word {w:?}")));
            }
        }
        Ok(Self {
            words,
            word_ids,
            text_vocab_size,
            unit_count: k,
        })
    }

    /// Vocabulary covering a closed lexicon exactly (plus the UNK slot).
    pub fn for_lexicon(words: Vec<String>, k: usize) -> Result<Self, TokenizeError> {
        let tvs = words.len() + 1;
        Self::build(tvs, k, words)
    }

    pub fn size(&self) -> usize {
        N_SPECIALS as usize + self.text_vocab_size + self.unit_count
    }

    pub fn text_range(&self) -> Range<u32> {
        N_SPECIALS..N_SPECIALS + self.text_vocab_size as u32
    }

    pub fn unit_range(&self) -> Range<u32> {
        let start = N_SPECIALS + self.text_vocab_size as u32;
        start..start + self.unit_count as u32
    }

    pub fn unk_id(&self) -> u32 {
        N_SPECIALS
    }

    pub fn unit_count(&self) -> usize {
        self.unit_count
    }

    /// Size of the text-only prefix (specials + text range); a text-only LM
    /// is trained with exactly this vocab size.
    pub fn text_prefix_size(&self) -> usize {
        N_SPECIALS as usize + self.text_vocab_size
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn is_text(&self, id: u32) -> bool {
        self.text_range().contains(&id)
    }

    pub fn is_unit(&self, id: u32) -> bool {
        self.unit_range().contains(&id)
    }

    pub fn is_special(&self, id: u32) -> bool {
        id < N_SPECIALS
    }

    pub fn word_id(&self, word: &str) -> Option<u32> {
        self.word_ids.get(word).copied()
    }

    /// Word behind a text-range id; UNK maps to `None`.
    pub fn word_of(&self, id: u32) -> Result<Option<&str>, TokenizeError> {
        if !self.is_text(id) {
            return Err(TokenizeError::NotTextToken(id));
        }
        if id == self.unk_id() {
            return Ok(None);
        }
        Ok(Some(&self.words[(id - N_SPECIALS - 1) as usize]))
    }

    fn hash_parts(&self, include_units: bool) -> [u8; 32] {
        let mut parts: Vec<&[u8]> = vec![b"vocab-v1"];
        for name in SPECIAL_NAMES {
            parts.push(name.as_bytes());
        }
        parts.push(UNK_NAME.as_bytes());
        for w in &self.words {
            parts.push(w.as_bytes());
        }
        let kb;
        if include_units {
            kb = (self.unit_count as u64).to_le_bytes();
            parts.push(&kb);
        }
        stable_hash(&parts)
    }

    /// Stable content hash over the full token list and ranges; recorded in
    /// every checkpoint, shard, and benchmark file.
    pub fn content_hash(&self) -> String {
        hex32(&self.hash_parts(true))
    }

    /// Hash of the text-only prefix; what a text-only LM checkpoint records.
    pub fn text_prefix_hash(&self) -> String {
        hex32(&self.hash_parts(false))
    }

    pub fn save_manifest(&self, path: impl AsRef<Path>) -> Result<(), TokenizeError> {
        let m = VocabManifest {
            version: 1,
            text_vocab_size: self.text_vocab_size,
            unit_count: self.unit_count,
            content_hash: self.content_hash(),
            words: self.words.clone(),
        };
        let tmp = path.as_ref().with_extension("tmp");
        std::fs::write(&tmp, serde_json::to_string_pretty(&m)?)?;
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load_manifest(path: impl AsRef<Path>) -> Result<Self, TokenizeError> {
        let m: VocabManifest = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        let vocab = Self::build(m.text_vocab_size, m.unit_count, m.words)?;
        let computed = vocab.content_hash();
        if computed != m.content_hash {
            return Err(TokenizeError::HashMismatch {
                file: m.content_hash,
                computed,
            });
        }
        Ok(vocab)
    }
}

#[derive(Serialize, Deserialize)]
struct VocabManifest {
    version: u32,
    text_vocab_size: usize,
    unit_count: usize,
    content_hash: String,
    words: Vec<String>,
}

/// Speaker identity plus the seed of its unit codebook.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpeakerProfile {
    pub speaker: u32,
    pub codebook_seed: u64,
}

impl SpeakerProfile {
    /// Derive the profile for a speaker id under a master seed. Distinct
    /// speakers get distinct codebook seeds.
    pub fn for_speaker(master_seed: u64, speaker: u32) -> Self {
        Self {
            speaker,
            codebook_seed: stable_hash64(&[
                b"speaker-codebook",
                &master_seed.to_le_bytes(),
                &speaker.to_le_bytes(),
            ]),
        }
    }
}

/// Ordered unit-token ids, all inside the vocab's unit range.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UnitSequence(pub Vec<u32>);

/// Units a word renders to: max(2, ceil(chars / 2)). Depends only on the
/// word, never the speaker, so token counts stay speaker-invariant.
pub fn unit_len(word: &str) -> usize {
    word.chars().count().div_ceil(2).max(2)
}

/// Cached per-speaker codec; build once when encoding many words.
pub struct UnitCodec<'v> {
    vocab: &'v JointVocab,
    perm: Vec<u32>,
    inv_perm: Vec<u32>,
    min_word_units: usize,
    max_word_units: usize,
}

impl<'v> UnitCodec<'v> {
    pub fn new(vocab: &'v JointVocab, profile: &SpeakerProfile) -> Self {
        let k = vocab.unit_count;
        let mut perm: Vec<u32> = (0..k as u32).collect();
        let mut rng = derive_rng(profile.codebook_seed, "codebook-perm", &[]);
        // Fisher-Yates, explicit so the stream layout is pinned here.
        for i in (1..k).rev() {
            let j = rand::Rng::random_range(&mut rng, 0..=i);
            perm.swap(i, j);
        }
        let mut inv_perm = vec![0u32; k];
        for (d, p) in perm.iter().enumerate() {
            inv_perm[*p as usize] = d as u32;
        }
        let (mut lo, mut hi) = (usize::MAX, 2);
        for w in &vocab.words {
            let l = unit_len(w);
            lo = lo.min(l);
            hi = hi.max(l);
        }
        Self {
            vocab,
            perm,
            inv_perm,
            min_word_units: lo.min(hi),
            max_word_units: hi,
        }
    }

    pub fn encode(&self, word: &str) -> Result<UnitSequence, TokenizeError> {
        let id = self
            .vocab
            .word_id(word)
            .ok_or_else(|| TokenizeError::UnknownWord(word.to_string()))?;
        let mut index = (id - N_SPECIALS - 1) as u64;
        let len = unit_len(word);
        let k = self.vocab.unit_count as u64;
        let base = self.vocab.unit_range().start;
        let mut digits = vec![0u64; len];
        for d in digits.iter_mut().rev() {
            *d = index % k;
            index /= k;
        }
        debug_assert_eq!(index, 0, "lexicon index exceeds base-K capacity");
        Ok(UnitSequence(
            digits
                .into_iter()
                .map(|d| base + self.perm[d as usize])
                .collect(),
        ))
    }

    /// Exact inverse of [`Self::encode`] on its image; anything else is
    /// rejected as undecodable (the desk analog of untranscribable speech).
    pub fn decode(&self, units: &UnitSequence) -> Result<String, TokenizeError> {
        if units.0.is_empty() {
            return Err(TokenizeError::EmptyUnits);
        }
        let k = self.vocab.unit_count as u64;
        let base = self.vocab.unit_range().start;
        let mut index = 0u64;
        for u in &units.0 {
            if !self.vocab.is_unit(*u) {
                return Err(TokenizeError::NotUnitToken(*u));
            }
            let digit = self.inv_perm[(u - base) as usize] as u64;
            index = match index.checked_mul(k).and_then(|x| x.checked_add(digit)) {
                Some(x) => x,
                None => return Err(TokenizeError::UndecodableUnits),
            };
        }
        let word = match self.vocab.words.get(index as usize) {
            Some(w) => w,
            None => return Err(TokenizeError::UndecodableUnits),
        };
        if unit_len(word) != units.0.len() {
            return Err(TokenizeError::UndecodableUnits);
        }
        Ok(word.clone())
    }

    /// Segment a run of unit tokens into words (the oracle-ASR analog).
    ///
    /// Dynamic programming over codeword lengths, preferring the shortest
    /// codeword at each boundary. Stretches admitting no segmentation yield
    /// `None` entries; decoding resumes at the next position that works.
    pub fn segment_units(&self, run: &[u32]) -> Vec<Option<String>> {
        let mut out = Vec::new();
        let mut pos = 0;
        while pos < run.len() {
            let rest = &run[pos..];
            match self.try_segment(rest) {
                Some(words) => {
                    out.extend(words.into_iter().map(Some));
                    break;
                }
                None => {
                    // Peel off the longest decodable prefix, mark a gap, skip
                    // one unit, retry.
                    let m = self.longest_segmentable_prefix(rest);
                    if m > 0 {
                        out.extend(
                            self.try_segment(&rest[..m])
                                .expect("prefix verified segmentable")
                                .into_iter()
                                .map(Some),
                        );
                    }
                    out.push(None);
                    pos += m + 1;
                }
            }
        }
        out
    }

    fn backtracks(&self, run: &[u32]) -> Vec<Option<usize>> {
        let n = run.len();
        let mut back: Vec<Option<usize>> = vec![None; n + 1];
        back[0] = Some(0);
        for i in 1..=n {
            for l in self.min_word_units..=self.max_word_units.min(i) {
                if back[i - l].is_some() && self.decode_slice(&run[i - l..i]).is_some() {
                    back[i] = Some(l);
                    break;
                }
            }
        }
        back
    }

    fn try_segment(&self, run: &[u32]) -> Option<Vec<String>> {
        let back = self.backtracks(run);
        back[run.len()]?;
        let mut words = Vec::new();
        let mut i = run.len();
        while i > 0 {
            let l = back[i].expect("backtrack chain is complete");
            words.push(
                self.decode_slice(&run[i - l..i])
                    .expect("recorded codeword decodes"),
            );
            i -= l;
        }
        words.reverse();
        Some(words)
    }

    fn longest_segmentable_prefix(&self, run: &[u32]) -> usize {
        let back = self.backtracks(run);
        (0..=run.len()).rev().find(|i| back[*i].is_some()).unwrap_or(0)
    }

    fn decode_slice(&self, units: &[u32]) -> Option<String> {
        self.decode(&UnitSequence(units.to_vec())).ok()
    }
}

/// Transcribe a rendered token stream back to words.
///
/// Text tokens decode directly (`None` for UNK); maximal unit runs go through
/// [`UnitCodec::segment_units`]; specials and markers are dropped.
pub fn transcribe_tokens(
    tokens: &[u32],
    vocab: &JointVocab,
    codec: &UnitCodec,
) -> Vec<Option<String>> {
    let mut out = Vec::new();
    let mut run: Vec<u32> = Vec::new();
    for t in tokens {
        if vocab.is_unit(*t) {
            run.push(*t);
            continue;
        }
        if !run.is_empty() {
            out.extend(codec.segment_units(&run));
            run.clear();
        }
        if vocab.is_text(*t) {
            out.push(vocab.word_of(*t).expect("text id").map(str::to_string));
        }
    }
    if !run.is_empty() {
        out.extend(codec.segment_units(&run));
    }
    out
}

/// Encode known words to text ids; unknown words map to UNK.
pub fn encode_text<S: AsRef<str>>(words: &[S], vocab: &JointVocab) -> Vec<u32> {
    words
        .iter()
        .map(|w| vocab.word_id(w.as_ref()).unwrap_or_else(|| vocab.unk_id()))
        .collect()
}

/// Inverse of [`encode_text`] for known words; UNK renders as `<unk>`.
pub fn decode_text(ids: &[u32], vocab: &JointVocab) -> Result<Vec<String>, TokenizeError> {
    ids.iter()
        .map(|id| {
            Ok(vocab
                .word_of(*id)?
                .map(str::to_string)
                .unwrap_or_else(|| UNK_NAME.to_string()))
        })
        .collect()
}

/// One-shot unit encoding; builds the speaker codec per call. Prefer
/// [`UnitCodec`] in loops.
pub fn encode_units(
    word: &str,
    profile: &SpeakerProfile,
    vocab: &JointVocab,
) -> Result<UnitSequence, TokenizeError> {
    UnitCodec::new(vocab, profile).encode(word)
}

/// One-shot unit decoding; see [`UnitCodec::decode`].
pub fn decode_units(
    units: &UnitSequence,
    profile: &SpeakerProfile,
    vocab: &JointVocab,
) -> Result<String, TokenizeError> {
    UnitCodec::new(vocab, profile).decode(units)
}
