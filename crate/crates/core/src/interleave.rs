//! Modality-span assignment, rendering of modality-marked token sequences,
//! stream mixing, and packing into fixed-length training rows.
//!
//! Speech spans are placed by repeatedly drawing a length from a clamped
//! Poisson, truncating the final span so the realized speech-word count hits
//! the eta budget, and dropping each span at a start position chosen
//! uniformly among the placements that do not overlap earlier spans. Words
//! left over become text spans, and adjacent same-modality runs merge.

use rand::Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::AlignedUtterance;
use crate::tokenize::{
    JointVocab, SpeakerProfile, TokenizeError, UnitCodec, BOS, EOS, SPEECH_MARK, TEXT_MARK,
};
use crate::util::{derive_rng, stable_hash64};

#[derive(Debug, Error)]
pub enum InterleaveError {
    #[error("invalid interleave config: {0}")]
    InvalidConfig(String),
    #[error("tokenization failed: {0}")]
    Tokenize(#[from] TokenizeError),
    #[error("all input streams are empty")]
    AllStreamsEmpty,
    #[error("stream {0} has weight {1} but no sequences")]
    EmptyWeightedStream(usize, f64),
    #[error("weights must be non-negative and sum to 1, got {0:?}")]
    BadWeights([f64; 3]),
}

/// Span-sampling parameters: Poisson mean (in words) and target speech ratio.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct InterleaveConfig {
    pub lambda: f64,
    pub eta: f64,
    pub seed: u64,
}

impl InterleaveConfig {
    pub fn new(lambda: f64, eta: f64, seed: u64) -> Result<Self, InterleaveError> {
        if !(lambda > 0.0) {
            return Err(InterleaveError::InvalidConfig(format!(
                "lambda must be > 0, got {lambda}"
            )));
        }
        if !(0.0..=1.0).contains(&eta) {
            return Err(InterleaveError::InvalidConfig(format!(
                "eta must be in [0, 1], got {eta}"
            )));
        }
        Ok(Self { lambda, eta, seed })
    }

    pub fn with_seed(self, seed: u64) -> Self {
        Self { seed, ..self }
    }
}

impl Default for InterleaveConfig {
    fn default() -> Self {
        Self {
            lambda: 10.0,
            eta: 0.3,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Modality {
    Text,
    Speech,
}

/// Half-open word-index range rendered in one modality.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModalitySpan {
    pub modality: Modality,
    pub word_start: usize,
    pub word_end: usize,
}

/// Per-token class in a rendered sequence. BOS/EOS and the two modality
/// markers carry `Marker`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MaskClass {
    Text,
    Speech,
    Marker,
}

/// Modality-marked token stream with a parallel mask.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterleavedSequence {
    pub tokens: Vec<u32>,
    pub mask: Vec<MaskClass>,
}

impl InterleavedSequence {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Check marker discipline against a vocab: BOS/EOS framing, every
    /// modality marker immediately followed by a matching content token,
    /// no marker-to-marker adjacency, and mask classes consistent with id
    /// ranges.
    pub fn validate(&self, vocab: &JointVocab) -> Result<(), String> {
        if self.tokens.len() != self.mask.len() {
            return Err("tokens and mask lengths differ".into());
        }
        if self.tokens.first() != Some(&BOS) || self.tokens.last() != Some(&EOS) {
            return Err("sequence must be BOS/EOS-framed".into());
        }
        for (i, (t, m)) in self.tokens.iter().zip(&self.mask).enumerate() {
            let expected = if vocab.is_text(*t) {
                MaskClass::Text
            } else if vocab.is_unit(*t) {
                MaskClass::Speech
            } else if *t == BOS || *t == EOS || *t == TEXT_MARK || *t == SPEECH_MARK {
                MaskClass::Marker
            } else {
                return Err(format!("unexpected token {t} at {i}"));
            };
            if *m != expected {
                return Err(format!("mask {m:?} does not match token {t} at {i}"));
            }
            if *t == TEXT_MARK || *t == SPEECH_MARK {
                let want = if *t == TEXT_MARK {
                    MaskClass::Text
                } else {
                    MaskClass::Speech
                };
                match self.mask.get(i + 1) {
                    Some(next) if *next == want => {}
                    _ => return Err(format!("marker at {i} not followed by its modality")),
                }
            }
        }
        for i in 1..self.tokens.len() - 1 {
            let (a, b) = (self.mask[i], self.mask[i + 1]);
            let content = |m: MaskClass| m == MaskClass::Text || m == MaskClass::Speech;
            if content(a) && content(b) && a != b {
                return Err(format!("modality changed at {i} without a marker"));
            }
        }
        Ok(())
    }
}

/// Pre-truncation span-length draws and realized word counts, for the
/// interleaver statistics report.
#[derive(Debug, Clone, Default)]
pub struct SpanStats {
    pub raw_draws: Vec<u64>,
    pub speech_words: u64,
    pub total_words: u64,
}

impl SpanStats {
    pub fn merge(&mut self, other: &SpanStats) {
        self.raw_draws.extend_from_slice(&other.raw_draws);
        self.speech_words += other.speech_words;
        self.total_words += other.total_words;
    }

    pub fn realized_ratio(&self) -> f64 {
        if self.total_words == 0 {
            return 0.0;
        }
        self.speech_words as f64 / self.total_words as f64
    }

    pub fn mean_raw_draw(&self) -> f64 {
        if self.raw_draws.is_empty() {
            return 0.0;
        }
        self.raw_draws.iter().sum::<u64>() as f64 / self.raw_draws.len() as f64
    }
}

/// Assign modality spans to an utterance; pure given (cfg.seed, utterance id).
pub fn assign_spans(utt: &AlignedUtterance, cfg: &InterleaveConfig) -> Vec<ModalitySpan> {
    assign_spans_with_stats(utt, cfg, &mut SpanStats::default())
}

pub fn assign_spans_with_stats(
    utt: &AlignedUtterance,
    cfg: &InterleaveConfig,
    stats: &mut SpanStats,
) -> Vec<ModalitySpan> {
    let w = utt.words.len();
    stats.total_words += w as u64;
    let single = |m: Modality| {
        vec![ModalitySpan {
            modality: m,
            word_start: 0,
            word_end: w,
        }]
    };
    if w < 2 {
        let m = if cfg.eta >= 0.5 {
            stats.speech_words += w as u64;
            Modality::Speech
        } else {
            Modality::Text
        };
        return single(m);
    }
    let target = (cfg.eta * w as f64).round() as usize;
    if target == 0 {
        return single(Modality::Text);
    }
    if target >= w {
        stats.speech_words += w as u64;
        return single(Modality::Speech);
    }

    let mut rng = derive_rng(cfg.seed, "spans", &[stable_hash64(&[utt.id.as_bytes()])]);
    let poisson = Poisson::new(cfg.lambda).expect("lambda validated > 0");
    let mut marked = vec![false; w];
    let mut speech = 0usize;
    while speech < target {
        let raw = (poisson.sample(&mut rng) as u64).max(1);
        stats.raw_draws.push(raw);
        let mut len = (raw as usize).min(target - speech);
        // Spans never overlap, so a fragmented tail may force a shorter span
        // than drawn.
        let max_gap = match gap_lengths(&marked).into_iter().map(|(_, l)| l).max() {
            Some(g) => g,
            None => break,
        };
        len = len.min(max_gap);
        let starts: Vec<usize> = gap_lengths(&marked)
            .into_iter()
            .filter(|(_, l)| *l >= len)
            .flat_map(|(s, l)| s..=s + l - len)
            .collect();
        let at = starts[rng.random_range(0..starts.len())];
        for flag in marked.iter_mut().skip(at).take(len) {
            *flag = true;
        }
        speech += len;
    }
    stats.speech_words += speech as u64;

    // Group runs; adjacent same-modality words merge into one span.
    let mut spans = Vec::new();
    let mut start = 0usize;
    for i in 1..=w {
        if i == w || marked[i] != marked[start] {
            spans.push(ModalitySpan {
                modality: if marked[start] {
                    Modality::Speech
                } else {
                    Modality::Text
                },
                word_start: start,
                word_end: i,
            });
            start = i;
        }
    }
    spans
}

fn gap_lengths(marked: &[bool]) -> Vec<(usize, usize)> {
    let mut gaps = Vec::new();
    let mut start = None;
    for (i, m) in marked.iter().enumerate() {
        match (m, start) {
            (false, None) => start = Some(i),
            (true, Some(s)) => {
                gaps.push((s, i - s));
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        gaps.push((s, marked.len() - s));
    }
    gaps
}

/// Render an utterance under its span assignment: BOS, then per span a
/// marker followed by the segment's tokens, then EOS.
pub fn render(
    utt: &AlignedUtterance,
    spans: &[ModalitySpan],
    vocab: &JointVocab,
    profile: &SpeakerProfile,
) -> Result<InterleavedSequence, InterleaveError> {
    render_with_codec(utt, spans, vocab, &UnitCodec::new(vocab, profile))
}

pub fn render_with_codec(
    utt: &AlignedUtterance,
    spans: &[ModalitySpan],
    vocab: &JointVocab,
    codec: &UnitCodec,
) -> Result<InterleavedSequence, InterleaveError> {
    let mut tokens = vec![BOS];
    let mut mask = vec![MaskClass::Marker];
    for span in spans {
        match span.modality {
            Modality::Text => {
                tokens.push(TEXT_MARK);
                mask.push(MaskClass::Marker);
                for word in &utt.words[span.word_start..span.word_end] {
                    tokens.push(vocab.word_id(&word.text).unwrap_or_else(|| vocab.unk_id()));
                    mask.push(MaskClass::Text);
                }
            }
            Modality::Speech => {
                tokens.push(SPEECH_MARK);
                mask.push(MaskClass::Marker);
                for word in &utt.words[span.word_start..span.word_end] {
                    let units = codec.encode(&word.text)?;
                    mask.extend(std::iter::repeat_n(MaskClass::Speech, units.0.len()));
                    tokens.extend(units.0);
                }
            }
        }
    }
    tokens.push(EOS);
    mask.push(MaskClass::Marker);
    Ok(InterleavedSequence { tokens, mask })
}

/// Render the whole utterance as a single-modality sequence (the speech-only
/// and text-only training streams).
pub fn render_single(
    utt: &AlignedUtterance,
    modality: Modality,
    vocab: &JointVocab,
    codec: &UnitCodec,
) -> Result<InterleavedSequence, InterleaveError> {
    let span = ModalitySpan {
        modality,
        word_start: 0,
        word_end: utt.words.len(),
    };
    render_with_codec(utt, &[span], vocab, codec)
}

/// Draw (stream, index) pairs until the drawn token mass reaches
/// `target_tokens`.
///
/// Streams are sampled with probability proportional to weight divided by the
/// stream's mean sequence length, so the expected token mass per stream
/// matches the weights rather than the sequence counts.
pub fn mix_streams(
    speech_only: &[InterleavedSequence],
    text_only: &[InterleavedSequence],
    interleaved: &[InterleavedSequence],
    weights: [f64; 3],
    target_tokens: u64,
    seed: u64,
) -> Result<Vec<(usize, usize)>, InterleaveError> {
    let pools = [speech_only, text_only, interleaved];
    if weights.iter().any(|w| *w < 0.0) || (weights.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(InterleaveError::BadWeights(weights));
    }
    if pools.iter().all(|p| p.is_empty()) {
        return Err(InterleaveError::AllStreamsEmpty);
    }
    let mut probs = [0.0f64; 3];
    for (j, pool) in pools.iter().enumerate() {
        if weights[j] == 0.0 {
            continue;
        }
        if pool.is_empty() {
            return Err(InterleaveError::EmptyWeightedStream(j, weights[j]));
        }
        let mean_len = pool.iter().map(|s| s.len() as f64).sum::<f64>() / pool.len() as f64;
        probs[j] = weights[j] / mean_len;
    }
    let total: f64 = probs.iter().sum();
    for p in &mut probs {
        *p /= total;
    }

    let mut rng = derive_rng(seed, "mix", &[]);
    let mut draws = Vec::new();
    let mut mass = 0u64;
    while mass < target_tokens {
        let r: f64 = rng.random();
        let stream = if r < probs[0] {
            0
        } else if r < probs[0] + probs[1] {
            1
        } else {
            2
        };
        let idx = rng.random_range(0..pools[stream].len());
        mass += pools[stream][idx].len() as u64;
        draws.push((stream, idx));
    }
    Ok(draws)
}

/// One fixed-length training row; `loss_mask` is false exactly on PAD.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PackedRow {
    pub tokens: Vec<u32>,
    pub loss_mask: Vec<bool>,
}

impl PackedRow {
    fn new(context_len: usize) -> Self {
        Self {
            tokens: Vec::with_capacity(context_len),
            loss_mask: Vec::with_capacity(context_len),
        }
    }

    fn used(&self) -> usize {
        self.tokens.len()
    }

    fn push_seq(&mut self, seq: &[u32]) {
        self.tokens.extend_from_slice(seq);
        self.loss_mask.extend(std::iter::repeat_n(true, seq.len()));
    }

    fn finish(mut self, context_len: usize) -> Self {
        let pad = context_len - self.tokens.len();
        self.tokens
            .extend(std::iter::repeat_n(crate::tokenize::PAD, pad));
        self.loss_mask.extend(std::iter::repeat_n(false, pad));
        self
    }

    pub fn non_pad(&self) -> usize {
        self.loss_mask.iter().filter(|m| **m).count()
    }
}

/// Nothing shorter than this fits a renderable sequence, so rows with less
/// remaining space are finalized early to keep the open-row scan short.
const MIN_FIT: usize = 4;

/// Greedy first-fit packing of whole sequences into rows of exactly
/// `context_len`; sequences longer than the context are split at context
/// boundaries. Total non-PAD tokens equal total input tokens.
pub fn pack(sequences: impl IntoIterator<Item = Vec<u32>>, context_len: usize) -> Vec<PackedRow> {
    assert!(context_len >= 8, "context_len must be >= 8");
    let mut done: Vec<PackedRow> = Vec::new();
    let mut open: Vec<PackedRow> = Vec::new();
    for seq in sequences {
        for chunk in seq.chunks(context_len) {
            let fit = open
                .iter_mut()
                .position(|row| context_len - row.used() >= chunk.len());
            let row = match fit {
                Some(i) => &mut open[i],
                None => {
                    open.push(PackedRow::new(context_len));
                    open.last_mut().expect("just pushed")
                }
            };
            row.push_seq(chunk);
            let full = open.iter().position(|r| context_len - r.used() < MIN_FIT);
            if let Some(i) = full {
                let row = open.swap_remove(i);
                done.push(row.finish(context_len));
            }
        }
    }
    done.extend(open.into_iter().map(|r| r.finish(context_len)));
    done
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{generate_corpus, lexicon, CorpusSpec, Profile, Word};
    use crate::tokenize::transcribe_tokens;

    fn test_vocab() -> JointVocab {
        JointVocab::for_lexicon(lexicon(300), 100).unwrap()
    }

    fn utt_from(words: &[&str]) -> AlignedUtterance {
        let mut t = 0.0;
        let ws = words
            .iter()
            .map(|w| {
                let word = Word::new(*w, t, t + 0.25).unwrap();
                t += 0.25;
                word
            })
            .collect();
        AlignedUtterance::new("test-utt", 0, ws).unwrap()
    }

    fn corpus_utts(n: usize, seed: u64) -> Vec<AlignedUtterance> {
        let spec = CorpusSpec::new(Profile::Story, n, 50, 300, 2, seed).unwrap();
        generate_corpus(&spec).collect()
    }

    #[test]
    fn eta_zero_single_text_span() {
        let cfg = InterleaveConfig::new(10.0, 0.0, 1).unwrap();
        let utt = &corpus_utts(1, 5)[0];
        let spans = assign_spans(utt, &cfg);
        assert_eq!(
            spans,
            vec![ModalitySpan {
                modality: Modality::Text,
                word_start: 0,
                word_end: utt.words.len()
            }]
        );
    }

    #[test]
    fn eta_one_single_speech_span() {
        let cfg = InterleaveConfig::new(10.0, 1.0, 1).unwrap();
        let utt = &corpus_utts(1, 5)[0];
        let spans = assign_spans(utt, &cfg);
        assert_eq!(spans.len(), 1);
        assert_eq!(spans[0].modality, Modality::Speech);
        assert_eq!(
            (spans[0].word_start, spans[0].word_end),
            (0, utt.words.len())
        );
    }

    #[test]
    fn single_word_utterance_majority_modality() {
        let utt = utt_from(&["solo"]);
        let text_cfg = InterleaveConfig::new(10.0, 0.4, 1).unwrap();
        assert_eq!(assign_spans(&utt, &text_cfg)[0].modality, Modality::Text);
        let speech_cfg = InterleaveConfig::new(10.0, 0.5, 1).unwrap();
        assert_eq!(
            assign_spans(&utt, &speech_cfg)[0].modality,
            Modality::Speech
        );
    }

    #[test]
    fn spans_partition_words_exactly() {
        let cfg = InterleaveConfig::default().with_seed(3);
        for utt in corpus_utts(100, 7) {
            let spans = assign_spans(&utt, &cfg);
            assert_eq!(spans[0].word_start, 0);
            assert_eq!(spans.last().unwrap().word_end, utt.words.len());
            for pair in spans.windows(2) {
                assert_eq!(pair[0].word_end, pair[1].word_start);
                assert_ne!(
                    pair[0].modality, pair[1].modality,
                    "unmerged adjacent spans"
                );
            }
            for s in &spans {
                assert!(s.word_start < s.word_end);
            }
        }
    }

    #[test]
    fn span_assignment_deterministic_per_seed_and_id() {
        let cfg = InterleaveConfig::default().with_seed(11);
        let utt = &corpus_utts(1, 9)[0];
        assert_eq!(assign_spans(utt, &cfg), assign_spans(utt, &cfg));
        let other = cfg.with_seed(12);
        let corpus = corpus_utts(20, 9);
        assert!(
            corpus
                .iter()
                .any(|u| assign_spans(u, &cfg) != assign_spans(u, &other)),
            "new seed should change some span assignment"
        );
        // Word multiset is untouched either way.
        for u in &corpus {
            let total: usize = assign_spans(u, &other)
                .iter()
                .map(|s| s.word_end - s.word_start)
                .sum();
            assert_eq!(total, u.words.len());
        }
    }

    #[test]
    fn realized_ratio_and_draw_mean_match_contract() {
        let cfg = InterleaveConfig::default().with_seed(42);
        let mut stats = SpanStats::default();
        for utt in corpus_utts(10_000, 13) {
            assign_spans_with_stats(&utt, &cfg, &mut stats);
        }
        let ratio = stats.realized_ratio();
        assert!(
            (0.29..=0.33).contains(&ratio),
            "realized speech-word ratio {ratio}"
        );
        // E[max(1, Poisson(10))] = 10 + e^-10.
        let expect = 10.0 + (-10.0f64).exp();
        let mean = stats.mean_raw_draw();
        assert!(
            (mean - expect).abs() <= 0.2,
            "raw draw mean {mean} vs {expect}"
        );
    }

    #[test]
    fn render_matches_marker_pattern() {
        let words = ["the", "cat", "sat", "on", "mats"];
        let vocab =
            JointVocab::for_lexicon(words.iter().map(|s| s.to_string()).collect(), 50).unwrap();
        let utt = utt_from(&words);
        let profile = SpeakerProfile::for_speaker(1, 0);
        let spans = [
            ModalitySpan {
                modality: Modality::Text,
                word_start: 0,
                word_end: 2,
            },
            ModalitySpan {
                modality: Modality::Speech,
                word_start: 2,
                word_end: 3,
            },
            ModalitySpan {
                modality: Modality::Text,
                word_start: 3,
                word_end: 5,
            },
        ];
        let seq = render(&utt, &spans, &vocab, &profile).unwrap();
        seq.validate(&vocab).unwrap();
        let units_sat = crate::tokenize::encode_units("sat", &profile, &vocab).unwrap();
        let mut expect = vec![BOS, TEXT_MARK];
        expect.extend(crate::tokenize::encode_text(&["the", "cat"], &vocab));
        expect.push(SPEECH_MARK);
        expect.extend(units_sat.0);
        expect.push(TEXT_MARK);
        expect.extend(crate::tokenize::encode_text(&["on", "mats"], &vocab));
        expect.push(EOS);
        assert_eq!(seq.tokens, expect);
    }

    #[test]
    fn single_text_span_has_one_text_mark() {
        let vocab = test_vocab();
        let utt = &corpus_utts(1, 21)[0];
        let codec = UnitCodec::new(&vocab, &SpeakerProfile::for_speaker(1, 0));
        let seq = render_single(utt, Modality::Text, &vocab, &codec).unwrap();
        assert_eq!(seq.tokens.iter().filter(|t| **t == TEXT_MARK).count(), 1);
        assert_eq!(seq.tokens.iter().filter(|t| **t == SPEECH_MARK).count(), 0);
    }

    #[test]
    fn rendered_sequences_transcribe_back_to_words() {
        let vocab = test_vocab();
        let cfg = InterleaveConfig::default().with_seed(17);
        let profile = SpeakerProfile::for_speaker(2, 1);
        let codec = UnitCodec::new(&vocab, &profile);
        for utt in corpus_utts(60, 23) {
            let spans = assign_spans(&utt, &cfg);
            let seq = render_with_codec(&utt, &spans, &vocab, &codec).unwrap();
            seq.validate(&vocab).unwrap();
            let words: Vec<String> = transcribe_tokens(&seq.tokens, &vocab, &codec)
                .into_iter()
                .map(|w| w.expect("round trip cannot hit UNK"))
                .collect();
            let original: Vec<String> = utt.words.iter().map(|w| w.text.clone()).collect();
            assert_eq!(words, original, "utterance {}", utt.id);
        }
    }

    #[test]
    fn mix_all_weight_on_speech_draws_only_speech() {
        let vocab = test_vocab();
        let codec = UnitCodec::new(&vocab, &SpeakerProfile::for_speaker(1, 0));
        let utts = corpus_utts(30, 31);
        let speech: Vec<_> = utts
            .iter()
            .map(|u| render_single(u, Modality::Speech, &vocab, &codec).unwrap())
            .collect();
        let text: Vec<_> = utts
            .iter()
            .map(|u| render_single(u, Modality::Text, &vocab, &codec).unwrap())
            .collect();
        let draws = mix_streams(&speech, &text, &[], [1.0, 0.0, 0.0], 5_000, 3).unwrap();
        assert!(!draws.is_empty());
        assert!(draws.iter().all(|(s, _)| *s == 0));
    }

    #[test]
    fn mix_rejects_empty_and_bad_weights() {
        assert!(matches!(
            mix_streams(&[], &[], &[], [1.0, 0.0, 0.0], 100, 1),
            Err(InterleaveError::AllStreamsEmpty)
        ));
        let vocab = test_vocab();
        let codec = UnitCodec::new(&vocab, &SpeakerProfile::for_speaker(1, 0));
        let utts = corpus_utts(2, 31);
        let speech: Vec<_> = utts
            .iter()
            .map(|u| render_single(u, Modality::Speech, &vocab, &codec).unwrap())
            .collect();
        assert!(matches!(
            mix_streams(&speech, &[], &[], [0.5, 0.5, 0.0], 100, 1),
            Err(InterleaveError::EmptyWeightedStream(1, _))
        ));
        assert!(matches!(
            mix_streams(&speech, &[], &[], [0.9, 0.0, 0.0], 100, 1),
            Err(InterleaveError::BadWeights(_))
        ));
    }

    #[test]
    fn mix_equal_weights_balance_token_mass() {
        let vocab = test_vocab();
        let profile = SpeakerProfile::for_speaker(1, 0);
        let codec = UnitCodec::new(&vocab, &profile);
        let cfg = InterleaveConfig::default().with_seed(5);
        let utts = corpus_utts(200, 37);
        let speech: Vec<_> = utts
            .iter()
            .map(|u| render_single(u, Modality::Speech, &vocab, &codec).unwrap())
            .collect();
        let text: Vec<_> = utts
            .iter()
            .map(|u| render_single(u, Modality::Text, &vocab, &codec).unwrap())
            .collect();
        let inter: Vec<_> = utts
            .iter()
            .map(|u| render_with_codec(u, &assign_spans(u, &cfg), &vocab, &codec).unwrap())
            .collect();
        let pools = [&speech, &text, &inter];
        let w = 1.0 / 3.0;
        let target = 2_000_000u64;
        let draws = mix_streams(&speech, &text, &inter, [w, w, w], target, 11).unwrap();
        let mut mass = [0u64; 3];
        for (s, i) in &draws {
            mass[*s] += pools[*s][*i].len() as u64;
        }
        let total: u64 = mass.iter().sum();
        for m in mass {
            let share = m as f64 / total as f64;
            assert!(
                (share - w).abs() <= 0.02,
                "stream share {share} vs weight {w}"
            );
        }
    }

    #[test]
    fn pack_two_sequences_into_one_row() {
        let rows = pack(vec![vec![7u32; 100], vec![8u32; 150]], 256);
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].tokens.len(), 256);
        assert_eq!(rows[0].non_pad(), 250);
        assert_eq!(rows[0].loss_mask.iter().filter(|m| !**m).count(), 6);
    }

    #[test]
    fn pack_splits_overlong_sequence() {
        let rows = pack(vec![vec![9u32; 300]], 256);
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0].non_pad(), 256);
        assert_eq!(rows[1].non_pad(), 44);
        assert_eq!(rows[1].tokens[44..], vec![crate::tokenize::PAD; 212][..]);
    }

    #[test]
    fn pack_conserves_tokens() {
        let mut rng = derive_rng(8, "packtest", &[]);
        let seqs: Vec<Vec<u32>> = (0..10_000)
            .map(|_| {
                let n = rng.random_range(1..90usize);
                (0..n).map(|_| rng.random_range(1..100u32)).collect()
            })
            .collect();
        let total_in: usize = seqs.iter().map(Vec::len).sum();
        let rows = pack(seqs, 128);
        let total_out: usize = rows.iter().map(PackedRow::non_pad).sum();
        assert_eq!(total_in, total_out);
        assert!(rows.iter().all(|r| r.tokens.len() == 128));
        // Mask marks exactly the non-PAD positions.
        for r in &rows {
            for (t, m) in r.tokens.iter().zip(&r.loss_mask) {
                assert_eq!(*m, *t != crate::tokenize::PAD);
            }
        }
    }
}
