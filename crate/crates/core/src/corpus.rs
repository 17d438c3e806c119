//! Synthetic time-aligned dual-modality corpora plus ingestion of externally
//! produced aligned transcripts.
//!
//! Two generator profiles are provided. `Story` samples from an order-2
//! word-transition model restricted to per-topic sub-vocabularies, with a
//! small rate of recurring per-story entities, so a toy LM has real structure
//! to learn. `Diverse` samples near-uniform word sequences with a mild bigram
//! bias, approximating broad-domain data. Word durations are a fixed function
//! of (word, speaker), which makes timestamps reproducible and lets callers
//! convert an audio-seconds budget into a token count.

use std::collections::BTreeMap;
use std::io::{BufRead, BufWriter, Write};
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::util::{derive_rng, keyed_uniform, stable_hash64};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("invalid corpus spec: {0}")]
    InvalidSpec(String),
    #[error("invalid word: {0}")]
    InvalidWord(String),
    #[error("invalid utterance {id}: {reason}")]
    InvalidUtterance { id: String, reason: String },
    #[error("corpus is empty")]
    Empty,
    #[error("val_fraction must be in (0, 1), got {0}")]
    BadFraction(f64),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// One word with its time span inside the utterance, in seconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Word {
    pub text: String,
    pub start: f64,
    pub end: f64,
}

impl Word {
    pub fn new(text: impl Into<String>, start: f64, end: f64) -> Result<Self, CorpusError> {
        let text = text.into();
        if text.is_empty() {
            return Err(CorpusError::InvalidWord("empty text".into()));
        }
        if text.chars().any(char::is_whitespace) {
            return Err(CorpusError::InvalidWord(format!("whitespace in {text:?}")));
        }
        if !(start >= 0.0) || !(end > start) {
            return Err(CorpusError::InvalidWord(format!(
                "bad span [{start}, {end}] for {text:?}"
            )));
        }
        Ok(Self { text, start, end })
    }
}

/// A speaker-attributed word sequence with monotone, non-overlapping spans.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignedUtterance {
    pub id: String,
    pub speaker: u32,
    pub words: Vec<Word>,
}

impl AlignedUtterance {
    pub fn new(id: impl Into<String>, speaker: u32, words: Vec<Word>) -> Result<Self, CorpusError> {
        let id = id.into();
        if words.is_empty() {
            return Err(CorpusError::InvalidUtterance {
                id,
                reason: "no words".into(),
            });
        }
        for pair in words.windows(2) {
            if pair[0].end > pair[1].start {
                return Err(CorpusError::InvalidUtterance {
                    id,
                    reason: format!(
                        "overlapping spans: {:?} ends at {} after {:?} starts at {}",
                        pair[0].text, pair[0].end, pair[1].text, pair[1].start
                    ),
                });
            }
        }
        Ok(Self { id, speaker, words })
    }

    pub fn word_texts(&self) -> Vec<&str> {
        self.words.iter().map(|w| w.text.as_str()).collect()
    }

    /// Topic cluster assigned by the story generator, parsed from the id.
    pub fn topic(&self) -> Option<u32> {
        self.id
            .rsplit('-')
            .next()
            .and_then(|seg| seg.strip_prefix('t'))
            .and_then(|n| n.parse().ok())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Profile {
    Story,
    Diverse,
}

/// Validated recipe for one synthetic corpus.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CorpusSpec {
    pub profile: Profile,
    pub n_utterances: usize,
    pub mean_words_per_utterance: usize,
    pub text_vocab_size: usize,
    pub n_speakers: usize,
    pub seed: u64,
}

impl CorpusSpec {
    pub fn new(
        profile: Profile,
        n_utterances: usize,
        mean_words_per_utterance: usize,
        text_vocab_size: usize,
        n_speakers: usize,
        seed: u64,
    ) -> Result<Self, CorpusError> {
        if n_utterances < 1 || mean_words_per_utterance < 1 || n_speakers < 1 {
            return Err(CorpusError::InvalidSpec("all counts must be >= 1".into()));
        }
        if text_vocab_size < 32 {
            return Err(CorpusError::InvalidSpec(format!(
                "text_vocab_size must be >= 32, got {text_vocab_size}"
            )));
        }
        if text_vocab_size > MAX_LEXICON {
            return Err(CorpusError::InvalidSpec(format!(
                "text_vocab_size must be <= {MAX_LEXICON}"
            )));
        }
        Ok(Self {
            profile,
            n_utterances,
            mean_words_per_utterance,
            text_vocab_size,
            n_speakers,
            seed,
        })
    }
}

/// Number of topic clusters used by the story generator.
pub const N_TOPICS: u32 = 8;

const SYLLABLES: [&str; 32] = [
    "ba", "do", "ki", "lu", "me", "no", "pa", "re", "si", "tu", "va", "wo", "ze", "fi", "ga", "hu",
    "ja", "ko", "la", "mi", "ne", "po", "ra", "su", "ta", "vi", "wa", "yo", "zu", "be", "ce", "du",
];

/// Largest lexicon the 4-syllable enumeration can address.
pub const MAX_LEXICON: usize = 1 << 20;

/// Deterministic closed lexicon of `size` distinct pseudo-words.
///
/// Word `i` is its index written in base-32 syllables, zero-padded to 4, 5,
/// or 6 syllables (8/10/12 chars) chosen by hash. Lengths are skewed so the
/// mean is near 10 chars, keeping speech-unit sequences several times longer
/// than their one-token text rendering.
pub fn lexicon(size: usize) -> Vec<String> {
    assert!(size <= MAX_LEXICON, "lexicon size over enumeration capacity");
    (0..size).map(lexicon_word).collect()
}

fn lexicon_word(index: usize) -> String {
    let r = stable_hash64(&[b"wlen", &(index as u64).to_le_bytes()]) % 100;
    let n_syllables = if r < 30 {
        4
    } else if r < 75 {
        5
    } else {
        6
    };
    let mut rem = index;
    let mut syls = [0usize; 6];
    for s in syls.iter_mut().take(n_syllables) {
        *s = rem % 32;
        rem /= 32;
    }
    let mut w = String::with_capacity(2 * n_syllables);
    for s in syls.iter().take(n_syllables).rev() {
        w.push_str(SYLLABLES[*s]);
    }
    w
}

/// Seconds per timestamp tick. Durations and timestamps live on this dyadic
/// grid so cumulative sums and `end - start` are exact in f64 and the
/// per-(word, speaker) duration survives any number of additions.
pub const TICK: f64 = 1.0 / 1024.0;

fn duration_ticks(word: &str, speaker: u32) -> u64 {
    // [154, 614] ticks = [0.1504, 0.5996] s.
    let u = keyed_uniform(0.0, 1.0, &[b"dur", word.as_bytes(), &speaker.to_le_bytes()]);
    154 + (u * 461.0) as u64
}

/// Duration in seconds for a (word, speaker) pair; constant across occurrences.
pub fn word_duration(word: &str, speaker: u32) -> f64 {
    duration_ticks(word, speaker) as f64 * TICK
}

/// Index ranges partitioning the lexicon into entities, shared words, and
/// per-topic pools. Fixed given the lexicon size; independent of the seed so
/// separately generated corpora share one language.
struct LexiconLayout {
    n_entities: usize,
    n_shared: usize,
    topic_pool: usize,
}

impl LexiconLayout {
    fn new(size: usize) -> Self {
        let n_entities = (size / 20).max(8);
        let n_shared = size / 5;
        let topic_pool = (size - n_entities - n_shared) / N_TOPICS as usize;
        Self {
            n_entities,
            n_shared,
            topic_pool,
        }
    }

    fn entity(&self, k: usize) -> usize {
        k % self.n_entities
    }

    fn shared(&self, k: usize) -> usize {
        self.n_entities + k % self.n_shared
    }

    fn topic_word(&self, topic: u32, k: usize) -> usize {
        self.n_entities + self.n_shared + topic as usize * self.topic_pool + k % self.topic_pool
    }
}

/// Generate the corpus described by `spec`, lazily and deterministically.
///
/// Each utterance derives its RNG stream from (seed, index), so shards of the
/// index range can be produced independently and in parallel.
pub fn generate_corpus(spec: &CorpusSpec) -> impl Iterator<Item = AlignedUtterance> + '_ {
    let lex = lexicon(spec.text_vocab_size);
    let layout = LexiconLayout::new(spec.text_vocab_size);
    (0..spec.n_utterances).map(move |i| generate_utterance(spec, &lex, &layout, i))
}

fn generate_utterance(
    spec: &CorpusSpec,
    lex: &[String],
    layout: &LexiconLayout,
    index: usize,
) -> AlignedUtterance {
    let mut rng = derive_rng(spec.seed, "utt", &[index as u64]);
    let speaker = rng.random_range(0..spec.n_speakers) as u32;
    let poisson = Poisson::new(spec.mean_words_per_utterance as f64).expect("mean >= 1");
    let n_words = (poisson.sample(&mut rng) as usize).max(4);

    let word_indices = match spec.profile {
        Profile::Story => {
            let topic = rng.random_range(0..N_TOPICS);
            story_words(&mut rng, layout, topic, n_words)
        }
        Profile::Diverse => diverse_words(&mut rng, lex.len(), n_words),
    };

    let mut words = Vec::with_capacity(word_indices.len());
    let mut ticks = 0u64;
    for wi in &word_indices {
        let text = lex[*wi].clone();
        let dur = duration_ticks(&text, speaker);
        words.push(Word {
            start: ticks as f64 * TICK,
            end: (ticks + dur) as f64 * TICK,
            text,
        });
        ticks += dur;
    }

    let id = match spec.profile {
        Profile::Story => {
            let topic = words_topic_tag(&word_indices, layout);
            format!("u{index:06}-s{speaker}-t{topic}")
        }
        Profile::Diverse => format!("u{index:06}-s{speaker}"),
    };
    AlignedUtterance::new(id, speaker, words).expect("generator emits valid utterances")
}

/// Recover the topic from the first topic-pool word (the opener always is one).
fn words_topic_tag(indices: &[usize], layout: &LexiconLayout) -> u32 {
    let base = layout.n_entities + layout.n_shared;
    indices
        .iter()
        .find(|&&i| i >= base)
        .map(|&i| ((i - base) / layout.topic_pool) as u32)
        .unwrap_or(0)
}

/// Order-2 transition sampler over the topic's sub-vocabulary.
///
/// Candidate slots are keyed by hashing the preceding one or two words, so
/// the conditional distributions are fixed properties of the language, not of
/// the corpus seed. Roughly 7.5% of draws emit one of the story's recurring
/// entities.
fn story_words<R: Rng>(
    rng: &mut R,
    layout: &LexiconLayout,
    topic: u32,
    n_words: usize,
) -> Vec<usize> {
    const SLOT_WEIGHTS: [u64; 4] = [8, 4, 2, 1];
    const WEIGHT_TOTAL: u64 = 15;

    let ent_a = layout.entity(rng.random_range(0..layout.n_entities));
    let ent_b = layout.entity(rng.random_range(0..layout.n_entities));
    let mut out = Vec::with_capacity(n_words);
    out.push(layout.topic_word(topic, rng.random_range(0..layout.topic_pool)));
    if n_words > 1 {
        out.push(layout.topic_word(topic, rng.random_range(0..layout.topic_pool)));
    }
    while out.len() < n_words {
        let w1 = out[out.len() - 1] as u64;
        let w2 = out[out.len() - 2] as u64;
        let next = if rng.random::<f64>() < 0.075 {
            if rng.random::<bool>() {
                ent_a
            } else {
                ent_b
            }
        } else {
            let mut pick = rng.random_range(0..WEIGHT_TOTAL);
            let mut slot = 0;
            for (j, w) in SLOT_WEIGHTS.iter().enumerate() {
                if pick < *w {
                    slot = j;
                    break;
                }
                pick -= w;
            }
            let tb = (topic as u64).to_le_bytes();
            let jb = (slot as u64).to_le_bytes();
            match slot {
                // Slots 0-1 condition on the previous word only, 2 on the
                // bigram, 3 draws from the shared pool.
                0 | 1 => layout.topic_word(
                    topic,
                    stable_hash64(&[b"tr1", &tb, &w1.to_le_bytes(), &jb]) as usize,
                ),
                2 => layout.topic_word(
                    topic,
                    stable_hash64(&[b"tr2", &tb, &w2.to_le_bytes(), &w1.to_le_bytes()]) as usize,
                ),
                _ => layout.shared(stable_hash64(&[b"trs", &w1.to_le_bytes()]) as usize),
            }
        };
        out.push(next);
    }
    out
}

fn diverse_words<R: Rng>(rng: &mut R, lex_size: usize, n_words: usize) -> Vec<usize> {
    let mut out = Vec::with_capacity(n_words);
    out.push(rng.random_range(0..lex_size));
    while out.len() < n_words {
        let w1 = out[out.len() - 1] as u64;
        let next = if rng.random::<f64>() < 0.15 {
            let slot = rng.random_range(0..4u64);
            stable_hash64(&[b"bg", &w1.to_le_bytes(), &slot.to_le_bytes()]) as usize % lex_size
        } else {
            rng.random_range(0..lex_size)
        };
        out.push(next);
    }
    out
}

/// One rejected line from [`ingest_aligned`], with its 1-based line number.
#[derive(Debug, Error)]
#[error("line {line}: {reason}")]
pub struct IngestRecordError {
    pub line: usize,
    pub reason: String,
}

/// Stream utterances from a line-delimited record file.
///
/// Each line holds one record `{id, speaker, words:[{text,start,end}]}`.
/// Malformed or invariant-violating lines are yielded as errors carrying the
/// line number; the stream continues past them.
pub fn ingest_aligned(
    path: impl AsRef<Path>,
) -> Result<impl Iterator<Item = Result<AlignedUtterance, IngestRecordError>>, CorpusError> {
    let file = std::fs::File::open(path)?;
    let reader = std::io::BufReader::new(file);
    Ok(reader.lines().enumerate().filter_map(|(i, line)| {
        let line_no = i + 1;
        let line = match line {
            Ok(l) => l,
            Err(e) => {
                return Some(Err(IngestRecordError {
                    line: line_no,
                    reason: format!("read failed: {e}"),
                }))
            }
        };
        if line.trim().is_empty() {
            return None;
        }
        Some(parse_record(&line, line_no))
    }))
}

fn parse_record(line: &str, line_no: usize) -> Result<AlignedUtterance, IngestRecordError> {
    #[derive(Deserialize)]
    struct RawWord {
        text: String,
        start: f64,
        end: f64,
    }
    #[derive(Deserialize)]
    struct RawRecord {
        id: String,
        speaker: u32,
        words: Vec<RawWord>,
    }
    let raw: RawRecord = serde_json::from_str(line).map_err(|e| IngestRecordError {
        line: line_no,
        reason: format!("parse error: {e}"),
    })?;
    let mut words = Vec::with_capacity(raw.words.len());
    for rw in raw.words {
        words.push(Word::new(rw.text, rw.start, rw.end).map_err(|e| IngestRecordError {
            line: line_no,
            reason: e.to_string(),
        })?);
    }
    AlignedUtterance::new(raw.id, raw.speaker, words).map_err(|e| IngestRecordError {
        line: line_no,
        reason: e.to_string(),
    })
}

/// Write utterances as line-delimited records; inverse of [`ingest_aligned`].
pub fn write_aligned<'a>(
    path: impl AsRef<Path>,
    utterances: impl Iterator<Item = &'a AlignedUtterance>,
) -> Result<usize, CorpusError> {
    let file = std::fs::File::create(path)?;
    let mut w = BufWriter::new(file);
    let mut n = 0;
    for utt in utterances {
        serde_json::to_writer(&mut w, utt).map_err(std::io::Error::other)?;
        w.write_all(b"\n")?;
        n += 1;
    }
    w.flush()?;
    Ok(n)
}

/// Split a corpus into (train, val) by ranking SHA-256 id hashes.
///
/// The val set is the `round(n * val_fraction)` utterances with the smallest
/// hashes (clamped so both sides stay non-empty when possible), which makes
/// membership independent of input order.
pub fn split(
    utterances: Vec<AlignedUtterance>,
    val_fraction: f64,
) -> Result<(Vec<AlignedUtterance>, Vec<AlignedUtterance>), CorpusError> {
    if utterances.is_empty() {
        return Err(CorpusError::Empty);
    }
    if !(val_fraction > 0.0 && val_fraction < 1.0) {
        return Err(CorpusError::BadFraction(val_fraction));
    }
    let n = utterances.len();
    let k = ((n as f64 * val_fraction).round() as usize).clamp(usize::from(n > 1), n - 1);
    let mut keyed: Vec<(u64, String)> = utterances
        .iter()
        .map(|u| (stable_hash64(&[b"split", u.id.as_bytes()]), u.id.clone()))
        .collect();
    keyed.sort();
    let val_ids: std::collections::BTreeSet<&str> =
        keyed.iter().take(k).map(|(_, id)| id.as_str()).collect();
    let (val, train): (Vec<_>, Vec<_>) = utterances
        .into_iter()
        .partition(|u| val_ids.contains(u.id.as_str()));
    Ok((train, val))
}

/// Aggregate counts for the corpus statistics report.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CorpusStats {
    pub utterances: usize,
    pub words: usize,
    pub total_seconds: f64,
    pub speakers: BTreeMap<u32, usize>,
    /// Word-duration histogram over [0.15, 0.6) in 9 bins of 0.05 s.
    pub duration_bins: Vec<usize>,
}

impl CorpusStats {
    pub fn collect<'a>(utterances: impl Iterator<Item = &'a AlignedUtterance>) -> Self {
        let mut stats = CorpusStats {
            utterances: 0,
            words: 0,
            total_seconds: 0.0,
            speakers: BTreeMap::new(),
            duration_bins: vec![0; 9],
        };
        for u in utterances {
            stats.utterances += 1;
            stats.words += u.words.len();
            *stats.speakers.entry(u.speaker).or_insert(0) += 1;
            for w in &u.words {
                let d = w.end - w.start;
                stats.total_seconds += d;
                let bin = (((d - 0.15) / 0.05).floor() as usize).min(8);
                stats.duration_bins[bin] += 1;
            }
        }
        stats
    }

    pub fn render_text(&self) -> String {
        let mut s = String::new();
        s.push_str(&format!("utterances: {}\n", self.utterances));
        s.push_str(&format!("words: {}\n", self.words));
        s.push_str(&format!("total_seconds: {:.3}\n", self.total_seconds));
        s.push_str("speakers:\n");
        for (sp, n) in &self.speakers {
            s.push_str(&format!("  {sp}: {n}\n"));
        }
        s.push_str("duration_histogram (0.15s..0.60s, 0.05s bins):\n");
        for (i, n) in self.duration_bins.iter().enumerate() {
            let lo = 0.15 + 0.05 * i as f64;
            s.push_str(&format!("  [{:.2},{:.2}): {}\n", lo, lo + 0.05, n));
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_spec(profile: Profile, seed: u64) -> CorpusSpec {
        CorpusSpec::new(profile, 50, 12, 200, 3, seed).unwrap()
    }

    #[test]
    fn zero_utterances_rejected_at_construction() {
        assert!(CorpusSpec::new(Profile::Story, 0, 12, 200, 3, 1).is_err());
        assert!(CorpusSpec::new(Profile::Story, 10, 12, 31, 3, 1).is_err());
    }

    #[test]
    fn same_spec_twice_gives_identical_corpora() {
        let spec = small_spec(Profile::Story, 42);
        let a: Vec<_> = generate_corpus(&spec).collect();
        let b: Vec<_> = generate_corpus(&spec).collect();
        assert_eq!(a, b);
        let spec2 = small_spec(Profile::Story, 43);
        let c: Vec<_> = generate_corpus(&spec2).collect();
        assert_ne!(a, c);
    }

    #[test]
    fn generated_utterances_satisfy_invariants() {
        for profile in [Profile::Story, Profile::Diverse] {
            let spec = small_spec(profile, 7);
            for u in generate_corpus(&spec) {
                assert!(!u.words.is_empty());
                for pair in u.words.windows(2) {
                    assert!(pair[0].end <= pair[1].start);
                }
                for w in &u.words {
                    assert!(w.end > w.start);
                    assert!(!w.text.is_empty());
                    assert!(!w.text.chars().any(char::is_whitespace));
                }
                assert!((u.speaker as usize) < spec.n_speakers);
            }
        }
    }

    #[test]
    fn duration_constant_per_word_speaker_pair() {
        let spec = small_spec(Profile::Story, 3);
        let mut seen: std::collections::HashMap<(String, u32), f64> = Default::default();
        for u in generate_corpus(&spec) {
            for w in &u.words {
                let d = w.end - w.start;
                assert!((0.15..0.6).contains(&d));
                let prev = seen.insert((w.text.clone(), u.speaker), d);
                if let Some(p) = prev {
                    assert_eq!(p, d, "duration changed for {:?}", w.text);
                }
            }
        }
    }

    #[test]
    fn story_ids_carry_topics_diverse_ids_do_not() {
        let story: Vec<_> = generate_corpus(&small_spec(Profile::Story, 5)).collect();
        assert!(story.iter().all(|u| u.topic().is_some()));
        assert!(story.iter().any(|u| u.topic() != story[0].topic()));
        let diverse: Vec<_> = generate_corpus(&small_spec(Profile::Diverse, 5)).collect();
        assert!(diverse.iter().all(|u| u.topic().is_none()));
    }

    #[test]
    fn lexicon_is_distinct_and_word_shaped() {
        let lex = lexicon(5000);
        let set: std::collections::BTreeSet<&String> = lex.iter().collect();
        assert_eq!(set.len(), lex.len());
        let mean: f64 = lex.iter().map(|w| w.len() as f64).sum::<f64>() / lex.len() as f64;
        assert!((8.0..12.0).contains(&mean), "mean word length {mean}");
    }

    #[test]
    fn ingest_reads_valid_lines_in_order() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("utts.jsonl");
        let spec = small_spec(Profile::Story, 9);
        let utts: Vec<_> = generate_corpus(&spec).take(3).collect();
        write_aligned(&path, utts.iter()).unwrap();
        let back: Vec<_> = ingest_aligned(&path)
            .unwrap()
            .map(|r| r.unwrap())
            .collect();
        assert_eq!(back, utts);
    }

    #[test]
    fn ingest_round_trip_preserves_full_corpus() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("utts.jsonl");
        let spec = small_spec(Profile::Diverse, 11);
        let utts: Vec<_> = generate_corpus(&spec).collect();
        write_aligned(&path, utts.iter()).unwrap();
        let back: Vec<_> = ingest_aligned(&path)
            .unwrap()
            .collect::<Result<_, _>>()
            .unwrap();
        assert_eq!(back, utts);
    }

    #[test]
    fn ingest_reports_line_numbers_and_continues() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.jsonl");
        let good = r#"{"id":"a","speaker":0,"words":[{"text":"hi","start":0.0,"end":0.3}]}"#;
        let end_before_start =
            r#"{"id":"b","speaker":0,"words":[{"text":"hi","start":0.5,"end":0.2}]}"#;
        let overlap = r#"{"id":"c","speaker":0,"words":[{"text":"x","start":0.0,"end":0.4},{"text":"y","start":0.3,"end":0.6}]}"#;
        std::fs::write(&path, format!("{good}\nnot json\n{end_before_start}\n{overlap}\n{good}\n"))
            .unwrap();
        let results: Vec<_> = ingest_aligned(&path).unwrap().collect();
        assert_eq!(results.len(), 5);
        assert!(results[0].is_ok());
        assert_eq!(results[1].as_ref().unwrap_err().line, 2);
        assert_eq!(results[2].as_ref().unwrap_err().line, 3);
        assert_eq!(results[3].as_ref().unwrap_err().line, 4);
        assert!(results[4].is_ok());
    }

    #[test]
    fn split_99_to_1() {
        let spec = CorpusSpec::new(Profile::Story, 100, 8, 200, 2, 17).unwrap();
        let utts: Vec<_> = generate_corpus(&spec).collect();
        let (train, val) = split(utts, 0.01).unwrap();
        assert_eq!(train.len(), 99);
        assert_eq!(val.len(), 1);
    }

    #[test]
    fn split_half_of_two() {
        let spec = CorpusSpec::new(Profile::Story, 2, 8, 200, 2, 17).unwrap();
        let utts: Vec<_> = generate_corpus(&spec).collect();
        let (train, val) = split(utts, 0.5).unwrap();
        assert_eq!((train.len(), val.len()), (1, 1));
    }

    #[test]
    fn split_membership_ignores_input_order() {
        let spec = CorpusSpec::new(Profile::Diverse, 60, 8, 200, 2, 23).unwrap();
        let utts: Vec<_> = generate_corpus(&spec).collect();
        let mut shuffled = utts.clone();
        shuffled.reverse();
        shuffled.swap(0, 30);
        let ids = |v: &[AlignedUtterance]| -> std::collections::BTreeSet<String> {
            v.iter().map(|u| u.id.clone()).collect()
        };
        let (tr_a, va_a) = split(utts, 0.2).unwrap();
        let (tr_b, va_b) = split(shuffled, 0.2).unwrap();
        assert_eq!(ids(&tr_a), ids(&tr_b));
        assert_eq!(ids(&va_a), ids(&va_b));
        assert!(ids(&tr_a).is_disjoint(&ids(&va_a)));
        assert_eq!(ids(&tr_a).len() + ids(&va_a).len(), 60);
    }

    #[test]
    fn split_rejects_empty_and_bad_fraction() {
        assert!(split(vec![], 0.5).is_err());
        let spec = CorpusSpec::new(Profile::Story, 2, 8, 200, 2, 1).unwrap();
        let utts: Vec<_> = generate_corpus(&spec).collect();
        assert!(split(utts.clone(), 0.0).is_err());
        assert!(split(utts, 1.0).is_err());
    }

    #[test]
    fn stats_count_words_and_durations() {
        let spec = small_spec(Profile::Story, 29);
        let utts: Vec<_> = generate_corpus(&spec).collect();
        let stats = CorpusStats::collect(utts.iter());
        assert_eq!(stats.utterances, utts.len());
        assert_eq!(stats.words, utts.iter().map(|u| u.words.len()).sum::<usize>());
        assert_eq!(stats.duration_bins.iter().sum::<usize>(), stats.words);
        let text = stats.render_text();
        assert!(text.contains("utterances: 50"));
    }
}
