//! Prompt decomposition into paragraph / phrase / word granularity levels.
//!
//! Phrase extraction is a deterministic rule-based chunker over a six-tag
//! POS interface so the whole path is hermetic; the tagger itself is a
//! pluggable lookup table (unknown tokens default to [`PosTag::Other`]).

use std::collections::HashMap;
use std::path::Path;

use ndarray::{Array1, Array2, Axis};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum TextError {
    #[error("tags ({tags}) are not aligned with tokens ({tokens})")]
    MisalignedTags { tokens: usize, tags: usize },
    #[error("no granularity levels requested or computable")]
    NoLevels,
    #[error("prompt is empty")]
    EmptyPrompt,
    #[error("span {start}..{end} exceeds {len} tokens")]
    SpanOutOfRange { start: usize, end: usize, len: usize },
    #[error("unknown POS tag {0:?} in lexicon")]
    UnknownTag(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for TextError {
    fn from(e: std::io::Error) -> Self {
        TextError::Io(e.to_string())
    }
}

/// A prompt with its deterministic word tokenisation.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptText {
    pub text: String,
    pub word_tokens: Vec<String>,
    pub char_count: usize,
}

impl PromptText {
    pub fn new(text: &str) -> Self {
        PromptText {
            text: text.to_string(),
            word_tokens: tokenize_words(text),
            char_count: text.chars().count(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.word_tokens.is_empty()
    }
}

/// Lowercased maximal alphanumeric runs; punctuation and whitespace split.
pub fn tokenize_words(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    let mut current = String::new();
    for ch in text.chars() {
        if ch.is_alphanumeric() {
            current.extend(ch.to_lowercase());
        } else if !current.is_empty() {
            tokens.push(std::mem::take(&mut current));
        }
    }
    if !current.is_empty() {
        tokens.push(current);
    }
    tokens
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PosTag {
    Det,
    Adj,
    Noun,
    Verb,
    Adp,
    Other,
}

impl PosTag {
    pub fn parse(s: &str) -> Result<Self, TextError> {
        match s.to_ascii_uppercase().as_str() {
            "DET" => Ok(PosTag::Det),
            "ADJ" => Ok(PosTag::Adj),
            "NOUN" => Ok(PosTag::Noun),
            "VERB" => Ok(PosTag::Verb),
            "ADP" => Ok(PosTag::Adp),
            "OTHER" => Ok(PosTag::Other),
            other => Err(TextError::UnknownTag(other.to_string())),
        }
    }
}

/// Lookup-table tagger; unknown tokens tag as OTHER.
#[derive(Debug, Clone, Default)]
pub struct LexiconTagger {
    entries: HashMap<String, PosTag>,
}

impl LexiconTagger {
    pub fn from_pairs<I, S>(pairs: I) -> Self
    where
        I: IntoIterator<Item = (S, PosTag)>,
        S: Into<String>,
    {
        LexiconTagger {
            entries: pairs.into_iter().map(|(t, tag)| (t.into().to_lowercase(), tag)).collect(),
        }
    }

    /// Loads a `token<TAB>TAG` file, one pair per line; blank lines and
    /// `#` comments ignored.
    pub fn from_path(path: &Path) -> Result<Self, TextError> {
        let text = std::fs::read_to_string(path)?;
        let mut entries = HashMap::new();
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (token, tag) = line
                .split_once('\t')
                .ok_or_else(|| TextError::UnknownTag(format!("malformed line {line:?}")))?;
            entries.insert(token.trim().to_lowercase(), PosTag::parse(tag.trim())?);
        }
        Ok(LexiconTagger { entries })
    }

    /// A small built-in vocabulary covering common determiners, adpositions
    /// and the words used by the synthetic corpora; everything else is OTHER.
    pub fn small_english() -> Self {
        use PosTag::*;
        let pairs: &[(&str, PosTag)] = &[
            ("a", Det), ("an", Det), ("the", Det), ("this", Det), ("that", Det),
            ("over", Adp), ("under", Adp), ("across", Adp), ("through", Adp),
            ("in", Adp), ("on", Adp), ("near", Adp), ("along", Adp), ("past", Adp),
            ("red", Adj), ("blue", Adj), ("golden", Adj), ("icy", Adj), ("vast", Adj),
            ("quiet", Adj), ("bright", Adj), ("misty", Adj), ("ancient", Adj),
            ("narrow", Adj), ("stormy", Adj), ("gentle", Adj), ("frozen", Adj),
            ("crimson", Adj), ("silver", Adj), ("emerald", Adj),
            ("fox", Noun), ("river", Noun), ("mountain", Noun), ("forest", Noun),
            ("city", Noun), ("street", Noun), ("lantern", Noun), ("harbor", Noun),
            ("dancer", Noun), ("kite", Noun), ("train", Noun), ("meadow", Noun),
            ("cliff", Noun), ("temple", Noun), ("boat", Noun), ("desert", Noun),
            ("dot", Noun), ("sky", Noun), ("bridge", Noun), ("garden", Noun),
            ("runs", Verb), ("glides", Verb), ("drifts", Verb), ("leaps", Verb),
            ("spins", Verb), ("flows", Verb), ("climbs", Verb), ("sails", Verb),
            ("wanders", Verb), ("crosses", Verb), ("moves", Verb), ("floats", Verb),
        ];
        Self::from_pairs(pairs.iter().map(|(t, tag)| (*t, *tag)))
    }

    pub fn tag(&self, tokens: &[String]) -> Vec<PosTag> {
        tokens
            .iter()
            .map(|t| self.entries.get(t.as_str()).copied().unwrap_or(PosTag::Other))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PhraseLabel {
    NounPhrase,
    VerbPhrase,
}

/// Half-open token span `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PhraseSpan {
    pub start: usize,
    pub end: usize,
    pub label: PhraseLabel,
}

/// Left-greedy shallow chunking: maximal `(DET? ADJ* NOUN+)` runs become
/// noun phrases, `(VERB ADP?)` verb phrases. Spans never overlap.
pub fn chunk_phrases(tokens: &[String], tags: &[PosTag]) -> Result<Vec<PhraseSpan>, TextError> {
    if tokens.len() != tags.len() {
        return Err(TextError::MisalignedTags { tokens: tokens.len(), tags: tags.len() });
    }
    let n = tags.len();
    let mut spans = Vec::new();
    let mut i = 0;
    while i < n {
        // Noun phrase attempt.
        let mut j = i;
        if tags[j] == PosTag::Det {
            j += 1;
        }
        while j < n && tags[j] == PosTag::Adj {
            j += 1;
        }
        let noun_start = j;
        while j < n && tags[j] == PosTag::Noun {
            j += 1;
        }
        if j > noun_start {
            spans.push(PhraseSpan { start: i, end: j, label: PhraseLabel::NounPhrase });
            i = j;
            continue;
        }
        // Verb phrase attempt.
        if tags[i] == PosTag::Verb {
            let mut end = i + 1;
            if end < n && tags[end] == PosTag::Adp {
                end += 1;
            }
            spans.push(PhraseSpan { start: i, end, label: PhraseLabel::VerbPhrase });
            i = end;
            continue;
        }
        i += 1;
    }
    Ok(spans)
}

/// Phrase embedding = arithmetic mean of its word embeddings; row order
/// follows span order. An empty span list yields a 0 x D matrix.
pub fn pool_phrase_embeddings(
    word_embeddings: &Array2<f64>,
    spans: &[PhraseSpan],
) -> Result<Array2<f64>, TextError> {
    let (n, d) = word_embeddings.dim();
    let mut out = Array2::zeros((spans.len(), d));
    for (row, span) in spans.iter().enumerate() {
        if span.start >= span.end || span.end > n {
            return Err(TextError::SpanOutOfRange { start: span.start, end: span.end, len: n });
        }
        let width = (span.end - span.start) as f64;
        for idx in span.start..span.end {
            for c in 0..d {
                out[(row, c)] += word_embeddings[(idx, c)];
            }
        }
        for c in 0..d {
            out[(row, c)] /= width;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Level {
    Paragraph,
    Phrase,
    Word,
}

/// Requested granularity levels.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LevelSet {
    pub paragraph: bool,
    pub phrase: bool,
    pub word: bool,
}

impl LevelSet {
    pub const COMBINED: LevelSet = LevelSet { paragraph: true, phrase: true, word: true };
    pub const GLOBAL: LevelSet = LevelSet { paragraph: true, phrase: false, word: false };
    pub const LOCAL: LevelSet = LevelSet { paragraph: false, phrase: true, word: false };
    pub const INDIVIDUAL: LevelSet = LevelSet { paragraph: false, phrase: false, word: true };
    pub const NONE: LevelSet = LevelSet { paragraph: false, phrase: false, word: false };

    pub fn count(&self) -> usize {
        self.paragraph as usize + self.phrase as usize + self.word as usize
    }

    pub fn is_empty(&self) -> bool {
        self.count() == 0
    }
}

/// One pooled text embedding per granularity level.
#[derive(Debug, Clone, PartialEq)]
pub struct GranularityBundle {
    pub paragraph: Option<Array1<f64>>,
    pub phrase: Option<Array1<f64>>,
    pub word: Option<Array1<f64>>,
    pub levels_present: Vec<Level>,
    /// True when the phrase level fell back to the word level because no
    /// phrase spans were found.
    pub phrase_from_fallback: bool,
}

impl GranularityBundle {
    pub fn present_vectors(&self) -> Vec<&Array1<f64>> {
        let mut out = Vec::new();
        if let Some(p) = &self.paragraph {
            out.push(p);
        }
        if let Some(p) = &self.phrase {
            out.push(p);
        }
        if let Some(w) = &self.word {
            out.push(w);
        }
        out
    }
}

/// Builds the per-level bundle: paragraph = the fused encoder embedding,
/// word = mean of word embeddings, phrase = mean of pooled phrase
/// embeddings (falling back to the word level when no spans exist).
pub fn build_bundle(
    enc_embedding: &Array1<f64>,
    word_embeddings: &Array2<f64>,
    spans: &[PhraseSpan],
    levels: LevelSet,
) -> Result<GranularityBundle, TextError> {
    if levels.is_empty() {
        return Err(TextError::NoLevels);
    }
    let (n, _) = word_embeddings.dim();
    if (levels.word || levels.phrase) && n == 0 {
        return Err(TextError::EmptyPrompt);
    }

    let mut bundle = GranularityBundle {
        paragraph: None,
        phrase: None,
        word: None,
        levels_present: Vec::new(),
        phrase_from_fallback: false,
    };
    let word_mean =
        if levels.word || levels.phrase { word_embeddings.mean_axis(Axis(0)) } else { None };

    if levels.paragraph {
        bundle.paragraph = Some(enc_embedding.clone());
        bundle.levels_present.push(Level::Paragraph);
    }
    if levels.phrase {
        if spans.is_empty() {
            bundle.phrase = word_mean.clone();
            bundle.phrase_from_fallback = true;
        } else {
            let pooled = pool_phrase_embeddings(word_embeddings, spans)?;
            bundle.phrase = pooled.mean_axis(Axis(0));
        }
        bundle.levels_present.push(Level::Phrase);
    }
    if levels.word {
        bundle.word = word_mean;
        bundle.levels_present.push(Level::Word);
    }
    Ok(bundle)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;

    fn toks(words: &[&str]) -> Vec<String> {
        words.iter().map(|w| w.to_string()).collect()
    }

    #[test]
    fn tokenize_strips_punctuation_and_lowercases() {
        assert_eq!(tokenize_words("A red fox."), toks(&["a", "red", "fox"]));
        assert_eq!(tokenize_words(""), Vec::<String>::new());
        assert_eq!(tokenize_words("  ...  "), Vec::<String>::new());
        assert_eq!(tokenize_words("Don't stop"), toks(&["don", "t", "stop"]));
    }

    #[test]
    fn chunk_rule_examples() {
        use PosTag::*;
        let spans = chunk_phrases(&toks(&["the", "icy", "river"]), &[Det, Adj, Noun]).unwrap();
        assert_eq!(spans, vec![PhraseSpan { start: 0, end: 3, label: PhraseLabel::NounPhrase }]);

        let spans = chunk_phrases(&toks(&["fox"]), &[Noun]).unwrap();
        assert_eq!(spans, vec![PhraseSpan { start: 0, end: 1, label: PhraseLabel::NounPhrase }]);

        let spans = chunk_phrases(&toks(&["runs", "over"]), &[Verb, Adp]).unwrap();
        assert_eq!(spans, vec![PhraseSpan { start: 0, end: 2, label: PhraseLabel::VerbPhrase }]);
    }

    #[test]
    fn chunk_sentence_mix() {
        use PosTag::*;
        // "a red fox runs over the icy river"
        let tags = [Det, Adj, Noun, Verb, Adp, Det, Adj, Noun];
        let tokens = toks(&["a", "red", "fox", "runs", "over", "the", "icy", "river"]);
        let spans = chunk_phrases(&tokens, &tags).unwrap();
        assert_eq!(
            spans,
            vec![
                PhraseSpan { start: 0, end: 3, label: PhraseLabel::NounPhrase },
                PhraseSpan { start: 3, end: 5, label: PhraseLabel::VerbPhrase },
                PhraseSpan { start: 5, end: 8, label: PhraseLabel::NounPhrase },
            ]
        );
    }

    #[test]
    fn chunk_rejects_misaligned_tags() {
        assert_eq!(
            chunk_phrases(&toks(&["fox"]), &[]),
            Err(TextError::MisalignedTags { tokens: 1, tags: 0 })
        );
    }

    #[test]
    fn pooling_examples() {
        let w = array![[1.0, 2.0], [3.0, 4.0], [-1.0, -2.0]];
        let single = pool_phrase_embeddings(
            &w,
            &[PhraseSpan { start: 1, end: 2, label: PhraseLabel::NounPhrase }],
        )
        .unwrap();
        assert_eq!(single.row(0).to_vec(), vec![3.0, 4.0]);

        let opposite = pool_phrase_embeddings(
            &w,
            &[PhraseSpan { start: 0, end: 3, label: PhraseLabel::NounPhrase }],
        )
        .unwrap();
        assert_eq!(opposite.row(0).to_vec(), vec![1.0, 4.0 / 3.0]);

        let empty = pool_phrase_embeddings(&w, &[]).unwrap();
        assert_eq!(empty.dim(), (0, 2));
    }

    #[test]
    fn pooling_matches_mean_oracle() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let w = Array2::from_shape_fn((5, 4), |_| rng.random_range(-1.0..1.0));
        let span = PhraseSpan { start: 1, end: 4, label: PhraseLabel::NounPhrase };
        let pooled = pool_phrase_embeddings(&w, &[span]).unwrap();
        for c in 0..4 {
            let manual = (w[(1, c)] + w[(2, c)] + w[(3, c)]) / 3.0;
            assert!((pooled[(0, c)] - manual).abs() < 1e-12);
        }
    }

    #[test]
    fn bundle_collapse_and_fallback() {
        let enc = array![0.5, 0.5];
        let w = array![[1.0, 0.0]];
        let span = [PhraseSpan { start: 0, end: 1, label: PhraseLabel::NounPhrase }];
        let b = build_bundle(&enc, &w, &span, LevelSet::COMBINED).unwrap();
        assert_eq!(b.paragraph.as_ref().unwrap(), &enc);
        assert_eq!(b.phrase.as_ref().unwrap(), &array![1.0, 0.0]);
        assert_eq!(b.word.as_ref().unwrap(), &array![1.0, 0.0]);
        assert!(!b.phrase_from_fallback);

        let b = build_bundle(&enc, &w, &[], LevelSet::COMBINED).unwrap();
        assert_eq!(b.phrase, b.word);
        assert!(b.phrase_from_fallback);

        assert_eq!(build_bundle(&enc, &w, &[], LevelSet::NONE), Err(TextError::NoLevels));
    }

    #[test]
    fn bundle_levels_distinct_in_general_position() {
        use rand::{Rng, SeedableRng};
        // Descriptive prompts (>= 5 tokens) with random embeddings keep the
        // three levels apart: pairwise cosine strictly below 1 - 1e-6.
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(14);
        for _ in 0..50 {
            let n = rng.random_range(5..12);
            let d = 8;
            let w = Array2::from_shape_fn((n, d), |_| rng.random_range(-1.0..1.0f64));
            let enc = Array1::from_shape_fn(d, |_| rng.random_range(-1.0..1.0));
            let spans = vec![
                PhraseSpan { start: 0, end: 2, label: PhraseLabel::NounPhrase },
                PhraseSpan { start: 2, end: n, label: PhraseLabel::VerbPhrase },
            ];
            let b = build_bundle(&enc, &w, &spans, LevelSet::COMBINED).unwrap();
            let vecs = b.present_vectors();
            for i in 0..vecs.len() {
                for j in (i + 1)..vecs.len() {
                    let dot = vecs[i].dot(vecs[j]);
                    let cos = dot
                        / (vecs[i].dot(vecs[i]).sqrt() * vecs[j].dot(vecs[j]).sqrt());
                    assert!(cos < 1.0 - 1e-6, "levels {i} and {j} collapsed: cos {cos}");
                }
            }
        }
    }

    #[test]
    fn bundle_invariant_to_span_order() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(6);
        let w = Array2::from_shape_fn((6, 3), |_| rng.random_range(-1.0..1.0));
        let enc = Array1::from_shape_fn(3, |_| rng.random_range(-1.0..1.0));
        let s1 = PhraseSpan { start: 0, end: 2, label: PhraseLabel::NounPhrase };
        let s2 = PhraseSpan { start: 3, end: 6, label: PhraseLabel::VerbPhrase };
        let a = build_bundle(&enc, &w, &[s1, s2], LevelSet::COMBINED).unwrap();
        let b = build_bundle(&enc, &w, &[s2, s1], LevelSet::COMBINED).unwrap();
        for (x, y) in a.phrase.unwrap().iter().zip(b.phrase.unwrap().iter()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    proptest! {
        #[test]
        fn tokenize_roundtrip_is_stable(text in "[ -~]{0,80}") {
            let tokens = tokenize_words(&text);
            let rejoined = tokens.join(" ");
            prop_assert_eq!(tokenize_words(&rejoined), tokens);
        }

        #[test]
        fn chunk_spans_disjoint_and_sorted(raw in proptest::collection::vec(0u8..6, 0..24)) {
            let tags: Vec<PosTag> = raw.iter().map(|t| match t {
                0 => PosTag::Det,
                1 => PosTag::Adj,
                2 => PosTag::Noun,
                3 => PosTag::Verb,
                4 => PosTag::Adp,
                _ => PosTag::Other,
            }).collect();
            let tokens: Vec<String> = (0..tags.len()).map(|i| format!("w{i}")).collect();
            let spans = chunk_phrases(&tokens, &tags).unwrap();
            for w in spans.windows(2) {
                prop_assert!(w[0].end <= w[1].start, "overlap or disorder: {:?}", w);
            }
            for s in &spans {
                prop_assert!(s.start < s.end && s.end <= tags.len());
            }
        }

        #[test]
        fn pooling_commutes_with_permutation(seed in 0u64..1000) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let w = Array2::from_shape_fn((7, 3), |_| rng.random_range(-1.0..1.0));
            let spans = vec![
                PhraseSpan { start: 0, end: 2, label: PhraseLabel::NounPhrase },
                PhraseSpan { start: 2, end: 5, label: PhraseLabel::VerbPhrase },
                PhraseSpan { start: 5, end: 7, label: PhraseLabel::NounPhrase },
            ];
            let base = pool_phrase_embeddings(&w, &spans).unwrap();
            let perm = [2usize, 0, 1];
            let permuted: Vec<PhraseSpan> = perm.iter().map(|&i| spans[i]).collect();
            let pooled = pool_phrase_embeddings(&w, &permuted).unwrap();
            for (row, &src) in perm.iter().enumerate() {
                for c in 0..3 {
                    prop_assert!((pooled[(row, c)] - base[(src, c)]).abs() < 1e-12);
                }
            }
        }
    }
}
