//! Training-stream construction: cross-lingual interleaving, fixed-ratio
//! sampling and concatenation packing.

use std::collections::VecDeque;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{validate_alignment, AlignedStoryPair, Corpus, Story};
use crate::error::{Error, Result};
use crate::rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SequenceKind {
    Monolingual,
    Interleaved,
}

/// Where a run of tokens in a [`TrainSequence`] came from.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Span {
    pub story_id: String,
    pub lang: String,
    pub idx: u32,
    pub start: usize,
    pub len: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TrainSequence {
    pub tokens: Vec<u32>,
    pub spans: Vec<Span>,
    pub kind: SequenceKind,
}

impl TrainSequence {
    fn push_sentence(&mut self, story: &Story, j: usize) {
        let s = &story.sentences[j];
        self.spans.push(Span {
            story_id: s.story_id.clone(),
            lang: s.lang.clone(),
            idx: s.idx,
            start: self.tokens.len(),
            len: s.units.len(),
        });
        self.tokens.extend_from_slice(&s.units);
    }

    /// True when the spans cover `tokens` exactly, in order, without overlap.
    pub fn spans_tile(&self) -> bool {
        let mut at = 0;
        for s in &self.spans {
            if s.start != at || s.len == 0 {
                return false;
            }
            at += s.len;
        }
        at == self.tokens.len()
    }

    pub fn leading_lang(&self) -> Option<&str> {
        self.spans.first().map(|s| s.lang.as_str())
    }
}

/// `A¹₁ ∥ A²₁ ∥ A¹₂ ∥ A²₂ ∥ …` with `A¹` in `leading_lang`. No separators.
pub fn interleave_pair(pair: AlignedStoryPair<'_>, leading_lang: &str) -> Result<TrainSequence> {
    let report = validate_alignment(pair);
    if !report.is_valid() {
        return Err(Error::InvalidPair(report.to_string()));
    }
    let (lead, other) = if pair.l1_story.lang == leading_lang {
        (pair.l1_story, pair.l2_story)
    } else if pair.l2_story.lang == leading_lang {
        (pair.l2_story, pair.l1_story)
    } else {
        return Err(Error::InvalidPair(format!(
            "leading language {leading_lang} is not part of the pair"
        )));
    };
    let mut seq = TrainSequence {
        tokens: Vec::with_capacity(lead.token_count() + other.token_count()),
        spans: Vec::with_capacity(2 * lead.sentences.len()),
        kind: SequenceKind::Interleaved,
    };
    for j in 0..lead.sentences.len() {
        seq.push_sentence(lead, j);
        seq.push_sentence(other, j);
    }
    Ok(seq)
}

pub fn monolingual_sequence(story: &Story) -> TrainSequence {
    let mut seq = TrainSequence {
        tokens: Vec::with_capacity(story.token_count()),
        spans: Vec::with_capacity(story.sentences.len()),
        kind: SequenceKind::Monolingual,
    };
    for j in 0..story.sentences.len() {
        seq.push_sentence(story, j);
    }
    seq
}

/// One sampling decision of a [`StreamSampler`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Draw {
    pub kind: SequenceKind,
    pub story_id: String,
    pub leading_lang: String,
}

/// Infinite, seeded stream of training sequences. Each draw is interleaved
/// with probability `interleave_ratio` (leading language a fair coin),
/// otherwise a monolingual story in the first language with probability
/// `lang_probability` and in the second language otherwise. Stories are
/// drawn uniformly with replacement.
pub struct StreamSampler<'a> {
    corpus: &'a Corpus,
    interleave_ratio: f64,
    lang_probability: f64,
    by_lang: Vec<Vec<usize>>,
    rng: ChaCha8Rng,
}

impl<'a> StreamSampler<'a> {
    pub fn new(
        corpus: &'a Corpus,
        interleave_ratio: f64,
        lang_probability: f64,
        seed: u64,
    ) -> Result<Self> {
        for (name, p) in [
            ("interleave_ratio", interleave_ratio),
            ("lang_probability", lang_probability),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("{name} must lie in [0, 1], got {p}")));
            }
        }
        if interleave_ratio > 0.0 && corpus.alignments().is_empty() {
            return Err(Error::Config(
                "interleave_ratio > 0 requires at least one aligned story pair".into(),
            ));
        }
        let by_lang: Vec<Vec<usize>> = corpus
            .languages()
            .iter()
            .map(|lang| {
                (0..corpus.stories().len())
                    .filter(|&i| &corpus.stories()[i].lang == lang)
                    .collect()
            })
            .collect();
        if interleave_ratio < 1.0 {
            let wants = [lang_probability > 0.0, lang_probability < 1.0];
            for (slot, wanted) in wants.into_iter().enumerate() {
                if wanted && by_lang.get(slot).is_none_or(|v| v.is_empty()) {
                    return Err(Error::Config(format!(
                        "monolingual sampling needs stories in language #{}",
                        slot + 1
                    )));
                }
            }
        }
        Ok(StreamSampler {
            corpus,
            interleave_ratio,
            lang_probability,
            by_lang,
            rng: rng::stream(seed, "stream", 0),
        })
    }

    fn next_choice(&mut self) -> (Draw, TrainSequence) {
        if self.rng.random_bool(self.interleave_ratio) {
            let i = self.rng.random_range(0..self.corpus.alignments().len());
            let pair = self.corpus.pair(i);
            let lead = if self.rng.random_bool(0.5) {
                &pair.l1_story.lang
            } else {
                &pair.l2_story.lang
            };
            let seq = interleave_pair(pair, lead).expect("corpus pairs are validated on load");
            let draw = Draw {
                kind: SequenceKind::Interleaved,
                story_id: pair.l1_story.story_id.clone(),
                leading_lang: lead.clone(),
            };
            (draw, seq)
        } else {
            let slot = usize::from(!self.rng.random_bool(self.lang_probability));
            let pool = &self.by_lang[slot];
            let story = &self.corpus.stories()[pool[self.rng.random_range(0..pool.len())]];
            let draw = Draw {
                kind: SequenceKind::Monolingual,
                story_id: story.story_id.clone(),
                leading_lang: story.lang.clone(),
            };
            (draw, monolingual_sequence(story))
        }
    }

    /// Next decision without materializing the sequence's consumer copy.
    pub fn next_draw(&mut self) -> Draw {
        self.next_choice().0
    }
}

impl Iterator for StreamSampler<'_> {
    type Item = TrainSequence;

    fn next(&mut self) -> Option<TrainSequence> {
        Some(self.next_choice().1)
    }
}

/// A packed training row with per-language token attribution. BOS tokens
/// are not attributed to any language.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Row {
    pub tokens: Vec<u32>,
    pub lang_tokens: Vec<(String, usize)>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PackedBatch {
    pub rows: Vec<Row>,
    /// Tokens already pulled from the stream but not yet placed in a row.
    pub carryover: Vec<u32>,
}

struct Piece {
    lang: String,
    tokens: Vec<u32>,
    pos: usize,
}

/// Concatenates sequences into rows of exactly `context_len` tokens. A
/// sequence that overflows a row continues at the start of the next one.
pub struct Packer {
    context_len: usize,
    bos: Option<u32>,
    pending: VecDeque<Piece>,
    pending_len: usize,
}

impl Packer {
    pub fn new(context_len: usize, bos: Option<u32>) -> Result<Self> {
        if context_len < 2 {
            return Err(Error::Config(format!(
                "context_len must be at least 2, got {context_len}"
            )));
        }
        Ok(Packer {
            context_len,
            bos,
            pending: VecDeque::new(),
            pending_len: 0,
        })
    }

    pub fn push(&mut self, seq: TrainSequence) {
        for span in seq.spans {
            let tokens = seq.tokens[span.start..span.start + span.len].to_vec();
            self.pending_len += tokens.len();
            self.pending.push_back(Piece {
                lang: span.lang,
                tokens,
                pos: 0,
            });
        }
    }

    fn payload(&self) -> usize {
        self.context_len - usize::from(self.bos.is_some())
    }

    /// Builds one full row, pulling from `stream` as needed. Returns `None`
    /// when the stream ends first; pulled tokens stay pending.
    pub fn next_row(&mut self, stream: &mut impl Iterator<Item = TrainSequence>) -> Option<Row> {
        let need = self.payload();
        while self.pending_len < need {
            self.push(stream.next()?);
        }
        let mut tokens = Vec::with_capacity(self.context_len);
        tokens.extend(self.bos);
        let mut lang_tokens: Vec<(String, usize)> = Vec::new();
        let mut left = need;
        while left > 0 {
            let piece = self.pending.front_mut().unwrap();
            let take = left.min(piece.tokens.len() - piece.pos);
            tokens.extend_from_slice(&piece.tokens[piece.pos..piece.pos + take]);
            match lang_tokens.last_mut() {
                Some((lang, n)) if *lang == piece.lang => *n += take,
                _ => lang_tokens.push((piece.lang.clone(), take)),
            }
            piece.pos += take;
            left -= take;
            if piece.pos == piece.tokens.len() {
                self.pending.pop_front();
            }
        }
        self.pending_len -= need;
        Some(Row {
            tokens,
            lang_tokens,
        })
    }

    /// Up to `row_count` full rows; fewer only if the stream runs dry.
    pub fn fill(
        &mut self,
        stream: &mut impl Iterator<Item = TrainSequence>,
        row_count: usize,
    ) -> PackedBatch {
        let mut rows = Vec::with_capacity(row_count);
        while rows.len() < row_count {
            match self.next_row(stream) {
                Some(row) => rows.push(row),
                None => break,
            }
        }
        PackedBatch {
            rows,
            carryover: self.carryover(),
        }
    }

    pub fn carryover(&self) -> Vec<u32> {
        self.pending
            .iter()
            .flat_map(|p| p.tokens[p.pos..].iter().copied())
            .collect()
    }
}

/// Packs a finite stream into at most `row_count` rows.
pub fn pack(
    stream: impl IntoIterator<Item = TrainSequence>,
    context_len: usize,
    row_count: usize,
    bos: Option<u32>,
) -> Result<PackedBatch> {
    let mut packer = Packer::new(context_len, bos)?;
    Ok(packer.fill(&mut stream.into_iter(), row_count))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Alignment, UnitSentence, VocabSpec};

    fn story(id: &str, lang: &str, sents: &[&[u32]]) -> Story {
        Story::new(
            id.into(),
            lang.into(),
            sents
                .iter()
                .enumerate()
                .map(|(i, u)| UnitSentence {
                    story_id: id.into(),
                    lang: lang.into(),
                    idx: i as u32 + 1,
                    units: u.to_vec(),
                })
                .collect(),
        )
        .unwrap()
    }

    fn seq_of_len(n: usize) -> TrainSequence {
        TrainSequence {
            tokens: (0..n as u32).collect(),
            spans: vec![Span {
                story_id: "x".into(),
                lang: "en".into(),
                idx: 1,
                start: 0,
                len: n,
            }],
            kind: SequenceKind::Monolingual,
        }
    }

    #[test]
    fn interleaves_in_both_directions() {
        let a = story("s", "en", &[&[1, 2], &[3]]);
        let b = story("s", "fr", &[&[10], &[11, 12, 13]]);
        let pair = AlignedStoryPair {
            l1_story: &a,
            l2_story: &b,
        };
        let s = interleave_pair(pair, "en").unwrap();
        assert_eq!(s.tokens, vec![1, 2, 10, 3, 11, 12, 13]);
        assert!(s.spans_tile());
        let s = interleave_pair(pair, "fr").unwrap();
        assert_eq!(s.tokens, vec![10, 1, 2, 11, 12, 13, 3]);
        assert_eq!(s.leading_lang(), Some("fr"));
        assert!(interleave_pair(pair, "de").is_err());
    }

    #[test]
    fn one_sentence_stories() {
        let a = story("s", "en", &[&[1, 2, 3]]);
        let b = story("s", "fr", &[&[7, 8]]);
        let s = interleave_pair(
            AlignedStoryPair {
                l1_story: &a,
                l2_story: &b,
            },
            "en",
        )
        .unwrap();
        assert_eq!(s.tokens, vec![1, 2, 3, 7, 8]);
    }

    #[test]
    fn invalid_pair_is_rejected() {
        let a = story("s", "en", &[&[1], &[2]]);
        let b = story("s", "fr", &[&[7]]);
        let err = interleave_pair(
            AlignedStoryPair {
                l1_story: &a,
                l2_story: &b,
            },
            "en",
        )
        .unwrap_err();
        assert!(err.to_string().contains("sentence count mismatch"));
    }

    #[test]
    fn monolingual_concatenation() {
        let a = story("s", "en", &[&[1, 2], &[3], &[4, 5]]);
        let s = monolingual_sequence(&a);
        assert_eq!(s.tokens, vec![1, 2, 3, 4, 5]);
        assert_eq!(s.kind, SequenceKind::Monolingual);
        let single = story("t", "en", &[&[9, 9]]);
        assert_eq!(monolingual_sequence(&single).tokens, vec![9, 9]);
    }

    #[test]
    fn pack_splits_overflow() {
        let b = pack([seq_of_len(1500), seq_of_len(1000)], 2048, 2, None).unwrap();
        assert_eq!(b.rows.len(), 1);
        assert_eq!(b.rows[0].tokens.len(), 2048);
        assert_eq!(&b.rows[0].tokens[1500..], &(0..548).collect::<Vec<u32>>()[..]);
        assert_eq!(b.carryover.len(), 452);
        assert_eq!(b.carryover[0], 548);
    }

    #[test]
    fn pack_exact_fit() {
        let b = pack([seq_of_len(64)], 64, 1, None).unwrap();
        assert_eq!(b.rows.len(), 1);
        assert!(b.carryover.is_empty());
    }

    #[test]
    fn bos_counts_toward_context() {
        let b = pack([seq_of_len(10)], 4, 10, Some(99)).unwrap();
        assert_eq!(b.rows.len(), 3);
        for r in &b.rows {
            assert_eq!(r.tokens.len(), 4);
            assert_eq!(r.tokens[0], 99);
            assert_eq!(r.lang_tokens, vec![("en".to_string(), 3)]);
        }
        assert_eq!(b.carryover, vec![9]);
        assert!(Packer::new(1, None).is_err());
    }

    fn two_lang_corpus() -> Corpus {
        let mut stories = Vec::new();
        for i in 0..4 {
            stories.push(story(&format!("s{i}"), "en", &[&[1, 2], &[3]]));
        }
        for i in 0..4 {
            stories.push(story(&format!("s{i}"), "fr", &[&[10], &[11, 12]]));
        }
        let alignments = (0..4).map(|i| Alignment { l1: i, l2: 4 + i }).collect();
        Corpus::new(
            VocabSpec::new(16, false).unwrap(),
            vec!["en".into(), "fr".into()],
            stories,
            alignments,
        )
        .unwrap()
    }

    #[test]
    fn ratio_extremes() {
        let c = two_lang_corpus();
        let mut s = StreamSampler::new(&c, 0.0, 0.5, 1).unwrap();
        assert!((0..200).all(|_| s.next().unwrap().kind == SequenceKind::Monolingual));
        let mut s = StreamSampler::new(&c, 1.0, 0.5, 1).unwrap();
        assert!((0..200).all(|_| s.next().unwrap().kind == SequenceKind::Interleaved));
        let mut s = StreamSampler::new(&c, 0.0, 1.0, 1).unwrap();
        assert!((0..200).all(|_| s.next().unwrap().leading_lang() == Some("en")));
    }

    #[test]
    fn interleave_requires_pairs() {
        let c = Corpus::new(
            VocabSpec::new(16, false).unwrap(),
            vec!["en".into(), "fr".into()],
            vec![story("a", "en", &[&[1]])],
            vec![],
        )
        .unwrap();
        assert!(StreamSampler::new(&c, 0.5, 1.0, 0).is_err());
        assert!(StreamSampler::new(&c, 0.0, 0.5, 0).is_err());
        assert!(StreamSampler::new(&c, 0.0, 1.0, 0).is_ok());
        assert!(StreamSampler::new(&c, 1.5, 1.0, 0).is_err());
    }

    #[test]
    fn sampler_is_reproducible() {
        let c = two_lang_corpus();
        let draws = |seed| {
            let mut s = StreamSampler::new(&c, 0.5, 0.5, seed).unwrap();
            (0..100).map(|_| s.next_draw()).collect::<Vec<_>>()
        };
        assert_eq!(draws(3), draws(3));
        assert_ne!(draws(3), draws(4));
    }
}
