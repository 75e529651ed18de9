//! Synthetic bilingual unit languages with shared latent semantics.
//!
//! Stories are walks of a fixed first-order Markov chain over `C` latent
//! concepts, cut into sentences of `sentence_len` concepts. Each language
//! realizes concept `c` as a fixed ascending n-gram of `g` unit ids drawn
//! from its own block:
//!
//! ```text
//! l1: [2cg, 2cg + g)        l2: [(2c+1)g, (2c+1)g + g)
//! ```
//!
//! so the two surface vocabularies are disjoint. By default the second
//! language also reverses concept order inside each sentence. Ids from
//! `2Cg` up to `K` are never produced by the grammar and serve as nonce
//! material.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::corpus::{Alignment, Corpus, Story, UnitSentence, VocabSpec};
use crate::error::{Error, Result};
use crate::eval::{EvalItem, EvalKind};
use crate::rng;

/// Concept order used by the second language within a sentence.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WordOrder {
    Preserved,
    Reversed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub concept_count: u32,
    pub units_per_concept: u32,
    pub sentence_len: u32,
    pub sentences_per_story: u32,
    pub story_count: u32,
    pub markov_temperature: f64,
    /// Temperature of the inverted chain used to draw story-cloze distractors.
    pub distractor_temperature: f64,
    pub l2_order: WordOrder,
    pub languages: [String; 2],
    pub vocab: VocabSpec,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            concept_count: 24,
            units_per_concept: 2,
            sentence_len: 3,
            sentences_per_story: 6,
            story_count: 4000,
            markov_temperature: 0.7,
            distractor_temperature: 0.7,
            l2_order: WordOrder::Reversed,
            languages: ["en".to_string(), "fr".to_string()],
            vocab: VocabSpec {
                size: 128,
                bos_enabled: false,
            },
            seed: 7,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        self.vocab.validate()?;
        for (name, v) in [
            ("concept_count", self.concept_count),
            ("units_per_concept", self.units_per_concept),
            ("sentence_len", self.sentence_len),
            ("sentences_per_story", self.sentences_per_story),
            ("story_count", self.story_count),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("synth.{name} must be at least 1")));
            }
        }
        for (name, t) in [
            ("markov_temperature", self.markov_temperature),
            ("distractor_temperature", self.distractor_temperature),
        ] {
            if !(t > 0.0 && t.is_finite()) {
                return Err(Error::Config(format!("synth.{name} must be positive")));
            }
        }
        if self.languages[0] == self.languages[1] {
            return Err(Error::Config("synth.languages must be distinct".into()));
        }
        let needed = self.used_ids();
        if needed > self.vocab.size as u64 {
            return Err(Error::VocabCapacity {
                needed,
                available: self.vocab.size,
            });
        }
        Ok(())
    }

    /// Number of ids used by the two surface vocabularies.
    pub fn used_ids(&self) -> u64 {
        2 * self.concept_count as u64 * self.units_per_concept as u64
    }

    /// Ids reserved for nonce words: `[2Cg, K)`.
    pub fn reserved_ids(&self) -> std::ops::Range<u32> {
        self.used_ids().min(self.vocab.size as u64) as u32..self.vocab.size
    }
}

/// Fixed first-order transition structure over latent concepts.
#[derive(Clone, Debug)]
pub struct MarkovChain {
    concepts: usize,
    logits: Vec<f64>,
    log_probs: Vec<f64>,
    cdf: Vec<f64>,
}

impl MarkovChain {
    /// Transition logits are standard normal, divided by the temperature.
    pub fn from_config(cfg: &SynthConfig) -> Self {
        let n = cfg.concept_count as usize;
        let mut r = rng::stream(cfg.seed, "chain", 0);
        let logits: Vec<f64> = (0..n * n)
            .map(|_| r.sample::<f64, _>(StandardNormal) / cfg.markov_temperature)
            .collect();
        let log_probs = log_softmax_rows(&logits, n);
        let cdf = cdf_rows(&log_probs, n);
        MarkovChain {
            concepts: n,
            logits,
            log_probs,
            cdf,
        }
    }

    pub fn concept_count(&self) -> usize {
        self.concepts
    }

    pub fn log_prob(&self, from: u32, to: u32) -> f64 {
        self.log_probs[from as usize * self.concepts + to as usize]
    }

    /// Log-probability of walking `path` starting from `from`.
    pub fn path_log_prob(&self, from: u32, path: &[u32]) -> f64 {
        let mut prev = from;
        let mut lp = 0.0;
        for &c in path {
            lp += self.log_prob(prev, c);
            prev = c;
        }
        lp
    }

    fn sample(&self, from: u32, r: &mut ChaCha8Rng) -> u32 {
        let row = &self.cdf[from as usize * self.concepts..][..self.concepts];
        sample_cdf(row, r)
    }

    /// Draws from the chain with logits negated and rescaled: favours the
    /// transitions the chain itself considers unlikely.
    fn sample_inverted(&self, from: u32, temperature: f64, r: &mut ChaCha8Rng) -> u32 {
        let row = &self.logits[from as usize * self.concepts..][..self.concepts];
        let inv: Vec<f64> = row.iter().map(|z| -z / temperature).collect();
        let lp = log_softmax_rows(&inv, self.concepts);
        sample_cdf(&cdf_rows(&lp, self.concepts), r)
    }
}

fn log_softmax_rows(logits: &[f64], n: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(logits.len());
    for row in logits.chunks(n) {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
        out.extend(row.iter().map(|z| z - lse));
    }
    out
}

fn cdf_rows(log_probs: &[f64], n: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(log_probs.len());
    for row in log_probs.chunks(n) {
        let mut acc = 0.0;
        out.extend(row.iter().map(|lp| {
            acc += lp.exp();
            acc
        }));
    }
    out
}

fn sample_cdf(cdf: &[f64], r: &mut ChaCha8Rng) -> u32 {
    let total = *cdf.last().unwrap();
    let u = r.random::<f64>() * total;
    cdf.iter().position(|&c| u < c).unwrap_or(cdf.len() - 1) as u32
}

/// Concept ids per sentence for one story.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LatentStory {
    pub sentences: Vec<Vec<u32>>,
}

impl LatentStory {
    pub fn last_concept_before(&self, sentence: usize) -> Option<u32> {
        self.sentences[..sentence]
            .iter()
            .rev()
            .find_map(|s| s.last().copied())
    }
}

/// Walks the chain for one story; the first concept is uniform.
pub fn latent_story(
    cfg: &SynthConfig,
    chain: &MarkovChain,
    domain: &str,
    ordinal: u64,
) -> LatentStory {
    let mut r = rng::stream(cfg.seed, domain, ordinal);
    let len = cfg.sentence_len as usize;
    let mut prev = r.random_range(0..cfg.concept_count);
    let mut first = true;
    let sentences = (0..cfg.sentences_per_story)
        .map(|_| {
            (0..len)
                .map(|_| {
                    if !first {
                        prev = chain.sample(prev, &mut r);
                    }
                    first = false;
                    prev
                })
                .collect()
        })
        .collect();
    LatentStory { sentences }
}

/// Maps latent concepts to unit ids in either language.
#[derive(Clone, Debug)]
pub struct Realizer {
    units_per_concept: u32,
    l2_order: WordOrder,
    languages: [String; 2],
}

impl Realizer {
    pub fn new(cfg: &SynthConfig) -> Self {
        Realizer {
            units_per_concept: cfg.units_per_concept,
            l2_order: cfg.l2_order,
            languages: cfg.languages.clone(),
        }
    }

    pub fn lang(&self, slot: usize) -> &str {
        &self.languages[slot]
    }

    /// The n-gram realizing `concept` in language slot 0 or 1.
    pub fn ngram(&self, concept: u32, slot: usize) -> impl Iterator<Item = u32> {
        let g = self.units_per_concept;
        let base = (2 * concept + slot as u32) * g;
        base..base + g
    }

    /// Concept order in the surface string for language `slot`.
    pub fn surface_order(&self, concepts: &[u32], slot: usize) -> Vec<u32> {
        let mut order = concepts.to_vec();
        if slot == 1 && self.l2_order == WordOrder::Reversed {
            order.reverse();
        }
        order
    }

    pub fn units(&self, concepts: &[u32], slot: usize) -> Vec<u32> {
        self.surface_order(concepts, slot)
            .into_iter()
            .flat_map(|c| self.ngram(c, slot))
            .collect()
    }

    pub fn sentence(&self, story_id: &str, idx: u32, concepts: &[u32], slot: usize) -> UnitSentence {
        UnitSentence {
            story_id: story_id.to_string(),
            lang: self.languages[slot].clone(),
            idx,
            units: self.units(concepts, slot),
        }
    }

    pub fn story(&self, story_id: &str, latent: &[Vec<u32>], slot: usize) -> Story {
        Story {
            story_id: story_id.to_string(),
            lang: self.languages[slot].clone(),
            sentences: latent
                .iter()
                .enumerate()
                .map(|(i, c)| self.sentence(story_id, i as u32 + 1, c, slot))
                .collect(),
        }
    }
}

pub fn train_story_id(ordinal: u64) -> String {
    format!("s{ordinal:06}")
}

/// Generates `story_count` stories under `domain`, each rendered in both
/// languages and aligned.
pub fn generate_corpus_in(cfg: &SynthConfig, domain: &str) -> Result<Corpus> {
    cfg.validate()?;
    let chain = MarkovChain::from_config(cfg);
    let realizer = Realizer::new(cfg);
    let n = cfg.story_count as usize;
    let mut l1 = Vec::with_capacity(n);
    let mut l2 = Vec::with_capacity(n);
    for o in 0..n as u64 {
        let latent = latent_story(cfg, &chain, domain, o);
        let id = match domain {
            "train" => train_story_id(o),
            _ => format!("{domain}-{o:06}"),
        };
        l1.push(realizer.story(&id, &latent.sentences, 0));
        l2.push(realizer.story(&id, &latent.sentences, 1));
    }
    let alignments = (0..n).map(|i| Alignment { l1: i, l2: n + i }).collect();
    l1.extend(l2);
    Corpus::new(cfg.vocab, cfg.languages.to_vec(), l1, alignments)
}

pub fn generate_parallel_corpus(cfg: &SynthConfig) -> Result<Corpus> {
    generate_corpus_in(cfg, "train")
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClozeKind {
    Story,
    Topic,
}

impl ClozeKind {
    fn tag(self) -> &'static str {
        match self {
            ClozeKind::Story => "sc",
            ClozeKind::Topic => "tc",
        }
    }
}

impl From<ClozeKind> for EvalKind {
    fn from(k: ClozeKind) -> Self {
        match k {
            ClozeKind::Story => EvalKind::Story,
            ClozeKind::Topic => EvalKind::Topic,
        }
    }
}

const PROMPT_SENTENCES: usize = 4;
const DISTRACTOR_ATTEMPTS: usize = 64;

/// Builds `item_count` base cloze items, each emitted in four variants:
/// l1→l1, l2→l2, l1→l2, l2→l1 (prompt language → ending language).
///
/// Endings of every variant are realized from the same latent sentence, so
/// cross-lingual endings are exact translations of the monolingual ones.
pub fn generate_cloze(cfg: &SynthConfig, kind: ClozeKind, item_count: usize) -> Result<Vec<EvalItem>> {
    cfg.validate()?;
    if (cfg.sentences_per_story as usize) < PROMPT_SENTENCES + 1 {
        return Err(Error::Config(format!(
            "cloze items need stories of at least {} sentences",
            PROMPT_SENTENCES + 1
        )));
    }
    if kind == ClozeKind::Topic && item_count < 2 {
        return Err(Error::InsufficientStories(
            "topic negatives need at least two stories".into(),
        ));
    }
    let chain = MarkovChain::from_config(cfg);
    let realizer = Realizer::new(cfg);
    let domain = format!("cloze-{}", kind.tag());

    // (latent, distractor concepts, distractor source ordinal)
    let mut bases: Vec<(LatentStory, Vec<u32>, usize)> = Vec::with_capacity(item_count);
    match kind {
        ClozeKind::Topic => {
            let latents: Vec<LatentStory> = (0..item_count as u64)
                .map(|o| latent_story(cfg, &chain, &domain, o))
                .collect();
            for (i, latent) in latents.iter().enumerate() {
                let mut r = rng::stream(cfg.seed, "cloze-tc-negative", i as u64);
                let ending = &latent.sentences[PROMPT_SENTENCES];
                let mut j = i;
                for _ in 0..DISTRACTOR_ATTEMPTS {
                    let pick = r.random_range(0..item_count - 1);
                    j = if pick >= i { pick + 1 } else { pick };
                    if latents[j].sentences[PROMPT_SENTENCES] != *ending {
                        break;
                    }
                }
                let distractor = latents[j].sentences[PROMPT_SENTENCES].clone();
                bases.push((latent.clone(), distractor, j));
            }
        }
        ClozeKind::Story => {
            let mut ordinal = 0u64;
            while bases.len() < item_count {
                let latent = latent_story(cfg, &chain, &domain, ordinal);
                let mut r = rng::stream(cfg.seed, "cloze-sc-negative", ordinal);
                if let Some(d) = story_distractor(cfg, &chain, &latent, &mut r) {
                    let i = bases.len();
                    bases.push((latent, d, i));
                }
                ordinal += 1;
            }
        }
    }

    let variants = [(0, 0), (1, 1), (0, 1), (1, 0)];
    let mut items = Vec::with_capacity(4 * item_count);
    for (i, (latent, distractor, source)) in bases.iter().enumerate() {
        let story_id = format!("{}-{i:05}", kind.tag());
        let source_id = format!("{}-{source:05}", kind.tag());
        let mut r = rng::stream(cfg.seed, "cloze-label", i as u64);
        for &(p, e) in &variants {
            let prompt = latent.sentences[..PROMPT_SENTENCES]
                .iter()
                .enumerate()
                .map(|(k, c)| realizer.sentence(&story_id, k as u32 + 1, c, p))
                .collect();
            let idx = PROMPT_SENTENCES as u32 + 1;
            items.push(EvalItem {
                id: format!("{story_id}-{}-{}", realizer.lang(p), realizer.lang(e)),
                kind: kind.into(),
                prompt,
                true_ending: realizer.sentence(&story_id, idx, &latent.sentences[PROMPT_SENTENCES], e),
                distractor: realizer.sentence(&source_id, idx, distractor, e),
                prompt_lang: realizer.lang(p).to_string(),
                ending_lang: realizer.lang(e).to_string(),
                label: r.random_range(0..2),
            });
        }
    }
    Ok(items)
}

/// Resamples the ending's concepts from the inverted chain until the path is
/// strictly less likely than the true ending; falls back to the least likely
/// path overall. Returns `None` when no strictly less likely path exists.
fn story_distractor(
    cfg: &SynthConfig,
    chain: &MarkovChain,
    latent: &LatentStory,
    r: &mut ChaCha8Rng,
) -> Option<Vec<u32>> {
    let from = latent.last_concept_before(PROMPT_SENTENCES)?;
    let truth = &latent.sentences[PROMPT_SENTENCES];
    let true_lp = chain.path_log_prob(from, truth);
    for _ in 0..DISTRACTOR_ATTEMPTS {
        let mut prev = from;
        let cand: Vec<u32> = truth
            .iter()
            .map(|_| {
                prev = chain.sample_inverted(prev, cfg.distractor_temperature, r);
                prev
            })
            .collect();
        if chain.path_log_prob(from, &cand) < true_lp {
            return Some(cand);
        }
    }
    let cand = least_likely_path(chain, from, truth.len());
    (chain.path_log_prob(from, &cand) < true_lp).then_some(cand)
}

fn least_likely_path(chain: &MarkovChain, from: u32, len: usize) -> Vec<u32> {
    let n = chain.concept_count();
    // best[c]: lowest log-prob of a path of the current length ending in c
    let mut best: Vec<f64> = (0..n).map(|c| chain.log_prob(from, c as u32)).collect();
    let mut back: Vec<Vec<usize>> = Vec::with_capacity(len);
    for _ in 1..len {
        let mut next = vec![f64::INFINITY; n];
        let mut arg = vec![0usize; n];
        for (to, slot) in next.iter_mut().enumerate() {
            for (prev, &b) in best.iter().enumerate() {
                let v = b + chain.log_prob(prev as u32, to as u32);
                if v < *slot {
                    *slot = v;
                    arg[to] = prev;
                }
            }
        }
        back.push(arg);
        best = next;
    }
    let mut c = (0..n)
        .min_by(|&a, &b| best[a].total_cmp(&best[b]))
        .unwrap();
    let mut path = vec![c as u32];
    for arg in back.iter().rev() {
        c = arg[c];
        path.push(c as u32);
    }
    path.reverse();
    path
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairKind {
    /// One concept's n-gram order reversed.
    Syntax,
    /// One unit of one n-gram swapped for a reserved nonce id.
    Lexical,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MinimalPair {
    pub kind: PairKind,
    pub positive: UnitSentence,
    pub negative: UnitSentence,
}

impl MinimalPair {
    pub fn into_eval_item(self, id: String) -> EvalItem {
        let lang = self.positive.lang.clone();
        EvalItem {
            id,
            kind: match self.kind {
                PairKind::Syntax => EvalKind::Syntax,
                PairKind::Lexical => EvalKind::Lexical,
            },
            prompt: Vec::new(),
            true_ending: self.positive,
            distractor: self.negative,
            prompt_lang: lang.clone(),
            ending_lang: lang,
            label: 0,
        }
    }
}

/// Emits `item_count` grammatical sentences per language, each paired with
/// a minimally different ungrammatical one.
pub fn generate_minimal_pairs(cfg: &SynthConfig, kind: PairKind, item_count: usize) -> Result<Vec<MinimalPair>> {
    cfg.validate()?;
    let g = cfg.units_per_concept as usize;
    let reserved = cfg.reserved_ids();
    match kind {
        PairKind::Syntax if g < 2 => {
            return Err(Error::Config(
                "syntax pairs need units_per_concept >= 2".into(),
            ))
        }
        PairKind::Lexical if reserved.is_empty() => return Err(Error::NoReservedIds),
        _ => {}
    }
    let chain = MarkovChain::from_config(cfg);
    let realizer = Realizer::new(cfg);
    let domain = match kind {
        PairKind::Syntax => "pairs-syntax",
        PairKind::Lexical => "pairs-lexical",
    };
    let one_sentence = SynthConfig {
        sentences_per_story: 1,
        ..cfg.clone()
    };
    let mut pairs = Vec::with_capacity(2 * item_count);
    for i in 0..item_count as u64 {
        let latent = latent_story(&one_sentence, &chain, domain, i);
        let concepts = &latent.sentences[0];
        let story_id = format!("{domain}-{i:05}");
        for slot in 0..2 {
            let mut r = rng::stream(cfg.seed, domain, (i << 1) | slot as u64);
            let positive = realizer.sentence(&story_id, 1, concepts, slot);
            let mut negative = positive.clone();
            let at = r.random_range(0..concepts.len()) * g;
            match kind {
                PairKind::Syntax => negative.units[at..at + g].reverse(),
                PairKind::Lexical => {
                    let pos = at + r.random_range(0..g);
                    negative.units[pos] = r.random_range(reserved.clone());
                }
            }
            pairs.push(MinimalPair {
                kind,
                positive,
                negative,
            });
        }
    }
    Ok(pairs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    fn small() -> SynthConfig {
        SynthConfig {
            concept_count: 4,
            units_per_concept: 2,
            sentence_len: 3,
            sentences_per_story: 2,
            story_count: 1,
            vocab: VocabSpec::new(20, false).unwrap(),
            seed: 7,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn capacity_is_checked() {
        let cfg = SynthConfig {
            concept_count: 5,
            ..small()
        };
        assert!(cfg.validate().is_ok());
        let cfg = SynthConfig {
            concept_count: 6,
            ..small()
        };
        assert!(matches!(
            generate_parallel_corpus(&cfg),
            Err(Error::VocabCapacity { needed: 24, available: 20 })
        ));
    }

    #[test]
    fn surface_vocabularies_are_disjoint() {
        let corpus = generate_parallel_corpus(&small()).unwrap();
        assert_eq!(corpus.alignments().len(), 1);
        let pair = corpus.pair(0);
        let set = |s: &Story| -> HashSet<u32> {
            s.sentences.iter().flat_map(|x| x.units.iter().copied()).collect()
        };
        assert!(set(pair.l1_story).is_disjoint(&set(pair.l2_story)));
        assert_eq!(pair.l1_story.sentences.len(), 2);
        assert!(pair.l1_story.sentences.iter().all(|s| s.units.len() == 6));
    }

    #[test]
    fn generation_is_deterministic() {
        let cfg = SynthConfig {
            story_count: 20,
            sentences_per_story: 5,
            ..small()
        };
        assert_eq!(
            generate_parallel_corpus(&cfg).unwrap(),
            generate_parallel_corpus(&cfg).unwrap()
        );
        assert_eq!(
            generate_cloze(&cfg, ClozeKind::Story, 5).unwrap(),
            generate_cloze(&cfg, ClozeKind::Story, 5).unwrap()
        );
        assert_eq!(
            generate_minimal_pairs(&cfg, PairKind::Lexical, 5).unwrap(),
            generate_minimal_pairs(&cfg, PairKind::Lexical, 5).unwrap()
        );
    }

    #[test]
    fn different_seeds_differ() {
        let a = SynthConfig {
            story_count: 10,
            ..small()
        };
        let b = SynthConfig { seed: 8, ..a.clone() };
        assert_ne!(
            generate_parallel_corpus(&a).unwrap(),
            generate_parallel_corpus(&b).unwrap()
        );
    }

    #[test]
    fn cloze_needs_five_sentences() {
        assert!(matches!(
            generate_cloze(&small(), ClozeKind::Topic, 4),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn topic_cloze_needs_two_stories() {
        let cfg = SynthConfig {
            sentences_per_story: 5,
            ..small()
        };
        assert!(matches!(
            generate_cloze(&cfg, ClozeKind::Topic, 1),
            Err(Error::InsufficientStories(_))
        ));
    }

    #[test]
    fn topic_cloze_shapes() {
        let cfg = SynthConfig {
            sentences_per_story: 5,
            concept_count: 8,
            vocab: VocabSpec::new(40, false).unwrap(),
            ..small()
        };
        let items = generate_cloze(&cfg, ClozeKind::Topic, 10).unwrap();
        assert_eq!(items.len(), 40);
        for item in &items {
            assert_eq!(item.prompt.len(), 4);
            assert_ne!(item.distractor.story_id, item.prompt[0].story_id);
            assert_eq!(item.true_ending.lang, item.ending_lang);
            assert_eq!(item.distractor.lang, item.ending_lang);
            assert!(item.prompt.iter().all(|s| s.lang == item.prompt_lang));
        }
        let conditions: HashSet<(String, String)> = items
            .iter()
            .map(|i| (i.prompt_lang.clone(), i.ending_lang.clone()))
            .collect();
        assert_eq!(conditions.len(), 4);
    }

    #[test]
    fn least_likely_path_is_minimal() {
        let cfg = SynthConfig {
            concept_count: 5,
            vocab: VocabSpec::new(40, false).unwrap(),
            ..small()
        };
        let chain = MarkovChain::from_config(&cfg);
        let found = chain.path_log_prob(2, &least_likely_path(&chain, 2, 3));
        let mut brute = f64::INFINITY;
        for a in 0..5 {
            for b in 0..5 {
                for c in 0..5 {
                    brute = brute.min(chain.path_log_prob(2, &[a, b, c]));
                }
            }
        }
        assert!((found - brute).abs() < 1e-12);
    }

    #[test]
    fn minimal_pair_errors() {
        let cfg = SynthConfig {
            concept_count: 5,
            ..small()
        };
        assert!(matches!(
            generate_minimal_pairs(&cfg, PairKind::Lexical, 3),
            Err(Error::NoReservedIds)
        ));
        let cfg = SynthConfig {
            units_per_concept: 1,
            ..small()
        };
        assert!(matches!(
            generate_minimal_pairs(&cfg, PairKind::Syntax, 3),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn syntax_pairs_keep_the_multiset() {
        let pairs = generate_minimal_pairs(&small(), PairKind::Syntax, 50).unwrap();
        assert_eq!(pairs.len(), 100);
        for p in pairs {
            let mut a = p.positive.units.clone();
            let mut b = p.negative.units.clone();
            assert_ne!(a, b);
            a.sort_unstable();
            b.sort_unstable();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn lexical_pairs_differ_in_one_place() {
        let pairs = generate_minimal_pairs(&small(), PairKind::Lexical, 50).unwrap();
        let reserved = small().reserved_ids();
        for p in pairs {
            let diffs: Vec<usize> = (0..p.positive.units.len())
                .filter(|&i| p.positive.units[i] != p.negative.units[i])
                .collect();
            assert_eq!(diffs.len(), 1);
            assert!(reserved.contains(&p.negative.units[diffs[0]]));
        }
    }
}
