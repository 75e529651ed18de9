//! Bilingual discrete-unit corpora: data model, on-disk format and validation.
//!
//! A corpus directory holds one `manifest.json` plus one line-delimited JSON
//! sentence file per language. Each line of a sentence file is a single
//! [`UnitSentence`] record:
//!
//! ```text
//! {"story_id":"s000001","lang":"en","idx":1,"units":[4,5,12,13]}
//! ```
//!
//! Records of one story are consecutive and numbered `1..=n`. Stories are
//! aligned across languages by `story_id`; sentence `j` of one language
//! corresponds to sentence `j` of the other.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";
const MANIFEST_FORMAT: &str = "xlsm-corpus";
const MANIFEST_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct VocabSpec {
    /// Number of unit ids produced by the tokenizer (`K`).
    pub size: u32,
    /// When set, id `K` is reserved as a beginning-of-sequence marker.
    #[serde(default)]
    pub bos_enabled: bool,
}

impl Default for VocabSpec {
    fn default() -> Self {
        VocabSpec {
            size: 2048,
            bos_enabled: false,
        }
    }
}

impl VocabSpec {
    pub fn new(size: u32, bos_enabled: bool) -> Result<Self> {
        let spec = VocabSpec { size, bos_enabled };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.size < 2 {
            return Err(Error::Config(format!(
                "vocabulary size must be at least 2, got {}",
                self.size
            )));
        }
        Ok(())
    }

    pub fn bos_id(&self) -> Option<u32> {
        self.bos_enabled.then_some(self.size)
    }

    /// Size of the model vocabulary, including BOS when enabled.
    pub fn effective_size(&self) -> usize {
        self.size as usize + usize::from(self.bos_enabled)
    }
}

/// One sentence of one story in one language, as a sequence of unit ids.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct UnitSentence {
    pub story_id: String,
    pub lang: String,
    pub idx: u32,
    pub units: Vec<u32>,
}

impl UnitSentence {
    fn check(&self, vocab: &VocabSpec, context: impl Fn() -> String) -> Result<()> {
        if self.units.is_empty() {
            return Err(Error::EmptySentence { context: context() });
        }
        if let Some(&id) = self.units.iter().find(|&&id| id >= vocab.size) {
            return Err(Error::UnitOutOfRange {
                context: context(),
                id,
                vocab_size: vocab.size,
            });
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Story {
    pub story_id: String,
    pub lang: String,
    pub sentences: Vec<UnitSentence>,
}

impl Story {
    /// Builds a story, checking that every sentence carries the story's id and
    /// language and that indices run `1..=n`.
    pub fn new(story_id: String, lang: String, sentences: Vec<UnitSentence>) -> Result<Self> {
        for (pos, s) in sentences.iter().enumerate() {
            if s.story_id != story_id || s.lang != lang {
                return Err(Error::InvalidPair(format!(
                    "sentence {}/{} filed under story {story_id}/{lang}",
                    s.story_id, s.lang
                )));
            }
            let expected = pos as u32 + 1;
            if s.idx != expected {
                return Err(Error::NonContiguousIndex {
                    story_id,
                    lang,
                    expected,
                    found: s.idx,
                });
            }
        }
        Ok(Story {
            story_id,
            lang,
            sentences,
        })
    }

    pub fn token_count(&self) -> usize {
        self.sentences.iter().map(|s| s.units.len()).sum()
    }
}

/// Two renditions of the same story, sentence-aligned.
#[derive(Clone, Copy, Debug)]
pub struct AlignedStoryPair<'a> {
    pub l1_story: &'a Story,
    pub l2_story: &'a Story,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum AlignmentViolation {
    StoryIdMismatch { l1: String, l2: String },
    LanguagesIdentical(String),
    SentenceCountMismatch { l1: usize, l2: usize },
    IndexGap { lang: String, position: usize, found: u32 },
}

impl fmt::Display for AlignmentViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AlignmentViolation::StoryIdMismatch { l1, l2 } => {
                write!(f, "story id mismatch {l1}≠{l2}")
            }
            AlignmentViolation::LanguagesIdentical(lang) => {
                write!(f, "languages identical ({lang})")
            }
            AlignmentViolation::SentenceCountMismatch { l1, l2 } => {
                write!(f, "sentence count mismatch {l1}≠{l2}")
            }
            AlignmentViolation::IndexGap {
                lang,
                position,
                found,
            } => write!(
                f,
                "index gap in {lang}: sentence {} has idx {found}",
                position + 1
            ),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ValidationReport {
    pub violations: Vec<AlignmentViolation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let msgs: Vec<String> = self.violations.iter().map(|v| v.to_string()).collect();
        f.write_str(&msgs.join("; "))
    }
}

pub fn validate_alignment(pair: AlignedStoryPair<'_>) -> ValidationReport {
    let (a, b) = (pair.l1_story, pair.l2_story);
    let mut violations = Vec::new();
    if a.story_id != b.story_id {
        violations.push(AlignmentViolation::StoryIdMismatch {
            l1: a.story_id.clone(),
            l2: b.story_id.clone(),
        });
    }
    if a.lang == b.lang {
        violations.push(AlignmentViolation::LanguagesIdentical(a.lang.clone()));
    }
    if a.sentences.len() != b.sentences.len() {
        violations.push(AlignmentViolation::SentenceCountMismatch {
            l1: a.sentences.len(),
            l2: b.sentences.len(),
        });
    }
    for story in [a, b] {
        for (position, s) in story.sentences.iter().enumerate() {
            if s.idx as usize != position + 1 {
                violations.push(AlignmentViolation::IndexGap {
                    lang: story.lang.clone(),
                    position,
                    found: s.idx,
                });
            }
        }
    }
    ValidationReport { violations }
}

/// Indices of an aligned pair within [`Corpus::stories`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Alignment {
    pub l1: usize,
    pub l2: usize,
}

/// An in-memory corpus. Immutable once built; every invariant is checked by
/// [`Corpus::new`].
#[derive(Clone, Debug, PartialEq)]
pub struct Corpus {
    vocab: VocabSpec,
    languages: Vec<String>,
    stories: Vec<Story>,
    alignments: Vec<Alignment>,
    index: HashMap<(String, String), usize>,
}

impl Corpus {
    pub fn new(
        vocab: VocabSpec,
        languages: Vec<String>,
        stories: Vec<Story>,
        alignments: Vec<Alignment>,
    ) -> Result<Self> {
        vocab.validate()?;
        let mut index = HashMap::with_capacity(stories.len());
        for (i, story) in stories.iter().enumerate() {
            if !languages.contains(&story.lang) {
                return Err(Error::Manifest(format!(
                    "story {} uses undeclared language {}",
                    story.story_id, story.lang
                )));
            }
            for s in &story.sentences {
                s.check(&vocab, || {
                    format!("story {} ({}) sentence {}", s.story_id, s.lang, s.idx)
                })?;
            }
            if index
                .insert((story.lang.clone(), story.story_id.clone()), i)
                .is_some()
            {
                return Err(Error::Manifest(format!(
                    "duplicate story {} in {}",
                    story.story_id, story.lang
                )));
            }
        }
        for al in &alignments {
            if al.l1 >= stories.len() || al.l2 >= stories.len() {
                return Err(Error::Manifest("alignment index out of range".into()));
            }
            let report = validate_alignment(AlignedStoryPair {
                l1_story: &stories[al.l1],
                l2_story: &stories[al.l2],
            });
            if !report.is_valid() {
                return Err(Error::InvalidPair(format!(
                    "story {}: {report}",
                    stories[al.l1].story_id
                )));
            }
        }
        Ok(Corpus {
            vocab,
            languages,
            stories,
            alignments,
            index,
        })
    }

    pub fn vocab(&self) -> &VocabSpec {
        &self.vocab
    }

    pub fn languages(&self) -> &[String] {
        &self.languages
    }

    pub fn stories(&self) -> &[Story] {
        &self.stories
    }

    pub fn stories_in<'a>(&'a self, lang: &'a str) -> impl Iterator<Item = &'a Story> + 'a {
        self.stories.iter().filter(move |s| s.lang == lang)
    }

    pub fn story(&self, lang: &str, story_id: &str) -> Option<&Story> {
        self.index
            .get(&(lang.to_string(), story_id.to_string()))
            .map(|&i| &self.stories[i])
    }

    pub fn alignments(&self) -> &[Alignment] {
        &self.alignments
    }

    pub fn pair(&self, i: usize) -> AlignedStoryPair<'_> {
        let al = self.alignments[i];
        AlignedStoryPair {
            l1_story: &self.stories[al.l1],
            l2_story: &self.stories[al.l2],
        }
    }

    pub fn pairs(&self) -> impl Iterator<Item = AlignedStoryPair<'_>> + '_ {
        (0..self.alignments.len()).map(move |i| self.pair(i))
    }

    pub fn sentence_count(&self) -> usize {
        self.stories.iter().map(|s| s.sentences.len()).sum()
    }

    pub fn token_count(&self) -> usize {
        self.stories.iter().map(Story::token_count).sum()
    }

    pub fn manifest(&self) -> CorpusManifest {
        let languages = self
            .languages
            .iter()
            .map(|lang| {
                let stories: Vec<&Story> = self.stories_in(lang).collect();
                LanguageEntry {
                    lang: lang.clone(),
                    sentence_file: sentence_file_name(lang),
                    stories: stories.iter().map(|s| s.story_id.clone()).collect(),
                    story_count: stories.len(),
                    sentence_count: stories.iter().map(|s| s.sentences.len()).sum(),
                    token_count: stories.iter().map(|s| s.token_count() as u64).sum(),
                }
            })
            .collect();
        let alignments = self
            .alignments
            .iter()
            .map(|al| AlignmentEntry {
                story_id: self.stories[al.l1].story_id.clone(),
                l1: self.stories[al.l1].lang.clone(),
                l2: self.stories[al.l2].lang.clone(),
            })
            .collect();
        CorpusManifest {
            format: MANIFEST_FORMAT.to_string(),
            version: MANIFEST_VERSION,
            vocab: self.vocab,
            languages,
            alignments,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub format: String,
    pub version: u32,
    pub vocab: VocabSpec,
    pub languages: Vec<LanguageEntry>,
    pub alignments: Vec<AlignmentEntry>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LanguageEntry {
    pub lang: String,
    pub sentence_file: String,
    pub stories: Vec<String>,
    pub story_count: usize,
    pub sentence_count: usize,
    pub token_count: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AlignmentEntry {
    pub story_id: String,
    pub l1: String,
    pub l2: String,
}

pub fn sentence_file_name(lang: &str) -> String {
    format!("sentences.{lang}.jsonl")
}

pub fn save_corpus(corpus: &Corpus, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let manifest = corpus.manifest();
    for entry in &manifest.languages {
        let path = dir.join(&entry.sentence_file);
        let file = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
        let mut w = BufWriter::new(file);
        for story in corpus.stories_in(&entry.lang) {
            for s in &story.sentences {
                serde_json::to_writer(&mut w, s)?;
                w.write_all(b"\n").map_err(|e| Error::io(&path, e))?;
            }
        }
        w.flush().map_err(|e| Error::io(&path, e))?;
    }
    let path = dir.join(MANIFEST_FILE);
    let mut text = serde_json::to_string_pretty(&manifest)?;
    text.push('\n');
    fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

pub fn load_corpus(dir: &Path) -> Result<Corpus> {
    let manifest_path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    let manifest: CorpusManifest =
        serde_json::from_str(&text).map_err(|e| Error::MalformedRecord {
            path: manifest_path.clone(),
            line: e.line(),
            reason: e.to_string(),
        })?;
    if manifest.format != MANIFEST_FORMAT || manifest.version != MANIFEST_VERSION {
        return Err(Error::Manifest(format!(
            "unsupported format {} v{}",
            manifest.format, manifest.version
        )));
    }
    manifest.vocab.validate()?;

    let mut stories = Vec::new();
    for entry in &manifest.languages {
        let loaded = read_sentence_file(&dir.join(&entry.sentence_file), &entry.lang, &manifest.vocab)?;
        let ids: Vec<&String> = loaded.iter().map(|s| &s.story_id).collect();
        if ids.len() != entry.stories.len() || ids.iter().zip(&entry.stories).any(|(a, b)| *a != b) {
            return Err(Error::Manifest(format!(
                "story index for {} does not match {}",
                entry.lang, entry.sentence_file
            )));
        }
        let sentences: usize = loaded.iter().map(|s| s.sentences.len()).sum();
        let tokens: u64 = loaded.iter().map(|s| s.token_count() as u64).sum();
        if loaded.len() != entry.story_count
            || sentences != entry.sentence_count
            || tokens != entry.token_count
        {
            return Err(Error::Manifest(format!(
                "{} counts declared ({}, {}, {}) but found ({}, {sentences}, {tokens})",
                entry.lang,
                entry.story_count,
                entry.sentence_count,
                entry.token_count,
                loaded.len()
            )));
        }
        stories.extend(loaded);
    }

    let lookup: HashMap<(&str, &str), usize> = stories
        .iter()
        .enumerate()
        .map(|(i, s)| ((s.lang.as_str(), s.story_id.as_str()), i))
        .collect();
    let mut alignments = Vec::with_capacity(manifest.alignments.len());
    for al in &manifest.alignments {
        let resolve = |lang: &str| {
            lookup
                .get(&(lang, al.story_id.as_str()))
                .copied()
                .ok_or_else(|| Error::MissingAlignmentTarget {
                    story_id: al.story_id.clone(),
                    lang: lang.to_string(),
                })
        };
        alignments.push(Alignment {
            l1: resolve(&al.l1)?,
            l2: resolve(&al.l2)?,
        });
    }
    let languages = manifest.languages.iter().map(|e| e.lang.clone()).collect();
    Corpus::new(manifest.vocab, languages, stories, alignments)
}

fn read_sentence_file(path: &Path, lang: &str, vocab: &VocabSpec) -> Result<Vec<Story>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut stories: Vec<Story> = Vec::new();
    let mut seen = HashSet::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line_no = n + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        let malformed = |reason: String| Error::MalformedRecord {
            path: path.to_path_buf(),
            line: line_no,
            reason,
        };
        if line.trim().is_empty() {
            return Err(malformed("blank line".into()));
        }
        let rec: UnitSentence =
            serde_json::from_str(&line).map_err(|e| malformed(e.to_string()))?;
        if rec.lang != lang {
            return Err(malformed(format!(
                "record language {} in {lang} file",
                rec.lang
            )));
        }
        rec.check(vocab, || format!("{}:{line_no}", path.display()))?;
        let continues = stories
            .last()
            .is_some_and(|s: &Story| s.story_id == rec.story_id);
        if continues {
            let story = stories.last_mut().unwrap();
            let expected = story.sentences.len() as u32 + 1;
            if rec.idx != expected {
                return Err(Error::NonContiguousIndex {
                    story_id: rec.story_id,
                    lang: rec.lang,
                    expected,
                    found: rec.idx,
                });
            }
            story.sentences.push(rec);
        } else {
            if !seen.insert(rec.story_id.clone()) {
                return Err(malformed(format!(
                    "story {} is not contiguous in the file",
                    rec.story_id
                )));
            }
            if rec.idx != 1 {
                return Err(Error::NonContiguousIndex {
                    story_id: rec.story_id,
                    lang: rec.lang,
                    expected: 1,
                    found: rec.idx,
                });
            }
            stories.push(Story {
                story_id: rec.story_id.clone(),
                lang: rec.lang.clone(),
                sentences: vec![rec],
            });
        }
    }
    Ok(stories)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LanguageStats {
    pub lang: String,
    pub stories: usize,
    pub sentences: usize,
    pub tokens: usize,
    pub min_len: usize,
    pub avg_len: f64,
    pub max_len: usize,
}

/// Per-language counts, in the corpus' language order. Languages without
/// sentences report zeros (including the average).
pub fn corpus_stats(corpus: &Corpus) -> Vec<LanguageStats> {
    corpus
        .languages()
        .iter()
        .map(|lang| {
            let mut st = LanguageStats {
                lang: lang.clone(),
                stories: 0,
                sentences: 0,
                tokens: 0,
                min_len: 0,
                avg_len: 0.0,
                max_len: 0,
            };
            let mut min_len = usize::MAX;
            for story in corpus.stories_in(lang) {
                st.stories += 1;
                for s in &story.sentences {
                    st.sentences += 1;
                    st.tokens += s.units.len();
                    min_len = min_len.min(s.units.len());
                    st.max_len = st.max_len.max(s.units.len());
                }
            }
            if st.sentences > 0 {
                st.min_len = min_len;
                st.avg_len = st.tokens as f64 / st.sentences as f64;
            }
            st
        })
        .collect()
}

pub fn render_stats(stats: &[LanguageStats]) -> String {
    let mut out = format!(
        "{:<6} {:>8} {:>10} {:>10} {:>6} {:>8} {:>6}\n",
        "lang", "stories", "sentences", "tokens", "min", "avg", "max"
    );
    for s in stats {
        out.push_str(&format!(
            "{:<6} {:>8} {:>10} {:>10} {:>6} {:>8.2} {:>6}\n",
            s.lang, s.stories, s.sentences, s.tokens, s.min_len, s.avg_len, s.max_len
        ));
    }
    out
}
