//! Pairwise log-likelihood benchmarks: the model must prefer the true ending
//! over a distractor, per (kind, prompt language → ending language).

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::UnitSentence;
use crate::error::{Error, Result};
use crate::model::{sequence_logprob, ModelParams, Scalar, ScoreOptions};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalKind {
    Story,
    Topic,
    Syntax,
    Lexical,
}

impl EvalKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EvalKind::Story => "story",
            EvalKind::Topic => "topic",
            EvalKind::Syntax => "syntax",
            EvalKind::Lexical => "lexical",
        }
    }
}

impl fmt::Display for EvalKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EvalItem {
    pub id: String,
    pub kind: EvalKind,
    pub prompt: Vec<UnitSentence>,
    pub true_ending: UnitSentence,
    pub distractor: UnitSentence,
    pub prompt_lang: String,
    pub ending_lang: String,
    /// Position of the true ending in the on-disk `endings` pair.
    pub label: u8,
}

impl EvalItem {
    pub fn prompt_units(&self) -> Vec<u32> {
        self.prompt.iter().flat_map(|s| s.units.iter().copied()).collect()
    }

    pub fn validate(&self) -> std::result::Result<(), String> {
        if self.label > 1 {
            return Err(format!("label must be 0 or 1, got {}", self.label));
        }
        if matches!(self.kind, EvalKind::Story | EvalKind::Topic) && self.prompt.is_empty() {
            return Err(format!("{} items need a nonempty prompt", self.kind));
        }
        if self.true_ending.lang != self.ending_lang || self.distractor.lang != self.ending_lang {
            return Err("endings must share the ending language".into());
        }
        if self.prompt.iter().any(|s| s.lang != self.prompt_lang) {
            return Err("prompt sentences must be in the prompt language".into());
        }
        let all = self.prompt.iter().chain([&self.true_ending, &self.distractor]);
        if all.clone().any(|s| s.units.is_empty()) {
            return Err("empty sentence".into());
        }
        Ok(())
    }

    /// Longest input the model sees when scoring this item.
    pub fn scored_len(&self, bos: bool) -> usize {
        let p: usize = self.prompt.iter().map(|s| s.units.len()).sum();
        usize::from(bos) + p + self.true_ending.units.len().max(self.distractor.units.len())
    }

    fn to_record(&self) -> ItemRecord {
        let mut endings = [self.true_ending.clone(), self.distractor.clone()];
        if self.label == 1 {
            endings.swap(0, 1);
        }
        let [a, b] = endings;
        ItemRecord {
            id: self.id.clone(),
            kind: self.kind,
            prompt_lang: self.prompt_lang.clone(),
            ending_lang: self.ending_lang.clone(),
            prompt_story: self.prompt.first().map(|s| s.story_id.clone()).unwrap_or_default(),
            prompt: self.prompt.iter().map(|s| s.units.clone()).collect(),
            ending_stories: [a.story_id, b.story_id],
            ending_idx: a.idx,
            endings: [a.units, b.units],
            label: self.label,
        }
    }

    fn from_record(r: ItemRecord) -> Self {
        let sentence = |story_id: &str, lang: &str, idx: u32, units: Vec<u32>| UnitSentence {
            story_id: story_id.to_string(),
            lang: lang.to_string(),
            idx,
            units,
        };
        let prompt = r
            .prompt
            .into_iter()
            .enumerate()
            .map(|(k, u)| sentence(&r.prompt_story, &r.prompt_lang, k as u32 + 1, u))
            .collect();
        let [a, b] = r.endings;
        let mut endings = [
            sentence(&r.ending_stories[0], &r.ending_lang, r.ending_idx, a),
            sentence(&r.ending_stories[1], &r.ending_lang, r.ending_idx, b),
        ];
        if r.label == 1 {
            endings.swap(0, 1);
        }
        let [true_ending, distractor] = endings;
        EvalItem {
            id: r.id,
            kind: r.kind,
            prompt,
            true_ending,
            distractor,
            prompt_lang: r.prompt_lang,
            ending_lang: r.ending_lang,
            label: r.label,
        }
    }
}

/// One line of an items file.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ItemRecord {
    id: String,
    kind: EvalKind,
    prompt_lang: String,
    ending_lang: String,
    prompt: Vec<Vec<u32>>,
    endings: [Vec<u32>; 2],
    label: u8,
    #[serde(default)]
    prompt_story: String,
    #[serde(default)]
    ending_stories: [String; 2],
    #[serde(default = "one")]
    ending_idx: u32,
}

fn one() -> u32 {
    1
}

pub fn write_items(path: &Path, items: &[EvalItem]) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for item in items {
        serde_json::to_writer(&mut w, &item.to_record())?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_items(path: &Path) -> Result<Vec<EvalItem>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut items = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let malformed = |reason: String| Error::MalformedRecord {
            path: path.to_path_buf(),
            line: n + 1,
            reason,
        };
        let rec: ItemRecord = serde_json::from_str(&line).map_err(|e| malformed(e.to_string()))?;
        let item = EvalItem::from_record(rec);
        item.validate().map_err(malformed)?;
        items.push(item);
    }
    Ok(items)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Correct,
    Incorrect,
    Tie,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ItemScore {
    pub lp_true: f64,
    pub lp_false: f64,
    pub verdict: Verdict,
}

pub fn score_item<F: Scalar>(
    params: &ModelParams<F>,
    item: &EvalItem,
    opts: &ScoreOptions,
) -> Result<ItemScore> {
    let prompt = item.prompt_units();
    let lp_true = sequence_logprob(params, &prompt, &item.true_ending.units, opts)?;
    let lp_false = sequence_logprob(params, &prompt, &item.distractor.units, opts)?;
    let verdict = if lp_true > lp_false {
        Verdict::Correct
    } else if lp_true == lp_false {
        Verdict::Tie
    } else {
        Verdict::Incorrect
    };
    Ok(ItemScore {
        lp_true,
        lp_false,
        verdict,
    })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct BenchOptions {
    pub score: ScoreOptions,
    /// Count ties as wrong instead of half right.
    pub strict_ties: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub kind: EvalKind,
    pub prompt_lang: String,
    pub ending_lang: String,
    pub count: usize,
    pub correct: usize,
    pub ties: usize,
    /// Items dropped because they do not fit the context window.
    pub excluded: usize,
    pub accuracy: f64,
}

impl EvalResult {
    pub fn condition(&self) -> String {
        condition_label(&self.prompt_lang, &self.ending_lang)
    }
}

pub fn condition_label(prompt_lang: &str, ending_lang: &str) -> String {
    if prompt_lang == ending_lang {
        prompt_lang.to_string()
    } else {
        format!("{prompt_lang}→{ending_lang}")
    }
}

#[derive(Default)]
struct Tally {
    count: usize,
    correct: usize,
    ties: usize,
    excluded: usize,
}

/// Scores every item and aggregates by condition. Results are ordered by
/// kind, then monolingual conditions before cross-lingual ones.
pub fn run_benchmark<F: Scalar>(
    params: &ModelParams<F>,
    items: &[EvalItem],
    opts: &BenchOptions,
) -> Result<Vec<EvalResult>> {
    let ctx = params.config().context_len;
    let scores: Vec<Option<ItemScore>> = items
        .par_iter()
        .map(|item| {
            if item.scored_len(opts.score.bos.is_some()) > ctx {
                return Ok(None);
            }
            score_item(params, item, &opts.score).map(Some)
        })
        .collect::<Result<_>>()?;

    let mut tallies: BTreeMap<(EvalKind, bool, String, String), Tally> = BTreeMap::new();
    for (item, score) in items.iter().zip(&scores) {
        let key = (
            item.kind,
            item.prompt_lang != item.ending_lang,
            item.prompt_lang.clone(),
            item.ending_lang.clone(),
        );
        let t = tallies.entry(key).or_default();
        match score {
            None => t.excluded += 1,
            Some(s) => {
                t.count += 1;
                match s.verdict {
                    Verdict::Correct => t.correct += 1,
                    Verdict::Tie => t.ties += 1,
                    Verdict::Incorrect => {}
                }
            }
        }
    }

    let mut results = Vec::with_capacity(tallies.len());
    for ((kind, _, prompt_lang, ending_lang), t) in tallies {
        if t.excluded > 0 {
            log::warn!(
                "{kind} {}: {} overlong items excluded",
                condition_label(&prompt_lang, &ending_lang),
                t.excluded
            );
        }
        if t.count == 0 {
            log::warn!(
                "{kind} {}: no scorable items, condition omitted",
                condition_label(&prompt_lang, &ending_lang)
            );
            continue;
        }
        let tie_credit = if opts.strict_ties { 0.0 } else { 0.5 };
        results.push(EvalResult {
            accuracy: (t.correct as f64 + tie_credit * t.ties as f64) / t.count as f64,
            kind,
            prompt_lang,
            ending_lang,
            count: t.count,
            correct: t.correct,
            ties: t.ties,
            excluded: t.excluded,
        });
    }
    Ok(results)
}

/// Accuracy of `kind` under `condition`, if it was measured.
pub fn accuracy_of(results: &[EvalResult], kind: EvalKind, prompt_lang: &str, ending_lang: &str) -> Option<f64> {
    results
        .iter()
        .find(|r| r.kind == kind && r.prompt_lang == prompt_lang && r.ending_lang == ending_lang)
        .map(|r| r.accuracy)
}

pub fn write_results(path: &Path, results: &[EvalResult]) -> Result<()> {
    let mut out = String::new();
    for r in results {
        out.push_str(&serde_json::to_string(r)?);
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn read_results(path: &Path) -> Result<Vec<EvalResult>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, l)| {
            serde_json::from_str(l).map_err(|e| Error::MalformedRecord {
                path: path.to_path_buf(),
                line: n + 1,
                reason: e.to_string(),
            })
        })
        .collect()
}

/// Plain-text accuracy matrix: one row per (group, kind), one column per
/// condition, values in percent.
pub fn render_table(groups: &[(&str, &[EvalResult])]) -> String {
    let mut conditions: Vec<(bool, String)> = Vec::new();
    for (_, results) in groups {
        for r in results.iter() {
            let c = (r.prompt_lang != r.ending_lang, r.condition());
            if !conditions.contains(&c) {
                conditions.push(c);
            }
        }
    }
    conditions.sort();
    let group_w = groups.iter().map(|(g, _)| g.chars().count()).max().unwrap_or(0).max(5);
    let kind_w = 7;
    let col_w = conditions.iter().map(|(_, c)| c.chars().count()).max().unwrap_or(0).max(6);

    let mut out = String::new();
    let _ = write!(out, "{:<group_w$}  {:<kind_w$}", "model", "task");
    for (_, c) in &conditions {
        let _ = write!(out, "  {c:>col_w$}");
    }
    out.push('\n');
    for (group, results) in groups {
        let mut kinds: Vec<EvalKind> = results.iter().map(|r| r.kind).collect();
        kinds.sort();
        kinds.dedup();
        for kind in kinds {
            let _ = write!(out, "{group:<group_w$}  {:<kind_w$}", kind.as_str());
            for (_, c) in &conditions {
                let cell = results
                    .iter()
                    .find(|r| r.kind == kind && r.condition() == *c)
                    .map(|r| format!("{:.2}", 100.0 * r.accuracy))
                    .unwrap_or_else(|| "-".into());
                let _ = write!(out, "  {cell:>col_w$}");
            }
            out.push('\n');
        }
    }
    out
}
