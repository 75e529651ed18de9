//! Layer-wise cross-lingual alignment of pooled sentence representations.

use std::fs;
use std::ops::Range;
use std::path::Path;

use rand::seq::index;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{AlignedStoryPair, Story};
use crate::error::{Error, Result};
use crate::model::{forward, ForwardTrace, ModelParams, Scalar};
use crate::rng;

pub const POOLING: &str = "mean-over-sentence-in-story-context";

/// Mean of the hidden states over `span` at `layer` (0 is the embedding
/// output, `l` the output of block `l`).
pub fn sentence_embedding<F: Scalar>(trace: &ForwardTrace<F>, span: Range<usize>, layer: usize) -> Result<Vec<f64>> {
    if span.is_empty() {
        return Err(Error::Shape("empty span".into()));
    }
    if span.end > trace.len || layer >= trace.layer_count() {
        return Err(Error::Shape(format!(
            "span {span:?} at layer {layer} outside trace of length {} with {} layers",
            trace.len,
            trace.layer_count()
        )));
    }
    let mut acc = vec![0.0; trace.d_model];
    for pos in span.clone() {
        for (a, x) in acc.iter_mut().zip(trace.hidden_at(layer, pos)) {
            *a += x.to_f64().unwrap();
        }
    }
    let n = span.len() as f64;
    acc.iter_mut().for_each(|a| *a /= n);
    Ok(acc)
}

/// Cosine similarity; zero when either vector is zero.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let (mut ab, mut aa, mut bb) = (0.0, 0.0, 0.0);
    for (&x, &y) in a.iter().zip(b) {
        ab += x * y;
        aa += x * x;
        bb += y * y;
    }
    if aa == 0.0 || bb == 0.0 {
        return 0.0;
    }
    (ab / (aa.sqrt() * bb.sqrt())).clamp(-1.0, 1.0)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlignmentReport {
    pub pooling: String,
    pub requested: usize,
    pub pair_count: usize,
    /// Mean cosine per layer, embedding output first.
    pub per_layer: Vec<f64>,
    pub overall: f64,
}

#[derive(Serialize)]
struct LayerRecord {
    layer: usize,
    mean_cosine: f64,
}

#[derive(Serialize)]
struct SummaryRecord<'a> {
    summary: bool,
    overall: f64,
    pair_count: usize,
    requested: usize,
    pooling: &'a str,
}

impl AlignmentReport {
    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for (layer, &mean_cosine) in self.per_layer.iter().enumerate() {
            out.push_str(&serde_json::to_string(&LayerRecord { layer, mean_cosine })?);
            out.push('\n');
        }
        out.push_str(&serde_json::to_string(&SummaryRecord {
            summary: true,
            overall: self.overall,
            pair_count: self.pair_count,
            requested: self.requested,
            pooling: &self.pooling,
        })?);
        out.push('\n');
        Ok(out)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_jsonl()?).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut per_layer = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let v: serde_json::Value = serde_json::from_str(line).map_err(|e| Error::MalformedRecord {
                path: path.to_path_buf(),
                line: n + 1,
                reason: e.to_string(),
            })?;
            if v.get("summary").is_some() {
                let field = |k: &str| v.get(k).cloned().unwrap_or_default();
                return Ok(AlignmentReport {
                    pooling: field("pooling").as_str().unwrap_or_default().to_string(),
                    requested: field("requested").as_u64().unwrap_or(0) as usize,
                    pair_count: field("pair_count").as_u64().unwrap_or(0) as usize,
                    per_layer,
                    overall: field("overall").as_f64().unwrap_or(f64::NAN),
                });
            }
            per_layer.push(v["mean_cosine"].as_f64().unwrap_or(f64::NAN));
        }
        Err(Error::MalformedRecord {
            path: path.to_path_buf(),
            line: text.lines().count(),
            reason: "missing summary record".into(),
        })
    }
}

/// Sentence spans of a story's monolingual concatenation.
fn spans(story: &Story) -> Vec<Range<usize>> {
    let mut at = 0;
    story
        .sentences
        .iter()
        .map(|s| {
            at += s.units.len();
            at - s.units.len()..at
        })
        .collect()
}

fn story_embeddings<F: Scalar>(params: &ModelParams<F>, story: &Story, wanted: &[usize]) -> Result<Vec<Vec<Vec<f64>>>> {
    let spans = spans(story);
    let end = wanted.iter().map(|&j| spans[j].end).max().unwrap_or(0);
    let tokens: Vec<u32> = story
        .sentences
        .iter()
        .flat_map(|s| s.units.iter().copied())
        .take(end)
        .collect();
    let trace = forward(params, &tokens)?;
    wanted
        .iter()
        .map(|&j| {
            (0..trace.layer_count())
                .map(|l| sentence_embedding(&trace, spans[j].clone(), l))
                .collect()
        })
        .collect()
}

/// Samples up to `sample_n` aligned sentence pairs, embeds each sentence
/// within its own story and averages the per-layer cosine between the two
/// languages. Pairs whose story prefix exceeds the context are skipped.
pub fn alignment_score<F: Scalar>(
    params: &ModelParams<F>,
    pairs: &[AlignedStoryPair<'_>],
    sample_n: usize,
    seed: u64,
) -> Result<AlignmentReport> {
    let all: Vec<(usize, usize)> = pairs
        .iter()
        .enumerate()
        .flat_map(|(i, p)| (0..p.l1_story.sentences.len().min(p.l2_story.sentences.len())).map(move |j| (i, j)))
        .collect();
    if all.is_empty() {
        return Err(Error::InsufficientStories("no aligned sentence pairs".into()));
    }
    let mut picked: Vec<(usize, usize)> = if all.len() <= sample_n {
        all
    } else {
        let mut r = rng::stream(seed, "alignment-sample", 0);
        let mut idx = index::sample(&mut r, all.len(), sample_n).into_vec();
        idx.sort_unstable();
        idx.into_iter().map(|k| all[k]).collect()
    };
    let ctx = params.config().context_len;
    picked.retain(|&(i, j)| {
        let p = &pairs[i];
        let fits = |s: &Story| spans(s)[j].end <= ctx;
        fits(p.l1_story) && fits(p.l2_story)
    });
    if picked.is_empty() {
        return Err(Error::InsufficientStories(
            "no aligned sentence pair fits the context window".into(),
        ));
    }

    let mut by_story: Vec<(usize, Vec<usize>)> = Vec::new();
    for &(i, j) in &picked {
        match by_story.last_mut() {
            Some((last, js)) if *last == i => js.push(j),
            _ => by_story.push((i, vec![j])),
        }
    }
    let per_story: Vec<Vec<Vec<f64>>> = by_story
        .par_iter()
        .map(|(i, js)| {
            let a = story_embeddings(params, pairs[*i].l1_story, js)?;
            let b = story_embeddings(params, pairs[*i].l2_story, js)?;
            Ok(a.iter()
                .zip(&b)
                .map(|(la, lb)| la.iter().zip(lb).map(|(x, y)| cosine(x, y)).collect())
                .collect())
        })
        .collect::<Result<_>>()?;

    let layers = params.config().n_layers + 1;
    let mut per_layer = vec![0.0; layers];
    let mut n = 0usize;
    for cos in per_story.iter().flatten() {
        for (acc, c) in per_layer.iter_mut().zip(cos) {
            *acc += c;
        }
        n += 1;
    }
    per_layer.iter_mut().for_each(|x| *x /= n as f64);
    let overall = per_layer.iter().sum::<f64>() / layers as f64;
    Ok(AlignmentReport {
        pooling: POOLING.to_string(),
        requested: sample_n,
        pair_count: n,
        per_layer,
        overall,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stub_trace(hidden: Vec<Vec<f64>>, len: usize, d: usize) -> ForwardTrace<f64> {
        ForwardTrace {
            len,
            d_model: d,
            vocab_size: 1,
            hidden,
            logits: vec![0.0; len],
        }
    }

    #[test]
    fn pooling_basics() {
        let t = stub_trace(vec![vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]], 3, 2);
        assert_eq!(sentence_embedding(&t, 1..2, 0).unwrap(), vec![3.0, 4.0]);
        assert_eq!(sentence_embedding(&t, 0..3, 0).unwrap(), vec![3.0, 4.0]);
        assert!(sentence_embedding(&t, 1..1, 0).is_err());
        assert!(sentence_embedding(&t, 2..4, 0).is_err());
        let c = stub_trace(vec![vec![7.0, -1.0, 7.0, -1.0]], 2, 2);
        assert_eq!(sentence_embedding(&c, 0..2, 0).unwrap(), vec![7.0, -1.0]);
    }

    #[test]
    fn cosine_cases() {
        assert_eq!(cosine(&[1.0, 0.0], &[0.0, 3.0]), 0.0);
        assert!((cosine(&[1.0, 2.0], &[1.0, 2.0]) - 1.0).abs() < 1e-15);
        assert!((cosine(&[1.0, 2.0], &[5.0, 10.0]) - 1.0).abs() < 1e-15);
        assert_eq!(cosine(&[0.0, 0.0], &[1.0, 1.0]), 0.0);
    }
}
