use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::ledger::TokenBudgetLedger;
use super::optim::{adam_step, clip_gradients, AdamState, OptimConfig};
use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::interleave::{Packer, StreamSampler};
use crate::model::checkpoint::Checkpoint;
use crate::model::{accumulate_gradients, init_params, Gradients, LossSum, ModelConfig, ModelParams};
use crate::rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageSpec {
    pub name: String,
    /// Share of the arm's step budget.
    pub weight: u32,
    #[serde(default)]
    pub interleave_ratio: f64,
    #[serde(default = "half")]
    pub lang_probability: f64,
}

fn half() -> f64 {
    0.5
}

impl StageSpec {
    pub fn new(name: &str, weight: u32, interleave_ratio: f64, lang_probability: f64) -> Self {
        StageSpec {
            name: name.to_string(),
            weight,
            interleave_ratio,
            lang_probability,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArmSpec {
    pub name: String,
    pub stages: Vec<StageSpec>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PlannedStage {
    pub spec: StageSpec,
    pub steps: u64,
}

/// Splits `budget_tokens / batch_tokens` steps over the arm's stages in
/// proportion to their weights (largest remainder).
pub fn plan_stages(arm: &ArmSpec, budget_tokens: u64, batch_tokens: u64) -> Result<Vec<PlannedStage>> {
    if arm.stages.is_empty() {
        return Err(Error::Config(format!("arm {}: no stages", arm.name)));
    }
    if batch_tokens == 0 {
        return Err(Error::Config("batch_tokens must be positive".into()));
    }
    let total = budget_tokens / batch_tokens;
    let wsum: u64 = arm.stages.iter().map(|s| s.weight as u64).sum();
    if wsum == 0 {
        return Err(Error::Config(format!("arm {}: stage weights sum to zero", arm.name)));
    }
    let mut steps: Vec<u64> = arm.stages.iter().map(|s| total * s.weight as u64 / wsum).collect();
    let mut order: Vec<usize> = (0..steps.len()).collect();
    order.sort_by_key(|&i| std::cmp::Reverse((total * arm.stages[i].weight as u64) % wsum));
    let short = total - steps.iter().sum::<u64>();
    for &i in order.iter().take(short as usize) {
        steps[i] += 1;
    }
    arm.stages
        .iter()
        .zip(steps)
        .map(|(spec, steps)| {
            if steps == 0 {
                return Err(Error::Config(format!(
                    "arm {}: stage {} gets no steps at this budget",
                    arm.name, spec.name
                )));
            }
            Ok(PlannedStage {
                spec: spec.clone(),
                steps,
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOptions {
    pub optim: OptimConfig,
    pub batch_tokens: u64,
    pub bos: Option<u32>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: u64,
    pub stage: String,
    pub stage_step: u64,
    pub lr: f64,
    pub loss_sum: f64,
    pub loss_mean: f64,
    pub loss_tokens: u64,
    pub grad_norm: f64,
    /// Tokens of this step per language.
    pub tokens: BTreeMap<String, u64>,
}

impl StepRecord {
    /// One metrics line; per-language counts appear as `tokens_<lang>`.
    pub fn to_json_line(&self) -> String {
        let mut m = serde_json::Map::new();
        m.insert("step".into(), self.step.into());
        m.insert("stage".into(), self.stage.clone().into());
        m.insert("stage_step".into(), self.stage_step.into());
        m.insert("lr".into(), self.lr.into());
        m.insert("loss_sum".into(), self.loss_sum.into());
        m.insert("loss_mean".into(), self.loss_mean.into());
        m.insert("loss_tokens".into(), self.loss_tokens.into());
        m.insert("grad_norm".into(), self.grad_norm.into());
        for (lang, &n) in &self.tokens {
            m.insert(format!("tokens_{lang}"), n.into());
        }
        serde_json::Value::Object(m).to_string()
    }
}

#[derive(Clone, Debug)]
pub struct TrainState {
    pub params: ModelParams<f32>,
    pub adam: AdamState<f32>,
    pub ledger: TokenBudgetLedger,
    pub metrics: Vec<StepRecord>,
}

impl TrainState {
    pub fn new(params: ModelParams<f32>) -> Self {
        let adam = AdamState::new(&params);
        TrainState {
            params,
            adam,
            ledger: TokenBudgetLedger::default(),
            metrics: Vec::new(),
        }
    }

    pub fn step(&self) -> u64 {
        self.metrics.len() as u64
    }
}

/// Learning-rate horizon of a stage: `(first step, total)` in schedule time.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LrWindow {
    pub offset: u64,
    pub total: u64,
}

/// Runs `stage.steps` optimizer steps on a stream drawn from `corpus`.
/// Every row of a batch contributes its next-token loss; the batch gradient
/// is the per-token mean, summed row by row in a fixed order.
pub fn run_stage(
    stage: &PlannedStage,
    stage_seed: u64,
    lr_window: LrWindow,
    state: &mut TrainState,
    corpus: &Corpus,
    opts: &TrainOptions,
) -> Result<()> {
    let ctx = state.params.config().context_len;
    if !opts.batch_tokens.is_multiple_of(ctx as u64) {
        return Err(Error::Config(format!(
            "batch_tokens {} is not a multiple of context_len {ctx}",
            opts.batch_tokens
        )));
    }
    let rows = (opts.batch_tokens / ctx as u64) as usize;
    let spec = &stage.spec;
    let mut sampler = StreamSampler::new(corpus, spec.interleave_ratio, spec.lang_probability, stage_seed)?;
    let mut packer = Packer::new(ctx, opts.bos)?;
    let n_params = state.params.data.len();

    for stage_step in 1..=stage.steps {
        let batch = packer.fill(&mut sampler, rows);
        let per_row: Vec<(LossSum, Vec<f32>)> = batch
            .rows
            .par_iter()
            .map(|row| {
                let targets: Vec<Option<u32>> = row.tokens[1..].iter().map(|&t| Some(t)).collect();
                let mut g = vec![0f32; n_params];
                let loss = accumulate_gradients(&state.params, &row.tokens[..ctx - 1], &targets, &mut g)?;
                Ok((loss, g))
            })
            .collect::<Result<_>>()?;

        let mut grads = Gradients::zeros_like(&state.params);
        let mut loss = LossSum::default();
        for (l, g) in &per_row {
            loss = loss.merge(*l);
            for (a, &b) in grads.data.iter_mut().zip(g) {
                *a += b;
            }
        }
        drop(per_row);
        grads.scale(1.0 / loss.count as f32);
        let grad_norm = clip_gradients(&mut grads, opts.optim.grad_clip_norm)?;
        let lr = opts.optim.lr_at(lr_window.offset + stage_step, lr_window.total)?;
        adam_step(&mut state.params, &grads, &mut state.adam, lr, &opts.optim)?;

        let mut tokens: BTreeMap<String, u64> =
            corpus.languages().iter().map(|l| (l.clone(), 0)).collect();
        for row in &batch.rows {
            for (lang, n) in &row.lang_tokens {
                *tokens.entry(lang.clone()).or_default() += *n as u64;
            }
        }
        for (lang, &n) in &tokens {
            state.ledger.add(&spec.name, lang, n);
        }
        let record = StepRecord {
            step: state.step() + 1,
            stage: spec.name.clone(),
            stage_step,
            lr,
            loss_sum: loss.sum,
            loss_mean: loss.mean().unwrap_or(0.0),
            loss_tokens: loss.count as u64,
            grad_norm,
            tokens,
        };
        if stage_step == 1 || stage_step % 50 == 0 || stage_step == stage.steps {
            log::info!(
                "{} step {stage_step}/{} loss {:.4} lr {:.2e}",
                spec.name,
                stage.steps,
                record.loss_mean,
                lr
            );
        }
        state.metrics.push(record);
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct PipelineConfig {
    pub model: ModelConfig,
    pub optim: OptimConfig,
    pub batch_tokens: u64,
    pub budget_tokens: u64,
    pub seed: u64,
    pub bos: bool,
    pub save_stage_checkpoints: bool,
}

impl PipelineConfig {
    /// Model configuration with the vocabulary resolved against `corpus` and
    /// the init seed derived from the run seed.
    pub fn resolved_model(&self, corpus: &Corpus) -> Result<ModelConfig> {
        let mut m = self.model.clone();
        let need = corpus.vocab().effective_size();
        if m.vocab_size == 0 {
            m.vocab_size = need;
        } else if m.vocab_size < need {
            return Err(Error::Config(format!(
                "model vocab_size {} is smaller than the corpus vocabulary {need}",
                m.vocab_size
            )));
        }
        m.init_seed = rng::derive_seed(self.seed, "model-init", 0);
        m.validate()?;
        Ok(m)
    }
}

#[derive(Clone, Debug)]
pub struct ArmOutcome {
    pub name: String,
    pub plan: Vec<PlannedStage>,
    pub state: TrainState,
    pub dir: Option<PathBuf>,
}

pub fn stage_seed(seed: u64, index: usize, stage: &StageSpec) -> u64 {
    rng::derive_seed(seed, &format!("stage/{}", stage.name), index as u64)
}

pub fn arm_dir(run_dir: &Path, arm: &str) -> PathBuf {
    run_dir.join("arms").join(arm)
}

/// Trains every arm at the shared token budget. Arms whose leading stages
/// coincide reuse the trained prefix instead of recomputing it. When
/// `out` is given, checkpoints, metrics and ledgers are written under
/// `out/arms/<arm>/`.
pub fn run_pipeline(
    corpus: &Corpus,
    cfg: &PipelineConfig,
    arms: &[ArmSpec],
    out: Option<&Path>,
) -> Result<Vec<ArmOutcome>> {
    cfg.optim.validate()?;
    if arms.is_empty() {
        return Err(Error::Config("no arms to train".into()));
    }
    let mut names: Vec<&str> = arms.iter().map(|a| a.name.as_str()).collect();
    names.sort();
    if names.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::Config("arm names must be unique".into()));
    }
    let model = cfg.resolved_model(corpus)?;
    let opts = TrainOptions {
        optim: cfg.optim.clone(),
        batch_tokens: cfg.batch_tokens,
        bos: cfg.bos.then(|| corpus.vocab().bos_id()).flatten(),
    };
    let initial = TrainState::new(init_params::<f32>(&model)?);
    let mut cache: HashMap<String, TrainState> = HashMap::new();
    let mut outcomes = Vec::with_capacity(arms.len());

    for arm in arms {
        let plan = plan_stages(arm, cfg.budget_tokens, cfg.batch_tokens)?;
        let arm_total: u64 = plan.iter().map(|s| s.steps).sum();
        let dir = out.map(|o| arm_dir(o, &arm.name));
        if let Some(d) = &dir {
            fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
        }
        let mut state = initial.clone();
        let mut key = String::new();
        let mut offset = 0;
        for (k, stage) in plan.iter().enumerate() {
            key.push_str(&serde_json::to_string(stage)?);
            key.push('|');
            let window = if cfg.optim.restart_per_stage {
                LrWindow {
                    offset: 0,
                    total: stage.steps,
                }
            } else {
                LrWindow {
                    offset,
                    total: arm_total,
                }
            };
            if !cfg.optim.restart_per_stage {
                // the schedule depends on the arm's full length
                key.push_str(&format!("{arm_total}|"));
            }
            if let Some(hit) = cache.get(&key) {
                log::info!("{}: reusing trained prefix through stage {}", arm.name, stage.spec.name);
                state = hit.clone();
            } else {
                log::info!("{}: stage {} ({} steps)", arm.name, stage.spec.name, stage.steps);
                run_stage(stage, stage_seed(cfg.seed, k, &stage.spec), window, &mut state, corpus, &opts)?;
                cache.insert(key.clone(), state.clone());
            }
            offset += stage.steps;
            if let (Some(d), true) = (&dir, cfg.save_stage_checkpoints) {
                let path = d.join(format!("stage-{}-{}.ckpt", k + 1, stage.spec.name));
                checkpoint(&state, cfg.seed).save(&path)?;
            }
        }
        verify_budget(&arm.name, &state.ledger, cfg.budget_tokens, cfg.batch_tokens)?;
        if let Some(d) = &dir {
            write_arm(d, &state, cfg.seed)?;
        }
        outcomes.push(ArmOutcome {
            name: arm.name.clone(),
            plan,
            state,
            dir,
        });
    }

    for a in &outcomes {
        for b in &outcomes {
            let (x, y) = (a.state.ledger.grand_total(), b.state.ledger.grand_total());
            if x.abs_diff(y) > cfg.batch_tokens {
                return Err(Error::BudgetMismatch(format!(
                    "arms {} and {} consumed {x} and {y} tokens",
                    a.name, b.name
                )));
            }
        }
    }
    Ok(outcomes)
}

pub fn checkpoint(state: &TrainState, seed: u64) -> Checkpoint {
    Checkpoint {
        seed,
        params: state.params.clone(),
    }
}

pub fn verify_budget(arm: &str, ledger: &TokenBudgetLedger, budget: u64, batch: u64) -> Result<()> {
    let used = ledger.grand_total();
    if used.abs_diff(budget) > batch {
        return Err(Error::BudgetMismatch(format!(
            "arm {arm} consumed {used} tokens against a budget of {budget}"
        )));
    }
    Ok(())
}

fn write_arm(dir: &Path, state: &TrainState, seed: u64) -> Result<()> {
    checkpoint(state, seed).save(&dir.join("final.ckpt"))?;
    let path = dir.join("metrics.jsonl");
    let mut f = std::io::BufWriter::new(fs::File::create(&path).map_err(|e| Error::io(&path, e))?);
    for r in &state.metrics {
        writeln!(f, "{}", r.to_json_line()).map_err(|e| Error::io(&path, e))?;
    }
    f.flush().map_err(|e| Error::io(&path, e))?;
    let path = dir.join("ledger.json");
    fs::write(&path, state.ledger.to_json()? + "\n").map_err(|e| Error::io(&path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn arm(weights: &[u32]) -> ArmSpec {
        ArmSpec {
            name: "a".into(),
            stages: weights
                .iter()
                .enumerate()
                .map(|(i, &w)| StageSpec::new(&format!("s{i}"), w, 0.0, 1.0))
                .collect(),
        }
    }

    #[test]
    fn steps_follow_weights() {
        let steps = |w: &[u32], budget| {
            plan_stages(&arm(w), budget, 10)
                .unwrap()
                .iter()
                .map(|s| s.steps)
                .collect::<Vec<_>>()
        };
        assert_eq!(steps(&[50, 20, 15], 850), vec![50, 20, 15]);
        assert_eq!(steps(&[50, 35], 850), vec![50, 35]);
        assert_eq!(steps(&[1, 1, 1], 100), vec![4, 3, 3]);
        assert_eq!(steps(&[50, 20, 15], 1009).iter().sum::<u64>(), 100);
        assert!(plan_stages(&arm(&[100, 1]), 50, 10).is_err());
        assert!(plan_stages(&arm(&[]), 50, 10).is_err());
    }

    #[test]
    fn metrics_line_has_per_language_columns() {
        let r = StepRecord {
            step: 3,
            stage: "x".into(),
            stage_step: 1,
            lr: 1e-4,
            loss_sum: 2.0,
            loss_mean: 1.0,
            loss_tokens: 2,
            grad_norm: 0.5,
            tokens: [("en".to_string(), 7), ("fr".to_string(), 0)].into(),
        };
        let v: serde_json::Value = serde_json::from_str(&r.to_json_line()).unwrap();
        assert_eq!(v["tokens_en"], 7);
        assert_eq!(v["tokens_fr"], 0);
        assert_eq!(v["stage"], "x");
    }
}
