use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

/// Tokens consumed per (stage, language), in stage order.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenBudgetLedger {
    pub stages: Vec<StageTokens>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageTokens {
    pub stage: String,
    pub tokens: BTreeMap<String, u64>,
}

impl TokenBudgetLedger {
    pub fn add(&mut self, stage: &str, lang: &str, n: u64) {
        if self.stages.last().is_none_or(|s| s.stage != stage) {
            self.stages.push(StageTokens {
                stage: stage.to_string(),
                tokens: BTreeMap::new(),
            });
        }
        *self
            .stages
            .last_mut()
            .unwrap()
            .tokens
            .entry(lang.to_string())
            .or_default() += n;
    }

    pub fn totals(&self) -> BTreeMap<String, u64> {
        let mut out = BTreeMap::new();
        for s in &self.stages {
            for (lang, &n) in &s.tokens {
                *out.entry(lang.clone()).or_default() += n;
            }
        }
        out
    }

    pub fn total(&self, lang: &str) -> u64 {
        self.stages.iter().filter_map(|s| s.tokens.get(lang)).sum()
    }

    pub fn grand_total(&self) -> u64 {
        self.stages.iter().flat_map(|s| s.tokens.values()).sum()
    }

    pub fn stage_total(&self, stage: &str) -> u64 {
        self.stages
            .iter()
            .filter(|s| s.stage == stage)
            .flat_map(|s| s.tokens.values())
            .sum()
    }
}

#[derive(Serialize)]
struct LedgerFile<'a> {
    stages: &'a [StageTokens],
    totals: BTreeMap<String, u64>,
    total: u64,
}

impl TokenBudgetLedger {
    pub fn to_json(&self) -> serde_json::Result<String> {
        serde_json::to_string_pretty(&LedgerFile {
            stages: &self.stages,
            totals: self.totals(),
            total: self.grand_total(),
        })
    }
}
