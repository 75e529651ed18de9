//! Optimizer, learning-rate schedule, staged training and token accounting.

mod ledger;
mod optim;
mod pipeline;

pub use ledger::{StageTokens, TokenBudgetLedger};
pub use optim::{adam_step, clip_gradients, AdamState, OptimConfig};
pub use pipeline::{
    arm_dir, checkpoint, plan_stages, run_pipeline, run_stage, stage_seed, verify_budget, ArmOutcome,
    ArmSpec, LrWindow, PipelineConfig, PlannedStage, StageSpec, StepRecord, TrainOptions, TrainState,
};
