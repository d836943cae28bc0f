//! Primal side: softmax-relaxed regime-decision policies trained by the
//! primal backward recursion, and their hard-rule evaluation as a lower bound.

mod evaluate;
mod policy;
mod scenario;
mod stage;
mod train;

pub use evaluate::{
    evaluate_policy, evaluate_policy_mc, rollout, LowerBoundAccumulator, LowerBoundReport, PolicyRollout,
    RegimeLowerBound,
};
pub use policy::{Policy, PolicyArch, RandomRule, StayRule, SwitchRule};
pub use scenario::{FixedScenarios, ScenarioBatch, ScenarioSource, SimulatedScenarios};
pub use stage::PrimalStage;
pub use train::{train_policy, train_policy_on, PrimalTrainConfig, PrimalTrainResult, PrimalTrainer};
