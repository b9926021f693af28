pub mod generation;
pub mod metrics;
pub mod toy;

pub use generation::{
    correlate_returns, evaluate_policy, generate, grouped_self_bleu, mean_entropy,
    reward_metric_correlation, CorrelationReport, DiversityReport, EvalReport,
};
pub use metrics::{average_ranks, bleu, self_bleu, spearman, task_accuracy};
pub use toy::{
    run_toy_comparison, success_rate, train_tabular, TabularPolicy, ToyAlgorithm, ToyComparison,
    ToyExecution, ToyGap, ToyResult, ToySeedResult, ToyTrainConfig, ToyVariant,
};
