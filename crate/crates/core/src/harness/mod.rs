//! Few-shot task sampling, episodic evaluation, synthetic fixtures and the
//! ablation drivers.

mod ablation;
mod eval;
mod synth;
mod task;

pub use ablation::{
    eval_config, parse_table, run_data_ablation, run_model_ablation, sweep_aligned_dim, sweep_shots, sweep_to_csv,
    table_to_text, variant_label, AblationRow, SweepPoint,
};
pub use eval::{evaluate, mean_std, run_task, task_seed, EvalConfig, EvalReport, TaskRecord};
pub use synth::{block_of, generate_all, generate_synthetic_domain, DomainSpec, SynthSpec};
pub use task::{sample_task, FewShotTask, InstancePool};
