//! Episodic evaluation and its TSV report.

use std::fmt::Write as _;

use crate::adapt::{classify, support_prototypes, tune_prompts, AdaptConfig, Instance, TargetDomain, TaskKind};
use crate::error::{Error, Result};
use crate::graph::DEFAULT_EGO_HOPS;
use crate::pretrain::PretrainedBundle;
use crate::rng::derive_seed;

use super::task::{FewShotTask, InstancePool};

const TASK_STREAM: u64 = 0x7461_736b;

#[derive(Clone, Debug, PartialEq)]
pub struct TaskRecord {
    pub task_id: usize,
    pub seed: u64,
    /// Percent.
    pub accuracy: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub records: Vec<TaskRecord>,
    pub mean: f64,
    /// Sample standard deviation, percent.
    pub std: f64,
}

/// Mean and sample standard deviation (0 for fewer than two values).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

impl EvalReport {
    pub fn from_records(records: Vec<TaskRecord>) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::InvalidArgument("report without records".into()));
        }
        let acc: Vec<f64> = records.iter().map(|r| r.accuracy).collect();
        let (mean, std) = mean_std(&acc);
        Ok(Self { records, mean, std })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Distinct seeds in first-appearance order.
    pub fn seeds(&self) -> Vec<u64> {
        let mut out: Vec<u64> = Vec::new();
        for r in &self.records {
            if !out.contains(&r.seed) {
                out.push(r.seed);
            }
        }
        out
    }

    /// `"42.26 ± 10.18"`.
    pub fn summary(&self) -> String {
        format!("{:.2} ± {:.2}", self.mean, self.std)
    }

    pub fn summary_line(&self) -> String {
        format!("mean={} std={} n={}", self.mean, self.std, self.records.len())
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::from("task_id\tseed\taccuracy\n");
        for r in &self.records {
            let _ = writeln!(out, "{}\t{}\t{}", r.task_id, r.seed, r.accuracy);
        }
        out.push_str(&self.summary_line());
        out.push('\n');
        out
    }

    /// Parses [`EvalReport::to_tsv`] output and checks the summary line
    /// against the records.
    pub fn parse_tsv(text: &str) -> Result<Self> {
        let bad = |line: usize, msg: String| Error::Parse {
            path: "<report>".into(),
            line,
            message: msg,
        };
        let mut records = Vec::new();
        let mut summary = None;
        for (i, line) in text.lines().enumerate() {
            let line = line.trim_end();
            if line.is_empty() || line == "task_id\tseed\taccuracy" {
                continue;
            }
            if line.starts_with("mean=") {
                summary = Some((i + 1, line.to_string()));
                continue;
            }
            let cols: Vec<&str> = line.split('\t').collect();
            let [t, s, a] = cols[..] else {
                return Err(bad(i + 1, format!("expected 3 columns, got `{line}`")));
            };
            records.push(TaskRecord {
                task_id: t.parse().map_err(|_| bad(i + 1, format!("bad task id `{t}`")))?,
                seed: s.parse().map_err(|_| bad(i + 1, format!("bad seed `{s}`")))?,
                accuracy: a.parse().map_err(|_| bad(i + 1, format!("bad accuracy `{a}`")))?,
            });
        }
        let report = Self::from_records(records)?;
        let (line, summary) = summary.ok_or_else(|| bad(0, "missing summary line".into()))?;
        let mut fields = [f64::NAN; 3];
        for (slot, (key, tok)) in fields
            .iter_mut()
            .zip(["mean", "std", "n"].iter().zip(summary.split_whitespace()))
        {
            let v = tok
                .strip_prefix(key)
                .and_then(|r| r.strip_prefix('='))
                .ok_or_else(|| bad(line, format!("expected `{key}=` in `{summary}`")))?;
            *slot = v.parse().map_err(|_| bad(line, format!("bad number `{v}`")))?;
        }
        if fields[2] != report.len() as f64
            || (fields[0] - report.mean).abs() > 1e-9
            || (fields[1] - report.std).abs() > 1e-9
        {
            return Err(bad(line, "summary disagrees with records".into()));
        }
        Ok(report)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalConfig {
    pub kind: TaskKind,
    pub shots: usize,
    pub tasks: usize,
    pub seeds: Vec<u64>,
    pub hops: usize,
    pub adapt: AdaptConfig,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            kind: TaskKind::Node,
            shots: 1,
            tasks: 100,
            seeds: vec![0, 1, 2, 3, 4],
            hops: DEFAULT_EGO_HOPS,
            adapt: AdaptConfig::default(),
        }
    }
}

/// Seed of task `task_id` under evaluation seed `seed`.
pub fn task_seed(seed: u64, task_id: usize) -> u64 {
    derive_seed(seed, &[TASK_STREAM, task_id as u64])
}

/// Tunes prompts on the support set and returns query accuracy in percent.
pub fn run_task(task: &FewShotTask, target: &TargetDomain, bundle: &PretrainedBundle, adapt: &AdaptConfig) -> Result<f64> {
    let tuned = tune_prompts(&task.support, target, bundle, adapt)?;
    let protos = support_prototypes(&task.support, target, bundle, &tuned.prompts, adapt.branches)?;
    if task.query.is_empty() {
        return Err(Error::InvalidArgument("empty query set".into()));
    }
    let queries: Vec<&Instance> = task.query.instances.iter().map(|(i, _)| i).collect();
    let predicted = classify(&queries, target, bundle, &tuned.prompts, &protos, adapt.branches)?;
    let correct = predicted
        .iter()
        .zip(&task.query.instances)
        .filter(|(p, (_, y))| *p == y)
        .count();
    Ok(100.0 * correct as f64 / predicted.len() as f64)
}

/// Runs `tasks × seeds` independent episodes. Each episode's randomness is
/// derived from `(seed, task id)` only, so the report does not depend on
/// scheduling.
pub fn evaluate(bundle: &PretrainedBundle, target: &TargetDomain, cfg: &EvalConfig) -> Result<EvalReport> {
    if cfg.tasks == 0 || cfg.seeds.is_empty() {
        return Err(Error::InvalidArgument("need at least one task and one seed".into()));
    }
    let pool = InstancePool::new(&target.dataset, cfg.kind, cfg.hops)?;
    let jobs: Vec<(u64, usize)> = cfg
        .seeds
        .iter()
        .flat_map(|&s| (0..cfg.tasks).map(move |t| (s, t)))
        .collect();
    let run = |&(seed, task_id): &(u64, usize)| -> Result<TaskRecord> {
        let task = pool.sample(cfg.shots, task_seed(seed, task_id))?;
        let accuracy = run_task(&task, target, bundle, &cfg.adapt)?;
        Ok(TaskRecord { task_id, seed, accuracy })
    };
    #[cfg(feature = "parallel")]
    let records = {
        use rayon::prelude::*;
        jobs.par_iter().map(run).collect::<Result<Vec<_>>>()?
    };
    #[cfg(not(feature = "parallel"))]
    let records = jobs.iter().map(run).collect::<Result<Vec<_>>>()?;
    EvalReport::from_records(records)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(acc: &[f64]) -> EvalReport {
        EvalReport::from_records(
            acc.iter()
                .enumerate()
                .map(|(i, &a)| TaskRecord {
                    task_id: i,
                    seed: 7,
                    accuracy: a,
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn sample_statistics() {
        let r = rec(&[50.0, 60.0, 70.0]);
        assert!((r.mean - 60.0).abs() < 1e-12);
        assert!((r.std - 10.0).abs() < 1e-12);
        assert_eq!(r.summary(), "60.00 ± 10.00");
        assert_eq!(rec(&[42.0]).std, 0.0);
        assert!(EvalReport::from_records(vec![]).is_err());
    }

    #[test]
    fn tsv_round_trip_and_consistency_check() {
        let r = rec(&[50.0, 100.0 / 3.0, 70.125]);
        let text = r.to_tsv();
        assert!(text.ends_with("n=3\n"));
        assert_eq!(EvalReport::parse_tsv(&text).unwrap(), r);
        let tampered = text.replace("mean=", "mean=1");
        assert!(EvalReport::parse_tsv(&tampered).is_err());
        assert!(EvalReport::parse_tsv("task_id\tseed\taccuracy\n0\t1\n").is_err());
    }
}
