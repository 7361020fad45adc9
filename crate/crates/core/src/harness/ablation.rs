//! Data and component ablations, plus shot-count and aligned-dimension
//! sweeps.

use std::fmt::Write as _;

use crate::adapt::{TargetDomain, TaskKind};
use crate::config::{ExperimentConfig, Variant};
use crate::error::{Error, Result};
use crate::graph::DomainDataset;
use crate::pretrain::{pretrain, PretrainedBundle};

use super::eval::{evaluate, EvalConfig, EvalReport};

pub fn eval_config(exp: &ExperimentConfig, kind: TaskKind) -> EvalConfig {
    EvalConfig {
        kind,
        shots: exp.shots,
        tasks: exp.eval_tasks,
        seeds: exp.eval_seeds.clone(),
        hops: exp.ego_hops,
        adapt: exp.adapt_config(),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationRow {
    /// `sources=3` or `variant=4 token=1 mixing=1 unified=0`.
    pub label: String,
    pub report: EvalReport,
}

pub fn variant_label(v: Variant) -> String {
    let (t, m, u) = v.flags();
    format!("variant={v} token={} mixing={} unified={}", t as u8, m as u8, u as u8)
}

/// Rows as `## <label>` headers, each followed by its report TSV.
pub fn table_to_text(rows: &[AblationRow]) -> String {
    let mut out = String::new();
    for r in rows {
        let _ = writeln!(out, "## {}", r.label);
        out.push_str(&r.report.to_tsv());
    }
    out
}

pub fn parse_table(text: &str) -> Result<Vec<AblationRow>> {
    let mut rows = Vec::new();
    let mut current: Option<(String, String)> = None;
    let flush = |cur: Option<(String, String)>, rows: &mut Vec<AblationRow>| -> Result<()> {
        if let Some((label, body)) = cur {
            rows.push(AblationRow {
                label,
                report: EvalReport::parse_tsv(&body)?,
            });
        }
        Ok(())
    };
    for line in text.lines() {
        if let Some(label) = line.strip_prefix("## ") {
            flush(current.take(), &mut rows)?;
            current = Some((label.trim().to_string(), String::new()));
        } else if let Some((_, body)) = current.as_mut() {
            body.push_str(line);
            body.push('\n');
        } else if !line.trim().is_empty() {
            return Err(Error::InvalidArgument(format!("table line outside a row: `{line}`")));
        }
    }
    flush(current, &mut rows)?;
    Ok(rows)
}

/// Pre-trains on the first `k` sources for each `k` in `counts` and
/// evaluates every bundle on the same target tasks.
pub fn run_data_ablation(
    sources: &[DomainDataset],
    target: &DomainDataset,
    exp: &ExperimentConfig,
    kind: TaskKind,
    counts: &[usize],
) -> Result<Vec<AblationRow>> {
    if sources.len() < 2 {
        return Err(Error::InvalidArgument("data ablation needs at least two source domains".into()));
    }
    let target = TargetDomain::new(target.clone(), exp.aligned_dim)?;
    let cfg = eval_config(exp, kind);
    counts
        .iter()
        .map(|&k| {
            if k == 0 || k > sources.len() {
                return Err(Error::InvalidArgument(format!(
                    "source count {k} outside 1..={}",
                    sources.len()
                )));
            }
            let bundle = pretrain(&sources[..k], &exp.pretrain_config(), |_, _| {})?.bundle;
            Ok(AblationRow {
                label: format!("sources={k}"),
                report: evaluate(&bundle, &target, &cfg)?,
            })
        })
        .collect()
}

/// Evaluates each variant under identical task seeds. Variants that share
/// pre-training flags share one pre-trained bundle.
pub fn run_model_ablation(
    sources: &[DomainDataset],
    target: &DomainDataset,
    exp: &ExperimentConfig,
    kind: TaskKind,
    variants: &[Variant],
) -> Result<Vec<AblationRow>> {
    let target = TargetDomain::new(target.clone(), exp.aligned_dim)?;
    let mut bundles: Vec<(bool, PretrainedBundle)> = Vec::new();
    let mut rows = Vec::with_capacity(variants.len());
    for &v in variants {
        let mut vexp = exp.clone();
        vexp.set_variant(v);
        let tokens = v.domain_tokens();
        let idx = match bundles.iter().position(|(t, _)| *t == tokens) {
            Some(i) => i,
            None => {
                let b = pretrain(sources, &vexp.pretrain_config(), |_, _| {})?.bundle;
                bundles.push((tokens, b));
                bundles.len() - 1
            }
        };
        let report = evaluate(&bundles[idx].1, &target, &eval_config(&vexp, kind))?;
        rows.push(AblationRow {
            label: variant_label(v),
            report,
        });
    }
    Ok(rows)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepPoint {
    pub value: usize,
    pub report: EvalReport,
}

/// Plot-ready CSV: `<name>,mean,std,n`.
pub fn sweep_to_csv(name: &str, points: &[SweepPoint]) -> String {
    let mut out = format!("{name},mean,std,n\n");
    for p in points {
        let _ = writeln!(out, "{},{},{},{}", p.value, p.report.mean, p.report.std, p.report.len());
    }
    out
}

pub fn sweep_shots(
    bundle: &PretrainedBundle,
    target: &DomainDataset,
    base: &EvalConfig,
    shots: &[usize],
) -> Result<Vec<SweepPoint>> {
    let target = TargetDomain::new(target.clone(), bundle.config.aligned_dim)?;
    shots
        .iter()
        .map(|&m| {
            let cfg = EvalConfig { shots: m, ..base.clone() };
            Ok(SweepPoint {
                value: m,
                report: evaluate(bundle, &target, &cfg)?,
            })
        })
        .collect()
}

/// Pre-trains and evaluates once per aligned dimension.
pub fn sweep_aligned_dim(
    sources: &[DomainDataset],
    target: &DomainDataset,
    exp: &ExperimentConfig,
    kind: TaskKind,
    dims: &[usize],
) -> Result<Vec<SweepPoint>> {
    dims.iter()
        .map(|&d| {
            let mut e = exp.clone();
            e.aligned_dim = d;
            let bundle = pretrain(sources, &e.pretrain_config(), |_, _| {})?.bundle;
            let t = TargetDomain::new(target.clone(), d)?;
            Ok(SweepPoint {
                value: d,
                report: evaluate(&bundle, &t, &eval_config(&e, kind))?,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::eval::TaskRecord;

    fn report(acc: &[f64]) -> EvalReport {
        EvalReport::from_records(
            acc.iter()
                .enumerate()
                .map(|(i, &a)| TaskRecord {
                    task_id: i,
                    seed: 0,
                    accuracy: a,
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn table_round_trip() {
        let rows: Vec<AblationRow> = Variant::ALL
            .iter()
            .enumerate()
            .map(|(i, &v)| AblationRow {
                label: variant_label(v),
                report: report(&[10.0 * i as f64, 55.5]),
            })
            .collect();
        let text = table_to_text(&rows);
        assert_eq!(parse_table(&text).unwrap(), rows);
        assert_eq!(rows[0].label, "variant=1 token=0 mixing=0 unified=0");
        assert_eq!(rows[3].label, "variant=4 token=1 mixing=1 unified=0");
        assert!(parse_table("junk\n").is_err());
    }

    #[test]
    fn sweep_csv_shape() {
        let csv = sweep_to_csv("shots", &[SweepPoint { value: 1, report: report(&[50.0, 70.0]) }]);
        assert_eq!(csv.lines().next(), Some("shots,mean,std,n"));
        assert!(csv.lines().nth(1).unwrap().starts_with("1,60,"));
    }
}
