//! Browser bindings: synthetic domains with their alignment spectra, and a
//! small pre-train then prompt-tune run. Results are JSON strings.
//!
//! The plain functions are what the native tests exercise; the exported
//! wrappers only convert errors.

use std::path::Path;

use domprompt::adapt::{classify, support_prototypes, tune_prompts, Instance, TargetDomain, TaskKind};
use domprompt::config::ExperimentConfig;
use domprompt::harness::{generate_all, sample_task, SynthSpec};
use domprompt::pretrain::pretrain;
use domprompt::tensor::truncated_svd;
use serde_json::json;
use wasm_bindgen::prelude::*;

type Result<T> = std::result::Result<T, String>;

fn spec_from(text: &str) -> Result<SynthSpec> {
    SynthSpec::parse(text, Path::new("spec")).map_err(|e| e.to_string())
}

/// Generates every domain of `spec_text` and reports its singular value
/// spectrum and the energy kept by a rank-`aligned_dim` projection.
pub fn describe_domains(spec_text: &str, aligned_dim: usize) -> Result<String> {
    if aligned_dim == 0 {
        return Err("aligned dimension must be positive".into());
    }
    let spec = spec_from(spec_text)?;
    let domains = generate_all(&spec).map_err(|e| e.to_string())?;
    let mut out = Vec::with_capacity(domains.len());
    for ds in &domains {
        let x = ds.stacked_features();
        let full = x.nrows().min(x.ncols());
        let svd = truncated_svd(&x, full).map_err(|e| e.to_string())?;
        let total: f64 = svd.s.iter().map(|s| s * s).sum();
        let kept: f64 = svd.s.iter().take(aligned_dim).map(|s| s * s).sum();
        let g = &ds.graphs()[0];
        out.push(json!({
            "id": ds.domain_id,
            "nodes": g.node_count(),
            "edges": g.edge_count(),
            "feature_dim": ds.feature_dim(),
            "singular_values": svd.s,
            "retained_energy": if total > 0.0 { kept / total } else { 1.0 },
        }));
    }
    Ok(json!({ "aligned_dim": aligned_dim, "domains": out }).to_string())
}

/// Pre-trains on every domain but the last, then tunes prompts on one
/// few-shot node task drawn from the last domain.
pub fn pretrain_and_adapt(spec_text: &str, config_text: &str, task_seed: u64) -> Result<String> {
    let spec = spec_from(spec_text)?;
    let exp = ExperimentConfig::parse(config_text, Path::new("config")).map_err(|e| e.to_string())?;
    let mut domains = generate_all(&spec).map_err(|e| e.to_string())?;
    if domains.len() < 2 {
        return Err("need at least one source domain and a target".into());
    }
    let target = domains.pop().expect("checked length");
    let trained = pretrain(&domains, &exp.pretrain_config(), |_, _| {}).map_err(|e| e.to_string())?;
    let bundle = trained.bundle;
    let target = TargetDomain::new(target, exp.aligned_dim).map_err(|e| e.to_string())?;
    let task = sample_task(&target.dataset, TaskKind::Node, exp.shots, task_seed).map_err(|e| e.to_string())?;
    let adapt = exp.adapt_config();
    let tuned = tune_prompts(&task.support, &target, &bundle, &adapt).map_err(|e| e.to_string())?;
    let protos = support_prototypes(&task.support, &target, &bundle, &tuned.prompts, adapt.branches)
        .map_err(|e| e.to_string())?;
    let queries: Vec<&Instance> = task.query.instances.iter().map(|(i, _)| i).collect();
    let predicted =
        classify(&queries, &target, &bundle, &tuned.prompts, &protos, adapt.branches).map_err(|e| e.to_string())?;
    let correct = predicted
        .iter()
        .zip(&task.query.instances)
        .filter(|(p, (_, y))| *p == y)
        .count();
    Ok(json!({
        "sources": bundle.tokens.ids().collect::<Vec<_>>(),
        "pretrain_losses": trained.losses,
        "adapt_losses": tuned.losses,
        "gamma": tuned.prompts.gamma.data().iter().collect::<Vec<_>>(),
        "support": task.support.len(),
        "queries": predicted.len(),
        "accuracy": 100.0 * correct as f64 / predicted.len().max(1) as f64,
    })
    .to_string())
}

#[wasm_bindgen(js_name = describeDomains)]
pub fn describe_domains_js(spec_text: &str, aligned_dim: usize) -> std::result::Result<String, JsError> {
    describe_domains(spec_text, aligned_dim).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = pretrainAndAdapt)]
pub fn pretrain_and_adapt_js(spec_text: &str, config_text: &str, task_seed: u64) -> std::result::Result<String, JsError> {
    pretrain_and_adapt(spec_text, config_text, task_seed).map_err(|e| JsError::new(&e))
}
