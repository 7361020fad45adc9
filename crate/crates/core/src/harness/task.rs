//! m-shot task sampling.

use std::sync::Arc;

use rand::seq::index::sample;

use crate::adapt::{Instance, LabeledSet, TaskKind};
use crate::error::{Error, Result};
use crate::graph::{extract_ego_network, DomainDataset, EgoNetwork, DEFAULT_EGO_HOPS};
use crate::rng::rng_for;

#[derive(Clone, Debug, PartialEq)]
pub struct FewShotTask {
    pub kind: TaskKind,
    pub shots: usize,
    /// Exactly `shots` instances per class, grouped by class.
    pub support: LabeledSet,
    /// Every other labeled instance, ascending node order.
    pub query: LabeledSet,
    pub seed: u64,
}

/// Labeled nodes of a target's first graph grouped by class, with their
/// ego networks pre-extracted for graph tasks so that repeated sampling
/// does not redo the BFS.
#[derive(Clone, Debug)]
pub struct InstancePool {
    kind: TaskKind,
    by_class: Vec<Vec<usize>>,
    labels: Vec<Option<usize>>,
    egos: Vec<Option<Arc<EgoNetwork>>>,
}

impl InstancePool {
    pub fn new(ds: &DomainDataset, kind: TaskKind, hops: usize) -> Result<Self> {
        let g = &ds.graphs()[0];
        if !g.has_labels() {
            return Err(Error::InvalidArgument(format!("domain `{}` has no labels", ds.domain_id)));
        }
        let mut by_class = vec![Vec::new(); ds.num_classes()];
        for v in 0..g.node_count() {
            if let Some(y) = g.label(v) {
                by_class[y].push(v);
            }
        }
        let egos = match kind {
            TaskKind::Node => Vec::new(),
            TaskKind::Graph => (0..g.node_count())
                .map(|v| {
                    g.label(v)
                        .map(|_| extract_ego_network(g, v, hops).map(Arc::new))
                        .transpose()
                })
                .collect::<Result<_>>()?,
        };
        Ok(Self {
            kind,
            by_class,
            labels: g.labels().to_vec(),
            egos,
        })
    }

    pub fn kind(&self) -> TaskKind {
        self.kind
    }

    fn instance(&self, v: usize) -> Instance {
        match self.kind {
            TaskKind::Node => Instance::Node(v),
            TaskKind::Graph => Instance::Graph(Arc::clone(self.egos[v].as_ref().expect("labeled"))),
        }
    }

    /// Uniformly samples `shots` support instances per class without
    /// replacement; the query set is the rest.
    pub fn sample(&self, shots: usize, seed: u64) -> Result<FewShotTask> {
        if shots == 0 {
            return Err(Error::InvalidArgument("shots must be positive".into()));
        }
        for (c, members) in self.by_class.iter().enumerate() {
            if members.len() < shots + 1 {
                return Err(Error::InvalidArgument(format!(
                    "class {c} has {} labeled instances, {shots}-shot needs at least {}",
                    members.len(),
                    shots + 1
                )));
            }
        }
        let mut in_support = vec![false; self.labels.len()];
        let mut support = Vec::with_capacity(shots * self.by_class.len());
        for (c, members) in self.by_class.iter().enumerate() {
            let mut rng = rng_for(seed, &[c as u64]);
            for i in sample(&mut rng, members.len(), shots) {
                let v = members[i];
                in_support[v] = true;
                support.push((self.instance(v), c));
            }
        }
        let query = (0..self.labels.len())
            .filter_map(|v| match self.labels[v] {
                Some(y) if !in_support[v] => Some((self.instance(v), y)),
                _ => None,
            })
            .collect();
        Ok(FewShotTask {
            kind: self.kind,
            shots,
            support: LabeledSet {
                kind: self.kind,
                instances: support,
            },
            query: LabeledSet {
                kind: self.kind,
                instances: query,
            },
            seed,
        })
    }
}

/// One task on the target's first graph, with the default ego radius.
pub fn sample_task(ds: &DomainDataset, kind: TaskKind, shots: usize, seed: u64) -> Result<FewShotTask> {
    InstancePool::new(ds, kind, DEFAULT_EGO_HOPS)?.sample(shots, seed)
}
