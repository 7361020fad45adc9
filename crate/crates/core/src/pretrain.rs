//! Contrastive link-prediction pre-training over several source domains.
//!
//! Each source graph is aligned to the shared dimension, multiplied by its
//! domain token, and encoded by one shared GCN. Triplets `(v, a, B)` pair an
//! anchor with a linked node and with non-neighbors; the loss pushes the
//! anchor's embedding toward the linked node relative to the non-neighbors.

use std::collections::BTreeMap;

use rand::Rng;

use crate::align::{fit_aligner, unify, DimensionAligner, DomainTokens, DEFAULT_ALIGNED_DIM};
use crate::encoder::{encode, GcnParams, DEFAULT_HIDDEN, DEFAULT_LAYERS};
use crate::error::{Error, Result};
use crate::graph::{DomainDataset, Graph};
use crate::rng::{derive_seed, rng_for};
use crate::tensor::{Adam, AdamConfig, Matrix, Tape, Var};

const MAX_EDGE_ATTEMPTS: usize = 100;
const TRIPLET_STREAM: u64 = 0x7472_6970;

/// Which graph of which source domain a triplet refers to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct GraphRef {
    pub domain: usize,
    pub graph: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Triplet {
    pub graph: GraphRef,
    pub anchor: usize,
    pub positive: usize,
    pub negatives: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TripletSet {
    pub triplets: Vec<Triplet>,
    pub seed: u64,
    pub negatives: usize,
}

impl TripletSet {
    pub fn len(&self) -> usize {
        self.triplets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triplets.is_empty()
    }
}

/// Draws `count_per_domain` triplets from every domain. Within a domain the
/// graph and edge are uniform, the edge orientation is a coin flip, and
/// negatives are uniform non-neighbors of the anchor without replacement.
/// Domain `i` uses its own RNG stream derived from `(seed, i)`.
pub fn sample_triplets(
    datasets: &[DomainDataset],
    negatives: usize,
    count_per_domain: usize,
    seed: u64,
) -> Result<TripletSet> {
    if negatives == 0 || count_per_domain == 0 {
        return Err(Error::InvalidArgument(
            "negatives and triplet count must be positive".into(),
        ));
    }
    let mut triplets = Vec::with_capacity(datasets.len() * count_per_domain);
    for (d, ds) in datasets.iter().enumerate() {
        for (gi, g) in ds.graphs().iter().enumerate() {
            if g.edge_count() == 0 || g.node_count() < negatives + 2 {
                return Err(Error::Sampling(format!(
                    "domain {} graph {gi}: need at least one edge and {} nodes",
                    ds.domain_id,
                    negatives + 2
                )));
            }
        }
        let mut rng = rng_for(seed, &[d as u64]);
        for _ in 0..count_per_domain {
            let gi = rng.random_range(0..ds.graphs().len());
            let g = &ds.graphs()[gi];
            let (anchor, positive, negs) = sample_one(g, negatives, &mut rng).map_err(|()| {
                Error::Sampling(format!(
                    "domain {}: no anchor with {negatives} non-neighbors after {MAX_EDGE_ATTEMPTS} edges",
                    ds.domain_id
                ))
            })?;
            triplets.push(Triplet {
                graph: GraphRef { domain: d, graph: gi },
                anchor,
                positive,
                negatives: negs,
            });
        }
    }
    Ok(TripletSet {
        triplets,
        seed,
        negatives,
    })
}

fn sample_one(g: &Graph, m: usize, rng: &mut impl Rng) -> Result<(usize, usize, Vec<usize>), ()> {
    let n = g.node_count();
    for _ in 0..MAX_EDGE_ATTEMPTS {
        let (a, b) = g.edges()[rng.random_range(0..g.edge_count())];
        let (v, p) = if rng.random_bool(0.5) { (a, b) } else { (b, a) };
        let pool_size = n - 1 - g.degree(v);
        if pool_size < m {
            continue;
        }
        let mut chosen = Vec::with_capacity(m);
        if pool_size >= 2 * m {
            while chosen.len() < m {
                let u = rng.random_range(0..n);
                if u != v && !g.has_edge(v, u) && !chosen.contains(&u) {
                    chosen.push(u);
                }
            }
        } else {
            let mut pool: Vec<usize> = (0..n).filter(|&u| u != v && !g.has_edge(v, u)).collect();
            for i in 0..m {
                let j = rng.random_range(i..pool.len());
                pool.swap(i, j);
            }
            chosen.extend_from_slice(&pool[..m]);
        }
        return Ok((v, p, chosen));
    }
    Err(())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossOptions {
    pub tau: f64,
    /// Adds the positive pair to the softmax denominator (standard InfoNCE).
    /// Off by default: the denominator runs over the negatives only.
    pub include_positive_in_denominator: bool,
}

impl Default for LossOptions {
    fn default() -> Self {
        Self {
            tau: 1.0,
            include_positive_in_denominator: false,
        }
    }
}

/// Source domains with their fitted aligners and aligned features.
#[derive(Clone, Debug)]
pub struct SourceDomains<'a> {
    pub datasets: &'a [DomainDataset],
    pub aligners: Vec<DimensionAligner>,
    /// `aligned[d][g]` is graph `g` of domain `d` projected to `d̃` columns.
    pub aligned: Vec<Vec<Matrix>>,
}

impl<'a> SourceDomains<'a> {
    pub fn fit(datasets: &'a [DomainDataset], aligned_dim: usize) -> Result<Self> {
        if datasets.is_empty() {
            return Err(Error::InvalidArgument("no source domains".into()));
        }
        for (i, ds) in datasets.iter().enumerate() {
            if datasets[..i].iter().any(|o| o.domain_id == ds.domain_id) {
                return Err(Error::InvalidArgument(format!(
                    "duplicate source domain `{}`",
                    ds.domain_id
                )));
            }
        }
        let aligners = datasets
            .iter()
            .map(|ds| fit_aligner(ds, aligned_dim))
            .collect::<Result<Vec<_>>>()?;
        let aligned = datasets
            .iter()
            .zip(&aligners)
            .map(|(ds, a)| ds.graphs().iter().map(|g| a.apply(g.features())).collect())
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            datasets,
            aligners,
            aligned,
        })
    }

    pub fn domain_ids(&self) -> Vec<String> {
        self.datasets.iter().map(|d| d.domain_id.clone()).collect()
    }
}

/// Contrastive loss summed over all triplets:
/// `−Σ ln[ exp(sim(v,a)/τ) / Σ_b exp(sim(v,b)/τ) ]` with cosine similarity.
///
/// `tokens[d]`, when given, multiplies the aligned features of domain `d`.
pub fn pretrain_loss<'t>(
    tape: &'t Tape,
    sources: &SourceDomains<'_>,
    weights: &[Var<'t>],
    tokens: Option<&[Var<'t>]>,
    triplets: &TripletSet,
    opts: LossOptions,
) -> Result<Var<'t>> {
    if triplets.is_empty() {
        return Err(Error::InvalidArgument("empty triplet set".into()));
    }
    if opts.tau <= 0.0 || !opts.tau.is_finite() {
        return Err(Error::InvalidArgument(format!("temperature must be positive, got {}", opts.tau)));
    }
    let mut groups: BTreeMap<GraphRef, Vec<&Triplet>> = BTreeMap::new();
    for t in &triplets.triplets {
        groups.entry(t.graph).or_default().push(t);
    }

    let inv_tau = 1.0 / opts.tau;
    let mut total: Option<Var<'t>> = None;
    for (r, group) in groups {
        let graph = sources
            .datasets
            .get(r.domain)
            .and_then(|d| d.graphs().get(r.graph))
            .ok_or_else(|| Error::InvalidArgument(format!("triplet refers to missing graph {r:?}")))?;
        let mut x = tape.constant(sources.aligned[r.domain][r.graph].clone());
        if let Some(tokens) = tokens {
            x = unify(tokens[r.domain], x)?;
        }
        let h = encode(graph, x, weights)?.l2_normalize_rows();

        let m = triplets.negatives;
        let width = m + usize::from(opts.include_positive_in_denominator);
        let anchors: Vec<usize> = group.iter().map(|t| t.anchor).collect();
        let positives: Vec<usize> = group.iter().map(|t| t.positive).collect();
        let mut rep_anchors = Vec::with_capacity(group.len() * width);
        let mut candidates = Vec::with_capacity(group.len() * width);
        for t in &group {
            if t.negatives.len() != m {
                return Err(Error::InvalidArgument(format!(
                    "triplet has {} negatives, set declares {m}",
                    t.negatives.len()
                )));
            }
            rep_anchors.extend(std::iter::repeat_n(t.anchor, width));
            if opts.include_positive_in_denominator {
                candidates.push(t.positive);
            }
            candidates.extend_from_slice(&t.negatives);
        }

        let s_pos = h.pair_dots(anchors, positives)?;
        let s_cand = h.pair_dots(rep_anchors, candidates)?.reshape(group.len(), width)?;
        let denom = s_cand.scale(inv_tau).logsumexp_rows()?.sum();
        let term = denom.sub(s_pos.sum().scale(inv_tau))?;
        total = Some(match total {
            Some(acc) => acc.add(term)?,
            None => term,
        });
    }
    Ok(total.expect("at least one group"))
}

#[derive(Clone, Debug, PartialEq)]
pub struct PretrainConfig {
    pub aligned_dim: usize,
    pub hidden: usize,
    pub layers: usize,
    pub tau: f64,
    pub negatives: usize,
    /// `None` means `min(|E|, 2000)` per domain.
    pub triplets_per_domain: Option<usize>,
    pub epochs: usize,
    pub lr: f64,
    pub seed: u64,
    /// Learn domain tokens. When off, tokens stay all-ones and unused.
    pub domain_tokens: bool,
    pub include_positive_in_denominator: bool,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            aligned_dim: DEFAULT_ALIGNED_DIM,
            hidden: DEFAULT_HIDDEN,
            layers: DEFAULT_LAYERS,
            tau: 1.0,
            negatives: 5,
            triplets_per_domain: None,
            epochs: 100,
            lr: 1e-3,
            seed: 0,
            domain_tokens: true,
            include_positive_in_denominator: false,
        }
    }
}

impl PretrainConfig {
    fn loss_options(&self) -> LossOptions {
        LossOptions {
            tau: self.tau,
            include_positive_in_denominator: self.include_positive_in_denominator,
        }
    }
}

/// Settings recorded alongside pre-trained weights.
#[derive(Clone, Debug, PartialEq)]
pub struct BundleConfig {
    pub aligned_dim: usize,
    pub hidden: usize,
    pub layers: usize,
    pub tau: f64,
    pub domain_tokens: bool,
}

/// Frozen output of pre-training.
#[derive(Clone, Debug, PartialEq)]
pub struct PretrainedBundle {
    pub gcn: GcnParams,
    pub tokens: DomainTokens,
    pub aligners: Vec<DimensionAligner>,
    pub config: BundleConfig,
}

impl PretrainedBundle {
    pub fn new(
        gcn: GcnParams,
        tokens: DomainTokens,
        aligners: Vec<DimensionAligner>,
        config: BundleConfig,
    ) -> Result<Self> {
        let token_ids: Vec<&str> = tokens.ids().collect();
        let aligner_ids: Vec<&str> = aligners.iter().map(|a| a.domain_id.as_str()).collect();
        if token_ids != aligner_ids {
            return Err(Error::InvalidArgument(format!(
                "token domains {token_ids:?} differ from aligner domains {aligner_ids:?}"
            )));
        }
        if tokens.dim() != config.aligned_dim || gcn.in_dim() != config.aligned_dim {
            return Err(Error::shape("bundle", "token/encoder width differs from aligned dim"));
        }
        if gcn.hidden() != config.hidden || gcn.layers() != config.layers {
            return Err(Error::shape("bundle", "encoder shape differs from config"));
        }
        let mut b = Self {
            gcn,
            tokens,
            aligners,
            config,
        };
        b.freeze();
        Ok(b)
    }

    /// Number of source domains.
    pub fn k(&self) -> usize {
        self.tokens.len()
    }

    pub fn freeze(&mut self) {
        self.gcn.set_requires_grad(false);
        self.tokens.set_requires_grad(false);
    }

    pub fn is_frozen(&self) -> bool {
        self.gcn.is_frozen() && self.tokens.iter().all(|(_, t)| !t.requires_grad())
    }
}

#[derive(Clone, Debug)]
pub struct PretrainOutcome {
    pub bundle: PretrainedBundle,
    /// Loss of each epoch, measured before that epoch's update.
    pub losses: Vec<f64>,
}

pub fn triplets_per_domain(ds: &DomainDataset, cfg: &PretrainConfig) -> usize {
    cfg.triplets_per_domain.unwrap_or_else(|| {
        let edges: usize = ds.graphs().iter().map(Graph::edge_count).sum();
        edges.clamp(1, 2000)
    })
}

/// Sampling seed of epoch `epoch`.
pub fn epoch_seed(cfg: &PretrainConfig, epoch: usize) -> u64 {
    derive_seed(cfg.seed, &[TRIPLET_STREAM, epoch as u64])
}

/// Fits aligners, then runs `cfg.epochs` Adam steps on freshly sampled
/// triplets. `on_epoch(epoch, loss)` is called after every step.
pub fn pretrain(
    datasets: &[DomainDataset],
    cfg: &PretrainConfig,
    mut on_epoch: impl FnMut(usize, f64),
) -> Result<PretrainOutcome> {
    pretrain_observed(datasets, cfg, |step| on_epoch(step.epoch, step.loss))
}

/// State visible to [`pretrain_observed`] after each parameter update.
pub struct StepView<'a> {
    pub epoch: usize,
    /// Loss before the update.
    pub loss: f64,
    pub gcn: &'a GcnParams,
    pub tokens: &'a DomainTokens,
}

/// [`pretrain`], with the updated parameters exposed after every step.
pub fn pretrain_observed(
    datasets: &[DomainDataset],
    cfg: &PretrainConfig,
    mut observe: impl FnMut(&StepView<'_>),
) -> Result<PretrainOutcome> {
    let sources = SourceDomains::fit(datasets, cfg.aligned_dim)?;
    let mut gcn = GcnParams::init(cfg.aligned_dim, cfg.hidden, cfg.layers, cfg.seed)?;
    let mut tokens = DomainTokens::init(&sources.domain_ids(), cfg.aligned_dim)?;
    tokens.set_requires_grad(cfg.domain_tokens);
    let per_domain = datasets
        .iter()
        .map(|d| triplets_per_domain(d, cfg))
        .min()
        .expect("at least one domain");

    let mut adam = Adam::new(AdamConfig::with_lr(cfg.lr));
    let mut losses = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let triplets = sample_triplets(datasets, cfg.negatives, per_domain, epoch_seed(cfg, epoch))?;
        let tape = Tape::new();
        let weights = gcn.leaves(&tape);
        let token_vars: Vec<Var<'_>> = tokens.iter().map(|(_, t)| tape.leaf(t)).collect();
        let loss = pretrain_loss(
            &tape,
            &sources,
            &weights,
            cfg.domain_tokens.then_some(token_vars.as_slice()),
            &triplets,
            cfg.loss_options(),
        )?;
        let value = loss.item();
        if !value.is_finite() {
            return Err(Error::NonFinite(format!("pre-training loss at epoch {epoch}: {value}")));
        }
        let grads = tape.backward(loss)?;
        for (v, w) in weights.iter().zip(gcn.weights_mut()) {
            grads.accumulate_into(*v, w)?;
        }
        let mut params: Vec<&mut crate::tensor::Tensor> = gcn.weights_mut().iter_mut().collect();
        if cfg.domain_tokens {
            for (v, (_, t)) in token_vars.iter().zip(tokens.iter_mut()) {
                grads.accumulate_into(*v, t)?;
                params.push(t);
            }
        }
        // weights with no gradient path (all-dead ReLUs) still step with zero
        for p in params.iter_mut() {
            if p.grad().is_none() {
                let zeros = Matrix::zeros(p.shape());
                p.accumulate_grad(&zeros)?;
            }
        }
        adam.step(&mut params)?;
        log::debug!("epoch {epoch} loss {value}");
        observe(&StepView {
            epoch,
            loss: value,
            gcn: &gcn,
            tokens: &tokens,
        });
        losses.push(value);
    }

    let bundle = PretrainedBundle::new(
        gcn,
        tokens,
        sources.aligners,
        BundleConfig {
            aligned_dim: cfg.aligned_dim,
            hidden: cfg.hidden,
            layers: cfg.layers,
            tau: cfg.tau,
            domain_tokens: cfg.domain_tokens,
        },
    )?;
    Ok(PretrainOutcome { bundle, losses })
}

/// Evaluates the pre-training loss of fixed parameters without recording
/// gradients into them.
pub fn evaluate_pretrain_loss(
    sources: &SourceDomains<'_>,
    gcn: &GcnParams,
    tokens: Option<&DomainTokens>,
    triplets: &TripletSet,
    opts: LossOptions,
) -> Result<f64> {
    let tape = Tape::new();
    let weights: Vec<_> = gcn.weights().iter().map(|w| tape.constant(w.data().clone())).collect();
    let token_vars: Option<Vec<_>> =
        tokens.map(|t| t.iter().map(|(_, t)| tape.constant(t.data().clone())).collect());
    let loss = pretrain_loss(&tape, sources, &weights, token_vars.as_deref(), triplets, opts)?;
    let v = loss.item();
    Ok(v)
}
