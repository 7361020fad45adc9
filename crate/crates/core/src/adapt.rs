//! Downstream adaptation with a frozen pre-trained bundle.
//!
//! Two learnable prompts modulate the aligned target features before the
//! frozen encoder: a unifying prompt `p_uni` and a mixing prompt
//! `p_mix = Σ γ_i t_i` built from the frozen domain tokens. The embeddings of
//! both branches are summed, class prototypes are the mean support
//! embeddings, and classification picks the prototype with the largest
//! cosine similarity.

use std::sync::Arc;

use crate::align::{fit_aligner, unify, DimensionAligner};
use crate::encoder::{encode, readout};
use crate::error::{Error, Result};
use crate::graph::{DomainDataset, EgoNetwork};
use crate::pretrain::PretrainedBundle;
use crate::tensor::{cosine_rows, Adam, AdamConfig, Matrix, Tape, Tensor, Var};

/// The learnable downstream state: `p_uni` (`1 × d̃`) and `gamma` (`1 × K`).
#[derive(Clone, Debug, PartialEq)]
pub struct DualPrompts {
    pub p_uni: Tensor,
    pub gamma: Tensor,
}

impl DualPrompts {
    /// `p_uni = 1`, `γ_i = 1/K`.
    pub fn init(aligned_dim: usize, k: usize) -> Result<Self> {
        if aligned_dim == 0 || k == 0 {
            return Err(Error::InvalidArgument("prompt sizes must be positive".into()));
        }
        Ok(Self {
            p_uni: Tensor::param(Matrix::ones((1, aligned_dim))),
            gamma: Tensor::param(Matrix::from_elem((1, k), 1.0 / k as f64)),
        })
    }

    pub fn for_bundle(bundle: &PretrainedBundle) -> Result<Self> {
        Self::init(bundle.config.aligned_dim, bundle.k())
    }

    pub fn from_values(p_uni: Matrix, gamma: Matrix) -> Result<Self> {
        if p_uni.nrows() != 1 || gamma.nrows() != 1 || p_uni.is_empty() || gamma.is_empty() {
            return Err(Error::shape("prompts", "p_uni and gamma must be non-empty row vectors"));
        }
        Ok(Self {
            p_uni: Tensor::param(p_uni),
            gamma: Tensor::param(gamma),
        })
    }

    /// Learnable scalars: `d̃ + K`.
    pub fn tunable_count(&self) -> usize {
        self.p_uni.len() + self.gamma.len()
    }
}

/// Which prompt branches feed the frozen encoder. With neither, the aligned
/// features are encoded as-is and nothing is tuned.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Branches {
    pub unifying: bool,
    pub mixing: bool,
}

impl Branches {
    pub const BOTH: Self = Self {
        unifying: true,
        mixing: true,
    };
    pub const NONE: Self = Self {
        unifying: false,
        mixing: false,
    };

    pub fn any(self) -> bool {
        self.unifying || self.mixing
    }
}

impl Default for Branches {
    fn default() -> Self {
        Self::BOTH
    }
}

/// `p_mix = gamma · T` with `T` the `K × d̃` stack of domain tokens.
pub fn mixing_prompt<'t>(gamma: Var<'t>, tokens: Var<'t>) -> Result<Var<'t>> {
    let (_, k) = gamma.shape();
    if tokens.shape().0 != k {
        return Err(Error::shape(
            "mixing_prompt",
            format!("{k} coefficients for {} tokens", tokens.shape().0),
        ));
    }
    gamma.matmul(tokens)
}

/// Tape leaves of a frozen bundle plus the prompts, ready for encoding.
pub struct PromptContext<'t> {
    pub weights: Vec<Var<'t>>,
    pub p_uni: Var<'t>,
    pub p_mix: Var<'t>,
    pub gamma: Var<'t>,
    pub branches: Branches,
}

impl<'t> PromptContext<'t> {
    pub fn new(
        tape: &'t Tape,
        bundle: &PretrainedBundle,
        prompts: &DualPrompts,
        branches: Branches,
    ) -> Result<Self> {
        if !bundle.is_frozen() {
            return Err(Error::InvalidArgument("bundle must be frozen during adaptation".into()));
        }
        if prompts.p_uni.shape().1 != bundle.config.aligned_dim || prompts.gamma.shape().1 != bundle.k() {
            return Err(Error::shape(
                "prompts",
                format!(
                    "p_uni {:?} / gamma {:?} for d̃ = {}, K = {}",
                    prompts.p_uni.shape(),
                    prompts.gamma.shape(),
                    bundle.config.aligned_dim,
                    bundle.k()
                ),
            ));
        }
        let weights = bundle.gcn.leaves(tape);
        let p_uni = tape.leaf(&prompts.p_uni);
        let gamma = tape.leaf(&prompts.gamma);
        let p_mix = mixing_prompt(gamma, tape.constant(bundle.tokens.stacked()))?;
        Ok(Self {
            weights,
            p_uni,
            p_mix,
            gamma,
            branches,
        })
    }
}

/// `GE(p_uni ⊙ X̃) + GE(p_mix ⊙ X̃)` (or the enabled branch alone).
pub fn prompted_encode<'t>(
    g: &crate::graph::Graph,
    aligned: Var<'t>,
    ctx: &PromptContext<'t>,
) -> Result<Var<'t>> {
    let uni = if ctx.branches.unifying {
        Some(encode(g, unify(ctx.p_uni, aligned)?, &ctx.weights)?)
    } else {
        None
    };
    let mix = if ctx.branches.mixing {
        Some(encode(g, unify(ctx.p_mix, aligned)?, &ctx.weights)?)
    } else {
        None
    };
    match (uni, mix) {
        (Some(a), Some(b)) => a.add(b),
        (Some(a), None) | (None, Some(a)) => Ok(a),
        (None, None) => encode(g, aligned, &ctx.weights),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum TaskKind {
    Node,
    Graph,
}

impl std::str::FromStr for TaskKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "node" => Ok(TaskKind::Node),
            "graph" => Ok(TaskKind::Graph),
            other => Err(Error::InvalidArgument(format!("unknown task kind `{other}`"))),
        }
    }
}

impl std::fmt::Display for TaskKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            TaskKind::Node => "node",
            TaskKind::Graph => "graph",
        })
    }
}

/// A node of the target's first graph, or an ego network around one.
#[derive(Clone, Debug, PartialEq)]
pub enum Instance {
    Node(usize),
    Graph(Arc<EgoNetwork>),
}

impl Instance {
    /// Source node the instance is anchored at.
    pub fn node(&self) -> usize {
        match self {
            Instance::Node(v) => *v,
            Instance::Graph(e) => e.center,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LabeledSet {
    pub kind: TaskKind,
    pub instances: Vec<(Instance, usize)>,
}

impl LabeledSet {
    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.instances.iter().map(|(_, y)| *y).collect()
    }

    /// Distinct labels, ascending.
    pub fn classes(&self) -> Vec<usize> {
        let mut c = self.labels();
        c.sort_unstable();
        c.dedup();
        c
    }
}

/// A target domain with its own freshly fitted aligner.
#[derive(Clone, Debug)]
pub struct TargetDomain {
    pub dataset: DomainDataset,
    pub aligner: DimensionAligner,
    /// Aligned features of the first graph.
    pub aligned: Matrix,
}

impl TargetDomain {
    pub fn new(dataset: DomainDataset, aligned_dim: usize) -> Result<Self> {
        let aligner = fit_aligner(&dataset, aligned_dim)?;
        let aligned = aligner.apply(dataset.graphs()[0].features())?;
        Ok(Self {
            dataset,
            aligner,
            aligned,
        })
    }

    pub fn graph(&self) -> &crate::graph::Graph {
        &self.dataset.graphs()[0]
    }

    fn ego_features(&self, ego: &EgoNetwork) -> Matrix {
        self.aligned.select(ndarray::Axis(0), &ego.nodes)
    }
}

/// Embeddings (`n × h`) of the given instances. Node instances share one
/// encoding of the whole target graph; graph instances are encoded one ego
/// network at a time and mean-pooled.
pub fn instance_embeddings<'t>(
    tape: &'t Tape,
    target: &TargetDomain,
    instances: &[&Instance],
    ctx: &PromptContext<'t>,
) -> Result<Var<'t>> {
    if instances.is_empty() {
        return Err(Error::InvalidArgument("no instances to embed".into()));
    }
    if instances.iter().all(|i| matches!(i, Instance::Node(_))) {
        let x = tape.constant(target.aligned.clone());
        let h = prompted_encode(target.graph(), x, ctx)?;
        let rows: Vec<usize> = instances.iter().map(|i| i.node()).collect();
        return h.gather_rows(rows);
    }
    let mut rows = Vec::with_capacity(instances.len());
    for inst in instances {
        let Instance::Graph(ego) = inst else {
            return Err(Error::InvalidArgument("mixed node and graph instances".into()));
        };
        let x = tape.constant(target.ego_features(ego));
        rows.push(readout(prompted_encode(&ego.graph, x, ctx)?)?);
    }
    tape.concat_rows(&rows)
}

/// Class prototypes: row `c` is the mean embedding of class `classes[c]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Prototypes {
    pub classes: Vec<usize>,
    pub matrix: Matrix,
}

fn averaging_matrix(labels: &[usize], classes: &[usize]) -> Result<Matrix> {
    let mut m = Matrix::zeros((classes.len(), labels.len()));
    for (c, &class) in classes.iter().enumerate() {
        let members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        if members.is_empty() {
            return Err(Error::InvalidArgument(format!("class {class} has no support instances")));
        }
        for i in members.iter().copied() {
            m[[c, i]] = 1.0 / members.len() as f64;
        }
    }
    Ok(m)
}

/// Differentiable prototypes (`C × h`) for `classes` from embedding rows.
pub fn build_prototypes<'t>(emb: Var<'t>, labels: &[usize], classes: &[usize]) -> Result<Var<'t>> {
    if labels.len() != emb.shape().0 {
        return Err(Error::shape("build_prototypes", "one label per embedding row"));
    }
    let avg = averaging_matrix(labels, classes)?;
    emb.tape().constant(avg).matmul(emb)
}

/// Cross-entropy over classes of the cosine similarities between each
/// instance and every prototype, scaled by `1/τ`, summed over instances.
pub fn downstream_loss<'t>(
    emb: Var<'t>,
    labels: &[usize],
    protos: Var<'t>,
    classes: &[usize],
    tau: f64,
) -> Result<Var<'t>> {
    if labels.is_empty() {
        return Err(Error::InvalidArgument("empty support set".into()));
    }
    if tau <= 0.0 || !tau.is_finite() {
        return Err(Error::InvalidArgument(format!("temperature must be positive, got {tau}")));
    }
    let mut onehot = Matrix::zeros((labels.len(), classes.len()));
    for (i, y) in labels.iter().enumerate() {
        let c = classes
            .iter()
            .position(|c| c == y)
            .ok_or_else(|| Error::InvalidArgument(format!("label {y} has no prototype")))?;
        onehot[[i, c]] = 1.0;
    }
    let logits = emb
        .l2_normalize_rows()
        .matmul(protos.l2_normalize_rows().transpose())?
        .scale(1.0 / tau);
    let own = logits.mul(emb.tape().constant(onehot))?.sum();
    logits.logsumexp_rows()?.sum().sub(own)
}

/// Index into `protos.classes` order is resolved to the class id. Ties go to
/// the lowest class id.
pub fn classify_embeddings(emb: &Matrix, protos: &Prototypes) -> Result<Vec<usize>> {
    if protos.classes.is_empty() {
        return Err(Error::InvalidArgument("no prototypes".into()));
    }
    let mut order: Vec<usize> = (0..protos.classes.len()).collect();
    order.sort_by_key(|&c| protos.classes[c]);
    let sims = cosine_rows(emb, &protos.matrix);
    Ok(sims
        .rows()
        .into_iter()
        .map(|row| {
            let mut best = order[0];
            for &c in &order[1..] {
                if row[c] > row[best] {
                    best = c;
                }
            }
            protos.classes[best]
        })
        .collect())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdaptConfig {
    pub steps: usize,
    pub lr: f64,
    pub tau: f64,
    pub branches: Branches,
}

impl Default for AdaptConfig {
    fn default() -> Self {
        Self {
            steps: 100,
            lr: 1e-2,
            tau: 1.0,
            branches: Branches::BOTH,
        }
    }
}

#[derive(Clone, Debug)]
pub struct TuneOutcome {
    pub prompts: DualPrompts,
    pub losses: Vec<f64>,
}

/// Tunes `p_uni` and `gamma` (only those of enabled branches) on the support
/// set with Adam; prototypes are rebuilt from the current embeddings at
/// every step. The bundle is only read.
pub fn tune_prompts(
    support: &LabeledSet,
    target: &TargetDomain,
    bundle: &PretrainedBundle,
    cfg: &AdaptConfig,
) -> Result<TuneOutcome> {
    let mut prompts = DualPrompts::for_bundle(bundle)?;
    prompts.p_uni.set_requires_grad(cfg.branches.unifying);
    prompts.gamma.set_requires_grad(cfg.branches.mixing);
    if support.is_empty() {
        return Err(Error::InvalidArgument("empty support set".into()));
    }
    let labels = support.labels();
    let classes = support.classes();
    let instances: Vec<&Instance> = support.instances.iter().map(|(i, _)| i).collect();

    let mut adam = Adam::new(AdamConfig::with_lr(cfg.lr));
    let mut losses = Vec::with_capacity(cfg.steps);
    let steps = if cfg.branches.any() { cfg.steps } else { 0 };
    for step in 0..steps {
        let tape = Tape::new();
        let ctx = PromptContext::new(&tape, bundle, &prompts, cfg.branches)?;
        let emb = instance_embeddings(&tape, target, &instances, &ctx)?;
        let protos = build_prototypes(emb, &labels, &classes)?;
        let loss = downstream_loss(emb, &labels, protos, &classes, cfg.tau)?;
        let value = loss.item();
        if !value.is_finite() {
            return Err(Error::NonFinite(format!("adaptation loss at step {step}: {value}")));
        }
        let grads = tape.backward(loss)?;
        let mut params: Vec<&mut Tensor> = Vec::new();
        if cfg.branches.unifying {
            grads.accumulate_into(ctx.p_uni, &mut prompts.p_uni)?;
            params.push(&mut prompts.p_uni);
        }
        if cfg.branches.mixing {
            grads.accumulate_into(ctx.gamma, &mut prompts.gamma)?;
            params.push(&mut prompts.gamma);
        }
        for p in params.iter_mut() {
            if p.grad().is_none() {
                let z = Matrix::zeros(p.shape());
                p.accumulate_grad(&z)?;
            }
        }
        adam.step(&mut params)?;
        losses.push(value);
    }
    Ok(TuneOutcome { prompts, losses })
}

/// Embeddings of instances under fixed prompts.
pub fn embed(
    instances: &[&Instance],
    target: &TargetDomain,
    bundle: &PretrainedBundle,
    prompts: &DualPrompts,
    branches: Branches,
) -> Result<Matrix> {
    let tape = Tape::new();
    let ctx = PromptContext::new(&tape, bundle, prompts, branches)?;
    let emb = instance_embeddings(&tape, target, instances, &ctx)?;
    let out = emb.value().clone();
    Ok(out)
}

/// Prototypes of the support set under fixed prompts.
pub fn support_prototypes(
    support: &LabeledSet,
    target: &TargetDomain,
    bundle: &PretrainedBundle,
    prompts: &DualPrompts,
    branches: Branches,
) -> Result<Prototypes> {
    let instances: Vec<&Instance> = support.instances.iter().map(|(i, _)| i).collect();
    let emb = embed(&instances, target, bundle, prompts, branches)?;
    let classes = support.classes();
    let avg = averaging_matrix(&support.labels(), &classes)?;
    Ok(Prototypes {
        classes,
        matrix: avg.dot(&emb),
    })
}

/// Predicted class of every instance.
pub fn classify(
    instances: &[&Instance],
    target: &TargetDomain,
    bundle: &PretrainedBundle,
    prompts: &DualPrompts,
    protos: &Prototypes,
    branches: Branches,
) -> Result<Vec<usize>> {
    let emb = embed(instances, target, bundle, prompts, branches)?;
    classify_embeddings(&emb, protos)
}
