//! Synthetic multi-domain fixtures: stochastic block model graphs whose
//! blocks are the classes, with features drawn around a per-class basis
//! vector in each domain's own feature space.
//!
//! Spec files use the `key = value` dialect. Top-level keys set defaults
//! for every domain and `<id>.<key>` overrides them for one domain:
//!
//! ```text
//! classes = 3
//! seed = 7
//! domains = a,b,c
//! nodes = 200
//! p_intra = 0.1
//! p_inter = 0.01
//! feature_dim = 32
//! noise = 0.5
//! c.related_to = a
//! c.angle = 0.3
//! ```
//!
//! A domain with `related_to` reuses the other domain's class basis rotated
//! by `angle` radians, so the two share class semantics in the same
//! feature space.

use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::graph::{DomainDataset, Graph};
use crate::io::parse_key_values;
use crate::rng::rng_for;
use crate::tensor::Matrix;

const BASIS_STREAM: u64 = 0x6261_7369;
const ROTATE_STREAM: u64 = 0x0072_6f74;
const EDGE_STREAM: u64 = 0x6564_6765;
const NOISE_STREAM: u64 = 0x6e6f_6973;

#[derive(Clone, Debug, PartialEq)]
pub struct DomainSpec {
    pub id: String,
    pub nodes: usize,
    pub p_intra: f64,
    pub p_inter: f64,
    pub feature_dim: usize,
    /// Standard deviation of the per-entry Gaussian feature noise.
    pub noise: f64,
    /// `(earlier domain index, rotation angle)`.
    pub related_to: Option<(usize, f64)>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthSpec {
    pub classes: usize,
    pub seed: u64,
    pub domains: Vec<DomainSpec>,
}

impl SynthSpec {
    /// `k` unrelated domains `d0..d{k-1}` with identical settings.
    pub fn uniform(
        k: usize,
        classes: usize,
        nodes: usize,
        (p_intra, p_inter): (f64, f64),
        feature_dim: usize,
        noise: f64,
        seed: u64,
    ) -> Self {
        Self {
            classes,
            seed,
            domains: (0..k)
                .map(|i| DomainSpec {
                    id: format!("d{i}"),
                    nodes,
                    p_intra,
                    p_inter,
                    feature_dim,
                    noise,
                    related_to: None,
                })
                .collect(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.classes == 0 || self.domains.is_empty() {
            return Err(Error::Config("need at least one class and one domain".into()));
        }
        for (i, d) in self.domains.iter().enumerate() {
            let bad = |msg: String| Err(Error::Config(format!("domain `{}`: {msg}", d.id)));
            if d.id.is_empty() || !d.id.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-') {
                return bad("ids may only use letters, digits, `_` and `-`".into());
            }
            if self.domains[..i].iter().any(|o| o.id == d.id) {
                return bad("duplicate id".into());
            }
            for (name, p) in [("p_intra", d.p_intra), ("p_inter", d.p_inter)] {
                if !(0.0..=1.0).contains(&p) {
                    return bad(format!("{name} = {p} is not a probability"));
                }
            }
            if d.feature_dim < self.classes {
                return bad(format!("feature_dim {} is below the class count {}", d.feature_dim, self.classes));
            }
            if d.nodes < self.classes {
                return bad(format!("{} nodes cannot hold {} blocks", d.nodes, self.classes));
            }
            if !(d.noise >= 0.0 && d.noise.is_finite()) {
                return bad(format!("noise {} must be finite and non-negative", d.noise));
            }
            if let Some((j, angle)) = d.related_to {
                if j >= i {
                    return bad("related_to must name an earlier domain".into());
                }
                if self.domains[j].feature_dim != d.feature_dim {
                    return bad("related domains need equal feature_dim".into());
                }
                if !angle.is_finite() {
                    return bad("angle must be finite".into());
                }
            }
        }
        Ok(())
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let entries = parse_key_values(text, path).map_err(|e| Error::Config(e.to_string()))?;
        let get = |k: &str| entries.iter().find(|e| e.key == k).map(|e| e.value.as_str());
        fn num<T: std::str::FromStr>(k: &str, v: &str) -> Result<T> {
            v.parse()
                .map_err(|_| Error::Config(format!("invalid value `{v}` for `{k}`")))
        }
        let ids: Vec<String> = get("domains")
            .ok_or_else(|| Error::Config("missing key `domains`".into()))?
            .split(',')
            .map(|s| s.trim().to_string())
            .collect();
        const DOMAIN_KEYS: [&str; 7] = ["nodes", "p_intra", "p_inter", "feature_dim", "noise", "related_to", "angle"];
        for e in &entries {
            let known = match e.key.split_once('.') {
                Some((id, k)) => ids.iter().any(|i| i == id) && DOMAIN_KEYS.contains(&k),
                None => matches!(e.key.as_str(), "classes" | "seed" | "domains") || DOMAIN_KEYS[..5].contains(&e.key.as_str()),
            };
            if !known {
                return Err(Error::Config(format!("line {}: unknown key `{}`", e.line, e.key)));
            }
        }
        let lookup = |id: &str, k: &str| get(&format!("{id}.{k}")).or_else(|| get(k));
        let need = |id: &str, k: &str| {
            lookup(id, k).ok_or_else(|| Error::Config(format!("domain `{id}`: missing `{k}`")))
        };
        let mut domains = Vec::with_capacity(ids.len());
        for id in &ids {
            let related_to = match get(&format!("{id}.related_to")) {
                None => None,
                Some(other) => {
                    let j = ids
                        .iter()
                        .position(|i| i == other)
                        .ok_or_else(|| Error::Config(format!("domain `{id}`: unknown related_to `{other}`")))?;
                    let angle = lookup(id, "angle").map_or(Ok(0.0), |v| num("angle", v))?;
                    Some((j, angle))
                }
            };
            domains.push(DomainSpec {
                id: id.clone(),
                nodes: num("nodes", need(id, "nodes")?)?,
                p_intra: num("p_intra", need(id, "p_intra")?)?,
                p_inter: num("p_inter", need(id, "p_inter")?)?,
                feature_dim: num("feature_dim", need(id, "feature_dim")?)?,
                noise: num("noise", need(id, "noise")?)?,
                related_to,
            });
        }
        let spec = Self {
            classes: num("classes", get("classes").ok_or_else(|| Error::Config("missing key `classes`".into()))?)?,
            seed: get("seed").map_or(Ok(0), |v| num("seed", v))?,
            domains,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }
}

/// Class basis of domain `i` (`classes × feature_dim`), one row per class.
fn class_basis(spec: &SynthSpec, i: usize, seed: u64) -> Matrix {
    let d = &spec.domains[i];
    match d.related_to {
        None => {
            let mut rng = rng_for(seed, &[BASIS_STREAM, i as u64]);
            Matrix::from_shape_fn((spec.classes, d.feature_dim), |_| StandardNormal.sample(&mut rng))
        }
        Some((j, angle)) => {
            let mut b = class_basis(spec, j, seed);
            let mut rng = rng_for(seed, &[ROTATE_STREAM, i as u64]);
            for mut row in b.rows_mut() {
                let norm = row.dot(&row).sqrt();
                let mut u: ndarray::Array1<f64> =
                    (0..row.len()).map(|_| StandardNormal.sample(&mut rng)).collect();
                if norm > 0.0 {
                    let proj = u.dot(&row) / (norm * norm);
                    u.scaled_add(-proj, &row);
                }
                let un = u.dot(&u).sqrt();
                if un > 0.0 {
                    u *= norm / un;
                }
                let rotated = &row * angle.cos() + &u * angle.sin();
                row.assign(&rotated);
            }
            b
        }
    }
}

/// Block of node `v` when `n` nodes are split into `k` contiguous, nearly
/// equal blocks (the first `n % k` blocks get one extra node).
pub fn block_of(v: usize, n: usize, k: usize) -> usize {
    let (q, r) = (n / k, n % k);
    let big = r * (q + 1);
    if v < big {
        v / (q + 1)
    } else {
        r + (v - big) / q
    }
}

pub fn generate_synthetic_domain(spec: &SynthSpec, index: usize, seed: u64) -> Result<DomainDataset> {
    spec.validate()?;
    let d = spec.domains.get(index).ok_or_else(|| {
        Error::InvalidArgument(format!("domain index {index} outside spec of {}", spec.domains.len()))
    })?;
    let n = d.nodes;
    let k = spec.classes;
    let labels: Vec<usize> = (0..n).map(|v| block_of(v, n, k)).collect();

    let mut rng = rng_for(seed, &[EDGE_STREAM, index as u64]);
    let mut edges = Vec::new();
    for u in 0..n {
        for v in u + 1..n {
            let p = if labels[u] == labels[v] { d.p_intra } else { d.p_inter };
            if rng.random_bool(p) {
                edges.push((u, v));
            }
        }
    }

    let basis = class_basis(spec, index, seed);
    let mut rng = rng_for(seed, &[NOISE_STREAM, index as u64]);
    let mut features = Matrix::zeros((n, d.feature_dim));
    for (v, mut row) in features.rows_mut().into_iter().enumerate() {
        row.assign(&basis.row(labels[v]));
        if d.noise > 0.0 {
            for x in row.iter_mut() {
                let z: f64 = StandardNormal.sample(&mut rng);
                *x += d.noise * z;
            }
        }
    }
    let g = Graph::new(n, edges, features, labels.into_iter().map(Some).collect())?;
    DomainDataset::new(d.id.clone(), vec![g], (0..k).map(|c| format!("c{c}")).collect())
}

/// Every domain of the spec under `spec.seed`.
pub fn generate_all(spec: &SynthSpec) -> Result<Vec<DomainDataset>> {
    (0..spec.domains.len())
        .map(|i| generate_synthetic_domain(spec, i, spec.seed))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn extreme_probabilities_give_disjoint_cliques() {
        let spec = SynthSpec::uniform(1, 2, 6, (1.0, 0.0), 3, 0.0, 1);
        let ds = generate_synthetic_domain(&spec, 0, 1).unwrap();
        let g = &ds.graphs()[0];
        assert_eq!(g.edges(), &[(0, 1), (0, 2), (1, 2), (3, 4), (3, 5), (4, 5)]);
        assert_eq!(g.labels(), &[Some(0), Some(0), Some(0), Some(1), Some(1), Some(1)]);
    }

    #[test]
    fn zero_noise_rows_are_identical_within_class() {
        let spec = SynthSpec::uniform(1, 3, 30, (0.2, 0.05), 5, 0.0, 4);
        let ds = generate_synthetic_domain(&spec, 0, 4).unwrap();
        let g = &ds.graphs()[0];
        for u in 0..30 {
            for v in 0..30 {
                if g.label(u) == g.label(v) {
                    assert_eq!(g.features().row(u), g.features().row(v));
                }
            }
        }
    }

    #[test]
    fn intra_density_matches_probability() {
        let spec = SynthSpec::uniform(1, 2, 200, (0.3, 0.02), 2, 0.1, 0);
        let mut total = 0.0;
        for seed in 0..50 {
            let ds = generate_synthetic_domain(&spec, 0, seed).unwrap();
            let g = &ds.graphs()[0];
            let intra = g.edges().iter().filter(|(a, b)| g.label(*a) == g.label(*b)).count();
            total += intra as f64 / (2.0 * 100.0 * 99.0 / 2.0);
        }
        assert!((total / 50.0 - 0.3).abs() <= 0.05);
    }

    #[test]
    fn blocks_are_contiguous_and_balanced() {
        let counts = (0..10).fold(vec![0; 3], |mut c, v| {
            c[block_of(v, 10, 3)] += 1;
            c
        });
        assert_eq!(counts, vec![4, 3, 3]);
        assert!((1..10).all(|v| block_of(v, 10, 3) >= block_of(v - 1, 10, 3)));
    }

    #[test]
    fn related_basis_is_a_rotation() {
        let text = "classes = 2\nseed = 3\ndomains = a,b\nnodes = 4\np_intra = 1\np_inter = 0\nfeature_dim = 6\nnoise = 0\nb.related_to = a\nb.angle = 0.25\n";
        let spec = SynthSpec::parse(text, Path::new("s")).unwrap();
        assert_eq!(spec.domains[1].related_to, Some((0, 0.25)));
        let a = class_basis(&spec, 0, 3);
        let b = class_basis(&spec, 1, 3);
        for c in 0..2 {
            let (x, y) = (a.row(c), b.row(c));
            let cos = x.dot(&y) / (x.dot(&x).sqrt() * y.dot(&y).sqrt());
            assert!((cos - 0.25f64.cos()).abs() < 1e-12);
            assert!((x.dot(&x) - y.dot(&y)).abs() < 1e-9);
        }
    }

    #[test]
    fn spec_validation() {
        let base = "classes = 2\ndomains = a\nnodes = 10\np_intra = 0.5\np_inter = 0.1\nfeature_dim = 4\nnoise = 0.1\n";
        assert!(SynthSpec::parse(base, Path::new("s")).is_ok());
        let p = |t: &str| SynthSpec::parse(t, Path::new("s"));
        assert!(matches!(p(&base.replace("p_inter = 0.1", "p_inter = 1.2")), Err(Error::Config(_))));
        assert!(p(&base.replace("feature_dim = 4", "feature_dim = 1")).is_err());
        assert!(p(&format!("{base}extra = 1\n")).is_err());
        assert!(p(&format!("{base}a.nodes = 12\n")).unwrap().domains[0].nodes == 12);
        assert!(p(&base.replace("domains = a", "domains = a/b")).is_err());
    }

    #[test]
    fn generation_is_deterministic() {
        let spec = SynthSpec::uniform(2, 3, 40, (0.2, 0.02), 8, 0.3, 11);
        assert_eq!(generate_all(&spec).unwrap(), generate_all(&spec).unwrap());
        assert_ne!(
            generate_synthetic_domain(&spec, 0, 1).unwrap(),
            generate_synthetic_domain(&spec, 0, 2).unwrap()
        );
    }
}
