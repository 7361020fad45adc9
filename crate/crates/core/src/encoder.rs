//! Multi-layer GCN encoder without biases: `Hˡ = relu(Â Hˡ⁻¹ Wˡ)`.

use rand::Rng;

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::rng::rng_for;
use crate::tensor::{Matrix, Tape, Tensor, Var};

pub const DEFAULT_HIDDEN: usize = 256;
pub const DEFAULT_LAYERS: usize = 3;

#[derive(Clone, Debug, PartialEq)]
pub struct GcnParams {
    weights: Vec<Tensor>,
}

impl GcnParams {
    /// Xavier-uniform weights, `W₁: in_dim × hidden`, the rest
    /// `hidden × hidden`.
    pub fn init(in_dim: usize, hidden: usize, layers: usize, seed: u64) -> Result<Self> {
        if in_dim == 0 || hidden == 0 || layers == 0 {
            return Err(Error::InvalidArgument(format!(
                "encoder dims must be positive (in {in_dim}, hidden {hidden}, layers {layers})"
            )));
        }
        let mut rng = rng_for(seed, &[0x0067_636e]);
        let weights = (0..layers)
            .map(|l| {
                let fan_in = if l == 0 { in_dim } else { hidden };
                let bound = (6.0 / (fan_in + hidden) as f64).sqrt();
                let w = Matrix::from_shape_fn((fan_in, hidden), |_| rng.random_range(-bound..=bound));
                Tensor::param(w)
            })
            .collect();
        Ok(Self { weights })
    }

    pub fn from_weights(weights: Vec<Tensor>) -> Result<Self> {
        let Some(first) = weights.first() else {
            return Err(Error::InvalidArgument("encoder needs at least one layer".into()));
        };
        let hidden = first.shape().1;
        for (l, w) in weights.iter().enumerate().skip(1) {
            if w.shape() != (hidden, hidden) {
                return Err(Error::shape(
                    "gcn weights",
                    format!("layer {l} is {:?}, expected {hidden}x{hidden}", w.shape()),
                ));
            }
        }
        Ok(Self { weights })
    }

    pub fn layers(&self) -> usize {
        self.weights.len()
    }

    pub fn in_dim(&self) -> usize {
        self.weights[0].shape().0
    }

    pub fn hidden(&self) -> usize {
        self.weights[0].shape().1
    }

    pub fn param_count(&self) -> usize {
        self.weights.iter().map(Tensor::len).sum()
    }

    pub fn weights(&self) -> &[Tensor] {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut [Tensor] {
        &mut self.weights
    }

    pub fn set_requires_grad(&mut self, on: bool) {
        for w in &mut self.weights {
            w.set_requires_grad(on);
        }
    }

    pub fn is_frozen(&self) -> bool {
        self.weights.iter().all(|w| !w.requires_grad())
    }

    pub fn leaves<'t>(&self, tape: &'t Tape) -> Vec<Var<'t>> {
        self.weights.iter().map(|w| tape.leaf(w)).collect()
    }
}

/// Runs the encoder on the tape. `weights` are the tape leaves of a
/// [`GcnParams`].
pub fn encode<'t>(g: &Graph, features: Var<'t>, weights: &[Var<'t>]) -> Result<Var<'t>> {
    let (n, d) = features.shape();
    if n != g.node_count() {
        return Err(Error::shape(
            "encode",
            format!("{n} feature rows for {} nodes", g.node_count()),
        ));
    }
    let Some(first) = weights.first() else {
        return Err(Error::InvalidArgument("encoder needs at least one layer".into()));
    };
    if first.shape().0 != d {
        return Err(Error::shape(
            "encode",
            format!("feature width {d}, encoder expects {}", first.shape().0),
        ));
    }
    let adj = g.propagation();
    let mut h = features;
    for w in weights {
        h = h.matmul(*w)?.propagate(adj)?.relu();
    }
    Ok(h)
}

/// Forward pass only, outside any training tape.
pub fn encode_values(g: &Graph, features: &Matrix, params: &GcnParams) -> Result<Matrix> {
    let tape = Tape::new();
    let x = tape.constant(features.clone());
    let ws: Vec<_> = params.weights.iter().map(|w| tape.constant(w.data().clone())).collect();
    let h = encode(g, x, &ws)?;
    let out = h.value().clone();
    Ok(out)
}

/// Graph-level embedding: mean over node rows.
pub fn readout(h: Var<'_>) -> Result<Var<'_>> {
    h.row_mean()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::normalized_adjacency;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Matrix {
        Matrix::from_shape_fn((r, c), |_| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn init_is_deterministic_and_bounded() {
        let a = GcnParams::init(50, 256, 3, 7).unwrap();
        let b = GcnParams::init(50, 256, 3, 7).unwrap();
        assert_eq!(a, b);
        let bound = (6.0f64 / (50.0 + 256.0)).sqrt();
        assert!(a.weights()[0].data().iter().all(|v| v.abs() <= bound));
        assert_eq!(a.param_count(), 50 * 256 + 2 * 256 * 256);
        assert_eq!(a.param_count(), 143_872);
        assert_ne!(a, GcnParams::init(50, 256, 3, 8).unwrap());
    }

    #[test]
    fn single_node_identity_layer() {
        let g = Graph::new(1, [], Matrix::zeros((1, 2)), vec![]).unwrap();
        let p = GcnParams::from_weights(vec![Tensor::param(Matrix::eye(2))]).unwrap();
        let h = encode_values(&g, &array![[1.0, -1.0]], &p).unwrap();
        assert_eq!(h, array![[1.0, 0.0]]);
    }

    #[test]
    fn zero_features_give_zero_embeddings() {
        let g = Graph::new(3, [(0, 1), (1, 2)], Matrix::zeros((3, 4)), vec![]).unwrap();
        let p = GcnParams::init(4, 5, 3, 1).unwrap();
        let h = encode_values(&g, &Matrix::zeros((3, 4)), &p).unwrap();
        assert_eq!(h, Matrix::zeros((3, 5)));
    }

    #[test]
    fn path_graph_matches_straight_line_evaluation() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let g = Graph::new(3, [(0, 1), (1, 2)], Matrix::zeros((3, 3)), vec![]).unwrap();
        let x = random(&mut rng, 3, 3);
        let w1 = random(&mut rng, 3, 4);
        let w2 = random(&mut rng, 4, 4);
        let a = normalized_adjacency(&g);

        let matmul = |p: &Matrix, q: &Matrix| {
            let mut out = Matrix::zeros((p.nrows(), q.ncols()));
            for i in 0..p.nrows() {
                for j in 0..q.ncols() {
                    for k in 0..p.ncols() {
                        out[[i, j]] += p[[i, k]] * q[[k, j]];
                    }
                }
            }
            out
        };
        let relu = |m: Matrix| m.mapv(|v| v.max(0.0));
        let h1 = relu(matmul(&matmul(&a, &x), &w1));
        let expect = relu(matmul(&matmul(&a, &h1), &w2));

        let p = GcnParams::from_weights(vec![Tensor::param(w1), Tensor::param(w2)]).unwrap();
        let got = encode_values(&g, &x, &p).unwrap();
        for (e, v) in expect.iter().zip(got.iter()) {
            assert!((e - v).abs() < 1e-12);
        }
    }

    #[test]
    fn readout_examples() {
        let tape = Tape::new();
        let one = tape.constant(array![[1.0, 2.0]]);
        assert_eq!(*readout(one).unwrap().value(), array![[1.0, 2.0]]);
        let two = tape.constant(array![[1.0, 0.0], [0.0, 1.0]]);
        assert_eq!(*readout(two).unwrap().value(), array![[0.5, 0.5]]);
        let swapped = tape.constant(array![[0.0, 1.0], [1.0, 0.0]]);
        let a = readout(swapped).unwrap().value().clone();
        assert_eq!(a, *readout(two).unwrap().value());
        assert!(readout(tape.constant(Matrix::zeros((0, 2)))).is_err());
    }

    #[test]
    fn shape_errors() {
        let g = Graph::new(2, [(0, 1)], Matrix::zeros((2, 3)), vec![]).unwrap();
        let p = GcnParams::init(3, 4, 2, 0).unwrap();
        assert!(encode_values(&g, &Matrix::zeros((2, 2)), &p).is_err());
        assert!(encode_values(&g, &Matrix::zeros((3, 3)), &p).is_err());
        assert!(GcnParams::init(0, 4, 2, 0).is_err());
    }

    #[test]
    fn permutation_equivariance() {
        for seed in 0..10 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = 8;
            let edges: Vec<(usize, usize)> = (0..14)
                .map(|_| (rng.random_range(0..n), rng.random_range(0..n)))
                .collect();
            let x = random(&mut rng, n, 3);
            let mut perm: Vec<usize> = (0..n).collect();
            for i in (1..n).rev() {
                perm.swap(i, rng.random_range(0..=i));
            }
            // node v of g becomes node perm[v] of gp
            let mut xp = Matrix::zeros((n, 3));
            for (v, &pv) in perm.iter().enumerate() {
                xp.row_mut(pv).assign(&x.row(v));
            }
            let g = Graph::new(n, edges.clone(), x.clone(), vec![]).unwrap();
            let gp = Graph::new(
                n,
                edges.iter().map(|&(a, b)| (perm[a], perm[b])),
                xp.clone(),
                vec![],
            )
            .unwrap();
            let p = GcnParams::init(3, 5, 3, seed).unwrap();
            let h = encode_values(&g, &x, &p).unwrap();
            let hp = encode_values(&gp, &xp, &p).unwrap();
            for v in 0..n {
                for j in 0..5 {
                    assert!((h[[v, j]] - hp[[perm[v], j]]).abs() <= 1e-10);
                }
            }
        }
    }

    #[test]
    fn feature_gradient_matches_finite_differences() {
        for seed in 0..10 {
            let mut rng = ChaCha8Rng::seed_from_u64(40 + seed);
            let g = Graph::new(
                6,
                [(0, 1), (1, 2), (2, 3), (3, 4), (4, 5), (0, 3)],
                Matrix::zeros((6, 3)),
                vec![],
            )
            .unwrap();
            let x0 = random(&mut rng, 6, 3);
            let p = GcnParams::init(3, 4, 2, seed).unwrap();
            let probe = random(&mut rng, 6, 4);
            let f = |x: &Matrix| (&encode_values(&g, x, &p).unwrap() * &probe).sum();

            let tape = Tape::new();
            let x = tape.variable(x0.clone());
            let ws: Vec<_> = p.weights().iter().map(|w| tape.constant(w.data().clone())).collect();
            let loss = encode(&g, x, &ws).unwrap().mul(tape.constant(probe.clone())).unwrap().sum();
            let grads = tape.backward(loss).unwrap();
            let analytic = grads.get(x).cloned().unwrap_or_else(|| Matrix::zeros((6, 3)));
            let numeric = crate::tensor::gradcheck::central_difference(f, &x0, 1e-5);
            let err = crate::tensor::gradcheck::relative_error(&analytic, &numeric);
            assert!(err <= 1e-4, "seed {seed}: {err}");
        }
    }
}
