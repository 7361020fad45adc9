//! Per-domain dimension alignment and learnable domain tokens.

use crate::error::{Error, Result};
use crate::graph::DomainDataset;
use crate::tensor::{truncated_svd, Matrix, Tensor, Var};

pub const DEFAULT_ALIGNED_DIM: usize = 50;

/// Linear map from a domain's native feature space to the shared aligned
/// space: the top right singular vectors of the domain's stacked features.
#[derive(Clone, Debug, PartialEq)]
pub struct DimensionAligner {
    pub domain_id: String,
    /// `source_dim × target_dim`. Columns past `min(rows, source_dim)` are
    /// zero.
    projection: Matrix,
}

impl DimensionAligner {
    pub fn from_projection(domain_id: impl Into<String>, projection: Matrix) -> Result<Self> {
        if projection.is_empty() {
            return Err(Error::InvalidArgument("empty projection".into()));
        }
        crate::tensor::ensure_finite(&projection, "projection")?;
        Ok(Self {
            domain_id: domain_id.into(),
            projection,
        })
    }

    pub fn projection(&self) -> &Matrix {
        &self.projection
    }

    pub fn source_dim(&self) -> usize {
        self.projection.nrows()
    }

    pub fn target_dim(&self) -> usize {
        self.projection.ncols()
    }

    /// `x · projection`.
    pub fn apply(&self, x: &Matrix) -> Result<Matrix> {
        if x.ncols() != self.source_dim() {
            return Err(Error::shape(
                "apply_aligner",
                format!(
                    "{} feature columns, aligner for {} expects {}",
                    x.ncols(),
                    self.domain_id,
                    self.source_dim()
                ),
            ));
        }
        Ok(x.dot(&self.projection))
    }
}

/// Fits an aligner on every feature row of every graph in the domain.
/// Features are not mean-centered.
pub fn fit_aligner(ds: &DomainDataset, aligned_dim: usize) -> Result<DimensionAligner> {
    if aligned_dim == 0 {
        return Err(Error::InvalidArgument("aligned dimension must be positive".into()));
    }
    let x = ds.stacked_features();
    if x.nrows() == 0 {
        return Err(Error::InvalidArgument(format!("domain {} has no nodes", ds.domain_id)));
    }
    let k = aligned_dim.min(x.nrows()).min(x.ncols());
    let svd = truncated_svd(&x, k)?;
    let mut projection = Matrix::zeros((x.ncols(), aligned_dim));
    projection
        .slice_mut(ndarray::s![.., ..k])
        .assign(&svd.v);
    DimensionAligner::from_projection(ds.domain_id.clone(), projection)
}

/// One learnable token per source domain, in pre-training order.
#[derive(Clone, Debug, PartialEq)]
pub struct DomainTokens {
    entries: Vec<(String, Tensor)>,
}

impl DomainTokens {
    /// All-ones tokens, so that unification starts as the identity.
    pub fn init(domain_ids: &[String], aligned_dim: usize) -> Result<Self> {
        if domain_ids.is_empty() {
            return Err(Error::InvalidArgument("no source domains".into()));
        }
        let mut entries: Vec<(String, Tensor)> = Vec::with_capacity(domain_ids.len());
        for id in domain_ids {
            if entries.iter().any(|(e, _)| e == id) {
                return Err(Error::InvalidArgument(format!("duplicate domain id `{id}`")));
            }
            entries.push((id.clone(), Tensor::param(Matrix::ones((1, aligned_dim)))));
        }
        Ok(Self { entries })
    }

    pub fn from_entries(entries: Vec<(String, Tensor)>) -> Result<Self> {
        let dim = entries.first().map(|(_, t)| t.shape());
        if dim.is_none() || entries.iter().any(|(_, t)| Some(t.shape()) != dim || t.shape().0 != 1) {
            return Err(Error::InvalidArgument("tokens must be equal-length row vectors".into()));
        }
        Ok(Self { entries })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.entries[0].1.shape().1
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(id, _)| id.as_str())
    }

    pub fn get(&self, id: &str) -> Option<&Tensor> {
        self.entries.iter().find(|(e, _)| e == id).map(|(_, t)| t)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(id, t)| (id.as_str(), t))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor)> {
        self.entries.iter_mut().map(|(id, t)| (id.as_str(), t))
    }

    pub fn set_requires_grad(&mut self, on: bool) {
        for (_, t) in &mut self.entries {
            t.set_requires_grad(on);
        }
    }

    /// `K × d̃` matrix with token `i` as row `i`.
    pub fn stacked(&self) -> Matrix {
        let views: Vec<_> = self.entries.iter().map(|(_, t)| t.data().view()).collect();
        ndarray::concatenate(ndarray::Axis(0), &views).expect("equal token widths")
    }
}

/// Semantic unification: every row of `aligned` multiplied elementwise by
/// `token` (a `1 × d̃` row).
pub fn unify<'t>(token: Var<'t>, aligned: Var<'t>) -> Result<Var<'t>> {
    aligned.mul_row(token)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Graph;
    use crate::tensor::Tape;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn domain(x: Matrix) -> DomainDataset {
        let n = x.nrows();
        DomainDataset::new("d", vec![Graph::new(n, [], x, vec![]).unwrap()], vec![]).unwrap()
    }

    #[test]
    fn identity_features_give_signed_permutation() {
        let a = fit_aligner(&domain(Matrix::eye(4)), 4).unwrap();
        let p = a.projection();
        for col in p.columns() {
            assert_eq!(col.iter().filter(|v| v.abs() == 1.0).count(), 1);
            assert_eq!(col.iter().filter(|v| **v == 0.0).count(), 3);
        }
        let y = a.apply(&Matrix::eye(4)).unwrap();
        assert_eq!(y.dot(&y.t()), Matrix::eye(4));
    }

    #[test]
    fn rank_one_domain() {
        let x = array![[3.0, 0.0], [0.0, 0.0], [0.0, 0.0]];
        let a = fit_aligner(&domain(x.clone()), 1).unwrap();
        assert_eq!(a.projection(), &array![[1.0], [0.0]]);
        assert_eq!(a.apply(&x).unwrap(), array![[3.0], [0.0], [0.0]]);
    }

    #[test]
    fn pads_when_aligned_dim_exceeds_rank_bound() {
        let x = array![[1.0, 2.0], [3.0, 4.0], [0.0, 1.0]];
        let a = fit_aligner(&domain(x.clone()), 5).unwrap();
        assert_eq!(a.target_dim(), 5);
        assert!(a.projection().slice(ndarray::s![.., 2..]).iter().all(|v| *v == 0.0));
        let y = a.apply(&x).unwrap();
        assert_eq!(y.ncols(), 5);
    }

    #[test]
    fn apply_checks_width_and_maps_zero_to_zero() {
        let a = DimensionAligner::from_projection("d", Matrix::eye(3)).unwrap();
        let x = array![[0.5, -1.0, 2.0]];
        assert_eq!(a.apply(&x).unwrap(), x);
        assert_eq!(a.apply(&Matrix::zeros((2, 3))).unwrap(), Matrix::zeros((2, 3)));
        assert!(a.apply(&Matrix::zeros((2, 4))).is_err());
    }

    #[test]
    fn apply_matches_naive_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = Matrix::from_shape_fn((6, 4), |_| rng.random_range(-1.0..1.0));
        let p = Matrix::from_shape_fn((4, 3), |_| rng.random_range(-1.0..1.0));
        let a = DimensionAligner::from_projection("d", p.clone()).unwrap();
        let got = a.apply(&x).unwrap();
        for i in 0..6 {
            for j in 0..3 {
                let mut s = 0.0;
                for k in 0..4 {
                    s += x[[i, k]] * p[[k, j]];
                }
                assert!((got[[i, j]] - s).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn tokens_start_as_ones() {
        let ids = vec!["A".to_string(), "B".to_string()];
        let t = DomainTokens::init(&ids, 3).unwrap();
        assert_eq!(t.len(), 2);
        for (_, tok) in t.iter() {
            assert_eq!(tok.data(), &Matrix::ones((1, 3)));
            assert!(tok.requires_grad());
        }
        assert!(DomainTokens::init(&["A".into(), "A".into()], 3).is_err());
        assert!(DomainTokens::init(&[], 3).is_err());
    }

    #[test]
    fn unify_examples() {
        let tape = Tape::new();
        let x = tape.constant(array![[0.2, -0.5, 3.0]]);
        let ones = tape.constant(Matrix::ones((1, 3)));
        assert_eq!(*unify(ones, x).unwrap().value(), array![[0.2, -0.5, 3.0]]);
        let t = tape.constant(array![[2.0, 0.0, 1.0]]);
        let y = tape.constant(array![[1.0, 1.0, 1.0]]);
        assert_eq!(*unify(t, y).unwrap().value(), array![[2.0, 0.0, 1.0]]);
        assert!(unify(tape.constant(Matrix::ones((1, 2))), x).is_err());
    }

    #[test]
    fn unify_token_gradient_is_column_sums() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = Matrix::from_shape_fn((5, 3), |_| rng.random_range(-1.0..1.0));
        let t0 = array![[0.3, 1.2, -0.7]];
        let numeric = crate::tensor::gradcheck::central_difference(
            |t| (&x * t).sum(),
            &t0,
            1e-5,
        );
        let tape = Tape::new();
        let t = tape.variable(t0.clone());
        let loss = unify(t, tape.constant(x.clone())).unwrap().sum();
        let g = tape.backward(loss).unwrap();
        let analytic = g.get(t).unwrap();
        for j in 0..3 {
            assert!((analytic[[0, j]] - numeric[[0, j]]).abs() < 1e-9);
            assert!((analytic[[0, j]] - x.column(j).sum()).abs() < 1e-12);
        }
    }
}
