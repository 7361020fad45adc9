//! Undirected attributed graphs, GCN propagation matrices and ego networks.

use std::collections::VecDeque;
use std::sync::{Arc, OnceLock};

use crate::error::{Error, Result};
use crate::tensor::{Matrix, SparseMatrix};

/// Undirected graph with a dense feature matrix and optional node labels.
///
/// Edges are stored once as `(i, j)` with `i < j`, sorted. Self-pairs and
/// duplicates are removed at construction.
#[derive(Clone, Debug)]
pub struct Graph {
    node_count: usize,
    edges: Vec<(usize, usize)>,
    neighbors: Vec<Vec<usize>>,
    features: Matrix,
    labels: Vec<Option<usize>>,
    propagation: OnceLock<Arc<SparseMatrix>>,
}

impl PartialEq for Graph {
    fn eq(&self, other: &Self) -> bool {
        self.node_count == other.node_count
            && self.edges == other.edges
            && self.features == other.features
            && self.labels == other.labels
    }
}

impl Graph {
    /// `labels` may be empty (unlabeled graph) or have one entry per node.
    pub fn new(
        node_count: usize,
        edges: impl IntoIterator<Item = (usize, usize)>,
        features: Matrix,
        labels: Vec<Option<usize>>,
    ) -> Result<Self> {
        if features.nrows() != node_count {
            return Err(Error::InvalidGraph(format!(
                "{} feature rows for {node_count} nodes",
                features.nrows()
            )));
        }
        let labels = if labels.is_empty() {
            vec![None; node_count]
        } else if labels.len() == node_count {
            labels
        } else {
            return Err(Error::InvalidGraph(format!(
                "{} labels for {node_count} nodes",
                labels.len()
            )));
        };

        let mut stored = Vec::new();
        let mut self_loops = 0usize;
        for (a, b) in edges {
            if a >= node_count || b >= node_count {
                return Err(Error::InvalidGraph(format!(
                    "edge ({a}, {b}) out of range for {node_count} nodes"
                )));
            }
            if a == b {
                self_loops += 1;
                continue;
            }
            stored.push((a.min(b), a.max(b)));
        }
        if self_loops > 0 {
            log::warn!("dropped {self_loops} self-loop(s)");
        }
        stored.sort_unstable();
        stored.dedup();

        let mut neighbors = vec![Vec::new(); node_count];
        for &(a, b) in &stored {
            neighbors[a].push(b);
            neighbors[b].push(a);
        }
        for n in &mut neighbors {
            n.sort_unstable();
        }

        Ok(Self {
            node_count,
            edges: stored,
            neighbors,
            features,
            labels,
            propagation: OnceLock::new(),
        })
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn neighbors(&self, v: usize) -> &[usize] {
        &self.neighbors[v]
    }

    pub fn degree(&self, v: usize) -> usize {
        self.neighbors[v].len()
    }

    pub fn has_edge(&self, a: usize, b: usize) -> bool {
        a < self.node_count && self.neighbors[a].binary_search(&b).is_ok()
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    pub fn feature_dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn label(&self, v: usize) -> Option<usize> {
        self.labels[v]
    }

    pub fn labels(&self) -> &[Option<usize>] {
        &self.labels
    }

    pub fn has_labels(&self) -> bool {
        self.labels.iter().any(Option::is_some)
    }

    /// Sparse `D̂^{-1/2}(A+I)D̂^{-1/2}`, computed once per graph.
    pub fn propagation(&self) -> &Arc<SparseMatrix> {
        self.propagation.get_or_init(|| {
            let deg: Vec<usize> = (0..self.node_count).map(|v| self.degree(v) + 1).collect();
            let mut triples = Vec::with_capacity(self.node_count + 2 * self.edges.len());
            for v in 0..self.node_count {
                let mut row: Vec<usize> = self.neighbors[v].clone();
                row.push(v);
                row.sort_unstable();
                triples.extend(
                    row.into_iter()
                        .map(|u| (v, u, 1.0 / ((deg[v] * deg[u]) as f64).sqrt())),
                );
            }
            Arc::new(SparseMatrix::from_sorted_triples(
                self.node_count,
                self.node_count,
                &triples,
            ))
        })
    }
}

/// Dense GCN propagation matrix `D̂^{-1/2}(A+I)D̂^{-1/2}` with `D̂` the degree
/// matrix of `A+I`.
pub fn normalized_adjacency(g: &Graph) -> Matrix {
    g.propagation().to_dense()
}

/// Features and graphs of one domain.
#[derive(Clone, Debug, PartialEq)]
pub struct DomainDataset {
    pub domain_id: String,
    graphs: Vec<Graph>,
    feature_dim: usize,
    /// Class names; label `i` refers to `classes[i]`.
    pub classes: Vec<String>,
}

impl DomainDataset {
    pub fn new(domain_id: impl Into<String>, graphs: Vec<Graph>, classes: Vec<String>) -> Result<Self> {
        let domain_id = domain_id.into();
        let first = graphs
            .first()
            .ok_or_else(|| Error::InvalidGraph(format!("domain {domain_id} has no graphs")))?;
        let feature_dim = first.feature_dim();
        if feature_dim == 0 {
            return Err(Error::InvalidGraph(format!("domain {domain_id} has zero-width features")));
        }
        if let Some(g) = graphs.iter().find(|g| g.feature_dim() != feature_dim) {
            return Err(Error::InvalidGraph(format!(
                "domain {domain_id}: feature widths {} and {feature_dim} differ",
                g.feature_dim()
            )));
        }
        let max_label = graphs
            .iter()
            .flat_map(|g| g.labels().iter().flatten())
            .max()
            .copied();
        if let Some(m) = max_label {
            if m >= classes.len() {
                return Err(Error::InvalidGraph(format!(
                    "label {m} but only {} classes",
                    classes.len()
                )));
            }
        }
        Ok(Self {
            domain_id,
            graphs,
            feature_dim,
            classes,
        })
    }

    pub fn graphs(&self) -> &[Graph] {
        &self.graphs
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    /// All feature rows of all graphs, stacked in graph order.
    pub fn stacked_features(&self) -> Matrix {
        let views: Vec<_> = self.graphs.iter().map(|g| g.features().view()).collect();
        ndarray::concatenate(ndarray::Axis(0), &views).expect("equal widths checked at construction")
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EgoNetwork {
    /// Center node index in the source graph.
    pub center: usize,
    /// `nodes[i]` is the source index of induced node `i`; the center is
    /// always induced node 0.
    pub nodes: Vec<usize>,
    pub graph: Graph,
    pub label: Option<usize>,
}

pub const DEFAULT_EGO_HOPS: usize = 2;

/// Induced subgraph on every node within `hops` edges of `center`.
pub fn extract_ego_network(g: &Graph, center: usize, hops: usize) -> Result<EgoNetwork> {
    if center >= g.node_count() {
        return Err(Error::InvalidArgument(format!(
            "ego center {center} out of range for {} nodes",
            g.node_count()
        )));
    }
    if hops == 0 {
        return Err(Error::InvalidArgument("ego radius must be positive".into()));
    }
    let label = g.label(center);
    if label.is_none() && g.has_labels() {
        return Err(Error::InvalidArgument(format!("ego center {center} is unlabeled")));
    }

    let mut dist = vec![usize::MAX; g.node_count()];
    let mut order = vec![center];
    let mut queue = VecDeque::from([center]);
    dist[center] = 0;
    while let Some(v) = queue.pop_front() {
        if dist[v] == hops {
            continue;
        }
        for &u in g.neighbors(v) {
            if dist[u] == usize::MAX {
                dist[u] = dist[v] + 1;
                order.push(u);
                queue.push_back(u);
            }
        }
    }

    let mut local = vec![usize::MAX; g.node_count()];
    for (i, &v) in order.iter().enumerate() {
        local[v] = i;
    }
    let edges: Vec<(usize, usize)> = g
        .edges()
        .iter()
        .filter(|&&(a, b)| local[a] != usize::MAX && local[b] != usize::MAX)
        .map(|&(a, b)| (local[a], local[b]))
        .collect();
    let features = g.features().select(ndarray::Axis(0), &order);
    let labels = order.iter().map(|&v| g.label(v)).collect();
    let graph = Graph::new(order.len(), edges, features, labels)?;
    Ok(EgoNetwork {
        center,
        nodes: order,
        graph,
        label,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn bare(n: usize, edges: &[(usize, usize)]) -> Graph {
        Graph::new(n, edges.iter().copied(), Matrix::zeros((n, 1)), vec![]).unwrap()
    }

    fn star() -> Graph {
        Graph::new(
            4,
            [(0, 1), (0, 2), (0, 3)],
            Matrix::zeros((4, 2)),
            vec![Some(0), Some(1), Some(0), Some(1)],
        )
        .unwrap()
    }

    #[test]
    fn dedups_and_drops_self_loops() {
        let g = bare(3, &[(0, 1), (1, 0), (2, 2)]);
        assert_eq!(g.edges(), &[(0, 1)]);
        assert!(g.has_edge(1, 0) && g.has_edge(0, 1));
        assert!(!g.has_edge(2, 2));
    }

    #[test]
    fn rejects_out_of_range_and_row_mismatch() {
        assert!(Graph::new(2, [(0, 2)], Matrix::zeros((2, 1)), vec![]).is_err());
        assert!(Graph::new(3, [], Matrix::zeros((2, 1)), vec![]).is_err());
    }

    #[test]
    fn adjacency_small_cases() {
        let a = normalized_adjacency(&bare(2, &[(0, 1)]));
        assert_eq!(a, ndarray::array![[0.5, 0.5], [0.5, 0.5]]);
        assert_eq!(normalized_adjacency(&bare(1, &[])), ndarray::array![[1.0]]);
    }

    #[test]
    fn adjacency_path_by_hand() {
        // degrees with self-loops: 2, 3, 2
        let a = normalized_adjacency(&bare(3, &[(0, 1), (1, 2)]));
        let expect = [
            [1.0 / 2.0, 1.0 / 6f64.sqrt(), 0.0],
            [1.0 / 6f64.sqrt(), 1.0 / 3.0, 1.0 / 6f64.sqrt()],
            [0.0, 1.0 / 6f64.sqrt(), 1.0 / 2.0],
        ];
        for i in 0..3 {
            for j in 0..3 {
                assert!((a[[i, j]] - expect[i][j]).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn ego_examples() {
        let g = star();
        let e1 = extract_ego_network(&g, 1, 1).unwrap();
        assert_eq!(e1.nodes, vec![1, 0]);
        assert_eq!(e1.graph.edges(), &[(0, 1)]);
        assert_eq!(e1.label, Some(1));

        let e2 = extract_ego_network(&g, 1, 2).unwrap();
        assert_eq!(e2.graph.node_count(), 4);
        assert_eq!(e2.graph.edge_count(), 3);

        let iso = Graph::new(3, [(0, 1)], Matrix::zeros((3, 1)), vec![]).unwrap();
        let e = extract_ego_network(&iso, 2, 2).unwrap();
        assert_eq!(e.graph.node_count(), 1);
        assert_eq!(e.graph.edge_count(), 0);
    }

    #[test]
    fn ego_errors() {
        let g = star();
        assert!(extract_ego_network(&g, 9, 1).is_err());
        let partly = Graph::new(2, [(0, 1)], Matrix::zeros((2, 1)), vec![Some(0), None]).unwrap();
        assert!(extract_ego_network(&partly, 1, 1).is_err());
    }

    fn arb_graph() -> impl Strategy<Value = Graph> {
        (1usize..=20).prop_flat_map(|n| {
            proptest::collection::vec((0..n, 0..n), 0..60).prop_map(move |edges| bare(n, &edges))
        })
    }

    proptest! {
        #[test]
        fn adjacency_is_symmetric(g in arb_graph()) {
            let a = normalized_adjacency(&g);
            let asym = (&a - &a.t()).iter().fold(0.0f64, |m, v| m.max(v.abs()));
            prop_assert!(asym <= 1e-12);
            for i in 0..g.node_count() {
                for j in 0..g.node_count() {
                    prop_assert_eq!(g.has_edge(i, j), g.has_edge(j, i));
                }
            }
        }

        #[test]
        fn ego_is_monotone_and_induced(g in arb_graph(), c in 0usize..20, h in 1usize..4) {
            let c = c % g.node_count();
            let small = extract_ego_network(&g, c, h).unwrap();
            let big = extract_ego_network(&g, c, h + 1).unwrap();
            prop_assert!(small.nodes.iter().all(|v| big.nodes.contains(v)));
            prop_assert_eq!(small.nodes[0], c);
            let k = small.nodes.len();
            for i in 0..k {
                for j in 0..k {
                    let parent = g.has_edge(small.nodes[i], small.nodes[j]);
                    prop_assert_eq!(small.graph.has_edge(i, j), parent);
                }
            }
        }
    }
}
