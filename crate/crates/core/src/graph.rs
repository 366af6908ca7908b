//! Communication topologies.
//!
//! Edges are undirected with unit adjacency weight. In leader-follower mode the
//! edges incident to the leader are read as leader-to-follower links: the
//! leader's Laplacian row is zero and it never reacts to its neighbors.
//!
//! Spectral quantities (`lambda2`, `leader_partition`) exist for post-hoc
//! analysis only; the protocols never consume them.

use std::collections::VecDeque;

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Graph {
    n: usize,
    edges: Vec<(usize, usize)>,
    leader: Option<usize>,
    adj: Vec<Vec<(usize, usize)>>,
}

/// Laplacian together with node degrees.
#[derive(Debug, Clone, PartialEq)]
pub struct LaplacianView {
    pub matrix: DMatrix<f64>,
    pub degrees: Vec<usize>,
}

/// Block split of a leader-follower Laplacian with the leader moved to the
/// front: `L = [[0, 0], [l2, l1]]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LeaderPartition {
    pub l1: DMatrix<f64>,
    pub l2: DMatrix<f64>,
    /// Public node indices in internal order; `order[0]` is the leader.
    pub order: Vec<usize>,
}

impl Graph {
    pub fn new(n: usize, edges: &[(usize, usize)], leader: Option<usize>) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidParam("graph needs at least one node".into()));
        }
        let mut canon = Vec::with_capacity(edges.len());
        for &(a, b) in edges {
            for idx in [a, b] {
                if idx >= n {
                    return Err(Error::NodeOutOfRange { index: idx, n });
                }
            }
            if a == b {
                return Err(Error::SelfLoop(a));
            }
            canon.push((a.min(b), a.max(b)));
        }
        canon.sort_unstable();
        if let Some(w) = canon.windows(2).find(|w| w[0] == w[1]) {
            return Err(Error::DuplicateEdge(w[0].0, w[0].1));
        }
        if let Some(l) = leader {
            if l >= n {
                return Err(Error::NodeOutOfRange { index: l, n });
            }
        }
        let mut adj = vec![Vec::new(); n];
        for (k, &(a, b)) in canon.iter().enumerate() {
            adj[a].push((b, k));
            adj[b].push((a, k));
        }
        for list in &mut adj {
            list.sort_unstable();
        }
        Ok(Self {
            n,
            edges: canon,
            leader,
            adj,
        })
    }

    pub fn ring(n: usize, leader: Option<usize>) -> Result<Self> {
        let edges: Vec<_> = match n {
            0 | 1 => vec![],
            2 => vec![(0, 1)],
            _ => (0..n).map(|i| (i, (i + 1) % n)).collect(),
        };
        Self::new(n, &edges, leader)
    }

    pub fn path(n: usize, leader: Option<usize>) -> Result<Self> {
        let edges: Vec<_> = (1..n).map(|i| (i - 1, i)).collect();
        Self::new(n, &edges, leader)
    }

    pub fn complete(n: usize, leader: Option<usize>) -> Result<Self> {
        let edges: Vec<_> = (0..n)
            .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
            .collect();
        Self::new(n, &edges, leader)
    }

    /// Star centred on node 0.
    pub fn star(n: usize, leader: Option<usize>) -> Result<Self> {
        let edges: Vec<_> = (1..n).map(|i| (0, i)).collect();
        Self::new(n, &edges, leader)
    }

    pub fn from_generator(name: &str, n: usize, leader: Option<usize>) -> Result<Self> {
        match name {
            "ring" => Self::ring(n, leader),
            "path" => Self::path(n, leader),
            "complete" => Self::complete(n, leader),
            "star" => Self::star(n, leader),
            other => Err(Error::InvalidParam(format!("unknown graph generator '{other}'"))),
        }
    }

    pub fn n_nodes(&self) -> usize {
        self.n
    }

    /// Canonical edge list, each pair `(min, max)`, sorted lexicographically.
    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn leader(&self) -> Option<usize> {
        self.leader
    }

    pub fn is_leader(&self, i: usize) -> bool {
        self.leader == Some(i)
    }

    /// Undirected neighbors of `i` as `(neighbor, edge index)`, ascending.
    pub fn neighbors(&self, i: usize) -> &[(usize, usize)] {
        &self.adj[i]
    }

    pub fn edge_index(&self, i: usize, j: usize) -> Option<usize> {
        self.edges.binary_search(&(i.min(j), i.max(j))).ok()
    }

    /// `a_ij`: 1 when `j` influences `i`.
    pub fn adjacency(&self, i: usize, j: usize) -> u8 {
        if self.is_leader(i) || self.edge_index(i, j).is_none() {
            0
        } else {
            1
        }
    }

    /// In-degree `d_i = l_ii`; zero for the leader.
    pub fn degree(&self, i: usize) -> usize {
        if self.is_leader(i) {
            0
        } else {
            self.adj[i].len()
        }
    }

    fn laplacian_int(&self) -> Vec<Vec<i64>> {
        let mut l = vec![vec![0i64; self.n]; self.n];
        for i in 0..self.n {
            for j in 0..self.n {
                if i != j {
                    let a = self.adjacency(i, j) as i64;
                    l[i][j] = -a;
                    l[i][i] += a;
                }
            }
        }
        l
    }

    /// Full Laplacian; symmetric unless a leader is set, in which case the
    /// leader row is zero.
    pub fn laplacian(&self) -> LaplacianView {
        let l = self.laplacian_int();
        let matrix = DMatrix::from_fn(self.n, self.n, |i, j| l[i][j] as f64);
        LaplacianView {
            matrix,
            degrees: (0..self.n).map(|i| self.degree(i)).collect(),
        }
    }

    /// Laplacian of the underlying undirected graph, ignoring any leader.
    pub fn undirected_laplacian(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.n, self.n);
        for &(a, b) in &self.edges {
            m[(a, b)] -= 1.0;
            m[(b, a)] -= 1.0;
            m[(a, a)] += 1.0;
            m[(b, b)] += 1.0;
        }
        m
    }

    fn reachable_from(&self, root: usize) -> Vec<bool> {
        let mut seen = vec![false; self.n];
        let mut queue = VecDeque::from([root]);
        seen[root] = true;
        while let Some(v) = queue.pop_front() {
            for &(w, _) in &self.adj[v] {
                if !seen[w] {
                    seen[w] = true;
                    queue.push_back(w);
                }
            }
        }
        seen
    }

    pub fn is_connected(&self) -> bool {
        self.reachable_from(0).into_iter().all(|s| s)
    }

    /// Every follower reachable from the leader. Leader edges point away from
    /// the leader and follower edges are undirected, so a breadth-first search
    /// from the leader over all edges is exact.
    pub fn has_leader_spanning_tree(&self) -> Result<bool> {
        let leader = self.leader.ok_or(Error::NoLeader)?;
        Ok(self.reachable_from(leader).into_iter().all(|s| s))
    }

    /// Second-smallest eigenvalue of the undirected Laplacian.
    pub fn lambda2(&self) -> Result<f64> {
        if !self.is_connected() {
            return Err(Error::Disconnected);
        }
        if self.n == 1 {
            return Err(Error::InvalidParam(
                "algebraic connectivity needs at least two nodes".into(),
            ));
        }
        let mut eig: Vec<f64> = SymmetricEigen::new(self.undirected_laplacian())
            .eigenvalues
            .iter()
            .copied()
            .collect();
        eig.sort_by(f64::total_cmp);
        Ok(eig[1])
    }

    pub fn leader_partition(&self) -> Result<LeaderPartition> {
        let leader = self.leader.ok_or(Error::NoLeader)?;
        let order: Vec<usize> = std::iter::once(leader)
            .chain((0..self.n).filter(|&i| i != leader))
            .collect();
        let l = self.laplacian().matrix;
        let m = self.n - 1;
        let l1 = DMatrix::from_fn(m, m, |r, c| l[(order[r + 1], order[c + 1])]);
        let l2 = DMatrix::from_fn(m, 1, |r, _| l[(order[r + 1], leader)]);
        Ok(LeaderPartition { l1, l2, order })
    }

    /// Copy with the leader removed or replaced.
    pub fn with_leader(&self, leader: Option<usize>) -> Result<Self> {
        Self::new(self.n, &self.edges, leader)
    }
}

impl LeaderPartition {
    /// Reassemble the full Laplacian in public node order.
    pub fn reassemble(&self) -> DMatrix<f64> {
        let n = self.order.len();
        let mut full = DMatrix::zeros(n, n);
        for r in 0..n - 1 {
            full[(self.order[r + 1], self.order[0])] = self.l2[(r, 0)];
            for c in 0..n - 1 {
                full[(self.order[r + 1], self.order[c + 1])] = self.l1[(r, c)];
            }
        }
        full
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DVector;
    use proptest::prelude::*;

    fn k3() -> Graph {
        Graph::new(3, &[(0, 1), (1, 2), (0, 2)], None).unwrap()
    }

    #[test]
    fn build_rejects_bad_edges() {
        assert!(matches!(
            Graph::new(3, &[(0, 3)], None),
            Err(Error::NodeOutOfRange { index: 3, n: 3 })
        ));
        assert!(matches!(Graph::new(3, &[(1, 1)], None), Err(Error::SelfLoop(1))));
        assert!(matches!(
            Graph::new(3, &[(0, 1), (1, 0)], None),
            Err(Error::DuplicateEdge(0, 1))
        ));
        assert!(Graph::new(3, &[], Some(5)).is_err());
    }

    #[test]
    fn canonical_edge_order() {
        let g = Graph::new(4, &[(3, 2), (1, 0), (2, 0)], None).unwrap();
        assert_eq!(g.edges(), &[(0, 1), (0, 2), (2, 3)]);
    }

    #[test]
    fn p2_laplacian() {
        let g = Graph::new(2, &[(0, 1)], None).unwrap();
        let l = g.laplacian();
        assert_eq!(l.matrix, DMatrix::from_row_slice(2, 2, &[1.0, -1.0, -1.0, 1.0]));
        assert_eq!(l.degrees, vec![1, 1]);
    }

    #[test]
    fn k3_laplacian_and_determinism() {
        let g = k3();
        let l = g.laplacian().matrix;
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(l[(i, j)], if i == j { 2.0 } else { -1.0 });
            }
        }
        assert_eq!(g.laplacian(), g.laplacian());
    }

    #[test]
    fn connectivity() {
        assert!(Graph::path(2, None).unwrap().is_connected());
        assert!(!Graph::new(4, &[(0, 1)], None).unwrap().is_connected());
        let ring = Graph::ring(6, Some(0)).unwrap();
        assert!(ring.has_leader_spanning_tree().unwrap());
        assert!(matches!(
            Graph::ring(6, None).unwrap().has_leader_spanning_tree(),
            Err(Error::NoLeader)
        ));
    }

    #[test]
    fn lambda2_known_spectra() {
        let p2 = Graph::path(2, None).unwrap();
        assert!((p2.lambda2().unwrap() - 2.0).abs() < 1e-12);
        assert!((k3().lambda2().unwrap() - 3.0).abs() < 1e-12);
        assert!((Graph::complete(4, None).unwrap().lambda2().unwrap() - 4.0).abs() < 1e-12);
        // ring C_n: 2 - 2 cos(2 pi / n)
        let c6 = Graph::ring(6, None).unwrap();
        assert!((c6.lambda2().unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn lambda2_disconnected() {
        let g = Graph::new(4, &[(0, 1), (2, 3)], None).unwrap();
        assert!(!g.is_connected());
        assert!(matches!(g.lambda2(), Err(Error::Disconnected)));
    }

    #[test]
    fn partition_two_nodes() {
        let g = Graph::new(2, &[(0, 1)], Some(0)).unwrap();
        let p = g.leader_partition().unwrap();
        assert_eq!(p.l1, DMatrix::from_element(1, 1, 1.0));
        assert_eq!(p.l2, DMatrix::from_element(1, 1, -1.0));
    }

    #[test]
    fn partition_isolated_leader() {
        let g = Graph::new(3, &[(1, 2)], Some(0)).unwrap();
        assert!(!g.has_leader_spanning_tree().unwrap());
        let p = g.leader_partition().unwrap();
        assert_eq!(p.l1.nrows(), 2);
        assert_eq!(p.l2, DMatrix::zeros(2, 1));
    }

    #[test]
    fn partition_ring_positive_definite() {
        let g = Graph::ring(6, Some(0)).unwrap();
        let p = g.leader_partition().unwrap();
        assert_eq!(p.l1, p.l1.transpose());
        let min = SymmetricEigen::new(p.l1.clone()).eigenvalues.min();
        assert!(min > 0.0);
        assert_eq!(p.reassemble(), g.laplacian().matrix);
    }

    #[test]
    fn partition_with_leader_not_first() {
        let g = Graph::new(4, &[(2, 0), (2, 1), (1, 3)], Some(2)).unwrap();
        let p = g.leader_partition().unwrap();
        assert_eq!(p.order, vec![2, 0, 1, 3]);
        assert_eq!(p.reassemble(), g.laplacian().matrix);
        assert!(matches!(
            Graph::ring(3, None).unwrap().leader_partition(),
            Err(Error::NoLeader)
        ));
    }

    #[test]
    fn leader_row_zero() {
        let g = Graph::ring(4, Some(1)).unwrap();
        let l = g.laplacian();
        assert!(l.matrix.row(1).iter().all(|&v| v == 0.0));
        assert_eq!(l.degrees[1], 0);
        for i in 0..4 {
            assert_eq!(l.matrix.row(i).sum(), 0.0);
        }
    }

    #[test]
    fn generators() {
        assert_eq!(Graph::ring(6, None).unwrap().n_edges(), 6);
        assert_eq!(Graph::star(6, None).unwrap().n_edges(), 5);
        assert_eq!(Graph::complete(6, None).unwrap().n_edges(), 15);
        assert_eq!(Graph::path(6, None).unwrap().n_edges(), 5);
        assert!(Graph::from_generator("wheel", 5, None).is_err());
    }

    fn connected_graph() -> impl Strategy<Value = Graph> {
        (2usize..9)
            .prop_flat_map(|n| {
                (
                    Just(n),
                    proptest::collection::vec(any::<prop::sample::Index>(), n - 1),
                    proptest::collection::vec((0..n, 0..n), 0..12),
                )
            })
            .prop_map(|(n, parents, extra)| {
                let mut edges: Vec<(usize, usize)> = (1..n)
                    .zip(parents)
                    .map(|(i, p)| (p.index(i), i))
                    .collect();
                for (a, b) in extra {
                    let e = (a.min(b), a.max(b));
                    if a != b && !edges.iter().any(|&(x, y)| (x.min(y), x.max(y)) == e) {
                        edges.push(e);
                    }
                }
                Graph::new(n, &edges, None).unwrap()
            })
    }

    proptest! {
        #[test]
        fn laplacian_rows_sum_to_zero_and_lambda2_bounds(
            g in connected_graph(),
            raw in proptest::collection::vec(-1.0f64..1.0, 8),
        ) {
            let l = g.laplacian().matrix;
            let ones = DVector::from_element(g.n_nodes(), 1.0);
            prop_assert_eq!(&l * &ones, DVector::zeros(g.n_nodes()));
            let lam2 = g.lambda2().unwrap();
            let mut x = DVector::from_fn(g.n_nodes(), |i, _| raw[i]);
            let mean = x.mean();
            x.add_scalar_mut(-mean);
            let quad = (x.transpose() * &l * &x)[0];
            prop_assert!(quad >= lam2 * x.norm_squared() - 1e-8);
        }

        #[test]
        fn partition_reassembles(g in connected_graph(), pick in any::<prop::sample::Index>()) {
            let leader = pick.index(g.n_nodes());
            let lg = g.with_leader(Some(leader)).unwrap();
            let part = lg.leader_partition().unwrap();
            prop_assert_eq!(part.reassemble(), lg.laplacian().matrix);
            prop_assert!(lg.has_leader_spanning_tree().unwrap());
        }

        #[test]
        fn disjoint_union_is_disconnected(a in connected_graph(), b in connected_graph()) {
            let na = a.n_nodes();
            let edges: Vec<_> = a
                .edges()
                .iter()
                .copied()
                .chain(b.edges().iter().map(|&(i, j)| (i + na, j + na)))
                .collect();
            let u = Graph::new(na + b.n_nodes(), &edges, None).unwrap();
            prop_assert!(!u.is_connected());
            prop_assert!(matches!(u.lambda2(), Err(Error::Disconnected)));
        }
    }
}
