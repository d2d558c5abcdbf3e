//! Communication topology: undirected follower graph plus leader links.

use std::collections::VecDeque;

use thiserror::Error;

use crate::numerics::{symmetric_eigenvalues, Matrix};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GraphError {
    #[error("adjacency must be square, got {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },
    #[error("leader link vector has length {got}, expected {expected}")]
    LeaderLength { got: usize, expected: usize },
    #[error("follower adjacency is not symmetric at ({0}, {1})")]
    Asymmetric(usize, usize),
    #[error("nonzero self loop at follower {0}")]
    SelfLoop(usize),
    #[error("entry {value} at {location} is not 0 or 1")]
    NotBinary { location: String, value: f64 },
    #[error("topology needs at least one follower")]
    Empty,
    #[error("follower index {0} out of range 1..={1}")]
    Index(usize, usize),
}

/// Follower graph `𝒜` (symmetric 0/1, zero diagonal) plus leader links `a_i0`.
#[derive(Debug, Clone, PartialEq)]
pub struct Topology {
    adjacency: Vec<Vec<u8>>,
    leader_links: Vec<u8>,
}

fn binary(v: f64, location: impl FnOnce() -> String) -> Result<u8, GraphError> {
    if v == 0.0 {
        Ok(0)
    } else if v == 1.0 {
        Ok(1)
    } else {
        Err(GraphError::NotBinary { location: location(), value: v })
    }
}

pub fn build_topology(adjacency: &Matrix, leader_links: &[f64]) -> Result<Topology, GraphError> {
    let (r, c) = adjacency.shape();
    if r != c {
        return Err(GraphError::NotSquare { rows: r, cols: c });
    }
    if r == 0 {
        return Err(GraphError::Empty);
    }
    if leader_links.len() != r {
        return Err(GraphError::LeaderLength { got: leader_links.len(), expected: r });
    }
    let mut adj = vec![vec![0u8; r]; r];
    for i in 0..r {
        for j in 0..r {
            adj[i][j] = binary(adjacency[(i, j)], || format!("({}, {})", i + 1, j + 1))?;
        }
    }
    for i in 0..r {
        if adj[i][i] != 0 {
            return Err(GraphError::SelfLoop(i + 1));
        }
        for j in 0..i {
            if adj[i][j] != adj[j][i] {
                return Err(GraphError::Asymmetric(i + 1, j + 1));
            }
        }
    }
    let links = leader_links
        .iter()
        .enumerate()
        .map(|(i, &v)| binary(v, || format!("leader link {}", i + 1)))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Topology { adjacency: adj, leader_links: links })
}

impl Topology {
    /// Build from an undirected edge list over 1-based follower labels.
    pub fn from_edges(n: usize, edges: &[(usize, usize)], leader: &[usize]) -> Result<Self, GraphError> {
        let mut adj = Matrix::zeros(n, n);
        for &(i, j) in edges {
            if i == 0 || i > n {
                return Err(GraphError::Index(i, n));
            }
            if j == 0 || j > n {
                return Err(GraphError::Index(j, n));
            }
            adj[(i - 1, j - 1)] = 1.0;
            adj[(j - 1, i - 1)] = 1.0;
        }
        let mut links = vec![0.0; n];
        for &i in leader {
            if i == 0 || i > n {
                return Err(GraphError::Index(i, n));
            }
            links[i - 1] = 1.0;
        }
        build_topology(&adj, &links)
    }

    pub fn n_followers(&self) -> usize {
        self.leader_links.len()
    }

    /// `a_ij` with 1-based labels; `j = 0` is the leader.
    pub fn weight(&self, i: usize, j: usize) -> u8 {
        if j == 0 {
            self.leader_links[i - 1]
        } else {
            self.adjacency[i - 1][j - 1]
        }
    }

    pub fn leader_link(&self, i: usize) -> bool {
        self.leader_links[i - 1] == 1
    }

    /// Neighbors of follower `i` (1-based), followed by `0` when linked to the leader.
    pub fn neighbors(&self, i: usize) -> Vec<usize> {
        let mut out: Vec<usize> =
            (1..=self.n_followers()).filter(|&j| self.adjacency[i - 1][j - 1] == 1).collect();
        if self.leader_link(i) {
            out.push(0);
        }
        out
    }

    pub fn adjacency_matrix(&self) -> Matrix {
        let n = self.n_followers();
        Matrix::from_fn(n, n, |i, j| f64::from(self.adjacency[i][j]))
    }

    pub fn leader_links(&self) -> Vec<f64> {
        self.leader_links.iter().map(|&v| f64::from(v)).collect()
    }

    pub fn laplacian(&self) -> Matrix {
        let n = self.n_followers();
        let mut l = -self.adjacency_matrix();
        for i in 0..n {
            l[(i, i)] = self.adjacency[i].iter().map(|&v| f64::from(v)).sum();
        }
        l
    }

    pub fn leader_diag(&self) -> Matrix {
        Matrix::from_diagonal(&crate::numerics::Vector::from_vec(self.leader_links()))
    }

    /// Breadth-first reachability of every follower from the leader.
    pub fn has_spanning_tree(&self) -> bool {
        let n = self.n_followers();
        let mut seen = vec![false; n];
        let mut queue: VecDeque<usize> = (0..n).filter(|&i| self.leader_links[i] == 1).collect();
        for &i in &queue {
            seen[i] = true;
        }
        while let Some(i) = queue.pop_front() {
            for j in 0..n {
                if self.adjacency[i][j] == 1 && !seen[j] {
                    seen[j] = true;
                    queue.push_back(j);
                }
            }
        }
        seen.into_iter().all(|s| s)
    }

    fn check_index(&self, i: usize) -> Result<(), GraphError> {
        let n = self.n_followers();
        if i == 0 || i > n {
            Err(GraphError::Index(i, n))
        } else {
            Ok(())
        }
    }

    /// `(S1_ij, S̄1_i, S2_ij, S̄2_i)` for 1-based follower labels.
    pub fn selector_matrices(&self, i: usize, j: usize) -> Result<Selectors, GraphError> {
        self.check_index(i)?;
        self.check_index(j)?;
        let n = self.n_followers();
        let aij = f64::from(self.weight(i, j));
        let ai0 = f64::from(self.weight(i, 0));
        let (ii, jj) = (i - 1, j - 1);
        let mut s1 = Matrix::zeros(n, n);
        s1[(ii, ii)] = aij;
        let mut s1_bar = Matrix::zeros(n, n);
        s1_bar[(ii, ii)] = ai0;
        let mut s2 = Matrix::zeros(n, n);
        s2[(ii, ii)] = -aij;
        s2[(ii, jj)] += aij;
        let s2_bar = s1_bar.clone();
        Ok(Selectors { s1, s1_bar, s2, s2_bar })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Selectors {
    pub s1: Matrix,
    pub s1_bar: Matrix,
    pub s2: Matrix,
    pub s2_bar: Matrix,
}

pub fn selector_matrices(t: &Topology, i: usize, j: usize) -> Result<Selectors, GraphError> {
    t.selector_matrices(i, j)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpectralSummary {
    pub laplacian: Matrix,
    pub leader_diag: Matrix,
    pub lambda1: f64,
    pub has_spanning_tree: bool,
}

pub fn spectral_summary(t: &Topology) -> SpectralSummary {
    let laplacian = t.laplacian();
    let leader_diag = t.leader_diag();
    let ev = symmetric_eigenvalues(&(&laplacian + &leader_diag))
        .expect("laplacian plus leader diagonal is square");
    // 𝓛+F is positive semidefinite; clamp roundoff below zero
    let lambda1 = ev[0].max(0.0);
    SpectralSummary { laplacian, leader_diag, lambda1, has_spanning_tree: t.has_spanning_tree() }
}

/// Random undirected topology with edge probability `p_edge` and leader
/// link probability `p_leader`.
pub fn random_topology<R: rand::Rng>(rng: &mut R, n: usize, p_edge: f64, p_leader: f64) -> Topology {
    let mut adj = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..i {
            if rng.random_bool(p_edge) {
                adj[(i, j)] = 1.0;
                adj[(j, i)] = 1.0;
            }
        }
    }
    let links: Vec<f64> = (0..n).map(|_| if rng.random_bool(p_leader) { 1.0 } else { 0.0 }).collect();
    build_topology(&adj, &links).expect("random topology is valid by construction")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::from_rows;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn example_graph() -> Topology {
        Topology::from_edges(3, &[(2, 3)], &[1, 2]).unwrap()
    }

    #[test]
    fn example_graph_matches_augmented_adjacency() {
        // rows of the augmented adjacency with the leader as node 0
        let aug = [[0, 0, 0, 0], [1, 0, 0, 0], [1, 0, 0, 1], [0, 0, 1, 0]];
        let t = example_graph();
        for i in 1..=3 {
            assert_eq!(t.weight(i, 0), aug[i][0]);
            for j in 1..=3 {
                assert_eq!(t.weight(i, j), aug[i][j]);
            }
        }
    }

    #[test]
    fn example_lambda1() {
        let s = spectral_summary(&example_graph());
        assert!((s.lambda1 - (3.0 - 5f64.sqrt()) / 2.0).abs() <= 1e-12);
        assert!(s.has_spanning_tree);
    }

    #[test]
    fn star_graph() {
        let t = Topology::from_edges(4, &[], &[1, 2, 3, 4]).unwrap();
        let s = spectral_summary(&t);
        assert_eq!(s.laplacian, Matrix::zeros(4, 4));
        assert_eq!(s.leader_diag, Matrix::identity(4, 4));
        assert!((s.lambda1 - 1.0).abs() <= 1e-14);
        let t = Topology::from_edges(1, &[], &[1]).unwrap();
        assert_eq!(t.neighbors(1), vec![0]);
    }

    #[test]
    fn disconnected_follower() {
        let t = Topology::from_edges(3, &[(1, 2)], &[1]).unwrap();
        let s = spectral_summary(&t);
        assert_eq!(s.lambda1, 0.0);
        assert!(!s.has_spanning_tree);
    }

    #[test]
    fn rejects_bad_adjacency() {
        let asym = from_rows(&[&[0.0, 1.0], &[0.0, 0.0]]);
        assert_eq!(build_topology(&asym, &[1.0, 0.0]), Err(GraphError::Asymmetric(2, 1)));
        let looped = from_rows(&[&[1.0, 0.0], &[0.0, 0.0]]);
        assert_eq!(build_topology(&looped, &[1.0, 0.0]), Err(GraphError::SelfLoop(1)));
        let weighted = from_rows(&[&[0.0, 0.5], &[0.5, 0.0]]);
        assert!(matches!(build_topology(&weighted, &[1.0, 0.0]), Err(GraphError::NotBinary { .. })));
        assert!(matches!(
            build_topology(&Matrix::zeros(2, 2), &[1.0]),
            Err(GraphError::LeaderLength { got: 1, expected: 2 })
        ));
    }

    #[test]
    fn selector_single_edge() {
        let t = Topology::from_edges(2, &[(1, 2)], &[]).unwrap();
        let s = t.selector_matrices(1, 2).unwrap();
        assert_eq!(s.s2, from_rows(&[&[-1.0, 1.0], &[0.0, 0.0]]));
        let none = Topology::from_edges(2, &[], &[]).unwrap().selector_matrices(1, 2).unwrap();
        assert_eq!(none.s1, Matrix::zeros(2, 2));
        assert_eq!(none.s2, Matrix::zeros(2, 2));
        assert!(t.selector_matrices(3, 1).is_err());
    }

    /// Direct summation oracle `Σ_ij S2ᵀS2`, `Σ_i S̄2ᵀS̄2` and `Σ_i S1ᵀS1`.
    fn selector_sums(t: &Topology) -> (Matrix, Matrix, Matrix) {
        let n = t.n_followers();
        let mut s2 = Matrix::zeros(n, n);
        let mut s2b = Matrix::zeros(n, n);
        let mut s1 = Matrix::zeros(n, n);
        for i in 1..=n {
            for j in 1..=n {
                let s = t.selector_matrices(i, j).unwrap();
                s2 += s.s2.transpose() * &s.s2;
                s1 += s.s1.transpose() * &s.s1;
            }
            let s = t.selector_matrices(i, 1).unwrap();
            s2b += s.s2_bar.transpose() * &s.s2_bar;
        }
        (s2, s2b, s1)
    }

    #[test]
    fn selector_identity_on_single_edge() {
        let t = Topology::from_edges(2, &[(1, 2)], &[]).unwrap();
        let (s2, _, _) = selector_sums(&t);
        assert_eq!(s2, from_rows(&[&[2.0, -2.0], &[-2.0, 2.0]]));
    }

    proptest::proptest! {
        #[test]
        fn selector_identities(seed in 0u64..10_000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = rng.random_range(1..=8);
            let t = random_topology(&mut rng, n, 0.4, 0.3);
            let (s2, s2b, s1) = selector_sums(&t);
            proptest::prop_assert_eq!(s2, t.laplacian() * 2.0);
            proptest::prop_assert_eq!(s2b, t.leader_diag());
            // Σ_j S1_ijᵀS1_ij summed over i is diag(degree); each single-j sum is ≤ I
            for j in 1..=n {
                let mut acc = Matrix::zeros(n, n);
                for i in 1..=n {
                    let s = t.selector_matrices(i, j).unwrap();
                    acc += s.s1.transpose() * &s.s1;
                }
                let gap = Matrix::identity(n, n) - acc;
                let ev = symmetric_eigenvalues(&gap).unwrap();
                proptest::prop_assert!(ev[0] >= -1e-12);
            }
            let deg: Vec<f64> = (0..n).map(|i| t.laplacian()[(i, i)]).collect();
            for i in 0..n {
                proptest::prop_assert_eq!(s1[(i, i)], deg[i]);
            }
        }

        #[test]
        fn lambda1_positive_iff_reachable(seed in 0u64..10_000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = rng.random_range(1..=8);
            let t = random_topology(&mut rng, n, 0.3, 0.2);
            let s = spectral_summary(&t);
            proptest::prop_assert!(s.lambda1 >= 0.0);
            proptest::prop_assert_eq!(s.lambda1 > 1e-9, s.has_spanning_tree);
            let l = &s.laplacian;
            for i in 0..n {
                proptest::prop_assert_eq!(l.row(i).sum(), 0.0);
                for j in 0..n {
                    proptest::prop_assert_eq!(l[(i, j)], l[(j, i)]);
                    if i != j {
                        proptest::prop_assert!(l[(i, j)] <= 0.0);
                    }
                }
            }
        }
    }
}
