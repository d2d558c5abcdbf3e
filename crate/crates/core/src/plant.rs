//! Leader and follower linear models, per-edge noise intensities, and the
//! structural checks (stabilizability, detectability, observability,
//! regulator solvability) the synthesis relies on.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::graph::Topology;
use crate::numerics::{complex_rank, rank, spectrum, Complex64, Matrix, NumericsError, RankTolerance};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PlantError {
    #[error("{0}")]
    Dimension(String),
    #[error("non-finite entry in {0}")]
    NonFinite(String),
    #[error("noise given for edge ({0}, {1}) which is not in the topology")]
    NoiseOffGraph(usize, usize),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

fn finite(m: &Matrix, name: &str) -> Result<(), PlantError> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(PlantError::NonFinite(name.to_string()))
    }
}

/// Leader `ẋ0 = A0 x0`, `y0 = C0 x0`.
#[derive(Debug, Clone, PartialEq)]
pub struct LeaderModel {
    pub a0: Matrix,
    pub c0: Matrix,
}

impl LeaderModel {
    pub fn new(a0: Matrix, c0: Matrix) -> Result<Self, PlantError> {
        finite(&a0, "A0")?;
        finite(&c0, "C0")?;
        if !a0.is_square() {
            return Err(PlantError::Dimension(format!("A0 is {}x{}, not square", a0.nrows(), a0.ncols())));
        }
        if c0.ncols() != a0.nrows() || c0.nrows() == 0 {
            return Err(PlantError::Dimension(format!(
                "C0 is {}x{}, expected p x {}",
                c0.nrows(),
                c0.ncols(),
                a0.nrows()
            )));
        }
        Ok(Self { a0, c0 })
    }

    pub fn n(&self) -> usize {
        self.a0.nrows()
    }

    pub fn p(&self) -> usize {
        self.c0.nrows()
    }
}

/// Follower `ẋi = Ai xi + Bi ui`, `yi = Ci xi`.
#[derive(Debug, Clone, PartialEq)]
pub struct FollowerModel {
    pub a: Matrix,
    pub b: Matrix,
    pub c: Matrix,
}

impl FollowerModel {
    pub fn new(a: Matrix, b: Matrix, c: Matrix) -> Result<Self, PlantError> {
        finite(&a, "A")?;
        finite(&b, "B")?;
        finite(&c, "C")?;
        let n = a.nrows();
        if !a.is_square() {
            return Err(PlantError::Dimension(format!("A is {}x{}, not square", n, a.ncols())));
        }
        if b.nrows() != n || b.ncols() == 0 {
            return Err(PlantError::Dimension(format!("B is {}x{}, expected {n} x m", b.nrows(), b.ncols())));
        }
        if c.ncols() != n || c.nrows() == 0 {
            return Err(PlantError::Dimension(format!("C is {}x{}, expected p x {n}", c.nrows(), c.ncols())));
        }
        if c.nrows() > b.ncols() {
            return Err(PlantError::Dimension(format!(
                "output dimension {} exceeds input dimension {}",
                c.nrows(),
                b.ncols()
            )));
        }
        Ok(Self { a, b, c })
    }

    pub fn n(&self) -> usize {
        self.a.nrows()
    }

    pub fn m(&self) -> usize {
        self.b.ncols()
    }

    pub fn p(&self) -> usize {
        self.c.nrows()
    }
}

/// Check that every follower shares the leader's output dimension.
pub fn check_output_dims(leader: &LeaderModel, followers: &[FollowerModel]) -> Result<(), PlantError> {
    for (k, f) in followers.iter().enumerate() {
        if f.p() != leader.p() {
            return Err(PlantError::Dimension(format!(
                "follower {} has output dimension {}, leader has {}",
                k + 1,
                f.p(),
                leader.p()
            )));
        }
    }
    Ok(())
}

/// Noise on the directed edge `i <- j` (`j = 0` is the leader): additive
/// intensity vector `Υ_ij ∈ R^p` and multiplicative scalar `σ_ij`.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeNoise {
    pub upsilon: Vec<f64>,
    pub sigma: f64,
}

/// Per-edge noise. Edges missing from the map are noise-free.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct NoiseModel {
    edges: BTreeMap<(usize, usize), EdgeNoise>,
    p: usize,
}

impl NoiseModel {
    pub fn new(p: usize) -> Self {
        Self { edges: BTreeMap::new(), p }
    }

    /// Same `Υ` and `σ` on every edge of `t`, leader edges included.
    pub fn uniform(t: &Topology, upsilon: &[f64], sigma: f64) -> Result<Self, PlantError> {
        let mut nm = Self::new(upsilon.len());
        for i in 1..=t.n_followers() {
            for j in t.neighbors(i) {
                nm.set(t, i, j, EdgeNoise { upsilon: upsilon.to_vec(), sigma })?;
            }
        }
        Ok(nm)
    }

    pub fn set(&mut self, t: &Topology, i: usize, j: usize, e: EdgeNoise) -> Result<(), PlantError> {
        if i == 0 || i > t.n_followers() || j > t.n_followers() || t.weight(i, j) == 0 {
            return Err(PlantError::NoiseOffGraph(i, j));
        }
        if e.upsilon.len() != self.p {
            return Err(PlantError::Dimension(format!(
                "edge ({i}, {j}) additive intensity has length {}, expected {}",
                e.upsilon.len(),
                self.p
            )));
        }
        if !e.sigma.is_finite() || e.upsilon.iter().any(|v| !v.is_finite()) {
            return Err(PlantError::NonFinite(format!("noise on edge ({i}, {j})")));
        }
        self.edges.insert((i, j), e);
        Ok(())
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn edge(&self, i: usize, j: usize) -> Option<&EdgeNoise> {
        self.edges.get(&(i, j))
    }

    pub fn upsilon(&self, i: usize, j: usize) -> Vec<f64> {
        self.edge(i, j).map_or_else(|| vec![0.0; self.p], |e| e.upsilon.clone())
    }

    pub fn sigma(&self, i: usize, j: usize) -> f64 {
        self.edge(i, j).map_or(0.0, |e| e.sigma)
    }

    pub fn edges(&self) -> impl Iterator<Item = (&(usize, usize), &EdgeNoise)> {
        self.edges.iter()
    }

    /// `σ² = max σ_ij²` over all edges, leader edges included.
    pub fn sigma_sq_max(&self) -> f64 {
        self.edges.values().map(|e| e.sigma * e.sigma).fold(0.0, f64::max)
    }

    pub fn has_additive(&self) -> bool {
        self.edges.values().any(|e| e.upsilon.iter().any(|&v| v != 0.0))
    }

    /// Copy with every additive intensity set to zero.
    pub fn without_additive(&self) -> Self {
        let mut out = self.clone();
        for e in out.edges.values_mut() {
            e.upsilon.iter_mut().for_each(|v| *v = 0.0);
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CheckKind {
    Stabilizable,
    Detectable,
    LeaderObservable,
    RegulatorSolvable,
}

/// A failing rank test: which agent (0 = leader), which property, and the
/// eigenvalue where the rank drops (absent for the observability matrix test).
#[derive(Debug, Clone, PartialEq)]
pub struct Diagnostic {
    pub agent: usize,
    pub kind: CheckKind,
    pub eigenvalue: Option<Complex64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AssumptionReport {
    pub stabilizable: Vec<bool>,
    pub detectable: Vec<bool>,
    pub leader_observable: bool,
    pub regulator_solvable: Vec<bool>,
    pub diagnostics: Vec<Diagnostic>,
}

impl AssumptionReport {
    pub fn all_hold(&self) -> bool {
        self.leader_observable
            && self.stabilizable.iter().all(|&b| b)
            && self.detectable.iter().all(|&b| b)
            && self.regulator_solvable.iter().all(|&b| b)
    }
}

/// Tolerances for the structural rank tests.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CheckConfig {
    pub rank_tol: RankTolerance,
    /// Eigenvalues with real part `>= -rhp_tol` count as closed right half-plane.
    pub rhp_tol: f64,
}

impl Default for CheckConfig {
    fn default() -> Self {
        Self { rank_tol: RankTolerance::relative(1e-9), rhp_tol: 1e-9 }
    }
}

fn shifted(lambda: Complex64, a: &Matrix) -> (Matrix, Matrix) {
    let n = a.nrows();
    let re = Matrix::identity(n, n) * lambda.re - a;
    let im = Matrix::identity(n, n) * lambda.im;
    (re, im)
}

fn hstack(l: &Matrix, r: &Matrix) -> Matrix {
    let mut out = Matrix::zeros(l.nrows(), l.ncols() + r.ncols());
    out.view_mut((0, 0), l.shape()).copy_from(l);
    out.view_mut((0, l.ncols()), r.shape()).copy_from(r);
    out
}

fn vstack(t: &Matrix, b: &Matrix) -> Matrix {
    let mut out = Matrix::zeros(t.nrows() + b.nrows(), t.ncols());
    out.view_mut((0, 0), t.shape()).copy_from(t);
    out.view_mut((t.nrows(), 0), b.shape()).copy_from(b);
    out
}

/// Eigenvalues of `a` in the closed right half-plane where `[λI - A, B]` loses rank.
pub fn uncontrollable_modes(a: &Matrix, b: &Matrix, cfg: &CheckConfig) -> Result<Vec<Complex64>, PlantError> {
    let n = a.nrows();
    let zero = Matrix::zeros(b.nrows(), b.ncols());
    Ok(spectrum(a)?
        .iter()
        .filter(|z| z.re >= -cfg.rhp_tol)
        .filter(|&&z| {
            let (re, im) = shifted(z, a);
            complex_rank(&hstack(&re, b), &hstack(&im, &zero), cfg.rank_tol) < n
        })
        .copied()
        .collect())
}

/// Eigenvalues of `a` in the closed right half-plane where `[λI - A; C]` loses rank.
pub fn unobservable_modes(a: &Matrix, c: &Matrix, cfg: &CheckConfig) -> Result<Vec<Complex64>, PlantError> {
    uncontrollable_modes(&a.transpose(), &c.transpose(), cfg)
}

pub fn observability_matrix(a: &Matrix, c: &Matrix) -> Matrix {
    let n = a.nrows();
    let mut blocks = c.clone();
    let mut cur = c.clone();
    for _ in 1..n {
        cur = &cur * a;
        blocks = vstack(&blocks, &cur);
    }
    blocks
}

pub fn is_observable(a: &Matrix, c: &Matrix, cfg: &CheckConfig) -> bool {
    rank(&observability_matrix(a, c), cfg.rank_tol) == a.nrows()
}

pub fn is_controllable(a: &Matrix, b: &Matrix, cfg: &CheckConfig) -> bool {
    is_observable(&a.transpose(), &b.transpose(), cfg)
}

/// Eigenvalues of the leader at which `[λI - Ai, Bi; Ci, 0]` has rank below `ni + p`.
pub fn regulator_rank_failures(
    f: &FollowerModel,
    leader: &LeaderModel,
    cfg: &CheckConfig,
) -> Result<Vec<Complex64>, PlantError> {
    let (n, m, p) = (f.n(), f.m(), f.p());
    Ok(spectrum(&leader.a0)?
        .iter()
        .filter(|&&z| {
            let (re, im) = shifted(z, &f.a);
            let top_re = hstack(&re, &f.b);
            let top_im = hstack(&im, &Matrix::zeros(n, m));
            let bot = hstack(&f.c, &Matrix::zeros(p, m));
            let full_re = vstack(&top_re, &bot);
            let full_im = vstack(&top_im, &Matrix::zeros(p, n + m));
            complex_rank(&full_re, &full_im, cfg.rank_tol) < n + p
        })
        .copied()
        .collect())
}

pub fn check_assumptions(leader: &LeaderModel, followers: &[FollowerModel]) -> Result<AssumptionReport, PlantError> {
    check_assumptions_with(leader, followers, &CheckConfig::default())
}

pub fn check_assumptions_with(
    leader: &LeaderModel,
    followers: &[FollowerModel],
    cfg: &CheckConfig,
) -> Result<AssumptionReport, PlantError> {
    check_output_dims(leader, followers)?;
    let mut diagnostics = Vec::new();
    let mut stabilizable = Vec::with_capacity(followers.len());
    let mut detectable = Vec::with_capacity(followers.len());
    let mut regulator_solvable = Vec::with_capacity(followers.len());
    for (k, f) in followers.iter().enumerate() {
        let agent = k + 1;
        let bad = uncontrollable_modes(&f.a, &f.b, cfg)?;
        stabilizable.push(bad.is_empty());
        diagnostics.extend(bad.into_iter().map(|z| Diagnostic {
            agent,
            kind: CheckKind::Stabilizable,
            eigenvalue: Some(z),
        }));
        let bad = unobservable_modes(&f.a, &f.c, cfg)?;
        detectable.push(bad.is_empty());
        diagnostics.extend(bad.into_iter().map(|z| Diagnostic {
            agent,
            kind: CheckKind::Detectable,
            eigenvalue: Some(z),
        }));
        let bad = regulator_rank_failures(f, leader, cfg)?;
        regulator_solvable.push(bad.is_empty());
        diagnostics.extend(bad.into_iter().map(|z| Diagnostic {
            agent,
            kind: CheckKind::RegulatorSolvable,
            eigenvalue: Some(z),
        }));
    }
    let leader_observable = is_observable(&leader.a0, &leader.c0, cfg);
    if !leader_observable {
        let modes = unobservable_modes(&leader.a0, &leader.c0, &CheckConfig { rhp_tol: f64::INFINITY, ..*cfg })?;
        if modes.is_empty() {
            diagnostics.push(Diagnostic { agent: 0, kind: CheckKind::LeaderObservable, eigenvalue: None });
        }
        diagnostics.extend(modes.into_iter().map(|z| Diagnostic {
            agent: 0,
            kind: CheckKind::LeaderObservable,
            eigenvalue: Some(z),
        }));
    }
    Ok(AssumptionReport { stabilizable, detectable, leader_observable, regulator_solvable, diagnostics })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::from_rows;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn scalar(v: f64) -> Matrix {
        from_rows(&[&[v]])
    }

    #[test]
    fn unstable_without_input_not_stabilizable() {
        let leader = LeaderModel::new(scalar(0.0), scalar(1.0)).unwrap();
        let f = FollowerModel::new(scalar(1.0), scalar(0.0), scalar(1.0)).unwrap();
        let r = check_assumptions(&leader, &[f]).unwrap();
        assert!(!r.stabilizable[0]);
        let d = r.diagnostics.iter().find(|d| d.kind == CheckKind::Stabilizable).unwrap();
        assert!((d.eigenvalue.unwrap().re - 1.0).abs() < 1e-12);
    }

    #[test]
    fn scalar_regulator_always_solvable() {
        for a0 in [-3.0, 0.0, 0.7, 5.0] {
            let leader = LeaderModel::new(scalar(a0), scalar(1.3)).unwrap();
            let f = FollowerModel::new(scalar(a0), scalar(-0.4), scalar(2.0)).unwrap();
            let r = check_assumptions(&leader, &[f]).unwrap();
            assert!(r.regulator_solvable[0]);
        }
    }

    #[test]
    fn every_false_flag_has_a_diagnostic() {
        let leader = LeaderModel::new(from_rows(&[&[1.0, 0.0], &[0.0, 2.0]]), from_rows(&[&[1.0, 0.0]])).unwrap();
        let f = FollowerModel::new(scalar(1.0), scalar(0.0), scalar(0.0)).unwrap();
        let r = check_assumptions(&leader, &[f]).unwrap();
        assert!(!r.leader_observable && !r.stabilizable[0] && !r.detectable[0] && !r.regulator_solvable[0]);
        for kind in [CheckKind::Stabilizable, CheckKind::Detectable, CheckKind::LeaderObservable, CheckKind::RegulatorSolvable] {
            assert!(r.diagnostics.iter().any(|d| d.kind == kind), "{kind:?}");
        }
    }

    #[test]
    fn rejects_inconsistent_dimensions() {
        assert!(FollowerModel::new(Matrix::zeros(2, 2), Matrix::zeros(3, 1), Matrix::zeros(1, 2)).is_err());
        assert!(FollowerModel::new(Matrix::zeros(2, 2), Matrix::zeros(2, 1), Matrix::zeros(2, 2)).is_err());
        let leader = LeaderModel::new(scalar(0.0), scalar(1.0)).unwrap();
        let f = FollowerModel::new(Matrix::zeros(2, 2), Matrix::zeros(2, 2), Matrix::zeros(2, 2)).unwrap();
        assert!(check_assumptions(&leader, &[f]).is_err());
    }

    #[test]
    fn noise_sigma_sq_max() {
        let t = Topology::from_edges(3, &[(2, 3)], &[1, 2]).unwrap();
        let mut nm = NoiseModel::uniform(&t, &[0.9], 1.2).unwrap();
        assert!((nm.sigma_sq_max() - 1.44).abs() < 1e-15);
        nm.set(&t, 3, 2, EdgeNoise { upsilon: vec![0.0], sigma: -2.0 }).unwrap();
        assert_eq!(nm.sigma_sq_max(), 4.0);
        assert_eq!(nm.sigma(1, 3), 0.0);
        assert!(nm.set(&t, 1, 3, EdgeNoise { upsilon: vec![0.0], sigma: 1.0 }).is_err());
        assert!(!nm.without_additive().has_additive());
    }

    proptest::proptest! {
        #[test]
        fn controllable_implies_stabilizable_observable_implies_detectable(seed in 0u64..2000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = rng.random_range(1..=4);
            let m = rng.random_range(1..=2);
            let cfg = CheckConfig::default();
            let a = Matrix::from_fn(n, n, |_, _| rng.random_range(-2.0..2.0));
            // sparse inputs make uncontrollable pairs common
            let b = Matrix::from_fn(n, m, |_, _| if rng.random_bool(0.3) { rng.random_range(-1.0..1.0) } else { 0.0 });
            let c = Matrix::from_fn(1, n, |_, _| if rng.random_bool(0.4) { 1.0 } else { 0.0 });
            if is_controllable(&a, &b, &cfg) {
                proptest::prop_assert!(uncontrollable_modes(&a, &b, &cfg).unwrap().is_empty());
            }
            if is_observable(&a, &c, &cfg) {
                proptest::prop_assert!(unobservable_modes(&a, &c, &cfg).unwrap().is_empty());
            }
        }
    }
}
