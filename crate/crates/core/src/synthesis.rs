//! Gain synthesis: regulator equations, the generalized Riccati equation of
//! the distributed leader observer, stabilizer and observer gains, the
//! admissible coupling window, and the theoretical tracking bounds.

use nalgebra::SVD;
use thiserror::Error;

use crate::graph::Topology;
use crate::numerics::{
    certify_hurwitz, decay_envelope, ensure_square, kron, kron_solve, norm2, solve_lyapunov, spectrum,
    symmetric_eigenvalues, DecayEnvelope, KronSystem, KronTerm, Matrix, NumericsError, Vector,
};
use crate::plant::{
    is_observable, regulator_rank_failures, uncontrollable_modes, unobservable_modes, CheckConfig, FollowerModel,
    LeaderModel, NoiseModel, PlantError,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SynthesisError {
    #[error("regulator equations of follower {follower} unsolvable: rank drops at leader eigenvalue {re:+.6}{im:+.6}i")]
    RegulatorUnsolvable { follower: usize, re: f64, im: f64 },
    #[error("regulator override for follower {follower} has residual {residual:.3e} above {tolerance:.1e}")]
    RegulatorOverride { follower: usize, residual: f64, tolerance: f64 },
    #[error("alpha = {alpha} is below the leader instability mass {lambda0u}")]
    AlphaTooSmall { alpha: f64, lambda0u: f64 },
    #[error("leader pair (A0, C0) is not observable")]
    LeaderUnobservable,
    #[error("Riccati iteration did not converge: residual {residual:.3e} after {steps} steps")]
    GareNoConvergence { residual: f64, steps: usize },
    #[error("pair is not stabilizable: uncontrollable mode {re:+.6}{im:+.6}i")]
    Unstabilizable { re: f64, im: f64 },
    #[error("pair is not detectable: unobservable mode {re:+.6}{im:+.6}i")]
    Undetectable { re: f64, im: f64 },
    #[error("{what} of follower {follower} is not Hurwitz (eigenvalue {re:+.6}{im:+.6}i)")]
    NotHurwitz { what: &'static str, follower: usize, re: f64, im: f64 },
    #[error("gain dimension mismatch: {0}")]
    Dimension(String),
    #[error("coupling gains must be positive, got k1 = {k1}, k2 = {k2}")]
    NonPositiveCoupling { k1: f64, k2: f64 },
    #[error("tracking time bound requires zero additive noise")]
    AdditiveNoisePresent,
    #[error("hypothesis violated: {0}")]
    Hypothesis(String),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Plant(#[from] PlantError),
}

pub type Result<T> = std::result::Result<T, SynthesisError>;

/// Sum of the positive parts of the real parts of the eigenvalues.
pub fn lambda0_u(a0: &Matrix) -> Result<f64> {
    Ok(spectrum(a0)?.unstable_mass())
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegulatorSolution {
    pub pi: Matrix,
    pub gamma: Matrix,
    pub residual: f64,
}

/// `‖Π A0 − A Π − B Γ‖_F + ‖C Π − C0‖_F`.
pub fn regulator_residual(f: &FollowerModel, l: &LeaderModel, pi: &Matrix, gamma: &Matrix) -> Result<f64> {
    if pi.shape() != (f.n(), l.n()) || gamma.shape() != (f.m(), l.n()) {
        return Err(SynthesisError::Dimension(format!(
            "Pi {}x{} / Gamma {}x{} vs expected {}x{} / {}x{}",
            pi.nrows(),
            pi.ncols(),
            gamma.nrows(),
            gamma.ncols(),
            f.n(),
            l.n(),
            f.m(),
            l.n()
        )));
    }
    let r1 = pi * &l.a0 - &f.a * pi - &f.b * gamma;
    let r2 = &f.c * pi - &l.c0;
    Ok(r1.norm() + r2.norm())
}

/// Acceptance threshold `1e-8 (1 + ‖A0‖)` for a computed regulator solution.
pub fn regulator_tolerance(l: &LeaderModel) -> f64 {
    1e-8 * (1.0 + norm2(&l.a0))
}

/// Minimum-norm solution of `Π A0 = A Π + B Γ`, `C Π = C0`.
/// `follower` is only used to label errors.
pub fn solve_regulator(f: &FollowerModel, l: &LeaderModel, follower: usize) -> Result<RegulatorSolution> {
    if let Some(z) = regulator_rank_failures(f, l, &CheckConfig::default())?.first() {
        return Err(SynthesisError::RegulatorUnsolvable { follower, re: z.re, im: z.im });
    }
    let (ni, mi, n, p) = (f.n(), f.m(), l.n(), l.p());
    let id_n = Matrix::identity(n, n);
    let sys = KronSystem::new(vec![(ni, n), (mi, n)])
        .equation(
            vec![
                KronTerm { unknown: 0, left: Matrix::identity(ni, ni), right: l.a0.clone() },
                KronTerm { unknown: 0, left: -&f.a, right: id_n.clone() },
                KronTerm { unknown: 1, left: -&f.b, right: id_n.clone() },
            ],
            Matrix::zeros(ni, n),
        )
        .equation(vec![KronTerm { unknown: 0, left: f.c.clone(), right: id_n }], l.c0.clone());
    debug_assert_eq!(f.p(), p);
    let sol = kron_solve(&sys)?;
    let mut it = sol.unknowns.into_iter();
    let pi = it.next().expect("two unknowns");
    let gamma = it.next().expect("two unknowns");
    let residual = regulator_residual(f, l, &pi, &gamma)?;
    Ok(RegulatorSolution { pi, gamma, residual })
}

/// Accept a user-supplied `(Π, Γ)` when its residual is at most `tol`.
pub fn validate_regulator_override(
    f: &FollowerModel,
    l: &LeaderModel,
    follower: usize,
    pi: Matrix,
    gamma: Matrix,
    tol: f64,
) -> Result<RegulatorSolution> {
    let residual = regulator_residual(f, l, &pi, &gamma)?;
    if residual > tol {
        return Err(SynthesisError::RegulatorOverride { follower, residual, tolerance: tol });
    }
    Ok(RegulatorSolution { pi, gamma, residual })
}

#[derive(Debug, Clone, PartialEq)]
pub struct GareSolution {
    pub p: Matrix,
    pub alpha: f64,
    pub residual: f64,
}

impl GareSolution {
    /// `P C0ᵀ (I + C0 P C0ᵀ)⁻¹`, the unscaled leader-observer gain.
    pub fn observer_direction(&self, c0: &Matrix) -> Matrix {
        let p = c0.nrows();
        let s = (Matrix::identity(p, p) + c0 * &self.p * c0.transpose())
            .try_inverse()
            .expect("I + C P Cᵀ is positive definite");
        &self.p * c0.transpose() * s
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GareConfig {
    /// Switch from the Riccati flow to Newton once `‖Ṗ‖_F` falls below this.
    pub flow_tol: f64,
    /// Required final residual.
    pub tol: f64,
    pub max_flow_steps: usize,
    pub max_newton_steps: usize,
    pub initial_step: f64,
}

impl Default for GareConfig {
    fn default() -> Self {
        Self { flow_tol: 1e-6, tol: 1e-8, max_flow_steps: 2_000_000, max_newton_steps: 50, initial_step: 1e-2 }
    }
}

/// `A0 P + P A0ᵀ − 2α P C0ᵀ (I + C0 P C0ᵀ)⁻¹ C0 P + I`.
pub fn gare_residual_matrix(a0: &Matrix, c0: &Matrix, alpha: f64, p: &Matrix) -> Matrix {
    let n = a0.nrows();
    let q = c0.nrows();
    let s = match (Matrix::identity(q, q) + c0 * p * c0.transpose()).try_inverse() {
        Some(s) => s,
        None => return Matrix::from_element(n, n, f64::NAN),
    };
    let pc = p * c0.transpose();
    a0 * p + p * a0.transpose() - (&pc * s * pc.transpose()) * (2.0 * alpha) + Matrix::identity(n, n)
}

pub fn gare_residual(a0: &Matrix, c0: &Matrix, alpha: f64, p: &Matrix) -> f64 {
    gare_residual_matrix(a0, c0, alpha, p).norm()
}

fn sym(m: Matrix) -> Matrix {
    (&m + m.transpose()) * 0.5
}

fn spd(m: &Matrix) -> bool {
    m.iter().all(|v| v.is_finite()) && m.clone().cholesky().is_some()
}

/// Jacobian of the vectorized residual at `p`.
fn gare_jacobian(a0: &Matrix, c0: &Matrix, alpha: f64, p: &Matrix) -> Matrix {
    let n = a0.nrows();
    let q = c0.nrows();
    let s = (Matrix::identity(q, q) + c0 * p * c0.transpose())
        .try_inverse()
        .expect("I + C P Cᵀ invertible for P ⪰ 0");
    let l = c0.transpose() * s * c0 * p;
    let lt = l.transpose();
    let id = Matrix::identity(n, n);
    kron(&id, a0) + kron(a0, &id) - (kron(&lt, &id) + kron(&id, &lt) - kron(&lt, &lt)) * (2.0 * alpha)
}

/// Damped Newton on the vectorized residual. Returns the polished iterate,
/// its residual matrix and the number of Newton steps taken.
fn newton_polish(a0: &Matrix, c0: &Matrix, alpha: f64, p0: Matrix, cfg: &GareConfig) -> (Matrix, Matrix, usize) {
    let n = a0.nrows();
    let mut p = p0;
    let mut r = gare_residual_matrix(a0, c0, alpha, &p);
    let mut res = r.norm();
    let mut steps = 0;
    while res > 1e-3 * cfg.tol && steps < cfg.max_newton_steps {
        steps += 1;
        let j = gare_jacobian(a0, c0, alpha, &p);
        let rhs = -Vector::from_column_slice(r.as_slice());
        let Some(step) = j.lu().solve(&rhs) else { break };
        let e = sym(Matrix::from_column_slice(n, n, step.as_slice()));
        let mut t = 1.0;
        let mut improved = false;
        while t > 1e-4 {
            let cand = sym(&p + &e * t);
            if spd(&cand) {
                let rc = gare_residual_matrix(a0, c0, alpha, &cand);
                // full steps may raise the residual a little on ill-conditioned P
                let allowance = if t == 1.0 { 10.0 } else { 1.0 };
                if rc.norm() < allowance * res {
                    p = cand;
                    r = rc;
                    res = r.norm();
                    improved = true;
                    break;
                }
            }
            t /= 2.0;
        }
        if !improved {
            break;
        }
    }
    (p, r, steps)
}

/// Solve the generalized Riccati equation starting the flow at `p0`.
pub fn solve_gare_from(l: &LeaderModel, alpha: f64, p0: &Matrix, cfg: &GareConfig) -> Result<GareSolution> {
    let (a0, c0) = (&l.a0, &l.c0);
    let mut p = sym(p0.clone());
    let mut r = gare_residual_matrix(a0, c0, alpha, &p);
    let mut h = cfg.initial_step;
    let mut steps = 0;
    // explicit Euler on Ṗ = R(P) with step-doubling error control
    while r.norm() >= cfg.flow_tol {
        if steps >= cfg.max_flow_steps || h < 1e-14 {
            return Err(SynthesisError::GareNoConvergence { residual: r.norm(), steps });
        }
        steps += 1;
        // slow modes: hand over to Newton early once close to equilibrium
        if steps % 5000 == 0 && r.norm() < 1e-3 * (1.0 + p.norm()) {
            let (pn, rn, _) = newton_polish(a0, c0, alpha, p.clone(), cfg);
            if rn.norm() <= cfg.tol && spd(&pn) {
                return Ok(GareSolution { p: pn, alpha, residual: rn.norm() });
            }
        }
        let full = sym(&p + &r * h);
        let half = sym(&p + &r * (h / 2.0));
        let r_half = gare_residual_matrix(a0, c0, alpha, &half);
        let two_half = sym(&half + &r_half * (h / 2.0));
        let err = (&full - &two_half).norm();
        let scale = 0.05 * h * r.norm();
        if !spd(&two_half) || !err.is_finite() || err > scale {
            h /= 2.0;
            continue;
        }
        p = two_half;
        r = gare_residual_matrix(a0, c0, alpha, &p);
        if err < scale / 4.0 {
            h *= 1.5;
        }
    }
    let (p, r, newton) = newton_polish(a0, c0, alpha, p, cfg);
    let res = r.norm();
    if res > cfg.tol || !spd(&p) {
        return Err(SynthesisError::GareNoConvergence { residual: res, steps: steps + newton });
    }
    Ok(GareSolution { p, alpha, residual: res })
}

/// Positive definite solution of the generalized Riccati equation. A Hurwitz
/// leader with `alpha = 0` reduces to the Lyapunov equation `A0 P + P A0ᵀ + I = 0`.
pub fn solve_gare(l: &LeaderModel, alpha: f64) -> Result<GareSolution> {
    solve_gare_with(l, alpha, &GareConfig::default())
}

pub fn solve_gare_with(l: &LeaderModel, alpha: f64, cfg: &GareConfig) -> Result<GareSolution> {
    let spec = spectrum(&l.a0)?;
    let l0u = spec.unstable_mass();
    if l0u > 0.0 && alpha < l0u {
        return Err(SynthesisError::AlphaTooSmall { alpha, lambda0u: l0u });
    }
    if !is_observable(&l.a0, &l.c0, &CheckConfig::default()) {
        return Err(SynthesisError::LeaderUnobservable);
    }
    let n = l.n();
    if alpha == 0.0 && spec.max_real() < 0.0 {
        let p = solve_lyapunov(&l.a0, &Matrix::identity(n, n))?;
        let residual = gare_residual(&l.a0, &l.c0, 0.0, &p);
        return Ok(GareSolution { p, alpha, residual });
    }
    solve_gare_from(l, alpha, &Matrix::identity(n, n), cfg)
}

/// Largest entrywise disagreement between solutions started at `scales · I`.
pub fn gare_uniqueness_gap(l: &LeaderModel, alpha: f64, scales: &[f64]) -> Result<f64> {
    let n = l.n();
    let sols = scales
        .iter()
        .map(|&s| solve_gare_from(l, alpha, &(Matrix::identity(n, n) * s), &GareConfig::default()))
        .collect::<Result<Vec<_>>>()?;
    let mut gap: f64 = 0.0;
    for a in &sols {
        for b in &sols {
            gap = gap.max((&a.p - &b.p).amax());
        }
    }
    Ok(gap)
}

/// Admissible coupling interval `(k̲, k̄)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GainWindow {
    pub lower: f64,
    pub upper: f64,
    pub nonempty: bool,
    pub discriminant: f64,
}

impl GainWindow {
    pub fn contains(&self, k: f64) -> bool {
        self.nonempty && k > self.lower && k < self.upper
    }
}

pub fn gain_window(lambda1: f64, sigma_sq: f64, alpha: f64) -> GainWindow {
    let disc = lambda1 * lambda1 - 4.0 * alpha * lambda1 * sigma_sq;
    if lambda1 <= 0.0 {
        return GainWindow { lower: f64::NAN, upper: f64::NAN, nonempty: false, discriminant: disc };
    }
    if sigma_sq == 0.0 {
        return GainWindow { lower: alpha / lambda1, upper: f64::INFINITY, nonempty: true, discriminant: disc };
    }
    if disc <= 0.0 {
        return GainWindow { lower: f64::NAN, upper: f64::NAN, nonempty: false, discriminant: disc };
    }
    let root = disc.sqrt();
    let denom = 2.0 * lambda1 * sigma_sq;
    GainWindow { lower: (lambda1 - root) / denom, upper: (lambda1 + root) / denom, nonempty: true, discriminant: disc }
}

/// `σ² λ0ᵘ < λ1 / 4`.
pub fn cooperatability(sigma_sq: f64, lambda0u: f64, lambda1: f64) -> bool {
    sigma_sq * lambda0u < lambda1 / 4.0
}

/// Scalar star systems: mean-square tracking is achievable iff `σ² a0 < 1/2`.
pub fn scalar_star_cooperatability(sigma_sq: f64, a0: f64) -> bool {
    sigma_sq * a0 < 0.5
}

/// Default stability margin for Hurwitz certification.
pub const DEFAULT_MARGIN: f64 = 1e-6;

fn matrix_sign(h: &Matrix) -> Result<Matrix> {
    let n = h.nrows();
    let mut z = h.clone();
    for _ in 0..200 {
        let lu = z.clone().lu();
        let zi = lu.try_inverse().ok_or(NumericsError::Singular { rank: 0, dim: n })?;
        let det = z.clone().lu().determinant().abs();
        let c = if det.is_finite() && det > 0.0 { det.powf(-1.0 / n as f64) } else { 1.0 };
        let next = (&z * c + zi / c) * 0.5;
        let diff = (&next - &z).norm();
        z = next;
        if diff <= 1e-13 * z.norm() {
            return Ok(z);
        }
        if !diff.is_finite() {
            break;
        }
    }
    Err(NumericsError::NoConvergence(200).into())
}

/// Stabilizing solution `X` of `Aᵀ X + X A − X B Bᵀ X + I = 0` and `K = −Bᵀ X`.
pub fn lqr(a: &Matrix, b: &Matrix) -> Result<(Matrix, Matrix)> {
    let n = ensure_square(a)?;
    if let Some(z) = uncontrollable_modes(a, b, &CheckConfig::default())?.first() {
        return Err(SynthesisError::Unstabilizable { re: z.re, im: z.im });
    }
    let bbt = b * b.transpose();
    let mut ham = Matrix::zeros(2 * n, 2 * n);
    ham.view_mut((0, 0), (n, n)).copy_from(a);
    ham.view_mut((0, n), (n, n)).copy_from(&(-&bbt));
    ham.view_mut((n, 0), (n, n)).copy_from(&(-Matrix::identity(n, n)));
    ham.view_mut((n, n), (n, n)).copy_from(&(-a.transpose()));
    let w = matrix_sign(&ham)?;
    let id = Matrix::identity(n, n);
    let mut lhs = Matrix::zeros(2 * n, n);
    lhs.view_mut((0, 0), (n, n)).copy_from(&w.view((0, n), (n, n)));
    lhs.view_mut((n, 0), (n, n)).copy_from(&(w.view((n, n), (n, n)) + &id));
    let mut rhs = Matrix::zeros(2 * n, n);
    rhs.view_mut((0, 0), (n, n)).copy_from(&(-(w.view((0, 0), (n, n)) + &id)));
    rhs.view_mut((n, 0), (n, n)).copy_from(&(-w.view((n, 0), (n, n))));
    let x = SVD::new(lhs, true, true)
        .solve(&rhs, 1e-14)
        .map_err(|e| NumericsError::Dimension(e.to_string()))?;
    let mut x = sym(x);
    // Newton-Kleinman polish
    for _ in 0..3 {
        let k = -b.transpose() * &x;
        let acl = a + b * &k;
        if certify_hurwitz(&acl, 0.0).is_err() {
            break;
        }
        let q = id.clone() + k.transpose() * &k;
        match solve_lyapunov(&acl.transpose(), &q) {
            Ok(next) => x = next,
            Err(_) => break,
        }
    }
    let k = -b.transpose() * &x;
    Ok((k, x))
}

/// `K` with `A + B K` Hurwitz, from the identity-weighted LQR.
pub fn design_stabilizer(a: &Matrix, b: &Matrix, margin: f64) -> Result<Matrix> {
    let (k, _) = lqr(a, b)?;
    certify_hurwitz(&(a + b * &k), margin)?;
    Ok(k)
}

/// `H` with `A − H C` Hurwitz, by duality with [`design_stabilizer`].
pub fn design_observer_gain(a: &Matrix, c: &Matrix, margin: f64) -> Result<Matrix> {
    if let Some(z) = unobservable_modes(a, c, &CheckConfig::default())?.first() {
        return Err(SynthesisError::Undetectable { re: z.re, im: z.im });
    }
    let (kd, _) = lqr(&a.transpose(), &c.transpose())?;
    let h = -kd.transpose();
    certify_hurwitz(&(a - &h * c), margin)?;
    Ok(h)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FollowerGains {
    pub k1: Matrix,
    pub k2: Matrix,
    pub h: Matrix,
    pub pi: Matrix,
    pub gamma: Matrix,
}

#[derive(Debug, Clone, PartialEq)]
pub enum SynthesisWarning {
    EmptyWindow { discriminant: f64 },
    OutsideWindow { name: &'static str, value: f64, lower: f64, upper: f64 },
    AlphaOutsideRange { alpha: f64, lower: f64, upper: f64 },
    NotCooperatable { lhs: f64, rhs: f64 },
}

impl std::fmt::Display for SynthesisWarning {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::EmptyWindow { discriminant } => {
                write!(f, "coupling window is empty (discriminant {discriminant:.6e})")
            }
            Self::OutsideWindow { name, value, lower, upper } => {
                write!(f, "{name} = {value} lies outside the window ({lower:.6}, {upper:.6})")
            }
            Self::AlphaOutsideRange { alpha, lower, upper } => {
                write!(f, "alpha = {alpha} lies outside [{lower:.6}, {upper:.6})")
            }
            Self::NotCooperatable { lhs, rhs } => {
                write!(f, "cooperatability condition fails: sigma^2 lambda0u = {lhs:.6} >= lambda1/4 = {rhs:.6}")
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GainSet {
    pub followers: Vec<FollowerGains>,
    pub g1: Matrix,
    pub g2: Matrix,
    pub gare: Option<GareSolution>,
    pub window: GainWindow,
    pub k1: f64,
    pub k2: f64,
    pub warnings: Vec<SynthesisWarning>,
}

/// Per-follower and shared overrides. `None` means "synthesize".
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GainOverrides {
    pub k1: Vec<Option<Matrix>>,
    pub h: Vec<Option<Matrix>>,
    pub regulator: Vec<Option<(Matrix, Matrix)>>,
    pub g1: Option<Matrix>,
    pub g2: Option<Matrix>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthesisParams {
    pub alpha: f64,
    pub k1: f64,
    pub k2: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthesisConfig {
    pub margin: f64,
    pub regulator_override_tol: f64,
    pub gare: GareConfig,
}

impl Default for SynthesisConfig {
    fn default() -> Self {
        Self { margin: DEFAULT_MARGIN, regulator_override_tol: 5e-3, gare: GareConfig::default() }
    }
}

fn pick<T: Clone>(v: &[Option<T>], i: usize) -> Option<T> {
    v.get(i).cloned().flatten()
}

fn hurwitz_or(m: &Matrix, margin: f64, what: &'static str, follower: usize) -> Result<()> {
    certify_hurwitz(m, margin).map_err(|e| match e {
        NumericsError::NotHurwitz { re, im } => SynthesisError::NotHurwitz { what, follower, re, im },
        other => other.into(),
    })
}

/// Check the Hurwitz and `K2 = Γ − K1 Π` invariants of one follower's gains.
pub fn certify_follower(f: &FollowerModel, g: &FollowerGains, follower: usize, margin: f64) -> Result<()> {
    hurwitz_or(&(&f.a + &f.b * &g.k1), margin, "A + B K1", follower)?;
    hurwitz_or(&(&f.a - &g.h * &f.c), margin, "A - H C", follower)?;
    Ok(())
}

#[allow(clippy::too_many_arguments)]
pub fn assemble_gains(
    leader: &LeaderModel,
    followers: &[FollowerModel],
    topology: &Topology,
    noise: &NoiseModel,
    regulators: &[RegulatorSolution],
    params: SynthesisParams,
    overrides: &GainOverrides,
    cfg: &SynthesisConfig,
) -> Result<GainSet> {
    if params.k1 <= 0.0 || params.k2 <= 0.0 {
        return Err(SynthesisError::NonPositiveCoupling { k1: params.k1, k2: params.k2 });
    }
    if regulators.len() != followers.len() {
        return Err(SynthesisError::Dimension(format!(
            "{} regulator solutions for {} followers",
            regulators.len(),
            followers.len()
        )));
    }
    let mut warnings = Vec::new();
    let lambda1 = crate::graph::spectral_summary(topology).lambda1;
    let sigma_sq = noise.sigma_sq_max();
    let l0u = lambda0_u(&leader.a0)?;
    let window = gain_window(lambda1, sigma_sq, params.alpha);
    if !window.nonempty {
        warnings.push(SynthesisWarning::EmptyWindow { discriminant: window.discriminant });
    } else {
        for (name, value) in [("k1", params.k1), ("k2", params.k2)] {
            if !window.contains(value) {
                warnings.push(SynthesisWarning::OutsideWindow {
                    name,
                    value,
                    lower: window.lower,
                    upper: window.upper,
                });
            }
        }
    }
    if !cooperatability(sigma_sq, l0u, lambda1) {
        warnings.push(SynthesisWarning::NotCooperatable { lhs: sigma_sq * l0u, rhs: lambda1 / 4.0 });
    } else if sigma_sq > 0.0 {
        let upper = l0u + (lambda1 - 4.0 * sigma_sq * l0u) / (4.0 * sigma_sq);
        if params.alpha < l0u || params.alpha >= upper {
            warnings.push(SynthesisWarning::AlphaOutsideRange { alpha: params.alpha, lower: l0u, upper });
        }
    }

    let (n, p) = (leader.n(), leader.p());
    let gare = if overrides.g1.is_some() && overrides.g2.is_some() {
        None
    } else {
        Some(solve_gare_with(leader, params.alpha, &cfg.gare)?)
    };
    let dir = gare.as_ref().map(|g| g.observer_direction(&leader.c0));
    let shared = |o: &Option<Matrix>, k: f64| -> Result<Matrix> {
        match o {
            Some(g) if g.shape() != (n, p) => Err(SynthesisError::Dimension(format!(
                "observer gain is {}x{}, expected {n}x{p}",
                g.nrows(),
                g.ncols()
            ))),
            Some(g) => Ok(g.clone()),
            None => Ok(dir.as_ref().expect("GARE solved when a gain is synthesized") * k),
        }
    };
    let g1 = shared(&overrides.g1, params.k1)?;
    let g2 = shared(&overrides.g2, params.k2)?;

    let mut out = Vec::with_capacity(followers.len());
    for (idx, f) in followers.iter().enumerate() {
        let label = idx + 1;
        let reg = match pick(&overrides.regulator, idx) {
            Some((pi, gamma)) => {
                validate_regulator_override(f, leader, label, pi, gamma, cfg.regulator_override_tol)?
            }
            None => regulators[idx].clone(),
        };
        let k1 = match pick(&overrides.k1, idx) {
            Some(k) if k.shape() != (f.m(), f.n()) => {
                return Err(SynthesisError::Dimension(format!(
                    "K1 of follower {label} is {}x{}, expected {}x{}",
                    k.nrows(),
                    k.ncols(),
                    f.m(),
                    f.n()
                )))
            }
            Some(k) => k,
            None => design_stabilizer(&f.a, &f.b, cfg.margin)?,
        };
        let h = match pick(&overrides.h, idx) {
            Some(h) if h.shape() != (f.n(), f.p()) => {
                return Err(SynthesisError::Dimension(format!(
                    "H of follower {label} is {}x{}, expected {}x{}",
                    h.nrows(),
                    h.ncols(),
                    f.n(),
                    f.p()
                )))
            }
            Some(h) => h,
            None => design_observer_gain(&f.a, &f.c, cfg.margin)?,
        };
        let k2 = &reg.gamma - &k1 * &reg.pi;
        let g = FollowerGains { k1, k2, h, pi: reg.pi, gamma: reg.gamma };
        certify_follower(f, &g, label, cfg.margin)?;
        out.push(g);
    }
    Ok(GainSet { followers: out, g1, g2, gare, window, k1: params.k1, k2: params.k2, warnings })
}

/// `ϖ1 = Σ_j Υ_jᵀ [I_N ⊗ G1ᵀ P⁻¹ G1] Υ_j + Υ_0ᵀ [I_N ⊗ G2ᵀ P⁻¹ G2] Υ_0`, where
/// `Υ_j` stacks `Υ_ij` over followers `i` (zero blocks on absent edges).
pub fn varpi1(noise: &NoiseModel, g1: &Matrix, g2: &Matrix, p: &Matrix, topology: &Topology) -> Result<f64> {
    let n_f = topology.n_followers();
    let q = noise.p();
    let pinv = p.clone().try_inverse().ok_or(NumericsError::Singular { rank: 0, dim: p.nrows() })?;
    let id = Matrix::identity(n_f, n_f);
    let w1 = kron(&id, &(g1.transpose() * &pinv * g1));
    let w2 = kron(&id, &(g2.transpose() * &pinv * g2));
    let stacked = |j: usize| {
        let mut v = Vector::zeros(n_f * q);
        for i in 1..=n_f {
            if topology.weight(i, j) == 1 {
                v.rows_mut((i - 1) * q, q).copy_from_slice(&noise.upsilon(i, j));
            }
        }
        v
    };
    let mut total = 0.0;
    for j in 1..=n_f {
        let u = stacked(j);
        total += u.dot(&(&w1 * &u));
    }
    let u0 = stacked(0);
    total += u0.dot(&(&w2 * &u0));
    Ok(total)
}

/// Certified envelopes `ρ1 e^{−ρ2 t}` for `A + B K1` and `ρ3 e^{−ρ4 t}` for `A − H C`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Envelopes {
    pub control: DecayEnvelope,
    pub observer: DecayEnvelope,
}

pub fn follower_envelopes(f: &FollowerModel, g: &FollowerGains) -> Result<Envelopes> {
    Ok(Envelopes {
        control: decay_envelope(&(&f.a + &f.b * &g.k1))?,
        observer: decay_envelope(&(&f.a - &g.h * &f.c))?,
    })
}

/// Upper bound on `limsup E‖y_i − y_0‖²`:
/// `6 ρ1² λmax(P)² ϖ1² ‖P‖² / ρ2² · ‖C‖² ‖B K2‖²`.
pub fn tracking_bound(f: &FollowerModel, g: &FollowerGains, p: &Matrix, varpi1: f64, env: &DecayEnvelope) -> Result<f64> {
    let ev = symmetric_eigenvalues(p)?;
    let lmax = *ev.last().expect("nonempty P");
    let (rho1, rho2) = (env.rho, env.rate);
    let cn = norm2(&f.c);
    let bk2 = norm2(&(&f.b * &g.k2));
    Ok(6.0 * rho1.powi(2) * lmax.powi(2) * varpi1.powi(2) * norm2(p).powi(2) / rho2.powi(2) * cn.powi(2) * bk2.powi(2))
}

/// Initial second moments entering `ϖ2` for one follower.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct InitialMoments {
    /// `E‖x_i(0) − x̂_i(0)‖²`
    pub estimation: f64,
    /// `E‖x̂_i(0) − Π_i x_0(0)‖²`
    pub manifold: f64,
    /// `Σ_j E‖x̂_j0(0) − x_0(0)‖²`
    pub leader_observer: f64,
}

/// `ϖ2` for one follower. The third term is weighted by the leader-observer
/// error moment, which is the quantity the `V(0)` estimate actually bounds.
pub fn varpi2(f: &FollowerModel, g: &FollowerGains, p: &Matrix, env: &Envelopes, m: &InitialMoments) -> Result<f64> {
    let ev = symmetric_eigenvalues(p)?;
    let (lmin, lmax) = (ev[0], ev[ev.len() - 1]);
    let (rho1, rho3) = (env.control.rho, env.observer.rho);
    let c2 = norm2(&f.c).powi(2);
    let bk2 = norm2(&(&f.b * &g.k2)).powi(2);
    let hc = norm2(&(&g.h * &f.c)).powi(2);
    Ok(2.0 * rho3.powi(2) * c2 * m.estimation
        + 6.0 * rho1.powi(2) * c2 * m.manifold
        + 6.0 * rho1.powi(2) * c2 * bk2 * lmax / lmin * m.leader_observer
        + 6.0 * rho1.powi(2) * rho3.powi(2) * c2 * hc * m.estimation)
}

/// Two-branch tracking-time bound: `0` when `ε ≥ ϖ2`, otherwise
/// `max{2 / min(ρ2², ρ4², 1/(4‖P‖²)), ln(ϖ2/ε) / (2 min(ρ2, ρ4, 1/(2‖P‖)))}`.
pub fn tracking_time_bound(varpi2: f64, rho2: f64, rho4: f64, p_norm: f64, epsilon: f64) -> f64 {
    if epsilon >= varpi2 {
        return 0.0;
    }
    let a = 2.0 / rho2.powi(2).min(rho4.powi(2)).min(1.0 / (4.0 * p_norm * p_norm));
    let b = (varpi2 / epsilon).ln() / (2.0 * rho2.min(rho4).min(1.0 / (2.0 * p_norm)));
    a.max(b)
}

/// Scalar star configuration: leader `a0, c0`, follower `a, b, c`, gains
/// `k1, k2, h`, leader-observer gain `k` (`G2 = k`, `G1 = 0`), and leader-edge
/// noise `σ`, `Υ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScalarParams {
    pub a0: f64,
    pub c0: f64,
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub k: f64,
    pub k1: f64,
    pub k2: f64,
    pub h: f64,
    pub sigma: f64,
    pub upsilon: f64,
}

impl ScalarParams {
    /// `π = c0 / c`.
    pub fn pi(&self) -> f64 {
        self.c0 / self.c
    }

    /// `γ = (a0 c0 − a c0) / (b c)`.
    pub fn gamma(&self) -> f64 {
        (self.a0 * self.c0 - self.a * self.c0) / (self.b * self.c)
    }

    /// Same parameters with `k2 = γ − k1 π`.
    pub fn with_regulator_k2(mut self) -> Self {
        self.k2 = self.gamma() - self.k1 * self.pi();
        self
    }
}

/// `c² b² k2² k⁴ σ² Υ² c0² / ((a0 − k c0)² (a + b k1)²)`.
pub fn scalar_lower_bound(s: &ScalarParams) -> Result<f64> {
    let lam = s.a0 - s.k * s.c0;
    let mu = s.a + s.b * s.k1;
    if lam >= 0.0 {
        return Err(SynthesisError::Hypothesis(format!("a0 - k c0 = {lam} is not negative")));
    }
    if mu >= 0.0 {
        return Err(SynthesisError::Hypothesis(format!("a + b k1 = {mu} is not negative")));
    }
    if s.b == 0.0 || s.c == 0.0 || s.c0 == 0.0 {
        return Err(SynthesisError::Hypothesis("b, c and c0 must be nonzero".to_string()));
    }
    Ok(s.c.powi(2) * s.b.powi(2) * s.k2.powi(2) * s.k.powi(4) * s.sigma.powi(2) * s.upsilon.powi(2) * s.c0.powi(2)
        / (lam.powi(2) * mu.powi(2)))
}
