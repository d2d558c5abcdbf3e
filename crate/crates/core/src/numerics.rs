//! Dense real-matrix kernels: spectra, Kronecker-vectorized linear solves,
//! Lyapunov equations and exponential decay envelopes.
//!
//! Everything here works on [`Matrix`] (a dynamically sized `nalgebra`
//! matrix). Complex numbers only show up as eigenvalues.

use nalgebra::{Complex, DMatrix, DVector, Schur, SVD};
use thiserror::Error;

pub type Matrix = DMatrix<f64>;
pub type Vector = DVector<f64>;
pub type Complex64 = Complex<f64>;

/// Iteration budget for the real Schur decomposition.
pub const SCHUR_MAX_ITER: usize = 10_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NumericsError {
    #[error("expected a square matrix, got {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("eigenvalue iteration did not converge within {0} iterations")]
    NoConvergence(usize),
    #[error("singular linear system (rank {rank} of {dim})")]
    Singular { rank: usize, dim: usize },
    #[error("inconsistent linear system, residual {residual:.3e}")]
    Inconsistent { residual: f64 },
    #[error("matrix is not Hurwitz: eigenvalue {re:+.6e}{im:+.6e}i has nonnegative real part")]
    NotHurwitz { re: f64, im: f64 },
    #[error("non-finite entry in input")]
    NonFinite,
}

pub type Result<T> = std::result::Result<T, NumericsError>;

pub fn ensure_square(m: &Matrix) -> Result<usize> {
    if m.nrows() != m.ncols() {
        return Err(NumericsError::NotSquare { rows: m.nrows(), cols: m.ncols() });
    }
    Ok(m.nrows())
}

pub fn all_finite(m: &Matrix) -> bool {
    m.iter().all(|v| v.is_finite())
}

/// Build a matrix from row slices. Panics on ragged input; intended for
/// literals and tests. Use [`try_from_rows`] for untrusted data.
pub fn from_rows(rows: &[&[f64]]) -> Matrix {
    let r = rows.len();
    let c = rows.first().map_or(0, |row| row.len());
    assert!(rows.iter().all(|row| row.len() == c), "ragged matrix literal");
    Matrix::from_fn(r, c, |i, j| rows[i][j])
}

pub fn try_from_rows(rows: &[Vec<f64>]) -> std::result::Result<Matrix, String> {
    let r = rows.len();
    let c = rows.first().map_or(0, Vec::len);
    if let Some((k, row)) = rows.iter().enumerate().find(|(_, row)| row.len() != c) {
        return Err(format!("row {} has {} entries, expected {}", k + 1, row.len(), c));
    }
    if rows.iter().flatten().any(|v| !v.is_finite()) {
        return Err("non-finite entry".to_string());
    }
    Ok(Matrix::from_fn(r, c, |i, j| rows[i][j]))
}

pub fn to_rows(m: &Matrix) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

/// Eigenvalues of a square matrix, sorted by ascending real part
/// (ties broken by ascending imaginary part).
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    pub eigenvalues: Vec<Complex64>,
}

impl Spectrum {
    pub fn len(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eigenvalues.is_empty()
    }

    pub fn max_real(&self) -> f64 {
        self.eigenvalues.iter().map(|z| z.re).fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min_real(&self) -> f64 {
        self.eigenvalues.iter().map(|z| z.re).fold(f64::INFINITY, f64::min)
    }

    /// Sum of the positive parts of the real parts.
    pub fn unstable_mass(&self) -> f64 {
        self.eigenvalues.iter().map(|z| z.re.max(0.0)).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Complex64> {
        self.eigenvalues.iter()
    }
}

pub fn spectrum(m: &Matrix) -> Result<Spectrum> {
    let n = ensure_square(m)?;
    if !all_finite(m) {
        return Err(NumericsError::NonFinite);
    }
    if n == 0 {
        return Ok(Spectrum { eigenvalues: Vec::new() });
    }
    let schur = Schur::try_new(m.clone(), f64::EPSILON, SCHUR_MAX_ITER)
        .ok_or(NumericsError::NoConvergence(SCHUR_MAX_ITER))?;
    let mut eigenvalues: Vec<Complex64> = schur.complex_eigenvalues().iter().copied().collect();
    eigenvalues.sort_by(|a, b| a.re.total_cmp(&b.re).then(a.im.total_cmp(&b.im)));
    Ok(Spectrum { eigenvalues })
}

/// Eigenvalues of a symmetric matrix, ascending.
pub fn symmetric_eigenvalues(m: &Matrix) -> Result<Vec<f64>> {
    ensure_square(m)?;
    let sym = (m + m.transpose()) * 0.5;
    let mut ev: Vec<f64> = sym.symmetric_eigen().eigenvalues.iter().copied().collect();
    ev.sort_by(f64::total_cmp);
    Ok(ev)
}

pub fn max_real_part(m: &Matrix) -> Result<f64> {
    Ok(spectrum(m)?.max_real())
}

/// Spectral (operator 2-) norm.
pub fn norm2(m: &Matrix) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.singular_values().max()
}

pub fn kron(a: &Matrix, b: &Matrix) -> Matrix {
    a.kronecker(b)
}

/// Column-major vectorization.
pub fn vec_of(m: &Matrix) -> Vector {
    Vector::from_column_slice(m.as_slice())
}

pub fn unvec(v: &[f64], rows: usize, cols: usize) -> Matrix {
    Matrix::from_column_slice(rows, cols, v)
}

/// Rank-decision threshold `max(r, c) * eps * sigma_max`, unless overridden
/// by an absolute threshold or a multiple of `sigma_max`.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct RankTolerance {
    pub absolute: Option<f64>,
    pub relative: Option<f64>,
}

impl RankTolerance {
    pub fn relative(rel: f64) -> Self {
        Self { absolute: None, relative: Some(rel) }
    }

    pub fn threshold(&self, rows: usize, cols: usize, sigma_max: f64) -> f64 {
        match (self.absolute, self.relative) {
            (Some(a), _) => a,
            (None, Some(r)) => r * sigma_max,
            (None, None) => rows.max(cols) as f64 * f64::EPSILON * sigma_max,
        }
    }
}

pub fn rank(m: &Matrix, tol: RankTolerance) -> usize {
    if m.is_empty() {
        return 0;
    }
    let sv = m.singular_values();
    let thr = tol.threshold(m.nrows(), m.ncols(), sv.max());
    sv.iter().filter(|&&s| s > thr).count()
}

/// Rank of a complex matrix `re + i*im` via its real embedding
/// `[[re, -im], [im, re]]`, whose rank is twice the complex rank.
pub fn complex_rank(re: &Matrix, im: &Matrix, tol: RankTolerance) -> usize {
    let (r, c) = re.shape();
    let mut emb = Matrix::zeros(2 * r, 2 * c);
    emb.view_mut((0, 0), (r, c)).copy_from(re);
    emb.view_mut((0, c), (r, c)).copy_from(&(-im));
    emb.view_mut((r, 0), (r, c)).copy_from(im);
    emb.view_mut((r, c), (r, c)).copy_from(re);
    rank(&emb, tol) / 2
}

/// One `left * X_k * right` contribution to a linear matrix equation.
#[derive(Debug, Clone)]
pub struct KronTerm {
    pub unknown: usize,
    pub left: Matrix,
    pub right: Matrix,
}

#[derive(Debug, Clone)]
pub struct KronEquation {
    pub terms: Vec<KronTerm>,
    pub rhs: Matrix,
}

/// A system of linear matrix equations `sum_t L_t X_{k(t)} R_t = C_e`,
/// solved by vectorizing with `vec(L X R) = (R^T ⊗ L) vec(X)`.
#[derive(Debug, Clone, Default)]
pub struct KronSystem {
    pub unknowns: Vec<(usize, usize)>,
    pub equations: Vec<KronEquation>,
    pub rank_tol: RankTolerance,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveKind {
    Exact,
    MinimumNorm,
    LeastSquares,
}

#[derive(Debug, Clone)]
pub struct KronSolution {
    pub unknowns: Vec<Matrix>,
    pub residual: f64,
    pub kind: SolveKind,
    pub rank: usize,
}

impl KronSystem {
    pub fn new(unknowns: Vec<(usize, usize)>) -> Self {
        Self { unknowns, equations: Vec::new(), rank_tol: RankTolerance::default() }
    }

    pub fn equation(mut self, terms: Vec<KronTerm>, rhs: Matrix) -> Self {
        self.equations.push(KronEquation { terms, rhs });
        self
    }

    fn offsets(&self) -> Vec<usize> {
        let mut acc = 0;
        self.unknowns
            .iter()
            .map(|(r, c)| {
                let o = acc;
                acc += r * c;
                o
            })
            .collect()
    }

    /// Assemble the vectorized coefficient matrix and right-hand side.
    pub fn assemble(&self) -> Result<(Matrix, Vector)> {
        let offsets = self.offsets();
        let ncols: usize = self.unknowns.iter().map(|(r, c)| r * c).sum();
        let nrows: usize = self.equations.iter().map(|e| e.rhs.len()).sum();
        let mut m = Matrix::zeros(nrows, ncols);
        let mut rhs = Vector::zeros(nrows);
        let mut row = 0;
        for eq in &self.equations {
            let (er, ec) = eq.rhs.shape();
            for t in &eq.terms {
                let (ur, uc) = *self.unknowns.get(t.unknown).ok_or_else(|| {
                    NumericsError::Dimension(format!("unknown index {} out of range", t.unknown))
                })?;
                if t.left.shape() != (er, ur) || t.right.shape() != (uc, ec) {
                    return Err(NumericsError::Dimension(format!(
                        "term {}x{} * X({}x{}) * {}x{} does not produce {}x{}",
                        t.left.nrows(),
                        t.left.ncols(),
                        ur,
                        uc,
                        t.right.nrows(),
                        t.right.ncols(),
                        er,
                        ec
                    )));
                }
                let block = kron(&t.right.transpose(), &t.left);
                let mut view = m.view_mut((row, offsets[t.unknown]), (er * ec, ur * uc));
                view += &block;
            }
            rhs.rows_mut(row, er * ec).copy_from(&vec_of(&eq.rhs));
            row += er * ec;
        }
        Ok((m, rhs))
    }
}

/// Solve a [`KronSystem`]: exact when square and nonsingular, minimum-norm
/// when underdetermined, least squares when overdetermined. Square singular
/// systems and inconsistent systems are errors.
pub fn kron_solve(sys: &KronSystem) -> Result<KronSolution> {
    let (m, rhs) = sys.assemble()?;
    let (nr, nc) = m.shape();
    let scale = 1.0 + rhs.amax() + m.amax();
    let svd = SVD::new(m.clone(), true, true);
    let smax = svd.singular_values.max();
    let thr = sys.rank_tol.threshold(nr, nc, smax);
    let rank = svd.singular_values.iter().filter(|&&s| s > thr).count();
    let kind = if nr == nc {
        if rank < nc {
            return Err(NumericsError::Singular { rank, dim: nc });
        }
        SolveKind::Exact
    } else if nr < nc {
        SolveKind::MinimumNorm
    } else {
        SolveKind::LeastSquares
    };
    let x = svd
        .solve(&rhs, thr)
        .map_err(|e| NumericsError::Dimension(e.to_string()))?;
    let residual = (&m * &x - &rhs).norm();
    if residual > 1e-9 * scale {
        return Err(NumericsError::Inconsistent { residual });
    }
    let offsets = sys.offsets();
    let unknowns = sys
        .unknowns
        .iter()
        .zip(offsets)
        .map(|(&(r, c), o)| unvec(&x.as_slice()[o..o + r * c], r, c))
        .collect();
    Ok(KronSolution { unknowns, residual, kind, rank })
}

/// Solve `A X + X A^T + Q = 0`.
pub fn solve_lyapunov(a: &Matrix, q: &Matrix) -> Result<Matrix> {
    let n = ensure_square(a)?;
    if q.shape() != (n, n) {
        return Err(NumericsError::Dimension(format!(
            "Q is {}x{}, expected {n}x{n}",
            q.nrows(),
            q.ncols()
        )));
    }
    let id = Matrix::identity(n, n);
    let sys = KronSystem::new(vec![(n, n)]).equation(
        vec![
            KronTerm { unknown: 0, left: a.clone(), right: id.clone() },
            KronTerm { unknown: 0, left: id, right: a.transpose() },
        ],
        -q,
    );
    let sol = kron_solve(&sys)?;
    let x = &sol.unknowns[0];
    Ok((x + x.transpose()) * 0.5)
}

/// Certified exponential envelope `||e^{At}|| <= rho * e^{-rate t}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecayEnvelope {
    pub rho: f64,
    pub rate: f64,
}

impl DecayEnvelope {
    pub fn bound(&self, t: f64) -> f64 {
        self.rho * (-self.rate * t).exp()
    }

    /// Largest violation `||e^{At}|| - rho e^{-rate t}` over `samples + 1`
    /// evenly spaced points of `[0, 10 / rate]`.
    pub fn worst_violation(&self, a: &Matrix, samples: usize) -> f64 {
        let horizon = 10.0 / self.rate;
        (0..=samples)
            .map(|k| {
                let t = horizon * k as f64 / samples as f64;
                norm2(&(a * t).exp()) - self.bound(t)
            })
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Envelope from the Lyapunov function `x^T Q x` with `A^T Q + Q A + I = 0`:
/// `rho = sqrt(lmax/lmin)`, `rate = 1 / (2 lmax)`.
pub fn decay_envelope(a: &Matrix) -> Result<DecayEnvelope> {
    let n = ensure_square(a)?;
    let spec = spectrum(a)?;
    if let Some(z) = spec.iter().find(|z| z.re >= 0.0) {
        return Err(NumericsError::NotHurwitz { re: z.re, im: z.im });
    }
    let q = solve_lyapunov(&a.transpose(), &Matrix::identity(n, n))?;
    let ev = symmetric_eigenvalues(&q)?;
    let (lmin, lmax) = (ev[0], ev[n - 1]);
    Ok(DecayEnvelope { rho: (lmax / lmin).sqrt(), rate: 1.0 / (2.0 * lmax) })
}

/// Hurwitz certificate: every eigenvalue has real part `<= -margin`.
pub fn certify_hurwitz(a: &Matrix, margin: f64) -> Result<()> {
    let spec = spectrum(a)?;
    let worst = spec.iter().find(|z| z.re > -margin).copied();
    match worst {
        Some(z) => Err(NumericsError::NotHurwitz { re: z.re, im: z.im }),
        None => Ok(()),
    }
}

/// Positive-definite check via Cholesky on the symmetric part.
pub fn is_positive_definite(m: &Matrix) -> bool {
    m.is_square() && ((m + m.transpose()) * 0.5).cholesky().is_some()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn spectrum_of_diagonal_is_sorted() {
        let s = spectrum(&from_rows(&[&[1.0, 0.0], &[0.0, -2.0]])).unwrap();
        assert_abs_diff_eq!(s.eigenvalues[0].re, -2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(s.eigenvalues[1].re, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn rotation_eigenvalues_tie_break_on_imaginary_part() {
        let s = spectrum(&from_rows(&[&[0.0, 1.0], &[-1.0, 0.0]])).unwrap();
        assert_abs_diff_eq!(s.eigenvalues[0].im, -1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(s.eigenvalues[1].im, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(s.max_real(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn spectrum_rejects_non_square() {
        assert!(matches!(
            spectrum(&Matrix::zeros(2, 3)),
            Err(NumericsError::NotSquare { rows: 2, cols: 3 })
        ));
    }

    #[test]
    fn lyapunov_scalar_and_diagonal() {
        let x = solve_lyapunov(&from_rows(&[&[-1.0]]), &from_rows(&[&[2.0]])).unwrap();
        assert_abs_diff_eq!(x[(0, 0)], 1.0, epsilon = 1e-12);
        let x = solve_lyapunov(&from_rows(&[&[-1.0, 0.0], &[0.0, -2.0]]), &Matrix::identity(2, 2))
            .unwrap();
        assert_abs_diff_eq!(x, from_rows(&[&[0.5, 0.0], &[0.0, 0.25]]), epsilon = 1e-12);
    }

    #[test]
    fn lyapunov_singular_when_spectra_collide() {
        // eigenvalue 0 of A means A and -A^T share it
        let a = from_rows(&[&[0.0, 1.0], &[0.0, -1.0]]);
        assert!(matches!(
            solve_lyapunov(&a, &Matrix::identity(2, 2)),
            Err(NumericsError::Singular { .. })
        ));
    }

    /// Trapezoidal quadrature of the controllability Gramian integral.
    fn gramian_quadrature(a: &Matrix) -> Matrix {
        let n = a.nrows();
        let h = 1e-3;
        let steps = 40_000;
        let step = (a * h).exp();
        let mut e = Matrix::identity(n, n);
        let mut acc = Matrix::zeros(n, n);
        for k in 0..=steps {
            let w = if k == 0 || k == steps { 0.5 } else { 1.0 };
            acc += &e * e.transpose() * (w * h);
            e = &step * e;
        }
        acc
    }

    #[test]
    fn lyapunov_matches_gramian_quadrature() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 3;
        let mut a = Matrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        let shift = max_real_part(&a).unwrap() + 1.0;
        a -= Matrix::identity(n, n) * shift;
        let x = solve_lyapunov(&a, &Matrix::identity(n, n)).unwrap();
        let oracle = gramian_quadrature(&a);
        assert_abs_diff_eq!(x, oracle, epsilon = 1e-6);
    }

    #[test]
    fn envelope_examples() {
        let e = decay_envelope(&from_rows(&[&[-1.0]])).unwrap();
        assert_abs_diff_eq!(e.rho, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(e.rate, 1.0, epsilon = 1e-12);
        let e = decay_envelope(&from_rows(&[&[-1.0, 0.0], &[0.0, -4.0]])).unwrap();
        assert_abs_diff_eq!(e.rho, 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(e.rate, 1.0, epsilon = 1e-12);
        let a = from_rows(&[&[-1.0, 10.0], &[0.0, -1.0]]);
        let e = decay_envelope(&a).unwrap();
        assert!(e.rho > 1.0);
        assert!(e.worst_violation(&a, 400) <= 1e-9);
    }

    #[test]
    fn envelope_rejects_unstable() {
        let err = decay_envelope(&from_rows(&[&[0.5, 0.0], &[0.0, -1.0]])).unwrap_err();
        assert!(matches!(err, NumericsError::NotHurwitz { re, .. } if (re - 0.5).abs() < 1e-12));
    }

    #[test]
    fn kron_solve_examples() {
        let s = KronSystem::new(vec![(1, 1)]).equation(
            vec![KronTerm { unknown: 0, left: from_rows(&[&[2.0]]), right: from_rows(&[&[1.0]]) }],
            from_rows(&[&[4.0]]),
        );
        let sol = kron_solve(&s).unwrap();
        assert_eq!(sol.kind, SolveKind::Exact);
        assert_abs_diff_eq!(sol.unknowns[0][(0, 0)], 2.0, epsilon = 1e-14);

        // Sylvester A X - X B = C, A = 1, B = -1, C = 2
        let one = from_rows(&[&[1.0]]);
        let s = KronSystem::new(vec![(1, 1)]).equation(
            vec![
                KronTerm { unknown: 0, left: one.clone(), right: one.clone() },
                KronTerm { unknown: 0, left: -one.clone(), right: from_rows(&[&[-1.0]]) },
            ],
            from_rows(&[&[2.0]]),
        );
        assert_abs_diff_eq!(kron_solve(&s).unwrap().unknowns[0][(0, 0)], 1.0, epsilon = 1e-14);

        let s = KronSystem::new(vec![(2, 1)]).equation(
            vec![KronTerm { unknown: 0, left: from_rows(&[&[1.0, 1.0]]), right: one }],
            from_rows(&[&[2.0]]),
        );
        let sol = kron_solve(&s).unwrap();
        assert_eq!(sol.kind, SolveKind::MinimumNorm);
        assert_abs_diff_eq!(sol.unknowns[0], from_rows(&[&[1.0], &[1.0]]), epsilon = 1e-12);
    }

    #[test]
    fn kron_solve_rejects_inconsistent_overdetermined() {
        let one = from_rows(&[&[1.0]]);
        let s = KronSystem::new(vec![(1, 1)])
            .equation(vec![KronTerm { unknown: 0, left: one.clone(), right: one.clone() }], one.clone())
            .equation(vec![KronTerm { unknown: 0, left: one.clone(), right: one }], from_rows(&[&[3.0]]));
        assert!(matches!(kron_solve(&s), Err(NumericsError::Inconsistent { .. })));
    }

    #[test]
    fn complex_rank_of_pbh_matrix() {
        // [iI - R, 0] for a rotation R has complex rank 1 at lambda = i
        let re = from_rows(&[&[0.0, -1.0], &[1.0, 0.0]]);
        let im = Matrix::identity(2, 2);
        assert_eq!(complex_rank(&re, &im, RankTolerance::default()), 1);
    }

    proptest::proptest! {
        #[test]
        fn lyapunov_output_symmetric_pd_and_envelope_holds(seed in 0u64..500) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = rng.random_range(1..=4);
            let mut a = Matrix::from_fn(n, n, |_, _| rng.random_range(-2.0..2.0));
            let shift = max_real_part(&a).unwrap() + rng.random_range(0.1..1.5);
            a -= Matrix::identity(n, n) * shift;
            let x = solve_lyapunov(&a, &Matrix::identity(n, n)).unwrap();
            proptest::prop_assert!((&x - x.transpose()).amax() <= 1e-12);
            proptest::prop_assert!(is_positive_definite(&x));
            let res = &a * &x + &x * a.transpose() + Matrix::identity(n, n);
            proptest::prop_assert!(res.amax() <= 1e-10 * 2.0 * (1.0 + x.amax()));
            let env = decay_envelope(&a).unwrap();
            proptest::prop_assert!(env.rho >= 1.0 - 1e-12);
            proptest::prop_assert!(env.worst_violation(&a, 200) <= 1e-9);
        }
    }
}
