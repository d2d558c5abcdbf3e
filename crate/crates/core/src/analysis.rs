//! Monte Carlo moment estimation, tail statistics, tracking-time extraction,
//! bound evaluation and the scalar closed-form oracles.

use std::io::Write;

use rayon::prelude::*;
use thiserror::Error;

use crate::graph::Topology;
use crate::numerics::{norm2, Matrix};
use crate::plant::{EdgeNoise, FollowerModel, LeaderModel, NoiseModel};
use crate::sim::{grid_steps, Engine, FollowerInit, InitialState, RngPlan, Scenario, SimError, StateView};
use crate::synthesis::{
    follower_envelopes, tracking_bound, tracking_time_bound, varpi1, varpi2, FollowerGains, GainSet, GainWindow,
    InitialMoments, SynthesisError,
};

pub use crate::synthesis::ScalarParams;

/// Trials per deterministic reduction chunk.
pub const CHUNK: usize = 64;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnalysisError {
    #[error("need at least 2 trials, got {0}")]
    TooFewTrials(usize),
    #[error("all {0} trials diverged")]
    AllDivergent(usize),
    #[error("series value {value} at t = {time} is not positive")]
    NonPositive { time: f64, value: f64 },
    #[error("regression window [{0}, {1}] holds fewer than two grid points")]
    Window(f64, f64),
    #[error("closed form undefined: {0}")]
    Undefined(String),
    #[error("bound requires a Riccati solution, but the gain set has none")]
    MissingGare,
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Synthesis(#[from] SynthesisError),
}

pub type Result<T> = std::result::Result<T, AnalysisError>;

/// Pointwise sample means and standard errors of `n_obs` observables.
#[derive(Debug, Clone, PartialEq)]
pub struct ObsSeries {
    pub times: Vec<f64>,
    /// `mean[o][k]` for observable `o` at grid point `k`.
    pub mean: Vec<Vec<f64>>,
    pub se: Vec<Vec<f64>>,
    pub trials: usize,
    pub divergent: usize,
}

#[derive(Debug, Clone)]
struct Welford {
    n: u64,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl Welford {
    fn new(len: usize) -> Self {
        Self { n: 0, mean: vec![0.0; len], m2: vec![0.0; len] }
    }

    fn push(&mut self, x: &[f64]) {
        self.n += 1;
        let n = self.n as f64;
        for ((m, s), &v) in self.mean.iter_mut().zip(self.m2.iter_mut()).zip(x) {
            let d = v - *m;
            *m += d / n;
            *s += d * (v - *m);
        }
    }

    fn merge(mut self, other: &Welford) -> Self {
        if other.n == 0 {
            return self;
        }
        if self.n == 0 {
            return other.clone();
        }
        let (na, nb) = (self.n as f64, other.n as f64);
        let n = na + nb;
        for k in 0..self.mean.len() {
            let d = other.mean[k] - self.mean[k];
            self.mean[k] += d * nb / n;
            self.m2[k] += other.m2[k] + d * d * na * nb / n;
        }
        self.n += other.n;
        self
    }
}

/// Run `trials` independent trials and accumulate `observe` on the grid
/// `k · stride · dt`. Divergent trials are dropped and counted. The result
/// depends only on the inputs, never on thread scheduling.
#[allow(clippy::too_many_arguments)]
pub fn monte_carlo<F>(
    engine: &Engine,
    plan: &RngPlan,
    trials: usize,
    dt: f64,
    steps: usize,
    stride: usize,
    n_obs: usize,
    observe: F,
) -> Result<ObsSeries>
where
    F: Fn(StateView<'_>, &mut [f64]) + Sync,
{
    if trials < 2 {
        return Err(AnalysisError::TooFewTrials(trials));
    }
    let stride = stride.max(1);
    let n_grid = steps / stride + 1;
    let len = n_grid * n_obs;
    let chunks: Vec<(usize, usize)> = (0..trials).step_by(CHUNK).map(|s| (s, (s + CHUNK).min(trials))).collect();
    let partial: Vec<std::result::Result<(Welford, usize), SimError>> = chunks
        .par_iter()
        .map(|&(lo, hi)| {
            let mut acc = Welford::new(len);
            let mut divergent = 0;
            let mut buf = vec![0.0; len];
            for trial in lo..hi {
                let res = engine.run(plan, trial as u64, dt, steps, stride, |k, v| {
                    let g = k / stride;
                    observe(v, &mut buf[g * n_obs..(g + 1) * n_obs]);
                });
                match res {
                    Ok(()) => acc.push(&buf),
                    Err(SimError::Divergence { .. }) => divergent += 1,
                    Err(e) => return Err(e),
                }
            }
            Ok((acc, divergent))
        })
        .collect();
    let mut total = Welford::new(len);
    let mut divergent = 0;
    for p in partial {
        let (acc, d) = p?;
        total = total.merge(&acc);
        divergent += d;
    }
    if total.n == 0 {
        return Err(AnalysisError::AllDivergent(trials));
    }
    let n = total.n as f64;
    let mut mean = vec![vec![0.0; n_grid]; n_obs];
    let mut se = vec![vec![f64::NAN; n_grid]; n_obs];
    for g in 0..n_grid {
        for o in 0..n_obs {
            let k = g * n_obs + o;
            mean[o][g] = total.mean[k];
            if total.n > 1 {
                se[o][g] = (total.m2[k] / (n - 1.0)).max(0.0).sqrt() / n.sqrt();
            }
        }
    }
    let times = (0..n_grid).map(|g| (g * stride) as f64 * dt).collect();
    Ok(ObsSeries { times, mean, se, trials, divergent })
}

/// Monte Carlo estimate of `E‖y_i − y_0‖²` per follower.
#[derive(Debug, Clone, PartialEq)]
pub struct MseSeries {
    pub times: Vec<f64>,
    pub mse: Vec<Vec<f64>>,
    pub se: Vec<Vec<f64>>,
    pub trials: usize,
    pub divergent: usize,
}

impl From<ObsSeries> for MseSeries {
    fn from(s: ObsSeries) -> Self {
        Self { times: s.times, mse: s.mean, se: s.se, trials: s.trials, divergent: s.divergent }
    }
}

impl MseSeries {
    pub fn n_followers(&self) -> usize {
        self.mse.len()
    }

    /// CSV with columns `t, mse_1, se_1, ..., mse_N, se_N`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let mut header = vec!["t".to_string()];
        for i in 1..=self.n_followers() {
            header.push(format!("mse_{i}"));
            header.push(format!("se_{i}"));
        }
        writeln!(w, "{}", header.join(","))?;
        for (k, t) in self.times.iter().enumerate() {
            let mut row = vec![t.to_string()];
            for i in 0..self.n_followers() {
                row.push(self.mse[i][k].to_string());
                row.push(self.se[i][k].to_string());
            }
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }

    /// Index of the earliest grid point in the final `tail_fraction` of the horizon.
    pub fn tail_start(&self, tail_fraction: f64) -> usize {
        let end = self.times.last().copied().unwrap_or(0.0);
        let from = end * (1.0 - tail_fraction);
        self.times.iter().position(|&t| t >= from - 1e-12).unwrap_or(0)
    }
}

pub fn monte_carlo_mse(sc: &Scenario, trials: usize, seed: u64, dt: f64, horizon: f64, stride: usize) -> Result<MseSeries> {
    let engine = Engine::new(sc)?;
    let steps = grid_steps(dt, horizon)?;
    let nf = engine.n_followers();
    let s = monte_carlo(&engine, &RngPlan::new(seed), trials, dt, steps, stride, nf, |v, out| {
        for (i, o) in out.iter_mut().enumerate() {
            *o = v.tracking_error_sq(i + 1);
        }
    })?;
    Ok(s.into())
}

/// Conservative limsup proxy: max over the tail window, per follower.
pub fn plateau_estimate(series: &MseSeries, tail_fraction: f64) -> Vec<f64> {
    let start = series.tail_start(tail_fraction);
    series.mse.iter().map(|m| m[start..].iter().copied().fold(f64::NEG_INFINITY, f64::max)).collect()
}

/// Liminf proxy: per follower, the minimum tail estimate and its standard error.
pub fn tail_min(series: &MseSeries, tail_fraction: f64) -> Vec<(f64, f64)> {
    let start = series.tail_start(tail_fraction);
    series
        .mse
        .iter()
        .zip(&series.se)
        .map(|(m, s)| {
            (start..m.len()).map(|k| (m[k], s[k])).fold((f64::INFINITY, 0.0), |a, b| if b.0 < a.0 { b } else { a })
        })
        .collect()
}

/// Smallest grid time after which every estimate stays `≤ epsilon`;
/// `f64::INFINITY` when the final estimate already exceeds it.
pub fn tracking_time_estimate(series: &MseSeries, epsilon: f64) -> f64 {
    let last_bad = (0..series.times.len()).rev().find(|&k| series.mse.iter().any(|m| m[k] > epsilon));
    match last_bad {
        None => 0.0,
        Some(k) if k + 1 < series.times.len() => series.times[k + 1],
        Some(_) => f64::INFINITY,
    }
}

/// Mean of `δ(t)` as displayed for the scalar star system:
/// `e^{λt}(E δ(0) + q) − q`, `λ = a0 − k c0`, `q = k² σ Υ c0 / λ`.
pub fn scalar_mean_closed_form(p: &ScalarParams, mean_delta0: f64, t: f64) -> Result<f64> {
    let lam = p.a0 - p.k * p.c0;
    if lam == 0.0 {
        return Err(AnalysisError::Undefined("a0 = k c0".to_string()));
    }
    let q = p.k * p.k * p.sigma * p.upsilon * p.c0 / lam;
    Ok((lam * t).exp() * (mean_delta0 + q) - q)
}

/// Itô mean of the same scalar equation: the diffusion terms have zero mean,
/// so `E δ(t) = e^{λt} E δ(0)`.
pub fn scalar_ito_mean(p: &ScalarParams, mean_delta0: f64, t: f64) -> f64 {
    ((p.a0 - p.k * p.c0) * t).exp() * mean_delta0
}

/// Exponent `2 a0 − 2 G c0 + G² σ² c0²` of `E|δ(t)|²` without additive noise.
pub fn scalar_msq_exponent(p: &ScalarParams) -> f64 {
    2.0 * p.a0 - 2.0 * p.k * p.c0 + p.k * p.k * p.sigma * p.sigma * p.c0 * p.c0
}

/// Minimizing gain `G = 1 / (σ² c0)` and the resulting exponent `2 a0 − 1/σ²`.
pub fn best_scalar_gain(a0: f64, c0: f64, sigma: f64) -> (f64, f64) {
    let s2 = sigma * sigma;
    (1.0 / (s2 * c0), 2.0 * a0 - 1.0 / s2)
}

/// Least-squares slope of `ln(values)` against `times` over `[t_lo, t_hi]`.
pub fn exponent_regression(times: &[f64], values: &[f64], t_lo: f64, t_hi: f64) -> Result<f64> {
    let mut pts = Vec::new();
    for (&t, &v) in times.iter().zip(values) {
        if t < t_lo - 1e-12 || t > t_hi + 1e-12 {
            continue;
        }
        if !(v > 0.0) {
            return Err(AnalysisError::NonPositive { time: t, value: v });
        }
        pts.push((t, v.ln()));
    }
    if pts.len() < 2 {
        return Err(AnalysisError::Window(t_lo, t_hi));
    }
    let n = pts.len() as f64;
    let mt = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mt) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mt).powi(2)).sum();
    Ok(sxy / sxx)
}

fn s(v: f64) -> Matrix {
    Matrix::from_element(1, 1, v)
}

/// Scalar star closed loop with `n_followers` identical followers, `G1 = 0`,
/// `G2 = k`, leader at `x0`, every follower starting on the tracking manifold
/// with its leader estimate offset by `delta0`.
pub fn scalar_star_scenario(p: &ScalarParams, n_followers: usize, x0: f64, delta0: f64) -> Result<Scenario> {
    let leader = LeaderModel::new(s(p.a0), s(p.c0)).map_err(SynthesisError::from)?;
    let follower = FollowerModel::new(s(p.a), s(p.b), s(p.c)).map_err(SynthesisError::from)?;
    let leader_nodes: Vec<usize> = (1..=n_followers).collect();
    let topology = Topology::from_edges(n_followers, &[], &leader_nodes)
        .map_err(|e| AnalysisError::Undefined(e.to_string()))?;
    let mut noise = NoiseModel::new(1);
    for i in 1..=n_followers {
        noise
            .set(&topology, i, 0, EdgeNoise { upsilon: vec![p.upsilon], sigma: p.sigma })
            .map_err(SynthesisError::from)?;
    }
    let g = FollowerGains { k1: s(p.k1), k2: s(p.k2), h: s(p.h), pi: s(p.pi()), gamma: s(p.gamma()) };
    let xi = p.pi() * x0;
    Ok(Scenario {
        leader,
        followers: vec![follower; n_followers],
        topology,
        noise,
        gains: GainSet {
            followers: vec![g; n_followers],
            g1: s(0.0),
            g2: s(p.k),
            gare: None,
            window: GainWindow { lower: f64::NAN, upper: f64::NAN, nonempty: false, discriminant: f64::NAN },
            k1: 0.0,
            k2: p.k,
            warnings: Vec::new(),
        },
        initial: InitialState {
            x0: vec![x0],
            followers: vec![FollowerInit { x: vec![xi], xhat: vec![xi], xhat0: vec![x0 + delta0] }; n_followers],
        },
    })
}

/// Per-follower upper bound on `limsup E‖y_i − y_0‖²`.
pub fn tracking_bounds(sc: &Scenario) -> Result<Vec<f64>> {
    let gare = sc.gains.gare.as_ref().ok_or(AnalysisError::MissingGare)?;
    let w1 = varpi1(&sc.noise, &sc.gains.g1, &sc.gains.g2, &gare.p, &sc.topology)?;
    sc.followers
        .iter()
        .zip(&sc.gains.followers)
        .map(|(f, g)| {
            let env = follower_envelopes(f, g)?;
            Ok(tracking_bound(f, g, &gare.p, w1, &env.control)?)
        })
        .collect()
}

/// Tracking-time bound evaluated on the scenario's
/// deterministic initial state, with `ϖ2` maximized and the decay rates
/// minimized over followers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackingTimeBound {
    pub varpi2: f64,
    pub rho2: f64,
    pub rho4: f64,
    pub p_norm: f64,
    pub t_eps: f64,
}

pub fn tracking_time_bound_for(sc: &Scenario, epsilon: f64) -> Result<TrackingTimeBound> {
    if sc.noise.has_additive() {
        return Err(SynthesisError::AdditiveNoisePresent.into());
    }
    let gare = sc.gains.gare.as_ref().ok_or(AnalysisError::MissingGare)?;
    let x0 = crate::numerics::Vector::from_vec(sc.initial.x0.clone());
    let leader_obs: f64 = sc
        .initial
        .followers
        .iter()
        .map(|f| f.xhat0.iter().zip(x0.iter()).map(|(a, b)| (a - b).powi(2)).sum::<f64>())
        .sum();
    let mut w2: f64 = 0.0;
    let (mut rho2, mut rho4) = (f64::INFINITY, f64::INFINITY);
    for ((f, g), init) in sc.followers.iter().zip(&sc.gains.followers).zip(&sc.initial.followers) {
        let env = follower_envelopes(f, g)?;
        let est: f64 = init.x.iter().zip(&init.xhat).map(|(a, b)| (a - b).powi(2)).sum();
        let pix0 = &g.pi * &x0;
        let man: f64 = init.xhat.iter().zip(pix0.iter()).map(|(a, b)| (a - b).powi(2)).sum();
        let m = InitialMoments { estimation: est, manifold: man, leader_observer: leader_obs };
        w2 = w2.max(varpi2(f, g, &gare.p, &env, &m)?);
        rho2 = rho2.min(env.control.rate);
        rho4 = rho4.min(env.observer.rate);
    }
    let p_norm = norm2(&gare.p);
    let t_eps = tracking_time_bound(w2, rho2, rho4, p_norm, epsilon);
    Ok(TrackingTimeBound { varpi2: w2, rho2, rho4, p_norm, t_eps })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit() -> ScalarParams {
        ScalarParams {
            a0: 0.0,
            c0: 1.0,
            a: 0.0,
            b: 1.0,
            c: 1.0,
            k: 1.0,
            k1: -1.0,
            k2: 1.0,
            h: 1.0,
            sigma: 1.0,
            upsilon: 1.0,
        }
    }

    fn series(times: Vec<f64>, mse: Vec<Vec<f64>>) -> MseSeries {
        let se = mse.iter().map(|m| vec![0.0; m.len()]).collect();
        MseSeries { times, mse, se, trials: 2, divergent: 0 }
    }

    #[test]
    fn mean_closed_form_examples() {
        let p = unit();
        for t in [0.0, 0.5, 3.0] {
            assert!((scalar_mean_closed_form(&p, 1.0, t).unwrap() - 1.0).abs() < 1e-15);
        }
        let q = ScalarParams { sigma: 0.0, a0: 0.3, ..p };
        assert!((scalar_mean_closed_form(&q, 2.0, 1.5).unwrap() - 2.0 * (-0.7f64 * 1.5).exp()).abs() < 1e-14);
        let r = ScalarParams { a0: 0.2, k: 2.0, sigma: 0.4, upsilon: 0.7, ..p };
        assert_eq!(scalar_mean_closed_form(&r, 0.8, 0.0).unwrap(), 0.8);
        assert!(scalar_mean_closed_form(&ScalarParams { a0: 1.0, ..p }, 1.0, 1.0).is_err());
    }

    #[test]
    fn msq_exponent_examples() {
        let p = ScalarParams { a0: 1.0, ..unit() };
        assert_eq!(scalar_msq_exponent(&p), 1.0);
        assert!(scalar_msq_exponent(&ScalarParams { sigma: 0.0, k: 2.0, ..p }) < 0.0);
        for (s2, ok) in [(0.36, true), (0.49, true), (0.51, false), (0.64, false)] {
            let (g, e) = best_scalar_gain(1.0, 1.0, f64::sqrt(s2));
            assert_eq!(e < 0.0, ok);
            let at = scalar_msq_exponent(&ScalarParams { k: g, sigma: f64::sqrt(s2), ..p });
            assert!((at - e).abs() < 1e-12);
            for dg in [-0.1, 0.1] {
                assert!(scalar_msq_exponent(&ScalarParams { k: g + dg, sigma: f64::sqrt(s2), ..p }) > e);
            }
            assert_eq!(crate::synthesis::scalar_star_cooperatability(s2, 1.0), ok);
        }
    }

    #[test]
    fn regression_exact_data() {
        let t: Vec<f64> = (0..50).map(|k| k as f64 * 0.02).collect();
        let v: Vec<f64> = t.iter().map(|t| (2.0 * t).exp()).collect();
        assert!((exponent_regression(&t, &v, 0.0, 1.0).unwrap() - 2.0).abs() < 1e-6);
        let v: Vec<f64> = t.iter().map(|t| 5.0 * (-3.0 * t).exp()).collect();
        assert!((exponent_regression(&t, &v, 0.0, 1.0).unwrap() + 3.0).abs() < 1e-6);
        let mut v = v;
        v[10] = 0.0;
        assert!(matches!(exponent_regression(&t, &v, 0.0, 1.0), Err(AnalysisError::NonPositive { .. })));
    }

    #[test]
    fn plateau_and_tracking_time() {
        let t: Vec<f64> = (0..=200).map(|k| k as f64 * 0.1).collect();
        let c = series(t.clone(), vec![vec![0.7; t.len()]]);
        assert_eq!(plateau_estimate(&c, 0.25), vec![0.7]);
        assert_eq!(tracking_time_estimate(&c, 1.0), 0.0);
        assert_eq!(tracking_time_estimate(&c, 0.5), f64::INFINITY);
        let d = series(t.clone(), vec![t.iter().map(|t| (-t).exp()).collect()]);
        assert!(plateau_estimate(&d, 0.5)[0] <= (-10.0f64).exp() + 1e-15);
        let te = tracking_time_estimate(&d, 1e-2);
        assert!((te - (100f64).ln()).abs() <= 0.1 + 1e-12);
        let z = series(t.clone(), vec![vec![0.0; t.len()]]);
        assert_eq!(tracking_time_estimate(&z, 1e-9), 0.0);
        assert_eq!(tail_min(&d, 0.5)[0].0, (-20.0f64).exp());
    }

    #[test]
    fn exact_tracking_initialization_stays_at_zero() {
        let p = ScalarParams { a0: 0.4, a: -0.5, sigma: 0.0, upsilon: 0.0, k: 2.0, ..unit() }.with_regulator_k2();
        let sc = scalar_star_scenario(&p, 2, 1.0, 0.0).unwrap();
        let m = monte_carlo_mse(&sc, 4, 1, 1e-3, 2.0, 10).unwrap();
        let worst = m.mse.iter().flatten().fold(0.0f64, |a, &b| a.max(b));
        assert!(worst <= 1e-12, "{worst}");
    }

    #[test]
    fn weak_error_halves_with_dt() {
        // deterministic drift: the Euler error of E δ(T) is first order in dt
        let p = ScalarParams { a0: 0.5, k: 1.5, sigma: 0.0, upsilon: 0.0, ..unit() };
        let sc = scalar_star_scenario(&p, 1, 0.0, 1.0).unwrap();
        let engine = Engine::new(&sc).unwrap();
        let err = |dt: f64| {
            let steps = grid_steps(dt, 2.0).unwrap();
            let s = monte_carlo(&engine, &RngPlan::new(0), 2, dt, steps, steps, 1, |v, o| o[0] = v.delta(1)[0]).unwrap();
            (s.mean[0][1] - scalar_ito_mean(&p, 1.0, 2.0)).abs()
        };
        let (e1, e2) = (err(1e-2), err(5e-3));
        let ratio = e1 / e2;
        assert!((ratio - 2.0).abs() < 0.1, "ratio {ratio}");
    }

    #[test]
    fn standard_error_scales_with_trials() {
        let p = ScalarParams { a0: 0.0, k: 1.0, sigma: 0.5, upsilon: 1.0, ..unit() };
        let sc = scalar_star_scenario(&p, 1, 0.0, 1.0).unwrap();
        let engine = Engine::new(&sc).unwrap();
        let se = |trials| {
            let s = monte_carlo(&engine, &RngPlan::new(5), trials, 1e-2, 100, 100, 1, |v, o| o[0] = v.delta(1)[0]).unwrap();
            s.se[0][1]
        };
        let ratio = se(500) / se(2000);
        assert!((ratio - 2.0).abs() < 0.25, "ratio {ratio}");
    }

    #[test]
    fn monte_carlo_is_deterministic_and_counts_divergence() {
        let p = ScalarParams { a0: 0.0, k: 1.0, sigma: 0.5, upsilon: 1.0, ..unit() };
        let sc = scalar_star_scenario(&p, 1, 0.0, 1.0).unwrap();
        let a = monte_carlo_mse(&sc, 130, 2, 1e-2, 1.0, 5).unwrap();
        let b = monte_carlo_mse(&sc, 130, 2, 1e-2, 1.0, 5).unwrap();
        assert_eq!(a, b);
        assert!(a.mse.iter().flatten().all(|&v| v >= 0.0));
        let bad = scalar_star_scenario(&ScalarParams { a0: 60.0, k: 0.0, ..p }, 1, 1.0, 0.0).unwrap();
        assert!(matches!(monte_carlo_mse(&bad, 3, 0, 1e-2, 5.0, 1), Err(AnalysisError::AllDivergent(3))));
        assert!(matches!(monte_carlo_mse(&sc, 1, 0, 1e-2, 1.0, 1), Err(AnalysisError::TooFewTrials(1))));
    }

    #[test]
    fn label_swap_preserves_statistics() {
        use crate::sim::StreamLabel;
        let p = ScalarParams { a0: 0.0, k: 1.0, sigma: 0.6, upsilon: 0.8, ..unit() };
        let sc = scalar_star_scenario(&p, 2, 0.0, 1.0).unwrap();
        let engine = Engine::new(&sc).unwrap();
        let obs = |v: StateView<'_>, o: &mut [f64]| o[0] = v.delta(1)[0].powi(2);
        let plain = monte_carlo(&engine, &RngPlan::new(3), 3000, 1e-2, 100, 100, 1, obs).unwrap();
        let plan = RngPlan::new(3).swap_labels(StreamLabel { l: 1, i: 1, j: 0 }, StreamLabel { l: 2, i: 2, j: 0 });
        let swapped = monte_carlo(&engine, &plan, 3000, 1e-2, 100, 100, 1, obs).unwrap();
        assert_ne!(plain.mean[0][1], swapped.mean[0][1]);
        let diff = (plain.mean[0][1] - swapped.mean[0][1]).abs();
        let se = plain.se[0][1].hypot(swapped.se[0][1]);
        assert!(diff < 4.0 * se, "diff {diff} se {se}");
    }

    #[test]
    fn csv_header() {
        let m = series(vec![0.0, 1.0], vec![vec![1.0, 2.0], vec![3.0, 4.0]]);
        let mut buf = Vec::new();
        m.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().next().unwrap(), "t,mse_1,se_1,mse_2,se_2");
        assert_eq!(text.lines().nth(2).unwrap(), "1,2,0,4,0");
    }
}
