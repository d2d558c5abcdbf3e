//! Euler–Maruyama simulation of the closed loop: leader, followers driven by
//! certainty-equivalence control, self observers, and the distributed leader
//! observers whose links carry additive and multiplicative noise.

use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

use crate::graph::Topology;
use crate::numerics::Matrix;
use crate::plant::{FollowerModel, LeaderModel, NoiseModel};
use crate::synthesis::GainSet;

/// States whose Euclidean norm exceeds this are treated as divergent.
pub const DIVERGENCE_THRESHOLD: f64 = 1e12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("scenario dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid integration grid: dt = {dt}, horizon = {horizon}")]
    Grid { dt: f64, horizon: f64 },
    #[error("trial {trial} diverged at step {step} (t = {time})")]
    Divergence { trial: u64, step: usize, time: f64 },
    #[error("label out of range: trial {trial}, follower {i}, neighbor {j}")]
    Label { trial: u64, i: usize, j: usize },
}

pub type Result<T> = std::result::Result<T, SimError>;

#[derive(Debug, Clone, PartialEq)]
pub struct FollowerInit {
    pub x: Vec<f64>,
    pub xhat: Vec<f64>,
    pub xhat0: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InitialState {
    pub x0: Vec<f64>,
    pub followers: Vec<FollowerInit>,
}

/// Everything needed to run the closed loop.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub leader: LeaderModel,
    pub followers: Vec<FollowerModel>,
    pub topology: Topology,
    pub noise: NoiseModel,
    pub gains: GainSet,
    pub initial: InitialState,
}

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(SimError::Dimension(msg()))
    }
}

impl Scenario {
    pub fn validate(&self) -> Result<()> {
        let (n, p) = (self.leader.n(), self.leader.p());
        let nf = self.followers.len();
        check(self.topology.n_followers() == nf, || {
            format!("topology has {} followers, models {}", self.topology.n_followers(), nf)
        })?;
        check(self.gains.followers.len() == nf, || format!("{} gain blocks for {nf} followers", self.gains.followers.len()))?;
        check(self.initial.followers.len() == nf, || {
            format!("{} initial blocks for {nf} followers", self.initial.followers.len())
        })?;
        check(self.noise.p() == p, || format!("noise intensities have length {}, outputs {p}", self.noise.p()))?;
        check(self.gains.g1.shape() == (n, p) && self.gains.g2.shape() == (n, p), || {
            format!("observer gains must be {n}x{p}")
        })?;
        check(self.initial.x0.len() == n, || format!("x0 has length {}, expected {n}", self.initial.x0.len()))?;
        for (k, ((f, g), init)) in self.followers.iter().zip(&self.gains.followers).zip(&self.initial.followers).enumerate() {
            let i = k + 1;
            let (ni, mi) = (f.n(), f.m());
            check(f.p() == p, || format!("follower {i} output dimension {} differs from {p}", f.p()))?;
            check(g.k1.shape() == (mi, ni), || format!("K1 of follower {i} must be {mi}x{ni}"))?;
            check(g.k2.shape() == (mi, n), || format!("K2 of follower {i} must be {mi}x{n}"))?;
            check(g.h.shape() == (ni, p), || format!("H of follower {i} must be {ni}x{p}"))?;
            check(init.x.len() == ni && init.xhat.len() == ni && init.xhat0.len() == n, || {
                format!("initial state of follower {i} has wrong length")
            })?;
        }
        let all_init = self
            .initial
            .x0
            .iter()
            .chain(self.initial.followers.iter().flat_map(|f| f.x.iter().chain(&f.xhat).chain(&f.xhat0)));
        check(all_init.clone().all(|v| v.is_finite()), || "non-finite initial state".to_string())?;
        Ok(())
    }
}

/// Row-major dense block used in the inner loop.
#[derive(Debug, Clone)]
struct Block {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Block {
    fn from(m: &Matrix) -> Self {
        let (rows, cols) = m.shape();
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(m[(i, j)]);
            }
        }
        Self { rows, cols, data }
    }

    /// `out += scale * self * x`
    #[inline]
    fn mul_add(&self, x: &[f64], scale: f64, out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.cols);
        for (r, o) in out.iter_mut().enumerate().take(self.rows) {
            let row = &self.data[r * self.cols..(r + 1) * self.cols];
            let mut acc = 0.0;
            for (a, b) in row.iter().zip(x) {
                acc += a * b;
            }
            *o += scale * acc;
        }
    }
}

#[derive(Debug, Clone)]
struct EdgeKernel {
    j: usize,
    upsilon: Vec<f64>,
    sigma: f64,
    additive: bool,
}

#[derive(Debug, Clone)]
struct FollowerKernel {
    n: usize,
    off_x: usize,
    off_xhat: usize,
    off_xhat0: usize,
    a: Block,
    bk1: Block,
    bk2: Block,
    a_hat: Block,
    hc: Block,
    c: Block,
    edges: Vec<EdgeKernel>,
    edge_base: usize,
}

/// Brownian substream label: noise type `l ∈ {1, 2}` on edge `i <- j`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct StreamLabel {
    pub l: u8,
    pub i: usize,
    pub j: usize,
}

/// Deterministic assignment of independent ChaCha8 streams to
/// `(trial, l, i, j)` labels under one master seed.
#[derive(Debug, Clone, PartialEq)]
pub struct RngPlan {
    pub master_seed: u64,
    swaps: Vec<(StreamLabel, StreamLabel)>,
}

impl RngPlan {
    pub fn new(master_seed: u64) -> Self {
        Self { master_seed, swaps: Vec::new() }
    }

    /// Exchange the substreams of two labels (for independence checks).
    pub fn swap_labels(mut self, a: StreamLabel, b: StreamLabel) -> Self {
        self.swaps.push((a, b));
        self
    }

    fn resolve(&self, mut label: StreamLabel) -> StreamLabel {
        for &(a, b) in &self.swaps {
            if label == a {
                label = b;
            } else if label == b {
                label = a;
            }
        }
        label
    }

    /// Stream id `trial << 32 | (l - 1) << 31 | i << 16 | j`.
    pub fn stream_id(&self, trial: u64, label: StreamLabel) -> Result<u64> {
        let label = self.resolve(label);
        if trial >= 1 << 32 || label.i >= 1 << 15 || label.j >= 1 << 15 || !(1..=2).contains(&label.l) {
            return Err(SimError::Label { trial, i: label.i, j: label.j });
        }
        Ok((trial << 32) | (u64::from(label.l - 1) << 31) | ((label.i as u64) << 16) | label.j as u64)
    }

    pub fn stream(&self, trial: u64, label: StreamLabel) -> Result<ChaCha8Rng> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.master_seed);
        rng.set_stream(self.stream_id(trial, label)?);
        Ok(rng)
    }
}

/// Brownian increments for one step, aligned with [`Engine::edges`]:
/// `(Δw1, Δw2)` per directed edge.
#[derive(Debug, Clone, PartialEq)]
pub struct Increments {
    pub dw: Vec<(f64, f64)>,
}

struct Scratch {
    y0: Vec<f64>,
    v1: Vec<f64>,
    v2: Vec<f64>,
    r: Vec<f64>,
}

impl Scratch {
    fn new(p: usize) -> Self {
        Self { y0: vec![0.0; p], v1: vec![0.0; p], v2: vec![0.0; p], r: vec![0.0; p] }
    }
}

/// Compiled closed loop with a flat state layout
/// `[x0 | x_1, x̂_1, x̂_10 | x_2, ... ]`.
#[derive(Debug, Clone)]
pub struct Engine {
    n: usize,
    p: usize,
    a0: Block,
    c0: Block,
    g1: Block,
    g2: Block,
    followers: Vec<FollowerKernel>,
    dim: usize,
    n_edges: usize,
    initial: Vec<f64>,
}

/// Read-only view of one closed-loop state.
#[derive(Clone, Copy)]
pub struct StateView<'a> {
    engine: &'a Engine,
    s: &'a [f64],
}

impl<'a> StateView<'a> {
    pub fn x0(&self) -> &'a [f64] {
        &self.s[..self.engine.n]
    }

    pub fn x(&self, i: usize) -> &'a [f64] {
        let f = &self.engine.followers[i - 1];
        &self.s[f.off_x..f.off_x + f.n]
    }

    pub fn xhat(&self, i: usize) -> &'a [f64] {
        let f = &self.engine.followers[i - 1];
        &self.s[f.off_xhat..f.off_xhat + f.n]
    }

    pub fn xhat0(&self, i: usize) -> &'a [f64] {
        let f = &self.engine.followers[i - 1];
        &self.s[f.off_xhat0..f.off_xhat0 + self.engine.n]
    }

    pub fn y0(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.engine.p];
        self.engine.c0.mul_add(self.x0(), 1.0, &mut out);
        out
    }

    pub fn y(&self, i: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.engine.p];
        self.engine.followers[i - 1].c.mul_add(self.x(i), 1.0, &mut out);
        out
    }

    /// `‖y_i − y_0‖²`
    pub fn tracking_error_sq(&self, i: usize) -> f64 {
        let y0 = self.y0();
        self.y(i).iter().zip(&y0).map(|(a, b)| (a - b) * (a - b)).sum()
    }

    /// `ê_i = x_i − x̂_i`
    pub fn ehat(&self, i: usize) -> Vec<f64> {
        self.x(i).iter().zip(self.xhat(i)).map(|(a, b)| a - b).collect()
    }

    /// `δ_i = x̂_i0 − x_0`
    pub fn delta(&self, i: usize) -> Vec<f64> {
        self.xhat0(i).iter().zip(self.x0()).map(|(a, b)| a - b).collect()
    }

    pub fn raw(&self) -> &'a [f64] {
        self.s
    }
}

impl Engine {
    pub fn new(sc: &Scenario) -> Result<Self> {
        sc.validate()?;
        let (n, p) = (sc.leader.n(), sc.leader.p());
        let mut off = n;
        let mut followers = Vec::with_capacity(sc.followers.len());
        let mut initial = sc.initial.x0.clone();
        let mut edge_base = 0;
        for (k, (f, g)) in sc.followers.iter().zip(&sc.gains.followers).enumerate() {
            let i = k + 1;
            let ni = f.n();
            let bk1 = &f.b * &g.k1;
            let hc = &g.h * &f.c;
            let edges: Vec<EdgeKernel> = sc
                .topology
                .neighbors(i)
                .into_iter()
                .map(|j| {
                    let upsilon = sc.noise.upsilon(i, j);
                    let additive = upsilon.iter().any(|&v| v != 0.0);
                    EdgeKernel { j, upsilon, sigma: sc.noise.sigma(i, j), additive }
                })
                .collect();
            let n_e = edges.len();
            followers.push(FollowerKernel {
                n: ni,
                off_x: off,
                off_xhat: off + ni,
                off_xhat0: off + 2 * ni,
                a: Block::from(&f.a),
                a_hat: Block::from(&(&f.a + &bk1 - &hc)),
                bk1: Block::from(&bk1),
                bk2: Block::from(&(&f.b * &g.k2)),
                hc: Block::from(&hc),
                c: Block::from(&f.c),
                edges,
                edge_base,
            });
            edge_base += n_e;
            off += 2 * ni + n;
            let init = &sc.initial.followers[k];
            initial.extend_from_slice(&init.x);
            initial.extend_from_slice(&init.xhat);
            initial.extend_from_slice(&init.xhat0);
        }
        Ok(Self {
            n,
            p,
            a0: Block::from(&sc.leader.a0),
            c0: Block::from(&sc.leader.c0),
            g1: Block::from(&sc.gains.g1),
            g2: Block::from(&sc.gains.g2),
            followers,
            dim: off,
            n_edges: edge_base,
            initial,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_followers(&self) -> usize {
        self.followers.len()
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn initial_state(&self) -> Vec<f64> {
        self.initial.clone()
    }

    pub fn view<'a>(&'a self, s: &'a [f64]) -> StateView<'a> {
        StateView { engine: self, s }
    }

    /// Directed edges `(i, j)` in increment order.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        self.followers
            .iter()
            .enumerate()
            .flat_map(|(k, f)| f.edges.iter().map(move |e| (k + 1, e.j)))
            .collect()
    }

    /// One Euler–Maruyama step from `s` into `out`.
    pub fn step(&self, s: &[f64], dt: f64, inc: &Increments, out: &mut [f64]) {
        self.step_raw(s, dt, &inc.dw, out, &mut Scratch::new(self.p));
    }

    fn step_raw(&self, s: &[f64], dt: f64, dw: &[(f64, f64)], out: &mut [f64], scratch: &mut Scratch) {
        let (n, p) = (self.n, self.p);
        out.copy_from_slice(s);
        let x0 = &s[..n];
        self.a0.mul_add(x0, dt, &mut out[..n]);
        let Scratch { y0, v1, v2, r } = scratch;
        y0.iter_mut().for_each(|v| *v = 0.0);
        self.c0.mul_add(x0, 1.0, y0);
        for f in &self.followers {
            let x = &s[f.off_x..f.off_x + f.n];
            let xh = &s[f.off_xhat..f.off_xhat + f.n];
            let xh0 = &s[f.off_xhat0..f.off_xhat0 + n];
            {
                let ox = &mut out[f.off_x..f.off_x + f.n];
                f.a.mul_add(x, dt, ox);
                f.bk1.mul_add(xh, dt, ox);
                f.bk2.mul_add(xh0, dt, ox);
            }
            {
                let oh = &mut out[f.off_xhat..f.off_xhat + f.n];
                f.a_hat.mul_add(xh, dt, oh);
                f.bk2.mul_add(xh0, dt, oh);
                f.hc.mul_add(x, dt, oh);
            }
            v1.iter_mut().for_each(|v| *v = 0.0);
            v2.iter_mut().for_each(|v| *v = 0.0);
            for (e_idx, e) in f.edges.iter().enumerate() {
                let (dw1, dw2) = dw[f.edge_base + e_idx];
                // r = C0 (x̂_j0 − x̂_i0), or y0 − C0 x̂_i0 on the leader link
                if e.j == 0 {
                    r.copy_from_slice(y0);
                } else {
                    let g = &self.followers[e.j - 1];
                    r.iter_mut().for_each(|v| *v = 0.0);
                    self.c0.mul_add(&s[g.off_xhat0..g.off_xhat0 + n], 1.0, r);
                }
                self.c0.mul_add(xh0, -1.0, r);
                let target = if e.j == 0 { &mut *v2 } else { &mut *v1 };
                let w = dt + e.sigma * dw2;
                for q in 0..p {
                    target[q] += r[q] * w + e.upsilon[q] * dw1;
                }
            }
            let oh0 = &mut out[f.off_xhat0..f.off_xhat0 + n];
            self.a0.mul_add(xh0, dt, oh0);
            self.g1.mul_add(v1, 1.0, oh0);
            self.g2.mul_add(v2, 1.0, oh0);
        }
    }

    /// Run one trial of `steps` steps, calling `observe(k, state)` at
    /// `k = 0, stride, 2 stride, ...` (and always at the final step when it
    /// falls on the stride).
    pub fn run<F>(&self, plan: &RngPlan, trial: u64, dt: f64, steps: usize, stride: usize, mut observe: F) -> Result<()>
    where
        F: FnMut(usize, StateView<'_>),
    {
        let mut streams: Vec<(Option<ChaCha8Rng>, Option<ChaCha8Rng>)> = Vec::with_capacity(self.n_edges);
        for (k, f) in self.followers.iter().enumerate() {
            for e in &f.edges {
                let s1 = if e.additive {
                    Some(plan.stream(trial, StreamLabel { l: 1, i: k + 1, j: e.j })?)
                } else {
                    None
                };
                let s2 = if e.sigma != 0.0 {
                    Some(plan.stream(trial, StreamLabel { l: 2, i: k + 1, j: e.j })?)
                } else {
                    None
                };
                streams.push((s1, s2));
            }
        }
        let sq = dt.sqrt();
        let mut cur = self.initial.clone();
        let mut next = vec![0.0; self.dim];
        let mut dw = vec![(0.0, 0.0); self.n_edges];
        let mut scratch = Scratch::new(self.p);
        let stride = stride.max(1);
        observe(0, self.view(&cur));
        for k in 1..=steps {
            for (slot, (s1, s2)) in dw.iter_mut().zip(streams.iter_mut()) {
                let a: f64 = match s1 {
                    Some(r) => sq * Distribution::<f64>::sample(&StandardNormal, r),
                    None => 0.0,
                };
                let b: f64 = match s2 {
                    Some(r) => sq * Distribution::<f64>::sample(&StandardNormal, r),
                    None => 0.0,
                };
                *slot = (a, b);
            }
            self.step_raw(&cur, dt, &dw, &mut next, &mut scratch);
            std::mem::swap(&mut cur, &mut next);
            let norm_sq: f64 = cur.iter().map(|v| v * v).sum();
            if !(norm_sq <= DIVERGENCE_THRESHOLD * DIVERGENCE_THRESHOLD) {
                return Err(SimError::Divergence { trial, step: k, time: k as f64 * dt });
            }
            if k % stride == 0 {
                observe(k, self.view(&cur));
            }
        }
        Ok(())
    }
}

/// Number of steps for a uniform grid, validating `0 < dt ≤ horizon`.
pub fn grid_steps(dt: f64, horizon: f64) -> Result<usize> {
    if !(dt > 0.0 && dt.is_finite() && horizon.is_finite() && dt <= horizon) {
        return Err(SimError::Grid { dt, horizon });
    }
    Ok((horizon / dt).round() as usize)
}

/// Raw closed-loop states sampled on a uniform grid.
#[derive(Debug, Clone)]
pub struct TrajectoryRecord {
    engine: Engine,
    pub times: Vec<f64>,
    states: Vec<f64>,
}

impl PartialEq for TrajectoryRecord {
    fn eq(&self, other: &Self) -> bool {
        self.times == other.times && self.states == other.states
    }
}

impl TrajectoryRecord {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn at(&self, k: usize) -> StateView<'_> {
        let d = self.engine.dim;
        self.engine.view(&self.states[k * d..(k + 1) * d])
    }

    pub fn n_followers(&self) -> usize {
        self.engine.n_followers()
    }

    /// CSV with columns `t, y0_1..y0_p`, then per follower `y{i}_1..y{i}_p, err{i}_sq`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let p = self.engine.p;
        let nf = self.engine.n_followers();
        let mut header = vec!["t".to_string()];
        header.extend((1..=p).map(|q| format!("y0_{q}")));
        for i in 1..=nf {
            header.extend((1..=p).map(|q| format!("y{i}_{q}")));
            header.push(format!("err{i}_sq"));
        }
        writeln!(w, "{}", header.join(","))?;
        for (k, t) in self.times.iter().enumerate() {
            let v = self.at(k);
            let mut row = vec![t.to_string()];
            row.extend(v.y0().iter().map(f64::to_string));
            for i in 1..=nf {
                row.extend(v.y(i).iter().map(f64::to_string));
                row.push(v.tracking_error_sq(i).to_string());
            }
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }
}

pub fn simulate(sc: &Scenario, seed: u64, dt: f64, horizon: f64) -> Result<TrajectoryRecord> {
    simulate_with(sc, &RngPlan::new(seed), 0, dt, horizon, 1)
}

/// Single trajectory recorded every `stride` steps.
pub fn simulate_with(
    sc: &Scenario,
    plan: &RngPlan,
    trial: u64,
    dt: f64,
    horizon: f64,
    stride: usize,
) -> Result<TrajectoryRecord> {
    let engine = Engine::new(sc)?;
    let steps = grid_steps(dt, horizon)?;
    let mut times = Vec::new();
    let mut states = Vec::new();
    engine.run(plan, trial, dt, steps, stride, |k, v| {
        times.push(k as f64 * dt);
        states.extend_from_slice(v.raw());
    })?;
    Ok(TrajectoryRecord { engine, times, states })
}
