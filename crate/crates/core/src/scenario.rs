//! Scenario files (TOML) and the built-in presets.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{build_topology, Topology};
use crate::numerics::{to_rows, try_from_rows, Matrix};
use crate::plant::{check_assumptions, AssumptionReport, EdgeNoise, FollowerModel, LeaderModel, NoiseModel};
use crate::sim::{FollowerInit, InitialState, Scenario};
use crate::synthesis::{
    assemble_gains, solve_regulator, GainOverrides, GainSet, SynthesisConfig, SynthesisError, SynthesisParams,
};

pub type Rows = Vec<Vec<f64>>;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read {path}: {message}")]
    Io { path: String, message: String },
    #[error("parse error: {0}")]
    Parse(String),
    #[error("in section `{section}`: {message}")]
    Section { section: String, message: String },
    #[error("unknown preset `{0}`")]
    UnknownPreset(String),
}

fn section(name: impl Into<String>, message: impl ToString) -> ScenarioError {
    ScenarioError::Section { section: name.into(), message: message.to_string() }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub leader: LeaderSection,
    pub followers: Vec<FollowerSection>,
    pub topology: TopologySection,
    #[serde(default)]
    pub noise: NoiseSection,
    pub synthesis: SynthesisSection,
    pub initial: InitialSection,
    #[serde(default)]
    pub sim: SimSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LeaderSection {
    pub a0: Rows,
    pub c0: Rows,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FollowerSection {
    pub a: Rows,
    pub b: Rows,
    pub c: Rows,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopologySection {
    /// Symmetric 0/1 follower adjacency.
    pub adjacency: Rows,
    pub leader_links: Vec<f64>,
}

/// Noise on the directed link `j → i`; `j = 0` is the leader.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdditiveEdge {
    pub i: usize,
    pub j: usize,
    pub upsilon: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MultiplicativeEdge {
    pub i: usize,
    pub j: usize,
    pub sigma: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSection {
    #[serde(default)]
    pub additive: Vec<AdditiveEdge>,
    #[serde(default)]
    pub multiplicative: Vec<MultiplicativeEdge>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OverrideSection {
    pub follower: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k1: Option<Rows>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub h: Option<Rows>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pi: Option<Rows>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<Rows>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthesisSection {
    pub alpha: f64,
    pub k1: f64,
    pub k2: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub g1: Option<Rows>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub g2: Option<Rows>,
    #[serde(default)]
    pub overrides: Vec<OverrideSection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialFollower {
    pub x: Vec<f64>,
    pub xhat: Vec<f64>,
    pub xhat0: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialSection {
    pub x0: Vec<f64>,
    pub followers: Vec<InitialFollower>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimSection {
    pub dt: f64,
    pub horizon: f64,
    pub trials: usize,
    pub seed: u64,
    pub epsilon: f64,
}

impl Default for SimSection {
    fn default() -> Self {
        Self { dt: 1e-3, horizon: 30.0, trials: 200, seed: 7, epsilon: 1e-2 }
    }
}

/// Validated model objects built from a [`ScenarioFile`].
#[derive(Debug, Clone, PartialEq)]
pub struct Problem {
    pub leader: LeaderModel,
    pub followers: Vec<FollowerModel>,
    pub topology: Topology,
    pub noise: NoiseModel,
    pub params: SynthesisParams,
    pub overrides: GainOverrides,
    pub initial: InitialState,
    pub sim: SimSection,
}

fn matrix(name: &str, rows: &Rows) -> Result<Matrix, ScenarioError> {
    try_from_rows(rows).map_err(|m| section(name, m))
}

impl ScenarioFile {
    pub fn parse(text: &str) -> Result<Self, ScenarioError> {
        toml::from_str(text).map_err(|e| ScenarioError::Parse(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, ScenarioError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ScenarioError::Io { path: path.display().to_string(), message: e.to_string() })?;
        Self::parse(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario file serializes")
    }

    pub fn problem(&self) -> Result<Problem, ScenarioError> {
        let leader = LeaderModel::new(matrix("leader.a0", &self.leader.a0)?, matrix("leader.c0", &self.leader.c0)?)
            .map_err(|e| section("leader", e))?;
        let mut followers = Vec::with_capacity(self.followers.len());
        for (k, f) in self.followers.iter().enumerate() {
            let name = format!("followers[{}]", k + 1);
            let a = matrix(&format!("{name}.a"), &f.a)?;
            let b = matrix(&format!("{name}.b"), &f.b)?;
            let c = matrix(&format!("{name}.c"), &f.c)?;
            let m = FollowerModel::new(a, b, c).map_err(|e| section(&name, e))?;
            if m.p() != leader.p() {
                return Err(section(&name, format!("output dimension {} differs from the leader's {}", m.p(), leader.p())));
            }
            followers.push(m);
        }
        let adjacency = matrix("topology.adjacency", &self.topology.adjacency)?;
        let topology = build_topology(&adjacency, &self.topology.leader_links).map_err(|e| section("topology", e))?;
        if topology.n_followers() != followers.len() {
            return Err(section(
                "topology",
                format!("{} nodes but {} followers", topology.n_followers(), followers.len()),
            ));
        }

        let p = leader.p();
        let mut edges: std::collections::BTreeMap<(usize, usize), EdgeNoise> = Default::default();
        for e in &self.noise.additive {
            edges.entry((e.i, e.j)).or_insert_with(|| EdgeNoise { upsilon: vec![0.0; p], sigma: 0.0 }).upsilon =
                e.upsilon.clone();
        }
        for e in &self.noise.multiplicative {
            edges.entry((e.i, e.j)).or_insert_with(|| EdgeNoise { upsilon: vec![0.0; p], sigma: 0.0 }).sigma = e.sigma;
        }
        let mut noise = NoiseModel::new(p);
        for ((i, j), e) in edges {
            noise.set(&topology, i, j, e).map_err(|e| section("noise", e))?;
        }

        let n = leader.n();
        let nf = followers.len();
        let mut overrides = GainOverrides {
            k1: vec![None; nf],
            h: vec![None; nf],
            regulator: vec![None; nf],
            g1: None,
            g2: None,
        };
        if let Some(g) = &self.synthesis.g1 {
            overrides.g1 = Some(matrix("synthesis.g1", g)?);
        }
        if let Some(g) = &self.synthesis.g2 {
            overrides.g2 = Some(matrix("synthesis.g2", g)?);
        }
        for o in &self.synthesis.overrides {
            let name = format!("synthesis.overrides (follower {})", o.follower);
            if o.follower == 0 || o.follower > nf {
                return Err(section(&name, "no such follower"));
            }
            let idx = o.follower - 1;
            if let Some(k) = &o.k1 {
                overrides.k1[idx] = Some(matrix(&name, k)?);
            }
            if let Some(h) = &o.h {
                overrides.h[idx] = Some(matrix(&name, h)?);
            }
            match (&o.pi, &o.gamma) {
                (Some(pi), Some(g)) => overrides.regulator[idx] = Some((matrix(&name, pi)?, matrix(&name, g)?)),
                (None, None) => {}
                _ => return Err(section(&name, "pi and gamma must be given together")),
            }
        }

        if self.initial.x0.len() != n {
            return Err(section("initial", format!("x0 has length {}, expected {n}", self.initial.x0.len())));
        }
        if self.initial.followers.len() != nf {
            return Err(section("initial", format!("{} follower blocks for {nf} followers", self.initial.followers.len())));
        }
        let mut inits = Vec::with_capacity(nf);
        for (k, (init, f)) in self.initial.followers.iter().zip(&followers).enumerate() {
            if init.x.len() != f.n() || init.xhat.len() != f.n() || init.xhat0.len() != n {
                return Err(section(format!("initial.followers[{}]", k + 1), "state vector has the wrong length"));
            }
            inits.push(FollowerInit { x: init.x.clone(), xhat: init.xhat.clone(), xhat0: init.xhat0.clone() });
        }
        let s = &self.sim;
        if !(s.dt > 0.0 && s.horizon > 0.0 && s.epsilon > 0.0 && s.trials >= 2) {
            return Err(section("sim", "dt, horizon and epsilon must be positive and trials at least 2"));
        }
        Ok(Problem {
            leader,
            followers,
            topology,
            noise,
            params: SynthesisParams { alpha: self.synthesis.alpha, k1: self.synthesis.k1, k2: self.synthesis.k2 },
            overrides,
            initial: InitialState { x0: self.initial.x0.clone(), followers: inits },
            sim: self.sim.clone(),
        })
    }

    /// Copy whose per-follower overrides pin down `gains`, so reloading it
    /// reproduces the same `K1, H, Π, Γ` without redesign.
    pub fn with_gains(&self, gains: &GainSet) -> Self {
        let mut out = self.clone();
        out.synthesis.overrides = gains
            .followers
            .iter()
            .enumerate()
            .map(|(k, g)| OverrideSection {
                follower: k + 1,
                k1: Some(to_rows(&g.k1)),
                h: Some(to_rows(&g.h)),
                pi: Some(to_rows(&g.pi)),
                gamma: Some(to_rows(&g.gamma)),
            })
            .collect();
        out
    }

    /// Copy with every additive intensity removed.
    pub fn without_additive(&self) -> Self {
        let mut out = self.clone();
        out.noise.additive.clear();
        out
    }
}

impl Problem {
    pub fn assumptions(&self) -> Result<AssumptionReport, SynthesisError> {
        Ok(check_assumptions(&self.leader, &self.followers)?)
    }

    /// Solve the regulator equations and assemble the gain set. With
    /// `use_overrides = false` the stabilizer and observer gains are designed.
    pub fn synthesize(&self, cfg: &SynthesisConfig, use_overrides: bool) -> Result<GainSet, SynthesisError> {
        let regs = self
            .followers
            .iter()
            .enumerate()
            .map(|(k, f)| solve_regulator(f, &self.leader, k + 1))
            .collect::<Result<Vec<_>, _>>()?;
        let none = GainOverrides::default();
        let ov = if use_overrides { &self.overrides } else { &none };
        assemble_gains(&self.leader, &self.followers, &self.topology, &self.noise, &regs, self.params, ov, cfg)
    }

    pub fn scenario(&self, gains: GainSet) -> Scenario {
        Scenario {
            leader: self.leader.clone(),
            followers: self.followers.clone(),
            topology: self.topology.clone(),
            noise: self.noise.clone(),
            gains,
            initial: self.initial.clone(),
        }
    }
}

pub const PRESETS: &[&str] = &["example-4.1", "example-4.1-noadditive"];

pub fn preset(name: &str) -> Result<ScenarioFile, ScenarioError> {
    match name {
        "example-4.1" => Ok(aircraft_fleet()),
        "example-4.1-noadditive" => Ok(aircraft_fleet().without_additive()),
        _ => Err(ScenarioError::UnknownPreset(name.to_string())),
    }
}

fn rows<const C: usize>(r: &[[f64; C]]) -> Rows {
    r.iter().map(|row| row.to_vec()).collect()
}

fn column(v: &[f64]) -> Rows {
    v.iter().map(|&x| vec![x]).collect()
}

/// Lateral dynamics of a three-aircraft fleet tracking a leader's sideslip
/// angle. Observer gains are stored for the `A − H C` convention, i.e. with
/// the opposite sign of the `A + H C` form. The regulator pair is left to
/// the solver because the four-decimal reference values miss the equations.
fn aircraft_fleet() -> ScenarioFile {
    let a1 = rows(&[
        [-0.1245, 0.0414, 0.0350, -0.9962],
        [0.0, 0.0, 1.0, 0.0357],
        [-15.2138, 0.0032, -2.0587, 0.6458],
        [1.6447, -0.0022, -0.0447, -0.1416],
    ]);
    let a2 = rows(&[
        [-0.1703, 0.0440, 0.0490, 0.9980],
        [0.0, 0.0, 1.0, 0.0491],
        [-15.5763, 0.0, -2.3142, 0.5305],
        [3.0081, 0.0, -0.0160, -0.1287],
    ]);
    let b1 = rows(&[[-0.0049, 0.0237], [0.0, 0.0], [-4.0379, 0.9613], [-0.0568, -1.2168]]);
    let b2 = rows(&[
        [-0.0069, -0.0153, 0.0380],
        [0.0, 0.0, 0.0],
        [23.3987, 21.4133, 3.2993],
        [-0.1644, 0.3313, -1.9836],
    ]);
    let c = rows(&[[1.0, 0.0, 0.0, 0.0]]);
    let k11 = rows(&[[-10.0, 8.0, 6.0, 12.0], [-10.0, -3.0, -6.0, -3.0]]);
    let k12 = rows(&[[-12.0, -10.0, -2.0, -3.0], [1.0, -2.0, -1.0, -1.0], [5.0, -1.0, 0.0, 1.0]]);
    let h1 = column(&[2.0, 1.0, -2.0, -1.0]);
    let h2 = column(&[5.0, 3.0, 4.0, 3.0]);
    let edges = [(1, 0), (2, 0), (2, 3), (3, 2)];
    ScenarioFile {
        leader: LeaderSection {
            a0: rows(&[[-0.1170, 0.0386, -0.0003], [0.0, 0.0, 1.0], [-5.200, 0.0, -1.0]]),
            c0: rows(&[[1.0, 0.0, 0.0]]),
        },
        followers: vec![
            FollowerSection { a: a1, b: b1, c: c.clone() },
            FollowerSection { a: a2.clone(), b: b2.clone(), c: c.clone() },
            FollowerSection { a: a2, b: b2, c },
        ],
        topology: TopologySection {
            adjacency: rows(&[[0.0, 0.0, 0.0], [0.0, 0.0, 1.0], [0.0, 1.0, 0.0]]),
            leader_links: vec![1.0, 1.0, 0.0],
        },
        noise: NoiseSection {
            additive: edges.iter().map(|&(i, j)| AdditiveEdge { i, j, upsilon: vec![0.9] }).collect(),
            multiplicative: edges.iter().map(|&(i, j)| MultiplicativeEdge { i, j, sigma: 1.2 }).collect(),
        },
        synthesis: SynthesisSection {
            alpha: 0.65,
            k1: 0.38,
            k2: 0.3,
            g1: None,
            g2: None,
            overrides: vec![
                OverrideSection { follower: 1, k1: Some(k11), h: Some(h1), ..Default::default() },
                OverrideSection { follower: 2, k1: Some(k12.clone()), h: Some(h2.clone()), ..Default::default() },
                OverrideSection { follower: 3, k1: Some(k12), h: Some(h2), ..Default::default() },
            ],
        },
        initial: InitialSection {
            x0: vec![0.2, 0.1, 0.2],
            followers: vec![
                InitialFollower {
                    x: vec![-0.5, 0.1, 0.2, 0.1],
                    xhat: vec![0.1, 0.3, 0.1, 0.2],
                    xhat0: vec![-0.5, 0.1, -0.1],
                },
                InitialFollower {
                    x: vec![-0.1, 0.1, 0.2, 0.1],
                    xhat: vec![-0.2, 0.2, 0.1, 0.3],
                    xhat0: vec![-0.2, 0.1, 0.2],
                },
                InitialFollower {
                    x: vec![0.4, -0.2, 0.1, 0.3],
                    xhat: vec![0.1, 0.2, 0.1, 0.1],
                    xhat0: vec![0.3, 0.2, 0.2],
                },
            ],
        },
        sim: SimSection::default(),
    }
}
