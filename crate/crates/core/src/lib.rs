//! Gain synthesis and stochastic closed-loop simulation for leader-following
//! output tracking of heterogeneous linear agents over noisy links.

pub mod analysis;
pub mod cli;
pub mod graph;
pub mod numerics;
pub mod plant;
pub mod scenario;
pub mod sim;
pub mod synthesis;
