//! Distributionally robust risk-constrained iterative MPC for motion
//! planning around a randomly displaced polytopic obstacle.
//!
//! The crate is organized around one conic-programming engine ([`conic`])
//! that every optimization-backed piece compiles to:
//!
//! * [`geometry`] — polytopes, obstacle occupancy, collision margins
//! * [`risk`] — CVaR, Wasserstein distance, worst-case risk bounds and
//!   the safety-set membership oracles
//! * [`clustering`] — scenario reduction with radius inflation
//! * [`safeset`] — sampled safe set, cost-to-go bookkeeping and pruning
//! * [`mpc`] — the finite-horizon problem and the receding-horizon loop
//! * [`experiment`] — the iterative learning driver
//! * [`cli`] — configuration, orchestration and artifact emission

pub mod cli;
pub mod clustering;
pub mod conic;
pub mod experiment;
pub mod geometry;
pub mod mpc;
pub mod risk;
pub mod safeset;
