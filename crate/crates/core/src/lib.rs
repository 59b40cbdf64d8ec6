//! Continuous-time finite-state mean field games with evolutionary policy revision.
//!
//! A game has classes of players with Markov state dynamics driven by actions. Each
//! player holds a deterministic policy and revises it at Poisson times according to a
//! revision protocol. The crate computes stationary distributions and long-run payoffs,
//! integrates the resulting mean dynamic, simulates finite populations, and verifies
//! or solves for mixed stationary Nash equilibria.

pub mod dist;
pub mod dynamics;
pub mod equilibria;
pub mod error;
pub mod game;
pub mod io;
pub mod markov;
pub mod par;
pub mod payoffs;
pub mod revision;
pub mod reward;
pub mod scenarios;
pub mod sim;

pub use error::{Error, Result};
