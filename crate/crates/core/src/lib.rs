//! Episodic Bayesian distributionally robust optimal control.
//!
//! The crate learns a Dirichlet posterior over a finite-support disturbance,
//! turns it into a posterior-credible box ambiguity set, and solves the
//! resulting robust Bellman equation with a Bellman-operator cutting-plane
//! method that reuses validated cuts across episodes.
//!
//! Module map:
//! - [`dist`]: finite-support distributions, Dirichlet learning, credible boxes.
//! - [`risk`]: worst-case expectation over a box and its mean-CVaR form.
//! - [`lp`]: dense simplex solver with dual multipliers.
//! - [`model`]: scenario models with affine dynamics and the inventory instance.
//! - [`value`]: cut pools, grid values, Bellman operators, rollouts.
//! - [`bocp`]: the cutting-plane solver and the warm-start filter.
//! - [`episodic`]: the episodic loop, baselines and experiment drivers.
//! - [`cli`], [`config`], [`output`], [`rng`], [`par`]: command line and run plumbing.

pub mod bocp;
pub mod cli;
pub mod config;
pub mod dist;
pub mod episodic;
pub mod error;
pub mod lp;
pub mod model;
pub mod output;
pub mod par;
pub mod risk;
pub mod rng;
pub mod value;

pub use error::{Error, Result};
