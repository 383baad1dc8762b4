//! Std-penalized distributional reinforcement learning.
//!
//! The crate has three layers:
//!
//! * [`tabular`]: exact dynamic programming on finite MDPs, return-distribution
//!   enumeration and the chi-square worst-case value reduction, together with an
//!   independent numerical optimizer that certifies it.
//! * [`autodiff`], [`nn`], [`quantile`]: a small reverse-mode differentiation
//!   engine, MLPs with Adam, and quantile-atom return distributions with the
//!   mean minus alpha-std functional.
//! * [`envs`], [`qrdqn`], [`tqc`], [`harness`]: perturbable control tasks, the
//!   two penalized agents, and the sweep/ablation/reporting harness.

pub mod autodiff;
pub mod envs;
pub mod error;
pub mod harness;
pub mod nn;
pub mod qrdqn;
pub mod quantile;
pub mod replay;
pub mod rng;
pub mod tabular;
pub mod tqc;

pub use error::{Error, Result};
