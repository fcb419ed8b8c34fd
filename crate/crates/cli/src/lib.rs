//! Command-line front end for corpus synthesis, staged training, evaluation,
//! the ablation matrix and self-checks.

pub mod commands;
pub mod config;
pub mod selfcheck;
