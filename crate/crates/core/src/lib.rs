//! Continual learning of a grounded instruction generator from follower
//! behavior in a collaborative hex-grid card game.

pub mod bandit;
pub mod diffkit;
pub mod follower;
pub mod genmodel;
pub mod hexworld;
pub mod metrics;
pub mod orchestrator;
pub mod planner;
pub mod seed;
pub mod synthlang;
