pub mod cli;
pub mod config;
pub mod control;
pub mod hitl;
pub mod kinematics;
pub mod robotsim;
mod serde_util;
pub mod service;
pub mod trajectory;
pub mod twinlink;
