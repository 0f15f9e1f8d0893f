//! Terrain-aware quadruped motion planning.
//!
//! Two planning pipelines share a terrain costmap:
//!
//! * a coupled planner that optimizes phase timing, COP motion and footholds
//!   together over an analytical cart-table preview model with CMA-ES;
//! * a decoupled pipeline that searches body actions with ARA*, selects
//!   footholds greedily and solves a quintic-spline CoM QP.

pub mod geom;
pub mod terrain;
pub mod preview;
pub mod attitude;
pub mod cmaes;
pub mod qp;
pub mod body_planner;
pub mod foothold;
pub mod com_spline;
pub mod bench;
pub mod config;
pub mod coupled;
