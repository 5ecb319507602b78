//! Occupancy-submap SLAM back-end.
//!
//! The crate builds multi-resolution log-odds occupancy submaps from LiDAR
//! rays, evaluates a correspondence-free occupancy-field residual with
//! analytic Jacobians, and fuses odometry with frame-to-map and map-to-map
//! LiDAR factors in an on-manifold damped Gauss-Newton optimizer. A synthetic
//! simulation harness (analytic scenes, drifting odometry, ATE scoring) and a
//! pipeline driver tie the pieces together end to end.

pub mod geometry;
pub mod graph;
pub mod map;
pub mod pipeline;
pub mod residual;
pub mod sim;
pub mod submap;

pub use geometry::{interpolate_pose, Pose, PosePerturbation, Rotation};
