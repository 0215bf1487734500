//! Lightweight 2.5D navigation simulator: flat ground, boxes and vertical
//! cylinders, an agent with a forward-facing pinhole camera, and pedestrians
//! walking fixed routes.

mod flow;
mod layout;
mod render;
mod world;

use thiserror::Error;

pub use flow::ground_truth_raw_flow;
pub use layout::{
    build_environment, ground_pose, EnvironmentName, EnvironmentSpec, Path, PedestrianRoute,
    RouteDirection, SceneConfig, SceneObject, SemanticClass, Shape, SpeedMode, Zone,
};
pub use render::{
    class_mask, raycast_render, render_scene, CameraConfig, HitRecord, RenderedFrame, SegField,
};
pub use world::{
    classify_failure, world_to_camera, Action, AgentState, EpisodeResult, Failure, Outcome,
    StepOutcome, WorldState, REWARD_FAILURE, REWARD_SUCCESS, REWARD_SURVIVAL,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SceneError {
    #[error("unknown environment `{0}`")]
    UnknownEnvironment(String),
    #[error("unknown speed mode `{0}` (expected low, normal or high)")]
    UnknownSpeedMode(String),
    #[error("invalid speed range [{0}, {1}]")]
    InvalidSpeedMode(f64, f64),
    #[error("fps must lie in [1, 60], got {0}")]
    InvalidFps(f64),
    #[error("step called on a finished episode")]
    StepAfterDone,
}
