//! Agent kinematics, pedestrian motion, reward and episode termination.

use std::sync::Arc;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::layout::{ground_pose, EnvironmentSpec, SemanticClass, Shape};
use super::SceneError;
use crate::geometry::RigidTransform;

pub const REWARD_SUCCESS: f64 = 5.0;
pub const REWARD_FAILURE: f64 = -5.0;
pub const REWARD_SURVIVAL: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    NoOp,
    TurnLeft,
    TurnRight,
}

impl Action {
    pub const ALL: [Action; 3] = [Action::NoOp, Action::TurnLeft, Action::TurnRight];

    pub fn from_index(i: usize) -> Option<Action> {
        Self::ALL.get(i).copied()
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Success,
    Collision,
    Oob,
    Timeout,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpisodeResult {
    pub outcome: Outcome,
    pub steps: usize,
    #[serde(rename = "return")]
    pub episode_return: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Failure {
    Collision,
    Oob,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AgentState {
    pub position: [f64; 2],
    pub heading: f64,
    pub angular_velocity: f64,
    pub forward_speed: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    pub reward: f64,
    pub done: bool,
    pub result: Option<EpisodeResult>,
}

/// Mutable simulation state of one episode.
#[derive(Debug, Clone)]
pub struct WorldState {
    spec: Arc<EnvironmentSpec>,
    pub agent: AgentState,
    /// Current world poses of every scene object (indexed like `spec.objects`).
    poses: Vec<RigidTransform>,
    velocities: Vec<Vector3<f64>>,
    step: usize,
    done: bool,
    episode_return: f64,
}

impl WorldState {
    pub fn new(spec: Arc<EnvironmentSpec>) -> Self {
        let path = spec.active();
        let agent = AgentState {
            position: path.start(),
            heading: path.start_heading,
            angular_velocity: 0.0,
            forward_speed: spec.config.forward_speed,
        };
        let poses = spec.objects.iter().map(|o| o.pose).collect();
        let velocities = spec.objects.iter().map(|o| o.velocity).collect();
        let mut state = Self {
            spec,
            agent,
            poses,
            velocities,
            step: 0,
            done: false,
            episode_return: 0.0,
        };
        state.place_pedestrians();
        state
    }

    pub fn spec(&self) -> &EnvironmentSpec {
        &self.spec
    }

    pub fn spec_arc(&self) -> &Arc<EnvironmentSpec> {
        &self.spec
    }

    pub fn step_index(&self) -> usize {
        self.step
    }

    pub fn time(&self) -> f64 {
        self.step as f64 * self.spec.dt()
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    pub fn object_poses(&self) -> &[RigidTransform] {
        &self.poses
    }

    pub fn object_velocities(&self) -> &[Vector3<f64>] {
        &self.velocities
    }

    /// Override an object's pose (for constructed test scenes).
    pub fn set_object_pose(&mut self, index: usize, pose: RigidTransform) {
        self.poses[index] = pose;
    }

    fn place_pedestrians(&mut self) {
        let t = self.time();
        for route in &self.spec.pedestrian_routes {
            let (p, v) = route.state_at(t);
            let yaw = if v == [0.0, 0.0] { 0.0 } else { v[1].atan2(v[0]) };
            self.poses[route.object] = ground_pose(p[0], p[1], yaw);
            self.velocities[route.object] = Vector3::new(v[0], v[1], 0.0);
        }
    }

    /// Advance agent kinematics and pedestrians by one frame interval.
    pub fn step(&mut self, action: Action) -> Result<StepOutcome, SceneError> {
        if self.done {
            return Err(SceneError::StepAfterDone);
        }
        let dt = self.spec.dt();
        let cfg = &self.spec.config;
        let max_w = cfg.max_angular_velocity_deg.to_radians();
        let a = &mut self.agent;
        match action {
            Action::TurnLeft => a.angular_velocity += self.spec.angular_acceleration * dt,
            Action::TurnRight => a.angular_velocity -= self.spec.angular_acceleration * dt,
            Action::NoOp => a.angular_velocity *= cfg.angular_decay,
        }
        a.angular_velocity = a.angular_velocity.clamp(-max_w, max_w);
        a.heading += a.angular_velocity * dt;
        a.position[0] += a.forward_speed * dt * a.heading.cos();
        a.position[1] += a.forward_speed * dt * a.heading.sin();
        self.step += 1;
        self.place_pedestrians();

        let (reward, outcome) = match classify_failure(self) {
            Failure::Collision => (REWARD_FAILURE, Some(Outcome::Collision)),
            Failure::Oob => (REWARD_FAILURE, Some(Outcome::Oob)),
            Failure::None => {
                if self
                    .spec
                    .active()
                    .end_zone
                    .overlaps_disc(self.agent.position, self.spec.config.agent_radius)
                {
                    (REWARD_SUCCESS, Some(Outcome::Success))
                } else if self.step >= self.spec.time_limit {
                    (REWARD_FAILURE, Some(Outcome::Timeout))
                } else {
                    (REWARD_SURVIVAL, None)
                }
            }
        };
        self.episode_return += reward;
        self.done = outcome.is_some();
        Ok(StepOutcome {
            reward,
            done: self.done,
            result: outcome.map(|outcome| EpisodeResult {
                outcome,
                steps: self.step,
                episode_return: self.episode_return,
            }),
        })
    }

    /// World-to-camera transform of the agent-mounted camera.
    pub fn world_to_camera(&self, camera_height: f64) -> RigidTransform {
        world_to_camera(self.agent.position, self.agent.heading, camera_height)
    }
}

/// Camera at `(position, height)` looking along `heading` on the ground
/// plane, zero pitch. Camera axes: x right, y down, z forward.
pub fn world_to_camera(position: [f64; 2], heading: f64, height: f64) -> RigidTransform {
    let (s, c) = heading.sin_cos();
    let r = nalgebra::Matrix3::new(s, -c, 0.0, 0.0, 0.0, -1.0, c, s, 0.0);
    let center = Vector3::new(position[0], position[1], height);
    RigidTransform::new(r, -(r * center)).expect("camera rotation is orthonormal")
}

fn disc_hits_box(p: [f64; 2], r: f64, pose: &RigidTransform, half_x: f64, half_y: f64) -> bool {
    let local = pose.inverse().rotation() * Vector3::new(p[0], p[1], 0.0) + pose.inverse().translation();
    let du = (local.x.abs() - half_x).max(0.0);
    let dv = (local.y.abs() - half_y).max(0.0);
    du * du + dv * dv <= r * r
}

/// Failure classification of the current agent placement.
///
/// Contact with a pedestrian, car or other standing obstacle on the road is a
/// collision; touching a sidewalk, building, fence or terrain (that is,
/// leaving the drivable road) is out-of-bound.
pub fn classify_failure(state: &WorldState) -> Failure {
    let spec = state.spec();
    let r = spec.config.agent_radius;
    let p = state.agent.position;
    for (obj, pose) in spec.objects.iter().zip(state.object_poses()) {
        let hit = match obj.shape {
            Shape::Cylinder { radius, .. } => {
                let t = pose.translation();
                let d = ((t.x - p[0]).powi(2) + (t.y - p[1]).powi(2)).sqrt();
                d <= r + radius
            }
            Shape::Box { half_x, half_y, .. } => disc_hits_box(p, r, pose, half_x, half_y),
            Shape::GroundPlane => false,
        };
        if hit {
            return match obj.class {
                SemanticClass::Building | SemanticClass::Fence | SemanticClass::Terrain => Failure::Oob,
                _ => Failure::Collision,
            };
        }
    }
    if spec.road_distance(p) > spec.lane_width - r {
        return Failure::Oob;
    }
    Failure::None
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::layout::{build_environment, EnvironmentName, SceneConfig, SpeedMode};

    fn straight(config: SceneConfig) -> WorldState {
        let spec = build_environment(
            EnvironmentName::StraightRoad,
            SpeedMode::NORMAL,
            12.0,
            0,
            &config,
        )
        .unwrap();
        WorldState::new(Arc::new(spec))
    }

    fn no_pedestrians() -> SceneConfig {
        SceneConfig {
            crossing_stations: 0,
            group_size: (0, 0),
            ..SceneConfig::default()
        }
    }

    fn clear_pedestrians(state: &mut WorldState) {
        let far = ground_pose(-1000.0, -1000.0, 0.0);
        let routes: Vec<usize> = state.spec().pedestrian_routes.iter().map(|r| r.object).collect();
        let mut spec = (**state.spec_arc()).clone();
        spec.pedestrian_routes.clear();
        for i in &routes {
            spec.objects[*i].pose = far;
        }
        *state = WorldState::new(Arc::new(spec));
    }

    #[test]
    fn noop_keeps_heading_and_advances() {
        let mut s = straight(SceneConfig::default());
        clear_pedestrians(&mut s);
        let start = s.agent.position;
        let dt = 1.0 / 12.0;
        for i in 1..=20 {
            let out = s.step(Action::NoOp).unwrap();
            assert_eq!(s.agent.heading, 0.0);
            assert!((s.agent.position[0] - start[0] - 10.0 * dt * i as f64).abs() < 1e-9);
            if !out.done {
                assert_eq!(out.reward, REWARD_SURVIVAL);
            }
        }
    }

    #[test]
    fn reaching_end_zone_succeeds() {
        let mut s = straight(SceneConfig::default());
        clear_pedestrians(&mut s);
        let mut steps = 0;
        let result = loop {
            let out = s.step(Action::NoOp).unwrap();
            steps += 1;
            if let Some(r) = out.result {
                assert_eq!(out.reward, REWARD_SUCCESS);
                break r;
            }
        };
        assert_eq!(result.outcome, Outcome::Success);
        assert_eq!(result.steps, steps);
        assert!((result.episode_return - (0.01 * (steps as f64 - 1.0) + 5.0)).abs() < 1e-9);
        assert!(matches!(s.step(Action::NoOp), Err(SceneError::StepAfterDone)));
    }

    #[test]
    fn pedestrian_contact_is_collision() {
        let mut s = straight(SceneConfig::default());
        let ped = s.spec().pedestrian_routes[0].object;
        let p = s.agent.position;
        s.set_object_pose(ped, ground_pose(p[0] + 0.5, p[1], 0.0));
        assert_eq!(classify_failure(&s), Failure::Collision);
    }

    #[test]
    fn collision_step_reward() {
        let mut s = straight(SceneConfig::default());
        clear_pedestrians(&mut s);
        // Put a standing pedestrian right in front of the agent.
        let mut spec = (**s.spec_arc()).clone();
        let ped = spec.objects.len();
        spec.objects.push(crate::scene::SceneObject {
            id: ped,
            class: SemanticClass::Pedestrian,
            shape: Shape::Cylinder {
                radius: 0.3,
                height: 1.75,
            },
            pose: ground_pose(s.agent.position[0] + 0.9, 0.0, 0.0),
            velocity: Vector3::zeros(),
            is_dynamic: false,
        });
        let mut s = WorldState::new(Arc::new(spec));
        let out = s.step(Action::NoOp).unwrap();
        assert_eq!(out.reward, REWARD_FAILURE);
        assert!(out.done);
        assert_eq!(out.result.unwrap().outcome, Outcome::Collision);
    }

    #[test]
    fn sidewalk_is_oob_and_center_is_fine() {
        let mut s = straight(no_pedestrians());
        assert_eq!(classify_failure(&s), Failure::None);
        s.agent.position = [10.0, 1.8];
        assert_eq!(classify_failure(&s), Failure::Oob);
        s.agent.position = [10.0, 1.5];
        assert_eq!(classify_failure(&s), Failure::None);
    }

    #[test]
    fn turning_drives_off_road() {
        let mut s = straight(no_pedestrians());
        let out = loop {
            let out = s.step(Action::TurnLeft).unwrap();
            if out.done {
                break out;
            }
        };
        assert_eq!(out.result.unwrap().outcome, Outcome::Oob);
        assert!(s.agent.angular_velocity <= 90f64.to_radians() + 1e-12);
    }

    #[test]
    fn timeout_after_limit() {
        let cfg = SceneConfig {
            time_limit: Some(5),
            ..no_pedestrians()
        };
        let mut s = straight(cfg);
        let mut last = None;
        for _ in 0..5 {
            last = Some(s.step(Action::NoOp).unwrap());
        }
        let last = last.unwrap();
        assert!(last.done);
        assert_eq!(last.reward, REWARD_FAILURE);
        assert_eq!(last.result.unwrap().outcome, Outcome::Timeout);
        assert_eq!(last.result.unwrap().steps, 5);
    }

    #[test]
    fn identical_actions_identical_trajectories() {
        let acts = [Action::NoOp, Action::TurnLeft, Action::TurnRight, Action::NoOp];
        let run = || {
            let mut s = straight(SceneConfig::default());
            let mut log = Vec::new();
            for i in 0..40 {
                if s.is_done() {
                    break;
                }
                let out = s.step(acts[i % 4]).unwrap();
                log.push((s.agent, out.reward, s.object_poses().to_vec()));
            }
            log
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn camera_looks_along_heading() {
        let m = world_to_camera([1.0, 2.0], std::f64::consts::FRAC_PI_2, 1.2);
        // A point 5 m north of the agent at camera height lies on the optical axis.
        let p = crate::geometry::transform_point(&Vector3::new(1.0, 7.0, 1.2), &m);
        assert!((p - Vector3::new(0.0, 0.0, 5.0)).norm() < 1e-12);
        // East of a north-facing camera is to its right (+x).
        let q = crate::geometry::transform_point(&Vector3::new(2.0, 7.0, 0.2), &m);
        assert!(q.x > 0.0 && q.y > 0.0);
    }
}
