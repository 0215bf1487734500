use std::sync::Arc;

use super::HarnessError;
use crate::approximator::PlaneShape;
use crate::midlevel::{compose, FrameWindow, MidlevelConfig, Observation, RepresentationSpec};
use crate::sac::{EnvStep, Environment, SacError};
use crate::scene::{
    build_environment, raycast_render, Action, CameraConfig, EnvironmentName, EnvironmentSpec, RenderedFrame,
    SceneConfig, SpeedMode, WorldState,
};

/// Simulator episodes seen through a mid-level representation. Each reset
/// builds a fresh environment instance from the reset seed.
#[derive(Debug, Clone)]
pub struct NavigationEnv {
    pub name: EnvironmentName,
    pub speed_mode: SpeedMode,
    pub fps: f64,
    pub scene: SceneConfig,
    pub camera: CameraConfig,
    pub midlevel: MidlevelConfig,
    pub representation: RepresentationSpec,
    /// Keep pedestrians at their start positions.
    pub freeze: bool,
    world: Option<WorldState>,
    prev: Option<RenderedFrame>,
    curr: Option<RenderedFrame>,
}

impl NavigationEnv {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        name: EnvironmentName,
        speed_mode: SpeedMode,
        fps: f64,
        scene: SceneConfig,
        camera: CameraConfig,
        midlevel: MidlevelConfig,
        representation: RepresentationSpec,
    ) -> Result<Self, HarnessError> {
        if !(1.0..=60.0).contains(&fps) {
            return Err(HarnessError::Config(format!("fps must lie in [1, 60], got {fps}")));
        }
        Ok(Self {
            name,
            speed_mode,
            fps,
            scene,
            camera,
            midlevel,
            representation,
            freeze: false,
            world: None,
            prev: None,
            curr: None,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.name.categories().len()
    }

    pub fn world(&self) -> Option<&WorldState> {
        self.world.as_ref()
    }

    /// The last two rendered frames, oldest first.
    pub fn frames(&self) -> (Option<&RenderedFrame>, Option<&RenderedFrame>) {
        (self.prev.as_ref(), self.curr.as_ref())
    }

    pub fn build_spec(&self, seed: u64) -> Result<EnvironmentSpec, HarnessError> {
        let spec = build_environment(self.name, self.speed_mode, self.fps, seed, &self.scene)?;
        Ok(if self.freeze {
            super::freeze_dynamic_objects(spec)
        } else {
            spec
        })
    }

    fn observe(&self) -> Result<Observation, SacError> {
        let world = self.world.as_ref().expect("reset before observe");
        let window = FrameWindow {
            prev: self.prev.as_ref(),
            curr: self.curr.as_ref().expect("rendered"),
            dt: world.spec().dt(),
            num_classes: self.num_classes(),
            step_index: world.step_index(),
        };
        compose(&self.representation, &window, &self.midlevel).map_err(|e| SacError::Env(e.to_string()))
    }
}

impl Environment for NavigationEnv {
    fn observation_shapes(&self) -> Vec<PlaneShape> {
        let nc = self.num_classes();
        self.representation
            .ids()
            .iter()
            .map(|&id| PlaneShape {
                id,
                height: self.camera.height,
                width: self.camera.width,
                channels: self.midlevel.channels(id, nc),
            })
            .collect()
    }

    fn reset(&mut self, seed: u64) -> Result<Observation, SacError> {
        let spec = self.build_spec(seed).map_err(|e| SacError::Env(e.to_string()))?;
        let world = WorldState::new(Arc::new(spec));
        self.curr = Some(raycast_render(&world, &self.camera));
        self.prev = None;
        self.world = Some(world);
        self.observe()
    }

    fn step(&mut self, action: usize) -> Result<EnvStep, SacError> {
        let a = Action::from_index(action).ok_or(SacError::InvalidAction(action))?;
        let world = self.world.as_mut().ok_or_else(|| SacError::Env("step before reset".into()))?;
        let out = world.step(a).map_err(|e| SacError::Env(e.to_string()))?;
        let frame = raycast_render(world, &self.camera);
        self.prev = self.curr.replace(frame);
        Ok(EnvStep {
            observation: self.observe()?,
            reward: out.reward,
            done: out.done,
            outcome: out.result.map(|r| r.outcome),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::Outcome;

    fn env(repr: &str) -> NavigationEnv {
        NavigationEnv::new(
            EnvironmentName::StraightRoad,
            SpeedMode::NORMAL,
            12.0,
            SceneConfig::default(),
            CameraConfig {
                width: 16,
                height: 12,
                ..CameraConfig::default()
            },
            MidlevelConfig::default(),
            repr.parse().unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn episodes_terminate_with_outcome() {
        let mut e = env("ego+obj+seg2");
        let obs = e.reset(3).unwrap();
        let shapes = e.observation_shapes();
        assert_eq!(obs.planes.len(), shapes.len());
        for (p, s) in obs.planes.iter().zip(&shapes) {
            assert_eq!((p.id, p.width, p.height, p.channels), (s.id, s.width, s.height, s.channels));
        }
        let mut steps = 0;
        loop {
            let st = e.step(0).unwrap();
            steps += 1;
            if st.done {
                assert!(st.outcome.is_some());
                break;
            }
            assert!(st.outcome.is_none());
        }
        assert!(steps <= e.world().unwrap().spec().time_limit);
        assert!(matches!(e.step(0), Err(SacError::Env(_))));
    }

    #[test]
    fn same_seed_same_episode() {
        let run = |seed| {
            let mut e = env("depth");
            let first = e.reset(seed).unwrap();
            let mut outs = vec![first];
            let mut outcome = None;
            for i in 0..400 {
                let st = e.step(i % 3).unwrap();
                outs.push(st.observation);
                if st.done {
                    outcome = st.outcome;
                    break;
                }
            }
            (outs, outcome)
        };
        let (a, oa) = run(11);
        let (b, ob) = run(11);
        assert_eq!(a, b);
        assert_eq!(oa, ob);
        assert!(matches!(oa, Some(Outcome::Success | Outcome::Oob | Outcome::Collision | Outcome::Timeout)));
    }

    #[test]
    fn invalid_action_rejected() {
        let mut e = env("seg");
        e.reset(0).unwrap();
        assert!(matches!(e.step(3), Err(SacError::InvalidAction(3))));
    }
}
