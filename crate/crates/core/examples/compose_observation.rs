//! Build the network input for a representation spec from two frames.

use std::sync::Arc;

use flowfact::midlevel::{compose, FrameWindow, MidlevelConfig, RepresentationSpec};
use flowfact::scene::{build_environment, raycast_render, Action, CameraConfig, EnvironmentName, SceneConfig, SpeedMode, WorldState};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let spec: RepresentationSpec = std::env::args().nth(1).unwrap_or_else(|| "ego+obj+seg2".into()).parse()?;
    let env = build_environment(EnvironmentName::ThreeWayJunction, SpeedMode::NORMAL, 12.0, 1, &SceneConfig::default())?;
    let nc = env.num_classes();
    let mut world = WorldState::new(Arc::new(env));
    let cam = CameraConfig { width: 32, height: 24, ..CameraConfig::default() };
    let prev = raycast_render(&world, &cam);
    world.step(Action::TurnLeft)?;
    let curr = raycast_render(&world, &cam);
    let window = FrameWindow { prev: Some(&prev), curr: &curr, dt: world.spec().dt(), num_classes: nc, step_index: 1 };
    let obs = compose(&spec, &window, &MidlevelConfig::default())?;
    println!("{spec}: {} channels total", obs.total_channels());
    for p in &obs.planes {
        let (lo, hi) = p.data.iter().fold((f32::MAX, f32::MIN), |(a, b), v| (a.min(*v), b.max(*v)));
        println!("  {:<7} {}x{}x{}  range [{lo:.3}, {hi:.3}]", p.id.token(), p.height, p.width, p.channels);
    }
    Ok(())
}
