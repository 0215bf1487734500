//! Split simulator flow into ego and object parts and save color-coded images.

use std::sync::Arc;

use flowfact::harness::formats::write_flow_image;
use flowfact::midlevel::frame_flows;
use flowfact::scene::{build_environment, raycast_render, Action, CameraConfig, EnvironmentName, SceneConfig, SpeedMode, WorldState};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let spec = build_environment(EnvironmentName::StraightRoad, SpeedMode::HIGH, 12.0, 3, &SceneConfig::default())?;
    let mut world = WorldState::new(Arc::new(spec));
    let cam = CameraConfig::default();
    let mut prev = raycast_render(&world, &cam);
    let out = std::env::temp_dir().join("flowfact_factorize");
    std::fs::create_dir_all(&out)?;
    for step in 0..12 {
        if world.step(Action::NoOp)?.done {
            break;
        }
        let curr = raycast_render(&world, &cam);
        let f = frame_flows(&prev, &curr, world.spec().dt(), 100.0)?;
        let moving = f.obj.data().iter().filter(|o| o[0].hypot(o[1]) > 1e-3).count();
        println!(
            "step {step:2}: max |raw| {:6.2}  max |ego| {:6.2}  max |obj| {:5.2} px, {moving} pixels with object motion",
            f.raw.max_abs(),
            f.ego.max_abs(),
            f.obj.max_abs()
        );
        for (tag, flow) in [("raw", &f.raw), ("ego", &f.ego), ("obj", &f.obj)] {
            write_flow_image(&out.join(format!("{step:02}_{tag}.png")), flow, 20.0)?;
        }
        prev = curr;
    }
    println!("wrote {}", out.display());
    Ok(())
}
