//! Render one frame of each environment and save depth and segmentation.

use std::sync::Arc;

use flowfact::harness::formats::{write_depth, write_segmentation};
use flowfact::scene::{build_environment, raycast_render, CameraConfig, EnvironmentName, SceneConfig, SpeedMode, WorldState};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = std::env::temp_dir().join("flowfact_render");
    std::fs::create_dir_all(&out)?;
    let cam = CameraConfig::default();
    for name in EnvironmentName::ALL {
        let spec = build_environment(name, SpeedMode::NORMAL, 12.0, 7, &SceneConfig::default())?;
        let world = WorldState::new(Arc::new(spec));
        let frame = raycast_render(&world, &cam);
        let hits = frame.depth.data().iter().filter(|z| z.is_finite()).count();
        write_depth(&out.join(format!("{name}.dpf")), &frame.depth)?;
        write_segmentation(&out.join(format!("{name}_seg.png")), &frame.seg)?;
        println!(
            "{name}: {} objects, {hits}/{} pixels hit, classes {:?}",
            world.spec().objects.len(),
            frame.depth.data().len(),
            world.spec().categories()
        );
    }
    println!("wrote {}", out.display());
    Ok(())
}
