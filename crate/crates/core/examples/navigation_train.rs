//! Short navigation run: train on the straight road, then evaluate at two
//! pedestrian speeds. Pass a total step count to train longer.

use flowfact::harness::{NavigationEnv, ExperimentConfig};
use flowfact::sac::{evaluate, train};
use flowfact::scene::SpeedMode;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut cfg = ExperimentConfig::default();
    cfg.camera.width = 16;
    cfg.camera.height = 16;
    cfg.midlevel.flow_scale = 4.0;
    cfg.sac.total_steps = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(5_000);
    cfg.sac.trunk_hidden = 64;
    let make = |speed| {
        NavigationEnv::new(cfg.environment()?, speed, 12.0, cfg.scene.clone(), cfg.camera.clone(), cfg.midlevel.clone(), cfg.representation()?)
    };
    let mut env = make(SpeedMode::NORMAL)?;
    let out = train(&mut env, &cfg.sac, None)?;
    let tail = &out.log[out.log.len().saturating_sub(50)..];
    let wins = tail.iter().filter(|r| r.outcome == Some(flowfact::scene::Outcome::Success)).count();
    println!("{} training episodes, last {}: {wins} successes", out.log.len(), tail.len());
    for (name, speed) in [("normal", SpeedMode::NORMAL), ("high", SpeedMode::HIGH)] {
        let r = evaluate(&out.agent.policy, &mut make(speed)?, 20, 99)?;
        let b = r.breakdown;
        println!("{name:>6}: success {:.2}  oob {}  collision {}  timeout {}", r.success_rate, b.oob, b.collisions, b.timeouts);
    }
    Ok(())
}
