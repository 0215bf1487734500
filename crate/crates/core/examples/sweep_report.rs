//! Aggregate per-episode records into a sweep report.

use flowfact::harness::{build_report, EpisodeRecord};
use flowfact::scene::Outcome;

fn main() {
    let mut records = Vec::new();
    for (composition, seed, wins, oob) in [("ego", 0, 40, 30), ("ego", 1, 50, 20), ("ego+obj", 0, 70, 5), ("ego+obj", 1, 64, 8)] {
        for episode in 0..100 {
            let outcome = if episode < wins {
                Outcome::Success
            } else if episode < wins + oob {
                Outcome::Oob
            } else {
                Outcome::Collision
            };
            records.push(EpisodeRecord {
                sweep: "composition".into(),
                composition: composition.into(),
                environment: "StraightRoad".into(),
                speed: "high".into(),
                fps: 12.0,
                seed,
                episode,
                outcome,
                steps: 30,
                episode_return: 0.0,
            });
        }
    }
    let report = build_report(&records);
    print!("{}\n{}", report.success_table(), report.failure_table());
}
