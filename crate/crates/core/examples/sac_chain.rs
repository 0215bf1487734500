//! Discrete SAC on a five-state chain with a known optimal return of 4.7.

use flowfact::sac::{evaluate, train, Chain, SacConfig};

fn main() {
    let cfg = SacConfig {
        total_steps: 20_000,
        batch_size: 64,
        learning_starts: 64,
        steps_per_update: 1,
        learning_rate: 3e-3,
        embed_dim: 16,
        trunk_hidden: 32,
        ..SacConfig::default()
    };
    let out = train(&mut Chain::default(), &cfg, None).unwrap();
    for r in out.log.iter().step_by(out.log.len() / 10 + 1) {
        println!("step {:6}  return {:6.2}  alpha {:.3}", r.step, r.episode_return, r.alpha);
    }
    let eval = evaluate(&out.agent.policy, &mut Chain::default(), 1, 0).unwrap();
    println!("greedy return {:.2}", eval.results[0].episode_return);
}
