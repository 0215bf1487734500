//! Forward, backward and one Adam step on a two-plane network.

use flowfact::approximator::{Adam, AdamConfig, Batch, Network, NetworkSpec, PlaneShape};
use flowfact::midlevel::RepresentationId;

fn main() {
    let planes = vec![
        PlaneShape { id: RepresentationId::FlowEgo, height: 16, width: 16, channels: 2 },
        PlaneShape { id: RepresentationId::FlowObj, height: 16, width: 16, channels: 2 },
    ];
    let mut spec = NetworkSpec::new(planes);
    spec.trunk_hidden = 64;
    let mut net = Network::<f32>::new(spec, 0);
    let x = Batch {
        batch: 4,
        planes: vec![(0..4 * 512).map(|i| ((i % 17) as f32 - 8.0) / 8.0).collect(); 2],
    };
    let target = [1.0f32, 0.0, -1.0];
    let mut adam = Adam::new(AdamConfig { lr: 1e-3, ..AdamConfig::default() }, &net);
    for step in 0..200 {
        let (y, tape) = net.forward(&x).unwrap();
        let grad: Vec<f32> = y.iter().enumerate().map(|(i, v)| 2.0 * (v - target[i % 3]) / y.len() as f32).collect();
        let loss: f32 = y.iter().enumerate().map(|(i, v)| (v - target[i % 3]).powi(2)).sum::<f32>() / y.len() as f32;
        if step % 50 == 0 {
            println!("step {step:3}: mse {loss:.5}");
        }
        let g = net.backward(tape, &grad).unwrap();
        adam.apply(&mut net, &g).unwrap();
    }
    println!("{} parameters", net.params().parameter_count());
}
