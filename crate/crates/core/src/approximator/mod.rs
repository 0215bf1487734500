//! Small convolutional function approximator with hand-written reverse-mode
//! gradients and Adam.
//!
//! Each observation plane has its own encoder (two 3×3 stride-2 conv layers
//! and a linear embedding, or a single linear embedding for planes too small
//! to convolve). Embeddings are concatenated and fed through one hidden ReLU
//! layer to a linear head. Tensors are channel-last.

mod adam;
mod checkpoint;
mod layers;
mod network;
mod scalar;

use thiserror::Error;

pub use adam::{linear_decay, Adam, AdamConfig, ScalarAdam};
pub use checkpoint::{Checkpoint, NamedTensor, TensorData, MAGIC as CHECKPOINT_MAGIC, VERSION as CHECKPOINT_VERSION};
pub use layers::{Conv, Linear, MapShape};
pub use network::{Batch, Encoder, Network, NetworkSpec, Params, PlaneShape, Tape};
pub use scalar::{matmul, Scalar};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NnError {
    #[error("input does not match network: {0}")]
    SpecMismatch(String),
    #[error("tape was recorded by a different network or before a parameter change")]
    TapeMismatch,
    #[error("non-finite gradient; update rejected")]
    NonFiniteGradient,
    #[error("checkpoint error at byte {offset}: {message}")]
    Checkpoint { offset: usize, message: String },
    #[error("io: {0}")]
    Io(String),
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::midlevel::{Observation, Plane, RepresentationId};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn toy_spec() -> NetworkSpec {
        NetworkSpec {
            planes: vec![
                PlaneShape {
                    id: RepresentationId::FlowEgo,
                    height: 8,
                    width: 8,
                    channels: 2,
                },
                PlaneShape {
                    id: RepresentationId::Depth,
                    height: 8,
                    width: 8,
                    channels: 1,
                },
            ],
            conv_channels: [3, 4],
            embed_dim: 6,
            trunk_hidden: 10,
            outputs: 3,
            min_conv_extent: 4,
        }
    }

    fn random_batch<T: Scalar>(spec: &NetworkSpec, b: usize, rng: &mut ChaCha8Rng) -> Batch<T> {
        Batch {
            batch: b,
            planes: spec
                .planes
                .iter()
                .map(|p| (0..b * p.len()).map(|_| T::of(rng.gen_range(-1.0..1.0))).collect())
                .collect(),
        }
    }

    fn obs(spec: &NetworkSpec, rng: &mut ChaCha8Rng) -> Observation {
        Observation {
            planes: spec
                .planes
                .iter()
                .map(|p| Plane {
                    id: p.id,
                    width: p.width,
                    height: p.height,
                    channels: p.channels,
                    data: (0..p.len()).map(|_| rng.gen_range(-1.0..1.0)).collect(),
                })
                .collect(),
            step_index: 0,
        }
    }

    #[test]
    fn zero_head_outputs_bias() {
        let mut net = Network::<f64>::new(toy_spec(), 1);
        let p = net.params_mut();
        p.head.w.iter_mut().for_each(|w| *w = 0.0);
        p.head.b = vec![0.5, -1.0, 2.0];
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let out = net.predict(&random_batch(net.spec(), 4, &mut rng)).unwrap();
        for row in out.chunks(3) {
            assert_eq!(row, &[0.5, -1.0, 2.0]);
        }
    }

    #[test]
    fn unused_plane_does_not_matter() {
        let spec = toy_spec();
        let net = Network::<f32>::new(spec.clone(), 3);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut a = obs(&spec, &mut rng);
        let mut b = a.clone();
        a.planes.push(Plane {
            id: RepresentationId::Seg,
            width: 8,
            height: 8,
            channels: 1,
            data: vec![0.1; 64],
        });
        b.planes.push(Plane {
            id: RepresentationId::Seg,
            width: 8,
            height: 8,
            channels: 1,
            data: vec![0.9; 64],
        });
        let ya = net.predict(&Batch::from_observations(net.spec(), [&a]).unwrap()).unwrap();
        let yb = net.predict(&Batch::from_observations(net.spec(), [&b]).unwrap()).unwrap();
        assert_eq!(ya, yb);
        assert_eq!(ya.len(), 3);
        assert!(ya.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn missing_plane_is_spec_mismatch() {
        let spec = toy_spec();
        let net = Network::<f32>::new(spec.clone(), 3);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut o = obs(&spec, &mut rng);
        o.planes.pop();
        assert!(matches!(
            Batch::<f32>::from_observations(net.spec(), [&o]),
            Err(NnError::SpecMismatch(_))
        ));
    }

    #[test]
    fn finite_difference_gradients() {
        for seed in 0..20u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
            let net = Network::<f64>::new(toy_spec(), seed);
            let x = random_batch::<f64>(net.spec(), 2, &mut rng);
            let c: Vec<f64> = (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let loss = |n: &Network<f64>| -> (f64, Vec<bool>) {
                let (y, t) = n.forward(&x).unwrap();
                (y.iter().zip(&c).map(|(a, b)| a * b).sum(), t.relu_pattern())
            };
            let (_, tape) = net.forward(&x).unwrap();
            let grads = net.backward(tape, &c).unwrap();
            let analytic: Vec<Vec<f64>> = grads.tensors().into_iter().map(|(_, _, d)| d.to_vec()).collect();
            let (mut checked, mut skipped) = (0, 0);
            let h = 1e-4;
            for (ti, g) in analytic.iter().enumerate() {
                for i in 0..g.len() {
                    let mut plus = net.clone();
                    plus.params_mut().tensors_mut()[ti][i] += h;
                    let mut minus = net.clone();
                    minus.params_mut().tensors_mut()[ti][i] -= h;
                    let (lp, pp) = loss(&plus);
                    let (lm, pm) = loss(&minus);
                    if pp != pm {
                        skipped += 1;
                        continue;
                    }
                    let numeric = (lp - lm) / (2.0 * h);
                    let diff = (g[i] - numeric).abs();
                    let scale = g[i].abs().max(numeric.abs());
                    assert!(
                        diff < 1e-9 || diff <= 1e-4 * scale,
                        "seed {seed} tensor {ti} index {i}: {} vs {numeric}",
                        g[i]
                    );
                    checked += 1;
                }
            }
            assert!(skipped * 100 < checked, "{skipped} kinks out of {checked}");
        }
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let net = Network::<f64>::new(toy_spec(), 9);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let (_, tape) = net.forward(&random_batch(net.spec(), 3, &mut rng)).unwrap();
        let g = net.backward(tape, &[0.0; 9]).unwrap();
        assert!(g.tensors().iter().all(|(_, _, d)| d.iter().all(|v| *v == 0.0)));
    }

    #[test]
    fn gradients_are_linear_in_upstream() {
        let net = Network::<f64>::new(toy_spec(), 5);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = random_batch(net.spec(), 2, &mut rng);
        let a: Vec<f64> = (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let b: Vec<f64> = (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let sum: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x + y).collect();
        let ga = net.backward(net.forward(&x).unwrap().1, &a).unwrap();
        let gb = net.backward(net.forward(&x).unwrap().1, &b).unwrap();
        let gs = net.backward(net.forward(&x).unwrap().1, &sum).unwrap();
        let mut combined = ga.clone();
        combined.add_scaled(&gb, 1.0);
        for ((_, _, s), (_, _, c)) in gs.tensors().iter().zip(combined.tensors()) {
            for (x, y) in s.iter().zip(c) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn tape_from_other_network_is_rejected() {
        let a = Network::<f64>::new(toy_spec(), 1);
        let mut b = a.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random_batch(a.spec(), 1, &mut rng);
        let (_, tape) = a.forward(&x).unwrap();
        assert_eq!(b.backward(tape, &[1.0; 3]), Err(NnError::TapeMismatch));
        let (_, tape) = b.forward(&x).unwrap();
        b.params_mut();
        assert_eq!(b.backward(tape, &[1.0; 3]), Err(NnError::TapeMismatch));
    }

    #[test]
    fn permuted_planes_give_identical_outputs() {
        let spec = toy_spec();
        let net = Network::<f64>::new(spec.clone(), 11);
        let mut pspec = spec.clone();
        pspec.planes.reverse();
        let mut params = net.params().clone();
        params.encoders.reverse();
        // Trunk rows are grouped by plane; swap the two embedding blocks.
        let e = spec.embed_dim;
        let h = spec.trunk_hidden;
        let w = params.trunk.w.clone();
        for r in 0..e {
            for j in 0..h {
                params.trunk.w[r * h + j] = w[(e + r) * h + j];
                params.trunk.w[(e + r) * h + j] = w[r * h + j];
            }
        }
        let pnet = Network::from_params(pspec, params).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let x = random_batch::<f64>(&spec, 3, &mut rng);
        let px = Batch {
            batch: 3,
            planes: x.planes.iter().rev().cloned().collect(),
        };
        let y = net.predict(&x).unwrap();
        let py = pnet.predict(&px).unwrap();
        for (a, b) in y.iter().zip(&py) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn dense_encoder_for_tiny_planes() {
        let spec = NetworkSpec {
            planes: vec![PlaneShape {
                id: RepresentationId::Seg,
                height: 1,
                width: 1,
                channels: 5,
            }],
            ..toy_spec()
        };
        let net = Network::<f32>::new(spec, 0);
        assert!(matches!(net.params().encoders[0], Encoder::Dense { .. }));
    }

    #[test]
    fn adam_first_step_matches_hand_evaluation() {
        let spec = NetworkSpec {
            planes: vec![PlaneShape {
                id: RepresentationId::Depth,
                height: 1,
                width: 1,
                channels: 1,
            }],
            conv_channels: [1, 1],
            embed_dim: 1,
            trunk_hidden: 1,
            outputs: 1,
            min_conv_extent: 4,
        };
        let mut net = Network::<f64>::new(spec, 0);
        let before: Vec<f64> = net.params().tensors().iter().flat_map(|(_, _, d)| d.to_vec()).collect();
        let mut grads = net.zero_grads();
        let gvals = [0.3, -2.0, 1e-3, -0.7, 5.0, 0.0];
        for (t, g) in grads.tensors_mut().into_iter().zip(gvals) {
            t[0] = g;
        }
        let lr = 0.01;
        let mut opt = Adam::new(
            AdamConfig {
                lr,
                ..AdamConfig::default()
            },
            &net,
        );
        opt.apply(&mut net, &grads).unwrap();
        let after: Vec<f64> = net.params().tensors().iter().flat_map(|(_, _, d)| d.to_vec()).collect();
        for ((b, a), g) in before.iter().zip(&after).zip(gvals) {
            // m̂ = g, v̂ = g², so the step is lr·g/(|g| + eps).
            let want = b - lr * g / (g.abs() + 1e-8);
            assert!((a - want).abs() < 1e-9, "{a} vs {want}");
        }
    }

    #[test]
    fn adam_zero_gradient_leaves_parameters() {
        let mut net = Network::<f32>::new(toy_spec(), 0);
        let before = net.clone();
        let grads = net.zero_grads();
        let mut opt = Adam::new(AdamConfig::default(), &net);
        opt.apply(&mut net, &grads).unwrap();
        assert_eq!(net, before);
    }

    #[test]
    fn adam_rejects_non_finite() {
        let mut net = Network::<f32>::new(toy_spec(), 0);
        let before = net.clone();
        let mut grads = net.zero_grads();
        grads.head.b[0] = f32::NAN;
        let mut opt = Adam::new(AdamConfig::default(), &net);
        assert_eq!(opt.apply(&mut net, &grads), Err(NnError::NonFiniteGradient));
        assert_eq!(net, before);
        assert_eq!(opt.step_count(), 0);
    }

    #[test]
    fn adam_descends_on_square() {
        let mut w = 1.0f64;
        let mut opt = ScalarAdam::new(AdamConfig {
            lr: 0.1,
            ..AdamConfig::default()
        });
        let g = 2.0 * w;
        opt.apply(&mut w, g).unwrap();
        assert!(w.abs() < 1.0);
    }

    #[test]
    fn learning_rate_decays_linearly() {
        assert_eq!(linear_decay(3e-4, 0, Some(100)), 3e-4);
        assert!((linear_decay(3e-4, 50, Some(100)) - 1.5e-4).abs() < 1e-18);
        assert_eq!(linear_decay(3e-4, 100, Some(100)), 0.0);
        assert_eq!(linear_decay(3e-4, 150, Some(100)), 0.0);
        assert_eq!(linear_decay(3e-4, 150, None), 3e-4);
    }

    #[test]
    fn same_seed_same_network() {
        assert_eq!(Network::<f32>::new(toy_spec(), 7), Network::<f32>::new(toy_spec(), 7));
        assert_ne!(Network::<f32>::new(toy_spec(), 7), Network::<f32>::new(toy_spec(), 8));
    }

    #[test]
    fn checkpoint_round_trip() {
        let net = Network::<f32>::new(toy_spec(), 3);
        let mut ck = Checkpoint::default();
        ck.push_network("policy", &net);
        ck.push_scalar("log_alpha", -0.25);
        let bytes = ck.to_bytes();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.to_bytes(), bytes);
        let loaded: Network<f32> = back.network("policy").unwrap();
        assert_eq!(loaded, net);
        assert_eq!(back.scalar("log_alpha"), Some(-0.25));
    }

    #[test]
    fn checkpoint_rejects_bad_magic_and_truncation() {
        let mut ck = Checkpoint::default();
        ck.push_network("q", &Network::<f32>::new(toy_spec(), 0));
        let mut bytes = ck.to_bytes();
        let cut = Checkpoint::from_bytes(&bytes[..bytes.len() - 3]).unwrap_err();
        assert!(matches!(cut, NnError::Checkpoint { .. }));
        bytes[0] = b'X';
        let err = Checkpoint::from_bytes(&bytes).unwrap_err();
        assert!(err.to_string().contains("magic"), "{err}");
    }
}
