use std::sync::atomic::{AtomicU64, Ordering};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layers::{relu_in_place, relu_mask, Conv, Linear, MapShape};
use super::scalar::Scalar;
use super::NnError;
use crate::midlevel::{Observation, RepresentationId};

/// One input plane of the network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlaneShape {
    pub id: RepresentationId,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
}

impl PlaneShape {
    fn map(&self) -> MapShape {
        MapShape {
            height: self.height,
            width: self.width,
            channels: self.channels,
        }
    }

    pub fn len(&self) -> usize {
        self.height * self.width * self.channels
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSpec {
    pub planes: Vec<PlaneShape>,
    pub conv_channels: [usize; 2],
    pub embed_dim: usize,
    pub trunk_hidden: usize,
    pub outputs: usize,
    /// Planes smaller than this on either side get a dense encoder.
    pub min_conv_extent: usize,
}

impl NetworkSpec {
    pub fn new(planes: Vec<PlaneShape>) -> Self {
        Self {
            planes,
            conv_channels: [8, 16],
            embed_dim: 64,
            trunk_hidden: 512,
            outputs: 3,
            min_conv_extent: 4,
        }
    }

    fn uses_conv(&self, p: &PlaneShape) -> bool {
        p.height.min(p.width) >= self.min_conv_extent
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Encoder<T> {
    Conv {
        conv1: Conv<T>,
        conv2: Conv<T>,
        fc: Linear<T>,
    },
    Dense {
        fc: Linear<T>,
    },
}

/// Every trainable tensor of a network. Also used for gradients and
/// optimizer moments.
#[derive(Debug, Clone, PartialEq)]
pub struct Params<T> {
    pub encoders: Vec<Encoder<T>>,
    pub trunk: Linear<T>,
    pub head: Linear<T>,
}

impl<T: Scalar> Params<T> {
    fn build(spec: &NetworkSpec, rng: Option<&mut ChaCha8Rng>) -> Self {
        let mut rng = rng;
        let linear = |i, o, rng: &mut Option<&mut ChaCha8Rng>| match rng {
            Some(r) => Linear::init(i, o, &mut **r),
            None => Linear::zeros(i, o),
        };
        let conv = |s, o, rng: &mut Option<&mut ChaCha8Rng>| match rng {
            Some(r) => Conv::init(s, o, &mut **r),
            None => Conv::zeros(s, o),
        };
        let encoders = spec
            .planes
            .iter()
            .map(|p| {
                if spec.uses_conv(p) {
                    let conv1 = conv(p.map(), spec.conv_channels[0], &mut rng);
                    let conv2 = conv(conv1.output(), spec.conv_channels[1], &mut rng);
                    let fc = linear(conv2.output().len(), spec.embed_dim, &mut rng);
                    Encoder::Conv { conv1, conv2, fc }
                } else {
                    Encoder::Dense {
                        fc: linear(p.len(), spec.embed_dim, &mut rng),
                    }
                }
            })
            .collect();
        let trunk = linear(spec.planes.len() * spec.embed_dim, spec.trunk_hidden, &mut rng);
        let head = linear(spec.trunk_hidden, spec.outputs, &mut rng);
        Self {
            encoders,
            trunk,
            head,
        }
    }

    /// Named tensors with their shapes, in a fixed order.
    pub fn tensors(&self) -> Vec<(String, Vec<usize>, &[T])> {
        let mut out = Vec::new();
        for (i, e) in self.encoders.iter().enumerate() {
            match e {
                Encoder::Conv { conv1, conv2, fc } => {
                    for (n, c) in [("conv1", conv1), ("conv2", conv2)] {
                        let k = c.w.len() / c.out_channels;
                        out.push((format!("enc{i}.{n}.w"), vec![k, c.out_channels], &c.w[..]));
                        out.push((format!("enc{i}.{n}.b"), vec![c.out_channels], &c.b[..]));
                    }
                    out.push((format!("enc{i}.fc.w"), vec![fc.input, fc.output], &fc.w[..]));
                    out.push((format!("enc{i}.fc.b"), vec![fc.output], &fc.b[..]));
                }
                Encoder::Dense { fc } => {
                    out.push((format!("enc{i}.fc.w"), vec![fc.input, fc.output], &fc.w[..]));
                    out.push((format!("enc{i}.fc.b"), vec![fc.output], &fc.b[..]));
                }
            }
        }
        for (n, l) in [("trunk", &self.trunk), ("head", &self.head)] {
            out.push((format!("{n}.w"), vec![l.input, l.output], &l.w[..]));
            out.push((format!("{n}.b"), vec![l.output], &l.b[..]));
        }
        out
    }

    /// Mutable tensors in the same order as [`Params::tensors`].
    pub fn tensors_mut(&mut self) -> Vec<&mut Vec<T>> {
        let mut out = Vec::new();
        for e in self.encoders.iter_mut() {
            match e {
                Encoder::Conv { conv1, conv2, fc } => {
                    out.push(&mut conv1.w);
                    out.push(&mut conv1.b);
                    out.push(&mut conv2.w);
                    out.push(&mut conv2.b);
                    out.push(&mut fc.w);
                    out.push(&mut fc.b);
                }
                Encoder::Dense { fc } => {
                    out.push(&mut fc.w);
                    out.push(&mut fc.b);
                }
            }
        }
        out.push(&mut self.trunk.w);
        out.push(&mut self.trunk.b);
        out.push(&mut self.head.w);
        out.push(&mut self.head.b);
        out
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for t in z.tensors_mut() {
            t.iter_mut().for_each(|v| *v = T::zero());
        }
        z
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors().iter().map(|(_, _, d)| d.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors().iter().all(|(_, _, d)| d.iter().all(|v| v.is_finite()))
    }

    /// `self += other * scale`.
    pub fn add_scaled(&mut self, other: &Params<T>, scale: T) {
        let src: Vec<Vec<T>> = other.tensors().into_iter().map(|(_, _, d)| d.to_vec()).collect();
        for (dst, s) in self.tensors_mut().into_iter().zip(src) {
            for (d, v) in dst.iter_mut().zip(s) {
                *d += v * scale;
            }
        }
    }
}

static NEXT_ID: AtomicU64 = AtomicU64::new(1);

fn fresh_id() -> u64 {
    NEXT_ID.fetch_add(1, Ordering::Relaxed)
}

/// Per-plane encoders, concatenated embeddings, one hidden trunk layer and
/// a linear head.
#[derive(Debug)]
pub struct Network<T> {
    id: u64,
    version: u64,
    spec: NetworkSpec,
    params: Params<T>,
}

impl<T: Scalar> PartialEq for Network<T> {
    fn eq(&self, other: &Self) -> bool {
        self.spec == other.spec && self.params == other.params
    }
}

impl<T: Scalar> Clone for Network<T> {
    fn clone(&self) -> Self {
        Self {
            id: fresh_id(),
            version: 0,
            spec: self.spec.clone(),
            params: self.params.clone(),
        }
    }
}

/// Activations recorded by one forward pass.
#[derive(Debug)]
pub struct Tape<T> {
    net_id: u64,
    net_version: u64,
    batch: usize,
    encoders: Vec<EncoderTape<T>>,
    concat: Vec<T>,
    hidden: Vec<T>,
}

#[derive(Debug)]
enum EncoderTape<T> {
    Conv {
        cols1: Vec<T>,
        a1: Vec<T>,
        cols2: Vec<T>,
        a2: Vec<T>,
        emb: Vec<T>,
    },
    Dense {
        input: Vec<T>,
        emb: Vec<T>,
    },
}

impl<T: Scalar> Tape<T> {
    /// Which ReLU units were active, in a fixed order. Two passes with equal
    /// patterns lie on the same linear piece of the network.
    pub fn relu_pattern(&self) -> Vec<bool> {
        let mut out = Vec::new();
        let mut push = |v: &[T]| out.extend(v.iter().map(|x| *x > T::zero()));
        for e in &self.encoders {
            match e {
                EncoderTape::Conv { a1, a2, emb, .. } => {
                    push(a1);
                    push(a2);
                    push(emb);
                }
                EncoderTape::Dense { emb, .. } => push(emb),
            }
        }
        push(&self.hidden);
        out
    }

    pub fn batch(&self) -> usize {
        self.batch
    }
}

/// Channel-last inputs for a batch, one buffer per network plane.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch<T> {
    pub batch: usize,
    pub planes: Vec<Vec<T>>,
}

impl<T: Scalar> Batch<T> {
    /// Gather the planes a network expects from each observation, by id.
    /// Planes the network does not use are ignored.
    pub fn from_observations<'a, I>(spec: &NetworkSpec, observations: I) -> Result<Self, NnError>
    where
        I: IntoIterator<Item = &'a Observation>,
    {
        let mut planes: Vec<Vec<T>> = vec![Vec::new(); spec.planes.len()];
        let mut batch = 0;
        for obs in observations {
            for (buf, shape) in planes.iter_mut().zip(&spec.planes) {
                let p = obs
                    .plane(shape.id)
                    .ok_or_else(|| NnError::SpecMismatch(format!("observation lacks plane `{}`", shape.id)))?;
                if (p.height, p.width, p.channels) != (shape.height, shape.width, shape.channels) {
                    return Err(NnError::SpecMismatch(format!(
                        "plane `{}` is {}x{}x{}, network expects {}x{}x{}",
                        shape.id, p.height, p.width, p.channels, shape.height, shape.width, shape.channels
                    )));
                }
                buf.extend(p.data.iter().map(|v| T::of(f64::from(*v))));
            }
            batch += 1;
        }
        Ok(Self { batch, planes })
    }
}

impl<T: Scalar> Network<T> {
    pub fn new(spec: NetworkSpec, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = Params::build(&spec, Some(&mut rng));
        Self {
            id: fresh_id(),
            version: 0,
            spec,
            params,
        }
    }

    pub fn from_params(spec: NetworkSpec, params: Params<T>) -> Result<Self, NnError> {
        let template = Params::<T>::build(&spec, None);
        let want: Vec<_> = template.tensors().into_iter().map(|(n, s, _)| (n, s)).collect();
        let got: Vec<_> = params.tensors().into_iter().map(|(n, s, _)| (n, s)).collect();
        if want != got {
            return Err(NnError::SpecMismatch("parameter shapes do not match the network spec".into()));
        }
        Ok(Self {
            id: fresh_id(),
            version: 0,
            spec,
            params,
        })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn params(&self) -> &Params<T> {
        &self.params
    }

    /// Mutable access; invalidates tapes recorded before the call.
    pub fn params_mut(&mut self) -> &mut Params<T> {
        self.version += 1;
        &mut self.params
    }

    pub fn zero_grads(&self) -> Params<T> {
        self.params.zeros_like()
    }

    pub fn forward(&self, input: &Batch<T>) -> Result<(Vec<T>, Tape<T>), NnError> {
        if input.planes.len() != self.spec.planes.len() {
            return Err(NnError::SpecMismatch(format!(
                "network has {} planes, batch has {}",
                self.spec.planes.len(),
                input.planes.len()
            )));
        }
        let b = input.batch;
        for (x, shape) in input.planes.iter().zip(&self.spec.planes) {
            if x.len() != b * shape.len() {
                return Err(NnError::SpecMismatch(format!(
                    "plane `{}` holds {} values, expected {}",
                    shape.id,
                    x.len(),
                    b * shape.len()
                )));
            }
        }
        let e = self.spec.embed_dim;
        let p = self.spec.planes.len();
        let mut concat = vec![T::zero(); b * p * e];
        let mut tapes = Vec::with_capacity(p);
        for (pi, (x, enc)) in input.planes.iter().zip(&self.params.encoders).enumerate() {
            let (emb, tape) = match enc {
                Encoder::Conv { conv1, conv2, fc } => {
                    let cols1 = conv1.im2col(x, b);
                    let mut a1 = conv1.forward_cols(&cols1, b);
                    relu_in_place(&mut a1);
                    let cols2 = conv2.im2col(&a1, b);
                    let mut a2 = conv2.forward_cols(&cols2, b);
                    relu_in_place(&mut a2);
                    let mut emb = fc.forward(&a2, b);
                    relu_in_place(&mut emb);
                    (
                        emb.clone(),
                        EncoderTape::Conv {
                            cols1,
                            a1,
                            cols2,
                            a2,
                            emb,
                        },
                    )
                }
                Encoder::Dense { fc } => {
                    let mut emb = fc.forward(x, b);
                    relu_in_place(&mut emb);
                    (
                        emb.clone(),
                        EncoderTape::Dense {
                            input: x.clone(),
                            emb,
                        },
                    )
                }
            };
            for n in 0..b {
                concat[(n * p + pi) * e..(n * p + pi + 1) * e].copy_from_slice(&emb[n * e..(n + 1) * e]);
            }
            tapes.push(tape);
        }
        let mut hidden = self.params.trunk.forward(&concat, b);
        relu_in_place(&mut hidden);
        let out = self.params.head.forward(&hidden, b);
        Ok((
            out,
            Tape {
                net_id: self.id,
                net_version: self.version,
                batch: b,
                encoders: tapes,
                concat,
                hidden,
            },
        ))
    }

    /// Outputs only.
    pub fn predict(&self, input: &Batch<T>) -> Result<Vec<T>, NnError> {
        self.forward(input).map(|(o, _)| o)
    }

    /// Reverse pass for the tape's forward, given `dL/doutput`.
    pub fn backward(&self, tape: Tape<T>, upstream: &[T]) -> Result<Params<T>, NnError> {
        if tape.net_id != self.id || tape.net_version != self.version {
            return Err(NnError::TapeMismatch);
        }
        let b = tape.batch;
        if upstream.len() != b * self.spec.outputs {
            return Err(NnError::SpecMismatch(format!(
                "upstream gradient holds {} values, expected {}",
                upstream.len(),
                b * self.spec.outputs
            )));
        }
        let mut g = self.zero_grads();
        let mut dh = self
            .params
            .head
            .backward(&tape.hidden, upstream, b, &mut g.head, true)
            .expect("dx requested");
        relu_mask(&tape.hidden, &mut dh);
        let dconcat = self
            .params
            .trunk
            .backward(&tape.concat, &dh, b, &mut g.trunk, true)
            .expect("dx requested");
        let e = self.spec.embed_dim;
        let p = self.spec.planes.len();
        for (pi, (enc_tape, (enc, genc))) in tape
            .encoders
            .into_iter()
            .zip(self.params.encoders.iter().zip(g.encoders.iter_mut()))
            .enumerate()
        {
            let mut demb = vec![T::zero(); b * e];
            for n in 0..b {
                demb[n * e..(n + 1) * e].copy_from_slice(&dconcat[(n * p + pi) * e..(n * p + pi + 1) * e]);
            }
            match (enc_tape, enc, genc) {
                (
                    EncoderTape::Conv {
                        cols1,
                        a1,
                        cols2,
                        a2,
                        emb,
                    },
                    Encoder::Conv { conv1, conv2, fc },
                    Encoder::Conv {
                        conv1: g1,
                        conv2: g2,
                        fc: gfc,
                    },
                ) => {
                    relu_mask(&emb, &mut demb);
                    let mut da2 = fc.backward(&a2, &demb, b, gfc, true).expect("dx requested");
                    relu_mask(&a2, &mut da2);
                    let mut da1 = conv2.backward(&cols2, &da2, b, g2, true).expect("dx requested");
                    relu_mask(&a1, &mut da1);
                    conv1.backward(&cols1, &da1, b, g1, false);
                }
                (EncoderTape::Dense { input, emb }, Encoder::Dense { fc }, Encoder::Dense { fc: gfc }) => {
                    relu_mask(&emb, &mut demb);
                    fc.backward(&input, &demb, b, gfc, false);
                }
                _ => unreachable!("tape and encoder kinds are built together"),
            }
        }
        Ok(g)
    }

    /// Polyak averaging: `self = (1 - tau) * self + tau * source`.
    pub fn soft_update_from(&mut self, source: &Network<T>, tau: T) {
        let src: Vec<Vec<T>> = source.params.tensors().into_iter().map(|(_, _, d)| d.to_vec()).collect();
        for (dst, s) in self.params_mut().tensors_mut().into_iter().zip(src) {
            for (d, v) in dst.iter_mut().zip(s) {
                *d = (T::one() - tau) * *d + tau * v;
            }
        }
    }

    /// Convert element type, for gradient checks in 64-bit.
    pub fn cast<U: Scalar>(&self) -> Network<U> {
        let mut params = Params::<U>::build(&self.spec, None);
        let src: Vec<Vec<T>> = self.params.tensors().into_iter().map(|(_, _, d)| d.to_vec()).collect();
        for (dst, s) in params.tensors_mut().into_iter().zip(src) {
            for (d, v) in dst.iter_mut().zip(s) {
                *d = U::of(v.as_f64());
            }
        }
        Network {
            id: fresh_id(),
            version: 0,
            spec: self.spec.clone(),
            params,
        }
    }
}
