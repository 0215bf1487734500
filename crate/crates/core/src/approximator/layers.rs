use rand::Rng;
use serde::{Deserialize, Serialize};

use super::scalar::{matmul, Scalar};

/// Fully connected layer, `y = x·W + b` with `W` stored `input×output`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear<T> {
    pub input: usize,
    pub output: usize,
    pub w: Vec<T>,
    pub b: Vec<T>,
}

impl<T: Scalar> Linear<T> {
    pub fn zeros(input: usize, output: usize) -> Self {
        Self {
            input,
            output,
            w: vec![T::zero(); input * output],
            b: vec![T::zero(); output],
        }
    }

    /// Uniform in `±1/sqrt(fan_in)`.
    pub fn init<R: Rng>(input: usize, output: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (input as f64).sqrt();
        let mut draw = || T::of(rng.gen_range(-bound..bound));
        let w = (0..input * output).map(|_| draw()).collect();
        let b = (0..output).map(|_| draw()).collect();
        Self { input, output, w, b }
    }

    pub fn forward(&self, x: &[T], batch: usize) -> Vec<T> {
        let mut y = Vec::with_capacity(batch * self.output);
        for _ in 0..batch {
            y.extend_from_slice(&self.b);
        }
        matmul(batch, self.input, self.output, x, false, &self.w, false, &mut y, true);
        y
    }

    /// Accumulates parameter gradients into `grad` and returns `dL/dx` when
    /// requested.
    pub fn backward(&self, x: &[T], dy: &[T], batch: usize, grad: &mut Linear<T>, want_dx: bool) -> Option<Vec<T>> {
        matmul(self.input, batch, self.output, x, true, dy, false, &mut grad.w, true);
        for row in dy.chunks_exact(self.output) {
            for (g, d) in grad.b.iter_mut().zip(row) {
                *g += *d;
            }
        }
        want_dx.then(|| {
            let mut dx = vec![T::zero(); batch * self.input];
            matmul(batch, self.output, self.input, dy, false, &self.w, true, &mut dx, false);
            dx
        })
    }
}

/// Spatial extent of a channel-last feature map.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MapShape {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
}

impl MapShape {
    pub fn len(&self) -> usize {
        self.height * self.width * self.channels
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

pub const KERNEL: usize = 3;
pub const STRIDE: usize = 2;
pub const PAD: usize = 1;

/// 3×3, stride 2, padding 1 convolution as im2col followed by a GEMM.
/// Weights are stored `(ky, kx, c_in) × c_out`.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv<T> {
    pub input: MapShape,
    pub out_channels: usize,
    pub w: Vec<T>,
    pub b: Vec<T>,
}

fn out_extent(n: usize) -> usize {
    (n + 2 * PAD - KERNEL) / STRIDE + 1
}

impl<T: Scalar> Conv<T> {
    pub fn zeros(input: MapShape, out_channels: usize) -> Self {
        let k = KERNEL * KERNEL * input.channels;
        Self {
            input,
            out_channels,
            w: vec![T::zero(); k * out_channels],
            b: vec![T::zero(); out_channels],
        }
    }

    pub fn init<R: Rng>(input: MapShape, out_channels: usize, rng: &mut R) -> Self {
        let fan_in = KERNEL * KERNEL * input.channels;
        let bound = 1.0 / (fan_in as f64).sqrt();
        let mut draw = || T::of(rng.gen_range(-bound..bound));
        let w = (0..fan_in * out_channels).map(|_| draw()).collect();
        let b = (0..out_channels).map(|_| draw()).collect();
        Self {
            input,
            out_channels,
            w,
            b,
        }
    }

    pub fn output(&self) -> MapShape {
        MapShape {
            height: out_extent(self.input.height),
            width: out_extent(self.input.width),
            channels: self.out_channels,
        }
    }

    fn patch(&self) -> usize {
        KERNEL * KERNEL * self.input.channels
    }

    pub fn im2col(&self, x: &[T], batch: usize) -> Vec<T> {
        let s = self.input;
        let o = self.output();
        let patch = self.patch();
        let mut cols = vec![T::zero(); batch * o.height * o.width * patch];
        let mut row = 0;
        for n in 0..batch {
            let img = &x[n * s.len()..(n + 1) * s.len()];
            for oy in 0..o.height {
                for ox in 0..o.width {
                    let dst = &mut cols[row * patch..(row + 1) * patch];
                    for ky in 0..KERNEL {
                        let iy = (oy * STRIDE + ky) as isize - PAD as isize;
                        if iy < 0 || iy >= s.height as isize {
                            continue;
                        }
                        for kx in 0..KERNEL {
                            let ix = (ox * STRIDE + kx) as isize - PAD as isize;
                            if ix < 0 || ix >= s.width as isize {
                                continue;
                            }
                            let src = (iy as usize * s.width + ix as usize) * s.channels;
                            let d = (ky * KERNEL + kx) * s.channels;
                            dst[d..d + s.channels].copy_from_slice(&img[src..src + s.channels]);
                        }
                    }
                    row += 1;
                }
            }
        }
        cols
    }

    fn col2im(&self, dcols: &[T], batch: usize) -> Vec<T> {
        let s = self.input;
        let o = self.output();
        let patch = self.patch();
        let mut dx = vec![T::zero(); batch * s.len()];
        let mut row = 0;
        for n in 0..batch {
            let img = &mut dx[n * s.len()..(n + 1) * s.len()];
            for oy in 0..o.height {
                for ox in 0..o.width {
                    let src = &dcols[row * patch..(row + 1) * patch];
                    for ky in 0..KERNEL {
                        let iy = (oy * STRIDE + ky) as isize - PAD as isize;
                        if iy < 0 || iy >= s.height as isize {
                            continue;
                        }
                        for kx in 0..KERNEL {
                            let ix = (ox * STRIDE + kx) as isize - PAD as isize;
                            if ix < 0 || ix >= s.width as isize {
                                continue;
                            }
                            let dst = (iy as usize * s.width + ix as usize) * s.channels;
                            let d = (ky * KERNEL + kx) * s.channels;
                            for c in 0..s.channels {
                                img[dst + c] += src[d + c];
                            }
                        }
                    }
                    row += 1;
                }
            }
        }
        dx
    }

    /// Forward from precomputed columns.
    pub fn forward_cols(&self, cols: &[T], batch: usize) -> Vec<T> {
        let o = self.output();
        let rows = batch * o.height * o.width;
        let mut y = Vec::with_capacity(rows * self.out_channels);
        for _ in 0..rows {
            y.extend_from_slice(&self.b);
        }
        matmul(rows, self.patch(), self.out_channels, cols, false, &self.w, false, &mut y, true);
        y
    }

    pub fn backward(
        &self,
        cols: &[T],
        dy: &[T],
        batch: usize,
        grad: &mut Conv<T>,
        want_dx: bool,
    ) -> Option<Vec<T>> {
        let o = self.output();
        let rows = batch * o.height * o.width;
        let patch = self.patch();
        matmul(patch, rows, self.out_channels, cols, true, dy, false, &mut grad.w, true);
        for r in dy.chunks_exact(self.out_channels) {
            for (g, d) in grad.b.iter_mut().zip(r) {
                *g += *d;
            }
        }
        want_dx.then(|| {
            let mut dcols = vec![T::zero(); rows * patch];
            matmul(rows, self.out_channels, patch, dy, false, &self.w, true, &mut dcols, false);
            self.col2im(&dcols, batch)
        })
    }
}

pub fn relu_in_place<T: Scalar>(x: &mut [T]) {
    for v in x {
        if *v < T::zero() {
            *v = T::zero();
        }
    }
}

/// Zero `grad` wherever the ReLU output was not positive.
pub fn relu_mask<T: Scalar>(out: &[T], grad: &mut [T]) {
    for (g, o) in grad.iter_mut().zip(out) {
        if *o <= T::zero() {
            *g = T::zero();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Direct convolution used as an oracle for the im2col path.
    fn direct(conv: &Conv<f64>, x: &[f64], batch: usize) -> Vec<f64> {
        let s = conv.input;
        let o = conv.output();
        let mut y = vec![0.0; batch * o.len()];
        for n in 0..batch {
            for oy in 0..o.height {
                for ox in 0..o.width {
                    for co in 0..o.channels {
                        let mut acc = conv.b[co];
                        for ky in 0..3 {
                            for kx in 0..3 {
                                let iy = (oy * 2 + ky) as isize - 1;
                                let ix = (ox * 2 + kx) as isize - 1;
                                if iy < 0 || ix < 0 || iy >= s.height as isize || ix >= s.width as isize {
                                    continue;
                                }
                                for ci in 0..s.channels {
                                    let xv = x[n * s.len() + (iy as usize * s.width + ix as usize) * s.channels + ci];
                                    let wv = conv.w[((ky * 3 + kx) * s.channels + ci) * o.channels + co];
                                    acc += xv * wv;
                                }
                            }
                        }
                        y[n * o.len() + (oy * o.width + ox) * o.channels + co] = acc;
                    }
                }
            }
        }
        y
    }

    #[test]
    fn conv_matches_direct_convolution() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for (h, w) in [(8, 8), (7, 5), (1, 1), (16, 3)] {
            let shape = MapShape {
                height: h,
                width: w,
                channels: 3,
            };
            let conv = Conv::<f64>::init(shape, 4, &mut rng);
            let x: Vec<f64> = (0..2 * shape.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let y = conv.forward_cols(&conv.im2col(&x, 2), 2);
            let want = direct(&conv, &x, 2);
            for (a, b) in y.iter().zip(&want) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn output_extent() {
        let s = MapShape {
            height: 64,
            width: 63,
            channels: 1,
        };
        let c = Conv::<f32>::zeros(s, 8);
        assert_eq!(c.output().height, 32);
        assert_eq!(c.output().width, 32);
    }
}
