//! Minimal dense and convolutional layers with explicit backward passes.
//! Activations are flat `Vec<f32>` in CHW order.

use rand::Rng;

/// Flat views over a module's trainable tensors, always in the same order.
/// Gradients are stored in a second instance of the same type.
pub trait Parameters: Clone {
    fn tensors(&self) -> Vec<&[f32]>;
    fn tensors_mut(&mut self) -> Vec<&mut [f32]>;

    fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for t in z.tensors_mut() {
            t.fill(0.0);
        }
        z
    }

    fn num_parameters(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    fn add_assign(&mut self, other: &Self) {
        for (dst, src) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (d, s) in dst.iter_mut().zip(src) {
                *d += s;
            }
        }
    }

    fn scale(&mut self, factor: f32) {
        for t in self.tensors_mut() {
            for v in t {
                *v *= factor;
            }
        }
    }
}

/// 3×3 convolution, stride 1, zero padding 1.
#[derive(Clone, Debug, PartialEq)]
pub struct Conv3x3 {
    pub in_ch: usize,
    pub out_ch: usize,
    /// `[out_ch][in_ch][3][3]`
    pub weight: Vec<f32>,
    pub bias: Vec<f32>,
}

impl Conv3x3 {
    pub fn new<R: Rng>(in_ch: usize, out_ch: usize, rng: &mut R) -> Self {
        // He-uniform for ReLU networks
        let bound = (6.0 / (in_ch * 9) as f32).sqrt();
        let weight = (0..out_ch * in_ch * 9).map(|_| rng.random_range(-bound..bound)).collect();
        Conv3x3 { in_ch, out_ch, weight, bias: vec![0.0; out_ch] }
    }

    pub fn forward(&self, input: &[f32], h: usize, w: usize) -> Vec<f32> {
        debug_assert_eq!(input.len(), self.in_ch * h * w);
        let plane = h * w;
        let mut out = vec![0.0f32; self.out_ch * plane];
        for oc in 0..self.out_ch {
            let dst = &mut out[oc * plane..(oc + 1) * plane];
            dst.fill(self.bias[oc]);
            for ic in 0..self.in_ch {
                let src = &input[ic * plane..(ic + 1) * plane];
                let k = &self.weight[(oc * self.in_ch + ic) * 9..][..9];
                for ky in 0..3 {
                    let (y0, y1) = valid_range(ky, h);
                    for kx in 0..3 {
                        let wv = k[ky * 3 + kx];
                        let (x0, x1) = valid_range(kx, w);
                        for y in y0..y1 {
                            let iy = y + ky - 1;
                            let d = &mut dst[y * w + x0..y * w + x1];
                            let s = &src[iy * w + x0 + kx - 1..iy * w + x1 + kx - 1];
                            for (o, i) in d.iter_mut().zip(s) {
                                *o += wv * i;
                            }
                        }
                    }
                }
            }
        }
        out
    }

    /// Accumulates parameter gradients into `grads`; returns the input
    /// gradient when `want_input_grad` is set.
    pub fn backward(
        &self,
        input: &[f32],
        h: usize,
        w: usize,
        grad_out: &[f32],
        grads: &mut Conv3x3,
        want_input_grad: bool,
    ) -> Option<Vec<f32>> {
        let plane = h * w;
        let mut grad_in = want_input_grad.then(|| vec![0.0f32; self.in_ch * plane]);
        for oc in 0..self.out_ch {
            let g = &grad_out[oc * plane..(oc + 1) * plane];
            grads.bias[oc] += g.iter().sum::<f32>();
            for ic in 0..self.in_ch {
                let src = &input[ic * plane..(ic + 1) * plane];
                let base = (oc * self.in_ch + ic) * 9;
                for ky in 0..3 {
                    let (y0, y1) = valid_range(ky, h);
                    for kx in 0..3 {
                        let (x0, x1) = valid_range(kx, w);
                        let mut acc = 0.0f32;
                        for y in y0..y1 {
                            let iy = y + ky - 1;
                            let gr = &g[y * w + x0..y * w + x1];
                            let s = &src[iy * w + x0 + kx - 1..iy * w + x1 + kx - 1];
                            acc += gr.iter().zip(s).map(|(a, b)| a * b).sum::<f32>();
                        }
                        grads.weight[base + ky * 3 + kx] += acc;
                        if let Some(gi) = grad_in.as_mut() {
                            let wv = self.weight[base + ky * 3 + kx];
                            let gi = &mut gi[ic * plane..(ic + 1) * plane];
                            for y in y0..y1 {
                                let iy = y + ky - 1;
                                let gr = &g[y * w + x0..y * w + x1];
                                let d = &mut gi[iy * w + x0 + kx - 1..iy * w + x1 + kx - 1];
                                for (o, gv) in d.iter_mut().zip(gr) {
                                    *o += wv * gv;
                                }
                            }
                        }
                    }
                }
            }
        }
        grad_in
    }
}

/// Output rows/cols whose kernel tap `k` lands inside the input.
#[inline]
fn valid_range(k: usize, n: usize) -> (usize, usize) {
    match k {
        0 => (1, n),
        1 => (0, n),
        _ => (0, n - 1),
    }
}

impl Parameters for Conv3x3 {
    fn tensors(&self) -> Vec<&[f32]> {
        vec![&self.weight, &self.bias]
    }
    fn tensors_mut(&mut self) -> Vec<&mut [f32]> {
        vec![&mut self.weight, &mut self.bias]
    }
}

pub fn relu_inplace(x: &mut [f32]) {
    for v in x {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
}

/// 2×2 max pool with stride 2. Returns the pooled map and argmax offsets.
pub fn max_pool2(input: &[f32], c: usize, h: usize, w: usize) -> (Vec<f32>, Vec<u32>) {
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(c * oh * ow);
    let mut idx = Vec::with_capacity(c * oh * ow);
    for ch in 0..c {
        let base = ch * h * w;
        for y in 0..oh {
            for x in 0..ow {
                let cands = [
                    base + 2 * y * w + 2 * x,
                    base + 2 * y * w + 2 * x + 1,
                    base + (2 * y + 1) * w + 2 * x,
                    base + (2 * y + 1) * w + 2 * x + 1,
                ];
                let mut best = cands[0];
                for &i in &cands[1..] {
                    if input[i] > input[best] {
                        best = i;
                    }
                }
                out.push(input[best]);
                idx.push(best as u32);
            }
        }
    }
    (out, idx)
}

pub fn max_pool2_backward(grad_out: &[f32], argmax: &[u32], input_len: usize) -> Vec<f32> {
    let mut g = vec![0.0f32; input_len];
    for (go, &i) in grad_out.iter().zip(argmax) {
        g[i as usize] += go;
    }
    g
}

/// Average pool each channel down to a 2×2 grid (quadrant means).
pub fn quadrant_pool(input: &[f32], c: usize, h: usize, w: usize) -> Vec<f32> {
    let (hh, hw) = (h / 2, w / 2);
    let norm = 1.0 / (hh * hw) as f32;
    let mut out = vec![0.0f32; c * 4];
    for ch in 0..c {
        for y in 0..h {
            for x in 0..w {
                out[ch * 4 + (y / hh) * 2 + x / hw] += input[(ch * h + y) * w + x];
            }
        }
    }
    out.iter_mut().for_each(|v| *v *= norm);
    out
}

pub fn quadrant_pool_backward(grad_out: &[f32], c: usize, h: usize, w: usize) -> Vec<f32> {
    let (hh, hw) = (h / 2, w / 2);
    let norm = 1.0 / (hh * hw) as f32;
    let mut g = vec![0.0f32; c * h * w];
    for ch in 0..c {
        for y in 0..h {
            for x in 0..w {
                g[(ch * h + y) * w + x] = grad_out[ch * 4 + (y / hh) * 2 + x / hw] * norm;
            }
        }
    }
    g
}

/// Fully connected layer, `y = W x + b` with `W` stored row-major `[out][in]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weight: Vec<f32>,
    pub bias: Vec<f32>,
}

impl Linear {
    pub fn new<R: Rng>(in_dim: usize, out_dim: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (in_dim as f32).sqrt();
        let weight = (0..in_dim * out_dim).map(|_| rng.random_range(-bound..bound)).collect();
        let bias = (0..out_dim).map(|_| rng.random_range(-bound..bound)).collect();
        Linear { in_dim, out_dim, weight, bias }
    }

    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Linear { in_dim, out_dim, weight: vec![0.0; in_dim * out_dim], bias: vec![0.0; out_dim] }
    }

    pub fn forward(&self, x: &[f32]) -> Vec<f32> {
        debug_assert_eq!(x.len(), self.in_dim);
        self.weight
            .chunks_exact(self.in_dim)
            .zip(&self.bias)
            .map(|(row, b)| row.iter().zip(x).map(|(w, v)| w * v).sum::<f32>() + b)
            .collect()
    }

    pub fn backward(&self, x: &[f32], grad_out: &[f32], grads: &mut Linear) -> Vec<f32> {
        let mut grad_x = vec![0.0f32; self.in_dim];
        for (o, &g) in grad_out.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            grads.bias[o] += g;
            let row = &self.weight[o * self.in_dim..(o + 1) * self.in_dim];
            let grow = &mut grads.weight[o * self.in_dim..(o + 1) * self.in_dim];
            for i in 0..self.in_dim {
                grow[i] += g * x[i];
                grad_x[i] += g * row[i];
            }
        }
        grad_x
    }
}

impl Parameters for Linear {
    fn tensors(&self) -> Vec<&[f32]> {
        vec![&self.weight, &self.bias]
    }
    fn tensors_mut(&mut self) -> Vec<&mut [f32]> {
        vec![&mut self.weight, &mut self.bias]
    }
}
