use rand::Rng;

use super::{gemm, Param, Tensor};
use crate::error::{Error, Result};

/// He-uniform initialisation for a ReLU network.
fn he_uniform<R: Rng>(rng: &mut R, len: usize, fan_in: usize) -> Vec<f32> {
    let bound = (6.0 / fan_in as f64).sqrt() as f32;
    (0..len).map(|_| rng.random_range(-bound..bound)).collect()
}

/// Square-kernel 2-D convolution with bias.
#[derive(Clone, Debug)]
pub struct Conv2d {
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    /// `[out_ch][in_ch * kernel * kernel]`
    pub weight: Param,
    pub bias: Param,
}

impl Conv2d {
    pub fn new<R: Rng>(
        rng: &mut R,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
    ) -> Self {
        let k = in_ch * kernel * kernel;
        Self {
            in_ch,
            out_ch,
            kernel,
            stride,
            pad,
            weight: Param::new(he_uniform(rng, out_ch * k, k)),
            bias: Param::new(vec![0.0; out_ch]),
        }
    }

    pub fn parameter_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    pub fn out_side(&self, side: usize) -> usize {
        (side + 2 * self.pad - self.kernel) / self.stride + 1
    }

    fn col_rows(&self) -> usize {
        self.in_ch * self.kernel * self.kernel
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        if x.channels() != self.in_ch || x.height() + 2 * self.pad < self.kernel {
            return Err(Error::Shape(format!(
                "conv {}->{} k{} got input {:?}",
                self.in_ch,
                self.out_ch,
                self.kernel,
                x.shape()
            )));
        }
        Ok(())
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        self.check_input(x)?;
        let [n, _, h, w] = x.shape();
        let (ho, wo) = (self.out_side(h), self.out_side(w));
        let p = ho * wo;
        let kk = self.col_rows();
        let mut col = vec![0f32; kk * p];
        let mut y = Tensor::zeros(n, self.out_ch, ho, wo);
        for i in 0..n {
            self.im2col(x.sample(i), h, w, ho, wo, &mut col);
            let ys = y.sample_mut(i);
            gemm(
                self.out_ch,
                kk,
                p,
                &self.weight.value,
                (kk, 1),
                &col,
                (p, 1),
                0.0,
                ys,
                (p, 1),
            );
            for (o, row) in ys.chunks_exact_mut(p).enumerate() {
                let b = self.bias.value[o];
                row.iter_mut().for_each(|v| *v += b);
            }
        }
        Ok(y)
    }

    /// Accumulate parameter gradients for upstream gradient `dy` at input `x`;
    /// returns the input gradient when `need_dx` is set.
    pub fn backward(&mut self, x: &Tensor, dy: &Tensor, need_dx: bool) -> Option<Tensor> {
        let [n, _, h, w] = x.shape();
        let (ho, wo) = (dy.height(), dy.width());
        let p = ho * wo;
        let kk = self.col_rows();
        let mut col = vec![0f32; kk * p];
        let mut dcol = if need_dx { vec![0f32; kk * p] } else { Vec::new() };
        let mut dx = need_dx.then(|| Tensor::zeros(n, self.in_ch, h, w));
        self.weight.grad_mut();
        self.bias.grad_mut();
        for i in 0..n {
            let dys = dy.sample(i);
            self.im2col(x.sample(i), h, w, ho, wo, &mut col);
            gemm(
                self.out_ch,
                p,
                kk,
                dys,
                (p, 1),
                &col,
                (1, p),
                1.0,
                &mut self.weight.grad,
                (kk, 1),
            );
            for (o, row) in dys.chunks_exact(p).enumerate() {
                self.bias.grad[o] += row.iter().sum::<f32>();
            }
            if let Some(dx) = dx.as_mut() {
                gemm(
                    kk,
                    self.out_ch,
                    p,
                    &self.weight.value,
                    (1, kk),
                    dys,
                    (p, 1),
                    0.0,
                    &mut dcol,
                    (p, 1),
                );
                self.col2im(&dcol, h, w, ho, wo, dx.sample_mut(i));
            }
        }
        dx
    }

    fn im2col(&self, x: &[f32], h: usize, w: usize, ho: usize, wo: usize, col: &mut [f32]) {
        let (k, s, pad) = (self.kernel, self.stride, self.pad as isize);
        let p = ho * wo;
        for c in 0..self.in_ch {
            let plane = &x[c * h * w..(c + 1) * h * w];
            for ky in 0..k {
                for kx in 0..k {
                    let row = &mut col[((c * k + ky) * k + kx) * p..][..p];
                    for oy in 0..ho {
                        let iy = (oy * s + ky) as isize - pad;
                        let dst = &mut row[oy * wo..(oy + 1) * wo];
                        if iy < 0 || iy >= h as isize {
                            dst.fill(0.0);
                            continue;
                        }
                        let src = &plane[iy as usize * w..(iy as usize + 1) * w];
                        if s == 1 {
                            // ix = ox + kx - pad must lie in [0, w)
                            let lo = (pad - kx as isize).clamp(0, wo as isize) as usize;
                            let hi = (w as isize + pad - kx as isize).clamp(0, wo as isize) as usize;
                            dst[..lo].fill(0.0);
                            if hi > lo {
                                let start = (lo as isize + kx as isize - pad) as usize;
                                dst[lo..hi].copy_from_slice(&src[start..start + hi - lo]);
                            }
                            dst[hi.max(lo)..].fill(0.0);
                        } else {
                            for (ox, d) in dst.iter_mut().enumerate() {
                                let ix = (ox * s + kx) as isize - pad;
                                *d = if ix >= 0 && ix < w as isize {
                                    src[ix as usize]
                                } else {
                                    0.0
                                };
                            }
                        }
                    }
                }
            }
        }
    }

    fn col2im(&self, col: &[f32], h: usize, w: usize, ho: usize, wo: usize, dx: &mut [f32]) {
        let (k, s, pad) = (self.kernel, self.stride, self.pad as isize);
        let p = ho * wo;
        for c in 0..self.in_ch {
            let plane = &mut dx[c * h * w..(c + 1) * h * w];
            for ky in 0..k {
                for kx in 0..k {
                    let row = &col[((c * k + ky) * k + kx) * p..][..p];
                    for oy in 0..ho {
                        let iy = (oy * s + ky) as isize - pad;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let dst = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                        let src = &row[oy * wo..(oy + 1) * wo];
                        if s == 1 {
                            let lo = (pad - kx as isize).clamp(0, wo as isize) as usize;
                            let hi = (w as isize + pad - kx as isize).clamp(0, wo as isize) as usize;
                            if hi > lo {
                                let start = (lo as isize + kx as isize - pad) as usize;
                                for (d, &g) in dst[start..start + hi - lo].iter_mut().zip(&src[lo..hi]) {
                                    *d += g;
                                }
                            }
                            continue;
                        }
                        for (ox, &g) in src.iter().enumerate() {
                            let ix = (ox * s + kx) as isize - pad;
                            if ix >= 0 && ix < w as isize {
                                dst[ix as usize] += g;
                            }
                        }
                    }
                }
            }
        }
    }
}

/// 2x2 stride-2 transposed convolution ("up-convolution").
#[derive(Clone, Debug)]
pub struct ConvTranspose2x2 {
    pub in_ch: usize,
    pub out_ch: usize,
    /// `[in_ch][out_ch * 4]`, inner index `o * 4 + dy * 2 + dx`.
    pub weight: Param,
    pub bias: Param,
}

impl ConvTranspose2x2 {
    pub fn new<R: Rng>(rng: &mut R, in_ch: usize, out_ch: usize) -> Self {
        Self {
            in_ch,
            out_ch,
            weight: Param::new(he_uniform(rng, in_ch * out_ch * 4, in_ch)),
            bias: Param::new(vec![0.0; out_ch]),
        }
    }

    pub fn parameter_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        if x.channels() != self.in_ch {
            return Err(Error::Shape(format!(
                "up-conv {}->{} got input {:?}",
                self.in_ch,
                self.out_ch,
                x.shape()
            )));
        }
        let [n, _, h, w] = x.shape();
        let p = h * w;
        let q = self.out_ch * 4;
        let mut z = vec![0f32; q * p];
        let mut y = Tensor::zeros(n, self.out_ch, 2 * h, 2 * w);
        for i in 0..n {
            gemm(q, self.in_ch, p, &self.weight.value, (1, q), x.sample(i), (p, 1), 0.0, &mut z, (p, 1));
            let ys = y.sample_mut(i);
            for o in 0..self.out_ch {
                let b = self.bias.value[o];
                let plane = &mut ys[o * 4 * p..(o + 1) * 4 * p];
                for d in 0..4 {
                    let (dy, dx) = (d / 2, d % 2);
                    let zr = &z[(o * 4 + d) * p..][..p];
                    for yy in 0..h {
                        let out_row = &mut plane[(2 * yy + dy) * 2 * w..][..2 * w];
                        for xx in 0..w {
                            out_row[2 * xx + dx] = zr[yy * w + xx] + b;
                        }
                    }
                }
            }
        }
        Ok(y)
    }

    pub fn backward(&mut self, x: &Tensor, dy: &Tensor) -> Tensor {
        let [n, _, h, w] = x.shape();
        let p = h * w;
        let q = self.out_ch * 4;
        let mut dz = vec![0f32; q * p];
        let mut dx = Tensor::zeros(n, self.in_ch, h, w);
        self.weight.grad_mut();
        self.bias.grad_mut();
        for i in 0..n {
            let g = dy.sample(i);
            for o in 0..self.out_ch {
                let plane = &g[o * 4 * p..(o + 1) * 4 * p];
                self.bias.grad[o] += plane.iter().sum::<f32>();
                for d in 0..4 {
                    let (ddy, ddx) = (d / 2, d % 2);
                    let zr = &mut dz[(o * 4 + d) * p..][..p];
                    for yy in 0..h {
                        let row = &plane[(2 * yy + ddy) * 2 * w..][..2 * w];
                        for xx in 0..w {
                            zr[yy * w + xx] = row[2 * xx + ddx];
                        }
                    }
                }
            }
            gemm(self.in_ch, p, q, x.sample(i), (p, 1), &dz, (1, p), 1.0, &mut self.weight.grad, (q, 1));
            gemm(self.in_ch, q, p, &self.weight.value, (q, 1), &dz, (p, 1), 0.0, dx.sample_mut(i), (p, 1));
        }
        dx
    }
}

/// Per-channel batch normalisation; affine scale/shift are optional.
#[derive(Clone, Debug)]
pub struct BatchNorm2d {
    pub channels: usize,
    pub gamma: Option<Param>,
    pub beta: Option<Param>,
    pub running_mean: Vec<f32>,
    pub running_var: Vec<f32>,
    pub momentum: f32,
    pub eps: f32,
}

/// Saved state for [`BatchNorm2d::backward`].
#[derive(Debug)]
pub struct BnCache {
    xhat: Tensor,
    inv_std: Vec<f32>,
    mean: Vec<f64>,
    var: Vec<f64>,
    count: usize,
}

impl BatchNorm2d {
    pub fn new(channels: usize, affine: bool) -> Self {
        Self {
            channels,
            gamma: affine.then(|| Param::new(vec![1.0; channels])),
            beta: affine.then(|| Param::new(vec![0.0; channels])),
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
            momentum: 0.1,
            eps: 1e-5,
        }
    }

    pub fn parameter_count(&self) -> usize {
        self.gamma.as_ref().map_or(0, Param::len) + self.beta.as_ref().map_or(0, Param::len)
    }

    fn affine(&self, c: usize) -> (f32, f32) {
        (
            self.gamma.as_ref().map_or(1.0, |g| g.value[c]),
            self.beta.as_ref().map_or(0.0, |b| b.value[c]),
        )
    }

    /// Normalise with running statistics.
    pub fn forward_eval(&self, x: &mut Tensor) {
        let [n, c, h, w] = x.shape();
        let hw = h * w;
        for i in 0..n {
            let s = x.sample_mut(i);
            for ch in 0..c {
                let inv = 1.0 / (self.running_var[ch] + self.eps).sqrt();
                let (g, b) = self.affine(ch);
                let (scale, shift) = (g * inv, b - g * inv * self.running_mean[ch]);
                for v in &mut s[ch * hw..(ch + 1) * hw] {
                    *v = *v * scale + shift;
                }
            }
        }
    }

    /// Normalise with batch statistics. Running estimates are left alone;
    /// fold them in afterwards with [`BatchNorm2d::update_running`].
    pub fn forward_train(&self, x: &mut Tensor) -> BnCache {
        let [n, c, h, w] = x.shape();
        let hw = h * w;
        let m = (n * hw) as f64;
        let mut inv_std = vec![0f32; c];
        let mut means = vec![0f64; c];
        let mut vars = vec![0f64; c];
        for ch in 0..c {
            let mut sum = 0.0f64;
            for i in 0..n {
                sum += x.sample(i)[ch * hw..(ch + 1) * hw].iter().map(|&v| v as f64).sum::<f64>();
            }
            let mean = sum / m;
            let mut sq = 0.0f64;
            for i in 0..n {
                sq += x.sample(i)[ch * hw..(ch + 1) * hw]
                    .iter()
                    .map(|&v| (v as f64 - mean).powi(2))
                    .sum::<f64>();
            }
            let var = sq / m;
            let inv = 1.0 / (var + self.eps as f64).sqrt();
            inv_std[ch] = inv as f32;
            means[ch] = mean;
            vars[ch] = var;
            for i in 0..n {
                for v in &mut x.sample_mut(i)[ch * hw..(ch + 1) * hw] {
                    *v = ((*v as f64 - mean) * inv) as f32;
                }
            }
        }
        let xhat = x.clone();
        if self.gamma.is_some() {
            for i in 0..n {
                let s = x.sample_mut(i);
                for ch in 0..c {
                    let (g, b) = self.affine(ch);
                    for v in &mut s[ch * hw..(ch + 1) * hw] {
                        *v = *v * g + b;
                    }
                }
            }
        }
        BnCache {
            xhat,
            inv_std,
            mean: means,
            var: vars,
            count: n * hw,
        }
    }

    /// Exponential moving average of the batch statistics (unbiased variance).
    pub fn update_running(&mut self, cache: &BnCache) {
        let mo = self.momentum;
        let m = cache.count as f64;
        for ch in 0..self.channels {
            let var = cache.var[ch];
            let unbiased = if m > 1.0 { var * m / (m - 1.0) } else { var };
            self.running_mean[ch] = (1.0 - mo) * self.running_mean[ch] + mo * cache.mean[ch] as f32;
            self.running_var[ch] = (1.0 - mo) * self.running_var[ch] + mo * unbiased as f32;
        }
    }

    pub fn backward(&mut self, cache: &BnCache, dy: &mut Tensor) {
        let [n, c, h, w] = dy.shape();
        let hw = h * w;
        let m = (n * hw) as f64;
        for ch in 0..c {
            let (g, _) = self.affine(ch);
            let (mut sum_dy, mut sum_dy_xhat) = (0.0f64, 0.0f64);
            for i in 0..n {
                let d = &dy.sample(i)[ch * hw..(ch + 1) * hw];
                let xh = &cache.xhat.sample(i)[ch * hw..(ch + 1) * hw];
                for (&a, &b) in d.iter().zip(xh) {
                    sum_dy += a as f64;
                    sum_dy_xhat += a as f64 * b as f64;
                }
            }
            if let Some(gamma) = self.gamma.as_mut() {
                gamma.grad_mut()[ch] += sum_dy_xhat as f32;
            }
            if let Some(beta) = self.beta.as_mut() {
                beta.grad_mut()[ch] += sum_dy as f32;
            }
            let scale = g as f64 * cache.inv_std[ch] as f64 / m;
            let (mean_dy, mean_dy_xhat) = (sum_dy, sum_dy_xhat);
            for i in 0..n {
                let xh = &cache.xhat.sample(i)[ch * hw..(ch + 1) * hw];
                let d = &mut dy.sample_mut(i)[ch * hw..(ch + 1) * hw];
                for (a, &b) in d.iter_mut().zip(xh) {
                    *a = (scale * (m * *a as f64 - mean_dy - b as f64 * mean_dy_xhat)) as f32;
                }
            }
        }
    }
}
