//! Minimal CPU neural-network building blocks with hand-written backward
//! passes: 3x3 convolution, batch normalization, ReLU, 2x2 max pooling,
//! global average pooling, dropout and dense layers, plus Adam.
//!
//! Activations are NCHW `f64` tensors. Batch-level work is split per sample
//! and reduced in sample order so results do not depend on thread count.

use rand::RngExt;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

pub type NnRng = ChaCha8Rng;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(n: usize, c: usize, h: usize, w: usize) -> Self {
        Tensor {
            n,
            c,
            h,
            w,
            data: vec![0.0; n * c * h * w],
        }
    }

    pub fn from_vec(n: usize, c: usize, h: usize, w: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), n * c * h * w, "tensor data length");
        Tensor { n, c, h, w, data }
    }

    pub fn sample_len(&self) -> usize {
        self.c * self.h * self.w
    }

    pub fn sample(&self, i: usize) -> &[f64] {
        let l = self.sample_len();
        &self.data[i * l..(i + 1) * l]
    }

    /// Treat each sample as a flat feature vector.
    pub fn flat(n: usize, features: usize, data: Vec<f64>) -> Self {
        Tensor::from_vec(n, features, 1, 1, data)
    }

    /// Concatenate flat feature tensors along the feature axis.
    pub fn concat_features(parts: &[Tensor]) -> Tensor {
        let n = parts[0].n;
        let total: usize = parts.iter().map(|p| p.sample_len()).sum();
        let mut data = Vec::with_capacity(n * total);
        for i in 0..n {
            for p in parts {
                data.extend_from_slice(p.sample(i));
            }
        }
        Tensor::flat(n, total, data)
    }

    /// Inverse of [`Tensor::concat_features`].
    pub fn split_features(&self, sizes: &[usize]) -> Vec<Tensor> {
        let mut out: Vec<Vec<f64>> = sizes.iter().map(|&s| Vec::with_capacity(s * self.n)).collect();
        for i in 0..self.n {
            let row = self.sample(i);
            let mut at = 0;
            for (k, &s) in sizes.iter().enumerate() {
                out[k].extend_from_slice(&row[at..at + s]);
                at += s;
            }
        }
        out.into_iter()
            .zip(sizes)
            .map(|(d, &s)| Tensor::flat(self.n, s, d))
            .collect()
    }
}

/// A trainable tensor with its gradient accumulator.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub shape: Vec<usize>,
    pub value: Vec<f64>,
    pub grad: Vec<f64>,
}

impl Param {
    fn new(name: String, shape: Vec<usize>, value: Vec<f64>) -> Self {
        let len = value.len();
        debug_assert_eq!(len, shape.iter().product::<usize>());
        Param {
            name,
            shape,
            value,
            grad: vec![0.0; len],
        }
    }

    fn glorot(name: String, shape: Vec<usize>, fan_in: usize, fan_out: usize, rng: &mut NnRng) -> Self {
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let len = shape.iter().product();
        let value = (0..len).map(|_| rng.random_range(-limit..limit)).collect();
        Param::new(name, shape, value)
    }

    fn constant(name: String, len: usize, v: f64) -> Self {
        Param::new(name, vec![len], vec![v; len])
    }

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = 0.0);
    }
}

/// Named non-trainable state (batch-norm running statistics).
#[derive(Debug, Clone, PartialEq)]
pub struct Buffer {
    pub name: String,
    pub value: Vec<f64>,
}

#[inline]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (isize, isize),
    b: &[f64],
    (rsb, csb): (isize, isize),
    beta: f64,
    c: &mut [f64],
) {
    debug_assert!(c.len() >= m * n);
    // SAFETY: strides describe in-bounds views of `a` (m x k), `b` (k x n)
    // and row-major `c` (m x n); callers size the buffers accordingly.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// 3x3 convolution, stride 1, zero padding 1, no bias (always followed by
/// batch normalization).
#[derive(Debug, Clone)]
pub struct Conv3x3 {
    pub weight: Param,
    in_ch: usize,
    out_ch: usize,
    cache: Option<Tensor>,
}

impl Conv3x3 {
    pub fn new(name: &str, in_ch: usize, out_ch: usize, rng: &mut NnRng) -> Self {
        Conv3x3 {
            weight: Param::glorot(
                format!("{name}.weight"),
                vec![out_ch, in_ch, 3, 3],
                in_ch * 9,
                out_ch * 9,
                rng,
            ),
            in_ch,
            out_ch,
            cache: None,
        }
    }

    fn im2col(&self, x: &[f64], h: usize, w: usize, col: &mut [f64]) {
        let hw = h * w;
        for ci in 0..self.in_ch {
            let plane = &x[ci * hw..(ci + 1) * hw];
            for ky in 0..3 {
                for kx in 0..3 {
                    let row = &mut col[((ci * 9) + ky * 3 + kx) * hw..][..hw];
                    for y in 0..h {
                        let sy = y as isize + ky as isize - 1;
                        let dst = &mut row[y * w..(y + 1) * w];
                        if sy < 0 || sy >= h as isize {
                            dst.iter_mut().for_each(|v| *v = 0.0);
                            continue;
                        }
                        let src = &plane[sy as usize * w..(sy as usize + 1) * w];
                        match kx {
                            0 => {
                                dst[0] = 0.0;
                                dst[1..].copy_from_slice(&src[..w - 1]);
                            }
                            1 => dst.copy_from_slice(src),
                            _ => {
                                dst[..w - 1].copy_from_slice(&src[1..]);
                                dst[w - 1] = 0.0;
                            }
                        }
                    }
                }
            }
        }
    }

    fn col2im(&self, col: &[f64], h: usize, w: usize, dx: &mut [f64]) {
        let hw = h * w;
        for ci in 0..self.in_ch {
            let plane = &mut dx[ci * hw..(ci + 1) * hw];
            for ky in 0..3 {
                for kx in 0..3 {
                    let row = &col[((ci * 9) + ky * 3 + kx) * hw..][..hw];
                    for y in 0..h {
                        let sy = y as isize + ky as isize - 1;
                        if sy < 0 || sy >= h as isize {
                            continue;
                        }
                        let src = &row[y * w..(y + 1) * w];
                        let dst = &mut plane[sy as usize * w..(sy as usize + 1) * w];
                        match kx {
                            0 => dst[..w - 1]
                                .iter_mut()
                                .zip(&src[1..])
                                .for_each(|(d, s)| *d += s),
                            1 => dst.iter_mut().zip(src).for_each(|(d, s)| *d += s),
                            _ => dst[1..]
                                .iter_mut()
                                .zip(&src[..w - 1])
                                .for_each(|(d, s)| *d += s),
                        }
                    }
                }
            }
        }
    }

    fn forward_sample(&self, x: &[f64], h: usize, w: usize, out: &mut [f64]) {
        let hw = h * w;
        let k = self.in_ch * 9;
        let mut col = vec![0.0; k * hw];
        self.im2col(x, h, w, &mut col);
        gemm(
            self.out_ch,
            k,
            hw,
            &self.weight.value,
            (k as isize, 1),
            &col,
            (hw as isize, 1),
            0.0,
            out,
        );
    }

    pub fn infer(&self, x: &Tensor) -> Tensor {
        assert_eq!(x.c, self.in_ch, "conv input channels");
        let mut out = Tensor::zeros(x.n, self.out_ch, x.h, x.w);
        let in_len = x.sample_len();
        let out_len = out.sample_len();
        out.data
            .par_chunks_mut(out_len)
            .zip(x.data.par_chunks(in_len))
            .for_each(|(o, xi)| self.forward_sample(xi, x.h, x.w, o));
        out
    }

    fn forward(&mut self, x: Tensor) -> Tensor {
        let out = self.infer(&x);
        self.cache = Some(x);
        out
    }

    fn backward(&mut self, dy: Tensor, need_dx: bool) -> Option<Tensor> {
        let x = self.cache.take().expect("conv backward without forward");
        let (h, w) = (x.h, x.w);
        let hw = h * w;
        let k = self.in_ch * 9;
        let in_len = x.sample_len();
        let out_len = dy.sample_len();
        let weight = &self.weight.value;
        let per_sample: Vec<(Vec<f64>, Option<Vec<f64>>)> = x
            .data
            .par_chunks(in_len)
            .zip(dy.data.par_chunks(out_len))
            .map(|(xi, dyi)| {
                let mut col = vec![0.0; k * hw];
                self.im2col(xi, h, w, &mut col);
                let mut dw = vec![0.0; self.out_ch * k];
                // dW = dY (O x HW) * col^T (HW x K)
                gemm(
                    self.out_ch,
                    hw,
                    k,
                    dyi,
                    (hw as isize, 1),
                    &col,
                    (1, hw as isize),
                    0.0,
                    &mut dw,
                );
                let dx = need_dx.then(|| {
                    // dcol = W^T (K x O) * dY (O x HW)
                    gemm(
                        k,
                        self.out_ch,
                        hw,
                        weight,
                        (1, k as isize),
                        dyi,
                        (hw as isize, 1),
                        0.0,
                        &mut col,
                    );
                    let mut dx = vec![0.0; in_len];
                    self.col2im(&col, h, w, &mut dx);
                    dx
                });
                (dw, dx)
            })
            .collect();
        let mut dx_all = need_dx.then(|| Vec::with_capacity(x.data.len()));
        for (dw, dx) in per_sample {
            self.weight
                .grad
                .iter_mut()
                .zip(&dw)
                .for_each(|(g, d)| *g += d);
            if let (Some(all), Some(dx)) = (dx_all.as_mut(), dx) {
                all.extend_from_slice(&dx);
            }
        }
        dx_all.map(|d| Tensor::from_vec(x.n, x.c, x.h, x.w, d))
    }
}

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// Batch normalization over N, H, W per channel. Also serves dense layers,
/// whose outputs are `N x C x 1 x 1`.
#[derive(Debug, Clone)]
pub struct BatchNorm {
    pub gamma: Param,
    pub beta: Param,
    pub running_mean: Buffer,
    pub running_var: Buffer,
    cache: Option<(Tensor, Vec<f64>)>,
}

impl BatchNorm {
    pub fn new(name: &str, channels: usize) -> Self {
        BatchNorm {
            gamma: Param::constant(format!("{name}.gamma"), channels, 1.0),
            beta: Param::constant(format!("{name}.beta"), channels, 0.0),
            running_mean: Buffer {
                name: format!("{name}.running_mean"),
                value: vec![0.0; channels],
            },
            running_var: Buffer {
                name: format!("{name}.running_var"),
                value: vec![1.0; channels],
            },
            cache: None,
        }
    }

    pub fn infer(&self, x: &Tensor) -> Tensor {
        let hw = x.h * x.w;
        let mut out = x.clone();
        for i in 0..x.n {
            for c in 0..x.c {
                let scale = self.gamma.value[c] / (self.running_var.value[c] + BN_EPS).sqrt();
                let shift = self.beta.value[c] - self.running_mean.value[c] * scale;
                let base = (i * x.c + c) * hw;
                out.data[base..base + hw]
                    .iter_mut()
                    .for_each(|v| *v = *v * scale + shift);
            }
        }
        out
    }

    fn forward(&mut self, mut x: Tensor) -> Tensor {
        let hw = x.h * x.w;
        let m = (x.n * hw) as f64;
        let mut xhat = Tensor::zeros(x.n, x.c, x.h, x.w);
        let mut inv_std = vec![0.0; x.c];
        for c in 0..x.c {
            let mut sum = 0.0;
            for i in 0..x.n {
                let base = (i * x.c + c) * hw;
                sum += x.data[base..base + hw].iter().sum::<f64>();
            }
            let mean = sum / m;
            let mut sq = 0.0;
            for i in 0..x.n {
                let base = (i * x.c + c) * hw;
                sq += x.data[base..base + hw]
                    .iter()
                    .map(|v| (v - mean) * (v - mean))
                    .sum::<f64>();
            }
            let var = sq / m;
            let istd = 1.0 / (var + BN_EPS).sqrt();
            inv_std[c] = istd;
            let (g, b) = (self.gamma.value[c], self.beta.value[c]);
            for i in 0..x.n {
                let base = (i * x.c + c) * hw;
                for j in base..base + hw {
                    let xh = (x.data[j] - mean) * istd;
                    xhat.data[j] = xh;
                    x.data[j] = g * xh + b;
                }
            }
            let unbiased = if m > 1.0 { var * m / (m - 1.0) } else { var };
            let rm = &mut self.running_mean.value[c];
            *rm = (1.0 - BN_MOMENTUM) * *rm + BN_MOMENTUM * mean;
            let rv = &mut self.running_var.value[c];
            *rv = (1.0 - BN_MOMENTUM) * *rv + BN_MOMENTUM * unbiased;
        }
        self.cache = Some((xhat, inv_std));
        x
    }

    fn backward(&mut self, mut dy: Tensor) -> Tensor {
        let (xhat, inv_std) = self.cache.take().expect("bn backward without forward");
        let hw = dy.h * dy.w;
        let m = (dy.n * hw) as f64;
        for c in 0..dy.c {
            let mut sum_dy = 0.0;
            let mut sum_dy_xhat = 0.0;
            for i in 0..dy.n {
                let base = (i * dy.c + c) * hw;
                for j in base..base + hw {
                    sum_dy += dy.data[j];
                    sum_dy_xhat += dy.data[j] * xhat.data[j];
                }
            }
            self.gamma.grad[c] += sum_dy_xhat;
            self.beta.grad[c] += sum_dy;
            let k = self.gamma.value[c] * inv_std[c] / m;
            for i in 0..dy.n {
                let base = (i * dy.c + c) * hw;
                for j in base..base + hw {
                    dy.data[j] = k * (m * dy.data[j] - sum_dy - xhat.data[j] * sum_dy_xhat);
                }
            }
        }
        dy
    }
}

#[derive(Debug, Clone, Default)]
pub struct Relu {
    mask: Vec<bool>,
}

impl Relu {
    fn forward(&mut self, mut x: Tensor) -> Tensor {
        self.mask = x.data.iter().map(|&v| v > 0.0).collect();
        x.data.iter_mut().for_each(|v| *v = v.max(0.0));
        x
    }

    fn backward(&mut self, mut dy: Tensor) -> Tensor {
        dy.data
            .iter_mut()
            .zip(&self.mask)
            .for_each(|(d, &keep)| {
                if !keep {
                    *d = 0.0
                }
            });
        dy
    }
}

/// 2x2 max pooling with stride 2; odd trailing rows/columns are dropped.
#[derive(Debug, Clone, Default)]
pub struct MaxPool2 {
    argmax: Vec<usize>,
    in_shape: (usize, usize, usize, usize),
}

impl MaxPool2 {
    fn pool(x: &Tensor, mut record: Option<&mut Vec<usize>>) -> Tensor {
        let (oh, ow) = (x.h / 2, x.w / 2);
        let mut out = Tensor::zeros(x.n, x.c, oh, ow);
        for plane in 0..x.n * x.c {
            let src = &x.data[plane * x.h * x.w..(plane + 1) * x.h * x.w];
            for y in 0..oh {
                for xo in 0..ow {
                    let mut best = 2 * y * x.w + 2 * xo;
                    for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                        let idx = (2 * y + dy) * x.w + 2 * xo + dx;
                        if src[idx] > src[best] {
                            best = idx;
                        }
                    }
                    out.data[plane * oh * ow + y * ow + xo] = src[best];
                    if let Some(r) = record.as_deref_mut() {
                        r.push(plane * x.h * x.w + best);
                    }
                }
            }
        }
        out
    }

    pub fn infer(&self, x: &Tensor) -> Tensor {
        Self::pool(x, None)
    }

    fn forward(&mut self, x: Tensor) -> Tensor {
        let mut argmax = Vec::with_capacity(x.n * x.c * (x.h / 2) * (x.w / 2));
        let out = Self::pool(&x, Some(&mut argmax));
        self.argmax = argmax;
        self.in_shape = (x.n, x.c, x.h, x.w);
        out
    }

    fn backward(&mut self, dy: Tensor) -> Tensor {
        let (n, c, h, w) = self.in_shape;
        let mut dx = Tensor::zeros(n, c, h, w);
        for (o, &src) in self.argmax.iter().enumerate() {
            dx.data[src] += dy.data[o];
        }
        dx
    }
}

#[derive(Debug, Clone, Default)]
pub struct GlobalAvgPool {
    in_shape: (usize, usize, usize, usize),
}

impl GlobalAvgPool {
    pub fn infer(&self, x: &Tensor) -> Tensor {
        let hw = x.h * x.w;
        let data = x
            .data
            .chunks(hw)
            .map(|p| p.iter().sum::<f64>() / hw as f64)
            .collect();
        Tensor::from_vec(x.n, x.c, 1, 1, data)
    }

    fn forward(&mut self, x: Tensor) -> Tensor {
        self.in_shape = (x.n, x.c, x.h, x.w);
        self.infer(&x)
    }

    fn backward(&mut self, dy: Tensor) -> Tensor {
        let (n, c, h, w) = self.in_shape;
        let hw = h * w;
        let mut dx = Vec::with_capacity(n * c * hw);
        for &g in &dy.data {
            dx.extend(std::iter::repeat_n(g / hw as f64, hw));
        }
        Tensor::from_vec(n, c, h, w, dx)
    }
}

/// Inverted dropout; identity at inference.
#[derive(Debug, Clone)]
pub struct Dropout {
    pub rate: f64,
    mask: Vec<f64>,
}

impl Dropout {
    pub fn new(rate: f64) -> Self {
        Dropout {
            rate,
            mask: Vec::new(),
        }
    }

    fn forward(&mut self, mut x: Tensor, rng: &mut NnRng) -> Tensor {
        if self.rate <= 0.0 {
            self.mask.clear();
            return x;
        }
        let keep = 1.0 - self.rate;
        self.mask = (0..x.data.len())
            .map(|_| {
                if rng.random::<f64>() < keep {
                    1.0 / keep
                } else {
                    0.0
                }
            })
            .collect();
        x.data.iter_mut().zip(&self.mask).for_each(|(v, m)| *v *= m);
        x
    }

    fn backward(&mut self, mut dy: Tensor) -> Tensor {
        if !self.mask.is_empty() {
            dy.data.iter_mut().zip(&self.mask).for_each(|(v, m)| *v *= m);
        }
        dy
    }
}

/// Dense layer `y = W x (+ b)` over flattened samples.
#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: Param,
    pub bias: Option<Param>,
    in_features: usize,
    out_features: usize,
    cache: Option<Tensor>,
}

impl Linear {
    pub fn new(name: &str, in_features: usize, out_features: usize, bias: bool, rng: &mut NnRng) -> Self {
        Linear {
            weight: Param::glorot(
                format!("{name}.weight"),
                vec![out_features, in_features],
                in_features,
                out_features,
                rng,
            ),
            bias: bias.then(|| Param::constant(format!("{name}.bias"), out_features, 0.0)),
            in_features,
            out_features,
            cache: None,
        }
    }

    pub fn in_features(&self) -> usize {
        self.in_features
    }

    pub fn out_features(&self) -> usize {
        self.out_features
    }

    pub fn infer(&self, x: &Tensor) -> Tensor {
        assert_eq!(x.sample_len(), self.in_features, "linear input width");
        let mut out = vec![0.0; x.n * self.out_features];
        if let Some(b) = &self.bias {
            for row in out.chunks_mut(self.out_features) {
                row.copy_from_slice(&b.value);
            }
        }
        let beta = if self.bias.is_some() { 1.0 } else { 0.0 };
        // Y (N x out) = X (N x in) * W^T (in x out)
        gemm(
            x.n,
            self.in_features,
            self.out_features,
            &x.data,
            (self.in_features as isize, 1),
            &self.weight.value,
            (1, self.in_features as isize),
            beta,
            &mut out,
        );
        Tensor::flat(x.n, self.out_features, out)
    }

    fn forward(&mut self, x: Tensor) -> Tensor {
        let out = self.infer(&x);
        self.cache = Some(x);
        out
    }

    fn backward(&mut self, dy: Tensor, need_dx: bool) -> Option<Tensor> {
        let x = self.cache.take().expect("linear backward without forward");
        // dW (out x in) += dY^T (out x N) * X (N x in)
        gemm(
            self.out_features,
            x.n,
            self.in_features,
            &dy.data,
            (1, self.out_features as isize),
            &x.data,
            (self.in_features as isize, 1),
            1.0,
            &mut self.weight.grad,
        );
        if let Some(b) = &mut self.bias {
            for row in dy.data.chunks(self.out_features) {
                b.grad.iter_mut().zip(row).for_each(|(g, d)| *g += d);
            }
        }
        need_dx.then(|| {
            let mut dx = vec![0.0; x.n * self.in_features];
            gemm(
                x.n,
                self.out_features,
                self.in_features,
                &dy.data,
                (self.out_features as isize, 1),
                &self.weight.value,
                (self.in_features as isize, 1),
                0.0,
                &mut dx,
            );
            Tensor::from_vec(x.n, x.c, x.h, x.w, dx)
        })
    }
}

#[derive(Debug, Clone)]
pub enum Layer {
    Conv(Conv3x3),
    Norm(BatchNorm),
    Relu(Relu),
    Pool(MaxPool2),
    Gap(GlobalAvgPool),
    Dropout(Dropout),
    Linear(Linear),
}

impl Layer {
    pub fn infer(&self, x: &Tensor) -> Tensor {
        match self {
            Layer::Conv(l) => l.infer(x),
            Layer::Norm(l) => l.infer(x),
            Layer::Relu(_) => {
                let mut y = x.clone();
                y.data.iter_mut().for_each(|v| *v = v.max(0.0));
                y
            }
            Layer::Pool(l) => l.infer(x),
            Layer::Gap(l) => l.infer(x),
            Layer::Dropout(_) => x.clone(),
            Layer::Linear(l) => l.infer(x),
        }
    }

    fn forward(&mut self, x: Tensor, rng: &mut NnRng) -> Tensor {
        match self {
            Layer::Conv(l) => l.forward(x),
            Layer::Norm(l) => l.forward(x),
            Layer::Relu(l) => l.forward(x),
            Layer::Pool(l) => l.forward(x),
            Layer::Gap(l) => l.forward(x),
            Layer::Dropout(l) => l.forward(x, rng),
            Layer::Linear(l) => l.forward(x),
        }
    }

    fn backward(&mut self, dy: Tensor, need_dx: bool) -> Option<Tensor> {
        match self {
            Layer::Conv(l) => l.backward(dy, need_dx),
            Layer::Linear(l) => l.backward(dy, need_dx),
            Layer::Norm(l) => Some(l.backward(dy)),
            Layer::Relu(l) => Some(l.backward(dy)),
            Layer::Pool(l) => Some(l.backward(dy)),
            Layer::Gap(l) => Some(l.backward(dy)),
            Layer::Dropout(l) => Some(l.backward(dy)),
        }
    }

    fn params(&self) -> Vec<&Param> {
        match self {
            Layer::Conv(l) => vec![&l.weight],
            Layer::Norm(l) => vec![&l.gamma, &l.beta],
            Layer::Linear(l) => std::iter::once(&l.weight).chain(l.bias.as_ref()).collect(),
            _ => Vec::new(),
        }
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        match self {
            Layer::Conv(l) => vec![&mut l.weight],
            Layer::Norm(l) => vec![&mut l.gamma, &mut l.beta],
            Layer::Linear(l) => std::iter::once(&mut l.weight).chain(l.bias.as_mut()).collect(),
            _ => Vec::new(),
        }
    }

    fn buffers(&self) -> Vec<&Buffer> {
        match self {
            Layer::Norm(l) => vec![&l.running_mean, &l.running_var],
            _ => Vec::new(),
        }
    }

    fn buffers_mut(&mut self) -> Vec<&mut Buffer> {
        match self {
            Layer::Norm(l) => vec![&mut l.running_mean, &mut l.running_var],
            _ => Vec::new(),
        }
    }
}

/// A feed-forward chain of layers.
#[derive(Debug, Clone, Default)]
pub struct Stack {
    pub layers: Vec<Layer>,
}

impl Stack {
    pub fn new(layers: Vec<Layer>) -> Self {
        Stack { layers }
    }

    pub fn infer(&self, x: &Tensor) -> Tensor {
        let mut it = self.layers.iter();
        let first = match it.next() {
            Some(l) => l.infer(x),
            None => return x.clone(),
        };
        it.fold(first, |acc, l| l.infer(&acc))
    }

    /// Training-mode forward: batch statistics, dropout active, caches kept
    /// for [`Stack::backward`].
    pub fn forward(&mut self, x: Tensor, rng: &mut NnRng) -> Tensor {
        self.layers.iter_mut().fold(x, |acc, l| l.forward(acc, rng))
    }

    /// Accumulate parameter gradients; returns the input gradient when asked.
    pub fn backward(&mut self, dy: Tensor, need_input_grad: bool) -> Option<Tensor> {
        let mut grad = dy;
        for (i, layer) in self.layers.iter_mut().enumerate().rev() {
            grad = layer.backward(grad, i > 0 || need_input_grad)?;
        }
        need_input_grad.then_some(grad)
    }

    pub fn params(&self) -> Vec<&Param> {
        self.layers.iter().flat_map(|l| l.params()).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        self.layers.iter_mut().flat_map(|l| l.params_mut()).collect()
    }

    pub fn buffers(&self) -> Vec<&Buffer> {
        self.layers.iter().flat_map(|l| l.buffers()).collect()
    }

    pub fn buffers_mut(&mut self) -> Vec<&mut Buffer> {
        self.layers.iter_mut().flat_map(|l| l.buffers_mut()).collect()
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.value.len()).sum()
    }
}

/// Mean binary cross-entropy on logits and its gradient w.r.t. the logits.
pub fn bce_with_logits(logits: &[f64], targets: &[f64]) -> (f64, Vec<f64>) {
    let n = logits.len() as f64;
    let mut loss = 0.0;
    let grad = logits
        .iter()
        .zip(targets)
        .map(|(&z, &y)| {
            loss += z.max(0.0) - z * y + (-z.abs()).exp().ln_1p();
            (sigmoid(z) - y) / n
        })
        .collect();
    (loss / n, grad)
}

#[inline]
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Adam with bias correction. Moment buffers are matched to parameters by
/// visiting order, which must be stable across steps.
#[derive(Debug, Clone)]
pub struct Adam {
    cfg: AdamConfig,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(cfg: AdamConfig) -> Self {
        Adam {
            cfg,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    /// Apply one update from the accumulated gradients, then clear them.
    pub fn step(&mut self, params: Vec<&mut Param>) {
        if self.m.is_empty() {
            self.m = params.iter().map(|p| vec![0.0; p.value.len()]).collect();
            self.v = self.m.clone();
        }
        assert_eq!(self.m.len(), params.len(), "parameter set changed under Adam");
        self.step += 1;
        let AdamConfig {
            learning_rate,
            beta1,
            beta2,
            epsilon,
        } = self.cfg;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        for ((p, m), v) in params.into_iter().zip(&mut self.m).zip(&mut self.v) {
            for i in 0..p.value.len() {
                let g = p.grad[i];
                m[i] = beta1 * m[i] + (1.0 - beta1) * g;
                v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                p.value[i] -= learning_rate * mhat / (vhat.sqrt() + epsilon);
            }
            p.zero_grad();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn rng() -> NnRng {
        NnRng::seed_from_u64(7)
    }

    fn random_tensor(n: usize, c: usize, h: usize, w: usize, r: &mut NnRng) -> Tensor {
        let data = (0..n * c * h * w).map(|_| r.random_range(-1.0..1.0)).collect();
        Tensor::from_vec(n, c, h, w, data)
    }

    #[test]
    fn conv_matches_direct_convolution() {
        let mut r = rng();
        let conv = Conv3x3::new("c", 2, 3, &mut r);
        let x = random_tensor(2, 2, 5, 4, &mut r);
        let y = conv.infer(&x);
        for n in 0..2 {
            for o in 0..3 {
                for yy in 0..5 {
                    for xx in 0..4 {
                        let mut acc = 0.0;
                        for ci in 0..2 {
                            for ky in 0..3 {
                                for kx in 0..3 {
                                    let sy = yy as isize + ky as isize - 1;
                                    let sx = xx as isize + kx as isize - 1;
                                    if sy < 0 || sx < 0 || sy >= 5 || sx >= 4 {
                                        continue;
                                    }
                                    let xv = x.data[((n * 2 + ci) * 5 + sy as usize) * 4 + sx as usize];
                                    let wv = conv.weight.value[((o * 2 + ci) * 3 + ky) * 3 + kx];
                                    acc += xv * wv;
                                }
                            }
                        }
                        let got = y.data[((n * 3 + o) * 5 + yy) * 4 + xx];
                        assert!((got - acc).abs() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn maxpool_routes_gradient_to_argmax() {
        let x = Tensor::from_vec(1, 1, 2, 3, vec![1.0, 5.0, 9.0, 2.0, 3.0, 0.0]);
        let mut p = MaxPool2::default();
        let y = p.forward(x);
        assert_eq!(y.data, vec![5.0]);
        let dx = p.backward(Tensor::from_vec(1, 1, 1, 1, vec![2.0]));
        assert_eq!(dx.data, vec![0.0, 2.0, 0.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn bce_matches_naive_formula() {
        let (l, g) = bce_with_logits(&[0.3, -2.0], &[1.0, 0.0]);
        let naive = -((sigmoid(0.3)).ln() + (1.0 - sigmoid(-2.0)).ln()) / 2.0;
        assert!((l - naive).abs() < 1e-12);
        assert!((g[0] - (sigmoid(0.3) - 1.0) / 2.0).abs() < 1e-12);
        let (big, _) = bce_with_logits(&[800.0], &[0.0]);
        assert!(big.is_finite());
    }

    #[test]
    fn feature_concat_roundtrip() {
        let mut r = rng();
        let a = random_tensor(3, 2, 1, 1, &mut r);
        let b = random_tensor(3, 4, 1, 1, &mut r);
        let cat = Tensor::concat_features(&[a.clone(), b.clone()]);
        assert_eq!(cat.c, 6);
        let parts = cat.split_features(&[2, 4]);
        assert_eq!(parts[0], a);
        assert_eq!(parts[1], b);
    }

    #[test]
    fn adam_first_step_moves_by_learning_rate() {
        let mut p = Param::new("p".into(), vec![2], vec![1.0, -1.0]);
        p.grad = vec![0.5, -3.0];
        let mut adam = Adam::new(AdamConfig {
            learning_rate: 0.01,
            ..Default::default()
        });
        adam.step(vec![&mut p]);
        assert!((p.value[0] - 0.99).abs() < 1e-6);
        assert!((p.value[1] + 0.99).abs() < 1e-6);
        assert_eq!(p.grad, vec![0.0, 0.0]);
    }

    #[test]
    fn batchnorm_train_output_is_standardized() {
        let mut r = rng();
        let mut bn = BatchNorm::new("bn", 3);
        let x = random_tensor(4, 3, 2, 2, &mut r);
        let y = bn.forward(x);
        for c in 0..3 {
            let vals: Vec<f64> = (0..4)
                .flat_map(|i| y.data[(i * 3 + c) * 4..(i * 3 + c) * 4 + 4].to_vec())
                .collect();
            let mean = vals.iter().sum::<f64>() / 16.0;
            assert!(mean.abs() < 1e-12);
        }
    }
}
