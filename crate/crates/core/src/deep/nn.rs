//! Minimal CPU layers with hand-written backward passes: grouped
//! convolution via im2col + GEMM, frozen-statistics batch norm, ReLU, max
//! pooling, ResNeXt bottlenecks, adaptive average pooling and dense layers.

use rand::Rng;
use rand_distr::{Distribution, Normal};

/// A batch of feature maps in NCHW order.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<f32>,
}

impl Tensor {
    pub fn zeros(n: usize, c: usize, h: usize, w: usize) -> Self {
        Self {
            n,
            c,
            h,
            w,
            data: vec![0.0; n * c * h * w],
        }
    }

    fn plane(&self) -> usize {
        self.h * self.w
    }

    fn add_assign(&mut self, other: &Tensor) {
        debug_assert_eq!(self.data.len(), other.data.len());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }
}

/// A named weight or buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

impl Param {
    pub fn zeros(shape: &[usize]) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn filled(shape: &[usize], v: f32) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![v; shape.iter().product()],
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(&self.shape)
    }
}

/// Visits parameters by name; the flag is true for trainable weights and
/// false for statistics buffers.
pub type Visitor<'a> = dyn FnMut(&str, &Param, bool) + 'a;

#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f32],
    rsa: usize,
    csa: usize,
    b: &[f32],
    rsb: usize,
    csb: usize,
    c: &mut [f32],
    rsc: usize,
    beta: f32,
) {
    if m == 0 || n == 0 {
        return;
    }
    debug_assert!(c.len() >= (m - 1) * rsc + n);
    // SAFETY: every caller passes slices covering the addressed extents of
    // the strided m x k, k x n and m x n matrices.
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            rsc as isize,
            1,
        );
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d {
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub groups: usize,
    /// `[out_ch, in_ch / groups, kernel, kernel]`
    pub weight: Param,
    pub bias: Option<Param>,
}

impl Conv2d {
    pub fn new(in_ch: usize, out_ch: usize, kernel: usize, stride: usize, padding: usize, groups: usize, bias: bool) -> Self {
        assert!(in_ch % groups == 0 && out_ch % groups == 0, "channels must divide into groups");
        Self {
            in_ch,
            out_ch,
            kernel,
            stride,
            padding,
            groups,
            weight: Param::zeros(&[out_ch, in_ch / groups, kernel, kernel]),
            bias: bias.then(|| Param::zeros(&[out_ch])),
        }
    }

    /// He-normal weights (fan-in), zero bias.
    pub fn init_he<R: Rng>(&mut self, rng: &mut R) {
        let fan_in = (self.in_ch / self.groups) * self.kernel * self.kernel;
        let normal = Normal::new(0.0f32, (2.0 / fan_in as f32).sqrt()).expect("positive std");
        self.weight.data.iter_mut().for_each(|w| *w = normal.sample(rng));
    }

    pub fn out_size(&self, h: usize, w: usize) -> (usize, usize) {
        let f = |s: usize| (s + 2 * self.padding).saturating_sub(self.kernel) / self.stride + 1;
        (f(h), f(w))
    }

    fn k_len(&self) -> usize {
        (self.in_ch / self.groups) * self.kernel * self.kernel
    }

    /// Column matrix `[K, N * P]` of group `g`.
    fn im2col(&self, x: &Tensor, g: usize, oh: usize, ow: usize, col: &mut [f32]) {
        let cin_g = self.in_ch / self.groups;
        let (k, s, pad) = (self.kernel, self.stride, self.padding as isize);
        let p = oh * ow;
        let np = x.n * p;
        for ci in 0..cin_g {
            let ch = g * cin_g + ci;
            for ky in 0..k {
                for kx in 0..k {
                    let row = (ci * k + ky) * k + kx;
                    let dst = &mut col[row * np..(row + 1) * np];
                    for n in 0..x.n {
                        let src = &x.data[(n * x.c + ch) * x.plane()..(n * x.c + ch + 1) * x.plane()];
                        let out = &mut dst[n * p..(n + 1) * p];
                        for oy in 0..oh {
                            let iy = (oy * s + ky) as isize - pad;
                            let orow = &mut out[oy * ow..(oy + 1) * ow];
                            if iy < 0 || iy >= x.h as isize {
                                orow.iter_mut().for_each(|v| *v = 0.0);
                                continue;
                            }
                            let srow = &src[iy as usize * x.w..(iy as usize + 1) * x.w];
                            for (ox, o) in orow.iter_mut().enumerate() {
                                let ix = (ox * s + kx) as isize - pad;
                                *o = if ix < 0 || ix >= x.w as isize { 0.0 } else { srow[ix as usize] };
                            }
                        }
                    }
                }
            }
        }
    }

    fn col2im(&self, col: &[f32], g: usize, oh: usize, ow: usize, dx: &mut Tensor) {
        let cin_g = self.in_ch / self.groups;
        let (k, s, pad) = (self.kernel, self.stride, self.padding as isize);
        let p = oh * ow;
        let np = dx.n * p;
        let plane = dx.plane();
        for ci in 0..cin_g {
            let ch = g * cin_g + ci;
            for ky in 0..k {
                for kx in 0..k {
                    let row = (ci * k + ky) * k + kx;
                    let src = &col[row * np..(row + 1) * np];
                    for n in 0..dx.n {
                        let base = (n * dx.c + ch) * plane;
                        for oy in 0..oh {
                            let iy = (oy * s + ky) as isize - pad;
                            if iy < 0 || iy >= dx.h as isize {
                                continue;
                            }
                            for ox in 0..ow {
                                let ix = (ox * s + kx) as isize - pad;
                                if ix >= 0 && ix < dx.w as isize {
                                    dx.data[base + iy as usize * dx.w + ix as usize] += src[n * p + oy * ow + ox];
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    pub fn forward(&self, x: &Tensor) -> Tensor {
        assert_eq!(x.c, self.in_ch, "conv input channels");
        let (oh, ow) = self.out_size(x.h, x.w);
        let p = oh * ow;
        let np = x.n * p;
        let kl = self.k_len();
        let cout_g = self.out_ch / self.groups;
        let mut out = Tensor::zeros(x.n, self.out_ch, oh, ow);
        let mut col = vec![0f32; kl * np];
        let mut tmp = vec![0f32; cout_g * np];
        for g in 0..self.groups {
            self.im2col(x, g, oh, ow, &mut col);
            let wg = &self.weight.data[g * cout_g * kl..(g + 1) * cout_g * kl];
            gemm(cout_g, kl, np, wg, kl, 1, &col, np, 1, &mut tmp, np, 0.0);
            for co in 0..cout_g {
                let oc = g * cout_g + co;
                let b = self.bias.as_ref().map_or(0.0, |b| b.data[oc]);
                for n in 0..x.n {
                    let dst = &mut out.data[(n * self.out_ch + oc) * p..(n * self.out_ch + oc + 1) * p];
                    let src = &tmp[co * np + n * p..co * np + (n + 1) * p];
                    for (d, s) in dst.iter_mut().zip(src) {
                        *d = s + b;
                    }
                }
            }
        }
        out
    }

    /// Accumulates weight gradients into `grad`; returns the input gradient
    /// when asked for.
    pub fn backward(&self, x: &Tensor, dy: &Tensor, grad: &mut Conv2d, need_dx: bool) -> Option<Tensor> {
        let (oh, ow) = (dy.h, dy.w);
        let p = oh * ow;
        let np = x.n * p;
        let kl = self.k_len();
        let cout_g = self.out_ch / self.groups;
        let mut col = vec![0f32; kl * np];
        let mut d = vec![0f32; cout_g * np];
        let mut dcol = if need_dx { vec![0f32; kl * np] } else { Vec::new() };
        let mut dx = need_dx.then(|| Tensor::zeros(x.n, x.c, x.h, x.w));
        for g in 0..self.groups {
            for co in 0..cout_g {
                let oc = g * cout_g + co;
                for n in 0..x.n {
                    d[co * np + n * p..co * np + (n + 1) * p]
                        .copy_from_slice(&dy.data[(n * self.out_ch + oc) * p..(n * self.out_ch + oc + 1) * p]);
                }
                if let Some(b) = grad.bias.as_mut() {
                    b.data[oc] += d[co * np..(co + 1) * np].iter().sum::<f32>();
                }
            }
            self.im2col(x, g, oh, ow, &mut col);
            let gw = &mut grad.weight.data[g * cout_g * kl..(g + 1) * cout_g * kl];
            gemm(cout_g, np, kl, &d, np, 1, &col, 1, np, gw, kl, 1.0);
            if let Some(dx) = dx.as_mut() {
                let wg = &self.weight.data[g * cout_g * kl..(g + 1) * cout_g * kl];
                gemm(kl, cout_g, np, wg, 1, kl, &d, np, 1, &mut dcol, np, 0.0);
                self.col2im(&dcol, g, oh, ow, dx);
            }
        }
        dx
    }

    fn visit(&self, name: &str, f: &mut Visitor<'_>) {
        f(&format!("{name}.weight"), &self.weight, true);
        if let Some(b) = &self.bias {
            f(&format!("{name}.bias"), b, true);
        }
    }

    fn trainable_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Param>) {
        out.push(&mut self.weight);
        if let Some(b) = self.bias.as_mut() {
            out.push(b);
        }
    }

    fn param_mut(&mut self, suffix: &str) -> Option<&mut Param> {
        match suffix {
            "weight" => Some(&mut self.weight),
            "bias" => self.bias.as_mut(),
            _ => None,
        }
    }

    fn zeros_like(&self) -> Self {
        Self {
            weight: self.weight.zeros_like(),
            bias: self.bias.as_ref().map(Param::zeros_like),
            ..*self
        }
    }
}

/// Batch normalization with fixed running statistics and learnable affine.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm {
    pub weight: Param,
    pub bias: Param,
    pub running_mean: Param,
    pub running_var: Param,
    pub eps: f32,
}

impl BatchNorm {
    pub fn new(c: usize) -> Self {
        Self {
            weight: Param::filled(&[c], 1.0),
            bias: Param::zeros(&[c]),
            running_mean: Param::zeros(&[c]),
            running_var: Param::filled(&[c], 1.0),
            eps: 1e-5,
        }
    }

    fn inv_std(&self, c: usize) -> f32 {
        1.0 / (self.running_var.data[c] + self.eps).sqrt()
    }

    pub fn forward(&self, mut x: Tensor) -> Tensor {
        let plane = x.plane();
        for n in 0..x.n {
            for c in 0..x.c {
                let s = self.weight.data[c] * self.inv_std(c);
                let t = self.bias.data[c] - self.running_mean.data[c] * s;
                x.data[(n * x.c + c) * plane..(n * x.c + c + 1) * plane]
                    .iter_mut()
                    .for_each(|v| *v = *v * s + t);
            }
        }
        x
    }

    pub fn backward(&self, x: &Tensor, mut dy: Tensor, grad: &mut BatchNorm) -> Tensor {
        let plane = x.plane();
        for n in 0..x.n {
            for c in 0..x.c {
                let inv = self.inv_std(c);
                let mean = self.running_mean.data[c];
                let r = (n * x.c + c) * plane..(n * x.c + c + 1) * plane;
                let (mut dg, mut db) = (0f32, 0f32);
                for (d, v) in dy.data[r.clone()].iter().zip(&x.data[r.clone()]) {
                    dg += d * (v - mean) * inv;
                    db += d;
                }
                grad.weight.data[c] += dg;
                grad.bias.data[c] += db;
                let s = self.weight.data[c] * inv;
                dy.data[r].iter_mut().for_each(|d| *d *= s);
            }
        }
        dy
    }

    fn visit(&self, name: &str, f: &mut Visitor<'_>) {
        f(&format!("{name}.weight"), &self.weight, true);
        f(&format!("{name}.bias"), &self.bias, true);
        f(&format!("{name}.running_mean"), &self.running_mean, false);
        f(&format!("{name}.running_var"), &self.running_var, false);
    }

    fn trainable_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Param>) {
        out.push(&mut self.weight);
        out.push(&mut self.bias);
    }

    fn param_mut(&mut self, suffix: &str) -> Option<&mut Param> {
        match suffix {
            "weight" => Some(&mut self.weight),
            "bias" => Some(&mut self.bias),
            "running_mean" => Some(&mut self.running_mean),
            "running_var" => Some(&mut self.running_var),
            _ => None,
        }
    }

    fn zeros_like(&self) -> Self {
        Self {
            weight: self.weight.zeros_like(),
            bias: self.bias.zeros_like(),
            running_mean: self.running_mean.clone(),
            running_var: self.running_var.clone(),
            eps: self.eps,
        }
    }
}

fn relu(mut x: Tensor) -> Tensor {
    x.data.iter_mut().for_each(|v| *v = v.max(0.0));
    x
}

fn relu_backward(y: &Tensor, mut dy: Tensor) -> Tensor {
    for (d, v) in dy.data.iter_mut().zip(&y.data) {
        if *v <= 0.0 {
            *d = 0.0;
        }
    }
    dy
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaxPool {
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl MaxPool {
    fn forward(&self, x: &Tensor) -> (Tensor, Vec<u32>) {
        let f = |s: usize| (s + 2 * self.padding - self.kernel) / self.stride + 1;
        let (oh, ow) = (f(x.h), f(x.w));
        let mut out = Tensor::zeros(x.n, x.c, oh, ow);
        let mut arg = vec![0u32; out.data.len()];
        let pad = self.padding as isize;
        for nc in 0..x.n * x.c {
            let src = &x.data[nc * x.plane()..(nc + 1) * x.plane()];
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = f32::NEG_INFINITY;
                    let mut best_i = 0u32;
                    for ky in 0..self.kernel {
                        let iy = (oy * self.stride + ky) as isize - pad;
                        if iy < 0 || iy >= x.h as isize {
                            continue;
                        }
                        for kx in 0..self.kernel {
                            let ix = (ox * self.stride + kx) as isize - pad;
                            if ix < 0 || ix >= x.w as isize {
                                continue;
                            }
                            let i = iy as usize * x.w + ix as usize;
                            if src[i] > best {
                                best = src[i];
                                best_i = i as u32;
                            }
                        }
                    }
                    let o = nc * oh * ow + oy * ow + ox;
                    out.data[o] = best;
                    arg[o] = best_i;
                }
            }
        }
        (out, arg)
    }

    fn backward(arg: &[u32], shape: (usize, usize, usize, usize), dy: &Tensor) -> Tensor {
        let (n, c, h, w) = shape;
        let mut dx = Tensor::zeros(n, c, h, w);
        let op = dy.plane();
        for nc in 0..n * c {
            for j in 0..op {
                dx.data[nc * h * w + arg[nc * op + j] as usize] += dy.data[nc * op + j];
            }
        }
        dx
    }
}

/// ResNeXt bottleneck: 1x1 reduce, grouped 3x3 (carrying the stride),
/// 1x1 expand, plus an identity or projected shortcut.
#[derive(Debug, Clone, PartialEq)]
pub struct Bottleneck {
    pub conv1: Conv2d,
    pub bn1: BatchNorm,
    pub conv2: Conv2d,
    pub bn2: BatchNorm,
    pub conv3: Conv2d,
    pub bn3: BatchNorm,
    pub downsample: Option<(Conv2d, BatchNorm)>,
}

#[derive(Debug)]
pub struct BottleneckCache {
    x: Tensor,
    c1: Tensor,
    r1: Tensor,
    c2: Tensor,
    r2: Tensor,
    c3: Tensor,
    ds: Option<Tensor>,
    out: Tensor,
}

impl Bottleneck {
    pub fn new(in_ch: usize, width: usize, out_ch: usize, stride: usize, groups: usize) -> Self {
        let downsample = (stride != 1 || in_ch != out_ch)
            .then(|| (Conv2d::new(in_ch, out_ch, 1, stride, 0, 1, false), BatchNorm::new(out_ch)));
        Self {
            conv1: Conv2d::new(in_ch, width, 1, 1, 0, 1, false),
            bn1: BatchNorm::new(width),
            conv2: Conv2d::new(width, width, 3, stride, 1, groups, false),
            bn2: BatchNorm::new(width),
            conv3: Conv2d::new(width, out_ch, 1, 1, 0, 1, false),
            bn3: BatchNorm::new(out_ch),
            downsample,
        }
    }

    fn forward(&self, x: Tensor, keep: bool) -> (Tensor, Option<Box<BottleneckCache>>) {
        let c1 = self.conv1.forward(&x);
        let r1 = relu(self.bn1.forward(c1.clone()));
        let c2 = self.conv2.forward(&r1);
        let r2 = relu(self.bn2.forward(c2.clone()));
        let c3 = self.conv3.forward(&r2);
        let mut s = self.bn3.forward(c3.clone());
        let ds = match &self.downsample {
            Some((conv, bn)) => {
                let d = conv.forward(&x);
                s.add_assign(&bn.forward(d.clone()));
                Some(d)
            }
            None => {
                s.add_assign(&x);
                None
            }
        };
        let out = relu(s);
        if keep {
            let cache = BottleneckCache {
                x,
                c1,
                r1,
                c2,
                r2,
                c3,
                ds,
                out: out.clone(),
            };
            (out, Some(Box::new(cache)))
        } else {
            (out, None)
        }
    }

    fn backward(&self, cache: BottleneckCache, dy: Tensor, grad: &mut Bottleneck, need_dx: bool) -> Option<Tensor> {
        let ds_grad = relu_backward(&cache.out, dy);
        let d = self.bn3.backward(&cache.c3, ds_grad.clone(), &mut grad.bn3);
        let d = self.conv3.backward(&cache.r2, &d, &mut grad.conv3, true).expect("dx requested");
        let d = self.bn2.backward(&cache.c2, relu_backward(&cache.r2, d), &mut grad.bn2);
        let d = self.conv2.backward(&cache.r1, &d, &mut grad.conv2, true).expect("dx requested");
        let d = self.bn1.backward(&cache.c1, relu_backward(&cache.r1, d), &mut grad.bn1);
        let dx_main = self.conv1.backward(&cache.x, &d, &mut grad.conv1, need_dx);
        let dx_short = match (&self.downsample, &mut grad.downsample) {
            (Some((conv, bn)), Some((gconv, gbn))) => {
                let ds = cache.ds.as_ref().expect("cached projection");
                let d = bn.backward(ds, ds_grad, gbn);
                conv.backward(&cache.x, &d, gconv, need_dx)
            }
            _ => need_dx.then_some(ds_grad),
        };
        match (dx_main, dx_short) {
            (Some(mut a), Some(b)) => {
                a.add_assign(&b);
                Some(a)
            }
            _ => None,
        }
    }

    fn visit(&self, name: &str, f: &mut Visitor<'_>) {
        self.conv1.visit(&format!("{name}.conv1"), f);
        self.bn1.visit(&format!("{name}.bn1"), f);
        self.conv2.visit(&format!("{name}.conv2"), f);
        self.bn2.visit(&format!("{name}.bn2"), f);
        self.conv3.visit(&format!("{name}.conv3"), f);
        self.bn3.visit(&format!("{name}.bn3"), f);
        if let Some((c, b)) = &self.downsample {
            c.visit(&format!("{name}.downsample.0"), f);
            b.visit(&format!("{name}.downsample.1"), f);
        }
    }

    fn trainable_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Param>) {
        self.conv1.trainable_mut(out);
        self.bn1.trainable_mut(out);
        self.conv2.trainable_mut(out);
        self.bn2.trainable_mut(out);
        self.conv3.trainable_mut(out);
        self.bn3.trainable_mut(out);
        if let Some((c, b)) = self.downsample.as_mut() {
            c.trainable_mut(out);
            b.trainable_mut(out);
        }
    }

    fn param_mut(&mut self, path: &str) -> Option<&mut Param> {
        let (head, rest) = path.split_once('.')?;
        match head {
            "conv1" => self.conv1.param_mut(rest),
            "bn1" => self.bn1.param_mut(rest),
            "conv2" => self.conv2.param_mut(rest),
            "bn2" => self.bn2.param_mut(rest),
            "conv3" => self.conv3.param_mut(rest),
            "bn3" => self.bn3.param_mut(rest),
            "downsample" => {
                let (idx, rest) = rest.split_once('.')?;
                let (c, b) = self.downsample.as_mut()?;
                match idx {
                    "0" => c.param_mut(rest),
                    "1" => b.param_mut(rest),
                    _ => None,
                }
            }
            _ => None,
        }
    }

    fn zeros_like(&self) -> Self {
        Self {
            conv1: self.conv1.zeros_like(),
            bn1: self.bn1.zeros_like(),
            conv2: self.conv2.zeros_like(),
            bn2: self.bn2.zeros_like(),
            conv3: self.conv3.zeros_like(),
            bn3: self.bn3.zeros_like(),
            downsample: self.downsample.as_ref().map(|(c, b)| (c.zeros_like(), b.zeros_like())),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Conv(Conv2d),
    Norm(BatchNorm),
    Relu,
    MaxPool(MaxPool),
    Bottleneck(Box<Bottleneck>),
}

#[derive(Debug)]
pub enum Cache {
    Input(Tensor),
    Output(Tensor),
    Pool(Vec<u32>, (usize, usize, usize, usize)),
    Block(Box<BottleneckCache>),
}

impl Layer {
    pub fn forward(&self, x: Tensor, keep: bool) -> (Tensor, Option<Cache>) {
        match self {
            Layer::Conv(c) => {
                let y = c.forward(&x);
                (y, keep.then_some(Cache::Input(x)))
            }
            Layer::Norm(b) => {
                if keep {
                    let y = b.forward(x.clone());
                    (y, Some(Cache::Input(x)))
                } else {
                    (b.forward(x), None)
                }
            }
            Layer::Relu => {
                let y = relu(x);
                let cache = keep.then(|| Cache::Output(y.clone()));
                (y, cache)
            }
            Layer::MaxPool(p) => {
                let (y, arg) = p.forward(&x);
                (y, keep.then_some(Cache::Pool(arg, (x.n, x.c, x.h, x.w))))
            }
            Layer::Bottleneck(b) => {
                let (y, cache) = b.forward(x, keep);
                (y, cache.map(Cache::Block))
            }
        }
    }

    pub fn backward(&self, cache: Cache, dy: Tensor, grad: &mut Layer, need_dx: bool) -> Option<Tensor> {
        match (self, grad, cache) {
            (Layer::Conv(c), Layer::Conv(g), Cache::Input(x)) => c.backward(&x, &dy, g, need_dx),
            (Layer::Norm(b), Layer::Norm(g), Cache::Input(x)) => {
                let dx = b.backward(&x, dy, g);
                need_dx.then_some(dx)
            }
            (Layer::Relu, _, Cache::Output(y)) => need_dx.then(|| relu_backward(&y, dy)),
            (Layer::MaxPool(_), _, Cache::Pool(arg, shape)) => need_dx.then(|| MaxPool::backward(&arg, shape, &dy)),
            (Layer::Bottleneck(b), Layer::Bottleneck(g), Cache::Block(c)) => b.backward(*c, dy, g, need_dx),
            _ => panic!("layer, gradient and cache kinds disagree"),
        }
    }

    pub fn visit(&self, name: &str, f: &mut Visitor<'_>) {
        match self {
            Layer::Conv(c) => c.visit(name, f),
            Layer::Norm(b) => b.visit(name, f),
            Layer::Bottleneck(b) => b.visit(name, f),
            Layer::Relu | Layer::MaxPool(_) => {}
        }
    }

    pub fn trainable_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Param>) {
        match self {
            Layer::Conv(c) => c.trainable_mut(out),
            Layer::Norm(b) => b.trainable_mut(out),
            Layer::Bottleneck(b) => b.trainable_mut(out),
            Layer::Relu | Layer::MaxPool(_) => {}
        }
    }

    pub fn param_mut(&mut self, suffix: &str) -> Option<&mut Param> {
        match self {
            Layer::Conv(c) => c.param_mut(suffix),
            Layer::Norm(b) => b.param_mut(suffix),
            Layer::Bottleneck(b) => b.param_mut(suffix),
            Layer::Relu | Layer::MaxPool(_) => None,
        }
    }

    pub fn zeros_like(&self) -> Self {
        match self {
            Layer::Conv(c) => Layer::Conv(c.zeros_like()),
            Layer::Norm(b) => Layer::Norm(b.zeros_like()),
            Layer::Bottleneck(b) => Layer::Bottleneck(Box::new(b.zeros_like())),
            Layer::Relu => Layer::Relu,
            Layer::MaxPool(p) => Layer::MaxPool(*p),
        }
    }
}

/// Average pooling onto a fixed `out_h x out_w` grid, flattened per sample
/// in channel-major order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AdaptiveAvgPool {
    pub out_h: usize,
    pub out_w: usize,
}

impl AdaptiveAvgPool {
    fn bins(len: usize, out: usize) -> Vec<(usize, usize)> {
        (0..out)
            .map(|i| ((i * len) / out, ((i + 1) * len).div_ceil(out)))
            .collect()
    }

    pub fn features(&self, c: usize) -> usize {
        c * self.out_h * self.out_w
    }

    /// Returns `[n, c * out_h * out_w]` row-major.
    pub fn forward(&self, x: &Tensor) -> Vec<f32> {
        let (by, bx) = (Self::bins(x.h, self.out_h), Self::bins(x.w, self.out_w));
        let mut out = Vec::with_capacity(x.n * self.features(x.c));
        for nc in 0..x.n * x.c {
            let src = &x.data[nc * x.plane()..(nc + 1) * x.plane()];
            for &(y0, y1) in &by {
                for &(x0, x1) in &bx {
                    let mut s = 0f32;
                    for yy in y0..y1 {
                        s += src[yy * x.w + x0..yy * x.w + x1].iter().sum::<f32>();
                    }
                    out.push(s / ((y1 - y0) * (x1 - x0)) as f32);
                }
            }
        }
        out
    }

    pub fn backward(&self, shape: (usize, usize, usize, usize), dy: &[f32]) -> Tensor {
        let (n, c, h, w) = shape;
        let (by, bx) = (Self::bins(h, self.out_h), Self::bins(w, self.out_w));
        let mut dx = Tensor::zeros(n, c, h, w);
        let mut k = 0;
        for nc in 0..n * c {
            let dst = &mut dx.data[nc * h * w..(nc + 1) * h * w];
            for &(y0, y1) in &by {
                for &(x0, x1) in &bx {
                    let g = dy[k] / ((y1 - y0) * (x1 - x0)) as f32;
                    k += 1;
                    for yy in y0..y1 {
                        dst[yy * w + x0..yy * w + x1].iter_mut().for_each(|v| *v += g);
                    }
                }
            }
        }
        dx
    }
}

/// Dense layer, weight `[out, in]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub in_features: usize,
    pub out_features: usize,
    pub weight: Param,
    pub bias: Param,
}

impl Linear {
    /// Uniform init in `+-1/sqrt(in)` for weights and bias.
    pub fn new<R: Rng>(in_features: usize, out_features: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (in_features as f32).sqrt();
        let mut weight = Param::zeros(&[out_features, in_features]);
        weight.data.iter_mut().for_each(|w| *w = rng.gen_range(-bound..bound));
        let mut bias = Param::zeros(&[out_features]);
        bias.data.iter_mut().for_each(|b| *b = rng.gen_range(-bound..bound));
        Self {
            in_features,
            out_features,
            weight,
            bias,
        }
    }

    pub fn forward(&self, x: &[f32], n: usize) -> Vec<f32> {
        let mut y = vec![0f32; n * self.out_features];
        for row in y.chunks_mut(self.out_features) {
            row.copy_from_slice(&self.bias.data);
        }
        gemm(
            n,
            self.in_features,
            self.out_features,
            x,
            self.in_features,
            1,
            &self.weight.data,
            1,
            self.in_features,
            &mut y,
            self.out_features,
            1.0,
        );
        y
    }

    pub fn backward(&self, x: &[f32], dy: &[f32], n: usize, grad: &mut Linear) -> Vec<f32> {
        gemm(
            self.out_features,
            n,
            self.in_features,
            dy,
            1,
            self.out_features,
            x,
            self.in_features,
            1,
            &mut grad.weight.data,
            self.in_features,
            1.0,
        );
        for row in dy.chunks(self.out_features) {
            for (g, d) in grad.bias.data.iter_mut().zip(row) {
                *g += d;
            }
        }
        let mut dx = vec![0f32; n * self.in_features];
        gemm(
            n,
            self.out_features,
            self.in_features,
            dy,
            self.out_features,
            1,
            &self.weight.data,
            self.in_features,
            1,
            &mut dx,
            self.in_features,
            0.0,
        );
        dx
    }

    pub fn visit(&self, name: &str, f: &mut Visitor<'_>) {
        f(&format!("{name}.weight"), &self.weight, true);
        f(&format!("{name}.bias"), &self.bias, true);
    }

    pub fn trainable_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Param>) {
        out.push(&mut self.weight);
        out.push(&mut self.bias);
    }

    pub fn param_mut(&mut self, suffix: &str) -> Option<&mut Param> {
        match suffix {
            "weight" => Some(&mut self.weight),
            "bias" => Some(&mut self.bias),
            _ => None,
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            weight: self.weight.zeros_like(),
            bias: self.bias.zeros_like(),
            ..*self
        }
    }
}

/// Elementwise ReLU over a flat buffer, used between the head layers.
pub fn relu_flat(x: &mut [f32]) {
    x.iter_mut().for_each(|v| *v = v.max(0.0));
}

pub fn relu_flat_backward(y: &[f32], dy: &mut [f32]) {
    for (d, v) in dy.iter_mut().zip(y) {
        if *v <= 0.0 {
            *d = 0.0;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_tensor(rng: &mut ChaCha8Rng, n: usize, c: usize, h: usize, w: usize) -> Tensor {
        let mut t = Tensor::zeros(n, c, h, w);
        t.data.iter_mut().for_each(|v| *v = rng.gen_range(-1.0..1.0));
        t
    }

    // Direct convolution, loop by loop.
    fn conv_oracle(conv: &Conv2d, x: &Tensor) -> Tensor {
        let (oh, ow) = conv.out_size(x.h, x.w);
        let mut out = Tensor::zeros(x.n, conv.out_ch, oh, ow);
        let cin_g = conv.in_ch / conv.groups;
        let cout_g = conv.out_ch / conv.groups;
        for n in 0..x.n {
            for oc in 0..conv.out_ch {
                let g = oc / cout_g;
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut s = conv.bias.as_ref().map_or(0.0, |b| b.data[oc]) as f64;
                        for ci in 0..cin_g {
                            for ky in 0..conv.kernel {
                                for kx in 0..conv.kernel {
                                    let iy = (oy * conv.stride + ky) as isize - conv.padding as isize;
                                    let ix = (ox * conv.stride + kx) as isize - conv.padding as isize;
                                    if iy < 0 || ix < 0 || iy >= x.h as isize || ix >= x.w as isize {
                                        continue;
                                    }
                                    let xv = x.data[((n * x.c + g * cin_g + ci) * x.h + iy as usize) * x.w + ix as usize];
                                    let wv = conv.weight.data[((oc * cin_g + ci) * conv.kernel + ky) * conv.kernel + kx];
                                    s += (xv * wv) as f64;
                                }
                            }
                        }
                        out.data[((n * conv.out_ch + oc) * oh + oy) * ow + ox] = s as f32;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn grouped_conv_matches_direct_loops() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut conv = Conv2d::new(4, 6, 3, 2, 1, 2, true);
        conv.init_he(&mut rng);
        conv.bias.as_mut().unwrap().data.iter_mut().for_each(|b| *b = 0.3);
        let x = random_tensor(&mut rng, 2, 4, 7, 6);
        let a = conv.forward(&x);
        let b = conv_oracle(&conv, &x);
        assert_eq!((a.c, a.h, a.w), (6, 4, 3));
        for (p, q) in a.data.iter().zip(&b.data) {
            assert!((p - q).abs() < 1e-5);
        }
    }

    // Finite-difference check of d(sum(y * r))/dparam for a random probe r.
    fn check_grad(f: &dyn Fn(&Bottleneck, &Tensor) -> f64, b: &Bottleneck, x: &Tensor, analytic: &Bottleneck) {
        let mut names = Vec::new();
        b.visit("b", &mut |n, _, t| {
            if t {
                names.push(n.to_string())
            }
        });
        for name in names.iter().step_by(3) {
            let suffix = name.strip_prefix("b.").unwrap();
            let mut probe = b.clone();
            let len = probe.param_mut(suffix).unwrap().data.len();
            for idx in [0, len / 2, len - 1] {
                let eps = 1e-2f32;
                let mut plus = b.clone();
                plus.param_mut(suffix).unwrap().data[idx] += eps;
                let mut minus = b.clone();
                minus.param_mut(suffix).unwrap().data[idx] -= eps;
                let numeric = (f(&plus, x) - f(&minus, x)) / (2.0 * eps as f64);
                let mut a = analytic.clone();
                let got = a.param_mut(suffix).unwrap().data[idx] as f64;
                assert!(
                    (numeric - got).abs() < 2e-2 * (1.0 + numeric.abs()),
                    "{name}[{idx}]: numeric {numeric} analytic {got}"
                );
            }
            let _ = probe.param_mut(suffix);
        }
    }

    #[test]
    fn bottleneck_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut b = Bottleneck::new(4, 8, 8, 2, 4);
        for conv in [&mut b.conv1, &mut b.conv2, &mut b.conv3] {
            conv.init_he(&mut rng);
        }
        b.downsample.as_mut().unwrap().0.init_he(&mut rng);
        for bn in [&mut b.bn1, &mut b.bn2, &mut b.bn3] {
            bn.weight.data.iter_mut().for_each(|v| *v = rng.gen_range(0.5..1.5));
            bn.running_mean.data.iter_mut().for_each(|v| *v = rng.gen_range(-0.1..0.1));
        }
        let x = random_tensor(&mut rng, 2, 4, 6, 6);
        let probe = random_tensor(&mut rng, 2, 8, 3, 3);
        let f = |blk: &Bottleneck, x: &Tensor| -> f64 {
            let (y, _) = blk.forward(x.clone(), false);
            y.data.iter().zip(&probe.data).map(|(a, b)| (*a as f64) * (*b as f64)).sum()
        };
        let (_, cache) = b.forward(x.clone(), true);
        let mut grad = b.zeros_like();
        let dx = b.backward(*cache.unwrap(), probe.clone(), &mut grad, true).unwrap();
        check_grad(&f, &b, &x, &grad);

        // input gradient
        for idx in [0, 37, x.data.len() - 1] {
            let eps = 1e-2;
            let mut xp = x.clone();
            xp.data[idx] += eps;
            let mut xm = x.clone();
            xm.data[idx] -= eps;
            let numeric = (f(&b, &xp) - f(&b, &xm)) / (2.0 * eps as f64);
            assert!((numeric - dx.data[idx] as f64).abs() < 2e-2 * (1.0 + numeric.abs()));
        }
    }

    #[test]
    fn linear_and_pool_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let lin = Linear::new(12, 3, &mut rng);
        let pool = AdaptiveAvgPool { out_h: 2, out_w: 2 };
        let x = random_tensor(&mut rng, 2, 3, 5, 5);
        let probe: Vec<f32> = (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let f = |x: &Tensor, lin: &Linear| -> f64 {
            let feats = pool.forward(x);
            let y = lin.forward(&feats, 2);
            y.iter().zip(&probe).map(|(a, b)| (*a * *b) as f64).sum()
        };
        let feats = pool.forward(&x);
        let mut g = lin.zeros_like();
        let dfeat = lin.backward(&feats, &probe, 2, &mut g);
        let dx = pool.backward((2, 3, 5, 5), &dfeat);
        for idx in [0, 20, 49] {
            let mut xp = x.clone();
            xp.data[idx] += 1e-2;
            let mut xm = x.clone();
            xm.data[idx] -= 1e-2;
            let numeric = (f(&xp, &lin) - f(&xm, &lin)) / 2e-2;
            assert!((numeric - dx.data[idx] as f64).abs() < 1e-3);
        }
        for idx in [0, 17, 35] {
            let mut lp = lin.clone();
            lp.weight.data[idx] += 1e-2;
            let mut lm = lin.clone();
            lm.weight.data[idx] -= 1e-2;
            let numeric = (f(&x, &lp) - f(&x, &lm)) / 2e-2;
            assert!((numeric - g.weight.data[idx] as f64).abs() < 1e-3);
        }
    }

    #[test]
    fn maxpool_routes_gradient_to_argmax() {
        let p = MaxPool { kernel: 3, stride: 2, padding: 1 };
        let mut x = Tensor::zeros(1, 1, 4, 4);
        x.data[5] = 2.0;
        let (y, arg) = p.forward(&x);
        assert_eq!((y.h, y.w), (2, 2));
        assert_eq!(y.data[0], 2.0);
        let mut dy = Tensor::zeros(1, 1, 2, 2);
        dy.data[0] = 1.0;
        let dx = MaxPool::backward(&arg, (1, 1, 4, 4), &dy);
        assert_eq!(dx.data[5], 1.0);
    }
}
