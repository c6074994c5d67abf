//! Trainable layer families. Each holds its parameters plus whatever the
//! matching backward needs, cached by a train-mode forward.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::binary::{self, binarize_weights, binary_conv2d, BitPlane, RPReLUParams, RSignParams};
use crate::error::{Error, Result};
use crate::tensor::{
    avgpool2x2_backward, avgpool2x2_forward, batchnorm_backward, batchnorm_forward, conv2d_backward_padded,
    conv2d_forward_padded, BatchNormCache, BatchNormState, ConvGeometry, Mode, Param, ParamRole, Tensor,
};

/// Knobs shared by every layer of a network.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ModelOptions {
    /// Per-output-channel `mean|w|` scale on binary convolutions; when off the
    /// scale is fixed at 1.
    pub weight_scaling: bool,
    pub bn_eps: f64,
    pub bn_momentum: f64,
}

impl Default for ModelOptions {
    fn default() -> Self {
        ModelOptions {
            weight_scaling: true,
            bn_eps: 1e-5,
            bn_momentum: 0.1,
        }
    }
}

pub(crate) fn kaiming_uniform(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    uniform(rng, shape, f64::INFINITY)
}

/// Kaiming-uniform bounded to the latent clip range [−1, 1].
fn latent_uniform(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    uniform(rng, shape, 1.0)
}

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], cap: f64) -> Tensor {
    let fan_in: usize = shape[1..].iter().product();
    let bound = (6.0 / fan_in.max(1) as f64).sqrt().min(cap);
    let len: usize = shape.iter().product();
    let data = (0..len).map(|_| rng.gen_range(-bound..bound)).collect();
    Tensor::new(shape.to_vec(), data).expect("length matches shape")
}

fn vec_param(name: String, values: Vec<f64>, role: ParamRole) -> Param {
    let n = values.len();
    Param::new(name, Tensor::new(vec![n], values).expect("1-d"), role)
}

fn accumulate(p: &mut Param, g: &[f64]) {
    for (a, b) in p.grad.data_mut().iter_mut().zip(g) {
        *a += b;
    }
}

fn no_cache(op: &'static str) -> Error {
    Error::invalid(op, "backward called without a train-mode forward")
}

#[derive(Clone, Debug)]
pub(crate) struct Bn {
    pub gamma: Param,
    pub beta: Param,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    eps: f64,
    momentum: f64,
    cache: Option<BatchNormCache>,
}

impl Bn {
    pub fn new(prefix: &str, c: usize, opts: &ModelOptions) -> Self {
        Bn {
            gamma: vec_param(format!("{}.gamma", prefix), vec![1.0; c], ParamRole::Norm),
            beta: vec_param(format!("{}.beta", prefix), vec![0.0; c], ParamRole::Norm),
            running_mean: vec![0.0; c],
            running_var: vec![1.0; c],
            eps: opts.bn_eps,
            momentum: opts.bn_momentum,
            cache: None,
        }
    }

    fn state(&self) -> BatchNormState {
        BatchNormState {
            gamma: self.gamma.value.data().to_vec(),
            beta: self.beta.value.data().to_vec(),
            running_mean: self.running_mean.clone(),
            running_var: self.running_var.clone(),
            eps: self.eps,
            momentum: self.momentum,
        }
    }

    pub fn forward(&mut self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        let mut st = self.state();
        let (y, cache) = batchnorm_forward(x, &mut st, mode)?;
        if mode == Mode::Train {
            self.running_mean = st.running_mean;
            self.running_var = st.running_var;
            self.cache = Some(cache);
        }
        Ok(y)
    }

    pub fn infer(&self, x: &Tensor) -> Result<Tensor> {
        Ok(batchnorm_forward(x, &mut self.state(), Mode::Infer)?.0)
    }

    pub fn backward(&mut self, g: &Tensor) -> Result<Tensor> {
        let cache = self.cache.take().ok_or_else(|| no_cache("batchnorm_backward"))?;
        let (gx, gg, gb) = batchnorm_backward(&cache, self.gamma.value.data(), g)?;
        accumulate(&mut self.gamma, &gg);
        accumulate(&mut self.beta, &gb);
        Ok(gx)
    }
}

#[derive(Clone, Debug)]
pub(crate) struct RSign {
    pub alpha: Param,
    cache: Option<Tensor>,
}

impl RSign {
    pub fn new(prefix: &str, c: usize) -> Self {
        RSign {
            alpha: vec_param(format!("{}.alpha", prefix), vec![0.0; c], ParamRole::Shift),
            cache: None,
        }
    }

    fn params(&self) -> RSignParams {
        RSignParams {
            alpha: self.alpha.value.data().to_vec(),
        }
    }

    pub fn forward(&mut self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        let y = binary::rsign_values(x, &self.params())?;
        if mode == Mode::Train {
            self.cache = Some(x.clone());
        }
        Ok(y)
    }

    pub fn infer(&self, x: &Tensor) -> Result<BitPlane> {
        binary::rsign_forward(x, &self.params())
    }

    pub fn backward(&mut self, g: &Tensor) -> Result<Tensor> {
        let x = self.cache.take().ok_or_else(|| no_cache("rsign_backward"))?;
        let (gx, ga) = binary::rsign_backward(&x, &self.params(), g)?;
        accumulate(&mut self.alpha, &ga);
        Ok(gx)
    }
}

#[derive(Clone, Debug)]
pub(crate) struct RPReLU {
    pub gamma: Param,
    pub zeta: Param,
    pub beta: Param,
    cache: Option<Tensor>,
}

impl RPReLU {
    pub fn new(prefix: &str, c: usize) -> Self {
        RPReLU {
            gamma: vec_param(format!("{}.gamma", prefix), vec![0.0; c], ParamRole::Shift),
            zeta: vec_param(format!("{}.zeta", prefix), vec![0.0; c], ParamRole::Shift),
            beta: vec_param(format!("{}.beta", prefix), vec![0.25; c], ParamRole::Shift),
            cache: None,
        }
    }

    fn params(&self) -> RPReLUParams {
        RPReLUParams {
            gamma: self.gamma.value.data().to_vec(),
            zeta: self.zeta.value.data().to_vec(),
            beta: self.beta.value.data().to_vec(),
        }
    }

    pub fn forward(&mut self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        let y = binary::rprelu_forward(x, &self.params())?;
        if mode == Mode::Train {
            self.cache = Some(x.clone());
        }
        Ok(y)
    }

    pub fn infer(&self, x: &Tensor) -> Result<Tensor> {
        binary::rprelu_forward(x, &self.params())
    }

    pub fn backward(&mut self, g: &Tensor) -> Result<Tensor> {
        let x = self.cache.take().ok_or_else(|| no_cache("rprelu_backward"))?;
        let (gx, gg, gz, gb) = binary::rprelu_backward(&x, &self.params(), g)?;
        accumulate(&mut self.gamma, &gg);
        accumulate(&mut self.zeta, &gz);
        accumulate(&mut self.beta, &gb);
        Ok(gx)
    }
}

/// Binary convolution over latent weights. Both modes run the XNOR-popcount
/// kernel; backward treats the operands as real ±1 tensors.
#[derive(Clone, Debug)]
pub(crate) struct BinConv {
    pub geom: ConvGeometry,
    pub weight: Param,
    scaling: bool,
    cache: Option<(Tensor, Tensor)>,
}

impl BinConv {
    pub fn new(prefix: &str, geom: ConvGeometry, scaling: bool, rng: &mut ChaCha8Rng) -> Self {
        let w = latent_uniform(rng, &geom.weight_shape());
        BinConv {
            geom,
            weight: Param::new(format!("{}.weight", prefix), w, ParamRole::BinaryLatent),
            scaling,
            cache: None,
        }
    }

    /// Sign bits and the per-output-channel scale actually applied.
    pub fn binarized(&self) -> Result<(BitPlane, Vec<f64>)> {
        let (bits, alpha) = binarize_weights(&self.weight.value)?;
        Ok(if self.scaling {
            (bits, alpha)
        } else {
            (bits, vec![1.0; self.geom.out_channels])
        })
    }

    pub fn forward(&mut self, a: &Tensor, mode: Mode) -> Result<Tensor> {
        let (bits, alpha) = self.binarized()?;
        let y = binary_conv2d(&binary::pack(a), &bits, &self.geom, &alpha)?;
        if mode == Mode::Train {
            let per = self.geom.patch_len();
            let mut scaled = bits.unpack().into_data();
            for (o, al) in alpha.iter().enumerate() {
                for v in &mut scaled[o * per..(o + 1) * per] {
                    *v *= al;
                }
            }
            let w_hat = Tensor::new(self.geom.weight_shape().to_vec(), scaled)?;
            self.cache = Some((a.clone(), w_hat));
        }
        Ok(y)
    }

    pub fn infer(&self, a: &BitPlane) -> Result<Tensor> {
        let (bits, alpha) = self.binarized()?;
        binary_conv2d(a, &bits, &self.geom, &alpha)
    }

    /// The scale is treated as a constant; latent gradients pass where |w| ≤ 1.
    pub fn backward(&mut self, g: &Tensor) -> Result<Tensor> {
        let (a, w_hat) = self.cache.take().ok_or_else(|| no_cache("binary conv backward"))?;
        let (gx, gw) = conv2d_backward_padded(&a, &w_hat, &self.geom, g, -1.0, true)?;
        let lat = self.weight.value.data();
        for ((acc, d), w) in self.weight.grad.data_mut().iter_mut().zip(gw.data()).zip(lat) {
            if w.abs() <= 1.0 {
                *acc += d;
            }
        }
        Ok(gx.expect("requested"))
    }
}

/// Real-valued stem convolution (zero padding) and its batch norm.
#[derive(Clone, Debug)]
pub(crate) struct Stem {
    pub geom: ConvGeometry,
    pub weight: Param,
    pub bn: Bn,
    cache: Option<Tensor>,
}

impl Stem {
    pub fn new(geom: ConvGeometry, opts: &ModelOptions, rng: &mut ChaCha8Rng) -> Self {
        let w = kaiming_uniform(rng, &geom.weight_shape());
        Stem {
            geom,
            weight: Param::new("stem.conv.weight", w, ParamRole::Fp32Weight),
            bn: Bn::new("stem.bn", geom.out_channels, opts),
            cache: None,
        }
    }

    pub fn forward(&mut self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        let y = conv2d_forward_padded(x, &self.weight.value, &self.geom, 0.0)?;
        if mode == Mode::Train {
            self.cache = Some(x.clone());
        }
        self.bn.forward(&y, mode)
    }

    pub fn infer(&self, x: &Tensor) -> Result<Tensor> {
        self.bn.infer(&conv2d_forward_padded(x, &self.weight.value, &self.geom, 0.0)?)
    }

    pub fn backward(&mut self, g: &Tensor) -> Result<()> {
        let g = self.bn.backward(g)?;
        let x = self.cache.take().ok_or_else(|| no_cache("stem backward"))?;
        let (_, gw) = conv2d_backward_padded(&x, &self.weight.value, &self.geom, &g, 0.0, false)?;
        accumulate(&mut self.weight, gw.data());
        Ok(())
    }
}

/// Zero-pads height and width up to even extents (bottom/right).
pub(crate) fn pad_even(x: &Tensor) -> Result<Tensor> {
    let [n, c, h, w] = x.dims4("pad_even")?;
    let (hp, wp) = (h.div_ceil(2) * 2, w.div_ceil(2) * 2);
    if (hp, wp) == (h, w) {
        return Ok(x.clone());
    }
    let mut out = vec![0.0; n * c * hp * wp];
    for plane in 0..n * c {
        for y in 0..h {
            let src = &x.data()[(plane * h + y) * w..(plane * h + y + 1) * w];
            out[(plane * hp + y) * wp..(plane * hp + y) * wp + w].copy_from_slice(src);
        }
    }
    Tensor::new(vec![n, c, hp, wp], out)
}

fn crop(g: &Tensor, h: usize, w: usize) -> Result<Tensor> {
    let [n, c, hp, wp] = g.dims4("crop")?;
    if (hp, wp) == (h, w) {
        return Ok(g.clone());
    }
    let mut out = Vec::with_capacity(n * c * h * w);
    for plane in 0..n * c {
        for y in 0..h {
            out.extend_from_slice(&g.data()[(plane * hp + y) * wp..(plane * hp + y) * wp + w]);
        }
    }
    Tensor::new(vec![n, c, h, w], out)
}

/// Repeats the channel axis `m` times: output channel j reads input j mod C.
pub(crate) fn tile_channels(x: &Tensor, m: usize) -> Result<Tensor> {
    if m == 1 {
        return Ok(x.clone());
    }
    let [n, c, h, w] = x.dims4("tile_channels")?;
    let per = c * h * w;
    let mut out = Vec::with_capacity(n * per * m);
    for s in 0..n {
        for _ in 0..m {
            out.extend_from_slice(&x.data()[s * per..(s + 1) * per]);
        }
    }
    Tensor::new(vec![n, c * m, h, w], out)
}

fn untile_channels(g: &Tensor, m: usize) -> Result<Tensor> {
    if m == 1 {
        return Ok(g.clone());
    }
    let [n, cm, h, w] = g.dims4("untile_channels")?;
    let per = cm / m * h * w;
    let mut out = vec![0.0; n * per];
    for s in 0..n {
        let dst = &mut out[s * per..(s + 1) * per];
        for r in 0..m {
            let src = &g.data()[(s * m + r) * per..(s * m + r + 1) * per];
            for (d, v) in dst.iter_mut().zip(src) {
                *d += v;
            }
        }
    }
    Tensor::new(vec![n, cm / m, h, w], out)
}

/// One 1-bit block. Normal blocks have `stride = 1` and equal widths;
/// reduction blocks stride the 3×3 conv (average-pooled shortcut) and/or widen
/// through the 1×1 conv with the first shortcut tiled across the new channels.
#[derive(Clone, Debug)]
pub(crate) struct Block {
    pub in_channels: usize,
    pub out_channels: usize,
    pub stride: usize,
    pub rsign1: RSign,
    pub conv1: BinConv,
    pub bn1: Bn,
    pub rprelu1: RPReLU,
    pub rsign2: RSign,
    pub conv2: BinConv,
    pub bn2: Bn,
    pub rprelu2: RPReLU,
    in_hw: (usize, usize),
}

impl Block {
    pub fn new(
        prefix: &str,
        in_channels: usize,
        out_channels: usize,
        stride: usize,
        opts: &ModelOptions,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let (ci, co) = (in_channels, out_channels);
        let n = |s: &str| format!("{}.{}", prefix, s);
        let conv1 = BinConv::new(&n("conv3x3"), ConvGeometry::square(ci, ci, 3, stride, 1), opts.weight_scaling, rng);
        let conv2 = BinConv::new(&n("conv1x1"), ConvGeometry::square(ci, co, 1, 1, 0), opts.weight_scaling, rng);
        Block {
            in_channels,
            out_channels,
            stride,
            rsign1: RSign::new(&n("rsign1"), ci),
            conv1,
            bn1: Bn::new(&n("bn1"), ci, opts),
            rprelu1: RPReLU::new(&n("rprelu1"), ci),
            rsign2: RSign::new(&n("rsign2"), ci),
            conv2,
            bn2: Bn::new(&n("bn2"), co, opts),
            rprelu2: RPReLU::new(&n("rprelu2"), co),
            in_hw: (0, 0),
        }
    }

    fn widen(&self) -> usize {
        self.out_channels / self.in_channels
    }

    fn shortcut(&self, x: &Tensor) -> Result<Tensor> {
        if self.stride == 1 {
            Ok(x.clone())
        } else {
            avgpool2x2_forward(&pad_even(x)?)
        }
    }

    pub fn forward(&mut self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        let [_, _, h, w] = x.dims4("binary block")?;
        self.in_hw = (h, w);
        let a1 = self.rsign1.forward(x, mode)?;
        let c1 = self.conv1.forward(&a1, mode)?;
        let mut s1 = self.bn1.forward(&c1, mode)?;
        s1.add_assign(&self.shortcut(x)?)?;
        let r1 = self.rprelu1.forward(&s1, mode)?;
        let a2 = self.rsign2.forward(&r1, mode)?;
        let c2 = self.conv2.forward(&a2, mode)?;
        let mut s2 = self.bn2.forward(&c2, mode)?;
        s2.add_assign(&tile_channels(&r1, self.widen())?)?;
        self.rprelu2.forward(&s2, mode)
    }

    pub fn infer(&self, x: &Tensor) -> Result<Tensor> {
        let a1 = self.rsign1.infer(x)?;
        let mut s1 = self.bn1.infer(&self.conv1.infer(&a1)?)?;
        s1.add_assign(&self.shortcut(x)?)?;
        let r1 = self.rprelu1.infer(&s1)?;
        let a2 = self.rsign2.infer(&r1)?;
        let mut s2 = self.bn2.infer(&self.conv2.infer(&a2)?)?;
        s2.add_assign(&tile_channels(&r1, self.widen())?)?;
        self.rprelu2.infer(&s2)
    }

    pub fn backward(&mut self, g: &Tensor) -> Result<Tensor> {
        let g_s2 = self.rprelu2.backward(g)?;
        let g_c2 = self.bn2.backward(&g_s2)?;
        let g_a2 = self.conv2.backward(&g_c2)?;
        let mut g_r1 = self.rsign2.backward(&g_a2)?;
        g_r1.add_assign(&untile_channels(&g_s2, self.widen())?)?;
        let g_s1 = self.rprelu1.backward(&g_r1)?;
        let g_c1 = self.bn1.backward(&g_s1)?;
        let g_a1 = self.conv1.backward(&g_c1)?;
        let mut g_x = self.rsign1.backward(&g_a1)?;
        let g_short = if self.stride == 1 {
            g_s1
        } else {
            let (h, w) = self.in_hw;
            let [n, c, ..] = g_s1.dims4("binary block backward")?;
            let padded = [n, c, h.div_ceil(2) * 2, w.div_ceil(2) * 2];
            crop(&avgpool2x2_backward(&padded, &g_s1)?, h, w)?
        };
        g_x.add_assign(&g_short)?;
        Ok(g_x)
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![
            &mut self.rsign1.alpha,
            &mut self.conv1.weight,
            &mut self.bn1.gamma,
            &mut self.bn1.beta,
            &mut self.rprelu1.gamma,
            &mut self.rprelu1.zeta,
            &mut self.rprelu1.beta,
            &mut self.rsign2.alpha,
            &mut self.conv2.weight,
            &mut self.bn2.gamma,
            &mut self.bn2.beta,
            &mut self.rprelu2.gamma,
            &mut self.rprelu2.zeta,
            &mut self.rprelu2.beta,
        ]
    }

    pub fn bns_mut(&mut self) -> [&mut Bn; 2] {
        [&mut self.bn1, &mut self.bn2]
    }
}

/// Bias-free fully connected head, weight `K × F`.
#[derive(Clone, Debug)]
pub(crate) struct Fc {
    pub weight: Param,
    cache: Option<Tensor>,
}

impl Fc {
    pub fn new(features: usize, classes: usize, rng: &mut ChaCha8Rng) -> Self {
        let bound = 1.0 / (features as f64).sqrt();
        let data = (0..features * classes).map(|_| rng.gen_range(-bound..bound)).collect();
        Fc {
            weight: Param::new(
                "head.fc.weight",
                Tensor::new(vec![classes, features], data).expect("length matches"),
                ParamRole::Fp32Weight,
            ),
            cache: None,
        }
    }

    pub fn infer(&self, x: &Tensor) -> Result<Tensor> {
        let &[k, f] = self.weight.value.shape() else { unreachable!() };
        let &[n, fx] = x.shape() else {
            return Err(Error::shape("fc_head", format!("expected N×F features, got {:?}", x.shape())));
        };
        if fx != f {
            return Err(Error::shape("fc_head", format!("{} features, head expects {}", fx, f)));
        }
        let mut out = vec![0.0; n * k];
        crate::tensor::gemm(n, f, k, x.data(), f, 1, self.weight.value.data(), 1, f, &mut out);
        Tensor::new(vec![n, k], out)
    }

    pub fn forward(&mut self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        let y = self.infer(x)?;
        if mode == Mode::Train {
            self.cache = Some(x.clone());
        }
        Ok(y)
    }

    pub fn backward(&mut self, g: &Tensor) -> Result<Tensor> {
        let x = self.cache.take().ok_or_else(|| no_cache("fc backward"))?;
        let &[k, f] = self.weight.value.shape() else { unreachable!() };
        let n = x.shape()[0];
        let mut gw = vec![0.0; k * f];
        crate::tensor::gemm(k, n, f, g.data(), 1, k, x.data(), f, 1, &mut gw);
        accumulate(&mut self.weight, &gw);
        let mut gx = vec![0.0; n * f];
        crate::tensor::gemm(n, k, f, g.data(), k, 1, self.weight.value.data(), f, 1, &mut gx);
        Tensor::new(vec![n, f], gx)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn scaled_signs(conv: &BinConv) -> Tensor {
        let (bits, alpha) = conv.binarized().unwrap();
        let per = conv.geom.patch_len();
        let mut w = bits.unpack().into_data();
        for (i, v) in w.iter_mut().enumerate() {
            *v *= alpha[i / per];
        }
        Tensor::new(conv.geom.weight_shape().to_vec(), w).unwrap()
    }

    #[test]
    fn binary_conv_equals_scaled_real_conv_on_signs() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for (ci, co, k, s, p) in [(3, 4, 3, 1, 1), (5, 2, 3, 2, 1), (4, 8, 1, 1, 0), (70, 3, 3, 1, 1)] {
            for scaling in [true, false] {
                let mut conv = BinConv::new("c", ConvGeometry::square(ci, co, k, s, p), scaling, &mut rng);
                let a = binary::pack(&kaiming_uniform(&mut rng, &[2, ci, 7, 7])).unpack();
                let y = conv.forward(&a, Mode::Train).unwrap();
                let (bits, alpha) = conv.binarized().unwrap();
                let z = conv2d_forward_padded(&a, &bits.unpack(), &conv.geom, -1.0).unwrap();
                let sp = y.len() / (2 * co);
                let scaled: Vec<f64> = z.data().iter().enumerate().map(|(i, v)| v * alpha[(i / sp) % co]).collect();
                assert_eq!(y.data(), &scaled[..]);
            }
        }
    }

    #[test]
    fn binary_conv_backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for case in 0..100 {
            let (ci, co) = (rng.gen_range(1..4), rng.gen_range(1..4));
            let (k, stride) = ([1, 3][case % 2], rng.gen_range(1..3));
            let g = ConvGeometry::square(ci, co, k, stride, k / 2);
            let mut conv = BinConv::new("c", g, case % 3 != 0, &mut rng);
            conv.weight.value.data_mut()[0] = 1.5;
            let a = binary::pack(&kaiming_uniform(&mut rng, &[2, ci, 5, 5])).unpack();
            let y = conv.forward(&a, Mode::Train).unwrap();
            let r = kaiming_uniform(&mut rng, y.shape());
            let gx = conv.backward(&r).unwrap();
            let w_hat = scaled_signs(&conv);
            let loss = |a: &Tensor, w: &Tensor| -> f64 {
                let y = conv2d_forward_padded(a, w, &g, -1.0).unwrap();
                y.data().iter().zip(r.data()).map(|(p, q)| p * q).sum()
            };
            let eps = 1e-6;
            let fd = |t: &Tensor, i: usize, f: &dyn Fn(&Tensor) -> f64| {
                let (mut up, mut down) = (t.clone(), t.clone());
                up.data_mut()[i] += eps;
                down.data_mut()[i] -= eps;
                (f(&up) - f(&down)) / (2.0 * eps)
            };
            for i in 0..a.len() {
                let n = fd(&a, i, &|t| loss(t, &w_hat));
                assert!((gx.data()[i] - n).abs() <= 1e-4 * n.abs().max(1.0), "case {} dx[{}]", case, i);
            }
            for i in 0..w_hat.len() {
                let n = if conv.weight.value.data()[i].abs() <= 1.0 { fd(&w_hat, i, &|t| loss(&a, t)) } else { 0.0 };
                assert!((conv.weight.grad.data()[i] - n).abs() <= 1e-4 * n.abs().max(1.0), "case {} dw[{}]", case, i);
            }
        }
    }

    #[test]
    fn tile_untile_are_adjoint() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = kaiming_uniform(&mut rng, &[2, 3, 2, 2]);
        let g = kaiming_uniform(&mut rng, &[2, 6, 2, 2]);
        let t = tile_channels(&x, 2).unwrap();
        let u = untile_channels(&g, 2).unwrap();
        let lhs: f64 = t.data().iter().zip(g.data()).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.data().iter().zip(u.data()).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
        assert_eq!(&t.data()[12..24], &x.data()[0..12]);
    }

    #[test]
    fn pad_even_then_crop_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = kaiming_uniform(&mut rng, &[1, 2, 5, 3]);
        let p = pad_even(&x).unwrap();
        assert_eq!(p.shape(), &[1, 2, 6, 4]);
        assert_eq!(crop(&p, 5, 3).unwrap(), x);
    }
}
