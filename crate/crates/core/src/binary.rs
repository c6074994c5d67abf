//! Bit-packed {−1, +1} planes, the XNOR-popcount kernels built on them, and
//! the binarizing activations of the 1-bit block (RSign and RPReLU).
//!
//! Encoding: bit 1 is +1, bit 0 is −1, and `sign(0) = +1`. Element `i` lives in
//! word `i / 64` at bit `i % 64`. Bits past the last element are always zero.

use crate::error::{Error, Result};
use crate::tensor::{ConvGeometry, Tensor};

pub const WORD_BITS: usize = 64;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BitPlane {
    shape: Vec<usize>,
    words: Vec<u64>,
    len: usize,
}

#[inline]
fn words_for(n: usize) -> usize {
    n.div_ceil(WORD_BITS)
}

/// Mask of the payload bits in word `w` of an `n`-bit vector.
#[inline]
fn payload_mask(n: usize, w: usize) -> u64 {
    let rem = n - w * WORD_BITS;
    if rem >= WORD_BITS {
        u64::MAX
    } else {
        (1u64 << rem) - 1
    }
}

/// Σ aᵢ·bᵢ over ±1 values as `2·popcount(!(a ^ b) & mask) − n`.
#[inline]
fn xnor_popcount(a: &[u64], b: &[u64], n: usize) -> i64 {
    let mut agree = 0u32;
    for (w, (x, y)) in a.iter().zip(b).enumerate() {
        agree += (!(x ^ y) & payload_mask(n, w)).count_ones();
    }
    2 * agree as i64 - n as i64
}

impl BitPlane {
    /// Packs from per-element signs (`true` = +1).
    pub fn from_signs(shape: &[usize], signs: impl IntoIterator<Item = bool>) -> Result<Self> {
        let len: usize = shape.iter().product();
        let mut words = vec![0u64; words_for(len)];
        let mut count = 0;
        for (i, s) in signs.into_iter().enumerate() {
            if i >= len {
                return Err(Error::shape("BitPlane::from_signs", "more signs than elements"));
            }
            if s {
                words[i / WORD_BITS] |= 1 << (i % WORD_BITS);
            }
            count += 1;
        }
        if count != len {
            return Err(Error::shape(
                "BitPlane::from_signs",
                format!("{} signs for {} elements", count, len),
            ));
        }
        Ok(BitPlane {
            shape: shape.to_vec(),
            words,
            len,
        })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn words(&self) -> &[u64] {
        &self.words
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    #[inline]
    pub fn get(&self, i: usize) -> bool {
        (self.words[i / WORD_BITS] >> (i % WORD_BITS)) & 1 == 1
    }

    /// ±1 values as a real tensor.
    pub fn unpack(&self) -> Tensor {
        let data = (0..self.len).map(|i| if self.get(i) { 1.0 } else { -1.0 }).collect();
        Tensor::new(self.shape.clone(), data).expect("length matches shape")
    }
}

/// Bit = 1 iff value ≥ 0.
pub fn pack(t: &Tensor) -> BitPlane {
    let words = t
        .data()
        .chunks(WORD_BITS)
        .map(|c| c.iter().enumerate().fold(0u64, |acc, (i, &v)| acc | ((v >= 0.0) as u64) << i))
        .collect();
    BitPlane {
        shape: t.shape().to_vec(),
        words,
        len: t.len(),
    }
}

pub fn xnor_dot(a: &BitPlane, b: &BitPlane) -> Result<i64> {
    if a.len != b.len {
        return Err(Error::shape(
            "xnor_dot",
            format!("operands hold {} and {} elements", a.len, b.len),
        ));
    }
    Ok(xnor_popcount(&a.words, &b.words, a.len))
}

/// Sign bits plus per-output-channel scale `α[co] = mean |w[co, ·, ·, ·]|`.
pub fn binarize_weights(w_latent: &Tensor) -> Result<(BitPlane, Vec<f64>)> {
    let s = w_latent.shape();
    if s.len() != 4 {
        return Err(Error::shape("binarize_weights", format!("expected Co×Ci×kh×kw, got {:?}", s)));
    }
    let per: usize = s[1..].iter().product();
    let alpha = if per == 0 {
        vec![0.0; s[0]]
    } else {
        w_latent
            .data()
            .chunks_exact(per)
            .map(|row| row.iter().map(|v| v.abs()).sum::<f64>() / per as f64)
            .collect()
    };
    Ok((pack(w_latent), alpha))
}

/// Convolution of two ±1 planes via XNOR-popcount, scaled per output channel.
///
/// The padded border reads as −1 (bit 0), so the result equals a real
/// convolution of the unpacked input explicitly padded with −1.
pub fn binary_conv2d(x_bits: &BitPlane, w_bits: &BitPlane, g: &ConvGeometry, alpha: &[f64]) -> Result<Tensor> {
    let &[n, c, h, w] = x_bits.shape() else {
        return Err(Error::shape("binary_conv2d", format!("input must be 4-d, got {:?}", x_bits.shape())));
    };
    if c != g.in_channels {
        return Err(Error::shape(
            "binary_conv2d",
            format!("input channel dimension is {}, geometry expects {}", c, g.in_channels),
        ));
    }
    if w_bits.shape() != g.weight_shape() {
        return Err(Error::shape(
            "binary_conv2d",
            format!("weight shape {:?}, expected {:?}", w_bits.shape(), g.weight_shape()),
        ));
    }
    if alpha.len() != g.out_channels {
        return Err(Error::shape(
            "binary_conv2d",
            format!("{} scales for {} output channels", alpha.len(), g.out_channels),
        ));
    }
    let (ho, wo) = g.out_hw(h, w)?;
    let k = g.patch_len();
    let co = g.out_channels;
    let p = ho * wo;
    if k == 0 {
        return Ok(Tensor::zeros(&[n, co, ho, wo]));
    }
    // Patches are laid out tap-major with channels innermost, so each kernel
    // tap contributes one run of `c` bits.
    let kw = words_for(k);
    let cw = words_for(c);
    let taps = g.kernel_h * g.kernel_w;
    let mut wrows = vec![0u64; co * kw];
    for o in 0..co {
        let mut run = vec![0u64; cw];
        let mut dst = BitAppender::new(&mut wrows[o * kw..(o + 1) * kw]);
        for t in 0..taps {
            run.fill(0);
            for ci in 0..c {
                if w_bits.get((o * c + ci) * taps + t) {
                    run[ci / WORD_BITS] |= 1 << (ci % WORD_BITS);
                }
            }
            dst.push_run(&run, c);
        }
    }

    let (hp, wp) = (h + 2 * g.padding, w + 2 * g.padding);
    // one `cw`-word channel vector per padded pixel; the border stays −1 (0)
    let mut pixels = vec![0u64; hp * wp * cw];
    let mut out = vec![0.0; n * co * p];
    let mut patches = vec![0u64; p * kw];
    let mut counts = vec![0u32; p];
    // bits past k are zero in both operands and always "agree"
    let spare = (kw * WORD_BITS - k) as i64;
    for s in 0..n {
        pixels.fill(0);
        for ci in 0..c {
            let (cw_i, cb) = (ci / WORD_BITS, ci % WORD_BITS);
            for y in 0..h {
                let src = ((s * c + ci) * h + y) * w;
                let row = (y + g.padding) * wp + g.padding;
                for x in 0..w {
                    pixels[(row + x) * cw + cw_i] |= (x_bits.get(src + x) as u64) << cb;
                }
            }
        }
        patches.fill(0);
        for oy in 0..ho {
            for ox in 0..wo {
                let q = oy * wo + ox;
                let mut dst = BitAppender::new(&mut patches[q * kw..(q + 1) * kw]);
                for ky in 0..g.kernel_h {
                    for kx in 0..g.kernel_w {
                        let px = (oy * g.stride + ky) * wp + ox * g.stride + kx;
                        dst.push_run(&pixels[px * cw..(px + 1) * cw], c);
                    }
                }
            }
        }
        for o in 0..co {
            agree_counts(&patches, &wrows[o * kw..(o + 1) * kw], &mut counts);
            let dst = &mut out[(s * co + o) * p..(s * co + o + 1) * p];
            for (d, &a) in dst.iter_mut().zip(&counts) {
                *d = alpha[o] * (2 * (a as i64 - spare) - k as i64) as f64;
            }
        }
    }
    Tensor::new(vec![n, co, ho, wo], out)
}

/// Appends runs of bits to a zeroed word slice.
struct BitAppender<'a> {
    words: &'a mut [u64],
    pos: usize,
}

impl<'a> BitAppender<'a> {
    fn new(words: &'a mut [u64]) -> Self {
        BitAppender { words, pos: 0 }
    }

    /// Appends the low `bits` bits of `run` (bits above them must be zero).
    #[inline]
    fn push_run(&mut self, run: &[u64], bits: usize) {
        let mut left = bits;
        for &v in run {
            let take = left.min(WORD_BITS);
            let (w, b) = (self.pos / WORD_BITS, self.pos % WORD_BITS);
            self.words[w] |= v << b;
            if b != 0 && b + take > WORD_BITS {
                self.words[w + 1] |= v >> (WORD_BITS - b);
            }
            self.pos += take;
            left -= take;
        }
    }
}

#[inline(always)]
fn agree_counts_body(patches: &[u64], wrow: &[u64], counts: &mut [u32]) {
    for (q, c) in patches.chunks_exact(wrow.len()).zip(counts.iter_mut()) {
        *c = q.iter().zip(wrow).map(|(x, y)| (!(x ^ y)).count_ones()).sum();
    }
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "popcnt")]
unsafe fn agree_counts_popcnt(patches: &[u64], wrow: &[u64], counts: &mut [u32]) {
    agree_counts_body(patches, wrow, counts)
}

/// Per patch, the number of agreeing bits (padding included) with `wrow`.
fn agree_counts(patches: &[u64], wrow: &[u64], counts: &mut [u32]) {
    #[cfg(target_arch = "x86_64")]
    if std::arch::is_x86_feature_detected!("popcnt") {
        // SAFETY: the CPU supports the enabled feature.
        return unsafe { agree_counts_popcnt(patches, wrow, counts) };
    }
    agree_counts_body(patches, wrow, counts)
}

/// Learnable per-channel threshold of RSign.
#[derive(Clone, Debug, PartialEq)]
pub struct RSignParams {
    pub alpha: Vec<f64>,
}

/// Learnable per-channel shifts and negative slope of RPReLU.
#[derive(Clone, Debug, PartialEq)]
pub struct RPReLUParams {
    pub gamma: Vec<f64>,
    pub zeta: Vec<f64>,
    pub beta: Vec<f64>,
}

fn channel_layout(op: &'static str, x: &Tensor, channels: usize) -> Result<(usize, usize)> {
    let s = x.shape();
    if s.len() < 2 || s[1] != channels {
        return Err(Error::shape(
            op,
            format!("input {:?} does not have {} channels on axis 1", s, channels),
        ));
    }
    Ok((s[0], s[2..].iter().product()))
}

/// Derivative of the piecewise-quadratic ApproxSign surrogate at `u`.
#[inline]
pub fn approx_sign_grad(u: f64) -> f64 {
    if (-1.0..0.0).contains(&u) {
        2.0 + 2.0 * u
    } else if (0.0..1.0).contains(&u) {
        2.0 - 2.0 * u
    } else {
        0.0
    }
}

/// `sign(x − α)` as ±1 reals, channel-wise.
pub(crate) fn rsign_values(x: &Tensor, p: &RSignParams) -> Result<Tensor> {
    let (n, sp) = channel_layout("rsign_forward", x, p.alpha.len())?;
    let c = p.alpha.len();
    let mut out = x.data().to_vec();
    for s in 0..n {
        for (ch, a) in p.alpha.iter().enumerate() {
            for v in &mut out[(s * c + ch) * sp..(s * c + ch + 1) * sp] {
                *v = if *v - a >= 0.0 { 1.0 } else { -1.0 };
            }
        }
    }
    Tensor::new(x.shape().to_vec(), out)
}

pub fn rsign_forward(x: &Tensor, p: &RSignParams) -> Result<BitPlane> {
    let (n, sp) = channel_layout("rsign_forward", x, p.alpha.len())?;
    let c = p.alpha.len();
    let xd = x.data();
    let signs = (0..n)
        .flat_map(|s| p.alpha.iter().enumerate().map(move |(ch, &a)| (s * c + ch, a)))
        .flat_map(|(plane, a)| xd[plane * sp..(plane + 1) * sp].iter().map(move |&v| v - a >= 0.0));
    BitPlane::from_signs(x.shape(), signs)
}

/// Returns `(grad_x, grad_alpha)` through the ApproxSign surrogate.
pub fn rsign_backward(x: &Tensor, p: &RSignParams, grad_out: &Tensor) -> Result<(Tensor, Vec<f64>)> {
    let (n, sp) = channel_layout("rsign_backward", x, p.alpha.len())?;
    if grad_out.shape() != x.shape() {
        return Err(Error::shape(
            "rsign_backward",
            format!("grad_out {:?} vs input {:?}", grad_out.shape(), x.shape()),
        ));
    }
    let c = p.alpha.len();
    let mut gx = vec![0.0; x.len()];
    let mut ga = vec![0.0; c];
    for s in 0..n {
        for ch in 0..c {
            let r = (s * c + ch) * sp..(s * c + ch + 1) * sp;
            for ((o, v), g) in gx[r.clone()].iter_mut().zip(&x.data()[r.clone()]).zip(&grad_out.data()[r]) {
                *o = g * approx_sign_grad(v - p.alpha[ch]);
                ga[ch] -= *o;
            }
        }
    }
    Ok((Tensor::new(x.shape().to_vec(), gx)?, ga))
}

fn check_rprelu(op: &'static str, x: &Tensor, p: &RPReLUParams) -> Result<(usize, usize)> {
    let c = p.gamma.len();
    if p.zeta.len() != c || p.beta.len() != c {
        return Err(Error::shape(op, "gamma, zeta and beta lengths differ"));
    }
    channel_layout(op, x, c)
}

/// `y = max(x − γ, 0) + β·min(x − γ, 0) + ζ` per channel.
pub fn rprelu_forward(x: &Tensor, p: &RPReLUParams) -> Result<Tensor> {
    let (n, sp) = check_rprelu("rprelu_forward", x, p)?;
    let c = p.gamma.len();
    let mut out = x.data().to_vec();
    for s in 0..n {
        for ch in 0..c {
            for v in &mut out[(s * c + ch) * sp..(s * c + ch + 1) * sp] {
                let u = *v - p.gamma[ch];
                *v = if u > 0.0 { u } else { p.beta[ch] * u } + p.zeta[ch];
            }
        }
    }
    Tensor::new(x.shape().to_vec(), out)
}

/// Gradients of RPReLU: `(grad_x, grad_gamma, grad_zeta, grad_beta)`. At the
/// kink the positive branch is used.
pub fn rprelu_backward(
    x: &Tensor,
    p: &RPReLUParams,
    grad_out: &Tensor,
) -> Result<(Tensor, Vec<f64>, Vec<f64>, Vec<f64>)> {
    let (n, sp) = check_rprelu("rprelu_backward", x, p)?;
    if grad_out.shape() != x.shape() {
        return Err(Error::shape(
            "rprelu_backward",
            format!("grad_out {:?} vs input {:?}", grad_out.shape(), x.shape()),
        ));
    }
    let c = p.gamma.len();
    let mut gx = vec![0.0; x.len()];
    let (mut gg, mut gz, mut gb) = (vec![0.0; c], vec![0.0; c], vec![0.0; c]);
    for s in 0..n {
        for ch in 0..c {
            let r = (s * c + ch) * sp..(s * c + ch + 1) * sp;
            for ((o, v), g) in gx[r.clone()].iter_mut().zip(&x.data()[r.clone()]).zip(&grad_out.data()[r]) {
                let u = v - p.gamma[ch];
                gz[ch] += g;
                if u >= 0.0 {
                    *o = *g;
                } else {
                    *o = p.beta[ch] * g;
                    gb[ch] += g * u;
                }
                gg[ch] -= *o;
            }
        }
    }
    Ok((Tensor::new(x.shape().to_vec(), gx)?, gg, gz, gb))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::conv2d_forward;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn pack_uses_nonnegative_as_plus_one() {
        let t = Tensor::new(vec![3], vec![-1.5, 0.0, 2.0]).unwrap();
        let b = pack(&t);
        assert_eq!((b.get(0), b.get(1), b.get(2)), (false, true, true));
        assert_eq!(b.unpack().data(), &[-1.0, 1.0, 1.0]);
    }

    #[test]
    fn sixty_five_elements_use_two_words() {
        let b = pack(&Tensor::full(&[65], 1.0));
        assert_eq!(b.words().len(), 2);
        assert_eq!(b.words()[0], u64::MAX);
        assert_eq!(b.words()[1], 1);
    }

    #[test]
    fn xnor_hand_cases() {
        let a = pack(&Tensor::full(&[7], -0.3));
        assert_eq!(xnor_dot(&a, &a).unwrap(), 7);
        let a = pack(&Tensor::new(vec![3], vec![1., -1., 1.]).unwrap());
        let b = pack(&Tensor::new(vec![3], vec![1., 1., -1.]).unwrap());
        assert_eq!(xnor_dot(&a, &b).unwrap(), -1);
        assert!(xnor_dot(&a, &pack(&Tensor::zeros(&[4]))).is_err());
    }

    #[test]
    fn all_plus_ones_conv_counts_kernel_size() {
        let g = ConvGeometry::square(1, 2, 3, 1, 0);
        let x = pack(&Tensor::full(&[1, 1, 5, 5], 1.0));
        let w = pack(&Tensor::full(&[2, 1, 3, 3], 1.0));
        let y = binary_conv2d(&x, &w, &g, &[1.0, 1.0]).unwrap();
        assert!(y.data().iter().all(|&v| v == 9.0));
        let y = binary_conv2d(&x, &w, &g, &[0.0, 0.0]).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn binarize_hand_cases() {
        let (b, a) = binarize_weights(&Tensor::full(&[2, 1, 1, 2], 0.5)).unwrap();
        assert_eq!(a, vec![0.5, 0.5]);
        assert!((0..4).all(|i| b.get(i)));
        let (b, a) = binarize_weights(&Tensor::new(vec![1, 1, 1, 2], vec![-1.0, 3.0]).unwrap()).unwrap();
        assert_eq!(a, vec![2.0]);
        assert_eq!((b.get(0), b.get(1)), (false, true));
    }

    #[test]
    fn uniform_weights_binary_conv_equals_real_conv() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let g = ConvGeometry::square(2, 3, 3, 1, 0);
        let x = Tensor::new(vec![1, 2, 4, 4], (0..32).map(|_| if rng.gen::<bool>() { 1.0 } else { -1.0 }).collect()).unwrap();
        let w = Tensor::full(&[3, 2, 3, 3], 0.5);
        let (wb, a) = binarize_weights(&w).unwrap();
        let y = binary_conv2d(&pack(&x), &wb, &g, &a).unwrap();
        assert_eq!(y, conv2d_forward(&x, &w, &g).unwrap());
    }

    #[test]
    fn alpha_is_the_least_squares_scale() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let w = Tensor::new(vec![1, 3, 3, 3], (0..27).map(|_| rng.gen_range(-2.0..2.0)).collect()).unwrap();
        let (b, a) = binarize_weights(&w).unwrap();
        let signs = b.unpack();
        let err = |alpha: f64| -> f64 {
            w.data().iter().zip(signs.data()).map(|(x, s)| (x - alpha * s).powi(2)).sum()
        };
        let best = err(a[0]);
        for i in 0..=4000 {
            let alpha = i as f64 * 0.001;
            assert!(err(alpha) >= best - 1e-12);
        }
    }

    #[test]
    fn rsign_hand_evaluation() {
        let x = Tensor::new(vec![1, 1, 4], vec![-2.0, -0.5, 0.5, 2.0]).unwrap();
        let p = RSignParams { alpha: vec![0.0] };
        assert_eq!(rsign_forward(&x, &p).unwrap().unpack().data(), &[-1.0, -1.0, 1.0, 1.0]);
        let (gx, _) = rsign_backward(&x, &p, &Tensor::full(&[1, 1, 4], 1.0)).unwrap();
        assert_eq!(gx.data(), &[0.0, 1.0, 1.0, 0.0]);
    }

    #[test]
    fn rsign_saturates() {
        let x = Tensor::full(&[2, 2, 3], 5.0);
        let p = RSignParams { alpha: vec![0.1, -0.2] };
        let (gx, ga) = rsign_backward(&x, &p, &Tensor::full(&[2, 2, 3], 1.0)).unwrap();
        assert!(gx.data().iter().all(|&v| v == 0.0));
        assert_eq!(ga, vec![0.0, 0.0]);
    }

    #[test]
    fn rprelu_hand_cases() {
        let x = Tensor::new(vec![1, 1, 3], vec![-1.0, 0.0, 2.0]).unwrap();
        let id = RPReLUParams { gamma: vec![0.0], zeta: vec![0.0], beta: vec![1.0] };
        assert_eq!(rprelu_forward(&x, &id).unwrap(), x);
        let p = RPReLUParams { gamma: vec![1.0], zeta: vec![2.0], beta: vec![0.25] };
        let y = rprelu_forward(&Tensor::zeros(&[1, 1, 1]), &p).unwrap();
        assert_eq!(y.data(), &[1.75]);
    }

    #[test]
    fn channel_mismatch_rejected() {
        let x = Tensor::zeros(&[1, 2, 2, 2]);
        assert!(rsign_forward(&x, &RSignParams { alpha: vec![0.0] }).is_err());
        let p = RPReLUParams { gamma: vec![0.0; 3], zeta: vec![0.0; 3], beta: vec![0.0; 3] };
        assert!(rprelu_forward(&x, &p).is_err());
    }
}
