use super::Tensor;
use crate::error::{Error, Result};

/// 2-d convolution geometry. Groups are always 1.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub stride: usize,
    pub padding: usize,
}

impl ConvGeometry {
    pub fn square(in_channels: usize, out_channels: usize, kernel: usize, stride: usize, padding: usize) -> Self {
        ConvGeometry {
            in_channels,
            out_channels,
            kernel_h: kernel,
            kernel_w: kernel,
            stride,
            padding,
        }
    }

    /// `floor((in + 2·padding − kernel) / stride) + 1`, rejected when < 1.
    pub fn out_extent(&self, input: usize, kernel: usize) -> Result<usize> {
        if self.stride == 0 {
            return Err(Error::invalid("conv2d", "stride must be positive"));
        }
        let padded = input + 2 * self.padding;
        if padded < kernel {
            return Err(Error::shape(
                "conv2d",
                format!("kernel {} larger than padded input {}", kernel, padded),
            ));
        }
        Ok((padded - kernel) / self.stride + 1)
    }

    pub fn out_hw(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        Ok((self.out_extent(h, self.kernel_h)?, self.out_extent(w, self.kernel_w)?))
    }

    /// Inner (reduction) length of one output element.
    pub fn patch_len(&self) -> usize {
        self.in_channels * self.kernel_h * self.kernel_w
    }

    pub fn weight_shape(&self) -> [usize; 4] {
        [self.out_channels, self.in_channels, self.kernel_h, self.kernel_w]
    }

    pub(crate) fn check(&self, op: &'static str, x: &Tensor, w: &Tensor) -> Result<([usize; 4], usize, usize)> {
        let [n, c, h, wd] = x.dims4(op)?;
        if c != self.in_channels {
            return Err(Error::shape(
                op,
                format!("input channel dimension is {}, geometry expects {}", c, self.in_channels),
            ));
        }
        let ws = self.weight_shape();
        if w.shape() != ws {
            let names = ["out_channels", "in_channels", "kernel_h", "kernel_w"];
            let dim = w
                .shape()
                .iter()
                .zip(ws.iter())
                .position(|(a, b)| a != b)
                .map(|i| names[i])
                .unwrap_or("rank");
            return Err(Error::shape(
                op,
                format!("weight {} mismatch: got {:?}, expected {:?}", dim, w.shape(), ws),
            ));
        }
        let (ho, wo) = self.out_hw(h, wd)?;
        Ok(([n, c, h, wd], ho, wo))
    }
}

/// `c = a · b` (beta = 0) with explicit row/column strides.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    rsa: usize,
    csa: usize,
    b: &[f64],
    rsb: usize,
    csb: usize,
    c: &mut [f64],
) {
    if m == 0 || n == 0 {
        return;
    }
    assert!(c.len() >= m * n);
    if k == 0 {
        c[..m * n].fill(0.0);
        return;
    }
    assert!(a.len() > (m - 1) * rsa + (k - 1) * csa);
    assert!(b.len() > (k - 1) * rsb + (n - 1) * csb);
    // SAFETY: the asserts above bound every index the kernel touches.
    unsafe {
        matrixmultiply::dgemm(
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
            0.0,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Unfolds x into a `[patch_len, N·Ho·Wo]` matrix. Row index is
/// `(ci·kh + ky)·kw + kx`, column index is `n·(Ho·Wo) + oy·Wo + ox`.
fn im2col(x: &Tensor, g: &ConvGeometry, ho: usize, wo: usize, pad_value: f64) -> Vec<f64> {
    let [n, c, h, w] = x.dims4("im2col").expect("checked by caller");
    let p = ho * wo;
    let cols_n = n * p;
    let k = g.patch_len();
    let mut cols = vec![pad_value; k * cols_n];
    let xd = x.data();
    for ci in 0..c {
        for ky in 0..g.kernel_h {
            for kx in 0..g.kernel_w {
                let row = (ci * g.kernel_h + ky) * g.kernel_w + kx;
                let dst_row = &mut cols[row * cols_n..(row + 1) * cols_n];
                for s in 0..n {
                    let src = &xd[(s * c + ci) * h * w..(s * c + ci + 1) * h * w];
                    let dst = &mut dst_row[s * p..(s + 1) * p];
                    for oy in 0..ho {
                        let iy = (oy * g.stride + ky) as isize - g.padding as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let iy = iy as usize;
                        for ox in 0..wo {
                            let ix = (ox * g.stride + kx) as isize - g.padding as isize;
                            if ix >= 0 && (ix as usize) < w {
                                dst[oy * wo + ox] = src[iy * w + ix as usize];
                            }
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Folds a column-gradient matrix back onto the input; padding positions drop out.
fn col2im(cols: &[f64], g: &ConvGeometry, dims: [usize; 4], ho: usize, wo: usize) -> Tensor {
    let [n, c, h, w] = dims;
    let p = ho * wo;
    let cols_n = n * p;
    let mut out = Tensor::zeros(&dims);
    let od = out.data_mut();
    for ci in 0..c {
        for ky in 0..g.kernel_h {
            for kx in 0..g.kernel_w {
                let row = (ci * g.kernel_h + ky) * g.kernel_w + kx;
                let src_row = &cols[row * cols_n..(row + 1) * cols_n];
                for s in 0..n {
                    let dst = &mut od[(s * c + ci) * h * w..(s * c + ci + 1) * h * w];
                    let src = &src_row[s * p..(s + 1) * p];
                    for oy in 0..ho {
                        let iy = (oy * g.stride + ky) as isize - g.padding as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let iy = iy as usize;
                        for ox in 0..wo {
                            let ix = (ox * g.stride + kx) as isize - g.padding as isize;
                            if ix >= 0 && (ix as usize) < w {
                                dst[iy * w + ix as usize] += src[oy * wo + ox];
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

/// Cross-correlation of x (N×Ci×H×W) with w (Co×Ci×kh×kw), zero padding, no bias.
pub fn conv2d_forward(x: &Tensor, w: &Tensor, g: &ConvGeometry) -> Result<Tensor> {
    conv2d_forward_padded(x, w, g, 0.0)
}

/// As [`conv2d_forward`] with an arbitrary constant in the padded border.
pub(crate) fn conv2d_forward_padded(x: &Tensor, w: &Tensor, g: &ConvGeometry, pad_value: f64) -> Result<Tensor> {
    let ([n, _, _, _], ho, wo) = g.check("conv2d_forward", x, w)?;
    let p = ho * wo;
    let co = g.out_channels;
    let k = g.patch_len();
    let cols = im2col(x, g, ho, wo, pad_value);
    let mut tmp = vec![0.0; co * n * p];
    gemm(co, k, n * p, w.data(), k, 1, &cols, n * p, 1, &mut tmp);
    let mut out = vec![0.0; n * co * p];
    for o in 0..co {
        for s in 0..n {
            out[(s * co + o) * p..(s * co + o + 1) * p].copy_from_slice(&tmp[o * n * p + s * p..o * n * p + (s + 1) * p]);
        }
    }
    Tensor::new(vec![n, co, ho, wo], out)
}

/// Gradients of `sum(grad_out ⊙ conv2d_forward(x, w, g))` with respect to x and w.
pub fn conv2d_backward(x: &Tensor, w: &Tensor, g: &ConvGeometry, grad_out: &Tensor) -> Result<(Tensor, Tensor)> {
    let (gx, gw) = conv2d_backward_padded(x, w, g, grad_out, 0.0, true)?;
    Ok((gx.expect("requested"), gw))
}

pub(crate) fn conv2d_backward_padded(
    x: &Tensor,
    w: &Tensor,
    g: &ConvGeometry,
    grad_out: &Tensor,
    pad_value: f64,
    want_grad_x: bool,
) -> Result<(Option<Tensor>, Tensor)> {
    let (dims, ho, wo) = g.check("conv2d_backward", x, w)?;
    let n = dims[0];
    let co = g.out_channels;
    if grad_out.shape() != [n, co, ho, wo] {
        return Err(Error::shape(
            "conv2d_backward",
            format!("grad_out shape {:?}, expected {:?}", grad_out.shape(), [n, co, ho, wo]),
        ));
    }
    let p = ho * wo;
    let k = g.patch_len();
    let mut gmat = vec![0.0; co * n * p];
    let gd = grad_out.data();
    for o in 0..co {
        for s in 0..n {
            gmat[o * n * p + s * p..o * n * p + (s + 1) * p].copy_from_slice(&gd[(s * co + o) * p..(s * co + o + 1) * p]);
        }
    }
    let cols = im2col(x, g, ho, wo, pad_value);
    let mut gw = vec![0.0; co * k];
    // grad_w[Co, K] = G[Co, NP] · colsᵀ[NP, K]
    gemm(co, n * p, k, &gmat, n * p, 1, &cols, 1, n * p, &mut gw);
    let grad_w = Tensor::new(w.shape().to_vec(), gw)?;
    let grad_x = if want_grad_x {
        let mut gcols = cols;
        // grad_cols[K, NP] = wᵀ[K, Co] · G[Co, NP]
        gemm(k, co, n * p, w.data(), 1, k, &gmat, n * p, 1, &mut gcols);
        Some(col2im(&gcols, g, dims, ho, wo))
    } else {
        None
    };
    Ok((grad_x, grad_w))
}
