use super::Tensor;
use crate::error::{Error, Result};

pub fn avgpool_global_forward(x: &Tensor) -> Result<Tensor> {
    let [n, c, h, w] = x.dims4("avgpool_global")?;
    let sp = h * w;
    if sp == 0 {
        return Err(Error::shape("avgpool_global", "empty spatial extent"));
    }
    let data = x
        .data()
        .chunks_exact(sp)
        .map(|plane| plane.iter().sum::<f64>() / sp as f64)
        .collect();
    Tensor::new(vec![n, c, 1, 1], data)
}

pub fn avgpool_global_backward(input_shape: &[usize], grad_out: &Tensor) -> Result<Tensor> {
    let &[n, c, h, w] = input_shape else {
        return Err(Error::shape("avgpool_global_backward", "input shape must be 4-d"));
    };
    if grad_out.len() != n * c {
        return Err(Error::shape(
            "avgpool_global_backward",
            format!("grad_out {:?} does not match {:?}", grad_out.shape(), input_shape),
        ));
    }
    let sp = h * w;
    let mut out = Vec::with_capacity(n * c * sp);
    for &g in grad_out.data() {
        out.extend(std::iter::repeat(g / sp as f64).take(sp));
    }
    Tensor::new(input_shape.to_vec(), out)
}

pub fn avgpool2x2_forward(x: &Tensor) -> Result<Tensor> {
    let [n, c, h, w] = x.dims4("avgpool2x2")?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::shape("avgpool2x2", format!("extents {}x{} must be even", h, w)));
    }
    let (ho, wo) = (h / 2, w / 2);
    let xd = x.data();
    let mut out = vec![0.0; n * c * ho * wo];
    for plane in 0..n * c {
        let src = &xd[plane * h * w..(plane + 1) * h * w];
        let dst = &mut out[plane * ho * wo..(plane + 1) * ho * wo];
        for oy in 0..ho {
            for ox in 0..wo {
                let (iy, ix) = (2 * oy, 2 * ox);
                dst[oy * wo + ox] =
                    (src[iy * w + ix] + src[iy * w + ix + 1] + src[(iy + 1) * w + ix] + src[(iy + 1) * w + ix + 1]) / 4.0;
            }
        }
    }
    Tensor::new(vec![n, c, ho, wo], out)
}

pub fn avgpool2x2_backward(input_shape: &[usize], grad_out: &Tensor) -> Result<Tensor> {
    let &[n, c, h, w] = input_shape else {
        return Err(Error::shape("avgpool2x2_backward", "input shape must be 4-d"));
    };
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::shape("avgpool2x2_backward", format!("extents {}x{} must be even", h, w)));
    }
    let (ho, wo) = (h / 2, w / 2);
    if grad_out.shape() != [n, c, ho, wo] {
        return Err(Error::shape(
            "avgpool2x2_backward",
            format!("grad_out {:?}, expected {:?}", grad_out.shape(), [n, c, ho, wo]),
        ));
    }
    let gd = grad_out.data();
    let mut out = vec![0.0; n * c * h * w];
    for plane in 0..n * c {
        let src = &gd[plane * ho * wo..(plane + 1) * ho * wo];
        let dst = &mut out[plane * h * w..(plane + 1) * h * w];
        for y in 0..h {
            for x in 0..w {
                dst[y * w + x] = src[(y / 2) * wo + x / 2] / 4.0;
            }
        }
    }
    Tensor::new(input_shape.to_vec(), out)
}
