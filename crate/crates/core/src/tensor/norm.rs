use super::{Mode, Tensor};
use crate::error::{Error, Result};

/// Per-channel batch-norm parameters and running statistics.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchNormState {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub eps: f64,
    pub momentum: f64,
}

impl BatchNormState {
    pub fn new(channels: usize, eps: f64, momentum: f64) -> Self {
        BatchNormState {
            gamma: vec![1.0; channels],
            beta: vec![0.0; channels],
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
            eps,
            momentum,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }
}

/// What backward needs from a forward call.
#[derive(Clone, Debug)]
pub struct BatchNormCache {
    x_hat: Tensor,
    inv_std: Vec<f64>,
    mode: Mode,
}

/// Splits a tensor with channel axis 1 into (batch, channels, spatial).
fn layout(op: &'static str, x: &Tensor, channels: usize) -> Result<(usize, usize)> {
    let s = x.shape();
    if s.len() < 2 || s[1] != channels {
        return Err(Error::shape(
            op,
            format!("input {:?} does not have {} channels on axis 1", s, channels),
        ));
    }
    Ok((s[0], s[2..].iter().product()))
}

/// Train mode normalizes with batch statistics (biased variance) and updates the
/// running estimates with `r ← (1 − m)·r + m·batch` (unbiased variance for the
/// running estimate). Infer mode uses the running estimates only.
pub fn batchnorm_forward(x: &Tensor, state: &mut BatchNormState, mode: Mode) -> Result<(Tensor, BatchNormCache)> {
    let c = state.channels();
    if state.beta.len() != c || state.running_mean.len() != c || state.running_var.len() != c {
        return Err(Error::shape("batchnorm_forward", "parameter vectors differ in length"));
    }
    if state.eps <= 0.0 && mode == Mode::Train {
        return Err(Error::invalid("batchnorm_forward", "eps must be positive"));
    }
    let (n, sp) = layout("batchnorm_forward", x, c)?;
    let xd = x.data();
    let mut inv_std = vec![0.0; c];
    let mut x_hat = vec![0.0; xd.len()];
    match mode {
        Mode::Train => {
            let m = n * sp;
            if m == 0 {
                return Err(Error::invalid("batchnorm_forward", "empty batch in train mode"));
            }
            for ch in 0..c {
                let mut sum = 0.0;
                for s in 0..n {
                    sum += xd[(s * c + ch) * sp..(s * c + ch + 1) * sp].iter().sum::<f64>();
                }
                let mean = sum / m as f64;
                let mut sq = 0.0;
                for s in 0..n {
                    for v in &xd[(s * c + ch) * sp..(s * c + ch + 1) * sp] {
                        sq += (v - mean) * (v - mean);
                    }
                }
                let var = sq / m as f64;
                let inv = 1.0 / (var + state.eps).sqrt();
                inv_std[ch] = inv;
                for s in 0..n {
                    let r = (s * c + ch) * sp..(s * c + ch + 1) * sp;
                    for (o, v) in x_hat[r.clone()].iter_mut().zip(&xd[r]) {
                        *o = (v - mean) * inv;
                    }
                }
                let unbiased = if m > 1 { sq / (m - 1) as f64 } else { var };
                let mo = state.momentum;
                state.running_mean[ch] = (1.0 - mo) * state.running_mean[ch] + mo * mean;
                state.running_var[ch] = (1.0 - mo) * state.running_var[ch] + mo * unbiased;
            }
        }
        Mode::Infer => {
            for ch in 0..c {
                let inv = 1.0 / (state.running_var[ch] + state.eps).sqrt();
                inv_std[ch] = inv;
                let mean = state.running_mean[ch];
                for s in 0..n {
                    let r = (s * c + ch) * sp..(s * c + ch + 1) * sp;
                    for (o, v) in x_hat[r.clone()].iter_mut().zip(&xd[r]) {
                        *o = (v - mean) * inv;
                    }
                }
            }
        }
    }
    let mut y = x_hat.clone();
    for s in 0..n {
        for ch in 0..c {
            for v in &mut y[(s * c + ch) * sp..(s * c + ch + 1) * sp] {
                *v = state.gamma[ch] * *v + state.beta[ch];
            }
        }
    }
    let shape = x.shape().to_vec();
    Ok((
        Tensor::new(shape.clone(), y)?,
        BatchNormCache {
            x_hat: Tensor::new(shape, x_hat)?,
            inv_std,
            mode,
        },
    ))
}

/// Returns `(grad_x, grad_gamma, grad_beta)`.
pub fn batchnorm_backward(
    cache: &BatchNormCache,
    gamma: &[f64],
    grad_out: &Tensor,
) -> Result<(Tensor, Vec<f64>, Vec<f64>)> {
    let c = gamma.len();
    if grad_out.shape() != cache.x_hat.shape() {
        return Err(Error::shape(
            "batchnorm_backward",
            format!("grad_out {:?} vs cached {:?}", grad_out.shape(), cache.x_hat.shape()),
        ));
    }
    let (n, sp) = layout("batchnorm_backward", grad_out, c)?;
    let gd = grad_out.data();
    let xh = cache.x_hat.data();
    let mut g_gamma = vec![0.0; c];
    let mut g_beta = vec![0.0; c];
    for ch in 0..c {
        for s in 0..n {
            let r = (s * c + ch) * sp..(s * c + ch + 1) * sp;
            for (g, h) in gd[r.clone()].iter().zip(&xh[r]) {
                g_beta[ch] += g;
                g_gamma[ch] += g * h;
            }
        }
    }
    let mut gx = vec![0.0; gd.len()];
    let m = (n * sp) as f64;
    for ch in 0..c {
        let scale = gamma[ch] * cache.inv_std[ch];
        for s in 0..n {
            let r = (s * c + ch) * sp..(s * c + ch + 1) * sp;
            for ((o, g), h) in gx[r.clone()].iter_mut().zip(&gd[r.clone()]).zip(&xh[r]) {
                *o = match cache.mode {
                    Mode::Infer => scale * g,
                    Mode::Train => scale * (g - g_beta[ch] / m - h * g_gamma[ch] / m),
                };
            }
        }
    }
    Ok((Tensor::new(grad_out.shape().to_vec(), gx)?, g_gamma, g_beta))
}
