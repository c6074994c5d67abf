use super::Tensor;
use crate::error::{Error, Result};

/// Decides weight-decay eligibility and post-step clipping.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamRole {
    /// Real-valued conv / FC weights.
    Fp32Weight,
    /// Latent weights whose sign is the deployed binary weight; clipped to [−1, 1].
    BinaryLatent,
    /// Batch-norm scale and shift.
    Norm,
    /// RSign / RPReLU shifts and slopes.
    Shift,
}

/// A trainable tensor with its gradient and momentum buffer.
#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
    pub grad: Tensor,
    pub velocity: Tensor,
    pub role: ParamRole,
}

impl Param {
    pub fn new(name: impl Into<String>, value: Tensor, role: ParamRole) -> Self {
        let shape = value.shape().to_vec();
        Param {
            name: name.into(),
            value,
            grad: Tensor::zeros(&shape),
            velocity: Tensor::zeros(&shape),
            role,
        }
    }

    pub fn zero_grad(&mut self) {
        self.grad.data_mut().fill(0.0);
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SgdHyper {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    /// When false, decay applies to `Fp32Weight` parameters only.
    pub decay_all: bool,
}

/// `v ← μ·v + g + λ·p; p ← p − lr·v`, applied to each parameter in place.
pub fn sgd_step(params: &mut [&mut Param], hp: &SgdHyper) -> Result<()> {
    if !(hp.lr >= 0.0) || !hp.lr.is_finite() {
        return Err(Error::invalid("sgd_step", format!("learning rate {} must be finite and >= 0", hp.lr)));
    }
    if !(0.0..1.0).contains(&hp.momentum) {
        return Err(Error::invalid("sgd_step", format!("momentum {} outside [0, 1)", hp.momentum)));
    }
    for p in params.iter() {
        if p.grad.shape() != p.value.shape() || p.velocity.shape() != p.value.shape() {
            return Err(Error::shape(
                "sgd_step",
                format!("{}: value {:?}, grad {:?}", p.name, p.value.shape(), p.grad.shape()),
            ));
        }
    }
    for p in params.iter_mut() {
        let decay = if hp.decay_all || p.role == ParamRole::Fp32Weight {
            hp.weight_decay
        } else {
            0.0
        };
        let clip = p.role == ParamRole::BinaryLatent;
        let Param {
            value, grad, velocity, ..
        } = &mut **p;
        for ((w, g), v) in value.data_mut().iter_mut().zip(grad.data()).zip(velocity.data_mut()) {
            *v = hp.momentum * *v + g + decay * *w;
            *w -= hp.lr * *v;
            if clip {
                *w = w.clamp(-1.0, 1.0);
            }
        }
    }
    Ok(())
}
