//! Central finite differences against every public backward op. Each case
//! draws its shapes and values from `seed`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use reactxgb::binary::{rprelu_backward, rprelu_forward, rsign_backward, RPReLUParams, RSignParams};
use reactxgb::tensor::*;

pub const EPS: f64 = 1e-5;
pub const TOL: f64 = 1e-4;

pub type Case = fn(u64) -> Result<(), String>;

pub const CASES: &[(&str, Case)] = &[
    ("conv2d", conv2d),
    ("batchnorm-train", batchnorm_train),
    ("batchnorm-infer", batchnorm_infer),
    ("rprelu", rprelu),
    ("rsign", rsign),
    ("avgpool", avgpool),
    ("softmax-xent", softmax_xent),
];

fn rand_vec(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(lo..hi)).collect()
}

fn tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    Tensor::new(shape.to_vec(), rand_vec(rng, shape.iter().product(), -1.0, 1.0)).unwrap()
}

fn like(t: &Tensor, v: &[f64]) -> Tensor {
    Tensor::new(t.shape().to_vec(), v.to_vec()).unwrap()
}

/// Moves values away from the listed kinks so a ±EPS probe stays on one piece.
fn avoid(v: &mut [f64], kinks: &[f64], shift: &[f64], sp: usize) {
    for (i, x) in v.iter_mut().enumerate() {
        let s = shift[(i / sp) % shift.len()];
        for k in kinks {
            if (*x - s - k).abs() < 1e-3 {
                *x += 2e-3;
            }
        }
    }
}

/// Relative error, absolute when both sides are below 1e-6.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs());
    if scale < 1e-6 {
        (analytic - numeric).abs()
    } else {
        (analytic - numeric).abs() / scale
    }
}

fn check(name: &str, analytic: &[f64], numeric: &[f64]) -> Result<(), String> {
    if analytic.len() != numeric.len() {
        return Err(format!("{}: {} analytic vs {} numeric entries", name, analytic.len(), numeric.len()));
    }
    for (i, (a, b)) in analytic.iter().zip(numeric).enumerate() {
        let err = rel_err(*a, *b);
        if !(err <= TOL) {
            return Err(format!("{}[{}]: analytic {:e}, numeric {:e}, err {:e}", name, i, a, b, err));
        }
    }
    Ok(())
}

/// `Σ r ⊙ f(x)` probed at `x ± EPS·e_i` for every `i`.
fn numeric_grad(x: &[f64], r: &[f64], f: &mut dyn FnMut(&[f64]) -> Vec<f64>) -> Vec<f64> {
    let mut v = x.to_vec();
    (0..x.len())
        .map(|i| {
            v[i] = x[i] + EPS;
            let up: f64 = f(&v).iter().zip(r).map(|(a, b)| a * b).sum();
            v[i] = x[i] - EPS;
            let down: f64 = f(&v).iter().zip(r).map(|(a, b)| a * b).sum();
            v[i] = x[i];
            (up - down) / (2.0 * EPS)
        })
        .collect()
}

pub fn approx_sign(u: f64) -> f64 {
    if u < -1.0 {
        -1.0
    } else if u < 0.0 {
        2.0 * u + u * u
    } else if u < 1.0 {
        2.0 * u - u * u
    } else {
        1.0
    }
}

pub fn conv2d(seed: u64) -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (n, ci, co) = (rng.gen_range(1..3), rng.gen_range(1..4), rng.gen_range(1..4));
    let (k, stride, pad, h) = (rng.gen_range(1..4), rng.gen_range(1..3), rng.gen_range(0..2), rng.gen_range(3..7));
    let g = ConvGeometry::square(ci, co, k, stride, pad);
    let x = tensor(&mut rng, &[n, ci, h, h]);
    let w = tensor(&mut rng, &g.weight_shape());
    let y = conv2d_forward(&x, &w, &g).unwrap();
    let r = tensor(&mut rng, y.shape());
    let (gx, gw) = conv2d_backward(&x, &w, &g, &r).unwrap();
    let nx = numeric_grad(x.data(), r.data(), &mut |v| conv2d_forward(&like(&x, v), &w, &g).unwrap().into_data());
    let nw = numeric_grad(w.data(), r.data(), &mut |v| conv2d_forward(&x, &like(&w, v), &g).unwrap().into_data());
    check("conv dx", gx.data(), &nx)?;
    check("conv dw", gw.data(), &nw)
}

pub fn batchnorm_train(seed: u64) -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (n, c, h) = (rng.gen_range(2..4), rng.gen_range(1..4), rng.gen_range(1..4));
    let x = tensor(&mut rng, &[n, c, h, h]);
    let mut state = BatchNormState::new(c, 1e-5, 0.1);
    state.gamma = rand_vec(&mut rng, c, 0.5, 1.5);
    state.beta = rand_vec(&mut rng, c, -0.5, 0.5);
    let (y, cache) = batchnorm_forward(&x, &mut state.clone(), Mode::Train).unwrap();
    let r = tensor(&mut rng, y.shape());
    let (gx, gg, gb) = batchnorm_backward(&cache, &state.gamma, &r).unwrap();
    let fwd = |x: &Tensor, s: &BatchNormState| batchnorm_forward(x, &mut s.clone(), Mode::Train).unwrap().0.into_data();
    let nx = numeric_grad(x.data(), r.data(), &mut |v| fwd(&like(&x, v), &state));
    let ng = numeric_grad(&state.gamma, r.data(), &mut |v| {
        let mut s = state.clone();
        s.gamma = v.to_vec();
        fwd(&x, &s)
    });
    let nb = numeric_grad(&state.beta, r.data(), &mut |v| {
        let mut s = state.clone();
        s.beta = v.to_vec();
        fwd(&x, &s)
    });
    check("bn dx", gx.data(), &nx)?;
    check("bn dgamma", &gg, &ng)?;
    check("bn dbeta", &gb, &nb)
}

pub fn batchnorm_infer(seed: u64) -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (n, c) = (rng.gen_range(1..3), rng.gen_range(1..4));
    let x = tensor(&mut rng, &[n, c, 2, 2]);
    let mut state = BatchNormState::new(c, 1e-5, 0.1);
    state.gamma = rand_vec(&mut rng, c, 0.5, 1.5);
    state.running_mean = rand_vec(&mut rng, c, -0.5, 0.5);
    state.running_var = rand_vec(&mut rng, c, 0.5, 2.0);
    let (y, cache) = batchnorm_forward(&x, &mut state.clone(), Mode::Infer).unwrap();
    let r = tensor(&mut rng, y.shape());
    let (gx, _, _) = batchnorm_backward(&cache, &state.gamma, &r).unwrap();
    let nx = numeric_grad(x.data(), r.data(), &mut |v| {
        batchnorm_forward(&like(&x, v), &mut state.clone(), Mode::Infer).unwrap().0.into_data()
    });
    check("bn infer dx", gx.data(), &nx)
}

pub fn rprelu(seed: u64) -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (n, c, h) = (rng.gen_range(1..3), rng.gen_range(1..4), rng.gen_range(1..4));
    let p = RPReLUParams {
        gamma: rand_vec(&mut rng, c, -0.5, 0.5),
        zeta: rand_vec(&mut rng, c, -0.5, 0.5),
        beta: rand_vec(&mut rng, c, 0.05, 0.5),
    };
    let mut x = tensor(&mut rng, &[n, c, h, h]);
    avoid(x.data_mut(), &[0.0], &p.gamma, h * h);
    let y = rprelu_forward(&x, &p).unwrap();
    let r = tensor(&mut rng, y.shape());
    let (gx, gg, gz, gb) = rprelu_backward(&x, &p, &r).unwrap();
    let f = |x: &Tensor, p: &RPReLUParams| rprelu_forward(x, p).unwrap().into_data();
    let nx = numeric_grad(x.data(), r.data(), &mut |v| f(&like(&x, v), &p));
    let ng = numeric_grad(&p.gamma, r.data(), &mut |v| f(&x, &RPReLUParams { gamma: v.to_vec(), ..p.clone() }));
    let nz = numeric_grad(&p.zeta, r.data(), &mut |v| f(&x, &RPReLUParams { zeta: v.to_vec(), ..p.clone() }));
    let nb = numeric_grad(&p.beta, r.data(), &mut |v| f(&x, &RPReLUParams { beta: v.to_vec(), ..p.clone() }));
    check("rprelu dx", gx.data(), &nx)?;
    check("rprelu dgamma", &gg, &ng)?;
    check("rprelu dzeta", &gz, &nz)?;
    check("rprelu dbeta", &gb, &nb)
}

/// RSign's backward against the ApproxSign surrogate forward.
pub fn rsign(seed: u64) -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (n, c, h) = (rng.gen_range(1..3), rng.gen_range(1..4), rng.gen_range(1..4));
    let p = RSignParams { alpha: rand_vec(&mut rng, c, -0.5, 0.5) };
    let sp = h * h;
    let mut x = Tensor::new(vec![n, c, h, h], rand_vec(&mut rng, n * c * sp, -1.5, 1.5)).unwrap();
    avoid(x.data_mut(), &[-1.0, 0.0, 1.0], &p.alpha, sp);
    let surrogate = |x: &[f64], alpha: &[f64]| -> Vec<f64> {
        x.iter().enumerate().map(|(i, v)| approx_sign(v - alpha[(i / sp) % c])).collect()
    };
    let r = tensor(&mut rng, x.shape());
    let (gx, ga) = rsign_backward(&x, &p, &r).unwrap();
    let nx = numeric_grad(x.data(), r.data(), &mut |v| surrogate(v, &p.alpha));
    let na = numeric_grad(&p.alpha, r.data(), &mut |v| surrogate(x.data(), v));
    check("rsign dx", gx.data(), &nx)?;
    check("rsign dalpha", &ga, &na)
}

pub fn avgpool(seed: u64) -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (n, c, h, w) = (rng.gen_range(1..3), rng.gen_range(1..4), rng.gen_range(1..4), rng.gen_range(1..4));
    let x = tensor(&mut rng, &[n, c, 2 * h, 2 * w]);
    let y = avgpool2x2_forward(&x).unwrap();
    let r = tensor(&mut rng, y.shape());
    let gx = avgpool2x2_backward(x.shape(), &r).unwrap();
    let nx = numeric_grad(x.data(), r.data(), &mut |v| avgpool2x2_forward(&like(&x, v)).unwrap().into_data());
    check("avgpool2x2 dx", gx.data(), &nx)?;
    let y = avgpool_global_forward(&x).unwrap();
    let r = tensor(&mut rng, y.shape());
    let gx = avgpool_global_backward(x.shape(), &r).unwrap();
    let nx = numeric_grad(x.data(), r.data(), &mut |v| avgpool_global_forward(&like(&x, v)).unwrap().into_data());
    check("global pool dx", gx.data(), &nx)
}

pub fn softmax_xent(seed: u64) -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (n, k) = (rng.gen_range(1..5), rng.gen_range(2..12));
    let z = Tensor::new(vec![n, k], rand_vec(&mut rng, n * k, -4.0, 4.0)).unwrap();
    let y: Vec<usize> = (0..n).map(|_| rng.gen_range(0..k)).collect();
    let (_, g) = softmax_cross_entropy(&z, &y).unwrap();
    let nz = numeric_grad(z.data(), &[1.0], &mut |v| vec![softmax_cross_entropy(&like(&z, v), &y).unwrap().0]);
    check("cross-entropy dz", g.data(), &nz)
}
