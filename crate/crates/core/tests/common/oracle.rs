//! Independent straight-line references for the binary kernel and the tree
//! learner.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use reactxgb::binary::{binary_conv2d, BitPlane};
use reactxgb::data::FeatureMatrix;
use reactxgb::gbdt::{best_split, grow_tree, Direction, GbdtConfig, SortedColumns, SplitCandidate, TreeNode};
use reactxgb::tensor::ConvGeometry;

/// Direct ±1 convolution with −1 padding, as integers.
pub fn sign_conv(x: &[i8], xs: [usize; 4], w: &[i8], g: &ConvGeometry) -> (Vec<i64>, [usize; 4]) {
    let [n, c, h, wd] = xs;
    let (k, s, p) = (g.kernel_h as isize, g.stride as isize, g.padding as isize);
    let oh = ((h as isize + 2 * p - k) / s + 1) as usize;
    let ow = ((wd as isize + 2 * p - k) / s + 1) as usize;
    let co = g.out_channels;
    let mut out = vec![0i64; n * co * oh * ow];
    for b in 0..n {
        for o in 0..co {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = 0i64;
                    for ci in 0..c {
                        for ky in 0..k {
                            for kx in 0..k {
                                let iy = oy as isize * s - p + ky;
                                let ix = ox as isize * s - p + kx;
                                let xv = if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                    -1
                                } else {
                                    x[((b * c + ci) * h + iy as usize) * wd + ix as usize]
                                };
                                let wv = w[((o * c + ci) * k as usize + ky as usize) * k as usize + kx as usize];
                                acc += (xv * wv) as i64;
                            }
                        }
                    }
                    out[((b * co + o) * oh + oy) * ow + ox] = acc;
                }
            }
        }
    }
    (out, [n, co, oh, ow])
}

fn signs(rng: &mut ChaCha8Rng, n: usize) -> Vec<i8> {
    (0..n).map(|_| if rng.gen::<bool>() { 1 } else { -1 }).collect()
}

fn plane(shape: &[usize], v: &[i8]) -> BitPlane {
    BitPlane::from_signs(shape, v.iter().map(|&s| s > 0)).unwrap()
}

/// One random geometry within 2×4×8×8: `binary_conv2d` against
/// `α ⊙ sign_conv`, compared exactly.
pub fn binary_conv_case(seed: u64) -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (n, c, co) = (rng.gen_range(1..=2), rng.gen_range(1..=4), rng.gen_range(1..=4));
    let (h, w) = (rng.gen_range(1..=8), rng.gen_range(1..=8));
    let stride = rng.gen_range(1..=2);
    let pad = rng.gen_range(0..=1usize);
    let k = rng.gen_range(1..=3usize).min(h.min(w) + 2 * pad);
    let g = ConvGeometry::square(c, co, k, stride, pad);
    let x = signs(&mut rng, n * c * h * w);
    let wt = signs(&mut rng, co * c * k * k);
    let alpha: Vec<f64> = if rng.gen_bool(0.25) {
        vec![1.0; co]
    } else {
        (0..co).map(|_| rng.gen_range(0.01..2.0)).collect()
    };
    let (want, shape) = sign_conv(&x, [n, c, h, w], &wt, &g);
    let got = binary_conv2d(&plane(&[n, c, h, w], &x), &plane(&g.weight_shape(), &wt), &g, &alpha)
        .map_err(|e| e.to_string())?;
    if got.shape() != shape {
        return Err(format!("shape {:?}, expected {:?}", got.shape(), shape));
    }
    let sp = shape[2] * shape[3];
    for (i, (&y, &z)) in got.data().iter().zip(&want).enumerate() {
        let a = alpha[(i / sp) % co];
        if y != z as f64 * a {
            return Err(format!(
                "geometry n{} c{} co{} {}x{} k{} s{} p{}: out[{}] = {}, expected {}·{}",
                n, c, co, h, w, k, stride, pad, i, y, z, a
            ));
        }
    }
    Ok(())
}

/// Small dataset whose gradient sums are exact in binary floating point, so
/// gain ties are real ties.
pub struct SplitProblem {
    pub x: FeatureMatrix,
    pub g: Vec<f64>,
    pub h: Vec<f64>,
    pub cfg: GbdtConfig,
}

pub fn split_problem(seed: u64) -> SplitProblem {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.gen_range(1..=64);
    let f = rng.gen_range(1..=8);
    let levels = rng.gen_range(1..=8);
    let values = (0..n * f).map(|_| rng.gen_range(0..levels) as f64 * 0.5).collect();
    let x = FeatureMatrix::new(n, f, values, vec![0; n]).unwrap();
    let g = (0..n).map(|_| rng.gen_range(-8..=8) as f64 / 8.0).collect();
    let h = (0..n).map(|_| rng.gen_range(1..=8) as f64 / 16.0).collect();
    let cfg = GbdtConfig {
        learning_rate: [1.0, 0.5, 0.25][rng.gen_range(0..3)],
        reg_lambda: [0.0, 1.0, 2.0][rng.gen_range(0..3)],
        reg_gamma: [0.0, 0.0, 0.125][rng.gen_range(0..3)],
        min_child_weight: [0.0, 0.25, 1.0][rng.gen_range(0..3)],
        max_depth: rng.gen_range(1..=5),
        class_count: 2,
        ..GbdtConfig::default()
    };
    SplitProblem { x, g, h, cfg }
}

fn score(g: f64, h: f64, lambda: f64) -> f64 {
    g * g / (h + lambda)
}

/// Every feature, every threshold between adjacent distinct member values;
/// highest gain wins, ties keep the lowest feature then the lowest threshold.
pub fn brute_best_split(p: &SplitProblem, members: &[usize]) -> Option<SplitCandidate> {
    let cfg = &p.cfg;
    let gt: f64 = members.iter().map(|&i| p.g[i]).sum();
    let ht: f64 = members.iter().map(|&i| p.h[i]).sum();
    let mut best: Option<SplitCandidate> = None;
    for f in 0..p.x.cols {
        let mut vals: Vec<f64> = members.iter().map(|&i| p.x.get(i, f)).collect();
        vals.sort_by(f64::total_cmp);
        vals.dedup();
        for pair in vals.windows(2) {
            let t = (pair[0] + pair[1]) / 2.0;
            let left: Vec<usize> = members.iter().copied().filter(|&i| p.x.get(i, f) < t).collect();
            let gl: f64 = left.iter().map(|&i| p.g[i]).sum();
            let hl: f64 = left.iter().map(|&i| p.h[i]).sum();
            let (gr, hr) = (gt - gl, ht - hl);
            if hl < cfg.min_child_weight || hr < cfg.min_child_weight {
                continue;
            }
            let gain = 0.5 * (score(gl, hl, cfg.reg_lambda) + score(gr, hr, cfg.reg_lambda)
                - score(gt, ht, cfg.reg_lambda))
                - cfg.reg_gamma;
            if gain > 0.0 && best.map_or(true, |b| gain > b.gain) {
                best = Some(SplitCandidate { feature: f, threshold: t, gain });
            }
        }
    }
    best
}

/// Recursive greedy tree from [`brute_best_split`].
pub fn brute_tree(p: &SplitProblem, members: &[usize], depth: usize) -> TreeNode {
    let split = if depth < p.cfg.max_depth { brute_best_split(p, members) } else { None };
    match split {
        None => {
            let g: f64 = members.iter().map(|&i| p.g[i]).sum();
            let h: f64 = members.iter().map(|&i| p.h[i]).sum();
            TreeNode::Leaf {
                weight: -p.cfg.learning_rate * g / (h + p.cfg.reg_lambda),
            }
        }
        Some(s) => {
            let (l, r): (Vec<usize>, Vec<usize>) =
                members.iter().partition(|&&i| p.x.get(i, s.feature) < s.threshold);
            TreeNode::Split {
                feature: s.feature,
                threshold: s.threshold,
                default: Direction::Left,
                left: Box::new(brute_tree(p, &l, depth + 1)),
                right: Box::new(brute_tree(p, &r, depth + 1)),
            }
        }
    }
}

/// `best_split` on all rows and on a random subset, then `grow_tree`, each
/// against brute force.
pub fn split_case(seed: u64) -> Result<(), String> {
    let p = split_problem(seed);
    let cols = SortedColumns::new(&p.x);
    let all: Vec<usize> = (0..p.x.rows).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(!seed);
    let some: Vec<usize> = all.iter().copied().filter(|_| rng.gen_bool(0.6)).collect();
    for members in [&all, &some] {
        let got = best_split(&cols, &p.g, &p.h, members, &p.cfg);
        let want = brute_best_split(&p, members);
        if got != want {
            return Err(format!("{} members: best_split {:?}, brute force {:?}", members.len(), got, want));
        }
    }
    let got = grow_tree(&cols, &p.x, &p.g, &p.h, &p.cfg);
    let want = brute_tree(&p, &all, 0);
    if got != want {
        return Err(format!("grow_tree differs from brute force:\n{:?}\n{:?}", got, want));
    }
    Ok(())
}

/// Gaussian class blobs plus noise features.
pub fn synthetic_features(seed: u64) -> (FeatureMatrix, usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = rng.gen_range(2..=6);
    let n = rng.gen_range(40..=240);
    let f = rng.gen_range(2..=12);
    let centers: Vec<f64> = (0..k * f).map(|_| rng.gen_range(-2.0..2.0)).collect();
    let mut values = Vec::with_capacity(n * f);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let y = rng.gen_range(0..k);
        labels.push(y as u8);
        for j in 0..f {
            values.push(centers[y * f + j] + rng.gen_range(-1.5..1.5));
        }
    }
    (FeatureMatrix::new(n, f, values, labels).unwrap(), k)
}
