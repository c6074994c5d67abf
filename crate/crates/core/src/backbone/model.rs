use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::layers::{Block, Bn, Fc, ModelOptions, Stem};
use super::spec::{LayerSpec, NetworkSpec};
use crate::cost::layer_prefix;
use crate::error::{Error, Result};
use crate::tensor::{avgpool_global_backward, avgpool_global_forward, Mode, Param, Tensor};

/// Model state built from a [`NetworkSpec`]: the stem, the binary blocks, the
/// global pool and an optional FC head.
#[derive(Clone, Debug)]
pub struct Network {
    spec: NetworkSpec,
    opts: ModelOptions,
    stem: Stem,
    blocks: Vec<Block>,
    fc: Option<Fc>,
    pool_in: Option<Vec<usize>>,
}

/// Running batch-norm statistics, named like parameters.
pub struct Buffer<'a> {
    pub name: String,
    pub values: &'a mut Vec<f64>,
}

impl Network {
    /// Deterministic initialisation from `seed`.
    pub fn build(spec: &NetworkSpec, opts: ModelOptions, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut stem = None;
        let mut blocks = Vec::new();
        let mut fc = None;
        for (i, layer) in spec.layers.iter().enumerate() {
            match *layer {
                LayerSpec::FirstConvFp32 { .. } => {
                    let g = layer.main_conv(spec.input[0]).expect("conv layer");
                    stem = Some(Stem::new(g, &opts, &mut rng));
                }
                LayerSpec::BinaryBlockNormal { channels } => {
                    blocks.push(Block::new(&layer_prefix(i, layer), channels, channels, 1, &opts, &mut rng));
                }
                LayerSpec::BinaryBlockReduction {
                    in_channels,
                    out_channels,
                    stride,
                } => {
                    blocks.push(Block::new(
                        &layer_prefix(i, layer),
                        in_channels,
                        out_channels,
                        stride,
                        &opts,
                        &mut rng,
                    ));
                }
                LayerSpec::GlobalPool => {}
                LayerSpec::FcHead { classes } => fc = Some(Fc::new(spec.feature_dim, classes, &mut rng)),
            }
        }
        Ok(Network {
            spec: spec.clone(),
            opts,
            stem: stem.expect("validated spec starts with a stem"),
            blocks,
            fc,
            pool_in: None,
        })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn options(&self) -> &ModelOptions {
        &self.opts
    }

    pub fn has_head(&self) -> bool {
        self.fc.is_some()
    }

    pub fn feature_dim(&self) -> usize {
        self.spec.feature_dim
    }

    /// FC weight, `class_count × feature_dim`.
    pub fn fc_weight(&self) -> Option<&Tensor> {
        self.fc.as_ref().map(|f| &f.weight.value)
    }

    /// The same backbone with the FC head removed.
    pub fn without_head(&self) -> Network {
        let mut n = self.clone();
        n.fc = None;
        n.spec = self.spec.without_head();
        n.pool_in = None;
        n
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        let s = x.shape();
        if s.len() != 4 || s[1..] != self.spec.input {
            return Err(Error::shape(
                "forward",
                format!("input {:?} does not match N×{:?}", s, self.spec.input),
            ));
        }
        Ok(())
    }

    /// Pooled features `N × feature_dim` through the real-valued path; train
    /// mode caches for [`Network::backward`].
    pub fn forward_features(&mut self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        self.check_input(x)?;
        let mut h = self.stem.forward(x, mode)?;
        for b in &mut self.blocks {
            h = b.forward(&h, mode)?;
        }
        if mode == Mode::Train {
            self.pool_in = Some(h.shape().to_vec());
        }
        let n = h.shape()[0];
        avgpool_global_forward(&h)?.reshape(&[n, self.spec.feature_dim])
    }

    /// Logits when a head is present, else features.
    pub fn forward(&mut self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        let f = self.forward_features(x, mode)?;
        match &mut self.fc {
            Some(fc) => fc.forward(&f, mode),
            None => Ok(f),
        }
    }

    /// Accumulates parameter gradients from the gradient of the last
    /// train-mode `forward` output.
    pub fn backward(&mut self, grad_out: &Tensor) -> Result<()> {
        let g = match &mut self.fc {
            Some(fc) => fc.backward(grad_out)?,
            None => grad_out.clone(),
        };
        let shape = self
            .pool_in
            .take()
            .ok_or_else(|| Error::invalid("backward", "no train-mode forward to differentiate"))?;
        let mut g = avgpool_global_backward(&shape, &g)?;
        for b in self.blocks.iter_mut().rev() {
            g = b.backward(&g)?;
        }
        self.stem.backward(&g)
    }

    /// Pooled features through the XNOR-popcount kernels; pure.
    pub fn infer_features(&self, x: &Tensor) -> Result<Tensor> {
        self.check_input(x)?;
        let mut h = self.stem.infer(x)?;
        for b in &self.blocks {
            h = b.infer(&h)?;
        }
        let n = h.shape()[0];
        avgpool_global_forward(&h)?.reshape(&[n, self.spec.feature_dim])
    }

    /// Logits (or features without a head) through the popcount kernels.
    pub fn infer(&self, x: &Tensor) -> Result<Tensor> {
        let f = self.infer_features(x)?;
        match &self.fc {
            Some(fc) => fc.infer(&f),
            None => Ok(f),
        }
    }

    /// `infer_features` over consecutive chunks of `x`, sharded across the
    /// rayon pool; rows stay in input order.
    pub fn infer_features_batched(&self, x: &Tensor, batch: usize) -> Result<Tensor> {
        let n = x.shape().first().copied().unwrap_or(0);
        let batch = batch.max(1);
        let starts: Vec<usize> = (0..n).step_by(batch).collect();
        let parts: Vec<Tensor> = starts
            .par_iter()
            .map(|&s| self.infer_features(&x.slice_batch(s, batch.min(n - s))?))
            .collect::<Result<_>>()?;
        let mut data = Vec::with_capacity(n * self.spec.feature_dim);
        for p in parts {
            data.extend(p.into_data());
        }
        Tensor::new(vec![n, self.spec.feature_dim], data)
    }

    /// Every trainable parameter, in a fixed order.
    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut v: Vec<&mut Param> = vec![&mut self.stem.weight, &mut self.stem.bn.gamma, &mut self.stem.bn.beta];
        for b in &mut self.blocks {
            v.extend(b.params_mut());
        }
        if let Some(fc) = &mut self.fc {
            v.push(&mut fc.weight);
        }
        v
    }

    /// Same order as [`Network::params_mut`].
    pub fn params(&self) -> Vec<&Param> {
        let mut v: Vec<&Param> = vec![&self.stem.weight, &self.stem.bn.gamma, &self.stem.bn.beta];
        for b in &self.blocks {
            v.extend([
                &b.rsign1.alpha,
                &b.conv1.weight,
                &b.bn1.gamma,
                &b.bn1.beta,
                &b.rprelu1.gamma,
                &b.rprelu1.zeta,
                &b.rprelu1.beta,
                &b.rsign2.alpha,
                &b.conv2.weight,
                &b.bn2.gamma,
                &b.bn2.beta,
                &b.rprelu2.gamma,
                &b.rprelu2.zeta,
                &b.rprelu2.beta,
            ]);
        }
        if let Some(fc) = &self.fc {
            v.push(&fc.weight);
        }
        v
    }

    fn bns_mut(&mut self) -> Vec<&mut Bn> {
        let mut v = vec![&mut self.stem.bn];
        for b in &mut self.blocks {
            v.extend(b.bns_mut());
        }
        v
    }

    /// Batch-norm running statistics in a fixed order.
    pub fn buffers_mut(&mut self) -> Vec<Buffer<'_>> {
        let mut out = Vec::new();
        for bn in self.bns_mut() {
            let prefix = bn.gamma.name.trim_end_matches(".gamma").to_string();
            let Bn {
                running_mean,
                running_var,
                ..
            } = bn;
            out.push(Buffer {
                name: format!("{}.running_mean", prefix),
                values: running_mean,
            });
            out.push(Buffer {
                name: format!("{}.running_var", prefix),
                values: running_var,
            });
        }
        out
    }

    pub fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }

    /// Deployable parameter payload: every stored value as a 32-bit float,
    /// except binary weights at one bit each, laid out in cost-report row
    /// order. Its length is the cost model's parameter byte count.
    pub fn packed_payload(&self) -> Result<Vec<u8>> {
        let mut w = BitWriter::default();
        let put_all = |w: &mut BitWriter, v: &[f64]| v.iter().for_each(|&x| w.put_f32(x as f32));
        let put_bn = |w: &mut BitWriter, bn: &Bn| {
            put_all(w, bn.gamma.value.data());
            put_all(w, bn.beta.value.data());
            put_all(w, &bn.running_mean);
            put_all(w, &bn.running_var);
        };
        let put_conv = |w: &mut BitWriter, c: &super::layers::BinConv| -> Result<()> {
            let (bits, alpha) = c.binarized()?;
            for i in 0..bits.len() {
                w.put_bit(bits.get(i));
            }
            if self.opts.weight_scaling {
                put_all(w, &alpha);
            }
            Ok(())
        };
        put_all(&mut w, self.stem.weight.value.data());
        put_bn(&mut w, &self.stem.bn);
        for b in &self.blocks {
            put_all(&mut w, b.rsign1.alpha.value.data());
            put_conv(&mut w, &b.conv1)?;
            put_bn(&mut w, &b.bn1);
            for p in [&b.rprelu1.gamma, &b.rprelu1.zeta, &b.rprelu1.beta] {
                put_all(&mut w, p.value.data());
            }
            put_all(&mut w, b.rsign2.alpha.value.data());
            put_conv(&mut w, &b.conv2)?;
            put_bn(&mut w, &b.bn2);
            for p in [&b.rprelu2.gamma, &b.rprelu2.zeta, &b.rprelu2.beta] {
                put_all(&mut w, p.value.data());
            }
        }
        if let Some(fc) = &self.fc {
            put_all(&mut w, fc.weight.value.data());
        }
        Ok(w.finish())
    }
}

#[derive(Default)]
struct BitWriter {
    bytes: Vec<u8>,
    acc: u8,
    nbits: u32,
}

impl BitWriter {
    fn put_bit(&mut self, b: bool) {
        self.acc |= (b as u8) << self.nbits;
        self.nbits += 1;
        if self.nbits == 8 {
            self.bytes.push(self.acc);
            self.acc = 0;
            self.nbits = 0;
        }
    }

    fn put_f32(&mut self, v: f32) {
        if self.nbits == 0 {
            self.bytes.extend_from_slice(&v.to_le_bytes());
        } else {
            for byte in v.to_le_bytes() {
                for i in 0..8 {
                    self.put_bit((byte >> i) & 1 == 1);
                }
            }
        }
    }

    fn finish(mut self) -> Vec<u8> {
        if self.nbits > 0 {
            self.bytes.push(self.acc);
        }
        self.bytes
    }
}

/// Index of the largest value; ties resolve to the lowest index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}
