//! The full segmentation network: encoder, bottleneck, full-scale decoder,
//! and the dual segmentation/embedding heads.

use std::collections::BTreeMap;

use rand::Rng;

use crate::arch::blocks::{Bottleneck, Cafm, MEncoderBlock, MsdBottleneck, SkipModule};
use crate::arch::config::{ConfigError, NetworkConfig};
use crate::nn::{prefixed, Conv2d, ConvBlock, ParamRefs};
use crate::ops;
use crate::tensor::{Scalar, Tensor};

/// Dual network output.
pub struct NetworkOutput<T> {
    /// One-channel segmentation logits at input resolution.
    pub logits: Tensor<T>,
    /// Unit-norm per-pixel embeddings at the deepest spatial resolution.
    pub embeddings: Tensor<T>,
}

/// Per-pixel L2 normalization with a degenerate-vector guard.
struct EmbedNorm<T> {
    cache: Option<(Tensor<T>, Vec<T>, Vec<bool>)>, // (unit vectors, norms, guards)
}

impl<T: Scalar> EmbedNorm<T> {
    const GUARD: f64 = 1e-12;

    fn new() -> Self {
        Self { cache: None }
    }

    fn forward(&mut self, pre: &Tensor<T>, train: bool) -> Tensor<T> {
        let [n, c, h, w] = pre.shape();
        let plane = h * w;
        let mut out = Tensor::zeros(pre.shape());
        let mut norms = vec![T::zero(); n * plane];
        let mut guards = vec![false; n * plane];
        for b in 0..n {
            let src = pre.sample(b);
            let dst = out.sample_mut(b);
            for p in 0..plane {
                let mut sq = T::zero();
                for ch in 0..c {
                    let v = src[ch * plane + p];
                    sq += v * v;
                }
                let norm = sq.sqrt();
                if norm.as_f64() < Self::GUARD {
                    // Degenerate vector: emit a fixed unit basis vector.
                    dst[p] = T::one();
                    for ch in 1..c {
                        dst[ch * plane + p] = T::zero();
                    }
                    guards[b * plane + p] = true;
                    norms[b * plane + p] = T::one();
                } else {
                    for ch in 0..c {
                        dst[ch * plane + p] = src[ch * plane + p] / norm;
                    }
                    norms[b * plane + p] = norm;
                }
            }
        }
        self.cache = train.then(|| (out.clone(), norms, guards));
        out
    }

    fn backward(&mut self, grad_out: &Tensor<T>) -> Tensor<T> {
        let (unit, norms, guards) = self.cache.take().expect("embed norm backward without forward");
        let [n, c, h, w] = grad_out.shape();
        let plane = h * w;
        let mut dx = Tensor::zeros(grad_out.shape());
        for b in 0..n {
            let g = grad_out.sample(b);
            let u = unit.sample(b);
            let dst = dx.sample_mut(b);
            for p in 0..plane {
                if guards[b * plane + p] {
                    continue; // constant output; zero gradient
                }
                let norm = norms[b * plane + p];
                let mut dot = T::zero();
                for ch in 0..c {
                    dot += u[ch * plane + p] * g[ch * plane + p];
                }
                for ch in 0..c {
                    let i = ch * plane + p;
                    dst[i] = (g[i] - u[i] * dot) / norm;
                }
            }
        }
        dx
    }
}

struct ModelCache {
    pool_args: Vec<(Vec<u32>, [usize; 4])>,
    skip_pool_args: BTreeMap<(usize, usize), (Vec<u32>, [usize; 4])>,
    node_shapes: Vec<[usize; 4]>,
}

/// Full segmentation network with explicit backward.
///
/// `forward(train=true)` caches activations; `backward` then accumulates
/// parameter gradients and returns the gradient w.r.t. the input. One
/// instance must not be shared across threads mid-pass; distinct instances
/// are independent.
pub struct MsaUnet3p<T> {
    pub cfg: NetworkConfig,
    encoder: Vec<MEncoderBlock<T>>,
    bottleneck: Bottleneck<T>,
    skips: Vec<SkipModule<T>>,
    bottleneck_proj: ConvBlock<T>,
    decoders: Vec<ConvBlock<T>>,
    logits_head: Conv2d<T>,
    embedding_head: Conv2d<T>,
    embed_norm: EmbedNorm<T>,
    cache: Option<ModelCache>,
}

impl<T: Scalar> MsaUnet3p<T> {
    pub fn new<R: Rng>(cfg: NetworkConfig, rng: &mut R) -> Result<Self, ConfigError> {
        cfg.validate()?;
        let enc_ch = cfg.encoder_channels();
        let deep = *enc_ch.last().expect("depth >= 3");
        let d_ch = cfg.decoder_channels;

        let mut encoder = Vec::with_capacity(cfg.depth);
        let mut in_ch = cfg.input_channels;
        for &c in &enc_ch {
            encoder.push(MEncoderBlock::new(rng, in_ch, c, cfg.se_reduction));
            in_ch = c;
        }

        let bottleneck = if cfg.use_msd {
            Bottleneck::Msd(MsdBottleneck::new(rng, deep))
        } else {
            Bottleneck::Plain(ConvBlock::new(rng, deep, deep, 3, 1))
        };

        let skips = enc_ch
            .iter()
            .map(|&c| {
                if cfg.use_cafm {
                    SkipModule::Cafm(Cafm::new(rng, c, d_ch, cfg.se_reduction))
                } else {
                    SkipModule::Identity
                }
            })
            .collect();

        let bottleneck_proj = ConvBlock::new(rng, deep, d_ch, 3, 1);

        let decoders = (0..cfg.depth - 1)
            .map(|d| {
                let skip_total: usize = (0..cfg.depth).map(|l| cfg.skip_channels(l)).sum();
                let cat_w = skip_total + (cfg.depth - 1 - d) * d_ch;
                ConvBlock::new(rng, cat_w, d_ch, 3, 1)
            })
            .collect();

        Ok(Self {
            cfg,
            encoder,
            bottleneck,
            skips,
            bottleneck_proj,
            decoders,
            logits_head: Conv2d::new(rng, d_ch, 1, 1, 1),
            embedding_head: Conv2d::new(rng, deep, cfg.embedding_dim, 1, 1),
            embed_norm: EmbedNorm::new(),
            cache: None,
        })
    }

    fn validate_input(&self, x: &Tensor<T>) -> Result<(), ConfigError> {
        let [_, c, h, w] = x.shape();
        if c != self.cfg.input_channels {
            return Err(ConfigError::InputChannels { got: c, expected: self.cfg.input_channels });
        }
        let f = self.cfg.scale_factor();
        if h % f != 0 || w % f != 0 {
            return Err(ConfigError::IndivisibleInput { h, w, factor: f });
        }
        if h / f < 2 || w / f < 2 {
            return Err(ConfigError::InputTooSmall { h, w, depth: self.cfg.depth });
        }
        Ok(())
    }

    pub fn forward(&mut self, x: &Tensor<T>, train: bool) -> Result<NetworkOutput<T>, ConfigError> {
        self.validate_input(x)?;
        let depth = self.cfg.depth;
        let mut pool_args = Vec::with_capacity(depth - 1);

        let mut enc_out: Vec<Tensor<T>> = Vec::with_capacity(depth);
        for l in 0..depth {
            let input = if l == 0 {
                x.clone()
            } else {
                let prev = &enc_out[l - 1];
                let (pooled, arg) = ops::maxpool(prev, 2);
                pool_args.push((arg, prev.shape()));
                pooled
            };
            enc_out.push(self.encoder[l].forward(&input, train));
        }

        let bott = self.bottleneck.forward(&enc_out[depth - 1], train);

        let skip_out: Vec<Tensor<T>> = self
            .skips
            .iter_mut()
            .zip(enc_out.iter())
            .map(|(s, e)| s.forward(e, train))
            .collect();

        // node_out[j] is the decoder-side feature at level j; the deepest
        // node is the projected bottleneck.
        let mut node_out: Vec<Option<Tensor<T>>> = (0..depth).map(|_| None).collect();
        node_out[depth - 1] = Some(self.bottleneck_proj.forward(&bott, train));

        let mut skip_pool_args = BTreeMap::new();
        for d in (0..depth - 1).rev() {
            let mut parts: Vec<Tensor<T>> = Vec::with_capacity(2 * depth - 1 - d);
            for (l, s) in skip_out.iter().enumerate() {
                let part = match l.cmp(&d) {
                    std::cmp::Ordering::Equal => s.clone(),
                    std::cmp::Ordering::Greater => ops::bilinear_upsample(s, 1 << (l - d)),
                    std::cmp::Ordering::Less => {
                        let (pooled, arg) = ops::maxpool(s, 1 << (d - l));
                        if train {
                            skip_pool_args.insert((d, l), (arg, s.shape()));
                        }
                        pooled
                    }
                };
                parts.push(part);
            }
            for j in d + 1..depth {
                let deeper = node_out[j].as_ref().expect("deeper node computed first");
                parts.push(ops::bilinear_upsample(deeper, 1 << (j - d)));
            }
            let refs: Vec<&Tensor<T>> = parts.iter().collect();
            let cat = Tensor::concat_channels(&refs);
            node_out[d] = Some(self.decoders[d].forward(&cat, train));
        }

        let logits = self.logits_head.forward(node_out[0].as_ref().expect("level 0"), train);
        let pre = self.embedding_head.forward(&bott, train);
        let embeddings = self.embed_norm.forward(&pre, train);

        if train {
            self.cache = Some(ModelCache {
                pool_args,
                skip_pool_args,
                node_shapes: node_out.iter().map(|n| n.as_ref().unwrap().shape()).collect(),
            });
        }
        Ok(NetworkOutput { logits, embeddings })
    }

    /// Accumulate parameter gradients for the preceding `forward(train=true)`
    /// and return the gradient with respect to the network input.
    pub fn backward(&mut self, grad_logits: &Tensor<T>, grad_embeddings: &Tensor<T>) -> Tensor<T> {
        let ModelCache { pool_args, skip_pool_args, node_shapes } =
            self.cache.take().expect("model backward without cached forward");
        let depth = self.cfg.depth;
        let d_ch = self.cfg.decoder_channels;

        let mut g_node: Vec<Tensor<T>> = node_shapes.iter().map(|&s| Tensor::zeros(s)).collect();
        g_node[0] = self.logits_head.backward(grad_logits);

        let mut g_bott = self.embedding_head.backward(&self.embed_norm.backward(grad_embeddings));

        let mut g_skip: Vec<Option<Tensor<T>>> = (0..depth).map(|_| None).collect();
        let add_skip = |l: usize, t: Tensor<T>, g_skip: &mut Vec<Option<Tensor<T>>>| match &mut g_skip[l] {
            Some(acc) => acc.add_assign(&t),
            slot @ None => *slot = Some(t),
        };

        for d in 0..depth - 1 {
            let g_cat = self.decoders[d].backward(&g_node[d]);
            let mut widths: Vec<usize> = (0..depth).map(|l| self.cfg.skip_channels(l)).collect();
            widths.extend(std::iter::repeat(d_ch).take(depth - 1 - d));
            let parts = g_cat.split_channels(&widths);
            let mut it = parts.into_iter();
            for l in 0..depth {
                let part = it.next().expect("skip part");
                let resized = match l.cmp(&d) {
                    std::cmp::Ordering::Equal => part,
                    std::cmp::Ordering::Greater => ops::bilinear_upsample_backward(&part, 1 << (l - d)),
                    std::cmp::Ordering::Less => {
                        let (arg, shape) = &skip_pool_args[&(d, l)];
                        ops::maxpool_backward(&part, *shape, arg)
                    }
                };
                add_skip(l, resized, &mut g_skip);
            }
            for j in d + 1..depth {
                let part = it.next().expect("deeper node part");
                g_node[j].add_assign(&ops::bilinear_upsample_backward(&part, 1 << (j - d)));
            }
        }

        g_bott.add_assign(&self.bottleneck_proj.backward(&g_node[depth - 1]));

        let mut g_enc: Vec<Tensor<T>> = g_skip
            .into_iter()
            .zip(self.skips.iter_mut())
            .map(|(g, s)| s.backward(&g.expect("all skips receive gradient")))
            .collect();

        g_enc[depth - 1].add_assign(&self.bottleneck.backward(&g_bott));

        let mut g_input = None;
        for l in (0..depth).rev() {
            let g_in = self.encoder[l].backward(&g_enc[l]);
            if l == 0 {
                g_input = Some(g_in);
            } else {
                let (arg, shape) = &pool_args[l - 1];
                g_enc[l - 1].add_assign(&ops::maxpool_backward(&g_in, *shape, arg));
            }
        }
        g_input.expect("encoder has at least one level")
    }

    /// Every parameter with its stable hierarchical name, in traversal order.
    /// These names are the checkpoint contract.
    pub fn named_params(&mut self) -> ParamRefs<'_, T> {
        let mut out = Vec::new();
        for (l, block) in self.encoder.iter_mut().enumerate() {
            prefixed(&format!("encoder.{l}"), block.params(), &mut out);
        }
        prefixed("bottleneck", self.bottleneck.params(), &mut out);
        for (l, s) in self.skips.iter_mut().enumerate() {
            prefixed(&format!("skip.{l}"), s.params(), &mut out);
        }
        prefixed("bottleneck_proj", self.bottleneck_proj.params(), &mut out);
        for (d, dec) in self.decoders.iter_mut().enumerate() {
            prefixed(&format!("decoder.{d}.fuse"), dec.params(), &mut out);
        }
        prefixed("logits_head", self.logits_head.params(), &mut out);
        prefixed("embedding_head", self.embedding_head.params(), &mut out);
        out
    }

    pub fn param_count(&mut self) -> usize {
        self.named_params().iter().map(|(_, p)| p.len()).sum()
    }

    pub fn zero_grad(&mut self) {
        for (_, p) in self.named_params() {
            p.zero_grad();
        }
    }
}
