//! Composite network blocks: encoder stage, dilated bottleneck, skip fusion.

use rand::Rng;

use crate::nn::{prefixed, Conv2d, ConvBlock, ParamRefs, SeBlock};
use crate::ops;
use crate::tensor::{Scalar, Tensor};

/// Encoder stage: three chained conv blocks whose outputs are concatenated,
/// passed through channel attention, and reduced back to `out_ch`.
pub struct MEncoderBlock<T> {
    pub conv1: ConvBlock<T>,
    pub conv2: ConvBlock<T>,
    pub conv3: ConvBlock<T>,
    pub se: SeBlock<T>,
    pub reduce: ConvBlock<T>,
    out_ch: usize,
}

impl<T: Scalar> MEncoderBlock<T> {
    pub fn new<R: Rng>(rng: &mut R, in_ch: usize, out_ch: usize, se_reduction: usize) -> Self {
        Self {
            conv1: ConvBlock::new(rng, in_ch, out_ch, 3, 1),
            conv2: ConvBlock::new(rng, out_ch, out_ch, 3, 1),
            conv3: ConvBlock::new(rng, out_ch, out_ch, 3, 1),
            se: SeBlock::new(rng, 3 * out_ch, se_reduction),
            reduce: ConvBlock::new(rng, 3 * out_ch, out_ch, 3, 1),
            out_ch,
        }
    }

    pub fn forward(&mut self, x: &Tensor<T>, train: bool) -> Tensor<T> {
        let o1 = self.conv1.forward(x, train);
        let o2 = self.conv2.forward(&o1, train);
        let o3 = self.conv3.forward(&o2, train);
        let cat = Tensor::concat_channels(&[&o1, &o2, &o3]);
        let attended = self.se.forward(&cat, train);
        self.reduce.forward(&attended, train)
    }

    pub fn backward(&mut self, grad_out: &Tensor<T>) -> Tensor<T> {
        let g_cat = self.se.backward(&self.reduce.backward(grad_out));
        let parts = g_cat.split_channels(&[self.out_ch, self.out_ch, self.out_ch]);
        // o2 feeds both conv3 and the concat; o1 feeds conv2 and the concat.
        let mut g_o2 = self.conv3.backward(&parts[2]);
        g_o2.add_assign(&parts[1]);
        let mut g_o1 = self.conv2.backward(&g_o2);
        g_o1.add_assign(&parts[0]);
        self.conv1.backward(&g_o1)
    }

    pub fn params(&mut self) -> ParamRefs<'_, T> {
        let mut out = Vec::new();
        prefixed("conv1", self.conv1.params(), &mut out);
        prefixed("conv2", self.conv2.params(), &mut out);
        prefixed("conv3", self.conv3.params(), &mut out);
        prefixed("se", self.se.params(), &mut out);
        prefixed("reduce", self.reduce.params(), &mut out);
        out
    }
}

/// Residual block of three dilated conv layers; the last layer carries
/// normalization but no ReLU, the ReLU comes after the skip addition.
pub struct DilatedResBlock<T> {
    pub a: ConvBlock<T>,
    pub b: ConvBlock<T>,
    pub c: ConvBlock<T>,
    mask: Option<Vec<bool>>,
}

impl<T: Scalar> DilatedResBlock<T> {
    pub fn new<R: Rng>(rng: &mut R, channels: usize, dilations: [usize; 3]) -> Self {
        Self {
            a: ConvBlock::new(rng, channels, channels, 3, dilations[0]),
            b: ConvBlock::new(rng, channels, channels, 3, dilations[1]),
            c: ConvBlock::new(rng, channels, channels, 3, dilations[2]).without_relu(),
            mask: None,
        }
    }

    pub fn forward(&mut self, x: &Tensor<T>, train: bool) -> Tensor<T> {
        let h = self.c.forward(&self.b.forward(&self.a.forward(x, train), train), train);
        let mut out = x.clone();
        out.add_assign(&h);
        let mut mask = Vec::new();
        if train {
            mask.reserve(out.len());
        }
        for v in out.data_mut() {
            let keep = *v > T::zero();
            if !keep {
                *v = T::zero();
            }
            if train {
                mask.push(keep);
            }
        }
        self.mask = train.then_some(mask);
        out
    }

    pub fn backward(&mut self, grad_out: &Tensor<T>) -> Tensor<T> {
        let mask = self.mask.take().expect("res block backward without cached forward");
        let mut g = grad_out.clone();
        for (v, keep) in g.data_mut().iter_mut().zip(mask) {
            if !keep {
                *v = T::zero();
            }
        }
        let mut dx = self.a.backward(&self.b.backward(&self.c.backward(&g)));
        dx.add_assign(&g);
        dx
    }

    pub fn params(&mut self) -> ParamRefs<'_, T> {
        let mut out = Vec::new();
        prefixed("a", self.a.params(), &mut out);
        prefixed("b", self.b.params(), &mut out);
        prefixed("c", self.c.params(), &mut out);
        out
    }
}

/// Dilated bottleneck: three residual blocks with widening dilation
/// patterns, then spatial-pyramid pooling (two dilated branches plus a
/// global-average branch) projected back to the input width.
pub struct MsdBottleneck<T> {
    pub res: Vec<DilatedResBlock<T>>,
    pub aspp_d4: ConvBlock<T>,
    pub aspp_d8: ConvBlock<T>,
    pub aspp_gp: Conv2d<T>,
    pub proj: ConvBlock<T>,
    channels: usize,
    cache: Option<AsppCache<T>>,
}

struct AsppCache<T> {
    gp_mask: Vec<bool>,
    spatial: (usize, usize),
    _phantom: std::marker::PhantomData<T>,
}

impl<T: Scalar> MsdBottleneck<T> {
    pub const DILATIONS: [[usize; 3]; 3] = [[1, 2, 1], [2, 4, 2], [4, 8, 4]];

    pub fn new<R: Rng>(rng: &mut R, channels: usize) -> Self {
        Self {
            res: Self::DILATIONS
                .iter()
                .map(|&d| DilatedResBlock::new(rng, channels, d))
                .collect(),
            aspp_d4: ConvBlock::new(rng, channels, channels, 3, 4),
            aspp_d8: ConvBlock::new(rng, channels, channels, 3, 8),
            aspp_gp: Conv2d::new(rng, channels, channels, 1, 1),
            proj: ConvBlock::new(rng, 3 * channels, channels, 1, 1),
            channels,
            cache: None,
        }
    }

    pub fn forward(&mut self, x: &Tensor<T>, train: bool) -> Tensor<T> {
        let mut t = x.clone();
        for block in &mut self.res {
            t = block.forward(&t, train);
        }
        let (h, w) = (t.height(), t.width());
        let b4 = self.aspp_d4.forward(&t, train);
        let b8 = self.aspp_d8.forward(&t, train);
        let mut gp = self.aspp_gp.forward(&ops::global_avg_pool(&t), train);
        let mut gp_mask = Vec::new();
        if train {
            gp_mask.reserve(gp.len());
        }
        for v in gp.data_mut() {
            let keep = *v > T::zero();
            if !keep {
                *v = T::zero();
            }
            if train {
                gp_mask.push(keep);
            }
        }
        let gp_full = ops::broadcast_spatial(&gp, h, w);
        let cat = Tensor::concat_channels(&[&b4, &b8, &gp_full]);
        self.cache = train.then_some(AsppCache { gp_mask, spatial: (h, w), _phantom: std::marker::PhantomData });
        self.proj.forward(&cat, train)
    }

    pub fn backward(&mut self, grad_out: &Tensor<T>) -> Tensor<T> {
        let AsppCache { gp_mask, spatial: (h, w), .. } =
            self.cache.take().expect("bottleneck backward without cached forward");
        let g_cat = self.proj.backward(grad_out);
        let parts = g_cat.split_channels(&[self.channels, self.channels, self.channels]);
        let mut g_t = self.aspp_d4.backward(&parts[0]);
        g_t.add_assign(&self.aspp_d8.backward(&parts[1]));
        let mut g_gp = ops::broadcast_spatial_backward(&parts[2]);
        for (v, keep) in g_gp.data_mut().iter_mut().zip(gp_mask) {
            if !keep {
                *v = T::zero();
            }
        }
        g_t.add_assign(&ops::global_avg_pool_backward(&self.aspp_gp.backward(&g_gp), h, w));
        for block in self.res.iter_mut().rev() {
            g_t = block.backward(&g_t);
        }
        g_t
    }

    pub fn params(&mut self) -> ParamRefs<'_, T> {
        let mut out = Vec::new();
        for (i, block) in self.res.iter_mut().enumerate() {
            prefixed(&format!("res.{i}"), block.params(), &mut out);
        }
        prefixed("aspp_d4", self.aspp_d4.params(), &mut out);
        prefixed("aspp_d8", self.aspp_d8.params(), &mut out);
        prefixed("aspp_gp", self.aspp_gp.params(), &mut out);
        prefixed("proj", self.proj.params(), &mut out);
        out
    }
}

/// Skip-path fusion: four parallel dilated conv branches (rates 1, 2, 4, 8)
/// concatenated, channel attention, and a final conv to `out_ch`.
pub struct Cafm<T> {
    pub branches: Vec<ConvBlock<T>>,
    pub se: SeBlock<T>,
    pub out: ConvBlock<T>,
    in_ch: usize,
}

impl<T: Scalar> Cafm<T> {
    pub const DILATIONS: [usize; 4] = [1, 2, 4, 8];

    pub fn new<R: Rng>(rng: &mut R, in_ch: usize, out_ch: usize, se_reduction: usize) -> Self {
        Self {
            branches: Self::DILATIONS
                .iter()
                .map(|&d| ConvBlock::new(rng, in_ch, in_ch, 3, d))
                .collect(),
            se: SeBlock::new(rng, 4 * in_ch, se_reduction),
            out: ConvBlock::new(rng, 4 * in_ch, out_ch, 3, 1),
            in_ch,
        }
    }

    pub fn forward(&mut self, x: &Tensor<T>, train: bool) -> Tensor<T> {
        let outs: Vec<Tensor<T>> = self.branches.iter_mut().map(|b| b.forward(x, train)).collect();
        let refs: Vec<&Tensor<T>> = outs.iter().collect();
        let cat = Tensor::concat_channels(&refs);
        let attended = self.se.forward(&cat, train);
        self.out.forward(&attended, train)
    }

    pub fn backward(&mut self, grad_out: &Tensor<T>) -> Tensor<T> {
        let g_cat = self.se.backward(&self.out.backward(grad_out));
        let widths = vec![self.in_ch; 4];
        let parts = g_cat.split_channels(&widths);
        let mut dx = self.branches[0].backward(&parts[0]);
        for (branch, part) in self.branches.iter_mut().zip(parts.iter()).skip(1) {
            dx.add_assign(&branch.backward(part));
        }
        dx
    }

    pub fn params(&mut self) -> ParamRefs<'_, T> {
        let mut out = Vec::new();
        for (i, b) in self.branches.iter_mut().enumerate() {
            prefixed(&format!("branch.{i}"), b.params(), &mut out);
        }
        prefixed("se", self.se.params(), &mut out);
        prefixed("out", self.out.params(), &mut out);
        out
    }
}

/// Bottleneck variant switch for component ablations.
pub enum Bottleneck<T> {
    Msd(MsdBottleneck<T>),
    Plain(ConvBlock<T>),
}

impl<T: Scalar> Bottleneck<T> {
    pub fn forward(&mut self, x: &Tensor<T>, train: bool) -> Tensor<T> {
        match self {
            Bottleneck::Msd(b) => b.forward(x, train),
            Bottleneck::Plain(b) => b.forward(x, train),
        }
    }

    pub fn backward(&mut self, grad_out: &Tensor<T>) -> Tensor<T> {
        match self {
            Bottleneck::Msd(b) => b.backward(grad_out),
            Bottleneck::Plain(b) => b.backward(grad_out),
        }
    }

    pub fn params(&mut self) -> ParamRefs<'_, T> {
        match self {
            Bottleneck::Msd(b) => b.params(),
            Bottleneck::Plain(b) => {
                let mut out = Vec::new();
                prefixed("plain", b.params(), &mut out);
                out
            }
        }
    }
}

/// Skip-path variant switch for component ablations.
pub enum SkipModule<T> {
    Cafm(Cafm<T>),
    Identity,
}

impl<T: Scalar> SkipModule<T> {
    pub fn forward(&mut self, x: &Tensor<T>, train: bool) -> Tensor<T> {
        match self {
            SkipModule::Cafm(c) => c.forward(x, train),
            SkipModule::Identity => x.clone(),
        }
    }

    pub fn backward(&mut self, grad_out: &Tensor<T>) -> Tensor<T> {
        match self {
            SkipModule::Cafm(c) => c.backward(grad_out),
            SkipModule::Identity => grad_out.clone(),
        }
    }

    pub fn params(&mut self) -> ParamRefs<'_, T> {
        match self {
            SkipModule::Cafm(c) => c.params(),
            SkipModule::Identity => Vec::new(),
        }
    }
}
