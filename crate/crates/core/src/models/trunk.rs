//! The convolutional trunk shared by both architectures: a stem conv, four
//! residual blocks, 2x2 average pooling, and a bottleneck linear layer.
//!
//! On a 1x31x31 map image the spatial path is 31 -> 31 -> 16 -> 16 -> 8 -> 8
//! -> pool 4, giving 32*4*4 = 512 features into the bottleneck.

use std::ops::Range;

use crate::neural::layers::{
    avgpool2_backward, avgpool2_forward, conv2d_backward, conv2d_forward, conv_out_dim,
    linear_backward, linear_forward, relu_backward, relu_forward,
};
use crate::neural::{ParamLayout, Real, Tensor};

/// Bottleneck width of the trunk output.
pub const BOTTLENECK_DIM: usize = 128;

/// (in, out) channels and stride of the four residual blocks.
pub const BLOCK_PLAN: [(usize, usize, usize); 4] = [(8, 16, 2), (16, 16, 1), (16, 32, 2), (32, 32, 1)];

/// Stem output channels.
pub const STEM_CHANNELS: usize = 8;

/// Flattened feature count after pooling.
pub const FLAT_DIM: usize = 512;

/// A conv layer bound to ranges in the flat parameter vector.
#[derive(Clone, Debug)]
pub struct ConvSpec {
    pub in_c: usize,
    pub out_c: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub w: Range<usize>,
    pub b: Range<usize>,
}

impl ConvSpec {
    fn push(layout: &mut ParamLayout, name: &str, in_c: usize, out_c: usize, k: usize, stride: usize) -> ConvSpec {
        let w = layout.push(format!("{name}.w"), vec![out_c, in_c, k, k]);
        let b = layout.push(format!("{name}.b"), vec![out_c]);
        ConvSpec {
            in_c,
            out_c,
            k,
            stride,
            pad: if k == 3 { 1 } else { 0 },
            w,
            b,
        }
    }

    pub fn forward<S: Real>(&self, p: &[S], x: &Tensor<S>) -> Tensor<S> {
        conv2d_forward(x, &p[self.w.clone()], &p[self.b.clone()], self.out_c, self.k, self.stride, self.pad)
    }

    pub fn backward<S: Real>(&self, p: &[S], x: &Tensor<S>, gout: &Tensor<S>, gx: &mut Tensor<S>, gp: &mut [S]) {
        // split disjoint weight/bias ranges out of the flat gradient
        let (before, rest) = gp.split_at_mut(self.b.start);
        let gw = &mut before[self.w.clone()];
        let gb = &mut rest[..self.b.len()];
        conv2d_backward(x, &p[self.w.clone()], gout, self.out_c, self.k, self.stride, self.pad, gx, gw, gb);
    }

    pub fn param_count(&self) -> usize {
        self.out_c * self.in_c * self.k * self.k + self.out_c
    }
}

/// A linear layer bound to ranges in the flat parameter vector.
#[derive(Clone, Debug)]
pub struct LinearSpec {
    pub in_dim: usize,
    pub out_dim: usize,
    pub w: Range<usize>,
    pub b: Range<usize>,
}

impl LinearSpec {
    pub fn push(layout: &mut ParamLayout, name: &str, in_dim: usize, out_dim: usize) -> LinearSpec {
        let w = layout.push(format!("{name}.w"), vec![out_dim, in_dim]);
        let b = layout.push(format!("{name}.b"), vec![out_dim]);
        LinearSpec { in_dim, out_dim, w, b }
    }

    pub fn forward<S: Real>(&self, p: &[S], x: &[S]) -> Vec<S> {
        linear_forward(x, &p[self.w.clone()], &p[self.b.clone()], self.out_dim, self.in_dim)
    }

    pub fn backward<S: Real>(&self, p: &[S], x: &[S], gout: &[S], gp: &mut [S], gx: Option<&mut [S]>) {
        let (before, rest) = gp.split_at_mut(self.b.start);
        let gw = &mut before[self.w.clone()];
        let gb = &mut rest[..self.b.len()];
        linear_backward(x, &p[self.w.clone()], gout, self.out_dim, self.in_dim, gw, gb, gx);
    }

    /// W^T g without touching gradients; used where only the input gradient
    /// is needed against frozen weights.
    pub fn input_grad<S: Real>(&self, p: &[S], gout: &[S]) -> Vec<S> {
        let w = &p[self.w.clone()];
        let mut gx = vec![S::zero(); self.in_dim];
        for o in 0..self.out_dim {
            let g = gout[o];
            let row = &w[o * self.in_dim..(o + 1) * self.in_dim];
            for (gxv, wv) in gx.iter_mut().zip(row) {
                *gxv += g * *wv;
            }
        }
        gx
    }

    pub fn param_count(&self) -> usize {
        self.out_dim * self.in_dim + self.out_dim
    }
}

/// relu(conv2(relu(conv1(x))) + project(x)); the projection is a strided 1x1
/// conv present only when the shape changes.
#[derive(Clone, Debug)]
pub struct ResBlockSpec {
    pub conv1: ConvSpec,
    pub conv2: ConvSpec,
    pub proj: Option<ConvSpec>,
}

impl ResBlockSpec {
    pub fn push(layout: &mut ParamLayout, name: &str, in_c: usize, out_c: usize, stride: usize) -> ResBlockSpec {
        let conv1 = ConvSpec::push(layout, &format!("{name}.conv1"), in_c, out_c, 3, stride);
        let conv2 = ConvSpec::push(layout, &format!("{name}.conv2"), out_c, out_c, 3, 1);
        let proj = (stride != 1 || in_c != out_c)
            .then(|| ConvSpec::push(layout, &format!("{name}.proj"), in_c, out_c, 1, stride));
        ResBlockSpec { conv1, conv2, proj }
    }

    pub fn forward<S: Real>(&self, p: &[S], x: &Tensor<S>) -> BlockTrace<S> {
        let mut y1 = self.conv1.forward(p, x);
        relu_forward(y1.data_mut());
        let y2 = self.conv2.forward(p, &y1);
        let mut out = match &self.proj {
            Some(proj) => proj.forward(p, x),
            None => x.clone(),
        };
        debug_assert_eq!(out.shape(), y2.shape(), "residual shapes must agree");
        for (o, v) in out.data_mut().iter_mut().zip(y2.data()) {
            *o += *v;
        }
        relu_forward(out.data_mut());
        BlockTrace { y1, out }
    }

    /// Backward through the block. `gout` is consumed as scratch.
    pub fn backward<S: Real>(
        &self,
        p: &[S],
        x: &Tensor<S>,
        trace: &BlockTrace<S>,
        mut gout: Tensor<S>,
        gp: &mut [S],
    ) -> Tensor<S> {
        relu_backward(trace.out.data(), gout.data_mut());
        let mut gx = Tensor::zeros(x.shape().to_vec());
        // main path: conv2 then conv1
        let mut gy1 = Tensor::zeros(trace.y1.shape().to_vec());
        self.conv2.backward(p, &trace.y1, &gout, &mut gy1, gp);
        relu_backward(trace.y1.data(), gy1.data_mut());
        self.conv1.backward(p, x, &gy1, &mut gx, gp);
        // skip path
        match &self.proj {
            Some(proj) => proj.backward(p, x, &gout, &mut gx, gp),
            None => {
                for (gxv, g) in gx.data_mut().iter_mut().zip(gout.data()) {
                    *gxv += *g;
                }
            }
        }
        gx
    }

    pub fn param_count(&self) -> usize {
        self.conv1.param_count()
            + self.conv2.param_count()
            + self.proj.as_ref().map_or(0, |p| p.param_count())
    }
}

/// Saved activations of one residual block (both post-relu).
pub struct BlockTrace<S> {
    pub y1: Tensor<S>,
    pub out: Tensor<S>,
}

/// The full trunk: image in, bottleneck feature vector out.
#[derive(Clone, Debug)]
pub struct TrunkNet {
    pub stem: ConvSpec,
    pub blocks: Vec<ResBlockSpec>,
    pub fc: LinearSpec,
}

/// Saved activations of a trunk forward pass.
pub struct TrunkTrace<S> {
    pub stem_out: Tensor<S>,
    pub blocks: Vec<BlockTrace<S>>,
    pub pool_out: Tensor<S>,
    /// Bottleneck output after relu; this is the trunk's feature vector.
    pub features: Vec<S>,
}

impl TrunkNet {
    /// Register all trunk parameters on `layout`.
    pub fn push(layout: &mut ParamLayout) -> TrunkNet {
        let stem = ConvSpec::push(layout, "trunk.stem", 1, STEM_CHANNELS, 3, 1);
        let blocks = BLOCK_PLAN
            .iter()
            .enumerate()
            .map(|(i, &(in_c, out_c, stride))| {
                ResBlockSpec::push(layout, &format!("trunk.block{i}"), in_c, out_c, stride)
            })
            .collect();
        let fc = LinearSpec::push(layout, "trunk.fc", FLAT_DIM, BOTTLENECK_DIM);
        TrunkNet { stem, blocks, fc }
    }

    pub fn forward<S: Real>(&self, p: &[S], image: &Tensor<S>) -> TrunkTrace<S> {
        debug_assert_eq!(image.shape(), &[1, 31, 31]);
        let mut stem_out = self.stem.forward(p, image);
        relu_forward(stem_out.data_mut());
        let mut blocks = Vec::with_capacity(self.blocks.len());
        let mut current = &stem_out;
        for block in &self.blocks {
            let trace = block.forward(p, current);
            blocks.push(trace);
            current = &blocks.last().expect("just pushed").out;
        }
        let pool_out = avgpool2_forward(current);
        let mut features = self.fc.forward(p, pool_out.data());
        relu_forward(&mut features);
        TrunkTrace {
            stem_out,
            blocks,
            pool_out,
            features,
        }
    }

    /// Accumulate parameter gradients given the gradient at the feature
    /// vector. `image` must be the tensor passed to `forward`.
    pub fn backward<S: Real>(
        &self,
        p: &[S],
        image: &Tensor<S>,
        trace: &TrunkTrace<S>,
        dfeatures: &[S],
        gp: &mut [S],
    ) {
        let mut dfeat = dfeatures.to_vec();
        relu_backward(&trace.features, &mut dfeat);
        let mut dflat = vec![S::zero(); FLAT_DIM];
        self.fc.backward(p, trace.pool_out.data(), &dfeat, gp, Some(&mut dflat));
        let last = trace.blocks.last().expect("four blocks");
        let (c, h, w) = last.out.chw();
        let dpool = Tensor::new(vec![c, h / 2, w / 2], dflat);
        let mut grad = avgpool2_backward(&dpool, (c, h, w));
        for i in (0..self.blocks.len()).rev() {
            let input = if i == 0 { &trace.stem_out } else { &trace.blocks[i - 1].out };
            grad = self.blocks[i].backward(p, input, &trace.blocks[i], grad, gp);
        }
        relu_backward(trace.stem_out.data(), grad.data_mut());
        let mut gimage = Tensor::zeros(image.shape().to_vec());
        self.stem.backward(p, image, &grad, &mut gimage, gp);
    }

    pub fn param_count(&self) -> usize {
        self.stem.param_count()
            + self.blocks.iter().map(|b| b.param_count()).sum::<usize>()
            + self.fc.param_count()
    }
}

/// Spatial dims after the residual stack, before pooling.
pub fn pre_pool_dims() -> (usize, usize) {
    let mut dim = 31;
    for &(_, _, stride) in &BLOCK_PLAN {
        dim = conv_out_dim(dim, 3, stride, 1);
    }
    (dim, dim)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trunk_layout_and_param_count() {
        let mut layout = ParamLayout::new();
        let trunk = TrunkNet::push(&mut layout);
        // stem 80, blocks 3632/4640/14432/18496, fc 65664
        assert_eq!(trunk.stem.param_count(), 80);
        assert_eq!(trunk.blocks[0].param_count(), 3632);
        assert_eq!(trunk.blocks[1].param_count(), 4640);
        assert_eq!(trunk.blocks[2].param_count(), 14432);
        assert_eq!(trunk.blocks[3].param_count(), 18496);
        assert_eq!(trunk.fc.param_count(), 65664);
        assert_eq!(trunk.param_count(), 106_944);
        assert_eq!(layout.total(), trunk.param_count());
        assert_eq!(pre_pool_dims(), (8, 8));
    }

    #[test]
    fn zero_conv_block_is_relu_passthrough() {
        // identity-shaped block (16->16, stride 1) with all-zero conv weights:
        // output = relu(input)
        let mut layout = ParamLayout::new();
        let block = ResBlockSpec::push(&mut layout, "b", 16, 16, 1);
        let p = vec![0.0f64; layout.total()];
        let data: Vec<f64> = (0..16 * 4 * 4).map(|i| (i as f64) * 0.37 - 11.0).collect();
        let x = Tensor::new(vec![16, 4, 4], data);
        let trace = block.forward(&p, &x);
        for (o, i) in trace.out.data().iter().zip(x.data()) {
            assert_eq!(*o, i.max(0.0));
        }
    }

    #[test]
    fn strided_block_halves_spatial_dims() {
        let mut layout = ParamLayout::new();
        let block = ResBlockSpec::push(&mut layout, "b", 1, 2, 2);
        assert!(block.proj.is_some());
        let p = vec![0.1f32; layout.total()];
        let x = Tensor::new(vec![1, 31, 31], vec![0.5f32; 961]);
        let trace = block.forward(&p, &x);
        assert_eq!(trace.out.shape(), &[2, 16, 16]);
    }

    #[test]
    fn trunk_forward_shapes() {
        let mut layout = ParamLayout::new();
        let trunk = TrunkNet::push(&mut layout);
        let p = vec![0.01f32; layout.total()];
        let image = Tensor::new(vec![1, 31, 31], vec![0.0f32; 961]);
        let trace = trunk.forward(&p, &image);
        assert_eq!(trace.features.len(), BOTTLENECK_DIM);
        assert_eq!(trace.pool_out.shape(), &[32, 4, 4]);
        assert_eq!(trace.blocks[0].out.shape(), &[16, 16, 16]);
        assert_eq!(trace.blocks[3].out.shape(), &[32, 8, 8]);
    }
}
