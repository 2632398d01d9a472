//! The two model architectures and their initialization.
//!
//! Both share the trunk. The hypernetwork's head linearly maps the trunk
//! features to the full flat parameter vector of the policy MLP; the
//! embedding baseline's head produces a context vector whose projection into
//! the first policy layer is the only per-map quantity.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::primary::{sample_input, PrimaryNet, ACTION_DIM};
use super::trunk::{LinearSpec, TrunkNet, BOTTLENECK_DIM};
use super::{match_embedding_dim, ModelError, ModelKind, PRIMARY_INPUT_DIM};
use crate::gridworld::{Cell, MapImage, GRID_SIZE};
use crate::neural::{fill_uniform, kaiming_bound, ParamLayout, Real, Tensor};

/// Seed stream tag for parameter initialization.
const INIT_STREAM: u64 = 0x696e_6974; // "init"

/// Convert a map image into the 1x31x31 input tensor.
pub fn image_tensor<S: Real>(image: &MapImage) -> Tensor<S> {
    Tensor::new(
        vec![1, GRID_SIZE, GRID_SIZE],
        image.pixels().iter().map(|p| S::from_f64(f64::from(*p))).collect(),
    )
}

/// Hypernetwork model: trunk + head emitting the policy parameter vector.
#[derive(Clone, Debug)]
pub struct HupaModel {
    pub trunk: TrunkNet,
    pub head: LinearSpec,
    pub primary: PrimaryNet,
    pub layout: ParamLayout,
}

impl HupaModel {
    pub fn new(width: usize) -> HupaModel {
        let primary = PrimaryNet::new(width, PRIMARY_INPUT_DIM);
        let mut layout = ParamLayout::new();
        let trunk = TrunkNet::push(&mut layout);
        let head = LinearSpec::push(&mut layout, "head", BOTTLENECK_DIM, primary.param_count());
        HupaModel {
            trunk,
            head,
            primary,
            layout,
        }
    }

    /// Kaiming-uniform trunk; head rows scaled by 1/sqrt(fan_in *
    /// generated-layer fan_in) so generated weights start at conventional
    /// magnitude. Rows generating biases and the output layer start at zero.
    pub fn init_params<S: Real>(&self, seed: u64) -> Vec<S> {
        let mut params = self.layout.zeros::<S>();
        let mut rng = ChaCha8Rng::seed_from_u64(crate::dataset::derive_seed(
            seed,
            INIT_STREAM,
            ModelKind::Hupa as u64,
            self.primary.width as u64,
        ));
        init_trunk(&self.trunk, &mut params, &mut rng);
        let head_w = &mut params[self.head.w.clone()];
        for seg in self.primary.segments() {
            let bound = match (seg.fan_in, seg.output) {
                (Some(fan_in), false) => kaiming_bound(BOTTLENECK_DIM * fan_in),
                _ => 0.0, // bias rows and the zero-initialized output layer
            };
            let rows = &mut head_w[seg.range.start * BOTTLENECK_DIM..seg.range.end * BOTTLENECK_DIM];
            if bound > 0.0 {
                fill_uniform(rows, bound, &mut rng);
            }
        }
        params
    }

    /// Generate the policy parameter vector for one map image.
    pub fn generate<S: Real>(&self, params: &[S], image: &Tensor<S>) -> Vec<S> {
        let trace = self.trunk.forward(params, image);
        self.head.forward(params, &trace.features)
    }

    /// Full uncached forward: generate then run the policy MLP.
    pub fn forward<S: Real>(&self, params: &[S], image: &Tensor<S>, s: Cell, g: Cell) -> [S; ACTION_DIM] {
        let theta = self.generate(params, image);
        self.primary.infer(&theta, &sample_input(s, g), None)
    }

    pub fn param_count(&self) -> usize {
        self.layout.total()
    }

    /// Length of the trunk's parameter prefix in the flat layout.
    pub fn trunk_span(&self) -> usize {
        self.trunk.param_count()
    }
}

/// Embedding baseline: trunk + head to an embedding vector, projected into
/// the first layer of a fixed, trainable policy MLP.
#[derive(Clone, Debug)]
pub struct EmbeddingModel {
    pub trunk: TrunkNet,
    pub head: LinearSpec,
    /// Projection of the embedding into the first policy layer, [width, m].
    pub projection: std::ops::Range<usize>,
    /// Contiguous range of the policy MLP parameters in the flat vector.
    pub primary_range: std::ops::Range<usize>,
    pub primary: PrimaryNet,
    pub embed_dim: usize,
    pub layout: ParamLayout,
}

impl EmbeddingModel {
    pub fn new(width: usize) -> Result<EmbeddingModel, ModelError> {
        let embed_dim = match_embedding_dim(width)?;
        let primary = PrimaryNet::new(width, PRIMARY_INPUT_DIM);
        let mut layout = ParamLayout::new();
        let trunk = TrunkNet::push(&mut layout);
        let head = LinearSpec::push(&mut layout, "head", BOTTLENECK_DIM, embed_dim);
        let projection = layout.push("projection.w", vec![width, embed_dim]);
        let start = layout.total();
        for seg in primary.segments() {
            let shape = match seg.fan_in {
                Some(fan_in) => {
                    let rows = seg.range.len() / fan_in;
                    vec![rows, fan_in]
                }
                None => vec![seg.range.len()],
            };
            layout.push(format!("primary.{}", seg.name), shape);
        }
        let primary_range = start..layout.total();
        debug_assert_eq!(primary_range.len(), primary.param_count());
        Ok(EmbeddingModel {
            trunk,
            head,
            projection,
            primary_range,
            primary,
            embed_dim,
            layout,
        })
    }

    pub fn init_params<S: Real>(&self, seed: u64) -> Vec<S> {
        let mut params = self.layout.zeros::<S>();
        let mut rng = ChaCha8Rng::seed_from_u64(crate::dataset::derive_seed(
            seed,
            INIT_STREAM,
            ModelKind::Embedding as u64,
            self.primary.width as u64,
        ));
        init_trunk(&self.trunk, &mut params, &mut rng);
        fill_uniform(&mut params[self.head.w.clone()], kaiming_bound(BOTTLENECK_DIM), &mut rng);
        fill_uniform(&mut params[self.projection.clone()], kaiming_bound(self.embed_dim), &mut rng);
        let base = self.primary_range.start;
        for seg in self.primary.segments() {
            if let (Some(fan_in), false) = (seg.fan_in, seg.output) {
                let range = base + seg.range.start..base + seg.range.end;
                fill_uniform(&mut params[range], kaiming_bound(fan_in), &mut rng);
            }
            // biases and the output layer stay zero
        }
        params
    }

    /// Per-map context: the embedding's projection into the first policy
    /// layer. This vector (length = width) is the transmission payload.
    pub fn context<S: Real>(&self, params: &[S], image: &Tensor<S>) -> Vec<S> {
        let trace = self.trunk.forward(params, image);
        let embedding = self.head.forward(params, &trace.features);
        project(&params[self.projection.clone()], &embedding, self.primary.width)
    }

    pub fn logits_with_context<S: Real>(&self, params: &[S], context: &[S], s: Cell, g: Cell) -> [S; ACTION_DIM] {
        self.primary.infer(
            &params[self.primary_range.clone()],
            &sample_input(s, g),
            Some(context),
        )
    }

    pub fn forward<S: Real>(&self, params: &[S], image: &Tensor<S>, s: Cell, g: Cell) -> [S; ACTION_DIM] {
        let context = self.context(params, image);
        self.logits_with_context(params, &context, s, g)
    }

    pub fn param_count(&self) -> usize {
        self.layout.total()
    }

    /// Length of the trunk's parameter prefix in the flat layout.
    pub fn trunk_span(&self) -> usize {
        self.trunk.param_count()
    }
}

/// Matrix-vector product for the projection block, [rows, cols] x [cols].
pub fn project<S: Real>(w: &[S], x: &[S], rows: usize) -> Vec<S> {
    let cols = x.len();
    debug_assert_eq!(w.len(), rows * cols);
    let mut out = Vec::with_capacity(rows);
    for r in 0..rows {
        let row = &w[r * cols..(r + 1) * cols];
        let mut acc = S::zero();
        for (wv, xv) in row.iter().zip(x) {
            acc += *wv * *xv;
        }
        out.push(acc);
    }
    out
}

fn init_trunk<S: Real>(trunk: &TrunkNet, params: &mut [S], rng: &mut ChaCha8Rng) {
    let mut convs = vec![&trunk.stem];
    for block in &trunk.blocks {
        convs.push(&block.conv1);
        convs.push(&block.conv2);
        if let Some(proj) = &block.proj {
            convs.push(proj);
        }
    }
    for conv in convs {
        let fan_in = conv.in_c * conv.k * conv.k;
        fill_uniform(&mut params[conv.w.clone()], kaiming_bound(fan_in), rng);
    }
    fill_uniform(&mut params[trunk.fc.w.clone()], kaiming_bound(trunk.fc.in_dim), rng);
    // all biases stay zero
}

/// Either architecture behind one interface, for training and evaluation.
#[derive(Clone, Debug)]
pub enum Model {
    Hupa(HupaModel),
    Embedding(EmbeddingModel),
}

/// Per-map cached state: the generated parameter vector or the projected
/// context, exactly what the edge device would receive.
pub enum MapContext<S> {
    Theta(Vec<S>),
    Projected(Vec<S>),
}

impl<S> MapContext<S> {
    /// Floats transmitted to the edge device for this map.
    pub fn payload_len(&self) -> usize {
        match self {
            MapContext::Theta(v) | MapContext::Projected(v) => v.len(),
        }
    }
}

impl Model {
    pub fn new(kind: ModelKind, width: usize) -> Result<Model, ModelError> {
        Ok(match kind {
            ModelKind::Hupa => Model::Hupa(HupaModel::new(width)),
            ModelKind::Embedding => Model::Embedding(EmbeddingModel::new(width)?),
        })
    }

    pub fn kind(&self) -> ModelKind {
        match self {
            Model::Hupa(_) => ModelKind::Hupa,
            Model::Embedding(_) => ModelKind::Embedding,
        }
    }

    pub fn width(&self) -> usize {
        match self {
            Model::Hupa(m) => m.primary.width,
            Model::Embedding(m) => m.primary.width,
        }
    }

    pub fn layout(&self) -> &ParamLayout {
        match self {
            Model::Hupa(m) => &m.layout,
            Model::Embedding(m) => &m.layout,
        }
    }

    pub fn param_count(&self) -> usize {
        self.layout().total()
    }

    pub fn init_params<S: Real>(&self, seed: u64) -> Vec<S> {
        match self {
            Model::Hupa(m) => m.init_params(seed),
            Model::Embedding(m) => m.init_params(seed),
        }
    }

    /// Cacheable per-map state; depends only on the image.
    pub fn map_context<S: Real>(&self, params: &[S], image: &Tensor<S>) -> MapContext<S> {
        match self {
            Model::Hupa(m) => MapContext::Theta(m.generate(params, image)),
            Model::Embedding(m) => MapContext::Projected(m.context(params, image)),
        }
    }

    /// Action logits for one (start, goal) pair against a cached context.
    pub fn logits<S: Real>(&self, params: &[S], context: &MapContext<S>, s: Cell, g: Cell) -> [S; ACTION_DIM] {
        match (self, context) {
            (Model::Hupa(m), MapContext::Theta(theta)) => {
                m.primary.infer(theta, &sample_input(s, g), None)
            }
            (Model::Embedding(m), MapContext::Projected(ctx)) => {
                m.logits_with_context(params, ctx, s, g)
            }
            _ => panic!("map context does not match model kind"),
        }
    }
}

const THETA_MAGIC: &[u8; 8] = b"HUPATHTA";

/// Export a generated parameter vector: magic `HUPATHTA`, width u32, input
/// dim u32, then the raw little-endian f32 values in layout order.
pub fn export_theta(path: &Path, net: PrimaryNet, theta: &[f32]) -> Result<(), std::io::Error> {
    assert_eq!(theta.len(), net.param_count(), "theta does not match layout");
    let mut out = BufWriter::new(File::create(path)?);
    out.write_all(THETA_MAGIC)?;
    out.write_all(&(net.width as u32).to_le_bytes())?;
    out.write_all(&(net.input_dim as u32).to_le_bytes())?;
    for v in theta {
        out.write_all(&v.to_le_bytes())?;
    }
    out.flush()
}

/// Read a theta export back as (net shape, values).
pub fn import_theta(path: &Path) -> Result<(PrimaryNet, Vec<f32>), std::io::Error> {
    let mut file = File::open(path)?;
    let mut magic = [0u8; 8];
    file.read_exact(&mut magic)?;
    if &magic != THETA_MAGIC {
        return Err(std::io::Error::new(
            std::io::ErrorKind::InvalidData,
            "bad theta magic",
        ));
    }
    let mut buf4 = [0u8; 4];
    file.read_exact(&mut buf4)?;
    let width = u32::from_le_bytes(buf4) as usize;
    file.read_exact(&mut buf4)?;
    let input_dim = u32::from_le_bytes(buf4) as usize;
    let net = PrimaryNet::new(width, input_dim);
    let mut bytes = vec![0u8; net.param_count() * 4];
    file.read_exact(&mut bytes)?;
    let theta = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Ok((net, theta))
}
