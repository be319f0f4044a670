use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layers::{Block, BlockCache, ConvGeom, Init, Op, ParamStore};
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

const DOWN: ConvGeom = ConvGeom::new(4, 2, 1);
const UP: ConvGeom = ConvGeom::new(4, 2, 1);
const TAIL: ConvGeom = ConvGeom::new(4, 1, 1);
/// Decoder stages that apply dropout while training.
pub const DROPOUT_STAGES: usize = 3;
pub const MAX_FILTER_MULT: usize = 8;

/// Architecture hyperparameters shared by both generators and both discriminators.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub image_size: usize,
    pub base_filters: usize,
    /// Generator downsampling stages.
    pub depth: usize,
    /// Strided discriminator stages before the two stride-1 convolutions.
    pub disc_stages: usize,
}

impl ModelConfig {
    /// Standard configuration: full-depth U-Net (1×1 bottleneck), three strided
    /// discriminator stages. Sizes must be powers of two, at least 32.
    pub fn new(image_size: usize, base_filters: usize) -> Result<Self> {
        if image_size < 32 || !image_size.is_power_of_two() {
            return Err(Error::invalid(format!("unsupported image size {image_size}: need a power of two ≥ 32")));
        }
        Self::custom(image_size, base_filters, image_size.trailing_zeros() as usize, 3)
    }

    /// Any configuration whose shapes work out; used for small test bundles.
    pub fn custom(image_size: usize, base_filters: usize, depth: usize, disc_stages: usize) -> Result<Self> {
        let cfg = Self { image_size, base_filters, depth, disc_stages };
        if base_filters == 0 {
            return Err(Error::invalid("base_filters must be positive"));
        }
        if depth < 2 || image_size % (1 << depth) != 0 {
            return Err(Error::invalid(format!("depth {depth} does not divide image size {image_size}")));
        }
        if disc_stages == 0 || cfg.logit_size().unwrap_or(0) == 0 {
            return Err(Error::invalid(format!(
                "{disc_stages} discriminator stages leave no logits for {image_size}-px inputs"
            )));
        }
        Ok(cfg)
    }

    pub fn encoder_filters(&self) -> Vec<usize> {
        (0..self.depth).map(|i| self.base_filters * (1usize << i).min(MAX_FILTER_MULT)).collect()
    }

    /// Side length of the discriminator's logit grid.
    pub fn logit_size(&self) -> Option<usize> {
        let mut n = self.image_size;
        for _ in 0..self.disc_stages {
            n = DOWN.conv_out(n)?;
        }
        TAIL.conv_out(TAIL.conv_out(n)?)
    }
}

fn conv_block<T: Scalar>(
    ps: &mut ParamStore<T>,
    rng: &mut ChaCha8Rng,
    name: &str,
    (cin, cout): (usize, usize),
    geom: ConvGeom,
    norm: bool,
) -> Block {
    let mut b = Block::default();
    let weight = ps.add(format!("{name}.conv.weight"), cout * cin * geom.kernel * geom.kernel, Init::Weight, rng);
    b.push(Op::Conv { weight, bias: None, cin, cout, geom });
    if norm {
        let gamma = ps.add(format!("{name}.norm.gamma"), cout, Init::Gamma, rng);
        let beta = ps.add(format!("{name}.norm.beta"), cout, Init::Zero, rng);
        b.push(Op::InstanceNorm { gamma, beta });
    }
    b.push(Op::LeakyRelu);
    b
}

/// U-Net generator: strided-conv encoder, transposed-conv decoder with skips.
#[derive(Clone, Debug, PartialEq)]
pub struct Generator<T> {
    pub config: ModelConfig,
    pub params: ParamStore<T>,
    down: Vec<Block>,
    up: Vec<Block>,
    /// Channels produced by each decoder stage before its skip is appended.
    up_channels: Vec<usize>,
    out: Block,
}

#[derive(Clone, Debug)]
pub struct GeneratorCache<T> {
    down: Vec<BlockCache<T>>,
    up: Vec<BlockCache<T>>,
    out: BlockCache<T>,
}

impl<T: Scalar> GeneratorCache<T> {
    pub fn push_signs(&self, out: &mut Vec<bool>) {
        self.down.iter().chain(&self.up).chain(std::iter::once(&self.out)).for_each(|c| c.push_signs(out));
    }
}

impl<T: Scalar> Generator<T> {
    pub fn new(config: ModelConfig, rng: &mut ChaCha8Rng) -> Self {
        let mut ps = ParamStore::default();
        let f = config.encoder_filters();
        let d = config.depth;
        let mut down = Vec::with_capacity(d);
        let mut cin = 1;
        for (i, &cout) in f.iter().enumerate() {
            let side = config.image_size >> (i + 1);
            // Instance norm is undefined on a 1×1 map and skipped on the first stage.
            let norm = i > 0 && side > 1;
            down.push(conv_block(&mut ps, rng, &format!("down{i}"), (cin, cout), DOWN, norm));
            cin = cout;
        }
        let mut up = Vec::with_capacity(d - 1);
        let mut up_channels = Vec::with_capacity(d - 1);
        for i in 0..d - 1 {
            let cout = f[d - 2 - i];
            let name = format!("up{i}");
            let mut b = Block::default();
            let weight = ps.add(format!("{name}.convT.weight"), cin * cout * 16, Init::Weight, rng);
            b.push(Op::ConvTranspose { weight, bias: None, cin, cout, geom: UP });
            let gamma = ps.add(format!("{name}.norm.gamma"), cout, Init::Gamma, rng);
            let beta = ps.add(format!("{name}.norm.beta"), cout, Init::Zero, rng);
            b.push(Op::InstanceNorm { gamma, beta });
            if i < DROPOUT_STAGES {
                b.push(Op::Dropout);
            }
            b.push(Op::Relu);
            up.push(b);
            up_channels.push(cout);
            cin = 2 * cout;
        }
        let mut out = Block::default();
        let weight = ps.add("out.convT.weight".into(), cin * 16, Init::Weight, rng);
        let bias = ps.add("out.convT.bias".into(), 1, Init::Zero, rng);
        out.push(Op::ConvTranspose { weight, bias: Some(bias), cin, cout: 1, geom: UP });
        out.push(Op::Tanh);
        Self { config, params: ps, down, up, up_channels, out }
    }

    pub fn depth(&self) -> usize {
        self.down.len()
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<()> {
        let n = self.config.image_size;
        if x.shape() != (1, n, n) {
            return Err(Error::ShapeMismatch(format!("generator expects 1×{n}×{n}, got {:?}", x.shape())));
        }
        Ok(())
    }

    /// Spatial shape after each encoder stage.
    pub fn encoder_shapes(&self) -> Vec<(usize, usize, usize)> {
        let mut s = (1, self.config.image_size, self.config.image_size);
        self.down
            .iter()
            .map(|b| {
                s = b.out_shape(s).expect("encoder shapes valid by construction");
                s
            })
            .collect()
    }

    /// Applies the generator. Passing `rng` enables dropout (training mode).
    pub fn forward(&self, x: &Tensor<T>, mut rng: Option<&mut ChaCha8Rng>) -> Result<(Tensor<T>, GeneratorCache<T>)> {
        self.check_input(x)?;
        let v = &self.params.values;
        let mut skips = Vec::with_capacity(self.down.len());
        let mut down = Vec::with_capacity(self.down.len());
        let mut cur = x.clone();
        for b in &self.down {
            let (y, c) = b.forward(v, &cur, rng.as_deref_mut())?;
            down.push(c);
            skips.push(y.clone());
            cur = y;
        }
        let d = self.down.len();
        let mut up = Vec::with_capacity(self.up.len());
        for (i, b) in self.up.iter().enumerate() {
            let (y, c) = b.forward(v, &cur, rng.as_deref_mut())?;
            up.push(c);
            cur = Tensor::concat_channels(&y, &skips[d - 2 - i])?;
        }
        let (y, out) = self.out.forward(v, &cur, rng)?;
        Ok((y, GeneratorCache { down, up, out }))
    }

    /// Inference without dropout.
    pub fn apply(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(self.forward(x, None)?.0)
    }

    /// Back-propagates `dy`; parameter gradients accumulate when `accumulate` is set.
    pub fn backward(&mut self, cache: &GeneratorCache<T>, dy: Tensor<T>, accumulate: bool) -> Result<Tensor<T>> {
        let ParamStore { values, grads, .. } = &mut self.params;
        let d = self.down.len();
        let mut skip_grads: Vec<Option<Tensor<T>>> = vec![None; d];
        let mut cur = self.out.backward(values, select(grads, accumulate), &cache.out, dy)?;
        for i in (0..self.up.len()).rev() {
            let (dup, dskip) = cur.split_channels(self.up_channels[i]);
            skip_grads[d - 2 - i] = Some(dskip);
            cur = self.up[i].backward(values, select(grads, accumulate), &cache.up[i], dup)?;
        }
        for j in (0..d).rev() {
            if let Some(s) = skip_grads[j].take() {
                cur.add_assign(&s);
            }
            cur = self.down[j].backward(values, select(grads, accumulate), &cache.down[j], cur)?;
        }
        Ok(cur)
    }
}

/// Patch discriminator producing a grid of real/fake logits.
#[derive(Clone, Debug, PartialEq)]
pub struct Discriminator<T> {
    pub config: ModelConfig,
    pub params: ParamStore<T>,
    body: Block,
}

pub type DiscriminatorCache<T> = BlockCache<T>;

impl<T: Scalar> Discriminator<T> {
    pub fn new(config: ModelConfig, rng: &mut ChaCha8Rng) -> Self {
        let mut ps = ParamStore::default();
        let mut body = Block::default();
        let mut cin = 1;
        for i in 0..config.disc_stages {
            let cout = config.base_filters * (1usize << i).min(MAX_FILTER_MULT);
            body.ops.extend(conv_block(&mut ps, rng, &format!("stage{i}"), (cin, cout), DOWN, i > 0).ops);
            cin = cout;
        }
        let cout = config.base_filters * (1usize << config.disc_stages).min(MAX_FILTER_MULT);
        body.ops.extend(conv_block(&mut ps, rng, "tail", (cin, cout), TAIL, true).ops);
        let weight = ps.add("logits.conv.weight".into(), cout * 16, Init::Weight, rng);
        let bias = ps.add("logits.conv.bias".into(), 1, Init::Zero, rng);
        body.push(Op::Conv { weight, bias: Some(bias), cin: cout, cout: 1, geom: TAIL });
        Self { config, params: ps, body }
    }

    /// Logit grid shape `(1, h, w)` for an input side, or `None` below the minimum size.
    pub fn output_shape(&self, side: usize) -> Option<(usize, usize, usize)> {
        self.body.out_shape((1, side, side))
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<(Tensor<T>, DiscriminatorCache<T>)> {
        if x.channels() != 1 {
            return Err(Error::ShapeMismatch(format!("discriminator expects 1 channel, got {}", x.channels())));
        }
        if self.body.out_shape(x.shape()).is_none() {
            return Err(Error::ShapeMismatch(format!("input {}×{} below discriminator minimum", x.height(), x.width())));
        }
        self.body.forward(&self.params.values, x, None)
    }

    pub fn apply(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(self.forward(x)?.0)
    }

    pub fn backward(&mut self, cache: &DiscriminatorCache<T>, dy: Tensor<T>, accumulate: bool) -> Result<Tensor<T>> {
        let ParamStore { values, grads, .. } = &mut self.params;
        self.body.backward(values, select(grads, accumulate), cache, dy)
    }
}

fn select<T>(grads: &mut [Vec<T>], on: bool) -> Option<&mut [Vec<T>]> {
    on.then_some(grads)
}

/// Seeds a per-network generator from the bundle seed.
pub(crate) fn net_rng(seed: u64, index: u32) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(crate::manifest::image_seed(seed, index))
}
