//! The interpolation network and its ablation variants.
//!
//! All variants start from a pointwise convolution (`PC`) that mixes the `N`
//! stacked neighbor spectra into one. Variants other than [`Variant::A`] add a
//! residual trunk of five FiLM blocks over the same stack (channels
//! `N -> 4N -> 4N -> 4N -> 4N -> 1`, kernel 3) whose output is added to the
//! `PC` output. They differ in how the trunk's one-channel condition is made:
//!
//! - [`Variant::B`]: a pointwise projection of all encoded conditions
//!   (offsets, target, anthropometry) stacked together.
//! - [`Variant::C1`]: the encoded offsets pass through a kernel-1 FiLM block
//!   conditioned on a projection of target and anthropometry, then are
//!   projected to one channel.
//! - [`Variant::C2`]: the encoded offsets pass through a hyper-convolution
//!   whose kernels are generated from target and anthropometry, then are
//!   projected to one channel.
//!
//! The trunk works in units of [`TRUNK_SCALE_DB`]: the neighbor stack is
//! divided by it on entry and the trunk output multiplied by it on exit, so
//! the tanh activations see values of order one.

mod checkpoint;
pub mod layers;

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub use checkpoint::{read_checkpoint, write_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use layers::{
    pointwise_conv, BlockCache, BlockGrads, Conv1d, ConvGrads, FilmAffine, FilmGrads,
    FilmResBlock, HyperCache, HyperConv, HyperGrads, Tensor1d,
};

use crate::encoding::{encode_anthro_z, encode_position, encode_positions};
use crate::error::{shape_err, Error, Result};
use crate::geometry::{NeighborSet, Position};
use crate::spectra::{Anthropometry, Hrtf, NormStats, DB_FLOOR};
use crate::{ANTHRO_FEATURES, BINS};

/// Hidden width of the hyper-networks.
pub const HYPER_HIDDEN: usize = 32;
/// Kernel size of the hyper-convolution.
pub const HYPER_KERNEL: usize = 3;
/// Kernel size of the trunk convolutions.
pub const TRUNK_KERNEL: usize = 3;
/// Number of FiLM residual blocks in the trunk.
pub const TRUNK_BLOCKS: usize = 5;
pub const TRUNK_SCALE_DB: f64 = 20.0;
/// Upper clamp applied when a prediction is emitted as an [`Hrtf`].
pub const OUTPUT_MAX_DB: f64 = 60.0;

/// Condition channels describing the target: 3 position rows + anthropometry.
const CONTEXT_CHANNELS: usize = 3 + ANTHRO_FEATURES;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Variant {
    /// Pointwise convolution only.
    A,
    /// PC + FiLM trunk conditioned on the stacked encodings.
    B,
    /// B with offsets modulated by a kernel-1 FiLM block.
    C1,
    /// B with offsets modulated by a hyper-convolution.
    C2,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::A, Variant::B, Variant::C1, Variant::C2];

    pub fn tag(&self) -> &'static str {
        match self {
            Variant::A => "a",
            Variant::B => "b",
            Variant::C1 => "c1",
            Variant::C2 => "c2",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|v| v.tag().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown variant {s:?} (expected a, b, c1, c2)")))
    }
}

/// A named parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamTensor {
    pub name: String,
    pub dims: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct ConvIx {
    weight: usize,
    bias: usize,
    c_out: usize,
    c_in: usize,
    kernel: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct FilmIx {
    gamma_w: usize,
    gamma_b: usize,
    beta_w: usize,
    beta_b: usize,
    channels: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct BlockIx {
    conv: ConvIx,
    film: FilmIx,
    skip: Option<ConvIx>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct HyperIx {
    weight_net: [ConvIx; 2],
    bias_net: [ConvIx; 2],
    c_in: usize,
    c_out: usize,
}

#[derive(Debug, Clone, PartialEq)]
enum Conditioner {
    Stacked { proj: ConvIx },
    Film { context: ConvIx, block: BlockIx, proj: ConvIx },
    Hyper { hyper: HyperIx, proj: ConvIx },
}

#[derive(Debug, Clone, PartialEq)]
struct Layout {
    pc: ConvIx,
    conditioner: Option<Conditioner>,
    trunk: Vec<BlockIx>,
}

#[derive(Debug, Clone, Copy)]
enum Init {
    Uniform(f64),
    Const(f64),
}

struct Builder {
    tensors: Vec<ParamTensor>,
    rng: ChaCha8Rng,
}

impl Builder {
    fn tensor(&mut self, name: String, dims: Vec<usize>, init: Init) -> usize {
        let len = dims.iter().product();
        let data = match init {
            Init::Const(v) => vec![v; len],
            Init::Uniform(bound) => (0..len)
                .map(|_| self.rng.random_range(-bound..=bound))
                .collect(),
        };
        self.tensors.push(ParamTensor { name, dims, data });
        self.tensors.len() - 1
    }

    fn conv(&mut self, name: &str, c_out: usize, c_in: usize, kernel: usize, w: Init, b: Init) -> ConvIx {
        let weight = self.tensor(format!("{name}.weight"), vec![c_out, c_in, kernel], w);
        let bias = self.tensor(format!("{name}.bias"), vec![c_out], b);
        ConvIx {
            weight,
            bias,
            c_out,
            c_in,
            kernel,
        }
    }

    /// Uniform in `+-sqrt(1 / fan_in)` for weights and biases.
    fn default_conv(&mut self, name: &str, c_out: usize, c_in: usize, kernel: usize) -> ConvIx {
        let bound = (1.0 / (c_in * kernel) as f64).sqrt();
        self.conv(name, c_out, c_in, kernel, Init::Uniform(bound), Init::Uniform(bound))
    }

    fn zero_conv(&mut self, name: &str, c_out: usize, c_in: usize, kernel: usize) -> ConvIx {
        self.conv(name, c_out, c_in, kernel, Init::Const(0.0), Init::Const(0.0))
    }

    /// `gamma ~= 1` and `beta ~= 0` (exactly 0 when `zero_beta`).
    fn film(&mut self, name: &str, channels: usize, zero_beta: bool) -> FilmIx {
        let bound = 0.1 / (BINS as f64).sqrt();
        let gamma_w = self.tensor(format!("{name}.gamma_w"), vec![channels, BINS], Init::Uniform(bound));
        let gamma_b = self.tensor(format!("{name}.gamma_b"), vec![channels], Init::Const(1.0));
        let beta_init = if zero_beta { Init::Const(0.0) } else { Init::Uniform(bound) };
        let beta_w = self.tensor(format!("{name}.beta_w"), vec![channels, BINS], beta_init);
        let beta_b = self.tensor(format!("{name}.beta_b"), vec![channels], Init::Const(0.0));
        FilmIx {
            gamma_w,
            gamma_b,
            beta_w,
            beta_b,
            channels,
        }
    }

    fn block(&mut self, name: &str, c_in: usize, c_out: usize, kernel: usize, zero: bool) -> BlockIx {
        let conv = if zero {
            self.zero_conv(&format!("{name}.conv"), c_out, c_in, kernel)
        } else {
            self.default_conv(&format!("{name}.conv"), c_out, c_in, kernel)
        };
        let film = self.film(&format!("{name}.film"), c_out, zero);
        let skip = (c_in != c_out).then(|| {
            if zero {
                self.zero_conv(&format!("{name}.skip"), c_out, c_in, 1)
            } else {
                self.default_conv(&format!("{name}.skip"), c_out, c_in, 1)
            }
        });
        BlockIx { conv, film, skip }
    }
}

fn trunk_channels(n: usize) -> [(usize, usize); TRUNK_BLOCKS] {
    [(n, 4 * n), (4 * n, 4 * n), (4 * n, 4 * n), (4 * n, 4 * n), (4 * n, 1)]
}

fn build(variant: Variant, n: usize, seed: u64) -> (Layout, Vec<ParamTensor>) {
    let mut b = Builder {
        tensors: Vec::new(),
        rng: ChaCha8Rng::seed_from_u64(seed),
    };
    let pc = b.conv("pc", 1, n, 1, Init::Const(1.0 / n as f64), Init::Const(0.0));
    let offsets = 3 * n;
    let conditioner = match variant {
        Variant::A => None,
        Variant::B => Some(Conditioner::Stacked {
            proj: b.default_conv("cond.proj", 1, offsets + CONTEXT_CHANNELS, 1),
        }),
        Variant::C1 => {
            let context = b.default_conv("cond.context", 1, CONTEXT_CHANNELS, 1);
            let block = b.block("cond.film", offsets, offsets, 1, false);
            let proj = b.default_conv("cond.proj", 1, offsets, 1);
            Some(Conditioner::Film {
                context,
                block,
                proj,
            })
        }
        Variant::C2 => {
            let kernel_out = offsets * offsets * HYPER_KERNEL;
            let generated = (1.0 / (offsets * HYPER_KERNEL) as f64).sqrt();
            let hidden_bound = (1.0 / CONTEXT_CHANNELS as f64).sqrt();
            let w_in = b.conv(
                "cond.hyper.weight_net.0",
                HYPER_HIDDEN,
                CONTEXT_CHANNELS,
                1,
                Init::Uniform(hidden_bound),
                Init::Uniform(hidden_bound),
            );
            let w_out = b.conv(
                "cond.hyper.weight_net.1",
                kernel_out,
                HYPER_HIDDEN,
                1,
                Init::Uniform(generated / (HYPER_HIDDEN as f64).sqrt()),
                Init::Uniform(generated),
            );
            let b_in = b.conv(
                "cond.hyper.bias_net.0",
                HYPER_HIDDEN,
                CONTEXT_CHANNELS,
                1,
                Init::Uniform(hidden_bound),
                Init::Uniform(hidden_bound),
            );
            let b_out = b.default_conv("cond.hyper.bias_net.1", offsets, HYPER_HIDDEN, 1);
            let proj = b.default_conv("cond.proj", 1, offsets, 1);
            Some(Conditioner::Hyper {
                hyper: HyperIx {
                    weight_net: [w_in, w_out],
                    bias_net: [b_in, b_out],
                    c_in: offsets,
                    c_out: offsets,
                },
                proj,
            })
        }
    };
    let trunk = if variant == Variant::A {
        Vec::new()
    } else {
        trunk_channels(n)
            .iter()
            .enumerate()
            .map(|(i, &(c_in, c_out))| {
                b.block(&format!("trunk.{i}"), c_in, c_out, TRUNK_KERNEL, i == TRUNK_BLOCKS - 1)
            })
            .collect()
    };
    (
        Layout {
            pc,
            conditioner,
            trunk,
        },
        b.tensors,
    )
}

/// All learnable tensors of one model variant.
///
/// The flat view used by the optimizer concatenates the tensors in
/// [`tensors`](Self::tensors) order, which is:
/// `pc`, then the conditioner (`cond.*`, variant dependent), then
/// `trunk.0` .. `trunk.4`, each block as `conv.weight, conv.bias,
/// film.gamma_w, film.gamma_b, film.beta_w, film.beta_b[, skip.weight,
/// skip.bias]`.
#[derive(Debug, Clone)]
pub struct ModelParams {
    variant: Variant,
    n_neighbors: usize,
    tensors: Vec<ParamTensor>,
    layout: Layout,
    anthro_norm: Option<NormStats>,
}

impl PartialEq for ModelParams {
    fn eq(&self, other: &Self) -> bool {
        self.variant == other.variant
            && self.n_neighbors == other.n_neighbors
            && self.tensors == other.tensors
            && self.anthro_norm == other.anthro_norm
    }
}

impl ModelParams {
    /// Seeded initialization. `PC` starts as the neighbor mean and the last
    /// trunk block is zero, so every variant initially predicts the mean of
    /// its neighbors.
    pub fn init(variant: Variant, n_neighbors: usize, seed: u64) -> Result<Self> {
        if n_neighbors == 0 {
            return Err(Error::Config("the model needs at least one neighbor".into()));
        }
        let (layout, tensors) = build(variant, n_neighbors, seed);
        Ok(Self {
            variant,
            n_neighbors,
            tensors,
            layout,
            anthro_norm: None,
        })
    }

    /// Every parameter drawn uniformly from `+-scale` (plus 1 on FiLM scale
    /// biases). Used for gradient checks and benchmarks.
    pub fn random(variant: Variant, n_neighbors: usize, seed: u64, scale: f64) -> Result<Self> {
        let mut p = Self::init(variant, n_neighbors, seed)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(0x9e37_79b9));
        for t in &mut p.tensors {
            let offset = if t.name.ends_with("gamma_b") { 1.0 } else { 0.0 };
            for v in &mut t.data {
                *v = offset + rng.random_range(-scale..=scale);
            }
        }
        Ok(p)
    }

    pub fn variant(&self) -> Variant {
        self.variant
    }

    pub fn n_neighbors(&self) -> usize {
        self.n_neighbors
    }

    pub fn tensors(&self) -> &[ParamTensor] {
        &self.tensors
    }

    pub fn tensor(&self, name: &str) -> Option<&ParamTensor> {
        self.tensors.iter().find(|t| t.name == name)
    }

    pub fn tensor_mut(&mut self, name: &str) -> Option<&mut ParamTensor> {
        self.tensors.iter_mut().find(|t| t.name == name)
    }

    /// Statistics used to z-score anthropometry at prediction time.
    pub fn anthro_norm(&self) -> Option<&NormStats> {
        self.anthro_norm.as_ref()
    }

    pub fn set_anthro_norm(&mut self, norm: Option<NormStats>) {
        self.anthro_norm = norm;
    }

    pub fn num_params(&self) -> usize {
        self.tensors.iter().map(|t| t.data.len()).sum()
    }

    /// Start of each tensor in the flat view.
    pub fn offsets(&self) -> Vec<usize> {
        let mut acc = 0;
        self.tensors
            .iter()
            .map(|t| {
                let o = acc;
                acc += t.data.len();
                o
            })
            .collect()
    }

    pub fn flat(&self) -> Vec<f64> {
        self.tensors.iter().flat_map(|t| t.data.iter().copied()).collect()
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(shape_err(format!(
                "flat view has {} values, model has {}",
                flat.len(),
                self.num_params()
            )));
        }
        let mut rest = flat;
        for t in &mut self.tensors {
            let (head, tail) = rest.split_at(t.data.len());
            t.data.copy_from_slice(head);
            rest = tail;
        }
        Ok(())
    }

    /// Name of the tensor holding flat coordinate `index`.
    pub fn name_of_flat(&self, index: usize) -> Option<&str> {
        let mut acc = 0;
        for t in &self.tensors {
            if index < acc + t.data.len() {
                return Some(&t.name);
            }
            acc += t.data.len();
        }
        None
    }

    /// Replaces tensor contents from `(name, dims, data)` triples, which must
    /// match this layout exactly and in order.
    pub(crate) fn load_tensors(&mut self, loaded: Vec<ParamTensor>) -> Result<()> {
        if loaded.len() != self.tensors.len() {
            return Err(shape_err(format!(
                "expected {} tensors for variant {}, found {}",
                self.tensors.len(),
                self.variant,
                loaded.len()
            )));
        }
        for (t, l) in self.tensors.iter_mut().zip(loaded) {
            if t.name != l.name || t.dims != l.dims {
                return Err(shape_err(format!(
                    "tensor {} {:?} does not match expected {} {:?}",
                    l.name, l.dims, t.name, t.dims
                )));
            }
            t.data = l.data;
        }
        Ok(())
    }

    fn data(&self, ix: usize) -> &[f64] {
        &self.tensors[ix].data
    }

    fn conv(&self, ix: ConvIx) -> Conv1d<'_> {
        Conv1d {
            weight: self.data(ix.weight),
            bias: self.data(ix.bias),
            c_out: ix.c_out,
            c_in: ix.c_in,
            kernel: ix.kernel,
        }
    }

    fn film(&self, ix: FilmIx) -> FilmAffine<'_> {
        FilmAffine {
            gamma_w: self.data(ix.gamma_w),
            gamma_b: self.data(ix.gamma_b),
            beta_w: self.data(ix.beta_w),
            beta_b: self.data(ix.beta_b),
            channels: ix.channels,
        }
    }

    fn block(&self, ix: BlockIx) -> FilmResBlock<'_> {
        FilmResBlock {
            conv: self.conv(ix.conv),
            film: self.film(ix.film),
            skip: ix.skip.map(|s| self.conv(s)),
        }
    }

    fn hyper(&self, ix: HyperIx) -> HyperConv<'_> {
        HyperConv {
            weight_net: [self.conv(ix.weight_net[0]), self.conv(ix.weight_net[1])],
            bias_net: [self.conv(ix.bias_net[0]), self.conv(ix.bias_net[1])],
            c_in: ix.c_in,
            c_out: ix.c_out,
            kappa: HYPER_KERNEL,
        }
    }

    fn check_finite(&self) -> Result<()> {
        match self.tensors.iter().find(|t| t.data.iter().any(|v| !v.is_finite())) {
            Some(t) => Err(Error::NonFinite {
                name: t.name.clone(),
            }),
            None => Ok(()),
        }
    }
}

/// Everything the network reads for one target.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelInput {
    /// `N x K` neighbor spectra, dB.
    pub hrtf_stack: Tensor1d,
    /// `3N x K` encoded neighbor offsets `q_i - p`.
    pub offset_channels: Tensor1d,
    /// `3 x K` encoded target position.
    pub target_channels: Tensor1d,
    /// `12 x K` encoded anthropometry.
    pub anthro_channels: Tensor1d,
}

impl ModelInput {
    pub fn new(
        hrtf_stack: Tensor1d,
        offset_channels: Tensor1d,
        target_channels: Tensor1d,
        anthro_channels: Tensor1d,
    ) -> Result<Self> {
        let n = hrtf_stack.channels();
        let ok = [&hrtf_stack, &offset_channels, &target_channels, &anthro_channels]
            .iter()
            .all(|t| t.len() == BINS)
            && offset_channels.channels() == 3 * n
            && target_channels.channels() == 3
            && anthro_channels.channels() == ANTHRO_FEATURES
            && n > 0;
        if !ok {
            return Err(shape_err(format!(
                "inconsistent model input: stack {}x{}, offsets {}x{}, target {}x{}, anthro {}x{}",
                hrtf_stack.channels(),
                hrtf_stack.len(),
                offset_channels.channels(),
                offset_channels.len(),
                target_channels.channels(),
                target_channels.len(),
                anthro_channels.channels(),
                anthro_channels.len()
            )));
        }
        Ok(Self {
            hrtf_stack,
            offset_channels,
            target_channels,
            anthro_channels,
        })
    }

    /// Builds the input from raw pieces; `anthro_channels` comes from
    /// [`encode_anthro`](crate::encoding::encode_anthro).
    pub fn assemble(
        target: &Position,
        neighbors: &[Position],
        spectra: &[&[f64]],
        anthro_channels: Tensor1d,
    ) -> Result<Self> {
        if neighbors.len() != spectra.len() {
            return Err(shape_err("neighbor and spectrum counts differ"));
        }
        let offsets: Vec<Position> = neighbors.iter().map(|q| *q - *target).collect();
        Self::new(
            Tensor1d::from_rows(spectra)?,
            encode_positions(&offsets),
            encode_position(target),
            anthro_channels,
        )
    }

    pub fn from_neighbor_set(set: &NeighborSet, anthro_z: &[f64; ANTHRO_FEATURES]) -> Result<Self> {
        let spectra: Vec<&[f64]> = set.hrtfs().iter().map(Hrtf::bins).collect();
        Self::assemble(&set.target(), set.neighbors(), &spectra, encode_anthro_z(anthro_z))
    }

    pub fn n_neighbors(&self) -> usize {
        self.hrtf_stack.channels()
    }
}

/// Anthropometry z-scores under the model's statistics when it carries them,
/// else under the subject's own.
pub fn anthro_z_for(params: &ModelParams, a: &Anthropometry) -> Result<[f64; ANTHRO_FEATURES]> {
    match params.anthro_norm() {
        Some(norm) => Anthropometry::new(*a.features())?.with_norm(*norm).normalized(),
        None => a.normalized(),
    }
}

enum ConditionerCache {
    Stacked {
        input: Tensor1d,
    },
    Film {
        context: Tensor1d,
        context_cond: Tensor1d,
        block: BlockCache,
        modulated: Tensor1d,
    },
    Hyper {
        context: Tensor1d,
        hyper: HyperCache,
        modulated: Tensor1d,
    },
}

/// Intermediate values of one forward pass, kept for the backward pass.
pub struct ForwardCache {
    conditioner: Option<ConditionerCache>,
    cond: Option<Tensor1d>,
    trunk_inputs: Vec<Tensor1d>,
    trunk_caches: Vec<BlockCache>,
}

fn check_input(input: &ModelInput, params: &ModelParams) -> Result<()> {
    if input.n_neighbors() != params.n_neighbors {
        return Err(shape_err(format!(
            "input has {} neighbors, model expects {}",
            input.n_neighbors(),
            params.n_neighbors
        )));
    }
    Ok(())
}

/// Unclamped prediction plus the cache needed by [`backward_from_output`].
pub fn forward_cached(input: &ModelInput, params: &ModelParams) -> Result<(Vec<f64>, ForwardCache)> {
    check_input(input, params)?;
    let layout = &params.layout;
    let mut out = params.conv(layout.pc).forward(&input.hrtf_stack)?.into_data();

    let (conditioner, cond) = match &layout.conditioner {
        None => (None, None),
        Some(Conditioner::Stacked { proj }) => {
            let stacked = Tensor1d::concat(&[
                &input.offset_channels,
                &input.target_channels,
                &input.anthro_channels,
            ])?;
            let cond = params.conv(*proj).forward(&stacked)?;
            (Some(ConditionerCache::Stacked { input: stacked }), Some(cond))
        }
        Some(Conditioner::Film {
            context,
            block,
            proj,
        }) => {
            let ctx = Tensor1d::concat(&[&input.target_channels, &input.anthro_channels])?;
            let context_cond = params.conv(*context).forward(&ctx)?;
            let (modulated, block_cache) =
                params.block(*block).forward_cached(&input.offset_channels, &context_cond)?;
            let cond = params.conv(*proj).forward(&modulated)?;
            (
                Some(ConditionerCache::Film {
                    context: ctx,
                    context_cond,
                    block: block_cache,
                    modulated,
                }),
                Some(cond),
            )
        }
        Some(Conditioner::Hyper { hyper, proj }) => {
            let ctx = Tensor1d::concat(&[&input.target_channels, &input.anthro_channels])?;
            let (modulated, hyper_cache) =
                params.hyper(*hyper).forward_cached(&input.offset_channels, &ctx)?;
            let cond = params.conv(*proj).forward(&modulated)?;
            (
                Some(ConditionerCache::Hyper {
                    context: ctx,
                    hyper: hyper_cache,
                    modulated,
                }),
                Some(cond),
            )
        }
    };

    let mut trunk_inputs = Vec::with_capacity(layout.trunk.len());
    let mut trunk_caches = Vec::with_capacity(layout.trunk.len());
    if let Some(cond) = &cond {
        let mut h = input.hrtf_stack.scaled(1.0 / TRUNK_SCALE_DB);
        for &block in &layout.trunk {
            let (next, cache) = params.block(block).forward_cached(&h, cond)?;
            trunk_inputs.push(h);
            trunk_caches.push(cache);
            h = next;
        }
        for (o, t) in out.iter_mut().zip(h.data()) {
            *o += TRUNK_SCALE_DB * t;
        }
    }

    Ok((
        out,
        ForwardCache {
            conditioner,
            cond,
            trunk_inputs,
            trunk_caches,
        },
    ))
}

/// Unclamped prediction in dB.
pub fn forward_raw(input: &ModelInput, params: &ModelParams) -> Result<Vec<f64>> {
    Ok(forward_cached(input, params)?.0)
}

/// Prediction as an [`Hrtf`], clamped to `[-240, 60]` dB.
pub fn forward(input: &ModelInput, params: &ModelParams) -> Result<Hrtf> {
    let raw = forward_raw(input, params)?;
    if raw.iter().any(|v| v.is_nan()) {
        params.check_finite()?;
        return Err(Error::NonFinite {
            name: "prediction".into(),
        });
    }
    Hrtf::new(raw.into_iter().map(|v| v.clamp(DB_FLOOR, OUTPUT_MAX_DB)).collect())
}

/// Accumulates `d loss / d params` into `grad` (flat view) given
/// `d loss / d output`.
pub fn backward_from_output(
    input: &ModelInput,
    params: &ModelParams,
    cache: &ForwardCache,
    grad_output: &[f64],
    grad: &mut [f64],
) -> Result<()> {
    if grad.len() != params.num_params() || grad_output.len() != BINS {
        return Err(shape_err("gradient buffers have the wrong size"));
    }
    let offsets = params.offsets();
    let mut add = |ix: usize, g: &[f64]| layers::accumulate(&mut grad[offsets[ix]..], g);
    let layout = &params.layout;

    let g_out = Tensor1d::from_vec(1, BINS, grad_output.to_vec())?;
    let pc = params.conv(layout.pc).backward(&input.hrtf_stack, &g_out)?;
    add(layout.pc.weight, &pc.weight);
    add(layout.pc.bias, &pc.bias);

    let Some(cond) = &cache.cond else {
        return Ok(());
    };

    let mut g_h = g_out.scaled(TRUNK_SCALE_DB);
    let mut g_cond = Tensor1d::zeros(1, BINS);
    for (i, &block) in layout.trunk.iter().enumerate().rev() {
        let bg = params.block(block).backward(
            &cache.trunk_inputs[i],
            cond,
            &cache.trunk_caches[i],
            &g_h,
        )?;
        add_block_grads(&mut add, block, &bg);
        g_cond.add_assign(&bg.cond);
        g_h = bg.input;
    }

    match (&layout.conditioner, &cache.conditioner) {
        (Some(Conditioner::Stacked { proj }), Some(ConditionerCache::Stacked { input: stacked })) => {
            let g = params.conv(*proj).backward(stacked, &g_cond)?;
            add(proj.weight, &g.weight);
            add(proj.bias, &g.bias);
        }
        (
            Some(Conditioner::Film {
                context,
                block,
                proj,
            }),
            Some(ConditionerCache::Film {
                context: ctx,
                context_cond,
                block: block_cache,
                modulated,
            }),
        ) => {
            let gp = params.conv(*proj).backward(modulated, &g_cond)?;
            add(proj.weight, &gp.weight);
            add(proj.bias, &gp.bias);
            let bg = params.block(*block).backward(
                &input.offset_channels,
                context_cond,
                block_cache,
                &gp.input,
            )?;
            add_block_grads(&mut add, *block, &bg);
            let gc = params.conv(*context).backward(ctx, &bg.cond)?;
            add(context.weight, &gc.weight);
            add(context.bias, &gc.bias);
        }
        (
            Some(Conditioner::Hyper { hyper, proj }),
            Some(ConditionerCache::Hyper {
                context: ctx,
                hyper: hyper_cache,
                modulated,
            }),
        ) => {
            let gp = params.conv(*proj).backward(modulated, &g_cond)?;
            add(proj.weight, &gp.weight);
            add(proj.bias, &gp.bias);
            let hg = params.hyper(*hyper).backward(
                &input.offset_channels,
                ctx,
                hyper_cache,
                &gp.input,
            )?;
            for (ix, g) in hyper.weight_net.iter().zip(&hg.weight_net) {
                add(ix.weight, &g.weight);
                add(ix.bias, &g.bias);
            }
            for (ix, g) in hyper.bias_net.iter().zip(&hg.bias_net) {
                add(ix.weight, &g.weight);
                add(ix.bias, &g.bias);
            }
        }
        _ => return Err(shape_err("forward cache does not match the model variant")),
    }
    Ok(())
}

fn add_block_grads(add: &mut impl FnMut(usize, &[f64]), ix: BlockIx, g: &BlockGrads) {
    add(ix.conv.weight, &g.conv.weight);
    add(ix.conv.bias, &g.conv.bias);
    add(ix.film.gamma_w, &g.film.gamma_w);
    add(ix.film.gamma_b, &g.film.gamma_b);
    add(ix.film.beta_w, &g.film.beta_w);
    add(ix.film.beta_b, &g.film.beta_b);
    if let (Some(s), Some(sg)) = (ix.skip, &g.skip) {
        add(s.weight, &sg.weight);
        add(s.bias, &sg.bias);
    }
}
