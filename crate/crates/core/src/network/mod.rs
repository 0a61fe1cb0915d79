//! The full super-resolution network.
//!
//! The low-resolution cube is split into overlapping band groups. Every
//! group runs through a branch network (shallow conv, prior network,
//! sub-pixel upsampling, reconstruction conv back to the group's bands);
//! the branch outputs are merged by overlap averaging. A global network
//! then repeats shallow conv, prior network and upsampling over all bands,
//! adds shallow features of the bicubic-upsampled input, and reconstructs
//! the output bands with one final conv.

mod checkpoint;
mod config;

pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint};
pub use config::NetworkConfig;

use rand::SeedableRng;

use crate::data::bicubic::{resize_planes, resize_planes_backward, Direction};
use crate::error::{Error, Result};
use crate::grouping::{merge_var, split_var, GroupingScheme};
use crate::params::{BoundParams, ConvParams, ParamStore};
use crate::ssb::{attention_width, sspn_forward, SspnParams};
use crate::tensor::{Tape, Tensor, Var};

/// Layers of one branch network.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BranchParams {
    pub shallow: ConvParams,
    pub sspn: SspnParams,
    /// One conv per ×2 sub-pixel stage.
    pub upsample: Vec<ConvParams>,
    pub rec: ConvParams,
}

/// Layers of the global network.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GlobalParams {
    pub gfe: ConvParams,
    pub sspn: SspnParams,
    pub upsample: Vec<ConvParams>,
    pub gfe2: ConvParams,
    pub grec: ConvParams,
}

/// Every learnable tensor of the model plus the structure that uses them.
#[derive(Clone, Debug, PartialEq)]
pub struct SspsrParams {
    config: NetworkConfig,
    scheme: GroupingScheme,
    store: ParamStore,
    /// One entry when parameters are shared, one per group otherwise.
    branches: Vec<BranchParams>,
    global: GlobalParams,
}

fn upsample_stages(
    store: &mut ParamStore,
    name: &str,
    n_feats: usize,
    factor: usize,
    rng: &mut impl rand::Rng,
) -> Result<Vec<ConvParams>> {
    (0..factor.trailing_zeros())
        .map(|i| ConvParams::new(store, &format!("{name}.upsample{i}"), n_feats, 4 * n_feats, 3, rng))
        .collect()
}

/// How [`init_params_with`] sets the starting weights.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub enum InitScheme {
    /// Every weight `U(-b, b)` with `b = sqrt(6 / fan_in)`, biases zero.
    #[default]
    HeUniform,
    /// He-uniform, then the network is moved close to plain bicubic
    /// upsampling: the last layer of every residual body (second spatial
    /// conv, spectral conv, upsampling convs, branch reconstruction) is
    /// multiplied by `residual_gain`, and `grec ∘ gfe2` is set to the
    /// identity on bands by centre taps.
    BicubicStart { residual_gain: f64 },
}

impl InitScheme {
    pub const BICUBIC_START: InitScheme = InitScheme::BicubicStart { residual_gain: 0.1 };
}

/// Random He-uniform initialisation; deterministic for a given seed.
pub fn init_params(config: &NetworkConfig, seed: u64) -> Result<SspsrParams> {
    init_params_with(config, seed, InitScheme::HeUniform)
}

/// Centre-tap embedding: output channel `c` copies input channel `c`.
fn centre_identity(weight: &mut Tensor) {
    let [out, inp, k, _] = weight.dims4("centre_identity").expect("conv weights are 4-D");
    let centre = k / 2;
    let data = weight.data_mut();
    data.fill(0.0);
    for c in 0..out.min(inp) {
        data[((c * inp + c) * k + centre) * k + centre] = 1.0;
    }
}

pub fn init_params_with(config: &NetworkConfig, seed: u64, scheme: InitScheme) -> Result<SspsrParams> {
    let mut params = he_init(config, seed)?;
    if let InitScheme::BicubicStart { residual_gain } = scheme {
        if config.n_feats < config.bands {
            return Err(Error::Config(format!(
                "bicubic start needs n_feats >= bands, got {} < {}",
                config.n_feats, config.bands
            )));
        }
        let mut damped = Vec::new();
        let sspns = params
            .branches
            .iter()
            .map(|b| &b.sspn)
            .chain(std::iter::once(&params.global.sspn));
        for sspn in sspns {
            for block in &sspn.blocks {
                damped.extend([block.spatial[1].weight, block.spectral.weight]);
            }
        }
        for b in &params.branches {
            damped.extend(b.upsample.iter().map(|u| u.weight));
            damped.push(b.rec.weight);
        }
        damped.extend(params.global.upsample.iter().map(|u| u.weight));
        for id in damped {
            let w = params.store.get_mut(id);
            w.data_mut().iter_mut().for_each(|v| *v *= residual_gain);
        }
        let (gfe2, grec) = (params.global.gfe2.weight, params.global.grec.weight);
        centre_identity(params.store.get_mut(gfe2));
        centre_identity(params.store.get_mut(grec));
    }
    Ok(params)
}

fn he_init(config: &NetworkConfig, seed: u64) -> Result<SspsrParams> {
    config.validate()?;
    let scheme = config.grouping()?;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let n = config.n_feats;
    let p = scheme.group_size();
    let copies = if config.share_params { 1 } else { scheme.len() };
    let mut branches = Vec::with_capacity(copies);
    for s in 0..copies {
        let name = if config.share_params {
            "branch".to_string()
        } else {
            format!("branch{s}")
        };
        branches.push(BranchParams {
            shallow: ConvParams::new(&mut store, &format!("{name}.shallow"), p, n, 3, &mut rng)?,
            sspn: SspnParams::with_attention(
                &mut store,
                &format!("{name}.sspn"),
                n,
                config.n_blocks,
                config.use_attention,
                &mut rng,
            )?,
            upsample: upsample_stages(&mut store, &name, n, config.branch_scale(), &mut rng)?,
            rec: ConvParams::new(&mut store, &format!("{name}.rec"), n, p, 3, &mut rng)?,
        });
    }
    let c = config.bands;
    let global = GlobalParams {
        gfe: ConvParams::new(&mut store, "global.gfe", c, n, 3, &mut rng)?,
        sspn: SspnParams::with_attention(
            &mut store,
            "global.sspn",
            n,
            config.n_blocks,
            config.use_attention,
            &mut rng,
        )?,
        upsample: upsample_stages(&mut store, "global", n, config.global_scale(), &mut rng)?,
        gfe2: ConvParams::new(&mut store, "global.gfe2", c, n, 3, &mut rng)?,
        grec: ConvParams::new(&mut store, "global.grec", n, c, 3, &mut rng)?,
    };
    Ok(SspsrParams {
        config: config.clone(),
        scheme,
        store,
        branches,
        global,
    })
}

impl SspsrParams {
    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn scheme(&self) -> &GroupingScheme {
        &self.scheme
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn global(&self) -> &GlobalParams {
        &self.global
    }

    /// Distinct branch parameter sets actually stored.
    pub fn branch_copies(&self) -> usize {
        self.branches.len()
    }

    /// The layers used by group `s`.
    pub fn branch(&self, s: usize) -> &BranchParams {
        if self.config.share_params {
            &self.branches[0]
        } else {
            &self.branches[s]
        }
    }

    /// Total number of learnable scalars over unique storage.
    pub fn count_params(&self) -> usize {
        self.store.scalar_count()
    }

    /// Super-resolves a `[N, C, h, w]` batch without recording gradients.
    pub fn infer(&self, lr: &Tensor) -> Result<Tensor> {
        let tape = Tape::new();
        let bound = self.store.bind_frozen(&tape);
        let out = sspsr_forward(tape.constant(lr.clone()), self, &bound)?;
        Ok((*out.value()).clone())
    }
}

/// Sub-pixel upsampling: per ×2 stage, conv to 4n channels, shuffle, ReLU.
fn upsample<'t>(x: Var<'t>, stages: &[ConvParams], bound: &BoundParams<'t>) -> Result<Var<'t>> {
    stages.iter().try_fold(x, |x, conv| {
        Ok(conv.forward(x, bound)?.pixel_shuffle(2)?.relu())
    })
}

fn branch_forward<'t>(
    x: Var<'t>,
    branch: &BranchParams,
    config: &NetworkConfig,
    bound: &BoundParams<'t>,
) -> Result<Var<'t>> {
    let shallow = branch.shallow.forward(x, bound)?;
    let deep = sspn_forward(shallow, &branch.sspn, bound, config.block_options())?;
    let up = upsample(deep, &branch.upsample, bound)?;
    branch.rec.forward(up, bound)
}

/// Differentiable bicubic upsampling of a `[N, C, h, w]` variable.
pub fn bicubic_up<'t>(x: Var<'t>, factor: usize) -> Result<Var<'t>> {
    let value = x.value();
    let out = resize_planes(&value, factor, Direction::Up)?;
    let shape = value.shape().to_vec();
    Ok(x.tape().custom(&[x], out, move |g| {
        Ok(vec![resize_planes_backward(g, &shape, factor, Direction::Up)?])
    }))
}

/// The full forward pass `[N, C, h, w] -> [N, C, d·h, d·w]`.
pub fn sspsr_forward<'t>(
    lr: Var<'t>,
    params: &SspsrParams,
    bound: &BoundParams<'t>,
) -> Result<Var<'t>> {
    let config = &params.config;
    let [_, c, _, _] = lr.value().dims4("sspsr_forward")?;
    if c != config.bands {
        return Err(Error::Config(format!(
            "network expects {} bands, input has {c}",
            config.bands
        )));
    }
    let groups = split_var(lr, &params.scheme)?;
    let outputs = groups
        .into_iter()
        .enumerate()
        .map(|(s, g)| branch_forward(g, params.branch(s), config, bound))
        .collect::<Result<Vec<_>>>()?;
    let merged = merge_var(&outputs, &params.scheme)?;

    let g = &params.global;
    let shallow = g.gfe.forward(merged, bound)?;
    let deep = sspn_forward(shallow, &g.sspn, bound, config.block_options())?;
    let up = upsample(deep, &g.upsample, bound)?;

    let residual = g.gfe2.forward(bicubic_up(lr, config.scale)?, bound)?;
    g.grec.forward(up.add(residual)?, bound)
}

/// Analytic parameter count of a configuration, without allocating it.
pub fn config_param_count(config: &NetworkConfig) -> Result<usize> {
    config.validate()?;
    let scheme = config.grouping()?;
    let (n, p, c) = (config.n_feats, scheme.group_size(), config.bands);
    let conv = |cin: usize, cout: usize, k: usize| cout * (cin * k * k + 1);
    let hidden = attention_width(n);
    let attention = if config.use_attention {
        hidden * (n + 1) + n * (hidden + 1)
    } else {
        0
    };
    let block = 2 * conv(n, n, 3) + conv(n, n, 1) + attention;
    let sspn = config.n_blocks * block;
    let stages = |f: usize| f.trailing_zeros() as usize * conv(n, 4 * n, 3);
    let branch = conv(p, n, 3) + sspn + stages(config.branch_scale()) + conv(n, p, 3);
    let copies = if config.share_params { 1 } else { scheme.len() };
    let global = conv(c, n, 3) + sspn + stages(config.global_scale()) + conv(c, n, 3) + conv(n, c, 3);
    Ok(copies * branch + global)
}

/// Multiply-accumulate count of one forward pass on an input of shape
/// `[N, C, h, w]`. Convolutions and fully connected layers are counted;
/// elementwise work and the bicubic resize are not.
pub fn forward_flops(config: &NetworkConfig, input_shape: [usize; 4]) -> Result<u64> {
    config.validate()?;
    let scheme = config.grouping()?;
    let [batch, _, h, w] = input_shape;
    let (n, p, c) = (config.n_feats as u64, scheme.group_size() as u64, config.bands as u64);
    let batch = batch as u64;
    let conv = |cin: u64, cout: u64, k: u64, area: u64| batch * cout * area * cin * k * k;
    let hidden = attention_width(config.n_feats) as u64;
    let sspn = |area: u64| {
        config.n_blocks as u64
            * (2 * conv(n, n, 3, area)
                + conv(n, n, 1, area)
                + if config.use_attention { batch * 2 * n * hidden } else { 0 })
    };
    // Stage i runs its conv at the resolution before the i-th shuffle.
    let stages = |factor: usize, area: u64| {
        (0..factor.trailing_zeros())
            .map(|i| conv(n, 4 * n, 3, area << (2 * i)))
            .sum::<u64>()
    };
    let lr_area = (h * w) as u64;
    let bs = config.branch_scale() as u64;
    let mid_area = lr_area * bs * bs;
    let d = config.scale as u64;
    let hr_area = lr_area * d * d;

    let branch = conv(p, n, 3, lr_area)
        + sspn(lr_area)
        + stages(config.branch_scale(), lr_area)
        + conv(n, p, 3, mid_area);
    let global = conv(c, n, 3, mid_area)
        + sspn(mid_area)
        + stages(config.global_scale(), mid_area)
        + conv(c, n, 3, hr_area)
        + conv(n, c, 3, hr_area);
    Ok(scheme.len() as u64 * branch + global)
}
