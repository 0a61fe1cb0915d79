//! Spatial-spectral blocks and the prior network built from them.
//!
//! One block runs a spatial residual module (two 3×3 convolutions around a
//! ReLU, plus a skip) followed by a spectral residual module: a 1×1
//! convolution with ReLU whose output is rescaled channel-wise by an
//! attention vector before being added back. A prior network chains `R`
//! blocks and adds its input to the result.

use rand::Rng;

use crate::error::{Error, Result};
use crate::params::{BoundParams, ConvParams, LinearParams, ParamStore};
use crate::tensor::Var;

/// Channel reduction of the attention bottleneck.
pub const ATTENTION_REDUCTION: usize = 16;

/// Width of the attention bottleneck for `n_feats` channels.
pub fn attention_width(n_feats: usize) -> usize {
    (n_feats / ATTENTION_REDUCTION).max(1)
}

/// Which feature map the attention statistics are pooled from.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum AttentionSource {
    /// The output of the 1×1 spectral body, the map being rescaled.
    #[default]
    SpectralBody,
    /// The spatial module output that feeds the spectral body.
    SpatialFeatures,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BlockOptions {
    pub use_attention: bool,
    pub attention_source: AttentionSource,
}

impl Default for BlockOptions {
    fn default() -> Self {
        Self {
            use_attention: true,
            attention_source: AttentionSource::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SsbParams {
    pub spatial: [ConvParams; 2],
    pub spectral: ConvParams,
    /// Bottleneck `n -> n/16 -> n`; absent when the block is built without
    /// attention.
    pub attention: Option<[LinearParams; 2]>,
}

impl SsbParams {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        n_feats: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        Self::with_attention(store, name, n_feats, true, rng)
    }

    pub fn with_attention(
        store: &mut ParamStore,
        name: &str,
        n_feats: usize,
        use_attention: bool,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let hidden = attention_width(n_feats);
        let mut params = Self {
            spatial: [
                ConvParams::new(store, &format!("{name}.spatial0"), n_feats, n_feats, 3, rng)?,
                ConvParams::new(store, &format!("{name}.spatial1"), n_feats, n_feats, 3, rng)?,
            ],
            spectral: ConvParams::new(store, &format!("{name}.spectral"), n_feats, n_feats, 1, rng)?,
            attention: None,
        };
        if use_attention {
            params.attention = Some([
                LinearParams::new(store, &format!("{name}.attention_fc1"), n_feats, hidden, rng),
                LinearParams::new(store, &format!("{name}.attention_fc2"), hidden, n_feats, rng),
            ]);
        }
        Ok(params)
    }

    pub fn n_feats(&self) -> usize {
        self.spectral.out_channels
    }

    pub fn scalar_count(&self) -> usize {
        self.spatial.iter().map(ConvParams::scalar_count).sum::<usize>()
            + self.spectral.scalar_count()
            + self
                .attention
                .iter()
                .flatten()
                .map(LinearParams::scalar_count)
                .sum::<usize>()
    }

    fn check_input(&self, x: &Var<'_>) -> Result<()> {
        let shape = x.shape();
        match shape.as_slice() {
            &[_, c, _, _] if c == self.n_feats() => Ok(()),
            _ => Err(Error::shape(
                "ssb",
                format!("expected [N, {}, H, W] features, got {shape:?}", self.n_feats()),
            )),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SspnParams {
    pub blocks: Vec<SsbParams>,
}

impl SspnParams {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        n_feats: usize,
        n_blocks: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        Self::with_attention(store, name, n_feats, n_blocks, true, rng)
    }

    pub fn with_attention(
        store: &mut ParamStore,
        name: &str,
        n_feats: usize,
        n_blocks: usize,
        use_attention: bool,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if n_blocks == 0 {
            return Err(Error::Config("a prior network needs at least one block".into()));
        }
        let blocks = (0..n_blocks)
            .map(|r| {
                SsbParams::with_attention(store, &format!("{name}.block{r}"), n_feats, use_attention, rng)
            })
            .collect::<Result<_>>()?;
        Ok(Self { blocks })
    }

    pub fn scalar_count(&self) -> usize {
        self.blocks.iter().map(SsbParams::scalar_count).sum()
    }
}

/// `F + conv3(relu(conv3(F)))`.
pub fn spatial_residual<'t>(
    features: Var<'t>,
    params: &SsbParams,
    bound: &BoundParams<'t>,
) -> Result<Var<'t>> {
    params.check_input(&features)?;
    let body = params.spatial[0].forward(features, bound)?.relu();
    let body = params.spatial[1].forward(body, bound)?;
    features.add(body)
}

/// Channel scaling vector `sigmoid(fc2(relu(fc1(pool(F)))))`, shaped
/// `[N, C, 1, 1]`.
pub fn spectral_attention<'t>(
    features: Var<'t>,
    params: &SsbParams,
    bound: &BoundParams<'t>,
) -> Result<Var<'t>> {
    params.check_input(&features)?;
    let [n, c, _, _] = features.value().dims4("spectral_attention")?;
    let pooled = features.global_avg_pool()?.reshape(&[n, c])?;
    let [fc1, fc2] = params
        .attention
        .ok_or_else(|| Error::Config("block was built without attention layers".into()))?;
    let hidden = fc1.forward(pooled, bound)?.relu();
    let scale = fc2.forward(hidden, bound)?.sigmoid();
    scale.reshape(&[n, c, 1, 1])
}

/// One spatial-spectral block.
pub fn ssb_forward<'t>(
    input: Var<'t>,
    params: &SsbParams,
    bound: &BoundParams<'t>,
    options: BlockOptions,
) -> Result<Var<'t>> {
    let spatial = spatial_residual(input, params, bound)?;
    let body = params.spectral.forward(spatial, bound)?.relu();
    if !options.use_attention {
        return spatial.add(body);
    }
    let source = match options.attention_source {
        AttentionSource::SpectralBody => body,
        AttentionSource::SpatialFeatures => spatial,
    };
    let scale = spectral_attention(source, params, bound)?;
    spatial.add(body.mul(scale)?)
}

/// `R` chained blocks plus the long skip from the input.
pub fn sspn_forward<'t>(
    input: Var<'t>,
    params: &SspnParams,
    bound: &BoundParams<'t>,
    options: BlockOptions,
) -> Result<Var<'t>> {
    let mut x = input;
    for block in &params.blocks {
        x = ssb_forward(x, block, bound, options)?;
    }
    x.add(input)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{Tape, Tensor};
    use rand::SeedableRng;

    fn rng() -> rand_chacha::ChaCha8Rng {
        rand_chacha::ChaCha8Rng::seed_from_u64(7)
    }

    fn zeroed(store: &mut ParamStore) {
        store.tensors_mut().iter_mut().for_each(|t| t.data_mut().fill(0.0));
    }

    fn input(shape: &[usize]) -> Tensor {
        Tensor::from_fn(shape, |i| ((i * 13 % 17) as f64 / 8.0) - 1.0)
    }

    #[test]
    fn attention_width_clamps() {
        assert_eq!(attention_width(256), 16);
        assert_eq!(attention_width(32), 2);
        assert_eq!(attention_width(4), 1);
    }

    #[test]
    fn zero_weights_give_identity_block() {
        let mut store = ParamStore::new();
        let p = SsbParams::new(&mut store, "b", 4, &mut rng()).unwrap();
        zeroed(&mut store);
        let tape = Tape::new();
        let bound = store.bind(&tape);
        let x = input(&[2, 4, 3, 5]);
        let out = ssb_forward(tape.constant(x.clone()), &p, &bound, BlockOptions::default()).unwrap();
        assert_eq!(*out.value(), x);
        let res = spatial_residual(tape.constant(x.clone()), &p, &bound).unwrap();
        assert_eq!(*res.value(), x);
    }

    #[test]
    fn zero_attention_is_one_half() {
        let mut store = ParamStore::new();
        let p = SsbParams::new(&mut store, "b", 4, &mut rng()).unwrap();
        for id in [p.attention.unwrap()[0].weight, p.attention.unwrap()[1].weight] {
            store.get_mut(id).data_mut().fill(0.0);
        }
        let tape = Tape::new();
        let bound = store.bind(&tape);
        let t = spectral_attention(tape.constant(input(&[1, 4, 2, 2])), &p, &bound).unwrap();
        assert_eq!(t.shape(), vec![1, 4, 1, 1]);
        assert!(t.value().data().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn attention_matches_composed_oracle() {
        let mut store = ParamStore::new();
        let p = SsbParams::new(&mut store, "b", 4, &mut rng()).unwrap();
        let x = input(&[1, 4, 2, 2]);
        let tape = Tape::new();
        let bound = store.bind(&tape);
        let t = spectral_attention(tape.constant(x.clone()), &p, &bound).unwrap();

        // Hand-composed: pool, fc1, relu, fc2, sigmoid, each from its definition.
        let pooled: Vec<f64> = x.data().chunks(4).map(|c| c.iter().sum::<f64>() / 4.0).collect();
        let fc = |w: &Tensor, b: &Tensor, v: &[f64]| -> Vec<f64> {
            let k = b.len();
            (0..k)
                .map(|o| b.data()[o] + (0..v.len()).map(|i| w.data()[o * v.len() + i] * v[i]).sum::<f64>())
                .collect()
        };
        let h: Vec<f64> = fc(store.get(p.attention.unwrap()[0].weight), store.get(p.attention.unwrap()[0].bias), &pooled)
            .into_iter()
            .map(|v| v.max(0.0))
            .collect();
        let expected: Vec<f64> = fc(store.get(p.attention.unwrap()[1].weight), store.get(p.attention.unwrap()[1].bias), &h)
            .into_iter()
            .map(|v| 1.0 / (1.0 + (-v).exp()))
            .collect();
        for (a, b) in t.value().data().iter().zip(&expected) {
            assert!((a - b).abs() < 1e-14);
            assert!(*a > 0.0 && *a < 1.0);
        }
    }

    #[test]
    fn spatial_residual_matches_composed_oracle() {
        let mut store = ParamStore::new();
        let p = SsbParams::new(&mut store, "b", 1, &mut rng()).unwrap();
        let x = Tensor::new(&[1, 1, 2, 2], vec![0.5, -0.25, 1.0, 0.75]).unwrap();
        let tape = Tape::new();
        let bound = store.bind(&tape);
        let out = spatial_residual(tape.constant(x.clone()), &p, &bound).unwrap();

        // Direct 3×3 correlation with zero padding on a 2×2 map.
        let conv = |w: &[f64], b: f64, v: &[f64]| -> Vec<f64> {
            let mut o = vec![b; 4];
            for y in 0..2i32 {
                for xx in 0..2i32 {
                    for ky in 0..3i32 {
                        for kx in 0..3i32 {
                            let (iy, ix) = (y + ky - 1, xx + kx - 1);
                            if (0..2).contains(&iy) && (0..2).contains(&ix) {
                                o[(y * 2 + xx) as usize] +=
                                    w[(ky * 3 + kx) as usize] * v[(iy * 2 + ix) as usize];
                            }
                        }
                    }
                }
            }
            o
        };
        let [c0, c1] = p.spatial;
        let h: Vec<f64> = conv(store.get(c0.weight).data(), store.get(c0.bias).data()[0], x.data())
            .into_iter()
            .map(|v| v.max(0.0))
            .collect();
        let body = conv(store.get(c1.weight).data(), store.get(c1.bias).data()[0], &h);
        for (i, v) in out.value().data().iter().enumerate() {
            assert!((v - (x.data()[i] + body[i])).abs() < 1e-14);
        }
    }

    #[test]
    fn disabled_attention_with_identity_spectral_doubles_positive_input() {
        let mut store = ParamStore::new();
        let p = SsbParams::new(&mut store, "b", 3, &mut rng()).unwrap();
        zeroed(&mut store);
        let w = store.get_mut(p.spectral.weight);
        for c in 0..3 {
            w.data_mut()[c * 3 + c] = 1.0;
        }
        let x = input(&[1, 3, 4, 4]).map(|v| v.abs() + 0.1);
        let tape = Tape::new();
        let bound = store.bind(&tape);
        let opts = BlockOptions {
            use_attention: false,
            ..BlockOptions::default()
        };
        let out = ssb_forward(tape.constant(x.clone()), &p, &bound, opts).unwrap();
        // The spatial module is the identity here, so F_spa == x.
        assert_eq!(*out.value(), x.map(|v| 2.0 * v));
    }

    #[test]
    fn zero_prior_network_doubles_input() {
        let mut store = ParamStore::new();
        let p = SspnParams::new(&mut store, "sspn", 4, 3, &mut rng()).unwrap();
        zeroed(&mut store);
        let x = input(&[1, 4, 3, 3]);
        let tape = Tape::new();
        let bound = store.bind(&tape);
        let out = sspn_forward(tape.constant(x.clone()), &p, &bound, BlockOptions::default()).unwrap();
        assert_eq!(*out.value(), x.map(|v| 2.0 * v));
    }

    #[test]
    fn single_block_network_is_block_plus_skip() {
        let mut store = ParamStore::new();
        let p = SspnParams::new(&mut store, "sspn", 4, 1, &mut rng()).unwrap();
        let x = input(&[1, 4, 3, 3]);
        let tape = Tape::new();
        let bound = store.bind(&tape);
        let xv = tape.constant(x.clone());
        let opts = BlockOptions::default();
        let net = sspn_forward(xv, &p, &bound, opts).unwrap();
        let block = ssb_forward(xv, &p.blocks[0], &bound, opts).unwrap();
        let expected = block.value().zip_map(&x, |a, b| a + b).unwrap();
        assert_eq!(*net.value(), expected);
        assert_eq!(net.shape(), x.shape());
    }

    #[test]
    fn attention_commutes_with_spatial_permutation() {
        let mut store = ParamStore::new();
        let p = SsbParams::new(&mut store, "b", 4, &mut rng()).unwrap();
        let x = input(&[1, 4, 3, 3]);
        // Reverse the spatial positions of every channel.
        let mut flipped = x.clone();
        for plane in flipped.data_mut().chunks_mut(9) {
            plane.reverse();
        }
        let tape = Tape::new();
        let bound = store.bind(&tape);
        let a = spectral_attention(tape.constant(x), &p, &bound).unwrap();
        let b = spectral_attention(tape.constant(flipped), &p, &bound).unwrap();
        for (u, v) in a.value().data().iter().zip(b.value().data()) {
            assert!((u - v).abs() < 1e-14);
        }
    }

    #[test]
    fn shape_mismatch_rejected() {
        let mut store = ParamStore::new();
        let p = SsbParams::new(&mut store, "b", 4, &mut rng()).unwrap();
        let tape = Tape::new();
        let bound = store.bind(&tape);
        let x = tape.constant(Tensor::zeros(&[1, 3, 2, 2]));
        assert!(ssb_forward(x, &p, &bound, BlockOptions::default()).is_err());
    }
}
