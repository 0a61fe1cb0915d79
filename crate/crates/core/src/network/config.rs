use crate::error::{Error, Result};
use crate::grouping::{plan_groups, GroupingScheme};
use crate::ssb::{AttentionSource, BlockOptions};

/// Structure of the network.
///
/// The four ablation switches remove one ingredient each: band grouping
/// (one branch over all bands), progressive upsampling (no branch
/// upsampling, the global stage does all of it), parameter sharing (one
/// independent branch per group) and spectral attention.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NetworkConfig {
    /// Spectral bands of the input and output cubes.
    pub bands: usize,
    /// Bands per group.
    pub group_size: usize,
    /// Bands shared by neighbouring groups.
    pub overlap: usize,
    /// Feature channels of every hidden convolution.
    pub n_feats: usize,
    /// Spatial-spectral blocks per prior network.
    pub n_blocks: usize,
    /// Total upsampling factor: 2, 4 or 8.
    pub scale: usize,
    /// Upsampling done inside each branch when progressive upsampling is on.
    pub branch_upscale: usize,
    pub use_grouping: bool,
    pub use_progressive: bool,
    pub share_params: bool,
    pub use_attention: bool,
    pub attention_source: AttentionSource,
}

/// Branch factor used when none is given: ×1 for ×2 overall, ×2 otherwise.
pub(crate) fn default_branch_upscale(scale: usize) -> usize {
    if scale <= 2 {
        1
    } else {
        2
    }
}

impl NetworkConfig {
    /// Full-size settings: groups of 8 bands overlapping by 2, 256 feature
    /// channels, 3 blocks per prior network, ×4.
    pub fn paper(bands: usize) -> Self {
        Self {
            bands,
            group_size: 8,
            overlap: 2,
            n_feats: 256,
            n_blocks: 3,
            scale: 4,
            branch_upscale: 2,
            use_grouping: true,
            use_progressive: true,
            share_params: true,
            use_attention: true,
            attention_source: AttentionSource::SpectralBody,
        }
    }

    /// Small settings that train on one CPU core in minutes.
    pub fn desk(bands: usize) -> Self {
        Self {
            group_size: 4,
            overlap: 1,
            n_feats: 32,
            n_blocks: 1,
            ..Self::paper(bands)
        }
    }

    /// Sets the total scale and the matching default branch factor.
    pub fn with_scale(mut self, scale: usize) -> Self {
        self.scale = scale;
        self.branch_upscale = default_branch_upscale(scale);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.bands == 0 || self.n_feats == 0 || self.n_blocks == 0 {
            return Err(Error::Config(
                "bands, n_feats and n_blocks must all be positive".into(),
            ));
        }
        if ![2, 4, 8].contains(&self.scale) {
            return Err(Error::Config(format!(
                "scale must be 2, 4 or 8, got {}",
                self.scale
            )));
        }
        let b = self.branch_upscale;
        if self.use_progressive && (b == 0 || !b.is_power_of_two() || self.scale % b != 0) {
            return Err(Error::Config(format!(
                "branch upscale {b} must be a power of two dividing scale {}",
                self.scale
            )));
        }
        if self.use_grouping {
            plan_groups(self.bands, self.group_size, self.overlap)?;
        }
        Ok(())
    }

    /// Effective branch upsampling factor.
    pub fn branch_scale(&self) -> usize {
        if self.use_progressive {
            self.branch_upscale
        } else {
            1
        }
    }

    /// Upsampling left to the global network.
    pub fn global_scale(&self) -> usize {
        self.scale / self.branch_scale()
    }

    /// Band groups; a single group over every band when grouping is off.
    pub fn grouping(&self) -> Result<GroupingScheme> {
        if self.use_grouping {
            plan_groups(self.bands, self.group_size, self.overlap)
        } else {
            plan_groups(self.bands, self.bands, 0)
        }
    }

    pub fn block_options(&self) -> BlockOptions {
        BlockOptions {
            use_attention: self.use_attention,
            attention_source: self.attention_source,
        }
    }

    /// Applies one `key = value` setting by field name.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let int = || {
            value
                .parse::<usize>()
                .map_err(|_| Error::Config(format!("{key}: expected an integer, got `{value}`")))
        };
        let flag = || parse_bool(key, value);
        match key {
            "bands" => self.bands = int()?,
            "group_size" | "p" => self.group_size = int()?,
            "overlap" | "o" => self.overlap = int()?,
            "n_feats" => self.n_feats = int()?,
            "n_blocks" | "R" => self.n_blocks = int()?,
            "scale" | "d" => *self = self.clone().with_scale(int()?),
            "branch_scale" | "branch_upscale" => self.branch_upscale = int()?,
            "use_grouping" => self.use_grouping = flag()?,
            "use_progressive" => self.use_progressive = flag()?,
            "share_params" => self.share_params = flag()?,
            "use_attention" => self.use_attention = flag()?,
            "attention_source" => {
                self.attention_source = match value {
                    "spectral_body" => AttentionSource::SpectralBody,
                    "spatial_features" => AttentionSource::SpatialFeatures,
                    _ => {
                        return Err(Error::Config(format!(
                            "attention_source: expected spectral_body or spatial_features, got `{value}`"
                        )))
                    }
                }
            }
            _ => return Err(Error::Config(format!("unknown network setting `{key}`"))),
        }
        Ok(())
    }
}

pub(crate) fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::Config(format!("{key}: expected a boolean, got `{value}`"))),
    }
}
