//! Declarative model descriptions shared by the executor and the profiler.

use serde::{Deserialize, Serialize};

use crate::conv::ConvSpec;
use crate::error::{Error, Result};

/// Number of backbone stages (and pyramid levels).
pub const LEVELS: usize = 4;

/// One context-guided block.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CgbSpec {
    /// Input channels; differs from `channels` only for downsampling blocks.
    pub in_channels: usize,
    pub channels: usize,
    /// Dilation of the surrounding-context branch.
    pub dilation: usize,
    /// Bottleneck ratio of the global-context gate. `None` replaces the
    /// bottleneck with the identity (the gate is then `sigmoid(mean)`).
    pub attention_reduction: Option<usize>,
    /// Stride-2 entry block (3x3 strided reduce, no residual) instead of a
    /// stride-1 residual block.
    pub downsample: bool,
}

impl CgbSpec {
    pub fn residual(channels: usize, dilation: usize, reduction: usize) -> Self {
        CgbSpec {
            in_channels: channels,
            channels,
            dilation,
            attention_reduction: Some(reduction),
            downsample: false,
        }
    }

    pub fn downsampling(in_channels: usize, channels: usize, dilation: usize, reduction: usize) -> Self {
        CgbSpec {
            in_channels,
            channels,
            dilation,
            attention_reduction: Some(reduction),
            downsample: true,
        }
    }

    pub fn half(&self) -> usize {
        self.channels / 2
    }

    /// Hidden width of the gate bottleneck.
    pub fn hidden(&self) -> Option<usize> {
        self.attention_reduction.map(|r| self.channels / r)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidSpec(m));
        if self.channels == 0 || !self.channels.is_multiple_of(2) {
            return bad(format!("CGB channels must be even and positive, got {}", self.channels));
        }
        if self.dilation < 2 {
            return bad(format!("CGB surrounding dilation must be >= 2, got {}", self.dilation));
        }
        if let Some(r) = self.attention_reduction {
            if r == 0 || !self.channels.is_multiple_of(r) {
                return bad(format!(
                    "attention reduction {r} does not divide {} channels",
                    self.channels
                ));
            }
        }
        if !self.downsample && self.in_channels != self.channels {
            return bad(format!(
                "residual CGB needs in == out channels, got {} -> {}",
                self.in_channels, self.channels
            ));
        }
        Ok(())
    }

    /// The 1x1 reduce (or 3x3 stride-2 reduce for entry blocks).
    pub fn reduce_conv(&self) -> ConvSpec {
        if self.downsample {
            ConvSpec::new(self.in_channels, self.half(), 3)
                .with_stride(2)
                .with_padding(1)
        } else {
            ConvSpec::new(self.in_channels, self.half(), 1)
        }
    }

    pub fn local_conv(&self) -> ConvSpec {
        ConvSpec::depthwise(self.half(), 3).with_padding(1)
    }

    pub fn surround_conv(&self) -> ConvSpec {
        ConvSpec::depthwise(self.half(), 3)
            .with_dilation(self.dilation)
            .with_padding(self.dilation)
    }

    /// Gate bottleneck convolutions `C -> C/r -> C`, with bias.
    pub fn gate_convs(&self) -> Option<(ConvSpec, ConvSpec)> {
        self.hidden().map(|h| {
            (
                ConvSpec::new(self.channels, h, 1).with_bias(true),
                ConvSpec::new(h, self.channels, 1).with_bias(true),
            )
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackboneSpec {
    pub stage_blocks: [usize; LEVELS],
    pub stage_channels: [usize; LEVELS],
    pub stage_dilations: [usize; LEVELS],
    pub attention_reduction: usize,
    pub stem: ConvSpec,
}

impl BackboneSpec {
    /// Block layout with the given stage widths and the standard stem.
    pub fn with_channels(stage_blocks: [usize; LEVELS], stage_channels: [usize; LEVELS], reduction: usize) -> Self {
        BackboneSpec {
            stage_blocks,
            stage_channels,
            stage_dilations: [2, 2, 4, 4],
            attention_reduction: reduction,
            stem: ConvSpec::new(3, stage_channels[0], 3).with_stride(2).with_padding(1),
        }
    }

    /// Each CGB counts as two levels.
    pub fn layer_count(&self) -> usize {
        2 * self.stage_blocks.iter().sum::<usize>()
    }

    /// Output stride of stage `s` relative to the input.
    pub fn stage_stride(s: usize) -> usize {
        1 << (s + 1)
    }

    /// The CGB specs of stage `s` in execution order.
    pub fn stage_cgbs(&self, s: usize) -> Vec<CgbSpec> {
        let c = self.stage_channels[s];
        let r = self.attention_reduction;
        let d = self.stage_dilations[s];
        (0..self.stage_blocks[s])
            .map(|b| {
                if s > 0 && b == 0 {
                    CgbSpec::downsampling(self.stage_channels[s - 1], c, d, r)
                } else {
                    CgbSpec::residual(c, d, r)
                }
            })
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidSpec(m));
        self.stem.validate()?;
        if self.stem.in_channels != 3 || self.stem.out_channels != self.stage_channels[0] {
            return bad(format!(
                "stem must map 3 -> {} channels, got {} -> {}",
                self.stage_channels[0], self.stem.in_channels, self.stem.out_channels
            ));
        }
        if self.stem.stride != 2 || self.stem.kernel_h != self.stem.kernel_w || self.stem.kernel_h.is_multiple_of(2) {
            return bad("stem must be an odd square kernel with stride 2".into());
        }
        if self.stem.padding != self.stem.dilation * (self.stem.kernel_h - 1) / 2 {
            return bad("stem padding must preserve alignment (same padding)".into());
        }
        for s in 0..LEVELS {
            if s > 0 && self.stage_blocks[s] == 0 {
                return bad(format!("stage {s} needs at least its downsampling block"));
            }
            for cgb in self.stage_cgbs(s) {
                cgb.validate()?;
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FpnVariant {
    Dense,
    Diff,
}

impl std::fmt::Display for FpnVariant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            FpnVariant::Dense => "dense",
            FpnVariant::Diff => "diff",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FpnSpec {
    pub variant: FpnVariant,
    /// Output channels of fusion nodes at strides 2, 4, 8, 16.
    pub fusion_channels: [usize; LEVELS],
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub backbone: BackboneSpec,
    pub fpn: FpnSpec,
}

impl ModelSpec {
    /// The calibrated LightSiamese-52 configuration with the diff FPN. The
    /// same values are committed in `configs/lightsiamese52.toml`.
    pub fn canonical() -> Self {
        ModelSpec {
            backbone: BackboneSpec::with_channels([3, 3, 8, 12], CANONICAL_STAGE_CHANNELS, 16),
            fpn: FpnSpec {
                variant: FpnVariant::Diff,
                fusion_channels: CANONICAL_FUSION_CHANNELS,
            },
        }
    }

    /// Reduced-width, reduced-depth diff model used for desk-scale training.
    pub fn reduced() -> Self {
        ModelSpec {
            backbone: BackboneSpec::with_channels([1, 1, 2, 2], [16, 32, 32, 64], 8),
            fpn: FpnSpec {
                variant: FpnVariant::Diff,
                fusion_channels: [8, 8, 8, 8],
            },
        }
    }

    pub fn with_variant(mut self, variant: FpnVariant) -> Self {
        self.fpn.variant = variant;
        self
    }

    /// Input height/width must be a multiple of this.
    pub fn input_multiple(&self) -> usize {
        BackboneSpec::stage_stride(LEVELS - 1)
    }

    pub fn validate(&self) -> Result<()> {
        self.backbone.validate()?;
        if self.fpn.fusion_channels.contains(&0) {
            return Err(Error::InvalidSpec("fusion channels must be positive".into()));
        }
        Ok(())
    }

    pub fn check_input(&self, h: usize, w: usize) -> Result<()> {
        let m = self.input_multiple();
        if h == 0 || w == 0 || !h.is_multiple_of(m) || !w.is_multiple_of(m) {
            return Err(Error::InvalidSpec(format!(
                "input {h}x{w} must be a positive multiple of {m} in both dimensions"
            )));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("model spec serializes")
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let spec: ModelSpec = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }
}

/// Stage widths selected by the calibration search (see the profiler's
/// `calibrate` module and the README).
pub const CANONICAL_STAGE_CHANNELS: [usize; LEVELS] = [160, 176, 176, 176];
/// Fusion widths selected by the calibration search.
pub const CANONICAL_FUSION_CHANNELS: [usize; LEVELS] = [8, 4, 4, 36];
