//! Feature pyramid builders.
//!
//! Three ways of moving information across scales over a shared set of
//! lateral projections, plus their elementwise mixture:
//!
//! * **top-down**: start at the coarsest level (seeded with its global
//!   average), repeatedly upsample and merge with the next lateral down.
//! * **bottom-up**: each level merges the pooled previous output, its own
//!   lateral, and the upsampled lateral from one level above.
//! * **fusing-splitting**: collapse the four laterals into a small-scale and
//!   a large-scale intermediate, cross-fuse those through concatenation
//!   convolutions, and split the two fused maps back out to all four levels.
//! * **mfpn**: the elementwise sum of all three branch outputs per level.
//!
//! Every merge is a plain sum and every convolution is linear (no
//! nonlinearity, no normalization), so pyramid outputs are linear in the
//! backbone features — a property the tests lean on heavily.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::tensor::{Graph, Tensor};
use crate::weights::{conv_spec, WeightSpec, WeightStore};

/// Which pyramid to build.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PyramidKind {
    TopDown,
    BottomUp,
    FusingSplitting,
    Mfpn,
}

impl PyramidKind {
    pub const ALL: [PyramidKind; 4] = [
        PyramidKind::TopDown,
        PyramidKind::BottomUp,
        PyramidKind::FusingSplitting,
        PyramidKind::Mfpn,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            PyramidKind::TopDown => "top-down",
            PyramidKind::BottomUp => "bottom-up",
            PyramidKind::FusingSplitting => "fusing-splitting",
            PyramidKind::Mfpn => "mfpn",
        }
    }
}

impl fmt::Display for PyramidKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(self.name())
    }
}

impl FromStr for PyramidKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<PyramidKind> {
        match s {
            "top-down" => Ok(PyramidKind::TopDown),
            "bottom-up" => Ok(PyramidKind::BottomUp),
            "fusing-splitting" => Ok(PyramidKind::FusingSplitting),
            "mfpn" => Ok(PyramidKind::Mfpn),
            other => Err(Error::Config(format!(
                "unknown builder {other:?} (expected top-down, bottom-up, fusing-splitting, or mfpn)"
            ))),
        }
    }
}

/// Static description of a pyramid: which levels exist, the uniform pyramid
/// width, the backbone channel count feeding each level, and how many extra
/// coarser levels are carried for parameter accounting.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FpnConfig {
    pub min_level: usize,
    pub max_level: usize,
    pub channels: usize,
    pub backbone_channels: Vec<usize>,
    pub extra_levels: usize,
}

impl FpnConfig {
    pub fn new(
        min_level: usize,
        max_level: usize,
        channels: usize,
        backbone_channels: &[usize],
        extra_levels: usize,
    ) -> Result<FpnConfig> {
        let cfg = FpnConfig {
            min_level,
            max_level,
            channels,
            backbone_channels: backbone_channels.to_vec(),
            extra_levels,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_level <= self.min_level {
            return Err(Error::LevelCount {
                expected: "at least 2 levels".to_string(),
                got: self.max_level.saturating_sub(self.min_level) + 1,
            });
        }
        if self.backbone_channels.len() != self.num_levels() {
            return Err(Error::LevelCount {
                expected: format!("{} backbone channel entries", self.num_levels()),
                got: self.backbone_channels.len(),
            });
        }
        if self.channels == 0 || self.backbone_channels.iter().any(|&c| c == 0) {
            return Err(Error::Config("channel counts must be positive".into()));
        }
        Ok(())
    }

    pub fn num_levels(&self) -> usize {
        self.max_level - self.min_level + 1
    }

    pub fn levels(&self) -> std::ops::RangeInclusive<usize> {
        self.min_level..=self.max_level
    }

    /// ResNet-50 levels 3-5 at width 256 with two stride-2 extra levels:
    /// the classic single-stage detector layout.
    pub fn retinanet_fpn() -> FpnConfig {
        FpnConfig::new(3, 5, 256, &[512, 1024, 2048], 2).unwrap()
    }

    /// ResNet-50 levels 2-5 at width 256, no extras.
    pub fn resnet50_c2c5() -> FpnConfig {
        FpnConfig::new(2, 5, 256, &[256, 512, 1024, 2048], 0).unwrap()
    }

    /// ResNet-50 levels 2-5 at width 256 plus two extra levels.
    pub fn resnet50_c2c5_p67() -> FpnConfig {
        FpnConfig::new(2, 5, 256, &[256, 512, 1024, 2048], 2).unwrap()
    }

    /// Single-channel, four-level configuration small enough to check by hand.
    pub fn toy() -> FpnConfig {
        FpnConfig::new(2, 5, 1, &[1, 1, 1, 1], 0).unwrap()
    }
}

/// Backbone feature maps, finest first: `maps[i]` sits at level
/// `min_level + i` and each map halves the spatial size of the previous one.
#[derive(Clone, Debug)]
pub struct BackboneFeatures {
    pub min_level: usize,
    pub maps: Vec<Tensor>,
}

impl BackboneFeatures {
    pub fn level(&self, level: usize) -> Option<Tensor> {
        level
            .checked_sub(self.min_level)
            .and_then(|i| self.maps.get(i))
            .copied()
    }
}

/// Pyramid outputs, finest first, mirroring [`BackboneFeatures`].
#[derive(Clone, Debug)]
pub struct PyramidSet {
    pub min_level: usize,
    pub maps: Vec<Tensor>,
}

impl PyramidSet {
    pub fn level(&self, level: usize) -> Option<Tensor> {
        level
            .checked_sub(self.min_level)
            .and_then(|i| self.maps.get(i))
            .copied()
    }

    pub fn levels(&self) -> impl Iterator<Item = (usize, Tensor)> + '_ {
        self.maps
            .iter()
            .enumerate()
            .map(|(i, &t)| (self.min_level + i, t))
    }
}

/// The two aggregates and two fused maps produced on the way to a
/// fusing-splitting pyramid, exposed for inspection.
#[derive(Clone, Copy, Debug)]
pub struct FusionIntermediates {
    /// Sum of the two coarse laterals, at the second-coarsest resolution.
    pub alpha_s: Tensor,
    /// Sum of the two fine laterals, at the second-finest resolution.
    pub alpha_l: Tensor,
    /// Fused small-scale map (same resolution as `alpha_s`).
    pub beta_s: Tensor,
    /// Fused large-scale map (same resolution as `alpha_l`).
    pub beta_l: Tensor,
}

/// Weight specs for one pyramid: laterals, branch convolutions, and any
/// extra-level convolutions. The mixture shares one set of laterals across
/// all three branches.
pub fn pyramid_layout(kind: PyramidKind, cfg: &FpnConfig) -> Vec<WeightSpec> {
    let c = cfg.channels;
    let mut out = Vec::new();
    for (i, level) in cfg.levels().enumerate() {
        out.extend(conv_spec(
            &format!("lateral.{level}"),
            cfg.backbone_channels[i],
            c,
            1,
        ));
    }
    let td = |out: &mut Vec<WeightSpec>| {
        for level in cfg.levels() {
            out.extend(conv_spec(&format!("td.{level}"), c, c, 3));
        }
    };
    let bu = |out: &mut Vec<WeightSpec>| {
        for level in cfg.levels() {
            out.extend(conv_spec(&format!("bu.{level}"), c, c, 3));
        }
    };
    let fs = |out: &mut Vec<WeightSpec>| {
        out.extend(conv_spec("fs.s", 2 * c, c, 3));
        out.extend(conv_spec("fs.l", 2 * c, c, 3));
    };
    match kind {
        PyramidKind::TopDown => td(&mut out),
        PyramidKind::BottomUp => bu(&mut out),
        PyramidKind::FusingSplitting => fs(&mut out),
        PyramidKind::Mfpn => {
            td(&mut out);
            bu(&mut out);
            fs(&mut out);
        }
    }
    for j in 0..cfg.extra_levels {
        let level = cfg.max_level + 1 + j;
        let c_in = if j == 0 {
            *cfg.backbone_channels.last().unwrap()
        } else {
            c
        };
        out.extend(conv_spec(&format!("extra.{level}"), c_in, c, 3));
    }
    out
}

fn conv(g: &mut Graph, store: &WeightStore, prefix: &str, x: Tensor) -> Result<Tensor> {
    let w = store.tensor(g, &format!("{prefix}.w"))?;
    let b = store.tensor(g, &format!("{prefix}.b"))?;
    g.conv2d(x, w, b)
}

fn check_runtime(cfg: &FpnConfig, feats: &BackboneFeatures) -> Result<()> {
    cfg.validate()?;
    if cfg.extra_levels > 0 {
        return Err(Error::ExtraLevelsUnsupported(cfg.extra_levels));
    }
    if feats.min_level != cfg.min_level || feats.maps.len() != cfg.num_levels() {
        return Err(Error::LevelCount {
            expected: format!("levels {}..={}", cfg.min_level, cfg.max_level),
            got: feats.maps.len(),
        });
    }
    for pair in feats.maps.windows(2) {
        let (a, b) = (pair[0].shape(), pair[1].shape());
        if b.h * 2 != a.h || b.w * 2 != a.w {
            return Err(Error::Shape(format!(
                "backbone levels must halve spatially: {a} then {b}"
            )));
        }
    }
    Ok(())
}

/// Project every backbone map to the pyramid width with its 1x1 lateral.
pub fn apply_laterals(
    g: &mut Graph,
    store: &WeightStore,
    cfg: &FpnConfig,
    feats: &BackboneFeatures,
) -> Result<Vec<Tensor>> {
    check_runtime(cfg, feats)?;
    cfg.levels()
        .zip(&feats.maps)
        .map(|(level, &x)| conv(g, store, &format!("lateral.{level}"), x))
        .collect()
}

/// Top-down pathway over pre-projected laterals (finest first). The coarsest
/// lateral is first enriched with its own global average (a parameter-free
/// broadcast add); every level then applies a 3x3 convolution named after the
/// level it produces.
pub fn build_top_down(
    g: &mut Graph,
    store: &WeightStore,
    cfg: &FpnConfig,
    laterals: &[Tensor],
) -> Result<PyramidSet> {
    let top = *laterals.last().unwrap();
    let gap = g.global_avg_pool(top)?;
    let seeded = g.add(&[top, gap])?;
    let mut maps = vec![conv(g, store, &format!("td.{}", cfg.max_level), seeded)?];
    for i in (0..laterals.len() - 1).rev() {
        let level = cfg.min_level + i;
        let up = g.upsample_nearest_x2(*maps.last().unwrap())?;
        let merged = g.add(&[up, laterals[i]])?;
        maps.push(conv(g, store, &format!("td.{level}"), merged)?);
    }
    maps.reverse();
    Ok(PyramidSet {
        min_level: cfg.min_level,
        maps,
    })
}

/// Bottom-up pathway over pre-projected laterals. Each level merges the
/// pooled previous output, its own lateral, and the upsampled lateral from
/// one level coarser; the finest level has no previous output and the
/// coarsest has no level above it, so those terms drop out at the ends.
pub fn build_bottom_up(
    g: &mut Graph,
    store: &WeightStore,
    cfg: &FpnConfig,
    laterals: &[Tensor],
) -> Result<PyramidSet> {
    let mut maps: Vec<Tensor> = Vec::with_capacity(laterals.len());
    for (i, level) in cfg.levels().enumerate() {
        let mut terms = Vec::new();
        if let Some(&prev) = maps.last() {
            terms.push(g.maxpool_2x2(prev)?);
        }
        terms.push(laterals[i]);
        if i + 1 < laterals.len() {
            terms.push(g.upsample_nearest_x2(laterals[i + 1])?);
        }
        let merged = g.add(&terms)?;
        maps.push(conv(g, store, &format!("bu.{level}"), merged)?);
    }
    Ok(PyramidSet {
        min_level: cfg.min_level,
        maps,
    })
}

/// Fusing-splitting pathway; defined for exactly four levels. The four
/// laterals collapse pairwise into a small-scale and a large-scale aggregate,
/// each aggregate is fused with a rescaled copy of the other through a
/// concatenation convolution, and the two fused maps are split back out to
/// the four output resolutions.
pub fn build_fusing_splitting(
    g: &mut Graph,
    store: &WeightStore,
    cfg: &FpnConfig,
    laterals: &[Tensor],
) -> Result<(PyramidSet, FusionIntermediates)> {
    if laterals.len() != 4 {
        return Err(Error::LevelCount {
            expected: "exactly 4 levels for fusing-splitting".to_string(),
            got: laterals.len(),
        });
    }
    let (l0, l1, l2, l3) = (laterals[0], laterals[1], laterals[2], laterals[3]);

    let up3 = g.upsample_nearest_x2(l3)?;
    let alpha_s = g.add(&[l2, up3])?;
    let down0 = g.maxpool_2x2(l0)?;
    let alpha_l = g.add(&[down0, l1])?;

    let alpha_l_down = g.maxpool_2x2(alpha_l)?;
    let cat_s = g.concat_channels(alpha_s, alpha_l_down)?;
    let beta_s = conv(g, store, "fs.s", cat_s)?;

    let alpha_s_up = g.upsample_nearest_x2(alpha_s)?;
    let cat_l = g.concat_channels(alpha_s_up, alpha_l)?;
    let beta_l = conv(g, store, "fs.l", cat_l)?;

    let f0 = g.upsample_nearest_x2(beta_l)?;
    let f3 = g.maxpool_2x2(beta_s)?;
    Ok((
        PyramidSet {
            min_level: cfg.min_level,
            maps: vec![f0, beta_l, beta_s, f3],
        },
        FusionIntermediates {
            alpha_s,
            alpha_l,
            beta_s,
            beta_l,
        },
    ))
}

/// The mixture: run all three branches over one shared set of laterals and
/// sum their outputs per level.
pub fn build_mfpn(
    g: &mut Graph,
    store: &WeightStore,
    cfg: &FpnConfig,
    laterals: &[Tensor],
) -> Result<PyramidSet> {
    let td = build_top_down(g, store, cfg, laterals)?;
    let bu = build_bottom_up(g, store, cfg, laterals)?;
    let (fs, _) = build_fusing_splitting(g, store, cfg, laterals)?;
    let maps = td
        .maps
        .iter()
        .zip(&bu.maps)
        .zip(&fs.maps)
        .map(|((&t, &b), &f)| g.add(&[t, b, f]))
        .collect::<Result<Vec<_>>>()?;
    Ok(PyramidSet {
        min_level: cfg.min_level,
        maps,
    })
}

/// Apply laterals and dispatch to the requested builder.
pub fn build(
    g: &mut Graph,
    store: &WeightStore,
    cfg: &FpnConfig,
    kind: PyramidKind,
    feats: &BackboneFeatures,
) -> Result<PyramidSet> {
    let laterals = apply_laterals(g, store, cfg, feats)?;
    match kind {
        PyramidKind::TopDown => build_top_down(g, store, cfg, &laterals),
        PyramidKind::BottomUp => build_bottom_up(g, store, cfg, &laterals),
        PyramidKind::FusingSplitting => {
            build_fusing_splitting(g, store, cfg, &laterals).map(|(set, _)| set)
        }
        PyramidKind::Mfpn => build_mfpn(g, store, cfg, &laterals),
    }
}

/// Identity-style weights for worked examples: 1x1 laterals pass through,
/// 3x3 convolutions keep only the center tap summed over input channels,
/// biases zero. Constant maps stay constant through every such layer.
pub fn identity_store(kind: PyramidKind, cfg: &FpnConfig) -> WeightStore {
    let mut store = WeightStore::new();
    for spec in pyramid_layout(kind, cfg) {
        store.insert_zeros(&spec.name, &spec.dims);
    }
    let names: Vec<String> = store.names().map(str::to_string).collect();
    for name in names {
        let param = store.get_mut(&name).unwrap();
        if param.dims.len() != 4 {
            continue;
        }
        let (c_out, c_in, k) = (param.dims[0], param.dims[1], param.dims[2]);
        for co in 0..c_out {
            for ci in 0..c_in {
                let center = ((co * c_in + ci) * k + k / 2) * k + k / 2;
                param.values[center] = 1.0;
            }
        }
    }
    store
}
