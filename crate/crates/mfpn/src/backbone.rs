//! Synthetic multi-scale blob scenes and the toy backbone that reads them.
//!
//! A scene is an image full of Gaussian bumps in three size classes plus a
//! per-level detection target: each blob lights up exactly one cell (value
//! 1.0) on the grid of the pyramid level responsible for its size, with a
//! sub-0.5 Gaussian skirt around it. Scene generation is a pure function of
//! the scene spec, so runs are reproducible end to end.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::pyramid::{BackboneFeatures, FpnConfig};
use crate::tensor::{Graph, Shape, Tensor};
use crate::weights::{conv_spec, WeightSpec, WeightStore};

/// The pyramid levels the detection task is defined over.
pub const TASK_MIN_LEVEL: usize = 2;
pub const TASK_MAX_LEVEL: usize = 5;

/// Blob size classes, by radius in image pixels.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SizeClass {
    Small,
    Medium,
    Large,
}

impl SizeClass {
    pub const ALL: [SizeClass; 3] = [SizeClass::Small, SizeClass::Medium, SizeClass::Large];

    pub fn name(&self) -> &'static str {
        match self {
            SizeClass::Small => "small",
            SizeClass::Medium => "medium",
            SizeClass::Large => "large",
        }
    }

    /// Radius range `[lo, hi)` for the class.
    pub fn radius_range(&self) -> (f64, f64) {
        match self {
            SizeClass::Small => (4.0, 8.0),
            SizeClass::Medium => (8.0, 16.0),
            SizeClass::Large => (16.0, 32.0),
        }
    }

    /// Which pyramid level answers for a blob of this class and radius.
    pub fn level_for(&self, radius: f64) -> usize {
        match self {
            SizeClass::Small => 2,
            SizeClass::Medium => {
                if radius < 12.0 {
                    3
                } else {
                    4
                }
            }
            SizeClass::Large => 5,
        }
    }
}

impl std::fmt::Display for SizeClass {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// One placed blob. Center coordinates are continuous image positions.
#[derive(Clone, Copy, Debug)]
pub struct Blob {
    pub class: SizeClass,
    pub radius: f64,
    pub cy: f64,
    pub cx: f64,
    pub level: usize,
}

/// Everything needed to generate one scene.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SceneSpec {
    pub image_size: usize,
    pub image_channels: usize,
    pub small: usize,
    pub medium: usize,
    pub large: usize,
    pub noise: f64,
    pub seed: u64,
}

impl Default for SceneSpec {
    fn default() -> SceneSpec {
        SceneSpec {
            image_size: 128,
            image_channels: 1,
            small: 2,
            medium: 2,
            large: 1,
            noise: 0.0,
            seed: 0,
        }
    }
}

/// A generated scene: the image, the per-level target grids (finest first),
/// and the blobs that produced them.
#[derive(Clone, Debug)]
pub struct BlobScene {
    pub spec: SceneSpec,
    pub image: Vec<f64>,
    pub image_shape: Shape,
    /// `targets[i]` is the grid for level `TASK_MIN_LEVEL + i`, row-major.
    pub targets: Vec<Vec<f64>>,
    pub blobs: Vec<Blob>,
}

impl BlobScene {
    pub fn image_tensor(&self, g: &mut Graph) -> Result<Tensor> {
        g.leaf(self.image_shape, self.image.clone())
    }

    pub fn grid_side(&self, level: usize) -> usize {
        self.spec.image_size >> level
    }

    /// Cells with target at least 0.5 on each level, finest first.
    pub fn positives_per_level(&self) -> Vec<usize> {
        self.targets
            .iter()
            .map(|t| t.iter().filter(|&&v| v >= 0.5).count())
            .collect()
    }

    /// Human-readable description used by the CLI.
    pub fn describe(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "scene seed={} size={} channels={} noise={}\n",
            self.spec.seed, self.spec.image_size, self.spec.image_channels, self.spec.noise
        ));
        for b in &self.blobs {
            out.push_str(&format!(
                "blob class={} radius={:.2} center=({:.2},{:.2}) level={}\n",
                b.class, b.radius, b.cy, b.cx, b.level
            ));
        }
        for (i, pos) in self.positives_per_level().iter().enumerate() {
            out.push_str(&format!(
                "level {} grid {}x{} positives {}\n",
                TASK_MIN_LEVEL + i,
                self.grid_side(TASK_MIN_LEVEL + i),
                self.grid_side(TASK_MIN_LEVEL + i),
                pos
            ));
        }
        out
    }
}

/// Stateless hash for deriving per-scene seeds from a base seed.
pub fn mix_seed(base: u64, index: u64) -> u64 {
    let mut z = base
        .wrapping_add(0x9E3779B97F4A7C15)
        .wrapping_add(index.wrapping_mul(0xD1B54A32D192ED03));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

const PLACEMENT_ATTEMPTS: usize = 1000;

/// Generate a scene. Blob centers are drawn uniformly (kept fully inside the
/// image) and re-drawn until every pair of centers is at least twice the sum
/// of their radii apart; placement gives up after 1000 attempts per blob.
pub fn generate_blob_scene(spec: &SceneSpec) -> Result<BlobScene> {
    if spec.image_size % 32 != 0 || spec.image_size < 64 {
        return Err(Error::Config(format!(
            "image size {} is not a multiple of 32 (>= 64)",
            spec.image_size
        )));
    }
    if spec.image_channels != 1 && spec.image_channels != 3 {
        return Err(Error::Config(format!(
            "image channels must be 1 or 3, got {}",
            spec.image_channels
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let size = spec.image_size as f64;

    // Largest blobs first: they carry the widest exclusion disks, so placing
    // them into an empty canvas keeps the layout satisfiable. A conflicted
    // draw retries the blob; a blob that exhausts its retries restarts the
    // whole layout, all within one shared attempt budget.
    let mut order: Vec<SizeClass> = Vec::new();
    order.extend(std::iter::repeat(SizeClass::Large).take(spec.large));
    order.extend(std::iter::repeat(SizeClass::Medium).take(spec.medium));
    order.extend(std::iter::repeat(SizeClass::Small).take(spec.small));

    let mut blobs: Vec<Blob> = Vec::new();
    let mut attempts = 0;
    'layout: loop {
        blobs.clear();
        for &class in &order {
            let (lo, hi) = class.radius_range();
            let mut placed = false;
            for _ in 0..20 {
                attempts += 1;
                if attempts > PLACEMENT_ATTEMPTS {
                    return Err(Error::SceneUnsatisfiable(PLACEMENT_ATTEMPTS));
                }
                let radius = rng.gen_range(lo..hi);
                if 2.0 * radius >= size {
                    continue; // cannot fit on this canvas at all
                }
                let cy = rng.gen_range(radius..size - radius);
                let cx = rng.gen_range(radius..size - radius);
                let ok = blobs.iter().all(|b| {
                    let dy = b.cy - cy;
                    let dx = b.cx - cx;
                    (dy * dy + dx * dx).sqrt() >= 2.0 * (b.radius + radius)
                });
                if ok {
                    blobs.push(Blob {
                        class,
                        radius,
                        cy,
                        cx,
                        level: class.level_for(radius),
                    });
                    placed = true;
                    break;
                }
            }
            if !placed {
                continue 'layout;
            }
        }
        break;
    }

    // Image: sum of Gaussian bumps (sigma = radius / 2) at the true centers,
    // replicated across channels, plus optional uniform noise.
    let s = spec.image_size;
    let shape = Shape::new(1, spec.image_channels, s, s);
    let mut plane = vec![0.0; s * s];
    for b in &blobs {
        let sigma = b.radius / 2.0;
        let inv = 1.0 / (2.0 * sigma * sigma);
        for y in 0..s {
            let dy = y as f64 + 0.5 - b.cy;
            for x in 0..s {
                let dx = x as f64 + 0.5 - b.cx;
                plane[y * s + x] += (-(dy * dy + dx * dx) * inv).exp();
            }
        }
    }
    let mut image = Vec::with_capacity(shape.numel());
    for _ in 0..spec.image_channels {
        image.extend_from_slice(&plane);
    }
    if spec.noise > 0.0 {
        for v in &mut image {
            *v += rng.gen_range(-spec.noise..spec.noise);
        }
    }

    // Targets: each blob stamps a Gaussian on its level's grid, centered on
    // the cell nearest its true center so the peak cell is exactly 1.0. The
    // cell-unit sigma is the pixel sigma rescaled by the level stride, capped
    // so every neighboring cell stays below 0.5; overlapping stamps combine
    // by max, so a level has exactly one positive cell per blob.
    let mut targets: Vec<Vec<f64>> = (TASK_MIN_LEVEL..=TASK_MAX_LEVEL)
        .map(|level| vec![0.0; (s >> level) * (s >> level)])
        .collect();
    for b in &blobs {
        let stride = (1usize << b.level) as f64;
        let grid = s >> b.level;
        let sigma_cell = (b.radius / 2.0 / stride).min(0.8);
        let inv = 1.0 / (2.0 * sigma_cell * sigma_cell);
        let snap = |c: f64| ((c / stride - 0.5).round().max(0.0) as usize).min(grid - 1);
        let (y0, x0) = (snap(b.cy), snap(b.cx));
        let t = &mut targets[b.level - TASK_MIN_LEVEL];
        for y in 0..grid {
            let dy = y as f64 - y0 as f64;
            for x in 0..grid {
                let dx = x as f64 - x0 as f64;
                let v = (-(dy * dy + dx * dx) * inv).exp();
                let cell = &mut t[y * grid + x];
                if v > *cell {
                    *cell = v;
                }
            }
        }
    }

    Ok(BlobScene {
        spec: *spec,
        image,
        image_shape: shape,
        targets,
        blobs,
    })
}

/// Weight specs for the toy backbone: a stem block then one block per level,
/// each a 3x3 convolution followed by 2x2 max-pooling.
pub fn backbone_layout(cfg: &FpnConfig, image_channels: usize) -> Vec<WeightSpec> {
    let mut out = Vec::new();
    let stem_c = cfg.backbone_channels[0];
    out.extend(conv_spec("backbone.stem", image_channels, stem_c, 3));
    let mut prev = stem_c;
    for (i, level) in cfg.levels().enumerate() {
        let c = cfg.backbone_channels[i];
        out.extend(conv_spec(&format!("backbone.{level}"), prev, c, 3));
        prev = c;
    }
    out
}

/// Run the toy backbone: the stem halves the image once, then each level
/// block halves again, so level `i` sits at stride `2^i`. Defined for the
/// task's level range 2..=5.
pub fn backbone_forward(
    g: &mut Graph,
    store: &WeightStore,
    cfg: &FpnConfig,
    image: Tensor,
) -> Result<BackboneFeatures> {
    if cfg.min_level != TASK_MIN_LEVEL || cfg.max_level != TASK_MAX_LEVEL {
        return Err(Error::LevelCount {
            expected: format!("levels {TASK_MIN_LEVEL}..={TASK_MAX_LEVEL} for the blob task"),
            got: cfg.num_levels(),
        });
    }
    let conv = |g: &mut Graph, name: &str, x: Tensor| -> Result<Tensor> {
        let w = store.tensor(g, &format!("{name}.w"))?;
        let b = store.tensor(g, &format!("{name}.b"))?;
        g.conv2d(x, w, b)
    };
    let stem = conv(g, "backbone.stem", image)?;
    let mut x = g.maxpool_2x2(stem)?;
    let mut maps = Vec::with_capacity(cfg.num_levels());
    for level in cfg.levels() {
        let y = conv(g, &format!("backbone.{level}"), x)?;
        x = g.maxpool_2x2(y)?;
        maps.push(x);
    }
    Ok(BackboneFeatures {
        min_level: cfg.min_level,
        maps,
    })
}
