//! Verification and inspection tools for built pyramids: analytic parameter
//! accounting, gradient-probed information-flow matrices, finite-difference
//! gradient checking, and heatmap export.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::pyramid::{
    build, pyramid_layout, BackboneFeatures, FpnConfig, PyramidKind, PyramidSet,
};
use crate::tensor::{Graph, Shape, Tensor};
use crate::weights::WeightStore;

// ---------------------------------------------------------------------------
// Parameter accounting
// ---------------------------------------------------------------------------

/// One weight entry in a parameter report.
#[derive(Clone, Debug)]
pub struct ParamRow {
    pub name: String,
    pub dims: Vec<usize>,
    pub count: usize,
}

/// Subtotal for one component group (laterals, each branch's convolutions,
/// extra levels).
#[derive(Clone, Debug)]
pub struct ParamGroup {
    pub name: &'static str,
    pub count: usize,
}

/// Full parameter accounting for one builder kind under one configuration.
#[derive(Clone, Debug)]
pub struct ParamReport {
    pub kind: PyramidKind,
    pub rows: Vec<ParamRow>,
    pub groups: Vec<ParamGroup>,
    pub total: usize,
}

fn group_of(name: &str) -> &'static str {
    if name.starts_with("lateral.") {
        "laterals"
    } else if name.starts_with("td.") {
        "top-down convs"
    } else if name.starts_with("bu.") {
        "bottom-up convs"
    } else if name.starts_with("fs.") {
        "fusion convs"
    } else if name.starts_with("extra.") {
        "extra levels"
    } else {
        "other"
    }
}

/// Count parameters from weight shapes alone; no tensors are allocated.
/// Biases are included.
pub fn count_params(kind: PyramidKind, cfg: &FpnConfig) -> Result<ParamReport> {
    cfg.validate()?;
    let mut rows = Vec::new();
    let mut groups: Vec<ParamGroup> = Vec::new();
    let mut total = 0;
    for spec in pyramid_layout(kind, cfg) {
        let count = spec.numel();
        total += count;
        let group = group_of(&spec.name);
        match groups.iter_mut().find(|g| g.name == group) {
            Some(g) => g.count += count,
            None => groups.push(ParamGroup { name: group, count }),
        }
        rows.push(ParamRow {
            name: spec.name,
            dims: spec.dims,
            count,
        });
    }
    Ok(ParamReport {
        kind,
        rows,
        groups,
        total,
    })
}

impl ParamReport {
    /// Plain-text table: per-weight rows, group subtotals, grand total.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("parameter report: {}\n", self.kind));
        let width = self
            .rows
            .iter()
            .map(|r| r.name.len())
            .chain(self.groups.iter().map(|g| g.name.len()))
            .max()
            .unwrap_or(4)
            .max("total".len());
        for r in &self.rows {
            let dims = r
                .dims
                .iter()
                .map(|d| d.to_string())
                .collect::<Vec<_>>()
                .join("x");
            out.push_str(&format!(
                "  {:width$}  {:>12}  {}\n",
                r.name,
                r.count,
                dims,
                width = width
            ));
        }
        for g in &self.groups {
            out.push_str(&format!(
                "  {:width$}  {:>12}  (subtotal)\n",
                g.name,
                g.count,
                width = width
            ));
        }
        out.push_str(&format!(
            "  {:width$}  {:>12}\n",
            "total",
            self.total,
            width = width
        ));
        out
    }

    /// Machine-readable dump of the same report.
    pub fn to_json(&self) -> String {
        let mut out = String::new();
        out.push_str("{\n");
        out.push_str(&format!("  \"kind\": \"{}\",\n", self.kind));
        out.push_str("  \"rows\": [\n");
        for (i, r) in self.rows.iter().enumerate() {
            let dims = r
                .dims
                .iter()
                .map(|d| d.to_string())
                .collect::<Vec<_>>()
                .join(", ");
            let comma = if i + 1 < self.rows.len() { "," } else { "" };
            out.push_str(&format!(
                "    {{\"name\": \"{}\", \"dims\": [{}], \"count\": {}}}{}\n",
                r.name, dims, r.count, comma
            ));
        }
        out.push_str("  ],\n");
        out.push_str("  \"groups\": {\n");
        for (i, g) in self.groups.iter().enumerate() {
            let comma = if i + 1 < self.groups.len() { "," } else { "" };
            out.push_str(&format!("    \"{}\": {}{}\n", g.name, g.count, comma));
        }
        out.push_str("  },\n");
        out.push_str(&format!("  \"total\": {}\n", self.total));
        out.push_str("}\n");
        out
    }
}

/// Best-effort reconciliation of computed totals against the commonly quoted
/// per-architecture totals (in millions) for a ResNet-50 detector at pyramid
/// width 256. The quoted accounting is not fully specified, so this report
/// states, for each reference number, the counting hypothesis that reproduces
/// it and the residual delta.
pub fn reconciliation_report() -> Result<String> {
    let retina = FpnConfig::retinanet_fpn();
    let c = retina.channels;
    let baseline = count_params(PyramidKind::TopDown, &retina)?.total;
    // hypothesis: the coarsest level's global context is a learned 1x1
    // projection from the raw backbone width instead of a parameter-free add
    let gap_proj = retina.backbone_channels.last().unwrap() * c + c;
    let td = baseline + gap_proj;
    let bu = td;
    // hypothesis: the reference fusing-splitting total counts the extra
    // levels plus a single 2C->C 3x3 fusion convolution and no laterals
    let fuse_conv = 9 * (2 * c) * c + c;
    let extras: usize = count_params(PyramidKind::TopDown, &retina)?
        .groups
        .iter()
        .find(|g| g.name == "extra levels")
        .map(|g| g.count)
        .unwrap_or(0);
    let fs = extras + fuse_conv;
    // hypothesis: the mixture adds only the new convolutions on top of the
    // full top-down pathway: one bottom-up 3x3 per level and one fusion conv
    let bu_convs: usize = count_params(PyramidKind::BottomUp, &retina)?
        .groups
        .iter()
        .find(|g| g.name == "bottom-up convs")
        .map(|g| g.count)
        .unwrap_or(0);
    let mixture = td + bu_convs + fuse_conv;

    let rows: [(&str, usize, f64, &str); 5] = [
        ("plain top-down (baseline)", baseline, 8.00, "laterals + per-level 3x3 convs + strided extras"),
        ("top-down + learned context proj", td, 8.52, "adds a coarse-level 1x1 projection (2048->256)"),
        ("bottom-up, same accounting", bu, 8.52, "convolution-for-convolution identical to top-down"),
        ("fusing-splitting: extras + one fuse conv", fs, 6.49, "no laterals counted; single 512->256 3x3"),
        ("mixture: top-down total + new convs", mixture, 11.47, "adds per-level bottom-up convs and one fuse conv"),
    ];
    let mut out = String::new();
    out.push_str("reconciliation of computed parameter totals vs reference millions\n");
    out.push_str("(levels 3-7, width 256, backbone channels 512/1024/2048)\n\n");
    out.push_str(&format!(
        "  {:<42} {:>12} {:>10} {:>8}\n",
        "accounting hypothesis", "computed", "reference", "delta"
    ));
    for (label, computed, reference, note) in rows {
        let delta = computed as f64 / 1e6 - reference;
        out.push_str(&format!(
            "  {:<42} {:>12} {:>9.2}M {:>+7.3}%\n",
            label,
            computed,
            reference,
            100.0 * delta / reference
        ));
        out.push_str(&format!("    {note}\n"));
    }
    out.push_str(
        "\nreading: all five reference totals are reproduced to within 0.05% once the\n\
         coarsest-level global context is counted as a learned 1x1 projection and the\n\
         standalone fusing-splitting row is counted without laterals. This build keeps\n\
         the context add parameter-free, so its own top-down total equals the baseline.\n",
    );
    Ok(out)
}

// ---------------------------------------------------------------------------
// Information-flow matrices
// ---------------------------------------------------------------------------

/// Gradient-probed sensitivity of each output level to each backbone level.
#[derive(Clone, Debug)]
pub struct FlowMatrix {
    pub kind: PyramidKind,
    pub min_level: usize,
    /// `entries[i][j]`: max-abs gradient of the squared norm of output level
    /// `min_level + i` with respect to backbone level `min_level + j`.
    pub entries: Vec<Vec<f64>>,
    pub threshold: f64,
}

impl FlowMatrix {
    pub fn pattern(&self) -> Vec<Vec<bool>> {
        self.entries
            .iter()
            .map(|row| row.iter().map(|&v| v > self.threshold).collect())
            .collect()
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "flow matrix: {} (threshold {:.0e})\n",
            self.kind, self.threshold
        ));
        out.push_str("  output \\ backbone");
        for j in 0..self.entries.len() {
            out.push_str(&format!("  C{}", self.min_level + j));
        }
        out.push('\n');
        let pattern = self.pattern();
        for (i, row) in self.entries.iter().enumerate() {
            out.push_str(&format!("  F{}              ", self.min_level + i));
            for (j, &v) in row.iter().enumerate() {
                let mark = if pattern[i][j] { '+' } else { '.' };
                out.push_str(&format!("  {mark}{v:7.1e}"));
            }
            out.push('\n');
        }
        out
    }
}

/// The reachability masks each builder is expected to show, index 0 = finest
/// level. Top-down: coarser-or-equal backbone levels only. Bottom-up: levels
/// up to one above the output. Fusing-splitting and the mixture: everything.
pub fn analytic_flow_mask(kind: PyramidKind, num_levels: usize) -> Vec<Vec<bool>> {
    let n = num_levels;
    (0..n)
        .map(|i| {
            (0..n)
                .map(|j| match kind {
                    PyramidKind::TopDown => j >= i,
                    PyramidKind::BottomUp => j <= (i + 1).min(n - 1),
                    PyramidKind::FusingSplitting | PyramidKind::Mfpn => true,
                })
                .collect()
        })
        .collect()
}

/// Probe the flow pattern: random backbone features and Glorot weights
/// (biases zero) from `seed`, one fresh graph per output level, gradient of
/// the squared output norm taken at every backbone leaf.
pub fn flow_matrix(kind: PyramidKind, cfg: &FpnConfig, seed: u64) -> Result<FlowMatrix> {
    cfg.validate()?;
    let n = cfg.num_levels();
    let store = WeightStore::from_layout(&pyramid_layout(kind, cfg), seed);
    let mut feat_rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6f77_1234_abcd_0001);
    let finest = 2 * (1 << n);
    let feat_values: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            let side = finest >> i;
            let numel = cfg.backbone_channels[i] * side * side;
            (0..numel).map(|_| feat_rng.gen_range(-1.0..1.0)).collect()
        })
        .collect();

    let mut entries = vec![vec![0.0; n]; n];
    for i in 0..n {
        let mut g = Graph::new();
        let maps: Vec<Tensor> = (0..n)
            .map(|j| {
                let side = finest >> j;
                g.leaf(
                    Shape::new(1, cfg.backbone_channels[j], side, side),
                    feat_values[j].clone(),
                )
            })
            .collect::<Result<_>>()?;
        let feats = BackboneFeatures {
            min_level: cfg.min_level,
            maps: maps.clone(),
        };
        let set = build(&mut g, &store, cfg, kind, &feats)?;
        let loss = g.sum_squares(set.maps[i])?;
        g.backward(loss)?;
        for (j, &leaf) in maps.iter().enumerate() {
            entries[i][j] = g
                .grad(leaf)
                .map(|gr| gr.iter().fold(0.0, |m, v| v.abs().max(m)))
                .unwrap_or(0.0);
        }
    }
    Ok(FlowMatrix {
        kind,
        min_level: cfg.min_level,
        entries,
        threshold: 1e-12,
    })
}

// ---------------------------------------------------------------------------
// Gradient checking
// ---------------------------------------------------------------------------

/// Per-parameter result of a gradient check.
#[derive(Clone, Debug)]
pub struct GradRow {
    pub name: String,
    pub max_rel_err: f64,
}

/// Outcome of comparing analytic gradients against finite differences.
#[derive(Clone, Debug)]
pub struct GradReport {
    pub rows: Vec<GradRow>,
    pub max_rel_err: f64,
    pub tolerance: f64,
    pub pass: bool,
}

impl GradReport {
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for r in &self.rows {
            out.push_str(&format!("  {:<24} max rel err {:.3e}\n", r.name, r.max_rel_err));
        }
        out.push_str(&format!(
            "  overall max rel err {:.3e} vs tolerance {:.0e}: {}\n",
            self.max_rel_err,
            self.tolerance,
            if self.pass { "pass" } else { "FAIL" }
        ));
        out
    }
}

/// Gradient map keyed by parameter name.
pub type GradMap = BTreeMap<String, Vec<f64>>;

/// Build the scalar loss once and read every parameter gradient off the
/// graph. `build_loss` must bind its parameters from the store by name.
pub fn analytic_grads<F>(store: &WeightStore, build_loss: F) -> Result<GradMap>
where
    F: Fn(&WeightStore, &mut Graph) -> Result<Tensor>,
{
    let mut g = Graph::new();
    let loss = build_loss(store, &mut g)?;
    g.backward(loss)?;
    let mut out = GradMap::new();
    for (name, grad) in g.param_grads() {
        match out.get_mut(name) {
            Some(acc) => {
                for (a, v) in acc.iter_mut().zip(grad) {
                    *a += *v;
                }
            }
            None => {
                out.insert(name.to_string(), grad.to_vec());
            }
        }
    }
    Ok(out)
}

/// Central finite differences over every stored parameter value, rebuilding
/// the graph for each perturbation.
pub fn numeric_grads<F>(store: &WeightStore, build_loss: F, h: f64) -> Result<GradMap>
where
    F: Fn(&WeightStore, &mut Graph) -> Result<Tensor>,
{
    let eval = |s: &WeightStore| -> Result<f64> {
        let mut g = Graph::new();
        let loss = build_loss(s, &mut g)?;
        if !loss.shape().is_scalar() {
            return Err(Error::NonScalarLoss(loss.shape().to_string()));
        }
        Ok(g.values(loss)[0])
    };
    let mut work = store.clone();
    let names: Vec<String> = store.names().map(str::to_string).collect();
    let mut out = GradMap::new();
    for name in names {
        let len = store.get(&name).unwrap().values.len();
        let mut grad = vec![0.0; len];
        for i in 0..len {
            let orig = work.get(&name).unwrap().values[i];
            work.get_mut(&name).unwrap().values[i] = orig + h;
            let fp = eval(&work)?;
            work.get_mut(&name).unwrap().values[i] = orig - h;
            let fm = eval(&work)?;
            work.get_mut(&name).unwrap().values[i] = orig;
            grad[i] = (fp - fm) / (2.0 * h);
        }
        out.insert(name, grad);
    }
    Ok(out)
}

/// Relative error per parameter: `|a - n| / max(|a| + |n|, 1)`.
pub fn compare_grads(analytic: &GradMap, numeric: &GradMap, tolerance: f64) -> GradReport {
    let mut rows = Vec::new();
    let mut overall: f64 = 0.0;
    for (name, num) in numeric {
        let zero;
        let ana = match analytic.get(name) {
            Some(a) => a,
            None => {
                // parameter never touched the loss: analytic gradient is zero
                zero = vec![0.0; num.len()];
                &zero
            }
        };
        let mut max_rel: f64 = 0.0;
        for (a, n) in ana.iter().zip(num) {
            let rel = (a - n).abs() / (a.abs() + n.abs()).max(1.0);
            max_rel = max_rel.max(rel);
        }
        overall = overall.max(max_rel);
        rows.push(GradRow {
            name: name.clone(),
            max_rel_err: max_rel,
        });
    }
    GradReport {
        rows,
        max_rel_err: overall,
        tolerance,
        pass: overall < tolerance,
    }
}

/// Full pipeline: analytic pass, finite-difference pass, comparison.
pub fn grad_check<F>(store: &WeightStore, build_loss: F, tolerance: f64) -> Result<GradReport>
where
    F: Fn(&WeightStore, &mut Graph) -> Result<Tensor>,
{
    let analytic = analytic_grads(store, &build_loss)?;
    let numeric = numeric_grads(store, &build_loss, 1e-5)?;
    Ok(compare_grads(&analytic, &numeric, tolerance))
}

// ---------------------------------------------------------------------------
// Gradient-check suites
// ---------------------------------------------------------------------------

type LossBuilder = Box<dyn Fn(&WeightStore, &mut Graph) -> Result<Tensor>>;

fn input_store(seed: u64, entries: &[(&str, [usize; 4])]) -> WeightStore {
    let mut store = WeightStore::new();
    for (name, dims) in entries {
        store.insert_zeros(name, dims);
    }
    store.init_glorot(seed);
    store
}

/// Finite-difference check for every tensor operation, each through a tiny
/// dedicated loss. Returns one named report per operation.
pub fn op_gradcheck_suite(seed: u64, tolerance: f64) -> Result<Vec<(String, GradReport)>> {
    let mut cases: Vec<(&str, WeightStore, LossBuilder)> = Vec::new();

    cases.push((
        "conv2d.k1",
        input_store(seed, &[("x", [1, 2, 6, 6]), ("w", [3, 2, 1, 1]), ("b", [1, 3, 1, 1])]),
        Box::new(|s, g| {
            let x = s.tensor(g, "x")?;
            let w = s.tensor(g, "w")?;
            let b = s.tensor(g, "b")?;
            let y = g.conv2d(x, w, b)?;
            g.sum_squares(y)
        }),
    ));
    cases.push((
        "conv2d.k3",
        input_store(seed, &[("x", [2, 2, 5, 5]), ("w", [2, 2, 3, 3]), ("b", [1, 2, 1, 1])]),
        Box::new(|s, g| {
            let x = s.tensor(g, "x")?;
            let w = s.tensor(g, "w")?;
            let b = s.tensor(g, "b")?;
            let y = g.conv2d(x, w, b)?;
            g.sum_squares(y)
        }),
    ));
    cases.push((
        "upsample_nearest_x2",
        input_store(seed, &[("x", [1, 2, 4, 4])]),
        Box::new(|s, g| {
            let x = s.tensor(g, "x")?;
            let y = g.upsample_nearest_x2(x)?;
            g.sum_squares(y)
        }),
    ));
    cases.push((
        "maxpool_2x2",
        input_store(seed, &[("x", [1, 2, 6, 6])]),
        Box::new(|s, g| {
            let x = s.tensor(g, "x")?;
            let y = g.maxpool_2x2(x)?;
            g.sum_squares(y)
        }),
    ));
    cases.push((
        "global_avg_pool",
        input_store(seed, &[("x", [1, 3, 4, 4])]),
        Box::new(|s, g| {
            let x = s.tensor(g, "x")?;
            let y = g.global_avg_pool(x)?;
            g.sum_squares(y)
        }),
    ));
    cases.push((
        "add.broadcast",
        input_store(seed, &[("x", [1, 2, 4, 4]), ("y", [1, 2, 4, 4]), ("v", [1, 2, 1, 1])]),
        Box::new(|s, g| {
            let x = s.tensor(g, "x")?;
            let y = s.tensor(g, "y")?;
            let v = s.tensor(g, "v")?;
            let z = g.add(&[x, y, v])?;
            g.sum_squares(z)
        }),
    ));
    cases.push((
        "concat_channels",
        input_store(seed, &[("a", [1, 2, 4, 4]), ("b", [1, 3, 4, 4])]),
        Box::new(|s, g| {
            let a = s.tensor(g, "a")?;
            let b = s.tensor(g, "b")?;
            let y = g.concat_channels(a, b)?;
            g.sum_squares(y)
        }),
    ));
    cases.push((
        "sum",
        input_store(seed, &[("x", [1, 2, 4, 4])]),
        Box::new(|s, g| {
            let x = s.tensor(g, "x")?;
            g.sum(x)
        }),
    ));
    cases.push((
        "sum_squares",
        input_store(seed, &[("x", [1, 2, 4, 4])]),
        Box::new(|s, g| {
            let x = s.tensor(g, "x")?;
            g.sum_squares(x)
        }),
    ));
    cases.push((
        "scale",
        input_store(seed, &[("x", [1, 2, 4, 4])]),
        Box::new(|s, g| {
            let x = s.tensor(g, "x")?;
            let y = g.scale(x, -1.75)?;
            g.sum_squares(y)
        }),
    ));
    cases.push((
        "sigmoid",
        input_store(seed, &[("x", [1, 2, 4, 4])]),
        Box::new(|s, g| {
            let x = s.tensor(g, "x")?;
            let y = g.sigmoid(x)?;
            g.sum_squares(y)
        }),
    ));
    cases.push((
        "weighted_bce",
        input_store(seed, &[("x", [1, 1, 4, 4])]),
        Box::new(|s, g| {
            let x = s.tensor(g, "x")?;
            let p = g.sigmoid(x)?;
            let target: Vec<f64> = (0..16).map(|i| ((i * 5 + 3) % 11) as f64 / 10.0).collect();
            let weight: Vec<f64> = (0..16).map(|i| 1.0 + (i % 3) as f64).collect();
            g.weighted_bce(p, &target, &weight, 16.0)
        }),
    ));

    let mut out = Vec::new();
    for (name, store, build_loss) in cases {
        let report = grad_check(&store, build_loss, tolerance)?;
        out.push((name.to_string(), report));
    }
    Ok(out)
}

/// Finite-difference check through every pyramid builder, treating the
/// backbone features themselves as parameters alongside the weights. The
/// loss engages every output level.
pub fn builder_gradcheck_suite(seed: u64, tolerance: f64) -> Result<Vec<(String, GradReport)>> {
    let cfg = FpnConfig::new(2, 5, 2, &[2, 2, 2, 2], 0)?;
    let mut out = Vec::new();
    for kind in PyramidKind::ALL {
        let mut entries: Vec<(String, Vec<usize>)> = (0..cfg.num_levels())
            .map(|i| {
                let side = 8 >> i;
                (
                    format!("input.{}", cfg.min_level + i),
                    vec![1, cfg.backbone_channels[i], side, side],
                )
            })
            .collect();
        for spec in pyramid_layout(kind, &cfg) {
            entries.push((spec.name, spec.dims));
        }
        let mut store = WeightStore::new();
        for (name, dims) in &entries {
            store.insert_zeros(name, dims);
        }
        store.init_glorot(seed);

        let cfg2 = cfg.clone();
        let build_loss = move |s: &WeightStore, g: &mut Graph| -> Result<Tensor> {
            let maps = cfg2
                .levels()
                .map(|level| s.tensor(g, &format!("input.{level}")))
                .collect::<Result<Vec<_>>>()?;
            let feats = BackboneFeatures {
                min_level: cfg2.min_level,
                maps,
            };
            let set = build(g, s, &cfg2, kind, &feats)?;
            let norms = set
                .maps
                .iter()
                .map(|&t| g.sum_squares(t))
                .collect::<Result<Vec<_>>>()?;
            g.add(&norms)
        };
        let report = grad_check(&store, build_loss, tolerance)?;
        out.push((format!("builder.{kind}"), report));
    }
    Ok(out)
}

/// Finite-difference check of the full task stack: toy backbone, mixture
/// pyramid, shared head, and the weighted cross-entropy loss, on a 32x32
/// image.
pub fn composite_gradcheck(seed: u64, tolerance: f64) -> Result<GradReport> {
    use crate::backbone::{backbone_forward, backbone_layout};
    use crate::training::{head_forward, head_layout};

    let cfg = FpnConfig::new(2, 5, 2, &[2, 2, 2, 2], 0)?;
    let mut store = WeightStore::new();
    for spec in backbone_layout(&cfg, 1)
        .into_iter()
        .chain(pyramid_layout(PyramidKind::Mfpn, &cfg))
        .chain(head_layout(cfg.channels))
    {
        store.insert_zeros(&spec.name, &spec.dims);
    }
    store.init_glorot(seed);

    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x1a2b_3c4d_5e6f_7081);
    let image: Vec<f64> = (0..32 * 32).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let cfg2 = cfg.clone();
    let build_loss = move |s: &WeightStore, g: &mut Graph| -> Result<Tensor> {
        let img = g.leaf(Shape::new(1, 1, 32, 32), image.clone())?;
        let feats = backbone_forward(g, s, &cfg2, img)?;
        let set = build(g, s, &cfg2, PyramidKind::Mfpn, &feats)?;
        let preds = head_forward(g, s, &set)?;
        let total: usize = preds.iter().map(|(_, p)| p.shape().numel()).sum();
        let terms = preds
            .iter()
            .map(|&(level, p)| {
                let n = p.shape().numel();
                let target: Vec<f64> = (0..n)
                    .map(|i| ((i * 7 + level) % 10) as f64 / 10.0)
                    .collect();
                let weight = vec![1.0; n];
                g.weighted_bce(p, &target, &weight, total as f64)
            })
            .collect::<Result<Vec<_>>>()?;
        g.add(&terms)
    };
    grad_check(&store, build_loss, tolerance)
}

// ---------------------------------------------------------------------------
// Heatmap export
// ---------------------------------------------------------------------------

/// Collapse a feature map to a single plane: mean of absolute activations
/// over batch and channels.
pub fn heatmap_reduce(g: &Graph, t: Tensor) -> (usize, usize, Vec<f64>) {
    let s = t.shape();
    let vals = g.values(t);
    let hw = s.h * s.w;
    let mut out = vec![0.0; hw];
    for plane in 0..s.n * s.c {
        for (o, v) in out.iter_mut().zip(&vals[plane * hw..(plane + 1) * hw]) {
            *o += v.abs();
        }
    }
    let denom = (s.n * s.c) as f64;
    for o in &mut out {
        *o /= denom;
    }
    (s.h, s.w, out)
}

/// Min-max normalize to bytes 0-255. A constant plane maps to all zeros (the
/// documented degenerate-normalization convention).
pub fn normalize_to_bytes(vals: &[f64]) -> Vec<u8> {
    let min = vals.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !(max > min) {
        return vec![0; vals.len()];
    }
    let range = max - min;
    vals.iter()
        .map(|v| (255.0 * (v - min) / range).round() as u8)
        .collect()
}

/// Binary PGM (P5, maxval 255).
pub fn write_pgm(path: &Path, w: usize, h: usize, bytes: &[u8]) -> Result<()> {
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    out.extend_from_slice(bytes);
    std::fs::write(path, out)?;
    Ok(())
}

/// CSV of the raw (pre-normalization) plane, header `level,y,x,value`,
/// row-major. Values print in shortest round-trip form.
pub fn heatmap_csv(level: usize, h: usize, w: usize, vals: &[f64]) -> String {
    let mut out = String::from("level,y,x,value\n");
    for y in 0..h {
        for x in 0..w {
            out.push_str(&format!("{},{},{},{}\n", level, y, x, vals[y * w + x]));
        }
    }
    out
}

/// Write one PGM + CSV pair per pyramid level, named
/// `{prefix}_L{level}.pgm` / `{prefix}_L{level}.csv`. Returns the paths.
pub fn export_heatmap(
    g: &Graph,
    set: &PyramidSet,
    dir: &Path,
    prefix: &str,
) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let mut out = Vec::new();
    for (level, t) in set.levels() {
        let (h, w, vals) = heatmap_reduce(g, t);
        let pgm = dir.join(format!("{prefix}_L{level}.pgm"));
        write_pgm(&pgm, w, h, &normalize_to_bytes(&vals))?;
        let csv = dir.join(format!("{prefix}_L{level}.csv"));
        std::fs::write(&csv, heatmap_csv(level, h, w, &vals))?;
        out.push(pgm);
        out.push(csv);
    }
    Ok(out)
}
