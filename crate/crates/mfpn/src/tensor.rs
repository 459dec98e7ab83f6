//! Dense rank-4 tensors with reverse-mode differentiation.
//!
//! Values are 64-bit floats in row-major `(n, c, h, w)` order. A [`Graph`]
//! records every operation as it is built; [`Graph::backward`] replays the
//! records in reverse and accumulates gradients into each node. Tensors are
//! lightweight handles into one graph; using a handle with a different graph
//! is an error.

use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Error, Result};

/// Rank-4 shape `(batch, channels, rows, cols)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Shape {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape {
    pub fn new(n: usize, c: usize, h: usize, w: usize) -> Shape {
        Shape { n, c, h, w }
    }

    pub fn numel(&self) -> usize {
        self.n * self.c * self.h * self.w
    }

    /// Flat index of element `(n, c, y, x)`.
    #[inline]
    pub fn at(&self, n: usize, c: usize, y: usize, x: usize) -> usize {
        ((n * self.c + c) * self.h + y) * self.w + x
    }

    pub fn is_scalar(&self) -> bool {
        self.numel() == 1
    }
}

impl std::fmt::Display for Shape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "({},{},{},{})", self.n, self.c, self.h, self.w)
    }
}

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug)]
pub struct Tensor {
    graph: u64,
    node: usize,
    shape: Shape,
}

impl Tensor {
    pub fn shape(&self) -> Shape {
        self.shape
    }
}

enum Op {
    Leaf { param: Option<String> },
    Conv2d { x: usize, w: usize, b: usize, kernel: usize },
    Upsample2 { x: usize },
    MaxPool2 { x: usize, argmax: Vec<usize> },
    GlobalAvgPool { x: usize },
    Add { xs: Vec<usize> },
    ConcatChannels { a: usize, b: usize },
    SumAll { x: usize },
    SumSquares { x: usize },
    Scale { x: usize, k: f64 },
    Sigmoid { x: usize },
    WeightedBce { pred: usize, target: Vec<f64>, weight: Vec<f64>, denom: f64 },
}

struct Node {
    shape: Shape,
    values: Vec<f64>,
    grad: Option<Vec<f64>>,
    op: Op,
}

static NEXT_GRAPH_ID: AtomicU64 = AtomicU64::new(1);

/// A differentiation graph: append-only list of operation records in
/// topological order.
pub struct Graph {
    id: u64,
    nodes: Vec<Node>,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

impl Graph {
    pub fn new() -> Graph {
        Graph {
            id: NEXT_GRAPH_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
        }
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    fn push(&mut self, shape: Shape, values: Vec<f64>, op: Op) -> Tensor {
        debug_assert_eq!(values.len(), shape.numel());
        let node = self.nodes.len();
        self.nodes.push(Node {
            shape,
            values,
            grad: None,
            op,
        });
        Tensor {
            graph: self.id,
            node,
            shape,
        }
    }

    fn check(&self, t: Tensor) -> Result<()> {
        if t.graph != self.id || t.node >= self.nodes.len() {
            return Err(Error::GraphMismatch);
        }
        Ok(())
    }

    /// New leaf tensor holding `values`.
    pub fn leaf(&mut self, shape: Shape, values: Vec<f64>) -> Result<Tensor> {
        self.named(None, shape, values)
    }

    /// Leaf carrying a parameter name, so its gradient can be collected back
    /// into a weight store after `backward`.
    pub fn named_leaf(&mut self, name: &str, shape: Shape, values: Vec<f64>) -> Result<Tensor> {
        self.named(Some(name.to_string()), shape, values)
    }

    fn named(&mut self, param: Option<String>, shape: Shape, values: Vec<f64>) -> Result<Tensor> {
        if shape.n == 0 || shape.c == 0 || shape.h == 0 || shape.w == 0 {
            return Err(Error::Shape(format!("zero-sized dimension in {shape}")));
        }
        if values.len() != shape.numel() {
            return Err(Error::Shape(format!(
                "{} values for shape {shape} ({} expected)",
                values.len(),
                shape.numel()
            )));
        }
        Ok(self.push(shape, values, Op::Leaf { param }))
    }

    /// Leaf filled with a constant.
    pub fn fill(&mut self, shape: Shape, value: f64) -> Tensor {
        let n = shape.numel();
        self.push(shape, vec![value; n], Op::Leaf { param: None })
    }

    pub fn values(&self, t: Tensor) -> &[f64] {
        assert_eq!(t.graph, self.id, "tensor from a different graph");
        &self.nodes[t.node].values
    }

    /// Accumulated gradient of `t`, if any backward pass reached it.
    pub fn grad(&self, t: Tensor) -> Option<&[f64]> {
        assert_eq!(t.graph, self.id, "tensor from a different graph");
        self.nodes[t.node].grad.as_deref()
    }

    /// Named leaves and their accumulated gradients.
    pub fn param_grads(&self) -> impl Iterator<Item = (&str, &[f64])> {
        self.nodes.iter().filter_map(|n| match (&n.op, &n.grad) {
            (Op::Leaf { param: Some(name) }, Some(g)) => Some((name.as_str(), g.as_slice())),
            _ => None,
        })
    }

    /// 2D convolution, stride 1. Kernel 1 uses no padding, kernel 3 uses
    /// zero padding 1; spatial size is preserved either way. `w` has shape
    /// `(c_out, c_in, k, k)` and `b` has shape `(1, c_out, 1, 1)`.
    pub fn conv2d(&mut self, x: Tensor, w: Tensor, b: Tensor) -> Result<Tensor> {
        self.check(x)?;
        self.check(w)?;
        self.check(b)?;
        let (xs, ws, bs) = (x.shape, w.shape, b.shape);
        let kernel = ws.h;
        if ws.w != kernel || (kernel != 1 && kernel != 3) {
            return Err(Error::KernelSize(ws.h.max(ws.w)));
        }
        if ws.c != xs.c {
            return Err(Error::ChannelMismatch {
                input: xs.c,
                expected: ws.c,
            });
        }
        let c_out = ws.n;
        if bs != Shape::new(1, c_out, 1, 1) {
            return Err(Error::Shape(format!(
                "bias shape {bs} does not match (1,{c_out},1,1)"
            )));
        }
        let out_shape = Shape::new(xs.n, c_out, xs.h, xs.w);
        let mut out = vec![0.0; out_shape.numel()];
        conv2d_forward(
            &self.nodes[x.node].values,
            xs,
            &self.nodes[w.node].values,
            c_out,
            kernel,
            &self.nodes[b.node].values,
            &mut out,
        );
        Ok(self.push(
            out_shape,
            out,
            Op::Conv2d {
                x: x.node,
                w: w.node,
                b: b.node,
                kernel,
            },
        ))
    }

    /// Nearest-neighbour upsampling by 2: each cell becomes a 2x2 block.
    pub fn upsample_nearest_x2(&mut self, x: Tensor) -> Result<Tensor> {
        self.check(x)?;
        let s = x.shape;
        let out_shape = Shape::new(s.n, s.c, 2 * s.h, 2 * s.w);
        let src = &self.nodes[x.node].values;
        let mut out = vec![0.0; out_shape.numel()];
        for plane in 0..s.n * s.c {
            let sb = plane * s.h * s.w;
            let ob = plane * out_shape.h * out_shape.w;
            for y in 0..s.h {
                let row = &src[sb + y * s.w..sb + (y + 1) * s.w];
                for (x_i, &v) in row.iter().enumerate() {
                    let o = ob + 2 * y * out_shape.w + 2 * x_i;
                    out[o] = v;
                    out[o + 1] = v;
                    out[o + out_shape.w] = v;
                    out[o + out_shape.w + 1] = v;
                }
            }
        }
        Ok(self.push(out_shape, out, Op::Upsample2 { x: x.node }))
    }

    /// 2x2 max-pool, stride 2. Gradient flows to the first (row-major)
    /// maximal cell of each window.
    pub fn maxpool_2x2(&mut self, x: Tensor) -> Result<Tensor> {
        self.check(x)?;
        let s = x.shape;
        if s.h % 2 != 0 || s.w % 2 != 0 {
            return Err(Error::OddSpatial { h: s.h, w: s.w });
        }
        let out_shape = Shape::new(s.n, s.c, s.h / 2, s.w / 2);
        let src = &self.nodes[x.node].values;
        let mut out = vec![0.0; out_shape.numel()];
        let mut argmax = vec![0usize; out_shape.numel()];
        let mut o = 0;
        for plane in 0..s.n * s.c {
            let sb = plane * s.h * s.w;
            for y in 0..out_shape.h {
                for x_i in 0..out_shape.w {
                    let base = sb + 2 * y * s.w + 2 * x_i;
                    let mut best = base;
                    for &cand in &[base + 1, base + s.w, base + s.w + 1] {
                        if src[cand] > src[best] {
                            best = cand;
                        }
                    }
                    out[o] = src[best];
                    argmax[o] = best;
                    o += 1;
                }
            }
        }
        Ok(self.push(out_shape, out, Op::MaxPool2 { x: x.node, argmax }))
    }

    /// Mean over the spatial grid, per (batch, channel): output is `(n,c,1,1)`.
    pub fn global_avg_pool(&mut self, x: Tensor) -> Result<Tensor> {
        self.check(x)?;
        let s = x.shape;
        let out_shape = Shape::new(s.n, s.c, 1, 1);
        let src = &self.nodes[x.node].values;
        let hw = s.h * s.w;
        let out: Vec<f64> = (0..s.n * s.c)
            .map(|plane| src[plane * hw..(plane + 1) * hw].iter().sum::<f64>() / hw as f64)
            .collect();
        Ok(self.push(out_shape, out, Op::GlobalAvgPool { x: x.node }))
    }

    /// Elementwise sum of the operands. An operand shaped `(n,c,1,1)` is
    /// broadcast over the spatial grid of the others.
    pub fn add(&mut self, xs: &[Tensor]) -> Result<Tensor> {
        if xs.is_empty() {
            return Err(Error::Shape("add of zero tensors".into()));
        }
        for &t in xs {
            self.check(t)?;
        }
        let (n, c) = (xs[0].shape.n, xs[0].shape.c);
        let mut h = 1;
        let mut w = 1;
        for t in xs {
            let s = t.shape;
            if s.n != n || s.c != c {
                return Err(Error::Shape(format!(
                    "add operands disagree: {} vs {}",
                    xs[0].shape, s
                )));
            }
            if s.h != 1 || s.w != 1 {
                if (h, w) != (1, 1) && (s.h, s.w) != (h, w) {
                    return Err(Error::Shape(format!(
                        "add operands disagree: ({n},{c},{h},{w}) vs {s}"
                    )));
                }
                h = s.h;
                w = s.w;
            }
        }
        let out_shape = Shape::new(n, c, h, w);
        let mut out = vec![0.0; out_shape.numel()];
        for t in xs {
            let src = &self.nodes[t.node].values;
            if (t.shape.h, t.shape.w) == (h, w) {
                for (o, s) in out.iter_mut().zip(src) {
                    *o += *s;
                }
            } else {
                // (n,c,1,1) broadcast over the spatial grid
                let hw = h * w;
                for plane in 0..n * c {
                    let v = src[plane];
                    for o in &mut out[plane * hw..(plane + 1) * hw] {
                        *o += v;
                    }
                }
            }
        }
        Ok(self.push(
            out_shape,
            out,
            Op::Add {
                xs: xs.iter().map(|t| t.node).collect(),
            },
        ))
    }

    /// Concatenation along the channel axis, `a`'s channels first.
    pub fn concat_channels(&mut self, a: Tensor, b: Tensor) -> Result<Tensor> {
        self.check(a)?;
        self.check(b)?;
        let (sa, sb) = (a.shape, b.shape);
        if sa.n != sb.n || sa.h != sb.h || sa.w != sb.w {
            return Err(Error::Shape(format!("concat of {sa} with {sb}")));
        }
        let out_shape = Shape::new(sa.n, sa.c + sb.c, sa.h, sa.w);
        let hw = sa.h * sa.w;
        let (va, vb) = (&self.nodes[a.node].values, &self.nodes[b.node].values);
        let mut out = Vec::with_capacity(out_shape.numel());
        for n in 0..sa.n {
            out.extend_from_slice(&va[n * sa.c * hw..(n + 1) * sa.c * hw]);
            out.extend_from_slice(&vb[n * sb.c * hw..(n + 1) * sb.c * hw]);
        }
        Ok(self.push(
            out_shape,
            out,
            Op::ConcatChannels {
                a: a.node,
                b: b.node,
            },
        ))
    }

    /// Sum of all elements, as a scalar-shaped tensor.
    pub fn sum(&mut self, x: Tensor) -> Result<Tensor> {
        self.check(x)?;
        let total: f64 = self.nodes[x.node].values.iter().sum();
        Ok(self.push(Shape::new(1, 1, 1, 1), vec![total], Op::SumAll { x: x.node }))
    }

    /// Sum of squared elements (the squared Frobenius norm), as a scalar.
    pub fn sum_squares(&mut self, x: Tensor) -> Result<Tensor> {
        self.check(x)?;
        let total: f64 = self.nodes[x.node].values.iter().map(|v| v * v).sum();
        Ok(self.push(
            Shape::new(1, 1, 1, 1),
            vec![total],
            Op::SumSquares { x: x.node },
        ))
    }

    /// Multiply every element by a constant.
    pub fn scale(&mut self, x: Tensor, k: f64) -> Result<Tensor> {
        self.check(x)?;
        let out = self.nodes[x.node].values.iter().map(|v| k * v).collect();
        Ok(self.push(x.shape, out, Op::Scale { x: x.node, k }))
    }

    /// Elementwise logistic function.
    pub fn sigmoid(&mut self, x: Tensor) -> Result<Tensor> {
        self.check(x)?;
        let out = self.nodes[x.node].values.iter().map(|v| sigmoid(*v)).collect();
        Ok(self.push(x.shape, out, Op::Sigmoid { x: x.node }))
    }

    /// Per-cell weighted binary cross-entropy against a fixed target map,
    /// summed over cells and divided by `denom`. `pred` must hold
    /// probabilities; they are clamped to `[1e-12, 1-1e-12]` before the logs.
    pub fn weighted_bce(
        &mut self,
        pred: Tensor,
        target: &[f64],
        weight: &[f64],
        denom: f64,
    ) -> Result<Tensor> {
        self.check(pred)?;
        let n = pred.shape.numel();
        if target.len() != n || weight.len() != n {
            return Err(Error::Shape(format!(
                "bce target/weight length {}/{} vs {} cells",
                target.len(),
                weight.len(),
                n
            )));
        }
        if let Some(&t) = target.iter().find(|t| !(0.0..=1.0).contains(*t)) {
            return Err(Error::TargetRange(t));
        }
        let mut total = 0.0;
        for ((&p, &t), &w) in self.nodes[pred.node].values.iter().zip(target).zip(weight) {
            let p = clamp_prob(p);
            total += w * (-t * p.ln() - (1.0 - t) * (1.0 - p).ln());
        }
        Ok(self.push(
            Shape::new(1, 1, 1, 1),
            vec![total / denom],
            Op::WeightedBce {
                pred: pred.node,
                target: target.to_vec(),
                weight: weight.to_vec(),
                denom,
            },
        ))
    }

    /// Reverse-mode pass from a scalar loss. Gradients accumulate into each
    /// node; calling twice without a fresh graph doubles them.
    pub fn backward(&mut self, loss: Tensor) -> Result<()> {
        self.check(loss)?;
        if !loss.shape.is_scalar() {
            return Err(Error::NonScalarLoss(loss.shape.to_string()));
        }
        // Adjoints for this pass only; accumulated into node grads at the end.
        let mut adj: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        adj[loss.node] = Some(vec![1.0]);
        for id in (0..=loss.node).rev() {
            let Some(g) = adj[id].take() else { continue };
            self.backprop_node(id, &g, &mut adj);
            match &mut self.nodes[id].grad {
                Some(acc) => {
                    for (a, gi) in acc.iter_mut().zip(&g) {
                        *a += *gi;
                    }
                }
                slot => *slot = Some(g),
            }
        }
        Ok(())
    }

    fn backprop_node(&self, id: usize, g: &[f64], adj: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[id];
        match &node.op {
            Op::Leaf { .. } => {}
            Op::Conv2d { x, w, b, kernel } => {
                let xs = self.nodes[*x].shape;
                let c_out = self.nodes[*w].shape.n;
                {
                    let gb = grad_slot(adj, *b, &self.nodes[*b]);
                    conv2d_backward_bias(g, xs.n, c_out, xs.h * xs.w, gb);
                }
                {
                    let xv = &self.nodes[*x].values;
                    let gw = grad_slot(adj, *w, &self.nodes[*w]);
                    conv2d_backward_weight(g, xv, xs, c_out, *kernel, gw);
                }
                {
                    let wv = &self.nodes[*w].values;
                    let gx = grad_slot(adj, *x, &self.nodes[*x]);
                    conv2d_backward_input(g, wv, xs, c_out, *kernel, gx);
                }
            }
            Op::Upsample2 { x } => {
                let s = self.nodes[*x].shape;
                let gx = grad_slot(adj, *x, &self.nodes[*x]);
                let ow = 2 * s.w;
                for plane in 0..s.n * s.c {
                    let sb = plane * s.h * s.w;
                    let ob = plane * 4 * s.h * s.w;
                    for y in 0..s.h {
                        for x_i in 0..s.w {
                            let o = ob + 2 * y * ow + 2 * x_i;
                            gx[sb + y * s.w + x_i] += g[o] + g[o + 1] + g[o + ow] + g[o + ow + 1];
                        }
                    }
                }
            }
            Op::MaxPool2 { x, argmax } => {
                let gx = grad_slot(adj, *x, &self.nodes[*x]);
                for (o, &src) in argmax.iter().enumerate() {
                    gx[src] += g[o];
                }
            }
            Op::GlobalAvgPool { x } => {
                let s = self.nodes[*x].shape;
                let hw = s.h * s.w;
                let gx = grad_slot(adj, *x, &self.nodes[*x]);
                for plane in 0..s.n * s.c {
                    let gv = g[plane] / hw as f64;
                    for e in &mut gx[plane * hw..(plane + 1) * hw] {
                        *e += gv;
                    }
                }
            }
            Op::Add { xs } => {
                let out_shape = node.shape;
                let hw = out_shape.h * out_shape.w;
                for &x in xs {
                    let s = self.nodes[x].shape;
                    let gx = grad_slot(adj, x, &self.nodes[x]);
                    if (s.h, s.w) == (out_shape.h, out_shape.w) {
                        for (e, gi) in gx.iter_mut().zip(g) {
                            *e += *gi;
                        }
                    } else {
                        // broadcast operand: fold the spatial grid back down
                        for plane in 0..s.n * s.c {
                            gx[plane] += g[plane * hw..(plane + 1) * hw].iter().sum::<f64>();
                        }
                    }
                }
            }
            Op::ConcatChannels { a, b } => {
                let (sa, sb) = (self.nodes[*a].shape, self.nodes[*b].shape);
                let hw = sa.h * sa.w;
                {
                    let ga = grad_slot(adj, *a, &self.nodes[*a]);
                    for n in 0..sa.n {
                        let gbase = n * (sa.c + sb.c) * hw;
                        let abase = n * sa.c * hw;
                        for (e, gi) in ga[abase..abase + sa.c * hw]
                            .iter_mut()
                            .zip(&g[gbase..gbase + sa.c * hw])
                        {
                            *e += *gi;
                        }
                    }
                }
                {
                    let gb = grad_slot(adj, *b, &self.nodes[*b]);
                    for n in 0..sb.n {
                        let gbase = n * (sa.c + sb.c) * hw + sa.c * hw;
                        let bbase = n * sb.c * hw;
                        for (e, gi) in gb[bbase..bbase + sb.c * hw]
                            .iter_mut()
                            .zip(&g[gbase..gbase + sb.c * hw])
                        {
                            *e += *gi;
                        }
                    }
                }
            }
            Op::SumAll { x } => {
                let gx = grad_slot(adj, *x, &self.nodes[*x]);
                for e in gx.iter_mut() {
                    *e += g[0];
                }
            }
            Op::SumSquares { x } => {
                let xv = &self.nodes[*x].values;
                let gx = grad_slot(adj, *x, &self.nodes[*x]);
                for (e, v) in gx.iter_mut().zip(xv) {
                    *e += 2.0 * *v * g[0];
                }
            }
            Op::Scale { x, k } => {
                let gx = grad_slot(adj, *x, &self.nodes[*x]);
                for (e, gi) in gx.iter_mut().zip(g) {
                    *e += *k * *gi;
                }
            }
            Op::Sigmoid { x } => {
                let yv = &node.values;
                let gx = grad_slot(adj, *x, &self.nodes[*x]);
                for ((e, y), gi) in gx.iter_mut().zip(yv).zip(g) {
                    *e += *y * (1.0 - *y) * *gi;
                }
            }
            Op::WeightedBce {
                pred,
                target,
                weight,
                denom,
            } => {
                let pv = &self.nodes[*pred].values;
                let gp = grad_slot(adj, *pred, &self.nodes[*pred]);
                for (((e, &p), &t), &w) in gp.iter_mut().zip(pv).zip(target).zip(weight) {
                    let p = clamp_prob(p);
                    *e += g[0] * w * (p - t) / (p * (1.0 - p)) / denom;
                }
            }
        }
    }
}

fn grad_slot<'a>(adj: &'a mut [Option<Vec<f64>>], id: usize, node: &Node) -> &'a mut Vec<f64> {
    adj[id].get_or_insert_with(|| vec![0.0; node.shape.numel()])
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn clamp_prob(p: f64) -> f64 {
    p.clamp(1e-12, 1.0 - 1e-12)
}

fn conv2d_forward(
    x: &[f64],
    xs: Shape,
    w: &[f64],
    c_out: usize,
    k: usize,
    bias: &[f64],
    out: &mut [f64],
) {
    let pad = (k / 2) as isize;
    let (h, wd) = (xs.h, xs.w);
    for n in 0..xs.n {
        for co in 0..c_out {
            let ob = (n * c_out + co) * h * wd;
            out[ob..ob + h * wd].fill(bias[co]);
            for ci in 0..xs.c {
                let xb = (n * xs.c + ci) * h * wd;
                for ky in 0..k {
                    for kx in 0..k {
                        let wv = w[((co * xs.c + ci) * k + ky) * k + kx];
                        let dy = ky as isize - pad;
                        let dx = kx as isize - pad;
                        let y0 = (-dy).max(0) as usize;
                        let y1 = ((h as isize - dy).min(h as isize)) as usize;
                        let x0 = (-dx).max(0) as usize;
                        let x1 = ((wd as isize - dx).min(wd as isize)) as usize;
                        for y in y0..y1 {
                            let sy = (y as isize + dy) as usize;
                            let src = xb + sy * wd;
                            let dst = ob + y * wd;
                            let sx0 = (x0 as isize + dx) as usize;
                            let sx1 = (x1 as isize + dx) as usize;
                            for (o, s) in out[dst + x0..dst + x1]
                                .iter_mut()
                                .zip(&x[src + sx0..src + sx1])
                            {
                                *o += wv * *s;
                            }
                        }
                    }
                }
            }
        }
    }
}

fn conv2d_backward_bias(g: &[f64], n: usize, c_out: usize, hw: usize, gb: &mut [f64]) {
    for ni in 0..n {
        for co in 0..c_out {
            let base = (ni * c_out + co) * hw;
            gb[co] += g[base..base + hw].iter().sum::<f64>();
        }
    }
}

fn conv2d_backward_weight(g: &[f64], x: &[f64], xs: Shape, c_out: usize, k: usize, gw: &mut [f64]) {
    let pad = (k / 2) as isize;
    let (h, wd) = (xs.h, xs.w);
    for n in 0..xs.n {
        for co in 0..c_out {
            let ob = (n * c_out + co) * h * wd;
            for ci in 0..xs.c {
                let xb = (n * xs.c + ci) * h * wd;
                for ky in 0..k {
                    for kx in 0..k {
                        let dy = ky as isize - pad;
                        let dx = kx as isize - pad;
                        let y0 = (-dy).max(0) as usize;
                        let y1 = ((h as isize - dy).min(h as isize)) as usize;
                        let x0 = (-dx).max(0) as usize;
                        let x1 = ((wd as isize - dx).min(wd as isize)) as usize;
                        let mut acc = 0.0;
                        for y in y0..y1 {
                            let sy = (y as isize + dy) as usize;
                            let src = xb + sy * wd;
                            let dst = ob + y * wd;
                            let sx0 = (x0 as isize + dx) as usize;
                            let sx1 = (x1 as isize + dx) as usize;
                            for (gi, s) in g[dst + x0..dst + x1].iter().zip(&x[src + sx0..src + sx1])
                            {
                                acc += *gi * *s;
                            }
                        }
                        gw[((co * xs.c + ci) * k + ky) * k + kx] += acc;
                    }
                }
            }
        }
    }
}

fn conv2d_backward_input(g: &[f64], w: &[f64], xs: Shape, c_out: usize, k: usize, gx: &mut [f64]) {
    let pad = (k / 2) as isize;
    let (h, wd) = (xs.h, xs.w);
    for n in 0..xs.n {
        for co in 0..c_out {
            let ob = (n * c_out + co) * h * wd;
            for ci in 0..xs.c {
                let xb = (n * xs.c + ci) * h * wd;
                for ky in 0..k {
                    for kx in 0..k {
                        let wv = w[((co * xs.c + ci) * k + ky) * k + kx];
                        let dy = ky as isize - pad;
                        let dx = kx as isize - pad;
                        let y0 = (-dy).max(0) as usize;
                        let y1 = ((h as isize - dy).min(h as isize)) as usize;
                        let x0 = (-dx).max(0) as usize;
                        let x1 = ((wd as isize - dx).min(wd as isize)) as usize;
                        for y in y0..y1 {
                            let sy = (y as isize + dy) as usize;
                            let src = xb + sy * wd;
                            let dst = ob + y * wd;
                            let sx0 = (x0 as isize + dx) as usize;
                            let sx1 = (x1 as isize + dx) as usize;
                            for (e, gi) in gx[src + sx0..src + sx1]
                                .iter_mut()
                                .zip(&g[dst + x0..dst + x1])
                            {
                                *e += wv * *gi;
                            }
                        }
                    }
                }
            }
        }
    }
}
