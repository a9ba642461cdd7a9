//! Define-by-run reverse-mode autodiff.
//!
//! A [`Tape`] records every primitive in execution order, so node inputs
//! always precede the node itself. [`Tape::backward`] walks the record once
//! in reverse, summing adjoint contributions over every use of a node.

use super::tensor::{all_finite, binop_raw, gemm_nn, gemm_nt, gemm_tn, transpose_raw, BinOp};
use super::Tensor;
use crate::error::{invalid, Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Binary(BinOp, Var, Var),
    Affine {
        x: Var,
        scale: f64,
    },
    MatMul(Var, Var),
    Transpose(Var),
    Reshape(Var),
    Expand {
        x: Var,
        outer: usize,
        reps: usize,
        inner: usize,
    },
    SumAxis {
        x: Var,
        outer: usize,
        len: usize,
        inner: usize,
    },
    Sum(Var),
    Exp(Var),
    Sin(Var),
    Cos(Var),
    Tanh(Var),
    Square(Var),
    Sigmoid(Var),
    Relu(Var),
    MaxPool2 {
        x: Var,
        argmax: Vec<usize>,
    },
    Conv2d {
        x: Var,
        kernel: Var,
    },
    Narrow {
        x: Var,
        outer: usize,
        len: usize,
        inner: usize,
        start: usize,
        width: usize,
    },
    RidgeMixture(Box<RidgeMixture>),
}

/// Inputs and cached activations of [`Tape::ridge_mixture`].
#[derive(Debug)]
struct RidgeMixture {
    x: Var,
    mu: Var,
    w: Var,
    c: Var,
    pi: Var,
    laplacian: bool,
    /// `[batch × m]`
    y: Vec<f64>,
    /// `[batch × m]`
    f: Vec<f64>,
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Binary(k, ..) => k.name(),
            Op::Affine { .. } => "affine",
            Op::MatMul(..) => "matmul",
            Op::Transpose(_) => "transpose",
            Op::Reshape(_) => "reshape",
            Op::Expand { .. } => "expand",
            Op::SumAxis { .. } => "sum_axis",
            Op::Sum(_) => "sum",
            Op::Exp(_) => "exp",
            Op::Sin(_) => "sin",
            Op::Cos(_) => "cos",
            Op::Tanh(_) => "tanh",
            Op::Square(_) => "square",
            Op::Sigmoid(_) => "sigmoid",
            Op::Relu(_) => "relu",
            Op::MaxPool2 { .. } => "maxpool2",
            Op::Conv2d { .. } => "conv2d",
            Op::Narrow { .. } => "narrow",
            Op::RidgeMixture(_) => "ridge_mixture",
        }
    }
}

#[derive(Debug)]
struct Node {
    op: Op,
    value: Tensor,
    needs_grad: bool,
}

/// Append-only record of one forward evaluation.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Adjoints produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    shapes: Vec<Vec<usize>>,
    adjoints: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    /// Gradient of the root with respect to `var`; zeros when `var` does not
    /// influence the root or is not differentiable.
    pub fn wrt(&self, var: Var) -> Tensor {
        let shape = self.shapes[var.0].clone();
        match &self.adjoints[var.0] {
            Some(adj) => Tensor::from_parts(shape, adj.clone()),
            None => Tensor::zeros(shape),
        }
    }

    pub fn take(&mut self, var: Var) -> Tensor {
        let shape = self.shapes[var.0].clone();
        match self.adjoints[var.0].take() {
            Some(adj) => Tensor::from_parts(shape, adj),
            None => Tensor::zeros(shape),
        }
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Trainable leaf: gradients flow to it.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push_leaf(value, true)
    }

    /// Non-trainable leaf (data, frozen parameters).
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push_leaf(value, false)
    }

    pub fn scalar(&mut self, value: f64) -> Result<Var> {
        Ok(self.constant(Tensor::scalar(value)?))
    }

    fn push_leaf(&mut self, value: Tensor, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            op: Op::Leaf,
            value,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn push(&mut self, op: Op, shape: Vec<usize>, data: Vec<f64>, needs_grad: bool) -> Result<Var> {
        let id = self.nodes.len();
        if !all_finite(&data) {
            return Err(Error::NonFinite { op: op.name(), node: id });
        }
        self.nodes.push(Node {
            op,
            value: Tensor::from_parts(shape, data),
            needs_grad,
        });
        Ok(Var(id))
    }

    fn unary(&mut self, x: Var, op: Op, f: impl Fn(f64) -> f64) -> Result<Var> {
        let value = &self.nodes[x.0].value;
        let shape = value.shape().to_vec();
        let data = value.data().iter().map(|&v| f(v)).collect();
        let needs = self.needs(x);
        self.push(op, shape, data, needs)
    }

    fn binary(&mut self, kind: BinOp, a: Var, b: Var) -> Result<Var> {
        let (shape, data) = binop_raw(kind, self.value(a), self.value(b))?;
        let needs = self.needs(a) || self.needs(b);
        self.push(Op::Binary(kind, a, b), shape, data, needs)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinOp::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinOp::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinOp::Mul, a, b)
    }

    /// `scale * x + shift`
    pub fn affine(&mut self, x: Var, scale: f64, shift: f64) -> Result<Var> {
        self.unary(x, Op::Affine { x, scale }, |v| scale * v + shift)
    }

    pub fn scale(&mut self, x: Var, scale: f64) -> Result<Var> {
        self.affine(x, scale, 0.0)
    }

    pub fn neg(&mut self, x: Var) -> Result<Var> {
        self.affine(x, -1.0, 0.0)
    }

    pub fn exp(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Op::Exp(x), f64::exp)
    }

    pub fn sin(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Op::Sin(x), f64::sin)
    }

    pub fn cos(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Op::Cos(x), f64::cos)
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Op::Tanh(x), f64::tanh)
    }

    pub fn square(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Op::Square(x), |v| v * v)
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Op::Sigmoid(x), sigmoid)
    }

    /// `max(x, 0)`
    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Op::Relu(x), |v| v.max(0.0))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.rank() != 2 || bv.rank() != 2 || av.shape()[1] != bv.shape()[0] {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                lhs: av.shape().to_vec(),
                rhs: bv.shape().to_vec(),
            });
        }
        let (m, k) = av.dims2();
        let n = bv.shape()[1];
        let mut out = vec![0.0; m * n];
        gemm_nn(m, k, n, av.data(), bv.data(), &mut out);
        let needs = self.needs(a) || self.needs(b);
        self.push(Op::MatMul(a, b), vec![m, n], out, needs)
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x);
        if v.rank() != 2 {
            return Err(invalid(format!("transpose needs a matrix, got {:?}", v.shape())));
        }
        let (r, c) = v.dims2();
        let data = transpose_raw(r, c, v.data());
        let needs = self.needs(x);
        self.push(Op::Transpose(x), vec![c, r], data, needs)
    }

    pub fn reshape(&mut self, x: Var, shape: impl Into<Vec<usize>>) -> Result<Var> {
        let shape = shape.into();
        let v = self.value(x);
        if shape.iter().product::<usize>() != v.len() || shape.contains(&0) {
            return Err(Error::ShapeMismatch {
                op: "reshape",
                lhs: v.shape().to_vec(),
                rhs: shape,
            });
        }
        let data = v.data().to_vec();
        let needs = self.needs(x);
        self.push(Op::Reshape(x), shape, data, needs)
    }

    /// Views `x` as `[outer × inner]` and repeats it `reps` times along a new
    /// middle axis, producing `[outer × reps × inner]` data laid out under
    /// `shape`.
    pub fn expand(&mut self, x: Var, outer: usize, reps: usize, inner: usize, shape: impl Into<Vec<usize>>) -> Result<Var> {
        let shape = shape.into();
        let v = self.value(x);
        if outer * inner != v.len() || shape.iter().product::<usize>() != outer * reps * inner || reps == 0 {
            return Err(Error::ShapeMismatch {
                op: "expand",
                lhs: v.shape().to_vec(),
                rhs: shape,
            });
        }
        let src = v.data();
        let mut data = Vec::with_capacity(outer * reps * inner);
        for o in 0..outer {
            let block = &src[o * inner..(o + 1) * inner];
            for _ in 0..reps {
                data.extend_from_slice(block);
            }
        }
        let needs = self.needs(x);
        self.push(Op::Expand { x, outer, reps, inner }, shape, data, needs)
    }

    /// Sums over `axis`, removing it from the shape. A rank-1 input reduces
    /// to a rank-0 scalar.
    pub fn sum_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let v = self.value(x);
        if axis >= v.rank() {
            return Err(invalid(format!("axis {axis} out of range for {:?}", v.shape())));
        }
        let shape = v.shape();
        let outer: usize = shape[..axis].iter().product();
        let len = shape[axis];
        let inner: usize = shape[axis + 1..].iter().product();
        let mut out_shape = shape.to_vec();
        out_shape.remove(axis);
        let src = v.data();
        let mut data = vec![0.0; outer * inner];
        for o in 0..outer {
            let dst = &mut data[o * inner..(o + 1) * inner];
            for l in 0..len {
                let row = &src[(o * len + l) * inner..(o * len + l + 1) * inner];
                for (d, s) in dst.iter_mut().zip(row) {
                    *d += s;
                }
            }
        }
        let needs = self.needs(x);
        self.push(Op::SumAxis { x, outer, len, inner }, out_shape, data, needs)
    }

    /// Sum of all elements, as a rank-0 scalar.
    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).data().iter().sum();
        let needs = self.needs(x);
        self.push(Op::Sum(x), Vec::new(), vec![s], needs)
    }

    /// Slice `[start, start+width)` along `axis`.
    pub fn narrow(&mut self, x: Var, axis: usize, start: usize, width: usize) -> Result<Var> {
        let v = self.value(x);
        if axis >= v.rank() || width == 0 || start + width > v.shape()[axis] {
            return Err(invalid(format!(
                "narrow axis {axis} [{start}, {}) out of range for {:?}",
                start + width,
                v.shape()
            )));
        }
        let shape = v.shape();
        let outer: usize = shape[..axis].iter().product();
        let len = shape[axis];
        let inner: usize = shape[axis + 1..].iter().product();
        let mut out_shape = shape.to_vec();
        out_shape[axis] = width;
        let src = v.data();
        let mut data = Vec::with_capacity(outer * width * inner);
        for o in 0..outer {
            let from = (o * len + start) * inner;
            data.extend_from_slice(&src[from..from + width * inner]);
        }
        let needs = self.needs(x);
        let op = Op::Narrow {
            x,
            outer,
            len,
            inner,
            start,
            width,
        };
        self.push(op, out_shape, data, needs)
    }

    /// 2×2 max pooling with stride 2 over `[batch × h × w × c]`; odd trailing
    /// rows and columns are dropped.
    pub fn maxpool2(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x);
        if v.rank() != 4 || v.shape()[1] < 2 || v.shape()[2] < 2 {
            return Err(invalid(format!("maxpool2 needs [b,h,w,c] with h,w >= 2, got {:?}", v.shape())));
        }
        let (b, h, w, c) = (v.shape()[0], v.shape()[1], v.shape()[2], v.shape()[3]);
        let (oh, ow) = (h / 2, w / 2);
        let src = v.data();
        let mut data = Vec::with_capacity(b * oh * ow * c);
        let mut argmax = Vec::with_capacity(b * oh * ow * c);
        for bi in 0..b {
            for oy in 0..oh {
                for ox in 0..ow {
                    for ch in 0..c {
                        let mut best = usize::MAX;
                        let mut best_v = f64::NEG_INFINITY;
                        for dy in 0..2 {
                            for dx in 0..2 {
                                let idx = ((bi * h + 2 * oy + dy) * w + 2 * ox + dx) * c + ch;
                                if src[idx] > best_v {
                                    best_v = src[idx];
                                    best = idx;
                                }
                            }
                        }
                        data.push(best_v);
                        argmax.push(best);
                    }
                }
            }
        }
        let needs = self.needs(x);
        self.push(Op::MaxPool2 { x, argmax }, vec![b, oh, ow, c], data, needs)
    }

    /// Valid, stride-1 convolution of `x: [batch × h × w × c]` with
    /// `kernel: [kh × kw × c × o]`.
    pub fn conv2d(&mut self, x: Var, kernel: Var) -> Result<Var> {
        let (xv, kv) = (self.value(x), self.value(kernel));
        if xv.rank() != 4 || kv.rank() != 4 || xv.shape()[3] != kv.shape()[2] {
            return Err(Error::ShapeMismatch {
                op: "conv2d",
                lhs: xv.shape().to_vec(),
                rhs: kv.shape().to_vec(),
            });
        }
        let g = ConvGeom::new(xv.shape(), kv.shape())?;
        let (xs, ks) = (xv.data(), kv.data());
        let mut out = vec![0.0; g.b * g.oh * g.ow * g.o];
        for bi in 0..g.b {
            for oy in 0..g.oh {
                for ox in 0..g.ow {
                    let o_off = g.out_index(bi, oy, ox);
                    let dst = &mut out[o_off..o_off + g.o];
                    for ky in 0..g.kh {
                        for kx in 0..g.kw {
                            let x_off = g.in_index(bi, oy + ky, ox + kx);
                            let k_off = (ky * g.kw + kx) * g.c * g.o;
                            gemm_nn(1, g.c, g.o, &xs[x_off..x_off + g.c], &ks[k_off..k_off + g.c * g.o], dst);
                        }
                    }
                }
            }
        }
        let needs = self.needs(x) || self.needs(kernel);
        self.push(Op::Conv2d { x, kernel }, vec![g.b, g.oh, g.ow, g.o], out, needs)
    }

    /// Fused mixture of ridge Gaussians over `x: [batch × d]`, given centres
    /// `mu: [m × d]`, directions `w: [m × d]`, offsets `c: [m]` and mixing
    /// weights `pi: [out × m]`. With `y = w_i·(x − μ_i) + c_i` and
    /// `f = exp(−y²/2)` the result is `f·πᵀ`, or with `laplacian` set the
    /// input Laplacian `(f·(y² − 1)·‖w_i‖²)·πᵀ`; both `[batch × out]`.
    pub fn ridge_mixture(&mut self, x: Var, mu: Var, w: Var, c: Var, pi: Var, laplacian: bool) -> Result<Var> {
        let (xv, muv, wv, cv, piv) = (self.value(x), self.value(mu), self.value(w), self.value(c), self.value(pi));
        let bad = |lhs: &Tensor, rhs: &Tensor| Error::ShapeMismatch {
            op: "ridge_mixture",
            lhs: lhs.shape().to_vec(),
            rhs: rhs.shape().to_vec(),
        };
        if xv.rank() != 2 || muv.rank() != 2 || wv.shape() != muv.shape() || xv.shape()[1] != muv.shape()[1] {
            return Err(bad(xv, wv));
        }
        let (batch, d) = xv.dims2();
        let m = muv.shape()[0];
        if cv.len() != m || piv.rank() != 2 || piv.shape()[1] != m {
            return Err(bad(cv, piv));
        }
        let out_dim = piv.shape()[0];
        let (ws, mus) = (wv.data(), muv.data());

        let mut y = vec![0.0; batch * m];
        gemm_nt(batch, d, m, xv.data(), ws, &mut y);
        let shift: Vec<f64> = (0..m)
            .map(|i| {
                let wmu: f64 = (0..d).map(|j| ws[i * d + j] * mus[i * d + j]).sum();
                cv.data()[i] - wmu
            })
            .collect();
        for row in y.chunks_exact_mut(m) {
            for (v, s) in row.iter_mut().zip(&shift) {
                *v += s;
            }
        }
        let f: Vec<f64> = y.iter().map(|v| (-0.5 * v * v).exp()).collect();
        let mut out = vec![0.0; batch * out_dim];
        if laplacian {
            let norms = row_norms2(ws, m, d);
            let q = curvature_terms(&y, &f, &norms);
            gemm_nt(batch, m, out_dim, &q, piv.data(), &mut out);
        } else {
            gemm_nt(batch, m, out_dim, &f, piv.data(), &mut out);
        }
        let needs = [x, mu, w, c, pi].iter().any(|&v| self.needs(v));
        let op = Op::RidgeMixture(Box::new(RidgeMixture {
            x,
            mu,
            w,
            c,
            pi,
            laplacian,
            y,
            f,
        }));
        self.push(op, vec![batch, out_dim], out, needs)
    }

    /// Reverse sweep from a scalar `root`.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        let root_val = self.value(root);
        if !root_val.is_scalar() {
            return Err(Error::NonScalarRoot(root_val.shape().to_vec()));
        }
        let n = root.0 + 1;
        let mut adj: Vec<Option<Vec<f64>>> = vec![None; n];
        adj[root.0] = Some(vec![1.0]);

        for id in (0..n).rev() {
            let Some(g) = adj[id].take() else { continue };
            let node = &self.nodes[id];
            if !node.needs_grad {
                adj[id] = Some(g);
                continue;
            }
            self.propagate(node, &g, &mut adj);
            adj[id] = Some(g);
        }

        Ok(Gradients {
            shapes: self.nodes[..n].iter().map(|nd| nd.value.shape().to_vec()).collect(),
            adjoints: adj,
        })
    }

    fn propagate(&self, node: &Node, g: &[f64], adj: &mut [Option<Vec<f64>>]) {
        let out = node.value.data();
        match &node.op {
            Op::Leaf => {}
            Op::Binary(kind, a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (da, db): (Vec<f64>, Vec<f64>) = match kind {
                    BinOp::Add => (g.to_vec(), g.to_vec()),
                    BinOp::Sub => (g.to_vec(), g.iter().map(|v| -v).collect()),
                    BinOp::Mul => {
                        let da = (0..g.len()).map(|i| g[i] * pick(bv.data(), i)).collect();
                        let db = (0..g.len()).map(|i| g[i] * pick(av.data(), i)).collect();
                        (da, db)
                    }
                };
                if self.needs(*a) {
                    accumulate_reduced(adj, *a, av.len(), da);
                }
                if self.needs(*b) {
                    accumulate_reduced(adj, *b, bv.len(), db);
                }
            }
            Op::Affine { x, scale } => {
                accumulate(adj, *x, g.iter().map(|v| v * scale).collect());
            }
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (m, k) = av.dims2();
                let n = bv.shape()[1];
                if self.needs(*a) {
                    let mut da = vec![0.0; m * k];
                    gemm_nt(m, n, k, g, bv.data(), &mut da);
                    accumulate(adj, *a, da);
                }
                if self.needs(*b) {
                    let mut db = vec![0.0; k * n];
                    gemm_tn(m, k, n, av.data(), g, &mut db);
                    accumulate(adj, *b, db);
                }
            }
            Op::Transpose(x) => {
                let (r, c) = self.value(*x).dims2();
                accumulate(adj, *x, transpose_raw(c, r, g));
            }
            Op::Reshape(x) => accumulate(adj, *x, g.to_vec()),
            Op::Expand { x, outer, reps, inner } => {
                let mut dx = vec![0.0; outer * inner];
                for o in 0..*outer {
                    let dst = &mut dx[o * inner..(o + 1) * inner];
                    for r in 0..*reps {
                        let src = &g[(o * reps + r) * inner..(o * reps + r + 1) * inner];
                        for (d, s) in dst.iter_mut().zip(src) {
                            *d += s;
                        }
                    }
                }
                accumulate(adj, *x, dx);
            }
            Op::SumAxis { x, outer, len, inner } => {
                let mut dx = Vec::with_capacity(outer * len * inner);
                for o in 0..*outer {
                    let src = &g[o * inner..(o + 1) * inner];
                    for _ in 0..*len {
                        dx.extend_from_slice(src);
                    }
                }
                accumulate(adj, *x, dx);
            }
            Op::Sum(x) => {
                let len = self.value(*x).len();
                accumulate(adj, *x, vec![g[0]; len]);
            }
            Op::Exp(x) => accumulate(adj, *x, zip_map(g, out, |g, y| g * y)),
            Op::Sin(x) => accumulate(adj, *x, zip_map(g, self.value(*x).data(), |g, v| g * v.cos())),
            Op::Cos(x) => accumulate(adj, *x, zip_map(g, self.value(*x).data(), |g, v| -g * v.sin())),
            Op::Tanh(x) => accumulate(adj, *x, zip_map(g, out, |g, y| g * (1.0 - y * y))),
            Op::Square(x) => accumulate(adj, *x, zip_map(g, self.value(*x).data(), |g, v| 2.0 * v * g)),
            Op::Sigmoid(x) => accumulate(adj, *x, zip_map(g, out, |g, y| g * y * (1.0 - y))),
            Op::Relu(x) => accumulate(adj, *x, zip_map(g, self.value(*x).data(), |g, v| if v > 0.0 { g } else { 0.0 })),
            Op::MaxPool2 { x, argmax } => {
                let mut dx = vec![0.0; self.value(*x).len()];
                for (gi, &src) in g.iter().zip(argmax) {
                    dx[src] += gi;
                }
                accumulate(adj, *x, dx);
            }
            Op::Conv2d { x, kernel } => {
                let (xv, kv) = (self.value(*x), self.value(*kernel));
                let geom = ConvGeom::new(xv.shape(), kv.shape()).expect("validated in forward");
                let (xs, ks) = (xv.data(), kv.data());
                let want_x = self.needs(*x);
                let want_k = self.needs(*kernel);
                let mut dx = if want_x { vec![0.0; xs.len()] } else { Vec::new() };
                let mut dk = if want_k { vec![0.0; ks.len()] } else { Vec::new() };
                let (c, o) = (geom.c, geom.o);
                for bi in 0..geom.b {
                    for oy in 0..geom.oh {
                        for ox in 0..geom.ow {
                            let o_off = geom.out_index(bi, oy, ox);
                            let go = &g[o_off..o_off + o];
                            for ky in 0..geom.kh {
                                for kx in 0..geom.kw {
                                    let x_off = geom.in_index(bi, oy + ky, ox + kx);
                                    let k_off = (ky * geom.kw + kx) * c * o;
                                    if want_x {
                                        gemm_nt(1, o, c, go, &ks[k_off..k_off + c * o], &mut dx[x_off..x_off + c]);
                                    }
                                    if want_k {
                                        gemm_tn(1, c, o, &xs[x_off..x_off + c], go, &mut dk[k_off..k_off + c * o]);
                                    }
                                }
                            }
                        }
                    }
                }
                if want_x {
                    accumulate(adj, *x, dx);
                }
                if want_k {
                    accumulate(adj, *kernel, dk);
                }
            }
            Op::Narrow {
                x,
                outer,
                len,
                inner,
                start,
                width,
            } => {
                let mut dx = vec![0.0; outer * len * inner];
                for o in 0..*outer {
                    let to = (o * len + start) * inner;
                    let from = o * width * inner;
                    dx[to..to + width * inner].copy_from_slice(&g[from..from + width * inner]);
                }
                accumulate(adj, *x, dx);
            }
            Op::RidgeMixture(rm) => self.propagate_ridge_mixture(rm, g, adj),
        }
    }

    fn propagate_ridge_mixture(&self, rm: &RidgeMixture, g: &[f64], adj: &mut [Option<Vec<f64>>]) {
        let (xv, wv, muv, piv) = (self.value(rm.x), self.value(rm.w), self.value(rm.mu), self.value(rm.pi));
        let (batch, d) = xv.dims2();
        let m = wv.shape()[0];
        let out_dim = piv.shape()[0];
        let ws = wv.data();

        // h = g·π, the adjoint of each component's contribution
        let mut h = vec![0.0; batch * m];
        gemm_nn(batch, out_dim, m, g, piv.data(), &mut h);

        let mut dy = vec![0.0; batch * m];
        let mut dnorm = vec![0.0; m];
        let weights_src;
        let norms;
        if rm.laplacian {
            // q = f·(y² − 1)·s with s = ‖w‖²;  dq/dy = s·f·y·(3 − y²)
            norms = row_norms2(ws, m, d);
            weights_src = curvature_terms(&rm.y, &rm.f, &norms);
            for b in 0..batch {
                for i in 0..m {
                    let k = b * m + i;
                    let (yv, fv) = (rm.y[k], rm.f[k]);
                    dy[k] = h[k] * norms[i] * fv * yv * (3.0 - yv * yv);
                    dnorm[i] += h[k] * fv * (yv * yv - 1.0);
                }
            }
        } else {
            weights_src = rm.f.clone();
            for k in 0..batch * m {
                dy[k] = -h[k] * rm.f[k] * rm.y[k];
            }
        }

        if self.needs(rm.pi) {
            let mut dpi = vec![0.0; out_dim * m];
            gemm_tn(batch, out_dim, m, g, &weights_src, &mut dpi);
            accumulate(adj, rm.pi, dpi);
        }
        let mut dc = vec![0.0; m];
        for row in dy.chunks_exact(m) {
            for (acc, v) in dc.iter_mut().zip(row) {
                *acc += v;
            }
        }
        if self.needs(rm.x) {
            let mut dx = vec![0.0; batch * d];
            gemm_nn(batch, m, d, &dy, ws, &mut dx);
            accumulate(adj, rm.x, dx);
        }
        if self.needs(rm.w) {
            let mut dw = vec![0.0; m * d];
            gemm_tn(batch, m, d, &dy, xv.data(), &mut dw);
            for i in 0..m {
                for j in 0..d {
                    let k = i * d + j;
                    dw[k] += -dc[i] * muv.data()[k] + 2.0 * ws[k] * dnorm[i];
                }
            }
            accumulate(adj, rm.w, dw);
        }
        if self.needs(rm.mu) {
            let dmu = (0..m * d).map(|k| -ws[k] * dc[k / d]).collect();
            accumulate(adj, rm.mu, dmu);
        }
        if self.needs(rm.c) {
            accumulate(adj, rm.c, dc);
        }
    }

    // Composite helpers built only from the primitives above.

    /// `a[rows × n] + r[n]` broadcast over rows.
    pub fn add_row(&mut self, a: Var, r: Var) -> Result<Var> {
        let b = self.broadcast_row(a, r)?;
        self.add(a, b)
    }

    /// `a[rows × n] ∘ r[n]` broadcast over rows.
    pub fn mul_row(&mut self, a: Var, r: Var) -> Result<Var> {
        let b = self.broadcast_row(a, r)?;
        self.mul(a, b)
    }

    /// `a[m × …] ∘ c[m]`, each `c` entry scaling one contiguous block.
    pub fn mul_col(&mut self, a: Var, c: Var) -> Result<Var> {
        let b = self.broadcast_col(a, c)?;
        self.mul(a, b)
    }

    pub fn add_col(&mut self, a: Var, c: Var) -> Result<Var> {
        let b = self.broadcast_col(a, c)?;
        self.add(a, b)
    }

    fn broadcast_row(&mut self, a: Var, r: Var) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        let n = self.value(r).len();
        let total: usize = shape.iter().product();
        if n == 0 || !total.is_multiple_of(n) || shape.last() != Some(&n) {
            return Err(Error::ShapeMismatch {
                op: "broadcast_row",
                lhs: shape,
                rhs: self.shape(r).to_vec(),
            });
        }
        self.expand(r, 1, total / n, n, shape)
    }

    fn broadcast_col(&mut self, a: Var, c: Var) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        let m = self.value(c).len();
        let total: usize = shape.iter().product();
        if m == 0 || !total.is_multiple_of(m) {
            return Err(Error::ShapeMismatch {
                op: "broadcast_col",
                lhs: shape,
                rhs: self.shape(c).to_vec(),
            });
        }
        self.expand(c, m, total / m, 1, shape)
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let n = self.value(x).len() as f64;
        let s = self.sum(x)?;
        self.scale(s, 1.0 / n)
    }

    /// Mean of squared differences.
    pub fn mse(&mut self, pred: Var, target: Var) -> Result<Var> {
        let d = self.sub(pred, target)?;
        let sq = self.square(d)?;
        self.mean(sq)
    }
}

fn row_norms2(w: &[f64], m: usize, d: usize) -> Vec<f64> {
    (0..m).map(|i| w[i * d..(i + 1) * d].iter().map(|v| v * v).sum()).collect()
}

fn curvature_terms(y: &[f64], f: &[f64], norms: &[f64]) -> Vec<f64> {
    let m = norms.len();
    y.iter()
        .zip(f)
        .enumerate()
        .map(|(k, (yv, fv))| fv * (yv * yv - 1.0) * norms[k % m])
        .collect()
}

#[inline]
pub(crate) fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

#[inline]
fn pick(data: &[f64], i: usize) -> f64 {
    if data.len() == 1 {
        data[0]
    } else {
        data[i]
    }
}

fn zip_map(g: &[f64], v: &[f64], f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    g.iter().zip(v).map(|(&a, &b)| f(a, b)).collect()
}

fn accumulate(adj: &mut [Option<Vec<f64>>], v: Var, contrib: Vec<f64>) {
    match &mut adj[v.0] {
        Some(existing) => {
            for (e, c) in existing.iter_mut().zip(&contrib) {
                *e += c;
            }
        }
        slot @ None => *slot = Some(contrib),
    }
}

/// Accumulates, summing the contribution down to one value when the input
/// was a broadcast scalar.
fn accumulate_reduced(adj: &mut [Option<Vec<f64>>], v: Var, input_len: usize, contrib: Vec<f64>) {
    if input_len == 1 && contrib.len() != 1 {
        let s = contrib.iter().sum();
        accumulate(adj, v, vec![s]);
    } else {
        accumulate(adj, v, contrib);
    }
}

struct ConvGeom {
    b: usize,
    h: usize,
    w: usize,
    c: usize,
    kh: usize,
    kw: usize,
    o: usize,
    oh: usize,
    ow: usize,
}

impl ConvGeom {
    fn new(x: &[usize], k: &[usize]) -> Result<Self> {
        let (b, h, w, c) = (x[0], x[1], x[2], x[3]);
        let (kh, kw, o) = (k[0], k[1], k[3]);
        if kh > h || kw > w {
            return Err(invalid(format!("kernel {kh}x{kw} larger than input {h}x{w}")));
        }
        Ok(ConvGeom {
            b,
            h,
            w,
            c,
            kh,
            kw,
            o,
            oh: h - kh + 1,
            ow: w - kw + 1,
        })
    }

    #[inline]
    fn in_index(&self, b: usize, y: usize, x: usize) -> usize {
        ((b * self.h + y) * self.w + x) * self.c
    }

    #[inline]
    fn out_index(&self, b: usize, y: usize, x: usize) -> usize {
        ((b * self.oh + y) * self.ow + x) * self.o
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::{finite_diff_gradient, max_rel_error, Rng};

    #[test]
    fn grad_of_sum_is_ones() {
        let mut tape = Tape::new();
        let w = tape.param(Tensor::vector(vec![0.3, -2.0, 5.0]).unwrap());
        let s = tape.sum(w).unwrap();
        let g = tape.backward(s).unwrap();
        assert_eq!(g.wrt(w).data(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn gaussian_bump_is_flat_at_zero() {
        let mut tape = Tape::new();
        let w = tape.param(Tensor::scalar(0.0).unwrap());
        let sq = tape.square(w).unwrap();
        let e = tape.scale(sq, -0.5).unwrap();
        let f = tape.exp(e).unwrap();
        let g = tape.backward(f).unwrap();
        assert_eq!(g.wrt(w).item().unwrap(), 0.0);
    }

    #[test]
    fn non_scalar_root_rejected() {
        let mut tape = Tape::new();
        let w = tape.param(Tensor::vector(vec![1.0, 2.0]).unwrap());
        assert!(matches!(tape.backward(w), Err(Error::NonScalarRoot(_))));
    }

    #[test]
    fn non_finite_reports_node() {
        let mut tape = Tape::new();
        let w = tape.param(Tensor::vector(vec![1000.0]).unwrap());
        let err = tape.exp(w).unwrap_err();
        assert!(matches!(err, Error::NonFinite { op: "exp", node: 1 }));
    }

    #[test]
    fn shared_use_accumulates() {
        // f = w*w + w, f' = 2w + 1
        let mut tape = Tape::new();
        let w = tape.param(Tensor::scalar(1.5).unwrap());
        let sq = tape.mul(w, w).unwrap();
        let f = tape.add(sq, w).unwrap();
        let g = tape.backward(f).unwrap();
        assert_eq!(g.wrt(w).item().unwrap(), 4.0);
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut tape = Tape::new();
        let c = tape.constant(Tensor::vector(vec![1.0, 2.0]).unwrap());
        let w = tape.param(Tensor::vector(vec![3.0, 4.0]).unwrap());
        let p = tape.mul(c, w).unwrap();
        let s = tape.sum(p).unwrap();
        let g = tape.backward(s).unwrap();
        assert_eq!(g.wrt(w).data(), &[1.0, 2.0]);
        assert_eq!(g.wrt(c).data(), &[0.0, 0.0]);
    }

    /// Each primitive in isolation, reduced through a fixed random weighting
    /// so every output element contributes.
    fn check_primitive(seed: u64, inputs: &[Vec<usize>], lo: f64, hi: f64, build: impl Fn(&mut Tape, &[Var]) -> Result<Var>) {
        let mut rng = Rng::seed(seed);
        let values: Vec<Tensor> = inputs.iter().map(|s| rng.uniform(s.clone(), lo, hi).unwrap()).collect();
        let probe_seed = seed.wrapping_mul(31).wrapping_add(7);

        let eval = |vals: &[Tensor], grads: bool| -> (f64, Vec<Tensor>) {
            let mut tape = Tape::new();
            let vars: Vec<Var> = vals.iter().map(|v| tape.param(v.clone())).collect();
            let out = build(&mut tape, &vars).unwrap();
            let shape = tape.shape(out).to_vec();
            let weights = Rng::seed(probe_seed).uniform(shape, -1.0, 1.0).unwrap();
            let w = tape.constant(weights);
            let prod = tape.mul(out, w).unwrap();
            let root = tape.sum(prod).unwrap();
            let value = tape.value(root).item().unwrap();
            if grads {
                let g = tape.backward(root).unwrap();
                (value, vars.iter().map(|&v| g.wrt(v)).collect())
            } else {
                (value, Vec::new())
            }
        };

        let (_, analytic) = eval(&values, true);
        for (idx, grad) in analytic.iter().enumerate() {
            let numeric = finite_diff_gradient(&values[idx], |t| {
                let mut vals = values.clone();
                vals[idx] = t.clone();
                eval(&vals, false).0
            });
            let err = max_rel_error(grad, &numeric);
            assert!(err < 1e-5, "seed {seed} input {idx}: rel err {err}");
        }
    }

    #[test]
    fn primitive_gradients_match_finite_differences() {
        for seed in 0..20 {
            check_primitive(seed, &[vec![3, 4], vec![3, 4]], -1.0, 1.0, |t, v| t.add(v[0], v[1]));
            check_primitive(seed, &[vec![3, 4], vec![3, 4]], -1.0, 1.0, |t, v| t.sub(v[0], v[1]));
            check_primitive(seed, &[vec![3, 4], vec![3, 4]], -1.0, 1.0, |t, v| t.mul(v[0], v[1]));
            check_primitive(seed, &[vec![3, 4], vec![1]], -1.0, 1.0, |t, v| t.mul(v[0], v[1]));
            check_primitive(seed, &[vec![3, 4], vec![4, 2]], -1.0, 1.0, |t, v| t.matmul(v[0], v[1]));
            check_primitive(seed, &[vec![5]], -1.0, 1.0, |t, v| t.sum(v[0]));
            check_primitive(seed, &[vec![5]], -2.0, 2.0, |t, v| t.exp(v[0]));
            check_primitive(seed, &[vec![5]], -3.0, 3.0, |t, v| t.sin(v[0]));
            check_primitive(seed, &[vec![5]], -3.0, 3.0, |t, v| t.cos(v[0]));
            check_primitive(seed, &[vec![5]], -2.0, 2.0, |t, v| t.tanh(v[0]));
            check_primitive(seed, &[vec![5]], -2.0, 2.0, |t, v| t.square(v[0]));
            check_primitive(seed, &[vec![5]], -4.0, 4.0, |t, v| t.sigmoid(v[0]));
            check_primitive(seed, &[vec![5]], -1.0, 1.0, |t, v| t.relu(v[0]));
            check_primitive(seed, &[vec![5]], -1.0, 1.0, |t, v| t.affine(v[0], -2.5, 0.3));
            check_primitive(seed, &[vec![2, 3, 4]], -1.0, 1.0, |t, v| t.sum_axis(v[0], 1));
            check_primitive(seed, &[vec![2, 3]], -1.0, 1.0, |t, v| t.transpose(v[0]));
            check_primitive(seed, &[vec![2, 3]], -1.0, 1.0, |t, v| t.expand(v[0], 2, 4, 3, [2, 4, 3]));
            check_primitive(seed, &[vec![2, 5, 3]], -1.0, 1.0, |t, v| t.narrow(v[0], 1, 1, 3));
            check_primitive(seed, &[vec![2, 5, 4, 3]], -1.0, 1.0, |t, v| t.maxpool2(v[0]));
            check_primitive(seed, &[vec![2, 5, 6, 2], vec![3, 3, 2, 3]], -1.0, 1.0, |t, v| t.conv2d(v[0], v[1]));
            for laplacian in [false, true] {
                let shapes = [vec![4, 2], vec![3, 2], vec![3, 2], vec![3], vec![2, 3]];
                check_primitive(seed, &shapes, -1.5, 1.5, |t, v| {
                    t.ridge_mixture(v[0], v[1], v[2], v[3], v[4], laplacian)
                });
            }
        }
    }

    #[test]
    fn ridge_mixture_matches_pointwise_formula() {
        let mut rng = Rng::seed(11);
        let x = rng.uniform([5, 3], -1.0, 1.0).unwrap();
        let mu = rng.uniform([4, 3], -1.0, 1.0).unwrap();
        let w = rng.uniform([4, 3], -2.0, 2.0).unwrap();
        let c = rng.uniform([4], -0.5, 0.5).unwrap();
        let pi = rng.uniform([2, 4], -1.0, 1.0).unwrap();
        for laplacian in [false, true] {
            let mut tape = Tape::new();
            let vars: Vec<Var> = [&x, &mu, &w, &c, &pi].iter().map(|t| tape.constant((*t).clone())).collect();
            let out = tape.ridge_mixture(vars[0], vars[1], vars[2], vars[3], vars[4], laplacian).unwrap();
            assert_eq!(tape.shape(out), &[5, 2]);
            for b in 0..5 {
                for k in 0..2 {
                    let mut expected = 0.0;
                    for i in 0..4 {
                        let (wi, mi) = (w.row(i), mu.row(i));
                        let y: f64 = (0..3).map(|j| wi[j] * (x.row(b)[j] - mi[j])).sum::<f64>() + c.data()[i];
                        let f = (-0.5 * y * y).exp();
                        let norm: f64 = wi.iter().map(|v| v * v).sum();
                        let term = if laplacian { f * (y * y - 1.0) * norm } else { f };
                        expected += pi.get(&[k, i]) * term;
                    }
                    let got = tape.value(out).get(&[b, k]);
                    assert!((got - expected).abs() < 1e-13, "{got} vs {expected}");
                }
            }
        }
    }

    #[test]
    fn ridge_mixture_rejects_bad_shapes() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::zeros([2, 2]));
        let mu = tape.constant(Tensor::zeros([3, 2]));
        let w = tape.constant(Tensor::zeros([3, 3]));
        let c = tape.constant(Tensor::zeros([3]));
        let pi = tape.constant(Tensor::zeros([1, 3]));
        assert!(tape.ridge_mixture(x, mu, w, c, pi, false).is_err());
    }

    #[test]
    fn backward_is_linear() {
        // grad(a f + b g) = a grad f + b grad g
        let w0 = Rng::seed(4).uniform([4], -1.0, 1.0).unwrap();
        let grad_of = |a: f64, b: f64| {
            let mut tape = Tape::new();
            let w = tape.param(w0.clone());
            let s = tape.sin(w).unwrap();
            let f = tape.sum(s).unwrap();
            let sq = tape.square(w).unwrap();
            let e = tape.exp(sq).unwrap();
            let g = tape.sum(e).unwrap();
            let af = tape.scale(f, a).unwrap();
            let bg = tape.scale(g, b).unwrap();
            let root = tape.add(af, bg).unwrap();
            tape.backward(root).unwrap().wrt(w)
        };
        let (a, b) = (1.7, -0.4);
        let combined = grad_of(a, b);
        let gf = grad_of(1.0, 0.0);
        let gg = grad_of(0.0, 1.0);
        for i in 0..4 {
            let expected = a * gf.data()[i] + b * gg.data()[i];
            assert!((combined.data()[i] - expected).abs() < 1e-12);
        }
    }
}
