//! Define-by-run reverse-mode differentiation over dense `f64` matrices.
//!
//! Every value on a [`Tape`] is a 2-D matrix, conventionally
//! `(batch, features)`. Images travel flattened as `(batch, C*H*W)`; the
//! convolution ops carry their own geometry.

use std::cell::RefCell;
use std::collections::HashMap;
use std::ops::{Add, Mul, Neg, Sub};

use ndarray::{Array2, Axis, Zip};

use crate::conv::{col2im, im2col, ConvGeom};
use crate::params::{ParamId, ParamStore};
use crate::Matrix;

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(usize, usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    Shift(usize),
    Exp(usize),
    Ln(usize),
    Tanh(usize),
    Sigmoid(usize),
    Softplus(usize),
    Square(usize),
    Sqrt(usize),
    Relu(usize),
    Clamp(usize, f64, f64),
    Concat(Vec<usize>),
    Slice(usize, usize),
    SumAll(usize),
    SumCols(usize),
    MeanRows(usize),
    Tile(usize, usize),
    GroupLogMeanExp(usize, usize),
    Conv2d {
        input: usize,
        weight: usize,
        bias: usize,
        geom: ConvGeom,
    },
    ConvTranspose2d {
        input: usize,
        weight: usize,
        bias: usize,
        geom: ConvGeom,
    },
}

#[derive(Debug)]
struct Node {
    value: Matrix,
    op: Op,
    needs_grad: bool,
}

/// Records operations for one forward pass.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    params: RefCell<HashMap<ParamId, usize>>,
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let (r, c) = self.shape();
        write!(f, "Var#{}({r}x{c})", self.id)
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Matrix, op: Op, needs_grad: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    fn needs(&self, ids: &[usize]) -> bool {
        let nodes = self.nodes.borrow();
        ids.iter().any(|&i| nodes[i].needs_grad)
    }

    fn unary(&self, a: usize, f: impl Fn(&Matrix) -> Matrix, op: Op) -> Var<'_> {
        let (value, ng) = {
            let nodes = self.nodes.borrow();
            (f(&nodes[a].value), nodes[a].needs_grad)
        };
        self.push(value, op, ng)
    }

    fn binary(
        &self,
        a: usize,
        b: usize,
        f: impl Fn(&Matrix, &Matrix) -> Matrix,
        op: Op,
    ) -> Var<'_> {
        let (value, ng) = {
            let nodes = self.nodes.borrow();
            (
                f(&nodes[a].value, &nodes[b].value),
                nodes[a].needs_grad || nodes[b].needs_grad,
            )
        };
        self.push(value, op, ng)
    }

    /// A value that is not differentiated against.
    pub fn constant(&self, value: Matrix) -> Var<'_> {
        self.push(value, Op::Leaf, false)
    }

    /// A leaf whose gradient is tracked (inputs for saliency, test probes).
    pub fn leaf(&self, value: Matrix) -> Var<'_> {
        self.push(value, Op::Leaf, true)
    }

    /// Leaf bound to a stored parameter. Repeated calls return the same node,
    /// so gradients of a tensor used at several time steps accumulate.
    pub fn param(&self, store: &ParamStore, id: ParamId) -> Var<'_> {
        if let Some(&node) = self.params.borrow().get(&id) {
            return Var {
                tape: self,
                id: node,
            };
        }
        let v = self.leaf(store.get(id).clone());
        self.params.borrow_mut().insert(id, v.id);
        v
    }

    /// Column-wise concatenation.
    pub fn concat<'t>(&'t self, parts: &[Var<'t>]) -> Var<'t> {
        assert!(!parts.is_empty(), "concat of zero parts");
        let ids: Vec<usize> = parts.iter().map(|p| p.id).collect();
        let value = {
            let nodes = self.nodes.borrow();
            let rows = nodes[ids[0]].value.nrows();
            let cols: usize = ids.iter().map(|&i| nodes[i].value.ncols()).sum();
            let mut out = Array2::zeros((rows, cols));
            let mut at = 0;
            for &i in &ids {
                let v = &nodes[i].value;
                assert_eq!(v.nrows(), rows, "concat row mismatch");
                out.slice_mut(ndarray::s![.., at..at + v.ncols()]).assign(v);
                at += v.ncols();
            }
            out
        };
        let ng = self.needs(&ids);
        self.push(value, Op::Concat(ids), ng)
    }

    /// 2-D convolution. `input` is `(b, Cin*H*W)`, `weight` is
    /// `(Cout, Cin*k*k)`, `bias` is `(1, Cout)`.
    pub fn conv2d<'t>(
        &'t self,
        input: Var<'t>,
        weight: Var<'t>,
        bias: Var<'t>,
        geom: ConvGeom,
    ) -> Var<'t> {
        let value = {
            let nodes = self.nodes.borrow();
            let (x, w, b) = (
                &nodes[input.id].value,
                &nodes[weight.id].value,
                &nodes[bias.id].value,
            );
            assert_eq!(x.ncols(), geom.in_len(), "conv2d input size");
            assert_eq!(
                w.dim(),
                (geom.out_channels, geom.patch_len()),
                "conv2d weight shape"
            );
            let spatial = geom.out_h() * geom.out_w();
            let mut out = Array2::zeros((x.nrows(), geom.out_len()));
            for (r, xrow) in x.rows().into_iter().enumerate() {
                let cols = im2col(xrow.as_slice().expect("contiguous row"), &geom);
                let y = w.dot(&cols);
                let mut orow = out.row_mut(r);
                for c in 0..geom.out_channels {
                    for p in 0..spatial {
                        orow[c * spatial + p] = y[[c, p]] + b[[0, c]];
                    }
                }
            }
            out
        };
        let ng = self.needs(&[input.id, weight.id, bias.id]);
        self.push(
            value,
            Op::Conv2d {
                input: input.id,
                weight: weight.id,
                bias: bias.id,
                geom,
            },
            ng,
        )
    }

    /// Transposed 2-D convolution (adjoint of [`Tape::conv2d`] on the weight).
    ///
    /// `geom` describes the *forward* convolution from the output image back
    /// to the input: `geom.in_*` are the output spatial dims, `in_channels`
    /// the output channels and `out_channels` the input channels.
    /// `weight` is `(Cin, Cout*k*k)` and `bias` is `(1, Cout)`.
    pub fn conv_transpose2d<'t>(
        &'t self,
        input: Var<'t>,
        weight: Var<'t>,
        bias: Var<'t>,
        geom: ConvGeom,
    ) -> Var<'t> {
        let value = {
            let nodes = self.nodes.borrow();
            let (x, w, b) = (
                &nodes[input.id].value,
                &nodes[weight.id].value,
                &nodes[bias.id].value,
            );
            let in_spatial = geom.out_h() * geom.out_w();
            assert_eq!(
                x.ncols(),
                geom.out_channels * in_spatial,
                "conv_transpose2d input size"
            );
            assert_eq!(
                w.dim(),
                (geom.out_channels, geom.patch_len()),
                "conv_transpose2d weight shape"
            );
            let out_spatial = geom.in_h * geom.in_w;
            let mut out = Array2::zeros((x.nrows(), geom.in_len()));
            for (r, xrow) in x.rows().into_iter().enumerate() {
                let xs = xrow
                    .to_owned()
                    .into_shape_with_order((geom.out_channels, in_spatial))
                    .expect("shape");
                let cols = w.t().dot(&xs);
                let mut img = vec![0.0; geom.in_len()];
                col2im(&cols, &geom, &mut img);
                let mut orow = out.row_mut(r);
                for c in 0..geom.in_channels {
                    for p in 0..out_spatial {
                        orow[c * out_spatial + p] = img[c * out_spatial + p] + b[[0, c]];
                    }
                }
            }
            out
        };
        let ng = self.needs(&[input.id, weight.id, bias.id]);
        self.push(
            value,
            Op::ConvTranspose2d {
                input: input.id,
                weight: weight.id,
                bias: bias.id,
                geom,
            },
            ng,
        )
    }

    /// Reverse sweep from a scalar (`1x1`) root.
    pub fn backward(&self, root: Var<'_>) -> Gradients {
        let nodes = self.nodes.borrow();
        assert_eq!(
            nodes[root.id].value.dim(),
            (1, 1),
            "backward root must be a scalar"
        );
        let mut grads: Vec<Option<Matrix>> = vec![None; root.id + 1];
        grads[root.id] = Some(Array2::ones((1, 1)));
        for i in (0..=root.id).rev() {
            if !nodes[i].needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            backprop_node(&nodes, i, &g, &mut grads);
            grads[i] = Some(g);
        }
        let params = self.params.borrow().iter().map(|(&p, &n)| (p, n)).collect();
        Gradients { grads, params }
    }
}

fn acc(grads: &mut [Option<Matrix>], nodes: &[Node], id: usize, g: Matrix) {
    if !nodes[id].needs_grad {
        return;
    }
    match &mut grads[id] {
        Some(existing) => *existing += &g,
        slot @ None => *slot = Some(g),
    }
}

/// Sum `g` down to `shape`, undoing row/column broadcasting.
fn reduce_to(g: &Matrix, shape: (usize, usize)) -> Matrix {
    let mut out = g.clone();
    if shape.0 == 1 && out.nrows() != 1 {
        out = out.sum_axis(Axis(0)).insert_axis(Axis(0));
    }
    if shape.1 == 1 && out.ncols() != 1 {
        out = out.sum_axis(Axis(1)).insert_axis(Axis(1));
    }
    out
}

fn bcast(a: &Matrix, b: &Matrix, name: &str) -> (usize, usize) {
    let dim = |x: usize, y: usize| {
        if x == y || y == 1 {
            x
        } else if x == 1 {
            y
        } else {
            panic!(
                "{name}: incompatible shapes {:?} and {:?}",
                a.dim(),
                b.dim()
            )
        }
    };
    (dim(a.nrows(), b.nrows()), dim(a.ncols(), b.ncols()))
}

fn backprop_node(nodes: &[Node], i: usize, g: &Matrix, grads: &mut [Option<Matrix>]) {
    let out = &nodes[i].value;
    match &nodes[i].op {
        Op::Leaf => {}
        Op::MatMul(a, b) => {
            let (va, vb) = (&nodes[*a].value, &nodes[*b].value);
            if nodes[*a].needs_grad {
                acc(grads, nodes, *a, g.dot(&vb.t()));
            }
            if nodes[*b].needs_grad {
                acc(grads, nodes, *b, va.t().dot(g));
            }
        }
        Op::Add(a, b) => {
            acc(grads, nodes, *a, reduce_to(g, nodes[*a].value.dim()));
            acc(grads, nodes, *b, reduce_to(g, nodes[*b].value.dim()));
        }
        Op::Sub(a, b) => {
            acc(grads, nodes, *a, reduce_to(g, nodes[*a].value.dim()));
            acc(grads, nodes, *b, -reduce_to(g, nodes[*b].value.dim()));
        }
        Op::Mul(a, b) => {
            let (va, vb) = (&nodes[*a].value, &nodes[*b].value);
            if nodes[*a].needs_grad {
                acc(grads, nodes, *a, reduce_to(&(g * vb), va.dim()));
            }
            if nodes[*b].needs_grad {
                acc(grads, nodes, *b, reduce_to(&(g * va), vb.dim()));
            }
        }
        Op::Scale(a, c) => acc(grads, nodes, *a, g * *c),
        Op::Shift(a) => acc(grads, nodes, *a, g.clone()),
        Op::Exp(a) => acc(grads, nodes, *a, g * out),
        Op::Ln(a) => acc(grads, nodes, *a, g / &nodes[*a].value),
        Op::Tanh(a) => acc(
            grads,
            nodes,
            *a,
            Zip::from(g)
                .and(out)
                .map_collect(|&g, &y| g * (1.0 - y * y)),
        ),
        Op::Sigmoid(a) => acc(
            grads,
            nodes,
            *a,
            Zip::from(g)
                .and(out)
                .map_collect(|&g, &y| g * y * (1.0 - y)),
        ),
        Op::Softplus(a) => acc(
            grads,
            nodes,
            *a,
            Zip::from(g)
                .and(&nodes[*a].value)
                .map_collect(|&g, &x| g * sigmoid(x)),
        ),
        Op::Square(a) => acc(
            grads,
            nodes,
            *a,
            Zip::from(g)
                .and(&nodes[*a].value)
                .map_collect(|&g, &x| 2.0 * g * x),
        ),
        Op::Sqrt(a) => acc(
            grads,
            nodes,
            *a,
            Zip::from(g).and(out).map_collect(|&g, &y| 0.5 * g / y),
        ),
        Op::Relu(a) => acc(
            grads,
            nodes,
            *a,
            Zip::from(g)
                .and(&nodes[*a].value)
                .map_collect(|&g, &x| if x > 0.0 { g } else { 0.0 }),
        ),
        Op::Clamp(a, lo, hi) => acc(
            grads,
            nodes,
            *a,
            Zip::from(g).and(&nodes[*a].value).map_collect(|&g, &x| {
                if x >= *lo && x <= *hi {
                    g
                } else {
                    0.0
                }
            }),
        ),
        Op::Concat(ids) => {
            let mut at = 0;
            for &p in ids {
                let w = nodes[p].value.ncols();
                acc(
                    grads,
                    nodes,
                    p,
                    g.slice(ndarray::s![.., at..at + w]).to_owned(),
                );
                at += w;
            }
        }
        Op::Slice(a, start) => {
            if nodes[*a].needs_grad {
                let mut ga = Array2::zeros(nodes[*a].value.dim());
                ga.slice_mut(ndarray::s![.., *start..*start + g.ncols()])
                    .assign(g);
                acc(grads, nodes, *a, ga);
            }
        }
        Op::SumAll(a) => acc(
            grads,
            nodes,
            *a,
            Array2::from_elem(nodes[*a].value.dim(), g[[0, 0]]),
        ),
        Op::SumCols(a) => {
            let ga = g
                .broadcast(nodes[*a].value.dim())
                .expect("broadcast")
                .to_owned();
            acc(grads, nodes, *a, ga)
        }
        Op::MeanRows(a) => {
            let dim = nodes[*a].value.dim();
            let ga = (g / dim.0 as f64)
                .broadcast(dim)
                .expect("broadcast")
                .to_owned();
            acc(grads, nodes, *a, ga)
        }
        Op::Tile(a, k) => {
            let rows = nodes[*a].value.nrows();
            let mut ga = Array2::zeros(nodes[*a].value.dim());
            for r in 0..*k {
                ga += &g.slice(ndarray::s![r * rows..(r + 1) * rows, ..]);
            }
            acc(grads, nodes, *a, ga)
        }
        Op::GroupLogMeanExp(a, k) => {
            let va = &nodes[*a].value;
            let rows = out.nrows();
            let mut ga = Array2::zeros(va.dim());
            for r in 0..*k {
                for i in 0..rows {
                    for j in 0..va.ncols() {
                        let w = (va[[r * rows + i, j]] - out[[i, j]]).exp() / *k as f64;
                        ga[[r * rows + i, j]] = g[[i, j]] * w;
                    }
                }
            }
            acc(grads, nodes, *a, ga)
        }
        Op::Conv2d {
            input,
            weight,
            bias,
            geom,
        } => {
            let x = &nodes[*input].value;
            let w = &nodes[*weight].value;
            let spatial = geom.out_h() * geom.out_w();
            let mut gx = Array2::zeros(x.dim());
            let mut gw = Array2::zeros(w.dim());
            let mut gb = Array2::zeros((1, geom.out_channels));
            for r in 0..x.nrows() {
                let gs = g
                    .row(r)
                    .to_owned()
                    .into_shape_with_order((geom.out_channels, spatial))
                    .expect("shape");
                gb += &gs.sum_axis(Axis(1)).insert_axis(Axis(0));
                let cols = im2col(x.row(r).as_slice().expect("contiguous row"), geom);
                if nodes[*weight].needs_grad {
                    gw += &gs.dot(&cols.t());
                }
                if nodes[*input].needs_grad {
                    let gcols = w.t().dot(&gs);
                    let mut img = vec![0.0; geom.in_len()];
                    col2im(&gcols, geom, &mut img);
                    gx.row_mut(r).assign(&ndarray::ArrayView1::from(&img));
                }
            }
            acc(grads, nodes, *input, gx);
            acc(grads, nodes, *weight, gw);
            acc(grads, nodes, *bias, gb);
        }
        Op::ConvTranspose2d {
            input,
            weight,
            bias,
            geom,
        } => {
            let x = &nodes[*input].value;
            let w = &nodes[*weight].value;
            let in_spatial = geom.out_h() * geom.out_w();
            let out_spatial = geom.in_h * geom.in_w;
            let mut gx = Array2::zeros(x.dim());
            let mut gw = Array2::zeros(w.dim());
            let mut gb = Array2::zeros((1, geom.in_channels));
            for r in 0..x.nrows() {
                let grow = g.row(r);
                for c in 0..geom.in_channels {
                    gb[[0, c]] += grow
                        .slice(ndarray::s![c * out_spatial..(c + 1) * out_spatial])
                        .sum();
                }
                let gcols = im2col(grow.as_slice().expect("contiguous row"), geom);
                if nodes[*input].needs_grad {
                    let gxs = w.dot(&gcols);
                    gx.row_mut(r).assign(&ndarray::ArrayView1::from(
                        gxs.as_slice().expect("standard layout"),
                    ));
                }
                if nodes[*weight].needs_grad {
                    let xs = x
                        .row(r)
                        .to_owned()
                        .into_shape_with_order((geom.out_channels, in_spatial))
                        .expect("shape");
                    gw += &xs.dot(&gcols.t());
                }
            }
            acc(grads, nodes, *input, gx);
            acc(grads, nodes, *weight, gw);
            acc(grads, nodes, *bias, gb);
        }
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Result of [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
    params: Vec<(ParamId, usize)>,
}

impl Gradients {
    /// Gradient of the root w.r.t. `v`; `None` when the root does not depend on it.
    pub fn get(&self, v: Var<'_>) -> Option<&Matrix> {
        self.grads.get(v.id).and_then(Option::as_ref)
    }

    /// Gradient w.r.t. `v`, with structural independence reported as exact zeros.
    pub fn wrt(&self, v: Var<'_>) -> Matrix {
        self.get(v)
            .cloned()
            .unwrap_or_else(|| Array2::zeros(v.shape()))
    }

    /// Gradients of every parameter bound on the tape that the root depends on,
    /// ordered by parameter id.
    pub fn params(&self) -> Vec<(ParamId, Matrix)> {
        let mut out: Vec<(ParamId, Matrix)> = self
            .params
            .iter()
            .filter_map(|&(p, n)| {
                self.grads
                    .get(n)
                    .and_then(Option::as_ref)
                    .map(|g| (p, g.clone()))
            })
            .collect();
        out.sort_by_key(|(p, _)| *p);
        out
    }
}

impl<'t> Var<'t> {
    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn value(&self) -> Matrix {
        self.tape.nodes.borrow()[self.id].value.clone()
    }

    /// Runs `f` on the stored value without copying it.
    pub fn with_value<R>(&self, f: impl FnOnce(&Matrix) -> R) -> R {
        f(&self.tape.nodes.borrow()[self.id].value)
    }

    pub fn shape(&self) -> (usize, usize) {
        self.tape.nodes.borrow()[self.id].value.dim()
    }

    pub fn rows(&self) -> usize {
        self.shape().0
    }

    pub fn cols(&self) -> usize {
        self.shape().1
    }

    /// The single entry of a `1x1` value.
    pub fn item(&self) -> f64 {
        self.with_value(|v| {
            assert_eq!(v.dim(), (1, 1), "item() on non-scalar");
            v[[0, 0]]
        })
    }

    pub fn matmul(self, rhs: Var<'t>) -> Var<'t> {
        self.tape.binary(
            self.id,
            rhs.id,
            |a, b| {
                assert_eq!(
                    a.ncols(),
                    b.nrows(),
                    "matmul shapes {:?} x {:?}",
                    a.dim(),
                    b.dim()
                );
                a.dot(b)
            },
            Op::MatMul(self.id, rhs.id),
        )
    }

    pub fn scale(self, c: f64) -> Var<'t> {
        self.tape.unary(self.id, |a| a * c, Op::Scale(self.id, c))
    }

    pub fn shift(self, c: f64) -> Var<'t> {
        self.tape.unary(self.id, |a| a + c, Op::Shift(self.id))
    }

    pub fn exp(self) -> Var<'t> {
        self.tape
            .unary(self.id, |a| a.mapv(f64::exp), Op::Exp(self.id))
    }

    pub fn ln(self) -> Var<'t> {
        self.tape
            .unary(self.id, |a| a.mapv(f64::ln), Op::Ln(self.id))
    }

    pub fn tanh(self) -> Var<'t> {
        self.tape
            .unary(self.id, |a| a.mapv(f64::tanh), Op::Tanh(self.id))
    }

    pub fn sigmoid(self) -> Var<'t> {
        self.tape
            .unary(self.id, |a| a.mapv(sigmoid), Op::Sigmoid(self.id))
    }

    pub fn softplus(self) -> Var<'t> {
        self.tape
            .unary(self.id, |a| a.mapv(softplus), Op::Softplus(self.id))
    }

    /// `log(sigmoid(x))`, computed stably as `-softplus(-x)`.
    pub fn log_sigmoid(self) -> Var<'t> {
        self.scale(-1.0).softplus().scale(-1.0)
    }

    pub fn square(self) -> Var<'t> {
        self.tape
            .unary(self.id, |a| a.mapv(|x| x * x), Op::Square(self.id))
    }

    pub fn sqrt(self) -> Var<'t> {
        self.tape
            .unary(self.id, |a| a.mapv(f64::sqrt), Op::Sqrt(self.id))
    }

    pub fn relu(self) -> Var<'t> {
        self.tape
            .unary(self.id, |a| a.mapv(|x| x.max(0.0)), Op::Relu(self.id))
    }

    pub fn clamp(self, lo: f64, hi: f64) -> Var<'t> {
        self.tape.unary(
            self.id,
            |a| a.mapv(|x| x.clamp(lo, hi)),
            Op::Clamp(self.id, lo, hi),
        )
    }

    /// Columns `start..end`.
    pub fn slice_cols(self, start: usize, end: usize) -> Var<'t> {
        self.tape.unary(
            self.id,
            |a| a.slice(ndarray::s![.., start..end]).to_owned(),
            Op::Slice(self.id, start),
        )
    }

    /// Sum of all entries, as `1x1`.
    pub fn sum(self) -> Var<'t> {
        self.tape.unary(
            self.id,
            |a| Array2::from_elem((1, 1), a.sum()),
            Op::SumAll(self.id),
        )
    }

    /// Mean of all entries, as `1x1`.
    pub fn mean(self) -> Var<'t> {
        let n = self.with_value(|v| v.len()) as f64;
        self.sum().scale(1.0 / n)
    }

    /// Per-row sum, `(r, c) -> (r, 1)`.
    pub fn sum_cols(self) -> Var<'t> {
        self.tape.unary(
            self.id,
            |a| a.sum_axis(Axis(1)).insert_axis(Axis(1)),
            Op::SumCols(self.id),
        )
    }

    /// Column means over rows, `(r, c) -> (1, c)`.
    pub fn mean_rows(self) -> Var<'t> {
        self.tape.unary(
            self.id,
            |a| {
                a.mean_axis(Axis(0))
                    .expect("non-empty")
                    .insert_axis(Axis(0))
            },
            Op::MeanRows(self.id),
        )
    }

    /// Stack `k` copies of the rows: row `r*n + i` of the output is row `i`.
    pub fn tile_rows(self, k: usize) -> Var<'t> {
        self.tape.unary(
            self.id,
            |a| {
                let n = a.nrows();
                Array2::from_shape_fn((n * k, a.ncols()), |(r, c)| a[[r % n, c]])
            },
            Op::Tile(self.id, k),
        )
    }

    /// Inverse of [`Var::tile_rows`] under log-mean-exp: with `k` groups of
    /// `n` rows, output row `i` is `log(mean_r exp(x[r*n + i]))`.
    pub fn group_log_mean_exp(self, k: usize) -> Var<'t> {
        self.tape.unary(
            self.id,
            |a| {
                assert_eq!(a.nrows() % k, 0, "rows not divisible into {k} groups");
                let n = a.nrows() / k;
                Array2::from_shape_fn((n, a.ncols()), |(i, j)| {
                    let m = (0..k)
                        .map(|r| a[[r * n + i, j]])
                        .fold(f64::NEG_INFINITY, f64::max);
                    if m == f64::NEG_INFINITY {
                        return m;
                    }
                    let s: f64 = (0..k).map(|r| (a[[r * n + i, j]] - m).exp()).sum();
                    m + (s / k as f64).ln()
                })
            },
            Op::GroupLogMeanExp(self.id, k),
        )
    }
}

macro_rules! broadcast_binop {
    ($trait:ident, $method:ident, $variant:ident, $op:tt) => {
        impl<'t> $trait for Var<'t> {
            type Output = Var<'t>;
            fn $method(self, rhs: Var<'t>) -> Var<'t> {
                self.tape.binary(
                    self.id,
                    rhs.id,
                    |a, b| {
                        bcast(a, b, stringify!($method));
                        a $op b
                    },
                    Op::$variant(self.id, rhs.id),
                )
            }
        }
    };
}

broadcast_binop!(Add, add, Add, +);
broadcast_binop!(Sub, sub, Sub, -);
broadcast_binop!(Mul, mul, Mul, *);

impl<'t> Add<f64> for Var<'t> {
    type Output = Var<'t>;
    fn add(self, c: f64) -> Var<'t> {
        self.shift(c)
    }
}

impl<'t> Sub<f64> for Var<'t> {
    type Output = Var<'t>;
    fn sub(self, c: f64) -> Var<'t> {
        self.shift(-c)
    }
}

impl<'t> Mul<f64> for Var<'t> {
    type Output = Var<'t>;
    fn mul(self, c: f64) -> Var<'t> {
        self.scale(c)
    }
}

impl<'t> Neg for Var<'t> {
    type Output = Var<'t>;
    fn neg(self) -> Var<'t> {
        self.scale(-1.0)
    }
}
