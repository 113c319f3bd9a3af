//! Reverse-mode automatic differentiation on a tape.
//!
//! Every operation appends a node holding its eagerly evaluated value.
//! [`Tape::grad`] walks the tape backwards and *emits the adjoint computation
//! as new tape nodes*, so a gradient is itself a differentiable tape value and
//! derivatives of any order come out exact. This is what lets training
//! differentiate through the inner cost gradient of an unrolled iterative
//! solver.
//!
//! The primitive set is closed under differentiation: each convolution comes
//! as a triple (forward, input-adjoint, kernel-adjoint) whose members have
//! adjoints expressible within the triple; pooling/upsampling come as mutually
//! adjoint pairs; Fourier multipliers with even real symbols are self-adjoint.
//!
//! Nodes that cannot reach a differentiable leaf are pruned during the
//! backward sweep, so constants cost nothing at gradient time.

use std::rc::Rc;

use ndarray::{Array2, ArrayD, Axis, IxDyn};

use crate::conv;
use crate::spectral;

/// Handle to a tape node.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

impl Var {
    pub fn id(&self) -> usize {
        self.0
    }
}

#[derive(Clone)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Neg(Var),
    Mul(Var, Var),
    /// `mul * x + add`, elementwise with constants.
    Affine(Var, f64, f64),
    /// Tensor times 0-d scalar node.
    ScaleByScalar(Var, Var),
    Exp(Var),
    Tanh(Var),
    Sigmoid(Var),
    Relu(Var),
    Sqrt(Var),
    Recip(Var),
    Sum(Var),
    BroadcastTo(Var, Vec<usize>),
    SumTrailing(Var),
    BroadcastTrailing(Var, Vec<usize>),
    Conv2d { x: Var, k: Var },
    Conv2dXVjp { g: Var, k: Var },
    Conv2dKVjp { x: Var, g: Var, kh: usize, kw: usize },
    Conv3d { x: Var, k: Var },
    Conv3dXVjp { g: Var, k: Var },
    Conv3dKVjp { x: Var, g: Var, kt: usize, kh: usize, kw: usize },
    AvgPool2(Var),
    AvgPool2T(Var),
    UpBilinear2(Var),
    UpBilinear2T(Var),
    SliceChans(Var, usize, usize),
    PadChans(Var, usize, usize),
    ConcatChans(Vec<Var>),
    Reshape(Var, Vec<usize>),
    FourierMul(Var, Rc<Array2<f64>>),
    GradY(Var),
    GradYT(Var),
    GradX(Var),
    GradXT(Var),
    Laplacian5(Var),
}

impl Op {
    fn for_each_input(&self, f: &mut dyn FnMut(Var)) {
        match self {
            Op::Leaf => {}
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::ScaleByScalar(a, b) => {
                f(*a);
                f(*b);
            }
            Op::Neg(a)
            | Op::Affine(a, _, _)
            | Op::Exp(a)
            | Op::Tanh(a)
            | Op::Sigmoid(a)
            | Op::Relu(a)
            | Op::Sqrt(a)
            | Op::Recip(a)
            | Op::Sum(a)
            | Op::BroadcastTo(a, _)
            | Op::SumTrailing(a)
            | Op::BroadcastTrailing(a, _)
            | Op::AvgPool2(a)
            | Op::AvgPool2T(a)
            | Op::UpBilinear2(a)
            | Op::UpBilinear2T(a)
            | Op::SliceChans(a, _, _)
            | Op::PadChans(a, _, _)
            | Op::Reshape(a, _)
            | Op::FourierMul(a, _)
            | Op::GradY(a)
            | Op::GradYT(a)
            | Op::GradX(a)
            | Op::GradXT(a)
            | Op::Laplacian5(a) => f(*a),
            Op::Conv2d { x: a, k: b }
            | Op::Conv2dXVjp { g: a, k: b }
            | Op::Conv2dKVjp { x: a, g: b, .. }
            | Op::Conv3d { x: a, k: b }
            | Op::Conv3dXVjp { g: a, k: b }
            | Op::Conv3dKVjp { x: a, g: b, .. } => {
                f(*a);
                f(*b);
            }
            Op::ConcatChans(vs) => {
                for v in vs {
                    f(*v);
                }
            }
        }
    }
}

struct Node {
    value: ArrayD<f64>,
    op: Op,
    requires_grad: bool,
}

/// Append-only computation tape.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    /// Scratch for [`Tape::grad`]: which nodes lie between the differentiation
    /// roots and the target of the sweep in progress.
    span: Vec<bool>,
}

fn as3(v: &ArrayD<f64>) -> ndarray::ArrayView3<'_, f64> {
    v.view().into_dimensionality().expect("expected 3-d value")
}

fn as4(v: &ArrayD<f64>) -> ndarray::ArrayView4<'_, f64> {
    v.view().into_dimensionality().expect("expected 4-d value")
}

fn as5(v: &ArrayD<f64>) -> ndarray::ArrayView5<'_, f64> {
    v.view().into_dimensionality().expect("expected 5-d value")
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

    pub fn value(&self, v: Var) -> &ArrayD<f64> {
        &self.nodes[v.0].value
    }

    pub fn value_scalar(&self, v: Var) -> f64 {
        let val = self.value(v);
        assert_eq!(val.ndim(), 0, "value_scalar on non-scalar node");
        *val.first().expect("0-d array has one element")
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// New differentiable or constant leaf.
    pub fn leaf(&mut self, value: ArrayD<f64>, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op: Op::Leaf, requires_grad });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: ArrayD<f64>) -> Var {
        self.leaf(value, false)
    }

    pub fn scalar(&mut self, v: f64) -> Var {
        self.constant(ArrayD::from_elem(IxDyn(&[]), v))
    }

    fn push(&mut self, op: Op) -> Var {
        let value = self.eval(&op);
        let requires_grad = self.parents(&op).iter().any(|p| self.nodes[p.0].requires_grad);
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn parents(&self, op: &Op) -> Vec<Var> {
        match op {
            Op::Leaf => vec![],
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::ScaleByScalar(a, b) => vec![*a, *b],
            Op::Neg(a)
            | Op::Affine(a, _, _)
            | Op::Exp(a)
            | Op::Tanh(a)
            | Op::Sigmoid(a)
            | Op::Relu(a)
            | Op::Sqrt(a)
            | Op::Recip(a)
            | Op::Sum(a)
            | Op::BroadcastTo(a, _)
            | Op::SumTrailing(a)
            | Op::BroadcastTrailing(a, _)
            | Op::AvgPool2(a)
            | Op::AvgPool2T(a)
            | Op::UpBilinear2(a)
            | Op::UpBilinear2T(a)
            | Op::SliceChans(a, _, _)
            | Op::PadChans(a, _, _)
            | Op::Reshape(a, _)
            | Op::FourierMul(a, _)
            | Op::GradY(a)
            | Op::GradYT(a)
            | Op::GradX(a)
            | Op::GradXT(a)
            | Op::Laplacian5(a) => vec![*a],
            Op::Conv2d { x, k } => vec![*x, *k],
            Op::Conv2dXVjp { g, k } => vec![*g, *k],
            Op::Conv2dKVjp { x, g, .. } => vec![*x, *g],
            Op::Conv3d { x, k } => vec![*x, *k],
            Op::Conv3dXVjp { g, k } => vec![*g, *k],
            Op::Conv3dKVjp { x, g, .. } => vec![*x, *g],
            Op::ConcatChans(vs) => vs.clone(),
        }
    }

    fn eval(&self, op: &Op) -> ArrayD<f64> {
        let v = |x: &Var| &self.nodes[x.0].value;
        match op {
            Op::Leaf => unreachable!("leaves carry their value"),
            Op::Add(a, b) => {
                assert_eq!(v(a).shape(), v(b).shape(), "Add shape mismatch");
                v(a) + v(b)
            }
            Op::Sub(a, b) => {
                assert_eq!(v(a).shape(), v(b).shape(), "Sub shape mismatch");
                v(a) - v(b)
            }
            Op::Neg(a) => v(a).map(|x| -x),
            Op::Mul(a, b) => {
                assert_eq!(v(a).shape(), v(b).shape(), "Mul shape mismatch");
                v(a) * v(b)
            }
            Op::Affine(a, m, c) => v(a).map(|x| m * x + c),
            Op::ScaleByScalar(a, s) => {
                assert_eq!(v(s).ndim(), 0, "ScaleByScalar needs 0-d scalar");
                let sv = *v(s).first().unwrap();
                v(a).map(|x| x * sv)
            }
            Op::Exp(a) => v(a).map(|x| x.exp()),
            Op::Tanh(a) => v(a).map(|x| x.tanh()),
            Op::Sigmoid(a) => v(a).map(|x| 1.0 / (1.0 + (-x).exp())),
            Op::Relu(a) => v(a).map(|x| x.max(0.0)),
            Op::Sqrt(a) => v(a).map(|x| x.sqrt()),
            Op::Recip(a) => v(a).map(|x| 1.0 / x),
            Op::Sum(a) => ArrayD::from_elem(IxDyn(&[]), v(a).sum()),
            Op::BroadcastTo(a, shape) => {
                assert_eq!(v(a).ndim(), 0, "BroadcastTo needs 0-d input");
                ArrayD::from_elem(IxDyn(shape), *v(a).first().unwrap())
            }
            Op::SumTrailing(a) => conv::sum_trailing(&v(a).view()).into_dyn(),
            Op::BroadcastTrailing(a, shape) => {
                let src = v(a);
                assert_eq!(src.ndim(), 1, "BroadcastTrailing needs 1-d input");
                assert_eq!(src.shape()[0], shape[0], "BroadcastTrailing channel mismatch");
                let mut out = ArrayD::zeros(IxDyn(shape));
                for c in 0..shape[0] {
                    out.index_axis_mut(Axis(0), c).fill(src[[c]]);
                }
                out
            }
            Op::Conv2d { x, k } => conv::conv2d(&as3(v(x)), &as4(v(k))).into_dyn(),
            Op::Conv2dXVjp { g, k } => conv::conv2d_x_vjp(&as3(v(g)), &as4(v(k))).into_dyn(),
            Op::Conv2dKVjp { x, g, kh, kw } => conv::conv2d_k_vjp(&as3(v(x)), &as3(v(g)), *kh, *kw).into_dyn(),
            Op::Conv3d { x, k } => conv::conv3d(&as4(v(x)), &as5(v(k))).into_dyn(),
            Op::Conv3dXVjp { g, k } => conv::conv3d_x_vjp(&as4(v(g)), &as5(v(k))).into_dyn(),
            Op::Conv3dKVjp { x, g, kt, kh, kw } => {
                conv::conv3d_k_vjp(&as4(v(x)), &as4(v(g)), *kt, *kh, *kw).into_dyn()
            }
            Op::AvgPool2(a) => conv::avg_pool2(&as3(v(a))).into_dyn(),
            Op::AvgPool2T(a) => conv::avg_pool2_t(&as3(v(a))).into_dyn(),
            Op::UpBilinear2(a) => conv::up_bilinear2(&as3(v(a))).into_dyn(),
            Op::UpBilinear2T(a) => conv::up_bilinear2_t(&as3(v(a))).into_dyn(),
            Op::SliceChans(a, start, len) => {
                let src = v(a);
                assert!(start + len <= src.shape()[0], "SliceChans out of range");
                src.slice_axis(Axis(0), ndarray::Slice::from(*start..start + len)).to_owned()
            }
            Op::PadChans(a, start, total) => {
                let src = v(a);
                let c = src.shape()[0];
                assert!(start + c <= *total, "PadChans out of range");
                let mut shape = src.shape().to_vec();
                shape[0] = *total;
                let mut out = ArrayD::zeros(IxDyn(&shape));
                out.slice_axis_mut(Axis(0), ndarray::Slice::from(*start..start + c)).assign(src);
                out
            }
            Op::ConcatChans(vs) => {
                assert!(!vs.is_empty(), "ConcatChans needs inputs");
                let views: Vec<_> = vs.iter().map(|x| v(x).view()).collect();
                ndarray::concatenate(Axis(0), &views).expect("compatible trailing shapes")
            }
            Op::Reshape(a, shape) => {
                let src = v(a);
                assert_eq!(src.len(), shape.iter().product::<usize>(), "Reshape length mismatch");
                src.to_owned()
                    .into_shape_with_order(IxDyn(shape))
                    .expect("contiguous reshape")
            }
            Op::FourierMul(a, m) => spectral::apply_multiplier_stack(&as3(v(a)), &m.view()).into_dyn(),
            Op::GradY(a) => conv::grad_y(&as3(v(a))).into_dyn(),
            Op::GradYT(a) => conv::grad_y_t(&as3(v(a))).into_dyn(),
            Op::GradX(a) => conv::grad_x(&as3(v(a))).into_dyn(),
            Op::GradXT(a) => conv::grad_x_t(&as3(v(a))).into_dyn(),
            Op::Laplacian5(a) => conv::laplacian5(&as3(v(a))).into_dyn(),
        }
    }

    // Op constructors.

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.push(Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.push(Op::Sub(a, b))
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.push(Op::Neg(a))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.push(Op::Mul(a, b))
    }

    /// `mul * x + add` with f64 constants.
    pub fn affine(&mut self, a: Var, mul: f64, add: f64) -> Var {
        self.push(Op::Affine(a, mul, add))
    }

    pub fn scale_by_scalar(&mut self, a: Var, s: Var) -> Var {
        self.push(Op::ScaleByScalar(a, s))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.push(Op::Exp(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.push(Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.push(Op::Sigmoid(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.push(Op::Relu(a))
    }

    pub fn sqrt(&mut self, a: Var) -> Var {
        self.push(Op::Sqrt(a))
    }

    pub fn recip(&mut self, a: Var) -> Var {
        self.push(Op::Recip(a))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        self.push(Op::Sum(a))
    }

    pub fn broadcast_to(&mut self, a: Var, shape: &[usize]) -> Var {
        self.push(Op::BroadcastTo(a, shape.to_vec()))
    }

    pub fn sum_trailing(&mut self, a: Var) -> Var {
        self.push(Op::SumTrailing(a))
    }

    pub fn broadcast_trailing(&mut self, a: Var, shape: &[usize]) -> Var {
        self.push(Op::BroadcastTrailing(a, shape.to_vec()))
    }

    pub fn conv2d(&mut self, x: Var, k: Var) -> Var {
        self.push(Op::Conv2d { x, k })
    }

    pub fn conv3d(&mut self, x: Var, k: Var) -> Var {
        self.push(Op::Conv3d { x, k })
    }

    pub fn avg_pool2(&mut self, a: Var) -> Var {
        self.push(Op::AvgPool2(a))
    }

    pub fn up_bilinear2(&mut self, a: Var) -> Var {
        self.push(Op::UpBilinear2(a))
    }

    pub fn slice_chans(&mut self, a: Var, start: usize, len: usize) -> Var {
        self.push(Op::SliceChans(a, start, len))
    }

    pub fn pad_chans(&mut self, a: Var, start: usize, total: usize) -> Var {
        self.push(Op::PadChans(a, start, total))
    }

    pub fn concat_chans(&mut self, vs: &[Var]) -> Var {
        self.push(Op::ConcatChans(vs.to_vec()))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Var {
        self.push(Op::Reshape(a, shape.to_vec()))
    }

    pub fn fourier_mul(&mut self, a: Var, mult: Rc<Array2<f64>>) -> Var {
        self.push(Op::FourierMul(a, mult))
    }

    pub fn grad_y(&mut self, a: Var) -> Var {
        self.push(Op::GradY(a))
    }

    pub fn grad_x(&mut self, a: Var) -> Var {
        self.push(Op::GradX(a))
    }

    pub fn laplacian5(&mut self, a: Var) -> Var {
        self.push(Op::Laplacian5(a))
    }

    // Composite helpers.

    /// Per-channel bias add: `x (C,...) + b (C,)` broadcast over trailing axes.
    pub fn add_chan_bias(&mut self, x: Var, b: Var) -> Var {
        let shape = self.value(x).shape().to_vec();
        let bb = self.broadcast_trailing(b, &shape);
        self.add(x, bb)
    }

    /// `Σ v²`.
    pub fn sum_sq(&mut self, v: Var) -> Var {
        let sq = self.mul(v, v);
        self.sum(sq)
    }

    /// `Σ (a - b)²`.
    pub fn sum_sq_diff(&mut self, a: Var, b: Var) -> Var {
        let d = self.sub(a, b);
        self.sum_sq(d)
    }

    /// Backward sweep: returns adjoint vars for `wrt`, `None` where `y` does
    /// not depend on the leaf. Adjoints are ordinary tape nodes and can be
    /// differentiated again.
    ///
    /// The sweep is confined to nodes lying on a `wrt → y` path, so taking a
    /// gradient with respect to an intermediate node (an unrolled solver
    /// iterate, say) never walks the tape segments behind it.
    pub fn grad(&mut self, y: Var, wrt: &[Var]) -> Vec<Option<Var>> {
        let n = y.0 + 1;
        let mut span = vec![false; n];
        for v in wrt {
            if v.0 < n {
                span[v.0] = true;
            }
        }
        for i in 0..n {
            if span[i] {
                continue;
            }
            let mut hit = false;
            self.nodes[i].op.for_each_input(&mut |a| hit |= span[a.0]);
            span[i] = hit;
        }
        self.span = span;
        let mut adj: Vec<Option<Var>> = vec![None; n];
        if self.nodes[y.0].requires_grad && self.span[y.0] {
            let ones = ArrayD::from_elem(self.nodes[y.0].value.raw_dim(), 1.0);
            let seed = self.constant(ones);
            adj[y.0] = Some(seed);
        }
        for i in (0..n).rev() {
            let Some(g) = adj[i] else { continue };
            if !self.nodes[i].requires_grad {
                continue;
            }
            let op = self.nodes[i].op.clone();
            let out = Var(i);
            match op {
                Op::Leaf => {}
                Op::Add(a, b) => {
                    self.acc(&mut adj, a, g);
                    self.acc(&mut adj, b, g);
                }
                Op::Sub(a, b) => {
                    self.acc(&mut adj, a, g);
                    if self.nodes[b.0].requires_grad {
                        let ng = self.neg(g);
                        self.acc(&mut adj, b, ng);
                    }
                }
                Op::Neg(a) => {
                    if self.nodes[a.0].requires_grad {
                        let ng = self.neg(g);
                        self.acc(&mut adj, a, ng);
                    }
                }
                Op::Mul(a, b) => {
                    if self.nodes[a.0].requires_grad {
                        let da = self.mul(g, b);
                        self.acc(&mut adj, a, da);
                    }
                    if self.nodes[b.0].requires_grad {
                        let db = self.mul(g, a);
                        self.acc(&mut adj, b, db);
                    }
                }
                Op::Affine(a, m, _) => {
                    if self.nodes[a.0].requires_grad {
                        let da = self.affine(g, m, 0.0);
                        self.acc(&mut adj, a, da);
                    }
                }
                Op::ScaleByScalar(a, s) => {
                    if self.nodes[a.0].requires_grad {
                        let da = self.scale_by_scalar(g, s);
                        self.acc(&mut adj, a, da);
                    }
                    if self.nodes[s.0].requires_grad {
                        let prod = self.mul(g, a);
                        let ds = self.sum(prod);
                        self.acc(&mut adj, s, ds);
                    }
                }
                Op::Exp(a) => {
                    if self.nodes[a.0].requires_grad {
                        let da = self.mul(g, out);
                        self.acc(&mut adj, a, da);
                    }
                }
                Op::Tanh(a) => {
                    if self.nodes[a.0].requires_grad {
                        let y2 = self.mul(out, out);
                        let one_m = self.affine(y2, -1.0, 1.0);
                        let da = self.mul(g, one_m);
                        self.acc(&mut adj, a, da);
                    }
                }
                Op::Sigmoid(a) => {
                    if self.nodes[a.0].requires_grad {
                        let one_m = self.affine(out, -1.0, 1.0);
                        let sy = self.mul(out, one_m);
                        let da = self.mul(g, sy);
                        self.acc(&mut adj, a, da);
                    }
                }
                Op::Relu(a) => {
                    if self.nodes[a.0].requires_grad {
                        let step = self.constant(self.nodes[a.0].value.map(|&x| if x > 0.0 { 1.0 } else { 0.0 }));
                        let da = self.mul(g, step);
                        self.acc(&mut adj, a, da);
                    }
                }
                Op::Sqrt(a) => {
                    if self.nodes[a.0].requires_grad {
                        let r = self.recip(out);
                        let half = self.affine(r, 0.5, 0.0);
                        let da = self.mul(g, half);
                        self.acc(&mut adj, a, da);
                    }
                }
                Op::Recip(a) => {
                    if self.nodes[a.0].requires_grad {
                        let y2 = self.mul(out, out);
                        let ny2 = self.neg(y2);
                        let da = self.mul(g, ny2);
                        self.acc(&mut adj, a, da);
                    }
                }
                Op::Sum(a) => {
                    if self.nodes[a.0].requires_grad {
                        let shape = self.nodes[a.0].value.shape().to_vec();
                        let da = self.broadcast_to(g, &shape);
                        self.acc(&mut adj, a, da);
                    }
                }
                Op::BroadcastTo(a, _) => {
                    if self.nodes[a.0].requires_grad {
                        let da = self.sum(g);
                        self.acc(&mut adj, a, da);
                    }
                }
                Op::SumTrailing(a) => {
                    if self.nodes[a.0].requires_grad {
                        let shape = self.nodes[a.0].value.shape().to_vec();
                        let da = self.broadcast_trailing(g, &shape);
                        self.acc(&mut adj, a, da);
                    }
                }
                Op::BroadcastTrailing(a, _) => {
                    if self.nodes[a.0].requires_grad {
                        let da = self.sum_trailing(g);
                        self.acc(&mut adj, a, da);
                    }
                }
                Op::Conv2d { x, k } => {
                    if self.nodes[x.0].requires_grad {
                        let dx = self.push(Op::Conv2dXVjp { g, k });
                        self.acc(&mut adj, x, dx);
                    }
                    if self.nodes[k.0].requires_grad {
                        let ks = self.nodes[k.0].value.shape().to_vec();
                        let dk = self.push(Op::Conv2dKVjp { x, g, kh: ks[2], kw: ks[3] });
                        self.acc(&mut adj, k, dk);
                    }
                }
                Op::Conv2dXVjp { g: gp, k } => {
                    if self.nodes[gp.0].requires_grad {
                        let dg = self.push(Op::Conv2d { x: g, k });
                        self.acc(&mut adj, gp, dg);
                    }
                    if self.nodes[k.0].requires_grad {
                        let ks = self.nodes[k.0].value.shape().to_vec();
                        let dk = self.push(Op::Conv2dKVjp { x: g, g: gp, kh: ks[2], kw: ks[3] });
                        self.acc(&mut adj, k, dk);
                    }
                }
                Op::Conv2dKVjp { x, g: gp, .. } => {
                    if self.nodes[x.0].requires_grad {
                        let dx = self.push(Op::Conv2dXVjp { g: gp, k: g });
                        self.acc(&mut adj, x, dx);
                    }
                    if self.nodes[gp.0].requires_grad {
                        let dg = self.push(Op::Conv2d { x, k: g });
                        self.acc(&mut adj, gp, dg);
                    }
                }
                Op::Conv3d { x, k } => {
                    if self.nodes[x.0].requires_grad {
                        let dx = self.push(Op::Conv3dXVjp { g, k });
                        self.acc(&mut adj, x, dx);
                    }
                    if self.nodes[k.0].requires_grad {
                        let ks = self.nodes[k.0].value.shape().to_vec();
                        let dk = self.push(Op::Conv3dKVjp { x, g, kt: ks[2], kh: ks[3], kw: ks[4] });
                        self.acc(&mut adj, k, dk);
                    }
                }
                Op::Conv3dXVjp { g: gp, k } => {
                    if self.nodes[gp.0].requires_grad {
                        let dg = self.push(Op::Conv3d { x: g, k });
                        self.acc(&mut adj, gp, dg);
                    }
                    if self.nodes[k.0].requires_grad {
                        let ks = self.nodes[k.0].value.shape().to_vec();
                        let dk = self.push(Op::Conv3dKVjp { x: g, g: gp, kt: ks[2], kh: ks[3], kw: ks[4] });
                        self.acc(&mut adj, k, dk);
                    }
                }
                Op::Conv3dKVjp { x, g: gp, .. } => {
                    if self.nodes[x.0].requires_grad {
                        let dx = self.push(Op::Conv3dXVjp { g: gp, k: g });
                        self.acc(&mut adj, x, dx);
                    }
                    if self.nodes[gp.0].requires_grad {
                        let dg = self.push(Op::Conv3d { x, k: g });
                        self.acc(&mut adj, gp, dg);
                    }
                }
                Op::AvgPool2(a) => {
                    if self.nodes[a.0].requires_grad {
                        let da = self.push(Op::AvgPool2T(g));
                        self.acc(&mut adj, a, da);
                    }
                }
                Op::AvgPool2T(a) => {
                    if self.nodes[a.0].requires_grad {
                        let da = self.push(Op::AvgPool2(g));
                        self.acc(&mut adj, a, da);
                    }
                }
                Op::UpBilinear2(a) => {
                    if self.nodes[a.0].requires_grad {
                        let da = self.push(Op::UpBilinear2T(g));
                        self.acc(&mut adj, a, da);
                    }
                }
                Op::UpBilinear2T(a) => {
                    if self.nodes[a.0].requires_grad {
                        let da = self.push(Op::UpBilinear2(g));
                        self.acc(&mut adj, a, da);
                    }
                }
                Op::SliceChans(a, start, _) => {
                    if self.nodes[a.0].requires_grad {
                        let total = self.nodes[a.0].value.shape()[0];
                        let da = self.pad_chans(g, start, total);
                        self.acc(&mut adj, a, da);
                    }
                }
                Op::PadChans(a, start, _) => {
                    if self.nodes[a.0].requires_grad {
                        let len = self.nodes[a.0].value.shape()[0];
                        let da = self.slice_chans(g, start, len);
                        self.acc(&mut adj, a, da);
                    }
                }
                Op::ConcatChans(vs) => {
                    let mut offset = 0;
                    for vpart in vs {
                        let len = self.nodes[vpart.0].value.shape()[0];
                        if self.nodes[vpart.0].requires_grad {
                            let da = self.slice_chans(g, offset, len);
                            self.acc(&mut adj, vpart, da);
                        }
                        offset += len;
                    }
                }
                Op::Reshape(a, _) => {
                    if self.nodes[a.0].requires_grad {
                        let shape = self.nodes[a.0].value.shape().to_vec();
                        let da = self.reshape(g, &shape);
                        self.acc(&mut adj, a, da);
                    }
                }
                Op::FourierMul(a, m) => {
                    if self.nodes[a.0].requires_grad {
                        let da = self.push(Op::FourierMul(g, m));
                        self.acc(&mut adj, a, da);
                    }
                }
                Op::GradY(a) => {
                    if self.nodes[a.0].requires_grad {
                        let da = self.push(Op::GradYT(g));
                        self.acc(&mut adj, a, da);
                    }
                }
                Op::GradYT(a) => {
                    if self.nodes[a.0].requires_grad {
                        let da = self.grad_y(g);
                        self.acc(&mut adj, a, da);
                    }
                }
                Op::GradX(a) => {
                    if self.nodes[a.0].requires_grad {
                        let da = self.push(Op::GradXT(g));
                        self.acc(&mut adj, a, da);
                    }
                }
                Op::GradXT(a) => {
                    if self.nodes[a.0].requires_grad {
                        let da = self.grad_x(g);
                        self.acc(&mut adj, a, da);
                    }
                }
                Op::Laplacian5(a) => {
                    if self.nodes[a.0].requires_grad {
                        let da = self.laplacian5(g);
                        self.acc(&mut adj, a, da);
                    }
                }
            }
        }
        wrt.iter().map(|v| adj.get(v.0).copied().flatten()).collect()
    }

    /// Like [`Tape::grad`] but materializes zeros for unreachable leaves.
    pub fn grad_full(&mut self, y: Var, wrt: &[Var]) -> Vec<Var> {
        let gs = self.grad(y, wrt);
        gs.into_iter()
            .zip(wrt)
            .map(|(g, v)| match g {
                Some(g) => g,
                None => {
                    let zeros = ArrayD::zeros(self.nodes[v.0].value.raw_dim());
                    self.constant(zeros)
                }
            })
            .collect()
    }

    fn acc(&mut self, adj: &mut [Option<Var>], parent: Var, contribution: Var) {
        if !self.nodes[parent.0].requires_grad || !self.span[parent.0] {
            return;
        }
        adj[parent.0] = Some(match adj[parent.0] {
            None => contribution,
            Some(prev) => self.add(prev, contribution),
        });
    }
}
