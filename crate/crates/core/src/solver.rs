//! Iterative solvers mapping `(x⁰, observations)` to a reconstructed state.
//!
//! The trainable solver runs `K` iterations of
//!
//! ```text
//! h, c ← ConvLSTM(∇ₓU(xᵏ), h, c)
//! xᵏ⁺¹ ← xᵏ − L(h)
//! ```
//!
//! with `L` a 1×1 convolution from the hidden channels back to the state
//! channels, zero-initialized so a fresh solver is the identity. The gradient
//! fed to the cell is the exact cost gradient taken on the same tape, which
//! keeps the whole `K`-step unroll differentiable with respect to every
//! parameter, including those inside the cost itself.
//!
//! A parameter-free plain gradient-descent solver shares the loop and serves
//! as the convergence oracle on quadratic configurations.

use ndarray::{Array3, ArrayD, IxDyn};
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::cost::{CostGraph, CostParams, VariationalCostConfig};
use crate::error::{Error, Result};
use crate::params::{ConvNodes, ConvParams, ParamVisit};
use crate::prior::PriorConfig;
use crate::state::{pack_state, unpack_state, ObservationSet, SshState, State, StateKind};

/// Which update rule drives the iteration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SolverKind {
    /// Trainable convolutional-LSTM update.
    Lstm,
    /// `x ← x − step · ∇U(x)`.
    PlainGd { step: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    pub kind: SolverKind,
    /// Unrolled iteration count `K`.
    pub n_iterations: usize,
    /// Hidden/cell channel count of the LSTM cell.
    pub lstm_hidden: usize,
    /// Spatial extent of the gates convolution.
    pub lstm_kernel: (usize, usize),
    /// Standardize the cost gradient to unit root-mean-square before the
    /// update consumes it; off by default (the raw gradient is used).
    pub normalize_gradient: bool,
    /// Iteration count at inference when it should differ from training.
    pub inference_iterations: Option<usize>,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            kind: SolverKind::Lstm,
            n_iterations: 15,
            lstm_hidden: 150,
            lstm_kernel: (3, 3),
            normalize_gradient: false,
            inference_iterations: None,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lstm_hidden == 0 {
            return Err(Error::Config("lstm_hidden must be >= 1".into()));
        }
        let (kh, kw) = self.lstm_kernel;
        if kh % 2 == 0 || kw % 2 == 0 || kh == 0 || kw == 0 {
            return Err(Error::Config(format!("lstm_kernel must be odd, got {kh}x{kw}")));
        }
        if let SolverKind::PlainGd { step } = self.kind {
            if !step.is_finite() || step <= 0.0 {
                return Err(Error::Config(format!("plain_gd step must be finite and positive, got {step}")));
            }
        }
        Ok(())
    }

    pub fn run_iterations(&self, training: bool) -> usize {
        if training {
            self.n_iterations
        } else {
            self.inference_iterations.unwrap_or(self.n_iterations)
        }
    }
}

/// Trainable pieces of the LSTM solver.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmParams {
    /// All four gates stacked: `(4·hidden, state_channels + hidden, kh, kw)`,
    /// gate order input | forget | candidate | output along the first axis.
    pub gates: ConvParams,
    /// Update map `L`: `(state_channels, hidden, 1, 1)`, zero-initialized so
    /// the fresh solver leaves the state untouched.
    pub out: ConvParams,
}

impl LstmParams {
    pub fn init(state_channels: usize, cfg: &SolverConfig, rng: &mut rand_chacha::ChaCha12Rng) -> Result<Self> {
        cfg.validate()?;
        let h = cfg.lstm_hidden;
        let (kh, kw) = cfg.lstm_kernel;
        let mut gates = ConvParams::glorot2d(4 * h, state_channels + h, kh, kw, rng);
        // Forget-gate bias starts at +1 so early training keeps cell memory.
        gates.b.as_slice_mut().expect("bias is contiguous")[h..2 * h].fill(1.0);
        Ok(LstmParams { gates, out: ConvParams::zeros2d(state_channels, h, 1, 1) })
    }

    pub fn zeros(state_channels: usize, cfg: &SolverConfig) -> Result<Self> {
        cfg.validate()?;
        let h = cfg.lstm_hidden;
        let (kh, kw) = cfg.lstm_kernel;
        Ok(LstmParams {
            gates: ConvParams::zeros2d(4 * h, state_channels + h, kh, kw),
            out: ConvParams::zeros2d(state_channels, h, 1, 1),
        })
    }

    pub fn bind(&self, t: &mut Tape, trainable: bool) -> LstmNodes {
        LstmNodes { gates: self.gates.bind(t, trainable), out: self.out.bind(t, trainable) }
    }

    pub fn hidden(&self) -> usize {
        self.gates.w.shape()[0] / 4
    }
}

impl ParamVisit for LstmParams {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(&str, &'a ArrayD<f64>)) {
        self.gates.visit(&format!("{prefix}.gates"), f);
        self.out.visit(&format!("{prefix}.out"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut ArrayD<f64>)) {
        self.gates.visit_mut(&format!("{prefix}.gates"), f);
        self.out.visit_mut(&format!("{prefix}.out"), f);
    }
}

pub struct LstmNodes {
    pub gates: ConvNodes,
    pub out: ConvNodes,
}

impl LstmNodes {
    /// Leaf handles in [`LstmParams`] visit order.
    pub fn push_vars(&self, out: &mut Vec<Var>) {
        self.gates.push_vars(out);
        self.out.push_vars(out);
    }
}

/// One LSTM solver step on the tape; returns `(x', h', c')`.
pub fn build_lstm_update(
    t: &mut Tape,
    x: Var,
    grad: Var,
    h: Var,
    c: Var,
    nodes: &LstmNodes,
    hidden: usize,
) -> (Var, Var, Var) {
    let inp = t.concat_chans(&[grad, h]);
    let z = nodes.gates.apply2d(t, inp);
    let zi = t.slice_chans(z, 0, hidden);
    let zf = t.slice_chans(z, hidden, hidden);
    let zg = t.slice_chans(z, 2 * hidden, hidden);
    let zo = t.slice_chans(z, 3 * hidden, hidden);
    let gi = t.sigmoid(zi);
    let gf = t.sigmoid(zf);
    let gg = t.tanh(zg);
    let go = t.sigmoid(zo);
    let fc = t.mul(gf, c);
    let ig = t.mul(gi, gg);
    let c2 = t.add(fc, ig);
    let tc = t.tanh(c2);
    let h2 = t.mul(go, tc);
    let step = nodes.out.apply2d(t, h2);
    let x2 = t.sub(x, step);
    (x2, h2, c2)
}

fn build_grad_input(t: &mut Tape, g: Var, normalize: bool) -> Var {
    if !normalize {
        return g;
    }
    let count = t.value(g).len() as f64;
    let ss = t.sum_sq(g);
    let mean_sq = t.affine(ss, 1.0 / count, 1e-12);
    let rms = t.sqrt(mean_sq);
    let inv = t.recip(rms);
    t.scale_by_scalar(g, inv)
}

/// The full `K`-iteration solve on an existing tape. `x0` must be a node with
/// gradients enabled (the per-iteration cost gradient is taken with respect to
/// the running iterate).
pub fn build_solve(
    t: &mut Tape,
    x0: Var,
    graph: &CostGraph,
    cfg: &SolverConfig,
    lstm: Option<&LstmNodes>,
    n_iterations: usize,
) -> Result<Var> {
    cfg.validate()?;
    if !t.requires_grad(x0) {
        return Err(Error::Config("solver initial state must have gradients enabled".into()));
    }
    let mut x = x0;
    match cfg.kind {
        SolverKind::PlainGd { step } => {
            for _ in 0..n_iterations {
                let u = graph.cost(t, x);
                let g = t.grad_full(u, &[x])[0];
                let gin = build_grad_input(t, g, cfg.normalize_gradient);
                let scaled = t.affine(gin, step, 0.0);
                x = t.sub(x, scaled);
            }
        }
        SolverKind::Lstm => {
            let nodes = lstm.ok_or_else(|| Error::Config("lstm solver requires lstm parameters".into()))?;
            let shape = t.value(x).shape().to_vec();
            let hidden_shape = IxDyn(&[cfg.lstm_hidden, shape[1], shape[2]]);
            let mut h = t.constant(ArrayD::zeros(hidden_shape.clone()));
            let mut c = t.constant(ArrayD::zeros(hidden_shape));
            for _ in 0..n_iterations {
                let u = graph.cost(t, x);
                let g = t.grad_full(u, &[x])[0];
                let gin = build_grad_input(t, g, cfg.normalize_gradient);
                let (x2, h2, c2) = build_lstm_update(t, x, gin, h, c, nodes, cfg.lstm_hidden);
                x = x2;
                h = h2;
                c = c2;
            }
        }
    }
    Ok(x)
}

/// One plain-array LSTM step (shapes `(C,H,W)` state/grad, `(hidden,H,W)`
/// h/c).
pub fn lstm_update(
    x: &Array3<f64>,
    grad: &Array3<f64>,
    h: &Array3<f64>,
    c: &Array3<f64>,
    params: &LstmParams,
) -> Result<(Array3<f64>, Array3<f64>, Array3<f64>)> {
    let hidden = params.hidden();
    if h.dim().0 != hidden || c.dim() != h.dim() || x.dim() != grad.dim() {
        return Err(Error::dim(
            "lstm_update",
            format!("h/c with {hidden} channels and grad shaped like x"),
            format!("x {:?}, grad {:?}, h {:?}, c {:?}", x.dim(), grad.dim(), h.dim(), c.dim()),
        ));
    }
    let mut t = Tape::new();
    let xv = t.constant(x.clone().into_dyn());
    let gv = t.constant(grad.clone().into_dyn());
    let hv = t.constant(h.clone().into_dyn());
    let cv = t.constant(c.clone().into_dyn());
    let nodes = params.bind(&mut t, false);
    let (x2, h2, c2) = build_lstm_update(&mut t, xv, gv, hv, cv, &nodes, hidden);
    let take = |t: &Tape, v: Var| t.value(v).clone().into_dimensionality().expect("3-d");
    Ok((take(&t, x2), take(&t, h2), take(&t, c2)))
}

/// Full solve on plain arrays with frozen parameters.
pub fn solve(
    x0: &State,
    obs: &ObservationSet,
    cost_params: &CostParams,
    lstm: Option<&LstmParams>,
    cost_cfg: &VariationalCostConfig,
    prior_cfg: &PriorConfig,
    solver_cfg: &SolverConfig,
) -> Result<State> {
    let kind = x0.kind();
    let grid = *x0.grid();
    if kind != cost_cfg.state_kind() {
        return Err(Error::Config(format!(
            "initial state kind {:?} does not match the {:?} formulation",
            kind, cost_cfg.formulation
        )));
    }
    if &grid != obs.grid() {
        return Err(Error::dim(
            "solve",
            format!("{:?}", obs.grid().shape()),
            format!("{:?}", grid.shape()),
        ));
    }
    let mut t = Tape::new();
    let x0v = t.leaf(pack_state(x0).into_dyn(), true);
    let graph = CostGraph::new(&mut t, obs, cost_params, cost_cfg, prior_cfg, false)?;
    let lstm_nodes = lstm.map(|p| p.bind(&mut t, false));
    let k = solver_cfg.run_iterations(false);
    let out = build_solve(&mut t, x0v, &graph, solver_cfg, lstm_nodes.as_ref(), k)?;
    let packed: Array3<f64> = t
        .value(out)
        .clone()
        .into_dimensionality()
        .expect("solver output keeps the packed state shape");
    unpack_state(&packed, kind, grid)
}

/// The initial iterate: coarse component from the interpolated product, zero
/// anomalies, SST from the observations where the formulation carries it.
pub fn default_init(obs: &ObservationSet, kind: StateKind) -> Result<State> {
    let grid = *obs.grid();
    let zero = crate::grid::SpaceTimeField::zeros(grid);
    let ssh = SshState::new(obs.ssh_coarse.clone(), zero.clone(), zero)?;
    match kind {
        StateKind::SshOnly => Ok(State::SshOnly(ssh)),
        StateKind::SshSst => {
            let sst = obs.sst.clone().ok_or_else(|| {
                Error::Config("the ssh_sst formulation needs SST observations for its initial state".into())
            })?;
            Ok(State::SshSst(crate::state::MultimodalState::new(ssh, sst)?))
        }
    }
}
