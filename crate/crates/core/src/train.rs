//! Supervised training of the inversion models.
//!
//! Both model families are trained on windows of observations paired with the
//! true SSH field: the unrolled variational model end to end through its
//! solver iterations, and the direct regression network as a baseline. The
//! loop is plain Adam over the parameter leaves, with shuffled windows,
//! best-epoch selection on a validation metric, and early stopping.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use ndarray::{Array3, ArrayD, Axis, IxDyn, Zip};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::cost::{CostGraph, CostParams, VariationalCostConfig};
use crate::error::{Error, Result};
use crate::grid::{SpaceTimeField, SpaceTimeGrid};
use crate::params::{assign_params, param_map, ParamVisit};
use crate::prior::{build_phi, build_unet_two_scale, phi_apply, PriorConfig, PriorParams, UnetTwoScaleParams};
use crate::solver::{build_solve, default_init, LstmParams, SolverConfig, SolverKind};
use crate::state::{pack_state, reconstruct_ssh, unpack_state, ChannelLayout, MultimodalState, ObservationSet, SshState, State, StateKind};

/// One training window: the observations a model sees and the SSH field it
/// should produce.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowSample {
    pub obs: ObservationSet,
    pub truth_ssh: SpaceTimeField,
}

impl WindowSample {
    pub fn new(obs: ObservationSet, truth_ssh: SpaceTimeField) -> Result<Self> {
        if truth_ssh.grid() != obs.grid() {
            return Err(Error::dim(
                "WindowSample",
                format!("truth on grid {:?}", obs.grid().shape()),
                format!("{:?}", truth_ssh.grid().shape()),
            ));
        }
        Ok(WindowSample { obs, truth_ssh })
    }

    pub fn grid(&self) -> &SpaceTimeGrid {
        self.obs.grid()
    }
}

/// Training and validation windows.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitDataset {
    pub train: Vec<WindowSample>,
    pub val: Vec<WindowSample>,
}

/// What decides the best epoch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionMetric {
    /// Mean squared reconstruction error over the validation windows; lower
    /// is better.
    ValMse,
    /// Anomaly skill score over the validation windows; higher is better.
    ValMu,
}

/// Optimizer and loss settings shared by both model families.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Adam step size. Zero is allowed and leaves the parameters untouched,
    /// which makes dry runs cheap to test.
    pub learning_rate: f64,
    /// Windows per optimizer step; gradients are averaged over the batch.
    pub batch_size: usize,
    /// Weight of the squared reconstruction error.
    pub nu_x: f64,
    /// Weight of the squared error between spatial finite-difference
    /// gradients.
    pub nu_grad_x: f64,
    /// Weight of the prior residual on both the true state and the
    /// reconstruction; ignored by the direct regression model.
    pub nu_phi: f64,
    pub selection: SelectionMetric,
    /// Seeds parameter initialization and the per-epoch shuffle.
    pub seed: u64,
    /// Stop after this many epochs without improvement; `None` disables
    /// early stopping.
    pub patience: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 50,
            learning_rate: 1e-3,
            batch_size: 1,
            nu_x: 1.0,
            nu_grad_x: 10.0,
            nu_phi: 0.1,
            selection: SelectionMetric::ValMse,
            seed: 0,
            patience: Some(15),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("training needs at least one epoch".into()));
        }
        if !self.learning_rate.is_finite() || self.learning_rate < 0.0 {
            return Err(Error::Config(format!(
                "learning rate must be finite and non-negative, got {}",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        for (name, v) in [("nu_x", self.nu_x), ("nu_grad_x", self.nu_grad_x), ("nu_phi", self.nu_phi)] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::Config(format!("{name} must be finite and non-negative, got {v}")));
            }
        }
        if self.patience == Some(0) {
            return Err(Error::Config("patience of 0 would stop before the second epoch; use None to disable".into()));
        }
        Ok(())
    }
}

/// The full variational model: cost, prior, and solver.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct FourDVarNetConfig {
    pub cost: VariationalCostConfig,
    pub prior: PriorConfig,
    pub solver: SolverConfig,
}

/// The direct regression baseline: the same two-scale network mapping stacked
/// observation channels straight to SSH, no solver iterations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DirectUnetConfig {
    pub base_channels: usize,
    pub n_blocks: usize,
    /// Feed the SST frames as extra input channels.
    pub use_sst: bool,
}

impl Default for DirectUnetConfig {
    fn default() -> Self {
        DirectUnetConfig { base_channels: 32, n_blocks: 2, use_sst: true }
    }
}

impl DirectUnetConfig {
    pub fn validate(&self) -> Result<()> {
        // The network body is shared with the prior, and so are its
        // constraints.
        PriorConfig::UnetTwoScale { base_channels: self.base_channels, n_blocks: self.n_blocks }.validate()
    }
}

/// Either trainable model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum ModelConfig {
    #[serde(rename = "fourdvarnet")]
    FourDVarNet(FourDVarNetConfig),
    #[serde(rename = "direct_unet")]
    DirectUnet(DirectUnetConfig),
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        match self {
            ModelConfig::FourDVarNet(c) => {
                c.cost.validate()?;
                c.prior.validate()?;
                c.solver.validate()
            }
            ModelConfig::DirectUnet(c) => c.validate(),
        }
    }

    /// Whether observation windows must carry SST for this model.
    pub fn needs_sst(&self) -> bool {
        match self {
            ModelConfig::FourDVarNet(c) => c.cost.needs_sst(),
            ModelConfig::DirectUnet(c) => c.use_sst,
        }
    }
}

/// Parameter leaves of either model, sized for a fixed window length.
#[derive(Debug, Clone, PartialEq)]
pub enum ModelParams {
    FourDVarNet {
        cost: CostParams,
        /// Present exactly when the solver is the LSTM.
        lstm: Option<LstmParams>,
    },
    DirectUnet(UnetTwoScaleParams),
}

impl ModelParams {
    pub fn init(cfg: &ModelConfig, n_time: usize, rng: &mut ChaCha12Rng) -> Result<Self> {
        cfg.validate()?;
        match cfg {
            ModelConfig::FourDVarNet(c) => {
                let cost = CostParams::init(&c.cost, &c.prior, n_time, rng)?;
                let layout = ChannelLayout::new(c.cost.state_kind(), n_time);
                let lstm = match c.solver.kind {
                    SolverKind::Lstm => Some(LstmParams::init(layout.n_channels(), &c.solver, rng)?),
                    SolverKind::PlainGd { .. } => None,
                };
                Ok(ModelParams::FourDVarNet { cost, lstm })
            }
            ModelConfig::DirectUnet(c) => {
                let c_in = (3 + c.use_sst as usize) * n_time;
                Ok(ModelParams::DirectUnet(UnetTwoScaleParams::init(
                    c_in,
                    n_time,
                    c.base_channels,
                    c.n_blocks,
                    rng,
                )))
            }
        }
    }
}

impl ParamVisit for ModelParams {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(&str, &'a ArrayD<f64>)) {
        match self {
            ModelParams::FourDVarNet { cost, lstm } => {
                cost.visit(&format!("{prefix}.cost"), f);
                if let Some(l) = lstm {
                    l.visit(&format!("{prefix}.solver"), f);
                }
            }
            ModelParams::DirectUnet(p) => p.visit(&format!("{prefix}.unet"), f),
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut ArrayD<f64>)) {
        match self {
            ModelParams::FourDVarNet { cost, lstm } => {
                cost.visit_mut(&format!("{prefix}.cost"), f);
                if let Some(l) = lstm {
                    l.visit_mut(&format!("{prefix}.solver"), f);
                }
            }
            ModelParams::DirectUnet(p) => p.visit_mut(&format!("{prefix}.unet"), f),
        }
    }
}

fn check_model_params(cfg: &ModelConfig, params: &ModelParams) -> Result<()> {
    let ok = matches!(
        (cfg, params),
        (ModelConfig::FourDVarNet(_), ModelParams::FourDVarNet { .. })
            | (ModelConfig::DirectUnet(_), ModelParams::DirectUnet(_))
    );
    if ok {
        Ok(())
    } else {
        Err(Error::Config("model configuration and parameters disagree on the model kind".into()))
    }
}

/// Per-epoch record kept in the checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_mse: f64,
    /// Validation skill score; `None` when the truth has no variance.
    pub val_mu: Option<f64>,
    /// Effective cost weights after this epoch, present when they are
    /// trainable.
    pub lambda1: Option<f64>,
    pub lambda2: Option<f64>,
    pub lambda3: Option<f64>,
    pub gamma: Option<f64>,
}

/// A trained model with everything needed to run and audit it.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub model: ModelConfig,
    pub train: TrainConfig,
    /// The window geometry the parameters are sized for.
    pub window_grid: SpaceTimeGrid,
    pub params: ModelParams,
    pub history: Vec<HistoryEntry>,
    pub best_epoch: usize,
    /// Hash of the dataset manifest the model was fitted on.
    pub manifest_hash: String,
}

impl TrainedModel {
    /// Runs the frozen model on one observation window.
    pub fn reconstruct(&self, obs: &ObservationSet) -> Result<SpaceTimeField> {
        model_reconstruct(&self.model, &self.params, obs, false)
    }

    /// Effective `(λ₁, λ₂, λ₃, γ)` when the cost weights were trainable.
    pub fn trained_weights(&self) -> Option<(f64, f64, Option<f64>, f64)> {
        match (&self.model, &self.params) {
            (ModelConfig::FourDVarNet(c), ModelParams::FourDVarNet { cost, .. }) => {
                cost.weights.as_ref().map(|w| w.effective(&c.cost))
            }
            _ => None,
        }
    }
}

/// Mean squared difference between two fields of the same shape.
pub fn loss_x(recon: &Array3<f64>, truth: &Array3<f64>) -> f64 {
    let n = recon.len() as f64;
    (recon - truth).mapv(|d| d * d).sum() / n
}

/// Mean squared difference between the spatial finite-difference gradients of
/// two fields (both stencil directions, normalized by the field size).
pub fn loss_grad_x(recon: &Array3<f64>, truth: &Array3<f64>) -> f64 {
    let n = recon.len() as f64;
    let dy = crate::conv::grad_y(&recon.view()) - crate::conv::grad_y(&truth.view());
    let dx = crate::conv::grad_x(&recon.view()) - crate::conv::grad_x(&truth.view());
    (dy.mapv(|d| d * d).sum() + dx.mapv(|d| d * d).sum()) / n
}

/// Mean squared prior residual `‖x − Φ(x)‖² / n` of a packed state.
pub fn loss_phi(packed: &Array3<f64>, params: &PriorParams, cfg: &PriorConfig) -> Result<f64> {
    let phi = phi_apply(packed, params, cfg)?;
    let n = packed.len() as f64;
    Ok((packed - &phi).mapv(|d| d * d).sum() / n)
}

/// The packed state a perfect reconstruction would carry: the interpolated
/// product as the coarse component, the masked innovation as the observed
/// anomaly, the true anomaly as the reconstructed one, and the observed SST.
pub fn truth_state_packed(obs: &ObservationSet, truth_ssh: &SpaceTimeField, kind: StateKind) -> Result<Array3<f64>> {
    let grid = *obs.grid();
    if truth_ssh.grid() != &grid {
        return Err(Error::dim(
            "truth_state_packed",
            format!("truth on grid {:?}", grid.shape()),
            format!("{:?}", truth_ssh.grid().shape()),
        ));
    }
    let coarse = obs.ssh_coarse.clone();
    let mask = obs.ssh_mask.to_f64();
    let anomaly_obs = SpaceTimeField::new(grid, (obs.ssh_alongtrack.data() - coarse.data()) * &mask)?;
    let anomaly_rec = SpaceTimeField::new(grid, truth_ssh.data() - coarse.data())?;
    let ssh = SshState::new(coarse, anomaly_obs, anomaly_rec)?;
    let state = match kind {
        StateKind::SshOnly => State::SshOnly(ssh),
        StateKind::SshSst => {
            let sst = obs
                .sst
                .clone()
                .ok_or_else(|| Error::Config("the ssh_sst formulation needs SST observations".into()))?;
            State::SshSst(MultimodalState::new(ssh, sst)?)
        }
    };
    Ok(pack_state(&state))
}

/// Stacks the channels the direct regression network sees:
/// `[coarse | along-track (zero at gaps) | mask | sst?]`, each `T` frames.
pub fn direct_input(obs: &ObservationSet, use_sst: bool) -> Result<Array3<f64>> {
    let mut chans = vec![
        obs.ssh_coarse.data().view(),
        obs.ssh_alongtrack.data().view(),
    ];
    let mask = obs.ssh_mask.to_f64();
    chans.push(mask.view());
    if use_sst {
        let sst = obs.sst.as_ref().ok_or_else(|| {
            Error::Config("the direct model was configured with SST input, but the observation set has none".into())
        })?;
        chans.push(sst.data().view());
    }
    ndarray::concatenate(Axis(0), &chans).map_err(|e| Error::Config(format!("direct input stacking failed: {e}")))
}

/// Runs a frozen model on one observation window and returns the SSH field.
/// `training_iterations` selects the training-time iteration count instead of
/// the inference override.
pub fn model_reconstruct(
    cfg: &ModelConfig,
    params: &ModelParams,
    obs: &ObservationSet,
    training_iterations: bool,
) -> Result<SpaceTimeField> {
    check_model_params(cfg, params)?;
    match (cfg, params) {
        (ModelConfig::FourDVarNet(c), ModelParams::FourDVarNet { cost, lstm }) => {
            let kind = c.cost.state_kind();
            let x0 = default_init(obs, kind)?;
            let mut t = Tape::new();
            let x0v = t.leaf(pack_state(&x0).into_dyn(), true);
            let graph = CostGraph::new(&mut t, obs, cost, &c.cost, &c.prior, false)?;
            let lstm_nodes = lstm.as_ref().map(|p| p.bind(&mut t, false));
            let k = c.solver.run_iterations(training_iterations);
            let out = build_solve(&mut t, x0v, &graph, &c.solver, lstm_nodes.as_ref(), k)?;
            let packed: Array3<f64> = t
                .value(out)
                .clone()
                .into_dimensionality()
                .expect("solver output keeps the packed state shape");
            let state = unpack_state(&packed, kind, *obs.grid())?;
            Ok(reconstruct_ssh(&state))
        }
        (ModelConfig::DirectUnet(c), ModelParams::DirectUnet(p)) => {
            let input = direct_input(obs, c.use_sst)?;
            let mut t = Tape::new();
            let xv = t.constant(input.into_dyn());
            let nodes = p.bind(&mut t, false);
            let out = build_unet_two_scale(&mut t, xv, &nodes);
            let data: Array3<f64> = t
                .value(out)
                .clone()
                .into_dimensionality()
                .expect("network output keeps the frame shape");
            SpaceTimeField::new(*obs.grid(), data)
        }
        _ => unreachable!("check_model_params rejects mismatched kinds"),
    }
}

/// Adam with bias correction. Moment arrays follow the parameter visit order,
/// so one optimizer instance must stay with one parameter struct.
#[derive(Debug, Clone)]
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: u64,
    m: Vec<ArrayD<f64>>,
    v: Vec<ArrayD<f64>>,
}

impl Adam {
    pub fn new(params: &dyn ParamVisit, lr: f64) -> Self {
        let mut m = Vec::new();
        params.visit("", &mut |_, a| m.push(ArrayD::zeros(a.raw_dim())));
        Adam { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, step: 0, m: m.clone(), v: m }
    }

    /// One update step. `grads` must match the visit order and shapes of
    /// `params`.
    pub fn apply(&mut self, params: &mut dyn ParamVisit, grads: &[ArrayD<f64>]) -> Result<()> {
        let Adam { lr, beta1, beta2, eps, step, m, v } = self;
        *step += 1;
        let c1 = 1.0 - beta1.powi(*step as i32);
        let c2 = 1.0 - beta2.powi(*step as i32);
        let mut i = 0usize;
        let mut err = None;
        params.visit_mut("", &mut |name, a| {
            if err.is_some() {
                return;
            }
            let Some(g) = grads.get(i) else {
                err = Some(Error::Config(format!("missing gradient for parameter {name}")));
                return;
            };
            if g.shape() != a.shape() {
                err = Some(Error::dim("Adam::apply", format!("{name} gradient shaped {:?}", a.shape()), format!("{:?}", g.shape())));
                return;
            }
            Zip::from(a)
                .and(g)
                .and(&mut m[i])
                .and(&mut v[i])
                .for_each(|p, &g, m, v| {
                    *m = *beta1 * *m + (1.0 - *beta1) * g;
                    *v = *beta2 * *v + (1.0 - *beta2) * g * g;
                    *p -= *lr * (*m / c1) / ((*v / c2).sqrt() + *eps);
                });
            i += 1;
        });
        if let Some(e) = err {
            return Err(e);
        }
        if i != grads.len() {
            return Err(Error::Config(format!("{} gradients supplied for {} parameters", grads.len(), i)));
        }
        Ok(())
    }
}

/// Index of the smallest value; ties resolve to the earliest entry.
pub fn select_best(scores: &[f64]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, &s) in scores.iter().enumerate() {
        match best {
            Some((_, b)) if s >= b => {}
            _ => best = Some((i, s)),
        }
    }
    best.map(|(i, _)| i)
}

struct SampleLoss {
    total: f64,
    data: f64,
    gradient: f64,
    prior: f64,
}

fn build_fourdvar_loss(
    t: &mut Tape,
    c: &FourDVarNetConfig,
    cost: &CostParams,
    lstm: Option<&LstmParams>,
    sample: &WindowSample,
    cfg: &TrainConfig,
) -> Result<(Var, Var, Var, Option<Var>, Vec<Var>)> {
    let kind = c.cost.state_kind();
    let grid = *sample.grid();
    let graph = CostGraph::new(t, &sample.obs, cost, &c.cost, &c.prior, true)?;
    let lstm_nodes = match (c.solver.kind, lstm) {
        (SolverKind::Lstm, Some(p)) => Some(p.bind(t, true)),
        (SolverKind::Lstm, None) => {
            return Err(Error::Config("the LSTM solver has no parameters to train".into()));
        }
        (SolverKind::PlainGd { .. }, _) => None,
    };
    let mut vars = graph.param_vars();
    if let Some(n) = &lstm_nodes {
        n.push_vars(&mut vars);
    }

    let x0 = default_init(&sample.obs, kind)?;
    let x0v = t.leaf(pack_state(&x0).into_dyn(), true);
    let k = c.solver.run_iterations(true);
    let out = build_solve(t, x0v, &graph, &c.solver, lstm_nodes.as_ref(), k)?;

    let layout = graph.layout();
    let coarse = t.slice_chans(out, layout.coarse().start, grid.n_time);
    let anomaly = t.slice_chans(out, layout.anomaly_rec().start, grid.n_time);
    let recon = t.add(coarse, anomaly);
    let truth = t.constant(sample.truth_ssh.data().clone().into_dyn());
    let n_rec = (grid.n_time * grid.w * grid.w) as f64;

    let lx_sum = t.sum_sq_diff(recon, truth);
    let lx = t.affine(lx_sum, 1.0 / n_rec, 0.0);

    let ry = t.grad_y(recon);
    let ty = t.grad_y(truth);
    let rx = t.grad_x(recon);
    let tx = t.grad_x(truth);
    let gy = t.sum_sq_diff(ry, ty);
    let gx = t.sum_sq_diff(rx, tx);
    let g_sum = t.add(gy, gx);
    let lgx = t.affine(g_sum, 1.0 / n_rec, 0.0);

    let truth_packed = truth_state_packed(&sample.obs, &sample.truth_ssh, kind)?;
    let n_state = truth_packed.len() as f64;
    let xt = t.constant(truth_packed.into_dyn());
    let phi_t = build_phi(t, xt, graph.prior_nodes(), graph.prior_config());
    let res_t = t.sum_sq_diff(xt, phi_t);
    let phi_r = build_phi(t, out, graph.prior_nodes(), graph.prior_config());
    let res_r = t.sum_sq_diff(out, phi_r);
    let res_sum = t.add(res_t, res_r);
    let lphi = t.affine(res_sum, 1.0 / n_state, 0.0);

    let wx = t.affine(lx, cfg.nu_x, 0.0);
    let wg = t.affine(lgx, cfg.nu_grad_x, 0.0);
    let wp = t.affine(lphi, cfg.nu_phi, 0.0);
    let partial = t.add(wx, wg);
    let total = t.add(partial, wp);
    Ok((total, lx, lgx, Some(lphi), vars))
}

fn build_direct_loss(
    t: &mut Tape,
    c: &DirectUnetConfig,
    params: &UnetTwoScaleParams,
    sample: &WindowSample,
    cfg: &TrainConfig,
) -> Result<(Var, Var, Var, Option<Var>, Vec<Var>)> {
    let grid = *sample.grid();
    let input = direct_input(&sample.obs, c.use_sst)?;
    let xv = t.constant(input.into_dyn());
    let nodes = params.bind(t, true);
    let mut vars = Vec::new();
    nodes.push_vars(&mut vars);
    let out = build_unet_two_scale(t, xv, &nodes);

    let truth = t.constant(sample.truth_ssh.data().clone().into_dyn());
    let n = (grid.n_time * grid.w * grid.w) as f64;
    let lx_sum = t.sum_sq_diff(out, truth);
    let lx = t.affine(lx_sum, 1.0 / n, 0.0);

    let ry = t.grad_y(out);
    let ty = t.grad_y(truth);
    let rx = t.grad_x(out);
    let tx = t.grad_x(truth);
    let gy = t.sum_sq_diff(ry, ty);
    let gx = t.sum_sq_diff(rx, tx);
    let g_sum = t.add(gy, gx);
    let lgx = t.affine(g_sum, 1.0 / n, 0.0);

    let wx = t.affine(lx, cfg.nu_x, 0.0);
    let wg = t.affine(lgx, cfg.nu_grad_x, 0.0);
    let total = t.add(wx, wg);
    Ok((total, lx, lgx, None, vars))
}

fn sample_gradients(
    model: &ModelConfig,
    params: &ModelParams,
    sample: &WindowSample,
    cfg: &TrainConfig,
    epoch: usize,
) -> Result<(SampleLoss, Vec<ArrayD<f64>>)> {
    let mut t = Tape::new();
    let (total, lx, lgx, lphi, vars) = match (model, params) {
        (ModelConfig::FourDVarNet(c), ModelParams::FourDVarNet { cost, lstm }) => {
            build_fourdvar_loss(&mut t, c, cost, lstm.as_ref(), sample, cfg)?
        }
        (ModelConfig::DirectUnet(c), ModelParams::DirectUnet(p)) => build_direct_loss(&mut t, c, p, sample, cfg)?,
        _ => unreachable!("check_model_params rejects mismatched kinds"),
    };
    let loss = SampleLoss {
        total: t.value_scalar(total),
        data: t.value_scalar(lx),
        gradient: t.value_scalar(lgx),
        prior: lphi.map(|v| t.value_scalar(v)).unwrap_or(0.0),
    };
    for (term, value) in [
        ("data", loss.data),
        ("gradient", loss.gradient),
        ("prior", loss.prior),
        ("total", loss.total),
    ] {
        if !value.is_finite() {
            return Err(Error::Diverged { epoch, term });
        }
    }
    let gs = t.grad(total, &vars);
    let grads = vars
        .iter()
        .zip(gs)
        .map(|(v, g)| match g {
            Some(gv) => t.value(gv).clone(),
            None => ArrayD::zeros(t.value(*v).raw_dim()),
        })
        .collect();
    Ok((loss, grads))
}

/// Total training objective for one window and its gradient with respect to
/// every parameter leaf, ordered as [`ParamVisit`] walks `params`.
///
/// This is the quantity a single optimizer step consumes. It is public so the
/// gradients can be audited externally, for example against finite
/// differences obtained by perturbing leaves through
/// [`ParamVisit::visit_mut`].
pub fn window_loss_gradients(
    model: &ModelConfig,
    params: &ModelParams,
    sample: &WindowSample,
    cfg: &TrainConfig,
) -> Result<(f64, Vec<ArrayD<f64>>)> {
    check_model_params(model, params)?;
    let (loss, grads) = sample_gradients(model, params, sample, cfg, 0)?;
    Ok((loss.total, grads))
}

fn validate_epoch(model: &ModelConfig, params: &ModelParams, val: &[WindowSample]) -> Result<(f64, Option<f64>)> {
    let mut err_sq = 0.0;
    let mut truth_sum = 0.0;
    let mut truth_sq = 0.0;
    let mut count = 0.0;
    for sample in val {
        let recon = model_reconstruct(model, params, &sample.obs, true)?;
        let truth = sample.truth_ssh.data();
        err_sq += (recon.data() - truth).mapv(|d| d * d).sum();
        truth_sum += truth.sum();
        truth_sq += truth.mapv(|v| v * v).sum();
        count += truth.len() as f64;
    }
    let val_mse = err_sq / count;
    let truth_var = truth_sq / count - (truth_sum / count).powi(2);
    let val_mu = if truth_var > 0.0 {
        Some(1.0 - (val_mse.sqrt() / truth_var.sqrt()))
    } else {
        None
    };
    Ok((val_mse, val_mu))
}

/// Fits a model to the training windows, selecting the epoch that scores best
/// on validation. `init` reuses existing parameters (for warm starts); `None`
/// draws fresh ones from the configured seed.
pub fn train(
    dataset: &SplitDataset,
    model_cfg: &ModelConfig,
    init: Option<ModelParams>,
    cfg: &TrainConfig,
    manifest_hash: &str,
) -> Result<TrainedModel> {
    cfg.validate()?;
    model_cfg.validate()?;
    if dataset.train.is_empty() || dataset.val.is_empty() {
        return Err(Error::Config("training needs at least one train window and one validation window".into()));
    }
    let grid = *dataset.train[0].grid();
    for s in dataset.train.iter().chain(&dataset.val) {
        if s.grid() != &grid {
            return Err(Error::dim("train", format!("{:?}", grid.shape()), format!("{:?}", s.grid().shape())));
        }
    }

    let mut rng = ChaCha12Rng::seed_from_u64(cfg.seed);
    let mut params = match init {
        Some(p) => {
            check_model_params(model_cfg, &p)?;
            p
        }
        None => ModelParams::init(model_cfg, grid.n_time, &mut rng)?,
    };
    let mut opt = Adam::new(&params, cfg.learning_rate);

    let n_train = dataset.train.len();
    let mut history: Vec<HistoryEntry> = Vec::new();
    let mut scores: Vec<f64> = Vec::new();
    let mut best_epoch = 0usize;
    let mut best_map = param_map(&params);

    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..n_train).collect();
        let mut shuffle_rng = ChaCha12Rng::seed_from_u64(cfg.seed);
        shuffle_rng.set_stream(epoch as u64 + 1);
        order.shuffle(&mut shuffle_rng);

        let mut epoch_loss = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let mut acc: Vec<ArrayD<f64>> = Vec::new();
            params.visit("", &mut |_, a| acc.push(ArrayD::zeros(a.raw_dim())));
            for &idx in batch {
                let (loss, grads) = sample_gradients(model_cfg, &params, &dataset.train[idx], cfg, epoch)?;
                for (a, g) in acc.iter_mut().zip(&grads) {
                    *a += g;
                }
                epoch_loss += loss.total;
            }
            let scale = 1.0 / batch.len() as f64;
            for a in &mut acc {
                *a *= scale;
            }
            opt.apply(&mut params, &acc)?;
        }
        let train_loss = epoch_loss / n_train as f64;

        let (val_mse, val_mu) = validate_epoch(model_cfg, &params, &dataset.val)?;
        if !val_mse.is_finite() {
            return Err(Error::Diverged { epoch, term: "validation" });
        }

        let weights = match (&model_cfg, &params) {
            (ModelConfig::FourDVarNet(c), ModelParams::FourDVarNet { cost, .. }) => {
                cost.weights.as_ref().map(|w| w.effective(&c.cost))
            }
            _ => None,
        };
        history.push(HistoryEntry {
            epoch,
            train_loss,
            val_mse,
            val_mu,
            lambda1: weights.map(|w| w.0),
            lambda2: weights.map(|w| w.1),
            lambda3: weights.and_then(|w| w.2),
            gamma: weights.map(|w| w.3),
        });

        let score = match cfg.selection {
            SelectionMetric::ValMse => val_mse,
            SelectionMetric::ValMu => match val_mu {
                Some(mu) => -mu,
                None => {
                    return Err(Error::UndefinedMetric(
                        "validation skill score is undefined on constant truth".into(),
                    ));
                }
            },
        };
        scores.push(score);
        let best = select_best(&scores).expect("scores is non-empty");
        if best == epoch {
            best_epoch = epoch;
            best_map = param_map(&params);
        } else if let Some(p) = cfg.patience {
            if epoch - best >= p {
                log::info!("stopping early at epoch {epoch}: no improvement since epoch {best}");
                break;
            }
        }
    }

    assign_params(&mut params, &best_map)?;
    Ok(TrainedModel {
        model: *model_cfg,
        train: *cfg,
        window_grid: grid,
        params,
        history,
        best_epoch,
        manifest_hash: manifest_hash.to_string(),
    })
}

const CHECKPOINT_MAGIC: [u8; 4] = *b"VASM";
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct ParamRecord {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct CheckpointHeader {
    model: ModelConfig,
    train: TrainConfig,
    window_grid: SpaceTimeGrid,
    history: Vec<HistoryEntry>,
    best_epoch: usize,
    manifest_hash: String,
    params: Vec<ParamRecord>,
}

/// Writes a checkpoint: a JSON header (configs, geometry, history, parameter
/// index) followed by the raw little-endian parameter values in name order.
/// The roundtrip through [`load_model`] is bitwise.
pub fn save_model(path: &Path, model: &TrainedModel) -> Result<()> {
    let map = param_map(&model.params);
    let header = CheckpointHeader {
        model: model.model,
        train: model.train,
        window_grid: model.window_grid,
        history: model.history.clone(),
        best_epoch: model.best_epoch,
        manifest_hash: model.manifest_hash.clone(),
        params: map
            .iter()
            .map(|(name, a)| ParamRecord { name: name.clone(), shape: a.shape().to_vec() })
            .collect(),
    };
    let header_bytes = serde_json::to_vec(&header)?;
    let mut f = BufWriter::new(File::create(path)?);
    f.write_all(&CHECKPOINT_MAGIC)?;
    f.write_u32::<LittleEndian>(CHECKPOINT_VERSION)?;
    f.write_u64::<LittleEndian>(header_bytes.len() as u64)?;
    f.write_all(&header_bytes)?;
    for a in map.values() {
        for &x in a.iter() {
            f.write_f64::<LittleEndian>(x)?;
        }
    }
    f.flush()?;
    Ok(())
}

/// Reads a checkpoint written by [`save_model`].
pub fn load_model(path: &Path) -> Result<TrainedModel> {
    let mut f = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    f.read_exact(&mut magic)?;
    if magic != CHECKPOINT_MAGIC {
        return Err(Error::Format {
            path: path.display().to_string(),
            reason: "not a model checkpoint".into(),
        });
    }
    let version = f.read_u32::<LittleEndian>()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::CheckpointVersion { found: version, expected: CHECKPOINT_VERSION });
    }
    let header_len = f.read_u64::<LittleEndian>()? as usize;
    let mut header_bytes = vec![0u8; header_len];
    f.read_exact(&mut header_bytes)?;
    let header: CheckpointHeader = serde_json::from_slice(&header_bytes)?;

    let mut map = BTreeMap::new();
    for rec in &header.params {
        let len: usize = rec.shape.iter().product();
        let mut data = vec![0.0f64; len];
        f.read_f64_into::<LittleEndian>(&mut data)?;
        let a = ArrayD::from_shape_vec(IxDyn(&rec.shape), data).map_err(|_| Error::Format {
            path: path.display().to_string(),
            reason: format!("parameter {} does not match its declared shape", rec.name),
        })?;
        map.insert(rec.name.clone(), a);
    }

    let mut rng = ChaCha12Rng::seed_from_u64(0);
    let mut params = ModelParams::init(&header.model, header.window_grid.n_time, &mut rng)?;
    assign_params(&mut params, &map)?;
    Ok(TrainedModel {
        model: header.model,
        train: header.train,
        window_grid: header.window_grid,
        params,
        history: header.history,
        best_epoch: header.best_epoch,
        manifest_hash: header.manifest_hash,
    })
}
