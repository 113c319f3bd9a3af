//! Assembly of the full variational cost
//!
//! ```text
//! U(x) = λ₁ ‖ȳ − x̄‖²  +  λ₂ ‖H(y) ⊙ (y − x̄ − δ°x)‖²
//!      [ + λ₃ ‖y_SST − x_SST‖² ]              (ssh_sst formulation)
//!      [ + ‖G¹(y_SST) − G²(x)‖² ]              (learned multimodal term)
//!      [ + ‖F¹ y_SST − F² (−Δ)^{1/2} x̂‖² ]     (fixed SQG coupling term)
//!        + γ ‖x − Φ(x)‖²
//! ```
//!
//! and its exact gradient with respect to the packed state. The learned
//! multimodal and SQG terms enter unweighted; their scale is carried by the
//! operators themselves. All sums are plain sums over the window, the weights
//! absorb any normalization.
//!
//! [`CostGraph`] builds the cost once on a tape with the observations frozen
//! as constants, so an iterative solver can re-evaluate it (and take exact
//! gradients through it) at every iterate without re-packing the inputs. The
//! `G¹` feature stack of the multimodal term depends only on the SST
//! observations, so it is built a single time per window and shared across
//! solver iterations.

use std::rc::Rc;

use ndarray::{Array2, ArrayD, IxDyn};
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::obs_ops::{
    build_g1_features, build_g2_features, G2Input, MmNodes, MmParams, MultimodalOpConfig,
    SqgConfig, SqgMultipliers,
};
use crate::params::ParamVisit;
use crate::prior::{build_phi, PriorConfig, PriorNodes, PriorParams};
use crate::state::{pack_state, unpack_state, ChannelLayout, ObservationSet, State, StateKind};

/// Which state-space formulation the cost operates on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Formulation {
    /// Three SSH components: coarse, observed anomaly, reconstructed anomaly.
    SshOnly,
    /// The SSH components plus an SST state block with a direct data term.
    SshSst,
}

impl Formulation {
    pub fn state_kind(&self) -> StateKind {
        match self {
            Formulation::SshOnly => StateKind::SshOnly,
            Formulation::SshSst => StateKind::SshSst,
        }
    }
}

/// Optional SST-synergy observation term.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MmTermConfig {
    /// Learned convolutional operators on both sides.
    Multimodal(MultimodalOpConfig),
    /// Fixed band-pass filters with the half-Laplacian coupling.
    Sqg(SqgConfig),
}

/// Weights and term selection of the variational cost.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VariationalCostConfig {
    pub formulation: Formulation,
    /// Weight of the coarse (interpolated) SSH term.
    pub lambda1: f64,
    /// Weight of the masked along-track SSH term.
    pub lambda2: f64,
    /// Weight of the direct SST data term; only the `ssh_sst` formulation
    /// carries one.
    pub lambda3: Option<f64>,
    /// Weight of the prior residual.
    pub gamma: f64,
    pub mm: Option<MmTermConfig>,
    /// Learn `λ` as `exp(θ)` alongside the other parameters.
    pub weights_trainable: bool,
    /// Also learn `γ`; off by default, which pins the prior weight.
    pub gamma_trainable: bool,
}

impl Default for VariationalCostConfig {
    fn default() -> Self {
        VariationalCostConfig {
            formulation: Formulation::SshOnly,
            lambda1: 1.0,
            lambda2: 1.0,
            lambda3: None,
            gamma: 1.0,
            mm: None,
            weights_trainable: true,
            gamma_trainable: false,
        }
    }
}

impl VariationalCostConfig {
    pub fn validate(&self) -> Result<()> {
        let named = [
            ("lambda1", Some(self.lambda1)),
            ("lambda2", Some(self.lambda2)),
            ("lambda3", self.lambda3),
            ("gamma", Some(self.gamma)),
        ];
        for (name, v) in named {
            if let Some(v) = v {
                if !v.is_finite() || v < 0.0 {
                    return Err(Error::Config(format!("cost weight {name} must be finite and >= 0, got {v}")));
                }
            }
        }
        match self.formulation {
            Formulation::SshOnly if self.lambda3.is_some() => {
                return Err(Error::Config("lambda3 requires the ssh_sst formulation".into()));
            }
            Formulation::SshSst if self.lambda3.is_none() => {
                return Err(Error::Config("the ssh_sst formulation requires lambda3".into()));
            }
            _ => {}
        }
        if self.weights_trainable {
            for (name, v) in [("lambda1", self.lambda1), ("lambda2", self.lambda2)] {
                if v <= 0.0 {
                    return Err(Error::Config(format!("trainable weight {name} needs a positive initial value")));
                }
            }
            if self.lambda3 == Some(0.0) {
                return Err(Error::Config("trainable weight lambda3 needs a positive initial value".into()));
            }
            if self.gamma_trainable && self.gamma <= 0.0 {
                return Err(Error::Config("trainable weight gamma needs a positive initial value".into()));
            }
        }
        match &self.mm {
            Some(MmTermConfig::Multimodal(c)) => c.validate()?,
            Some(MmTermConfig::Sqg(c)) => c.validate()?,
            None => {}
        }
        Ok(())
    }

    pub fn state_kind(&self) -> StateKind {
        self.formulation.state_kind()
    }

    pub fn needs_sst(&self) -> bool {
        self.lambda3.is_some() || self.mm.is_some() || self.formulation == Formulation::SshSst
    }
}

/// Log-parameterized trainable weights, `λ = exp(θ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CostWeightParams {
    pub log_lambda1: ArrayD<f64>,
    pub log_lambda2: ArrayD<f64>,
    pub log_lambda3: Option<ArrayD<f64>>,
    pub log_gamma: Option<ArrayD<f64>>,
}

fn log_scalar(v: f64) -> ArrayD<f64> {
    ArrayD::from_elem(IxDyn(&[]), v.ln())
}

impl CostWeightParams {
    /// `None` when the configuration keeps the weights fixed.
    pub fn init(cfg: &VariationalCostConfig) -> Result<Option<Self>> {
        cfg.validate()?;
        if !cfg.weights_trainable {
            return Ok(None);
        }
        Ok(Some(CostWeightParams {
            log_lambda1: log_scalar(cfg.lambda1),
            log_lambda2: log_scalar(cfg.lambda2),
            log_lambda3: cfg.lambda3.map(log_scalar),
            log_gamma: if cfg.gamma_trainable { Some(log_scalar(cfg.gamma)) } else { None },
        }))
    }

    /// Effective `(λ₁, λ₂, λ₃, γ)`; fixed entries fall back to the config.
    pub fn effective(&self, cfg: &VariationalCostConfig) -> (f64, f64, Option<f64>, f64) {
        let e = |a: &ArrayD<f64>| a.first().copied().unwrap_or(f64::NEG_INFINITY).exp();
        (
            e(&self.log_lambda1),
            e(&self.log_lambda2),
            self.log_lambda3.as_ref().map(e),
            self.log_gamma.as_ref().map(e).unwrap_or(cfg.gamma),
        )
    }
}

impl ParamVisit for CostWeightParams {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(&str, &'a ArrayD<f64>)) {
        f(&format!("{prefix}.log_lambda1"), &self.log_lambda1);
        f(&format!("{prefix}.log_lambda2"), &self.log_lambda2);
        if let Some(a) = &self.log_lambda3 {
            f(&format!("{prefix}.log_lambda3"), a);
        }
        if let Some(a) = &self.log_gamma {
            f(&format!("{prefix}.log_gamma"), a);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut ArrayD<f64>)) {
        f(&format!("{prefix}.log_lambda1"), &mut self.log_lambda1);
        f(&format!("{prefix}.log_lambda2"), &mut self.log_lambda2);
        if let Some(a) = &mut self.log_lambda3 {
            f(&format!("{prefix}.log_lambda3"), a);
        }
        if let Some(a) = &mut self.log_gamma {
            f(&format!("{prefix}.log_gamma"), a);
        }
    }
}

/// Every parameter the cost owns: the prior, the optional learned multimodal
/// operators, and the optional trainable weights.
#[derive(Debug, Clone, PartialEq)]
pub struct CostParams {
    pub prior: PriorParams,
    pub mm: Option<MmParams>,
    pub weights: Option<CostWeightParams>,
}

impl CostParams {
    pub fn init(
        cost_cfg: &VariationalCostConfig,
        prior_cfg: &PriorConfig,
        n_time: usize,
        rng: &mut rand_chacha::ChaCha12Rng,
    ) -> Result<Self> {
        cost_cfg.validate()?;
        let layout = ChannelLayout::new(cost_cfg.state_kind(), n_time);
        let prior = PriorParams::init(prior_cfg, layout.n_channels(), rng)?;
        let mm = match &cost_cfg.mm {
            Some(MmTermConfig::Multimodal(mc)) => Some(MmParams::init(mc, layout.n_channels(), n_time, rng)?),
            _ => None,
        };
        let weights = CostWeightParams::init(cost_cfg)?;
        Ok(CostParams { prior, mm, weights })
    }
}

impl ParamVisit for CostParams {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(&str, &'a ArrayD<f64>)) {
        self.prior.visit(&format!("{prefix}.prior"), f);
        if let Some(mm) = &self.mm {
            mm.visit(&format!("{prefix}.mm"), f);
        }
        if let Some(w) = &self.weights {
            w.visit(&format!("{prefix}.weights"), f);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut ArrayD<f64>)) {
        self.prior.visit_mut(&format!("{prefix}.prior"), f);
        if let Some(mm) = &mut self.mm {
            mm.visit_mut(&format!("{prefix}.mm"), f);
        }
        if let Some(w) = &mut self.weights {
            w.visit_mut(&format!("{prefix}.weights"), f);
        }
    }
}

enum Weight {
    Fixed(f64),
    Learned {
        /// The `θ` leaf, kept for gradient extraction.
        leaf: Var,
        /// `exp(θ)`.
        value: Var,
    },
}

impl Weight {
    fn scale(&self, t: &mut Tape, term: Var) -> Var {
        match self {
            Weight::Fixed(v) => t.affine(term, *v, 0.0),
            Weight::Learned { value, .. } => t.mul(term, *value),
        }
    }

    fn push_vars(&self, out: &mut Vec<Var>) {
        if let Weight::Learned { leaf, .. } = self {
            out.push(*leaf);
        }
    }
}

/// The variational cost built on a tape for one observation window.
pub struct CostGraph {
    layout: ChannelLayout,
    prior_cfg: PriorConfig,
    mm_cfg: Option<MultimodalOpConfig>,
    obs_coarse: Var,
    obs_ssh: Var,
    mask: Var,
    obs_sst: Option<Var>,
    w1: Weight,
    w2: Weight,
    w3: Option<Weight>,
    wg: Weight,
    prior_nodes: PriorNodes,
    mm_nodes: Option<MmNodes>,
    /// `G¹(y_SST)`, shared across every cost evaluation on this tape.
    g1_feats: Option<Var>,
    sqg_state_mult: Option<Rc<Array2<f64>>>,
    /// `F¹ y_SST`, a constant of the window.
    sqg_sst_filtered: Option<Var>,
}

impl CostGraph {
    /// Freezes the observations as tape constants and binds all parameters.
    /// `trainable` controls whether parameter leaves request gradients.
    pub fn new(
        t: &mut Tape,
        obs: &ObservationSet,
        params: &CostParams,
        cost_cfg: &VariationalCostConfig,
        prior_cfg: &PriorConfig,
        trainable: bool,
    ) -> Result<CostGraph> {
        cost_cfg.validate()?;
        prior_cfg.validate()?;
        let grid = *obs.grid();
        let layout = ChannelLayout::new(cost_cfg.state_kind(), grid.n_time);

        let obs_sst_field = if cost_cfg.needs_sst() {
            Some(obs.sst.as_ref().ok_or_else(|| {
                Error::Config("the configured cost needs SST observations, but the observation set has none".into())
            })?)
        } else {
            None
        };

        let obs_coarse = t.constant(obs.ssh_coarse.data().clone().into_dyn());
        let obs_ssh = t.constant(obs.ssh_alongtrack.data().clone().into_dyn());
        let mask = t.constant(obs.ssh_mask.to_f64().into_dyn());
        let obs_sst = obs_sst_field.map(|f| t.constant(f.data().clone().into_dyn()));

        let (w1, w2, w3, wg) = match (&params.weights, cost_cfg.weights_trainable) {
            (Some(wp), true) => {
                let mk = |t: &mut Tape, a: &ArrayD<f64>| {
                    let leaf = t.leaf(a.clone(), trainable);
                    Weight::Learned { leaf, value: t.exp(leaf) }
                };
                (
                    mk(t, &wp.log_lambda1),
                    mk(t, &wp.log_lambda2),
                    wp.log_lambda3.as_ref().map(|a| mk(t, a)),
                    match &wp.log_gamma {
                        Some(a) => mk(t, a),
                        None => Weight::Fixed(cost_cfg.gamma),
                    },
                )
            }
            (None, false) => (
                Weight::Fixed(cost_cfg.lambda1),
                Weight::Fixed(cost_cfg.lambda2),
                cost_cfg.lambda3.map(Weight::Fixed),
                Weight::Fixed(cost_cfg.gamma),
            ),
            _ => {
                return Err(Error::Config(
                    "cost weight parameters present iff weights_trainable is set".into(),
                ));
            }
        };
        if cost_cfg.lambda3.is_some() != w3.is_some() {
            return Err(Error::Config("lambda3 parameterization does not match the formulation".into()));
        }

        let prior_nodes = params.prior.bind(t, trainable);

        let mut mm_cfg = None;
        let mut mm_nodes = None;
        let mut g1_feats = None;
        let mut sqg_state_mult = None;
        let mut sqg_sst_filtered = None;
        match &cost_cfg.mm {
            Some(MmTermConfig::Multimodal(mc)) => {
                let mp = params.mm.as_ref().ok_or_else(|| {
                    Error::Config("multimodal term configured but operator parameters missing".into())
                })?;
                let nodes = mp.bind(t, trainable);
                let sst_var = obs_sst.expect("needs_sst covers the multimodal term");
                g1_feats = Some(build_g1_features(t, sst_var, &nodes.g1, mc));
                mm_nodes = Some(nodes);
                mm_cfg = Some(*mc);
            }
            Some(MmTermConfig::Sqg(sc)) => {
                let mults = SqgMultipliers::new(&grid, sc)?;
                let sst_var = obs_sst.expect("needs_sst covers the sqg term");
                sqg_sst_filtered = Some(t.fourier_mul(sst_var, mults.sst.clone()));
                sqg_state_mult = Some(mults.state.clone());
            }
            None => {}
        }

        Ok(CostGraph {
            layout,
            prior_cfg: *prior_cfg,
            mm_cfg,
            obs_coarse,
            obs_ssh,
            mask,
            obs_sst,
            w1,
            w2,
            w3,
            wg,
            prior_nodes,
            mm_nodes,
            g1_feats,
            sqg_state_mult,
            sqg_sst_filtered,
        })
    }

    pub fn layout(&self) -> ChannelLayout {
        self.layout
    }

    pub fn prior_nodes(&self) -> &PriorNodes {
        &self.prior_nodes
    }

    pub fn prior_config(&self) -> &PriorConfig {
        &self.prior_cfg
    }

    /// Bound parameter leaves in exactly the order [`CostParams`] visits its
    /// arrays (prior, then multimodal operators, then weights), so gradients
    /// extracted per leaf line up with optimizer state walked via
    /// [`ParamVisit`].
    pub fn param_vars(&self) -> Vec<Var> {
        let mut out = Vec::new();
        self.prior_nodes.push_vars(&mut out);
        if let Some(mm) = &self.mm_nodes {
            mm.push_vars(&mut out);
        }
        self.w1.push_vars(&mut out);
        self.w2.push_vars(&mut out);
        if let Some(w3) = &self.w3 {
            w3.push_vars(&mut out);
        }
        self.wg.push_vars(&mut out);
        out
    }

    /// `U(x)` for a packed `(C,H,W)` state node.
    pub fn cost(&self, t: &mut Tape, x: Var) -> Var {
        let nt = self.layout.n_time;
        let xc = t.slice_chans(x, self.layout.coarse().start, nt);
        let xo = t.slice_chans(x, self.layout.anomaly_obs().start, nt);

        let d1 = t.sub(self.obs_coarse, xc);
        let t1 = t.sum_sq(d1);
        let mut total = self.w1.scale(t, t1);

        let seen = t.add(xc, xo);
        let d2 = t.sub(self.obs_ssh, seen);
        let d2m = t.mul(self.mask, d2);
        let t2 = t.sum_sq(d2m);
        let t2 = self.w2.scale(t, t2);
        total = t.add(total, t2);

        if let Some(range) = self.layout.sst() {
            let xs = t.slice_chans(x, range.start, nt);
            let obs_sst = self.obs_sst.expect("sst state block implies sst observations");
            let t3 = t.sum_sq_diff(obs_sst, xs);
            let t3 = self.w3.as_ref().expect("ssh_sst carries lambda3").scale(t, t3);
            total = t.add(total, t3);
        }

        let phi = build_phi(t, x, &self.prior_nodes, &self.prior_cfg);
        let tp = t.sum_sq_diff(x, phi);
        let tp = self.wg.scale(t, tp);
        total = t.add(total, tp);

        if let (Some(nodes), Some(cfg), Some(g1)) = (&self.mm_nodes, &self.mm_cfg, self.g1_feats) {
            let g2_in = match cfg.g2_input {
                G2Input::PackedState => x,
                G2Input::Reconstruction => {
                    let xr = t.slice_chans(x, self.layout.anomaly_rec().start, nt);
                    t.add(xc, xr)
                }
            };
            let g2 = build_g2_features(t, g2_in, &nodes.g2, cfg);
            let tmm = t.sum_sq_diff(g1, g2);
            total = t.add(total, tmm);
        }

        if let (Some(mult), Some(filtered)) = (&self.sqg_state_mult, self.sqg_sst_filtered) {
            let xr = t.slice_chans(x, self.layout.anomaly_rec().start, nt);
            let recon = t.add(xc, xr);
            let fs = t.fourier_mul(recon, mult.clone());
            let tsqg = t.sum_sq_diff(filtered, fs);
            total = t.add(total, tsqg);
        }

        total
    }
}

fn check_state(state: &State, obs: &ObservationSet, cfg: &VariationalCostConfig) -> Result<()> {
    if state.kind() != cfg.state_kind() {
        return Err(Error::Config(format!(
            "state kind {:?} does not match the {:?} formulation",
            state.kind(),
            cfg.formulation
        )));
    }
    if state.grid() != obs.grid() {
        return Err(Error::dim(
            "variational cost",
            format!("{:?}", obs.grid().shape()),
            format!("{:?}", state.grid().shape()),
        ));
    }
    Ok(())
}

/// `U(state)` on plain arrays.
pub fn cost(
    state: &State,
    obs: &ObservationSet,
    params: &CostParams,
    cost_cfg: &VariationalCostConfig,
    prior_cfg: &PriorConfig,
) -> Result<f64> {
    check_state(state, obs, cost_cfg)?;
    let mut t = Tape::new();
    let x = t.constant(pack_state(state).into_dyn());
    let graph = CostGraph::new(&mut t, obs, params, cost_cfg, prior_cfg, false)?;
    let c = graph.cost(&mut t, x);
    Ok(t.value_scalar(c))
}

/// `∂U/∂state`, exact, with every component block populated.
pub fn cost_gradient(
    state: &State,
    obs: &ObservationSet,
    params: &CostParams,
    cost_cfg: &VariationalCostConfig,
    prior_cfg: &PriorConfig,
) -> Result<State> {
    check_state(state, obs, cost_cfg)?;
    let mut t = Tape::new();
    let x = t.leaf(pack_state(state).into_dyn(), true);
    let graph = CostGraph::new(&mut t, obs, params, cost_cfg, prior_cfg, false)?;
    let c = graph.cost(&mut t, x);
    let g = t.grad_full(c, &[x])[0];
    let packed = t
        .value(g)
        .clone()
        .into_dimensionality()
        .expect("gradient has the packed state shape");
    unpack_state(&packed, state.kind(), *state.grid())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{Mask, SpaceTimeField, SpaceTimeGrid};
    use crate::obs_ops;
    use crate::prior;
    use crate::state::{MultimodalState, SshState};
    use ndarray::Array3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;

    fn grid(w: usize, nt: usize) -> SpaceTimeGrid {
        SpaceTimeGrid::new(w, 0.05, 1.0, nt).unwrap()
    }

    fn rand_field(rng: &mut ChaCha12Rng, g: SpaceTimeGrid) -> SpaceTimeField {
        let (nt, h, w) = g.shape();
        SpaceTimeField::new(g, Array3::from_shape_fn((nt, h, w), |_| rng.gen_range(-1.0..1.0))).unwrap()
    }

    fn rand_mask(rng: &mut ChaCha12Rng, g: SpaceTimeGrid, p: f64) -> Mask {
        let (nt, h, w) = g.shape();
        Mask::new(g, Array3::from_shape_fn((nt, h, w), |_| rng.gen_bool(p))).unwrap()
    }

    fn rand_obs(rng: &mut ChaCha12Rng, g: SpaceTimeGrid, with_sst: bool) -> ObservationSet {
        let sst = with_sst.then(|| rand_field(rng, g));
        ObservationSet::new(rand_field(rng, g), rand_mask(rng, g, 0.3), rand_field(rng, g), sst).unwrap()
    }

    fn rand_state(rng: &mut ChaCha12Rng, g: SpaceTimeGrid, kind: StateKind) -> State {
        let ssh = SshState::new(rand_field(rng, g), rand_field(rng, g), rand_field(rng, g)).unwrap();
        match kind {
            StateKind::SshOnly => State::SshOnly(ssh),
            StateKind::SshSst => State::SshSst(MultimodalState::new(ssh, rand_field(rng, g)).unwrap()),
        }
    }

    fn mm_cfg() -> MultimodalOpConfig {
        let mut c = MultimodalOpConfig::linear(2);
        c.g1_kernel = (3, 3, 3);
        c
    }

    fn full_cfg() -> (VariationalCostConfig, PriorConfig) {
        let cost_cfg = VariationalCostConfig {
            formulation: Formulation::SshSst,
            lambda1: 0.7,
            lambda2: 1.3,
            lambda3: Some(0.4),
            gamma: 0.9,
            mm: Some(MmTermConfig::Multimodal(mm_cfg())),
            weights_trainable: false,
            gamma_trainable: false,
        };
        (cost_cfg, PriorConfig::Diffusion { coefficient: 0.2 })
    }

    #[test]
    fn zero_weights_give_zero_cost() {
        let mut rng = ChaCha12Rng::seed_from_u64(11);
        let g = grid(8, 2);
        let cfg = VariationalCostConfig {
            formulation: Formulation::SshSst,
            lambda1: 0.0,
            lambda2: 0.0,
            lambda3: Some(0.0),
            gamma: 0.0,
            mm: None,
            weights_trainable: false,
            gamma_trainable: false,
        };
        let prior_cfg = PriorConfig::Identity;
        let params = CostParams::init(&cfg, &prior_cfg, g.n_time, &mut rng).unwrap();
        let obs = rand_obs(&mut rng, g, true);
        let state = rand_state(&mut rng, g, StateKind::SshSst);
        assert_eq!(cost(&state, &obs, &params, &cfg, &prior_cfg).unwrap(), 0.0);
    }

    #[test]
    fn exact_fit_has_zero_cost_and_stationary_gradient() {
        let mut rng = ChaCha12Rng::seed_from_u64(12);
        let g = grid(8, 2);
        let cfg = VariationalCostConfig {
            formulation: Formulation::SshSst,
            lambda1: 1.0,
            lambda2: 1.0,
            lambda3: Some(1.0),
            gamma: 1.0,
            mm: None,
            weights_trainable: false,
            gamma_trainable: false,
        };
        let prior_cfg = PriorConfig::Identity;
        let params = CostParams::init(&cfg, &prior_cfg, g.n_time, &mut rng).unwrap();
        let state = rand_state(&mut rng, g, StateKind::SshSst);
        let ssh = state.ssh();
        let seen = SpaceTimeField::new(g, ssh.coarse.data() + ssh.anomaly_obs.data()).unwrap();
        let sst = match &state {
            State::SshSst(m) => m.sst.clone(),
            _ => unreachable!(),
        };
        let obs =
            ObservationSet::new(seen, rand_mask(&mut rng, g, 0.4), ssh.coarse.clone(), Some(sst)).unwrap();

        let c = cost(&state, &obs, &params, &cfg, &prior_cfg).unwrap();
        assert!(c.abs() < 1e-24, "cost at the exact fit: {c}");
        let grad = cost_gradient(&state, &obs, &params, &cfg, &prior_cfg).unwrap();
        let norm = pack_state(&grad).mapv(|v| v * v).sum().sqrt();
        assert!(norm < 1e-8, "gradient norm at the minimizer: {norm}");
    }

    #[test]
    fn cost_matches_term_sum_oracle() {
        let mut rng = ChaCha12Rng::seed_from_u64(13);
        let g = grid(8, 2);
        let (cost_cfg, prior_cfg) = full_cfg();
        let params = CostParams::init(&cost_cfg, &prior_cfg, g.n_time, &mut rng).unwrap();
        let obs = rand_obs(&mut rng, g, true);
        let state = rand_state(&mut rng, g, StateKind::SshSst);

        let got = cost(&state, &obs, &params, &cost_cfg, &prior_cfg).unwrap();

        let ssh = state.ssh();
        let sst_state = match &state {
            State::SshSst(m) => &m.sst,
            _ => unreachable!(),
        };
        let seen = SpaceTimeField::new(g, ssh.coarse.data() + ssh.anomaly_obs.data()).unwrap();
        let mm = params.mm.as_ref().unwrap();
        let packed = pack_state(&state);
        let want = cost_cfg.lambda1
            * obs_ops::coarse_residual_sq(&obs.ssh_coarse, &ssh.coarse).unwrap()
            + cost_cfg.lambda2
                * obs_ops::masked_residual_sq(&obs.ssh_alongtrack, &obs.ssh_mask, &seen).unwrap()
            + cost_cfg.lambda3.unwrap()
                * obs_ops::sst_residual_sq(obs.sst.as_ref().unwrap(), sst_state).unwrap()
            + cost_cfg.gamma * prior::prior_residual_sq(&packed, &params.prior, &prior_cfg).unwrap()
            + obs_ops::mm_term(obs.sst.as_ref().unwrap(), &packed, mm, &mm_cfg()).unwrap();
        let rel = (got - want).abs() / want.abs();
        assert!(rel < 1e-12, "cost {got} vs oracle {want}, rel {rel}");
    }

    #[test]
    fn gradient_matches_finite_differences_all_terms() {
        let mut rng = ChaCha12Rng::seed_from_u64(14);
        let g = grid(8, 2);
        let (mut cost_cfg, prior_cfg) = full_cfg();
        cost_cfg.weights_trainable = true;
        let params = CostParams::init(&cost_cfg, &prior_cfg, g.n_time, &mut rng).unwrap();
        let obs = rand_obs(&mut rng, g, true);
        let state = rand_state(&mut rng, g, StateKind::SshSst);

        let grad = cost_gradient(&state, &obs, &params, &cost_cfg, &prior_cfg).unwrap();
        let ga = pack_state(&grad);
        let base = pack_state(&state);

        let eval = |packed: &Array3<f64>| {
            let s = unpack_state(packed, StateKind::SshSst, g).unwrap();
            cost(&s, &obs, &params, &cost_cfg, &prior_cfg).unwrap()
        };
        let h = 1e-5;
        let (nc, nh, nw) = base.dim();
        for probe in 0..12 {
            let idx = (
                rng.gen_range(0..nc),
                rng.gen_range(0..nh),
                rng.gen_range(0..nw),
            );
            let _ = probe;
            let mut plus = base.clone();
            plus[idx] += h;
            let mut minus = base.clone();
            minus[idx] -= h;
            let num = (eval(&plus) - eval(&minus)) / (2.0 * h);
            let ana = ga[idx];
            let rel = (num - ana).abs() / num.abs().max(1e-9);
            assert!(rel < 1e-6, "component {idx:?}: fd {num} vs tape {ana}");
        }
    }

    #[test]
    fn anomaly_rec_gradient_comes_only_from_prior_and_mm() {
        let mut rng = ChaCha12Rng::seed_from_u64(15);
        let g = grid(8, 2);
        let cfg = VariationalCostConfig {
            formulation: Formulation::SshSst,
            lambda1: 1.2,
            lambda2: 0.8,
            lambda3: Some(0.5),
            gamma: 1.0,
            mm: None,
            weights_trainable: false,
            gamma_trainable: false,
        };
        let prior_cfg = PriorConfig::Identity;
        let params = CostParams::init(&cfg, &prior_cfg, g.n_time, &mut rng).unwrap();
        let obs = rand_obs(&mut rng, g, true);
        let state = rand_state(&mut rng, g, StateKind::SshSst);
        let grad = cost_gradient(&state, &obs, &params, &cfg, &prior_cfg).unwrap();
        let rec_block = grad.ssh().anomaly_rec.data();
        assert!(rec_block.iter().all(|v| *v == 0.0), "anomaly_rec gradient should be exactly zero");
    }

    #[test]
    fn cost_is_homogeneous_of_degree_two() {
        let mut rng = ChaCha12Rng::seed_from_u64(16);
        let g = grid(8, 2);
        let cost_cfg = VariationalCostConfig {
            formulation: Formulation::SshSst,
            lambda1: 0.6,
            lambda2: 1.1,
            lambda3: Some(0.9),
            gamma: 1.4,
            mm: Some(MmTermConfig::Multimodal(mm_cfg())),
            weights_trainable: false,
            gamma_trainable: false,
        };
        let prior_cfg = PriorConfig::Identity;
        let mut params = CostParams::init(&cost_cfg, &prior_cfg, g.n_time, &mut rng).unwrap();
        let mm = params.mm.as_mut().unwrap();
        for layer in mm.g1.iter_mut().chain(mm.g2.iter_mut()) {
            layer.b.fill(0.0);
        }

        let obs = rand_obs(&mut rng, g, true);
        let state = rand_state(&mut rng, g, StateKind::SshSst);
        let c1 = cost(&state, &obs, &params, &cost_cfg, &prior_cfg).unwrap();

        let scale = 3.0;
        let sf = |f: &SpaceTimeField| SpaceTimeField::new(g, f.data().mapv(|v| scale * v)).unwrap();
        let ssh = state.ssh();
        let state2 = State::SshSst(
            MultimodalState::new(
                SshState::new(sf(&ssh.coarse), sf(&ssh.anomaly_obs), sf(&ssh.anomaly_rec)).unwrap(),
                match &state {
                    State::SshSst(m) => sf(&m.sst),
                    _ => unreachable!(),
                },
            )
            .unwrap(),
        );
        let obs2 = ObservationSet::new(
            sf(&obs.ssh_alongtrack),
            obs.ssh_mask.clone(),
            sf(&obs.ssh_coarse),
            obs.sst.as_ref().map(sf),
        )
        .unwrap();
        let c2 = cost(&state2, &obs2, &params, &cost_cfg, &prior_cfg).unwrap();
        let rel = (c2 - scale * scale * c1).abs() / c2.abs();
        assert!(rel < 1e-12, "scaling by {scale} should scale the cost by {}", scale * scale);
    }

    #[test]
    fn small_gradient_step_decreases_cost() {
        let mut rng = ChaCha12Rng::seed_from_u64(17);
        let g = grid(8, 2);
        let (cost_cfg, prior_cfg) = full_cfg();
        let params = CostParams::init(&cost_cfg, &prior_cfg, g.n_time, &mut rng).unwrap();
        let obs = rand_obs(&mut rng, g, true);
        let state = rand_state(&mut rng, g, StateKind::SshSst);

        let c0 = cost(&state, &obs, &params, &cost_cfg, &prior_cfg).unwrap();
        let grad = pack_state(&cost_gradient(&state, &obs, &params, &cost_cfg, &prior_cfg).unwrap());
        assert!(grad.mapv(|v| v * v).sum() > 0.0, "instance should not start at a stationary point");
        let base = pack_state(&state);

        let mut eta = 1e-2;
        let mut decreased = false;
        for _ in 0..40 {
            let stepped = &base - &grad.mapv(|v| eta * v);
            let s = unpack_state(&stepped, StateKind::SshSst, g).unwrap();
            let c = cost(&s, &obs, &params, &cost_cfg, &prior_cfg).unwrap();
            if c < c0 {
                decreased = true;
                break;
            }
            eta *= 0.5;
        }
        assert!(decreased, "no descent along the negative gradient");
    }

    #[test]
    fn gradient_is_affine_in_the_quadratic_configuration() {
        let mut rng = ChaCha12Rng::seed_from_u64(18);
        let g = grid(8, 2);
        let cfg = VariationalCostConfig {
            formulation: Formulation::SshOnly,
            lambda1: 0.9,
            lambda2: 1.2,
            lambda3: None,
            gamma: 0.7,
            mm: None,
            weights_trainable: false,
            gamma_trainable: false,
        };
        let prior_cfg = PriorConfig::Diffusion { coefficient: 0.15 };
        let params = CostParams::init(&cfg, &prior_cfg, g.n_time, &mut rng).unwrap();
        let obs = rand_obs(&mut rng, g, false);

        let gradp = |packed: &Array3<f64>| {
            let s = unpack_state(packed, StateKind::SshOnly, g).unwrap();
            pack_state(&cost_gradient(&s, &obs, &params, &cfg, &prior_cfg).unwrap())
        };
        let x1 = pack_state(&rand_state(&mut rng, g, StateKind::SshOnly));
        let x2 = pack_state(&rand_state(&mut rng, g, StateKind::SshOnly));
        let (a, b) = (0.37, -1.21);
        let lhs = gradp(&(&x1.mapv(|v| a * v) + &x2.mapv(|v| b * v)));
        let zero = gradp(&Array3::zeros(x1.dim()));
        let rhs = &gradp(&x1).mapv(|v| a * v) + &gradp(&x2).mapv(|v| b * v)
            + &zero.mapv(|v| (1.0 - a - b) * v);
        let err = (&lhs - &rhs).mapv(f64::abs).iter().fold(0.0_f64, |m, v| m.max(*v));
        assert!(err < 1e-10, "gradient affinity violated by {err}");
    }

    #[test]
    fn sqg_term_enters_the_cost() {
        let mut rng = ChaCha12Rng::seed_from_u64(19);
        let g = grid(8, 2);
        let sqg = SqgConfig { sst_band: (0.0, 20.0), state_band: (0.0, 20.0) };
        let cfg = VariationalCostConfig {
            formulation: Formulation::SshOnly,
            lambda1: 0.0,
            lambda2: 0.0,
            lambda3: None,
            gamma: 0.0,
            mm: Some(MmTermConfig::Sqg(sqg)),
            weights_trainable: false,
            gamma_trainable: false,
        };
        let prior_cfg = PriorConfig::Identity;
        let params = CostParams::init(&cfg, &prior_cfg, g.n_time, &mut rng).unwrap();
        let obs = rand_obs(&mut rng, g, true);
        let state = rand_state(&mut rng, g, StateKind::SshOnly);

        let got = cost(&state, &obs, &params, &cfg, &prior_cfg).unwrap();
        let recon = crate::state::reconstruct_ssh(&state);
        let want = obs_ops::sqg_mm_term(obs.sst.as_ref().unwrap(), &recon, &sqg).unwrap();
        let rel = (got - want).abs() / want.abs();
        assert!(rel < 1e-12, "sqg cost {got} vs oracle {want}");
    }

    #[test]
    fn configuration_errors_are_caught() {
        let mut cfg = VariationalCostConfig::default();
        cfg.lambda3 = Some(1.0);
        assert!(cfg.validate().is_err(), "lambda3 with ssh_only");

        let mut cfg = VariationalCostConfig::default();
        cfg.formulation = Formulation::SshSst;
        cfg.lambda3 = None;
        assert!(cfg.validate().is_err(), "ssh_sst without lambda3");

        let mut cfg = VariationalCostConfig::default();
        cfg.lambda1 = -0.5;
        assert!(cfg.validate().is_err(), "negative weight");

        let mut rng = ChaCha12Rng::seed_from_u64(20);
        let g = grid(8, 2);
        let cfg = VariationalCostConfig {
            mm: Some(MmTermConfig::Multimodal(mm_cfg())),
            weights_trainable: false,
            ..Default::default()
        };
        let prior_cfg = PriorConfig::Identity;
        let params = CostParams::init(&cfg, &prior_cfg, g.n_time, &mut rng).unwrap();
        let obs = rand_obs(&mut rng, g, false);
        let state = rand_state(&mut rng, g, StateKind::SshOnly);
        let err = cost(&state, &obs, &params, &cfg, &prior_cfg).unwrap_err();
        assert!(matches!(err, Error::Config(_)), "missing SST should be a configuration error");
    }

    #[test]
    fn trainable_weights_reproduce_the_fixed_cost_and_receive_gradients() {
        let mut rng = ChaCha12Rng::seed_from_u64(21);
        let g = grid(8, 2);
        let (mut cost_cfg, prior_cfg) = full_cfg();
        let fixed_params = CostParams::init(&cost_cfg, &prior_cfg, g.n_time, &mut rng).unwrap();
        let obs = rand_obs(&mut rng, g, true);
        let state = rand_state(&mut rng, g, StateKind::SshSst);
        let c_fixed = cost(&state, &obs, &fixed_params, &cost_cfg, &prior_cfg).unwrap();

        cost_cfg.weights_trainable = true;
        let params = CostParams {
            prior: fixed_params.prior.clone(),
            mm: fixed_params.mm.clone(),
            weights: CostWeightParams::init(&cost_cfg).unwrap(),
        };
        let c_train = cost(&state, &obs, &params, &cost_cfg, &prior_cfg).unwrap();
        let rel = (c_fixed - c_train).abs() / c_fixed.abs();
        assert!(rel < 1e-12, "exp(log) weights must reproduce the fixed weights");

        let mut t = Tape::new();
        let x = t.constant(pack_state(&state).into_dyn());
        let graph = CostGraph::new(&mut t, &obs, &params, &cost_cfg, &prior_cfg, true).unwrap();
        let c = graph.cost(&mut t, x);
        assert!(t.value_scalar(c).is_finite());
    }
}
