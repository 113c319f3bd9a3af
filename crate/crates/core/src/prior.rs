//! Prior operators `Φ` for the regularization term `‖x − Φ(x)‖²`.
//!
//! Three families:
//!
//! * `identity`: `Φ(x) = x`, a no-op prior whose residual is always zero;
//! * `diffusion`: `Φ(x) = x + α · Δx` with the 5-point Laplacian (replicate
//!   boundary), a linear smoothing prior;
//! * `unet_two_scale`: a learned residual correction `Φ(x) = x + U(x)` where
//!   `U` runs two branches, one at full resolution and one at half resolution
//!   (average-pool down, bilinear up), each a chain of bilinear blocks
//!   `concat(linear(u), linear(u) ⊙ linear(u))` followed by a projection back
//!   to the state channels. Projections are zero-initialized, so a fresh prior
//!   starts exactly at the identity.
//!
//! The same two-scale network with `residual = false` (and without the final
//! add) is the direct regression baseline's backbone.

use ndarray::Array3;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::params::{ConvNodes, ConvParams, ParamVisit};

/// Prior operator choice.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PriorConfig {
    Identity,
    Diffusion {
        /// Laplacian coefficient `α`.
        coefficient: f64,
    },
    UnetTwoScale {
        /// Channel width of every block (even, ≥ 4).
        base_channels: usize,
        /// Bilinear blocks per branch.
        n_blocks: usize,
    },
}

impl Default for PriorConfig {
    fn default() -> Self {
        PriorConfig::UnetTwoScale { base_channels: 32, n_blocks: 2 }
    }
}

impl PriorConfig {
    pub fn validate(&self) -> Result<()> {
        match self {
            PriorConfig::Identity => Ok(()),
            PriorConfig::Diffusion { coefficient } => {
                if !coefficient.is_finite() {
                    return Err(Error::Config(format!("diffusion coefficient must be finite, got {coefficient}")));
                }
                Ok(())
            }
            PriorConfig::UnetTwoScale { base_channels, n_blocks } => {
                if *base_channels < 4 || base_channels % 2 != 0 {
                    return Err(Error::Config(format!(
                        "unet base_channels must be even and >= 4, got {base_channels}"
                    )));
                }
                if *n_blocks == 0 {
                    return Err(Error::Config("unet n_blocks must be >= 1".into()));
                }
                Ok(())
            }
        }
    }
}

/// One bilinear block: three 3×3 convolutions combined as
/// `concat(a(u), b(u) ⊙ c(u))`.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockParams {
    pub a: ConvParams,
    pub b: ConvParams,
    pub c: ConvParams,
}

impl ParamVisit for BlockParams {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(&str, &'a ndarray::ArrayD<f64>)) {
        self.a.visit(&format!("{prefix}.a"), f);
        self.b.visit(&format!("{prefix}.b"), f);
        self.c.visit(&format!("{prefix}.c"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut ndarray::ArrayD<f64>)) {
        self.a.visit_mut(&format!("{prefix}.a"), f);
        self.b.visit_mut(&format!("{prefix}.b"), f);
        self.c.visit_mut(&format!("{prefix}.c"), f);
    }
}

/// One resolution branch: blocks then a projection to the output channels.
#[derive(Debug, Clone, PartialEq)]
pub struct BranchParams {
    pub blocks: Vec<BlockParams>,
    pub proj: ConvParams,
}

impl ParamVisit for BranchParams {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(&str, &'a ndarray::ArrayD<f64>)) {
        self.blocks.visit(&format!("{prefix}.blocks"), f);
        self.proj.visit(&format!("{prefix}.proj"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut ndarray::ArrayD<f64>)) {
        self.blocks.visit_mut(&format!("{prefix}.blocks"), f);
        self.proj.visit_mut(&format!("{prefix}.proj"), f);
    }
}

/// Both branches of the two-scale network.
#[derive(Debug, Clone, PartialEq)]
pub struct UnetTwoScaleParams {
    pub full: BranchParams,
    pub half: BranchParams,
}

impl UnetTwoScaleParams {
    /// Random block weights, zero projections (the network starts as the zero
    /// map, hence a residual prior starts as the identity).
    pub fn init(
        c_in: usize,
        c_out: usize,
        base_channels: usize,
        n_blocks: usize,
        rng: &mut rand_chacha::ChaCha12Rng,
    ) -> Self {
        let branch = |rng: &mut rand_chacha::ChaCha12Rng| {
            let half_width = base_channels / 2;
            let blocks = (0..n_blocks)
                .map(|i| {
                    let ci = if i == 0 { c_in } else { base_channels };
                    BlockParams {
                        a: ConvParams::glorot2d(half_width, ci, 3, 3, rng),
                        b: ConvParams::glorot2d(half_width, ci, 3, 3, rng),
                        c: ConvParams::glorot2d(half_width, ci, 3, 3, rng),
                    }
                })
                .collect();
            BranchParams { blocks, proj: ConvParams::zeros2d(c_out, base_channels, 3, 3) }
        };
        UnetTwoScaleParams { full: branch(rng), half: branch(rng) }
    }

    pub fn bind(&self, t: &mut Tape, trainable: bool) -> UnetNodes {
        let bind_branch = |t: &mut Tape, b: &BranchParams| BranchNodes {
            blocks: b
                .blocks
                .iter()
                .map(|blk| BlockNodes {
                    a: blk.a.bind(t, trainable),
                    b: blk.b.bind(t, trainable),
                    c: blk.c.bind(t, trainable),
                })
                .collect(),
            proj: b.proj.bind(t, trainable),
        };
        UnetNodes { full: bind_branch(t, &self.full), half: bind_branch(t, &self.half) }
    }
}

impl ParamVisit for UnetTwoScaleParams {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(&str, &'a ndarray::ArrayD<f64>)) {
        self.full.visit(&format!("{prefix}.full"), f);
        self.half.visit(&format!("{prefix}.half"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut ndarray::ArrayD<f64>)) {
        self.full.visit_mut(&format!("{prefix}.full"), f);
        self.half.visit_mut(&format!("{prefix}.half"), f);
    }
}

pub struct BlockNodes {
    pub a: ConvNodes,
    pub b: ConvNodes,
    pub c: ConvNodes,
}

pub struct BranchNodes {
    pub blocks: Vec<BlockNodes>,
    pub proj: ConvNodes,
}

pub struct UnetNodes {
    pub full: BranchNodes,
    pub half: BranchNodes,
}

impl UnetNodes {
    /// Leaf handles in [`UnetTwoScaleParams`] visit order.
    pub fn push_vars(&self, out: &mut Vec<Var>) {
        for branch in [&self.full, &self.half] {
            for blk in &branch.blocks {
                blk.a.push_vars(out);
                blk.b.push_vars(out);
                blk.c.push_vars(out);
            }
            branch.proj.push_vars(out);
        }
    }
}

fn build_branch(t: &mut Tape, mut cur: Var, branch: &BranchNodes) -> Var {
    for blk in &branch.blocks {
        let a = blk.a.apply2d(t, cur);
        let b = blk.b.apply2d(t, cur);
        let c = blk.c.apply2d(t, cur);
        let bc = t.mul(b, c);
        cur = t.concat_chans(&[a, bc]);
    }
    branch.proj.apply2d(t, cur)
}

/// The two-scale correction network `U(x)`: full-resolution branch plus a
/// bilinearly upsampled half-resolution branch.
pub fn build_unet_two_scale(t: &mut Tape, x: Var, nodes: &UnetNodes) -> Var {
    let full = build_branch(t, x, &nodes.full);
    let down = t.avg_pool2(x);
    let half = build_branch(t, down, &nodes.half);
    let up = t.up_bilinear2(half);
    t.add(full, up)
}

/// Parameters of a prior (empty for the analytic kinds).
#[derive(Debug, Clone, PartialEq)]
pub enum PriorParams {
    Identity,
    Diffusion,
    UnetTwoScale(UnetTwoScaleParams),
}

impl PriorParams {
    pub fn init(cfg: &PriorConfig, state_channels: usize, rng: &mut rand_chacha::ChaCha12Rng) -> Result<Self> {
        cfg.validate()?;
        Ok(match cfg {
            PriorConfig::Identity => PriorParams::Identity,
            PriorConfig::Diffusion { .. } => PriorParams::Diffusion,
            PriorConfig::UnetTwoScale { base_channels, n_blocks } => PriorParams::UnetTwoScale(
                UnetTwoScaleParams::init(state_channels, state_channels, *base_channels, *n_blocks, rng),
            ),
        })
    }

    pub fn bind(&self, t: &mut Tape, trainable: bool) -> PriorNodes {
        match self {
            PriorParams::Identity => PriorNodes::Identity,
            PriorParams::Diffusion => PriorNodes::Diffusion,
            PriorParams::UnetTwoScale(p) => PriorNodes::UnetTwoScale(p.bind(t, trainable)),
        }
    }
}

impl ParamVisit for PriorParams {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(&str, &'a ndarray::ArrayD<f64>)) {
        if let PriorParams::UnetTwoScale(p) = self {
            p.visit(prefix, f);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut ndarray::ArrayD<f64>)) {
        if let PriorParams::UnetTwoScale(p) = self {
            p.visit_mut(prefix, f);
        }
    }
}

pub enum PriorNodes {
    Identity,
    Diffusion,
    UnetTwoScale(UnetNodes),
}

impl PriorNodes {
    /// Leaf handles in [`PriorParams`] visit order (empty for analytic kinds).
    pub fn push_vars(&self, out: &mut Vec<Var>) {
        if let PriorNodes::UnetTwoScale(u) = self {
            u.push_vars(out);
        }
    }
}

/// `Φ(x)` on the tape; `x` is a packed `(C,H,W)` state.
pub fn build_phi(t: &mut Tape, x: Var, nodes: &PriorNodes, cfg: &PriorConfig) -> Var {
    match (nodes, cfg) {
        (PriorNodes::Identity, PriorConfig::Identity) => x,
        (PriorNodes::Diffusion, PriorConfig::Diffusion { coefficient }) => {
            let lap = t.laplacian5(x);
            let scaled = t.affine(lap, *coefficient, 0.0);
            t.add(x, scaled)
        }
        (PriorNodes::UnetTwoScale(nodes), PriorConfig::UnetTwoScale { .. }) => {
            let correction = build_unet_two_scale(t, x, nodes);
            t.add(x, correction)
        }
        _ => panic!("prior parameters do not match prior config"),
    }
}

/// `Φ(x)` on plain arrays.
pub fn phi_apply(x: &Array3<f64>, params: &PriorParams, cfg: &PriorConfig) -> Result<Array3<f64>> {
    cfg.validate()?;
    check_even_frame(x, cfg)?;
    let mut t = Tape::new();
    let node = t.constant(x.clone().into_dyn());
    let nodes = params.bind(&mut t, false);
    let out = build_phi(&mut t, node, &nodes, cfg);
    Ok(t.value(out).clone().into_dimensionality().expect("3-d state"))
}

/// `‖x − Φ(x)‖²`.
pub fn prior_residual_sq(x: &Array3<f64>, params: &PriorParams, cfg: &PriorConfig) -> Result<f64> {
    let phi = phi_apply(x, params, cfg)?;
    Ok((x - &phi).mapv(|d| d * d).sum())
}

fn check_even_frame(x: &Array3<f64>, cfg: &PriorConfig) -> Result<()> {
    if matches!(cfg, PriorConfig::UnetTwoScale { .. }) {
        let (_, h, w) = x.dim();
        if h % 2 != 0 || w % 2 != 0 {
            return Err(Error::dim(
                "unet prior",
                "even frame size for the half-resolution branch",
                format!("{h}x{w}"),
            ));
        }
    }
    Ok(())
}
