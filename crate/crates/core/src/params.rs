//! Trainable parameter containers.
//!
//! Every leaf is a named `ArrayD<f64>`. Structs implement [`ParamVisit`] so
//! optimizers, checkpoints, and perturbation tests can walk all leaves in a
//! stable declaration order without knowing the model structure.

use std::collections::BTreeMap;

use ndarray::{ArrayD, IxDyn};
use rand::Rng;
use rand_chacha::ChaCha12Rng;

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};

/// Uniform traversal over named parameter leaves.
pub trait ParamVisit {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(&str, &'a ArrayD<f64>));
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut ArrayD<f64>));
}

/// Leaf names in declaration order.
pub fn param_names(p: &dyn ParamVisit) -> Vec<String> {
    let mut names = Vec::new();
    p.visit("", &mut |name, _| names.push(name.to_string()));
    names
}

/// Total scalar count.
pub fn param_count(p: &dyn ParamVisit) -> usize {
    let mut n = 0;
    p.visit("", &mut |_, a| n += a.len());
    n
}

/// Clones all leaves into a name → array map.
pub fn param_map(p: &dyn ParamVisit) -> BTreeMap<String, ArrayD<f64>> {
    let mut map = BTreeMap::new();
    p.visit("", &mut |name, a| {
        map.insert(name.to_string(), a.clone());
    });
    map
}

/// Overwrites all leaves from a map produced by [`param_map`]. Every leaf must
/// be present with a matching shape.
pub fn assign_params(p: &mut dyn ParamVisit, map: &BTreeMap<String, ArrayD<f64>>) -> Result<()> {
    let mut err = None;
    p.visit_mut("", &mut |name, a| {
        if err.is_some() {
            return;
        }
        match map.get(name) {
            Some(src) if src.shape() == a.shape() => a.assign(src),
            Some(src) => {
                err = Some(Error::dim(
                    "assign_params",
                    format!("{name} with shape {:?}", a.shape()),
                    format!("{:?}", src.shape()),
                ))
            }
            None => err = Some(Error::Config(format!("missing parameter {name}"))),
        }
    });
    match err {
        Some(e) => Err(e),
        None => Ok(()),
    }
}

fn joined(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

/// Convolution weight + per-channel bias.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvParams {
    /// `(C_out, C_in, k...)`.
    pub w: ArrayD<f64>,
    /// `(C_out,)`.
    pub b: ArrayD<f64>,
}

impl ConvParams {
    pub fn zeros2d(co: usize, ci: usize, kh: usize, kw: usize) -> Self {
        ConvParams {
            w: ArrayD::zeros(IxDyn(&[co, ci, kh, kw])),
            b: ArrayD::zeros(IxDyn(&[co])),
        }
    }

    pub fn zeros3d(co: usize, ci: usize, kt: usize, kh: usize, kw: usize) -> Self {
        ConvParams {
            w: ArrayD::zeros(IxDyn(&[co, ci, kt, kh, kw])),
            b: ArrayD::zeros(IxDyn(&[co])),
        }
    }

    /// Uniform Glorot init; biases zero.
    pub fn glorot2d(co: usize, ci: usize, kh: usize, kw: usize, rng: &mut ChaCha12Rng) -> Self {
        let mut p = Self::zeros2d(co, ci, kh, kw);
        let limit = (6.0 / ((ci * kh * kw + co * kh * kw) as f64)).sqrt();
        p.w.map_inplace(|v| *v = rng.gen_range(-limit..limit));
        p
    }

    pub fn glorot3d(co: usize, ci: usize, kt: usize, kh: usize, kw: usize, rng: &mut ChaCha12Rng) -> Self {
        let mut p = Self::zeros3d(co, ci, kt, kh, kw);
        let limit = (6.0 / ((ci * kt * kh * kw + co * kt * kh * kw) as f64)).sqrt();
        p.w.map_inplace(|v| *v = rng.gen_range(-limit..limit));
        p
    }

    /// Leaves on a tape (differentiable when `trainable`).
    pub fn bind(&self, t: &mut Tape, trainable: bool) -> ConvNodes {
        ConvNodes {
            w: t.leaf(self.w.clone(), trainable),
            b: t.leaf(self.b.clone(), trainable),
        }
    }

    pub fn out_channels(&self) -> usize {
        self.w.shape()[0]
    }
}

impl ParamVisit for ConvParams {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(&str, &'a ArrayD<f64>)) {
        f(&joined(prefix, "w"), &self.w);
        f(&joined(prefix, "b"), &self.b);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut ArrayD<f64>)) {
        f(&joined(prefix, "w"), &mut self.w);
        f(&joined(prefix, "b"), &mut self.b);
    }
}

/// Tape handles for one convolution layer.
#[derive(Debug, Clone, Copy)]
pub struct ConvNodes {
    pub w: Var,
    pub b: Var,
}

impl ConvNodes {
    /// Leaf handles in the same order [`ConvParams`] visits its arrays.
    pub fn push_vars(&self, out: &mut Vec<Var>) {
        out.push(self.w);
        out.push(self.b);
    }

    /// `conv2d(x, w) + b`.
    pub fn apply2d(&self, t: &mut Tape, x: Var) -> Var {
        let y = t.conv2d(x, self.w);
        t.add_chan_bias(y, self.b)
    }

    /// `conv3d(x, w) + b`.
    pub fn apply3d(&self, t: &mut Tape, x: Var) -> Var {
        let y = t.conv3d(x, self.w);
        t.add_chan_bias(y, self.b)
    }
}

/// Named list of sub-parameters, visited in order.
impl<P: ParamVisit> ParamVisit for Vec<P> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(&str, &'a ArrayD<f64>)) {
        for (i, p) in self.iter().enumerate() {
            p.visit(&joined(prefix, &i.to_string()), f);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut ArrayD<f64>)) {
        for (i, p) in self.iter_mut().enumerate() {
            p.visit_mut(&joined(prefix, &i.to_string()), f);
        }
    }
}
