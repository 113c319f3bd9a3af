//! Canned experiments sized for a single workstation: a 64-point domain,
//! a 120-day series, small networks, and short training schedules. Each
//! preset is an ordinary [`ExperimentConfig`] that could equally be written
//! out as a TOML file.

use std::collections::BTreeMap;

use anyhow::{bail, Result};

use varassim_core::baselines::OiConfig;
use varassim_core::cost::{Formulation, MmTermConfig, VariationalCostConfig};
use varassim_core::obs_ops::MultimodalOpConfig;
use varassim_core::osse::{SamplingConfig, WindowingConfig};
use varassim_core::prior::PriorConfig;
use varassim_core::solver::{SolverConfig, SolverKind};
use varassim_core::train::{DirectUnetConfig, FourDVarNetConfig, ModelConfig, TrainConfig};

use crate::config::{
    EvalSection, ExperimentConfig, GridSection, SplitSection, SstSection, TruthSection,
};

pub const PRESET_NAMES: [&str; 4] = ["benchmark", "ablation-mm", "mm-dims", "sst-resolution"];

fn desk_grid() -> GridSection {
    GridSection { w: 64, dx: 0.05, dt: 1.0, n_days: 120 }
}

fn desk_prior() -> PriorConfig {
    PriorConfig::UnetTwoScale { base_channels: 8, n_blocks: 1 }
}

fn desk_solver() -> SolverConfig {
    SolverConfig {
        kind: SolverKind::Lstm,
        n_iterations: 3,
        lstm_hidden: 10,
        lstm_kernel: (3, 3),
        normalize_gradient: false,
        inference_iterations: None,
    }
}

fn desk_cost(formulation: Formulation, mm: Option<MmTermConfig>) -> VariationalCostConfig {
    VariationalCostConfig {
        formulation,
        lambda1: 1.0,
        lambda2: 1.0,
        lambda3: matches!(formulation, Formulation::SshSst).then_some(1.0),
        gamma: 1.0,
        mm,
        weights_trainable: true,
        gamma_trainable: false,
    }
}

fn fourdvar(formulation: Formulation, mm: Option<MmTermConfig>) -> ModelConfig {
    ModelConfig::FourDVarNet(FourDVarNetConfig {
        cost: desk_cost(formulation, mm),
        prior: desk_prior(),
        solver: desk_solver(),
    })
}

/// Learned SST-synergy term at desk size: a compact space-time kernel, and
/// two layers instead of four for the nonlinear variant.
fn mm_linear(n_features: usize) -> MmTermConfig {
    let mut op = MultimodalOpConfig::linear(n_features);
    op.g1_kernel = (3, 3, 3);
    MmTermConfig::Multimodal(op)
}

fn mm_nonlinear(n_features: usize) -> MmTermConfig {
    let mut op = MultimodalOpConfig::nonlinear(n_features);
    op.g1_kernel = (3, 3, 3);
    op.n_layers = 2;
    MmTermConfig::Multimodal(op)
}

fn desk_base(run_name: &str, seed: u64) -> ExperimentConfig {
    ExperimentConfig {
        run_name: run_name.into(),
        output_root: "runs".into(),
        seed,
        grid: desk_grid(),
        truth: TruthSection::default(),
        sampling: SamplingConfig::default(),
        split: SplitSection { train_days: 80, validation_days: 20 },
        windowing: WindowingConfig { window_length: 7, stride: 3, noise_seed: seed },
        oi: OiConfig::default(),
        sst: SstSection::default(),
        train: TrainConfig { epochs: 25, patience: Some(10), seed, ..TrainConfig::default() },
        eval: EvalSection::default(),
        models: BTreeMap::new(),
    }
}

/// Builds one of the named presets with the given seed.
pub fn preset(name: &str, seed: u64) -> Result<ExperimentConfig> {
    use Formulation::{SshOnly, SshSst};
    let mut cfg = match name {
        // The head-to-head comparison: interpolation baseline (always
        // produced), direct regression, variational, variational + learned
        // SST term.
        "benchmark" => {
            let mut c = desk_base(name, seed);
            c.models.insert(
                "unet_direct".into(),
                ModelConfig::DirectUnet(DirectUnetConfig {
                    base_channels: 8,
                    n_blocks: 1,
                    use_sst: false,
                }),
            );
            c.models.insert("fourdvar_ssh".into(), fourdvar(SshOnly, None));
            c.models.insert("fourdvar_mm".into(), fourdvar(SshOnly, Some(mm_nonlinear(2))));
            c
        }
        // How the SST enters: not at all, through learned linear or
        // nonlinear operators, as a direct data term, or both.
        "ablation-mm" => {
            let mut c = desk_base(name, seed);
            c.models.insert("ssh_only".into(), fourdvar(SshOnly, None));
            c.models.insert("ssh_mm_linear".into(), fourdvar(SshOnly, Some(mm_linear(2))));
            c.models.insert("ssh_mm_nonlinear".into(), fourdvar(SshOnly, Some(mm_nonlinear(2))));
            c.models.insert("ssh_sst".into(), fourdvar(SshSst, None));
            c.models.insert("ssh_sst_mm".into(), fourdvar(SshSst, Some(mm_nonlinear(2))));
            c
        }
        // Width of the learned feature space.
        "mm-dims" => {
            let mut c = desk_base(name, seed);
            for n in [1usize, 2, 4] {
                c.models
                    .insert(format!("mm_feat{n:02}"), fourdvar(SshOnly, Some(mm_nonlinear(n))));
            }
            c
        }
        // One SST-consuming model re-evaluated on progressively degraded
        // SST; the 80-point domain makes every factor divide evenly.
        "sst-resolution" => {
            let mut c = desk_base(name, seed);
            c.grid.w = 80;
            c.eval.sst_factors = vec![1, 2, 4, 5, 10];
            c.models.insert("fourdvar_mm".into(), fourdvar(SshOnly, Some(mm_nonlinear(2))));
            c
        }
        other => bail!("unknown preset {other:?}; available: {}", PRESET_NAMES.join(", ")),
    };
    cfg.run_name = name.into();
    cfg.validate()?;
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_preset_validates() {
        for name in PRESET_NAMES {
            let cfg = preset(name, 3).expect(name);
            assert_eq!(cfg.run_name, name);
            assert_eq!(cfg.seed, 3);
            assert!(!cfg.models.is_empty(), "{name} must configure models");
        }
        assert!(preset("nope", 0).is_err());
    }

    #[test]
    fn benchmark_covers_the_three_model_families() {
        let cfg = preset("benchmark", 0).unwrap();
        let names: Vec<_> = cfg.models.keys().cloned().collect();
        assert_eq!(names, ["fourdvar_mm", "fourdvar_ssh", "unet_direct"]);
        assert!(matches!(cfg.models["unet_direct"], ModelConfig::DirectUnet(d) if !d.use_sst));
        match &cfg.models["fourdvar_mm"] {
            ModelConfig::FourDVarNet(c) => {
                assert!(matches!(c.cost.mm, Some(MmTermConfig::Multimodal(_))))
            }
            other => panic!("unexpected model {other:?}"),
        }
    }

    #[test]
    fn sst_resolution_factors_divide_the_width() {
        let cfg = preset("sst-resolution", 0).unwrap();
        assert_eq!(cfg.eval.sst_factors, vec![1, 2, 4, 5, 10]);
        for f in cfg.eval.sst_factors {
            assert_eq!(cfg.grid.w % f, 0);
        }
    }

    #[test]
    fn presets_survive_a_toml_roundtrip() {
        for name in PRESET_NAMES {
            let cfg = preset(name, 1).unwrap();
            let text = toml::to_string(&cfg).expect(name);
            let back: ExperimentConfig = toml::from_str(&text).expect(name);
            assert_eq!(back, cfg, "{name} must roundtrip");
        }
    }
}
