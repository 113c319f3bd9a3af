//! The experiment file: a TOML document with optional includes, mapped onto
//! the core configuration types and validated as a whole before any stage
//! writes an artifact.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use serde::{Deserialize, Serialize};

use varassim_core::baselines::OiConfig;
use varassim_core::grid::SpaceTimeGrid;
use varassim_core::metrics::MetricConfig;
use varassim_core::osse::{DatasetSplit, SamplingConfig, SstCoupling, TruthConfig, WindowingConfig};
use varassim_core::train::{ModelConfig, TrainConfig};

/// Deepest allowed include nesting; catches accidental include cycles.
const MAX_INCLUDE_DEPTH: usize = 8;

/// Names no model may take because the pipeline claims them for its own
/// outputs (the truth entry in plots, the interpolation baselines).
const RESERVED_METHOD_NAMES: [&str; 3] = ["truth", "oi", "sqg"];

/// Domain extent of the experiment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    /// Grid points per side of the square domain.
    pub w: usize,
    /// Grid spacing in degrees.
    pub dx: f64,
    /// Frame spacing in days.
    pub dt: f64,
    /// Length of the generated series in frames.
    pub n_days: usize,
}

impl GridSection {
    pub fn to_grid(&self) -> Result<SpaceTimeGrid> {
        Ok(SpaceTimeGrid::new(self.w, self.dx, self.dt, self.n_days)?)
    }
}

/// Synthetic-truth knobs. The grid and seed live elsewhere in the experiment
/// file, so this mirrors the core truth settings minus those two.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TruthSection {
    pub spectral_slope: f64,
    pub advection_speed: f64,
    pub sst_coupling: SstCoupling,
    pub sst_noise_amplitude: f64,
}

impl Default for TruthSection {
    fn default() -> Self {
        TruthSection {
            spectral_slope: -4.0,
            advection_speed: 0.5,
            sst_coupling: SstCoupling::default(),
            sst_noise_amplitude: 0.25,
        }
    }
}

impl TruthSection {
    pub fn to_config(&self, grid: SpaceTimeGrid, seed: u64) -> TruthConfig {
        TruthConfig {
            seed,
            grid,
            spectral_slope: self.spectral_slope,
            advection_speed: self.advection_speed,
            sst_coupling: self.sst_coupling,
            sst_noise_amplitude: self.sst_noise_amplitude,
        }
    }
}

/// Contiguous day budget per role; the test split takes the remainder.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSection {
    pub train_days: usize,
    pub validation_days: usize,
}

/// How the dense SST observations are degraded and complemented.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SstSection {
    /// Block-averaging factor applied to the true SST before any model sees
    /// it; 1 keeps the full resolution.
    pub factor: usize,
    /// Wavelength (degrees) splitting the interpolated low band from the
    /// SST-derived high band in the spectral-complement baseline.
    pub complement_cutoff_degrees: f64,
}

impl Default for SstSection {
    fn default() -> Self {
        SstSection { factor: 1, complement_cutoff_degrees: 1.2 }
    }
}

/// Scoring and rendering settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    /// Method every gain score is measured against; must name one of the
    /// reconstruction outputs (the interpolation baseline by default).
    pub baseline: String,
    /// Error-to-truth power ratio under which a scale counts as resolved.
    pub threshold: f64,
    /// Apply a Hann window before the spectra.
    pub hann: bool,
    /// Frames per stability chunk of the per-window skill column; omit to
    /// skip that column.
    pub mu_window_length: Option<usize>,
    /// Day to render maps for, counted from the start of the test period;
    /// defaults to its middle.
    pub plot_day: Option<usize>,
    /// Pixel magnification of the rendered maps.
    pub upscale: usize,
    /// SST coarsening factors swept at reconstruction time. With more than
    /// one entry, every SST-consuming model is re-run once per factor under
    /// a suffixed method name.
    pub sst_factors: Vec<usize>,
}

impl Default for EvalSection {
    fn default() -> Self {
        let m = MetricConfig::default();
        EvalSection {
            baseline: "oi".into(),
            threshold: m.threshold,
            hann: m.hann,
            mu_window_length: None,
            plot_day: None,
            upscale: 4,
            sst_factors: vec![1],
        }
    }
}

impl EvalSection {
    pub fn metric_config(&self) -> MetricConfig {
        MetricConfig {
            threshold: self.threshold,
            hann: self.hann,
            window_length: self.mu_window_length,
        }
    }
}

/// One full experiment: data geometry, sensing scenario, model variants, and
/// the training/scoring settings shared by all of them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Directory name of this run under `output_root`.
    pub run_name: String,
    /// Parent directory runs land in unless a command overrides it.
    #[serde(default = "default_output_root")]
    pub output_root: PathBuf,
    /// Master seed of the data generation.
    #[serde(default)]
    pub seed: u64,
    pub grid: GridSection,
    #[serde(default)]
    pub truth: TruthSection,
    #[serde(default)]
    pub sampling: SamplingConfig,
    pub split: SplitSection,
    #[serde(default)]
    pub windowing: WindowingConfig,
    #[serde(default)]
    pub oi: OiConfig,
    #[serde(default)]
    pub sst: SstSection,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub eval: EvalSection,
    /// Named model variants; every stage loops over these.
    pub models: BTreeMap<String, ModelConfig>,
}

fn default_output_root() -> PathBuf {
    PathBuf::from("runs")
}

impl ExperimentConfig {
    /// Checks every section, including cross-section constraints the core
    /// types cannot see on their own.
    pub fn validate(&self) -> Result<()> {
        if self.run_name.is_empty() {
            bail!("run_name must not be empty");
        }
        if !self
            .run_name
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_' || c == '.')
        {
            bail!(
                "run_name {:?} may only use ASCII letters, digits, '-', '_' and '.'",
                self.run_name
            );
        }
        let grid = self.grid.to_grid().context("grid")?;
        self.truth.to_config(grid, self.seed).validate().context("truth")?;
        self.sampling.validate().context("sampling")?;
        self.dataset_split().context("split")?;
        self.windowing.validate().context("windowing")?;
        self.oi.validate().context("oi")?;
        self.train.validate().context("train")?;
        self.eval.metric_config().validate().context("eval")?;
        if self.eval.upscale == 0 {
            bail!("eval.upscale must be at least 1");
        }
        if self.eval.baseline.is_empty() {
            bail!("eval.baseline must name a method");
        }
        if self.eval.sst_factors.is_empty() {
            bail!("eval.sst_factors must list at least one factor");
        }
        for &f in &self.eval.sst_factors {
            if f == 0 || self.grid.w % f != 0 {
                bail!(
                    "eval.sst_factors entry {f} must be at least 1 and divide the grid width {}",
                    self.grid.w
                );
            }
        }
        if self.sst.factor == 0 || self.grid.w % self.sst.factor != 0 {
            bail!(
                "sst.factor {} must be at least 1 and divide the grid width {}",
                self.sst.factor,
                self.grid.w
            );
        }
        if !(self.sst.complement_cutoff_degrees.is_finite() && self.sst.complement_cutoff_degrees > 0.0) {
            bail!("sst.complement_cutoff_degrees must be positive and finite");
        }
        if self.models.is_empty() {
            bail!("at least one [models.<name>] table is required");
        }
        for (name, model) in &self.models {
            if name.is_empty() || !name.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_') {
                bail!("model name {name:?} may only use ASCII letters, digits, '-' and '_'");
            }
            if RESERVED_METHOD_NAMES.contains(&name.as_str()) {
                bail!("model name {name:?} is reserved for a pipeline output");
            }
            model.validate().with_context(|| format!("models.{name}"))?;
        }
        let t_win = self.windowing.window_length;
        let test_days = self
            .grid
            .n_days
            .saturating_sub(self.split.train_days + self.split.validation_days);
        for (role, days) in [
            ("train", self.split.train_days),
            ("validation", self.split.validation_days),
            ("test", test_days),
        ] {
            if days < t_win {
                bail!("the {role} split ({days} days) is shorter than one {t_win}-day window");
            }
        }
        Ok(())
    }

    pub fn dataset_split(&self) -> Result<DatasetSplit> {
        Ok(DatasetSplit::contiguous(
            self.grid.n_days,
            self.split.train_days,
            self.split.validation_days,
        )?)
    }

    pub fn truth_config(&self) -> Result<TruthConfig> {
        Ok(self.truth.to_config(self.grid.to_grid()?, self.seed))
    }

    /// Where the run lands when no explicit directory is given.
    pub fn default_run_dir(&self) -> PathBuf {
        self.output_root.join(&self.run_name)
    }
}

/// On-disk record sealing a data directory: the exact configuration, a hash
/// over the generated files, and the window layout they imply.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub tool_version: String,
    pub config: ExperimentConfig,
    /// SHA-256 over the generated data files, in a fixed order.
    pub data_sha256: String,
    pub train_starts: Vec<usize>,
    pub validation_starts: Vec<usize>,
    pub test_starts: Vec<usize>,
}

/// Reads a TOML experiment file, resolves its `include` list, and validates
/// the merged result. Includes are paths relative to the including file;
/// tables merge key-wise with the including file winning, anything else
/// (scalars, arrays) replaces wholesale.
pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let table = load_merged(path, 0)?;
    config_from_value(toml::Value::Table(table))
}

/// Parses an already-merged TOML value. Unknown keys are rejected with the
/// offending key named in the error.
pub fn config_from_value(value: toml::Value) -> Result<ExperimentConfig> {
    let cfg: ExperimentConfig = value.try_into().map_err(|e| anyhow!("{e}"))?;
    cfg.validate()?;
    Ok(cfg)
}

fn load_merged(path: &Path, depth: usize) -> Result<toml::Table> {
    if depth > MAX_INCLUDE_DEPTH {
        bail!(
            "include chain deeper than {MAX_INCLUDE_DEPTH} at {}; is there an include cycle?",
            path.display()
        );
    }
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut table: toml::Table =
        text.parse().with_context(|| format!("parsing {}", path.display()))?;
    let includes = match table.remove("include") {
        None => Vec::new(),
        Some(toml::Value::Array(items)) => items
            .into_iter()
            .map(|v| match v {
                toml::Value::String(s) => Ok(s),
                other => Err(anyhow!(
                    "include entries in {} must be path strings, got {other:?}",
                    path.display()
                )),
            })
            .collect::<Result<Vec<_>>>()?,
        Some(_) => bail!("include in {} must be an array of path strings", path.display()),
    };
    let dir = path.parent().map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from("."));
    let mut merged = toml::Table::new();
    for inc in includes {
        let sub = load_merged(&dir.join(&inc), depth + 1)?;
        merge_tables(&mut merged, sub);
    }
    merge_tables(&mut merged, table);
    Ok(merged)
}

/// Deep merge: tables merge key-wise, any other value replaces wholesale.
fn merge_tables(base: &mut toml::Table, over: toml::Table) {
    for (key, value) in over {
        match (base.remove(&key), value) {
            (Some(toml::Value::Table(mut b)), toml::Value::Table(o)) => {
                merge_tables(&mut b, o);
                base.insert(key, toml::Value::Table(b));
            }
            (_, value) => {
                base.insert(key, value);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    const MINIMAL: &str = r#"
run_name = "t"

[grid]
w = 16
dx = 0.05
dt = 1.0
n_days = 30

[split]
train_days = 18
validation_days = 6

[windowing]
window_length = 5

[models.m]
kind = "direct_unet"
base_channels = 4
n_blocks = 1
use_sst = false
"#;

    fn write_file(dir: &Path, name: &str, text: &str) -> PathBuf {
        let path = dir.join(name);
        let mut f = fs::File::create(&path).unwrap();
        f.write_all(text.as_bytes()).unwrap();
        path
    }

    #[test]
    fn minimal_config_parses_with_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_file(dir.path(), "exp.toml", MINIMAL);
        let cfg = load_config(&path).unwrap();
        assert_eq!(cfg.run_name, "t");
        assert_eq!(cfg.output_root, PathBuf::from("runs"));
        assert_eq!(cfg.seed, 0);
        assert_eq!(cfg.sst.factor, 1);
        assert_eq!(cfg.eval.baseline, "oi");
        assert_eq!(cfg.eval.sst_factors, vec![1]);
        assert_eq!(cfg.windowing.window_length, 5);
        assert_eq!(cfg.windowing.stride, 1, "unset windowing keys keep their defaults");
        assert!(cfg.models.contains_key("m"));
    }

    #[test]
    fn truth_section_defaults_match_core_defaults() {
        let grid = SpaceTimeGrid::new(16, 0.05, 1.0, 10).unwrap();
        let from_section = TruthSection::default().to_config(grid, 7);
        let from_core = TruthConfig::new(grid, 7);
        assert_eq!(from_section, from_core);
    }

    #[test]
    fn unknown_keys_are_rejected_by_name() {
        let dir = tempfile::tempdir().unwrap();
        let text = MINIMAL.replace("[split]", "typo_key = 3\n\n[split]");
        let path = write_file(dir.path(), "exp.toml", &text);
        let err = format!("{:#}", load_config(&path).unwrap_err());
        assert!(err.contains("typo_key"), "error must name the bad key: {err}");

        let text = MINIMAL.replace("dx = 0.05", "dx = 0.05\nwx = 1");
        let path = write_file(dir.path(), "exp2.toml", &text);
        let err = format!("{:#}", load_config(&path).unwrap_err());
        assert!(err.contains("wx"), "error must name the bad nested key: {err}");
    }

    #[test]
    fn includes_merge_depth_first_with_overrides() {
        let dir = tempfile::tempdir().unwrap();
        write_file(
            dir.path(),
            "base.toml",
            &format!("{MINIMAL}\n[train]\nepochs = 9\nlearning_rate = 0.5\n"),
        );
        let top = write_file(
            dir.path(),
            "top.toml",
            "include = [\"base.toml\"]\nrun_name = \"over\"\n\n[train]\nepochs = 3\n",
        );
        let cfg = load_config(&top).unwrap();
        assert_eq!(cfg.run_name, "over", "scalar override");
        assert_eq!(cfg.train.epochs, 3, "nested override");
        assert_eq!(cfg.train.learning_rate, 0.5, "sibling keys survive the merge");
        assert_eq!(cfg.grid.w, 16, "included sections pass through");
    }

    #[test]
    fn include_cycles_hit_the_depth_cap() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_file(dir.path(), "self.toml", "include = [\"self.toml\"]\n");
        let err = format!("{:#}", load_config(&path).unwrap_err());
        assert!(err.contains("include"), "unexpected error: {err}");
    }

    #[test]
    fn validation_rejects_bad_cross_section_settings() {
        let dir = tempfile::tempdir().unwrap();
        let cases = [
            // Split leaves no test days.
            ("train_days = 18", "train_days = 28", "test"),
            // SST factor does not divide the width.
            ("[split]", "[sst]\nfactor = 3\n\n[split]", "factor"),
            // Reserved model name.
            ("[models.m]", "[models.oi]", "reserved"),
            // Zero upscale.
            ("[split]", "[eval]\nupscale = 0\n\n[split]", "upscale"),
        ];
        for (needle, replacement, expect) in cases {
            let text = MINIMAL.replace(needle, replacement);
            let path = write_file(dir.path(), "bad.toml", &text);
            let err = format!("{:#}", load_config(&path).unwrap_err());
            assert!(
                err.to_lowercase().contains(expect),
                "expected {expect:?} in: {err}"
            );
        }
    }

    #[test]
    fn fourdvarnet_model_table_roundtrips() {
        let dir = tempfile::tempdir().unwrap();
        let text = format!(
            "{MINIMAL}\n{}",
            r#"
[models.fv]
kind = "fourdvarnet"

[models.fv.cost]
formulation = "ssh_only"

[models.fv.cost.mm]
kind = "multimodal"
op_kind = "linear"
n_features = 2
n_layers = 1
activation = "tanh"
g1_kernel = [3, 3, 3]
g2_kernel = [3, 3]
g2_input = "packed_state"

[models.fv.prior]
kind = "unet_two_scale"
base_channels = 4
n_blocks = 1

[models.fv.solver]
n_iterations = 2
lstm_hidden = 4

[models.fv.solver.kind]
kind = "lstm"
"#
        );
        let path = write_file(dir.path(), "exp.toml", &text);
        let cfg = load_config(&path).unwrap();
        let encoded = toml::to_string(&cfg).unwrap();
        let back: ExperimentConfig = toml::from_str(&encoded).unwrap();
        assert_eq!(back, cfg, "serialize/deserialize must be lossless");
    }
}
