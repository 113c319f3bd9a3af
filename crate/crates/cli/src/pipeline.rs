//! The stages behind the command line: data generation, training,
//! reconstruction, baselines, evaluation, and map rendering. Every stage
//! works off a run directory whose layout is fixed here:
//!
//! ```text
//! <run>/manifest.json          configuration + data hash + window layout
//! <run>/truth/{ssh,sst}.nc     generated truth series
//! <run>/obs/alongtrack.nc      masked noisy track samples (with the mask)
//! <run>/obs/coarse.nc          optimal-interpolation product, full series
//! <run>/obs/sst.nc             SST as the models see it (maybe degraded)
//! <run>/models/<name>.ckpt     trained parameters
//! <run>/recon/<label>/test.nc  stitched test-period reconstructions
//! <run>/report/                metric table (csv/json) and maps
//! <run>/features/              learned SST feature maps
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use ndarray::{Array2, Axis};
use sha2::{Digest, Sha256};

use varassim_core::baselines::{oi_interpolate, sqg_complement, SqgComplementConfig};
use varassim_core::cost::MmTermConfig;
use varassim_core::grid::{Mask, SpaceTimeField};
use varassim_core::metrics::{self, MetricReport, Resolution};
use varassim_core::ncio;
use varassim_core::obs_ops::g1_features;
use varassim_core::osse::{
    coarsen_sst, generate_truth, sample_alongtrack, sampling_mask, windows_from_parts,
    DatasetSplit, WindowedData,
};
use varassim_core::plotting;
use varassim_core::state::ObservationSet;
use varassim_core::train::{
    load_model, save_model, train, ModelConfig, ModelParams, SplitDataset,
};

use crate::config::{ExperimentConfig, Manifest};

/// Relative paths of the generated data files, in the order they are hashed.
const DATA_FILES: [&str; 5] = [
    "truth/ssh.nc",
    "truth/sst.nc",
    "obs/alongtrack.nc",
    "obs/coarse.nc",
    "obs/sst.nc",
];

/// Fixed layout of one run directory.
#[derive(Debug, Clone)]
pub struct RunDir {
    pub root: PathBuf,
}

impl RunDir {
    pub fn new(root: PathBuf) -> Self {
        RunDir { root }
    }

    pub fn manifest(&self) -> PathBuf {
        self.root.join("manifest.json")
    }

    pub fn model_ckpt(&self, name: &str) -> PathBuf {
        self.root.join("models").join(format!("{name}.ckpt"))
    }

    pub fn recon_file(&self, label: &str) -> PathBuf {
        self.root.join("recon").join(label).join("test.nc")
    }

    pub fn report_dir(&self) -> PathBuf {
        self.root.join("report")
    }

    pub fn plots_dir(&self) -> PathBuf {
        self.root.join("report").join("plots")
    }

    pub fn features_dir(&self) -> PathBuf {
        self.root.join("features")
    }

    fn data_file(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }
}

/// Everything the later stages need in memory; identical whether the data
/// was just generated or loaded back from the directory.
#[derive(Debug)]
pub struct Dataset {
    pub ssh: SpaceTimeField,
    pub sst_truth: SpaceTimeField,
    /// SST as the models observe it (block-averaged by the base factor).
    pub sst_obs: SpaceTimeField,
    pub alongtrack: SpaceTimeField,
    pub mask: Mask,
    pub coarse: SpaceTimeField,
    pub split: DatasetSplit,
    pub windows: WindowedData,
    pub data_sha256: String,
}

fn hash_data_files(dir: &RunDir) -> Result<String> {
    let mut h = Sha256::new();
    for rel in DATA_FILES {
        let path = dir.data_file(rel);
        let bytes = fs::read(&path).with_context(|| format!("reading {}", path.display()))?;
        h.update((rel.len() as u64).to_le_bytes());
        h.update(rel.as_bytes());
        h.update((bytes.len() as u64).to_le_bytes());
        h.update(&bytes);
    }
    Ok(h.finalize().iter().map(|b| format!("{b:02x}")).collect())
}

/// Generates the truth, sampling masks, observations, and the coarse
/// interpolation product, writes them under `dir`, and seals the directory
/// with a manifest.
pub fn gen_data(cfg: &ExperimentConfig, dir: &RunDir, force: bool) -> Result<Dataset> {
    cfg.validate()?;
    if dir.manifest().exists() && !force {
        bail!(
            "{} already holds a generated dataset; pass --force to regenerate",
            dir.root.display()
        );
    }
    let t0 = Instant::now();
    let grid = cfg.grid.to_grid()?;
    fs::create_dir_all(dir.root.join("truth"))?;
    fs::create_dir_all(dir.root.join("obs"))?;

    log::info!(
        "generating the {}-day truth on a {}x{} grid (seed {})",
        grid.n_time,
        grid.w,
        grid.w,
        cfg.seed
    );
    let (ssh, sst_truth) = generate_truth(&cfg.truth_config()?)?;
    let sst_obs = coarsen_sst(&sst_truth, cfg.sst.factor)?;
    let mask = sampling_mask(&grid, &cfg.sampling, cfg.seed)?;
    let alongtrack = sample_alongtrack(&ssh, &mask, &cfg.sampling, cfg.windowing.noise_seed)?;

    log::info!("interpolating the track samples into the coarse product");
    let full_obs =
        ObservationSet::new(alongtrack.clone(), mask.clone(), SpaceTimeField::zeros(grid), None)?;
    let coarse = oi_interpolate(&full_obs, &cfg.oi)?;

    ncio::save_field(&dir.data_file("truth/ssh.nc"), "ssh", &ssh, None)?;
    ncio::save_field(&dir.data_file("truth/sst.nc"), "sst", &sst_truth, None)?;
    ncio::save_field(&dir.data_file("obs/alongtrack.nc"), "ssh_alongtrack", &alongtrack, Some(&mask))?;
    ncio::save_field(&dir.data_file("obs/coarse.nc"), "ssh_coarse", &coarse, None)?;
    ncio::save_field(&dir.data_file("obs/sst.nc"), "sst", &sst_obs, None)?;

    let split = cfg.dataset_split()?;
    let windows =
        windows_from_parts(&ssh, Some(&sst_obs), &alongtrack, &mask, &coarse, &split, &cfg.windowing)?;
    let data_sha256 = hash_data_files(dir)?;
    let manifest = Manifest {
        tool_version: env!("CARGO_PKG_VERSION").into(),
        config: cfg.clone(),
        data_sha256: data_sha256.clone(),
        train_starts: windows.train.starts.clone(),
        validation_starts: windows.validation.starts.clone(),
        test_starts: windows.test.starts.clone(),
    };
    let f = fs::File::create(dir.manifest())?;
    serde_json::to_writer_pretty(f, &manifest)?;
    log::info!(
        "data directory ready in {:.1}s: {}",
        t0.elapsed().as_secs_f64(),
        dir.root.display()
    );
    Ok(Dataset {
        ssh,
        sst_truth,
        sst_obs,
        alongtrack,
        mask,
        coarse,
        split,
        windows,
        data_sha256,
    })
}

/// Reads a sealed run directory back: the manifest, the five data files, an
/// integrity check against the recorded hash, and the same windowing as at
/// generation time.
pub fn load_run(dir: &RunDir) -> Result<(ExperimentConfig, Dataset)> {
    let path = dir.manifest();
    let text = fs::read_to_string(&path)
        .with_context(|| format!("reading {}; run gen-data first", path.display()))?;
    let manifest: Manifest =
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    let cfg = manifest.config.clone();
    cfg.validate().context("the manifest holds an invalid configuration")?;
    let data_sha256 = hash_data_files(dir)?;
    if data_sha256 != manifest.data_sha256 {
        bail!(
            "data files under {} do not match the manifest hash; regenerate with gen-data --force",
            dir.root.display()
        );
    }
    let (ssh, _) = ncio::load_field(&dir.data_file("truth/ssh.nc"), "ssh")?;
    let (sst_truth, _) = ncio::load_field(&dir.data_file("truth/sst.nc"), "sst")?;
    let (alongtrack, mask) = ncio::load_field(&dir.data_file("obs/alongtrack.nc"), "ssh_alongtrack")?;
    let mask = mask.context("obs/alongtrack.nc is missing its sampling mask")?;
    let (coarse, _) = ncio::load_field(&dir.data_file("obs/coarse.nc"), "ssh_coarse")?;
    let (sst_obs, _) = ncio::load_field(&dir.data_file("obs/sst.nc"), "sst")?;
    let split = cfg.dataset_split()?;
    let windows =
        windows_from_parts(&ssh, Some(&sst_obs), &alongtrack, &mask, &coarse, &split, &cfg.windowing)?;
    if windows.test.starts != manifest.test_starts
        || windows.train.starts != manifest.train_starts
        || windows.validation.starts != manifest.validation_starts
    {
        bail!("the window layout no longer matches the manifest; regenerate with gen-data --force");
    }
    Ok((
        cfg,
        Dataset {
            ssh,
            sst_truth,
            sst_obs,
            alongtrack,
            mask,
            coarse,
            split,
            windows,
            data_sha256,
        },
    ))
}

fn select_models<'a>(
    cfg: &'a ExperimentConfig,
    only: Option<&str>,
) -> Result<Vec<(&'a str, &'a ModelConfig)>> {
    match only {
        None => Ok(cfg.models.iter().map(|(n, m)| (n.as_str(), m)).collect()),
        Some(name) => {
            let (key, m) = cfg.models.get_key_value(name).with_context(|| {
                format!(
                    "model {name:?} is not configured; available: {}",
                    cfg.models.keys().cloned().collect::<Vec<_>>().join(", ")
                )
            })?;
            Ok(vec![(key.as_str(), m)])
        }
    }
}

/// Trains every configured model (or just `only`) and writes one checkpoint
/// per model.
pub fn train_models(
    cfg: &ExperimentConfig,
    ds: &Dataset,
    dir: &RunDir,
    only: Option<&str>,
    force: bool,
) -> Result<()> {
    fs::create_dir_all(dir.root.join("models"))?;
    for (name, model) in select_models(cfg, only)? {
        let ckpt = dir.model_ckpt(name);
        if ckpt.exists() && !force {
            bail!("{} already exists; pass --force to retrain", ckpt.display());
        }
        let t0 = Instant::now();
        log::info!(
            "training {name} on {} windows ({} validation)",
            ds.windows.train.samples.len(),
            ds.windows.validation.samples.len()
        );
        let dataset = SplitDataset {
            train: ds.windows.train.samples.clone(),
            val: ds.windows.validation.samples.clone(),
        };
        let trained = train(&dataset, model, None, &cfg.train, &ds.data_sha256)
            .with_context(|| format!("training {name}"))?;
        log::info!(
            "{name}: kept epoch {} of {}, {:.1}s",
            trained.best_epoch + 1,
            trained.history.len(),
            t0.elapsed().as_secs_f64()
        );
        if let Some((l1, l2, l3, gamma)) = trained.trained_weights() {
            match l3 {
                Some(l3) => log::info!(
                    "{name}: fitted weights lambda1={l1:.4} lambda2={l2:.4} lambda3={l3:.4} gamma={gamma:.4}"
                ),
                None => log::info!(
                    "{name}: fitted weights lambda1={l1:.4} lambda2={l2:.4} gamma={gamma:.4}"
                ),
            }
        }
        save_model(&ckpt, &trained)?;
    }
    Ok(())
}

/// First day and length of the contiguous span covered by the test windows.
fn test_period(cfg: &ExperimentConfig, ds: &Dataset) -> (usize, usize) {
    let t_win = cfg.windowing.window_length;
    let starts = &ds.windows.test.starts;
    let first = *starts.iter().min().expect("windowing guarantees a test window");
    let last = *starts.iter().max().expect("windowing guarantees a test window");
    (first, last + t_win - first)
}

/// Runs each trained model over the test windows and stitches the pieces
/// into `recon/<label>/test.nc`. With several SST factors configured, every
/// SST-consuming model is re-run per factor under a suffixed label.
pub fn reconstruct_models(
    cfg: &ExperimentConfig,
    ds: &Dataset,
    dir: &RunDir,
    only: Option<&str>,
    force: bool,
) -> Result<Vec<String>> {
    let (first_day, len) = test_period(cfg, ds);
    let grid_test = ds.ssh.grid().with_n_time(len)?;
    let mut factors = cfg.eval.sst_factors.clone();
    factors.sort_unstable();
    factors.dedup();
    let sweep = factors.len() > 1;

    let mut labels = Vec::new();
    for (name, model_cfg) in select_models(cfg, only)? {
        let ckpt = dir.model_ckpt(name);
        let trained =
            load_model(&ckpt).with_context(|| format!("loading {}; run train first", ckpt.display()))?;
        if trained.manifest_hash != ds.data_sha256 {
            bail!(
                "{} was trained on different data than this directory holds; retrain with --force",
                ckpt.display()
            );
        }
        if &trained.model != model_cfg {
            bail!(
                "{} holds a different model configuration than the manifest; retrain with --force",
                ckpt.display()
            );
        }
        let swept = sweep && model_cfg.needs_sst();
        let model_factors: &[usize] = if swept { &factors } else { &factors[..1] };
        for &factor in model_factors {
            let label = if swept { format!("{name}_sstx{factor:02}") } else { name.to_string() };
            let out = dir.recon_file(&label);
            if out.exists() && !force {
                bail!("{} already exists; pass --force to redo it", out.display());
            }
            let t0 = Instant::now();
            let rebuilt;
            let test = if factor == 1 {
                &ds.windows.test
            } else {
                let sst = coarsen_sst(&ds.sst_obs, factor)?;
                rebuilt = windows_from_parts(
                    &ds.ssh,
                    Some(&sst),
                    &ds.alongtrack,
                    &ds.mask,
                    &ds.coarse,
                    &ds.split,
                    &cfg.windowing,
                )?;
                &rebuilt.test
            };
            let mut pieces = Vec::with_capacity(test.samples.len());
            for (sample, &start) in test.samples.iter().zip(&test.starts) {
                pieces.push((start - first_day, trained.reconstruct(&sample.obs)?));
            }
            let stitched = metrics::stitch_windows(grid_test, &pieces)?;
            fs::create_dir_all(out.parent().expect("recon files sit under a directory"))?;
            ncio::save_field(&out, "ssh_recon", &stitched, None)?;
            log::info!(
                "reconstructed {label}: {} windows over days {}..{} in {:.1}s",
                test.samples.len(),
                first_day,
                first_day + len,
                t0.elapsed().as_secs_f64()
            );
            labels.push(label);
        }
    }
    Ok(labels)
}

/// Writes the interpolation baseline and its SST spectral complement over
/// the test period.
pub fn baselines(cfg: &ExperimentConfig, ds: &Dataset, dir: &RunDir, force: bool) -> Result<()> {
    let (first_day, len) = test_period(cfg, ds);
    let oi_test = ds.coarse.window(first_day, len)?;
    let sst_test = ds.sst_obs.window(first_day, len)?;
    for (label, field) in [
        ("oi", oi_test.clone()),
        (
            "sqg",
            sqg_complement(
                &oi_test,
                &sst_test,
                &SqgComplementConfig { cutoff_degrees: cfg.sst.complement_cutoff_degrees },
            )?,
        ),
    ] {
        let out = dir.recon_file(label);
        if out.exists() && !force {
            bail!("{} already exists; pass --force to redo it", out.display());
        }
        fs::create_dir_all(out.parent().expect("recon files sit under a directory"))?;
        ncio::save_field(&out, "ssh_recon", &field, None)?;
        log::info!("baseline {label} written over days {}..{}", first_day, first_day + len);
    }
    Ok(())
}

/// Loads a reconstruction series, accepting either variable name so files
/// from outside a run directory also work.
fn load_recon_file(path: &Path) -> Result<SpaceTimeField> {
    let (field, _) = ncio::load_field(path, "ssh_recon").or_else(|_| ncio::load_field(path, "ssh"))?;
    Ok(field)
}

/// Every stitched reconstruction under `recon/`, keyed by its label.
fn load_recons(dir: &RunDir) -> Result<BTreeMap<String, SpaceTimeField>> {
    let root = dir.root.join("recon");
    let entries = fs::read_dir(&root).with_context(|| {
        format!("listing {}; run reconstruct and baseline first", root.display())
    })?;
    let mut methods = BTreeMap::new();
    for entry in entries {
        let path = entry?.path();
        if !path.is_dir() {
            continue;
        }
        let file = path.join("test.nc");
        if !file.exists() {
            continue;
        }
        let label = path
            .file_name()
            .expect("read_dir yields named entries")
            .to_string_lossy()
            .into_owned();
        let field = load_recon_file(&file).with_context(|| format!("loading {}", file.display()))?;
        methods.insert(label, field);
    }
    if methods.is_empty() {
        bail!("no reconstructions under {}; run reconstruct and baseline first", root.display());
    }
    Ok(methods)
}

fn resolve_plot_day(requested: Option<usize>, len: usize) -> Result<usize> {
    let day = requested.unwrap_or(len / 2);
    if day >= len {
        bail!("plot day {day} is outside the {len}-day test period");
    }
    Ok(day)
}

/// Scores every reconstruction under `recon/` against the test-period truth,
/// writes the report table and JSON, and renders the shared-scale maps.
pub fn evaluate(
    cfg: &ExperimentConfig,
    ds: &Dataset,
    dir: &RunDir,
    force: bool,
) -> Result<Vec<MetricReport>> {
    let (first_day, len) = test_period(cfg, ds);
    let truth_test = ds.ssh.window(first_day, len)?;
    let methods = load_recons(dir)?;
    for (label, field) in &methods {
        if field.grid() != truth_test.grid() {
            bail!("reconstruction {label} is not on the test-period grid");
        }
    }
    if !methods.contains_key(&cfg.eval.baseline) {
        bail!(
            "baseline {:?} has no reconstruction under {}; run baseline first",
            cfg.eval.baseline,
            dir.root.join("recon").display()
        );
    }
    let rows = metrics::report(&truth_test, &methods, &cfg.eval.baseline, &cfg.eval.metric_config())?;
    fs::create_dir_all(dir.report_dir())?;
    let csv = dir.report_dir().join("report.csv");
    if csv.exists() && !force {
        bail!("{} already exists; pass --force to redo the evaluation", csv.display());
    }
    metrics::write_report_csv(&csv, &rows)?;
    metrics::write_report_json(&dir.report_dir().join("report.json"), &rows)?;

    let day = resolve_plot_day(cfg.eval.plot_day, len)?;
    let mut map_fields = methods;
    map_fields.insert("truth".into(), truth_test);
    plotting::plot_fields(&dir.plots_dir(), &map_fields, day, &[], cfg.eval.upscale)?;
    plotting::plot_ssh_maps(&dir.plots_dir(), &map_fields, day, cfg.eval.upscale)?;
    log::info!("report and maps written under {}", dir.report_dir().display());
    Ok(rows)
}

/// Scores explicitly listed reconstruction files against a truth file,
/// without a run directory. Metric settings take their defaults.
pub fn evaluate_files(
    truth_path: &Path,
    recons: &[(String, PathBuf)],
    baseline: &str,
    out_dir: &Path,
    force: bool,
) -> Result<Vec<MetricReport>> {
    let (truth, _) = ncio::load_field(truth_path, "ssh")
        .or_else(|_| ncio::load_field(truth_path, "ssh_recon"))
        .with_context(|| format!("loading the truth from {}", truth_path.display()))?;
    let mut methods = BTreeMap::new();
    for (name, path) in recons {
        let field = load_recon_file(path).with_context(|| format!("loading {}", path.display()))?;
        if field.grid() != truth.grid() {
            bail!("reconstruction {name} is not on the truth grid");
        }
        if methods.insert(name.clone(), field).is_some() {
            bail!("reconstruction name {name:?} given twice");
        }
    }
    let rows = metrics::report(&truth, &methods, baseline, &Default::default())?;
    fs::create_dir_all(out_dir)?;
    let csv = out_dir.join("report.csv");
    if csv.exists() && !force {
        bail!("{} already exists; pass --force to overwrite it", csv.display());
    }
    metrics::write_report_csv(&csv, &rows)?;
    metrics::write_report_json(&out_dir.join("report.json"), &rows)?;
    Ok(rows)
}

/// Renders the shared-scale gradient/Laplacian/SSH maps for one test day
/// without recomputing the metric table.
pub fn render_plots(
    cfg: &ExperimentConfig,
    ds: &Dataset,
    dir: &RunDir,
    day: Option<usize>,
    force: bool,
) -> Result<Vec<PathBuf>> {
    let (first_day, len) = test_period(cfg, ds);
    let day = resolve_plot_day(day.or(cfg.eval.plot_day), len)?;
    let marker = format!("day{day:03}.png");
    let plots = dir.plots_dir();
    if !force && plots.is_dir() {
        for entry in fs::read_dir(&plots)? {
            let name = entry?.file_name().to_string_lossy().into_owned();
            if name.ends_with(&marker) {
                bail!(
                    "{} already holds maps for day {day}; pass --force to redo them",
                    plots.display()
                );
            }
        }
    }
    let mut map_fields = load_recons(dir)?;
    map_fields.insert("truth".into(), ds.ssh.window(first_day, len)?);
    let mut written = plotting::plot_fields(&plots, &map_fields, day, &[], cfg.eval.upscale)?;
    written.extend(plotting::plot_ssh_maps(&plots, &map_fields, day, cfg.eval.upscale)?);
    Ok(written)
}

/// Renders the learned SST feature maps of a trained multimodal model for
/// one test day, all on a shared color range.
pub fn render_features(
    cfg: &ExperimentConfig,
    ds: &Dataset,
    dir: &RunDir,
    model_name: &str,
    day: Option<usize>,
    force: bool,
) -> Result<Vec<PathBuf>> {
    let (first_day, len) = test_period(cfg, ds);
    let day = resolve_plot_day(day, len)?;
    let abs_day = first_day + day;

    let ckpt = dir.model_ckpt(model_name);
    let trained =
        load_model(&ckpt).with_context(|| format!("loading {}; run train first", ckpt.display()))?;
    if trained.manifest_hash != ds.data_sha256 {
        bail!("{} was trained on different data than this directory holds", ckpt.display());
    }
    let (op_cfg, mm_params) = match (&trained.model, &trained.params) {
        (ModelConfig::FourDVarNet(c), ModelParams::FourDVarNet { cost, .. }) => {
            match (c.cost.mm, &cost.mm) {
                (Some(MmTermConfig::Multimodal(op)), Some(p)) => (op, p),
                _ => bail!("model {model_name} has no learned SST operators to render"),
            }
        }
        _ => bail!("model {model_name} has no learned SST operators to render"),
    };

    let t_win = cfg.windowing.window_length;
    let (idx, &start) = ds
        .windows
        .test
        .starts
        .iter()
        .enumerate()
        .find(|(_, &s)| abs_day >= s && abs_day < s + t_win)
        .with_context(|| format!("no test window covers day {abs_day}"))?;
    let obs = &ds.windows.test.samples[idx].obs;
    let sst = obs.sst.as_ref().context("the observation windows carry no SST")?;
    let features = g1_features(sst, mm_params, &op_cfg)?;
    let frame_in_window = abs_day - start;
    let frames: Vec<Array2<f64>> = (0..op_cfg.n_features)
        .map(|f| features.index_axis(Axis(0), f * t_win + frame_in_window).to_owned())
        .collect();

    let out_dir = dir.features_dir();
    fs::create_dir_all(&out_dir)?;
    let mut written = Vec::new();
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for frame in &frames {
        for &v in frame {
            lo = lo.min(v);
            hi = hi.max(v);
        }
    }
    for (i, frame) in frames.iter().enumerate() {
        let path = out_dir.join(format!("{model_name}_feature{i:02}_day{abs_day:03}.png"));
        if path.exists() && !force {
            bail!("{} already exists; pass --force to redo it", path.display());
        }
        plotting::heatmap_png(&path, &frame.view(), lo, hi, cfg.eval.upscale)?;
        written.push(path);
    }
    Ok(written)
}

fn format_resolution(r: &Resolution) -> String {
    match r.value() {
        Some(v) => format!("{v:.3}"),
        None => "unresolved".into(),
    }
}

/// Renders the metric rows as an aligned text table for the terminal.
pub fn format_report(rows: &[MetricReport]) -> String {
    let mut table = vec![vec![
        "method".to_string(),
        "mu".to_string(),
        "lambda_x (deg)".to_string(),
        "lambda_t (days)".to_string(),
        "tau_ssh (%)".to_string(),
        "tau_grad (%)".to_string(),
        "tau_lap (%)".to_string(),
    ]];
    for r in rows {
        table.push(vec![
            r.method.clone(),
            format!("{:.4}", r.mu),
            format_resolution(&r.lambda_x),
            format_resolution(&r.lambda_t),
            format!("{:.2}", r.tau_ssh),
            format!("{:.2}", r.tau_grad_ssh),
            format!("{:.2}", r.tau_lap_ssh),
        ]);
    }
    let widths: Vec<usize> = (0..table[0].len())
        .map(|c| table.iter().map(|row| row[c].len()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for row in &table {
        for (c, cell) in row.iter().enumerate() {
            if c == 0 {
                out.push_str(&format!("{cell:<width$}", width = widths[c]));
            } else {
                out.push_str(&format!("  {cell:>width$}", width = widths[c]));
            }
        }
        out.push('\n');
    }
    out
}
