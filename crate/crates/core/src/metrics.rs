//! Reconstruction quality metrics and the comparison table.
//!
//! Six numbers summarize a method: the normalized error score μ, the smallest
//! resolved spatial and temporal scales (from noise-to-signal spectra), the
//! relative MSE gains over a baseline on the field and its spatial gradient,
//! and the explained variance of the Laplacian. All of them work on dense
//! space-time SSH fields covering the evaluation period.

use std::collections::BTreeMap;
use std::fmt;
use std::fs::File;
use std::io::Write;
use std::path::Path;

use ndarray::{Array3, ArrayView3, Axis};
use serde::{Deserialize, Serialize};

use crate::conv;
use crate::error::{Error, Result};
use crate::grid::{SpaceTimeField, SpaceTimeGrid};
use crate::spectral;

/// Estimator settings shared by the metric suite.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MetricConfig {
    /// Noise-to-signal power ratio below which a scale counts as resolved.
    pub threshold: f64,
    /// Hann-taper the periodograms.
    pub hann: bool,
    /// Frames per chunk of the per-window μ breakdown; `None` skips it.
    pub window_length: Option<usize>,
}

impl Default for MetricConfig {
    fn default() -> Self {
        MetricConfig { threshold: 0.5, hann: true, window_length: None }
    }
}

impl MetricConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.threshold.is_finite() || self.threshold <= 0.0 {
            return Err(Error::Config(format!(
                "resolved-scale threshold must be positive and finite, got {}",
                self.threshold
            )));
        }
        if self.window_length == Some(0) {
            return Err(Error::Config("per-window breakdown needs at least one frame per window".into()));
        }
        Ok(())
    }
}

/// A resolved scale, or the sentinel when no scale passes the threshold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Resolution {
    Resolved(f64),
    Unresolved,
}

impl Resolution {
    pub fn value(&self) -> Option<f64> {
        match self {
            Resolution::Resolved(v) => Some(*v),
            Resolution::Unresolved => None,
        }
    }
}

impl fmt::Display for Resolution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Resolution::Resolved(v) => write!(f, "{v}"),
            Resolution::Unresolved => write!(f, "unresolved"),
        }
    }
}

fn check_same_grid(context: &'static str, a: &SpaceTimeField, b: &SpaceTimeField) -> Result<()> {
    if a.grid() != b.grid() {
        return Err(Error::dim(
            context,
            format!("{:?}", a.grid().shape()),
            format!("{:?}", b.grid().shape()),
        ));
    }
    Ok(())
}

fn mean_sq(a: &ArrayView3<f64>, b: &ArrayView3<f64>) -> f64 {
    let mut s = 0.0;
    for (x, y) in a.iter().zip(b.iter()) {
        s += (x - y) * (x - y);
    }
    s / a.len() as f64
}

fn anomaly_rms(truth: &ArrayView3<f64>) -> f64 {
    let mean = truth.sum() / truth.len() as f64;
    let var = truth.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / truth.len() as f64;
    var.sqrt()
}

/// `μ = 1 − RMS(recon − truth) / RMS(truth anomalies)`; 1 for a perfect
/// reconstruction, 0 for reconstructing the truth's mean.
pub fn mu_score(truth: &SpaceTimeField, recon: &SpaceTimeField) -> Result<f64> {
    check_same_grid("mu_score", truth, recon)?;
    mu_score_views(&truth.view(), &recon.view())
}

fn mu_score_views(truth: &ArrayView3<f64>, recon: &ArrayView3<f64>) -> Result<f64> {
    let denom = anomaly_rms(truth);
    if denom == 0.0 {
        return Err(Error::UndefinedMetric("μ needs the truth to vary; its anomaly RMS is zero".into()));
    }
    Ok(1.0 - mean_sq(recon, truth).sqrt() / denom)
}

/// Smallest resolved spatial and temporal scales: the error-to-truth power
/// ratio must stay at or below the threshold from the largest scale down.
/// Spatial spectra are radially binned per-frame periodograms averaged over
/// time; temporal spectra are per-pixel and averaged over space.
pub fn resolved_scales(
    truth: &SpaceTimeField,
    recon: &SpaceTimeField,
    cfg: &MetricConfig,
) -> Result<(Resolution, Resolution)> {
    cfg.validate()?;
    check_same_grid("resolved_scales", truth, recon)?;
    if anomaly_rms(&truth.view()) == 0.0 {
        return Err(Error::UndefinedMetric("resolved scales need the truth to vary".into()));
    }
    let grid = truth.grid();
    let err: Array3<f64> = recon.data() - truth.data();

    let err_space = spectral::ring_power_spectrum(&err.view(), cfg.hann);
    let truth_space = spectral::ring_power_spectrum(&truth.view(), cfg.hann);
    let lambda_x = scan_resolved(&err_space, &truth_space, grid.w / 2, grid.extent_degrees(), cfg.threshold);

    let err_time = spectral::temporal_power_spectrum(&err.view(), cfg.hann);
    let truth_time = spectral::temporal_power_spectrum(&truth.view(), cfg.hann);
    let lambda_t = scan_resolved(&err_time, &truth_time, grid.n_time / 2, grid.extent_days(), cfg.threshold);

    Ok((lambda_x, lambda_t))
}

/// Walks modes from the largest scale (index 1) toward the finest; the
/// resolved scale is `extent / m*` for the last index of the unbroken
/// resolved run. Index 0 (the mean) is not a scale and is skipped.
fn scan_resolved(err: &[f64], truth: &[f64], max_index: usize, extent: f64, threshold: f64) -> Resolution {
    let mut m_star = 0;
    for m in 1..=max_index.min(err.len().saturating_sub(1)).min(truth.len().saturating_sub(1)) {
        if err[m] <= threshold * truth[m] {
            m_star = m;
        } else {
            break;
        }
    }
    if m_star == 0 {
        Resolution::Unresolved
    } else {
        Resolution::Resolved(extent / m_star as f64)
    }
}

/// What `tau_gain` compares: the fields themselves or their spatial
/// finite-difference gradients.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Derivative {
    None,
    Grad,
}

fn gradient_mse(a: &ArrayView3<f64>, b: &ArrayView3<f64>) -> f64 {
    let dy = conv::grad_y(a) - conv::grad_y(b);
    let dx = conv::grad_x(a) - conv::grad_x(b);
    (dy.mapv(|d| d * d).sum() + dx.mapv(|d| d * d).sum()) / (2 * a.len()) as f64
}

/// Relative MSE gain over a baseline, in percent:
/// `τ = 100 · (1 − MSE(recon) / MSE(baseline))`.
pub fn tau_gain(
    truth: &SpaceTimeField,
    recon: &SpaceTimeField,
    baseline: &SpaceTimeField,
    derivative: Derivative,
) -> Result<f64> {
    check_same_grid("tau_gain", truth, recon)?;
    check_same_grid("tau_gain", truth, baseline)?;
    let (mse_recon, mse_base) = match derivative {
        Derivative::None => (
            mean_sq(&recon.view(), &truth.view()),
            mean_sq(&baseline.view(), &truth.view()),
        ),
        Derivative::Grad => (
            gradient_mse(&recon.view(), &truth.view()),
            gradient_mse(&baseline.view(), &truth.view()),
        ),
    };
    if mse_base == 0.0 {
        return Err(Error::UndefinedMetric("relative gain needs a baseline with nonzero error".into()));
    }
    Ok(100.0 * (1.0 - mse_recon / mse_base))
}

/// Explained variance of the 5-point Laplacian, in percent:
/// `100 · (1 − Var(Δrecon − Δtruth) / Var(Δtruth))`, evaluated where the
/// stencil is complete (one cell in from every spatial edge), so fields
/// differing by an affine ramp score a full 100.
pub fn laplacian_explained_variance(truth: &SpaceTimeField, recon: &SpaceTimeField) -> Result<f64> {
    check_same_grid("laplacian_explained_variance", truth, recon)?;
    let lap_t = conv::laplacian5(&truth.view());
    let lap_r = conv::laplacian5(&recon.view());
    let (nt, h, w) = lap_t.dim();
    if h < 3 || w < 3 {
        return Err(Error::dim("laplacian_explained_variance", "at least 3x3 frames", format!("{h}x{w}")));
    }
    let interior = |a: &Array3<f64>| a.slice(ndarray::s![0..nt, 1..h - 1, 1..w - 1]).to_owned();
    let diff = interior(&lap_r) - interior(&lap_t);
    let t_int = interior(&lap_t);
    let var = |a: &Array3<f64>| {
        let mean = a.sum() / a.len() as f64;
        a.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / a.len() as f64
    };
    let denom = var(&t_int);
    if denom == 0.0 {
        return Err(Error::UndefinedMetric("Laplacian explained variance needs the truth Laplacian to vary".into()));
    }
    Ok(100.0 * (1.0 - var(&diff) / denom))
}

/// One method's scores against the truth and the shared baseline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub method: String,
    pub mu: f64,
    /// Degrees.
    pub lambda_x: Resolution,
    /// Days.
    pub lambda_t: Resolution,
    /// Percent gain over the baseline.
    pub tau_ssh: f64,
    /// Percent gain over the baseline, on spatial gradients.
    pub tau_grad_ssh: f64,
    /// Percent explained variance of the Laplacian.
    pub tau_lap_ssh: f64,
    /// μ per evaluation chunk, when a window length was configured.
    pub per_window_mu: Vec<f64>,
}

/// Scores every method against the truth, with gains relative to the named
/// baseline. Rows come out in method-name order.
pub fn report(
    truth: &SpaceTimeField,
    methods: &BTreeMap<String, SpaceTimeField>,
    baseline: &str,
    cfg: &MetricConfig,
) -> Result<Vec<MetricReport>> {
    cfg.validate()?;
    let base = methods
        .get(baseline)
        .ok_or_else(|| Error::Config(format!("baseline {baseline} is not among the evaluated methods")))?;
    let mut rows = Vec::with_capacity(methods.len());
    for (name, recon) in methods {
        let (lambda_x, lambda_t) = resolved_scales(truth, recon, cfg)?;
        let mut per_window_mu = Vec::new();
        if let Some(len) = cfg.window_length {
            let nt = truth.grid().n_time;
            for start in (0..nt).step_by(len) {
                if start + len > nt {
                    break;
                }
                let t = truth.data().slice(ndarray::s![start..start + len, .., ..]);
                let r = recon.data().slice(ndarray::s![start..start + len, .., ..]);
                per_window_mu.push(mu_score_views(&t, &r)?);
            }
        }
        rows.push(MetricReport {
            method: name.clone(),
            mu: mu_score(truth, recon)?,
            lambda_x,
            lambda_t,
            tau_ssh: tau_gain(truth, recon, base, Derivative::None)?,
            tau_grad_ssh: tau_gain(truth, recon, base, Derivative::Grad)?,
            tau_lap_ssh: laplacian_explained_variance(truth, recon)?,
            per_window_mu,
        });
    }
    Ok(rows)
}

/// One row per method, six metric columns. Unresolved scales print as
/// `unresolved`.
pub fn write_report_csv(path: &Path, rows: &[MetricReport]) -> Result<()> {
    let mut f = File::create(path)?;
    writeln!(f, "method,mu,lambda_x_degrees,lambda_t_days,tau_ssh_percent,tau_grad_ssh_percent,tau_lap_ssh_percent")?;
    for r in rows {
        writeln!(
            f,
            "{},{},{},{},{},{},{}",
            r.method, r.mu, r.lambda_x, r.lambda_t, r.tau_ssh, r.tau_grad_ssh, r.tau_lap_ssh
        )?;
    }
    Ok(())
}

/// The full report rows, pretty-printed JSON.
pub fn write_report_json(path: &Path, rows: &[MetricReport]) -> Result<()> {
    let f = File::create(path)?;
    serde_json::to_writer_pretty(f, rows)?;
    Ok(())
}

/// Reassembles per-window reconstructions into one period-long field. Each
/// entry is the window's first frame index within the full period; frames
/// covered by several windows are averaged, and every frame must be covered.
pub fn stitch_windows(grid: SpaceTimeGrid, windows: &[(usize, SpaceTimeField)]) -> Result<SpaceTimeField> {
    let (nt, h, w) = grid.shape();
    let mut sum = Array3::<f64>::zeros((nt, h, w));
    let mut count = vec![0usize; nt];
    for (start, field) in windows {
        let wg = field.grid();
        if wg.w != grid.w || wg.dx != grid.dx || wg.dt != grid.dt {
            return Err(Error::dim(
                "stitch_windows",
                format!("windows on a {}x{} grid with the period's spacing", grid.w, grid.w),
                format!("{}x{} (dx {}, dt {})", wg.w, wg.w, wg.dx, wg.dt),
            ));
        }
        if start + wg.n_time > nt {
            return Err(Error::dim(
                "stitch_windows",
                format!("windows inside the {nt}-frame period"),
                format!("start {start} with {} frames", wg.n_time),
            ));
        }
        for (k, frame) in field.data().axis_iter(Axis(0)).enumerate() {
            let mut target = sum.index_axis_mut(Axis(0), start + k);
            target += &frame;
            count[start + k] += 1;
        }
    }
    if let Some(gap) = count.iter().position(|&c| c == 0) {
        return Err(Error::Config(format!("no window covers frame {gap} of the evaluation period")));
    }
    for (t, &c) in count.iter().enumerate() {
        let mut frame = sum.index_axis_mut(Axis(0), t);
        frame /= c as f64;
    }
    SpaceTimeField::new(grid, sum)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::obs_ops::bandpass;
    use ndarray::Array3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;

    fn grid(w: usize, nt: usize) -> SpaceTimeGrid {
        SpaceTimeGrid::new(w, 0.05, 1.0, nt).unwrap()
    }

    fn rand_field(g: SpaceTimeGrid, seed: u64) -> SpaceTimeField {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let (nt, h, w) = g.shape();
        SpaceTimeField::new(g, Array3::from_shape_fn((nt, h, w), |_| rng.gen_range(-1.0..1.0))).unwrap()
    }

    #[test]
    fn perfect_reconstruction_hits_all_ceilings() {
        let g = grid(16, 8);
        let truth = rand_field(g, 1);
        let recon = truth.clone();
        assert_eq!(mu_score(&truth, &recon).unwrap(), 1.0);
        let (lx, lt) = resolved_scales(&truth, &recon, &MetricConfig::default()).unwrap();
        assert_eq!(lx, Resolution::Resolved(2.0 * g.dx));
        assert_eq!(lt, Resolution::Resolved(2.0 * g.dt));
        let baseline = rand_field(g, 2);
        assert_eq!(tau_gain(&truth, &recon, &baseline, Derivative::None).unwrap(), 100.0);
        assert_eq!(tau_gain(&truth, &recon, &baseline, Derivative::Grad).unwrap(), 100.0);
        assert_eq!(laplacian_explained_variance(&truth, &recon).unwrap(), 100.0);
    }

    #[test]
    fn reconstructing_the_mean_scores_zero() {
        let g = grid(8, 3);
        let truth = rand_field(g, 3);
        let mean = truth.data().sum() / truth.data().len() as f64;
        let recon = SpaceTimeField::new(g, Array3::from_elem(g.shape(), mean)).unwrap();
        assert_eq!(mu_score(&truth, &recon).unwrap(), 0.0);
    }

    #[test]
    fn mu_matches_a_loop_oracle_and_ignores_common_offsets() {
        let g = grid(8, 3);
        let truth = rand_field(g, 4);
        let recon = rand_field(g, 5);
        let n = truth.data().len() as f64;
        let mut err = 0.0;
        for (r, t) in recon.data().iter().zip(truth.data()) {
            err += (r - t) * (r - t);
        }
        let t_mean = truth.data().sum() / n;
        let mut var = 0.0;
        for t in truth.data() {
            var += (t - t_mean) * (t - t_mean);
        }
        let expected = 1.0 - (err / n).sqrt() / (var / n).sqrt();
        assert!((mu_score(&truth, &recon).unwrap() - expected).abs() < 1e-12);

        let shift = |f: &SpaceTimeField| SpaceTimeField::new(g, f.data().mapv(|v| v + 11.25)).unwrap();
        let shifted = mu_score(&shift(&truth), &shift(&recon)).unwrap();
        assert!((shifted - expected).abs() < 1e-9);

        let flat = SpaceTimeField::new(g, Array3::from_elem(g.shape(), 2.0)).unwrap();
        assert!(matches!(mu_score(&flat, &recon), Err(Error::UndefinedMetric(_))));
    }

    #[test]
    fn lowpassed_reconstruction_resolves_to_the_cutoff() {
        let g = grid(32, 4);
        let truth = rand_field(g, 6);
        // Keep wavelengths of 4 cells and longer: ring index 8 of 16.
        let m0 = 8usize;
        let f_cut = m0 as f64 / g.extent_degrees();
        let recon = bandpass(&truth, 0.0, f_cut).unwrap();
        let (lx, _) = resolved_scales(&truth, &recon, &MetricConfig::default()).unwrap();
        let lambda = lx.value().expect("the retained band is resolved");
        let lo = g.extent_degrees() / (m0 + 1) as f64;
        let hi = g.extent_degrees() / (m0 - 1) as f64;
        assert!(
            (lo..=hi).contains(&lambda),
            "resolved {lambda:.4}° not within one bin of {:.4}°",
            g.extent_degrees() / m0 as f64
        );
    }

    #[test]
    fn zero_reconstruction_is_unresolved_on_both_axes() {
        let g = grid(16, 8);
        let truth = rand_field(g, 7);
        let recon = SpaceTimeField::zeros(g);
        let (lx, lt) = resolved_scales(&truth, &recon, &MetricConfig::default()).unwrap();
        assert_eq!(lx, Resolution::Unresolved);
        assert_eq!(lt, Resolution::Unresolved);
    }

    #[test]
    fn tau_matches_its_formula_and_flips_sign_on_swap() {
        let g = grid(8, 3);
        let truth = rand_field(g, 8);
        let a = rand_field(g, 9);
        let b = rand_field(g, 10);

        assert_eq!(tau_gain(&truth, &a, &a, Derivative::None).unwrap(), 0.0);

        let mse = |x: &SpaceTimeField| {
            x.data()
                .iter()
                .zip(truth.data())
                .map(|(r, t)| (r - t) * (r - t))
                .sum::<f64>()
                / x.data().len() as f64
        };
        let expected = 100.0 * (1.0 - mse(&a) / mse(&b));
        assert!((tau_gain(&truth, &a, &b, Derivative::None).unwrap() - expected).abs() < 1e-10);

        let ab = tau_gain(&truth, &a, &b, Derivative::None).unwrap();
        let ba = tau_gain(&truth, &b, &a, Derivative::None).unwrap();
        assert!(ab * ba < 0.0, "expected opposite signs, got {ab} and {ba}");

        // The gradient variant agrees with a direct stencil computation.
        let grad_mse = |x: &SpaceTimeField| {
            let dy = conv::grad_y(&x.view()) - conv::grad_y(&truth.view());
            let dx = conv::grad_x(&x.view()) - conv::grad_x(&truth.view());
            (dy.mapv(|d| d * d).sum() + dx.mapv(|d| d * d).sum()) / (2 * x.data().len()) as f64
        };
        let expected = 100.0 * (1.0 - grad_mse(&a) / grad_mse(&b));
        assert!((tau_gain(&truth, &a, &b, Derivative::Grad).unwrap() - expected).abs() < 1e-10);

        assert!(matches!(
            tau_gain(&truth, &a, &truth, Derivative::None),
            Err(Error::UndefinedMetric(_))
        ));
    }

    #[test]
    fn laplacian_variance_forgives_affine_ramps() {
        let g = grid(10, 2);
        let truth = rand_field(g, 11);
        let (nt, h, w) = g.shape();
        let recon = SpaceTimeField::new(
            g,
            Array3::from_shape_fn((nt, h, w), |(t, i, j)| {
                truth.data()[[t, i, j]] + 0.5 * i as f64 - 0.2 * j as f64 + 3.0
            }),
        )
        .unwrap();
        let ev = laplacian_explained_variance(&truth, &recon).unwrap();
        assert!((ev - 100.0).abs() < 1e-9, "got {ev}");

        // Loop oracle on the interior stencil.
        let other = rand_field(g, 12);
        let lap = |f: &SpaceTimeField, t: usize, i: usize, j: usize| {
            let d = f.data();
            d[[t, i - 1, j]] + d[[t, i + 1, j]] + d[[t, i, j - 1]] + d[[t, i, j + 1]] - 4.0 * d[[t, i, j]]
        };
        let mut diffs = Vec::new();
        let mut truths = Vec::new();
        for t in 0..nt {
            for i in 1..h - 1 {
                for j in 1..w - 1 {
                    let lt = lap(&truth, t, i, j);
                    truths.push(lt);
                    diffs.push(lap(&other, t, i, j) - lt);
                }
            }
        }
        let var = |v: &[f64]| {
            let m = v.iter().sum::<f64>() / v.len() as f64;
            v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / v.len() as f64
        };
        let expected = 100.0 * (1.0 - var(&diffs) / var(&truths));
        assert!((laplacian_explained_variance(&truth, &other).unwrap() - expected).abs() < 1e-9);
    }

    #[test]
    fn extra_noise_never_sharpens_the_resolved_scales() {
        let g = grid(16, 8);
        let as_len = |r: Resolution| r.value().unwrap_or(f64::INFINITY);
        for seed in 0..10u64 {
            let truth = rand_field(g, 100 + seed);
            let mut rng = ChaCha12Rng::seed_from_u64(200 + seed);
            let (nt, h, w) = g.shape();
            let small = Array3::from_shape_fn((nt, h, w), |_| rng.gen_range(-0.05..0.05));
            let big = Array3::from_shape_fn((nt, h, w), |_| rng.gen_range(-2.0..2.0));
            let recon = SpaceTimeField::new(g, truth.data() + &small).unwrap();
            let noisier = SpaceTimeField::new(g, recon.data() + &big).unwrap();
            let (lx0, lt0) = resolved_scales(&truth, &recon, &MetricConfig::default()).unwrap();
            let (lx1, lt1) = resolved_scales(&truth, &noisier, &MetricConfig::default()).unwrap();
            assert!(as_len(lx1) >= as_len(lx0), "seed {seed}: λx went {lx0} → {lx1}");
            assert!(as_len(lt1) >= as_len(lt0), "seed {seed}: λt went {lt0} → {lt1}");
        }
    }

    #[test]
    fn report_rows_match_individually_computed_metrics() {
        let g = grid(16, 8);
        let truth = rand_field(g, 20);
        let oi = SpaceTimeField::new(g, truth.data().mapv(|v| 0.5 * v)).unwrap();
        let better = SpaceTimeField::new(g, truth.data().mapv(|v| 0.9 * v)).unwrap();
        let mut methods = BTreeMap::new();
        methods.insert("oi".to_string(), oi.clone());
        methods.insert("net".to_string(), better.clone());
        let cfg = MetricConfig { window_length: Some(4), ..MetricConfig::default() };
        let rows = report(&truth, &methods, "oi", &cfg).unwrap();
        assert_eq!(rows.len(), 2);

        let oi_row = rows.iter().find(|r| r.method == "oi").unwrap();
        assert_eq!(oi_row.tau_ssh, 0.0);
        assert_eq!(oi_row.tau_grad_ssh, 0.0);
        assert_eq!(oi_row.per_window_mu.len(), 2);

        let net_row = rows.iter().find(|r| r.method == "net").unwrap();
        assert_eq!(net_row.mu, mu_score(&truth, &better).unwrap());
        assert_eq!(net_row.tau_ssh, tau_gain(&truth, &better, &oi, Derivative::None).unwrap());
        assert_eq!(net_row.tau_lap_ssh, laplacian_explained_variance(&truth, &better).unwrap());
        let (lx, lt) = resolved_scales(&truth, &better, &cfg).unwrap();
        assert_eq!(net_row.lambda_x, lx);
        assert_eq!(net_row.lambda_t, lt);

        assert!(report(&truth, &methods, "missing", &cfg).is_err());

        // Emission roundtrip: JSON preserves the rows, CSV has one line per
        // method plus the header.
        let dir = tempfile::tempdir().unwrap();
        let json_path = dir.path().join("report.json");
        let csv_path = dir.path().join("report.csv");
        write_report_json(&json_path, &rows).unwrap();
        write_report_csv(&csv_path, &rows).unwrap();
        let back: Vec<MetricReport> = serde_json::from_reader(File::open(&json_path).unwrap()).unwrap();
        assert_eq!(back, rows);
        let csv = std::fs::read_to_string(&csv_path).unwrap();
        assert_eq!(csv.lines().count(), 3);
        assert!(csv.lines().next().unwrap().starts_with("method,mu,"));
    }

    #[test]
    fn stitching_averages_overlaps_and_demands_full_coverage() {
        let g = grid(8, 6);
        let wg = g.with_n_time(4).unwrap();
        let c = |v: f64| SpaceTimeField::new(wg, Array3::from_elem(wg.shape(), v)).unwrap();
        let stitched = stitch_windows(g, &[(0, c(1.0)), (2, c(3.0))]).unwrap();
        let frame_val = |t: usize| stitched.data()[[t, 4, 4]];
        assert_eq!(frame_val(0), 1.0);
        assert_eq!(frame_val(1), 1.0);
        assert_eq!(frame_val(2), 2.0);
        assert_eq!(frame_val(3), 2.0);
        assert_eq!(frame_val(4), 3.0);
        assert_eq!(frame_val(5), 3.0);

        assert!(stitch_windows(g, &[(0, c(1.0))]).is_err());
        assert!(stitch_windows(g, &[(0, c(1.0)), (3, c(2.0))]).is_err());
        let other = SpaceTimeGrid::new(8, 0.1, 1.0, 4).unwrap();
        let bad = SpaceTimeField::zeros(other);
        assert!(stitch_windows(g, &[(0, bad)]).is_err());
    }
}
