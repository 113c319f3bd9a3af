//! Reference methods the learned models are compared against.
//!
//! Two live here: optimal interpolation with a separable squared-exponential
//! covariance, and the spectral complement that grafts small scales derived
//! from SST onto an interpolated field. The direct regression network is the
//! third baseline; it lives with the training code ([`crate::train`]) because
//! it shares the whole supervised pipeline.

use ndarray::{Array1, Array2, Array3};
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::SpaceTimeField;
use crate::obs_ops::bandpass;
use crate::spectral;
use crate::state::ObservationSet;

/// Optimal interpolation settings. The covariance is separable:
/// `σ_p² · exp(−d_space²/2L_x²) · exp(−d_time²/2L_t²)`, plus observation
/// noise on the diagonal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OiConfig {
    /// Spatial correlation length in degrees.
    pub length_space: f64,
    /// Temporal correlation length in days.
    pub length_time: f64,
    /// Observation noise variance.
    pub noise_variance: f64,
    /// Prior (signal) variance.
    pub prior_variance: f64,
    /// Upper bound on observations entering the dense solve; beyond it a
    /// seeded uniform subsample is used.
    pub max_obs: usize,
    /// Seed of the subsample draw.
    pub seed: u64,
}

impl Default for OiConfig {
    fn default() -> Self {
        OiConfig {
            length_space: 1.0,
            length_time: 7.0,
            noise_variance: 0.05,
            prior_variance: 1.0,
            max_obs: 2000,
            seed: 0,
        }
    }
}

impl OiConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("length_space", self.length_space), ("length_time", self.length_time)] {
            if !v.is_finite() || v <= 0.0 {
                return Err(Error::Config(format!("OI {name} must be positive and finite, got {v}")));
            }
        }
        if !self.noise_variance.is_finite() || self.noise_variance < 0.0 {
            return Err(Error::Config(format!(
                "OI noise variance must be non-negative and finite, got {}",
                self.noise_variance
            )));
        }
        if !self.prior_variance.is_finite() || self.prior_variance <= 0.0 {
            return Err(Error::Config(format!(
                "OI prior variance must be positive and finite, got {}",
                self.prior_variance
            )));
        }
        if self.max_obs == 0 {
            return Err(Error::Config("OI needs room for at least one observation".into()));
        }
        Ok(())
    }
}

/// One scattered observation: time/row/column indices and the value.
type ObsPoint = (usize, usize, usize, f64);

fn gather_observations(obs: &ObservationSet, cap: usize, seed: u64) -> Vec<ObsPoint> {
    let mask = obs.ssh_mask.data();
    let values = obs.ssh_alongtrack.data();
    let mut points: Vec<ObsPoint> = mask
        .indexed_iter()
        .filter(|(_, &m)| m)
        .map(|((t, i, j), _)| (t, i, j, values[[t, i, j]]))
        .collect();
    if points.len() > cap {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let mut keep: Vec<usize> = rand::seq::index::sample(&mut rng, points.len(), cap).into_vec();
        keep.sort_unstable();
        points = keep.into_iter().map(|i| points[i]).collect();
    }
    points
}

/// Cholesky factorization with escalating diagonal jitter. Returns the lower
/// factor, or the variant error carrying the last jitter tried.
fn cholesky_with_jitter(a: &Array2<f64>, context: &'static str) -> Result<Array2<f64>> {
    let n = a.nrows();
    let scale = (0..n).map(|i| a[[i, i]]).sum::<f64>().max(f64::MIN_POSITIVE) / n as f64;
    let mut last = 0.0;
    for &rel in &[0.0, 1e-12, 1e-10, 1e-8, 1e-6] {
        let jitter = rel * scale;
        last = jitter;
        if let Some(l) = try_cholesky(a, jitter) {
            if jitter > 0.0 {
                log::warn!("{context}: covariance needed {jitter:.2e} diagonal jitter to factor");
            }
            return Ok(l);
        }
    }
    Err(Error::Singular { context, jitter: last })
}

fn try_cholesky(a: &Array2<f64>, jitter: f64) -> Option<Array2<f64>> {
    let n = a.nrows();
    let mut l = Array2::<f64>::zeros((n, n));
    for i in 0..n {
        for j in 0..=i {
            let mut s = a[[i, j]] + if i == j { jitter } else { 0.0 };
            for k in 0..j {
                s -= l[[i, k]] * l[[j, k]];
            }
            if i == j {
                if s <= 0.0 || !s.is_finite() {
                    return None;
                }
                l[[i, i]] = s.sqrt();
            } else {
                l[[i, j]] = s / l[[j, j]];
            }
        }
    }
    Some(l)
}

fn cholesky_solve(l: &Array2<f64>, b: &Array1<f64>) -> Array1<f64> {
    let n = l.nrows();
    let mut y = Array1::<f64>::zeros(n);
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s -= l[[i, k]] * y[k];
        }
        y[i] = s / l[[i, i]];
    }
    let mut x = Array1::<f64>::zeros(n);
    for i in (0..n).rev() {
        let mut s = y[i];
        for k in i + 1..n {
            s -= l[[k, i]] * x[k];
        }
        x[i] = s / l[[i, i]];
    }
    x
}

/// Dense optimal interpolation of the along-track observations onto the full
/// grid. Observed values are centered on their mean before the solve, and an
/// empty observation set yields the zero field.
pub fn oi_interpolate(obs: &ObservationSet, cfg: &OiConfig) -> Result<SpaceTimeField> {
    cfg.validate()?;
    let grid = *obs.grid();
    let (nt, h, w) = grid.shape();
    let points = gather_observations(obs, cfg.max_obs, cfg.seed);
    if points.is_empty() {
        return Ok(SpaceTimeField::zeros(grid));
    }
    let n = points.len();
    let mean = points.iter().map(|p| p.3).sum::<f64>() / n as f64;

    // Separable kernel tables over every possible index offset.
    let space = |d2: f64| (-d2 / (2.0 * cfg.length_space * cfg.length_space)).exp();
    let time = |d: f64| (-d * d / (2.0 * cfg.length_time * cfg.length_time)).exp();
    let s_table = Array2::from_shape_fn((2 * h - 1, 2 * w - 1), |(di, dj)| {
        let dy = (di as f64 - (h - 1) as f64) * grid.dx;
        let dx = (dj as f64 - (w - 1) as f64) * grid.dx;
        space(dy * dy + dx * dx)
    });
    let t_table = Array2::from_shape_fn((nt, nt), |(a, b)| time((a as f64 - b as f64) * grid.dt));

    let mut a = Array2::<f64>::zeros((n, n));
    for (m1, &(t1, i1, j1, _)) in points.iter().enumerate() {
        for (m2, &(t2, i2, j2, _)) in points.iter().enumerate().take(m1 + 1) {
            let k = cfg.prior_variance
                * s_table[[i1 + (h - 1) - i2, j1 + (w - 1) - j2]]
                * t_table[[t1, t2]];
            a[[m1, m2]] = k;
            a[[m2, m1]] = k;
        }
        a[[m1, m1]] += cfg.noise_variance;
    }
    let innovations = Array1::from_iter(points.iter().map(|p| p.3 - mean));
    let l = cholesky_with_jitter(&a, "oi_interpolate")?;
    let alpha = cholesky_solve(&l, &innovations);

    // k(cell, obs) · α, factored through the separable kernel: first collapse
    // the observations of each day into a spatial image, then mix the images
    // across time.
    let mut images = Array3::<f64>::zeros((nt, h, w));
    for (m, &(tm, im, jm, _)) in points.iter().enumerate() {
        let amp = cfg.prior_variance * alpha[m];
        for i in 0..h {
            for j in 0..w {
                images[[tm, i, j]] += amp * s_table[[i + (h - 1) - im, j + (w - 1) - jm]];
            }
        }
    }
    let mut data = Array3::<f64>::from_elem((nt, h, w), mean);
    for t in 0..nt {
        for tau in 0..nt {
            let wt = t_table[[t, tau]];
            if wt == 0.0 {
                continue;
            }
            for i in 0..h {
                for j in 0..w {
                    data[[t, i, j]] += wt * images[[tau, i, j]];
                }
            }
        }
    }
    SpaceTimeField::new(grid, data)
}

/// Grid-search over correlation lengths, scoring each candidate pair by mean
/// squared error against the truth. Ties resolve to the earliest candidate
/// (space-major order).
pub fn fit_oi(
    obs: &ObservationSet,
    truth: &SpaceTimeField,
    base: &OiConfig,
    lengths_space: &[f64],
    lengths_time: &[f64],
) -> Result<OiConfig> {
    if lengths_space.is_empty() || lengths_time.is_empty() {
        return Err(Error::Config("OI fitting needs at least one candidate per correlation length".into()));
    }
    if truth.grid() != obs.grid() {
        return Err(Error::dim(
            "fit_oi",
            format!("truth on grid {:?}", obs.grid().shape()),
            format!("{:?}", truth.grid().shape()),
        ));
    }
    let mut best: Option<(OiConfig, f64)> = None;
    for &ls in lengths_space {
        for &lt in lengths_time {
            let cand = OiConfig { length_space: ls, length_time: lt, ..*base };
            let field = oi_interpolate(obs, &cand)?;
            let mse = (field.data() - truth.data()).mapv(|d| d * d).mean().unwrap_or(f64::INFINITY);
            log::debug!("fit_oi: L_x={ls} L_t={lt} mse={mse:.6e}");
            match &best {
                Some((_, b)) if mse >= *b => {}
                _ => best = Some((cand, mse)),
            }
        }
    }
    Ok(best.expect("candidate lists are non-empty").0)
}

/// Settings of the SST spectral complement.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SqgComplementConfig {
    /// Wavelength (degrees) separating the interpolated low band from the
    /// SST-derived high band.
    pub cutoff_degrees: f64,
}

impl Default for SqgComplementConfig {
    fn default() -> Self {
        SqgComplementConfig { cutoff_degrees: 1.2 }
    }
}

impl SqgComplementConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.cutoff_degrees.is_finite() || self.cutoff_degrees <= 0.0 {
            return Err(Error::Config(format!(
                "complement cutoff must be a positive wavelength in degrees, got {}",
                self.cutoff_degrees
            )));
        }
        Ok(())
    }
}

fn inverse_half_laplacian(field: &SpaceTimeField) -> SpaceTimeField {
    let g = field.grid();
    let mult = spectral::half_laplacian_multiplier(g.w, g.dx).mapv(|m| if m > 0.0 { 1.0 / m } else { 0.0 });
    let data = spectral::apply_multiplier_stack(&field.view(), &mult.view());
    SpaceTimeField::new(*g, data).expect("spectral output is finite")
}

/// Keeps the interpolated field below the cutoff frequency and replaces the
/// scales above it with the surface-dynamics inversion of SST (division by
/// `|k|`), scaled by a least-squares fit in the half-octave below the cutoff.
/// With zero SST the result is the low-passed input; with a cutoff at or
/// below the grid scale the input comes back unchanged.
pub fn sqg_complement(
    oi_field: &SpaceTimeField,
    sst: &SpaceTimeField,
    cfg: &SqgComplementConfig,
) -> Result<SpaceTimeField> {
    cfg.validate()?;
    let grid = *oi_field.grid();
    if sst.grid() != &grid {
        return Err(Error::dim(
            "sqg_complement",
            format!("sst on grid {:?}", grid.shape()),
            format!("{:?}", sst.grid().shape()),
        ));
    }
    let f_cut = 1.0 / cfg.cutoff_degrees;
    let low = bandpass(oi_field, 0.0, f_cut)?;

    let sst_ssh = inverse_half_laplacian(sst);
    // The high band is the exact complement of the low band, so the split is
    // a partition by construction.
    let sst_low = bandpass(&sst_ssh, 0.0, f_cut)?;
    let high = sst_ssh.data() - sst_low.data();

    // Fit the conversion scale where both fields carry energy: the top half
    // of the retained band.
    let oi_band = bandpass(oi_field, 0.5 * f_cut, f_cut)?;
    let sst_band = bandpass(&sst_ssh, 0.5 * f_cut, f_cut)?;
    let num = (oi_band.data() * sst_band.data()).sum();
    let den = sst_band.data().mapv(|v| v * v).sum();
    let scale = if den > f64::MIN_POSITIVE { num / den } else { 0.0 };
    log::debug!("sqg_complement: conversion scale {scale:.4e} (band energy {den:.3e})");

    SpaceTimeField::new(grid, low.data() + &(high * scale))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{Mask, SpaceTimeGrid};
    use crate::obs_ops::fractional_laplacian;
    use ndarray::Array3;
    use rand::{Rng, SeedableRng};

    fn grid(w: usize, nt: usize) -> SpaceTimeGrid {
        SpaceTimeGrid::new(w, 0.1, 1.0, nt).unwrap()
    }

    fn obs_from_points(g: SpaceTimeGrid, points: &[(usize, usize, usize, f64)]) -> ObservationSet {
        let (nt, h, w) = g.shape();
        let mut values = Array3::zeros((nt, h, w));
        let mut mask = Array3::from_elem((nt, h, w), false);
        for &(t, i, j, v) in points {
            values[[t, i, j]] = v;
            mask[[t, i, j]] = true;
        }
        ObservationSet::new(
            SpaceTimeField::new(g, values).unwrap(),
            Mask::new(g, mask).unwrap(),
            SpaceTimeField::zeros(g),
            None,
        )
        .unwrap()
    }

    fn scattered_points(g: SpaceTimeGrid, n: usize, seed: u64) -> Vec<(usize, usize, usize, f64)> {
        let (nt, h, w) = g.shape();
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                (
                    rng.gen_range(0..nt),
                    rng.gen_range(0..h),
                    rng.gen_range(0..w),
                    rng.gen_range(-1.0..1.0),
                )
            })
            .collect()
    }

    #[test]
    fn oi_reproduces_a_constant_field() {
        let g = grid(8, 3);
        let points: Vec<_> = scattered_points(g, 12, 1).into_iter().map(|(t, i, j, _)| (t, i, j, 3.7)).collect();
        let obs = obs_from_points(g, &points);
        let field = oi_interpolate(&obs, &OiConfig::default()).unwrap();
        for &v in field.data() {
            assert!((v - 3.7).abs() < 1e-12, "got {v}");
        }
    }

    #[test]
    fn oi_with_no_observations_is_the_zero_field() {
        let g = grid(8, 2);
        let obs = obs_from_points(g, &[]);
        let field = oi_interpolate(&obs, &OiConfig::default()).unwrap();
        assert!(field.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn oi_matches_a_dense_gaussian_elimination_oracle() {
        let g = grid(8, 2);
        let points = scattered_points(g, 25, 7);
        // Dedup cells so the oracle system is comfortably regular.
        let mut seen = std::collections::BTreeSet::new();
        let points: Vec<_> = points.into_iter().filter(|&(t, i, j, _)| seen.insert((t, i, j))).collect();
        let obs = obs_from_points(g, &points);
        let cfg = OiConfig { length_space: 0.25, length_time: 1.5, noise_variance: 0.02, ..OiConfig::default() };
        let field = oi_interpolate(&obs, &cfg).unwrap();

        // Independent path: assemble the same system and solve it by
        // Gaussian elimination with partial pivoting.
        let n = points.len();
        let mean = points.iter().map(|p| p.3).sum::<f64>() / n as f64;
        let kernel = |a: &(usize, usize, usize, f64), b: &(usize, usize, usize, f64)| {
            let ds2 = ((a.1 as f64 - b.1 as f64) * g.dx).powi(2) + ((a.2 as f64 - b.2 as f64) * g.dx).powi(2);
            let dt = (a.0 as f64 - b.0 as f64) * g.dt;
            cfg.prior_variance
                * (-ds2 / (2.0 * cfg.length_space.powi(2))).exp()
                * (-dt * dt / (2.0 * cfg.length_time.powi(2))).exp()
        };
        let mut m = vec![vec![0.0f64; n + 1]; n];
        for r in 0..n {
            for c in 0..n {
                m[r][c] = kernel(&points[r], &points[c]) + if r == c { cfg.noise_variance } else { 0.0 };
            }
            m[r][n] = points[r].3 - mean;
        }
        for col in 0..n {
            let piv = (col..n).max_by(|&a, &b| m[a][col].abs().partial_cmp(&m[b][col].abs()).unwrap()).unwrap();
            m.swap(col, piv);
            for r in 0..n {
                if r != col {
                    let f = m[r][col] / m[col][col];
                    for c in col..=n {
                        m[r][c] -= f * m[col][c];
                    }
                }
            }
        }
        let alpha: Vec<f64> = (0..n).map(|r| m[r][n] / m[r][r]).collect();

        let (nt, h, w) = g.shape();
        for t in 0..nt {
            for i in 0..h {
                for j in 0..w {
                    let cell = (t, i, j, 0.0);
                    let expected =
                        mean + points.iter().zip(&alpha).map(|(p, a)| kernel(&cell, p) * a).sum::<f64>();
                    let got = field.data()[[t, i, j]];
                    assert!((got - expected).abs() < 1e-8, "cell ({t},{i},{j}): {got} vs {expected}");
                }
            }
        }
    }

    #[test]
    fn oi_interpolates_observations_when_noise_is_tiny() {
        let g = grid(10, 2);
        let points = vec![
            (0, 1, 1, 0.8),
            (0, 7, 6, -0.4),
            (1, 3, 8, 0.2),
            (1, 8, 2, 0.6),
        ];
        let obs = obs_from_points(g, &points);
        let cfg = OiConfig { noise_variance: 1e-8, length_space: 0.3, length_time: 1.0, ..OiConfig::default() };
        let field = oi_interpolate(&obs, &cfg).unwrap();
        for &(t, i, j, v) in &points {
            let got = field.data()[[t, i, j]];
            assert!((got - v).abs() < 1e-3, "obs at ({t},{i},{j}): {got} vs {v}");
        }
    }

    #[test]
    fn oi_subsampling_is_deterministic() {
        let g = grid(8, 3);
        let points = scattered_points(g, 60, 3);
        let obs = obs_from_points(g, &points);
        let cfg = OiConfig { max_obs: 20, seed: 5, ..OiConfig::default() };
        let a = oi_interpolate(&obs, &cfg).unwrap();
        let b = oi_interpolate(&obs, &cfg).unwrap();
        assert_eq!(a.data(), b.data());
        // A different seed draws a different subsample.
        let c = oi_interpolate(&obs, &OiConfig { seed: 6, ..cfg }).unwrap();
        assert_ne!(a.data(), c.data());
    }

    #[test]
    fn fit_oi_prefers_the_length_matching_the_field() {
        let g = grid(12, 2);
        let (nt, h, w) = g.shape();
        // Broad, smooth truth: one wavelength across the domain.
        let truth = SpaceTimeField::new(
            g,
            Array3::from_shape_fn((nt, h, w), |(_, i, j)| {
                (2.0 * std::f64::consts::PI * i as f64 / h as f64).sin()
                    + (2.0 * std::f64::consts::PI * j as f64 / w as f64).cos()
            }),
        )
        .unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(9);
        let points: Vec<_> = (0..40)
            .map(|_| {
                let (t, i, j) = (rng.gen_range(0..nt), rng.gen_range(0..h), rng.gen_range(0..w));
                (t, i, j, truth.data()[[t, i, j]])
            })
            .collect();
        let obs = obs_from_points(g, &points);
        let base = OiConfig { noise_variance: 1e-4, ..OiConfig::default() };
        let fitted = fit_oi(&obs, &truth, &base, &[0.02, 0.6], &[2.0]).unwrap();
        assert_eq!(fitted.length_space, 0.6);
        assert_eq!(fitted.length_time, 2.0);

        assert!(fit_oi(&obs, &truth, &base, &[], &[1.0]).is_err());
    }

    #[test]
    fn complement_with_gridscale_cutoff_returns_the_input() {
        let g = grid(16, 2);
        let mut rng = ChaCha12Rng::seed_from_u64(11);
        let (nt, h, w) = g.shape();
        let oi = SpaceTimeField::new(g, Array3::from_shape_fn((nt, h, w), |_| rng.gen_range(-1.0..1.0))).unwrap();
        let sst = SpaceTimeField::new(g, Array3::from_shape_fn((nt, h, w), |_| rng.gen_range(-1.0..1.0))).unwrap();
        // A one-cell wavelength puts the cutoff above every resolved scale.
        let cfg = SqgComplementConfig { cutoff_degrees: g.dx };
        let out = sqg_complement(&oi, &sst, &cfg).unwrap();
        for (a, b) in out.data().iter().zip(oi.data()) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn complement_with_zero_sst_is_the_lowpassed_input() {
        let g = grid(16, 2);
        let mut rng = ChaCha12Rng::seed_from_u64(12);
        let (nt, h, w) = g.shape();
        let oi = SpaceTimeField::new(g, Array3::from_shape_fn((nt, h, w), |_| rng.gen_range(-1.0..1.0))).unwrap();
        let sst = SpaceTimeField::zeros(g);
        let cfg = SqgComplementConfig { cutoff_degrees: 0.4 };
        let out = sqg_complement(&oi, &sst, &cfg).unwrap();
        let expected = bandpass(&oi, 0.0, 1.0 / 0.4).unwrap();
        for (a, b) in out.data().iter().zip(expected.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn complement_recovers_truth_from_coupled_sst() {
        // Truth with three rings: below the fit band, inside it, and above
        // the cutoff. SST is the exact surface-dynamics transform of truth
        // times an arbitrary scale, and the low band plays the interpolated
        // field, so the complement should reassemble the truth.
        let g = grid(16, 2);
        let (nt, h, w) = g.shape();
        // Extent 1.6°: rings at 0.625, 1.875, and 3.75 cycles/degree.
        let truth = SpaceTimeField::new(
            g,
            Array3::from_shape_fn((nt, h, w), |(_, i, j)| {
                let (y, x) = (i as f64 / h as f64, j as f64 / w as f64);
                0.9 * (2.0 * std::f64::consts::PI * x).sin()
                    + 0.5 * (2.0 * std::f64::consts::PI * 3.0 * y).sin()
                    + 0.3 * (2.0 * std::f64::consts::PI * 6.0 * y).cos()
            }),
        )
        .unwrap();
        let coupling_scale = 2.5;
        let sst = SpaceTimeField::new(g, fractional_laplacian(&truth).data() * coupling_scale).unwrap();
        let cfg = SqgComplementConfig { cutoff_degrees: 0.4 }; // f_cut = 2.5, fit band [1.25, 2.5]
        let oi = bandpass(&truth, 0.0, 2.5).unwrap();
        let out = sqg_complement(&oi, &sst, &cfg).unwrap();
        for (a, b) in out.data().iter().zip(truth.data()) {
            assert!((a - b).abs() < 1e-8, "{a} vs {b}");
        }
    }

    #[test]
    fn configuration_validation_rejects_bad_settings() {
        assert!(OiConfig { length_space: 0.0, ..OiConfig::default() }.validate().is_err());
        assert!(OiConfig { length_time: -1.0, ..OiConfig::default() }.validate().is_err());
        assert!(OiConfig { noise_variance: f64::NAN, ..OiConfig::default() }.validate().is_err());
        assert!(OiConfig { prior_variance: 0.0, ..OiConfig::default() }.validate().is_err());
        assert!(OiConfig { max_obs: 0, ..OiConfig::default() }.validate().is_err());
        assert!(SqgComplementConfig { cutoff_degrees: 0.0 }.validate().is_err());
        assert!(SqgComplementConfig { cutoff_degrees: f64::INFINITY }.validate().is_err());
    }
}
