//! Synthetic observing-system experiment: truth fields, sampling masks,
//! SST coarsening, and windowed datasets.
//!
//! The truth generator produces a random-phase SSH series with a power-law
//! isotropic spectrum, advected and slowly decorrelated in time, plus an SST
//! series coupled to it through the same spectral transfer the variational
//! cost uses (so the multimodal terms have recoverable signal). Sampling is a
//! simplified altimeter constellation: thin pseudo-random nadir tracks every
//! day and an optional two-band wide swath on a repeat cycle.

use ndarray::{Array2, Array3, Axis};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::baselines::{oi_interpolate, OiConfig};
use crate::error::{Error, Result};
use crate::grid::{Mask, SpaceTimeField, SpaceTimeGrid};
use crate::obs_ops::{bandpass, fractional_laplacian, SqgConfig};
use crate::spectral;
use crate::state::ObservationSet;
use crate::train::WindowSample;

/// Overall SSH standard deviation of generated truth, in meters.
const SSH_STD: f64 = 0.3;
/// RMS per-mode phase drift, radians per day; sets how fast the field
/// decorrelates beyond pure advection.
const PHASE_ROT_RATE: f64 = 0.15;
/// Spectral slope of the smooth independent SST components.
const SST_NOISE_SLOPE: f64 = -3.0;

/// How the SST series relates to the SSH truth.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SstCoupling {
    /// SST is the band-passed half-Laplacian of SSH plus smooth noise.
    #[default]
    Sqg,
    /// SST carries no SSH information at all.
    Independent,
}

/// Ground-truth generator settings for the full, unwindowed series.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TruthConfig {
    pub seed: u64,
    pub grid: SpaceTimeGrid,
    /// Power-law exponent of the isotropic SSH wavenumber spectrum; < -1.
    #[serde(default = "default_slope")]
    pub spectral_slope: f64,
    /// Advection speed in grid cells per day.
    #[serde(default = "default_advection")]
    pub advection_speed: f64,
    #[serde(default)]
    pub sst_coupling: SstCoupling,
    /// Standard deviation of the smooth SST noise component.
    #[serde(default = "default_sst_noise")]
    pub sst_noise_amplitude: f64,
}

fn default_slope() -> f64 {
    -4.0
}

fn default_advection() -> f64 {
    0.5
}

fn default_sst_noise() -> f64 {
    0.25
}

impl TruthConfig {
    pub fn new(grid: SpaceTimeGrid, seed: u64) -> Self {
        TruthConfig {
            seed,
            grid,
            spectral_slope: default_slope(),
            advection_speed: default_advection(),
            sst_coupling: SstCoupling::default(),
            sst_noise_amplitude: default_sst_noise(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.spectral_slope.is_finite() || self.spectral_slope >= -1.0 {
            return Err(Error::Config(format!(
                "spectral_slope must be below -1 for an integrable spectrum, got {}",
                self.spectral_slope
            )));
        }
        if !self.advection_speed.is_finite() {
            return Err(Error::Config("advection_speed must be finite".into()));
        }
        if !self.sst_noise_amplitude.is_finite() || self.sst_noise_amplitude < 0.0 {
            return Err(Error::Config(format!(
                "sst_noise_amplitude must be nonnegative, got {}",
                self.sst_noise_amplitude
            )));
        }
        Ok(())
    }
}

/// Band edges of the SST-SSH coupling on this grid: the transfer keeps
/// frequencies between 1/16 and 0.6 of the radial Nyquist, leaving room both
/// above (unresolvable) and below (where the coarse product already helps).
pub fn sqg_coupling_config(grid: &SpaceTimeGrid) -> SqgConfig {
    let f_n = spectral::radial_nyquist(grid.dx);
    let band = (f_n / 16.0, 0.6 * f_n);
    SqgConfig { sst_band: band, state_band: band }
}

fn gauss(rng: &mut ChaCha12Rng) -> f64 {
    let u1: f64 = rng.gen::<f64>().max(f64::MIN_POSITIVE);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// A random-phase field with isotropic spectrum `|k|^slope`, advected at
/// `speed` cells/day in a random direction, each mode's phase drifting at its
/// own constant rate so the pattern slowly decorrelates.
fn random_phase_series(
    grid: &SpaceTimeGrid,
    slope: f64,
    speed: f64,
    spec_rng: &mut ChaCha12Rng,
    dyn_rng: &mut ChaCha12Rng,
) -> Array3<f64> {
    let (nt, h, w) = grid.shape();
    let white = Array2::from_shape_fn((h, w), |_| gauss(spec_rng));
    let mut base = spectral::fft2(&white.view());
    let nyq = w as i64 / 2;
    for ((i, j), v) in base.indexed_iter_mut() {
        let my = spectral::mode_index(i, h);
        let mx = spectral::mode_index(j, w);
        // DC carries no anomaly; the self-conjugate Nyquist lines cannot be
        // phase-advected while staying real, so they are dropped too.
        let amp = if (my == 0 && mx == 0) || my.abs() == nyq || mx.abs() == nyq {
            0.0
        } else {
            let r = ((my * my + mx * mx) as f64).sqrt();
            r.powf(slope / 2.0)
        };
        *v *= amp;
    }

    let angle = dyn_rng.gen::<f64>() * 2.0 * std::f64::consts::PI;
    let (vy, vx) = (speed * angle.sin(), speed * angle.cos());
    // The drift rates must be odd under k -> -k to keep frames real; the
    // imaginary part of a real field's transform has exactly that symmetry.
    let drift_noise = Array2::from_shape_fn((h, w), |_| gauss(dyn_rng));
    let drift_spec = spectral::fft2(&drift_noise.view());
    let im = drift_spec.mapv(|z| z.im);
    let rms = (im.mapv(|v| v * v).mean().unwrap_or(0.0)).sqrt();
    let omega = if rms > 0.0 { im.mapv(|v| PHASE_ROT_RATE * v / rms) } else { im };

    let mut out = Array3::<f64>::zeros((nt, h, w));
    for t in 0..nt {
        let day = t as f64 * grid.dt;
        let spec_t = Array2::from_shape_fn((h, w), |(i, j)| {
            let my = spectral::mode_index(i, h) as f64;
            let mx = spectral::mode_index(j, w) as f64;
            let translate = -2.0 * std::f64::consts::PI * (my * vy + mx * vx) * day / w as f64;
            base[[i, j]] * Complex64::from_polar(1.0, translate + omega[[i, j]] * day)
        });
        out.index_axis_mut(Axis(0), t).assign(&spectral::ifft2_real(&spec_t));
    }
    out
}

fn scale_to_std(mut data: Array3<f64>, target: f64) -> Array3<f64> {
    let rms = (data.mapv(|v| v * v).mean().unwrap_or(0.0)).sqrt();
    if rms > 0.0 {
        data.mapv_inplace(|v| v * target / rms);
    }
    data
}

/// Generates the SSH truth and its companion SST series; a pure function of
/// the config.
pub fn generate_truth(cfg: &TruthConfig) -> Result<(SpaceTimeField, SpaceTimeField)> {
    cfg.validate()?;
    let grid = cfg.grid;
    let stream = |n: u64| {
        let mut r = ChaCha12Rng::seed_from_u64(cfg.seed);
        r.set_stream(n);
        r
    };

    let (mut ssh_spec, mut ssh_dyn) = (stream(10), stream(11));
    let ssh_data = scale_to_std(
        random_phase_series(&grid, cfg.spectral_slope, cfg.advection_speed, &mut ssh_spec, &mut ssh_dyn),
        SSH_STD,
    );
    let ssh = SpaceTimeField::new(grid, ssh_data)?;

    let signal = match cfg.sst_coupling {
        SstCoupling::Sqg => {
            let band = sqg_coupling_config(&grid).sst_band;
            bandpass(&fractional_laplacian(&ssh), band.0, band.1)?.into_data()
        }
        SstCoupling::Independent => {
            let (mut spec, mut dynr) = (stream(12), stream(13));
            scale_to_std(
                random_phase_series(&grid, SST_NOISE_SLOPE, cfg.advection_speed, &mut spec, &mut dynr),
                1.0,
            )
        }
    };
    let sst_data = if cfg.sst_noise_amplitude > 0.0 {
        let (mut spec, mut dynr) = (stream(14), stream(15));
        let noise = scale_to_std(
            random_phase_series(&grid, SST_NOISE_SLOPE, cfg.advection_speed, &mut spec, &mut dynr),
            cfg.sst_noise_amplitude,
        );
        signal + &noise
    } else {
        signal
    };
    let sst = SpaceTimeField::new(grid, sst_data)?;
    Ok((ssh, sst))
}

/// Altimeter sampling pattern settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplingConfig {
    pub n_nadir_tracks_per_day: usize,
    /// Full width of the track-angle window around vertical, degrees.
    pub track_angle_range: f64,
    /// Track width in cells, measured along rows.
    pub track_width: usize,
    pub swath_enabled: bool,
    /// Width of each of the two swath bands, cells.
    pub swath_width: usize,
    /// Unobserved gap between the two bands, cells.
    pub swath_gap: usize,
    /// A swath passes every this many days.
    pub swath_repeat_days: usize,
    /// Standard deviation of additive Gaussian noise on the along-track
    /// samples; zero keeps sampling noise-free.
    pub obs_noise_std: f64,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        SamplingConfig {
            n_nadir_tracks_per_day: 4,
            track_angle_range: 30.0,
            track_width: 1,
            swath_enabled: true,
            swath_width: 4,
            swath_gap: 4,
            swath_repeat_days: 7,
            obs_noise_std: 0.0,
        }
    }
}

impl SamplingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.track_width == 0 || self.swath_width == 0 {
            return Err(Error::Config("track and swath widths must be at least one cell".into()));
        }
        if self.swath_repeat_days == 0 {
            return Err(Error::Config("swath_repeat_days must be at least 1".into()));
        }
        if !(0.0..90.0).contains(&self.track_angle_range) {
            return Err(Error::Config(format!(
                "track_angle_range must lie in [0, 90) degrees, got {}",
                self.track_angle_range
            )));
        }
        if !self.obs_noise_std.is_finite() || self.obs_noise_std < 0.0 {
            return Err(Error::Config(format!(
                "obs_noise_std must be nonnegative, got {}",
                self.obs_noise_std
            )));
        }
        Ok(())
    }
}

/// Marks `width` horizontally-wrapped cells around a straight line through
/// `(h/2, x0)` with slope `tan_theta` columns per row.
fn mark_track(frame: &mut ndarray::ArrayViewMut2<bool>, x0: f64, tan_theta: f64, width: usize) {
    let (h, w) = frame.dim();
    for i in 0..h {
        let center = x0 + tan_theta * (i as f64 - h as f64 / 2.0);
        let j0 = center.round() as i64 - (width as i64 - 1) / 2;
        for k in 0..width as i64 {
            let j = (j0 + k).rem_euclid(w as i64) as usize;
            frame[[i, j]] = true;
        }
    }
}

/// Daily nadir tracks: thin near-vertical lines at seeded pseudo-random
/// angles and offsets, wrapped periodically like the truth fields.
pub fn nadir_mask(grid: &SpaceTimeGrid, cfg: &SamplingConfig, seed: u64) -> Result<Mask> {
    cfg.validate()?;
    let (nt, h, w) = grid.shape();
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    rng.set_stream(20);
    let mut data = Array3::from_elem((nt, h, w), false);
    for t in 0..nt {
        let mut frame = data.index_axis_mut(Axis(0), t);
        for _ in 0..cfg.n_nadir_tracks_per_day {
            let theta = (rng.gen::<f64>() - 0.5) * cfg.track_angle_range.to_radians();
            let x0 = rng.gen::<f64>() * w as f64;
            mark_track(&mut frame, x0, theta.tan(), cfg.track_width);
        }
    }
    Mask::new(*grid, data)
}

/// Wide-swath passes: two parallel bands separated by a gap, crossing the
/// domain every `swath_repeat_days` with a fresh seeded offset.
pub fn swath_mask(grid: &SpaceTimeGrid, cfg: &SamplingConfig, seed: u64) -> Result<Mask> {
    cfg.validate()?;
    if !cfg.swath_enabled {
        return Err(Error::Config("swath_mask called with swath_enabled = false".into()));
    }
    let (nt, h, w) = grid.shape();
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    rng.set_stream(21);
    let mut data = Array3::from_elem((nt, h, w), false);
    for t in (0..nt).step_by(cfg.swath_repeat_days) {
        let theta = (rng.gen::<f64>() - 0.5) * cfg.track_angle_range.to_radians();
        let x0 = rng.gen::<f64>() * w as f64;
        let tan_theta = theta.tan();
        let gap = cfg.swath_gap as i64;
        let width = cfg.swath_width as i64;
        let gap_start = -(gap / 2);
        let mut frame = data.index_axis_mut(Axis(0), t);
        for i in 0..h {
            let center = (x0 + tan_theta * (i as f64 - h as f64 / 2.0)).round() as i64;
            for off in (gap_start - width..gap_start).chain(gap_start + gap..gap_start + gap + width) {
                let j = (center + off).rem_euclid(w as i64) as usize;
                frame[[i, j]] = true;
            }
        }
    }
    Mask::new(*grid, data)
}

/// Union of the nadir tracks and, when enabled, the swath passes.
pub fn sampling_mask(grid: &SpaceTimeGrid, cfg: &SamplingConfig, seed: u64) -> Result<Mask> {
    let nadir = nadir_mask(grid, cfg, seed)?;
    if !cfg.swath_enabled {
        return Ok(nadir);
    }
    let swath = swath_mask(grid, cfg, seed)?;
    let data = ndarray::Zip::from(nadir.data())
        .and(swath.data())
        .map_collect(|&a, &b| a || b);
    Mask::new(*grid, data)
}

fn interp_table(n_fine: usize, factor: usize) -> Vec<(usize, usize, f64)> {
    let k = n_fine / factor;
    (0..n_fine)
        .map(|i| {
            let u = (i as f64 + 0.5) / factor as f64 - 0.5;
            if u <= 0.0 {
                (0, 0, 0.0)
            } else if u >= (k - 1) as f64 {
                (k - 1, k - 1, 0.0)
            } else {
                let i0 = u.floor() as usize;
                (i0, i0 + 1, u - i0 as f64)
            }
        })
        .collect()
}

/// Degrades SST resolution: per frame, block-average by `factor`, then
/// bilinearly interpolate back onto the original grid. Factor 1 is the
/// identity; the frame mean is preserved.
pub fn coarsen_sst(sst: &SpaceTimeField, factor: usize) -> Result<SpaceTimeField> {
    if factor == 0 {
        return Err(Error::Config("coarsening factor must be at least 1".into()));
    }
    if factor == 1 {
        return Ok(sst.clone());
    }
    let grid = *sst.grid();
    let (nt, h, w) = grid.shape();
    if h % factor != 0 || w % factor != 0 {
        return Err(Error::dim(
            "coarsen_sst",
            format!("a factor dividing the {h}x{w} grid"),
            factor.to_string(),
        ));
    }
    let (kh, kw) = (h / factor, w / factor);
    let rows = interp_table(h, factor);
    let cols = interp_table(w, factor);
    let mut out = Array3::<f64>::zeros((nt, h, w));
    for t in 0..nt {
        let frame = sst.data().index_axis(Axis(0), t);
        let mut coarse = Array2::<f64>::zeros((kh, kw));
        for bi in 0..kh {
            for bj in 0..kw {
                let block = frame.slice(ndarray::s![bi * factor..(bi + 1) * factor, bj * factor..(bj + 1) * factor]);
                coarse[[bi, bj]] = block.sum() / (factor * factor) as f64;
            }
        }
        let mut fine = out.index_axis_mut(Axis(0), t);
        for i in 0..h {
            let (i0, i1, fy) = rows[i];
            for j in 0..w {
                let (j0, j1, fx) = cols[j];
                fine[[i, j]] = (1.0 - fy) * (1.0 - fx) * coarse[[i0, j0]]
                    + (1.0 - fy) * fx * coarse[[i0, j1]]
                    + fy * (1.0 - fx) * coarse[[i1, j0]]
                    + fy * fx * coarse[[i1, j1]];
            }
        }
    }
    SpaceTimeField::new(grid, out)
}

/// A half-open run of day indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DayRange {
    pub start: usize,
    pub end: usize,
}

/// Disjoint day-index ranges assigning each day to at most one role.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSplit {
    pub train: Vec<DayRange>,
    pub validation: Vec<DayRange>,
    pub test: Vec<DayRange>,
}

impl DatasetSplit {
    /// Lays the series out as contiguous train | validation | test blocks.
    pub fn contiguous(n_days: usize, train_days: usize, validation_days: usize) -> Result<Self> {
        if train_days == 0 || validation_days == 0 || train_days + validation_days >= n_days {
            return Err(Error::Config(format!(
                "cannot split {n_days} days into {train_days} train + {validation_days} validation + a nonempty test block"
            )));
        }
        Ok(DatasetSplit {
            train: vec![DayRange { start: 0, end: train_days }],
            validation: vec![DayRange { start: train_days, end: train_days + validation_days }],
            test: vec![DayRange { start: train_days + validation_days, end: n_days }],
        })
    }

    pub fn validate(&self, n_days: usize) -> Result<()> {
        let mut owner = vec![0u8; n_days];
        for (id, (name, ranges)) in
            [("train", &self.train), ("validation", &self.validation), ("test", &self.test)].iter().enumerate()
        {
            for r in ranges.iter() {
                if r.start >= r.end || r.end > n_days {
                    return Err(Error::Config(format!(
                        "{name} range {}..{} is invalid for a {n_days}-day series",
                        r.start, r.end
                    )));
                }
                for d in r.start..r.end {
                    if owner[d] != 0 && owner[d] != id as u8 + 1 {
                        return Err(Error::Config(format!("day {d} belongs to more than one split")));
                    }
                    owner[d] = id as u8 + 1;
                }
            }
        }
        Ok(())
    }
}

/// How the series is cut into training and evaluation windows.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WindowingConfig {
    /// Frames per window.
    pub window_length: usize,
    /// Days between consecutive window starts.
    pub stride: usize,
    /// Seed of the observation-noise draw, used only when the sampling
    /// config carries a nonzero noise level.
    pub noise_seed: u64,
}

impl Default for WindowingConfig {
    fn default() -> Self {
        WindowingConfig { window_length: 7, stride: 1, noise_seed: 0 }
    }
}

impl WindowingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window_length == 0 || self.stride == 0 {
            return Err(Error::Config("window_length and stride must be at least 1".into()));
        }
        Ok(())
    }
}

/// One split's windows plus each window's first day in the full series.
#[derive(Debug, Clone)]
pub struct SplitWindows {
    pub samples: Vec<WindowSample>,
    pub starts: Vec<usize>,
}

/// Windowed observation/truth pairs for all three roles.
#[derive(Debug, Clone)]
pub struct WindowedData {
    pub train: SplitWindows,
    pub validation: SplitWindows,
    pub test: SplitWindows,
}

fn slice_field(f: &SpaceTimeField, start: usize, len: usize) -> Result<SpaceTimeField> {
    let grid = f.grid().with_n_time(len)?;
    let data = f.data().slice(ndarray::s![start..start + len, .., ..]).to_owned();
    SpaceTimeField::new(grid, data)
}

fn slice_mask(m: &Mask, start: usize, len: usize) -> Result<Mask> {
    let grid = m.grid().with_n_time(len)?;
    let data = m.data().slice(ndarray::s![start..start + len, .., ..]).to_owned();
    Mask::new(grid, data)
}

/// The truth sampled by the mask: zeros at gaps, exact values where observed,
/// plus optional seeded Gaussian noise on the observed cells.
pub fn sample_alongtrack(
    ssh: &SpaceTimeField,
    mask: &Mask,
    sampling: &SamplingConfig,
    noise_seed: u64,
) -> Result<SpaceTimeField> {
    sampling.validate()?;
    let grid = *ssh.grid();
    let mut sampled = ssh.data().clone();
    if sampling.obs_noise_std > 0.0 {
        let mut rng = ChaCha12Rng::seed_from_u64(noise_seed);
        rng.set_stream(30);
        sampled.mapv_inplace(|v| v + sampling.obs_noise_std * gauss(&mut rng));
    }
    SpaceTimeField::new_masked(grid, sampled, mask)
}

/// Cuts the truth series into observation/truth window pairs. Observed
/// along-track values are the truth where the mask is true (plus optional
/// Gaussian noise); the dense coarse input is a single optimal interpolation
/// of the masked data over the whole series, sliced per window; SST is passed
/// through as provided (coarsen it first to study degraded SST).
pub fn make_windows(
    ssh: &SpaceTimeField,
    sst: Option<&SpaceTimeField>,
    mask: &Mask,
    sampling: &SamplingConfig,
    split: &DatasetSplit,
    wcfg: &WindowingConfig,
    oi: &OiConfig,
) -> Result<WindowedData> {
    let grid = *ssh.grid();
    if mask.grid() != &grid {
        return Err(Error::dim(
            "make_windows",
            format!("mask on grid {:?}", grid.shape()),
            format!("{:?}", mask.grid().shape()),
        ));
    }
    let alongtrack = sample_alongtrack(ssh, mask, sampling, wcfg.noise_seed)?;
    let full_obs = ObservationSet::new(alongtrack.clone(), mask.clone(), SpaceTimeField::zeros(grid), None)?;
    let coarse = oi_interpolate(&full_obs, oi)?;
    windows_from_parts(ssh, sst, &alongtrack, mask, &coarse, split, wcfg)
}

/// Builds the windowed datasets from already-materialized series (for
/// example, loaded back from a data directory): the truth, the sampled
/// along-track values, the mask, and the dense coarse product.
pub fn windows_from_parts(
    ssh: &SpaceTimeField,
    sst: Option<&SpaceTimeField>,
    alongtrack: &SpaceTimeField,
    mask: &Mask,
    coarse: &SpaceTimeField,
    split: &DatasetSplit,
    wcfg: &WindowingConfig,
) -> Result<WindowedData> {
    wcfg.validate()?;
    let grid = *ssh.grid();
    for (name, other) in [
        ("mask", mask.grid()),
        ("alongtrack", alongtrack.grid()),
        ("coarse", coarse.grid()),
    ] {
        if other != &grid {
            return Err(Error::dim(
                "windows_from_parts",
                format!("{name} on grid {:?}", grid.shape()),
                format!("{:?}", other.shape()),
            ));
        }
    }
    if let Some(sst) = sst {
        if sst.grid() != &grid {
            return Err(Error::dim(
                "windows_from_parts",
                format!("sst on grid {:?}", grid.shape()),
                format!("{:?}", sst.grid().shape()),
            ));
        }
    }
    let n_days = grid.n_time;
    split.validate(n_days)?;

    let t_win = wcfg.window_length;
    let build_split = |name: &str, ranges: &[DayRange]| -> Result<SplitWindows> {
        let mut samples = Vec::new();
        let mut starts = Vec::new();
        for r in ranges {
            let mut s = r.start;
            while s + t_win <= r.end {
                let obs = ObservationSet::new(
                    slice_field(alongtrack, s, t_win)?,
                    slice_mask(mask, s, t_win)?,
                    slice_field(coarse, s, t_win)?,
                    sst.map(|f| slice_field(f, s, t_win)).transpose()?,
                )?;
                samples.push(WindowSample::new(obs, slice_field(ssh, s, t_win)?)?);
                starts.push(s);
                s += wcfg.stride;
            }
        }
        if samples.is_empty() {
            return Err(Error::Config(format!(
                "the {name} split is too short for any {t_win}-frame window"
            )));
        }
        Ok(SplitWindows { samples, starts })
    };

    Ok(WindowedData {
        train: build_split("train", &split.train)?,
        validation: build_split("validation", &split.validation)?,
        test: build_split("test", &split.test)?,
    })
}
