//! Fourier-domain operators on square frames.
//!
//! Conventions, used consistently across generation, cost terms, and
//! evaluation:
//!
//! * A `w × w` frame with spacing `dx` degrees spans `L = w·dx` degrees.
//!   Integer mode `(my, mx)` (fftfreq layout, `|m| ≤ w/2`) has spatial
//!   frequency `f = √(my² + mx²) / L` in cycles/degree and angular wavenumber
//!   `|k| = 2π f` in radians/degree.
//! * The half Laplacian `(-Δ)^{1/2}` is the Fourier multiplier `|k|`; its DC
//!   response is 0.
//! * Radial band-pass filters are sharp 0/1 multipliers keeping
//!   `low ≤ f ≤ high` (cycles/degree, inclusive). They are spectral
//!   projections, so they commute with every radial multiplier.
//! * The largest radial frequency on the grid is `√2 / (2 dx)` (corner modes),
//!   so a band with `high ≥ √2/(2 dx)` and `low = 0` is the identity.

use std::cell::RefCell;

use ndarray::{Array1, Array2, Array3, ArrayView2, ArrayView3, Axis};
use num_complex::Complex64;
use rustfft::FftPlanner;

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

/// Signed integer mode for index `i` of an `n`-point transform.
pub fn mode_index(i: usize, n: usize) -> i64 {
    let m = i as i64;
    if m > n as i64 / 2 {
        m - n as i64
    } else {
        m
    }
}

/// Largest radial frequency representable on the grid, in cycles/degree.
pub fn radial_nyquist(dx: f64) -> f64 {
    std::f64::consts::SQRT_2 / (2.0 * dx)
}

/// In-place 1-d forward FFT.
pub fn fft1(data: &mut [Complex64]) {
    PLANNER.with(|p| {
        let plan = p.borrow_mut().plan_fft_forward(data.len());
        plan.process(data);
    });
}

/// Unnormalized forward 2-d FFT of a real frame.
pub fn fft2(frame: &ArrayView2<f64>) -> Array2<Complex64> {
    let (h, w) = frame.dim();
    let mut data: Vec<Complex64> = frame.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    PLANNER.with(|p| {
        let fft_w = p.borrow_mut().plan_fft_forward(w);
        for r in 0..h {
            fft_w.process(&mut data[r * w..(r + 1) * w]);
        }
        let fft_h = p.borrow_mut().plan_fft_forward(h);
        let mut col = vec![Complex64::default(); h];
        for c in 0..w {
            for r in 0..h {
                col[r] = data[r * w + c];
            }
            fft_h.process(&mut col);
            for r in 0..h {
                data[r * w + c] = col[r];
            }
        }
    });
    Array2::from_shape_vec((h, w), data).expect("length preserved")
}

/// Inverse of [`fft2`] (scaled by `1/(h·w)`), real part.
pub fn ifft2_real(spec: &Array2<Complex64>) -> Array2<f64> {
    let (h, w) = spec.dim();
    let mut data: Vec<Complex64> = spec.iter().copied().collect();
    PLANNER.with(|p| {
        let inv_w = p.borrow_mut().plan_fft_inverse(w);
        for r in 0..h {
            inv_w.process(&mut data[r * w..(r + 1) * w]);
        }
        let inv_h = p.borrow_mut().plan_fft_inverse(h);
        let mut col = vec![Complex64::default(); h];
        for c in 0..w {
            for r in 0..h {
                col[r] = data[r * w + c];
            }
            inv_h.process(&mut col);
            for r in 0..h {
                data[r * w + c] = col[r];
            }
        }
    });
    let norm = 1.0 / (h * w) as f64;
    Array2::from_shape_vec((h, w), data.iter().map(|z| z.re * norm).collect()).expect("length preserved")
}

/// `|k|` multiplier of `(-Δ)^{1/2}` in radians/degree.
pub fn half_laplacian_multiplier(w: usize, dx: f64) -> Array2<f64> {
    let l = w as f64 * dx;
    Array2::from_shape_fn((w, w), |(i, j)| {
        let my = mode_index(i, w) as f64;
        let mx = mode_index(j, w) as f64;
        2.0 * std::f64::consts::PI * (my * my + mx * mx).sqrt() / l
    })
}

/// Radial frequency of each mode in cycles/degree.
pub fn radial_frequency(w: usize, dx: f64) -> Array2<f64> {
    let l = w as f64 * dx;
    Array2::from_shape_fn((w, w), |(i, j)| {
        let my = mode_index(i, w) as f64;
        let mx = mode_index(j, w) as f64;
        (my * my + mx * mx).sqrt() / l
    })
}

/// Sharp radial band-pass mask keeping `low ≤ f ≤ high` (cycles/degree).
pub fn band_mask(w: usize, dx: f64, low: f64, high: f64) -> Array2<f64> {
    let freq = radial_frequency(w, dx);
    freq.map(|&f| if f >= low && f <= high { 1.0 } else { 0.0 })
}

/// Applies a real Fourier multiplier to one frame. With an even multiplier
/// (`M(-k) = M(k)`, true of all radial multipliers here) this map is
/// self-adjoint on real frames.
pub fn apply_multiplier_frame(frame: &ArrayView2<f64>, mult: &ArrayView2<f64>) -> Array2<f64> {
    assert_eq!(frame.dim(), mult.dim(), "multiplier shape mismatch");
    let mut spec = fft2(frame);
    ndarray::Zip::from(&mut spec).and(mult).for_each(|z, &m| *z *= m);
    ifft2_real(&spec)
}

/// Applies a Fourier multiplier to each leading-axis frame of `(C,H,W)`.
pub fn apply_multiplier_stack(stack: &ArrayView3<f64>, mult: &ArrayView2<f64>) -> Array3<f64> {
    let (c, h, w) = stack.dim();
    let mut out = Array3::zeros((c, h, w));
    for ch in 0..c {
        out.index_axis_mut(Axis(0), ch)
            .assign(&apply_multiplier_frame(&stack.index_axis(Axis(0), ch), mult));
    }
    out
}

/// Periodic Hann window of length `n`.
pub fn hann(n: usize) -> Array1<f64> {
    Array1::from_shape_fn(n, |i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos())
}

/// Mean spectral power per integer radial ring, averaged over frames.
///
/// Ring `m` collects modes with `round(√(my² + mx²)) = m`; entry `m` of the
/// result is the mean `|F|²/(w·w)²` over that ring and all frames. Rings run
/// from 0 (DC) to `round(√2 · w/2)` (corner modes).
pub fn ring_power_spectrum(frames: &ArrayView3<f64>, use_hann: bool) -> Vec<f64> {
    let (n_frames, h, w) = frames.dim();
    assert_eq!(h, w, "ring spectrum needs square frames");
    let max_ring = ((w as f64 / 2.0) * std::f64::consts::SQRT_2).round() as usize;
    let mut power = vec![0.0; max_ring + 1];
    let mut counts = vec![0usize; max_ring + 1];
    let win = hann(w);
    let norm = 1.0 / ((w * w) as f64 * (w * w) as f64);
    let ring_of = |i: usize, j: usize| {
        let my = mode_index(i, w) as f64;
        let mx = mode_index(j, w) as f64;
        (my * my + mx * mx).sqrt().round() as usize
    };
    for t in 0..n_frames {
        let mut frame = frames.index_axis(Axis(0), t).to_owned();
        if use_hann {
            for ((i, j), v) in frame.indexed_iter_mut() {
                *v *= win[i] * win[j];
            }
        }
        let spec = fft2(&frame.view());
        for ((i, j), z) in spec.indexed_iter() {
            let m = ring_of(i, j);
            power[m] += z.norm_sqr() * norm;
            if t == 0 {
                counts[m] += 1;
            }
        }
    }
    for m in 0..=max_ring {
        if counts[m] > 0 {
            power[m] /= (counts[m] * n_frames) as f64;
        }
    }
    power
}

/// Mean temporal power spectrum over all pixels of a `(T,H,W)` block.
/// Entry `j` (`0 ≤ j ≤ T/2`) is the mean `|F|²/T²` at temporal mode `j`.
pub fn temporal_power_spectrum(block: &ArrayView3<f64>, use_hann: bool) -> Vec<f64> {
    let (t, h, w) = block.dim();
    let half = t / 2;
    let mut power = vec![0.0; half + 1];
    let win = hann(t);
    let norm = 1.0 / (t * t) as f64;
    let mut series = vec![Complex64::default(); t];
    for i in 0..h {
        for j in 0..w {
            for s in 0..t {
                let v = block[[s, i, j]] * if use_hann { win[s] } else { 1.0 };
                series[s] = Complex64::new(v, 0.0);
            }
            fft1(&mut series);
            for (jm, p) in power.iter_mut().enumerate() {
                *p += series[jm].norm_sqr() * norm;
            }
        }
    }
    let n_px = (h * w) as f64;
    for p in power.iter_mut() {
        *p /= n_px;
    }
    power
}
