//! Static PNG renderings of reconstructed fields.
//!
//! The comparison figures show, for one selected day, the norm of the SSH
//! spatial gradient and the SSH Laplacian for every method side by side, all
//! sharing one color range so structure differences are attributable to the
//! fields rather than the scaling. Learned SST feature maps render the same
//! way on their own shared range.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use ndarray::{Array2, ArrayView2};

use crate::conv;
use crate::error::{Error, Result};
use crate::grid::SpaceTimeField;

/// Perceptually uniform dark-to-bright anchors, interpolated linearly.
const ANCHORS: [(f64, f64, f64); 11] = [
    (0.267, 0.005, 0.329),
    (0.283, 0.141, 0.458),
    (0.254, 0.265, 0.530),
    (0.207, 0.372, 0.553),
    (0.164, 0.471, 0.558),
    (0.128, 0.567, 0.551),
    (0.135, 0.659, 0.518),
    (0.267, 0.749, 0.441),
    (0.478, 0.821, 0.318),
    (0.741, 0.873, 0.150),
    (0.993, 0.906, 0.144),
];

/// Maps `t` in [0, 1] (clamped) to an RGB color.
pub fn colormap(t: f64) -> [u8; 3] {
    let t = if t.is_finite() { t.clamp(0.0, 1.0) } else { 0.5 };
    let pos = t * (ANCHORS.len() - 1) as f64;
    let lo = (pos.floor() as usize).min(ANCHORS.len() - 2);
    let frac = pos - lo as f64;
    let (r0, g0, b0) = ANCHORS[lo];
    let (r1, g1, b1) = ANCHORS[lo + 1];
    let mix = |a: f64, b: f64| ((a + frac * (b - a)) * 255.0).round() as u8;
    [mix(r0, r1), mix(g0, g1), mix(b0, b1)]
}

/// Renders one frame to a PNG with the value range [vmin, vmax]; values
/// outside the range saturate. `upscale` repeats each cell as an
/// upscale×upscale pixel block.
pub fn heatmap_png(path: &Path, frame: &ArrayView2<f64>, vmin: f64, vmax: f64, upscale: usize) -> Result<()> {
    if upscale == 0 {
        return Err(Error::Config("heatmap upscale factor must be at least 1".into()));
    }
    let (h, w) = frame.dim();
    let span = vmax - vmin;
    let img = image::RgbImage::from_fn((w * upscale) as u32, (h * upscale) as u32, |x, y| {
        let v = frame[[y as usize / upscale, x as usize / upscale]];
        let t = if span > 0.0 { (v - vmin) / span } else { 0.5 };
        image::Rgb(colormap(t))
    });
    img.save(path).map_err(|e| Error::Config(format!("writing {}: {e}", path.display())))?;
    Ok(())
}

fn check_day(field: &SpaceTimeField, day: usize, context: &'static str) -> Result<()> {
    let nt = field.grid().n_time;
    if day >= nt {
        return Err(Error::Config(format!("{context}: day {day} outside the {nt}-frame series")));
    }
    Ok(())
}

/// `|∇SSH|` of one frame, centered differences.
pub fn gradient_norm_frame(field: &SpaceTimeField, day: usize) -> Result<Array2<f64>> {
    check_day(field, day, "gradient_norm_frame")?;
    let frame = field.data().slice(ndarray::s![day..day + 1, .., ..]);
    let gy = conv::grad_y(&frame);
    let gx = conv::grad_x(&frame);
    let (_, h, w) = gy.dim();
    Ok(Array2::from_shape_fn((h, w), |(i, j)| {
        (gy[[0, i, j]] * gy[[0, i, j]] + gx[[0, i, j]] * gx[[0, i, j]]).sqrt()
    }))
}

/// 5-point Laplacian of one frame.
pub fn laplacian_frame(field: &SpaceTimeField, day: usize) -> Result<Array2<f64>> {
    check_day(field, day, "laplacian_frame")?;
    let frame = field.data().slice(ndarray::s![day..day + 1, .., ..]);
    let lap = conv::laplacian5(&frame);
    Ok(lap.index_axis(ndarray::Axis(0), 0).to_owned())
}

fn range_over(frames: &[Array2<f64>]) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for f in frames {
        for &v in f {
            lo = lo.min(v);
            hi = hi.max(v);
        }
    }
    (lo, hi)
}

/// Emits, for the chosen day, one gradient-norm map and one Laplacian map per
/// method (each family on its own color range shared across all methods) plus
/// one map per learned feature (shared across features). Returns the written
/// paths: methods × {gradnorm, laplacian} + features.
pub fn plot_fields(
    dir: &Path,
    methods: &BTreeMap<String, SpaceTimeField>,
    day: usize,
    features: &[Array2<f64>],
    upscale: usize,
) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let mut written = Vec::new();

    let grads: Vec<(&String, Array2<f64>)> = methods
        .iter()
        .map(|(name, f)| Ok((name, gradient_norm_frame(f, day)?)))
        .collect::<Result<_>>()?;
    let laps: Vec<(&String, Array2<f64>)> = methods
        .iter()
        .map(|(name, f)| Ok((name, laplacian_frame(f, day)?)))
        .collect::<Result<_>>()?;

    for (frames, kind) in [(&grads, "gradnorm"), (&laps, "laplacian")] {
        let all: Vec<Array2<f64>> = frames.iter().map(|(_, f)| f.clone()).collect();
        let (lo, hi) = range_over(&all);
        for (name, frame) in frames {
            let path = dir.join(format!("{name}_{kind}_day{day:03}.png"));
            heatmap_png(&path, &frame.view(), lo, hi, upscale)?;
            written.push(path);
        }
    }

    if !features.is_empty() {
        let (lo, hi) = range_over(features);
        for (i, frame) in features.iter().enumerate() {
            let path = dir.join(format!("feature{i:02}_day{day:03}.png"));
            heatmap_png(&path, &frame.view(), lo, hi, upscale)?;
            written.push(path);
        }
    }
    Ok(written)
}

/// Plain SSH heatmaps for the same day, one per method, shared color range.
pub fn plot_ssh_maps(
    dir: &Path,
    methods: &BTreeMap<String, SpaceTimeField>,
    day: usize,
    upscale: usize,
) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let frames: Vec<(&String, Array2<f64>)> = methods
        .iter()
        .map(|(name, f)| {
            check_day(f, day, "plot_ssh_maps")?;
            Ok((name, f.data().index_axis(ndarray::Axis(0), day).to_owned()))
        })
        .collect::<Result<_>>()?;
    let all: Vec<Array2<f64>> = frames.iter().map(|(_, f)| f.clone()).collect();
    let (lo, hi) = range_over(&all);
    let mut written = Vec::new();
    for (name, frame) in &frames {
        let path = dir.join(format!("{name}_ssh_day{day:03}.png"));
        heatmap_png(&path, &frame.view(), lo, hi, upscale)?;
        written.push(path);
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::SpaceTimeGrid;
    use ndarray::Array3;

    fn field(scale: f64) -> SpaceTimeField {
        let g = SpaceTimeGrid::new(8, 0.05, 1.0, 3).unwrap();
        SpaceTimeField::new(
            g,
            Array3::from_shape_fn(g.shape(), |(t, i, j)| {
                scale * ((0.9 * i as f64 + 0.4 * j as f64 + t as f64).sin() + 0.3 * (i * j) as f64 / 49.0)
            }),
        )
        .unwrap()
    }

    #[test]
    fn colormap_hits_its_anchors_and_clamps() {
        assert_eq!(colormap(0.0), [68, 1, 84]);
        assert_eq!(colormap(1.0), [253, 231, 37]);
        assert_eq!(colormap(-5.0), colormap(0.0));
        assert_eq!(colormap(7.0), colormap(1.0));
    }

    #[test]
    fn heatmaps_are_deterministic_and_sized_by_the_upscale() {
        let f = field(1.0);
        let frame = f.data().index_axis(ndarray::Axis(0), 0).to_owned();
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a.png");
        let b = dir.path().join("b.png");
        heatmap_png(&a, &frame.view(), -1.0, 1.0, 4).unwrap();
        heatmap_png(&b, &frame.view(), -1.0, 1.0, 4).unwrap();
        assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());

        let img = image::open(&a).unwrap().to_rgb8();
        assert_eq!(img.dimensions(), (32, 32));

        // A flat frame on a degenerate range renders as the midpoint color.
        let flat = Array2::from_elem((8, 8), 2.5);
        let c = dir.path().join("c.png");
        heatmap_png(&c, &flat.view(), 2.5, 2.5, 1).unwrap();
        let img = image::open(&c).unwrap().to_rgb8();
        let mid = colormap(0.5);
        assert!(img.pixels().all(|p| p.0 == mid));

        assert!(heatmap_png(&c, &flat.view(), 0.0, 1.0, 0).is_err());
    }

    #[test]
    fn field_maps_share_one_color_range_across_methods() {
        let strong = field(1.0);
        let weak = field(0.4);
        let mut methods = BTreeMap::new();
        methods.insert("strong".to_string(), strong.clone());
        methods.insert("weak".to_string(), weak.clone());
        let dir = tempfile::tempdir().unwrap();
        let feats = vec![Array2::from_shape_fn((8, 8), |(i, j)| (i + j) as f64)];
        let written = plot_fields(dir.path(), &methods, 1, &feats, 1).unwrap();
        assert_eq!(written.len(), 2 * 2 + 1);
        assert!(written.iter().all(|p| p.exists()));

        // The global gradient-norm maximum sits in the strong field, so only
        // the strong map may reach the top anchor color.
        let g_strong = gradient_norm_frame(&strong, 1).unwrap();
        let g_weak = gradient_norm_frame(&weak, 1).unwrap();
        let global_max = range_over(&[g_strong.clone(), g_weak.clone()]).1;
        assert!(g_weak.iter().all(|&v| v < global_max));
        let top = image::Rgb(colormap(1.0));
        let strong_png = image::open(dir.path().join("strong_gradnorm_day001.png")).unwrap().to_rgb8();
        let weak_png = image::open(dir.path().join("weak_gradnorm_day001.png")).unwrap().to_rgb8();
        assert!(strong_png.pixels().any(|p| *p == top));
        assert!(weak_png.pixels().all(|p| *p != top));

        assert!(plot_fields(dir.path(), &methods, 3, &feats, 1).is_err());
        assert!(plot_ssh_maps(dir.path(), &methods, 3, 1).is_err());
        let ssh_maps = plot_ssh_maps(dir.path(), &methods, 0, 1).unwrap();
        assert_eq!(ssh_maps.len(), 2);
    }

    #[test]
    fn frame_operators_match_hand_stencils_at_an_interior_cell() {
        let f = field(1.0);
        let d = f.data();
        let (i, j, t) = (3, 4, 1);
        let g = gradient_norm_frame(&f, t).unwrap();
        let gy = 0.5 * (d[[t, i + 1, j]] - d[[t, i - 1, j]]);
        let gx = 0.5 * (d[[t, i, j + 1]] - d[[t, i, j - 1]]);
        assert!((g[[i, j]] - (gy * gy + gx * gx).sqrt()).abs() < 1e-12);

        let lap = laplacian_frame(&f, t).unwrap();
        let expected =
            d[[t, i - 1, j]] + d[[t, i + 1, j]] + d[[t, i, j - 1]] + d[[t, i, j + 1]] - 4.0 * d[[t, i, j]];
        assert!((lap[[i, j]] - expected).abs() < 1e-12);
    }
}
