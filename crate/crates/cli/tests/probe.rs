//! Timing probe for the benchmark preset, run by hand while sizing the
//! acceptance end-to-end configuration. Ignored by default.

use std::time::Instant;

use varassim::pipeline::{self, RunDir};
use varassim::presets;

#[test]
#[ignore]
fn desk_probe() {
    let _ = env_logger::builder()
        .is_test(false)
        .filter_level(log::LevelFilter::Info)
        .try_init();
    let root = std::env::temp_dir().join("desk_probe");
    let _ = std::fs::remove_dir_all(&root);
    let dir = RunDir::new(root);

    let mut cfg = presets::preset("benchmark", 0).unwrap();
    cfg.eval.sst_factors = vec![1, 2, 4];

    let t0 = Instant::now();
    let ds = pipeline::gen_data(&cfg, &dir, true).unwrap();
    eprintln!("PROBE gen_data: {:.1?}", t0.elapsed());

    for name in ["unet_direct", "fourdvar_ssh", "fourdvar_mm"] {
        let t = Instant::now();
        pipeline::train_models(&cfg, &ds, &dir, Some(name), true).unwrap();
        eprintln!("PROBE train {name} (2 epochs): {:.1?}", t.elapsed());
    }

    let t = Instant::now();
    let labels = pipeline::reconstruct_models(&cfg, &ds, &dir, None, true).unwrap();
    eprintln!("PROBE reconstruct {labels:?}: {:.1?}", t.elapsed());

    let t = Instant::now();
    pipeline::baselines(&cfg, &ds, &dir, true).unwrap();
    eprintln!("PROBE baselines: {:.1?}", t.elapsed());

    let t = Instant::now();
    let rows = pipeline::evaluate(&cfg, &ds, &dir, true).unwrap();
    eprintln!("PROBE evaluate: {:.1?}", t.elapsed());
    eprintln!("{}", pipeline::format_report(&rows));
    eprintln!("PROBE total: {:.1?}", t0.elapsed());
}
