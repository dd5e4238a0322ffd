//! Builds the conditioning bundle for one view: trimmed range, KNN
//! densification, and full and latent-resolution distance maps.

use depthfuse::conditioning::{build_bundle, ConditioningConfig};
use depthfuse::synthscene::{generate, SceneSpec};

fn summary(values: impl Iterator<Item = f64>) -> (f64, f64, f64) {
    let (mut lo, mut hi, mut sum, mut n) = (f64::INFINITY, f64::NEG_INFINITY, 0.0, 0usize);
    for v in values {
        lo = lo.min(v);
        hi = hi.max(v);
        sum += v;
        n += 1;
    }
    (lo, hi, sum / n as f64)
}

fn main() -> depthfuse::Result<()> {
    let spec = SceneSpec {
        outlier_fraction: 0.03,
        ..SceneSpec::sphere(1.0, 6)
    };
    let scene = generate(&spec)?;
    let sparse = &scene.sparse_depths[&1];
    println!("view 1: {} sparse samples, {} planted outliers in the scene", sparse.count(), scene.outliers.len());

    for k in [0, 1, 3] {
        let bundle = build_bundle(sparse, &ConditioningConfig { k, ..Default::default() })?;
        let r = bundle.range;
        let valid = bundle.valid.as_slice().iter().filter(|v| **v).count();
        let (lo, hi, mean) = summary(bundle.densified_metric().grid().as_slice().iter().flatten().copied());
        println!(
            "k={k}: raw [{:.4}, {:.4}] -> adjusted [{:.4}, {:.4}], {valid} valid px, metric depth {lo:.3}..{hi:.3} (mean {mean:.3})",
            r.raw_min, r.raw_max, r.d_min_adj, r.d_max_adj
        );
        if let (Some(d), Some(l)) = (&bundle.distance_map, &bundle.distance_latent) {
            let (_, dmax, dmean) = summary(d.as_slice().iter().copied());
            println!(
                "      distance map max {dmax:.2} px, mean {dmean:.2} px; latent {}x{}",
                l.width(),
                l.height()
            );
        }
    }
    Ok(())
}
