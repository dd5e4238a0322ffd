//! Scale/shift alignment against sparse depth with gross outliers: RANSAC
//! against least squares and no alignment.

use depthfuse::alignment::{align_view, AlignmentConfig, AlignmentMethod};
use depthfuse::evaluation::depth_rmse;
use depthfuse::provider::{OracleNoise, SyntheticOracle};
use depthfuse::synthscene::{generate, SceneSpec};

fn main() -> depthfuse::Result<()> {
    let spec = SceneSpec {
        sparse_density: 400,
        outlier_fraction: 0.3,
        ..SceneSpec::sphere(1.0, 1)
    };
    let scene = generate(&spec)?;
    let (a, b) = (1.7, -0.4);
    let oracle = SyntheticOracle {
        ground_truth: scene.gt_depths.clone(),
        noise: OracleNoise {
            sigma_mult: 0.002,
            scale: a,
            shift: b,
            seed: 1,
        },
    };
    let pred = oracle.corrupt(&scene.gt_depths[&1], 1, 0);
    let sparse = &scene.sparse_depths[&1];
    println!(
        "prediction = {a} * depth + {b}; {} of {} sparse samples are gross outliers",
        scene.outliers.len(),
        sparse.count()
    );
    println!("expected inverse: scale {:.4}, shift {:.4}", 1.0 / a, -b / a);
    println!("{:<14} {:>9} {:>9} {:>8} {:>9}", "method", "scale", "shift", "inliers", "RMSE");
    for method in [AlignmentMethod::Ransac, AlignmentMethod::LeastSquare, AlignmentMethod::NoAlignment] {
        let cfg = AlignmentConfig {
            method,
            ..AlignmentConfig::default()
        };
        let (aligned, model, pairs) = align_view(&pred, sparse, &cfg)?;
        let rmse = depth_rmse(&aligned, &scene.gt_depths[&1])?;
        println!(
            "{:<14} {:>9.4} {:>9.4} {:>4}/{:<3} {rmse:>9.5}",
            method.name(),
            model.scale,
            model.shift,
            model.inlier_count,
            pairs
        );
    }
    Ok(())
}
