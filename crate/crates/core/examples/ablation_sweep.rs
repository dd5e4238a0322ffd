//! Sweeps the ablation axes exposed by the configuration (alignment method,
//! ensemble size, KNN neighbours and the distance map) on one synthetic
//! scene and prints a comparison table.

use depthfuse::colmap::ModelFormat;
use depthfuse::pipeline::{cmd_reconstruct, PipelineConfig};
use depthfuse::synthscene::{generate, SceneSpec};

fn main() -> depthfuse::Result<()> {
    let root = std::env::temp_dir().join("depthfuse_ablation");
    let spec = SceneSpec {
        sparse_density: 60,
        ..SceneSpec::room([4.0, 3.0, 2.5], 12)
    };
    generate(&spec)?.export(&root.join("scene"), ModelFormat::Binary)?;
    let quoted = |p: std::path::PathBuf| format!("{:?}", p.display().to_string());
    let base = [
        ("paths.sfm", quoted(root.join("scene/sparse"))),
        ("paths.gt_mesh", quoted(root.join("scene/gt_mesh.ply"))),
        ("paths.gt_depth", quoted(root.join("scene/gt_depth"))),
        ("evaluation.tau", "0.06".to_string()),
    ];
    let oracle = "{kind = \"synthetic_oracle\", sigma_mult = 0.03, scale = 2.0, shift = 0.5}";
    let runs: [(&str, Vec<(&str, &str)>); 8] = [
        ("oracle, RANSAC", vec![("provider", oracle)]),
        ("oracle, RANSAC, ensemble 5", vec![("provider", oracle), ("ensemble_size", "5")]),
        ("oracle, least squares", vec![("provider", oracle), ("alignment.method", "least_square")]),
        ("oracle, no alignment", vec![("provider", oracle), ("alignment.method", "no_alignment")]),
        ("densified k=0", vec![("conditioning.k", "0")]),
        ("densified k=1", vec![("conditioning.k", "1")]),
        ("densified k=3", vec![("conditioning.k", "3")]),
        ("densified k=3, point cloud", vec![("fusion.mode", "point_cloud")]),
    ];
    println!("{:<30} {:>9} {:>8} {:>10}", "run", "chamfer", "fscore", "depth rmse");
    for (i, (name, extra)) in runs.iter().enumerate() {
        let mut overrides: Vec<(String, String)> = base.iter().map(|(k, v)| (k.to_string(), v.clone())).collect();
        overrides.extend(extra.iter().map(|(k, v)| (k.to_string(), v.to_string())));
        overrides.push(("paths.output".into(), quoted(root.join(format!("run{i}")))));
        let cfg = PipelineConfig::from_toml("", &overrides)?;
        let report = cmd_reconstruct(&cfg)?.evaluated.report.expect("ground truth configured");
        let fmt = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{v:.4}"));
        println!(
            "{name:<30} {:>9} {:>8} {:>10}",
            fmt(report.chamfer),
            fmt(report.fscore),
            fmt(report.depth_rmse)
        );
    }
    Ok(())
}
