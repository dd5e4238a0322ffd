//! Generates the three analytic scenes and exports them in COLMAP layout.
//!
//! ```sh
//! cargo run --example synth_scene -- target/scenes
//! ```

use std::path::PathBuf;

use depthfuse::colmap::ModelFormat;
use depthfuse::synthscene::{generate, SceneSpec};

fn main() -> depthfuse::Result<()> {
    let out = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| "target/scenes".into());
    let specs = [
        ("plane", SceneSpec::plane(2.0, 8)),
        ("sphere", SceneSpec { outlier_fraction: 0.05, ..SceneSpec::sphere(1.0, 8) }),
        ("room", SceneSpec::room([4.0, 3.0, 2.5], 12)),
    ];
    for (name, spec) in specs {
        let scene = generate(&spec)?;
        let sparse: usize = scene.sparse_depths.values().map(|s| s.count()).sum();
        println!(
            "{name:>6}: {} views {}x{}, {} points, {} sparse samples, {} planted outliers, gt mesh {} triangles",
            scene.model.images().len(),
            spec.width,
            spec.height,
            scene.model.points().len(),
            sparse,
            scene.outliers.len(),
            scene.gt_mesh.triangles.len(),
        );
        scene.export(&out.join(name), ModelFormat::Binary)?;
    }
    println!("scenes written to {}", out.display());
    Ok(())
}
