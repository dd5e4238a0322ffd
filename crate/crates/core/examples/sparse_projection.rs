//! Projects an SfM point cloud into each view to form sparse depth maps.

use depthfuse::geometry::{render_sparse_depth, RenderOptions, SplatMode};
use depthfuse::io::write_raster_pair;
use depthfuse::synthscene::{generate, SceneSpec};

fn main() -> depthfuse::Result<()> {
    let scene = generate(&SceneSpec::room([4.0, 3.0, 2.5], 12))?;
    let out = std::env::temp_dir().join("depthfuse_sparse_projection");
    let reprojected = RenderOptions {
        splat: SplatMode::Reprojected,
        ..RenderOptions::default()
    };
    println!("{:<14} {:>8} {:>8} {:>10} {:>10}", "image", "samples", "reproj", "min depth", "max depth");
    for image in scene.model.images().values() {
        let sparse = render_sparse_depth(&scene.model, image.image_id, RenderOptions::default())?;
        let alt = render_sparse_depth(&scene.model, image.image_id, reprojected)?;
        let depths: Vec<f64> = sparse.valued().map(|(_, s)| s.depth).collect();
        let lo = depths.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = depths.iter().cloned().fold(0.0, f64::max);
        println!("{:<14} {:>8} {:>8} {lo:>10.4} {hi:>10.4}", image.name, sparse.count(), alt.count());
        write_raster_pair(&out.join(format!("{}.depth", image.name)), &sparse.depth_or_zero())?;
    }
    println!("rasters written to {}", out.display());
    Ok(())
}
