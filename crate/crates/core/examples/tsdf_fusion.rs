//! Integrates ground-truth depth maps into a TSDF volume and extracts a
//! mesh with marching cubes.

use std::path::PathBuf;

use depthfuse::fusion::FusionConfig;
use depthfuse::io::write_mesh_ply;
use depthfuse::synthscene::{generate, SceneSpec};

fn main() -> depthfuse::Result<()> {
    let out = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("depthfuse_tsdf_sphere.ply"));
    let scene = generate(&SceneSpec::sphere(1.0, 8))?;
    let cfg = FusionConfig::default();
    let mut volume = cfg.volume_for(&scene.model)?;
    println!(
        "volume {:?} voxels, voxel {:.4}, truncation {:.4}",
        volume.dims(),
        volume.voxel_size(),
        volume.truncation()
    );
    for (id, depth) in &scene.gt_depths {
        let image = scene.model.image(*id)?;
        volume.integrate(depth, scene.model.camera_of(image), image, cfg.max_weight)?;
    }
    let mesh = volume.extract_mesh()?;
    let radial = mesh.vertices.iter().map(|p| (p.norm() - 1.0).abs()).fold(0.0, f64::max);
    println!(
        "{} vertices, {} triangles, area {:.4} (sphere {:.4}), max radial error {radial:.4}",
        mesh.vertices.len(),
        mesh.triangles.len(),
        mesh.surface_area(),
        4.0 * std::f64::consts::PI
    );
    write_mesh_ply(&out, &mesh)?;
    println!("mesh written to {}", out.display());
    Ok(())
}
