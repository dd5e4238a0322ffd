//! Reads and writes COLMAP sparse models in both text and binary form.
//!
//! Pass a model directory to inspect it; without arguments a synthetic
//! model is used.

use std::path::PathBuf;

use depthfuse::colmap::{detect_format, read_model, write_model, ModelFormat};
use depthfuse::synthscene::{generate, SceneSpec};

fn main() -> depthfuse::Result<()> {
    let model = match std::env::args().nth(1) {
        Some(dir) => {
            let dir = PathBuf::from(dir);
            println!("{} model in {}", format!("{:?}", detect_format(&dir)?).to_lowercase(), dir.display());
            read_model(&dir, None)?
        }
        None => generate(&SceneSpec::sphere(1.0, 4))?.model,
    };
    for cam in model.cameras().values() {
        println!(
            "camera {} {:?} {}x{} f=({:.2}, {:.2}) c=({:.2}, {:.2})",
            cam.camera_id, cam.model, cam.width, cam.height, cam.fx, cam.fy, cam.cx, cam.cy
        );
    }
    for image in model.images().values() {
        let linked = image.observations.iter().filter(|o| o.point3d_id.is_some()).count();
        println!("image {:>3} {:<16} {linked} linked observations", image.image_id, image.name);
    }

    let tmp = std::env::temp_dir().join("depthfuse_colmap_roundtrip");
    for format in [ModelFormat::Text, ModelFormat::Binary] {
        let dir = tmp.join(format!("{format:?}").to_lowercase());
        write_model(&model, &dir, format)?;
        let back = read_model(&dir, Some(format))?;
        println!("{format:?} round trip lossless: {}", back == model);
    }
    Ok(())
}
