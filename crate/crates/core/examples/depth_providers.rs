//! Depth providers and ensembling: the synthetic oracle with a planted
//! affine corruption, a median over several noisy members, and the
//! densified-conditioning provider.

use depthfuse::conditioning::{build_bundle, ConditioningConfig};
use depthfuse::evaluation::depth_rmse;
use depthfuse::provider::{ensemble_median, ProviderSpec, ViewInput};
use depthfuse::synthscene::{generate, SceneSpec};

fn main() -> depthfuse::Result<()> {
    let scene = generate(&SceneSpec::sphere(1.0, 4))?;
    let names = scene.model.images().iter().map(|(id, im)| (*id, im.name.clone())).collect();
    let image = scene.model.image(1)?;
    let cam = scene.model.camera_of(image);
    let view = ViewInput {
        image_id: 1,
        name: &image.name,
        width: cam.width,
        height: cam.height,
        rgb_path: None,
    };
    let bundle = build_bundle(&scene.sparse_depths[&1], &ConditioningConfig::default())?;
    let gt = &scene.gt_depths[&1];

    let noisy = ProviderSpec::SyntheticOracle {
        gt_dir: None,
        sigma_mult: 0.05,
        scale: 1.0,
        shift: 0.0,
        seed: 3,
    }
    .build(Some(scene.gt_depths.clone()), &names)?;
    for n in [1, 3, 5, 9] {
        let members = (0..n).map(|m| noisy.predict(&view, &bundle, m)).collect::<depthfuse::Result<Vec<_>>>()?;
        let median = ensemble_median(&members)?;
        println!("ensemble of {n}: RMSE to ground truth {:.5}", depth_rmse(&median, gt)?);
    }

    let corrupted = ProviderSpec::SyntheticOracle {
        gt_dir: None,
        sigma_mult: 0.0,
        scale: 2.0,
        shift: 0.5,
        seed: 0,
    }
    .build(Some(scene.gt_depths.clone()), &names)?;
    let pred = corrupted.predict(&view, &bundle, 0)?;
    println!("affine-corrupted oracle RMSE {:.4} (undone by alignment)", depth_rmse(&pred, gt)?);

    let densified = ProviderSpec::Densified.build(None, &names)?.predict(&view, &bundle, 0)?;
    println!("densified sparse depth RMSE {:.4}", depth_rmse(&densified, gt)?);
    Ok(())
}
