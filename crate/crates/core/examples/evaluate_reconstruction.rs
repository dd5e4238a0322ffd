//! Scores a mesh against a reference: Chamfer distance, F-score and depth
//! RMSE, printed as the same table the CLI writes to metrics.txt.

use std::path::PathBuf;

use depthfuse::evaluation::{sample_mesh, MetricsReport};
use depthfuse::io::read_mesh_ply;
use depthfuse::synthscene::icosphere;

fn main() -> depthfuse::Result<()> {
    let args: Vec<PathBuf> = std::env::args().skip(1).map(PathBuf::from).collect();
    let (pred, gt) = match args.as_slice() {
        [p, g] => (read_mesh_ply(p)?, read_mesh_ply(g)?),
        _ => {
            println!("no meshes given; comparing a coarse icosphere to a fine one");
            (icosphere(1.0, 2), icosphere(1.0, 5))
        }
    };
    let samples = 50_000;
    let pred_pts = sample_mesh(&pred, samples, 0)?;
    let gt_pts = sample_mesh(&gt, samples, 1)?;
    for tau in [0.005, 0.01, 0.05] {
        let report = MetricsReport::new(tau).with_points(&pred_pts, &gt_pts)?;
        println!("tau = {tau}");
        print!("{}", report.to_table());
    }
    Ok(())
}
