//! Initialise a graph over a mask, unpool it twice and run a random GCN.
use nalgebra::DMatrix;
use posekit::graph::{gcn_network_forward, graph_unpool, GcnNetworkWeights, GCN_INPUT};
use posekit::image::Mask;
use posekit::sampling::{init_graph_plane, CameraIntrinsics};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> posekit::Result<()> {
    let mask = Mask::from_fn(160, 120, |x, y| {
        let (dx, dy) = (x as f64 - 80.0, y as f64 - 60.0);
        dx * dx + dy * dy < 40.0 * 40.0
    });
    let k = CameraIntrinsics::new(400.0, 400.0, 79.5, 59.5)?;
    let g = init_graph_plane(&mask, 0.6, &k, 12)?;
    println!("initial graph: {} vertices, {} edges", g.len(), g.edges().len());

    let once = graph_unpool(&g)?;
    let twice = graph_unpool(&once)?;
    println!("after unpooling: {} then {} vertices", once.len(), twice.len());

    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let g = g.with_features(DMatrix::from_fn(g.len(), GCN_INPUT, |_, _| rng.gen_range(0.0..1.0)))?;
    let weights = GcnNetworkWeights::random(GCN_INPUT, 9, &mut rng);
    let out = gcn_network_forward(&g, &weights)?;
    println!("network stages {:?}, {} keypoint offsets per vertex", out.stage_sizes, out.keypoints[0].len());
    Ok(())
}
