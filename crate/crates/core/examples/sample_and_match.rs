//! Poisson-disc sample a mask, match samples to graph vertices and fill the
//! graph with features read at the matched samples.
use posekit::image::{DepthMap, FeatureMap, Mask};
use posekit::sampling::{
    candidate_edges, fill_graph, init_graph_depth, match_assign, multiscale_sample, poisson_disc_sample,
    CameraIntrinsics,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> posekit::Result<()> {
    let (w, h) = (120, 90);
    let mask = Mask::from_fn(w, h, |x, y| (20..100).contains(&x) && (15..75).contains(&y));
    let depth = DepthMap::from_fn(w, h, |x, _| 0.5 + 0.001 * x as f64);
    let k = CameraIntrinsics::new(300.0, 300.0, 59.5, 44.5)?;

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let samples = poisson_disc_sample(&mask, 4.0, 200, &mut rng)?;
    let g = init_graph_depth(&mask, &depth, &k, 10)?;
    println!("{} samples, {} vertices", samples.len(), g.len());

    let candidates = candidate_edges(g.coords2d().unwrap(), &samples, 3);
    let assignment = match_assign(&candidates);
    println!("{} pairs, total cost {:.2}", assignment.pairs.len(), assignment.total_cost);

    let maps = [
        FeatureMap::from_fn(w, h, 2, 1, |x, y, out| out.copy_from_slice(&[x as f64, y as f64])),
        FeatureMap::from_fn(w / 2, h / 2, 1, 2, |x, y, out| out[0] = (x + y) as f64),
    ];
    let conv: Vec<Vec<f64>> = samples.iter().map(|&p| multiscale_sample(&maps, p)).collect::<posekit::Result<_>>()?;
    let sphere = vec![vec![1.0]; samples.len()];
    let filled = fill_graph(&g, &assignment, &conv, &sphere)?;
    println!("filled features: {} x {}", filled.len(), filled.feature_width());
    Ok(())
}
