//! Build an Euler-angle rotation grid and snap random rotations to it.
use posekit::so3::{so3_grid, Rotation};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> posekit::Result<()> {
    let grid = so3_grid(12)?;
    println!("{} nodes, {} x {} x {}", grid.len(), grid.n_alpha(), grid.n_beta(), grid.n_gamma());

    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let r = Rotation::random(&mut rng);
        let node = grid.nearest(&r);
        worst = worst.max(grid.rotation(node).geodesic_distance(&r));
    }
    println!("worst nearest-node distance over 1000 draws: {worst:.4} rad");

    let r = Rotation::from_axis_angle(nalgebra::Vector3::new(1.0, 2.0, 0.5), 0.8)?;
    let e = r.to_euler_zyz();
    println!("zyz angles ({:.4}, {:.4}, {:.4})", e.alpha, e.beta, e.gamma);
    Ok(())
}
