//! Select keypoints, vote them from noisy per-vertex offsets and fit a pose.
use nalgebra::Vector3;
use posekit::mesh::TriMesh;
use posekit::metrics::PointSet;
use posekit::pose::{fit_rigid, select_keypoints_fps, vote_keypoints};
use posekit::so3::Rotation;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> posekit::Result<()> {
    let mesh = TriMesh::asymmetric_blob(0.05);
    let model = PointSet::new(mesh.surface_points())?;
    let kps = select_keypoints_fps(&model, 9)?;

    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let r = Rotation::random(&mut rng);
    let t = Vector3::new(0.05, -0.02, 0.7);
    let target = kps.transformed(&r, &t);

    // vertices scattered over the object, a quarter of them voting garbage
    let vertices: Vec<Vector3<f64>> = model.points().iter().step_by(15).map(|p| r.apply(p) + t).collect();
    let offsets: Vec<Vec<Vector3<f64>>> = vertices
        .iter()
        .map(|v| {
            let bad = rng.gen_bool(0.25);
            target
                .iter()
                .map(|k| {
                    let noise = Vector3::from_fn(|_, _| rng.gen_range(-1.0..1.0));
                    if bad { noise * 0.1 } else { k - v + noise * 5e-4 }
                })
                .collect()
        })
        .collect();
    let votes = vote_keypoints(&PointSet::new(vertices)?, &offsets)?;
    let weights: Vec<f64> = votes.iter().map(|v| v.inlier_fraction).collect();
    let fit = fit_rigid(&kps, &votes, &weights)?;
    println!(
        "{} vertices; rotation error {:.2e} rad, translation error {:.2e} m",
        offsets.len(),
        fit.rotation.geodesic_distance(&r),
        (fit.translation - t).norm()
    );
    Ok(())
}
