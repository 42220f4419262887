//! Ray cast a mesh onto the sphere and recover a rotation by correlating the
//! rotated signal against a template of the original.
use nalgebra::Vector3;
use posekit::learn::{argmax_rotation, reference_template};
use posekit::mesh::TriMesh;
use posekit::so3::{so3_grid, Rotation};
use posekit::sphere::{dh_grid, raycast_sphere, rotate_signal, s2_correlate};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> posekit::Result<()> {
    let sphere = dh_grid(12)?;
    let rot = so3_grid(12)?;
    let mesh = TriMesh::asymmetric_blob(0.05);
    let signal = raycast_sphere(&mesh, &Vector3::zeros(), &sphere)?;
    let template = reference_template(&signal);

    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..5 {
        let truth = Rotation::random(&mut rng);
        let c = s2_correlate(&template, &rotate_signal(&truth, &signal), &rot)?.sum_channels();
        let best = argmax_rotation(&c)?;
        println!(
            "node {:5}  error {:.3} rad  confidence {:.3e}",
            best.node,
            best.rotation.geodesic_distance(&truth),
            best.confidence
        );
    }

    // a grid-aligned z-rotation of the input shifts the output along alpha
    let k = 3;
    let q = Rotation::rz(k as f64 * std::f64::consts::TAU / 12.0);
    let a = s2_correlate(&template, &signal, &rot)?;
    let b = s2_correlate(&template, &rotate_signal(&q, &signal), &rot)?;
    let gap = a
        .shift_alpha(k)
        .values()
        .iter()
        .zip(b.values())
        .fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
    println!("alpha-shift equivariance gap: {gap:.2e}");
    Ok(())
}
