//! Train the final filter of a small correlation stack to recover the
//! rotation of one object, then measure accuracy on fresh rotations.
use nalgebra::Vector3;
use posekit::learn::{argmax_rotation, sphere_cnn_forward, train_final_filter, SphereCnnStack, StackConfig};
use posekit::mesh::TriMesh;
use posekit::so3::{so3_grid, Rotation};
use posekit::sphere::{dh_grid, raycast_sphere, rotate_signal};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> posekit::Result<()> {
    let (sphere, rot) = (dh_grid(8)?, so3_grid(8)?);
    let reference = raycast_sphere(&TriMesh::asymmetric_blob(0.05), &Vector3::zeros(), &sphere)?;
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let stack = SphereCnnStack::for_reference(&reference, rot.clone(), &StackConfig::recovery(), &mut rng)?;

    let samples: Vec<_> = (0..40)
        .map(|_| {
            let r = Rotation::random(&mut rng);
            (rotate_signal(&r, &reference), r)
        })
        .collect();
    let (trained, report) = train_final_filter(&samples, &stack, 60, 10.0)?;
    println!(
        "loss {:.4} -> {:.4} in {} steps",
        report.losses[0],
        report.losses.last().unwrap(),
        report.losses.len()
    );

    let tolerance = (0..4000)
        .map(|_| Rotation::random(&mut rng))
        .map(|r| rot.rotation(rot.nearest(&r)).geodesic_distance(&r))
        .fold(0.0, f64::max);
    let mut hits = 0;
    for _ in 0..40 {
        let r = Rotation::random(&mut rng);
        let out = sphere_cnn_forward(&rotate_signal(&r, &reference), &trained, &rot)?;
        if argmax_rotation(&out)?.rotation.geodesic_distance(&r) <= tolerance {
            hits += 1;
        }
    }
    println!("{hits}/40 within {tolerance:.3} rad");
    Ok(())
}
