//! ADD, ADD-S, AUC and Chamfer distance on a symmetric object.
use nalgebra::Vector3;
use posekit::metrics::{add_metric, adds_metric, auc, chamfer, PointSet, PoseEstimate, PoseSource};
use posekit::mesh::TriMesh;
use posekit::so3::Rotation;

fn main() -> posekit::Result<()> {
    let model = PointSet::new(TriMesh::cylinder(0.03, 0.06, 16).vertices().to_vec())?;
    let gt = PoseEstimate {
        rotation: Rotation::from_axis_angle(Vector3::new(0.3, 1.0, 0.0), 0.7)?,
        translation: Vector3::new(0.0, 0.0, 0.6),
        source: PoseSource::Fitted,
    };
    // a spin about the symmetry axis leaves the cylinder in place
    let spun = PoseEstimate { rotation: gt.rotation.compose(&Rotation::rz(std::f64::consts::TAU / 16.0)), ..gt };
    println!("symmetric spin: ADD {:.4} m, ADD-S {:.2e} m", add_metric(&gt, &spun, &model), adds_metric(&gt, &spun, &model));

    let shifted = PoseEstimate { translation: gt.translation + Vector3::new(0.01, 0.0, 0.0), ..gt };
    let d = add_metric(&gt, &shifted, &model);
    println!("1 cm shift: ADD {d:.4} m");
    println!("AUC over [0, 0.1] m for errors [0, {d:.3}, 0.2]: {:.3}", auc(&[0.0, d, 0.2], 0.1));

    let a = model.transformed(&gt.rotation, &gt.translation);
    let b = model.transformed(&shifted.rotation, &shifted.translation);
    println!("chamfer {:.4}, reversed {:.4}", chamfer(&a, &b), chamfer(&b, &a));
    Ok(())
}
