//! Synthesize a scene, estimate every object's pose and score the result.
use posekit::pipeline::{evaluate, run_pipeline, RunConfig};
use posekit::metrics::PointSet;
use posekit::scene::{synth_scene, SceneSpec};

fn main() -> posekit::Result<()> {
    let scene = synth_scene(&SceneSpec::random(3, 21))?;
    let config = RunConfig { b: 8, n: 8, ..RunConfig::default() };
    let out = run_pipeline(&scene, &config)?;
    for s in out.stages.iter().filter(|s| s.object_id == out.poses[0].object_id) {
        println!("{:<16} {:>8.4} s  {}", s.stage, s.seconds, s.detail);
    }
    let models: Vec<(String, PointSet)> = scene
        .spec
        .objects
        .iter()
        .zip(&scene.meshes)
        .map(|(o, m)| Ok((o.id.clone(), PointSet::new(m.vertices().to_vec())?)))
        .collect::<posekit::Result<_>>()?;
    let report = evaluate(&out.poses, &scene.ground_truth, &models, config.auc_threshold)?;
    for o in &report.objects {
        println!("{:<12} ADD {:?}  ADD-S {:?}", o.object_id, o.add, o.adds);
    }
    println!("ADD AUC {:.4}, ADD-S AUC {:.4}", report.add_auc, report.adds_auc);
    Ok(())
}
