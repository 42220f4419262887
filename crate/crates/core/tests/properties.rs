use nalgebra::{DMatrix, Vector3};
use posekit::graph::{delaunay_edges, graph_unpool, MeshGraph};
use posekit::image::{FeatureMap, Mask};
use posekit::metrics::{add_metric, adds_metric, chamfer, PointSet, PoseEstimate, PoseSource};
use posekit::pipeline::RunConfig;
use posekit::pose::{fit_rigid, KeypointSet, VoteResult};
use posekit::sampling::{backproject, candidate_edges, match_assign, poisson_disc_sample, CameraIntrinsics, Candidate};
use posekit::scene::SceneSpec;
use posekit::so3::{rotation_from_euler_zyz, Rotation};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn rotation(seed: u64) -> Rotation {
    Rotation::random(&mut ChaCha8Rng::seed_from_u64(seed))
}

fn vec3() -> impl Strategy<Value = Vector3<f64>> {
    (-1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64).prop_map(|(x, y, z)| Vector3::new(x, y, z))
}

fn points(n: std::ops::Range<usize>) -> impl Strategy<Value = Vec<Vector3<f64>>> {
    prop::collection::vec(vec3(), n)
}

fn pose(seed: u64, t: Vector3<f64>) -> PoseEstimate {
    PoseEstimate::new(rotation(seed), t, PoseSource::Fitted)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn rotation_group_laws(a in any::<u64>(), b in any::<u64>()) {
        let (p, q) = (rotation(a), rotation(b));
        prop_assert!(p.compose(&p.inverse()).geodesic_distance(&Rotation::identity()) < 1e-7);
        let d = p.geodesic_distance(&q);
        prop_assert!((d - q.geodesic_distance(&p)).abs() < 1e-12);
        prop_assert!((0.0..=std::f64::consts::PI + 1e-12).contains(&d));
        // left-invariance of the metric
        let r = rotation(a ^ b);
        prop_assert!((r.compose(&p).geodesic_distance(&r.compose(&q)) - d).abs() < 1e-7);
    }

    #[test]
    fn euler_round_trip(seed in any::<u64>()) {
        let r = rotation(seed);
        let back = rotation_from_euler_zyz(&r.to_euler_zyz()).unwrap();
        prop_assert!(back.geodesic_distance(&r) < 1e-7);
    }

    #[test]
    fn chamfer_is_symmetric(a in points(1..30), b in points(1..30)) {
        let (a, b) = (PointSet::new(a).unwrap(), PointSet::new(b).unwrap());
        prop_assert_eq!(chamfer(&a, &b), chamfer(&b, &a));
        prop_assert_eq!(chamfer(&a, &a), 0.0);
    }

    #[test]
    fn adds_never_exceeds_add(m in points(1..40), s1 in any::<u64>(), s2 in any::<u64>(), t in vec3()) {
        let model = PointSet::new(m).unwrap();
        let (g, p) = (pose(s1, Vector3::zeros()), pose(s2, t));
        let (add, adds) = (add_metric(&g, &p, &model), adds_metric(&g, &p, &model));
        prop_assert!(adds <= add + 1e-12);
        prop_assert!(add_metric(&g, &g, &model) == 0.0);
    }

    #[test]
    fn rigid_fit_recovers_pose(kps in points(4..12), seed in any::<u64>(), t in vec3()) {
        let kps = KeypointSet::new(kps);
        prop_assume!(kps.is_ok());
        let kps = kps.unwrap();
        let r = rotation(seed);
        let votes: Vec<VoteResult> = kps
            .transformed(&r, &t)
            .into_iter()
            .map(|location| VoteResult { location, inliers: 1, inlier_fraction: 1.0 })
            .collect();
        match fit_rigid(&kps, &votes, &vec![1.0; votes.len()]) {
            Ok(fit) => {
                prop_assert!(fit.rotation.geodesic_distance(&r) < 1e-6);
                prop_assert!((fit.translation - t).norm() < 1e-6);
                prop_assert!((fit.rotation.matrix().determinant() - 1.0).abs() < 1e-9);
            }
            Err(posekit::Error::DegenerateGeometry(_)) => {}
            Err(e) => prop_assert!(false, "unexpected error {e}"),
        }
    }

    #[test]
    fn matching_is_one_to_one_and_no_worse_than_greedy(
        nv in 1usize..12,
        ns in 1usize..12,
        costs in prop::collection::vec(0.0..10.0f64, 144),
        keep in prop::collection::vec(any::<bool>(), 144),
    ) {
        let cands: Vec<Candidate> = (0..nv * ns)
            .filter(|&i| keep[i])
            .map(|i| Candidate { vertex: i / ns, sample: i % ns, cost: costs[i] })
            .collect();
        let a = match_assign(&cands);
        let mut vs: Vec<usize> = a.pairs.iter().map(|p| p.0).collect();
        let mut ss: Vec<usize> = a.pairs.iter().map(|p| p.1).collect();
        vs.sort_unstable();
        vs.dedup();
        ss.sort_unstable();
        ss.dedup();
        prop_assert_eq!(vs.len(), a.pairs.len());
        prop_assert_eq!(ss.len(), a.pairs.len());

        let mut sorted = cands.clone();
        sorted.sort_by(|x, y| x.cost.partial_cmp(&y.cost).unwrap());
        let (mut used_v, mut used_s, mut greedy, mut count) = (vec![false; nv], vec![false; ns], 0.0, 0);
        for c in &sorted {
            if !used_v[c.vertex] && !used_s[c.sample] {
                used_v[c.vertex] = true;
                used_s[c.sample] = true;
                greedy += c.cost;
                count += 1;
            }
        }
        prop_assert!(a.pairs.len() >= count);
        if a.pairs.len() == count {
            prop_assert!(a.total_cost <= greedy + 1e-9);
        }
    }

    #[test]
    fn poisson_points_respect_mask_and_radius(seed in any::<u64>(), r in 1.5..6.0f64) {
        let mask = Mask::from_fn(60, 40, |x, y| (x as i64 - 30).pow(2) + (y as i64 - 20).pow(2) < 300);
        let pts = poisson_disc_sample(&mask, r, 10, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        prop_assert_eq!(pts.len(), 10);
        for (i, p) in pts.iter().enumerate() {
            prop_assert!(mask.contains(p[0], p[1]));
            for q in &pts[..i] {
                prop_assert!(((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)).sqrt() >= r / 32.0 - 1e-12);
            }
        }
    }

    #[test]
    fn backprojection_inverts_projection(u in 0.0..640.0f64, v in 0.0..480.0f64, d in 0.1..5.0f64) {
        let k = CameraIntrinsics::new(520.0, 510.0, 319.5, 239.5).unwrap();
        let p = backproject([u, v], d, &k).unwrap();
        let q = k.project(&p).unwrap();
        prop_assert!((q[0] - u).abs() < 1e-9 && (q[1] - v).abs() < 1e-9);
    }

    #[test]
    fn unpooling_adds_one_vertex_per_edge(pts in prop::collection::vec((0.0..100.0f64, 0.0..100.0f64), 3..25)) {
        let coords: Vec<[f64; 2]> = pts.iter().map(|&(x, y)| [x, y]).collect();
        let edges = delaunay_edges(&coords);
        prop_assume!(edges.is_ok());
        let edges = edges.unwrap();
        prop_assume!(!edges.is_empty());
        let n = coords.len();
        let verts = coords.iter().map(|c| Vector3::new(c[0], c[1], 1.0)).collect();
        let feats = DMatrix::from_fn(n, 2, |r, c| (r * 2 + c) as f64);
        let g = MeshGraph::new(verts, feats, edges.clone(), Some(coords));
        prop_assume!(g.is_ok());
        let g = g.unwrap();
        let u = graph_unpool(&g).unwrap();
        prop_assert_eq!(u.len(), n + edges.len());
        for (i, &(a, b)) in edges.iter().enumerate() {
            let mid = (g.features().row(a as usize) + g.features().row(b as usize)) * 0.5;
            prop_assert_eq!(u.features().row(n + i).into_owned(), mid);
        }
    }

    #[test]
    fn feature_map_blob_round_trip(w in 1usize..9, h in 1usize..9, c in 1usize..4, seed in any::<u64>()) {
        let vals: Vec<f64> = (0..w * h * c).map(|i| ((i as u64).wrapping_mul(seed | 1) % 1000) as f64 / 8.0).collect();
        let m = FeatureMap::new(w, h, c, 2, vals).unwrap();
        prop_assert_eq!(FeatureMap::from_blob(&m.to_blob()).unwrap(), m);
    }
}

#[test]
fn configs_round_trip_through_toml() {
    let c = RunConfig { b: 8, n: 6, pooling: 2, vote_corruption: 0.2, ..RunConfig::default() };
    assert_eq!(RunConfig::from_toml(&c.to_toml()).unwrap(), c);
    assert!(RunConfig::from_toml("b = 1").is_err());
    assert!(RunConfig::from_toml("n = 9\npooling = 2").is_err());
    assert!(RunConfig::from_toml("unknown = 3").is_err());

    let s = SceneSpec::random(3, 9);
    assert_eq!(SceneSpec::from_toml(&s.to_toml()).unwrap(), s);
}

#[test]
fn candidates_are_nearest_samples() {
    let verts = [[0.0, 0.0], [10.0, 0.0]];
    let samples = [[1.0, 0.0], [9.0, 0.0], [5.0, 0.0], [0.0, 2.0]];
    let c = candidate_edges(&verts, &samples, 2);
    let of = |v: usize| c.iter().filter(|x| x.vertex == v).map(|x| x.sample).collect::<Vec<_>>();
    assert_eq!(of(0), vec![0, 3]);
    assert_eq!(of(1), vec![1, 2]);
}
