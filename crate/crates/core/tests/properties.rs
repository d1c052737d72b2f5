use poissonpath::diff_ops::assemble_laplacian;
use poissonpath::feed_field::{min_edge_consistency, orient, transport_direction, DirectionField, DirectionFlag};
use poissonpath::oracle::{exact_scallop, model_scallop};
use poissonpath::paths::{extract_all, extract_iso_curve, schedule_levels, side_step};
use poissonpath::segmentation::{kmeans_1d, silhouette_1d, similarity, DEFAULT_SIGMA};
use poissonpath::surfaces::height_field;
use poissonpath::{TriMesh, Vec3};
use proptest::prelude::*;

/// Jittered bumpy grid: irregular triangles on a curved surface.
fn bumpy(seed: u64, n: usize) -> TriMesh {
    let (a, b) = ((seed % 7) as f64 * 0.01, (seed % 5) as f64 * 0.02);
    let eval = move |x: f64, y: f64| {
        (
            a * x * x - b * y * y + 0.1 * (x + seed as f64).sin(),
            [2.0 * a * x + 0.1 * (x + seed as f64).cos(), -2.0 * b * y],
            [[2.0 * a - 0.1 * (x + seed as f64).sin(), 0.0], [0.0, -2.0 * b]],
        )
    };
    let (m, _) = height_field([-3.0, 3.0, -2.0, 2.0], n, n, &eval).unwrap();
    // shear the grid a little so cotan weights are not all equal
    m.transformed(|p| Vec3::new(p.x + 0.15 * (p.y * (1.0 + seed as f64)).sin(), p.y, p.z)).unwrap()
}

fn tangent(m: &TriMesh, f: usize, angle: f64) -> Vec3 {
    let fr = m.frame(f);
    fr.t1 * angle.cos() + fr.t2 * angle.sin()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn stiffness_is_symmetric_with_zero_row_sums(seed in 0u64..1000, n in 3usize..9) {
        let m = bumpy(seed, n);
        let s = assemble_laplacian(&m).unwrap().stiffness;
        let mut rows = vec![0.0; m.n_vertices()];
        for (i, j, v) in s.matrix().triplet_iter() {
            prop_assert!((v - s.get(j, i)).abs() < 1e-12);
            rows[i] += v;
        }
        prop_assert!(rows.iter().all(|r| r.abs() < 1e-10));
    }

    #[test]
    fn transport_gives_unit_tangents(seed in 0u64..1000, angle in 0.0..std::f64::consts::TAU) {
        let m = bumpy(seed, 5);
        for e in m.edges() {
            if let [Some(f), Some(g)] = e.faces {
                let t = transport_direction(&m, f, g, &tangent(&m, f, angle)).unwrap();
                prop_assert!((t.norm() - 1.0).abs() < 1e-9);
                prop_assert!(t.dot(&m.face_normal(g)).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn orient_makes_every_edge_consistent(
        seed in 0u64..1000,
        flips in proptest::collection::vec(any::<bool>(), 50),
    ) {
        let m = bumpy(seed, 5);
        // a smooth field plus arbitrary sign flips
        let field = DirectionField {
            dirs: (0..m.n_faces())
                .map(|f| {
                    let c = m.face_centroid(f);
                    let d = tangent(&m, f, 0.3 * c.x);
                    if flips[f % flips.len()] { -d } else { d }
                })
                .collect(),
            flags: vec![DirectionFlag::WellDefined; m.n_faces()],
        };
        let o = orient(&field, &m, None).unwrap();
        prop_assert!(min_edge_consistency(&o, &m) > 0.0);
    }

    #[test]
    fn iso_points_lie_on_their_level(a in -1.0..1.0f64, b in -1.0..1.0f64, t in 0.05..0.95f64) {
        prop_assume!(a.abs() + b.abs() > 0.1);
        let m = bumpy(3, 8);
        let phi: Vec<f64> = m.vertices().iter().map(|p| a * p.x + b * p.y + 0.05 * p.x * p.y).collect();
        let (lo, hi) = phi.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
        let level = lo + t * (hi - lo);
        for path in extract_iso_curve(&m, &phi, level).unwrap() {
            for q in &path.points {
                prop_assert!((m.interpolate(&phi, q) - level).abs() < 1e-9 * (hi - lo));
                prop_assert!(q.is_valid());
            }
        }
    }

    #[test]
    fn schedules_increase_and_cover_the_range(slope in 0.05..0.5f64, h in 0.01..0.2f64) {
        let (m, c) = height_field([0.0, 10.0, 0.0, 4.0], 20, 8, &|_, _| (0.0, [0.0; 2], [[0.0; 2]; 2])).unwrap();
        let phi: Vec<f64> = m.vertices().iter().map(|p| slope * p.x).collect();
        let s = schedule_levels(&m, &phi, &c, &poissonpath::feed_field::CutterSpec::ball(5.0), h, 16).unwrap();
        prop_assert!(s.levels.windows(2).all(|w| w[1] > w[0]));
        prop_assert!(s.levels[0] > 0.0 && s.levels[s.len() - 1] < 10.0 * slope);
        prop_assert_eq!(extract_all(&m, &phi, &s).unwrap().len(), s.len());
    }

    #[test]
    fn side_step_scales_with_root_h(k in -0.1..0.3f64, r1 in 1.0..10.0f64, r2 in 1.0..10.0f64, h in 1e-3..0.5f64) {
        let a = side_step(k, r1, r2, h).unwrap();
        let b = side_step(k, r1, r2, 4.0 * h).unwrap();
        prop_assert!((b / a - 2.0).abs() < 1e-12);
        let back = model_scallop(k, r1, r2, a).unwrap();
        prop_assert!((back - h).abs() < 1e-12 * h.max(1.0));
    }

    #[test]
    fn exact_scallop_grows_with_side_step(k in -0.05..0.2f64, r in 1.0..8.0f64, s in 0.05..0.8f64) {
        let a = exact_scallop(k, r, r, s).unwrap();
        let b = exact_scallop(k, r, r, 1.1 * s).unwrap();
        prop_assert!(a > 0.0 && b > a);
    }

    #[test]
    fn kmeans_labels_follow_the_centres(
        points in proptest::collection::vec(-10.0..10.0f64, 4..60),
        k in 1usize..4,
    ) {
        let labels = kmeans_1d(&points, k).unwrap();
        let used = labels.iter().max().unwrap() + 1;
        prop_assert!(used <= k);
        let centre = |l: usize| {
            let v: Vec<f64> = points.iter().zip(&labels).filter(|(_, &x)| x == l).map(|(p, _)| *p).collect();
            v.iter().sum::<f64>() / v.len().max(1) as f64
        };
        for l in 1..used {
            prop_assert!(centre(l) >= centre(l - 1));
        }
        let s = silhouette_1d(&points, &labels, used);
        prop_assert!((-1.0..=1.0).contains(&s));
    }

    #[test]
    fn similarity_is_symmetric_and_bounded(a in 0.0..std::f64::consts::TAU, b in 0.0..std::f64::consts::TAU) {
        let d1 = Vec3::new(a.cos(), a.sin(), 0.0);
        let d2 = Vec3::new(b.cos(), b.sin(), 0.0);
        let s = similarity(&d1, &d2, DEFAULT_SIGMA);
        prop_assert_eq!(s, similarity(&d2, &d1, DEFAULT_SIGMA));
        prop_assert!(s > 0.0 && s <= 1.0);
    }
}
