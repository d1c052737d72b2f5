use poissonpath::feed_field::{
    min_edge_consistency, orient, preferred_directions, smooth_directions, strip_width, transport_direction,
    CutterSpec, DirectionFlag,
};
use poissonpath::surfaces::{analytic_test_surface, TestSurface};
use poissonpath::Vec3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn randomly_flipped_cylinder_is_reoriented() {
    let (m, c) = analytic_test_surface(&TestSurface::cylinder(5.0, 20.0), 20).unwrap();
    let mut field = preferred_directions(&m, &c, &CutterSpec::ball(5.0), 0.05).unwrap();
    assert_eq!(field.n_singular(), 0);
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    for d in &mut field.dirs {
        if rng.random_bool(0.5) {
            *d = -*d;
        }
    }
    assert!(min_edge_consistency(&field, &m) < 0.0);
    let o = orient(&field, &m, None).unwrap();
    assert!(min_edge_consistency(&o, &m) > 0.0);
    for (a, b) in o.dirs.iter().zip(&field.dirs) {
        assert!((a - b).norm() < 1e-15 || (a + b).norm() < 1e-15);
    }
}

#[test]
fn orient_is_idempotent() {
    let (m, c) = analytic_test_surface(&TestSurface::saddle(20.0, 10.0), 12).unwrap();
    let once = orient(&preferred_directions(&m, &c, &CutterSpec::flat(2.0, 30.0, 0.0), 0.1).unwrap(), &m, None).unwrap();
    let twice = orient(&once, &m, None).unwrap();
    assert_eq!(once, twice);
}

#[test]
fn saddle_directions_maximise_strip_width() {
    let (m, c) = analytic_test_surface(&TestSurface::saddle(20.0, 10.0), 10).unwrap();
    for cutter in [CutterSpec::ball(5.0), CutterSpec::flat(2.0, 30.0, 0.0)] {
        let field = preferred_directions(&m, &c, &cutter, 0.05).unwrap();
        for f in 0..m.n_faces() {
            assert_eq!(field.flags[f], DirectionFlag::WellDefined);
            let fr = m.frame(f);
            let best = (0..180)
                .map(|deg| {
                    let t = (deg as f64).to_radians();
                    strip_width(&cutter, f, &(fr.t1 * t.cos() + fr.t2 * t.sin()), &c, 0.05).unwrap()
                })
                .fold(0.0, f64::max);
            let ours = strip_width(&cutter, f, &field.dirs[f], &c, 0.05).unwrap();
            assert!(ours >= best * (1.0 - 1e-9), "face {f}: {ours} < {best}");
        }
    }
}

#[test]
fn flipping_does_not_change_strip_width() {
    let (m, c) = analytic_test_surface(&TestSurface::saddle(20.0, 10.0), 6).unwrap();
    let cutter = CutterSpec::flat(2.0, 30.0, 0.0);
    for f in 0..m.n_faces() {
        let d = m.frame(f).t1 * 0.6 + m.frame(f).t2 * 0.8;
        let a = strip_width(&cutter, f, &d, &c, 0.1).unwrap();
        let b = strip_width(&cutter, f, &-d, &c, 0.1).unwrap();
        assert_eq!(a, b);
    }
}

#[test]
fn transport_keeps_unit_tangents() {
    let (m, _) = analytic_test_surface(&TestSurface::cylinder(2.0, 3.0), 8).unwrap();
    for e in m.edges() {
        if let [Some(f), Some(g)] = e.faces {
            let d = (m.frame(f).t1 + m.frame(f).t2 * 0.3).normalize();
            let t = transport_direction(&m, f, g, &d).unwrap();
            assert!((t.norm() - 1.0).abs() < 1e-9);
            assert!(t.dot(&m.face_normal(g)).abs() < 1e-9);
        }
    }
}

#[test]
fn smoothing_keeps_a_uniform_plane_field() {
    let (m, _) = analytic_test_surface(&TestSurface::plane(4.0, 4.0), 6).unwrap();
    let f = poissonpath::feed_field::DirectionField::uniform(&m, &Vec3::new(1.0, 1.0, 0.0));
    let s = smooth_directions(&f, &m, 10, 0.5);
    for (a, b) in s.dirs.iter().zip(&f.dirs) {
        assert!((a - b).norm() < 1e-12);
    }
}
