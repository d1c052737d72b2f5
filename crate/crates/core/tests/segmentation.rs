use poissonpath::feed_field::{orient, DirectionFlag, preferred_directions, smooth_directions, CutterSpec, DirectionField};
use poissonpath::segmentation::{eigenmap_embed, segment, similarity, DEFAULT_SIGMA};
use poissonpath::surfaces::{analytic_test_surface, height_field, TestSurface};
use poissonpath::{Error, TriMesh, Vec3};

fn two_region_field(m: &TriMesh, seam: f64) -> DirectionField {
    DirectionField {
        dirs: (0..m.n_faces())
            .map(|f| if m.face_centroid(f).x < seam { Vec3::x() } else { Vec3::y() })
            .collect(),
        flags: vec![DirectionFlag::WellDefined; m.n_faces()],
    }
}

/// True if face `f` shares a vertex with a face on the other side of `seam`.
fn touches_seam(m: &TriMesh, f: usize, seam: f64) -> bool {
    let side = m.face_centroid(f).x < seam;
    m.face(f)
        .iter()
        .flat_map(|&v| m.vertex_faces(v))
        .any(|&g| (m.face_centroid(g).x < seam) != side)
}

#[test]
fn perpendicular_regions_split_at_the_seam() {
    let (m, _) = analytic_test_surface(&TestSurface::plane(10.0, 10.0), 20).unwrap();
    let field = two_region_field(&m, 4.0);
    let seg = segment(&m, &field, DEFAULT_SIGMA, None).unwrap();
    assert_eq!(seg.k, 2);
    let left = seg.labels[(0..m.n_faces()).find(|&f| m.face_centroid(f).x < 1.0).unwrap()];
    for f in 0..m.n_faces() {
        let truth = m.face_centroid(f).x < 4.0;
        if (seg.labels[f] == left) != truth {
            assert!(touches_seam(&m, f, 4.0), "face {f} mislabelled away from the seam");
        }
    }
}

#[test]
fn fixed_k_is_honoured_on_clean_splits() {
    let (m, _) = analytic_test_surface(&TestSurface::plane(10.0, 10.0), 16).unwrap();
    let seg = segment(&m, &two_region_field(&m, 5.0), DEFAULT_SIGMA, Some(2)).unwrap();
    assert_eq!(seg.k, 2);
    let one = segment(&m, &two_region_field(&m, 5.0), DEFAULT_SIGMA, Some(1)).unwrap();
    assert_eq!(one.k, 1);
}

#[test]
fn smooth_fields_stay_one_patch() {
    let (m, c) = analytic_test_surface(&TestSurface::saddle(20.0, 10.0), 16).unwrap();
    let cutter = CutterSpec::flat(2.0, 30.0, 0.0);
    let field = orient(&preferred_directions(&m, &c, &cutter, 0.05).unwrap(), &m, None).unwrap();
    let a = segment(&m, &field, DEFAULT_SIGMA, None).unwrap();
    let b = segment(&m, &smooth_directions(&field, &m, 5, 0.5), DEFAULT_SIGMA, None).unwrap();
    assert_eq!(a.k, 1);
    assert_eq!(a.labels, b.labels);
}

#[test]
fn convex_concave_composite_splits() {
    // z = a y² everywhere, plus b x² for x > 0: the feed direction of largest
    // strip width turns from x to y across x = 0
    let (a, b) = (0.02, 0.05);
    let eval = move |x: f64, y: f64| {
        let (z, gx, hxx) = if x > 0.0 { (b * x * x, 2.0 * b * x, 2.0 * b) } else { (0.0, 0.0, 0.0) };
        (a * y * y + z, [gx, 2.0 * a * y], [[hxx, 0.0], [0.0, 2.0 * a]])
    };
    let (m, c) = height_field([-8.0, 8.0, -5.0, 5.0], 24, 15, &eval).unwrap();
    let cutter = CutterSpec::ball(5.0);
    let field = orient(&preferred_directions(&m, &c, &cutter, 0.05).unwrap(), &m, None).unwrap();
    let seg = segment(&m, &field, DEFAULT_SIGMA, None).unwrap();
    assert!(seg.k >= 2, "k = {}", seg.k);
    for f in 0..m.n_faces() {
        let g = (0..m.n_faces())
            .filter(|&g| (m.face_centroid(g).x < 0.0) == (m.face_centroid(f).x < 0.0))
            .find(|&g| m.face_centroid(g).x.abs() > 4.0)
            .unwrap();
        if m.face_centroid(f).x.abs() > 2.0 {
            assert_eq!(seg.labels[f], seg.labels[g]);
        }
    }
}

#[test]
fn strip_embeds_symmetrically() {
    let (m, _) = analytic_test_surface(&TestSurface::plane(20.0, 4.0), 10).unwrap();
    let u = eigenmap_embed(&m, &DirectionField::uniform(&m, &Vec3::x()), DEFAULT_SIGMA).unwrap();
    let mut s = u.clone();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    let scale = s[n - 1];
    for i in 0..n {
        assert!((s[i] + s[n - 1 - i]).abs() < 1e-6 * scale);
    }
    // the embedding orders faces along the strip
    let a = (0..m.n_faces()).min_by(|&f, &g| m.face_centroid(f).x.total_cmp(&m.face_centroid(g).x)).unwrap();
    let b = (0..m.n_faces()).max_by(|&f, &g| m.face_centroid(f).x.total_cmp(&m.face_centroid(g).x)).unwrap();
    assert!(u[a] * u[b] < 0.0);
}

#[test]
fn single_face_has_no_embedding() {
    let m = TriMesh::new(vec![Vec3::zeros(), Vec3::x(), Vec3::y()], vec![[0, 1, 2]]).unwrap();
    let r = eigenmap_embed(&m, &DirectionField::uniform(&m, &Vec3::x()), DEFAULT_SIGMA);
    assert!(matches!(r, Err(Error::EigenSolve(_))));
}

#[test]
fn similarity_is_symmetric_and_bounded() {
    let d1 = Vec3::new(0.6, 0.8, 0.0);
    let d2 = Vec3::new(-0.28, 0.96, 0.0);
    let s = similarity(&d1, &d2, DEFAULT_SIGMA);
    assert_eq!(s, similarity(&d2, &d1, DEFAULT_SIGMA));
    assert!(s > 0.0 && s < 1.0);
}
