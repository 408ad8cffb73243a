use smoothcert_web::{bound_curve_points, landscape, partition_preview};

#[test]
fn bound_curve_has_one_row_per_even_dimension() {
    let pts = bound_curve_points(64, 0.999).unwrap();
    assert_eq!(pts.len(), 3 * 32);
    for row in pts.chunks_exact(3) {
        assert!(row[2] > row[1], "{row:?}");
    }
    assert!(bound_curve_points(1, 0.999).is_err());
    assert!(bound_curve_points(8, 1.0).is_err());
}

#[test]
fn landscape_minimum_matches_certified_radius() {
    for (sigma_l, sigma_r) in [(0.5, 0.5), (0.5, 1.0), (1.0, 0.5)] {
        let view = landscape((0.8, 0.1), (0.7, 0.2), sigma_l, sigma_r, 20_001).unwrap();
        let min = view.radii().into_iter().fold(f64::INFINITY, f64::min);
        assert!((min - view.certified_radius()).abs() < 1e-6, "{min} vs {}", view.certified_radius());
        assert!((view.tilde_p() - 0.9).abs() < 1e-12);
    }
    let equal = landscape((0.8, 0.1), (0.7, 0.2), 0.5, 0.5, 2001).unwrap();
    assert!((equal.best_x() - 0.45).abs() < 1e-3);
    assert!(landscape((0.8, 0.3), (0.7, 0.3), 0.5, 0.5, 10).is_err());
}

#[test]
fn preview_panels_have_expected_shapes() {
    let p = partition_preview(7, 10, 0.25, 3, false).unwrap();
    assert_eq!(p.count(), 6);
    let shapes: Vec<(usize, usize)> = (0..6).map(|i| (p.height(i), p.width(i))).collect();
    assert_eq!(shapes, vec![(8, 10), (8, 10), (8, 5), (8, 5), (8, 10), (8, 10)]);
    for i in 0..6 {
        assert_eq!(p.rgba(i).len(), 4 * p.height(i) * p.width(i));
    }
    assert_eq!(partition_preview(7, 10, 0.25, 3, false).unwrap().rgba(4), p.rgba(4));
    assert_ne!(partition_preview(7, 10, 0.25, 4, false).unwrap().rgba(4), p.rgba(4));
    assert!(partition_preview(0, 4, 0.1, 0, true).is_err());
}
