use crate::mesh::Vec3;

pub fn closest_point_on_segment(a: &Vec3, b: &Vec3, q: &Vec3) -> Vec3 {
    let ab = b - a;
    let len2 = ab.norm_squared();
    if len2 == 0.0 {
        return *a;
    }
    let t = ((q - a).dot(&ab) / len2).clamp(0.0, 1.0);
    a + ab * t
}

pub fn point_to_segment_distance(a: &Vec3, b: &Vec3, q: &Vec3) -> f64 {
    (closest_point_on_segment(a, b, q) - q).norm()
}

/// Minimum over the polyline's segments of the exact point-to-segment distance.
pub fn point_to_curve_distance(curve: &[Vec3], q: &Vec3) -> f64 {
    match curve {
        [] => f64::INFINITY,
        [p] => (p - q).norm(),
        _ => curve
            .windows(2)
            .map(|w| point_to_segment_distance(&w[0], &w[1], q))
            .fold(f64::INFINITY, f64::min),
    }
}
