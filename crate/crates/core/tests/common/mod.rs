//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

use surface_voronoi::mesh::{FaceLocator, TriangleMesh, Vec2, Vec3};
use surface_voronoi::{SiteSet, SurfaceVoronoiDiagram};

/// Planar power distance `|x - p|^2 - w`.
pub fn power(x: &Vec2, p: &Vec2, w: f64) -> f64 {
    (x - p).norm_squared() - w
}

/// Nearest site under the power distance and the gap to the runner-up.
pub fn argmin_with_margin(x: &Vec2, pts: &[Vec2], w: &[f64]) -> (usize, f64) {
    let mut best = (usize::MAX, f64::INFINITY);
    let mut second = f64::INFINITY;
    for (i, p) in pts.iter().enumerate() {
        let d = power(x, p, w[i]);
        if d < best.1 {
            second = best.1;
            best = (i, d);
        } else if d < second {
            second = d;
        }
    }
    (best.0, second - best.1)
}

pub fn area(poly: &[Vec2]) -> f64 {
    let n = poly.len();
    let mut s = 0.0;
    for i in 0..n {
        let (a, b) = (poly[i], poly[(i + 1) % n]);
        s += a.x * b.y - a.y * b.x;
    }
    0.5 * s
}

/// Sutherland-Hodgman clip of a convex polygon to `n . x <= c`.
pub fn clip(poly: &[Vec2], n: Vec2, c: f64) -> Vec<Vec2> {
    let mut out = Vec::new();
    for i in 0..poly.len() {
        let a = poly[i];
        let b = poly[(i + 1) % poly.len()];
        let (fa, fb) = (n.dot(&a) - c, n.dot(&b) - c);
        if fa <= 0.0 {
            out.push(a);
        }
        if (fa < 0.0 && fb > 0.0) || (fa > 0.0 && fb < 0.0) {
            out.push(a + (b - a) * (fa / (fa - fb)));
        }
    }
    out
}

/// Area of the diagram's cell fragments lying outside the exact planar power
/// cell of their site, relative to the total area (mesh in the z = 0 plane).
pub fn planar_disagreement(vd: &SurfaceVoronoiDiagram, pts: &[Vec2], w: &[f64]) -> f64 {
    let mut wrong = 0.0;
    let mut total = 0.0;
    for (s, frags) in vd.cells.iter().enumerate() {
        for frag in frags {
            let mut poly: Vec<Vec2> = frag.polygon.iter().map(|p| Vec2::new(p.x, p.y)).collect();
            if area(&poly) < 0.0 {
                poly.reverse();
            }
            let a = area(&poly);
            total += a;
            let mut cell = poly;
            for t in 0..pts.len() {
                if t != s && cell.len() >= 3 {
                    let n = (pts[t] - pts[s]) * 2.0;
                    let c = pts[t].norm_squared() - pts[s].norm_squared() - w[t] + w[s];
                    cell = clip(&cell, n, c);
                }
            }
            let kept = if cell.len() >= 3 { area(&cell) } else { 0.0 };
            wrong += (a - kept).max(0.0);
        }
    }
    wrong / total
}

/// Sample-based check: number of random points whose diagram label differs
/// from the argmin oracle, ignoring points within `tie` of a bisector.
pub fn sample_mismatches(
    mesh: &TriangleMesh,
    vd: &SurfaceVoronoiDiagram,
    pts: &[Vec2],
    w: &[f64],
    samples: &[Vec2],
    tie: f64,
) -> usize {
    let loc = FaceLocator::new(mesh);
    samples
        .iter()
        .filter(|x| {
            let (want, margin) = argmin_with_margin(x, pts, w);
            if margin <= tie {
                return false;
            }
            let hit = loc.closest(&Vec3::new(x.x, x.y, 0.0));
            vd.label_at(hit.face, hit.bary) != Some(want)
        })
        .count()
}

/// Site positions projected to the z = 0 plane.
pub fn planar_sites(sites: &SiteSet) -> Vec<Vec2> {
    sites.iter().map(|s| Vec2::new(s.anchor.x, s.anchor.y)).collect()
}

/// Minimal elements (strict componentwise order) of all sites' corner
/// distance triples on every face, computed without any propagation.
pub fn exhaustive_survivors(mesh: &TriangleMesh, sites: &SiteSet, weighted: bool) -> Vec<Vec<usize>> {
    (0..mesh.num_faces())
        .map(|f| {
            let tri = mesh.face(f);
            let triples: Vec<[f64; 3]> = sites
                .iter()
                .map(|s| {
                    let w = if weighted { s.weight } else { 0.0 };
                    tri.map(|v| {
                        let d = mesh.vertex(v) - s.anchor;
                        d.x * d.x + d.y * d.y + d.z * d.z - w
                    })
                })
                .collect();
            let mut keep: Vec<usize> = (0..triples.len())
                .filter(|&i| {
                    !triples
                        .iter()
                        .any(|o| o[0] < triples[i][0] && o[1] < triples[i][1] && o[2] < triples[i][2])
                })
                .collect();
            keep.sort_unstable();
            keep
        })
        .collect()
}
