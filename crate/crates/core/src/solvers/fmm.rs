//! Fast marching on triangle meshes.
//!
//! The per-triangle update unfolds the triangle and reconstructs the virtual
//! source that is consistent with the two known distances; the candidate is the
//! distance from that source when the straight ray reaches the target through
//! the known edge, otherwise the Dijkstra-style edge update is used. In the
//! plane this reproduces point-source distances exactly.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use smallvec::SmallVec;

use super::SolverError;
use crate::mesh::{TriangleMesh, Vec3};
use crate::propagation::Key;

/// Candidate root distance at `c` from known root distances `da` at `a` and `db` at `b`.
pub fn fmm_update(a: &Vec3, da: f64, b: &Vec3, db: f64, c: &Vec3) -> f64 {
    let lb = (c - a).norm();
    let la = (c - b).norm();
    let fallback = (da + lb).min(db + la);
    let lc = (b - a).norm();
    let xc = (lb * lb + lc * lc - la * la) / (2.0 * lc);
    let yc = (lb * lb - xc * xc).max(0.0).sqrt();
    let xs = (da * da - db * db + lc * lc) / (2.0 * lc);
    let ys2 = da * da - xs * xs;
    if ys2 < 0.0 || !(yc > 0.0) {
        return fallback;
    }
    let ys = -ys2.sqrt();
    let t = -ys / (yc - ys);
    let x = xs + t * (xc - xs);
    if !(0.0..=lc).contains(&x) {
        return fallback;
    }
    ((xc - xs).powi(2) + (yc - ys).powi(2)).sqrt().min(fallback)
}

/// Single-field fast marching from `(vertex, distance)` seeds over the whole mesh.
pub fn fast_marching(mesh: &TriangleMesh, seeds: &[(usize, f64)]) -> Vec<f64> {
    let n = mesh.num_vertices();
    let mut dist = vec![f64::INFINITY; n];
    let mut done = vec![false; n];
    let mut heap = BinaryHeap::new();
    for &(v, d) in seeds {
        if d < dist[v] {
            dist[v] = d;
            heap.push(Reverse((Key(d), v)));
        }
    }
    while let Some(Reverse((Key(d), v))) = heap.pop() {
        if done[v] || d > dist[v] {
            continue;
        }
        done[v] = true;
        for &f in mesh.vertex_faces(v) {
            let tri = mesh.face(f);
            for &u in &tri {
                if done[u] {
                    continue;
                }
                let others: SmallVec<[usize; 2]> =
                    tri.iter().copied().filter(|&w| w != u && done[w]).collect();
                let cand = match others.as_slice() {
                    [a, b] => fmm_update(
                        &mesh.vertex(*a),
                        dist[*a],
                        &mesh.vertex(*b),
                        dist[*b],
                        &mesh.vertex(u),
                    ),
                    _ => d + (mesh.vertex(u) - mesh.vertex(v)).norm(),
                }
                .max(d);
                if cand < dist[u] {
                    dist[u] = cand;
                    heap.push(Reverse((Key(cand), u)));
                }
            }
        }
    }
    dist
}

/// Root distances stored per vertex for every site that swept over it.
#[derive(Debug, Clone, Default)]
pub struct FmmField {
    per_vertex: Vec<SmallVec<[(u32, f64); 4]>>,
}

impl FmmField {
    pub fn new(num_vertices: usize) -> Self {
        Self {
            per_vertex: vec![SmallVec::new(); num_vertices],
        }
    }

    pub fn get(&self, site: usize, vertex: usize) -> Option<f64> {
        self.per_vertex[vertex]
            .iter()
            .find(|(s, _)| *s as usize == site)
            .map(|&(_, d)| d)
    }

    pub fn distance(&self, site: usize, vertex: usize) -> Result<f64, SolverError> {
        self.get(site, vertex)
            .ok_or(SolverError::NotYetSwept { site, vertex })
    }

    pub(crate) fn set(&mut self, site: usize, vertex: usize, d: f64) {
        let slot = &mut self.per_vertex[vertex];
        match slot.iter_mut().find(|(s, _)| *s as usize == site) {
            Some(e) => e.1 = d,
            None => slot.push((site as u32, d)),
        }
    }

    /// Number of sites that reached `vertex`.
    pub fn sites_at(&self, vertex: usize) -> usize {
        self.per_vertex[vertex].len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn point_source_is_exact_in_plane() {
        let a = Vec3::new(0.0, 0.0, 0.0);
        let b = Vec3::new(1.0, 0.0, 0.0);
        let c = Vec3::new(0.0, 1.0, 0.0);
        let s = Vec3::new(0.5, -5.0, 0.0);
        let da = (a - s).norm();
        let db = (b - s).norm();
        assert_eq!(da, db);
        let d = fmm_update(&a, da, &b, db, &c);
        assert!((d - (c - s).norm()).abs() < 1e-9);
    }

    #[test]
    fn zero_distance_at_neighbor_is_bounded_by_edge() {
        let a = Vec3::new(0.0, 0.0, 0.0);
        let b = Vec3::new(1.0, 0.0, 0.0);
        let c = Vec3::new(0.4, 0.8, 0.0);
        let d = fmm_update(&a, 0.0, &b, 1.0, &c);
        assert!(d <= (c - a).norm() + 1e-15);
    }

    #[test]
    fn obtuse_target_is_exact_for_point_source() {
        let a = Vec3::new(0.0, 0.0, 0.0);
        let b = Vec3::new(2.0, 0.0, 0.0);
        let c = Vec3::new(1.0, 0.2, 0.0);
        let s = Vec3::new(0.7, -0.9, 0.0);
        let d = fmm_update(&a, (a - s).norm(), &b, (b - s).norm(), &c);
        assert!((d - (c - s).norm()).abs() < 1e-12);
    }

    #[test]
    fn ray_missing_the_edge_falls_back() {
        let a = Vec3::new(0.0, 0.0, 0.0);
        let b = Vec3::new(1.0, 0.0, 0.0);
        let c = Vec3::new(1.5, 0.5, 0.0);
        let s = Vec3::new(-1.0, -0.2, 0.0);
        let (da, db) = ((a - s).norm(), (b - s).norm());
        let d = fmm_update(&a, da, &b, db, &c);
        assert_eq!(d, (da + (c - a).norm()).min(db + (c - b).norm()));
    }
}
