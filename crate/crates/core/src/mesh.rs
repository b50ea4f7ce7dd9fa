//! Indexed triangle meshes with edge/vertex adjacency and rigid per-face
//! unfolding into a 2D frame.
//!
//! A [`TriangleMesh`] is validated on construction: indices must be in range,
//! no face may repeat a vertex or have (near) zero area, and every undirected
//! edge must be shared by at most two faces. Boundary edges are allowed.

use std::collections::HashMap;

use nalgebra::{Vector2, Vector3};
use smallvec::SmallVec;
use thiserror::Error;

pub type Vec3 = Vector3<f64>;
pub type Vec2 = Vector2<f64>;

/// Relative area threshold: a face is degenerate when its area is at most
/// `AREA_EPS * bbox_diag^2`.
pub const AREA_EPS: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum MeshError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("face {face} references vertex {index}, but the mesh has {count} vertices")]
    InvalidIndex {
        face: usize,
        index: usize,
        count: usize,
    },
    #[error("face {face} is degenerate (repeated vertex or zero area)")]
    DegenerateFace { face: usize },
    #[error("edge ({a}, {b}) is shared by {count} faces")]
    NonManifoldEdge { a: usize, b: usize, count: usize },
    #[error("mesh has no faces")]
    Empty,
}

/// Undirected edge key with the smaller vertex index first.
#[inline]
pub fn edge_key(a: usize, b: usize) -> (usize, usize) {
    if a < b {
        (a, b)
    } else {
        (b, a)
    }
}

#[derive(Debug, Clone)]
pub struct TriangleMesh {
    vertices: Vec<Vec3>,
    faces: Vec<[usize; 3]>,
    edge_map: HashMap<(usize, usize), SmallVec<[usize; 2]>>,
    vertex_faces: Vec<Vec<usize>>,
    // neighbor across local edge k, i.e. (v_k, v_{k+1})
    face_neighbors: Vec<[Option<usize>; 3]>,
    bbox_min: Vec3,
    bbox_max: Vec3,
    bbox_diag: f64,
}

impl TriangleMesh {
    pub fn new(vertices: Vec<Vec3>, faces: Vec<[usize; 3]>) -> Result<Self, MeshError> {
        if faces.is_empty() {
            return Err(MeshError::Empty);
        }
        let count = vertices.len();
        for (fi, f) in faces.iter().enumerate() {
            for &index in f {
                if index >= count {
                    return Err(MeshError::InvalidIndex {
                        face: fi,
                        index,
                        count,
                    });
                }
            }
            if f[0] == f[1] || f[1] == f[2] || f[0] == f[2] {
                return Err(MeshError::DegenerateFace { face: fi });
            }
        }

        let mut bbox_min = Vec3::repeat(f64::INFINITY);
        let mut bbox_max = Vec3::repeat(f64::NEG_INFINITY);
        for v in &vertices {
            bbox_min = bbox_min.inf(v);
            bbox_max = bbox_max.sup(v);
        }
        let bbox_diag = (bbox_max - bbox_min).norm();
        let area_floor = AREA_EPS * bbox_diag * bbox_diag;
        for (fi, f) in faces.iter().enumerate() {
            let area = triangle_area(&vertices[f[0]], &vertices[f[1]], &vertices[f[2]]);
            if !(area > area_floor) {
                return Err(MeshError::DegenerateFace { face: fi });
            }
        }

        let mut edge_map: HashMap<(usize, usize), SmallVec<[usize; 2]>> =
            HashMap::with_capacity(faces.len() * 3 / 2 + 1);
        let mut vertex_faces = vec![Vec::new(); count];
        for (fi, f) in faces.iter().enumerate() {
            for k in 0..3 {
                let key = edge_key(f[k], f[(k + 1) % 3]);
                let entry = edge_map.entry(key).or_default();
                entry.push(fi);
                if entry.len() > 2 {
                    return Err(MeshError::NonManifoldEdge {
                        a: key.0,
                        b: key.1,
                        count: entry.len(),
                    });
                }
                vertex_faces[f[k]].push(fi);
            }
        }

        let face_neighbors = faces
            .iter()
            .enumerate()
            .map(|(fi, f)| {
                let mut n = [None; 3];
                for (k, slot) in n.iter_mut().enumerate() {
                    let key = edge_key(f[k], f[(k + 1) % 3]);
                    *slot = edge_map[&key].iter().copied().find(|&g| g != fi);
                }
                n
            })
            .collect();

        Ok(Self {
            vertices,
            faces,
            edge_map,
            vertex_faces,
            face_neighbors,
            bbox_min,
            bbox_max,
            bbox_diag,
        })
    }

    #[inline]
    pub fn vertices(&self) -> &[Vec3] {
        &self.vertices
    }

    #[inline]
    pub fn faces(&self) -> &[[usize; 3]] {
        &self.faces
    }

    #[inline]
    pub fn vertex(&self, v: usize) -> Vec3 {
        self.vertices[v]
    }

    #[inline]
    pub fn face(&self, f: usize) -> [usize; 3] {
        self.faces[f]
    }

    #[inline]
    pub fn num_vertices(&self) -> usize {
        self.vertices.len()
    }

    #[inline]
    pub fn num_faces(&self) -> usize {
        self.faces.len()
    }

    #[inline]
    pub fn bbox_diag(&self) -> f64 {
        self.bbox_diag
    }

    pub fn bbox(&self) -> (Vec3, Vec3) {
        (self.bbox_min, self.bbox_max)
    }

    /// Faces incident to the undirected edge `(a, b)`; empty if it is not an edge.
    pub fn edge_faces(&self, a: usize, b: usize) -> &[usize] {
        self.edge_map
            .get(&edge_key(a, b))
            .map(|s| s.as_slice())
            .unwrap_or(&[])
    }

    pub fn is_edge(&self, a: usize, b: usize) -> bool {
        self.edge_map.contains_key(&edge_key(a, b))
    }

    pub fn is_boundary_edge(&self, a: usize, b: usize) -> bool {
        self.edge_faces(a, b).len() == 1
    }

    pub fn num_edges(&self) -> usize {
        self.edge_map.len()
    }

    /// All undirected edges, sorted.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut e: Vec<_> = self.edge_map.keys().copied().collect();
        e.sort_unstable();
        e
    }

    #[inline]
    pub fn vertex_faces(&self, v: usize) -> &[usize] {
        &self.vertex_faces[v]
    }

    /// Face across local edge `k` (from corner `k` to corner `k+1`) of `f`.
    #[inline]
    pub fn face_neighbor(&self, f: usize, k: usize) -> Option<usize> {
        self.face_neighbors[f][k]
    }

    #[inline]
    pub fn face_neighbors(&self, f: usize) -> [Option<usize>; 3] {
        self.face_neighbors[f]
    }

    pub fn face_corners(&self, f: usize) -> [Vec3; 3] {
        let [a, b, c] = self.faces[f];
        [self.vertices[a], self.vertices[b], self.vertices[c]]
    }

    pub fn face_area(&self, f: usize) -> f64 {
        let [a, b, c] = self.face_corners(f);
        triangle_area(&a, &b, &c)
    }

    pub fn total_area(&self) -> f64 {
        (0..self.num_faces()).map(|f| self.face_area(f)).sum()
    }

    pub fn face_normal(&self, f: usize) -> Vec3 {
        let [a, b, c] = self.face_corners(f);
        (b - a).cross(&(c - a)).normalize()
    }

    pub fn face_centroid(&self, f: usize) -> Vec3 {
        let [a, b, c] = self.face_corners(f);
        (a + b + c) / 3.0
    }

    pub fn mean_edge_length(&self) -> f64 {
        let total: f64 = self
            .edge_map
            .keys()
            .map(|&(a, b)| (self.vertices[a] - self.vertices[b]).norm())
            .sum();
        total / self.edge_map.len() as f64
    }

    /// Local corner index of vertex `v` in face `f`.
    pub fn corner_of(&self, f: usize, v: usize) -> Option<usize> {
        self.faces[f].iter().position(|&x| x == v)
    }

    pub fn point_from_barycentric(&self, f: usize, bary: [f64; 3]) -> Vec3 {
        let [a, b, c] = self.face_corners(f);
        a * bary[0] + b * bary[1] + c * bary[2]
    }

    /// Rigidly places face `f` in the plane: `v1` at the origin, `v2` on the
    /// positive x axis, `v3` in the upper half plane.
    pub fn unfold(&self, f: usize) -> Result<UnfoldFrame, MeshError> {
        let corners = self.face_corners(f);
        UnfoldFrame::canonical(f, corners).ok_or(MeshError::DegenerateFace { face: f })
    }

    /// True when every vertex lies within `tol * bbox_diag` of one plane.
    pub fn planar_basis(&self) -> Option<PlaneBasis> {
        let n = self.face_normal(0);
        let origin = self.vertices[self.faces[0][0]];
        let tol = 1e-9 * self.bbox_diag;
        if self
            .vertices
            .iter()
            .any(|v| (v - origin).dot(&n).abs() > tol)
        {
            return None;
        }
        let e1 = (self.vertices[self.faces[0][1]] - origin).normalize();
        let e2 = n.cross(&e1);
        Some(PlaneBasis { origin, e1, e2 })
    }
}

/// Orthonormal 2D coordinate system on a plane in space.
#[derive(Debug, Clone, Copy)]
pub struct PlaneBasis {
    pub origin: Vec3,
    pub e1: Vec3,
    pub e2: Vec3,
}

impl PlaneBasis {
    pub fn project(&self, p: &Vec3) -> Vec2 {
        let d = p - self.origin;
        Vec2::new(d.dot(&self.e1), d.dot(&self.e2))
    }

    pub fn lift(&self, p: &Vec2) -> Vec3 {
        self.origin + self.e1 * p.x + self.e2 * p.y
    }
}

pub fn triangle_area(a: &Vec3, b: &Vec3, c: &Vec3) -> f64 {
    0.5 * (b - a).cross(&(c - a)).norm()
}

/// Isometric 2D placement of one face.
///
/// The canonical convention (see [`TriangleMesh::unfold`]) puts `v1` at
/// `(0, 0)`, `v2` at `(|v1 v2|, 0)` and `v3` above the x axis. Any rigid motion
/// of a frame (see [`UnfoldFrame::transformed`]) is also a valid frame for the
/// envelope computation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UnfoldFrame {
    face: usize,
    points: [Vec2; 3],
    corners: [Vec3; 3],
}

impl UnfoldFrame {
    fn canonical(face: usize, corners: [Vec3; 3]) -> Option<Self> {
        let e12 = corners[1] - corners[0];
        let e13 = corners[2] - corners[0];
        let l12 = e12.norm();
        if !(l12 > 0.0) {
            return None;
        }
        let x3 = e13.dot(&e12) / l12;
        let y3 = e12.cross(&e13).norm() / l12;
        if !(y3 > 0.0) {
            return None;
        }
        Some(Self {
            face,
            points: [Vec2::zeros(), Vec2::new(l12, 0.0), Vec2::new(x3, y3)],
            corners,
        })
    }

    /// Alternate convention: pivot at `v2` with `v3` on the positive x axis,
    /// then rotate by `angle` and translate by `offset`.
    pub fn alternate(mesh: &TriangleMesh, face: usize, angle: f64, offset: Vec2) -> Option<Self> {
        let c = mesh.face_corners(face);
        let rotated = Self::canonical(face, [c[1], c[2], c[0]])?;
        let points = [rotated.points[2], rotated.points[0], rotated.points[1]];
        Some(
            Self {
                face,
                points,
                corners: c,
            }
            .transformed(angle, offset),
        )
    }

    /// Applies a rotation by `angle` followed by a translation.
    pub fn transformed(&self, angle: f64, offset: Vec2) -> Self {
        let (s, c) = angle.sin_cos();
        let points = self
            .points
            .map(|p| Vec2::new(c * p.x - s * p.y, s * p.x + c * p.y) + offset);
        Self { points, ..*self }
    }

    #[inline]
    pub fn face(&self) -> usize {
        self.face
    }

    #[inline]
    pub fn points(&self) -> &[Vec2; 3] {
        &self.points
    }

    #[inline]
    pub fn point(&self, k: usize) -> Vec2 {
        self.points[k]
    }

    #[inline]
    pub fn corners(&self) -> &[Vec3; 3] {
        &self.corners
    }

    /// Twice the signed area of the 2D triangle (positive when counterclockwise).
    pub fn det(&self) -> f64 {
        let [a, b, c] = self.points;
        (b - a).perp(&(c - a))
    }

    pub fn area(&self) -> f64 {
        0.5 * self.det().abs()
    }

    /// Corners in counterclockwise order.
    pub fn ccw_points(&self) -> [Vec2; 3] {
        let [a, b, c] = self.points;
        if self.det() >= 0.0 {
            [a, b, c]
        } else {
            [a, c, b]
        }
    }

    pub fn barycentric(&self, p: &Vec2) -> [f64; 3] {
        let [a, b, c] = self.points;
        let det = self.det();
        let l1 = (b - p).perp(&(c - p)) / det;
        let l2 = (c - p).perp(&(a - p)) / det;
        [l1, l2, 1.0 - l1 - l2]
    }

    /// Maps a frame point back onto the face in 3D.
    pub fn to_surface(&self, p: &Vec2) -> Vec3 {
        let l = self.barycentric(p);
        self.corners[0] * l[0] + self.corners[1] * l[1] + self.corners[2] * l[2]
    }

    /// Projects a 3D point onto the face plane and expresses it in frame coordinates.
    pub fn to_frame(&self, p: &Vec3) -> Vec2 {
        let l = barycentric_3d(p, &self.corners);
        self.points[0] * l[0] + self.points[1] * l[1] + self.points[2] * l[2]
    }
}

/// Barycentric coordinates of the orthogonal projection of `p` onto the plane of `tri`.
pub fn barycentric_3d(p: &Vec3, tri: &[Vec3; 3]) -> [f64; 3] {
    let v0 = tri[1] - tri[0];
    let v1 = tri[2] - tri[0];
    let v2 = p - tri[0];
    let d00 = v0.dot(&v0);
    let d01 = v0.dot(&v1);
    let d11 = v1.dot(&v1);
    let d20 = v2.dot(&v0);
    let d21 = v2.dot(&v1);
    let denom = d00 * d11 - d01 * d01;
    let b1 = (d11 * d20 - d01 * d21) / denom;
    let b2 = (d00 * d21 - d01 * d20) / denom;
    [1.0 - b1 - b2, b1, b2]
}

/// Closest point on triangle `(a, b, c)` to `p`, with its barycentric coordinates.
pub fn closest_point_on_triangle(p: &Vec3, a: &Vec3, b: &Vec3, c: &Vec3) -> (Vec3, [f64; 3]) {
    let ab = b - a;
    let ac = c - a;
    let ap = p - a;
    let d1 = ab.dot(&ap);
    let d2 = ac.dot(&ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return (*a, [1.0, 0.0, 0.0]);
    }
    let bp = p - b;
    let d3 = ab.dot(&bp);
    let d4 = ac.dot(&bp);
    if d3 >= 0.0 && d4 <= d3 {
        return (*b, [0.0, 1.0, 0.0]);
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        let v = d1 / (d1 - d3);
        return (a + ab * v, [1.0 - v, v, 0.0]);
    }
    let cp = p - c;
    let d5 = ab.dot(&cp);
    let d6 = ac.dot(&cp);
    if d6 >= 0.0 && d5 <= d6 {
        return (*c, [0.0, 0.0, 1.0]);
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        let w = d2 / (d2 - d6);
        return (a + ac * w, [1.0 - w, 0.0, w]);
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        let w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        return (b + (c - b) * w, [0.0, 1.0 - w, w]);
    }
    let denom = 1.0 / (va + vb + vc);
    let v = vb * denom;
    let w = vc * denom;
    (a + ab * v + ac * w, [1.0 - v - w, v, w])
}

/// Result of a closest-face query.
#[derive(Debug, Clone, Copy)]
pub struct SurfacePoint {
    pub face: usize,
    pub bary: [f64; 3],
    pub position: Vec3,
    pub distance: f64,
}

/// Uniform-grid index over face bounding boxes for closest-face queries.
pub struct FaceLocator<'a> {
    mesh: &'a TriangleMesh,
    origin: Vec3,
    cell: f64,
    dims: [usize; 3],
    cells: Vec<Vec<u32>>,
}

impl<'a> FaceLocator<'a> {
    pub fn new(mesh: &'a TriangleMesh) -> Self {
        let (lo, hi) = mesh.bbox();
        let extent = hi - lo;
        let cell = (2.0 * mesh.mean_edge_length())
            .max(extent.max() / 256.0)
            .max(1e-300);
        let dims = [0, 1, 2].map(|k| ((extent[k] / cell).floor() as usize + 1).max(1));
        let mut cells = vec![Vec::new(); dims[0] * dims[1] * dims[2]];
        for f in 0..mesh.num_faces() {
            let [a, b, c] = mesh.face_corners(f);
            let fmin = a.inf(&b).inf(&c);
            let fmax = a.sup(&b).sup(&c);
            let i0 = Self::coords(lo, cell, dims, &fmin);
            let i1 = Self::coords(lo, cell, dims, &fmax);
            for x in i0[0]..=i1[0] {
                for y in i0[1]..=i1[1] {
                    for z in i0[2]..=i1[2] {
                        cells[(x * dims[1] + y) * dims[2] + z].push(f as u32);
                    }
                }
            }
        }
        Self {
            mesh,
            origin: lo,
            cell,
            dims,
            cells,
        }
    }

    fn coords(origin: Vec3, cell: f64, dims: [usize; 3], p: &Vec3) -> [usize; 3] {
        [0, 1, 2].map(|k| {
            let i = ((p[k] - origin[k]) / cell).floor();
            (i.max(0.0) as usize).min(dims[k] - 1)
        })
    }

    /// Closest point of the surface to `p` (ties resolved to the lowest face id).
    pub fn closest(&self, p: &Vec3) -> SurfacePoint {
        let center = Self::coords(self.origin, self.cell, self.dims, p);
        let max_ring = self.dims.iter().copied().max().unwrap_or(1);
        let mut best: Option<SurfacePoint> = None;
        for ring in 0..=max_ring {
            let lo = center.map(|c| c.saturating_sub(ring));
            let hi = [0, 1, 2].map(|k| (center[k] + ring).min(self.dims[k] - 1));
            for x in lo[0]..=hi[0] {
                for y in lo[1]..=hi[1] {
                    for z in lo[2]..=hi[2] {
                        let on_shell = [x, y, z]
                            .iter()
                            .zip(center.iter())
                            .any(|(&i, &c)| i.abs_diff(c) == ring);
                        if !on_shell {
                            continue;
                        }
                        for &f in &self.cells[(x * self.dims[1] + y) * self.dims[2] + z] {
                            let f = f as usize;
                            let [a, b, c] = self.mesh.face_corners(f);
                            let (q, bary) = closest_point_on_triangle(p, &a, &b, &c);
                            let d = (q - p).norm();
                            let better = match &best {
                                None => true,
                                Some(s) => d < s.distance || (d == s.distance && f < s.face),
                            };
                            if better {
                                best = Some(SurfacePoint {
                                    face: f,
                                    bary,
                                    position: q,
                                    distance: d,
                                });
                            }
                        }
                    }
                }
            }
            if let Some(s) = &best {
                // everything outside the searched block is at least `ring * cell` away
                if s.distance <= ring as f64 * self.cell {
                    break;
                }
            }
        }
        best.expect("mesh has at least one face")
    }

    /// Faces whose closest point to `p` lies within `tol`.
    pub fn faces_near(&self, p: &Vec3, tol: f64) -> Vec<usize> {
        let reach = (tol / self.cell).ceil() as usize + 1;
        let center = Self::coords(self.origin, self.cell, self.dims, p);
        let lo = center.map(|c| c.saturating_sub(reach));
        let hi = [0, 1, 2].map(|k| (center[k] + reach).min(self.dims[k] - 1));
        let mut out = Vec::new();
        for x in lo[0]..=hi[0] {
            for y in lo[1]..=hi[1] {
                for z in lo[2]..=hi[2] {
                    for &f in &self.cells[(x * self.dims[1] + y) * self.dims[2] + z] {
                        let f = f as usize;
                        let [a, b, c] = self.mesh.face_corners(f);
                        let (q, _) = closest_point_on_triangle(p, &a, &b, &c);
                        if (q - p).norm() <= tol {
                            out.push(f);
                        }
                    }
                }
            }
        }
        out.sort_unstable();
        out.dedup();
        out
    }
}
