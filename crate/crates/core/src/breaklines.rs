//! Breaklines traced onto the mesh.
//!
//! A polyline segment that runs along a mesh edge blocks propagation across
//! that edge. A segment inside a single face becomes a barrier: a vertical
//! plane in the face frame that keeps sites on the side they entered from.

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use crate::envelope::{barrier_plane, Barrier};
use crate::mesh::{closest_point_on_triangle, edge_key, FaceLocator, TriangleMesh, UnfoldFrame, Vec3};
use crate::solvers::{point_to_segment_distance, SiteSet};

#[derive(Debug, Error, PartialEq)]
pub enum BreaklineError {
    #[error("breakline {polyline}: point {point} is not on the surface")]
    OffSurface { polyline: usize, point: usize },
    #[error("breakline {polyline}: segment {segment} neither follows a mesh edge nor stays in one face")]
    NotTraceable { polyline: usize, segment: usize },
    #[error("site {site} lies on a breakline")]
    SiteOnBreakline { site: usize },
}

/// Breakline geometry resolved against a mesh.
#[derive(Debug, Clone, Default)]
pub struct BreaklineSet {
    blocked: BTreeSet<(usize, usize)>,
    face_segments: BTreeMap<usize, Vec<[Vec3; 2]>>,
}

enum Anchor {
    Vertex(usize),
    Surface(Vec3),
}

impl BreaklineSet {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn is_empty(&self) -> bool {
        self.blocked.is_empty() && self.face_segments.is_empty()
    }

    /// Traces 3D polylines onto `mesh`.
    pub fn trace(mesh: &TriangleMesh, polylines: &[Vec<Vec3>]) -> Result<Self, BreaklineError> {
        let locator = FaceLocator::new(mesh);
        let diag = mesh.bbox_diag();
        let on_tol = 1e-4 * diag;
        let snap = 1e-6 * diag;
        let mut out = Self::default();
        for (pi, line) in polylines.iter().enumerate() {
            let mut anchors = Vec::with_capacity(line.len());
            for (k, p) in line.iter().enumerate() {
                let hit = locator.closest(p);
                if hit.distance > on_tol {
                    return Err(BreaklineError::OffSurface {
                        polyline: pi,
                        point: k,
                    });
                }
                let near = mesh
                    .face(hit.face)
                    .into_iter()
                    .find(|&v| (mesh.vertex(v) - hit.position).norm() <= snap);
                anchors.push(match near {
                    Some(v) => Anchor::Vertex(v),
                    None => Anchor::Surface(hit.position),
                });
            }
            for (si, w) in anchors.windows(2).enumerate() {
                let err = BreaklineError::NotTraceable {
                    polyline: pi,
                    segment: si,
                };
                if let (Anchor::Vertex(a), Anchor::Vertex(b)) = (&w[0], &w[1]) {
                    if a == b {
                        continue;
                    }
                    if mesh.is_edge(*a, *b) {
                        out.blocked.insert(edge_key(*a, *b));
                        continue;
                    }
                }
                let pos = |a: &Anchor| match a {
                    Anchor::Vertex(v) => mesh.vertex(*v),
                    Anchor::Surface(p) => *p,
                };
                out.walk(mesh, &locator, pos(&w[0]), pos(&w[1]), snap).ok_or(err)?;
            }
        }
        Ok(out)
    }

    /// Follows the segment `p -> q` face by face, each step heading for `q`
    /// projected into the current face and going as far as that face allows.
    fn walk(&mut self, mesh: &TriangleMesh, locator: &FaceLocator, p: Vec3, q: Vec3, snap: f64) -> Option<()> {
        let mut cur = p;
        for _ in 0..4 * mesh.num_faces() + 4 {
            if (q - cur).norm() <= snap {
                return Some(());
            }
            let mut best: Option<(f64, usize, Vec3)> = None;
            for f in locator.faces_near(&cur, snap) {
                let Ok(frame) = mesh.unfold(f) else { continue };
                let (x0, y) = (frame.to_frame(&cur), frame.to_frame(&q));
                let d = y - x0;
                if d.norm() <= snap {
                    continue;
                }
                let pts = frame.ccw_points();
                let mut t = 1.0f64;
                for k in 0..3 {
                    let (u, v) = (pts[k], pts[(k + 1) % 3]);
                    let e = v - u;
                    let tol = snap * e.norm();
                    let g0 = e.x * (x0.y - u.y) - e.y * (x0.x - u.x);
                    let slope = e.x * d.y - e.y * d.x;
                    if g0 < -tol {
                        t = -1.0;
                        break;
                    }
                    if slope < 0.0 {
                        t = t.min(g0.max(0.0) / -slope);
                    }
                }
                let exit = frame.to_surface(&(x0 + d * t));
                let gain = (exit - cur).norm();
                if t > 0.0 && gain > snap && best.is_none_or(|(g, _, _)| gain > g * (1.0 + 1e-9)) {
                    best = Some((gain, f, exit));
                }
            }
            let (_, f, exit) = best?;
            self.add_piece(mesh, f, cur, exit, snap);
            cur = exit;
        }
        None
    }

    fn add_piece(&mut self, mesh: &TriangleMesh, f: usize, p: Vec3, q: Vec3, snap: f64) {
        let tri = mesh.face(f);
        let corners = mesh.face_corners(f);
        let along = (0..3).find(|&k| {
            let (a, b) = (corners[k], corners[(k + 1) % 3]);
            point_to_segment_distance(&a, &b, &p) <= snap && point_to_segment_distance(&a, &b, &q) <= snap
        });
        match along {
            Some(k) => {
                self.blocked.insert(edge_key(tri[k], tri[(k + 1) % 3]));
            }
            None => {
                let [a, b, c] = corners;
                let (p, _) = closest_point_on_triangle(&p, &a, &b, &c);
                let (q, _) = closest_point_on_triangle(&q, &a, &b, &c);
                self.face_segments.entry(f).or_default().push([p, q]);
            }
        }
    }

    /// Blocks mesh edges directly (for building barrier-free tests).
    pub fn from_edges(edges: impl IntoIterator<Item = (usize, usize)>) -> Self {
        Self {
            blocked: edges.into_iter().map(|(a, b)| edge_key(a, b)).collect(),
            face_segments: BTreeMap::new(),
        }
    }

    #[inline]
    pub fn is_blocked(&self, a: usize, b: usize) -> bool {
        !self.blocked.is_empty() && self.blocked.contains(&edge_key(a, b))
    }

    pub fn blocked_edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.blocked.iter().copied()
    }

    pub fn barrier_faces(&self) -> impl Iterator<Item = usize> + '_ {
        self.face_segments.keys().copied()
    }

    pub fn face_segments(&self, face: usize) -> &[[Vec3; 2]] {
        self.face_segments.get(&face).map_or(&[], |v| v.as_slice())
    }

    /// Barrier planes of `face` in `frame` coordinates (at most 32 per face).
    pub fn barriers(&self, frame: &UnfoldFrame) -> Vec<Barrier> {
        self.face_segments(frame.face())
            .iter()
            .take(32)
            .filter_map(|[p, q]| barrier_plane(frame, frame.to_frame(p), frame.to_frame(q)).ok())
            .collect()
    }

    /// Rejects point sites lying on a blocked edge or a barrier segment.
    pub fn check_sites(&self, mesh: &TriangleMesh, sites: &SiteSet) -> Result<(), BreaklineError> {
        let tol = 1e-9 * mesh.bbox_diag();
        for s in sites.iter().filter(|s| s.is_point()) {
            let p = s.anchor;
            let on_edge = self.blocked.iter().any(|&(a, b)| {
                point_to_segment_distance(&mesh.vertex(a), &mesh.vertex(b), &p) <= tol
            });
            let on_barrier = self
                .face_segments
                .values()
                .flatten()
                .any(|[a, b]| point_to_segment_distance(a, b, &p) <= tol);
            if on_edge || on_barrier {
                return Err(BreaklineError::SiteOnBreakline { site: s.id });
            }
        }
        Ok(())
    }
}
