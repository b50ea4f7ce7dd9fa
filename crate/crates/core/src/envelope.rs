//! Per-face lower envelope of lifted distance planes.
//!
//! Every surviving site contributes a plane `d = a x + b y + c` over the face's
//! 2D frame that interpolates its squared distances at the three corners.
//! The lower envelope of those planes, projected onto the frame, is the
//! face's Voronoi partition. It is computed by starting from a vertical prism
//! over the face truncated at `+-d_max` and cutting it incrementally with one
//! plane at a time: vertices above the plane are killed, every edge crossing
//! the plane gains an interpolated vertex, and the cross-section becomes the
//! new plane's facet.
//!
//! Breakline barriers are vertical planes; a lifted plane is confined to the
//! side of each barrier it entered the face from, so triples are grouped by
//! their side signature and each group is cut inside its own sub-prism.

use std::collections::HashMap;

use nalgebra::Vector3;
use thiserror::Error;

use crate::mesh::{UnfoldFrame, Vec2};
use crate::propagation::DistanceTriple;

type P3 = Vector3<f64>;

/// Factor between the distance scale of a face and the prism half-height.
pub const D_MAX_FACTOR: f64 = 10.0;
/// On-plane tolerance relative to `d_max`.
pub const GEO_EPS: f64 = 1e-12;

#[derive(Debug, Error, PartialEq)]
pub enum EnvelopeError {
    #[error("frame of face {face} is singular")]
    SingularFrame { face: usize },
    #[error("barrier segment lies outside face {face}")]
    SegmentOutsideFace { face: usize },
    #[error("cutting plane {plane} removed the whole envelope")]
    NumericalDegeneracy { plane: usize },
}

/// Plane `d = a x + b y + c` over a face frame, owned by one site.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LiftedPlane {
    pub site: usize,
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

impl LiftedPlane {
    #[inline]
    pub fn eval(&self, p: &Vec2) -> f64 {
        self.a * p.x + self.b * p.y + self.c
    }
}

/// Plane through `(x_j, y_j, d_j)` for the three frame corners, via the
/// inverse of the corner matrix `[x_j y_j 1]`.
pub fn lift_plane(frame: &UnfoldFrame, triple: &DistanceTriple) -> Result<LiftedPlane, EnvelopeError> {
    let [p1, p2, p3] = *frame.points();
    let det = p1.x * (p2.y - p3.y) - p1.y * (p2.x - p3.x) + (p2.x * p3.y - p3.x * p2.y);
    let scale = (p2 - p1)
        .norm_squared()
        .max((p3 - p1).norm_squared())
        .max((p3 - p2).norm_squared());
    if !(det.abs() > 1e-12 * scale) {
        return Err(EnvelopeError::SingularFrame { face: frame.face() });
    }
    let [d1, d2, d3] = triple.d2;
    // adjugate rows of the corner matrix
    let a = (d1 * (p2.y - p3.y) + d2 * (p3.y - p1.y) + d3 * (p1.y - p2.y)) / det;
    let b = (d1 * (p3.x - p2.x) + d2 * (p1.x - p3.x) + d3 * (p2.x - p1.x)) / det;
    let c = (d1 * (p2.x * p3.y - p3.x * p2.y)
        + d2 * (p3.x * p1.y - p1.x * p3.y)
        + d3 * (p1.x * p2.y - p2.x * p1.y))
        / det;
    Ok(LiftedPlane {
        site: triple.site,
        a,
        b,
        c,
    })
}

/// Vertical barrier plane through a breakline segment, in frame coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Barrier {
    pub a: Vec2,
    pub b: Vec2,
}

impl Barrier {
    /// Signed distance of `p` to the barrier line (positive on the left of `a -> b`).
    #[inline]
    pub fn signed_distance(&self, p: &Vec2) -> f64 {
        let d = self.b - self.a;
        d.perp(&(p - self.a)) / d.norm()
    }
}

/// Registers the barrier through segment `(a, b)`, which must lie in the frame triangle.
pub fn barrier_plane(frame: &UnfoldFrame, a: Vec2, b: Vec2) -> Result<Barrier, EnvelopeError> {
    let tol = 1e-9;
    let inside = |p: &Vec2| frame.barycentric(p).iter().all(|&l| l >= -tol);
    if !(inside(&a) && inside(&b)) || (b - a).norm() == 0.0 {
        return Err(EnvelopeError::SegmentOutsideFace { face: frame.face() });
    }
    Ok(Barrier { a, b })
}

/// Side signature of `p`: bit `i` set when `p` is on the positive side of barrier `i`.
pub fn side_signature(barriers: &[Barrier], p: &Vec2) -> u32 {
    barriers
        .iter()
        .enumerate()
        .filter(|(_, b)| b.signed_distance(p) > 0.0)
        .fold(0, |acc, (i, _)| acc | (1 << i))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlaneKind {
    Bottom,
    Top,
    Wall,
    Barrier,
    Lifted { site: usize },
}

#[derive(Debug, Clone, Copy)]
struct Plane {
    // outside where n . (x, y, d) - c > eps
    n: P3,
    c: f64,
    eps: f64,
    kind: PlaneKind,
}

impl Plane {
    #[inline]
    fn eval(&self, p: &P3) -> f64 {
        self.n.dot(p) - self.c
    }
}

/// Vertex of the envelope polytope.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnvelopeVertex {
    pub position: P3,
    pub planes: [u32; 3],
}

/// Edge of the envelope polytope with its two incident planes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EnvelopeEdge {
    pub vertices: [u32; 2],
    pub planes: [u32; 2],
}

#[derive(Debug, Clone)]
struct Facet {
    plane: u32,
    // counterclockwise seen from outside the polytope
    cycle: Vec<u32>,
}

/// Outcome of a single cut.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CutOutcome {
    /// The plane lies on or above the current envelope everywhere.
    NonContributing,
    /// The plane removed `killed` vertices and created `created` new ones.
    Cut { killed: usize, created: usize },
}

/// Truncated prism over a convex base, incrementally cut by planes.
#[derive(Debug, Clone)]
pub struct LowerEnvelope {
    planes: Vec<Plane>,
    vertices: Vec<EnvelopeVertex>,
    alive: Vec<bool>,
    alive_ids: Vec<u32>,
    facets: Vec<Facet>,
    d_max: f64,
    ops: u64,
}

impl LowerEnvelope {
    /// Vertical prism over the frame triangle between `-d_max` and `+d_max`.
    pub fn init_prism(frame: &UnfoldFrame, d_max: f64) -> Self {
        Self::over_polygon(&frame.ccw_points(), d_max)
    }

    /// Vertical prism over a convex counterclockwise polygon.
    pub fn over_polygon(base: &[Vec2], d_max: f64) -> Self {
        let k = base.len();
        assert!(k >= 3, "prism base needs at least three corners");
        let geo = GEO_EPS * d_max;
        let extent = base
            .iter()
            .flat_map(|p| base.iter().map(move |q| (p - q).norm()))
            .fold(0.0, f64::max);
        let len_eps = 1e-12 * extent.max(f64::MIN_POSITIVE);
        let mut planes = vec![
            Plane {
                n: P3::new(0.0, 0.0, -1.0),
                c: d_max,
                eps: geo,
                kind: PlaneKind::Bottom,
            },
            Plane {
                n: P3::new(0.0, 0.0, 1.0),
                c: d_max,
                eps: geo,
                kind: PlaneKind::Top,
            },
        ];
        for i in 0..k {
            let p = base[i];
            let q = base[(i + 1) % k];
            let dir = (q - p).normalize();
            // outward normal: right of p -> q
            let n = P3::new(dir.y, -dir.x, 0.0);
            planes.push(Plane {
                n,
                c: n.x * p.x + n.y * p.y,
                eps: len_eps,
                kind: PlaneKind::Wall,
            });
        }
        let wall = |i: usize| (2 + (i % k)) as u32;
        let mut vertices = Vec::with_capacity(2 * k);
        for (i, p) in base.iter().enumerate() {
            let prev = wall(i + k - 1);
            vertices.push(EnvelopeVertex {
                position: P3::new(p.x, p.y, -d_max),
                planes: [0, prev, wall(i)],
            });
        }
        for (i, p) in base.iter().enumerate() {
            let prev = wall(i + k - 1);
            vertices.push(EnvelopeVertex {
                position: P3::new(p.x, p.y, d_max),
                planes: [1, prev, wall(i)],
            });
        }
        let bottom = |i: usize| (i % k) as u32;
        let top = |i: usize| (k + i % k) as u32;
        let mut facets = vec![
            Facet {
                plane: 0,
                cycle: (0..k).rev().map(bottom).collect(),
            },
            Facet {
                plane: 1,
                cycle: (0..k).map(top).collect(),
            },
        ];
        for i in 0..k {
            facets.push(Facet {
                plane: wall(i),
                cycle: vec![bottom(i), bottom(i + 1), top(i + 1), top(i)],
            });
        }
        let n = vertices.len();
        Self {
            planes,
            vertices,
            alive: vec![true; n],
            alive_ids: (0..n as u32).collect(),
            facets,
            d_max,
            ops: 0,
        }
    }

    pub fn d_max(&self) -> f64 {
        self.d_max
    }

    /// Elementary operations (vertex classifications and facet-corner visits) so far.
    pub fn operation_count(&self) -> u64 {
        self.ops
    }

    pub fn num_alive_vertices(&self) -> usize {
        self.alive_ids.len()
    }

    pub fn alive_vertices(&self) -> impl Iterator<Item = (u32, &EnvelopeVertex)> + '_ {
        self.alive_ids
            .iter()
            .map(move |&i| (i, &self.vertices[i as usize]))
    }

    pub fn plane_kind(&self, plane: u32) -> PlaneKind {
        self.planes[plane as usize].kind
    }

    /// Alive edges with their incident planes.
    pub fn alive_edges(&self) -> Vec<EnvelopeEdge> {
        let mut owner: HashMap<(u32, u32), u32> = HashMap::new();
        for f in &self.facets {
            for (a, b) in cycle_edges(&f.cycle) {
                owner.insert((a, b), f.plane);
            }
        }
        let mut out: Vec<EnvelopeEdge> = owner
            .iter()
            .filter(|((a, b), _)| a < b)
            .filter_map(|(&(a, b), &p)| {
                owner.get(&(b, a)).map(|&q| EnvelopeEdge {
                    vertices: [a, b],
                    planes: [p.min(q), p.max(q)],
                })
            })
            .collect();
        out.sort_unstable_by_key(|e| e.vertices);
        out
    }

    /// Cuts with the lower half-space of `plane` (keeps `d <= a x + b y + c`).
    pub fn cut(&mut self, plane: &LiftedPlane) -> Result<CutOutcome, EnvelopeError> {
        let p = Plane {
            n: P3::new(-plane.a, -plane.b, 1.0),
            c: plane.c,
            eps: GEO_EPS * self.d_max,
            kind: PlaneKind::Lifted { site: plane.site },
        };
        self.cut_with(p)
    }

    /// Confines the envelope to one side of a vertical barrier.
    pub fn cut_barrier(
        &mut self,
        barrier: &Barrier,
        keep_positive: bool,
    ) -> Result<CutOutcome, EnvelopeError> {
        let d = (barrier.b - barrier.a).normalize();
        // positive side is the left of a -> b, i.e. along (-d.y, d.x)
        let left = P3::new(-d.y, d.x, 0.0);
        let n = if keep_positive { -left } else { left };
        let extent = (barrier.b - barrier.a).norm();
        let c = n.x * barrier.a.x + n.y * barrier.a.y;
        self.cut_with(Plane {
            n,
            c,
            eps: 1e-12 * extent,
            kind: PlaneKind::Barrier,
        })
    }

    fn cut_with(&mut self, plane: Plane) -> Result<CutOutcome, EnvelopeError> {
        let pid = self.planes.len() as u32;
        self.planes.push(plane);

        let mut values: HashMap<u32, f64> = HashMap::with_capacity(self.alive_ids.len());
        let mut killed = 0;
        for &v in &self.alive_ids {
            let s = plane.eval(&self.vertices[v as usize].position);
            if s > plane.eps {
                killed += 1;
            }
            values.insert(v, s);
        }
        self.ops += self.alive_ids.len() as u64;
        if killed == 0 {
            return Ok(CutOutcome::NonContributing);
        }
        if killed == self.alive_ids.len() {
            return Err(EnvelopeError::NumericalDegeneracy { plane: pid as usize });
        }
        let is_killed = |v: u32| values[&v] > plane.eps;

        let mut crossing: HashMap<(u32, u32), u32> = HashMap::new();
        // directed closing edges on the new facet: entry -> exit
        let mut next_on_new: HashMap<u32, u32> = HashMap::new();
        let mut facets = Vec::with_capacity(self.facets.len() + 1);
        let created_before = self.vertices.len();

        let old = std::mem::take(&mut self.facets);
        for facet in old {
            self.ops += facet.cycle.len() as u64;
            let dead = facet.cycle.iter().filter(|&&v| is_killed(v)).count();
            if dead == 0 {
                facets.push(facet);
                continue;
            }
            if dead == facet.cycle.len() {
                continue;
            }
            let n = facet.cycle.len();
            let mut cycle = Vec::with_capacity(n + 2);
            let mut pending_exit = None;
            // start right after a killed vertex so runs are not split at the seam
            let start = (0..n)
                .find(|&i| is_killed(facet.cycle[i]) && !is_killed(facet.cycle[(i + 1) % n]))
                .map(|i| (i + 1) % n)
                .unwrap_or(0);
            for j in 0..n {
                let a = facet.cycle[(start + j) % n];
                let b = facet.cycle[(start + j + 1) % n];
                match (is_killed(a), is_killed(b)) {
                    (false, false) => cycle.push(a),
                    (false, true) => {
                        cycle.push(a);
                        let x = self.crossing_vertex(&mut crossing, &values, a, b, pid);
                        cycle.push(x);
                        pending_exit = Some(x);
                    }
                    (true, false) => {
                        let x = self.crossing_vertex(&mut crossing, &values, b, a, pid);
                        cycle.push(x);
                        if let Some(exit) = pending_exit.take() {
                            // on this facet the closing edge runs exit -> x
                            next_on_new.insert(x, exit);
                        }
                    }
                    (true, true) => {}
                }
            }
            dedup_cycle(&mut cycle);
            if cycle.len() >= 3 {
                facets.push(Facet {
                    plane: facet.plane,
                    cycle,
                });
            }
        }

        // chain the cross-section into one or more cycles
        let mut starts: Vec<u32> = next_on_new.keys().copied().collect();
        starts.sort_unstable();
        let mut used: HashMap<u32, bool> = HashMap::new();
        for s in starts {
            if used.contains_key(&s) {
                continue;
            }
            let mut cycle = Vec::new();
            let mut cur = s;
            while !used.contains_key(&cur) {
                used.insert(cur, true);
                cycle.push(cur);
                match next_on_new.get(&cur) {
                    Some(&nx) => cur = nx,
                    None => break,
                }
            }
            dedup_cycle(&mut cycle);
            if cycle.len() >= 3 {
                facets.push(Facet { plane: pid, cycle });
            }
        }
        self.facets = facets;

        for (&v, &s) in &values {
            if s > plane.eps {
                self.alive[v as usize] = false;
            }
        }
        let created = self.vertices.len() - created_before;
        self.alive.resize(self.vertices.len(), true);
        let mut ids: Vec<u32> = self
            .alive_ids
            .iter()
            .copied()
            .filter(|&v| self.alive[v as usize])
            .collect();
        ids.extend(created_before as u32..self.vertices.len() as u32);
        self.alive_ids = ids;
        Ok(CutOutcome::Cut { killed, created })
    }

    /// Interpolated vertex on edge `(alive, dead)`, shared between both incident facets.
    fn crossing_vertex(
        &mut self,
        crossing: &mut HashMap<(u32, u32), u32>,
        values: &HashMap<u32, f64>,
        alive: u32,
        dead: u32,
        pid: u32,
    ) -> u32 {
        if let Some(&x) = crossing.get(&(alive, dead)) {
            return x;
        }
        let va = self.vertices[alive as usize];
        let vd = self.vertices[dead as usize];
        let sa = values[&alive];
        let sd = values[&dead];
        // v = s1/(s1 - s2) * v2 - s2/(s1 - s2) * v1 with v1 the killed endpoint
        let lam = (sd / (sd - sa)).clamp(0.0, 1.0);
        let position = va.position * lam + vd.position * (1.0 - lam);
        let mut common = va.planes.iter().filter(|p| vd.planes.contains(p));
        let p0 = common.next().copied().unwrap_or(va.planes[0]);
        let p1 = common.next().copied().unwrap_or(va.planes[1]);
        let id = self.vertices.len() as u32;
        self.vertices.push(EnvelopeVertex {
            position,
            planes: [p0, p1, pid],
        });
        crossing.insert((alive, dead), id);
        id
    }

    /// Projected facets of lifted planes, bisector edges between two lifted
    /// facets, and the planes that own a region.
    pub fn extract(&self) -> EnvelopeProjection {
        let len_tol = 1e-12 * self.scale_len();
        let mut regions = Vec::new();
        let mut owner: HashMap<(u32, u32), usize> = HashMap::new();
        for f in &self.facets {
            if let PlaneKind::Lifted { site } = self.planes[f.plane as usize].kind {
                for (a, b) in cycle_edges(&f.cycle) {
                    owner.insert((a, b), site);
                }
                let mut poly: Vec<Vec2> = Vec::with_capacity(f.cycle.len());
                let mut keys: Vec<[u32; 3]> = Vec::with_capacity(f.cycle.len());
                for &v in &f.cycle {
                    let p = self.vertices[v as usize].position;
                    let q = Vec2::new(p.x, p.y);
                    if poly.last().map_or(true, |l: &Vec2| (l - q).norm() > len_tol) {
                        poly.push(q);
                        let mut k = self.vertices[v as usize].planes;
                        k.sort_unstable();
                        keys.push(k);
                    }
                }
                while poly.len() > 1 && (poly[0] - poly[poly.len() - 1]).norm() <= len_tol {
                    poly.pop();
                    keys.pop();
                }
                if poly.len() < 3 {
                    continue;
                }
                // deterministic start: smallest defining-plane key
                let start = (0..keys.len()).min_by_key(|&i| keys[i]).unwrap_or(0);
                poly.rotate_left(start);
                regions.push((site, poly));
            } else if self.planes[f.plane as usize].kind == PlaneKind::Top {
                let poly: Vec<Vec2> = f
                    .cycle
                    .iter()
                    .map(|&v| {
                        let p = self.vertices[v as usize].position;
                        Vec2::new(p.x, p.y)
                    })
                    .collect();
                regions.push((usize::MAX, poly));
            }
        }
        let mut bisectors = Vec::new();
        let mut seen: Vec<(u32, u32)> = owner.keys().copied().collect();
        seen.sort_unstable();
        for (a, b) in seen {
            if a > b {
                continue;
            }
            let (Some(&s), Some(&t)) = (owner.get(&(a, b)), owner.get(&(b, a))) else {
                continue;
            };
            if s == t {
                continue;
            }
            let pa = self.vertices[a as usize].position;
            let pb = self.vertices[b as usize].position;
            let (pa, pb) = (Vec2::new(pa.x, pa.y), Vec2::new(pb.x, pb.y));
            if (pa - pb).norm() <= len_tol {
                continue;
            }
            let (s, t, seg) = if s < t { (s, t, [pa, pb]) } else { (t, s, [pb, pa]) };
            bisectors.push(BisectorSegment {
                sites: (s, t),
                segment: seg,
            });
        }
        EnvelopeProjection { regions, bisectors }
    }

    fn scale_len(&self) -> f64 {
        self.alive_ids
            .iter()
            .map(|&v| {
                let p = self.vertices[v as usize].position;
                p.x.abs().max(p.y.abs())
            })
            .fold(0.0, f64::max)
            .max(f64::MIN_POSITIVE)
    }
}

fn cycle_edges(cycle: &[u32]) -> impl Iterator<Item = (u32, u32)> + '_ {
    (0..cycle.len()).map(move |i| (cycle[i], cycle[(i + 1) % cycle.len()]))
}

fn dedup_cycle(cycle: &mut Vec<u32>) {
    cycle.dedup();
    while cycle.len() > 1 && cycle[0] == cycle[cycle.len() - 1] {
        cycle.pop();
    }
}

/// Raw projection of an envelope (regions keyed by site; `usize::MAX` marks
/// area still under the prism top, i.e. uncovered).
#[derive(Debug, Clone)]
pub struct EnvelopeProjection {
    pub regions: Vec<(usize, Vec<Vec2>)>,
    pub bisectors: Vec<BisectorSegment>,
}

/// Piece of a bisector inside one face, in frame coordinates. `sites.0 < sites.1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BisectorSegment {
    pub sites: (usize, usize),
    pub segment: [Vec2; 2],
}

/// Convex region of a face owned by one site.
#[derive(Debug, Clone, PartialEq)]
pub struct Region {
    pub site: usize,
    /// Counterclockwise polygon in frame coordinates.
    pub polygon: Vec<Vec2>,
}

impl Region {
    pub fn area(&self) -> f64 {
        polygon_area(&self.polygon)
    }

    /// True when `p` is inside or within `tol` of the polygon.
    pub fn contains(&self, p: &Vec2, tol: f64) -> bool {
        let n = self.polygon.len();
        (0..n).all(|i| {
            let a = self.polygon[i];
            let b = self.polygon[(i + 1) % n];
            let e = b - a;
            let len = e.norm();
            len == 0.0 || e.perp(&(p - a)) / len >= -tol
        })
    }
}

/// Voronoi partition of one face.
#[derive(Debug, Clone)]
pub struct FacePartition {
    pub face: usize,
    pub frame: UnfoldFrame,
    pub regions: Vec<Region>,
    pub bisectors: Vec<BisectorSegment>,
    /// Input distance triples.
    pub triples: Vec<DistanceTriple>,
    /// Face area not owned by any site (only possible with breaklines).
    pub uncovered_area: f64,
    /// Envelope operations spent on this face.
    pub operations: u64,
}

impl FacePartition {
    /// Sites owning at least one region, sorted.
    pub fn contributing_sites(&self) -> Vec<usize> {
        let mut s: Vec<usize> = self.regions.iter().map(|r| r.site).collect();
        s.sort_unstable();
        s.dedup();
        s
    }

    /// Owner of frame point `p`; points on shared boundaries go to the smallest site id.
    pub fn label_at(&self, p: &Vec2) -> Option<usize> {
        let tol = 1e-9 * self.frame_scale();
        self.regions
            .iter()
            .filter(|r| r.contains(p, tol))
            .map(|r| r.site)
            .min()
    }

    fn frame_scale(&self) -> f64 {
        let [a, b, c] = *self.frame.points();
        (a - b).norm().max((b - c).norm()).max((a - c).norm())
    }
}

pub fn polygon_area(poly: &[Vec2]) -> f64 {
    let n = poly.len();
    0.5 * (0..n)
        .map(|i| poly[i].perp(&poly[(i + 1) % n]))
        .sum::<f64>()
}

/// Clips a convex polygon to the half-plane `n . p <= c`.
pub fn clip_polygon(poly: &[Vec2], n: &Vec2, c: f64) -> Vec<Vec2> {
    let mut out = Vec::with_capacity(poly.len() + 1);
    let k = poly.len();
    for i in 0..k {
        let a = poly[i];
        let b = poly[(i + 1) % k];
        let sa = n.dot(&a) - c;
        let sb = n.dot(&b) - c;
        if sa <= 0.0 {
            out.push(a);
        }
        if (sa <= 0.0) != (sb <= 0.0) {
            let t = sa / (sa - sb);
            out.push(a + (b - a) * t);
        }
    }
    out
}

/// Prism half-height for a face whose squared distances are bounded by `scale`.
pub fn prism_height(scale: f64, triples: &[DistanceTriple]) -> f64 {
    let m = triples
        .iter()
        .flat_map(|t| t.d2.iter().map(|d| d.abs()))
        .fold(scale.abs(), f64::max);
    D_MAX_FACTOR * m.max(f64::MIN_POSITIVE)
}

/// Computes the partition of one face from its surviving triples.
///
/// `scale` bounds the magnitude of squared distances (bbox diagonal squared
/// plus the largest absolute weight); `sides[i]` is the barrier side
/// signature of `triples[i]`.
pub fn partition_face(
    frame: &UnfoldFrame,
    triples: &[DistanceTriple],
    barriers: &[Barrier],
    scale: f64,
) -> Result<FacePartition, EnvelopeError> {
    let face_area = frame.area();
    let mut regions = Vec::new();
    let mut bisectors = Vec::new();
    let mut operations = 0;

    let mut groups: Vec<(u32, Vec<&DistanceTriple>)> = Vec::new();
    for t in triples {
        match groups.iter_mut().find(|(s, _)| *s == t.side) {
            Some((_, g)) => g.push(t),
            None => groups.push((t.side, vec![t])),
        }
    }
    groups.sort_by_key(|(s, _)| *s);

    for (side, group) in &groups {
        let mut base = frame.ccw_points().to_vec();
        for (i, b) in barriers.iter().enumerate() {
            let d = (b.b - b.a).normalize();
            let left = Vec2::new(-d.y, d.x);
            // keep left . (p - a) >= 0 on the positive side
            let n = if side & (1 << i) != 0 { -left } else { left };
            base = clip_polygon(&base, &n, n.dot(&b.a));
        }
        if base.len() < 3 || polygon_area(&base) <= 1e-14 * face_area {
            continue;
        }
        if group.len() == 1 {
            regions.push(Region {
                site: group[0].site,
                polygon: base,
            });
            continue;
        }
        let d_max = prism_height(scale, triples);
        let mut env = LowerEnvelope::over_polygon(&base, d_max);
        for t in group {
            let plane = lift_plane(frame, t)?;
            env.cut(&plane)?;
        }
        operations += env.operation_count();
        let proj = env.extract();
        for (site, polygon) in proj.regions {
            if site != usize::MAX && polygon_area(&polygon) > 1e-14 * face_area {
                regions.push(Region { site, polygon });
            }
        }
        bisectors.extend(proj.bisectors);
    }

    if !barriers.is_empty() {
        bisectors.extend(barrier_bisectors(frame, &regions, barriers));
    }

    let covered: f64 = regions.iter().map(|r| r.area()).sum();
    Ok(FacePartition {
        face: frame.face(),
        frame: *frame,
        regions,
        bisectors,
        triples: triples.to_vec(),
        uncovered_area: (face_area - covered).max(0.0),
        operations,
    })
}

/// Region boundaries lying on a barrier between regions of different sites.
fn barrier_bisectors(
    frame: &UnfoldFrame,
    regions: &[Region],
    barriers: &[Barrier],
) -> Vec<BisectorSegment> {
    let [a, b, c] = *frame.points();
    let tol = 1e-9 * (a - b).norm().max((b - c).norm()).max((a - c).norm());
    let mut out = Vec::new();
    for bar in barriers {
        let dir = (bar.b - bar.a).normalize();
        // (site, positive side?, interval along the line)
        let mut pieces: Vec<(usize, bool, f64, f64)> = Vec::new();
        for r in regions {
            let n = r.polygon.len();
            let centroid = r.polygon.iter().fold(Vec2::zeros(), |acc, p| acc + p) / n as f64;
            let positive = bar.signed_distance(&centroid) > 0.0;
            for i in 0..n {
                let p = r.polygon[i];
                let q = r.polygon[(i + 1) % n];
                if bar.signed_distance(&p).abs() <= tol && bar.signed_distance(&q).abs() <= tol {
                    let tp = dir.dot(&(p - bar.a));
                    let tq = dir.dot(&(q - bar.a));
                    if (tp - tq).abs() > tol {
                        pieces.push((r.site, positive, tp.min(tq), tp.max(tq)));
                    }
                }
            }
        }
        for &(s, sp, lo1, hi1) in pieces.iter().filter(|p| p.1) {
            for &(t, _, lo2, hi2) in pieces.iter().filter(|p| !p.1) {
                let _ = sp;
                let lo = lo1.max(lo2);
                let hi = hi1.min(hi2);
                if hi - lo > tol && s != t {
                    let p0 = bar.a + dir * lo;
                    let p1 = bar.a + dir * hi;
                    let (x, y, seg) = if s < t { (s, t, [p0, p1]) } else { (t, s, [p1, p0]) };
                    out.push(BisectorSegment {
                        sites: (x, y),
                        segment: seg,
                    });
                }
            }
        }
    }
    out
}
