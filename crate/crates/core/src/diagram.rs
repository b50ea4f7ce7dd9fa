//! Surface-wide Voronoi diagram assembled from per-face partitions.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::breaklines::BreaklineSet;
use crate::envelope::{clip_polygon, partition_face, polygon_area, EnvelopeError, FacePartition};
use crate::io::ObjWriter;
use crate::mesh::{MeshError, TriangleMesh, Vec2, Vec3};
use crate::propagation::{over_propagate, over_propagate_excluding, DistanceTriple, Propagation, PropagationError, SweepStats};
use crate::solvers::{ClosedForm, FmmField, Metric, SiteSet, Solver};

/// Stitch tolerance relative to the bounding-box diagonal.
pub const STITCH_EPS: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum DiagramError {
    #[error("face {face} has no partition")]
    MissingFace { face: usize },
    #[error("compatibility needs a planar mesh with point sites")]
    NonPlanarInput,
    #[error(transparent)]
    Propagation(#[from] PropagationError),
    #[error(transparent)]
    Envelope(#[from] EnvelopeError),
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error("thread pool: {0}")]
    ThreadPool(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Piece of a cell inside one face.
#[derive(Debug, Clone, PartialEq)]
pub struct CellFragment {
    pub face: usize,
    pub polygon: Vec<Vec3>,
    pub area: f64,
}

/// Bisector polyline between two sites (`sites.0 < sites.1`).
#[derive(Debug, Clone, PartialEq)]
pub struct BisectorPolyline {
    pub sites: (usize, usize),
    pub points: Vec<Vec3>,
}

/// Crossing of a mesh edge where the two incident faces disagree.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Breakpoint {
    pub edge: (usize, usize),
    pub position: [f64; 3],
    pub mismatch: f64,
}

#[derive(Debug, Clone)]
pub struct SurfaceVoronoiDiagram {
    pub num_sites: usize,
    pub partitions: Vec<FacePartition>,
    /// Fragments per site, in face order.
    pub cells: Vec<Vec<CellFragment>>,
    pub bisectors: Vec<BisectorPolyline>,
    pub cell_area: Vec<f64>,
    pub total_area: f64,
    pub uncovered_area: f64,
    pub stitch_eps: f64,
    /// Largest crossing mismatch over all shared edges.
    pub max_edge_mismatch: f64,
    /// Crossings whose mismatch exceeds `stitch_eps`.
    pub breakpoints: Vec<Breakpoint>,
    pub sweep: SweepStats,
    pub envelope_operations: u64,
    pub fmm: Option<FmmField>,
    blocked: Vec<(usize, usize)>,
    has_barriers: bool,
    // bisector pieces along mesh edges, with mesh-boundary flags per end
    edge_bisectors: Vec<EdgeBisector>,
}

#[derive(Debug, Clone)]
struct EdgeBisector {
    sites: (usize, usize),
    segment: [Vec3; 2],
    boundary: [bool; 2],
    face: usize,
}

/// Runs the full pipeline: sweep, per-face envelopes, assembly.
///
/// `threads = 0` uses all cores for the per-face stage, `1` stays serial.
pub fn compute_diagram(
    mesh: &TriangleMesh,
    sites: &SiteSet,
    solver: &Solver,
    breaklines: &BreaklineSet,
    threads: usize,
) -> Result<SurfaceVoronoiDiagram, DiagramError> {
    let mut prop = over_propagate(mesh, sites, solver, breaklines)?;
    let scale = mesh.bbox_diag().powi(2) + if solver.power { sites.max_abs_weight() } else { 0.0 };
    let parts = partition_all(mesh, &prop, breaklines, scale, threads)?;
    let mut vd = assemble(mesh, sites.len(), parts, breaklines)?;
    if matches!(solver.metric, Metric::Euclidean) {
        // re-sweep with detached fragments' sites barred from their faces
        let dist = ClosedForm::new(mesh, solver.density.as_ref());
        let mut excluded = BTreeSet::new();
        for _ in 0..LOCALIZE_ROUNDS {
            let before = excluded.len();
            excluded.extend(
                vd.detached_regions(mesh, sites)
                    .into_iter()
                    .filter(|&(f, s)| !sites.get(s).seed_faces.contains(&f)),
            );
            if excluded.len() == before {
                break;
            }
            prop = over_propagate_excluding(mesh, sites, &dist, solver.power, breaklines, excluded.clone())?;
            let parts = partition_all(mesh, &prop, breaklines, scale, threads)?;
            vd = assemble(mesh, sites.len(), parts, breaklines)?;
        }
    }
    vd.sweep = prop.stats;
    vd.fmm = prop.fmm;
    Ok(vd)
}

/// Per-face partitions for a finished sweep.
pub fn partition_all(
    mesh: &TriangleMesh,
    prop: &Propagation,
    breaklines: &BreaklineSet,
    scale: f64,
    threads: usize,
) -> Result<Vec<FacePartition>, DiagramError> {
    let one = |f: usize| partition_one(mesh, f, &prop.lists[f].triples, breaklines, scale);
    if threads == 1 {
        return (0..mesh.num_faces()).map(one).collect();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| DiagramError::ThreadPool(e.to_string()))?;
    pool.install(|| (0..mesh.num_faces()).into_par_iter().map(one).collect())
}

fn partition_one(
    mesh: &TriangleMesh,
    f: usize,
    triples: &[DistanceTriple],
    breaklines: &BreaklineSet,
    scale: f64,
) -> Result<FacePartition, DiagramError> {
    let frame = mesh.unfold(f)?;
    let barriers = breaklines.barriers(&frame);
    Ok(partition_face(&frame, triples, &barriers, scale)?)
}

const LOCALIZE_ROUNDS: usize = 8;

/// Per-face counts of planes owning at least one region.
pub fn cell_source_histogram(partitions: &[FacePartition]) -> Vec<usize> {
    partitions.iter().map(|p| p.contributing_sites().len()).collect()
}

#[derive(Debug, Clone)]
struct EdgeLabels {
    // (t0, t1, site) along the edge from its smaller vertex id, sorted
    intervals: Vec<(f64, f64, usize)>,
}

/// Region intervals of `part` along its local edge `j`, parameterized from the smaller vertex id.
fn edge_intervals(mesh: &TriangleMesh, part: &FacePartition, j: usize) -> Vec<(f64, f64, usize, usize)> {
    let tri = mesh.face(part.face);
    let (a, b) = (tri[j], tri[(j + 1) % 3]);
    let opp = (j + 2) % 3;
    let along = (j + 1) % 3;
    let mut out = Vec::new();
    for (ri, r) in part.regions.iter().enumerate() {
        let n = r.polygon.len();
        for i in 0..n {
            let lp = part.frame.barycentric(&r.polygon[i]);
            let lq = part.frame.barycentric(&r.polygon[(i + 1) % n]);
            if lp[opp].abs() > 1e-9 || lq[opp].abs() > 1e-9 {
                continue;
            }
            let (mut tp, mut tq) = (lp[along], lq[along]);
            if a > b {
                tp = 1.0 - tp;
                tq = 1.0 - tq;
            }
            if tp != tq {
                out.push((tp.min(tq), tp.max(tq), r.site, ri));
            }
        }
    }
    out.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.total_cmp(&y.1)));
    out
}

fn labels_from(intervals: &[(f64, f64, usize, usize)], min_len: f64) -> EdgeLabels {
    let mut merged: Vec<(f64, f64, usize)> = Vec::new();
    for &(t0, t1, s, _) in intervals {
        if t1 - t0 <= min_len {
            continue;
        }
        match merged.last_mut() {
            Some(last) if last.2 == s && t0 <= last.1 + min_len => last.1 = last.1.max(t1),
            _ => merged.push((t0, t1, s)),
        }
    }
    EdgeLabels { intervals: merged }
}

/// Builds the diagram from partitions (one per face, any order).
pub fn assemble(
    mesh: &TriangleMesh,
    num_sites: usize,
    partitions: impl IntoIterator<Item = FacePartition>,
    breaklines: &BreaklineSet,
) -> Result<SurfaceVoronoiDiagram, DiagramError> {
    let mut slots: Vec<Option<FacePartition>> = vec![None; mesh.num_faces()];
    for p in partitions {
        let f = p.face;
        slots[f] = Some(p);
    }
    let mut parts = Vec::with_capacity(mesh.num_faces());
    for (f, p) in slots.into_iter().enumerate() {
        parts.push(p.ok_or(DiagramError::MissingFace { face: f })?);
    }

    let stitch_eps = STITCH_EPS * mesh.bbox_diag();
    let mut cells: Vec<Vec<CellFragment>> = vec![Vec::new(); num_sites];
    let mut cell_area = vec![0.0; num_sites];
    let mut uncovered = 0.0;
    let mut operations = 0;
    for p in &parts {
        operations += p.operations;
        uncovered += p.uncovered_area;
        for r in &p.regions {
            let area = r.area();
            cell_area[r.site] += area;
            cells[r.site].push(CellFragment {
                face: p.face,
                polygon: r.polygon.iter().map(|q| p.frame.to_surface(q)).collect(),
                area,
            });
        }
    }

    // crossing points per shared edge, snapped when both sides agree
    let mut snapped: HashMap<(usize, usize), Vec<(f64, f64, Vec3)>> = HashMap::new();
    let mut breakpoints = Vec::new();
    let mut edge_bisectors: Vec<EdgeBisector> = Vec::new();
    let on_boundary = |v: usize| {
        mesh.vertex_faces(v)
            .iter()
            .any(|&f| mesh.face(f).iter().any(|&w| w != v && mesh.is_boundary_edge(v, w)))
    };
    let mut max_mismatch: f64 = 0.0;
    for (a, b) in mesh.edges() {
        let fs = mesh.edge_faces(a, b);
        if fs.len() != 2 || breaklines.is_blocked(a, b) {
            continue;
        }
        let (pa, pb) = (mesh.vertex(a), mesh.vertex(b));
        let len = (pb - pa).norm();
        let min_len = stitch_eps / len;
        let sides: Vec<EdgeLabels> = fs
            .iter()
            .map(|&f| {
                let j = local_edge(mesh, f, a, b);
                labels_from(&edge_intervals(mesh, &parts[f], j), min_len)
            })
            .collect();
        let (l0, l1) = (&sides[0].intervals, &sides[1].intervals);
        let at = |t: f64| pa + (pb - pa) * t;
        let seq0: Vec<usize> = l0.iter().map(|x| x.2).collect();
        let seq1: Vec<usize> = l1.iter().map(|x| x.2).collect();
        if seq0 == seq1 {
            for k in 1..l0.len() {
                let (t0, t1) = (l0[k].0, l1[k].0);
                let m = (t0 - t1).abs() * len;
                max_mismatch = max_mismatch.max(m);
                let mid = at(0.5 * (t0 + t1));
                if m > stitch_eps {
                    breakpoints.push(Breakpoint {
                        edge: (a, b),
                        position: [mid.x, mid.y, mid.z],
                        mismatch: m,
                    });
                } else {
                    snapped.entry((a, b)).or_default().push((t0, t1, mid));
                }
            }
        } else {
            let mut m = 0.0;
            for (t0, t1, s0, s1) in label_differences(l0, l1) {
                match (s0, s1) {
                    (Some(x), Some(y)) if tied_along_edge(mesh, &parts, fs, a, b, x, y) => {
                        let (p, q) = (at(t0), at(t1));
                        let end = |t: f64| (t <= 0.0 && on_boundary(a)) || (t >= 1.0 && on_boundary(b));
                        edge_bisectors.push(EdgeBisector {
                            sites: (x.min(y), x.max(y)),
                            segment: [p, q],
                            boundary: [end(t0), end(t1)],
                            face: fs[0],
                        });
                        let list = snapped.entry((a, b)).or_default();
                        list.push((t0, t0, p));
                        list.push((t1, t1, q));
                    }
                    _ => m += (t1 - t0) * len,
                }
            }
            if m > stitch_eps {
                max_mismatch = max_mismatch.max(m);
                let mid = at(0.5);
                breakpoints.push(Breakpoint {
                    edge: (a, b),
                    position: [mid.x, mid.y, mid.z],
                    mismatch: m,
                });
            }
        }
    }

    let bisectors = stitch_bisectors(mesh, &parts, &snapped, &edge_bisectors, stitch_eps);

    let has_barriers = breaklines.barrier_faces().next().is_some();
    Ok(SurfaceVoronoiDiagram {
        num_sites,
        total_area: parts.iter().map(|p| p.frame.area()).sum(),
        partitions: parts,
        cells,
        bisectors,
        cell_area,
        uncovered_area: uncovered,
        stitch_eps,
        max_edge_mismatch: max_mismatch,
        breakpoints,
        sweep: SweepStats::default(),
        envelope_operations: operations,
        fmm: None,
        blocked: breaklines.blocked_edges().collect(),
        has_barriers,
        edge_bisectors,
    })
}

fn local_edge(mesh: &TriangleMesh, f: usize, a: usize, b: usize) -> usize {
    let tri = mesh.face(f);
    (0..3)
        .find(|&j| {
            let (x, y) = (tri[j], tri[(j + 1) % 3]);
            (x == a && y == b) || (x == b && y == a)
        })
        .expect("edge belongs to face")
}

/// Length (in edge parameter) where two label sequences differ.
/// Pieces of the edge where the two sides' labels differ.
fn label_differences(
    l0: &[(f64, f64, usize)],
    l1: &[(f64, f64, usize)],
) -> Vec<(f64, f64, Option<usize>, Option<usize>)> {
    let mut cuts: Vec<f64> = l0
        .iter()
        .chain(l1)
        .flat_map(|x| [x.0, x.1])
        .chain([0.0, 1.0])
        .collect();
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();
    let label = |l: &[(f64, f64, usize)], t: f64| l.iter().find(|x| x.0 <= t && t <= x.1).map(|x| x.2);
    cuts.windows(2)
        .filter_map(|w| {
            let m = 0.5 * (w[0] + w[1]);
            let (s0, s1) = (label(l0, m), label(l1, m));
            (s0 != s1).then_some((w[0], w[1], s0, s1))
        })
        .collect()
}

/// Sites `x` and `y` are equally far from both ends of edge `(a, b)` in one
/// of the faces `fs`, so the edge itself lies on their bisector.
fn tied_along_edge(mesh: &TriangleMesh, parts: &[FacePartition], fs: &[usize], a: usize, b: usize, x: usize, y: usize) -> bool {
    let tol = 1e-9 * mesh.bbox_diag().powi(2);
    fs.iter().any(|&f| {
        let tri = mesh.face(f);
        let find = |s: usize| parts[f].triples.iter().find(|t| t.site == s);
        let (Some(tx), Some(ty)) = (find(x), find(y)) else {
            return false;
        };
        [a, b].iter().all(|v| {
            let k = tri.iter().position(|w| w == v).expect("edge vertex is a corner");
            (tx.d2[k] - ty.d2[k]).abs() <= tol
        })
    })
}

fn bits(p: &Vec3) -> [u64; 3] {
    [p.x.to_bits(), p.y.to_bits(), p.z.to_bits()]
}

fn stitch_bisectors(
    mesh: &TriangleMesh,
    parts: &[FacePartition],
    snapped: &HashMap<(usize, usize), Vec<(f64, f64, Vec3)>>,
    edge_bisectors: &[EdgeBisector],
    eps: f64,
) -> Vec<BisectorPolyline> {
    let snap = |p: &FacePartition, q: &Vec2| -> Vec3 {
        let x = p.frame.to_surface(q);
        let l = p.frame.barycentric(q);
        let tri = mesh.face(p.face);
        if let Some(k) = (0..3).find(|&k| (x - mesh.vertex(tri[k])).norm() <= eps) {
            return mesh.vertex(tri[k]);
        }
        for j in 0..3 {
            if l[(j + 2) % 3].abs() > 1e-9 {
                continue;
            }
            let (a, b) = (tri[j], tri[(j + 1) % 3]);
            let t = if a < b { l[(j + 1) % 3] } else { 1.0 - l[(j + 1) % 3] };
            let len = (mesh.vertex(a) - mesh.vertex(b)).norm();
            if let Some(list) = snapped.get(&(a.min(b), a.max(b))) {
                let hit = list.iter().find(|(t0, t1, _)| {
                    (t - t0).abs() * len <= eps || (t - t1).abs() * len <= eps
                });
                if let Some(&(_, _, mid)) = hit {
                    return mid;
                }
            }
        }
        x
    };
    // segments per site pair in face order
    let mut by_pair: BTreeMap<(usize, usize), Vec<[Vec3; 2]>> = BTreeMap::new();
    for p in parts {
        for b in &p.bisectors {
            let seg = b.segment.map(|q| snap(p, &q));
            by_pair.entry(b.sites).or_default().push(seg);
        }
    }
    for e in edge_bisectors {
        by_pair.entry(e.sites).or_default().push(e.segment);
    }
    for segs in by_pair.values_mut() {
        let mut seen = HashSet::new();
        segs.retain(|s| {
            let (p, q) = (bits(&s[0]), bits(&s[1]));
            seen.insert(if p <= q { (p, q) } else { (q, p) })
        });
    }
    let mut out = Vec::new();
    for (pair, segs) in by_pair {
        let mut at: HashMap<[u64; 3], Vec<usize>> = HashMap::new();
        for (i, s) in segs.iter().enumerate() {
            at.entry(bits(&s[0])).or_default().push(i);
            at.entry(bits(&s[1])).or_default().push(i);
        }
        let mut used = vec![false; segs.len()];
        let degree = |p: &Vec3| at.get(&bits(p)).map_or(0, |v| v.len());
        // open chains first (start at a degree-1 end), then closed loops
        let mut order: Vec<usize> = (0..segs.len()).collect();
        order.sort_by_key(|&i| {
            let open = degree(&segs[i][0]) == 1 || degree(&segs[i][1]) == 1;
            (!open, i)
        });
        for start in order {
            if used[start] {
                continue;
            }
            used[start] = true;
            let s = segs[start];
            let (first, second) = if degree(&s[1]) == 1 && degree(&s[0]) != 1 {
                (s[1], s[0])
            } else {
                (s[0], s[1])
            };
            let mut pts = vec![first, second];
            loop {
                let tail = *pts.last().expect("nonempty");
                let next = at
                    .get(&bits(&tail))
                    .and_then(|v| v.iter().copied().find(|&i| !used[i]));
                let Some(i) = next else { break };
                used[i] = true;
                let q = if bits(&segs[i][0]) == bits(&tail) {
                    segs[i][1]
                } else {
                    segs[i][0]
                };
                pts.push(q);
            }
            out.push(BisectorPolyline { sites: pair, points: pts });
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConsistenceReport {
    pub max_mismatch: f64,
    pub breakpoints: Vec<Breakpoint>,
    pub ok: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConnectivityReport {
    /// Connected components per site (0 for empty cells).
    pub components_per_site: Vec<usize>,
    pub uncovered_area: f64,
    pub coverage_rel_err: f64,
}

impl ConnectivityReport {
    /// Every nonempty cell is one region and the surface is covered within `tol`.
    pub fn ok(&self, tol: f64) -> bool {
        self.components_per_site.iter().all(|&c| c <= 1) && self.coverage_rel_err < tol
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompatibilityReport {
    pub disagreement_area: f64,
    pub relative: f64,
}

struct Dsu(Vec<usize>);

impl Dsu {
    fn new(n: usize) -> Self {
        Self((0..n).collect())
    }
    fn find(&mut self, x: usize) -> usize {
        let mut r = x;
        while self.0[r] != r {
            r = self.0[r];
        }
        let mut x = x;
        while self.0[x] != r {
            let n = self.0[x];
            self.0[x] = r;
            x = n;
        }
        r
    }
    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            self.0[ra.max(rb)] = ra.min(rb);
        }
    }
}

impl SurfaceVoronoiDiagram {
    pub fn coverage_rel_err(&self) -> f64 {
        let covered: f64 = self.cell_area.iter().sum();
        (covered - self.total_area).abs() / self.total_area
    }

    /// Owner of the face point with barycentric coordinates `bary`.
    pub fn label_at(&self, face: usize, bary: [f64; 3]) -> Option<usize> {
        let part = &self.partitions[face];
        let p = part.frame.points();
        let q = p[0] * bary[0] + p[1] * bary[1] + p[2] * bary[2];
        part.label_at(&q)
    }

    pub fn check_consistence(&self) -> ConsistenceReport {
        ConsistenceReport {
            max_mismatch: self.max_edge_mismatch,
            breakpoints: self.breakpoints.clone(),
            ok: self.breakpoints.is_empty(),
        }
    }

    /// Connected components of each site's fragments, joined across shared
    /// edges (overlapping intervals) and, without breaklines, shared vertices.
    /// Union-find over all regions joined across shared edges (and shared
    /// vertices when nothing is blocked), with per-face region offsets.
    fn region_components(&self, mesh: &TriangleMesh) -> (Vec<usize>, Dsu) {
        let mut offsets = Vec::with_capacity(self.partitions.len() + 1);
        let mut total = 0;
        for p in &self.partitions {
            offsets.push(total);
            total += p.regions.len();
        }
        let mut dsu = Dsu::new(total);
        let blocked = |a: usize, b: usize| {
            let k = (a.min(b), a.max(b));
            self.blocked.binary_search(&k).is_ok()
        };
        for (a, b) in mesh.edges() {
            let fs = mesh.edge_faces(a, b);
            if fs.len() != 2 || blocked(a, b) {
                continue;
            }
            let len = (mesh.vertex(a) - mesh.vertex(b)).norm();
            let min_len = self.stitch_eps / len;
            let (f, g) = (fs[0], fs[1]);
            let i0 = edge_intervals(mesh, &self.partitions[f], local_edge(mesh, f, a, b));
            let i1 = edge_intervals(mesh, &self.partitions[g], local_edge(mesh, g, a, b));
            for x in &i0 {
                for y in &i1 {
                    if x.2 == y.2 && x.1.min(y.1) - x.0.max(y.0) > min_len {
                        dsu.union(offsets[f] + x.3, offsets[g] + y.3);
                    }
                }
            }
        }
        if self.blocked.is_empty() && !self.has_barriers {
            let mut at_vertex: HashMap<(usize, usize), usize> = HashMap::new();
            for (f, p) in self.partitions.iter().enumerate() {
                let tri = mesh.face(f);
                for (ri, r) in p.regions.iter().enumerate() {
                    for k in 0..3 {
                        let c = p.frame.point(k);
                        let tol = 1e-9 * (p.frame.point((k + 1) % 3) - c).norm();
                        if r.polygon.iter().any(|q| (q - c).norm() <= tol) {
                            let id = offsets[f] + ri;
                            match at_vertex.get(&(tri[k], r.site)) {
                                Some(&o) => dsu.union(o, id),
                                None => {
                                    at_vertex.insert((tri[k], r.site), id);
                                }
                            }
                        }
                    }
                }
            }
        }
        (offsets, dsu)
    }

    /// `(face, site)` pairs of regions outside their site's home component:
    /// the one touching a seed face, else the largest.
    pub fn detached_regions(&self, mesh: &TriangleMesh, sites: &SiteSet) -> Vec<(usize, usize)> {
        let (offsets, mut dsu) = self.region_components(mesh);
        let mut area: BTreeMap<(usize, usize), f64> = BTreeMap::new();
        for (f, p) in self.partitions.iter().enumerate() {
            for (ri, r) in p.regions.iter().enumerate() {
                *area.entry((r.site, dsu.find(offsets[f] + ri))).or_default() += r.area();
            }
        }
        let mut home: Vec<Option<(f64, usize)>> = vec![None; self.num_sites];
        for site in sites.iter() {
            for &f in &site.seed_faces {
                for (ri, r) in self.partitions[f].regions.iter().enumerate() {
                    let a = r.area();
                    if r.site == site.id && home[site.id].is_none_or(|(b, _)| a > b) {
                        home[site.id] = Some((a, dsu.find(offsets[f] + ri)));
                    }
                }
            }
        }
        let seeded: Vec<bool> = home.iter().map(Option::is_some).collect();
        for (&(s, root), &a) in &area {
            if !seeded[s] && home[s].is_none_or(|(b, _)| a > b) {
                home[s] = Some((a, root));
            }
        }
        let mut out = Vec::new();
        for (f, p) in self.partitions.iter().enumerate() {
            for (ri, r) in p.regions.iter().enumerate() {
                if home[r.site].is_some_and(|(_, h)| h != dsu.find(offsets[f] + ri)) {
                    out.push((f, r.site));
                }
            }
        }
        out
    }

    pub fn check_connectedness(&self, mesh: &TriangleMesh) -> ConnectivityReport {
        let (offsets, mut dsu) = self.region_components(mesh);
        let mut roots: Vec<Vec<usize>> = vec![Vec::new(); self.num_sites];
        for (f, p) in self.partitions.iter().enumerate() {
            for (ri, r) in p.regions.iter().enumerate() {
                let root = dsu.find(offsets[f] + ri);
                roots[r.site].push(root);
            }
        }
        let components_per_site = roots
            .into_iter()
            .map(|mut r| {
                r.sort_unstable();
                r.dedup();
                r.len()
            })
            .collect();
        ConnectivityReport {
            components_per_site,
            uncovered_area: self.uncovered_area,
            coverage_rel_err: self.coverage_rel_err(),
        }
    }

    /// Exact area where cell labels differ from the planar (power) Voronoi
    /// diagram of the point sites. With `power` the weights enter as `|x - p|^2 - w`.
    pub fn check_compatibility(
        &self,
        mesh: &TriangleMesh,
        sites: &SiteSet,
        power: bool,
    ) -> Result<CompatibilityReport, DiagramError> {
        let basis = mesh.planar_basis().ok_or(DiagramError::NonPlanarInput)?;
        if sites.iter().any(|s| !s.is_point()) {
            return Err(DiagramError::NonPlanarInput);
        }
        let pts: Vec<Vec2> = sites.iter().map(|s| basis.project(&s.anchor)).collect();
        let w: Vec<f64> = sites
            .iter()
            .map(|s| if power { s.weight } else { 0.0 })
            .collect();
        let mut wrong = 0.0;
        for part in &self.partitions {
            for r in &part.regions {
                let mut poly: Vec<Vec2> = r
                    .polygon
                    .iter()
                    .map(|q| basis.project(&part.frame.to_surface(q)))
                    .collect();
                if polygon_area(&poly) < 0.0 {
                    poly.reverse();
                }
                let area = polygon_area(&poly);
                let s = r.site;
                let mut inside = poly;
                for t in 0..pts.len() {
                    if t == s || inside.len() < 3 {
                        continue;
                    }
                    // |x - p_s|^2 - w_s <= |x - p_t|^2 - w_t
                    let n = (pts[t] - pts[s]) * 2.0;
                    let c = pts[t].norm_squared() - pts[s].norm_squared() - w[t] + w[s];
                    inside = clip_polygon(&inside, &n, c);
                }
                let kept = if inside.len() >= 3 { polygon_area(&inside) } else { 0.0 };
                wrong += (area - kept).max(0.0);
            }
        }
        Ok(CompatibilityReport {
            disagreement_area: wrong,
            relative: wrong / self.total_area,
        })
    }

    /// Dual triangulation from bisector junctions.
    pub fn extract_dual(&self, mesh: &TriangleMesh, sites: &SiteSet) -> DualMesh {
        let eps = 10.0 * self.stitch_eps;
        // endpoints of bisector segments: position, pair, face, on boundary
        struct End {
            p: Vec3,
            pair: (usize, usize),
            face: usize,
            boundary: bool,
        }
        let mut ends = Vec::new();
        for part in &self.partitions {
            let nb = mesh.face_neighbors(part.face);
            for b in &part.bisectors {
                for q in &b.segment {
                    let l = part.frame.barycentric(q);
                    let boundary = (0..3).any(|j| nb[j].is_none() && l[(j + 2) % 3].abs() <= 1e-9);
                    ends.push(End {
                        p: part.frame.to_surface(q),
                        pair: b.sites,
                        face: part.face,
                        boundary,
                    });
                }
            }
        }
        for e in &self.edge_bisectors {
            for k in 0..2 {
                ends.push(End {
                    p: e.segment[k],
                    pair: e.sites,
                    face: e.face,
                    boundary: e.boundary[k],
                });
            }
        }
        let cell = |p: &Vec3| (p / eps).map(|x| x.floor() as i64);
        let mut grid: HashMap<(i64, i64, i64), Vec<usize>> = HashMap::new();
        let mut cluster_of = vec![usize::MAX; ends.len()];
        let mut clusters: Vec<Vec<usize>> = Vec::new();
        for (i, e) in ends.iter().enumerate() {
            let c = cell(&e.p);
            let mut found = None;
            'search: for dx in -1..=1 {
                for dy in -1..=1 {
                    for dz in -1..=1 {
                        if let Some(list) = grid.get(&(c.x + dx, c.y + dy, c.z + dz)) {
                            for &j in list {
                                if (ends[j].p - e.p).norm() <= eps {
                                    found = Some(cluster_of[j]);
                                    break 'search;
                                }
                            }
                        }
                    }
                }
            }
            let k = found.unwrap_or_else(|| {
                clusters.push(Vec::new());
                clusters.len() - 1
            });
            cluster_of[i] = k;
            clusters[k].push(i);
            grid.entry((c.x, c.y, c.z)).or_default().push(i);
        }

        let boundary_cell: Vec<bool> = {
            let mut b = vec![false; self.num_sites];
            for part in &self.partitions {
                let nb = mesh.face_neighbors(part.face);
                for r in &part.regions {
                    let touches = r.polygon.iter().any(|q| {
                        let l = part.frame.barycentric(q);
                        (0..3).any(|j| nb[j].is_none() && l[(j + 2) % 3].abs() <= 1e-9)
                    });
                    b[r.site] |= touches;
                }
            }
            b
        };

        let mut dual = DualMesh {
            vertices: sites.iter().map(|s| s.anchor).collect(),
            faces: Vec::new(),
            junctions: Vec::new(),
        };
        for members in clusters {
            let mut ids: Vec<usize> = members
                .iter()
                .flat_map(|&i| [ends[i].pair.0, ends[i].pair.1])
                .collect();
            ids.sort_unstable();
            ids.dedup();
            if ids.len() < 3 {
                continue;
            }
            let first = &ends[members[0]];
            let p = first.p;
            let on_boundary = members.iter().any(|&i| ends[i].boundary);
            let kind = if on_boundary {
                JunctionKind::Boundary
            } else if ids.len() > 3 {
                JunctionKind::NonGeneric
            } else if ids.iter().any(|&s| boundary_cell[s]) {
                JunctionKind::BoundaryAdjacent
            } else {
                JunctionKind::Triple
            };
            if kind != JunctionKind::Boundary {
                let n = mesh.face_normal(first.face);
                let order = angular_order(&ids, &dual.vertices, &p, &n);
                let start = order
                    .iter()
                    .position(|&s| s == ids[0])
                    .expect("smallest id is in the order");
                let ring: Vec<usize> = (0..order.len()).map(|k| order[(start + k) % order.len()]).collect();
                for k in 1..ring.len() - 1 {
                    dual.faces.push([ring[0], ring[k], ring[k + 1]]);
                }
            }
            dual.junctions.push(Junction {
                position: p,
                sites: ids,
                kind,
            });
        }
        dual
    }

    /// Every dual edge joins two sites that share a bisector.
    pub fn dual_edges_supported(&self, dual: &DualMesh) -> bool {
        let mut pairs: Vec<(usize, usize)> = self.bisectors.iter().map(|b| b.sites).collect();
        pairs.sort_unstable();
        pairs.dedup();
        dual.edges()
            .iter()
            .all(|e| pairs.binary_search(e).is_ok())
    }

    pub fn diagnostics(&self, mesh: &TriangleMesh) -> Diagnostics {
        let conn = self.check_connectedness(mesh);
        let mut histogram = BTreeMap::new();
        for c in cell_source_histogram(&self.partitions) {
            *histogram.entry(c).or_insert(0) += 1;
        }
        Diagnostics {
            coverage_rel_err: conn.coverage_rel_err,
            max_edge_mismatch: self.max_edge_mismatch,
            components_per_site: conn.components_per_site,
            histogram,
        }
    }

    /// Fragments fan-triangulated, grouped per site, one material per site.
    pub fn cells_obj(&self, mtl_name: &str) -> String {
        let mut w = ObjWriter::new();
        w.mtllib(mtl_name);
        for (s, frags) in self.cells.iter().enumerate() {
            if frags.is_empty() {
                continue;
            }
            w.group(&format!("site_{s}"));
            w.usemtl(&format!("site_{s}"));
            for frag in frags {
                let ids: Vec<usize> = frag.polygon.iter().map(|p| w.vertex(p)).collect();
                for k in 1..ids.len().saturating_sub(1) {
                    w.face(&[ids[0], ids[k], ids[k + 1]]);
                }
            }
        }
        w.finish()
    }

    pub fn cells_mtl(&self) -> String {
        let mut out = String::new();
        for s in 0..self.num_sites {
            let [r, g, b] = site_color(s);
            let _ = writeln!(out, "newmtl site_{s}\nKd {r:.4} {g:.4} {b:.4}\n");
        }
        out
    }

    pub fn bisectors_obj(&self) -> String {
        let mut w = ObjWriter::new();
        for b in &self.bisectors {
            w.group(&format!("bisector_{}_{}", b.sites.0, b.sites.1));
            let ids: Vec<usize> = b.points.iter().map(|p| w.vertex(p)).collect();
            w.line(&ids);
        }
        w.finish()
    }

    /// Writes `cells.obj`, `cells.mtl`, `bisectors.obj` and `diagnostics.json` into `dir`.
    pub fn write_outputs(&self, mesh: &TriangleMesh, dir: &Path) -> Result<(), DiagramError> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("cells.obj"), self.cells_obj("cells.mtl"))?;
        std::fs::write(dir.join("cells.mtl"), self.cells_mtl())?;
        std::fs::write(dir.join("bisectors.obj"), self.bisectors_obj())?;
        let diag = serde_json::to_string_pretty(&self.diagnostics(mesh))
            .map_err(|e| std::io::Error::new(std::io::ErrorKind::Other, e))?;
        std::fs::write(dir.join("diagnostics.json"), diag + "\n")?;
        Ok(())
    }
}

fn angular_order(ids: &[usize], anchors: &[Vec3], center: &Vec3, normal: &Vec3) -> Vec<usize> {
    let n = normal.normalize();
    let helper = if n.x.abs() < 0.9 { Vec3::x() } else { Vec3::y() };
    let u = n.cross(&helper).normalize();
    let v = n.cross(&u);
    let mut with_angle: Vec<(f64, usize)> = ids
        .iter()
        .map(|&s| {
            let d = anchors[s] - center;
            (d.dot(&v).atan2(d.dot(&u)), s)
        })
        .collect();
    with_angle.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    with_angle.into_iter().map(|(_, s)| s).collect()
}

fn site_color(s: usize) -> [f64; 3] {
    let h = (s as f64 * 0.618_033_988_749_895).fract() * 6.0;
    let x = 1.0 - (h % 2.0 - 1.0).abs();
    let (r, g, b) = match h as usize {
        0 => (1.0, x, 0.0),
        1 => (x, 1.0, 0.0),
        2 => (0.0, 1.0, x),
        3 => (0.0, x, 1.0),
        4 => (x, 0.0, 1.0),
        _ => (1.0, 0.0, x),
    };
    [0.25 + 0.7 * r, 0.25 + 0.7 * g, 0.25 + 0.7 * b]
}

#[derive(Debug, Clone, Serialize)]
pub struct Diagnostics {
    pub coverage_rel_err: f64,
    pub max_edge_mismatch: f64,
    pub components_per_site: Vec<usize>,
    /// Number of faces per count of contributing sites.
    pub histogram: BTreeMap<usize, usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum JunctionKind {
    /// Three interior cells meet.
    Triple,
    /// Three cells meet but at least one touches the mesh boundary.
    BoundaryAdjacent,
    /// Four or more cells meet; resolved as a fan from the smallest site id.
    NonGeneric,
    /// The junction lies on the mesh boundary; no dual face.
    Boundary,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Junction {
    pub position: Vec3,
    pub sites: Vec<usize>,
    pub kind: JunctionKind,
}

#[derive(Debug, Clone)]
pub struct DualMesh {
    /// Site positions (one vertex per site).
    pub vertices: Vec<Vec3>,
    pub faces: Vec<[usize; 3]>,
    pub junctions: Vec<Junction>,
}

/// Edge-incidence summary of a dual mesh.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ManifoldReport {
    pub edges: usize,
    pub boundary_edges: usize,
    /// Edges used by more than two faces.
    pub nonmanifold_edges: usize,
    /// Edges traversed twice in the same direction.
    pub misoriented_edges: usize,
    pub duplicate_faces: usize,
}

impl ManifoldReport {
    pub fn is_manifold(&self) -> bool {
        self.nonmanifold_edges == 0 && self.misoriented_edges == 0 && self.duplicate_faces == 0
    }
}

impl DualMesh {
    /// Undirected edges `(a, b)` with `a < b`, sorted.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut e: Vec<(usize, usize)> = self
            .faces
            .iter()
            .flat_map(|f| (0..3).map(move |k| (f[k].min(f[(k + 1) % 3]), f[k].max(f[(k + 1) % 3]))))
            .collect();
        e.sort_unstable();
        e.dedup();
        e
    }

    pub fn non_generic(&self) -> impl Iterator<Item = &Junction> {
        self.junctions.iter().filter(|j| j.kind == JunctionKind::NonGeneric)
    }

    pub fn manifold_report(&self) -> ManifoldReport {
        let mut directed: BTreeMap<(usize, usize), usize> = BTreeMap::new();
        let mut faces: Vec<[usize; 3]> = Vec::with_capacity(self.faces.len());
        for f in &self.faces {
            for k in 0..3 {
                *directed.entry((f[k], f[(k + 1) % 3])).or_insert(0) += 1;
            }
            let mut s = *f;
            s.sort_unstable();
            faces.push(s);
        }
        faces.sort_unstable();
        let before = faces.len();
        faces.dedup();
        let duplicate_faces = before - faces.len();
        let mut undirected: BTreeMap<(usize, usize), usize> = BTreeMap::new();
        for (&(a, b), &c) in &directed {
            *undirected.entry((a.min(b), a.max(b))).or_insert(0) += c;
        }
        ManifoldReport {
            edges: undirected.len(),
            boundary_edges: undirected.values().filter(|&&c| c == 1).count(),
            nonmanifold_edges: undirected.values().filter(|&&c| c > 2).count(),
            misoriented_edges: directed.values().filter(|&&c| c > 1).count(),
            duplicate_faces,
        }
    }

    pub fn to_obj(&self) -> String {
        let mut w = ObjWriter::new();
        let ids: Vec<usize> = self.vertices.iter().map(|p| w.vertex(p)).collect();
        for f in &self.faces {
            w.face(&[ids[f[0]], ids[f[1]], ids[f[2]]]);
        }
        w.finish()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::solvers::SiteSpec;

    fn rect(nx: usize, ny: usize, w: f64, h: f64) -> TriangleMesh {
        let mut v = Vec::new();
        for j in 0..=ny {
            for i in 0..=nx {
                v.push(Vec3::new(w * i as f64 / nx as f64, h * j as f64 / ny as f64, 0.0));
            }
        }
        let id = |i: usize, j: usize| j * (nx + 1) + i;
        let mut f = Vec::new();
        for j in 0..ny {
            for i in 0..nx {
                f.push([id(i, j), id(i + 1, j), id(i + 1, j + 1)]);
                f.push([id(i, j), id(i + 1, j + 1), id(i, j + 1)]);
            }
        }
        TriangleMesh::new(v, f).unwrap()
    }

    fn run(mesh: &TriangleMesh, specs: Vec<SiteSpec>) -> (SiteSet, SurfaceVoronoiDiagram) {
        let sites = SiteSet::new(mesh, specs).unwrap();
        let vd = compute_diagram(mesh, &sites, &Solver::euclidean(), &BreaklineSet::empty(), 1).unwrap();
        (sites, vd)
    }

    #[test]
    fn one_site_owns_everything() {
        let m = rect(4, 3, 2.0, 1.0);
        let (_, vd) = run(&m, vec![SiteSpec::point(5, [0.2, 0.3, 0.5])]);
        assert!(vd.bisectors.is_empty());
        assert!((vd.cell_area[0] - 2.0).abs() < 1e-12);
        assert_eq!(vd.check_connectedness(&m).components_per_site, vec![1]);
        assert!(cell_source_histogram(&vd.partitions).iter().all(|&c| c == 1));
    }

    #[test]
    fn two_sites_straight_bisector() {
        let m = rect(6, 3, 2.0, 1.0);
        // faces 0 and 11 lie in the bottom row at opposite ends
        let (sites, vd) = run(
            &m,
            vec![SiteSpec::point(0, [1.0 / 3.0; 3]), SiteSpec::point(11, [1.0 / 3.0; 3])],
        );
        assert_eq!(vd.bisectors.len(), 1);
        let mid_x = 0.5 * (sites.get(0).anchor.x + sites.get(1).anchor.x);
        let dir = sites.get(1).anchor - sites.get(0).anchor;
        for p in &vd.bisectors[0].points {
            let off = (p - Vec3::new(mid_x, 0.5 * (sites.get(0).anchor.y + sites.get(1).anchor.y), 0.0)).dot(&dir);
            assert!(off.abs() < 1e-12);
        }
        assert!(vd.check_consistence().ok);
        assert!(vd.check_compatibility(&m, &sites, false).unwrap().relative < 1e-12);
    }

    #[test]
    fn missing_face() {
        let m = rect(1, 1, 1.0, 1.0);
        let err = assemble(&m, 1, Vec::new(), &BreaklineSet::empty()).unwrap_err();
        assert!(matches!(err, DiagramError::MissingFace { face: 0 }));
    }

    #[test]
    fn perturbed_partition_breakpoint() {
        let m = rect(4, 4, 1.0, 1.0);
        let (_, vd) = run(
            &m,
            vec![SiteSpec::point(0, [0.6, 0.2, 0.2]), SiteSpec::point(31, [0.2, 0.2, 0.6])],
        );
        assert!(vd.breakpoints.is_empty());
        // shift every region vertex of one crossed face
        let mut parts = vd.partitions.clone();
        let f = parts
            .iter()
            .position(|p| p.regions.len() == 2)
            .expect("some face is split");
        let fr = parts[f].frame;
        let c = (fr.point(0) + fr.point(1) + fr.point(2)) / 3.0;
        for r in &mut parts[f].regions {
            for q in &mut r.polygon {
                *q = c + (*q - c) * 0.999;
            }
        }
        let bad = assemble(&m, 2, parts, &BreaklineSet::empty()).unwrap();
        assert!(!bad.check_consistence().ok);
    }

    #[test]
    fn teleported_fragment_two_components() {
        let m = rect(6, 6, 1.0, 1.0);
        let (_, vd) = run(
            &m,
            vec![SiteSpec::point(0, [1.0 / 3.0; 3]), SiteSpec::point(71, [1.0 / 3.0; 3])],
        );
        assert_eq!(vd.check_connectedness(&m).components_per_site, vec![1, 1]);
        let mut parts = vd.partitions.clone();
        // relabel a single-owner face deep inside site 1's cell as site 0
        let f = (0..m.num_faces())
            .rev()
            .find(|&f| parts[f].regions.len() == 1 && parts[f].regions[0].site == 1 && f < 70)
            .unwrap();
        parts[f].regions[0].site = 0;
        let bad = assemble(&m, 2, parts, &BreaklineSet::empty()).unwrap();
        assert_eq!(bad.check_connectedness(&m).components_per_site[0], 2);
    }

    #[test]
    fn three_sites_one_dual_triangle() {
        let m = rect(8, 8, 1.0, 1.0);
        let loc = |x: f64, y: f64| {
            let i = (x * 8.0) as usize;
            let j = (y * 8.0) as usize;
            let fx = x * 8.0 - i as f64;
            let fy = y * 8.0 - j as f64;
            if fx >= fy {
                SiteSpec::point(2 * (j * 8 + i), [1.0 - fx, fx - fy, fy])
            } else {
                SiteSpec::point(2 * (j * 8 + i) + 1, [1.0 - fy, fx, fy - fx])
            }
        };
        let (sites, vd) = run(&m, vec![loc(0.3, 0.2), loc(0.8, 0.3), loc(0.55, 0.5)]);
        let dual = vd.extract_dual(&m, &sites);
        assert_eq!(dual.faces.len(), 1);
        assert!(vd.dual_edges_supported(&dual));
        let f = dual.faces[0];
        let n = (dual.vertices[f[1]] - dual.vertices[f[0]]).cross(&(dual.vertices[f[2]] - dual.vertices[f[0]]));
        assert!(n.z > 0.0);
    }
}
