//! Over-propagation of sites across faces.
//!
//! Every site spreads from its seed faces through edge- and vertex-adjacent
//! faces in order of increasing distance. On arrival at a face the site's
//! squared-distance triple is compared with the triples already stored
//! there: if some stored triple is strictly smaller at all three corners the
//! newcomer is dropped and does not spread further; otherwise it is stored
//! (evicting the triples it dominates) and spreads on. Survivor lists are
//! therefore antichains under the strict componentwise order, and a site
//! stops spreading exactly where it can no longer own any part of a face.

use std::cmp::{Ordering, Reverse};
use std::collections::{BTreeSet, BinaryHeap, HashMap};

use smallvec::SmallVec;
use thiserror::Error;

use crate::breaklines::{BreaklineError, BreaklineSet};
use crate::envelope::{side_signature, Barrier};
use crate::mesh::{TriangleMesh, UnfoldFrame, Vec2, Vec3};
use crate::solvers::{
    fmm_update, ClosedForm, FmmField, Metric, Site, SiteGeometry, SiteSet, Solver, SolverError,
    SquaredDistance,
};

/// Totally ordered `f64` for priority queues.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Key(pub f64);

impl Eq for Key {}

impl PartialOrd for Key {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Key {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0)
    }
}

/// Squared (weight-shifted) distances from one site to the three corners of
/// a face, in the face's vertex order. `side` is the breakline side
/// signature inside the face (0 without barriers).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DistanceTriple {
    pub site: usize,
    pub d2: [f64; 3],
    pub side: u32,
}

/// Strict componentwise order; triples on different barrier sides never compare.
#[inline]
pub fn dominates(a: &DistanceTriple, b: &DistanceTriple) -> bool {
    a.side == b.side && a.d2[0] < b.d2[0] && a.d2[1] < b.d2[1] && a.d2[2] < b.d2[2]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EventTarget {
    Face(usize),
    Vertex(usize),
}

/// Arrival of a site at a face (face sweep) or a vertex (fast marching).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PropagationEvent {
    pub site: usize,
    pub target: EventTarget,
    pub key: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Insertion {
    Dominated,
    Inserted { evicted: usize },
}

/// Surviving triples of one face, in arrival order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FaceSourceList {
    pub triples: Vec<DistanceTriple>,
}

impl FaceSourceList {
    pub fn insert(&mut self, t: DistanceTriple) -> Insertion {
        if self.triples.iter().any(|s| dominates(s, &t)) {
            return Insertion::Dominated;
        }
        let before = self.triples.len();
        self.triples.retain(|s| !dominates(&t, s));
        let evicted = before - self.triples.len();
        self.triples.push(t);
        Insertion::Inserted { evicted }
    }

    pub fn len(&self) -> usize {
        self.triples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triples.is_empty()
    }

    pub fn sites(&self) -> Vec<usize> {
        let mut s: Vec<usize> = self.triples.iter().map(|t| t.site).collect();
        s.sort_unstable();
        s.dedup();
        s
    }

    /// True when no stored triple dominates another.
    pub fn is_antichain(&self) -> bool {
        self.triples
            .iter()
            .all(|a| self.triples.iter().all(|b| !dominates(a, b)))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepStats {
    pub events_pushed: u64,
    pub events_popped: u64,
    pub dominated: u64,
    pub evicted: u64,
    pub max_survivors: usize,
    /// Popped keys never decreased.
    pub monotone_keys: bool,
}

impl Default for SweepStats {
    fn default() -> Self {
        Self {
            events_pushed: 0,
            events_popped: 0,
            dominated: 0,
            evicted: 0,
            max_survivors: 0,
            monotone_keys: true,
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum PropagationError {
    #[error("no sites to propagate")]
    EmptySiteSet,
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Breakline(#[from] BreaklineError),
}

/// Result of a sweep: per-face survivor lists plus (for fast marching) the
/// per-site vertex distances computed on the way.
#[derive(Debug, Clone)]
pub struct Propagation {
    pub lists: Vec<FaceSourceList>,
    pub stats: SweepStats,
    pub fmm: Option<FmmField>,
}

impl Propagation {
    pub fn total_triples(&self) -> usize {
        self.lists.iter().map(|l| l.len()).sum()
    }
}

/// Runs the sweep configured by `solver`.
pub fn over_propagate(
    mesh: &TriangleMesh,
    sites: &SiteSet,
    solver: &Solver,
    breaklines: &BreaklineSet,
) -> Result<Propagation, PropagationError> {
    solver.validate()?;
    match solver.metric {
        Metric::Euclidean => {
            let dist = ClosedForm::new(mesh, solver.density.as_ref());
            over_propagate_with(mesh, sites, &dist, solver.power, breaklines)
        }
        Metric::FastMarching => {
            if !breaklines.is_empty() {
                return Err(SolverError::Unsupported(
                    "breaklines are not supported with fast marching",
                )
                .into());
            }
            fmm_sweep(mesh, sites, solver.power)
        }
    }
}

/// Face sweep with an arbitrary closed-form distance.
pub fn over_propagate_with(
    mesh: &TriangleMesh,
    sites: &SiteSet,
    dist: &dyn SquaredDistance,
    power: bool,
    breaklines: &BreaklineSet,
) -> Result<Propagation, PropagationError> {
    over_propagate_excluding(mesh, sites, dist, power, breaklines, BTreeSet::new())
}

/// Face sweep in which site `s` never enters face `f` for `(f, s)` in `excluded`.
pub fn over_propagate_excluding(
    mesh: &TriangleMesh,
    sites: &SiteSet,
    dist: &dyn SquaredDistance,
    power: bool,
    breaklines: &BreaklineSet,
    excluded: BTreeSet<(usize, usize)>,
) -> Result<Propagation, PropagationError> {
    let mut sweep = FaceSweep::new_excluding(mesh, sites, dist, power, breaklines, excluded)?;
    while sweep.step()?.is_some() {}
    Ok(sweep.finish())
}

#[derive(Debug, Clone, Copy)]
struct Pending {
    key: Key,
    seq: u64,
    site: u32,
    face: u32,
    side: u32,
    d2: [f64; 3],
}

impl PartialEq for Pending {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Pending {}

impl PartialOrd for Pending {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Pending {
    fn cmp(&self, other: &Self) -> Ordering {
        (self.key, self.seq).cmp(&(other.key, other.seq))
    }
}

struct FaceBarriers {
    frame: UnfoldFrame,
    lines: Vec<Barrier>,
    tol: f64,
}

/// Priority-queue sweep over (site, face) events.
pub struct FaceSweep<'a> {
    mesh: &'a TriangleMesh,
    sites: &'a SiteSet,
    dist: &'a dyn SquaredDistance,
    power: bool,
    breaklines: &'a BreaklineSet,
    barriers: HashMap<usize, FaceBarriers>,
    excluded: BTreeSet<(usize, usize)>,
    cache: Vec<SmallVec<[(u32, f64); 4]>>,
    queued: Vec<SmallVec<[(u32, u32); 4]>>,
    lists: Vec<FaceSourceList>,
    heap: BinaryHeap<Reverse<Pending>>,
    seq: u64,
    last_key: f64,
    stats: SweepStats,
}

impl<'a> FaceSweep<'a> {
    /// Seeds every site on its seed faces.
    pub fn new(
        mesh: &'a TriangleMesh,
        sites: &'a SiteSet,
        dist: &'a dyn SquaredDistance,
        power: bool,
        breaklines: &'a BreaklineSet,
    ) -> Result<Self, PropagationError> {
        Self::new_excluding(mesh, sites, dist, power, breaklines, BTreeSet::new())
    }

    /// Like [`FaceSweep::new`], skipping the `(face, site)` pairs in `excluded`.
    pub fn new_excluding(
        mesh: &'a TriangleMesh,
        sites: &'a SiteSet,
        dist: &'a dyn SquaredDistance,
        power: bool,
        breaklines: &'a BreaklineSet,
        excluded: BTreeSet<(usize, usize)>,
    ) -> Result<Self, PropagationError> {
        if sites.is_empty() {
            return Err(PropagationError::EmptySiteSet);
        }
        breaklines.check_sites(mesh, sites)?;
        let mut barriers = HashMap::new();
        for f in breaklines.barrier_faces() {
            if let Ok(frame) = mesh.unfold(f) {
                let lines = breaklines.barriers(&frame);
                if !lines.is_empty() {
                    let [a, b, c] = *frame.points();
                    let tol = 1e-9 * (a - b).norm().max((b - c).norm()).max((a - c).norm());
                    barriers.insert(f, FaceBarriers { frame, lines, tol });
                }
            }
        }
        let mut sweep = Self {
            mesh,
            sites,
            dist,
            power,
            breaklines,
            barriers,
            excluded,
            cache: vec![SmallVec::new(); mesh.num_vertices()],
            queued: vec![SmallVec::new(); mesh.num_faces()],
            lists: vec![FaceSourceList::default(); mesh.num_faces()],
            heap: BinaryHeap::new(),
            seq: 0,
            last_key: f64::NEG_INFINITY,
            stats: SweepStats::default(),
        };
        for site in sites.iter() {
            for &f in &site.seed_faces {
                let entry = match &site.geometry {
                    SiteGeometry::Point { .. } => site.anchor,
                    SiteGeometry::Curve(_) => site.closest_point(&mesh.face_centroid(f)),
                };
                sweep.push(site.id, f, &entry, 0.0)?;
            }
        }
        Ok(sweep)
    }

    fn squared(&mut self, site: &Site, v: usize) -> Result<f64, SolverError> {
        if let Some(&(_, d)) = self.cache[v].iter().find(|(s, _)| *s as usize == site.id) {
            return Ok(d);
        }
        let d = self.dist.squared_distance(site, v)?;
        self.cache[v].push((site.id as u32, d));
        Ok(d)
    }

    fn side_at(&self, face: usize, p: &Vec3) -> u32 {
        match self.barriers.get(&face) {
            Some(b) => side_signature(&b.lines, &b.frame.to_frame(p)),
            None => 0,
        }
    }

    fn push(&mut self, site: usize, face: usize, entry: &Vec3, parent: f64) -> Result<(), SolverError> {
        if self.excluded.contains(&(face, site)) {
            return Ok(());
        }
        let side = self.side_at(face, entry);
        if self.queued[face]
            .iter()
            .any(|&(s, sd)| s as usize == site && sd == side)
        {
            return Ok(());
        }
        self.queued[face].push((site as u32, side));
        let sites = self.sites;
        let s = sites.get(site);
        let shift = if self.power { s.weight } else { 0.0 };
        let tri = self.mesh.face(face);
        let mut d2 = [0.0; 3];
        let mut root = f64::INFINITY;
        for k in 0..3 {
            let raw = self.squared(s, tri[k])?;
            root = root.min(raw.max(0.0).sqrt());
            d2[k] = raw - shift;
        }
        self.heap.push(Reverse(Pending {
            key: Key(root.max(parent)),
            seq: self.seq,
            site: site as u32,
            face: face as u32,
            side,
            d2,
        }));
        self.seq += 1;
        self.stats.events_pushed += 1;
        Ok(())
    }

    /// Processes the next event; `None` when the queue is exhausted.
    pub fn step(&mut self) -> Result<Option<PropagationEvent>, PropagationError> {
        let Some(Reverse(ev)) = self.heap.pop() else {
            return Ok(None);
        };
        self.stats.events_popped += 1;
        if ev.key.0 < self.last_key {
            self.stats.monotone_keys = false;
        }
        self.last_key = ev.key.0;
        let (site, face) = (ev.site as usize, ev.face as usize);
        let event = PropagationEvent {
            site,
            target: EventTarget::Face(face),
            key: ev.key.0,
        };
        let triple = DistanceTriple {
            site,
            d2: ev.d2,
            side: ev.side,
        };
        match self.lists[face].insert(triple) {
            Insertion::Dominated => {
                self.stats.dominated += 1;
                return Ok(Some(event));
            }
            Insertion::Inserted { evicted } => {
                self.stats.evicted += evicted as u64;
                self.stats.max_survivors = self.stats.max_survivors.max(self.lists[face].len());
            }
        }
        self.expand(site, face, ev.side, ev.key.0)?;
        Ok(Some(event))
    }

    /// Pushes edge neighbors across unblocked edges, then the faces around each corner.
    fn expand(&mut self, site: usize, g: usize, side: u32, key: f64) -> Result<(), SolverError> {
        let mesh = self.mesh;
        let tri = mesh.face(g);
        for j in 0..3 {
            let (a, b) = (tri[j], tri[(j + 1) % 3]);
            if self.breaklines.is_blocked(a, b) {
                continue;
            }
            let Some(f) = mesh.face_neighbor(g, j) else {
                continue;
            };
            let entry = match self.exit_interval(g, side, j) {
                Some(p) => p,
                None => continue,
            };
            self.push(site, f, &entry, key)?;
        }
        for j in 0..3 {
            let v = tri[j];
            if let Some(b) = self.barriers.get(&g) {
                let p = b.frame.point(j);
                let inside = b.lines.iter().enumerate().all(|(i, l)| {
                    let s = l.signed_distance(&p);
                    if side & (1 << i) != 0 {
                        s > b.tol
                    } else {
                        s < -b.tol
                    }
                });
                if !inside {
                    continue;
                }
            }
            let pos = mesh.vertex(v);
            for x in [tri[(j + 1) % 3], tri[(j + 2) % 3]] {
                let mut cur = g;
                let mut x = x;
                loop {
                    if self.breaklines.is_blocked(v, x) {
                        break;
                    }
                    let Some(&n) = mesh.edge_faces(v, x).iter().find(|&&f| f != cur) else {
                        break;
                    };
                    if n == g {
                        break;
                    }
                    if let Some(b) = self.barriers.get(&n) {
                        let k = mesh.corner_of(n, v).expect("umbrella face contains its vertex");
                        let p = b.frame.point(k);
                        if b.lines.iter().any(|l| l.signed_distance(&p).abs() <= b.tol) {
                            break;
                        }
                    }
                    self.push(site, n, &pos, key)?;
                    let nt = mesh.face(n);
                    x = nt
                        .into_iter()
                        .find(|&w| w != v && w != x)
                        .expect("triangle has three distinct vertices");
                    cur = n;
                }
            }
        }
        Ok(())
    }

    /// Point of edge `j` of face `g` from which the site can leave, given its side.
    fn exit_interval(&self, g: usize, side: u32, j: usize) -> Option<Vec3> {
        let Some(b) = self.barriers.get(&g) else {
            let tri = self.mesh.face(g);
            return Some((self.mesh.vertex(tri[j]) + self.mesh.vertex(tri[(j + 1) % 3])) * 0.5);
        };
        let p = b.frame.point(j);
        let q = b.frame.point((j + 1) % 3);
        let (mut t0, mut t1) = (0.0f64, 1.0f64);
        for (i, l) in b.lines.iter().enumerate() {
            let sign = if side & (1 << i) != 0 { 1.0 } else { -1.0 };
            let sp = sign * l.signed_distance(&p);
            let sq = sign * l.signed_distance(&q);
            if sp < 0.0 && sq < 0.0 {
                return None;
            }
            if sp < 0.0 {
                t0 = t0.max(sp / (sp - sq));
            } else if sq < 0.0 {
                t1 = t1.min(sp / (sp - sq));
            }
        }
        let len = (q - p).norm();
        if (t1 - t0) * len <= b.tol {
            return None;
        }
        let mid: Vec2 = p + (q - p) * (0.5 * (t0 + t1));
        Some(b.frame.to_surface(&mid))
    }

    pub fn stats(&self) -> &SweepStats {
        &self.stats
    }

    pub fn lists(&self) -> &[FaceSourceList] {
        &self.lists
    }

    pub fn finish(self) -> Propagation {
        Propagation {
            lists: self.lists,
            stats: self.stats,
            fmm: None,
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Tentative {
    site: u32,
    dist: f64,
    done: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum FaceMark {
    Blocked,
    Complete,
}

/// Label-setting fast marching for all sites at once, with each face
/// checked for domination as soon as its corners are finalized.
fn fmm_sweep(mesh: &TriangleMesh, sites: &SiteSet, power: bool) -> Result<Propagation, PropagationError> {
    if sites.is_empty() {
        return Err(PropagationError::EmptySiteSet);
    }
    let mut verts: Vec<SmallVec<[Tentative; 4]>> = vec![SmallVec::new(); mesh.num_vertices()];
    let mut marks: Vec<SmallVec<[(u32, FaceMark); 4]>> = vec![SmallVec::new(); mesh.num_faces()];
    let mut lists = vec![FaceSourceList::default(); mesh.num_faces()];
    let mut field = FmmField::new(mesh.num_vertices());
    let mut heap: BinaryHeap<Reverse<(Key, u64, u32, u32)>> = BinaryHeap::new();
    let mut stats = SweepStats::default();
    let mut seq = 0u64;
    let mut last = f64::NEG_INFINITY;

    fn relax(
        verts: &mut [SmallVec<[Tentative; 4]>],
        heap: &mut BinaryHeap<Reverse<(Key, u64, u32, u32)>>,
        seq: &mut u64,
        stats: &mut SweepStats,
        site: usize,
        v: usize,
        d: f64,
    ) {
        let slot = &mut verts[v];
        match slot.iter_mut().find(|t| t.site as usize == site) {
            Some(t) if t.done || t.dist <= d => return,
            Some(t) => t.dist = d,
            None => slot.push(Tentative {
                site: site as u32,
                dist: d,
                done: false,
            }),
        }
        heap.push(Reverse((Key(d), *seq, site as u32, v as u32)));
        *seq += 1;
        stats.events_pushed += 1;
    }

    for site in sites.iter() {
        for &f in &site.seed_faces {
            for v in mesh.face(f) {
                let d = site.euclidean_squared(&mesh.vertex(v)).sqrt();
                relax(&mut verts, &mut heap, &mut seq, &mut stats, site.id, v, d);
            }
        }
    }

    let known = |verts: &[SmallVec<[Tentative; 4]>], site: usize, v: usize| {
        verts[v]
            .iter()
            .find(|t| t.site as usize == site && t.done)
            .map(|t| t.dist)
    };

    while let Some(Reverse((Key(d), _, s, v))) = heap.pop() {
        let (site, v) = (s as usize, v as usize);
        let Some(t) = verts[v].iter_mut().find(|t| t.site as usize == site) else {
            continue;
        };
        if t.done || d > t.dist {
            continue;
        }
        t.done = true;
        stats.events_popped += 1;
        if d < last {
            stats.monotone_keys = false;
        }
        last = d;
        field.set(site, v, d);
        let shift = if power { sites.get(site).weight } else { 0.0 };

        for &f in mesh.vertex_faces(v) {
            if marks[f].iter().any(|&(ms, _)| ms as usize == site) {
                continue;
            }
            let tri = mesh.face(f);
            let vals: [Option<f64>; 3] = tri.map(|w| known(&verts, site, w));
            if vals.iter().all(|x| x.is_some()) {
                let triple = DistanceTriple {
                    site,
                    d2: vals.map(|x| {
                        let x = x.unwrap_or_default();
                        x * x - shift
                    }),
                    side: 0,
                };
                let mark = match lists[f].insert(triple) {
                    Insertion::Dominated => {
                        stats.dominated += 1;
                        FaceMark::Blocked
                    }
                    Insertion::Inserted { evicted } => {
                        stats.evicted += evicted as u64;
                        stats.max_survivors = stats.max_survivors.max(lists[f].len());
                        FaceMark::Complete
                    }
                };
                marks[f].push((site as u32, mark));
                continue;
            }
            // corners not finalized yet will end up at least at d
            let bound = d * d - shift;
            let lower = vals.map(|x| x.map_or(bound, |x| x * x - shift));
            if lists[f]
                .triples
                .iter()
                .any(|t| (0..3).all(|k| t.d2[k] < lower[k]))
            {
                stats.dominated += 1;
                marks[f].push((site as u32, FaceMark::Blocked));
                continue;
            }
            for (k, &u) in tri.iter().enumerate() {
                if vals[k].is_some() {
                    continue;
                }
                let others: SmallVec<[(usize, f64); 2]> = (0..3)
                    .filter(|&i| i != k)
                    .filter_map(|i| vals[i].map(|x| (tri[i], x)))
                    .collect();
                let cand = match others.as_slice() {
                    [(a, da), (b, db)] => {
                        fmm_update(&mesh.vertex(*a), *da, &mesh.vertex(*b), *db, &mesh.vertex(u))
                    }
                    _ => d + (mesh.vertex(u) - mesh.vertex(v)).norm(),
                }
                .max(d);
                relax(&mut verts, &mut heap, &mut seq, &mut stats, site, u, cand);
            }
        }
    }

    Ok(Propagation {
        lists,
        stats,
        fmm: Some(field),
    })
}
