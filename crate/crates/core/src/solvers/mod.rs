//! Distance solvers behind a common contract.
//!
//! The sweep in [`crate::propagation`] only needs squared distances from a
//! site to mesh vertices. Closed-form metrics (Euclidean, point-to-curve,
//! density-weighted) implement [`SquaredDistance`] directly; any other
//! closed-form or precomputed metric can be plugged in the same way. The
//! fast-marching solver is a mark-and-sweep method whose per-site fields are
//! produced during the sweep itself, see [`fmm`].

mod curve;
mod density;
pub mod fmm;

pub use curve::{closest_point_on_segment, point_to_curve_distance, point_to_segment_distance};
pub use density::{density_distance, simpson, DensityField, DEFAULT_QUADRATURE_SAMPLES};
pub use fmm::{fast_marching, fmm_update, FmmField};

use thiserror::Error;

use crate::mesh::{FaceLocator, TriangleMesh, Vec3};

#[derive(Debug, Error, PartialEq)]
pub enum SolverError {
    #[error("site {site} has not been swept to vertex {vertex}")]
    NotYetSwept { site: usize, vertex: usize },
    #[error("density field is not positive at ({x}, {y}, {z})")]
    NonpositiveDensity { x: f64, y: f64, z: f64 },
    #[error("unsupported solver configuration: {0}")]
    Unsupported(&'static str),
}

#[derive(Debug, Error, PartialEq)]
pub enum SiteError {
    #[error("site {site}: face {face} does not exist")]
    FaceOutOfRange { site: usize, face: usize },
    #[error("site {site}: barycentric coordinates must be nonnegative and sum to 1")]
    InvalidBarycentric { site: usize },
    #[error("site {site}: a curve needs at least two distinct consecutive points")]
    DegenerateCurve { site: usize },
    #[error("site {site}: curve point {point} is {distance} away from the surface")]
    CurveOffSurface {
        site: usize,
        point: usize,
        distance: f64,
    },
    #[error("site {site}: weight must be finite")]
    InvalidWeight { site: usize },
}

/// Geometry of a site as given by the user.
#[derive(Debug, Clone, PartialEq)]
pub enum SiteGeometry {
    /// Point on face `face` at barycentric coordinates `bary` (face-interior allowed).
    Point { face: usize, bary: [f64; 3] },
    /// Polyline lying on the surface.
    Curve(Vec<Vec3>),
}

/// Unvalidated site record.
#[derive(Debug, Clone, PartialEq)]
pub struct SiteSpec {
    pub geometry: SiteGeometry,
    pub weight: f64,
}

impl SiteSpec {
    pub fn point(face: usize, bary: [f64; 3]) -> Self {
        Self {
            geometry: SiteGeometry::Point { face, bary },
            weight: 0.0,
        }
    }

    pub fn curve(points: Vec<Vec3>) -> Self {
        Self {
            geometry: SiteGeometry::Curve(points),
            weight: 0.0,
        }
    }

    pub fn with_weight(mut self, w: f64) -> Self {
        self.weight = w;
        self
    }
}

/// A validated site.
#[derive(Debug, Clone)]
pub struct Site {
    pub id: usize,
    pub geometry: SiteGeometry,
    pub weight: f64,
    /// 3D position for point sites; arc-length midpoint for curves.
    pub anchor: Vec3,
    /// Faces the site starts sweeping from.
    pub seed_faces: Vec<usize>,
}

impl Site {
    pub fn is_point(&self) -> bool {
        matches!(self.geometry, SiteGeometry::Point { .. })
    }

    /// Unweighted Euclidean squared distance from the site to `q`.
    pub fn euclidean_squared(&self, q: &Vec3) -> f64 {
        match &self.geometry {
            SiteGeometry::Point { .. } => {
                let d = q - self.anchor;
                d.x * d.x + d.y * d.y + d.z * d.z
            }
            SiteGeometry::Curve(pts) => {
                let d = point_to_curve_distance(pts, q);
                d * d
            }
        }
    }

    /// Closest point of the site to `q` (the site itself for point sites).
    pub fn closest_point(&self, q: &Vec3) -> Vec3 {
        match &self.geometry {
            SiteGeometry::Point { .. } => self.anchor,
            SiteGeometry::Curve(pts) => pts
                .windows(2)
                .map(|w| closest_point_on_segment(&w[0], &w[1], q))
                .min_by(|a, b| (a - q).norm_squared().total_cmp(&(b - q).norm_squared()))
                .unwrap_or(pts[0]),
        }
    }
}

/// Validated, indexed site collection. Site ids are positions in the set.
#[derive(Debug, Clone, Default)]
pub struct SiteSet {
    sites: Vec<Site>,
}

/// Relative tolerance (times the bbox diagonal) for curve points to count as on the surface.
pub const CURVE_ON_SURFACE_TOL: f64 = 1e-4;

impl SiteSet {
    pub fn new(mesh: &TriangleMesh, specs: Vec<SiteSpec>) -> Result<Self, SiteError> {
        let mut locator = None;
        let mut sites = Vec::with_capacity(specs.len());
        for (id, spec) in specs.into_iter().enumerate() {
            if !spec.weight.is_finite() {
                return Err(SiteError::InvalidWeight { site: id });
            }
            let site = match spec.geometry {
                SiteGeometry::Point { face, bary } => {
                    if face >= mesh.num_faces() {
                        return Err(SiteError::FaceOutOfRange { site: id, face });
                    }
                    let sum: f64 = bary.iter().sum();
                    if bary.iter().any(|&b| !(b >= -1e-12)) || (sum - 1.0).abs() > 1e-9 {
                        return Err(SiteError::InvalidBarycentric { site: id });
                    }
                    let bary = bary.map(|b| b.max(0.0) / sum);
                    Site {
                        id,
                        anchor: mesh.point_from_barycentric(face, bary),
                        geometry: SiteGeometry::Point { face, bary },
                        weight: spec.weight,
                        seed_faces: vec![face],
                    }
                }
                SiteGeometry::Curve(pts) => {
                    if pts.len() < 2 || pts.windows(2).any(|w| w[0] == w[1]) {
                        return Err(SiteError::DegenerateCurve { site: id });
                    }
                    let locator = locator.get_or_insert_with(|| FaceLocator::new(mesh));
                    let seed_faces = curve_faces(mesh, locator, &pts, id)?;
                    Site {
                        id,
                        anchor: arc_midpoint(&pts),
                        geometry: SiteGeometry::Curve(pts),
                        weight: spec.weight,
                        seed_faces,
                    }
                }
            };
            sites.push(site);
        }
        Ok(Self { sites })
    }

    pub fn len(&self) -> usize {
        self.sites.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sites.is_empty()
    }

    pub fn get(&self, id: usize) -> &Site {
        &self.sites[id]
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Site> {
        self.sites.iter()
    }

    pub fn as_slice(&self) -> &[Site] {
        &self.sites
    }

    pub fn max_abs_weight(&self) -> f64 {
        self.sites.iter().map(|s| s.weight.abs()).fold(0.0, f64::max)
    }

    pub fn has_weights(&self) -> bool {
        self.sites.iter().any(|s| s.weight != 0.0)
    }
}

fn arc_midpoint(pts: &[Vec3]) -> Vec3 {
    let total: f64 = pts.windows(2).map(|w| (w[1] - w[0]).norm()).sum();
    let mut remaining = 0.5 * total;
    for w in pts.windows(2) {
        let len = (w[1] - w[0]).norm();
        if remaining <= len {
            return w[0] + (w[1] - w[0]) * (remaining / len);
        }
        remaining -= len;
    }
    pts[pts.len() - 1]
}

/// Faces touched by a polyline, found by dense sampling of each segment.
pub(crate) fn curve_faces(
    mesh: &TriangleMesh,
    locator: &FaceLocator<'_>,
    pts: &[Vec3],
    site: usize,
) -> Result<Vec<usize>, SiteError> {
    let on_tol = CURVE_ON_SURFACE_TOL * mesh.bbox_diag();
    let touch_tol = 1e-9 * mesh.bbox_diag();
    for (i, p) in pts.iter().enumerate() {
        let hit = locator.closest(p);
        if hit.distance > on_tol {
            return Err(SiteError::CurveOffSurface {
                site,
                point: i,
                distance: hit.distance,
            });
        }
    }
    let step = 0.25 * mesh.mean_edge_length();
    let mut faces = Vec::new();
    for w in pts.windows(2) {
        let len = (w[1] - w[0]).norm();
        let n = ((len / step).ceil() as usize).max(1);
        for k in 0..=n {
            let q = w[0] + (w[1] - w[0]) * (k as f64 / n as f64);
            let hit = locator.closest(&q);
            faces.push(hit.face);
            faces.extend(locator.faces_near(&q, hit.distance + touch_tol));
        }
    }
    faces.sort_unstable();
    faces.dedup();
    Ok(faces)
}

/// Which family of distances drives the sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    Euclidean,
    FastMarching,
}

/// Solver configuration: metric, optional density wrapper and power flag.
#[derive(Debug, Clone)]
pub struct Solver {
    pub metric: Metric,
    pub density: Option<DensityField>,
    /// Subtract site weights from squared distances (power diagram).
    pub power: bool,
}

impl Solver {
    pub fn euclidean() -> Self {
        Self {
            metric: Metric::Euclidean,
            density: None,
            power: false,
        }
    }

    pub fn fast_marching() -> Self {
        Self {
            metric: Metric::FastMarching,
            density: None,
            power: false,
        }
    }

    pub fn with_density(mut self, field: DensityField) -> Self {
        self.density = Some(field);
        self
    }

    pub fn with_power(mut self, power: bool) -> Self {
        self.power = power;
        self
    }

    pub fn validate(&self) -> Result<(), SolverError> {
        if self.density.is_some() && self.metric != Metric::Euclidean {
            return Err(SolverError::Unsupported(
                "density fields combine only with the Euclidean metric",
            ));
        }
        Ok(())
    }

    /// Weight shift applied to a site's squared distances.
    #[inline]
    pub fn shift(&self, site: &Site) -> f64 {
        if self.power {
            site.weight
        } else {
            0.0
        }
    }

    /// Squared (and, with the power flag, weight-shifted) distance from `site`
    /// to mesh vertex `vertex`. Fast marching needs the field produced by the sweep.
    pub fn squared_distance(
        &self,
        site: &Site,
        vertex: usize,
        mesh: &TriangleMesh,
        fmm: Option<&FmmField>,
    ) -> Result<f64, SolverError> {
        self.validate()?;
        let d2 = match self.metric {
            Metric::Euclidean => ClosedForm::new(mesh, self.density.as_ref())
                .squared_distance(site, vertex)?,
            Metric::FastMarching => {
                let field = fmm.ok_or(SolverError::NotYetSwept {
                    site: site.id,
                    vertex,
                })?;
                let d = field.distance(site.id, vertex)?;
                d * d
            }
        };
        Ok(d2 - self.shift(site))
    }
}

/// The distance contract consumed by the face sweep: unshifted squared
/// distance from a site to a mesh vertex, available for every vertex.
pub trait SquaredDistance: Sync {
    fn squared_distance(&self, site: &Site, vertex: usize) -> Result<f64, SolverError>;
}

/// Closed-form Euclidean distances, optionally density-weighted.
#[derive(Debug, Clone, Copy)]
pub struct ClosedForm<'a> {
    mesh: &'a TriangleMesh,
    density: Option<&'a DensityField>,
}

impl<'a> ClosedForm<'a> {
    pub fn new(mesh: &'a TriangleMesh, density: Option<&'a DensityField>) -> Self {
        Self { mesh, density }
    }
}

impl SquaredDistance for ClosedForm<'_> {
    fn squared_distance(&self, site: &Site, vertex: usize) -> Result<f64, SolverError> {
        let v = self.mesh.vertex(vertex);
        match self.density {
            None => Ok(site.euclidean_squared(&v)),
            Some(field) => {
                let p = site.closest_point(&v);
                let d = density_distance(&p, &v, field)?;
                Ok(d * d)
            }
        }
    }
}
