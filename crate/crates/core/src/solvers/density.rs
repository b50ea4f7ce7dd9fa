use std::fmt;
use std::sync::Arc;

use super::SolverError;
use crate::mesh::Vec3;

/// Default number of Simpson subintervals.
pub const DEFAULT_QUADRATURE_SAMPLES: usize = 8;

#[derive(Clone)]
enum Profile {
    Constant(f64),
    /// `a + b * x[axis]`
    LinearAxis { axis: usize, a: f64, b: f64 },
    /// `a + b * |x - center|`
    Radial { center: Vec3, a: f64, b: f64 },
    Custom(Arc<dyn Fn(&Vec3) -> f64 + Send + Sync>),
}

/// Scalar density defined on (a neighborhood of) the surface in 3D.
#[derive(Clone)]
pub struct DensityField {
    profile: Profile,
    quadrature_samples: usize,
}

impl fmt::Debug for DensityField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let kind = match &self.profile {
            Profile::Constant(c) => format!("constant({c})"),
            Profile::LinearAxis { axis, a, b } => format!("linear(axis={axis}, {a} + {b}*x)"),
            Profile::Radial { center, a, b } => {
                format!("radial(center={:?}, {a} + {b}*r)", center.as_slice())
            }
            Profile::Custom(_) => "custom".to_string(),
        };
        f.debug_struct("DensityField")
            .field("profile", &kind)
            .field("quadrature_samples", &self.quadrature_samples)
            .finish()
    }
}

impl DensityField {
    fn with_profile(profile: Profile) -> Self {
        Self {
            profile,
            quadrature_samples: DEFAULT_QUADRATURE_SAMPLES,
        }
    }

    pub fn constant(c: f64) -> Self {
        Self::with_profile(Profile::Constant(c))
    }

    pub fn linear_axis(axis: usize, a: f64, b: f64) -> Self {
        assert!(axis < 3, "axis must be 0, 1 or 2");
        Self::with_profile(Profile::LinearAxis { axis, a, b })
    }

    pub fn radial(center: Vec3, a: f64, b: f64) -> Self {
        Self::with_profile(Profile::Radial { center, a, b })
    }

    /// Arbitrary density expression.
    pub fn from_fn(f: impl Fn(&Vec3) -> f64 + Send + Sync + 'static) -> Self {
        Self::with_profile(Profile::Custom(Arc::new(f)))
    }

    /// Sets the number of Simpson subintervals (rounded up to an even count).
    pub fn with_samples(mut self, n: usize) -> Self {
        let n = n.max(2);
        self.quadrature_samples = n + n % 2;
        self
    }

    pub fn quadrature_samples(&self) -> usize {
        self.quadrature_samples
    }

    pub fn eval(&self, x: &Vec3) -> f64 {
        match &self.profile {
            Profile::Constant(c) => *c,
            Profile::LinearAxis { axis, a, b } => a + b * x[*axis],
            Profile::Radial { center, a, b } => a + b * (x - center).norm(),
            Profile::Custom(f) => f(x),
        }
    }

    /// Mean density along the segment from `v` to `p`, i.e. the integral of
    /// `rho((1 - t) v + t p)` over `t` in `[0, 1]`.
    pub fn segment_mean(&self, v: &Vec3, p: &Vec3) -> Result<f64, SolverError> {
        if let Profile::Constant(c) = self.profile {
            check(c, v)?;
            return Ok(c);
        }
        let mut err = None;
        let q = simpson(
            |t| {
                let x = v * (1.0 - t) + p * t;
                let r = self.eval(&x);
                if err.is_none() {
                    if let Err(e) = check(r, &x) {
                        err = Some(e);
                    }
                }
                r
            },
            self.quadrature_samples,
        );
        match err {
            Some(e) => Err(e),
            None => Ok(q),
        }
    }
}

// Zero is tolerated at isolated points (e.g. a linear ramp reaching 0 at an endpoint).
fn check(r: f64, x: &Vec3) -> Result<(), SolverError> {
    if r >= 0.0 && r.is_finite() {
        Ok(())
    } else {
        Err(SolverError::NonpositiveDensity {
            x: x.x,
            y: x.y,
            z: x.z,
        })
    }
}

/// Composite Simpson rule on `[0, 1]` with `n` (even) subintervals.
pub fn simpson(mut f: impl FnMut(f64) -> f64, n: usize) -> f64 {
    let n = (n.max(2) + 1) & !1;
    let mut acc = f(0.0) + f(1.0);
    for k in 1..n {
        let w = if k % 2 == 1 { 4.0 } else { 2.0 };
        acc += w * f(k as f64 / n as f64);
    }
    acc / (3 * n) as f64
}

/// Density-weighted distance `|v - p| * mean(rho on segment vp)`.
pub fn density_distance(p: &Vec3, v: &Vec3, field: &DensityField) -> Result<f64, SolverError> {
    Ok((v - p).norm() * field.segment_mean(v, p)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_density_is_euclidean() {
        let p = Vec3::new(0.3, -1.2, 2.0);
        let v = Vec3::new(1.7, 0.4, -0.5);
        let d = density_distance(&p, &v, &DensityField::constant(1.0)).unwrap();
        assert_eq!(d, (v - p).norm());
        let f = DensityField::from_fn(|_| 1.0);
        assert_eq!(density_distance(&p, &v, &f).unwrap(), (v - p).norm());
    }

    #[test]
    fn linear_density_is_exact() {
        let f = DensityField::linear_axis(0, 0.0, 1.0);
        let d = density_distance(&Vec3::zeros(), &Vec3::x(), &f).unwrap();
        assert_eq!(d, 0.5);
    }

    #[test]
    fn exponential_density_matches_reference() {
        // reference: Simpson with 2^16 subintervals (error ~1e-20)
        let reference = simpson(|t| (1.0 - t).exp(), 1 << 16);
        assert!((reference - (std::f64::consts::E - 1.0)).abs() < 1e-14);
        let f = DensityField::from_fn(|x| x.x.exp()).with_samples(16);
        let d = density_distance(&Vec3::zeros(), &Vec3::x(), &f).unwrap();
        assert!((d - reference).abs() < 1e-6, "{d} vs {reference}");
    }

    #[test]
    fn negative_density_is_rejected() {
        let f = DensityField::linear_axis(0, -1.0, 1.0);
        let err = density_distance(&Vec3::zeros(), &Vec3::x(), &f).unwrap_err();
        assert!(matches!(err, SolverError::NonpositiveDensity { .. }));
    }

    #[test]
    fn constant_scales_exactly() {
        let p = Vec3::new(0.1, 0.2, 0.3);
        let v = Vec3::new(-0.4, 0.9, 0.05);
        let base = density_distance(&p, &v, &DensityField::constant(1.0)).unwrap();
        for c in [0.25, 2.0, 3.7] {
            let d = density_distance(&p, &v, &DensityField::constant(c)).unwrap();
            assert_eq!(d, base * c);
        }
    }
}
