//! State spaces: Euclidean space, flat tori with per-axis periods, and the
//! unit 2-sphere embedded in R^3.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// A point in ambient coordinates (length n for R^n and T^n, 3 for the sphere).
pub type Point = DVector<f64>;

pub const SPHERE_NORM_TOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum ManifoldError {
    #[error("coordinate length {got} does not match ambient dimension {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("degenerate sphere point: cannot normalize the zero vector")]
    DegenerateSpherePoint,
}

/// One of the three supported state spaces.
///
/// Torus periods are data rather than a fixed 2*pi so that boxes like
/// `[0, n-1] x [0,1]^(n-1)` with opposite-face identification are expressible.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Manifold {
    Rn { dim: usize },
    Torus { periods: Vec<f64> },
    Sphere2,
}

impl Manifold {
    pub fn euclidean(n: usize) -> Self {
        Manifold::Rn { dim: n }
    }

    pub fn torus(periods: Vec<f64>) -> Self {
        assert!(
            periods.iter().all(|&p| p > 0.0),
            "torus periods must be strictly positive"
        );
        Manifold::Torus { periods }
    }

    /// Intrinsic dimension: n for R^n and T^n, 2 for the sphere.
    pub fn dim(&self) -> usize {
        match self {
            Manifold::Rn { dim } => *dim,
            Manifold::Torus { periods } => periods.len(),
            Manifold::Sphere2 => 2,
        }
    }

    /// Length of the coordinate vectors points live in (3 for the sphere).
    pub fn ambient_dim(&self) -> usize {
        match self {
            Manifold::Rn { dim } => *dim,
            Manifold::Torus { periods } => periods.len(),
            Manifold::Sphere2 => 3,
        }
    }

    pub fn check_dim(&self, p: &Point) -> Result<(), ManifoldError> {
        if p.len() != self.ambient_dim() {
            return Err(ManifoldError::DimensionMismatch {
                expected: self.ambient_dim(),
                got: p.len(),
            });
        }
        Ok(())
    }

    /// Canonicalize coordinates: reduce torus coordinates into `[0, period)`,
    /// rescale sphere points to unit norm. Identity on R^n.
    pub fn wrap(&self, p: &Point) -> Result<Point, ManifoldError> {
        self.check_dim(p)?;
        match self {
            Manifold::Rn { .. } => Ok(p.clone()),
            Manifold::Torus { periods } => {
                let mut q = p.clone();
                for (x, &period) in q.iter_mut().zip(periods.iter()) {
                    *x = x.rem_euclid(period);
                    // rem_euclid can return `period` itself for tiny negative inputs
                    if *x >= period {
                        *x -= period;
                    }
                }
                Ok(q)
            }
            Manifold::Sphere2 => {
                let norm = p.norm();
                if norm == 0.0 || !norm.is_finite() {
                    return Err(ManifoldError::DegenerateSpherePoint);
                }
                Ok(p / norm)
            }
        }
    }

    /// Intrinsic distance: Euclidean on R^n, flat quotient metric on the
    /// torus, great-circle angle on the sphere. Inputs are assumed canonical.
    pub fn distance(&self, p: &Point, q: &Point) -> Result<f64, ManifoldError> {
        self.check_dim(p)?;
        self.check_dim(q)?;
        match self {
            Manifold::Rn { .. } => Ok((p - q).norm()),
            Manifold::Torus { periods } => {
                let mut sum = 0.0;
                for ((&a, &b), &period) in p.iter().zip(q.iter()).zip(periods.iter()) {
                    let d = wrapped_diff(a - b, period);
                    sum += d * d;
                }
                Ok(sum.sqrt())
            }
            Manifold::Sphere2 => {
                // atan2 of the cross and dot products is exact at angle 0
                // and stays accurate at small angles, unlike acos(dot)
                let cx = p[1] * q[2] - p[2] * q[1];
                let cy = p[2] * q[0] - p[0] * q[2];
                let cz = p[0] * q[1] - p[1] * q[0];
                let cross = (cx * cx + cy * cy + cz * cz).sqrt();
                Ok(cross.atan2(p.dot(q)))
            }
        }
    }

    /// Project an ambient vector onto the tangent space at `p`. Identity off
    /// the sphere; on the sphere removes the normal component.
    pub fn tangent_project(&self, p: &Point, v: &Point) -> Point {
        match self {
            Manifold::Sphere2 => v - p * v.dot(p),
            _ => v.clone(),
        }
    }

    /// Shortest torus-wrapped displacement from `q` to `p` (per coordinate);
    /// plain difference elsewhere. Used by finite differences of flows.
    pub fn displacement(&self, p: &Point, q: &Point) -> Point {
        match self {
            Manifold::Torus { periods } => {
                let mut d = p - q;
                for (x, &period) in d.iter_mut().zip(periods.iter()) {
                    *x = wrapped_diff(*x, period);
                }
                d
            }
            _ => p - q,
        }
    }

    /// An orthonormal basis of the tangent space at `p`, as columns.
    /// On R^n and T^n this is the standard basis; on the sphere two vectors
    /// orthogonal to `p`.
    pub fn tangent_basis(&self, p: &Point) -> Vec<Point> {
        match self {
            Manifold::Sphere2 => {
                // pick the coordinate axis least aligned with p
                let mut k = 0;
                for i in 1..3 {
                    if p[i].abs() < p[k].abs() {
                        k = i;
                    }
                }
                let mut e = DVector::zeros(3);
                e[k] = 1.0;
                let t1 = {
                    let t = &e - p * e.dot(p);
                    let n = t.norm();
                    t / n
                };
                let t2 = DVector::from_vec(vec![
                    p[1] * t1[2] - p[2] * t1[1],
                    p[2] * t1[0] - p[0] * t1[2],
                    p[0] * t1[1] - p[1] * t1[0],
                ]);
                vec![t1, t2]
            }
            _ => {
                let n = self.ambient_dim();
                (0..n)
                    .map(|i| {
                        let mut e = DVector::zeros(n);
                        e[i] = 1.0;
                        e
                    })
                    .collect()
            }
        }
    }
}

/// Reduce a coordinate difference to its shortest representative in
/// `[-period/2, period/2]`.
fn wrapped_diff(d: f64, period: f64) -> f64 {
    let r = d.rem_euclid(period);
    if r > period / 2.0 {
        r - period
    } else {
        r
    }
}

pub fn point(coords: &[f64]) -> Point {
    DVector::from_column_slice(coords)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn wrap_torus_reduces_mod_period() {
        let m = Manifold::torus(vec![1.0, 1.0]);
        let q = m.wrap(&point(&[1.25, -0.5])).unwrap();
        assert_relative_eq!(q[0], 0.25, epsilon = 1e-12);
        assert_relative_eq!(q[1], 0.5, epsilon = 1e-12);
    }

    #[test]
    fn wrap_sphere_normalizes() {
        let m = Manifold::Sphere2;
        let q = m.wrap(&point(&[0.0, 0.0, 2.0])).unwrap();
        assert_relative_eq!(q[2], 1.0, epsilon = 1e-12);
        assert!(matches!(
            m.wrap(&point(&[0.0, 0.0, 0.0])),
            Err(ManifoldError::DegenerateSpherePoint)
        ));
    }

    #[test]
    fn wrap_euclidean_identity() {
        let m = Manifold::euclidean(3);
        let p = point(&[1.0, 2.0, 3.0]);
        assert_eq!(m.wrap(&p).unwrap(), p);
    }

    #[test]
    fn wrap_is_idempotent() {
        let m = Manifold::torus(vec![2.0, 1.0]);
        let q = m.wrap(&point(&[-3.7, 5.21])).unwrap();
        assert_eq!(m.wrap(&q).unwrap(), q);
    }

    #[test]
    fn torus_distance_wraps_around() {
        let m = Manifold::torus(vec![1.0, 1.0]);
        let d = m
            .distance(&point(&[0.05, 0.0]), &point(&[0.95, 0.0]))
            .unwrap();
        assert_relative_eq!(d, 0.1, epsilon = 1e-12);
    }

    #[test]
    fn sphere_distance_is_great_circle_angle() {
        let m = Manifold::Sphere2;
        let d = m
            .distance(&point(&[1.0, 0.0, 0.0]), &point(&[0.0, 1.0, 0.0]))
            .unwrap();
        assert_relative_eq!(d, std::f64::consts::FRAC_PI_2, epsilon = 1e-12);
    }

    #[test]
    fn euclidean_distance() {
        let m = Manifold::euclidean(2);
        let d = m.distance(&point(&[0.0, 0.0]), &point(&[3.0, 4.0])).unwrap();
        assert_relative_eq!(d, 5.0, epsilon = 1e-12);
    }

    #[test]
    fn tangent_project_sphere() {
        let m = Manifold::Sphere2;
        let p = point(&[0.0, 0.0, 1.0]);
        let v = m.tangent_project(&p, &point(&[1.0, 0.0, 1.0]));
        assert_relative_eq!(v[0], 1.0, epsilon = 1e-12);
        assert_relative_eq!(v[2], 0.0, epsilon = 1e-12);
        let w = m.tangent_project(&p, &point(&[0.0, 0.0, 5.0]));
        assert!(w.norm() < 1e-12);
    }

    #[test]
    fn tangent_project_euclidean_identity() {
        let m = Manifold::euclidean(2);
        let v = point(&[2.0, 3.0]);
        assert_eq!(m.tangent_project(&point(&[9.0, 9.0]), &v), v);
    }

    #[test]
    fn distance_symmetric_and_zero_on_diagonal() {
        use rand::prelude::*;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let manifolds = [
            Manifold::euclidean(3),
            Manifold::torus(vec![2.0, 1.0, 1.0]),
            Manifold::Sphere2,
        ];
        for m in &manifolds {
            for _ in 0..50 {
                let raw: Vec<f64> = (0..m.ambient_dim())
                    .map(|_| rng.random_range(-3.0..3.0))
                    .collect();
                let raw2: Vec<f64> = (0..m.ambient_dim())
                    .map(|_| rng.random_range(-3.0..3.0))
                    .collect();
                let p = match m.wrap(&point(&raw)) {
                    Ok(p) => p,
                    Err(_) => continue,
                };
                let q = match m.wrap(&point(&raw2)) {
                    Ok(q) => q,
                    Err(_) => continue,
                };
                assert_relative_eq!(
                    m.distance(&p, &q).unwrap(),
                    m.distance(&q, &p).unwrap(),
                    epsilon = 1e-12
                );
                assert_eq!(m.distance(&p, &p).unwrap(), 0.0);
            }
        }
    }

    #[test]
    fn torus_distance_bounded_by_euclidean_of_representatives() {
        use rand::prelude::*;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let m = Manifold::torus(vec![2.0, 1.0]);
        for _ in 0..100 {
            let a = point(&[rng.random_range(-10.0..10.0), rng.random_range(-10.0..10.0)]);
            let b = point(&[rng.random_range(-10.0..10.0), rng.random_range(-10.0..10.0)]);
            let wrapped = m
                .distance(&m.wrap(&a).unwrap(), &m.wrap(&b).unwrap())
                .unwrap();
            assert!(wrapped <= (&a - &b).norm() + 1e-12);
        }
    }

    #[test]
    fn sphere_tangent_project_idempotent_and_orthogonal() {
        use rand::prelude::*;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let m = Manifold::Sphere2;
        for _ in 0..100 {
            let p = m
                .wrap(&point(&[
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                ]))
                .unwrap();
            let v = point(&[
                rng.random_range(-2.0..2.0),
                rng.random_range(-2.0..2.0),
                rng.random_range(-2.0..2.0),
            ]);
            let t = m.tangent_project(&p, &v);
            assert!(t.dot(&p).abs() <= 1e-12);
            let tt = m.tangent_project(&p, &t);
            assert!((&tt - &t).norm() <= 1e-12);
        }
    }

    #[test]
    fn tangent_basis_is_orthonormal() {
        let m = Manifold::Sphere2;
        let p = m.wrap(&point(&[0.3, -0.4, 0.85])).unwrap();
        let basis = m.tangent_basis(&p);
        assert_eq!(basis.len(), 2);
        assert_relative_eq!(basis[0].norm(), 1.0, epsilon = 1e-12);
        assert_relative_eq!(basis[1].norm(), 1.0, epsilon = 1e-12);
        assert!(basis[0].dot(&basis[1]).abs() < 1e-12);
        assert!(basis[0].dot(&p).abs() < 1e-12);
        assert!(basis[1].dot(&p).abs() < 1e-12);
    }
}
