//! 3D bilinear systems `dx/dt = (A + u^1 B_1 + ... + u^d B_d) x`, their
//! eigenstructure, the real-vs-complex eigenvalue controllability test, and
//! projection to the sphere of directions.

use crate::fields::{self, ControlSystem, FieldError};
use nalgebra::DMatrix;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum BilinearError {
    #[error("matrix must have 9 row-major entries, got {0}")]
    BadMatrix(usize),
    #[error("control vector has length {got}, system has {expected} control channels")]
    ControlLength { expected: usize, got: usize },
    #[error("matrix entries must be finite")]
    NonFinite,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BilinearSystem3 {
    pub a: DMatrix<f64>,
    pub b: Vec<DMatrix<f64>>,
}

impl BilinearSystem3 {
    pub fn new(a: DMatrix<f64>, b: Vec<DMatrix<f64>>) -> Result<Self, BilinearError> {
        for m in std::iter::once(&a).chain(b.iter()) {
            if m.nrows() != 3 || m.ncols() != 3 {
                return Err(BilinearError::BadMatrix(m.len()));
            }
            if m.iter().any(|x| !x.is_finite()) {
                return Err(BilinearError::NonFinite);
            }
        }
        Ok(BilinearSystem3 { a, b })
    }

    /// From row-major 9-element arrays (the config-file representation).
    pub fn from_rows(a: &[f64], b: &[Vec<f64>]) -> Result<Self, BilinearError> {
        let to_m = |rows: &[f64]| -> Result<DMatrix<f64>, BilinearError> {
            if rows.len() != 9 {
                return Err(BilinearError::BadMatrix(rows.len()));
            }
            Ok(DMatrix::from_row_slice(3, 3, rows))
        };
        Ok(BilinearSystem3 {
            a: to_m(a)?,
            b: b.iter().map(|rows| to_m(rows)).collect::<Result<_, _>>()?,
        })
    }

    pub fn control_dim(&self) -> usize {
        self.b.len()
    }

    /// `A(u) = A + sum_i u^i B_i`.
    pub fn a_of_u(&self, u: &[f64]) -> Result<DMatrix<f64>, BilinearError> {
        if u.len() != self.b.len() {
            return Err(BilinearError::ControlLength {
                expected: self.b.len(),
                got: u.len(),
            });
        }
        let mut m = self.a.clone();
        for (ui, bi) in u.iter().zip(self.b.iter()) {
            m += bi * *ui;
        }
        Ok(m)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum EigenKind {
    ThreeReal,
    OneRealOneComplexPair,
}

/// Eigenvalues of a real 3x3 matrix, classified by the sign of the cubic
/// discriminant.
#[derive(Debug, Clone, Serialize)]
pub struct Eigen3 {
    pub kind: EigenKind,
    pub real_eigenvalues: Vec<f64>,
    /// `(re, im)` with `im > 0`, present for the complex kind.
    pub complex_pair: Option<(f64, f64)>,
}

/// Closed-form eigenvalues of a 3x3 matrix via the trigonometric/Cardano
/// solution of the characteristic cubic. A conjugate pair whose imaginary
/// part is below `tol * scale` collapses to the real kind.
pub fn eigen3(m: &DMatrix<f64>, tol: f64) -> Eigen3 {
    assert_eq!((m.nrows(), m.ncols()), (3, 3), "eigen3 expects a 3x3 matrix");
    let tr = m[(0, 0)] + m[(1, 1)] + m[(2, 2)];
    // sum of principal 2x2 minors
    let m2 = m[(0, 0)] * m[(1, 1)] - m[(0, 1)] * m[(1, 0)]
        + m[(0, 0)] * m[(2, 2)] - m[(0, 2)] * m[(2, 0)]
        + m[(1, 1)] * m[(2, 2)] - m[(1, 2)] * m[(2, 1)];
    let det = m[(0, 0)] * (m[(1, 1)] * m[(2, 2)] - m[(1, 2)] * m[(2, 1)])
        - m[(0, 1)] * (m[(1, 0)] * m[(2, 2)] - m[(1, 2)] * m[(2, 0)])
        + m[(0, 2)] * (m[(1, 0)] * m[(2, 1)] - m[(1, 1)] * m[(2, 0)]);
    // depressed cubic t^3 + p t + q with lambda = t + tr/3
    let s = tr / 3.0;
    let p = m2 - 3.0 * s * s;
    let q = -2.0 * s * s * s + m2 * s - det;
    let scale = 1.0 + m.iter().map(|x| x * x).sum::<f64>().sqrt();
    let disc = (q / 2.0) * (q / 2.0) + (p / 3.0) * (p / 3.0) * (p / 3.0);

    if disc > 0.0 {
        let root = disc.sqrt();
        let a = (-q / 2.0 + root).cbrt();
        let b = (-q / 2.0 - root).cbrt();
        let real = a + b + s;
        let re = -(a + b) / 2.0 + s;
        let im = (3.0f64.sqrt() / 2.0) * (a - b).abs();
        if im <= tol * scale {
            Eigen3 {
                kind: EigenKind::ThreeReal,
                real_eigenvalues: sorted(vec![real, re, re]),
                complex_pair: None,
            }
        } else {
            Eigen3 {
                kind: EigenKind::OneRealOneComplexPair,
                real_eigenvalues: vec![real],
                complex_pair: Some((re, im)),
            }
        }
    } else {
        // three real roots (trigonometric form; handles p = 0 separately)
        let roots = if p >= 0.0 {
            // p can only be >= 0 here when disc <= 0 forces p = q = 0
            vec![s, s, s]
        } else {
            let r = 2.0 * (-p / 3.0).sqrt();
            let arg = (3.0 * q / (2.0 * p) * (-3.0 / p).sqrt()).clamp(-1.0, 1.0);
            let theta = arg.acos();
            (0..3)
                .map(|k| r * ((theta - 2.0 * std::f64::consts::PI * k as f64) / 3.0).cos() + s)
                .collect()
        };
        Eigen3 {
            kind: EigenKind::ThreeReal,
            real_eigenvalues: sorted(roots),
            complex_pair: None,
        }
    }
}

fn sorted(mut v: Vec<f64>) -> Vec<f64> {
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    v
}

/// Verdict of the two-parameter eigenvalue test: sufficient for
/// controllability (given LARC) when both operators have a complex pair and
/// `(lambda_R(u) - Re lambda_C(u)) (lambda_R(v) - Re lambda_C(v)) < 0`.
#[derive(Debug, Clone, Serialize)]
pub struct TheoremBVerdict {
    pub applies: bool,
    pub product: Option<f64>,
    pub controllable_sufficient: bool,
    /// Strict inequality with tolerance: `|product| <= tol` is reported as a
    /// boundary case where the test is inconclusive.
    pub boundary: bool,
    /// Whether the LARC hypothesis was verified separately by the caller
    /// (the test itself does not decide it).
    pub larc_checked: bool,
}

pub fn theorem_b_check(
    sys: &BilinearSystem3,
    u: &[f64],
    v: &[f64],
    tol: f64,
) -> Result<TheoremBVerdict, BilinearError> {
    let eu = eigen3(&sys.a_of_u(u)?, tol);
    let ev = eigen3(&sys.a_of_u(v)?, tol);
    let gap = |e: &Eigen3| -> Option<f64> {
        match (&e.kind, &e.complex_pair) {
            (EigenKind::OneRealOneComplexPair, Some((re, _))) => {
                Some(e.real_eigenvalues[0] - re)
            }
            _ => None,
        }
    };
    match (gap(&eu), gap(&ev)) {
        (Some(gu), Some(gv)) => {
            let product = gu * gv;
            Ok(TheoremBVerdict {
                applies: true,
                product: Some(product),
                controllable_sufficient: product < -tol,
                boundary: product.abs() <= tol,
                larc_checked: false,
            })
        }
        _ => Ok(TheoremBVerdict {
            applies: false,
            product: None,
            controllable_sufficient: false,
            boundary: false,
            larc_checked: false,
        }),
    }
}

/// The projected system on the sphere of directions, one generator per
/// control level.
pub fn project_sphere(
    sys: &BilinearSystem3,
    u_levels: &[Vec<f64>],
) -> Result<ControlSystem, FieldError> {
    fields::bilinear_sphere(sys, u_levels)
}
