//! Vector fields on a manifold with value and Jacobian evaluation, and
//! builders for the named benchmark systems.

use crate::expr::{self, Expr, ExprError};
use crate::manifold::{Manifold, ManifoldError, Point};
use nalgebra::{DMatrix, DVector};
use serde::Deserialize;
use std::sync::OnceLock;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum FieldError {
    #[error(transparent)]
    Manifold(#[from] ManifoldError),
    #[error(transparent)]
    Expr(#[from] ExprError),
    #[error("field has {got} components but the ambient dimension is {expected}")]
    ComponentCount { expected: usize, got: usize },
    #[error("unknown builtin system `{0}`")]
    UnknownBuiltin(String),
    #[error("invalid builtin parameters: {0}")]
    InvalidParams(String),
    #[error("generators must share one manifold")]
    MixedManifolds,
}

/// How the components of a field are given.
#[derive(Debug, Clone, PartialEq)]
pub enum Components {
    /// One expression per ambient coordinate, over `x1..xn` and `u1..ud`.
    Symbolic(Vec<Expr>),
    /// `x -> M x`.
    Linear(DMatrix<f64>),
    /// The bilinear system projected to directions: `v -> Mv - <v, Mv> v`.
    SphereLinear(DMatrix<f64>),
    /// A bracket of two fields evaluated by nested finite differences.
    /// `depth` counts bracket nesting and widens the difference step.
    BracketFd {
        left: Box<VectorField>,
        right: Box<VectorField>,
        depth: u32,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct VectorField {
    pub manifold: Manifold,
    pub components: Components,
    /// Fixed control values `u1..ud` for a frozen member of the family.
    pub controls: Vec<f64>,
}

/// Base step for central finite differences of native fields.
const FD_BASE_STEP: f64 = 1e-5;

impl VectorField {
    pub fn symbolic(
        manifold: Manifold,
        components: Vec<Expr>,
        controls: Vec<f64>,
    ) -> Result<Self, FieldError> {
        if components.len() != manifold.ambient_dim() {
            return Err(FieldError::ComponentCount {
                expected: manifold.ambient_dim(),
                got: components.len(),
            });
        }
        Ok(VectorField {
            manifold,
            components: Components::Symbolic(components),
            controls,
        })
    }

    pub fn linear(manifold: Manifold, matrix: DMatrix<f64>) -> Self {
        VectorField {
            manifold,
            components: Components::Linear(matrix),
            controls: Vec::new(),
        }
    }

    pub fn sphere_linear(matrix: DMatrix<f64>) -> Self {
        VectorField {
            manifold: Manifold::Sphere2,
            components: Components::SphereLinear(matrix),
            controls: Vec::new(),
        }
    }

    /// Bracket-nesting level; 0 for plain fields.
    pub fn fd_level(&self) -> u32 {
        match &self.components {
            Components::BracketFd { depth, .. } => *depth,
            _ => 0,
        }
    }

    /// Finite-difference step for this field's Jacobian: widened per bracket
    /// nesting level (`h -> h^(1/2)` each level) to damp noise growth.
    fn fd_step(&self) -> f64 {
        FD_BASE_STEP.powf(1.0 / (1u64 << self.fd_level().min(30)) as f64)
    }

    /// Evaluate the field at `q` in ambient coordinates. `q` is
    /// canonicalized first.
    pub fn eval(&self, q: &Point) -> Result<DVector<f64>, FieldError> {
        let q = self.manifold.wrap(q)?;
        self.eval_canonical(&q)
    }

    fn eval_canonical(&self, q: &Point) -> Result<DVector<f64>, FieldError> {
        match &self.components {
            Components::Symbolic(comps) => {
                let env = expr::Env {
                    x: q.as_slice(),
                    u: &self.controls,
                };
                let mut out = DVector::zeros(comps.len());
                for (i, c) in comps.iter().enumerate() {
                    out[i] = c.eval(&env)?;
                }
                Ok(out)
            }
            Components::Linear(m) => Ok(m * q),
            Components::SphereLinear(m) => {
                let mv = m * q;
                let radial = q.dot(&mv);
                Ok(&mv - q * radial)
            }
            Components::BracketFd { left, right, .. } => {
                let lv = left.eval_canonical(q)?;
                let rv = right.eval_canonical(q)?;
                let jl = left.jacobian(q)?;
                let jr = right.jacobian(q)?;
                let raw = &jr * &lv - &jl * &rv;
                Ok(self.manifold.tangent_project(q, &raw))
            }
        }
    }

    /// Jacobian of the ambient representation at `q`: symbolic fields by
    /// symbolic differentiation, linear ones in closed form, the rest by
    /// central finite differences with step `h * (1 + |q_j|)`.
    pub fn jacobian(&self, q: &Point) -> Result<DMatrix<f64>, FieldError> {
        let q = self.manifold.wrap(q)?;
        let n = self.manifold.ambient_dim();
        match &self.components {
            Components::Symbolic(comps) => {
                let env = expr::Env {
                    x: q.as_slice(),
                    u: &self.controls,
                };
                let mut jac = DMatrix::zeros(n, n);
                for (i, c) in comps.iter().enumerate() {
                    for j in 0..n {
                        jac[(i, j)] = c.diff(expr::Var::X(j)).eval(&env)?;
                    }
                }
                Ok(jac)
            }
            Components::Linear(m) => Ok(m.clone()),
            Components::SphereLinear(m) => {
                // d/dv [Mv - (v^T M v) v] = M - (v^T M v) I - v ((M + M^T) v)^T
                let mv = m * &q;
                let radial = q.dot(&mv);
                let sym = (m + m.transpose()) * &q;
                let mut jac = m.clone();
                for i in 0..3 {
                    jac[(i, i)] -= radial;
                    for j in 0..3 {
                        jac[(i, j)] -= q[i] * sym[j];
                    }
                }
                Ok(jac)
            }
            Components::BracketFd { .. } => {
                let h0 = self.fd_step();
                let mut jac = DMatrix::zeros(n, n);
                for j in 0..n {
                    let h = h0 * (1.0 + q[j].abs());
                    let mut qp = q.clone();
                    let mut qm = q.clone();
                    qp[j] += h;
                    qm[j] -= h;
                    let fp = self.eval_canonical(&qp)?;
                    let fm = self.eval_canonical(&qm)?;
                    for i in 0..n {
                        jac[(i, j)] = (fp[i] - fm[i]) / (2.0 * h);
                    }
                }
                Ok(jac)
            }
        }
    }

    /// Component expressions with the frozen control values substituted in.
    /// Only meaningful for symbolic fields.
    pub fn bound_components(&self) -> Option<Vec<Expr>> {
        match &self.components {
            Components::Symbolic(comps) => Some(
                comps
                    .iter()
                    .map(|c| c.bind_controls(&self.controls))
                    .collect(),
            ),
            _ => None,
        }
    }
}

/// Lie bracket value `[V, W](q) = DW(q) V(q) - DV(q) W(q)`, tangent-projected
/// on the sphere.
pub fn bracket(v: &VectorField, w: &VectorField, q: &Point) -> Result<DVector<f64>, FieldError> {
    if v.manifold != w.manifold {
        return Err(FieldError::MixedManifolds);
    }
    let q = v.manifold.wrap(q)?;
    let vv = v.eval_canonical(&q)?;
    let wv = w.eval_canonical(&q)?;
    let jv = v.jacobian(&q)?;
    let jw = w.jacobian(&q)?;
    let raw = jw * vv - jv * wv;
    Ok(v.manifold.tangent_project(&q, &raw))
}

/// Materialize `[V, W]` as a field: symbolically when both sides are
/// symbolic, in closed form for linear fields, otherwise as a nested
/// finite-difference bracket.
pub fn bracket_field(v: &VectorField, w: &VectorField) -> Result<VectorField, FieldError> {
    if v.manifold != w.manifold {
        return Err(FieldError::MixedManifolds);
    }
    let manifold = v.manifold.clone();
    match (&v.components, &w.components) {
        (Components::Symbolic(_), Components::Symbolic(_)) => {
            let vc = v.bound_components().unwrap();
            let wc = w.bound_components().unwrap();
            let n = manifold.ambient_dim();
            let mut comps = Vec::with_capacity(n);
            for i in 0..n {
                let mut acc = Expr::Const(0.0);
                for j in 0..n {
                    let term = expr::sub(
                        expr::mul(vc[j].clone(), wc[i].diff(expr::Var::X(j))),
                        expr::mul(wc[j].clone(), vc[i].diff(expr::Var::X(j))),
                    );
                    acc = expr::add(acc, term);
                }
                comps.push(acc);
            }
            VectorField::symbolic(manifold, comps, Vec::new())
        }
        (Components::Linear(a), Components::Linear(b)) => {
            // [Ax, Bx] = (BA - AB) x under the DW.V - DV.W convention
            Ok(VectorField::linear(manifold, b * a - a * b))
        }
        _ => {
            let depth = 1 + v.fd_level().max(w.fd_level());
            Ok(VectorField {
                manifold,
                components: Components::BracketFd {
                    left: Box::new(v.clone()),
                    right: Box::new(w.clone()),
                    depth,
                },
                controls: Vec::new(),
            })
        }
    }
}

/// A finite ordered family of generator fields on one manifold.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlSystem {
    pub manifold: Manifold,
    pub generators: Vec<VectorField>,
    pub label: String,
}

impl ControlSystem {
    pub fn new(
        manifold: Manifold,
        generators: Vec<VectorField>,
        label: impl Into<String>,
    ) -> Result<Self, FieldError> {
        if generators.is_empty() {
            return Err(FieldError::InvalidParams(
                "a control system needs at least one generator".into(),
            ));
        }
        if generators.iter().any(|g| g.manifold != manifold) {
            return Err(FieldError::MixedManifolds);
        }
        Ok(ControlSystem {
            manifold,
            generators,
            label: label.into(),
        })
    }

    pub fn ambient_dim(&self) -> usize {
        self.manifold.ambient_dim()
    }

    pub fn dim(&self) -> usize {
        self.manifold.dim()
    }
}

// ---------------------------------------------------------------------------
// Builtin systems
// ---------------------------------------------------------------------------

/// Normalization constant `c` so that `omega(r) = c * bump(r, 1/3, 2/3)` has
/// integral 1.5 (the steering control then uses `u = y / 1.5`, safely inside
/// the open control interval (-1, 1)).
pub fn omega_scale() -> f64 {
    static SCALE: OnceLock<f64> = OnceLock::new();
    *SCALE.get_or_init(|| OMEGA_INTEGRAL / bump_cell_integral(1e-10))
}

/// Integral of `bump(r, 1/3, 2/3)` over its support, to relative accuracy
/// `tol`. The raw values are of order `exp(-36)`, far below any sensible
/// absolute tolerance, so the integrand is lifted by `exp(36)` (its peak is
/// then exactly 1) before quadrature and the factor is restored afterwards.
fn bump_cell_integral(tol: f64) -> f64 {
    let (a, b) = (1.0 / 3.0, 2.0 / 3.0);
    let lifted = crate::numeric::adaptive_simpson(
        &|r: f64| (36.0 - 1.0 / ((r - a) * (b - r))).exp(),
        a,
        b,
        tol,
    );
    (-36.0f64).exp() * lifted
}

/// The fixed integral of omega; any value > 1 works, this one is pinned for
/// reproducibility.
pub const OMEGA_INTEGRAL: f64 = 1.5;

/// The translation-invariant torus system whose Lie algebra has dimension
/// at most 2 everywhere yet which is controllable by staircase controls.
/// Generators are the field frozen at each control level in `(-1, 1)`.
pub fn example1(n: usize, u_levels: &[f64]) -> Result<ControlSystem, FieldError> {
    if n < 3 {
        return Err(FieldError::InvalidParams(format!(
            "example1 needs n > 2, got {n}"
        )));
    }
    if u_levels.is_empty() {
        return Err(FieldError::InvalidParams("example1 needs control levels".into()));
    }
    if u_levels.iter().any(|u| u.abs() >= 1.0) {
        return Err(FieldError::InvalidParams(
            "example1 control levels must lie in the open interval (-1, 1)".into(),
        ));
    }
    let mut periods = vec![1.0; n];
    periods[0] = (n - 1) as f64;
    let manifold = Manifold::torus(periods);
    let c = omega_scale();
    let mut generators = Vec::new();
    for &u in u_levels {
        let mut comps = vec![Expr::Const(1.0)];
        for k in 0..n - 1 {
            // active on the cell k <= x < k+1; the bump support keeps it
            // smooth across cell boundaries and the torus seam
            comps.push(expr::mul(
                expr::mul(Expr::u(0), Expr::Const(c)),
                Expr::bump(
                    expr::sub(Expr::x(0), Expr::Const(k as f64)),
                    1.0 / 3.0,
                    2.0 / 3.0,
                ),
            ));
        }
        generators.push(VectorField::symbolic(manifold.clone(), comps, vec![u])?);
    }
    ControlSystem::new(manifold, generators, format!("example1(n={n})"))
}

/// The single unfrozen example-1 field at an arbitrary control value,
/// used by the staircase steering law.
pub fn example1_field(n: usize, u: f64) -> Result<VectorField, FieldError> {
    let sys = example1(n, &[u])?;
    Ok(sys.generators.into_iter().next().unwrap())
}

/// The torus counterexample: LARC everywhere, closed orbits through every
/// point, not controllable. `v2_sign` flips the orientation of the bump
/// field supported near the zeros of V1.
pub fn example2(v2_sign: f64) -> Result<ControlSystem, FieldError> {
    use std::f64::consts::PI;
    let manifold = Manifold::torus(vec![2.0 * PI, 2.0 * PI]);
    // V1: angular rate sin(phi) on the first circle factor
    let v1 = VectorField::symbolic(
        manifold.clone(),
        vec![expr::parse("sin(x1)").unwrap(), Expr::Const(0.0)],
        Vec::new(),
    )?;
    // V2: supported exactly on the 1/2-arc-neighborhoods of phi = 0 and
    // phi = pi, nonzero at both; written through cos(phi) so it is smooth
    // and periodic: cos(phi) > cos(1/2) iff arcdist(phi, 0) < 1/2.
    let c = (0.5f64).cos();
    let eta = expr::add(
        Expr::bump(expr::parse("cos(x1)").unwrap(), c, 2.0),
        Expr::bump(expr::parse("-cos(x1)").unwrap(), c, 2.0),
    );
    let v2 = VectorField::symbolic(
        manifold.clone(),
        vec![expr::mul(Expr::Const(v2_sign), eta), Expr::Const(0.0)],
        Vec::new(),
    )?;
    // V3: unit field along the second circle factor
    let v3 = VectorField::symbolic(
        manifold.clone(),
        vec![Expr::Const(0.0), Expr::Const(1.0)],
        Vec::new(),
    )?;
    ControlSystem::new(manifold, vec![v1, v2, v3], "example2")
}

/// Desk-scale LARC fixture on R^3: `d_x` and `d_y + x d_z`.
pub fn heisenberg() -> ControlSystem {
    let manifold = Manifold::euclidean(3);
    let v1 = VectorField::symbolic(
        manifold.clone(),
        vec![Expr::Const(1.0), Expr::Const(0.0), Expr::Const(0.0)],
        Vec::new(),
    )
    .unwrap();
    let v2 = VectorField::symbolic(
        manifold.clone(),
        vec![Expr::Const(0.0), Expr::Const(1.0), Expr::x(0)],
        Vec::new(),
    )
    .unwrap();
    ControlSystem::new(manifold, vec![v1, v2], "heisenberg").unwrap()
}

/// Bilinear generators `x -> (A + sum u^i B_i) x` in R^3, one per level.
pub fn bilinear_lift(
    sys: &crate::bilinear::BilinearSystem3,
    u_levels: &[Vec<f64>],
) -> Result<ControlSystem, FieldError> {
    if u_levels.is_empty() {
        return Err(FieldError::InvalidParams("bilinear_lift needs control levels".into()));
    }
    let manifold = Manifold::euclidean(3);
    let mut generators = Vec::new();
    for u in u_levels {
        let m = sys
            .a_of_u(u)
            .map_err(|e| FieldError::InvalidParams(e.to_string()))?;
        generators.push(VectorField::linear(manifold.clone(), m));
    }
    ControlSystem::new(manifold, generators, "bilinear_lift")
}

/// Same generators projected to the sphere of directions.
pub fn bilinear_sphere(
    sys: &crate::bilinear::BilinearSystem3,
    u_levels: &[Vec<f64>],
) -> Result<ControlSystem, FieldError> {
    if u_levels.is_empty() {
        return Err(FieldError::InvalidParams("bilinear_sphere needs control levels".into()));
    }
    let mut generators = Vec::new();
    for u in u_levels {
        let m = sys
            .a_of_u(u)
            .map_err(|e| FieldError::InvalidParams(e.to_string()))?;
        generators.push(VectorField::sphere_linear(m));
    }
    ControlSystem::new(Manifold::Sphere2, generators, "bilinear_sphere")
}

#[derive(Debug, Deserialize)]
struct Example1Params {
    n: usize,
    u_levels: Vec<f64>,
}

#[derive(Debug, Deserialize)]
struct Example2Params {
    #[serde(default = "default_sign")]
    v2_sign: f64,
}

impl Default for Example2Params {
    fn default() -> Self {
        Example2Params { v2_sign: default_sign() }
    }
}

fn default_sign() -> f64 {
    1.0
}

#[derive(Debug, Deserialize)]
struct BilinearParams {
    a: Vec<f64>,
    #[serde(default)]
    b: Vec<Vec<f64>>,
    u_levels: Vec<Vec<f64>>,
}

/// Construct a builtin system by name. `params` is the JSON parameter object
/// from the config file (may be `null` for parameterless fixtures).
pub fn builtin(name: &str, params: &serde_json::Value) -> Result<ControlSystem, FieldError> {
    let invalid = |e: serde_json::Error| FieldError::InvalidParams(e.to_string());
    match name {
        "example1" => {
            let p: Example1Params = serde_json::from_value(params.clone()).map_err(invalid)?;
            example1(p.n, &p.u_levels)
        }
        "example2" => {
            let p: Example2Params = if params.is_null() {
                Example2Params::default()
            } else {
                serde_json::from_value(params.clone()).map_err(invalid)?
            };
            example2(p.v2_sign)
        }
        "heisenberg" => Ok(heisenberg()),
        "bilinear_lift" | "bilinear_sphere" => {
            let p: BilinearParams = serde_json::from_value(params.clone()).map_err(invalid)?;
            let sys = crate::bilinear::BilinearSystem3::from_rows(&p.a, &p.b)
                .map_err(|e| FieldError::InvalidParams(e.to_string()))?;
            if name == "bilinear_lift" {
                bilinear_lift(&sys, &p.u_levels)
            } else {
                bilinear_sphere(&sys, &p.u_levels)
            }
        }
        other => Err(FieldError::UnknownBuiltin(other.to_string())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::manifold::point;
    use approx::assert_relative_eq;
    use std::f64::consts::PI;

    #[test]
    fn linear_identity_field() {
        let f = VectorField::linear(Manifold::euclidean(2), DMatrix::identity(2, 2));
        let v = f.eval(&point(&[1.0, 2.0])).unwrap();
        assert_eq!(v.as_slice(), &[1.0, 2.0]);
    }

    #[test]
    fn example2_v1_direction_at_p1() {
        // at phi = pi/2 (the point (0,1) on the circle factor) the only
        // available direction is (-1, 0) in the plane; in the angle chart
        // that is d(phi)/dt = sin(pi/2) = 1, and the embedded direction
        // sin(phi) * (-sin phi, cos phi) = (-1, 0).
        let sys = example2(1.0).unwrap();
        let v1 = &sys.generators[0];
        let q = point(&[PI / 2.0, 0.0]);
        let v = v1.eval(&q).unwrap();
        assert_relative_eq!(v[0], 1.0, epsilon = 1e-12);
        assert_relative_eq!(v[1], 0.0, epsilon = 1e-12);
        let phi = q[0];
        let embedded = [
            phi.sin() * (-phi.sin()),
            phi.sin() * phi.cos(),
        ];
        assert_relative_eq!(embedded[0], -1.0, epsilon = 1e-12);
        assert_relative_eq!(embedded[1], 0.0, epsilon = 1e-12);
    }

    #[test]
    fn example1_zero_control_is_pure_x_translation() {
        let sys = example1(3, &[0.0]).unwrap();
        let v = sys.generators[0].eval(&point(&[0.37, 0.9, 0.1])).unwrap();
        assert_eq!(v.as_slice(), &[1.0, 0.0, 0.0]);
    }

    #[test]
    fn jacobian_of_linear_field_is_the_matrix() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let f = VectorField::linear(Manifold::euclidean(2), a.clone());
        assert_eq!(f.jacobian(&point(&[0.3, -0.7])).unwrap(), a);
    }

    #[test]
    fn jacobian_of_constant_field_is_zero() {
        let f = VectorField::symbolic(
            Manifold::euclidean(2),
            vec![Expr::Const(2.0), Expr::Const(-1.0)],
            Vec::new(),
        )
        .unwrap();
        assert_eq!(f.jacobian(&point(&[1.0, 1.0])).unwrap().norm(), 0.0);
    }

    #[test]
    fn example2_v1_angle_rate_derivative_vanishes_at_p1() {
        // d/dphi sin(phi) = cos(phi) = 0 at phi = pi/2; cross-check the
        // symbolic entry against a finite difference of the field itself
        let sys = example2(1.0).unwrap();
        let v1 = &sys.generators[0];
        let q = point(&[PI / 2.0, 0.0]);
        let jac = v1.jacobian(&q).unwrap();
        assert!(jac[(0, 0)].abs() < 1e-12);
        let h = 1e-6;
        let fp = v1.eval(&point(&[PI / 2.0 + h, 0.0])).unwrap();
        let fm = v1.eval(&point(&[PI / 2.0 - h, 0.0])).unwrap();
        assert!(((fp[0] - fm[0]) / (2.0 * h)).abs() < 1e-6);
    }

    #[test]
    fn builtin_heisenberg_has_two_generators_on_r3() {
        let sys = builtin("heisenberg", &serde_json::Value::Null).unwrap();
        assert_eq!(sys.generators.len(), 2);
        assert_eq!(sys.manifold, Manifold::euclidean(3));
    }

    #[test]
    fn builtin_example2_v2_support() {
        let sys = builtin("example2", &serde_json::Value::Null).unwrap();
        let v2 = &sys.generators[1];
        assert!(v2.eval(&point(&[0.0, 0.0])).unwrap()[0] > 0.0);
        assert_eq!(v2.eval(&point(&[PI / 2.0, 0.0])).unwrap()[0], 0.0);
        assert!(v2.eval(&point(&[PI, 0.0])).unwrap()[0] > 0.0);
        // support boundary at arc distance exactly 1/2
        assert_eq!(v2.eval(&point(&[0.5, 0.0])).unwrap()[0], 0.0);
        assert!(v2.eval(&point(&[0.49, 0.0])).unwrap()[0] > 0.0);
    }

    #[test]
    fn builtin_example1_three_levels() {
        let params = serde_json::json!({"n": 3, "u_levels": [-0.9, 0.0, 0.9]});
        let sys = builtin("example1", &params).unwrap();
        assert_eq!(sys.generators.len(), 3);
        assert_eq!(
            sys.manifold,
            Manifold::torus(vec![2.0, 1.0, 1.0])
        );
    }

    #[test]
    fn builtin_rejects_bad_levels_and_names() {
        let params = serde_json::json!({"n": 3, "u_levels": [1.5]});
        assert!(matches!(
            builtin("example1", &params),
            Err(FieldError::InvalidParams(_))
        ));
        assert!(matches!(
            builtin("nope", &serde_json::Value::Null),
            Err(FieldError::UnknownBuiltin(_))
        ));
    }

    #[test]
    fn symbolic_jacobian_matches_finite_differences() {
        use rand::prelude::*;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let manifold = Manifold::euclidean(2);
        let f = VectorField::symbolic(
            manifold.clone(),
            vec![
                expr::parse("sin(x1)*x2 + x2^2").unwrap(),
                expr::parse("cos(x1*x2) - x1").unwrap(),
            ],
            Vec::new(),
        )
        .unwrap();
        for _ in 0..100 {
            let q = point(&[rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)]);
            let jac = f.jacobian(&q).unwrap();
            let h = 1e-6;
            for j in 0..2 {
                let mut qp = q.clone();
                let mut qm = q.clone();
                qp[j] += h;
                qm[j] -= h;
                let fd = (f.eval(&qp).unwrap() - f.eval(&qm).unwrap()) / (2.0 * h);
                for i in 0..2 {
                    assert_relative_eq!(jac[(i, j)], fd[i], epsilon = 1e-6, max_relative = 1e-5);
                }
            }
        }
    }

    #[test]
    fn example2_v1_zero_set_and_joint_nonvanishing() {
        let sys = example2(1.0).unwrap();
        let v1 = &sys.generators[0];
        let v2 = &sys.generators[1];
        let n_grid = 10_000;
        for i in 0..n_grid {
            let phi = 2.0 * PI * i as f64 / n_grid as f64;
            let q = point(&[phi, 0.0]);
            let a = v1.eval(&q).unwrap()[0];
            let b = v2.eval(&q).unwrap()[0];
            let at_zero = phi == 0.0 || (phi - PI).abs() < 1e-12;
            if at_zero {
                assert!(a.abs() < 1e-12);
            } else {
                assert!(a.abs() > 0.0, "V1 vanished away from 0/pi at phi={phi}");
            }
            assert!(a.abs() > 0.0 || b.abs() > 0.0, "both vanish at phi={phi}");
        }
    }

    #[test]
    fn example1_translation_invariance_in_y() {
        let sys = example1(4, &[0.7]).unwrap();
        let f = &sys.generators[0];
        let q = point(&[1.45, 0.3, 0.8, 0.25]);
        let base = f.eval(&q).unwrap();
        // the field depends on x only: shift every y coordinate
        let shifted = f.eval(&point(&[1.45, 0.9, 0.05, 0.6])).unwrap();
        assert_eq!(base, shifted);
    }

    #[test]
    fn omega_integral_is_pinned() {
        let c = omega_scale();
        // independent oracle: fixed-grid composite Simpson on the lifted
        // integrand (all derivatives vanish at the endpoints, so this
        // converges far past the tolerance at this resolution)
        let (a, b) = (1.0 / 3.0, 2.0 / 3.0);
        let n = 1 << 14;
        let h = (b - a) / n as f64;
        let g = |r: f64| (36.0 - 1.0 / ((r - a) * (b - r))).exp();
        let mut acc = 0.0;
        for i in 0..n {
            let lo = a + i as f64 * h;
            acc += h / 6.0 * (g(lo) + 4.0 * g(lo + 0.5 * h) + g(lo + h));
        }
        let integral = c * (-36.0f64).exp() * acc;
        assert_relative_eq!(integral, OMEGA_INTEGRAL, epsilon = 1e-9);
        assert!(integral > 1.0);
    }

    #[test]
    fn sphere_linear_field_is_tangent() {
        use rand::prelude::*;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(13);
        let m = DMatrix::from_row_slice(3, 3, &[0.4, -1.0, 0.2, 1.0, 0.0, -0.5, 0.3, 0.5, -0.8]);
        let f = VectorField::sphere_linear(m);
        for _ in 0..50 {
            let q = Manifold::Sphere2
                .wrap(&point(&[
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                ]))
                .unwrap();
            let v = f.eval(&q).unwrap();
            assert!(v.dot(&q).abs() <= 1e-12);
        }
    }
}
