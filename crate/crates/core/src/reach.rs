//! Reachable-set sampling, grid coverage, closed-orbit detection, the
//! positive-spanning (ample) cone check, and the orbit-tube verification.

use nalgebra::{DMatrix, DVector};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::fields::{example1_field, ControlSystem, FieldError};
use crate::flow::{integrate, FlowError, IntegratorOptions};
use crate::lie::{larc_check, LieError};
use crate::manifold::{Manifold, ManifoldError, Point};
use crate::numeric;
use crate::simplex::{nonneg_solve, LpOutcome};

#[derive(Debug, Error)]
pub enum ReachError {
    #[error("coverage needs a compact manifold (torus or sphere)")]
    NonCompact,
    #[error("orbit tube precondition failed: {0}")]
    TubePrecondition(String),
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error(transparent)]
    Flow(#[from] FlowError),
    #[error(transparent)]
    Lie(#[from] LieError),
    #[error(transparent)]
    Manifold(#[from] ManifoldError),
}

/// Random-schedule sampling parameters. Durations are uniform over
/// `[0, horizon / legs_per_sample]`; `forward_only = false` flips every
/// duration's sign, sampling the backward-reachable set instead.
#[derive(Debug, Clone, Serialize)]
pub struct ReachOptions {
    pub horizon: f64,
    pub legs_per_sample: usize,
    pub samples: usize,
    pub forward_only: bool,
}

impl ReachOptions {
    pub fn new(horizon: f64, samples: usize) -> Self {
        ReachOptions { horizon, legs_per_sample: 8, samples, forward_only: true }
    }
}

/// Every leg endpoint of every surviving sample, in sample order.
#[derive(Debug, Clone)]
pub struct ReachCloud {
    pub points: Vec<Point>,
    pub dropped: usize,
    pub seed: u64,
}

/// A periodic trajectory of a single generator.
#[derive(Debug, Clone, Serialize)]
pub struct ClosedOrbit {
    pub base: Vec<f64>,
    pub generator_index: usize,
    pub period: f64,
    pub return_error: f64,
}

/// Positive-spanning certificate: per-target nonnegative coefficients, or a
/// direction making a nonpositive inner product with every input vector.
#[derive(Debug, Clone, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AmpleCertificate {
    PositiveCombinations { targets: Vec<Vec<f64>>, coefficients: Vec<Vec<f64>> },
    SeparatingDirection { direction: Vec<f64> },
}

#[derive(Debug, Clone, Serialize)]
pub struct AmpleReport {
    pub point: Vec<f64>,
    pub span_dim: usize,
    pub positively_spanning: bool,
    pub certificate: AmpleCertificate,
}

/// Tube controllability fractions around a closed orbit.
#[derive(Debug, Clone, Serialize)]
pub struct TubeReport {
    pub covered_fraction_forward: f64,
    pub covered_fraction_backward: f64,
    pub tube_points: usize,
    pub seed: u64,
}

/// Sample the (forward or backward) reachable set from `q0` with random
/// piecewise-constant schedules. Deterministic for a given seed regardless
/// of thread count: sample `i` uses its own stream seeded by `seed + i`.
/// Samples whose trajectory blows up are dropped and counted.
pub fn reach_sample(
    sys: &ControlSystem,
    q0: &Point,
    opts: &ReachOptions,
    int_opts: &IntegratorOptions,
    seed: u64,
) -> Result<ReachCloud, ReachError> {
    let q0 = sys.manifold.wrap(q0)?;
    let max_leg = opts.horizon / opts.legs_per_sample.max(1) as f64;
    let count = sys.generators.len();
    let results: Vec<Option<Vec<Point>>> = (0..opts.samples as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(i));
            let mut x = q0.clone();
            let mut recorded = Vec::with_capacity(opts.legs_per_sample);
            for _ in 0..opts.legs_per_sample {
                let index = rng.random_range(0..count);
                let mut t = rng.random_range(0.0..max_leg);
                if !opts.forward_only {
                    t = -t;
                }
                match integrate(&sys.generators[index], &x, t, int_opts) {
                    Ok(next) => {
                        x = next;
                        recorded.push(x.clone());
                    }
                    Err(FlowError::Blowup { .. }) => return Ok(None),
                    Err(e) => return Err(e),
                }
            }
            Ok(Some(recorded))
        })
        .collect::<Result<_, FlowError>>()?;
    let dropped = results.iter().filter(|r| r.is_none()).count();
    let points = results.into_iter().flatten().flatten().collect();
    Ok(ReachCloud { points, dropped, seed })
}

/// Fraction of grid cells hit by the cloud. Torus: a uniform grid per axis.
/// Sphere: `cells_per_axis` equal-area latitude bands times the same number
/// of longitude sectors. Euclidean space is rejected (non-compact).
pub fn coverage(m: &Manifold, cloud: &[Point], cells_per_axis: usize) -> Result<f64, ReachError> {
    let cells = cells_per_axis.max(1);
    let mut hit = std::collections::HashSet::new();
    let total: usize;
    match m {
        Manifold::Rn { .. } => return Err(ReachError::NonCompact),
        Manifold::Torus { periods } => {
            total = cells.pow(periods.len() as u32);
            for p in cloud {
                let idx: Vec<usize> = p
                    .iter()
                    .zip(periods.iter())
                    .map(|(&x, &period)| {
                        let frac = (x / period).rem_euclid(1.0);
                        ((frac * cells as f64) as usize).min(cells - 1)
                    })
                    .collect();
                hit.insert(idx);
            }
        }
        Manifold::Sphere2 => {
            total = cells * cells;
            for p in cloud {
                let band = ((((p[2] + 1.0) / 2.0) * cells as f64) as usize).min(cells - 1);
                let angle = (p[1].atan2(p[0]) + std::f64::consts::PI)
                    / (2.0 * std::f64::consts::PI);
                let sector = ((angle * cells as f64) as usize).min(cells - 1);
                hit.insert(vec![band, sector]);
            }
        }
    }
    Ok(hit.len() as f64 / total as f64)
}

/// Steer the staircase system to prescribed second-block coordinates: during
/// unit-time stage k the control is the (mod-1 reduced) target divided by
/// the pulse integral, moving exactly one coordinate per stage.
pub fn steer_example1(
    n: usize,
    targets: &[f64],
    int_opts: &IntegratorOptions,
) -> Result<Point, ReachError> {
    if targets.len() != n - 1 {
        return Err(ReachError::Field(FieldError::InvalidParams(format!(
            "expected {} targets for n = {n}, got {}",
            n - 1,
            targets.len()
        ))));
    }
    let mut x = DVector::zeros(n);
    for &target in targets {
        let reduced = target - target.round(); // representative in [-1/2, 1/2]
        let u = reduced / crate::fields::OMEGA_INTEGRAL;
        let f = example1_field(n, u)?;
        x = integrate(&f, &x, 1.0, int_opts)?;
    }
    Ok(x)
}

/// Follow one generator from `q0` looking for a return to `q0`. A coarse
/// pass flags local minima of the distance to `q0`; a minimum is a candidate
/// when it is small at coarse resolution (within one coarse step of motion
/// plus the acceptance band). Bisection on the radial speed then refines the
/// return time; the orbit is accepted if the refined distance is below `tol`
/// and the period exceeds 1e-3.
pub fn find_closed_orbit(
    sys: &ControlSystem,
    generator_index: usize,
    q0: &Point,
    t_max: f64,
    tol: f64,
    int_opts: &IntegratorOptions,
) -> Result<Option<ClosedOrbit>, ReachError> {
    let f = sys
        .generators
        .get(generator_index)
        .ok_or(FlowError::BadLeg { leg: 0, index: generator_index, count: sys.generators.len() })?;
    let q0 = sys.manifold.wrap(q0)?;
    let min_period = 1e-3;
    let coarse_n = 4096usize;
    let dt = (t_max / coarse_n as f64).max(int_opts.step);
    let steps = (t_max / dt).ceil() as usize;

    let mut x = q0.clone();
    let mut dist = vec![0.0f64];
    let mut vmax = f.eval(&x)?.norm();
    for _ in 0..steps {
        x = integrate(f, &x, dt, int_opts)?;
        vmax = vmax.max(f.eval(&x)?.norm());
        dist.push(sys.manifold.distance(&x, &q0)?);
    }
    let scale = 1.0 + q0.norm();
    let threshold = vmax * dt + 10.0 * tol * scale;

    for i in 1..dist.len().saturating_sub(1) {
        let t_i = i as f64 * dt;
        if t_i <= min_period || dist[i] > threshold {
            continue;
        }
        if !(dist[i] <= dist[i - 1] && dist[i] <= dist[i + 1]) {
            continue;
        }
        // radial speed g(t) = <q(t) - q0, V(q(t))> changes sign at the
        // closest approach; bisect it over the bracketing coarse interval
        let g = |t: f64| -> Result<f64, ReachError> {
            let p = integrate(f, &q0, t, int_opts)?;
            let d = sys.manifold.displacement(&p, &q0);
            Ok(d.dot(&f.eval(&p)?))
        };
        let mut lo = t_i - dt;
        let mut hi = t_i + dt;
        let (mut glo, ghi) = (g(lo)?, g(hi)?);
        if glo == 0.0 {
            // already at the minimum
        } else if glo * ghi > 0.0 {
            continue;
        }
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            let gm = g(mid)?;
            if glo * gm <= 0.0 {
                hi = mid;
            } else {
                lo = mid;
                glo = gm;
            }
        }
        let period = 0.5 * (lo + hi);
        let return_error = sys.manifold.distance(&integrate(f, &q0, period, int_opts)?, &q0)?;
        if return_error < tol && period > min_period {
            return Ok(Some(ClosedOrbit {
                base: q0.iter().copied().collect(),
                generator_index,
                period,
                return_error,
            }));
        }
    }
    Ok(None)
}

/// Does the set of tangent vectors positively span its own linear span?
/// True iff each of `±(orthonormal basis of the span)` is a nonnegative
/// combination of the inputs; the first failure yields a separating
/// direction from the infeasibility certificate.
pub fn ample_check(q: &Point, vectors: &[DVector<f64>], tol: f64) -> AmpleReport {
    let point: Vec<f64> = q.iter().copied().collect();
    let dim = vectors.first().map_or(0, |v| v.len());
    let stacked = if vectors.is_empty() {
        DMatrix::zeros(dim, 0)
    } else {
        DMatrix::from_columns(vectors)
    };
    let span_dim = numeric::svd_rank(&stacked, 1e-9);
    let svd = stacked.clone().svd(true, false);
    let u = svd.u.expect("svd with u requested");
    let mut targets = Vec::new();
    let mut coefficients = Vec::new();
    for b in 0..span_dim {
        let basis: DVector<f64> = u.column(b).into();
        for dir in [1.0, -1.0] {
            let target = &basis * dir;
            match nonneg_solve(vectors, &target, tol.max(1e-12)) {
                LpOutcome::Feasible(x) => {
                    targets.push(target.iter().copied().collect());
                    coefficients.push(x);
                }
                LpOutcome::Infeasible(y) => {
                    let span_project = |v: &DVector<f64>| {
                        let mut w = DVector::zeros(dim);
                        for c in 0..span_dim {
                            let col: DVector<f64> = u.column(c).into();
                            w += &col * col.dot(v);
                        }
                        let norm = w.norm();
                        if norm > 0.0 {
                            w /= norm;
                        }
                        w
                    };
                    // prefer the most separating direction (away from the
                    // nearest convex-hull point); when the hull touches the
                    // origin, fall back to the LP's weak certificate
                    let hull = min_norm_hull_point(vectors);
                    let mut w = if hull.norm() > 1e-7 {
                        span_project(&(-hull))
                    } else {
                        span_project(&y)
                    };
                    let sep = |w: &DVector<f64>| {
                        vectors.iter().map(|v| w.dot(v)).fold(f64::NEG_INFINITY, f64::max)
                    };
                    if sep(&w) > tol {
                        w = span_project(&y);
                    }
                    return AmpleReport {
                        point,
                        span_dim,
                        positively_spanning: false,
                        certificate: AmpleCertificate::SeparatingDirection {
                            direction: w.iter().copied().collect(),
                        },
                    };
                }
            }
        }
    }
    AmpleReport {
        point,
        span_dim,
        positively_spanning: true,
        certificate: AmpleCertificate::PositiveCombinations { targets, coefficients },
    }
}

/// Closest point of the convex hull of `vectors` to the origin (Gilbert's
/// iteration with exact line search). Its negation, when nonzero, is the
/// direction separating the origin from the hull with the largest margin.
fn min_norm_hull_point(vectors: &[DVector<f64>]) -> DVector<f64> {
    let mut x = vectors[0].clone();
    for _ in 0..20_000 {
        let s = vectors
            .iter()
            .min_by(|a, b| x.dot(a).partial_cmp(&x.dot(b)).unwrap())
            .expect("nonempty");
        let d = s - &x;
        let denom = d.norm_squared();
        if denom < 1e-30 {
            break;
        }
        let t = (-x.dot(&d) / denom).clamp(0.0, 1.0);
        if t <= 1e-15 {
            break;
        }
        x += d * t;
    }
    x
}

/// Empirically test two-way controllability in a tube around a closed
/// orbit: sample targets near the orbit, then measure how much of the tube
/// the forward cloud from `larc_point` covers and how much of it can reach
/// `larc_point` back (backward cloud). Requires the rank condition at
/// `larc_point` and the orbit passing within `radius` of it.
pub fn orbit_tube_check(
    sys: &ControlSystem,
    orbit: &ClosedOrbit,
    larc_point: &Point,
    radius: f64,
    reach_opts: &ReachOptions,
    int_opts: &IntegratorOptions,
    seed: u64,
) -> Result<TubeReport, ReachError> {
    let larc_point = sys.manifold.wrap(larc_point)?;
    let report = larc_check(sys, &larc_point, sys.manifold.ambient_dim(), 1e-7)?;
    if !report.larc_holds {
        return Err(ReachError::TubePrecondition(format!(
            "rank condition fails at the base point (achieved {} of {})",
            report.achieved_dim, report.ambient_dim
        )));
    }
    let f = sys.generators.get(orbit.generator_index).ok_or(FlowError::BadLeg {
        leg: 0,
        index: orbit.generator_index,
        count: sys.generators.len(),
    })?;
    let base = crate::manifold::point(&orbit.base);
    let orbit_samples = 64;
    let mut on_orbit = Vec::with_capacity(orbit_samples);
    let mut min_dist = f64::INFINITY;
    let mut x = sys.manifold.wrap(&base)?;
    let dt = orbit.period / orbit_samples as f64;
    for _ in 0..orbit_samples {
        on_orbit.push(x.clone());
        min_dist = min_dist.min(sys.manifold.distance(&x, &larc_point)?);
        x = integrate(f, &x, dt, int_opts)?;
    }
    if min_dist > radius {
        return Err(ReachError::TubePrecondition(format!(
            "orbit stays {min_dist:.3e} away from the base point (> radius {radius:.3e})"
        )));
    }

    // tube targets: random orbit point plus a random tangent offset <= radius
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_targets = 40;
    let mut targets = Vec::with_capacity(n_targets);
    for _ in 0..n_targets {
        let center = &on_orbit[rng.random_range(0..on_orbit.len())];
        let raw = DVector::from_fn(sys.manifold.ambient_dim(), |_, _| {
            rng.random_range(-1.0..1.0)
        });
        let mut offset = sys.manifold.tangent_project(center, &raw);
        let norm = offset.norm();
        if norm > 0.0 {
            offset *= rng.random_range(0.0..radius) / norm;
        }
        targets.push(sys.manifold.wrap(&(center + offset))?);
    }

    let capture = radius / 10.0;
    let forward = reach_sample(sys, &larc_point, reach_opts, int_opts, seed)?;
    let mut back_opts = reach_opts.clone();
    back_opts.forward_only = false;
    let backward = reach_sample(sys, &larc_point, &back_opts, int_opts, seed.wrapping_add(1))?;

    let hit_fraction = |cloud: &ReachCloud| -> Result<f64, ReachError> {
        let mut hits = 0usize;
        for target in &targets {
            let mut close = false;
            for p in &cloud.points {
                if sys.manifold.distance(p, target)? <= capture {
                    close = true;
                    break;
                }
            }
            if close {
                hits += 1;
            }
        }
        Ok(hits as f64 / targets.len() as f64)
    };

    Ok(TubeReport {
        covered_fraction_forward: hit_fraction(&forward)?,
        covered_fraction_backward: hit_fraction(&backward)?,
        tube_points: targets.len(),
        seed,
    })
}
