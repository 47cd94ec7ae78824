//! Numerical flows, piecewise-constant schedules, their endpoint maps,
//! differentials in the leg durations, and full-rank schedule construction.

use nalgebra::DMatrix;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fields::{ControlSystem, FieldError, VectorField};
use crate::lie::BracketWord;
use crate::manifold::{Manifold, ManifoldError, Point};
use crate::numeric;

#[derive(Debug, Error)]
pub enum FlowError {
    #[error("trajectory left the finite range at t = {time:.6}")]
    Blowup { time: f64 },
    #[error("trajectory left the finite range during leg {leg} at local t = {time:.6}")]
    BlowupAtLeg { leg: usize, time: f64 },
    #[error("schedule leg {leg} names generator {index}, but the system has {count}")]
    BadLeg { leg: usize, index: usize, count: usize },
    #[error("schedule rank stuck at {best_rank} (< {needed}) after {attempts} attempts")]
    RankDeficient { best_rank: usize, needed: usize, attempts: usize },
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error(transparent)]
    Manifold(#[from] ManifoldError),
}

/// A piecewise-constant control law: run the named generator for the signed
/// duration, legs applied left to right (leg 0 first).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Schedule {
    pub legs: Vec<(usize, f64)>,
}

impl Schedule {
    pub fn new(legs: Vec<(usize, f64)>) -> Self {
        Schedule { legs }
    }

    /// Total running time |t1| + ... + |tN|.
    pub fn total_time(&self) -> f64 {
        self.legs.iter().map(|(_, t)| t.abs()).sum()
    }
}

/// Fixed-step RK4 settings.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct IntegratorOptions {
    /// Step size; the last step of a flow is shortened to land exactly.
    pub step: f64,
    /// Pull each RK4 state back onto the unit sphere (no-op elsewhere).
    pub sphere_renormalize: bool,
}

impl Default for IntegratorOptions {
    fn default() -> Self {
        IntegratorOptions { step: 1e-3, sphere_renormalize: true }
    }
}

/// A schedule that was verified (or retried toward) full differential rank.
#[derive(Debug, Clone, Serialize)]
pub struct GeneralSchedule {
    pub schedule: Schedule,
    pub achieved_rank: usize,
    pub retries_used: usize,
    pub seed: u64,
}

/// Flow of a single field: RK4 for signed time `t`. `t = 0` is exactly the
/// identity; a non-finite state aborts with the time reached.
pub fn integrate(
    f: &VectorField,
    q: &Point,
    t: f64,
    opts: &IntegratorOptions,
) -> Result<Point, FlowError> {
    let manifold = f.manifold.clone();
    let mut x = manifold.wrap(q)?;
    if t == 0.0 {
        return Ok(x);
    }
    let sign = t.signum();
    let total = t.abs();
    let mut done = 0.0;
    while done < total {
        let h = sign * opts.step.min(total - done);
        x = rk4_step(f, &x, h)?;
        if x.iter().any(|c| !c.is_finite()) {
            return Err(FlowError::Blowup { time: sign * done });
        }
        if matches!(manifold, Manifold::Sphere2) && opts.sphere_renormalize {
            x = manifold.wrap(&x)?;
        }
        done += h.abs();
    }
    Ok(manifold.wrap(&x)?)
}

fn rk4_step(f: &VectorField, x: &Point, h: f64) -> Result<Point, FlowError> {
    let k1 = f.eval(x)?;
    let k2 = f.eval(&(x + &k1 * (h / 2.0)))?;
    let k3 = f.eval(&(x + &k2 * (h / 2.0)))?;
    let k4 = f.eval(&(x + &k3 * h))?;
    Ok(x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0))
}

/// Endpoint of the composite flow: leg list ((i1,t1),...,(iN,tN)) applies
/// the flow of generator i1 for time t1 first, then the next leg, and so on.
pub fn chrono_map(
    sys: &ControlSystem,
    s: &Schedule,
    q: &Point,
    opts: &IntegratorOptions,
) -> Result<Point, FlowError> {
    let mut x = sys.manifold.wrap(q)?;
    for (leg, &(index, t)) in s.legs.iter().enumerate() {
        let f = sys.generators.get(index).ok_or(FlowError::BadLeg {
            leg,
            index,
            count: sys.generators.len(),
        })?;
        x = integrate(f, &x, t, opts).map_err(|e| match e {
            FlowError::Blowup { time } => FlowError::BlowupAtLeg { leg, time },
            other => other,
        })?;
    }
    Ok(x)
}

/// Partial derivatives of the endpoint in each leg duration, by central
/// differences. Columns are ambient vectors, except on the sphere where they
/// are coefficients in an orthonormal tangent frame at the endpoint (2 rows).
pub fn chrono_jacobian(
    sys: &ControlSystem,
    s: &Schedule,
    q: &Point,
    opts: &IntegratorOptions,
) -> Result<DMatrix<f64>, FlowError> {
    let endpoint = chrono_map(sys, s, q, opts)?;
    let on_sphere = matches!(sys.manifold, Manifold::Sphere2);
    let rows = if on_sphere { 2 } else { sys.manifold.ambient_dim() };
    let mut jac = DMatrix::zeros(rows, s.legs.len());
    let basis = if on_sphere { sys.manifold.tangent_basis(&endpoint) } else { Vec::new() };
    for i in 0..s.legs.len() {
        let h = 1e-5 * (1.0 + s.legs[i].1.abs());
        let mut plus = s.clone();
        plus.legs[i].1 += h;
        let mut minus = s.clone();
        minus.legs[i].1 -= h;
        let p = chrono_map(sys, &plus, q, opts)?;
        let m = chrono_map(sys, &minus, q, opts)?;
        // shortest representative of p - m (wrap-aware on the torus)
        let d = sys.manifold.displacement(&p, &m) / (2.0 * h);
        if on_sphere {
            for (r, b) in basis.iter().enumerate() {
                jac[(r, i)] = b.dot(&d);
            }
        } else {
            jac.set_column(i, &d);
        }
    }
    Ok(jac)
}

/// Singular-value rank of the endpoint differential.
pub fn chrono_rank(
    sys: &ControlSystem,
    s: &Schedule,
    q: &Point,
    opts: &IntegratorOptions,
    tol: f64,
) -> Result<usize, FlowError> {
    Ok(numeric::svd_rank(&chrono_jacobian(sys, s, q, opts)?, tol))
}

/// Legs realizing a bracket word with one base duration: a leaf is a single
/// leg; a node runs left, right, then both inverted (the group commutator).
fn word_legs(w: &BracketWord, dur: f64) -> Vec<(usize, f64)> {
    match w {
        BracketWord::Leaf(i) => vec![(*i, dur)],
        BracketWord::Node(l, r) => {
            let a = word_legs(l, dur);
            let b = word_legs(r, dur);
            let mut legs = Vec::with_capacity(2 * (a.len() + b.len()));
            legs.extend(a.iter().copied());
            legs.extend(b.iter().copied());
            legs.extend(a.iter().rev().map(|&(i, t)| (i, -t)));
            legs.extend(b.iter().rev().map(|&(i, t)| (i, -t)));
            legs
        }
    }
}

/// Build a schedule whose endpoint differential has full rank, by realizing
/// each basis word as a group commutator with random durations and retrying
/// on rank deficiency (the bad duration set is closed with empty interior,
/// so a fresh draw generically escapes it). With `forward_only` every leg
/// duration is forced positive, staying inside the forward-time semigroup.
pub fn general_schedule(
    sys: &ControlSystem,
    q: &Point,
    basis_words: &[BracketWord],
    t_scale: f64,
    seed: u64,
    forward_only: bool,
    opts: &IntegratorOptions,
) -> Result<GeneralSchedule, FlowError> {
    let needed = match sys.manifold {
        Manifold::Sphere2 => 2,
        _ => sys.manifold.ambient_dim(),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best_rank = 0;
    let mut best: Option<Schedule> = None;
    let attempts = 20;
    for retry in 0..attempts {
        let mut legs = Vec::new();
        for w in basis_words {
            let dur = rng.random_range(0.5..1.0) * t_scale;
            legs.extend(word_legs(w, dur));
        }
        if forward_only {
            for leg in &mut legs {
                leg.1 = leg.1.abs();
            }
        }
        let schedule = Schedule::new(legs);
        let rank = chrono_rank(sys, &schedule, q, opts, 1e-7)?;
        if rank > best_rank {
            best_rank = rank;
            best = Some(schedule.clone());
        }
        if rank == needed {
            return Ok(GeneralSchedule {
                schedule,
                achieved_rank: rank,
                retries_used: retry,
                seed,
            });
        }
    }
    let _ = best;
    Err(FlowError::RankDeficient { best_rank, needed, attempts })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::{self, Expr};
    use crate::fields::{bracket, example1, example2, heisenberg};
    use crate::lie::BracketWord;
    use crate::manifold::point;
    use approx::assert_relative_eq;
    use std::f64::consts::PI;

    fn opts() -> IntegratorOptions {
        IntegratorOptions::default()
    }

    #[test]
    fn constant_circle_field_wraps_around() {
        let m = Manifold::torus(vec![2.0 * PI, 2.0 * PI]);
        let f = VectorField::symbolic(m, vec![Expr::Const(0.0), Expr::Const(1.0)], Vec::new())
            .unwrap();
        let q = point(&[1.2, 0.0]);
        let out = integrate(&f, &q, 2.0 * PI, &opts()).unwrap();
        assert!(f.manifold.distance(&out, &q).unwrap() < 1e-9);
    }

    #[test]
    fn scalar_linear_flow_matches_exponential() {
        let f = VectorField::linear(Manifold::euclidean(1), DMatrix::identity(1, 1));
        let out = integrate(&f, &point(&[1.0]), 1.0, &opts()).unwrap();
        assert_relative_eq!(out[0], std::f64::consts::E, epsilon = 1e-8);
    }

    #[test]
    fn zero_time_is_exact_identity() {
        let f = VectorField::linear(Manifold::euclidean(2), DMatrix::identity(2, 2));
        let q = point(&[0.123456789, -9.87654321]);
        assert_eq!(integrate(&f, &q, 0.0, &opts()).unwrap(), q);
    }

    fn smooth_test_field() -> VectorField {
        VectorField::symbolic(
            Manifold::euclidean(2),
            vec![
                expr::parse("sin(x1 + 0.3 * x2)").unwrap(),
                expr::parse("cos(x1) - 0.5 * x2").unwrap(),
            ],
            Vec::new(),
        )
        .unwrap()
    }

    #[test]
    fn flow_group_law_and_reversibility() {
        let f = smooth_test_field();
        let q = point(&[0.4, -0.7]);
        for (s, t) in [(0.3, 0.5), (-0.6, 0.9), (0.8, -0.2)] {
            let two_step = integrate(&f, &integrate(&f, &q, s, &opts()).unwrap(), t, &opts()).unwrap();
            let one_step = integrate(&f, &q, s + t, &opts()).unwrap();
            assert!((two_step - one_step).norm() < 1e-7);
            let back = integrate(&f, &integrate(&f, &q, s, &opts()).unwrap(), -s, &opts()).unwrap();
            assert!((back - &q).norm() < 1e-7);
        }
    }

    #[test]
    fn rk4_error_scales_fourth_order() {
        let f = smooth_test_field();
        let q = point(&[0.1, 0.2]);
        let t = 1.0;
        let endpoint = |step: f64| {
            integrate(&f, &q, t, &IntegratorOptions { step, sphere_renormalize: true }).unwrap()
        };
        let reference = endpoint(0.04 / 16.0);
        let err_h = (endpoint(0.04) - &reference).norm();
        let err_h2 = (endpoint(0.02) - &reference).norm();
        let factor = err_h / err_h2;
        assert!((12.0..=20.0).contains(&factor), "observed error factor {factor}");
    }

    #[test]
    fn blowup_is_reported() {
        let f = VectorField::symbolic(
            Manifold::euclidean(1),
            vec![expr::parse("x1 * x1").unwrap()],
            Vec::new(),
        )
        .unwrap();
        let res = integrate(&f, &point(&[2.0]), 1.0, &opts());
        assert!(matches!(res, Err(FlowError::Blowup { .. })));
    }

    #[test]
    fn empty_schedule_is_identity_with_rank_zero() {
        let sys = heisenberg();
        let q = point(&[0.5, -0.5, 0.1]);
        let s = Schedule::new(vec![]);
        assert_eq!(chrono_map(&sys, &s, &q, &opts()).unwrap(), q);
        assert_eq!(chrono_rank(&sys, &s, &q, &opts(), 1e-7).unwrap(), 0);
    }

    #[test]
    fn commuting_legs_order_independent() {
        let m = Manifold::torus(vec![2.0 * PI, 2.0 * PI]);
        let f1 = VectorField::symbolic(m.clone(), vec![Expr::Const(0.7), Expr::Const(0.0)], Vec::new()).unwrap();
        let f2 = VectorField::symbolic(m.clone(), vec![Expr::Const(0.0), Expr::Const(-0.4)], Vec::new()).unwrap();
        let sys = ControlSystem::new(m.clone(), vec![f1, f2], "shifts").unwrap();
        let q = point(&[1.0, 2.0]);
        let ab = chrono_map(&sys, &Schedule::new(vec![(0, 0.9), (1, 1.3)]), &q, &opts()).unwrap();
        let ba = chrono_map(&sys, &Schedule::new(vec![(1, 1.3), (0, 0.9)]), &q, &opts()).unwrap();
        assert!(m.distance(&ab, &ba).unwrap() < 1e-9);
    }

    #[test]
    fn heisenberg_commutator_schedule_realizes_bracket() {
        let sys = heisenberg();
        let q = point(&[0.0, 0.0, 0.0]);
        let t = 1e-2;
        let s = Schedule::new(vec![(0, t), (1, t), (0, -t), (1, -t)]);
        let end = chrono_map(&sys, &s, &q, &opts()).unwrap();
        let expect = point(&[0.0, 0.0, t * t]);
        assert!((end - expect).norm() <= 5e-6);
    }

    #[test]
    fn commutator_endpoint_error_is_third_order() {
        // group commutator endpoint = q + t^2 [V,W](q) + O(t^3): the log-log
        // slope of the residual against t should be 3
        let m = Manifold::euclidean(2);
        let v = VectorField::symbolic(
            m.clone(),
            vec![expr::parse("1 + 0.2 * x2").unwrap(), expr::parse("0.1 * x1 * x1").unwrap()],
            Vec::new(),
        )
        .unwrap();
        let w = VectorField::symbolic(
            m.clone(),
            vec![expr::parse("0.3 * x2 * x2").unwrap(), expr::parse("1 - 0.4 * x1").unwrap()],
            Vec::new(),
        )
        .unwrap();
        let sys = ControlSystem::new(m, vec![v.clone(), w.clone()], "pair").unwrap();
        let q = point(&[0.2, -0.3]);
        let br = bracket(&v, &w, &q).unwrap();
        let fine = IntegratorOptions { step: 1e-4, sphere_renormalize: true };
        let errs: Vec<f64> = [1e-2, 5e-3, 2.5e-3]
            .iter()
            .map(|&t| {
                let s = Schedule::new(vec![(0, t), (1, t), (0, -t), (1, -t)]);
                let end = chrono_map(&sys, &s, &q, &fine).unwrap();
                (end - (&q + &br * (t * t))).norm()
            })
            .collect();
        for pair in errs.windows(2) {
            let slope = (pair[0] / pair[1]).ln() / 2.0f64.ln();
            assert!((slope - 3.0).abs() <= 0.2, "slope {slope}, errors {errs:?}");
        }
    }

    #[test]
    fn jacobian_last_column_is_the_last_generator() {
        let sys = heisenberg();
        let q = point(&[0.3, 0.1, -0.2]);
        let s = Schedule::new(vec![(0, 0.4), (1, 0.25)]);
        let end = chrono_map(&sys, &s, &q, &opts()).unwrap();
        let jac = chrono_jacobian(&sys, &s, &q, &opts()).unwrap();
        let expect = sys.generators[1].eval(&end).unwrap();
        assert!((jac.column(1) - expect).norm() < 1e-6);
    }

    #[test]
    fn jacobian_at_zero_durations_gives_generators() {
        let sys = heisenberg();
        let q = point(&[0.2, -0.4, 0.9]);
        let s = Schedule::new(vec![(0, 0.0), (1, 0.0)]);
        let jac = chrono_jacobian(&sys, &s, &q, &opts()).unwrap();
        for i in 0..2 {
            let expect = sys.generators[i].eval(&q).unwrap();
            assert!((jac.column(i) - expect).norm() < 1e-6);
        }
    }

    #[test]
    fn heisenberg_four_leg_schedule_has_rank_three() {
        let sys = heisenberg();
        let q = point(&[0.0, 0.0, 0.0]);
        let t = 0.1;
        let s = Schedule::new(vec![(0, t), (1, t), (0, -t), (1, -t)]);
        assert_eq!(chrono_rank(&sys, &s, &q, &opts(), 1e-7).unwrap(), 3);
    }

    #[test]
    fn example1_rank_stays_at_most_two_for_short_schedules() {
        let sys = example1(3, &[0.25, 0.7]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        for _ in 0..100 {
            let n_legs = rng.random_range(1..=4);
            let mut legs = Vec::new();
            let mut budget: f64 = 0.5;
            for _ in 0..n_legs {
                let t = rng.random_range(-1.0..1.0) * (budget / n_legs as f64);
                budget -= t.abs();
                legs.push((rng.random_range(0..2), t));
            }
            let q = point(&[
                rng.random_range(0.0..2.0),
                rng.random_range(0.0..1.0),
                rng.random_range(0.0..1.0),
            ]);
            let rank = chrono_rank(&sys, &Schedule::new(legs), &q, &opts(), 1e-7).unwrap();
            assert!(rank <= 2, "rank {rank} > 2 on a short schedule");
        }
    }

    #[test]
    fn general_schedule_heisenberg_full_rank() {
        let sys = heisenberg();
        let words = vec![
            BracketWord::leaf(0),
            BracketWord::leaf(1),
            BracketWord::node(BracketWord::leaf(0), BracketWord::leaf(1)),
        ];
        let g = general_schedule(&sys, &point(&[0.0; 3]), &words, 0.1, 7, false, &opts()).unwrap();
        assert_eq!(g.achieved_rank, 3);
        assert!(g.retries_used <= 5);
    }

    #[test]
    fn general_schedule_single_generator_line() {
        let sys = ControlSystem::new(
            Manifold::euclidean(1),
            vec![VectorField::symbolic(Manifold::euclidean(1), vec![Expr::Const(1.0)], Vec::new()).unwrap()],
            "line",
        )
        .unwrap();
        let g = general_schedule(&sys, &point(&[0.0]), &[BracketWord::leaf(0)], 0.2, 1, false, &opts())
            .unwrap();
        assert_eq!(g.achieved_rank, 1);
        assert_eq!(g.schedule.legs.len(), 1);
    }

    #[test]
    fn general_schedule_example2_mixed_words() {
        let sys = example2(1.0).unwrap();
        let words = vec![BracketWord::leaf(0), BracketWord::leaf(2)];
        let q = point(&[PI / 2.0, 0.0]);
        let g = general_schedule(&sys, &q, &words, 0.2, 11, false, &opts()).unwrap();
        assert_eq!(g.achieved_rank, 2);
    }

    #[test]
    fn forward_only_emits_positive_durations() {
        let sys = heisenberg();
        let words = vec![
            BracketWord::leaf(0),
            BracketWord::leaf(1),
            BracketWord::node(BracketWord::leaf(0), BracketWord::leaf(1)),
        ];
        let g = general_schedule(&sys, &point(&[0.0; 3]), &words, 0.1, 19, true, &opts()).unwrap();
        assert!(g.schedule.legs.iter().all(|&(_, t)| t > 0.0));
        assert_eq!(g.achieved_rank, 3);
    }

    #[test]
    fn schedule_serializes_as_pairs() {
        let s = Schedule::new(vec![(0, 0.5), (2, -0.25)]);
        assert_eq!(serde_json::to_string(&s).unwrap(), "[[0,0.5],[2,-0.25]]");
    }
}
