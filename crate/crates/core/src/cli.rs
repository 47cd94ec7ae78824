//! Command-line front end: config ingestion, orchestration of the analyses,
//! and deterministic report emission.

use std::io::Write as _;
use std::path::PathBuf;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use nalgebra::DVector;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::bilinear::{theorem_b_check, BilinearSystem3};
use crate::fields::{example1, example1_field, example2, ControlSystem};
use crate::flow::{chrono_map, general_schedule, integrate, IntegratorOptions, Schedule};
use crate::lie::{enumerate_words, eval_word, larc_check};
use crate::manifold::{point, Manifold, Point};
use crate::reach::{
    ample_check, coverage, find_closed_orbit, orbit_tube_check, reach_sample, steer_example1,
    ClosedOrbit, ReachOptions, TubeReport,
};

#[derive(Parser)]
#[command(
    name = "orbitctl",
    version,
    about = "Geometric control toolkit: Lie brackets, flows, reachability, closed orbits"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct ConfigArg {
    /// Path to a JSON system config (builtin reference or inline generators)
    #[arg(long)]
    config: PathBuf,
}

#[derive(Subcommand)]
enum Cmd {
    /// Rank of the iterated-bracket span at a point
    Larc {
        #[command(flatten)]
        config: ConfigArg,
        /// Comma-separated coordinates
        #[arg(long)]
        point: String,
        /// Maximum bracket depth (default: ambient dimension)
        #[arg(long)]
        depth: Option<usize>,
        #[arg(long, default_value_t = 1e-7)]
        tol: f64,
    },
    /// CSV table of bracket words and their values at a point
    BracketTable {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long)]
        point: String,
        #[arg(long)]
        depth: Option<usize>,
    },
    /// Endpoint of a piecewise-constant schedule
    Flow {
        #[command(flatten)]
        config: ConfigArg,
        /// JSON leg list, e.g. [[0,0.5],[1,-0.2]]
        #[arg(long)]
        schedule: String,
        #[arg(long)]
        point: String,
        #[arg(long, default_value_t = 1e-3)]
        step: f64,
    },
    /// Build a schedule with a full-rank endpoint differential
    General {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long)]
        point: String,
        /// Draw only positive leg durations
        #[arg(long)]
        forward_only: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 0.1)]
        t_scale: f64,
        #[arg(long)]
        depth: Option<usize>,
    },
    /// Sample the reachable set; emits a CSV cloud and optional coverage
    Reach {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long)]
        point: String,
        #[arg(long, default_value_t = 500)]
        samples: usize,
        #[arg(long, default_value_t = 5.0)]
        horizon: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Grid cells per axis; when set, a coverage JSON line is appended
        #[arg(long)]
        coverage: Option<usize>,
        /// Write the CSV cloud here instead of standard output
        #[arg(long)]
        cloud_out: Option<PathBuf>,
        #[arg(long, default_value_t = 8)]
        legs: usize,
        #[arg(long, default_value_t = 1e-2)]
        step: f64,
        /// Sample the backward-reachable set instead
        #[arg(long)]
        backward: bool,
    },
    /// Search one generator for a periodic trajectory through a point
    Orbit {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long)]
        generator: usize,
        #[arg(long)]
        point: String,
        #[arg(long, default_value_t = 20.0)]
        tmax: f64,
        #[arg(long, default_value_t = 1e-8)]
        tol: f64,
    },
    /// Does the control set positively span its own linear span at a point?
    Ample {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long)]
        point: String,
        #[arg(long, default_value_t = 1e-9)]
        tol: f64,
    },
    /// Closed-orbit controllability survey over sampled base points
    Criterium {
        #[command(flatten)]
        config: ConfigArg,
        /// One sampled base point per seed
        #[arg(long, value_delimiter = ',', default_value = "1,2,3")]
        orbit_seeds: Vec<u64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 25.0)]
        tmax: f64,
        #[arg(long, default_value_t = 1e-6)]
        orbit_tol: f64,
    },
    /// Two-level eigenvalue sufficiency test for a 3D bilinear system
    TheoremB {
        /// JSON file {"a": [9 numbers], "b": [[9 numbers], ...]}
        #[arg(long)]
        matrices: PathBuf,
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        u: Vec<f64>,
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        v: Vec<f64>,
        #[arg(long, default_value_t = 1e-9)]
        tol: f64,
        /// Nonzero point at which the rank hypothesis is verified
        #[arg(long, default_value = "1.0,0.5,0.25", allow_hyphen_values = true)]
        larc_point: String,
    },
    /// Run a builtin example's full verification bundle
    Examples {
        /// 1 (controllable without full rank) or 2 (full rank, not controllable)
        which: u8,
        #[arg(long)]
        verify: bool,
    },
}

/// Entry point. Returns the process exit code: 0 success, 1 negative
/// analysis verdict, 2 usage or config error.
pub fn run(argv: Vec<String>) -> i32 {
    init_threads();
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 2,
            };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.cmd) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            2
        }
    }
}

fn init_threads() {
    if let Ok(v) = std::env::var("ORBITCTL_THREADS") {
        if let Ok(n) = v.trim().parse::<usize>() {
            if n > 0 {
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            }
        }
    }
}

fn parse_point(s: &str) -> Result<Point, String> {
    let coords: Result<Vec<f64>, _> = s.split(',').map(|c| c.trim().parse::<f64>()).collect();
    match coords {
        Ok(v) if !v.is_empty() => Ok(point(&v)),
        _ => Err(format!("cannot parse point `{s}` (expected comma-separated numbers)")),
    }
}

fn load(cfg: &ConfigArg) -> Result<ControlSystem, String> {
    crate::config::load_system(&cfg.config).map_err(|e| e.to_string())
}

fn emit<T: Serialize>(value: &T) {
    println!("{}", serde_json::to_string_pretty(value).expect("report serializes"));
}

fn dispatch(cmd: Cmd) -> Result<i32, String> {
    match cmd {
        Cmd::Larc { config, point, depth, tol } => {
            let sys = load(&config)?;
            let q = parse_point(&point)?;
            let depth = depth.unwrap_or(sys.manifold.ambient_dim());
            let report = larc_check(&sys, &q, depth, tol).map_err(|e| e.to_string())?;
            emit(&report);
            Ok(if report.larc_holds { 0 } else { 1 })
        }
        Cmd::BracketTable { config, point, depth } => {
            let sys = load(&config)?;
            let q = parse_point(&point)?;
            let depth = depth.unwrap_or(sys.manifold.ambient_dim());
            let mut out = String::new();
            let dim = sys.manifold.ambient_dim();
            out.push_str("word");
            for i in 1..=dim {
                out.push_str(&format!(",v{i}"));
            }
            out.push('\n');
            for w in enumerate_words(sys.generators.len(), depth) {
                let v = eval_word(&sys, &w, &q).map_err(|e| e.to_string())?;
                out.push_str(&format!("\"{w}\""));
                for c in v.iter() {
                    out.push_str(&format!(",{c}"));
                }
                out.push('\n');
            }
            print!("{out}");
            Ok(0)
        }
        Cmd::Flow { config, schedule, point, step } => {
            let sys = load(&config)?;
            let q = parse_point(&point)?;
            let legs: Vec<(usize, f64)> =
                serde_json::from_str(&schedule).map_err(|e| format!("bad schedule: {e}"))?;
            let opts = IntegratorOptions { step, ..Default::default() };
            let end = chrono_map(&sys, &Schedule::new(legs), &q, &opts).map_err(|e| e.to_string())?;
            #[derive(Serialize)]
            struct Endpoint {
                point: Vec<f64>,
            }
            emit(&Endpoint { point: end.iter().copied().collect() });
            Ok(0)
        }
        Cmd::General { config, point, forward_only, seed, t_scale, depth } => {
            let sys = load(&config)?;
            let q = parse_point(&point)?;
            let depth = depth.unwrap_or(sys.manifold.ambient_dim());
            let larc = larc_check(&sys, &q, depth, 1e-7).map_err(|e| e.to_string())?;
            if !larc.larc_holds {
                eprintln!(
                    "rank condition fails at the point (achieved {} of {})",
                    larc.achieved_dim, larc.ambient_dim
                );
                return Ok(1);
            }
            match general_schedule(
                &sys,
                &q,
                &larc.basis_words,
                t_scale,
                seed,
                forward_only,
                &IntegratorOptions::default(),
            ) {
                Ok(g) => {
                    emit(&g);
                    Ok(0)
                }
                Err(crate::flow::FlowError::RankDeficient { best_rank, needed, attempts }) => {
                    eprintln!("rank stuck at {best_rank} (< {needed}) after {attempts} attempts");
                    Ok(1)
                }
                Err(e) => Err(e.to_string()),
            }
        }
        Cmd::Reach {
            config,
            point,
            samples,
            horizon,
            seed,
            coverage: cov,
            cloud_out,
            legs,
            step,
            backward,
        } => {
            let sys = load(&config)?;
            let q = parse_point(&point)?;
            let opts = ReachOptions {
                horizon,
                legs_per_sample: legs,
                samples,
                forward_only: !backward,
            };
            let int_opts = IntegratorOptions { step, ..Default::default() };
            let cloud =
                reach_sample(&sys, &q, &opts, &int_opts, seed).map_err(|e| e.to_string())?;
            let mut csv = String::new();
            for (i, _) in (0..sys.manifold.ambient_dim()).enumerate() {
                if i > 0 {
                    csv.push(',');
                }
                csv.push_str(&format!("x{}", i + 1));
            }
            csv.push('\n');
            for p in &cloud.points {
                for (i, c) in p.iter().enumerate() {
                    if i > 0 {
                        csv.push(',');
                    }
                    csv.push_str(&format!("{c}"));
                }
                csv.push('\n');
            }
            match &cloud_out {
                Some(path) => {
                    let mut f = std::fs::File::create(path).map_err(|e| e.to_string())?;
                    f.write_all(csv.as_bytes()).map_err(|e| e.to_string())?;
                }
                // with a coverage request the report owns stdout; the cloud
                // is only written when a file is named
                None if cov.is_some() => {}
                None => print!("{csv}"),
            }
            if let Some(cells) = cov {
                let frac =
                    coverage(&sys.manifold, &cloud.points, cells).map_err(|e| e.to_string())?;
                #[derive(Serialize)]
                struct CoverageReport {
                    seed: u64,
                    samples: usize,
                    dropped: usize,
                    cells_per_axis: usize,
                    covered_fraction: f64,
                }
                emit(&CoverageReport {
                    seed,
                    samples,
                    dropped: cloud.dropped,
                    cells_per_axis: cells,
                    covered_fraction: frac,
                });
            }
            Ok(0)
        }
        Cmd::Orbit { config, generator, point, tmax, tol } => {
            let sys = load(&config)?;
            let q = parse_point(&point)?;
            let orbit =
                find_closed_orbit(&sys, generator, &q, tmax, tol, &IntegratorOptions::default())
                    .map_err(|e| e.to_string())?;
            match orbit {
                Some(o) => {
                    emit(&o);
                    Ok(0)
                }
                None => {
                    println!("none");
                    Ok(1)
                }
            }
        }
        Cmd::Ample { config, point, tol } => {
            let sys = load(&config)?;
            let q = sys.manifold.wrap(&parse_point(&point)?).map_err(|e| e.to_string())?;
            let vectors: Result<Vec<DVector<f64>>, _> =
                sys.generators.iter().map(|g| g.eval(&q)).collect();
            let vectors = vectors.map_err(|e| e.to_string())?;
            let report = ample_check(&q, &vectors, tol);
            emit(&report);
            Ok(if report.positively_spanning { 0 } else { 1 })
        }
        Cmd::Criterium { config, orbit_seeds, seed, tmax, orbit_tol } => {
            let sys = load(&config)?;
            let report = criterium_survey(&sys, &orbit_seeds, seed, tmax, orbit_tol)?;
            emit(&report);
            Ok(if report.verdict == "consistent-with-controllable" { 0 } else { 1 })
        }
        Cmd::TheoremB { matrices, u, v, tol, larc_point } => {
            let text = std::fs::read_to_string(&matrices).map_err(|e| e.to_string())?;
            #[derive(serde::Deserialize)]
            #[serde(deny_unknown_fields)]
            struct MatrixFile {
                a: Vec<f64>,
                #[serde(default)]
                b: Vec<Vec<f64>>,
            }
            let mf: MatrixFile = serde_json::from_str(&text).map_err(|e| e.to_string())?;
            let sys = BilinearSystem3::from_rows(&mf.a, &mf.b).map_err(|e| e.to_string())?;
            let mut verdict = theorem_b_check(&sys, &u, &v, tol).map_err(|e| e.to_string())?;
            // rank hypothesis checked on the lifted linear fields at a
            // user-chosen nonzero point (the fields vanish at the origin)
            let q = parse_point(&larc_point)?;
            let lifted = crate::fields::bilinear_lift(&sys, &[u.clone(), v.clone()])
                .map_err(|e| e.to_string())?;
            let larc = larc_check(&lifted, &q, 3, 1e-7).map_err(|e| e.to_string())?;
            verdict.larc_checked = larc.larc_holds;
            emit(&verdict);
            Ok(if verdict.controllable_sufficient { 0 } else { 1 })
        }
        Cmd::Examples { which, verify } => match which {
            1 => {
                if verify {
                    let report = example1_verify();
                    let pass = report.pass;
                    emit(&report);
                    Ok(if pass { 0 } else { 1 })
                } else {
                    println!("staircase torus system: run with --verify for the full bundle");
                    Ok(0)
                }
            }
            2 => {
                if verify {
                    let report = example2_verify();
                    let pass = report.pass;
                    emit(&report);
                    Ok(if pass { 0 } else { 1 })
                } else {
                    println!("torus counterexample: run with --verify for the full bundle");
                    Ok(0)
                }
            }
            other => Err(format!("unknown example {other} (use 1 or 2)")),
        },
    }
}

// ---------------------------------------------------------------------------
// Example bundles (also exercised by the integration suite)
// ---------------------------------------------------------------------------

/// Verification bundle for the staircase system: the bracket span is rank
/// deficient everywhere, yet the staircase control law steers anywhere and
/// a steering-augmented cloud covers the torus grid.
#[derive(Debug, Serialize)]
pub struct Example1Report {
    pub seed: u64,
    pub larc_points: usize,
    pub larc_max_dim: usize,
    pub larc_bounded: bool,
    pub steering_targets: usize,
    pub steering_max_error: f64,
    pub steering_ok: bool,
    pub coverage_cells_per_axis: usize,
    pub covered_fraction: f64,
    pub coverage_ok: bool,
    pub pass: bool,
}

pub fn example1_verify() -> Example1Report {
    let seed = 101u64;
    let n = 3;
    let sys = example1(n, &[-0.9, 0.9]).expect("builtin example");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // (a) bracket span never exceeds dimension 2
    let larc_points = 100;
    let mut larc_max_dim = 0;
    for _ in 0..larc_points {
        let q = point(&[
            rng.random_range(0.0..2.0),
            rng.random_range(0.0..1.0),
            rng.random_range(0.0..1.0),
        ]);
        let rep = larc_check(&sys, &q, 4, 1e-7).expect("rank check");
        larc_max_dim = larc_max_dim.max(rep.achieved_dim);
    }
    let larc_bounded = larc_max_dim <= 2;

    // (b) staircase steering hits random targets modulo 1
    let int_opts = IntegratorOptions::default();
    let steering_targets = 20;
    let mut steering_max_error: f64 = 0.0;
    for _ in 0..steering_targets {
        let targets = [rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5)];
        let out = steer_example1(n, &targets, &int_opts).expect("steering");
        for (k, &target) in targets.iter().enumerate() {
            let diff = (out[k + 1] - target).rem_euclid(1.0);
            steering_max_error = steering_max_error.max(diff.min(1.0 - diff));
        }
    }
    let steering_ok = steering_max_error <= 1e-4;

    // (c) steering-augmented cloud: steer to each grid cell's second-block
    // center, then drift along the first coordinate through every cell
    let cells = 8;
    let drift = example1_field(n, 0.0).expect("drift field");
    let mut cloud = Vec::new();
    for i in 0..cells {
        for j in 0..cells {
            let y1 = (i as f64 + 0.5) / cells as f64 - 0.5;
            let y2 = (j as f64 + 0.5) / cells as f64 - 0.5;
            let mut x = steer_example1(n, &[y1, y2], &int_opts).expect("steering");
            cloud.push(x.clone());
            let mut reached = 0.0;
            for k in 0..cells {
                // first-coordinate period is n-1 = 2
                let target = (k as f64 + 0.5) * 2.0 / cells as f64;
                x = integrate(&drift, &x, target - reached, &int_opts).expect("drift");
                reached = target;
                cloud.push(x.clone());
            }
        }
    }
    // top up with plain random-schedule samples from the origin
    let ro = ReachOptions::new(10.0, 200);
    let extra = reach_sample(
        &sys,
        &point(&[0.0; 3]),
        &ro,
        &IntegratorOptions { step: 1e-2, ..Default::default() },
        seed,
    )
    .expect("sampling");
    cloud.extend(extra.points);
    let covered_fraction = coverage(&sys.manifold, &cloud, cells).expect("compact manifold");
    let coverage_ok = covered_fraction >= 0.99;

    let pass = larc_bounded && steering_ok && coverage_ok;
    Example1Report {
        seed,
        larc_points,
        larc_max_dim,
        larc_bounded,
        steering_targets,
        steering_max_error,
        steering_ok,
        coverage_cells_per_axis: cells,
        covered_fraction,
        coverage_ok,
        pass,
    }
}

/// Verification bundle for the torus counterexample: full bracket rank
/// everywhere, a closed orbit through every point, and still trapped in a
/// half space — the positive-span failure at p1 explains why.
#[derive(Debug, Serialize)]
pub struct Example2Report {
    pub seed: u64,
    pub larc_points: usize,
    pub larc_all_full_rank: bool,
    pub orbit_points: usize,
    pub orbit_max_period_deviation: f64,
    pub orbit_max_return_error: f64,
    pub orbits_ok: bool,
    pub trajectories_per_sign: usize,
    pub max_cos_phi_positive_sign: f64,
    pub max_cos_phi_negative_sign: f64,
    pub half_space_ok: bool,
    pub ample_spanning_at_p1: bool,
    pub ample_ok: bool,
    pub pass: bool,
}

pub fn example2_verify() -> Example2Report {
    use std::f64::consts::PI;
    let seed = 202u64;
    let sys = example2(1.0).expect("builtin example");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // (a) full bracket rank at random points
    let larc_points = 100;
    let mut larc_all_full_rank = true;
    for _ in 0..larc_points {
        let q = point(&[rng.random_range(0.0..2.0 * PI), rng.random_range(0.0..2.0 * PI)]);
        let rep = larc_check(&sys, &q, 4, 1e-7).expect("rank check");
        larc_all_full_rank &= rep.achieved_dim == 2;
    }

    // (b) the second circle factor closes through every point
    let int_opts = IntegratorOptions::default();
    let orbit_points = 20;
    let mut orbit_max_period_deviation: f64 = 0.0;
    let mut orbit_max_return_error: f64 = 0.0;
    let mut orbits_ok = true;
    for _ in 0..orbit_points {
        let q = point(&[rng.random_range(0.0..2.0 * PI), rng.random_range(0.0..2.0 * PI)]);
        match find_closed_orbit(&sys, 2, &q, 10.0, 1e-8, &int_opts).expect("orbit search") {
            Some(o) => {
                orbit_max_period_deviation =
                    orbit_max_period_deviation.max((o.period - 2.0 * PI).abs());
                orbit_max_return_error = orbit_max_return_error.max(o.return_error);
            }
            None => orbits_ok = false,
        }
    }
    orbits_ok = orbits_ok && orbit_max_period_deviation <= 1e-6 && orbit_max_return_error < 1e-8;

    // (c) the forward cloud from p1 never leaves the closed half space,
    // for either orientation of the bump field
    let trajectories_per_sign = 10_000;
    let sample_opts = IntegratorOptions { step: 1e-2, ..Default::default() };
    let ro = ReachOptions::new(4.0, trajectories_per_sign);
    let p1 = point(&[PI / 2.0, 0.0]);
    let max_cos = |sign: f64| -> f64 {
        let s = example2(sign).expect("builtin example");
        let cloud = reach_sample(&s, &p1, &ro, &sample_opts, seed).expect("sampling");
        cloud.points.iter().map(|p| p[0].cos()).fold(f64::NEG_INFINITY, f64::max)
    };
    let max_cos_phi_positive_sign = max_cos(1.0);
    let max_cos_phi_negative_sign = max_cos(-1.0);
    let half_space_ok =
        max_cos_phi_positive_sign <= 1e-6 && max_cos_phi_negative_sign <= 1e-6;

    // (d) the phi-components at p1 fail to span positively
    let phi_components: Vec<DVector<f64>> = sys
        .generators
        .iter()
        .map(|g| DVector::from_column_slice(&[g.eval(&p1).expect("eval")[0]]))
        .collect();
    let ample_spanning_at_p1 = ample_check(&p1, &phi_components, 1e-9).positively_spanning;
    let ample_ok = !ample_spanning_at_p1;

    let pass = larc_all_full_rank && orbits_ok && half_space_ok && ample_ok;
    Example2Report {
        seed,
        larc_points,
        larc_all_full_rank,
        orbit_points,
        orbit_max_period_deviation,
        orbit_max_return_error,
        orbits_ok,
        trajectories_per_sign,
        max_cos_phi_positive_sign,
        max_cos_phi_negative_sign,
        half_space_ok,
        ample_spanning_at_p1,
        ample_ok,
        pass,
    }
}

// ---------------------------------------------------------------------------
// Closed-orbit controllability survey
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize)]
pub struct CriteriumPointReport {
    pub orbit_seed: u64,
    pub base: Vec<f64>,
    pub larc_holds: bool,
    pub ample: bool,
    pub orbit: Option<ClosedOrbit>,
    pub tube: Option<TubeReport>,
}

#[derive(Debug, Serialize)]
pub struct CriteriumReport {
    pub seed: u64,
    pub points: Vec<CriteriumPointReport>,
    /// consistent-with-controllable | counterexample-found | inconclusive
    pub verdict: String,
}

/// Per sampled base point: is there a single-generator closed orbit, does
/// the rank condition hold, does the control set positively span, and how
/// much of a tube around the orbit is two-way reachable. The verdict is
/// three-valued: sufficiency holds when every point carries hypotheses and
/// an orbit; an orbit missing where the hypotheses hold is a counterexample
/// to controllability; a hypothesis failure decides nothing.
pub fn criterium_survey(
    sys: &ControlSystem,
    orbit_seeds: &[u64],
    seed: u64,
    tmax: f64,
    orbit_tol: f64,
) -> Result<CriteriumReport, String> {
    if matches!(sys.manifold, Manifold::Rn { .. }) {
        return Err("the closed-orbit survey needs a compact manifold".into());
    }
    let int_opts = IntegratorOptions::default();
    let mut points = Vec::new();
    let mut any_hypothesis_failure = false;
    let mut any_missing_orbit = false;
    for &orbit_seed in orbit_seeds {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ orbit_seed.wrapping_mul(0x9e37_79b9));
        let base = random_point(&sys.manifold, &mut rng);
        let larc = larc_check(sys, &base, sys.manifold.ambient_dim(), 1e-7)
            .map_err(|e| e.to_string())?;
        let vectors: Result<Vec<DVector<f64>>, _> =
            sys.generators.iter().map(|g| g.eval(&base)).collect();
        let vectors = vectors.map_err(|e| e.to_string())?;
        let ample = ample_check(&base, &vectors, 1e-9).positively_spanning;
        let mut orbit = None;
        for g in 0..sys.generators.len() {
            if let Some(o) = find_closed_orbit(sys, g, &base, tmax, orbit_tol, &int_opts)
                .map_err(|e| e.to_string())?
            {
                orbit = Some(o);
                break;
            }
        }
        let hypotheses = larc.larc_holds && ample;
        if !hypotheses {
            any_hypothesis_failure = true;
        } else if orbit.is_none() {
            any_missing_orbit = true;
        }
        let tube = match (&orbit, hypotheses) {
            (Some(o), true) => orbit_tube_check(
                sys,
                o,
                &base,
                0.3,
                &ReachOptions::new(10.0, 200),
                &IntegratorOptions { step: 1e-2, ..Default::default() },
                seed ^ orbit_seed,
            )
            .ok(),
            _ => None,
        };
        points.push(CriteriumPointReport {
            orbit_seed,
            base: base.iter().copied().collect(),
            larc_holds: larc.larc_holds,
            ample,
            orbit,
            tube,
        });
    }
    let verdict = if any_hypothesis_failure {
        "inconclusive"
    } else if any_missing_orbit {
        "counterexample-found"
    } else {
        "consistent-with-controllable"
    };
    Ok(CriteriumReport { seed, points, verdict: verdict.into() })
}

fn random_point(m: &Manifold, rng: &mut ChaCha8Rng) -> Point {
    match m {
        Manifold::Torus { periods } => point(
            &periods.iter().map(|&p| rng.random_range(0.0..p)).collect::<Vec<_>>(),
        ),
        Manifold::Sphere2 => {
            loop {
                let raw = point(&[
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                ]);
                if let Ok(p) = m.wrap(&raw) {
                    if raw.norm() > 1e-3 {
                        return p;
                    }
                }
            }
        }
        Manifold::Rn { dim } => {
            point(&(0..*dim).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<_>>())
        }
    }
}
