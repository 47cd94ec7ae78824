//! Iterated Lie brackets: bracket words, their enumeration and evaluation,
//! and the rank condition at a point.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::ser::Serializer;
use serde::Serialize;
use thiserror::Error;

use crate::fields::{bracket_field, ControlSystem, FieldError, VectorField};
use crate::manifold::{Manifold, ManifoldError, Point};
use crate::numeric;

pub use crate::fields::bracket;

#[derive(Debug, Error)]
pub enum LieError {
    #[error("generator index {index} out of range (system has {count})")]
    BadIndex { index: usize, count: usize },
    #[error("bracket word depth {depth} exceeds the cutoff {max} (finite differences are unreliable past it)")]
    DepthExceeded { depth: usize, max: usize },
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error(transparent)]
    Manifold(#[from] ManifoldError),
}

/// A formal iterated bracket over generator indices: a leaf is a generator,
/// a node is the bracket of its two children.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum BracketWord {
    Leaf(usize),
    Node(Box<BracketWord>, Box<BracketWord>),
}

impl BracketWord {
    pub fn leaf(i: usize) -> Self {
        BracketWord::Leaf(i)
    }

    pub fn node(left: BracketWord, right: BracketWord) -> Self {
        BracketWord::Node(Box::new(left), Box::new(right))
    }

    /// Number of bracket applications along the deepest path.
    pub fn depth(&self) -> usize {
        match self {
            BracketWord::Leaf(_) => 0,
            BracketWord::Node(l, r) => 1 + l.depth().max(r.depth()),
        }
    }

    /// Largest generator index mentioned.
    pub fn max_index(&self) -> usize {
        match self {
            BracketWord::Leaf(i) => *i,
            BracketWord::Node(l, r) => l.max_index().max(r.max_index()),
        }
    }
}

impl fmt::Display for BracketWord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BracketWord::Leaf(i) => write!(f, "{i}"),
            BracketWord::Node(l, r) => write!(f, "[{l},{r}]"),
        }
    }
}

impl Serialize for BracketWord {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

/// All leaves, then all right-nested words `[a, w]` of increasing depth up
/// to `max_depth`. At depth 1 only unordered pairs `a < b` are kept
/// (`[b,a]` is a scalar multiple of `[a,b]`, and `[a,a]` vanishes).
pub fn enumerate_words(generator_count: usize, max_depth: usize) -> Vec<BracketWord> {
    let mut words: Vec<BracketWord> = (0..generator_count).map(BracketWord::leaf).collect();
    let mut prev: Vec<BracketWord> = words.clone();
    for d in 1..=max_depth {
        let mut cur = Vec::new();
        for a in 0..generator_count {
            for w in &prev {
                if d == 1 {
                    if let BracketWord::Leaf(b) = w {
                        if *b <= a {
                            continue;
                        }
                    }
                }
                cur.push(BracketWord::node(BracketWord::leaf(a), w.clone()));
            }
        }
        words.extend(cur.iter().cloned());
        prev = cur;
    }
    words
}

/// Materialize a word as a derived vector field on the system's manifold.
/// Symbolic generators compose symbolically; anything else falls back to
/// nested finite differences with per-level step widening.
pub fn word_field(sys: &ControlSystem, w: &BracketWord) -> Result<VectorField, LieError> {
    let cutoff = sys.manifold.ambient_dim() + 2;
    let depth = w.depth();
    if depth > cutoff {
        return Err(LieError::DepthExceeded { depth, max: cutoff });
    }
    build_field(sys, w)
}

fn build_field(sys: &ControlSystem, w: &BracketWord) -> Result<VectorField, LieError> {
    match w {
        BracketWord::Leaf(i) => sys
            .generators
            .get(*i)
            .cloned()
            .ok_or(LieError::BadIndex { index: *i, count: sys.generators.len() }),
        BracketWord::Node(l, r) => {
            let lf = build_field(sys, l)?;
            let rf = build_field(sys, r)?;
            Ok(bracket_field(&lf, &rf)?)
        }
    }
}

/// Evaluate a bracket word at a point.
pub fn eval_word(sys: &ControlSystem, w: &BracketWord, q: &Point) -> Result<DVector<f64>, LieError> {
    Ok(word_field(sys, w)?.eval(q)?)
}

/// Outcome of the rank condition at a point. `ambient_dim` is the tangent
/// dimension the rank is measured against (2 on the sphere).
#[derive(Debug, Clone, Serialize)]
pub struct LarcReport {
    pub point: Vec<f64>,
    pub achieved_dim: usize,
    pub ambient_dim: usize,
    pub basis_words: Vec<BracketWord>,
    pub singular_values: Vec<f64>,
    pub larc_holds: bool,
}

/// Stack the evaluations of every word up to `max_depth` at `q` and measure
/// the numerical rank of their span. Greedy pass records a word subset whose
/// evaluations already achieve that rank.
pub fn larc_check(
    sys: &ControlSystem,
    q: &Point,
    max_depth: usize,
    tol: f64,
) -> Result<LarcReport, LieError> {
    let q = sys.manifold.wrap(q)?;
    let words = enumerate_words(sys.generators.len(), max_depth);
    let columns: Vec<DVector<f64>> = words
        .par_iter()
        .map(|w| tangent_coords(sys, w, &q))
        .collect::<Result<_, _>>()?;
    let dim = match sys.manifold {
        Manifold::Sphere2 => 2,
        _ => sys.manifold.ambient_dim(),
    };
    let stacked = DMatrix::from_columns(&columns);
    let singular_values = numeric::singular_values(&stacked);
    let achieved_dim = rank_of(&singular_values, tol).min(dim);

    let mut basis_words = Vec::new();
    let mut selected: Vec<DVector<f64>> = Vec::new();
    for (w, col) in words.iter().zip(columns.iter()) {
        if basis_words.len() == achieved_dim {
            break;
        }
        selected.push(col.clone());
        let m = DMatrix::from_columns(&selected);
        if rank_of(&numeric::singular_values(&m), tol) == selected.len() {
            basis_words.push(w.clone());
        } else {
            selected.pop();
        }
    }

    Ok(LarcReport {
        point: q.iter().copied().collect(),
        achieved_dim,
        ambient_dim: dim,
        basis_words,
        singular_values,
        larc_holds: achieved_dim == dim,
    })
}

/// Word evaluation in tangent coordinates at `q`: ambient components off the
/// sphere, coefficients in an orthonormal tangent frame on it.
fn tangent_coords(sys: &ControlSystem, w: &BracketWord, q: &Point) -> Result<DVector<f64>, LieError> {
    let v = eval_word(sys, w, q)?;
    match sys.manifold {
        Manifold::Sphere2 => {
            let basis = sys.manifold.tangent_basis(q);
            Ok(DVector::from_iterator(basis.len(), basis.iter().map(|b| b.dot(&v))))
        }
        _ => Ok(v),
    }
}

fn rank_of(sv: &[f64], tol: f64) -> usize {
    let scale = sv.first().copied().unwrap_or(0.0).max(1.0);
    sv.iter().filter(|&&s| s > tol * scale).count()
}
