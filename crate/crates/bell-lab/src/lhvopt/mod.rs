//! Optimization over LHV strategies: the maximum conditional CHSH value
//! achievable at detection efficiency eta, and the critical efficiency
//! where the LHV maximum meets the quantum value 2*sqrt(2).
//!
//! The efficiency constraint is heralded: for every setting pair, the
//! ratio of coincidences to each side's singles equals eta (8 equality
//! constraints). This is how eta is measured in coincidence experiments,
//! and it is the constraint under which the classical threshold
//! 2/(1+sqrt(2)) ~ 82.8% emerges; constraining only the unconditional
//! per-side detection probability instead leaves post-selection free to
//! reach min(4, 2/(2 eta - 1)). The heralded equalities force all four
//! coincidence denominators (and all four singles rates) to be equal, so
//! the sum-of-ratios objective collapses to a single linear-fractional
//! function and a Charnes-Cooper style transformation yields an exact
//! linear program. A multistart projected-gradient ascent over the
//! 81-simplex, without the equal-denominator collapse, cross-checks the
//! LP optimum.

mod simplex;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::core::{Outcome, SettingPair, Station, RngStream};
use crate::sources::{DeterministicStrategy, LhvSource};
use crate::{Error, Result};

pub use simplex::LpOutcome;

const N_STRATEGIES: usize = 81;
const OUTCOMES: [Outcome; 3] = [Outcome::Plus, Outcome::Minus, Outcome::NoDetect];

/// All 81 joint deterministic strategies in canonical order:
/// index = ((a0 * 3 + a1) * 3 + b0) * 3 + b1 with outcome codes
/// Plus = 0, Minus = 1, NoDetect = 2.
pub fn enumerate_strategies() -> Vec<DeterministicStrategy> {
    let mut out = Vec::with_capacity(N_STRATEGIES);
    for a0 in OUTCOMES {
        for a1 in OUTCOMES {
            for b0 in OUTCOMES {
                for b1 in OUTCOMES {
                    out.push(DeterministicStrategy { alice: [a0, a1], bob: [b0, b1] });
                }
            }
        }
    }
    out
}

fn strategy_index(s: &DeterministicStrategy) -> usize {
    let code = |o: Outcome| match o {
        Outcome::Plus => 0usize,
        Outcome::Minus => 1,
        Outcome::NoDetect => 2,
    };
    ((code(s.alice[0]) * 3 + code(s.alice[1])) * 3 + code(s.bob[0])) * 3 + code(s.bob[1])
}

/// A probability mixture over the 81 canonical strategies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyMixture {
    pub weights: Vec<f64>,
}

impl StrategyMixture {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.len() != N_STRATEGIES {
            return Err(Error::InvalidMixture(format!(
                "expected {N_STRATEGIES} weights, got {}",
                weights.len()
            )));
        }
        let sum: f64 = weights.iter().sum();
        if weights.iter().any(|&w| w < -1e-12) || (sum - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidMixture(format!(
                "weights must lie on the simplex (sum = {sum})"
            )));
        }
        let weights = weights.iter().map(|w| w.max(0.0) / sum).collect();
        Ok(StrategyMixture { weights })
    }

    /// Point mass on a single strategy.
    pub fn point_mass(strategy: &DeterministicStrategy) -> Self {
        let mut weights = vec![0.0; N_STRATEGIES];
        weights[strategy_index(strategy)] = 1.0;
        StrategyMixture { weights }
    }
}

/// Precomputed per-strategy indicators: coincidence, signed product, and
/// per-side singles, per setting pair.
struct Tables {
    /// detect[pair][k]: both sides detect.
    detect: [[f64; N_STRATEGIES]; 4],
    /// product[pair][k]: a*b when both detect, else 0.
    product: [[f64; N_STRATEGIES]; 4],
    /// singles[station][setting][k]: that side detects.
    singles: [[[f64; N_STRATEGIES]; 2]; 2],
}

fn tables() -> Tables {
    let strategies = enumerate_strategies();
    let mut t = Tables {
        detect: [[0.0; N_STRATEGIES]; 4],
        product: [[0.0; N_STRATEGIES]; 4],
        singles: [[[0.0; N_STRATEGIES]; 2]; 2],
    };
    for (k, s) in strategies.iter().enumerate() {
        for set in 0..2 {
            if s.alice[set].detected() {
                t.singles[Station::Alice.index()][set][k] = 1.0;
            }
            if s.bob[set].detected() {
                t.singles[Station::Bob.index()][set][k] = 1.0;
            }
        }
        for pair in SettingPair::ALL {
            let a = s.alice[pair.alice.index()];
            let b = s.bob[pair.bob.index()];
            if let (Some(va), Some(vb)) = (a.value(), b.value()) {
                t.detect[pair.index()][k] = 1.0;
                t.product[pair.index()][k] = (va * vb) as f64;
            }
        }
    }
    t
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Conditional CHSH of a mixture: per pair, correlations conditional on
/// both sides detecting. `None` when some pair has zero coincidence mass.
pub fn conditional_chsh(mixture: &StrategyMixture) -> Result<Option<f64>> {
    let mixture = StrategyMixture::new(mixture.weights.clone())?;
    let t = tables();
    let mut s = 0.0;
    for pair in SettingPair::ALL {
        let den = dot(&t.detect[pair.index()], &mixture.weights);
        if den <= 0.0 {
            return Ok(None);
        }
        let num = dot(&t.product[pair.index()], &mixture.weights);
        s += pair.chsh_sign() * num / den;
    }
    Ok(Some(s))
}

/// How the heralded efficiency constraint is applied.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ConstraintScope {
    /// coincidences / singles = eta for each side and setting pair.
    Equality,
    /// coincidences / singles >= eta (efficiency at least eta).
    AtLeast,
}

/// Result of one efficiency-constrained maximization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EfficiencyResult {
    pub eta: f64,
    pub s_lp: f64,
    pub s_fallback: f64,
    /// The larger of the two methods.
    pub s_max: f64,
    /// |s_lp - s_fallback|.
    pub gap: f64,
    /// Set when the two methods disagree beyond 1e-3.
    pub flagged: bool,
    pub argmax: StrategyMixture,
}

/// The 8 homogeneous heralded-efficiency rows: for pair i = (x, y),
/// detect_i - eta * singles_A(x) and detect_i - eta * singles_B(y).
fn heralded_rows(t: &Tables, eta: f64) -> Vec<Vec<f64>> {
    let mut rows = Vec::with_capacity(8);
    for pair in SettingPair::ALL {
        for (station, set) in [
            (Station::Alice, pair.alice.index()),
            (Station::Bob, pair.bob.index()),
        ] {
            let row: Vec<f64> = (0..N_STRATEGIES)
                .map(|k| {
                    t.detect[pair.index()][k] - eta * t.singles[station.index()][set][k]
                })
                .collect();
            rows.push(row);
        }
    }
    rows
}

fn lp_maximize(t: &Tables, eta: f64, scope: ConstraintScope) -> Result<(f64, Vec<f64>)> {
    // Fractional-to-linear transformation: v = w / d with d the common
    // coincidence denominator, normalized to detect_0 . v = 1. The
    // objective becomes linear in v.
    let mut c = vec![0.0; N_STRATEGIES];
    for pair in SettingPair::ALL {
        for k in 0..N_STRATEGIES {
            c[k] += pair.chsh_sign() * t.product[pair.index()][k];
        }
    }
    let mut a_eq: Vec<Vec<f64>> = Vec::new();
    let mut b_eq: Vec<f64> = Vec::new();
    let mut a_ub: Vec<Vec<f64>> = Vec::new();
    let mut b_ub: Vec<f64> = Vec::new();

    // Equal coincidence denominators across the four pairs.
    for i in 1..4 {
        a_eq.push(
            (0..N_STRATEGIES).map(|k| t.detect[i][k] - t.detect[0][k]).collect(),
        );
        b_eq.push(0.0);
    }
    // Denominator normalization.
    a_eq.push(t.detect[0].to_vec());
    b_eq.push(1.0);
    for row in heralded_rows(t, eta) {
        match scope {
            ConstraintScope::Equality => {
                a_eq.push(row);
                b_eq.push(0.0);
            }
            ConstraintScope::AtLeast => {
                // detect - eta * singles >= 0, i.e. negated row <= 0.
                a_ub.push(row.iter().map(|x| -x).collect());
                b_ub.push(0.0);
            }
        }
    }

    match simplex::solve(&c, &a_eq, &b_eq, &a_ub, &b_ub) {
        LpOutcome::Optimal { x, objective } => {
            let total: f64 = x.iter().sum();
            let weights: Vec<f64> = x.iter().map(|v| (v / total).max(0.0)).collect();
            Ok((objective, weights))
        }
        LpOutcome::Infeasible => Err(Error::Infeasible(eta)),
        LpOutcome::Unbounded => Err(Error::InvalidMixture(format!(
            "LP unbounded at eta={eta}; constraint set degenerate"
        ))),
    }
}

/// Feasible warm start achieving the closed-form optimum min(4, 4/eta - 2):
/// a mixture of the four perfectly-correlated one-sided-loss strategies
/// with either the all-plus strategy (eta >= 2/3) or one-side-only
/// strategies (eta < 2/3).
fn structured_start(eta: f64) -> Vec<f64> {
    let d = DeterministicStrategy {
        alice: [Outcome::Plus, Outcome::NoDetect],
        bob: [Outcome::Plus, Outcome::Plus],
    };
    let family = [
        d,
        DeterministicStrategy {
            alice: [Outcome::NoDetect, Outcome::Plus],
            bob: [Outcome::Plus, Outcome::Minus],
        },
        DeterministicStrategy {
            alice: [Outcome::Plus, Outcome::Plus],
            bob: [Outcome::Plus, Outcome::NoDetect],
        },
        DeterministicStrategy {
            alice: [Outcome::Plus, Outcome::Minus],
            bob: [Outcome::NoDetect, Outcome::Plus],
        },
    ];
    let mut w = vec![0.0; N_STRATEGIES];
    if eta >= 2.0 / 3.0 {
        let mu = 4.0 * (1.0 - eta) / (2.0 - eta);
        for s in &family {
            w[strategy_index(s)] = mu / 4.0;
        }
        let all_plus = DeterministicStrategy {
            alice: [Outcome::Plus, Outcome::Plus],
            bob: [Outcome::Plus, Outcome::Plus],
        };
        w[strategy_index(&all_plus)] = 1.0 - mu;
    } else {
        let mu = 2.0 * eta / (2.0 - eta);
        for s in &family {
            w[strategy_index(s)] = mu / 4.0;
        }
        let alice_only = DeterministicStrategy {
            alice: [Outcome::Plus, Outcome::Plus],
            bob: [Outcome::NoDetect, Outcome::NoDetect],
        };
        let bob_only = DeterministicStrategy {
            alice: [Outcome::NoDetect, Outcome::NoDetect],
            bob: [Outcome::Plus, Outcome::Plus],
        };
        w[strategy_index(&alice_only)] = (1.0 - mu) / 2.0;
        w[strategy_index(&bob_only)] = (1.0 - mu) / 2.0;
    }
    w
}

/// Euclidean projection onto the probability simplex.
fn project_simplex(w: &mut [f64]) {
    let n = w.len();
    let mut sorted: Vec<f64> = w.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut acc = 0.0;
    let mut theta = 0.0;
    for (i, &v) in sorted.iter().enumerate() {
        acc += v;
        let candidate = (acc - 1.0) / (i + 1) as f64;
        if v - candidate > 0.0 {
            theta = candidate;
        }
    }
    for v in w.iter_mut().take(n) {
        *v = (*v - theta).max(0.0);
    }
}

/// Solve the small symmetric system `a x = b` in place (Gaussian
/// elimination with partial pivoting).
fn solve_dense(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[piv][col].abs() < 1e-14 {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            for k in col..n {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for col in (0..n).rev() {
        let mut v = b[col];
        for k in col + 1..n {
            v -= a[col][k] * x[k];
        }
        x[col] = v / a[col][col];
    }
    Some(x)
}

/// Alternating projection onto {C w = h} intersect the simplex.
/// Returns the final residual max |C w - h|.
fn repair(w: &mut Vec<f64>, rows: &[Vec<f64>], targets: &[f64]) -> f64 {
    let m = rows.len();
    let mut gram: Vec<Vec<f64>> = (0..m)
        .map(|i| (0..m).map(|j| dot(&rows[i], &rows[j])).collect())
        .collect();
    // Ridge term keeps the solve well-posed when rows are dependent.
    for (i, row) in gram.iter_mut().enumerate() {
        row[i] += 1e-10;
    }
    let residual = |w: &[f64]| -> f64 {
        rows.iter()
            .zip(targets)
            .map(|(r, &t)| (dot(r, w) - t).abs())
            .fold(0.0, f64::max)
    };
    for _ in 0..3000 {
        if residual(w) < 1e-12 {
            break;
        }
        let defect: Vec<f64> = rows.iter().zip(targets).map(|(r, &t)| dot(r, w) - t).collect();
        let Some(lambda) = solve_dense(gram.clone(), defect) else { break };
        for (i, row) in rows.iter().enumerate() {
            for (wk, rk) in w.iter_mut().zip(row) {
                *wk -= lambda[i] * rk;
            }
        }
        project_simplex(w);
    }
    residual(w)
}

/// Penalized conditional CHSH and its gradient.
fn penalized_objective(
    t: &Tables,
    w: &[f64],
    rows: &[Vec<f64>],
    rho: f64,
    scope: ConstraintScope,
) -> (f64, Vec<f64>) {
    let mut value = 0.0;
    let mut grad = vec![0.0; w.len()];
    for pair in SettingPair::ALL {
        let i = pair.index();
        let den = dot(&t.detect[i], w).max(1e-9);
        let num = dot(&t.product[i], w);
        let sign = pair.chsh_sign();
        value += sign * num / den;
        for k in 0..w.len() {
            grad[k] += sign * (t.product[i][k] * den - num * t.detect[i][k]) / (den * den);
        }
    }
    for row in rows {
        let mut viol = dot(row, w);
        if scope == ConstraintScope::AtLeast {
            viol = viol.min(0.0); // only penalize efficiency below eta
        }
        value -= rho * viol * viol;
        if viol != 0.0 {
            for (g, r) in grad.iter_mut().zip(row) {
                *g -= 2.0 * rho * viol * r;
            }
        }
    }
    (value, grad)
}

fn ascend(
    t: &Tables,
    start: &[f64],
    rows: &[Vec<f64>],
    scope: ConstraintScope,
) -> Vec<f64> {
    let mut w = start.to_vec();
    project_simplex(&mut w);
    for rho in [1e2, 1e4, 1e6] {
        let mut step = 0.05;
        let (mut best, _) = penalized_objective(t, &w, rows, rho, scope);
        for _ in 0..400 {
            let (_, grad) = penalized_objective(t, &w, rows, rho, scope);
            let mut improved = false;
            for _ in 0..25 {
                let mut trial: Vec<f64> =
                    w.iter().zip(&grad).map(|(wk, gk)| wk + step * gk).collect();
                project_simplex(&mut trial);
                let (value, _) = penalized_objective(t, &trial, rows, rho, scope);
                if value > best + 1e-14 {
                    w = trial;
                    best = value;
                    improved = true;
                    break;
                }
                step *= 0.5;
            }
            if !improved {
                break;
            }
            step = (step * 2.0).min(0.1);
        }
    }
    w
}

/// Multistart projected-gradient ascent over the 81-simplex. Candidate
/// end points are repaired onto the constraint set before evaluation, so
/// the reported value is attained by a feasible mixture.
fn fallback_maximize(
    t: &Tables,
    eta: f64,
    scope: ConstraintScope,
    seed: u64,
    n_starts: usize,
) -> (f64, Vec<f64>) {
    let rows = heralded_rows(t, eta);
    // Repair targets: heralded equalities (for the equality scope) plus
    // simplex normalization.
    let mut repair_rows = rows.clone();
    repair_rows.push(vec![1.0; N_STRATEGIES]);
    let mut repair_targets = vec![0.0; rows.len()];
    repair_targets.push(1.0);

    let mut starts: Vec<Vec<f64>> = vec![structured_start(eta), vec![1.0 / 81.0; N_STRATEGIES]];
    let mut rng = RngStream::new(seed, 1_000).rng();
    for _ in 0..n_starts {
        let raw: Vec<f64> =
            (0..N_STRATEGIES).map(|_| -rng.random::<f64>().max(1e-300).ln()).collect();
        let total: f64 = raw.iter().sum();
        starts.push(raw.into_iter().map(|x| x / total).collect());
    }

    let mut best_value = f64::NEG_INFINITY;
    let mut best_w = structured_start(eta);
    // Candidate points: each start as-is (the structured start is already
    // feasible and optimal under the conjectured closed form) and its
    // gradient-ascended refinement.
    let mut candidates = Vec::with_capacity(2 * starts.len());
    for start in starts {
        candidates.push(ascend(t, &start, &rows, scope));
        candidates.push(start);
    }
    for mut w in candidates {
        let feasible = match scope {
            ConstraintScope::Equality => repair(&mut w, &repair_rows, &repair_targets) < 1e-8,
            ConstraintScope::AtLeast => {
                project_simplex(&mut w);
                rows.iter().all(|r| dot(r, &w) > -1e-8)
            }
        };
        if !feasible {
            continue;
        }
        let mixture = StrategyMixture { weights: w.clone() };
        if let Ok(Some(s)) = conditional_chsh(&mixture) {
            if s > best_value {
                best_value = s;
                best_w = w;
            }
        }
    }
    (best_value, best_w)
}

/// Maximum conditional CHSH over strategy mixtures at heralded
/// efficiency eta, by the exact LP and the multistart cross-check.
pub fn max_chsh_at_efficiency(eta: f64) -> Result<EfficiencyResult> {
    max_chsh_at_efficiency_scoped(eta, ConstraintScope::Equality, 0)
}

pub fn max_chsh_at_efficiency_scoped(
    eta: f64,
    scope: ConstraintScope,
    seed: u64,
) -> Result<EfficiencyResult> {
    if !(eta > 0.0 && eta <= 1.0) {
        return Err(Error::Config(format!("efficiency {eta} outside (0, 1]")));
    }
    let t = tables();
    let (s_lp, lp_weights) = lp_maximize(&t, eta, scope)?;
    let (s_fallback, fb_weights) = fallback_maximize(&t, eta, scope, seed, 14);
    let (s_max, weights) =
        if s_fallback > s_lp { (s_fallback, fb_weights) } else { (s_lp, lp_weights) };
    let gap = (s_lp - s_fallback).abs();
    Ok(EfficiencyResult {
        eta,
        s_lp,
        s_fallback,
        s_max,
        gap,
        flagged: gap > 1e-3,
        argmax: StrategyMixture::new(weights)?,
    })
}

/// Critical efficiency: bisection of eta -> S_max(eta) - target over
/// [0.5, 1.0] to 1e-4 in eta.
pub fn critical_efficiency(target_s: f64) -> Result<f64> {
    if !(target_s > 2.0 - 1e-9 && target_s <= 4.0) {
        return Err(Error::Config(format!("target S {target_s} outside (2, 4]")));
    }
    let (mut lo, mut hi) = (0.5, 1.0);
    let f = |eta: f64| -> Result<f64> { Ok(max_chsh_at_efficiency(eta)?.s_max - target_s) };
    if f(lo)? < -1e-9 || f(hi)? > 1e-9 {
        return Err(Error::NonBracketing { lo, hi });
    }
    while hi - lo > 1e-4 {
        let mid = 0.5 * (lo + hi);
        if f(mid)? >= 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Turn an optimizer mixture into a runnable LHV source whose lambda is
/// the strategy index drawn by weight.
pub fn realize_adversary(mixture: &StrategyMixture) -> Result<LhvSource> {
    let mixture = StrategyMixture::new(mixture.weights.clone())?;
    Ok(LhvSource::Mixture { strategies: enumerate_strategies(), weights: mixture.weights })
}
