//! Dense two-phase primal simplex for the small LPs of this crate
//! (tens of variables, around ten rows). Bland-style tie-breaks, so no
//! cycling in practice at this scale.

const EPS: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub enum LpOutcome {
    Optimal { x: Vec<f64>, objective: f64 },
    Infeasible,
    Unbounded,
}

/// Maximize `c . x` subject to `a_eq x = b_eq`, `a_ub x <= b_ub`, `x >= 0`.
pub fn solve(
    c: &[f64],
    a_eq: &[Vec<f64>],
    b_eq: &[f64],
    a_ub: &[Vec<f64>],
    b_ub: &[f64],
) -> LpOutcome {
    let n = c.len();
    let n_slack = a_ub.len();
    let m = a_eq.len() + a_ub.len();
    let total = n + n_slack;
    let width = total + m + 1; // structural + slack + artificial + rhs

    // Tableau rows [A | slack | artificial | b] with b >= 0.
    let mut tableau: Vec<Vec<f64>> = Vec::with_capacity(m);
    for (i, row) in a_eq.iter().chain(a_ub.iter()).enumerate() {
        let mut t = vec![0.0; width];
        t[..n].copy_from_slice(row);
        if i >= a_eq.len() {
            t[n + (i - a_eq.len())] = 1.0;
        }
        t[width - 1] = if i < a_eq.len() { b_eq[i] } else { b_ub[i - a_eq.len()] };
        if t[width - 1] < 0.0 {
            for v in t.iter_mut() {
                *v = -*v;
            }
        }
        t[total + i] = 1.0;
        tableau.push(t);
    }
    let mut basis: Vec<usize> = (0..m).map(|i| total + i).collect();

    // Phase 1: minimize the artificial sum (maximize its negation).
    let mut phase1 = vec![0.0; width - 1];
    for j in total..total + m {
        phase1[j] = -1.0;
    }
    match run_phase(&mut tableau, &mut basis, &phase1, total + m) {
        Some(obj) if obj > -1e-7 => {}
        _ => return LpOutcome::Infeasible,
    }

    // Drive leftover artificials out of the basis.
    let mut drop_rows = Vec::new();
    for row in 0..basis.len() {
        if basis[row] >= total {
            match (0..total).find(|&j| tableau[row][j].abs() > EPS) {
                Some(col) => pivot(&mut tableau, &mut basis, row, col),
                None => drop_rows.push(row), // redundant constraint
            }
        }
    }
    for &row in drop_rows.iter().rev() {
        tableau.remove(row);
        basis.remove(row);
    }

    // Phase 2: original objective, artificial columns barred.
    let mut phase2 = vec![0.0; width - 1];
    phase2[..n].copy_from_slice(c);
    match run_phase(&mut tableau, &mut basis, &phase2, total) {
        None => LpOutcome::Unbounded,
        Some(objective) => {
            let mut x = vec![0.0; n];
            for (row, &b) in basis.iter().enumerate() {
                if b < n {
                    x[b] = tableau[row][width - 1];
                }
            }
            LpOutcome::Optimal { x, objective }
        }
    }
}

/// Maximize `cost . x` over the tableau; only columns below `enterable`
/// may enter the basis. Returns the objective, or `None` if unbounded.
fn run_phase(
    tableau: &mut Vec<Vec<f64>>,
    basis: &mut Vec<usize>,
    cost: &[f64],
    enterable: usize,
) -> Option<f64> {
    let width = tableau.first().map_or(1, |r| r.len());
    loop {
        let m = tableau.len();
        // Reduced cost via basic costs (rows are kept in canonical form).
        let entering = (0..enterable)
            .filter(|j| !basis.contains(j))
            .map(|j| {
                let reduced = cost[j]
                    - (0..m).map(|row| cost[basis[row]] * tableau[row][j]).sum::<f64>();
                (j, reduced)
            })
            .filter(|&(_, r)| r > 1e-10)
            .max_by(|a, b| a.1.total_cmp(&b.1));
        let Some((col, _)) = entering else {
            let obj = basis
                .iter()
                .enumerate()
                .map(|(row, &b)| cost[b] * tableau[row][width - 1])
                .sum();
            return Some(obj);
        };
        // Ratio test; ties break toward the smallest basis index.
        let mut pivot_row: Option<usize> = None;
        let mut best = f64::INFINITY;
        for row in 0..m {
            let a = tableau[row][col];
            if a > EPS {
                let ratio = tableau[row][width - 1] / a;
                let better = ratio < best - EPS
                    || (ratio < best + EPS && pivot_row.is_none_or(|r| basis[row] < basis[r]));
                if better {
                    best = ratio;
                    pivot_row = Some(row);
                }
            }
        }
        let row = pivot_row?;
        pivot(tableau, basis, row, col);
    }
}

fn pivot(tableau: &mut [Vec<f64>], basis: &mut [usize], row: usize, col: usize) {
    let p = tableau[row][col];
    for v in tableau[row].iter_mut() {
        *v /= p;
    }
    let pivot_row = tableau[row].clone();
    for (r, t) in tableau.iter_mut().enumerate() {
        if r != row {
            let factor = t[col];
            if factor != 0.0 {
                for (v, pv) in t.iter_mut().zip(&pivot_row) {
                    *v -= factor * pv;
                }
            }
        }
    }
    basis[row] = col;
}
