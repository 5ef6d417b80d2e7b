//! Mixed strategies, expected payoffs, best responses and Nash equilibria
//! of bimatrix games by support enumeration.
//!
//! Support enumeration walks every pair of equal-size supports (I, J),
//! solves the two indifference systems
//!
//! ```text
//!   sum_j A[i][j] y[j] = v   for i in I,   sum_j y[j] = 1
//!   sum_i B[i][j] x[i] = u   for j in J,   sum_i x[i] = 1
//! ```
//!
//! and keeps the solutions that are non-negative and survive the
//! best-response check. Game sizes here are at most a few actions per side,
//! so the exhaustive walk is exact and cheap.

use serde::{Deserialize, Serialize};

use crate::error::DomainError;
use crate::matrix::PayoffMatrix;

pub const NORMALIZATION_TOL: f64 = 1e-12;
pub const VERIFY_TOL: f64 = 1e-9;
const PIVOT_TOL: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MixedStrategy(Vec<f64>);

impl MixedStrategy {
    pub fn new(probabilities: Vec<f64>) -> Result<Self, DomainError> {
        if probabilities.is_empty() {
            return Err(DomainError::new("mixed strategy needs at least one action"));
        }
        if let Some(p) = probabilities.iter().find(|p| !p.is_finite() || **p < 0.0 || **p > 1.0) {
            return Err(DomainError::new(format!("probability {p} outside [0, 1]")));
        }
        let sum: f64 = probabilities.iter().sum();
        if (sum - 1.0).abs() > NORMALIZATION_TOL {
            return Err(DomainError::new(format!("probabilities sum to {sum}, expected 1")));
        }
        Ok(MixedStrategy(probabilities))
    }

    /// Rescales non-negative weights to a distribution.
    pub fn normalized(weights: &[f64]) -> Result<Self, DomainError> {
        let sum: f64 = weights.iter().sum();
        if !(sum > 0.0) || weights.iter().any(|w| *w < 0.0) {
            return Err(DomainError::new("weights must be non-negative with a positive sum"));
        }
        Self::new(weights.iter().map(|w| w / sum).collect())
    }

    pub fn pure(n: usize, index: usize) -> Self {
        let mut p = vec![0.0; n];
        p[index] = 1.0;
        MixedStrategy(p)
    }

    pub fn uniform(n: usize) -> Self {
        MixedStrategy(vec![1.0 / n as f64; n])
    }

    pub fn probabilities(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn support(&self) -> Vec<usize> {
        self.0
            .iter()
            .enumerate()
            .filter(|(_, p)| **p > NORMALIZATION_TOL)
            .map(|(i, _)| i)
            .collect()
    }

    /// Inverse-CDF sample for a draw in `[0, 1)`.
    pub fn sample(&self, draw: f64) -> usize {
        let mut acc = 0.0;
        for (i, p) in self.0.iter().enumerate() {
            acc += p;
            if draw < acc {
                return i;
            }
        }
        // draw landed in the rounding gap above the last cumulative sum
        self.0.iter().rposition(|p| *p > 0.0).unwrap_or(self.0.len() - 1)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EquilibriumProfile {
    pub row_strategy: MixedStrategy,
    pub col_strategy: MixedStrategy,
    pub row_value: f64,
    pub col_value: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Side {
    Row,
    Col,
}

fn check_dims(m: &PayoffMatrix, s1: &MixedStrategy, s2: &MixedStrategy) -> Result<(), DomainError> {
    if s1.len() != m.rows || s2.len() != m.cols {
        return Err(DomainError::new(format!(
            "strategy lengths ({}, {}) do not match {}x{} matrix",
            s1.len(),
            s2.len(),
            m.rows,
            m.cols
        )));
    }
    Ok(())
}

pub fn expected_payoff(m: &PayoffMatrix, s1: &MixedStrategy, s2: &MixedStrategy) -> Result<(f64, f64), DomainError> {
    check_dims(m, s1, s2)?;
    let (mut a, mut b) = (0.0, 0.0);
    for (r, p) in s1.0.iter().enumerate() {
        for (c, q) in s2.0.iter().enumerate() {
            let (x, y) = m.cell(r, c);
            a += p * q * x;
            b += p * q * y;
        }
    }
    Ok((a, b))
}

/// Expected payoff of each pure action of `side` against `opponent`.
pub fn pure_payoffs(m: &PayoffMatrix, opponent: &MixedStrategy, side: Side) -> Result<Vec<f64>, DomainError> {
    match side {
        Side::Row => {
            if opponent.len() != m.cols {
                return Err(DomainError::new(format!(
                    "column strategy has {} entries, matrix has {} columns",
                    opponent.len(),
                    m.cols
                )));
            }
            Ok((0..m.rows)
                .map(|r| (0..m.cols).map(|c| opponent.0[c] * m.row_payoff(r, c)).sum())
                .collect())
        }
        Side::Col => {
            if opponent.len() != m.rows {
                return Err(DomainError::new(format!(
                    "row strategy has {} entries, matrix has {} rows",
                    opponent.len(),
                    m.rows
                )));
            }
            Ok((0..m.cols)
                .map(|c| (0..m.rows).map(|r| opponent.0[r] * m.col_payoff(r, c)).sum())
                .collect())
        }
    }
}

pub fn best_responses(m: &PayoffMatrix, opponent: &MixedStrategy, side: Side) -> Result<Vec<usize>, DomainError> {
    let payoffs = pure_payoffs(m, opponent, side)?;
    let best = payoffs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    Ok(payoffs
        .iter()
        .enumerate()
        .filter(|(_, v)| **v >= best - VERIFY_TOL)
        .map(|(i, _)| i)
        .collect())
}

pub fn verify_equilibrium(m: &PayoffMatrix, p: &EquilibriumProfile, tol: f64) -> bool {
    fn side_ok(payoffs: &[f64], strategy: &MixedStrategy, tol: f64) -> bool {
        let support = strategy.support();
        let Some(&first) = support.first() else {
            return false;
        };
        let v = payoffs[first];
        support.iter().all(|i| (payoffs[*i] - v).abs() <= tol) && payoffs.iter().all(|x| *x <= v + tol)
    }
    let (Ok(row), Ok(col)) = (
        pure_payoffs(m, &p.col_strategy, Side::Row),
        pure_payoffs(m, &p.row_strategy, Side::Col),
    ) else {
        return false;
    };
    side_ok(&row, &p.row_strategy, tol) && side_ok(&col, &p.col_strategy, tol)
}

/// Diagnostics from a support-enumeration run.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct EnumerationStats {
    pub support_pairs: usize,
    pub singular: usize,
    pub rejected: usize,
}

pub fn support_enumeration_nash(m: &PayoffMatrix) -> Vec<EquilibriumProfile> {
    support_enumeration_with_stats(m).0
}

pub fn support_enumeration_with_stats(m: &PayoffMatrix) -> (Vec<EquilibriumProfile>, EnumerationStats) {
    let mut stats = EnumerationStats::default();
    let mut found: Vec<EquilibriumProfile> = Vec::new();
    for k in 1..=m.rows.min(m.cols) {
        for rows in subsets(m.rows, k) {
            for cols in subsets(m.cols, k) {
                stats.support_pairs += 1;
                // column mixture making every row in `rows` indifferent
                let col = indifference(k, |i, j| m.row_payoff(rows[i], cols[j]));
                // row mixture making every column in `cols` indifferent
                let row = indifference(k, |j, i| m.col_payoff(rows[i], cols[j]));
                let (Some((y, _)), Some((x, _))) = (col, row) else {
                    stats.singular += 1;
                    continue;
                };
                if x.iter().chain(y.iter()).any(|p| *p < -NORMALIZATION_TOL) {
                    stats.rejected += 1;
                    continue;
                }
                let expand = |n: usize, idx: &[usize], w: &[f64]| {
                    let mut full = vec![0.0; n];
                    for (i, p) in idx.iter().zip(w) {
                        full[*i] = p.max(0.0);
                    }
                    let s: f64 = full.iter().sum();
                    full.iter_mut().for_each(|p| *p /= s);
                    MixedStrategy(full)
                };
                let row_strategy = expand(m.rows, &rows, &x);
                let col_strategy = expand(m.cols, &cols, &y);
                let (row_value, col_value) = expected_payoff(m, &row_strategy, &col_strategy).expect("dims match");
                let profile = EquilibriumProfile {
                    row_strategy,
                    col_strategy,
                    row_value,
                    col_value,
                };
                if !verify_equilibrium(m, &profile, VERIFY_TOL) {
                    stats.rejected += 1;
                    continue;
                }
                let duplicate = found.iter().any(|f| {
                    close(&f.row_strategy.0, &profile.row_strategy.0)
                        && close(&f.col_strategy.0, &profile.col_strategy.0)
                });
                if !duplicate {
                    found.push(profile);
                }
            }
        }
    }
    if found.is_empty() {
        tracing::warn!(
            matrix = %m.name,
            pairs = stats.support_pairs,
            singular = stats.singular,
            "support enumeration found no equilibrium"
        );
    }
    (found, stats)
}

fn close(a: &[f64], b: &[f64]) -> bool {
    a.iter().zip(b).all(|(x, y)| (x - y).abs() <= VERIFY_TOL)
}

/// Solves `sum_j coef(i, j) w[j] - v = 0` for each i, `sum_j w[j] = 1`.
fn indifference(k: usize, coef: impl Fn(usize, usize) -> f64) -> Option<(Vec<f64>, f64)> {
    let n = k + 1;
    let mut a = vec![vec![0.0; n + 1]; n];
    for (i, row) in a.iter_mut().enumerate().take(k) {
        for (j, cell) in row.iter_mut().enumerate().take(k) {
            *cell = coef(i, j);
        }
        row[k] = -1.0;
    }
    for j in 0..k {
        a[k][j] = 1.0;
    }
    a[k][n] = 1.0;
    let sol = solve_linear(a)?;
    Some((sol[..k].to_vec(), sol[k]))
}

/// Gaussian elimination with partial pivoting on an augmented matrix.
/// Returns `None` when a pivot falls below the singularity threshold.
pub fn solve_linear(mut a: Vec<Vec<f64>>) -> Option<Vec<f64>> {
    let n = a.len();
    for col in 0..n {
        let pivot = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[pivot][col].abs() < PIVOT_TOL {
            return None;
        }
        a.swap(col, pivot);
        for row in col + 1..n {
            let factor = a[row][col] / a[col][col];
            if factor != 0.0 {
                for k in col..=n {
                    a[row][k] -= factor * a[col][k];
                }
            }
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let tail: f64 = (row + 1..n).map(|k| a[row][k] * x[k]).sum();
        x[row] = (a[row][n] - tail) / a[row][row];
    }
    Some(x)
}

fn subsets(n: usize, k: usize) -> Vec<Vec<usize>> {
    fn go(start: usize, n: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in start..n {
            cur.push(i);
            go(i + 1, n, k, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    go(0, n, k, &mut Vec::new(), &mut out);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn nash() -> MixedStrategy {
        MixedStrategy::new(vec![0.25, 0.5, 0.25]).unwrap()
    }

    #[test]
    fn expected_payoff_examples() {
        let rps = PayoffMatrix::rps_modified();
        let (a, b) = expected_payoff(&rps, &nash(), &MixedStrategy::pure(3, 0)).unwrap();
        assert!((a - 2.0).abs() < 1e-15 && (b - 2.0).abs() < 1e-15);
        let pd = PayoffMatrix::pd_table();
        let d = MixedStrategy::pure(2, 1);
        assert_eq!(expected_payoff(&pd, &d, &d).unwrap(), (35.0, 35.0));
        assert!(expected_payoff(&pd, &nash(), &d).is_err());
    }

    #[test]
    fn nash_mixture_earns_two_against_every_pure_action() {
        let rps = PayoffMatrix::rps_modified();
        // 1/4*2 + 1/2*3 + 1/4*0 ; 1/4*1 + 1/2*2 + 1/4*3 ; 1/4*4 + 1/2*1 + 1/4*2
        let hand = [
            0.25 * 2.0 + 0.5 * 3.0,
            0.25 * 1.0 + 0.5 * 2.0 + 0.25 * 3.0,
            0.25 * 4.0 + 0.5 * 1.0 + 0.25 * 2.0,
        ];
        for (c, want) in hand.iter().enumerate() {
            assert_eq!(*want, 2.0);
            let (a, _) = expected_payoff(&rps, &nash(), &MixedStrategy::pure(3, c)).unwrap();
            assert!((a - want).abs() < 1e-15);
        }
    }

    #[test]
    fn best_response_examples() {
        let pd = PayoffMatrix::pd_table();
        for q in [0.0, 0.3, 1.0] {
            let blue = MixedStrategy::new(vec![q, 1.0 - q]).unwrap();
            assert_eq!(best_responses(&pd, &blue, Side::Row).unwrap(), vec![1]);
        }
        let rps = PayoffMatrix::rps_modified();
        assert_eq!(best_responses(&rps, &nash(), Side::Row).unwrap(), vec![0, 1, 2]);
        assert_eq!(
            best_responses(&rps, &MixedStrategy::pure(3, 2), Side::Row).unwrap(),
            vec![0]
        );
    }

    #[test]
    fn enumeration_examples() {
        let eq = support_enumeration_nash(&PayoffMatrix::rps_modified());
        assert_eq!(eq.len(), 1);
        for (p, want) in eq[0].row_strategy.0.iter().zip([0.25, 0.5, 0.25]) {
            assert!((p - want).abs() < 1e-12);
        }
        assert!((eq[0].row_value - 2.0).abs() < 1e-12);

        let eq = support_enumeration_nash(&PayoffMatrix::pd_table());
        assert_eq!(eq.len(), 1);
        assert_eq!(eq[0].row_strategy.0, vec![0.0, 1.0]);
        assert_eq!(eq[0].col_strategy.0, vec![0.0, 1.0]);
        assert_eq!((eq[0].row_value, eq[0].col_value), (35.0, 35.0));

        let eq = support_enumeration_nash(&PayoffMatrix::rps_standard());
        assert_eq!(eq.len(), 1);
        for p in eq[0].row_strategy.0.iter().chain(&eq[0].col_strategy.0) {
            assert!((p - 1.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn verify_examples() {
        let rps = PayoffMatrix::rps_modified();
        let profile = |s: MixedStrategy| EquilibriumProfile {
            row_strategy: s.clone(),
            col_strategy: s,
            row_value: 2.0,
            col_value: 2.0,
        };
        assert!(verify_equilibrium(&rps, &profile(nash()), 1e-9));
        assert!(!verify_equilibrium(&rps, &profile(MixedStrategy::uniform(3)), 1e-9));
        let pd = PayoffMatrix::pd_table();
        let dd = EquilibriumProfile {
            row_strategy: MixedStrategy::pure(2, 1),
            col_strategy: MixedStrategy::pure(2, 1),
            row_value: 35.0,
            col_value: 35.0,
        };
        assert!(verify_equilibrium(&pd, &dd, 1e-9));
    }

    #[test]
    fn matching_pennies_and_coordination() {
        let mp = PayoffMatrix::new("mp", None, 2, 2, vec![(1.0, 0.0), (0.0, 1.0), (0.0, 1.0), (1.0, 0.0)]).unwrap();
        let eq = support_enumeration_nash(&mp);
        assert_eq!(eq.len(), 1);
        assert!((eq[0].row_strategy.0[0] - 0.5).abs() < 1e-12);

        let coord = PayoffMatrix::new(
            "coord",
            None,
            2,
            2,
            vec![(2.0, 1.0), (0.0, 0.0), (0.0, 0.0), (1.0, 2.0)],
        )
        .unwrap();
        let eq = support_enumeration_nash(&coord);
        assert_eq!(eq.len(), 3);
        for p in &eq {
            assert!(verify_equilibrium(&coord, p, 1e-9));
        }
    }

    #[test]
    fn inverse_cdf_regions() {
        let s = nash();
        assert_eq!(s.sample(0.0), 0);
        assert_eq!(s.sample(0.2499), 0);
        assert_eq!(s.sample(0.25), 1);
        assert_eq!(s.sample(0.5), 1);
        assert_eq!(s.sample(0.75), 2);
        assert_eq!(s.sample(0.999_999), 2);
    }

    fn dist(n: usize) -> impl Strategy<Value = MixedStrategy> {
        proptest::collection::vec(0.01f64..1.0, n).prop_map(|w| MixedStrategy::normalized(&w).unwrap())
    }

    proptest! {
        #[test]
        fn constant_sum_values_add_up(s1 in dist(3), s2 in dist(3)) {
            let (a, b) = expected_payoff(&PayoffMatrix::rps_modified(), &s1, &s2).unwrap();
            prop_assert!((a + b - 4.0).abs() < 1e-12);
        }

        #[test]
        fn expected_payoff_is_linear_in_mixtures(s1 in dist(3), t1 in dist(3), s2 in dist(3), lam in 0.0f64..1.0) {
            let m = PayoffMatrix::rps_modified();
            let mix: Vec<f64> = s1.0.iter().zip(&t1.0).map(|(a, b)| lam * a + (1.0 - lam) * b).collect();
            let mix = MixedStrategy::normalized(&mix).unwrap();
            let (a, _) = expected_payoff(&m, &s1, &s2).unwrap();
            let (b, _) = expected_payoff(&m, &t1, &s2).unwrap();
            let (c, _) = expected_payoff(&m, &mix, &s2).unwrap();
            prop_assert!((lam * a + (1.0 - lam) * b - c).abs() < 1e-12);
        }

        #[test]
        fn rescaling_weights_is_harmless(w in proptest::collection::vec(0.01f64..1.0, 3), k in 0.1f64..50.0, s2 in dist(3)) {
            let m = PayoffMatrix::rps_modified();
            let a = MixedStrategy::normalized(&w).unwrap();
            let scaled: Vec<f64> = w.iter().map(|x| x * k).collect();
            let b = MixedStrategy::normalized(&scaled).unwrap();
            let (x, _) = expected_payoff(&m, &a, &s2).unwrap();
            let (y, _) = expected_payoff(&m, &b, &s2).unwrap();
            prop_assert!((x - y).abs() < 1e-12);
        }

        #[test]
        fn enumerated_profiles_verify(cells in proptest::collection::vec((0u8..10, 0u8..10), 9)) {
            let cells = cells.into_iter().map(|(a, b)| (a as f64, b as f64)).collect();
            let m = PayoffMatrix::new("random", None, 3, 3, cells).unwrap();
            for p in support_enumeration_nash(&m) {
                prop_assert!(verify_equilibrium(&m, &p, 1e-9));
            }
        }
    }
}
