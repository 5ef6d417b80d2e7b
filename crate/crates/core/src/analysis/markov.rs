//! Stationary payoffs of two transition-policy bots playing each other.
//!
//! States are joint action pairs (a, b), indexed `3 * a + b`. From (a, b)
//! each player reads its own outcome, draws a transition from its table and
//! applies it to its own previous action; the two draws are independent.

use serde::{Deserialize, Serialize};

use crate::agents::TransitionPolicyTable;
use crate::error::DomainError;
use crate::game::{outcome_of, Game, Transition};
use crate::matrix::PayoffMatrix;

pub const POWER_TOL: f64 = 1e-12;
pub const DAMPING: f64 = 1e-6;
const MAX_ITER: usize = 200_000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StationaryPayoffs {
    pub points_per_round: (f64, f64),
    pub stationary: [f64; 9],
    /// Weight mixed toward uniform; 0 unless plain iteration failed to settle.
    pub damping: f64,
    pub iterations: usize,
    /// max |(pi T)_j - pi_j| for the chain actually iterated.
    pub residual: f64,
}

pub fn transition_matrix(a: &TransitionPolicyTable, b: &TransitionPolicyTable) -> Result<[[f64; 9]; 9], DomainError> {
    a.validate()?;
    b.validate()?;
    let actions = Game::Rps.actions();
    let mut t = [[0.0; 9]; 9];
    for (i, &x) in actions.iter().enumerate() {
        for (j, &y) in actions.iter().enumerate() {
            let (ox, oy) = (outcome_of(x, y)?, outcome_of(y, x)?);
            for tx in Transition::ALL {
                let nx = tx.apply(x)?.index();
                for ty in Transition::ALL {
                    let ny = ty.apply(y)?.index();
                    t[3 * i + j][3 * nx + ny] += a.probability(ox, tx) * b.probability(oy, ty);
                }
            }
        }
    }
    Ok(t)
}

fn step(pi: &[f64; 9], t: &[[f64; 9]; 9], damping: f64) -> [f64; 9] {
    let mut next = [damping / 9.0; 9];
    for (i, row) in t.iter().enumerate() {
        for (j, p) in row.iter().enumerate() {
            next[j] += (1.0 - damping) * pi[i] * p;
        }
    }
    let s: f64 = next.iter().sum();
    next.map(|x| x / s)
}

fn iterate(t: &[[f64; 9]; 9], damping: f64) -> Option<([f64; 9], usize)> {
    let mut pi = [1.0 / 9.0; 9];
    for n in 1..=MAX_ITER {
        let next = step(&pi, t, damping);
        let diff: f64 = next.iter().zip(&pi).map(|(x, y)| (x - y).abs()).sum();
        pi = next;
        if diff < POWER_TOL {
            return Some((pi, n));
        }
    }
    None
}

pub fn markov_stationary_payoffs(
    a: &TransitionPolicyTable,
    b: &TransitionPolicyTable,
    m: &PayoffMatrix,
) -> Result<StationaryPayoffs, DomainError> {
    if m.game != Some(Game::Rps) {
        return Err(DomainError::new(
            "the transition chain is defined for Rock-Paper-Scissors only",
        ));
    }
    let t = transition_matrix(a, b)?;
    let (damping, (pi, iterations)) = match iterate(&t, 0.0) {
        Some(r) => (0.0, r),
        None => (
            DAMPING,
            iterate(&t, DAMPING).ok_or_else(|| DomainError::new("power iteration did not converge"))?,
        ),
    };
    let next = step(&pi, &t, damping);
    let residual = next.iter().zip(&pi).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    let mut pts = (0.0, 0.0);
    for i in 0..3 {
        for j in 0..3 {
            let (u, v) = m.cell(i, j);
            pts.0 += pi[3 * i + j] * u;
            pts.1 += pi[3 * i + j] * v;
        }
    }
    Ok(StationaryPayoffs {
        points_per_round: pts,
        stationary: pi,
        damping,
        iterations,
        residual,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rows_are_stochastic() {
        let t = transition_matrix(&TransitionPolicyTable::wslu(), &TransitionPolicyTable::wdls()).unwrap();
        for row in t {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn symmetric_pair_splits_the_constant_sum() {
        let m = PayoffMatrix::rps_modified();
        let wslu = TransitionPolicyTable::wslu();
        let s = markov_stationary_payoffs(&wslu, &wslu, &m).unwrap();
        assert!((s.points_per_round.0 - 2.0).abs() < 1e-9);
        assert!((s.points_per_round.1 - 2.0).abs() < 1e-9);
        assert!(s.residual <= 1e-10);
        assert_eq!(s.damping, 0.0);
    }

    #[test]
    fn payoffs_sum_to_four() {
        let m = PayoffMatrix::rps_modified();
        let tables = [
            TransitionPolicyTable::uniform(),
            TransitionPolicyTable::wslu(),
            TransitionPolicyTable::wdls(),
            TransitionPolicyTable::wslc(),
        ];
        for a in &tables {
            for b in &tables {
                let s = markov_stationary_payoffs(a, b, &m).unwrap();
                assert!((s.points_per_round.0 + s.points_per_round.1 - 4.0).abs() < 1e-9);
                assert!((s.stationary.iter().sum::<f64>() - 1.0).abs() < 1e-12);
                assert!(s.residual <= 1e-10);
            }
        }
        assert!(markov_stationary_payoffs(&tables[0], &tables[1], &PayoffMatrix::pd_table()).is_err());
    }

    #[test]
    fn deterministic_cycle_is_handled() {
        // always upgrade: the joint action cycles with period 3
        let up = TransitionPolicyTable {
            win: [0.0, 1.0, 0.0],
            tie: [0.0, 1.0, 0.0],
            lose: [0.0, 1.0, 0.0],
        };
        let s = markov_stationary_payoffs(&up, &up, &PayoffMatrix::rps_modified()).unwrap();
        assert!(s.residual <= 1e-10);
        assert!((s.points_per_round.0 - 2.0).abs() < 1e-9);
    }
}
