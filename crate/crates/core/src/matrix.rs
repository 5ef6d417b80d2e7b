//! Payoff matrices and their plain-text file format.
//!
//! ```text
//! # comments start with '#'
//! name = rps_modified
//! game = rps
//! dims = 3x3
//! 2,2  1,3  4,0
//! 3,1  2,2  1,3
//! 0,4  3,1  2,2
//! ```
//!
//! Each data line is one row-player action (in the game's action order);
//! each `a,b` pair is (row payoff, column payoff). The bundled RPS matrix is
//! stored in the dominance-consistent orientation: the winner of a non-tie
//! pair always earns more than 2 and the loser less than 2.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{DomainError, Error, Result};
use crate::game::{outcome_of, Action, Game, Outcome};

pub const RPS_MODIFIED_SOURCE: &str = include_str!("../data/rps_modified.matrix");
pub const PD_TABLE_SOURCE: &str = include_str!("../data/pd_table.matrix");

/// Payoff sum of every cell of a Rock-Paper-Scissors matrix.
pub const RPS_CONSTANT_SUM: f64 = 4.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PayoffMatrix {
    pub name: String,
    /// Stage game the matrix belongs to, if any. Generic matrices have none.
    pub game: Option<Game>,
    pub rows: usize,
    pub cols: usize,
    /// Row-major cells of (row payoff, column payoff).
    pub cells: Vec<(f64, f64)>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Violation {
    pub cell: Option<(usize, usize)>,
    pub message: String,
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self.cell {
            Some((r, c)) => write!(f, "cell ({r},{c}): {}", self.message),
            None => f.write_str(&self.message),
        }
    }
}

impl PayoffMatrix {
    pub fn new(
        name: impl Into<String>,
        game: Option<Game>,
        rows: usize,
        cols: usize,
        cells: Vec<(f64, f64)>,
    ) -> Result<Self, DomainError> {
        if cells.len() != rows * cols {
            return Err(DomainError::new(format!(
                "{}x{} matrix needs {} cells, got {}",
                rows,
                cols,
                rows * cols,
                cells.len()
            )));
        }
        Ok(PayoffMatrix {
            name: name.into(),
            game,
            rows,
            cols,
            cells,
        })
    }

    pub fn rps_modified() -> Self {
        Self::parse(RPS_MODIFIED_SOURCE).expect("bundled RPS matrix parses")
    }

    pub fn pd_table() -> Self {
        Self::parse(PD_TABLE_SOURCE).expect("bundled PD matrix parses")
    }

    /// Symmetric RPS with win 3, tie 2, lose 1.
    pub fn rps_standard() -> Self {
        let cells = vec![
            (2.0, 2.0),
            (1.0, 3.0),
            (3.0, 1.0),
            (3.0, 1.0),
            (2.0, 2.0),
            (1.0, 3.0),
            (1.0, 3.0),
            (3.0, 1.0),
            (2.0, 2.0),
        ];
        PayoffMatrix::new("rps_standard", Some(Game::Rps), 3, 3, cells).unwrap()
    }

    /// Looks up one of the bundled matrices by name.
    pub fn bundled(name: &str) -> Option<Self> {
        match name {
            "rps_modified" => Some(Self::rps_modified()),
            "rps_standard" => Some(Self::rps_standard()),
            "pd_table" | "pd" => Some(Self::pd_table()),
            _ => None,
        }
    }

    pub fn bundled_names() -> &'static [&'static str] {
        &["rps_modified", "rps_standard", "pd_table"]
    }

    pub fn cell(&self, row: usize, col: usize) -> (f64, f64) {
        self.cells[row * self.cols + col]
    }

    pub fn row_payoff(&self, row: usize, col: usize) -> f64 {
        self.cell(row, col).0
    }

    pub fn col_payoff(&self, row: usize, col: usize) -> f64 {
        self.cell(row, col).1
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut name = None;
        let mut game = None;
        let mut dims = None;
        let mut cells = Vec::new();
        let mut data_rows = 0usize;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let bad = |msg: String| Error::Validation(format!("matrix line {}: {msg}", lineno + 1));
            if let Some((key, value)) = line.split_once('=') {
                let value = value.trim();
                match key.trim() {
                    "name" => name = Some(value.to_string()),
                    "game" => {
                        game = match value {
                            "none" | "generic" => None,
                            v => Some(v.parse::<Game>().map_err(|e| bad(e.to_string()))?),
                        }
                    }
                    "dims" => {
                        let (r, c) = value
                            .split_once('x')
                            .ok_or_else(|| bad(format!("dims must look like 3x3, got `{value}`")))?;
                        let r: usize = r.trim().parse().map_err(|_| bad(format!("bad row count `{r}`")))?;
                        let c: usize = c.trim().parse().map_err(|_| bad(format!("bad column count `{c}`")))?;
                        dims = Some((r, c));
                    }
                    other => return Err(bad(format!("unknown key `{other}`"))),
                }
                continue;
            }
            let (_, cols) = dims.ok_or_else(|| bad("cell data before `dims`".into()))?;
            let mut count = 0;
            for pair in line.split_whitespace() {
                let (a, b) = pair
                    .split_once(',')
                    .ok_or_else(|| bad(format!("cell `{pair}` is not an `a,b` pair")))?;
                let a: f64 = a.parse().map_err(|_| bad(format!("bad payoff `{a}`")))?;
                let b: f64 = b.parse().map_err(|_| bad(format!("bad payoff `{b}`")))?;
                cells.push((a, b));
                count += 1;
            }
            if count != cols {
                return Err(bad(format!("expected {cols} cells, found {count}")));
            }
            data_rows += 1;
        }
        let name = name.ok_or_else(|| Error::Validation("matrix has no `name`".into()))?;
        let (rows, cols) = dims.ok_or_else(|| Error::Validation("matrix has no `dims`".into()))?;
        if data_rows != rows {
            return Err(Error::Validation(format!(
                "matrix `{name}` declares {rows} rows but has {data_rows}"
            )));
        }
        Ok(PayoffMatrix::new(name, game, rows, cols, cells)?)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "name = {}", self.name);
        let _ = writeln!(
            out,
            "game = {}",
            self.game.map(|g| g.to_string()).unwrap_or_else(|| "none".into())
        );
        let _ = writeln!(out, "dims = {}x{}", self.rows, self.cols);
        for r in 0..self.rows {
            let row: Vec<String> = (0..self.cols)
                .map(|c| {
                    let (a, b) = self.cell(r, c);
                    format!("{},{}", crate::fmt_points(a), crate::fmt_points(b))
                })
                .collect();
            let _ = writeln!(out, "{}", row.join("  "));
        }
        out
    }

    fn check_action(&self, a: Action, axis: &str, bound: usize) -> Result<usize, DomainError> {
        if let Some(g) = self.game {
            if a.game() != g {
                return Err(DomainError::new(format!(
                    "{axis} action {a} does not belong to matrix `{}` ({g})",
                    self.name
                )));
            }
        }
        let i = a.index();
        if i >= bound {
            return Err(DomainError::new(format!(
                "{axis} action {a} is out of range for matrix `{}`",
                self.name
            )));
        }
        Ok(i)
    }
}

/// Payoffs of one round plus player 1's outcome.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Resolution {
    pub payoffs: (f64, f64),
    pub outcome: Outcome,
}

pub fn resolve_round(m: &PayoffMatrix, a1: Action, a2: Action) -> Result<Resolution, DomainError> {
    let r = m.check_action(a1, "row", m.rows)?;
    let c = m.check_action(a2, "column", m.cols)?;
    let outcome = outcome_of(a1, a2)?;
    Ok(Resolution {
        payoffs: m.cell(r, c),
        outcome,
    })
}

/// Reports every broken matrix invariant; an empty list means the matrix is valid.
pub fn validate_matrix(m: &PayoffMatrix) -> Vec<Violation> {
    let mut out = Vec::new();
    if m.rows == 0 || m.cols == 0 || m.cells.len() != m.rows * m.cols {
        out.push(Violation {
            cell: None,
            message: format!("shape {}x{} does not match {} cells", m.rows, m.cols, m.cells.len()),
        });
        return out;
    }
    for r in 0..m.rows {
        for c in 0..m.cols {
            let (a, b) = m.cell(r, c);
            if !a.is_finite() || !b.is_finite() || a < 0.0 || b < 0.0 {
                out.push(Violation {
                    cell: Some((r, c)),
                    message: format!("payoffs ({a}, {b}) must be finite and non-negative"),
                });
            }
        }
    }
    match m.game {
        Some(Game::Rps) => {
            if (m.rows, m.cols) != (3, 3) {
                out.push(Violation {
                    cell: None,
                    message: format!("RPS matrix must be 3x3, got {}x{}", m.rows, m.cols),
                });
                return out;
            }
            let acts = Game::Rps.actions();
            for r in 0..3 {
                for c in 0..3 {
                    let (a, b) = m.cell(r, c);
                    if (a + b - RPS_CONSTANT_SUM).abs() > 1e-12 {
                        out.push(Violation {
                            cell: Some((r, c)),
                            message: format!("constant-sum violation: {a} + {b} != {RPS_CONSTANT_SUM}"),
                        });
                        continue;
                    }
                    let (winner, loser) = match outcome_of(acts[r], acts[c]).unwrap() {
                        Outcome::Win => (a, b),
                        Outcome::Lose => (b, a),
                        Outcome::Tie => continue,
                    };
                    let half = RPS_CONSTANT_SUM / 2.0;
                    if !(winner > half && loser < half) {
                        out.push(Violation {
                            cell: Some((r, c)),
                            message: format!(
                                "dominance winner must earn more than a tie: winner {winner}, loser {loser}"
                            ),
                        });
                    }
                }
            }
        }
        Some(Game::Pd) => {
            if (m.rows, m.cols) != (2, 2) {
                out.push(Violation {
                    cell: None,
                    message: format!("PD matrix must be 2x2, got {}x{}", m.rows, m.cols),
                });
                return out;
            }
            let (reward, _) = m.cell(0, 0);
            let (sucker, temptation) = m.cell(0, 1);
            let (temptation2, sucker2) = m.cell(1, 0);
            let (punishment, punishment2) = m.cell(1, 1);
            if m.cell(0, 0).0 != m.cell(0, 0).1
                || punishment != punishment2
                || sucker != sucker2
                || temptation != temptation2
            {
                out.push(Violation {
                    cell: None,
                    message: "PD matrix must be symmetric".into(),
                });
            }
            if !(temptation > reward && reward > punishment && punishment > sucker) {
                out.push(Violation {
                    cell: None,
                    message: format!(
                        "PD ordering T > R > P > S fails: T={temptation} R={reward} P={punishment} S={sucker}"
                    ),
                });
            }
        }
        None => {}
    }
    out
}
