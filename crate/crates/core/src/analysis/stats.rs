//! Regularized incomplete gamma functions and the chi-square independence test.

use serde::{Deserialize, Serialize};

use crate::error::DomainError;

const EPS: f64 = 1e-16;
const MAX_ITER: usize = 10_000;
const TINY: f64 = 1e-300;

/// ln Gamma(x) for x > 0 (Lanczos, g = 7, n = 9).
pub fn ln_gamma(x: f64) -> f64 {
    const G: f64 = 7.0;
    const C: [f64; 9] = [
        0.999_999_999_999_809_93,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_13,
        -176.615_029_162_140_59,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_571_6e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        // reflection
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut a = C[0];
    let t = x + G + 0.5;
    for (i, c) in C.iter().enumerate().skip(1) {
        a += c / (x + i as f64);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
}

fn check(a: f64, x: f64) -> Result<(), DomainError> {
    if !(a > 0.0) || !a.is_finite() {
        return Err(DomainError::new(format!("incomplete gamma needs a > 0, got {a}")));
    }
    if !(x >= 0.0) {
        return Err(DomainError::new(format!("incomplete gamma needs x >= 0, got {x}")));
    }
    Ok(())
}

/// P(a, x) by its power series; converges quickly for x < a + 1.
fn series_p(a: f64, x: f64) -> f64 {
    let mut ap = a;
    let mut del = 1.0 / a;
    let mut sum = del;
    for _ in 0..MAX_ITER {
        ap += 1.0;
        del *= x / ap;
        sum += del;
        if del.abs() < sum.abs() * EPS {
            break;
        }
    }
    sum * (-x + a * x.ln() - ln_gamma(a)).exp()
}

/// Q(a, x) by its continued fraction (modified Lentz); for x >= a + 1.
fn continued_fraction_q(a: f64, x: f64) -> f64 {
    let mut b = x + 1.0 - a;
    let mut c = 1.0 / TINY;
    let mut d = 1.0 / b;
    let mut h = d;
    for i in 1..MAX_ITER {
        let an = -(i as f64) * (i as f64 - a);
        b += 2.0;
        d = an * d + b;
        if d.abs() < TINY {
            d = TINY;
        }
        c = b + an / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < EPS {
            break;
        }
    }
    (-x + a * x.ln() - ln_gamma(a)).exp() * h
}

/// Regularized upper incomplete gamma Q(a, x) = Gamma(a, x) / Gamma(a).
pub fn regularized_gamma_q(a: f64, x: f64) -> Result<f64, DomainError> {
    check(a, x)?;
    if x == 0.0 {
        return Ok(1.0);
    }
    if x.is_infinite() {
        return Ok(0.0);
    }
    let q = if x < a + 1.0 {
        1.0 - series_p(a, x)
    } else {
        continued_fraction_q(a, x)
    };
    Ok(q.clamp(0.0, 1.0))
}

/// Regularized lower incomplete gamma P(a, x) = 1 - Q(a, x).
pub fn regularized_gamma_p(a: f64, x: f64) -> Result<f64, DomainError> {
    check(a, x)?;
    if x == 0.0 {
        return Ok(0.0);
    }
    if x.is_infinite() {
        return Ok(1.0);
    }
    let p = if x < a + 1.0 {
        series_p(a, x)
    } else {
        1.0 - continued_fraction_q(a, x)
    };
    Ok(p.clamp(0.0, 1.0))
}

/// Upper tail of the chi-square law with `df` degrees of freedom.
pub fn chi_square_sf(statistic: f64, df: usize) -> Result<f64, DomainError> {
    if df == 0 {
        return Err(DomainError::new("chi-square law needs df >= 1"));
    }
    regularized_gamma_q(df as f64 / 2.0, statistic.max(0.0) / 2.0)
}

pub const ALPHA: f64 = 0.05;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IndependenceTest {
    pub statistic: f64,
    pub degrees_of_freedom: usize,
    /// `None` when the reduced table has df = 0 and the test is undefined.
    pub p_value: Option<f64>,
    pub significant: bool,
    pub warnings: Vec<String>,
}

/// Pearson chi-square test of independence on a count table.
///
/// All-zero rows and columns are dropped first; df = (r' - 1)(c' - 1).
pub fn chi_square_counts(counts: &[Vec<f64>]) -> Result<IndependenceTest, DomainError> {
    let cols = counts.first().map_or(0, Vec::len);
    if counts.iter().any(|r| r.len() != cols) {
        return Err(DomainError::new("contingency rows differ in length"));
    }
    if counts.iter().flatten().any(|&c| !(c >= 0.0) || !c.is_finite()) {
        return Err(DomainError::new("contingency counts must be finite and non-negative"));
    }
    let row_tot: Vec<f64> = counts.iter().map(|r| r.iter().sum()).collect();
    let col_tot: Vec<f64> = (0..cols).map(|j| counts.iter().map(|r| r[j]).sum()).collect();
    let total: f64 = row_tot.iter().sum();
    if total == 0.0 {
        return Err(DomainError::new("contingency table is empty"));
    }
    let rows_kept: Vec<usize> = (0..counts.len()).filter(|&i| row_tot[i] > 0.0).collect();
    let cols_kept: Vec<usize> = (0..cols).filter(|&j| col_tot[j] > 0.0).collect();
    let mut statistic = 0.0;
    let mut low = 0;
    for &i in &rows_kept {
        for &j in &cols_kept {
            let expected = row_tot[i] * col_tot[j] / total;
            if expected < 5.0 {
                low += 1;
            }
            // (O - E)^2 / E scaled by N, which stays exact for integer counts
            let rc = row_tot[i] * col_tot[j];
            let d = counts[i][j] * total - rc;
            statistic += d * d / rc;
        }
    }
    statistic /= total;
    let df = rows_kept.len().saturating_sub(1) * cols_kept.len().saturating_sub(1);
    let mut warnings = Vec::new();
    if low > 0 {
        warnings.push(format!("{low} cell(s) with expected count below 5"));
    }
    let dropped = (counts.len() - rows_kept.len()) + (cols - cols_kept.len());
    if dropped > 0 {
        warnings.push(format!("{dropped} all-zero row(s)/column(s) dropped"));
    }
    let p_value = if df == 0 {
        warnings.push("df = 0 after dropping empty rows/columns; test undefined".into());
        None
    } else {
        Some(chi_square_sf(statistic, df)?)
    };
    Ok(IndependenceTest {
        statistic,
        degrees_of_freedom: df,
        significant: p_value.is_some_and(|p| p < ALPHA),
        p_value,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn gamma_spot_values() {
        assert_eq!(regularized_gamma_q(3.0, 0.0).unwrap(), 1.0);
        for x in [0.1, 1.0, 2.5, 10.0, 40.0] {
            assert!((regularized_gamma_q(1.0, x).unwrap() - (-x).exp()).abs() < 1e-15);
        }
        assert!((regularized_gamma_q(2.0, 3.0).unwrap() - 0.199_148_273_471_455_78).abs() < 1e-13);
        assert!(regularized_gamma_q(0.0, 1.0).is_err());
        assert!(regularized_gamma_q(-1.0, 1.0).is_err());
    }

    #[test]
    fn ln_gamma_integers() {
        let mut fact = 1.0f64;
        for n in 1..20 {
            assert!((ln_gamma(n as f64) - fact.ln()).abs() < 1e-12, "n = {n}");
            fact *= n as f64;
        }
        assert!((ln_gamma(0.5) - std::f64::consts::PI.sqrt().ln()).abs() < 1e-14);
    }

    #[test]
    fn chi_square_examples() {
        let uniform = vec![vec![5.0; 3]; 3];
        let t = chi_square_counts(&uniform).unwrap();
        assert_eq!(t.statistic, 0.0);
        assert_eq!(t.p_value, Some(1.0));

        let mut diag = vec![vec![0.0; 3]; 3];
        for (i, row) in diag.iter_mut().enumerate() {
            row[i] = 10.0;
        }
        let t = chi_square_counts(&diag).unwrap();
        assert!((t.statistic - 60.0).abs() < 1e-12);
        assert_eq!(t.degrees_of_freedom, 4);
        assert!(t.significant);

        assert!(chi_square_counts(&vec![vec![0.0; 3]; 3]).is_err());
        let single = vec![vec![3.0, 4.0, 5.0], vec![0.0; 3], vec![0.0; 3]];
        let t = chi_square_counts(&single).unwrap();
        assert_eq!(t.degrees_of_freedom, 0);
        assert_eq!(t.p_value, None);
        assert!(!t.significant);
    }

    proptest! {
        #[test]
        fn p_plus_q_is_one(a in 0.05f64..60.0, x in 0.0f64..120.0) {
            let p = regularized_gamma_p(a, x).unwrap();
            let q = regularized_gamma_q(a, x).unwrap();
            prop_assert!((p + q - 1.0).abs() < 1e-12);
            prop_assert!((0.0..=1.0).contains(&q));
        }

        #[test]
        fn p_value_decreases_in_statistic(df in 1usize..12, s in 0.0f64..80.0, ds in 0.01f64..5.0) {
            let a = chi_square_sf(s, df).unwrap();
            let b = chi_square_sf(s + ds, df).unwrap();
            prop_assert!(b <= a);
            if a > 1e-300 {
                prop_assert!(b < a);
            }
        }

        #[test]
        fn permutation_invariance(cells in proptest::collection::vec(0u32..40, 9), pr in 0usize..6, pc in 0usize..6) {
            let table: Vec<Vec<f64>> = cells.chunks(3).map(|r| r.iter().map(|&c| c as f64).collect()).collect();
            prop_assume!(table.iter().flatten().sum::<f64>() > 0.0);
            let perms = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
            let (rp, cp) = (perms[pr], perms[pc]);
            let permuted: Vec<Vec<f64>> = rp.iter().map(|&i| cp.iter().map(|&j| table[i][j]).collect()).collect();
            let a = chi_square_counts(&table).unwrap();
            let b = chi_square_counts(&permuted).unwrap();
            prop_assert!((a.statistic - b.statistic).abs() < 1e-9 * (1.0 + a.statistic));
            prop_assert_eq!(a.degrees_of_freedom, b.degrees_of_freedom);
        }
    }
}
