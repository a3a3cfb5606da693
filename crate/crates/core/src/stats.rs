//! Pearson chi-square test of independence between two categorical attributes.

use serde::{Deserialize, Serialize};

use crate::discretizer::CategoricalTable;
use crate::error::{Error, Result};

/// p-values below this are reported as underflow.
pub const P_FLOOR: f64 = 1e-300;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContingencyTable {
    pub x: String,
    pub y: String,
    pub row_labels: Vec<String>,
    pub col_labels: Vec<String>,
    pub counts: Vec<Vec<u64>>,
    pub total: u64,
    /// Categories dropped because their margin was zero.
    pub pruned: Vec<String>,
}

impl ContingencyTable {
    /// Validates counts, drops all-zero rows and columns, and requires at least
    /// a 2x2 table afterwards.
    pub fn new(
        x: impl Into<String>,
        y: impl Into<String>,
        row_labels: Vec<String>,
        col_labels: Vec<String>,
        counts: Vec<Vec<u64>>,
    ) -> Result<Self> {
        let (x, y) = (x.into(), y.into());
        let degenerate = |reason: String| Error::DegenerateContingency {
            x: x.clone(),
            y: y.clone(),
            reason,
        };
        if counts.len() != row_labels.len() || counts.iter().any(|r| r.len() != col_labels.len()) {
            return Err(degenerate("count matrix does not match labels".into()));
        }
        let row_sums: Vec<u64> = counts.iter().map(|r| r.iter().sum()).collect();
        let col_sums: Vec<u64> = (0..col_labels.len())
            .map(|j| counts.iter().map(|r| r[j]).sum())
            .collect();
        let keep_rows: Vec<usize> = (0..row_labels.len()).filter(|&i| row_sums[i] > 0).collect();
        let keep_cols: Vec<usize> = (0..col_labels.len()).filter(|&j| col_sums[j] > 0).collect();
        let mut pruned = Vec::new();
        pruned.extend(
            (0..row_labels.len())
                .filter(|i| row_sums[*i] == 0)
                .map(|i| format!("{x}={}", row_labels[i])),
        );
        pruned.extend(
            (0..col_labels.len())
                .filter(|j| col_sums[*j] == 0)
                .map(|j| format!("{y}={}", col_labels[j])),
        );
        if keep_rows.len() < 2 || keep_cols.len() < 2 {
            return Err(degenerate(format!(
                "{} non-empty {x} categories and {} non-empty {y} categories; need at least 2 each",
                keep_rows.len(),
                keep_cols.len()
            )));
        }
        let counts: Vec<Vec<u64>> = keep_rows
            .iter()
            .map(|&i| keep_cols.iter().map(|&j| counts[i][j]).collect())
            .collect();
        let total = counts.iter().flatten().sum();
        Ok(Self {
            row_labels: keep_rows.iter().map(|&i| row_labels[i].clone()).collect(),
            col_labels: keep_cols.iter().map(|&j| col_labels[j].clone()).collect(),
            x,
            y,
            counts,
            total,
            pruned,
        })
    }

    pub fn transpose(&self) -> Self {
        let counts = (0..self.col_labels.len())
            .map(|j| self.counts.iter().map(|r| r[j]).collect())
            .collect();
        Self {
            x: self.y.clone(),
            y: self.x.clone(),
            row_labels: self.col_labels.clone(),
            col_labels: self.row_labels.clone(),
            counts,
            total: self.total,
            pruned: self.pruned.clone(),
        }
    }
}

/// Cross-tabulates two attributes over rows where both labels are present.
pub fn contingency_table(table: &CategoricalTable, x: &str, y: &str) -> Result<ContingencyTable> {
    let xi = table.require_attribute(x)?;
    let yi = table.require_attribute(y)?;
    let rows = table.categories(xi).to_vec();
    let cols = table.categories(yi).to_vec();
    let mut counts = vec![vec![0u64; cols.len()]; rows.len()];
    for r in 0..table.n_rows() {
        if let (Some(a), Some(b)) = (table.code(r, xi), table.code(r, yi)) {
            counts[a][b] += 1;
        }
    }
    ContingencyTable::new(x, y, rows, cols, counts)
}

/// Upper-tail probability, with an explicit marker once it drops below [`P_FLOOR`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PValue {
    pub value: f64,
    pub underflow: bool,
}

impl std::fmt::Display for PValue {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if self.underflow {
            write!(f, "< {P_FLOOR:e}")
        } else {
            write!(f, "{:.4e}", self.value)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChiSquareResult {
    pub statistic: f64,
    pub dof: usize,
    pub p_value: PValue,
    pub expected: Vec<Vec<f64>>,
    pub low_expected_warning: bool,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ChiSquareOptions {
    /// Yates continuity correction, applied to 2x2 tables only.
    pub yates: bool,
}

pub fn chi_square(ct: &ContingencyTable) -> Result<ChiSquareResult> {
    chi_square_with(ct, ChiSquareOptions::default())
}

pub fn chi_square_with(ct: &ContingencyTable, opts: ChiSquareOptions) -> Result<ChiSquareResult> {
    if ct.total == 0 {
        return Err(Error::DegenerateContingency {
            x: ct.x.clone(),
            y: ct.y.clone(),
            reason: "zero total count".into(),
        });
    }
    let n = ct.total as f64;
    let row_sums: Vec<f64> = ct.counts.iter().map(|r| r.iter().sum::<u64>() as f64).collect();
    let col_sums: Vec<f64> = (0..ct.col_labels.len())
        .map(|j| ct.counts.iter().map(|r| r[j]).sum::<u64>() as f64)
        .collect();
    let dof = (row_sums.len() - 1) * (col_sums.len() - 1);
    let yates = opts.yates && dof == 1;

    let expected: Vec<Vec<f64>> = row_sums
        .iter()
        .map(|r| col_sums.iter().map(|c| r * c / n).collect())
        .collect();
    let mut statistic = 0.0;
    let mut low = false;
    for (obs_row, exp_row) in ct.counts.iter().zip(&expected) {
        for (&o, &e) in obs_row.iter().zip(exp_row) {
            low |= e < 5.0;
            let mut d = (o as f64 - e).abs();
            if yates {
                d = (d - 0.5).max(0.0);
            }
            statistic += d * d / e;
        }
    }
    Ok(ChiSquareResult {
        statistic,
        dof,
        p_value: chi_sq_sf(statistic, dof),
        expected,
        low_expected_warning: low,
    })
}

/// One line of the test report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChiSquareReportEntry {
    pub x: String,
    pub y: String,
    pub statistic: f64,
    pub dof: usize,
    pub p_value: f64,
    pub p_underflow: bool,
    pub warning: Option<String>,
}

impl ChiSquareReportEntry {
    pub fn new(ct: &ContingencyTable, result: &ChiSquareResult) -> Self {
        let mut notes = Vec::new();
        if result.low_expected_warning {
            notes.push("expected count below 5 in at least one cell".to_string());
        }
        if !ct.pruned.is_empty() {
            notes.push(format!("empty categories pruned: {}", ct.pruned.join(", ")));
        }
        Self {
            x: ct.x.clone(),
            y: ct.y.clone(),
            statistic: result.statistic,
            dof: result.dof,
            p_value: result.p_value.value,
            p_underflow: result.p_value.underflow,
            warning: (!notes.is_empty()).then(|| notes.join("; ")),
        }
    }
}

/// Runs `contingency_table` + `chi_square` for one attribute pair.
pub fn test_pair(table: &CategoricalTable, x: &str, y: &str) -> Result<ChiSquareReportEntry> {
    let ct = contingency_table(table, x, y)?;
    let res = chi_square(&ct)?;
    Ok(ChiSquareReportEntry::new(&ct, &res))
}

/// Survival function of the chi-square distribution, `Q(dof / 2, x / 2)`.
pub fn chi_sq_sf(x: f64, dof: usize) -> PValue {
    assert!(dof > 0, "chi-square needs at least one degree of freedom");
    if x.is_nan() || x <= 0.0 {
        return PValue {
            value: 1.0,
            underflow: false,
        };
    }
    let ln_q = ln_gamma_q(dof as f64 / 2.0, x / 2.0);
    if ln_q < P_FLOOR.ln() {
        PValue {
            value: P_FLOOR,
            underflow: true,
        }
    } else {
        PValue {
            value: ln_q.exp().clamp(0.0, 1.0),
            underflow: false,
        }
    }
}

/// Natural log of the gamma function (Lanczos, g = 671/128, 14 terms).
pub fn ln_gamma(x: f64) -> f64 {
    const COF: [f64; 14] = [
        57.156_235_665_862_923_5,
        -59.597_960_355_475_491_2,
        14.136_097_974_741_747_1,
        -0.491_913_816_097_620_199,
        0.339_946_499_848_118_887e-4,
        0.465_236_289_270_485_756e-4,
        -0.983_744_753_048_795_646e-4,
        0.158_088_703_224_912_494e-3,
        -0.210_264_441_724_104_883e-3,
        0.217_439_618_115_212_643e-3,
        -0.164_318_106_536_763_890e-3,
        0.844_182_239_838_527_433e-4,
        -0.261_908_384_015_814_087e-4,
        0.368_991_826_595_316_234e-5,
    ];
    debug_assert!(x > 0.0);
    let mut y = x;
    let tmp = x + 5.242_187_5;
    let tmp = (x + 0.5) * tmp.ln() - tmp;
    let mut ser = 0.999_999_999_999_997_092;
    for c in COF {
        y += 1.0;
        ser += c / y;
    }
    tmp + (2.506_628_274_631_000_5 * ser / x).ln()
}

const GAMMA_EPS: f64 = 1e-16;
const GAMMA_MAX_ITER: usize = 10_000;

/// ln of the regularized upper incomplete gamma function Q(a, x), x > 0.
fn ln_gamma_q(a: f64, x: f64) -> f64 {
    let ln_prefactor = a * x.ln() - x - ln_gamma(a);
    if x < a + 1.0 {
        // Series for P(a, x); Q is not small in this region.
        let mut ap = a;
        let mut del = 1.0 / a;
        let mut sum = del;
        for _ in 0..GAMMA_MAX_ITER {
            ap += 1.0;
            del *= x / ap;
            sum += del;
            if del.abs() < sum.abs() * GAMMA_EPS {
                break;
            }
        }
        let p = (ln_prefactor + sum.ln()).exp();
        (1.0 - p).max(0.0).ln()
    } else {
        // Modified Lentz continued fraction for Q(a, x).
        const TINY: f64 = 1e-300;
        let mut b = x + 1.0 - a;
        let mut c = 1.0 / TINY;
        let mut d = 1.0 / b;
        let mut h = d;
        for i in 1..GAMMA_MAX_ITER {
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
            if (del - 1.0).abs() < GAMMA_EPS {
                break;
            }
        }
        ln_prefactor + h.ln()
    }
}
