//! Acceptance test (fixed length) and confidence sets (variable length).

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::entropy::DualBounds;
use crate::error::{invalid, Error, Result};
use crate::params::{Epsilon, RoundCounts};
use crate::witness::WitnessSet;

/// Tolerance when checking `|F| <= ||X||` on observed means.
const NORM_TOL: f64 = 1e-12;

/// Observed witness means and the number of tests behind each.
///
/// A count of `None` marks an idealised infinite sample (exact expectation);
/// `Some(0)` marks a witness without data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationVector {
    pub values: Vec<f64>,
    pub counts: Vec<Option<u64>>,
}

impl ObservationVector {
    pub fn new(values: Vec<f64>, counts: Vec<Option<u64>>) -> Result<Self> {
        if values.len() != counts.len() {
            return Err(Error::DimensionMismatch {
                expected: values.len(),
                got: counts.len(),
            });
        }
        Ok(Self { values, counts })
    }

    pub fn exact(values: Vec<f64>) -> Self {
        let counts = vec![None; values.len()];
        Self { values, counts }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn is_missing(&self, j: usize) -> bool {
        self.counts[j] == Some(0)
    }

    /// Checks shape and `|F_j| <= ||W_j||` against a witness set.
    pub fn validate(&self, set: &WitnessSet) -> Result<()> {
        if self.len() != set.len() {
            return Err(Error::DimensionMismatch {
                expected: set.len(),
                got: self.len(),
            });
        }
        for (j, (&f, &x)) in self.values.iter().zip(&set.inf_norm).enumerate() {
            if self.is_missing(j) {
                continue;
            }
            if !f.is_finite() || f.abs() > x * (1.0 + NORM_TOL) + NORM_TOL {
                return Err(invalid(
                    "F_obs",
                    format!("witness {j}: |{f}| exceeds its norm {x}"),
                ));
            }
        }
        Ok(())
    }

    /// Writes `witness,value,count` rows; exact entries get count `inf`.
    /// Values use the shortest representation that parses back identically.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "witness,value,count")?;
        for (j, (v, c)) in self.values.iter().zip(&self.counts).enumerate() {
            match c {
                Some(m) => writeln!(out, "{j},{v:?},{m}")?,
                None => writeln!(out, "{j},{v:?},inf")?,
            }
        }
        Ok(())
    }

    /// Reads the columnar format written by [`write_csv`](Self::write_csv).
    /// Fields may be separated by commas or whitespace; `#` starts a comment.
    pub fn read_csv<R: BufRead>(input: R) -> Result<Self> {
        let mut rows: Vec<(usize, f64, Option<u64>)> = Vec::new();
        for (i, line) in input.lines().enumerate() {
            let line = line?;
            let body = line.split('#').next().unwrap_or("").trim();
            if body.is_empty() {
                continue;
            }
            let fields: Vec<&str> = body
                .split(|c: char| c == ',' || c.is_whitespace())
                .filter(|s| !s.is_empty())
                .collect();
            if fields.first() == Some(&"witness") {
                continue;
            }
            let parse_err = |msg: String| Error::Parse { line: i + 1, msg };
            if fields.len() != 3 {
                return Err(parse_err(format!("expected 3 fields, found {}", fields.len())));
            }
            let id = fields[0]
                .parse::<usize>()
                .map_err(|e| parse_err(format!("witness id: {e}")))?;
            let value = fields[1]
                .parse::<f64>()
                .map_err(|e| parse_err(format!("value: {e}")))?;
            let count = match fields[2] {
                "inf" | "exact" => None,
                s => Some(s.parse::<u64>().map_err(|e| parse_err(format!("count: {e}")))?),
            };
            rows.push((id, value, count));
        }
        rows.sort_by_key(|r| r.0);
        for (expected, r) in rows.iter().enumerate() {
            if r.0 != expected {
                return Err(invalid("witness", format!("ids must be 0..n without gaps, missing {expected}")));
            }
        }
        Ok(Self {
            values: rows.iter().map(|r| r.1).collect(),
            counts: rows.iter().map(|r| r.2).collect(),
        })
    }
}

/// Per-witness test counts `[m_W2, m_W1, ..., m_W1]` from the round allocation.
pub fn witness_counts(set: &WitnessSet, counts: &RoundCounts) -> Vec<Option<u64>> {
    std::iter::once(Some(counts.error_tests))
        .chain(std::iter::repeat_n(Some(counts.coherence_tests), set.len() - 1))
        .collect()
}

fn radius(scale: f64, x: f64, m: Option<u64>, ln_two_over_eps: f64) -> f64 {
    match m {
        None => 0.0,
        Some(0) => f64::INFINITY,
        Some(m) => (scale * x * x / m as f64 * ln_two_over_eps.max(0.0)).sqrt(),
    }
}

/// Fixed-length Hoeffding radius `sqrt(2 x^2 / m * ln(2 / eps_AT))`.
/// `m = 0` gives `+inf` (the constraint is dropped).
pub fn mu_fixed(x: f64, m: u64, eps_at: f64) -> f64 {
    radius(2.0, x, Some(m), (2.0 / eps_at).ln())
}

/// [`mu_fixed`] with the epsilon given in log form, for coherent budgets.
pub fn mu_fixed_log(x: f64, m: u64, eps_at: Epsilon) -> f64 {
    radius(2.0, x, Some(m), std::f64::consts::LN_2 - eps_at.ln())
}

/// Variable-length radius `sqrt(x^2 / (2 m) * ln(2 / eps_X))`.
pub fn mu_varlen(x: f64, m: u64, eps_x: f64) -> f64 {
    radius(0.5, x, Some(m), (2.0 / eps_x).ln())
}

pub fn mu_varlen_log(x: f64, m: u64, eps_x: Epsilon) -> f64 {
    radius(0.5, x, Some(m), std::f64::consts::LN_2 - eps_x.ln())
}

/// Centers, margins and radii of the fixed-length acceptance test.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcceptanceSpec {
    pub centers: Vec<f64>,
    pub margins: Vec<f64>,
    pub radii: Vec<f64>,
    pub eps_at: Epsilon,
    /// Whether the witness is bounded on both sides in the feasible set.
    pub two_sided: Vec<bool>,
}

impl AcceptanceSpec {
    /// Builds the test with `t_j = t_F mu_j`, `mu_j` from [`mu_fixed_log`].
    pub fn new(
        set: &WitnessSet,
        centers: Vec<f64>,
        counts: &[Option<u64>],
        eps_at: Epsilon,
        margin_factor: f64,
    ) -> Result<Self> {
        if centers.len() != set.len() || counts.len() != set.len() {
            return Err(Error::DimensionMismatch {
                expected: set.len(),
                got: centers.len().min(counts.len()),
            });
        }
        if !(margin_factor >= 0.0) {
            return Err(invalid("t_F", "margin factor must be >= 0"));
        }
        let ln_term = std::f64::consts::LN_2 - eps_at.ln();
        let radii: Vec<f64> = set
            .inf_norm
            .iter()
            .zip(counts)
            .map(|(&x, &m)| radius(2.0, x, m, ln_term))
            .collect();
        let margins = radii
            .iter()
            .map(|mu| if mu.is_infinite() { f64::INFINITY } else { margin_factor * mu })
            .collect();
        let two_sided = (0..set.len()).map(|j| j == 0).collect();
        Ok(Self {
            centers,
            margins,
            radii,
            eps_at,
            two_sided,
        })
    }

    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub witness: usize,
    pub observed: f64,
    pub center: f64,
    pub margin: f64,
    /// `|observed - center| - margin`, positive by construction.
    pub excess: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcceptanceOutcome {
    pub accepted: bool,
    pub violations: Vec<Violation>,
}

/// Accepts iff `|F_j - r_j| <= t_j` for every witness with data.
pub fn accept(obs: &ObservationVector, spec: &AcceptanceSpec) -> Result<AcceptanceOutcome> {
    if obs.len() != spec.len() {
        return Err(Error::DimensionMismatch {
            expected: spec.len(),
            got: obs.len(),
        });
    }
    let violations: Vec<Violation> = (0..obs.len())
        .filter(|&j| !obs.is_missing(j))
        .filter_map(|j| {
            let dev = (obs.values[j] - spec.centers[j]).abs();
            (dev > spec.margins[j]).then(|| Violation {
                witness: j,
                observed: obs.values[j],
                center: spec.centers[j],
                margin: spec.margins[j],
                excess: dev - spec.margins[j],
            })
        })
        .collect();
    Ok(AcceptanceOutcome {
        accepted: violations.is_empty(),
        violations,
    })
}

/// Feasible set of the fixed-length key-rate problem: `r_j +- (mu_j + t_j)`,
/// two-sided for `W0` and lower-sided for the coherence witnesses, clipped
/// to the spectral ranges.
pub fn feasible_bounds_fixed(spec: &AcceptanceSpec, set: &WitnessSet) -> Result<DualBounds> {
    let widths: Vec<f64> = spec.radii.iter().zip(&spec.margins).map(|(m, t)| m + t).collect();
    DualBounds::from_intervals(set, &spec.centers, &widths)
}

/// Intervals `[F_j - mu_j, F_j + mu_j]` with `eps_X = eps_AT / |Theta|` each.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceSet {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub radii: Vec<f64>,
    pub eps_x: Vec<Epsilon>,
    pub eps_at: Epsilon,
}

impl ConfidenceSet {
    /// Dual bounds after physical clipping.
    pub fn to_bounds(&self, set: &WitnessSet) -> Result<DualBounds> {
        let b = DualBounds::new(set.dim, self.lower[0], self.upper[0], self.lower[1..].to_vec())?;
        Ok(b.clipped(set))
    }
}

pub fn confidence_set_varlen(obs: &ObservationVector, set: &WitnessSet, eps_at: Epsilon) -> Result<ConfidenceSet> {
    obs.validate(set)?;
    let eps_x = Epsilon::from_log2(eps_at.log2() - (set.len() as f64).log2());
    let ln_term = std::f64::consts::LN_2 - eps_x.ln();
    let radii: Vec<f64> = set
        .inf_norm
        .iter()
        .zip(&obs.counts)
        .map(|(&x, &m)| radius(0.5, x, m, ln_term))
        .collect();
    Ok(ConfidenceSet {
        lower: obs.values.iter().zip(&radii).map(|(f, r)| f - r).collect(),
        upper: obs.values.iter().zip(&radii).map(|(f, r)| f + r).collect(),
        radii,
        eps_x: vec![eps_x; set.len()],
        eps_at,
    })
}
