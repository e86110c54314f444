//! Secure key lengths for the four regimes, with every correction itemised.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::params::{Epsilon, LiftFactor, Regime};

/// Error-correction leakage model.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LeakageModel {
    /// `n H(X|Y)`.
    #[default]
    Ideal,
    /// `f_EC n H(X|Y)` with `f_EC >= 1`.
    Efficiency(f64),
}

impl LeakageModel {
    pub fn efficiency(f_ec: f64) -> Result<Self> {
        if !(f_ec >= 1.0 && f_ec.is_finite()) {
            return Err(invalid("f_EC", format!("efficiency factor must be >= 1, got {f_ec}")));
        }
        Ok(LeakageModel::Efficiency(f_ec))
    }

    pub fn factor(&self) -> f64 {
        match *self {
            LeakageModel::Ideal => 1.0,
            LeakageModel::Efficiency(f) => f,
        }
    }
}

fn binary_entropy(p: f64) -> f64 {
    if p <= 0.0 || p >= 1.0 {
        0.0
    } else {
        -p * p.log2() - (1.0 - p) * (1.0 - p).log2()
    }
}

/// `H(X|Y)` of a `d x d` coincidence distribution with error rate `e`
/// spread uniformly over the `d-1` wrong symbols.
pub fn conditional_entropy(d: usize, error_rate: f64) -> f64 {
    let e = error_rate.clamp(0.0, 1.0);
    binary_entropy(e) + e * ((d - 1) as f64).log2()
}

/// Error-correction leakage in bits, rounded up.
pub fn leak_ec(n: u128, d: usize, error_rate: f64, model: LeakageModel) -> f64 {
    (model.factor() * n as f64 * conditional_entropy(d, error_rate)).ceil()
}

/// Error-verification hash length `ceil(log2(2 / eps_EV))`.
pub fn leak_ev(eps_ev: Epsilon) -> f64 {
    (1.0 - eps_ev.log2()).ceil()
}

/// Signed contributions to the pre-floor key length. Deductions are negative;
/// terms that do not apply to a regime are zero.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct KeyTerms {
    /// `n H_min` per round times `n`.
    pub entropy_term: f64,
    /// `-n (alpha - 1) log2^2(d + 1)`, variable length only.
    pub alpha_term: f64,
    pub leak_ec: f64,
    pub leak_ev: f64,
    /// `-2 log2(1/eps_PA)`, fixed length only.
    pub pa_term: f64,
    /// `-2 log2 g`.
    pub lift_term: f64,
    /// `-theta`, variable length only.
    pub theta_term: f64,
    /// `-2 log2(1/eps_tilde)`, coherent variable length only.
    pub eps_tilde_term: f64,
}

impl KeyTerms {
    pub const NAMES: [&'static str; 8] = [
        "entropy_term",
        "alpha_term",
        "leak_ec",
        "leak_ev",
        "pa_term",
        "lift_term",
        "theta_term",
        "eps_tilde_term",
    ];

    pub fn values(&self) -> [f64; 8] {
        [
            self.entropy_term,
            self.alpha_term,
            self.leak_ec,
            self.leak_ev,
            self.pa_term,
            self.lift_term,
            self.theta_term,
            self.eps_tilde_term,
        ]
    }

    /// Sum in a fixed order; this is the raw length the report floors.
    pub fn raw(&self) -> f64 {
        self.values().iter().sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KeyStatus {
    Key,
    Abort,
    ZeroLength,
}

impl KeyStatus {
    pub fn code(self) -> &'static str {
        match self {
            KeyStatus::Key => "key",
            KeyStatus::Abort => "abort",
            KeyStatus::ZeroLength => "zero-length",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeyLengthReport {
    pub regime: Regime,
    pub ell: u128,
    pub raw: f64,
    pub terms: KeyTerms,
    pub status: KeyStatus,
    pub key_rounds: u128,
    pub hmin_rate: f64,
    pub alpha: Option<f64>,
    pub alpha_clamped: bool,
    /// Log2 of the composite security parameter of the lengths' theorem.
    pub log2_security: Option<f64>,
}

impl KeyLengthReport {
    fn from_terms(regime: Regime, key_rounds: u128, hmin_rate: f64, terms: KeyTerms) -> Self {
        let raw = terms.raw();
        let ell = if raw > 0.0 { raw.floor() as u128 } else { 0 };
        Self {
            regime,
            ell,
            raw,
            terms,
            status: if ell > 0 { KeyStatus::Key } else { KeyStatus::ZeroLength },
            key_rounds,
            hmin_rate,
            alpha: None,
            alpha_clamped: false,
            log2_security: None,
        }
    }

    /// The same report after a failed acceptance test.
    pub fn aborted(&self) -> Self {
        Self {
            ell: 0,
            status: KeyStatus::Abort,
            ..self.clone()
        }
    }

    pub fn csv_header() -> String {
        let mut cols = vec!["regime", "status", "ell", "raw", "key_rounds", "hmin_rate", "alpha"];
        cols.extend(KeyTerms::NAMES);
        cols.join(",")
    }

    pub fn csv_row(&self) -> String {
        let mut cols = vec![
            self.regime.code().to_string(),
            self.status.code().to_string(),
            self.ell.to_string(),
            format!("{:?}", self.raw),
            self.key_rounds.to_string(),
            format!("{:?}", self.hmin_rate),
            self.alpha.map_or(String::new(), |a| format!("{a:?}")),
        ];
        cols.extend(self.terms.values().iter().map(|v| format!("{v:?}")));
        cols.join(",")
    }
}

/// Error-correction plus error-verification leakage, kept apart for itemising.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LeakIr {
    pub ec: f64,
    pub ev: f64,
}

impl LeakIr {
    pub fn new(ec: f64, eps_ev: Epsilon) -> Self {
        Self { ec, ev: leak_ev(eps_ev) }
    }

    pub fn total(&self) -> f64 {
        self.ec + self.ev
    }
}

/// `max{0, floor(n h - leak_IR - 2 log2(1/eps_PA))}`.
pub fn fixed_collective_length(n: u128, hmin_rate: f64, leak: LeakIr, eps_pa: Epsilon) -> KeyLengthReport {
    let terms = KeyTerms {
        entropy_term: n as f64 * hmin_rate,
        leak_ec: -leak.ec,
        leak_ev: -leak.ev,
        pa_term: 2.0 * eps_pa.log2(),
        ..KeyTerms::default()
    };
    KeyLengthReport::from_terms(Regime::FixedCollective, n, hmin_rate, terms)
}

/// Collective length minus `2 log2 g`.
pub fn fixed_coherent_length(
    n: u128,
    hmin_rate: f64,
    leak: LeakIr,
    eps_pa: Epsilon,
    lift: LiftFactor,
) -> KeyLengthReport {
    let mut terms = fixed_collective_length(n, hmin_rate, leak, eps_pa).terms;
    terms.lift_term = -2.0 * lift.log2_g;
    KeyLengthReport::from_terms(Regime::FixedCoherent, n, hmin_rate, terms)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlphaChoice {
    pub alpha: f64,
    pub clamped: bool,
}

/// Upper end of the admissible Renyi order, `1 + 1/log2(2d + 1)`.
pub fn alpha_cap(d: usize) -> f64 {
    1.0 + 1.0 / (2.0 * d as f64 + 1.0).log2()
}

/// `alpha = 1 + sqrt(log2(1/eps_PA)) / (log2(d+1) sqrt(n))`, pulled inside the
/// admissible open interval when it falls outside.
pub fn alpha_choice(d: usize, n: u128, eps_pa: Epsilon) -> AlphaChoice {
    let raw = 1.0 + (-eps_pa.log2()).max(0.0).sqrt() / ((d as f64 + 1.0).log2() * (n as f64).sqrt());
    let cap = alpha_cap(d);
    if raw < cap && raw > 1.0 {
        AlphaChoice {
            alpha: raw,
            clamped: false,
        }
    } else {
        // 0.999 of the way towards the cap keeps alpha strictly interior
        AlphaChoice {
            alpha: 1.0 + 0.999 * (cap - 1.0),
            clamped: true,
        }
    }
}

/// `theta = alpha/(alpha-1) log2(1/(4 eps_PA) + 2/alpha) + ceil(log2(1/eps_EV))`,
/// evaluated in log form so that tiny post-lift `eps_PA` do not overflow.
pub fn theta(alpha: f64, eps_pa: Epsilon, eps_ev: Epsilon) -> Result<f64> {
    if !(alpha > 1.0 && alpha.is_finite()) {
        return Err(invalid("alpha", format!("Renyi order must exceed 1, got {alpha}")));
    }
    let a = -2.0 - eps_pa.log2(); // log2(1/(4 eps_PA))
    let b = (2.0 / alpha).log2();
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    let log_sum = hi + (1.0 + (lo - hi).exp2()).log2();
    Ok(alpha / (alpha - 1.0) * log_sum + (-eps_ev.log2()).ceil())
}

/// `n (alpha - 1) log2^2(d + 1)`.
pub fn alpha_penalty(n: u128, alpha: f64, d: usize) -> f64 {
    let l = (d as f64 + 1.0).log2();
    n as f64 * (alpha - 1.0) * l * l
}

/// `b_stat = n h - n (alpha - 1) log2^2(d + 1)`.
pub fn b_stat(n: u128, hmin_rate: f64, alpha: f64, d: usize) -> f64 {
    n as f64 * hmin_rate - alpha_penalty(n, alpha, d)
}

/// Inputs shared by both variable-length formulas.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VarlenInputs {
    pub key_rounds: u128,
    pub hmin_rate: f64,
    pub alpha: AlphaChoice,
    pub dim: usize,
    pub lambda_ec: f64,
    pub theta: f64,
}

fn varlen_terms(v: &VarlenInputs) -> KeyTerms {
    KeyTerms {
        entropy_term: v.key_rounds as f64 * v.hmin_rate,
        alpha_term: -alpha_penalty(v.key_rounds, v.alpha.alpha, v.dim),
        leak_ec: -v.lambda_ec,
        theta_term: -v.theta,
        ..KeyTerms::default()
    }
}

/// `max{0, floor(b_stat - lambda_EC - theta)}`.
pub fn varlen_collective_length(v: &VarlenInputs) -> KeyLengthReport {
    let mut r = KeyLengthReport::from_terms(Regime::VarlenCollective, v.key_rounds, v.hmin_rate, varlen_terms(v));
    r.alpha = Some(v.alpha.alpha);
    r.alpha_clamped = v.alpha.clamped;
    r
}

/// Collective length minus `2 log2 g + 2 log2(1/eps_tilde)`.
pub fn varlen_coherent_length(v: &VarlenInputs, lift: LiftFactor, eps_tilde: Epsilon) -> KeyLengthReport {
    let mut terms = varlen_terms(v);
    terms.lift_term = -2.0 * lift.log2_g;
    terms.eps_tilde_term = 2.0 * eps_tilde.log2();
    let mut r = KeyLengthReport::from_terms(Regime::VarlenCoherent, v.key_rounds, v.hmin_rate, terms);
    r.alpha = Some(v.alpha.alpha);
    r.alpha_clamped = v.alpha.clamped;
    r
}

/// Length from raw itemised pieces for the variable-length examples:
/// `max{0, floor(b_stat - lambda - theta)}`.
pub fn varlen_from_parts(b_stat: f64, lambda_ec: f64, theta: f64) -> u128 {
    let raw = b_stat - lambda_ec - theta;
    if raw > 0.0 {
        raw.floor() as u128
    } else {
        0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn leak_examples() {
        assert_eq!(leak_ec(1000, 16, 0.0, LeakageModel::Ideal), 0.0);
        assert_eq!(leak_ec(1000, 2, 0.5, LeakageModel::Ideal), 1000.0);
        let e: f64 = (1.0 - 0.95) * 240.0 / 256.0;
        let h = -e * e.log2() - (1.0 - e) * (1.0 - e).log2() + e * 15f64.log2();
        assert_eq!(leak_ec(1_000_000, 16, e, LeakageModel::Ideal), (1e6 * h).ceil());
        assert_eq!(
            leak_ec(1000, 2, 0.5, LeakageModel::efficiency(1.2).unwrap()),
            1200.0
        );
        assert!(LeakageModel::efficiency(0.9).is_err());
        assert_eq!(leak_ev(Epsilon::new(0.25)), 3.0);
    }

    #[test]
    fn fixed_collective_example() {
        let leak = LeakIr { ec: 200.0, ev: 0.0 };
        let r = fixed_collective_length(1000, 1.0, leak, Epsilon::new(1e-10));
        assert_eq!(r.ell, 733);
        assert_eq!(r.status, KeyStatus::Key);
        let r = fixed_collective_length(1000, 0.0, leak, Epsilon::new(1e-10));
        assert_eq!(r.ell, 0);
        assert_eq!(r.status, KeyStatus::ZeroLength);
    }

    #[test]
    fn trivial_lift_matches_collective() {
        let leak = LeakIr::new(123.0, Epsilon::new(1e-13));
        let a = fixed_collective_length(5000, 0.8, leak, Epsilon::new(1e-9));
        let b = fixed_coherent_length(5000, 0.8, leak, Epsilon::new(1e-9), LiftFactor::trivial());
        assert_eq!(a.ell, b.ell);
        assert_eq!(a.raw, b.raw);
    }

    #[test]
    fn alpha_examples() {
        let a = alpha_choice(16, 1_000_000_000_000, Epsilon::new(1e-10));
        assert!(!a.clamped);
        assert!(((a.alpha - 1.0) - 5.764 / 4.087e6).abs() < 1e-9);
        let a = alpha_choice(16, 10, Epsilon::new(1e-10));
        assert!(a.clamped);
        assert!(a.alpha > 1.0 && a.alpha < alpha_cap(16));
        let far = alpha_choice(16, u64::MAX as u128, Epsilon::new(1e-10));
        assert!(far.alpha - 1.0 < 1e-8);
    }

    #[test]
    fn theta_examples() {
        let t = theta(1.001, Epsilon::new(1e-10), Epsilon::new(1e-13)).unwrap();
        let expect = 1001.0 * (2.5e9f64 + 2.0 / 1.001).log2() + 44.0;
        assert!((t - expect).abs() < 1e-6, "{t} vs {expect}");
        assert!((t - 31_294.5).abs() < 0.01);
        let t = theta(2.0, Epsilon::new(0.25), Epsilon::new(0.5)).unwrap();
        assert!((t - 3.0).abs() < 1e-12);
        let t = theta(1.0001, Epsilon::new(1e-10), Epsilon::new(1e-13)).unwrap();
        assert!(t > 1e4 * 31.0);
        assert!(theta(1.0, Epsilon::new(0.1), Epsilon::new(0.1)).is_err());
    }

    #[test]
    fn varlen_arithmetic() {
        assert_eq!(varlen_from_parts(1e6, 2e5, 3.1e4), 769_000);
        assert_eq!(varlen_from_parts(1e5, 2e5, 3.1e4), 0);
    }

    #[test]
    fn coherent_varlen_reduces_with_trivial_lift() {
        let v = VarlenInputs {
            key_rounds: 1_000_000,
            hmin_rate: 1.0,
            alpha: AlphaChoice {
                alpha: 1.001,
                clamped: false,
            },
            dim: 2,
            lambda_ec: 1000.0,
            theta: 500.0,
        };
        let a = varlen_collective_length(&v);
        let b = varlen_coherent_length(&v, LiftFactor::trivial(), Epsilon::new(1.0));
        assert_eq!(a.ell, b.ell);
        let lift = LiftFactor {
            rounds: 1_000_000,
            exponent: 16,
            log2_g: 300.0,
        };
        let c = varlen_coherent_length(&v, lift, Epsilon::new(1e-12));
        assert!(c.ell < a.ell);
    }

    #[test]
    fn csv_row_has_every_column() {
        let r = fixed_collective_length(1000, 1.0, LeakIr { ec: 200.0, ev: 0.0 }, Epsilon::new(1e-10));
        let header = KeyLengthReport::csv_header();
        assert_eq!(header.split(',').count(), r.csv_row().split(',').count());
        assert!(r.aborted().csv_row().starts_with("fc,abort,0,"));
    }
}
