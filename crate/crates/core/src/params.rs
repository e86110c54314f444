//! Protocol bookkeeping: round allocations, security-parameter budgets and
//! the postselection lift factor.
//!
//! Coherent-attack budgets carry every epsilon as a base-2 logarithm. The lift
//! factor `g_{n,x}` has on the order of 10^5 decimal digits for realistic
//! block sizes, so only `log2 g` ever enters a formula.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Experiment-level parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProtocolParams {
    /// Key-alphabet dimension `d`.
    pub dim: usize,
    /// Total signal rounds `N`.
    pub total_rounds: u128,
    /// Beam-splitter ratio `r_S` routing photons to the superposition measurement.
    pub splitting_ratio: f64,
    /// Visibility of the isotropic model, used only to simulate statistics.
    pub visibility: f64,
    /// Acceptance margin in units of the Hoeffding radius (`t_X = t_F mu_X`).
    pub margin_factor: f64,
    /// Overrides the de Finetti exponent `x = d^4`.
    #[serde(default)]
    pub lift_exponent: Option<u128>,
}

impl ProtocolParams {
    pub fn new(dim: usize, total_rounds: u128, splitting_ratio: f64) -> Result<Self> {
        let p = Self {
            dim,
            total_rounds,
            splitting_ratio,
            visibility: 1.0,
            margin_factor: 1.0,
            lift_exponent: None,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn with_visibility(mut self, v: f64) -> Result<Self> {
        self.visibility = v;
        self.validate()?;
        Ok(self)
    }

    pub fn with_margin_factor(mut self, t_f: f64) -> Result<Self> {
        self.margin_factor = t_f;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim < 2 {
            return Err(invalid("d", format!("dimension must be >= 2, got {}", self.dim)));
        }
        if self.total_rounds < 1 {
            return Err(invalid("N", "at least one round is required"));
        }
        if !(0.0..0.5).contains(&self.splitting_ratio) {
            return Err(invalid(
                "r_S",
                format!("splitting ratio must lie in [0, 0.5), got {}", self.splitting_ratio),
            ));
        }
        if !(0.0..=1.0).contains(&self.visibility) {
            return Err(invalid("v", format!("visibility must lie in [0, 1], got {}", self.visibility)));
        }
        if !(self.margin_factor >= 0.0 && self.margin_factor.is_finite()) {
            return Err(invalid("t_F", format!("margin factor must be >= 0, got {}", self.margin_factor)));
        }
        if matches!(self.lift_exponent, Some(x) if x < 2) {
            return Err(invalid("lift_exponent", "de Finetti exponent must be >= 2"));
        }
        Ok(())
    }

    /// De Finetti exponent `x = d_A^2 d_B^2` with `d_A = d_B = d`.
    pub fn lift_exponent(&self) -> u128 {
        self.lift_exponent.unwrap_or_else(|| (self.dim as u128).pow(4))
    }
}

/// Test and key round allocation derived from [`ProtocolParams`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoundCounts {
    /// Tests available per coherence witness `m_{W1}`.
    pub coherence_tests: u64,
    /// Tests for the error witness `m_{W2}` (equal to `coherence_tests`).
    pub error_tests: u64,
    /// All rounds not used for key generation, `k_T = N - n`.
    pub test_rounds: u128,
    /// Key-generation rounds `n`.
    pub key_rounds: u128,
}

// Absorbs the representation error of ratios like 0.98 so that exact
// products (1e12 * 0.98) are not floored one below their true value.
fn floor_exact(x: f64) -> f64 {
    let nearest = x.round();
    if (x - nearest).abs() <= 8.0 * f64::EPSILON * x.abs() {
        nearest
    } else {
        x.floor()
    }
}

pub fn derive_counts(p: &ProtocolParams) -> Result<RoundCounts> {
    p.validate()?;
    let n_total = p.total_rounds as f64;
    let r = p.splitting_ratio;
    let m = floor_exact(r * r * n_total / (8.0 * (p.dim as f64 - 1.0)));
    let key_rounds = (floor_exact(n_total * (1.0 - 2.0 * r)) as u128).min(p.total_rounds);
    if key_rounds == 0 {
        return Err(invalid("r_S", "no key-generation rounds remain"));
    }
    Ok(RoundCounts {
        coherence_tests: m as u64,
        error_tests: m as u64,
        test_rounds: p.total_rounds - key_rounds,
        key_rounds,
    })
}

/// A security parameter stored as its base-2 logarithm.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
pub struct Epsilon {
    log2: f64,
}

impl Epsilon {
    pub fn new(value: f64) -> Self {
        Self { log2: value.log2() }
    }

    pub fn from_log2(log2: f64) -> Self {
        Self { log2 }
    }

    pub fn log2(self) -> f64 {
        self.log2
    }

    pub fn ln(self) -> f64 {
        self.log2 * std::f64::consts::LN_2
    }

    /// Linear value; may be zero when the log lies below the f64 range.
    pub fn value(self) -> f64 {
        self.log2.exp2()
    }

    pub fn underflows(self) -> bool {
        self.value() == 0.0 || !self.value().is_normal()
    }

    pub fn scale(self, factor: f64) -> Self {
        Self {
            log2: self.log2 + factor.log2(),
        }
    }
}

impl fmt::Display for Epsilon {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.underflows() {
            write!(f, "2^{:.6}", self.log2)
        } else {
            write!(f, "{:e}", self.value())
        }
    }
}

/// The four security regimes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Regime {
    #[serde(rename = "fc")]
    FixedCollective,
    #[serde(rename = "fq")]
    FixedCoherent,
    #[serde(rename = "vc")]
    VarlenCollective,
    #[serde(rename = "vq")]
    VarlenCoherent,
}

impl Regime {
    pub const ALL: [Regime; 4] = [
        Regime::FixedCollective,
        Regime::FixedCoherent,
        Regime::VarlenCollective,
        Regime::VarlenCoherent,
    ];

    pub fn code(self) -> &'static str {
        match self {
            Regime::FixedCollective => "fc",
            Regime::FixedCoherent => "fq",
            Regime::VarlenCollective => "vc",
            Regime::VarlenCoherent => "vq",
        }
    }

    pub fn is_coherent(self) -> bool {
        matches!(self, Regime::FixedCoherent | Regime::VarlenCoherent)
    }

    pub fn is_variable_length(self) -> bool {
        matches!(self, Regime::VarlenCollective | Regime::VarlenCoherent)
    }
}

impl std::str::FromStr for Regime {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fc" | "fixed-collective" => Ok(Regime::FixedCollective),
            "fq" | "fixed-coherent" => Ok(Regime::FixedCoherent),
            "vc" | "varlen-collective" => Ok(Regime::VarlenCollective),
            "vq" | "varlen-coherent" => Ok(Regime::VarlenCoherent),
            other => Err(invalid("regime", format!("unknown regime `{other}`"))),
        }
    }
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

/// Upper bound on the postselection factor `g_{n,x} = C(n+x-1, n)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LiftFactor {
    pub rounds: u128,
    pub exponent: u128,
    pub log2_g: f64,
}

impl LiftFactor {
    /// `g = 1`: no lift.
    pub fn trivial() -> Self {
        Self {
            rounds: 0,
            exponent: 0,
            log2_g: 0.0,
        }
    }
}

/// `log2 g <= (x-1) log2(e (n+x-1) / (x-1))`.
pub fn g_bound(rounds: u128, exponent: u128) -> Result<LiftFactor> {
    if rounds < 1 {
        return Err(invalid("n", "lift requires n >= 1"));
    }
    if exponent < 2 {
        return Err(invalid("x", "lift requires x >= 2"));
    }
    let n = rounds as f64;
    let xm1 = (exponent - 1) as f64;
    let log2_g = xm1 * (std::f64::consts::E * (n + xm1) / xm1).log2();
    Ok(LiftFactor {
        rounds,
        exponent,
        log2_g,
    })
}

/// All sub-protocol security parameters for one regime.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpsilonBudget {
    pub regime: Regime,
    /// Target composite parameter (epsilon for collective, nu for coherent).
    pub total: f64,
    pub split_r: f64,
    pub split_s: Option<f64>,
    pub eps_ev: Epsilon,
    pub eps_pa: Epsilon,
    pub eps_at: Epsilon,
    /// Virtual smoothing parameter, coherent variable-length only.
    pub eps_tilde: Option<Epsilon>,
    pub lift: LiftFactor,
}

fn check_total(name: &'static str, x: f64) -> Result<()> {
    if x > 0.0 && x <= 1.0 {
        Ok(())
    } else {
        Err(invalid(name, format!("must lie in (0, 1], got {x}")))
    }
}

fn check_open_unit(name: &'static str, x: f64) -> Result<()> {
    if x > 0.0 && x < 1.0 {
        Ok(())
    } else {
        Err(invalid(name, format!("must lie strictly inside (0, 1), got {x}")))
    }
}

// log2(2^a + 2^b)
fn log2_add(a: f64, b: f64) -> f64 {
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    hi + (1.0 + (lo - hi).exp2()).log2()
}

pub fn budget_fixed_collective(eps_total: f64, r: f64) -> Result<EpsilonBudget> {
    check_total("eps_total", eps_total)?;
    check_open_unit("r", r)?;
    let secrecy = Epsilon::new((1.0 - r) * eps_total);
    Ok(EpsilonBudget {
        regime: Regime::FixedCollective,
        total: eps_total,
        split_r: r,
        split_s: None,
        eps_ev: Epsilon::new(r * eps_total),
        eps_pa: secrecy,
        eps_at: secrecy,
        eps_tilde: None,
        lift: LiftFactor::trivial(),
    })
}

pub fn budget_fixed_coherent(nu_total: f64, r: f64, s: f64, lift: LiftFactor) -> Result<EpsilonBudget> {
    check_total("nu_total", nu_total)?;
    check_open_unit("r", r)?;
    check_open_unit("s", s)?;
    let nu_pa = (1.0 - r) * s * nu_total;
    let nu_at = (1.0 - r) * (1.0 - s) * nu_total;
    let eps_pa = Epsilon::from_log2(nu_pa.log2() - lift.log2_g);
    // nu_AT = 2 g sqrt(2 eps_AT)
    let eps_at = Epsilon::from_log2(2.0 * (nu_at.log2() - 1.0 - lift.log2_g) - 1.0);
    Ok(EpsilonBudget {
        regime: Regime::FixedCoherent,
        total: nu_total,
        split_r: r,
        split_s: Some(s),
        eps_ev: Epsilon::new(r * nu_total),
        eps_pa,
        eps_at,
        eps_tilde: None,
        lift,
    })
}

pub fn budget_varlen_collective(eps_total: f64, r: f64, s: f64) -> Result<EpsilonBudget> {
    check_total("eps_total", eps_total)?;
    check_open_unit("r", r)?;
    check_open_unit("s", s)?;
    Ok(EpsilonBudget {
        regime: Regime::VarlenCollective,
        total: eps_total,
        split_r: r,
        split_s: Some(s),
        eps_ev: Epsilon::new(r * eps_total),
        eps_pa: Epsilon::new((1.0 - r) * s * eps_total),
        eps_at: Epsilon::new((1.0 - r) * (1.0 - s) * eps_total),
        eps_tilde: None,
        lift: LiftFactor::trivial(),
    })
}

pub fn budget_varlen_coherent(nu_total: f64, r: f64, s: f64, lift: LiftFactor) -> Result<EpsilonBudget> {
    check_total("nu_total", nu_total)?;
    check_open_unit("r", r)?;
    check_open_unit("s", s)?;
    let g2 = 2.0 * lift.log2_g;
    let base = (1.0 - r).powi(2) * nu_total * nu_total / 8.0;
    Ok(EpsilonBudget {
        regime: Regime::VarlenCoherent,
        total: nu_total,
        split_r: r,
        split_s: Some(s),
        eps_ev: Epsilon::new(r * nu_total),
        eps_pa: Epsilon::from_log2((s * (1.0 - s).powi(2) * base).log2() - g2),
        eps_at: Epsilon::from_log2(((1.0 - s).powi(3) * base).log2() - g2),
        eps_tilde: Some(Epsilon::from_log2((2.0 * (1.0 - r) * s * nu_total).log2() - lift.log2_g)),
        lift,
    })
}

/// Budget for `regime` with the lift computed from `params` when needed.
pub fn budget_for(
    regime: Regime,
    total: f64,
    r: f64,
    s: f64,
    params: &ProtocolParams,
) -> Result<EpsilonBudget> {
    match regime {
        Regime::FixedCollective => budget_fixed_collective(total, r),
        Regime::VarlenCollective => budget_varlen_collective(total, r, s),
        Regime::FixedCoherent | Regime::VarlenCoherent => {
            let counts = derive_counts(params)?;
            let lift = g_bound(counts.key_rounds, params.lift_exponent())?;
            if regime == Regime::FixedCoherent {
                budget_fixed_coherent(total, r, s, lift)
            } else {
                budget_varlen_coherent(total, r, s, lift)
            }
        }
    }
}

impl EpsilonBudget {
    /// Scaled PA share `nu_PA = (1-r) s nu`, equal to `g eps_PA` in the fixed
    /// coherent regime. Computed from the split directly, so it stays exact
    /// even when `log2 g` is large.
    pub fn nu_pa(&self) -> Epsilon {
        let s = self.split_s.unwrap_or(1.0);
        Epsilon::new((1.0 - self.split_r) * s * self.total)
    }

    /// Scaled AT share `nu_AT = (1-r)(1-s) nu`, equal to `2 g sqrt(2 eps_AT)`
    /// in the fixed coherent regime.
    pub fn nu_at(&self) -> Epsilon {
        let s = self.split_s.unwrap_or(0.0);
        Epsilon::new((1.0 - self.split_r) * (1.0 - s) * self.total)
    }

    /// Secrecy-side composite parameter in log2.
    pub fn log2_secrecy(&self) -> f64 {
        match self.regime {
            Regime::FixedCollective => self.eps_at.log2().max(self.eps_pa.log2()),
            Regime::VarlenCollective => log2_add(self.eps_at.log2(), self.eps_pa.log2()),
            Regime::FixedCoherent => {
                let pa = self.lift.log2_g + self.eps_pa.log2();
                let at = 1.0 + self.lift.log2_g + 0.5 * (1.0 + self.eps_at.log2());
                log2_add(pa, at)
            }
            Regime::VarlenCoherent => {
                // g (sqrt(8 (eps_PA + eps_AT)) + eps_tilde / 2)
                let sum = log2_add(self.eps_pa.log2(), self.eps_at.log2());
                let root = 0.5 * (3.0 + sum);
                let half_tilde = self.eps_tilde.map_or(f64::NEG_INFINITY, |e| e.log2() - 1.0);
                self.lift.log2_g + log2_add(root, half_tilde)
            }
        }
    }

    /// Composite parameter re-derived from the sub-epsilons by the regime's law.
    pub fn recompose(&self) -> f64 {
        self.eps_ev.value() + self.log2_secrecy().exp2()
    }

    /// Log2 of the composite parameter; finite even when `recompose` would underflow.
    pub fn log2_composite(&self) -> f64 {
        log2_add(self.eps_ev.log2(), self.log2_secrecy())
    }

    pub fn any_underflow(&self) -> bool {
        self.eps_at.underflows()
            || self.eps_pa.underflows()
            || self.eps_tilde.is_some_and(|e| e.underflows())
    }

    /// Flat key-value rendering with every epsilon in linear and log2 form.
    pub fn to_key_values(&self) -> Vec<(String, String)> {
        let mut out = vec![
            ("regime".to_string(), self.regime.code().to_string()),
            ("total".to_string(), format!("{:e}", self.total)),
            ("r".to_string(), format!("{:e}", self.split_r)),
        ];
        if let Some(s) = self.split_s {
            out.push(("s".to_string(), format!("{s:e}")));
        }
        let mut push_eps = |name: &str, e: Epsilon| {
            out.push((name.to_string(), format!("{:e}", e.value())));
            out.push((format!("{name}_log2"), format!("{:.12}", e.log2())));
        };
        push_eps("eps_ev", self.eps_ev);
        push_eps("eps_pa", self.eps_pa);
        push_eps("eps_at", self.eps_at);
        if let Some(t) = self.eps_tilde {
            push_eps("eps_tilde", t);
        }
        if self.regime == Regime::FixedCoherent {
            push_eps("nu_pa", self.nu_pa());
            push_eps("nu_at", self.nu_at());
        }
        out.push(("log2_g".to_string(), format!("{:.6}", self.lift.log2_g)));
        out.push(("composite".to_string(), format!("{:e}", self.recompose())));
        out.push(("composite_log2".to_string(), format!("{:.12}", self.log2_composite())));
        out.push(("underflow".to_string(), self.any_underflow().to_string()));
        out
    }
}
