//! Witness statistics for fluctuating free-space channels and the paired
//! fixed- versus variable-length comparison runs built on them.
//!
//! The coincidence model is a stand-in for a full click-matrix simulation.
//! Per time frame a pair is produced with probability `c_prod`, each photon
//! survives with `s = eta_D (1 - p_loss)`, and each detector fires on noise
//! with probability `q = (dark_rate + eta_D n_sol) T_frame`. The coincidence
//! weights are
//!
//! ```text
//! S = c_prod s^2                                  (both photons detected)
//! B = d q^2 + 2 c_prod s (1 - s) q                (noise-noise, photon-noise)
//! ```
//!
//! and the state seen by the witnesses is isotropic with `v = S / (S + B)`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::keylength::{KeyLengthReport, KeyStatus};
use crate::params::{Regime, RoundCounts};
use crate::pipeline::{Calculator, FixedDesign};
use crate::statistics::{witness_counts, ObservationVector};
use crate::witness::{expected_isotropic, WitnessSet};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeviceParams {
    /// Pair production probability per time frame.
    pub c_prod: f64,
    /// Time frame length in seconds.
    pub t_frame: f64,
    /// Dark counts per second.
    pub dark_rate: f64,
    pub eta_d: f64,
}

impl Default for DeviceParams {
    fn default() -> Self {
        Self {
            c_prod: 0.1,
            t_frame: 5.4e-9,
            dark_rate: 100.0,
            eta_d: 0.9,
        }
    }
}

impl DeviceParams {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("c_prod", self.c_prod), ("T_frame", self.t_frame), ("dark_rate", self.dark_rate)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(invalid(name, format!("must be finite and >= 0, got {v}")));
            }
        }
        if !(0.0..=1.0).contains(&self.eta_d) {
            return Err(invalid("eta_D", format!("must lie in [0, 1], got {}", self.eta_d)));
        }
        Ok(())
    }
}

/// Isotropic visibility produced by the device and channel at dimension `d`.
pub fn effective_visibility(device: &DeviceParams, d: usize, p_loss: f64, n_sol: f64) -> Result<f64> {
    device.validate()?;
    if !(0.0..=1.0).contains(&p_loss) {
        return Err(invalid("p_loss", format!("must lie in [0, 1], got {p_loss}")));
    }
    if !(n_sol >= 0.0) {
        return Err(invalid("n_sol", format!("must be >= 0, got {n_sol}")));
    }
    let s = device.eta_d * (1.0 - p_loss);
    let q = (device.dark_rate + device.eta_d * n_sol) * device.t_frame;
    let signal = device.c_prod * s * s;
    let background = d as f64 * q * q + 2.0 * device.c_prod * s * (1.0 - s) * q;
    if !(signal + background > 0.0) || !(signal + background).is_finite() {
        return Err(invalid("device", "no coincidences: visibility undefined"));
    }
    Ok(signal / (signal + background))
}

/// Exact isotropic expectations, marked as infinite samples.
pub fn observations_exact(d: usize, v: f64) -> Result<ObservationVector> {
    Ok(ObservationVector::exact(expected_isotropic(d, v)?))
}

/// Finite-sample witness means under the isotropic state.
///
/// The error witness is a Bernoulli average over `m_W2` tests. A coherence
/// witness with norm `x` and expectation `E` is an average of `m_W1`
/// outcomes `+-x` with `P(+x) = (1 + E/x) / 2`.
pub fn sample_observations_with<R: Rng>(set: &WitnessSet, v: f64, counts: &RoundCounts, rng: &mut R) -> Result<ObservationVector> {
    let expected = set.expected_isotropic(v);
    let ms = witness_counts(set, counts);
    let mut values = Vec::with_capacity(set.len());
    for (j, (&e, &m)) in expected.iter().zip(&ms).enumerate() {
        let m = m.unwrap_or(0);
        if m == 0 {
            values.push(0.0);
            continue;
        }
        let (p, x) = if j == 0 {
            (e, 1.0)
        } else {
            let x = set.inf_norm[j];
            ((1.0 + e / x) / 2.0, x)
        };
        let k = Binomial::new(m, p.clamp(0.0, 1.0))
            .map_err(|err| invalid("binomial", err.to_string()))?
            .sample(rng);
        let mean = k as f64 / m as f64;
        values.push(if j == 0 { mean } else { x * (2.0 * mean - 1.0) });
    }
    ObservationVector::new(values, ms)
}

/// [`sample_observations_with`] on a fresh generator seeded by `seed`.
pub fn sample_observations(set: &WitnessSet, v: f64, counts: &RoundCounts, seed: u64) -> Result<ObservationVector> {
    sample_observations_with(set, v, counts, &mut ChaCha8Rng::seed_from_u64(seed))
}

/// One realisation of the channel parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelState {
    pub p_loss: f64,
    pub n_sol: f64,
    /// Index into the scenario list, rapid channel only.
    pub scenario: Option<usize>,
    pub loss_clipped: bool,
    pub sol_clipped: bool,
}

pub trait Channel: Sync {
    fn draw(&self, rng: &mut ChaCha8Rng) -> Result<ChannelState>;

    /// Centers the fixed-length protocol is designed around.
    fn design_centers(&self, device: &DeviceParams, set: &WitnessSet) -> Result<Vec<f64>>;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StatFluctChannel {
    pub mu_loss: f64,
    pub sigma_loss: f64,
    pub mu_sol: f64,
    pub sigma_sol: f64,
}

impl Default for StatFluctChannel {
    fn default() -> Self {
        Self {
            mu_loss: 0.99,
            sigma_loss: 0.005,
            mu_sol: 2e4,
            sigma_sol: 1e4,
        }
    }
}

fn normal(mean: f64, sd: f64) -> Result<Normal<f64>> {
    Normal::new(mean, sd).map_err(|e| invalid("sigma", e.to_string()))
}

impl Channel for StatFluctChannel {
    fn draw(&self, rng: &mut ChaCha8Rng) -> Result<ChannelState> {
        let loss = normal(self.mu_loss, self.sigma_loss)?.sample(rng);
        let sol = normal(self.mu_sol, self.sigma_sol)?.sample(rng);
        let p_loss = loss.clamp(0.0, 1.0);
        let n_sol = sol.max(0.0);
        Ok(ChannelState {
            p_loss,
            n_sol,
            scenario: None,
            loss_clipped: p_loss != loss,
            sol_clipped: n_sol != sol,
        })
    }

    fn design_centers(&self, device: &DeviceParams, set: &WitnessSet) -> Result<Vec<f64>> {
        let v = effective_visibility(device, set.dim, self.mu_loss.clamp(0.0, 1.0), self.mu_sol.max(0.0))?;
        Ok(set.expected_isotropic(v))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RapidFluctChannel {
    /// `(p_loss, n_sol)` pairs, drawn uniformly.
    pub scenarios: Vec<(f64, f64)>,
}

impl Default for RapidFluctChannel {
    fn default() -> Self {
        let scenarios = [0.97, 0.98, 0.99]
            .iter()
            .flat_map(|&l| [1e4, 2e4, 1e5].map(|s| (l, s)))
            .collect();
        Self { scenarios }
    }
}

impl RapidFluctChannel {
    pub fn new(scenarios: Vec<(f64, f64)>) -> Result<Self> {
        if scenarios.is_empty() {
            return Err(invalid("scenarios", "need at least one scenario"));
        }
        for &(l, s) in &scenarios {
            if !(0.0..=1.0).contains(&l) || !(s >= 0.0) {
                return Err(invalid("scenarios", format!("({l}, {s}) is not a physical channel")));
            }
        }
        Ok(Self { scenarios })
    }
}

impl Channel for RapidFluctChannel {
    fn draw(&self, rng: &mut ChaCha8Rng) -> Result<ChannelState> {
        if self.scenarios.is_empty() {
            return Err(invalid("scenarios", "need at least one scenario"));
        }
        let i = rng.random_range(0..self.scenarios.len());
        let (p_loss, n_sol) = self.scenarios[i];
        Ok(ChannelState {
            p_loss,
            n_sol,
            scenario: Some(i),
            loss_clipped: false,
            sol_clipped: false,
        })
    }

    /// Scenario-averaged expectations (expectations are linear in `v`).
    fn design_centers(&self, device: &DeviceParams, set: &WitnessSet) -> Result<Vec<f64>> {
        let mut v = 0.0;
        for &(l, s) in &self.scenarios {
            v += effective_visibility(device, set.dim, l, s)?;
        }
        Ok(set.expected_isotropic(v / self.scenarios.len() as f64))
    }
}

/// Fixed- and variable-length results of one run on the same statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunOutcome {
    pub run: usize,
    pub state: ChannelState,
    pub visibility: f64,
    pub observations: ObservationVector,
    pub fixed_report: KeyLengthReport,
    pub varlen_report: KeyLengthReport,
}

impl RunOutcome {
    pub fn csv_header(witnesses: usize) -> String {
        let mut cols: Vec<String> = ["run", "scenario", "p_loss", "n_sol", "v_eff", "loss_clipped", "sol_clipped"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        cols.extend((0..witnesses).map(|j| format!("f{j}")));
        cols.extend(["fixed_status", "fixed_ell", "varlen_status", "varlen_ell"].map(String::from));
        cols.join(",")
    }

    pub fn csv_row(&self) -> String {
        let mut cols = vec![
            self.run.to_string(),
            self.state.scenario.map_or(String::new(), |s| s.to_string()),
            format!("{:?}", self.state.p_loss),
            format!("{:?}", self.state.n_sol),
            format!("{:?}", self.visibility),
            self.state.loss_clipped.to_string(),
            self.state.sol_clipped.to_string(),
        ];
        cols.extend(self.observations.values.iter().map(|v| format!("{v:?}")));
        cols.push(self.fixed_report.status.code().to_string());
        cols.push(self.fixed_report.ell.to_string());
        cols.push(self.varlen_report.status.code().to_string());
        cols.push(self.varlen_report.ell.to_string());
        cols.join(",")
    }
}

/// Which attack model the paired reports are computed under.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Attack {
    #[default]
    Collective,
    Coherent,
}

impl Attack {
    pub fn regimes(self) -> (Regime, Regime) {
        match self {
            Attack::Collective => (Regime::FixedCollective, Regime::VarlenCollective),
            Attack::Coherent => (Regime::FixedCoherent, Regime::VarlenCoherent),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Simulation {
    pub design: FixedDesign,
    pub outcomes: Vec<RunOutcome>,
}

/// Generator of run `index`: one ChaCha stream per run of the master seed.
pub fn run_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

/// Draws the channel and samples the observations of run `index`.
pub fn draw_run<C: Channel>(
    channel: &C,
    device: &DeviceParams,
    calc: &Calculator,
    seed: u64,
    index: usize,
) -> Result<(ChannelState, f64, ObservationVector)> {
    let mut rng = run_rng(seed, index);
    let state = channel.draw(&mut rng)?;
    let v = effective_visibility(device, calc.params.dim, state.p_loss, state.n_sol)?;
    let obs = sample_observations_with(&calc.witnesses, v, &calc.counts, &mut rng)?;
    Ok((state, v, obs))
}

/// Runs `n_runs` paired fixed/variable-length protocols over `channel`.
///
/// The fixed-length protocol is designed once around the channel's design
/// centers with the calculator's `t_F`. Runs are independent and evaluated
/// in parallel; the result does not depend on the thread count.
pub fn simulate<C: Channel>(
    channel: &C,
    device: &DeviceParams,
    calc: &Calculator,
    attack: Attack,
    n_runs: usize,
    seed: u64,
) -> Result<Simulation> {
    let (fixed, varlen) = attack.regimes();
    let centers = channel.design_centers(device, &calc.witnesses)?;
    let design = calc.fixed_design(fixed, centers, None)?;
    let outcomes = (0..n_runs)
        .into_par_iter()
        .map(|run| {
            let (state, visibility, observations) = draw_run(channel, device, calc, seed, run)?;
            let fixed_report = calc.run_fixed(&design, &observations)?.report;
            let varlen_report = calc.run_varlen(varlen, &observations)?.report;
            Ok(RunOutcome {
                run,
                state,
                visibility,
                observations,
                fixed_report,
                varlen_report,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Simulation { design, outcomes })
}

pub fn run_stat_fluct(
    channel: &StatFluctChannel,
    device: &DeviceParams,
    calc: &Calculator,
    attack: Attack,
    n_runs: usize,
    seed: u64,
) -> Result<Simulation> {
    simulate(channel, device, calc, attack, n_runs, seed)
}

pub fn run_rapid_fluct(
    channel: &RapidFluctChannel,
    device: &DeviceParams,
    calc: &Calculator,
    attack: Attack,
    n_runs: usize,
    seed: u64,
) -> Result<Simulation> {
    simulate(channel, device, calc, attack, n_runs, seed)
}

/// Aggregates over a list of runs. Rates are bits per round sent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub runs: usize,
    pub accepted: usize,
    pub acceptance_ratio: f64,
    /// Fixed-length rate upon acceptance.
    pub one_shot_rate: f64,
    /// Fixed-length rate averaged over all runs, aborts counting as zero.
    pub fixed_rate: f64,
    pub varlen_rate: f64,
    pub varlen_nonzero: usize,
    /// `varlen_rate / fixed_rate`; infinite when the fixed protocol never yields key.
    pub ratio: f64,
    pub loss_clipped: usize,
    pub sol_clipped: usize,
}

impl Summary {
    pub fn new(outcomes: &[RunOutcome], total_rounds: u128) -> Self {
        let n = outcomes.len();
        let total = total_rounds as f64;
        let accepted: Vec<&RunOutcome> = outcomes
            .iter()
            .filter(|o| o.fixed_report.status != KeyStatus::Abort)
            .collect();
        let fixed_sum: f64 = outcomes.iter().map(|o| o.fixed_report.ell as f64).sum();
        let var_sum: f64 = outcomes.iter().map(|o| o.varlen_report.ell as f64).sum();
        let mean = |s: f64, k: usize| if k == 0 { 0.0 } else { s / k as f64 / total };
        let fixed_rate = mean(fixed_sum, n);
        let varlen_rate = mean(var_sum, n);
        Self {
            runs: n,
            accepted: accepted.len(),
            acceptance_ratio: if n == 0 { 0.0 } else { accepted.len() as f64 / n as f64 },
            one_shot_rate: mean(accepted.iter().map(|o| o.fixed_report.ell as f64).sum(), accepted.len()),
            fixed_rate,
            varlen_rate,
            varlen_nonzero: outcomes.iter().filter(|o| o.varlen_report.ell > 0).count(),
            ratio: if fixed_rate > 0.0 {
                varlen_rate / fixed_rate
            } else if varlen_rate > 0.0 {
                f64::INFINITY
            } else {
                f64::NAN
            },
            loss_clipped: outcomes.iter().filter(|o| o.state.loss_clipped).count(),
            sol_clipped: outcomes.iter().filter(|o| o.state.sol_clipped).count(),
        }
    }
}

/// Fixed-length performance at one margin factor, on stored observations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MarginPoint {
    pub t_f: f64,
    pub acceptance_ratio: f64,
    pub one_shot_rate: f64,
    pub expected_rate: f64,
}

/// Re-designs the fixed-length protocol for each `t_F` and replays it on the
/// observations of `outcomes`.
pub fn margin_sweep(
    calc: &Calculator,
    attack: Attack,
    centers: &[f64],
    outcomes: &[RunOutcome],
    grid: &[f64],
) -> Result<Vec<MarginPoint>> {
    let (fixed, _) = attack.regimes();
    let total = calc.params.total_rounds as f64;
    grid.iter()
        .map(|&t_f| {
            let mut c = calc.clone();
            c.params = c.params.with_margin_factor(t_f)?;
            let design = c.fixed_design(fixed, centers.to_vec(), None)?;
            let mut accepted = 0usize;
            for o in outcomes {
                if c.run_fixed(&design, &o.observations)?.report.status != KeyStatus::Abort {
                    accepted += 1;
                }
            }
            let ratio = if outcomes.is_empty() { 0.0 } else { accepted as f64 / outcomes.len() as f64 };
            let one_shot = design.report.ell as f64 / total;
            Ok(MarginPoint {
                t_f,
                acceptance_ratio: ratio,
                one_shot_rate: one_shot,
                expected_rate: one_shot * ratio,
            })
        })
        .collect()
}
