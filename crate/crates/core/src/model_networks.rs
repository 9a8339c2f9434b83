//! Closed-form equilibria of two small networks and welfare sweeps over the
//! return correlation `rho`.
//!
//! - Two agents that can self-invest: `Sigma = [[1, rho], [rho, 1]]`, `Gamma = I`,
//!   arbitrary `2 x 2` beliefs `M`.
//! - One investor (agent 0) and two funds (agents 1 and 2):
//!   `M = [[0, a, a], [m, 0, 0], [m, 0, 0]]`, funds correlated by `rho`,
//!   uncorrelated with the investor, `Gamma = I`. Agents may only change the
//!   non-zero entries of their own column.

use crate::error::{Error, Result};
use crate::linalg::{Mat, Vector};
use crate::network::{self, stable_network, NetworkSetting, StableNetwork};
use crate::strategy;

/// Tolerance under which a utility difference counts as a tie.
pub const OUTCOME_TOL: f64 = 1e-9;

fn check_rho(rho: f64) -> Result<()> {
    if rho.is_finite() && rho.abs() < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("correlation must lie in (-1, 1), got {rho}")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TwoAgentConfig {
    pub m: Mat,
    pub rho: f64,
}

impl TwoAgentConfig {
    pub fn new(m: Mat, rho: f64) -> Result<Self> {
        check_rho(rho)?;
        if m.shape() != (2, 2) {
            return Err(Error::dims("two-agent beliefs must be 2x2"));
        }
        Ok(TwoAgentConfig { m, rho })
    }

    /// `kappa = rho (M_00 + M_11) - (M_01 + M_10)`.
    pub fn kappa(&self) -> f64 {
        let m = &self.m;
        self.rho * (m[(0, 0)] + m[(1, 1)]) - (m[(0, 1)] + m[(1, 0)])
    }

    pub fn setting(&self, strategic: Vec<usize>) -> Result<NetworkSetting> {
        let sigma = Mat::from_row_slice(2, 2, &[1.0, self.rho, self.rho, 1.0]);
        NetworkSetting::new(self.m.clone(), vec![1.0; 2], sigma, strategic)
    }
}

/// Equilibrium deviations of the two-agent network. A lone strategic agent
/// `k` shifts the off-diagonal entry of its column by `kappa / 3`; when both
/// are strategic each off-diagonal entry moves by `kappa / 4`. Diagonal
/// entries are always reported truthfully.
pub fn two_agent_nash(cfg: &TwoAgentConfig, strategic: &[usize]) -> Result<Mat> {
    check_rho(cfg.rho)?;
    let kappa = cfg.kappa();
    let mut delta = Mat::zeros(2, 2);
    match strategic {
        [] => return Err(Error::InvalidStrategicSet("two-agent closed form needs a strategic agent".into())),
        [k] if *k < 2 => delta[(1 - k, *k)] = kappa / 3.0,
        [0, 1] | [1, 0] => {
            delta[(0, 1)] = kappa / 4.0;
            delta[(1, 0)] = kappa / 4.0;
        }
        other => return Err(Error::InvalidStrategicSet(format!("{other:?} is not a subset of {{0, 1}}"))),
    }
    Ok(delta)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InvestorCase {
    /// Agents 1 and 2 strategic, investor honest.
    FundsStrategic,
    AllStrategic,
}

impl InvestorCase {
    pub fn strategic(self) -> Vec<usize> {
        match self {
            InvestorCase::FundsStrategic => vec![1, 2],
            InvestorCase::AllStrategic => vec![0, 1, 2],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InvestorConfig {
    /// Funds' belief about the return per unit contract with the investor.
    pub a: f64,
    /// Investor's belief about the return per unit contract with either fund.
    pub m: f64,
    pub rho: f64,
    pub case: InvestorCase,
}

impl InvestorConfig {
    pub fn beliefs(&self) -> Mat {
        investor_beliefs(self.a, self.m)
    }

    pub fn sigma(&self) -> Mat {
        let r = self.rho;
        Mat::from_row_slice(3, 3, &[1.0, 0.0, 0.0, 0.0, 1.0, r, 0.0, r, 1.0])
    }

    pub fn setting(&self, strategic: Vec<usize>) -> Result<NetworkSetting> {
        check_rho(self.rho)?;
        NetworkSetting::new(self.beliefs(), vec![1.0; 3], self.sigma(), strategic)
    }
}

pub fn investor_beliefs(a: f64, m: f64) -> Mat {
    Mat::from_row_slice(3, 3, &[0.0, a, a, m, 0.0, 0.0, m, 0.0, 0.0])
}

/// `(nu, eta, zeta)` of the investor network at correlation `rho`.
pub fn investor_constants(rho: f64) -> (f64, f64, f64) {
    let (lo, hi) = (1.0 / (2.0 - rho), 1.0 / (2.0 + rho));
    let nu = 0.5 * (lo + hi);
    let eta = 0.5 * (lo - hi);
    let zeta = (nu - eta) / (nu + (nu - eta) * (1.0 - nu));
    (nu, eta, zeta)
}

/// Equilibrium reported positions `M'` of the investor network under the
/// restricted strategy space.
pub fn investor_nash(cfg: &InvestorConfig) -> Result<Mat> {
    check_rho(cfg.rho)?;
    let (nu, eta, zeta) = investor_constants(cfg.rho);
    let fund_report =
        |investor: f64| (cfg.a * nu - investor * (1.0 - nu) * (nu - eta)) / (nu + (1.0 - nu) * (nu - eta));
    let investor = match cfg.case {
        InvestorCase::FundsStrategic => cfg.m,
        InvestorCase::AllStrategic => (cfg.m - cfg.a * zeta) / (1.0 + zeta),
    };
    Ok(investor_beliefs(fund_report(investor), investor))
}

/// Entries of agent `k`'s column it may change in the investor network.
pub fn investor_free_entries(k: usize) -> Vec<usize> {
    match k {
        0 => vec![1, 2],
        _ => vec![0],
    }
}

/// Maximizes agent `k`'s true utility over the listed entries of its own
/// reported column, holding every other entry of `reported` fixed. Uses only
/// stable-network evaluations, starting from zero: the utility is quadratic in
/// the free entries, so Newton steps on central-difference derivatives converge.
pub fn restricted_best_response(
    setting: &NetworkSetting,
    reported: &Mat,
    k: usize,
    entries: &[usize],
) -> Result<Vector> {
    let r = entries.len();
    let eval = |z: &Vector| -> Result<f64> {
        let mut rep = reported.clone();
        for (t, &i) in entries.iter().enumerate() {
            rep[(i, k)] = z[t];
        }
        let net = stable_network(setting, &rep)?;
        network::utility(setting, &net, k)
    };
    let mut z = Vector::zeros(r);
    let h = 1e-2;
    for _ in 0..3 {
        let f0 = eval(&z)?;
        let mut grad = Vector::zeros(r);
        let mut hess = Mat::zeros(r, r);
        let bump = |z: &Vector, i: usize, s: f64| {
            let mut out = z.clone();
            out[i] += s;
            out
        };
        for i in 0..r {
            let fp = eval(&bump(&z, i, h))?;
            let fm = eval(&bump(&z, i, -h))?;
            grad[i] = (fp - fm) / (2.0 * h);
            hess[(i, i)] = (fp - 2.0 * f0 + fm) / (h * h);
            for j in 0..i {
                let pp = eval(&bump(&bump(&z, i, h), j, h))?;
                let pm = eval(&bump(&bump(&z, i, h), j, -h))?;
                let mp = eval(&bump(&bump(&z, i, -h), j, h))?;
                let mm = eval(&bump(&bump(&z, i, -h), j, -h))?;
                let v = (pp - pm - mp + mm) / (4.0 * h * h);
                hess[(i, j)] = v;
                hess[(j, i)] = v;
            }
        }
        let step = hess
            .lu()
            .solve(&grad)
            .ok_or_else(|| Error::InvalidParameter("utility is flat in the free entries".into()))?;
        z -= step;
    }
    Ok(z)
}

/// Funds' equilibrium reports when the investor reports `investor` on both of
/// its entries, found by alternating numerical restricted best responses.
pub fn fund_subgame(setting: &NetworkSetting, investor: f64) -> Result<Mat> {
    let mut reported = setting.m().clone();
    reported[(1, 0)] = investor;
    reported[(2, 0)] = investor;
    for _ in 0..200 {
        let before = reported.clone();
        for k in [1, 2] {
            reported[(0, k)] = restricted_best_response(setting, &reported, k, &[0])?[0];
        }
        if (&reported - before).abs().max() <= 1e-13 * (1.0 + reported.abs().max()) {
            break;
        }
    }
    Ok(reported)
}

/// Investor's optimal common report on its two entries when the funds answer
/// every report with their subgame equilibrium ([`fund_subgame`]). This is the
/// investor's best response in the all-strategic case: the report is chosen
/// against the funds' reaction, not against fixed fund reports.
pub fn investor_leader_response(setting: &NetworkSetting) -> Result<f64> {
    let eval = |z: f64| -> Result<f64> {
        let reported = fund_subgame(setting, z)?;
        network::utility(setting, &stable_network(setting, &reported)?, 0)
    };
    let h = 1e-2;
    let mut z = 0.0;
    for _ in 0..3 {
        let (fm, f0, fp) = (eval(z - h)?, eval(z)?, eval(z + h)?);
        let curvature = (fp - 2.0 * f0 + fm) / (h * h);
        if !(curvature < 0.0) {
            return Err(Error::InvalidParameter("investor utility is not concave in its report".into()));
        }
        z -= (fp - fm) / (2.0 * h) / curvature;
    }
    Ok(z)
}

/// Closed-form investor equilibrium next to the unrestricted equilibrium of
/// the generic solver on the same setting.
#[derive(Debug, Clone)]
pub struct InvestorComparison {
    pub closed_form: Mat,
    pub unrestricted: Mat,
    pub max_gap: f64,
    pub agree: bool,
}

pub fn compare_investor(cfg: &InvestorConfig, tol: f64) -> Result<InvestorComparison> {
    let closed_form = investor_nash(cfg)?;
    let setting = cfg.setting(cfg.case.strategic())?;
    let unrestricted = strategy::nash_equilibria(&setting)?.into_result()?.reported(setting.m());
    let max_gap = (&closed_form - &unrestricted).abs().max();
    Ok(InvestorComparison { closed_form, unrestricted, max_gap, agree: max_gap <= tol })
}

/// Which network a welfare sweep runs on.
#[derive(Debug, Clone, PartialEq)]
pub enum SweepModel {
    Investor { a: f64, m: f64 },
    TwoAgent { m: Mat },
}

impl SweepModel {
    pub fn n(&self) -> usize {
        match self {
            SweepModel::Investor { .. } => 3,
            SweepModel::TwoAgent { .. } => 2,
        }
    }

    pub fn setting(&self, rho: f64, strategic: Vec<usize>) -> Result<NetworkSetting> {
        match self {
            SweepModel::Investor { a, m } => {
                InvestorConfig { a: *a, m: *m, rho, case: InvestorCase::AllStrategic }.setting(strategic)
            }
            SweepModel::TwoAgent { m } => TwoAgentConfig::new(m.clone(), rho)?.setting(strategic),
        }
    }

    /// Reported positions at equilibrium, by closed form where one exists.
    fn equilibrium(&self, setting: &NetworkSetting, rho: f64) -> Result<Mat> {
        let s = setting.strategic();
        if s.is_empty() {
            return Ok(setting.m().clone());
        }
        match self {
            SweepModel::Investor { a, m } => {
                let case = match s {
                    [1, 2] => Some(InvestorCase::FundsStrategic),
                    [0, 1, 2] => Some(InvestorCase::AllStrategic),
                    _ => None,
                };
                if let Some(case) = case {
                    return investor_nash(&InvestorConfig { a: *a, m: *m, rho, case });
                }
            }
            SweepModel::TwoAgent { m } => {
                let cfg = TwoAgentConfig::new(m.clone(), rho)?;
                return Ok(m + two_agent_nash(&cfg, s)?);
            }
        }
        Ok(strategy::nash_equilibria(setting)?.into_result()?.reported(setting.m()))
    }
}

/// Label of a strategic set: `honest` when empty, else `+`-joined indices.
pub fn scenario_label(strategic: &[usize]) -> String {
    if strategic.is_empty() {
        "honest".to_string()
    } else {
        strategic.iter().map(|k| k.to_string()).collect::<Vec<_>>().join("+")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WelfareRow {
    pub rho: f64,
    pub scenario: String,
    pub agent: usize,
    pub utility: f64,
}

/// One row per `(rho, scenario, agent)` with the agent's true utility at the
/// equilibrium of that scenario.
pub fn welfare_sweep(model: &SweepModel, rhos: &[f64], scenarios: &[Vec<usize>]) -> Result<Vec<WelfareRow>> {
    let mut rows = Vec::with_capacity(rhos.len() * scenarios.len() * model.n());
    for &rho in rhos {
        check_rho(rho)?;
        for s in scenarios {
            let setting = model.setting(rho, s.clone())?;
            let reported = model.equilibrium(&setting, rho)?;
            let net = stable_network(&setting, &reported)?;
            let label = scenario_label(setting.strategic());
            for agent in 0..setting.n() {
                rows.push(WelfareRow {
                    rho,
                    scenario: label.clone(),
                    agent,
                    utility: network::utility(&setting, &net, agent)?,
                });
            }
        }
    }
    Ok(rows)
}

/// Utilities of every agent at the equilibrium of `setting`, computed with the
/// generic solver.
pub fn equilibrium_utilities(setting: &NetworkSetting) -> Result<(StableNetwork, Vec<f64>)> {
    let reported = strategy::nash_equilibria(setting)?.into_result()?.reported(setting.m());
    let net = stable_network(setting, &reported)?;
    let utilities = (0..setting.n()).map(|i| network::utility(setting, &net, i)).collect::<Result<_>>()?;
    Ok((net, utilities))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    /// Every strategic agent is strictly better off than under honesty.
    AllBetter,
    /// Some, but not all, strategic agents are strictly worse off.
    SomeWorse,
    /// Every strategic agent is strictly worse off.
    AllWorse,
    /// A tie within [`OUTCOME_TOL`] or an empty strategic set.
    Undecided,
}

/// Compares strategic utilities against honest ones for the agents in `strategic`.
pub fn classify_outcome(honest: &[f64], strategic_utilities: &[f64], strategic: &[usize]) -> Outcome {
    if strategic.is_empty() {
        return Outcome::Undecided;
    }
    let diffs: Vec<f64> = strategic.iter().map(|&k| strategic_utilities[k] - honest[k]).collect();
    if diffs.iter().any(|d| d.abs() <= OUTCOME_TOL) {
        return Outcome::Undecided;
    }
    let worse = diffs.iter().filter(|&&d| d < 0.0).count();
    match worse {
        0 => Outcome::AllBetter,
        w if w == diffs.len() => Outcome::AllWorse,
        _ => Outcome::SomeWorse,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_agent_examples() {
        let cfg = TwoAgentConfig::new(Mat::identity(2, 2), 0.5).unwrap();
        assert_close!(cfg.kappa(), 1.0, 0.0);
        let d = two_agent_nash(&cfg, &[1]).unwrap();
        assert_eq!(d, Mat::from_row_slice(2, 2, &[0.0, 1.0 / 3.0, 0.0, 0.0]));
        let d = two_agent_nash(&cfg, &[0, 1]).unwrap();
        assert_eq!(d, Mat::from_row_slice(2, 2, &[0.0, 0.25, 0.25, 0.0]));
        let flat = TwoAgentConfig::new(Mat::identity(2, 2), 0.0).unwrap();
        for s in [&[0][..], &[1], &[0, 1]] {
            assert_eq!(two_agent_nash(&flat, s).unwrap(), Mat::zeros(2, 2));
        }
        assert!(two_agent_nash(&cfg, &[]).is_err());
        assert!(TwoAgentConfig::new(Mat::identity(2, 2), 1.0).is_err());
    }

    #[test]
    fn investor_constants_at_zero_correlation() {
        let (nu, eta, zeta) = investor_constants(0.0);
        assert_close!(nu, 0.5, 1e-15);
        assert_close!(eta, 0.0, 1e-15);
        assert_close!(zeta, 2.0 / 3.0, 1e-15);
        let funds =
            investor_nash(&InvestorConfig { a: 5.0, m: 1.0, rho: 0.0, case: InvestorCase::FundsStrategic }).unwrap();
        assert_close!(funds[(0, 1)], 3.0, 1e-12);
        assert_close!(funds[(1, 0)], 1.0, 0.0);
        let all =
            investor_nash(&InvestorConfig { a: 5.0, m: 1.0, rho: 0.0, case: InvestorCase::AllStrategic }).unwrap();
        assert_close!(all[(1, 0)], -1.4, 1e-12);
        assert_close!(all[(0, 2)], 3.8, 1e-12);
    }

    #[test]
    fn zero_beliefs_keep_zero_positions() {
        for case in [InvestorCase::FundsStrategic, InvestorCase::AllStrategic] {
            let mp = investor_nash(&InvestorConfig { a: 0.0, m: 0.0, rho: 0.0, case }).unwrap();
            assert_eq!(mp, Mat::zeros(3, 3));
        }
    }

    #[test]
    fn restricted_oracle_reproduces_fund_reports() {
        for case in [InvestorCase::FundsStrategic, InvestorCase::AllStrategic] {
            let cfg = InvestorConfig { a: 5.0, m: 1.0, rho: -0.4, case };
            let mp = investor_nash(&cfg).unwrap();
            let setting = cfg.setting(case.strategic()).unwrap();
            for k in [1, 2] {
                let z = restricted_best_response(&setting, &mp, k, &investor_free_entries(k)).unwrap();
                assert_close!(z[0], mp[(0, k)], 1e-6);
            }
        }
    }

    #[test]
    fn leader_oracle_reproduces_investor_report() {
        let cfg = InvestorConfig { a: 5.0, m: 1.0, rho: -0.4, case: InvestorCase::AllStrategic };
        let mp = investor_nash(&cfg).unwrap();
        let setting = cfg.setting(vec![0, 1, 2]).unwrap();
        assert_close!(investor_leader_response(&setting).unwrap(), mp[(1, 0)], 1e-6);
        let follow = fund_subgame(&setting, mp[(1, 0)]).unwrap();
        assert!((follow - &mp).abs().max() < 1e-6);
    }

    #[test]
    fn outcome_classification() {
        let honest = [1.0, 1.0, 1.0];
        assert_eq!(classify_outcome(&honest, &[0.0, 2.0, 2.0], &[1, 2]), Outcome::AllBetter);
        assert_eq!(classify_outcome(&honest, &[2.0, 0.5, 0.5], &[0, 1, 2]), Outcome::SomeWorse);
        assert_eq!(classify_outcome(&honest, &[2.0, 0.5, 0.5], &[1, 2]), Outcome::AllWorse);
        assert_eq!(classify_outcome(&honest, &[2.0, 1.0, 0.5], &[1, 2]), Outcome::Undecided);
    }

    #[test]
    fn sweep_emits_one_row_per_agent() {
        let rows =
            welfare_sweep(&SweepModel::Investor { a: 5.0, m: 1.0 }, &[-0.5, 0.5], &[vec![], vec![1, 2]]).unwrap();
        assert_eq!(rows.len(), 2 * 2 * 3);
        assert_eq!(rows[3].scenario, "1+2");
        assert!(welfare_sweep(&SweepModel::Investor { a: 5.0, m: 1.0 }, &[1.0], &[vec![]]).is_err());
    }
}
