//! Experiment harness: welfare sweeps, learning sweeps and trade counterfactuals.
//!
//! Every runner returns rows in a canonical order, so parallel execution never
//! changes the output bytes. Configurations are TOML documents tagged by `kind`:
//!
//! ```toml
//! kind = "LearningSweep"
//! seed = 7
//! d = [2, 3]
//! s = [0, 10]
//! ```

use std::path::PathBuf;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datagen::{gen_instance, simulate_negotiation, SyntheticSpec};
use crate::error::{Error, Result};
use crate::io::format_table;
use crate::learning::{
    self, estimate, least_squares, metrics, symmetric_design, unpack_symmetric, ClusterSelection, TorrentConfig,
};
use crate::linalg::{self, Mat};
use crate::model_networks::{welfare_sweep, SweepModel, WelfareRow};
use crate::network::{deviation_utility, RiskModel};
use crate::strategy::nash_from_h;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum ExperimentConfig {
    WelfareSweep(WelfareConfig),
    LearningSweep(LearningConfig),
    TradeCounterfactual(TradeConfig),
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> std::result::Result<Self, String> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| e.to_string())?;
        cfg.validate().map_err(|e| e.to_string())?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            ExperimentConfig::WelfareSweep(c) => c.validate(),
            ExperimentConfig::LearningSweep(c) => c.validate(),
            ExperimentConfig::TradeCounterfactual(c) => c.validate(),
        }
    }
}

/// Evenly spaced grid `lo, ..., hi` with `steps` points.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Grid {
    pub lo: f64,
    pub hi: f64,
    pub steps: usize,
}

impl Grid {
    /// Parses `lo:hi:steps`.
    pub fn parse(text: &str) -> Result<Self> {
        let parts: Vec<&str> = text.split(':').collect();
        let bad = || Error::InvalidParameter(format!("grid `{text}` is not lo:hi:steps"));
        let [lo, hi, steps] = parts.as_slice() else { return Err(bad()) };
        let grid = Grid {
            lo: lo.trim().parse().map_err(|_| bad())?,
            hi: hi.trim().parse().map_err(|_| bad())?,
            steps: steps.trim().parse().map_err(|_| bad())?,
        };
        grid.validate()?;
        Ok(grid)
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 || !self.lo.is_finite() || !self.hi.is_finite() || self.hi < self.lo {
            return Err(Error::InvalidParameter(format!(
                "empty or invalid grid {}:{}:{}",
                self.lo, self.hi, self.steps
            )));
        }
        Ok(())
    }

    pub fn points(&self) -> Vec<f64> {
        if self.steps == 1 {
            return vec![self.lo];
        }
        let step = (self.hi - self.lo) / (self.steps - 1) as f64;
        (0..self.steps).map(|i| if i + 1 == self.steps { self.hi } else { self.lo + step * i as f64 }).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelConfig {
    Investor {
        a: f64,
        m: f64,
    },
    /// Beliefs row by row.
    TwoAgent {
        m: [[f64; 2]; 2],
    },
}

impl ModelConfig {
    pub fn sweep_model(&self) -> SweepModel {
        match self {
            ModelConfig::Investor { a, m } => SweepModel::Investor { a: *a, m: *m },
            ModelConfig::TwoAgent { m } => {
                SweepModel::TwoAgent { m: Mat::from_row_slice(2, 2, &[m[0][0], m[0][1], m[1][0], m[1][1]]) }
            }
        }
    }

    pub fn default_scenarios(&self) -> Vec<Vec<usize>> {
        match self {
            ModelConfig::Investor { .. } => vec![vec![], vec![1, 2], vec![0, 1, 2]],
            ModelConfig::TwoAgent { .. } => vec![vec![], vec![0], vec![1], vec![0, 1]],
        }
    }
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig::Investor { a: 5.0, m: 1.0 }
    }
}

fn default_rho() -> Grid {
    Grid { lo: -0.9, hi: 0.9, steps: 19 }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WelfareConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub output: Option<PathBuf>,
    #[serde(default = "default_rho")]
    pub rho: Grid,
    #[serde(default)]
    pub model: ModelConfig,
    /// Strategic sets; defaults depend on the model.
    #[serde(default)]
    pub scenarios: Option<Vec<Vec<usize>>>,
}

impl Default for WelfareConfig {
    fn default() -> Self {
        WelfareConfig { seed: 0, output: None, rho: default_rho(), model: ModelConfig::default(), scenarios: None }
    }
}

impl WelfareConfig {
    pub fn validate(&self) -> Result<()> {
        self.rho.validate()?;
        if self.scenarios.as_ref().is_some_and(Vec::is_empty) {
            return Err(Error::InvalidParameter("scenario list is empty".into()));
        }
        Ok(())
    }

    pub fn scenarios(&self) -> Vec<Vec<usize>> {
        self.scenarios.clone().unwrap_or_else(|| self.model.default_scenarios())
    }
}

pub fn run_welfare_sweep(cfg: &WelfareConfig) -> Result<Vec<WelfareRow>> {
    cfg.validate()?;
    let model = cfg.model.sweep_model();
    let rhos = cfg.rho.points();
    let scenarios = cfg.scenarios();
    let chunks: Vec<Vec<WelfareRow>> =
        rhos.par_iter().map(|&rho| welfare_sweep(&model, &[rho], &scenarios)).collect::<Result<_>>()?;
    Ok(chunks.into_iter().flatten().collect())
}

pub fn welfare_csv(rows: &[WelfareRow]) -> String {
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|r| vec![r.rho.to_string(), r.scenario.clone(), r.agent.to_string(), r.utility.to_string()])
        .collect();
    format_table(&["rho", "scenario", "agent", "utility"], &body)
}

fn default_n() -> usize {
    100
}
fn default_trials() -> usize {
    10
}
fn default_percentiles() -> Vec<f64> {
    vec![10.0, 50.0, 90.0]
}
fn default_iters() -> usize {
    100
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LearningConfig {
    pub seed: u64,
    #[serde(default)]
    pub output: Option<PathBuf>,
    #[serde(default = "default_n")]
    pub n: usize,
    pub d: Vec<usize>,
    /// Strategic set sizes.
    pub s: Vec<usize>,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default = "default_percentiles")]
    pub percentiles: Vec<f64>,
    /// Fixed corruption threshold; by default `(2 n s - s^2) / n^2`.
    #[serde(default)]
    pub beta: Option<f64>,
    #[serde(default = "default_iters")]
    pub max_iters: usize,
}

impl LearningConfig {
    pub fn new(seed: u64, d: Vec<usize>, s: Vec<usize>) -> Self {
        LearningConfig {
            seed,
            output: None,
            n: default_n(),
            d,
            s,
            trials: default_trials(),
            percentiles: default_percentiles(),
            beta: None,
            max_iters: default_iters(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d.is_empty() || self.s.is_empty() || self.trials == 0 {
            return Err(Error::InvalidParameter(
                "learning sweep needs non-empty d and s lists and at least one trial".into(),
            ));
        }
        if self.percentiles.is_empty() || self.percentiles.iter().any(|p| !(0.0..=100.0).contains(p)) {
            return Err(Error::InvalidParameter("percentiles must be a non-empty subset of [0, 100]".into()));
        }
        for &d in &self.d {
            for &s in &self.s {
                SyntheticSpec::new(self.n, d, s, 0)?;
                TorrentConfig::new(self.beta_for(s))?.with_max_iters(self.max_iters)?;
            }
        }
        Ok(())
    }

    fn beta_for(&self, s: usize) -> f64 {
        self.beta.unwrap_or_else(|| TorrentConfig::beta_for(self.n, s))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LearningRow {
    pub d: usize,
    pub s_size: usize,
    pub trial: usize,
    pub norm_err: f64,
    pub balanced_acc: f64,
    /// Error of ordinary least squares on the same instance.
    pub ls_norm_err: f64,
}

type Metric = fn(&LearningRow) -> f64;

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub d: usize,
    pub s_size: usize,
    pub metric: &'static str,
    pub percentile: f64,
    pub value: f64,
}

/// One learning trial: generate, negotiate, observe the network, estimate.
pub fn learning_trial(n: usize, d: usize, s: usize, seed: u64, cfg: &TorrentConfig) -> Result<LearningRow> {
    let (model, setting) = gen_instance(&SyntheticSpec::new(n, d, s, seed)?)?;
    let (_, net, _) = simulate_negotiation(&setting)?;
    let est = estimate(&net.w, setting.risk(), &model.x, cfg, ClusterSelection::default())?;
    let m = metrics(&est.b_hat_sym, &est.s_hat, &model, setting.strategic())?;

    let h = learning::recover_h(&net.w, setting.sigma(), setting.gamma())?;
    let ls = least_squares(&symmetric_design(&model.x), &linalg::vec(&h))?;
    let ls_m = metrics(&unpack_symmetric(&ls, d)?, &[], &model, setting.strategic())?;
    Ok(LearningRow {
        d,
        s_size: s,
        trial: 0,
        norm_err: m.norm_err,
        balanced_acc: m.balanced_acc,
        ls_norm_err: ls_m.norm_err,
    })
}

/// Trial rows ordered by `(d, s, trial)` and percentile summaries. Trial `t`
/// of every `(d, s)` cell uses seed `seed + t`.
pub fn run_learning_sweep(cfg: &LearningConfig) -> Result<(Vec<LearningRow>, Vec<SummaryRow>)> {
    cfg.validate()?;
    let jobs: Vec<(usize, usize, usize)> =
        cfg.d.iter().flat_map(|&d| cfg.s.iter().flat_map(move |&s| (0..cfg.trials).map(move |t| (d, s, t)))).collect();
    let mut rows: Vec<LearningRow> = jobs
        .par_iter()
        .map(|&(d, s, t)| {
            let torrent = TorrentConfig::new(cfg.beta_for(s))?.with_max_iters(cfg.max_iters)?;
            let row = learning_trial(cfg.n, d, s, cfg.seed.wrapping_add(t as u64), &torrent)?;
            Ok(LearningRow { trial: t, ..row })
        })
        .collect::<Result<_>>()?;
    rows.sort_by_key(|r| (r.d, r.s_size, r.trial));

    let mut summary = Vec::new();
    for &d in &cfg.d {
        for &s in &cfg.s {
            let cell: Vec<&LearningRow> = rows.iter().filter(|r| r.d == d && r.s_size == s).collect();
            let metrics: [(&'static str, Metric); 3] = [
                ("norm_err", |r| r.norm_err),
                ("balanced_acc", |r| r.balanced_acc),
                ("ls_norm_err", |r| r.ls_norm_err),
            ];
            for (name, get) in metrics {
                let values: Vec<f64> = cell.iter().map(|r| get(r)).collect();
                for &p in &cfg.percentiles {
                    summary.push(SummaryRow {
                        d,
                        s_size: s,
                        metric: name,
                        percentile: p,
                        value: percentile(&values, p),
                    });
                }
            }
        }
    }
    Ok((rows, summary))
}

/// Percentile by linear interpolation between order statistics.
pub fn percentile(values: &[f64], p: f64) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = p / 100.0 * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
}

pub fn learning_csv(rows: &[LearningRow]) -> String {
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.d.to_string(),
                r.s_size.to_string(),
                r.trial.to_string(),
                r.norm_err.to_string(),
                r.balanced_acc.to_string(),
                r.ls_norm_err.to_string(),
            ]
        })
        .collect();
    format_table(&["d", "s_size", "trial", "norm_err", "balanced_acc", "ls_norm_err"], &body)
}

pub fn summary_csv(rows: &[SummaryRow]) -> String {
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.d.to_string(),
                r.s_size.to_string(),
                r.metric.to_string(),
                r.percentile.to_string(),
                r.value.to_string(),
            ]
        })
        .collect();
    format_table(&["d", "s_size", "metric", "percentile", "value"], &body)
}

/// Quarterly bilateral networks sharing one covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct TradePanel {
    pub quarters: Vec<String>,
    pub networks: Vec<Mat>,
    pub sigma: Mat,
    pub agent_names: Vec<String>,
}

impl TradePanel {
    pub fn new(quarters: Vec<String>, networks: Vec<Mat>, sigma: Mat, agent_names: Vec<String>) -> Result<Self> {
        let n = agent_names.len();
        if quarters.len() != networks.len() || quarters.is_empty() {
            return Err(Error::InvalidParameter("panel needs one network per quarter and at least one quarter".into()));
        }
        if sigma.shape() != (n, n) {
            return Err(Error::dims(format!("covariance is {}x{} for {n} agents", sigma.nrows(), sigma.ncols())));
        }
        for (label, w) in quarters.iter().zip(&networks) {
            if w.shape() != (n, n) {
                return Err(Error::dims(format!(
                    "quarter {label}: network is {}x{} for {n} agents",
                    w.nrows(),
                    w.ncols()
                )));
            }
            linalg::ensure_finite(w, "trade network")?;
            let asym = linalg::asymmetry(w);
            if asym > 1e-9 {
                return Err(Error::AsymmetricInput { asymmetry: asym });
            }
            if w.diagonal().iter().any(|&v| v != 0.0) {
                return Err(Error::InvalidParameter(format!("quarter {label}: network diagonal must be zero")));
            }
        }
        Ok(TradePanel { quarters, networks, sigma, agent_names })
    }

    pub fn n(&self) -> usize {
        self.agent_names.len()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum TradeScenario {
    Honest,
    /// Only the given agent is strategic.
    Single(usize),
    All,
}

impl TradeScenario {
    pub fn strategic(&self, n: usize) -> Vec<usize> {
        match self {
            TradeScenario::Honest => vec![],
            TradeScenario::Single(k) => vec![*k],
            TradeScenario::All => (0..n).collect(),
        }
    }

    pub fn label(&self, names: &[String]) -> String {
        match self {
            TradeScenario::Honest => "honest".into(),
            TradeScenario::Single(k) => format!("only:{}", names.get(*k).cloned().unwrap_or_else(|| k.to_string())),
            TradeScenario::All => "all".into(),
        }
    }

    /// `honest`, `all`, or `single:<index>`.
    pub fn parse(text: &str) -> Result<Self> {
        match text {
            "honest" => Ok(TradeScenario::Honest),
            "all" => Ok(TradeScenario::All),
            other => other
                .strip_prefix("single:")
                .and_then(|k| k.parse().ok())
                .map(TradeScenario::Single)
                .ok_or_else(|| Error::InvalidParameter(format!("unknown scenario `{other}`"))),
        }
    }

    /// Honest, every single-agent scenario, then all strategic.
    pub fn standard(n: usize) -> Vec<Self> {
        std::iter::once(TradeScenario::Honest)
            .chain((0..n).map(TradeScenario::Single))
            .chain(std::iter::once(TradeScenario::All))
            .collect()
    }
}

impl TryFrom<String> for TradeScenario {
    type Error = String;
    fn try_from(s: String) -> std::result::Result<Self, String> {
        TradeScenario::parse(&s).map_err(|e| e.to_string())
    }
}

impl From<TradeScenario> for String {
    fn from(s: TradeScenario) -> String {
        match s {
            TradeScenario::Honest => "honest".into(),
            TradeScenario::Single(k) => format!("single:{k}"),
            TradeScenario::All => "all".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TradeConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub output: Option<PathBuf>,
    pub panel: PathBuf,
    /// Defaults to [`TradeScenario::standard`].
    #[serde(default)]
    pub scenarios: Option<Vec<TradeScenario>>,
}

impl TradeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.scenarios.as_ref().is_some_and(Vec::is_empty) {
            return Err(Error::InvalidParameter("scenario list is empty".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TradeRow {
    pub quarter: String,
    pub scenario: String,
    pub country: String,
    pub utility: f64,
}

/// Equilibrium utilities per quarter, scenario and country. Beliefs enter only
/// through `H_t`, recovered from the observed network with unit risk
/// aversions; utilities are `-<delta_i, w'_i> + <Sigma w'_i, w'_i>`.
pub fn run_trade_counterfactual(panel: &TradePanel, scenarios: &[TradeScenario]) -> Result<Vec<TradeRow>> {
    let n = panel.n();
    for s in scenarios {
        if let TradeScenario::Single(k) = s {
            if *k >= n {
                return Err(Error::IndexOutOfRange { index: *k, n });
            }
        }
    }
    let risk = RiskModel::new(panel.sigma.clone(), vec![1.0; n])?;
    let per_quarter: Vec<Vec<TradeRow>> = panel
        .quarters
        .par_iter()
        .zip(panel.networks.par_iter())
        .map(|(label, w)| {
            let h = learning::recover_h(w, risk.sigma(), risk.gamma())?;
            let mut rows = Vec::with_capacity(scenarios.len() * n);
            for scenario in scenarios {
                let utilities = h_only_utilities(&risk, &h, &scenario.strategic(n))?;
                for (i, u) in utilities.into_iter().enumerate() {
                    rows.push(TradeRow {
                        quarter: label.clone(),
                        scenario: scenario.label(&panel.agent_names),
                        country: panel.agent_names[i].clone(),
                        utility: u,
                    });
                }
            }
            Ok(rows)
        })
        .collect::<Result<_>>()?;
    Ok(per_quarter.into_iter().flatten().collect())
}

/// Equilibrium utility of every agent when beliefs are known through `h = M + M^T` only.
pub fn h_only_utilities(risk: &RiskModel, h: &Mat, strategic: &[usize]) -> Result<Vec<f64>> {
    let nash = nash_from_h(risk, h, strategic)?.into_result()?;
    let delta = &nash.delta;
    let w = risk.contracts_from_h(&(h + delta + delta.transpose()));
    Ok((0..risk.n())
        .map(|i| deviation_utility(risk, &delta.column(i).into_owned(), &w.column(i).into_owned(), i))
        .collect())
}

pub fn trade_csv(rows: &[TradeRow]) -> String {
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|r| vec![r.quarter.clone(), r.scenario.clone(), r.country.clone(), r.utility.to_string()])
        .collect();
    format_table(&["quarter", "scenario", "country", "utility"], &body)
}
