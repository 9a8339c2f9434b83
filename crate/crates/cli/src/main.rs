//! `stratnet` command-line interface.
//!
//! Exit status: 0 on success, 1 on a domain failure (no equilibrium,
//! infeasible threshold, invalid setting), 2 on input/output, format or usage
//! errors.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use stratnet::datagen::{gen_instance, gen_planted_block, gen_trade_panel, SyntheticSpec};
use stratnet::experiments::{
    learning_csv, run_learning_sweep, run_trade_counterfactual, run_welfare_sweep, summary_csv, trade_csv, welfare_csv,
    ExperimentConfig, Grid, LearningConfig, TradeScenario, WelfareConfig,
};
use stratnet::learning::{estimate, ClusterSelection, TorrentConfig};
use stratnet::linalg::{Mat, Vector};
use stratnet::network::stable_network;
use stratnet::strategy::{best_response, lkt, nash_equilibria};
use stratnet::{io, Error};

#[derive(Parser)]
#[command(name = "stratnet", version, about = "Stable contract networks, strategic negotiation and belief recovery")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Stable network for the reported positions (the true beliefs by default).
    Stable {
        /// Setting file (TOML).
        #[arg(long)]
        input: PathBuf,
        /// Output directory for `w.csv` and `p.csv`.
        #[arg(long)]
        output: PathBuf,
        /// Reported positions to use instead of the true beliefs.
        #[arg(long)]
        reported: Option<PathBuf>,
    },
    /// Nash equilibrium deviations of the setting's strategic agents.
    Nash {
        #[arg(long)]
        input: PathBuf,
        /// Output directory for `delta.csv`, `reported.csv`, `w.csv` and `p.csv`.
        #[arg(long)]
        output: PathBuf,
        /// Strategic agents (zero-based), overriding the setting file.
        #[arg(long, value_delimiter = ',')]
        strategic: Option<Vec<usize>>,
    },
    /// Best response of one strategic agent to the others' deviations.
    BestResponse {
        #[arg(long)]
        input: PathBuf,
        /// Output file for the deviation column.
        #[arg(long)]
        output: PathBuf,
        #[arg(long)]
        agent: usize,
        /// `n x n` deviation matrix; columns of the other strategic agents are used.
        #[arg(long)]
        deviations: Option<PathBuf>,
    },
    /// Recovers `B + B^T` and the strategic set from an observed network.
    Learn {
        /// Observation file (TOML).
        #[arg(long)]
        input: PathBuf,
        /// Output directory for `b_hat_sym.csv`, `s_hat.csv` and `residuals.csv`.
        #[arg(long)]
        output: PathBuf,
        /// Corruption threshold in [0, 1).
        #[arg(long)]
        beta: f64,
        #[arg(long, default_value_t = 100)]
        iters: usize,
        #[arg(long, value_enum, default_value_t = ClusterRule::NearestSize)]
        cluster_rule: ClusterRule,
    },
    /// Generates a seeded instance.
    Gen {
        #[arg(long)]
        seed: u64,
        /// Output directory.
        #[arg(long)]
        output: PathBuf,
        #[arg(long, value_enum, default_value_t = GenKind::Instance)]
        kind: GenKind,
        /// Number of agents (countries for trade panels).
        #[arg(long, default_value_t = 100)]
        n: usize,
        #[arg(long, default_value_t = 2)]
        d: usize,
        /// Number of strategic agents.
        #[arg(long, default_value_t = 0)]
        s: usize,
        /// Size of the planted corruption for `--kind block`.
        #[arg(long, default_value_t = 1e3)]
        magnitude: f64,
        /// Quarters for `--kind trade`.
        #[arg(long, default_value_t = 8)]
        quarters: usize,
    },
    /// Utilities across a correlation grid and strategic scenarios.
    SweepWelfare {
        /// Experiment config (TOML, `kind = "WelfareSweep"`); defaults apply without one.
        #[arg(long)]
        input: Option<PathBuf>,
        /// Output CSV; defaults to the config's `output`.
        #[arg(long)]
        output: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// `lo:hi:steps`.
        #[arg(long)]
        rho_grid: Option<String>,
        /// Strategic set as comma-separated indices, or `honest`; repeatable.
        #[arg(long)]
        scenario: Vec<String>,
    },
    /// Learning error and recovery accuracy across feature dimensions and strategic set sizes.
    SweepLearning {
        /// Experiment config (TOML, `kind = "LearningSweep"`).
        #[arg(long)]
        input: Option<PathBuf>,
        /// Output CSV of trials, defaulting to the config's `output`; percentiles go to
        /// `<stem>_summary.csv` next to it.
        #[arg(long)]
        output: Option<PathBuf>,
        #[arg(long)]
        seed: u64,
        #[arg(long, value_delimiter = ',')]
        d: Option<Vec<usize>>,
        #[arg(long, value_delimiter = ',')]
        s: Option<Vec<usize>>,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        trials: Option<usize>,
        /// Fixed corruption threshold instead of the per-size default.
        #[arg(long)]
        beta: Option<f64>,
        #[arg(long)]
        iters: Option<usize>,
    },
    /// Counterfactual utilities on a trade panel.
    Trade {
        /// Panel file, or an experiment config of kind `TradeCounterfactual` (TOML).
        #[arg(long)]
        input: PathBuf,
        /// Output CSV; defaults to the config's `output`.
        #[arg(long)]
        output: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// `honest`, `all` or `single:<index>`; repeatable. Defaults to all of them.
        #[arg(long)]
        scenario: Vec<String>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum ClusterRule {
    NearestSize,
    PositiveIfLarger,
}

#[derive(Clone, Copy, ValueEnum)]
enum GenKind {
    /// Dirichlet features with Nash-strategic agents.
    Instance,
    /// Two-block features with planted corruption.
    Block,
    /// Synthetic trade panel.
    Trade,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            if matches!(e, Error::NoEquilibrium { .. }) {
                println!("No Nash Equilibrium");
            }
            eprintln!("error: {e}");
            ExitCode::from(if e.is_domain() { 1 } else { 2 })
        }
    }
}

fn run(command: Command) -> stratnet::Result<String> {
    match command {
        Command::Stable { input, output, reported } => {
            let setting = io::load_setting(&input)?;
            let reported = match reported {
                Some(p) => io::read_matrix(&p)?,
                None => setting.m().clone(),
            };
            let net = stable_network(&setting, &reported)?;
            io::write_matrix(&output.join("w.csv"), &net.w)?;
            io::write_matrix(&output.join("p.csv"), &net.p)?;
            Ok(format!("stable network for {} agents written to {}", setting.n(), output.display()))
        }
        Command::Nash { input, output, strategic } => {
            let mut setting = io::load_setting(&input)?;
            if let Some(s) = strategic {
                setting = setting.with_strategic(s)?;
            }
            let nash = nash_equilibria(&setting)?.into_result()?;
            let reported = nash.reported(setting.m());
            let net = stable_network(&setting, &reported)?;
            io::write_matrix(&output.join("delta.csv"), &nash.delta)?;
            io::write_matrix(&output.join("reported.csv"), &reported)?;
            io::write_matrix(&output.join("w.csv"), &net.w)?;
            io::write_matrix(&output.join("p.csv"), &net.p)?;
            Ok(format!(
                "Nash equilibrium for strategic set {:?}: solution family of dimension {}, max |delta| {:.6e}",
                setting.strategic(),
                nash.family.dimension(),
                nash.delta.abs().max()
            ))
        }
        Command::BestResponse { input, output, agent, deviations } => {
            let setting = io::load_setting(&input)?;
            let ops = lkt(&setting)?;
            let others: BTreeMap<usize, Vector> = match deviations {
                Some(p) => {
                    let d = io::read_matrix(&p)?;
                    if d.shape() != (setting.n(), setting.n()) {
                        return Err(Error::DimensionMismatch(format!(
                            "deviations are {}x{} for {} agents",
                            d.nrows(),
                            d.ncols(),
                            setting.n()
                        )));
                    }
                    setting
                        .strategic()
                        .iter()
                        .filter(|&&j| j != agent)
                        .map(|&j| (j, d.column(j).into_owned()))
                        .collect()
                }
                None => BTreeMap::new(),
            };
            let response = best_response(&setting, &ops, agent, &others)?;
            if !response.consistent {
                return Err(Error::InvalidParameter(format!(
                    "agent {agent} has no best response (residual {:.3e})",
                    response.residual
                )));
            }
            io::write_vector(&output, &response.particular)?;
            Ok(format!(
                "best response of agent {agent}: norm {:.6e}, {} free directions",
                response.particular.norm(),
                response.dimension()
            ))
        }
        Command::Learn { input, output, beta, iters, cluster_rule } => {
            let obs = io::load_observation(&input)?;
            let cfg = TorrentConfig::new(beta)?.with_max_iters(iters)?;
            let selection = match cluster_rule {
                ClusterRule::NearestSize => ClusterSelection::NearestSize,
                ClusterRule::PositiveIfLarger => ClusterSelection::PositiveIfLarger,
            };
            let est = estimate(&obs.w, &obs.risk, &obs.x, &cfg, selection)?;
            io::write_matrix(&output.join("b_hat_sym.csv"), &est.b_hat_sym)?;
            io::write_matrix(&output.join("residuals.csv"), &est.residuals)?;
            io::write_string(&output.join("s_hat.csv"), &indices_csv(&est.s_hat))?;
            Ok(format!(
                "estimated {}x{} coefficients after {} iterations; {} strategic agents {:?}",
                est.b_hat_sym.nrows(),
                est.b_hat_sym.ncols(),
                est.torrent_iterations,
                est.s_hat.len(),
                est.s_hat
            ))
        }
        Command::Gen { seed, output, kind, n, d, s, magnitude, quarters } => {
            generate(kind, seed, &output, n, d, s, magnitude, quarters)
        }
        Command::SweepWelfare { input, output, seed, rho_grid, scenario } => {
            let mut cfg = match &input {
                Some(p) => match load_config(p)? {
                    ExperimentConfig::WelfareSweep(c) => c,
                    _ => return Err(wrong_kind(p, "WelfareSweep")),
                },
                None => WelfareConfig::default(),
            };
            let output = output_path(output, cfg.output.as_deref(), input.as_deref())?;
            if let Some(g) = rho_grid {
                cfg.rho = Grid::parse(&g)?;
            }
            if !scenario.is_empty() {
                cfg.scenarios = Some(scenario.iter().map(|s| parse_strategic(s)).collect::<stratnet::Result<_>>()?);
            }
            if let Some(seed) = seed {
                cfg.seed = seed;
            }
            let rows = run_welfare_sweep(&cfg)?;
            io::write_string(&output, &welfare_csv(&rows))?;
            Ok(format!("{} welfare rows written to {}", rows.len(), output.display()))
        }
        Command::SweepLearning { input, output, seed, d, s, n, trials, beta, iters } => {
            let mut cfg = match &input {
                Some(p) => match load_config(p)? {
                    ExperimentConfig::LearningSweep(c) => c,
                    _ => return Err(wrong_kind(p, "LearningSweep")),
                },
                None => LearningConfig::new(seed, vec![2], vec![10]),
            };
            let output = output_path(output, cfg.output.as_deref(), input.as_deref())?;
            cfg.seed = seed;
            cfg.d = d.unwrap_or(cfg.d);
            cfg.s = s.unwrap_or(cfg.s);
            cfg.n = n.unwrap_or(cfg.n);
            cfg.trials = trials.unwrap_or(cfg.trials);
            cfg.beta = beta.or(cfg.beta);
            cfg.max_iters = iters.unwrap_or(cfg.max_iters);
            let (rows, summary) = run_learning_sweep(&cfg)?;
            let summary_path = summary_path(&output);
            io::write_string(&output, &learning_csv(&rows))?;
            io::write_string(&summary_path, &summary_csv(&summary))?;
            Ok(format!(
                "{} trials written to {}, percentiles to {}",
                rows.len(),
                output.display(),
                summary_path.display()
            ))
        }
        Command::Trade { input, output, seed: _, scenario } => {
            let text = io::read_to_string(&input)?;
            let (panel, configured, config_output) = if declares_kind(&text) {
                match load_config(&input)? {
                    ExperimentConfig::TradeCounterfactual(c) => {
                        (io::load_panel(&relative_to(&input, &c.panel))?, c.scenarios, c.output)
                    }
                    _ => return Err(wrong_kind(&input, "TradeCounterfactual")),
                }
            } else {
                (io::load_panel(&input)?, None, None)
            };
            let output = output_path(output, config_output.as_deref(), Some(&input))?;
            let scenarios = if !scenario.is_empty() {
                scenario.iter().map(|s| TradeScenario::parse(s)).collect::<stratnet::Result<_>>()?
            } else {
                configured.unwrap_or_else(|| TradeScenario::standard(panel.n()))
            };
            let rows = run_trade_counterfactual(&panel, &scenarios)?;
            io::write_string(&output, &trade_csv(&rows))?;
            Ok(format!(
                "{} utilities for {} quarters and {} scenarios written to {}",
                rows.len(),
                panel.quarters.len(),
                scenarios.len(),
                output.display()
            ))
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn generate(
    kind: GenKind,
    seed: u64,
    output: &Path,
    n: usize,
    d: usize,
    s: usize,
    magnitude: f64,
    quarters: usize,
) -> stratnet::Result<String> {
    match kind {
        GenKind::Instance => {
            let (model, setting) = gen_instance(&SyntheticSpec::new(n, d, s, seed)?)?;
            let (m_prime, net, _) = stratnet::datagen::simulate_negotiation(&setting)?;
            write_instance(output, &model.x, &model.b, &setting, &m_prime, &net.w)?;
            Ok(format!(
                "instance with {n} agents, {d} features and strategic set {:?} written to {}",
                setting.strategic(),
                output.display()
            ))
        }
        GenKind::Block => {
            let (model, setting, m_prime) = gen_planted_block(n, s, seed, magnitude)?;
            let net = stable_network(&setting, &m_prime)?;
            write_instance(output, &model.x, &model.b, &setting, &m_prime, &net.w)?;
            Ok(format!(
                "block instance with {n} agents and strategic set {:?} written to {}",
                setting.strategic(),
                output.display()
            ))
        }
        GenKind::Trade => {
            let panel = gen_trade_panel(n, quarters, seed)?;
            let path = io::save_panel(output, &panel)?;
            Ok(format!("trade panel with {n} countries and {quarters} quarters written to {}", path.display()))
        }
    }
}

fn write_instance(
    dir: &Path,
    x: &Mat,
    b: &Mat,
    setting: &stratnet::NetworkSetting,
    m_prime: &Mat,
    w: &Mat,
) -> stratnet::Result<()> {
    io::save_setting(dir, setting)?;
    io::write_matrix(&dir.join("b.csv"), b)?;
    io::write_matrix(&dir.join("reported.csv"), m_prime)?;
    io::save_observation(dir, w, x)?;
    Ok(())
}

fn load_config(path: &Path) -> stratnet::Result<ExperimentConfig> {
    ExperimentConfig::from_toml(&io::read_to_string(path)?)
        .map_err(|message| Error::Format { path: path.to_path_buf(), message })
}

fn wrong_kind(path: &Path, expected: &str) -> Error {
    Error::Format { path: path.to_path_buf(), message: format!("expected an experiment of kind {expected}") }
}

/// `honest` or comma-separated zero-based indices.
fn parse_strategic(text: &str) -> stratnet::Result<Vec<usize>> {
    if text == "honest" {
        return Ok(Vec::new());
    }
    text.split(',')
        .map(|t| t.trim().parse().map_err(|_| Error::InvalidParameter(format!("bad scenario `{text}`"))))
        .collect()
}

/// True for experiment configs, which carry a top-level `kind` key; panel files do not.
fn declares_kind(toml_text: &str) -> bool {
    toml_text.lines().any(|l| l.split_once('=').is_some_and(|(key, _)| key.trim() == "kind"))
}

fn relative_to(config: &Path, file: &Path) -> PathBuf {
    match config.parent() {
        Some(dir) if file.is_relative() => dir.join(file),
        _ => file.to_path_buf(),
    }
}

/// `--output` if given, else the config's `output` resolved against the config's directory.
fn output_path(flag: Option<PathBuf>, configured: Option<&Path>, config: Option<&Path>) -> stratnet::Result<PathBuf> {
    match (flag, configured, config) {
        (Some(p), _, _) => Ok(p),
        (None, Some(c), Some(cfg)) => Ok(relative_to(cfg, c)),
        (None, _, cfg) => Err(Error::Format {
            path: cfg.map_or_else(|| PathBuf::from("<arguments>"), Path::to_path_buf),
            message: "no output path: pass --output or set `output` in the config".into(),
        }),
    }
}

fn summary_path(output: &Path) -> PathBuf {
    let stem = output.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "sweep".into());
    output.with_file_name(format!("{stem}_summary.csv"))
}

fn indices_csv(indices: &[usize]) -> String {
    indices.iter().map(|i| format!("{i}\n")).collect()
}
