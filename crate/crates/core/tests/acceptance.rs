//! Acceptance suite. Runs without the libtest harness so every criterion
//! prints exactly one `PASS` or `FAIL` line; the process exits non-zero if
//! any criterion fails.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use rand::Rng;
use stratnet::datagen::{gen_planted_block, gen_trade_panel};
use stratnet::experiments::{
    learning_csv, run_learning_sweep, run_trade_counterfactual, run_welfare_sweep, summary_csv, trade_csv, welfare_csv,
    LearningConfig, TradeScenario, WelfareConfig,
};
use stratnet::learning::{estimate, metrics, recover_h, ClusterSelection, TorrentConfig};
use stratnet::linalg::{Mat, Vector};
use stratnet::model_networks::{
    classify_outcome, equilibrium_utilities, fund_subgame, investor_constants, investor_free_entries,
    investor_leader_response, investor_nash, restricted_best_response, two_agent_nash, InvestorCase, InvestorConfig,
    Outcome, TwoAgentConfig,
};
use stratnet::network::{stable_network, utility};
use stratnet::strategy::{contract_shift, nash_equilibria, shift_spectrum};
use stratnet::NetworkSetting;

use common::{gammas, rng, spd, uniform_mat};

type Verdict = Result<String, String>;
type Criterion = fn() -> Verdict;

fn check(cond: bool, detail: String) -> Verdict {
    if cond {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn within(elapsed: Duration, limit: Duration) -> Result<(), String> {
    if elapsed < limit {
        Ok(())
    } else {
        Err(format!("took {elapsed:.2?}, limit {limit:?}"))
    }
}

fn c1_closed_form_stable_point() -> Verdict {
    let start = Instant::now();
    let mut r = rng(101);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let n = r.random_range(2..=8);
        let m = uniform_mat(&mut r, n, n, 5.0);
        let setting =
            NetworkSetting::new(m.clone(), vec![1.0; n], Mat::identity(n, n), vec![]).map_err(|e| e.to_string())?;
        let net = stable_network(&setting, &m).map_err(|e| e.to_string())?;
        let w = (&m + m.transpose()) / 4.0;
        let p = (&m - m.transpose()) / 2.0;
        worst = worst.max((&net.w - w).abs().max()).max((&net.p - p).abs().max());
    }
    within(start.elapsed(), Duration::from_secs(1))?;
    check(worst <= 1e-10, format!("max abs error {worst:.2e} over 100 instances"))
}

fn c2_stability_foc() -> Verdict {
    let start = Instant::now();
    let mut r = rng(202);
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let n = r.random_range(2..=6);
        let m = uniform_mat(&mut r, n, n, 3.0);
        let reported = &m + uniform_mat(&mut r, n, n, 1.0);
        let sigma = spd(&mut r, n, 0.2);
        let g = gammas(&mut r, n);
        let setting = NetworkSetting::new(m, g.clone(), sigma.clone(), vec![]).map_err(|e| e.to_string())?;
        let net = stable_network(&setting, &reported).map_err(|e| e.to_string())?;
        for (i, gi) in g.iter().enumerate() {
            let mu = reported.column(i);
            let lhs = mu - net.p.column(i);
            let rhs = &sigma * net.w.column(i) * (2.0 * gi);
            worst = worst.max((lhs - rhs).norm() / (1.0 + mu.norm()));
        }
    }
    within(start.elapsed(), Duration::from_secs(5))?;
    check(worst <= 1e-8, format!("max scaled residual {worst:.2e} over 50 settings"))
}

fn c3_two_agent() -> Verdict {
    let start = Instant::now();
    let mut r = rng(303);
    let rhos: Vec<f64> = (0..19).map(|i| -0.9 + 0.1 * i as f64).collect();
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let m = uniform_mat(&mut r, 2, 2, 3.0);
        for &rho in &rhos {
            let cfg = TwoAgentConfig::new(m.clone(), rho).map_err(|e| e.to_string())?;
            let kappa = cfg.kappa();
            for s in [vec![0], vec![1], vec![0, 1]] {
                let setting = cfg.setting(s.clone()).map_err(|e| e.to_string())?;
                let delta = nash_equilibria(&setting).and_then(|n| n.into_result()).map_err(|e| e.to_string())?.delta;
                let mut expected = Mat::zeros(2, 2);
                if s.len() == 1 {
                    expected[(1 - s[0], s[0])] = kappa / 3.0;
                } else {
                    expected[(0, 1)] = kappa / 4.0;
                    expected[(1, 0)] = kappa / 4.0;
                }
                let closed = two_agent_nash(&cfg, &s).map_err(|e| e.to_string())?;
                worst = worst.max((&delta - &expected).abs().max()).max((&closed - &expected).abs().max());
            }
        }
    }
    within(start.elapsed(), Duration::from_secs(5))?;
    check(worst <= 1e-8, format!("max deviation error {worst:.2e} over 19 rho x 20 beliefs"))
}

fn c4_investor_closed_forms() -> Verdict {
    let (a, m, rho) = (5.0, 1.0, 0.0);
    let funds_cfg = InvestorConfig { a, m, rho, case: InvestorCase::FundsStrategic };
    let all_cfg = InvestorConfig { a, m, rho, case: InvestorCase::AllStrategic };
    let funds = investor_nash(&funds_cfg).map_err(|e| e.to_string())?;
    let all = investor_nash(&all_cfg).map_err(|e| e.to_string())?;

    // Independent evaluation of the formulas at rho = 0.
    let (nu, eta, zeta) = investor_constants(rho);
    let fund = |z: f64| (a * nu - z * (1.0 - nu) * (nu - eta)) / (nu + (1.0 - nu) * (nu - eta));
    let inv = (m - a * zeta) / (1.0 + zeta);
    let formula_gap = [
        (funds[(0, 1)] - 3.0).abs(),
        (funds[(0, 1)] - fund(m)).abs(),
        (all[(1, 0)] + 1.4).abs(),
        (all[(1, 0)] - inv).abs(),
        (all[(0, 1)] - 3.8).abs(),
        (all[(0, 1)] - fund(inv)).abs(),
    ]
    .into_iter()
    .fold(0.0, f64::max);

    // Numerical oracle: each fund's restricted best response to the closed
    // form, and the investor's optimal report given the funds' reaction.
    let err = |e: stratnet::Error| e.to_string();
    let setting_f = funds_cfg.setting(vec![1, 2]).map_err(err)?;
    let setting_a = all_cfg.setting(vec![0, 1, 2]).map_err(err)?;
    let mut oracle_gap: f64 = 0.0;
    for (setting, closed) in [(&setting_f, &funds), (&setting_a, &all)] {
        for k in [1, 2] {
            let br = restricted_best_response(setting, closed, k, &investor_free_entries(k)).map_err(err)?;
            oracle_gap = oracle_gap.max((br[0] - closed[(0, k)]).abs());
        }
    }
    let leader = investor_leader_response(&setting_a).map_err(err)?;
    oracle_gap = oracle_gap.max((leader - all[(1, 0)]).abs());
    let subgame = fund_subgame(&setting_f, m).map_err(err)?;
    oracle_gap = oracle_gap.max((subgame[(0, 1)] - funds[(0, 1)]).abs());

    check(
        formula_gap <= 1e-9 && oracle_gap <= 1e-6,
        format!(
            "M'_12 = {:.12} (funds), M'_21 = {:.12}, M'_12 = {:.12} (all); formula gap {formula_gap:.1e}, oracle gap {oracle_gap:.1e}",
            funds[(0, 1)],
            all[(1, 0)],
            all[(0, 1)]
        ),
    )
}

fn c5_nash_concavity() -> Verdict {
    let mut r = rng(505);
    let mut min_margin = f64::INFINITY;
    let mut settings = 0;
    let mut draws = 0;
    while settings < 30 {
        draws += 1;
        if draws > 1000 {
            return Err("could not draw 30 consistent settings".into());
        }
        let mut setting = common::random_setting(&mut r, 6, 3);
        if setting.strategic().is_empty() {
            setting = setting.with_strategic(vec![0]).map_err(|e| e.to_string())?;
        }
        let Ok(nash) = nash_equilibria(&setting).and_then(|n| n.into_result()) else { continue };
        settings += 1;
        let n = setting.n();
        let reported = nash.reported(setting.m());
        let net = stable_network(&setting, &reported).map_err(|e| e.to_string())?;
        for &k in setting.strategic() {
            let base = utility(&setting, &net, k).map_err(|e| e.to_string())?;
            for _ in 0..20 {
                let mut dir = Vector::from_fn(n, |_, _| r.random_range(-1.0..1.0));
                dir *= 1e-3 / dir.norm();
                let mut moved = reported.clone();
                let col = moved.column(k) + dir;
                moved.set_column(k, &col);
                let perturbed = stable_network(&setting, &moved).map_err(|e| e.to_string())?;
                let u = utility(&setting, &perturbed, k).map_err(|e| e.to_string())?;
                min_margin = min_margin.min(base - u);
            }
        }
    }
    check(min_margin > 1e-12, format!("smallest utility drop {min_margin:.3e} over 30 settings"))
}

fn c6_contract_shift() -> Verdict {
    let mut r = rng(606);
    let mut worst: f64 = 0.0;
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for _ in 0..30 {
        let setting = common::random_setting(&mut r, 6, 0);
        let n = setting.n();
        let honest = setting.honest_network();
        for k in 0..n {
            let delta = Vector::from_fn(n, |_, _| r.random_range(-2.0..2.0));
            let mut reported = setting.m().clone();
            let col = reported.column(k) + &delta;
            reported.set_column(k, &col);
            let net = stable_network(&setting, &reported).map_err(|e| e.to_string())?;
            let b = contract_shift(&setting, k).map_err(|e| e.to_string())?;
            worst = worst.max((net.w.column(k) - honest.w.column(k) - b * &delta).norm());
            let spectrum = shift_spectrum(&setting, k).map_err(|e| e.to_string())?;
            lo = lo.min(spectrum.min());
            hi = hi.max(spectrum.max());
        }
    }
    check(
        worst <= 1e-8 && lo > 0.0 && hi < 1.0,
        format!("max shift error {worst:.2e}; shift spectrum within [{lo:.4}, {hi:.4}]"),
    )
}

fn c7_welfare_signs() -> Verdict {
    let err = |e: stratnet::Error| e.to_string();
    let utilities = |rho: f64, s: Vec<usize>| -> Result<Vec<f64>, String> {
        let cfg = InvestorConfig { a: 5.0, m: 1.0, rho, case: InvestorCase::AllStrategic };
        let setting = cfg.setting(s).map_err(err)?;
        Ok(equilibrium_utilities(&setting).map_err(err)?.1)
    };
    let honest_neg = utilities(-0.9, vec![])?;
    let honest_pos = utilities(0.5, vec![])?;
    let funds_neg = classify_outcome(&honest_neg, &utilities(-0.9, vec![1, 2])?, &[1, 2]);
    let funds_pos = classify_outcome(&honest_pos, &utilities(0.5, vec![1, 2])?, &[1, 2]);
    let all_neg = utilities(-0.9, vec![0, 1, 2])?;
    let investor_gain = all_neg[0] - honest_neg[0];
    let funds_all = classify_outcome(&honest_neg, &all_neg, &[1, 2]);
    check(
        funds_neg == Outcome::AllWorse && funds_pos == Outcome::AllBetter && investor_gain > 1e-9 && funds_all == Outcome::AllWorse,
        format!(
            "funds at -0.9: {funds_neg:?}; funds at 0.5: {funds_pos:?}; all strategic at -0.9: investor gain {investor_gain:.4}, funds {funds_all:?}"
        ),
    )
}

fn c8_clean_learning() -> Verdict {
    let start = Instant::now();
    let cfg = LearningConfig { n: 100, trials: 10, ..LearningConfig::new(800, vec![2, 3, 4], vec![0]) };
    let (rows, _) = run_learning_sweep(&cfg).map_err(|e| e.to_string())?;
    let worst = rows.iter().map(|r| r.norm_err).fold(0.0, f64::max);
    within(start.elapsed(), Duration::from_secs(30))?;
    check(rows.len() == 30 && worst <= 1e-8, format!("max norm_err {worst:.2e} over {} trials", rows.len()))
}

fn c9_block_recovery() -> Verdict {
    let start = Instant::now();
    let (n, s) = (272, 2);
    let mut worst: f64 = 0.0;
    let mut exact = 0;
    for seed in 0..10 {
        let (model, setting, m_prime) = gen_planted_block(n, s, 900 + seed, 1e3).map_err(|e| e.to_string())?;
        let net = stable_network(&setting, &m_prime).map_err(|e| e.to_string())?;
        let cfg = TorrentConfig::new(TorrentConfig::beta_for(n, s)).map_err(|e| e.to_string())?;
        let est =
            estimate(&net.w, setting.risk(), &model.x, &cfg, ClusterSelection::default()).map_err(|e| e.to_string())?;
        let m = metrics(&est.b_hat_sym, &est.s_hat, &model, setting.strategic()).map_err(|e| e.to_string())?;
        worst = worst.max(m.norm_err);
        if est.s_hat == setting.strategic() {
            exact += 1;
        }
    }
    within(start.elapsed(), Duration::from_secs(120))?;
    check(worst <= 1e-6 && exact == 10, format!("max relative error {worst:.2e}; exact recovery {exact}/10"))
}

fn c10_learning_trend() -> Verdict {
    let cfg = LearningConfig::new(1000, vec![2], vec![10]);
    let (_, summary) = run_learning_sweep(&cfg).map_err(|e| e.to_string())?;
    let median = |metric: &str| {
        summary.iter().find(|r| r.metric == metric && r.percentile == 50.0).map(|r| r.value).unwrap_or(f64::NAN)
    };
    let (robust, ls, acc) = (median("norm_err"), median("ls_norm_err"), median("balanced_acc"));
    check(
        robust < ls && acc > 0.5,
        format!("median norm_err {robust:.2e} vs least squares {ls:.2e}; median balanced accuracy {acc:.3}"),
    )
}

fn c11_round_trip() -> Verdict {
    let mut r = rng(1111);
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let setting = common::random_setting(&mut r, 6, 0);
        let n = setting.n();
        let reported = setting.m() + uniform_mat(&mut r, n, n, 1.0);
        let net = stable_network(&setting, &reported).map_err(|e| e.to_string())?;
        let h = recover_h(&net.w, setting.sigma(), setting.gamma()).map_err(|e| e.to_string())?;
        worst = worst.max((h - (&reported + reported.transpose())).abs().max());
    }
    check(worst <= 1e-9, format!("max abs error {worst:.2e} over 50 instances"))
}

fn c12_trade_lone_agent() -> Verdict {
    let panel = gen_trade_panel(6, 8, 1212).map_err(|e| e.to_string())?;
    let scenarios = TradeScenario::standard(6);
    let rows = run_trade_counterfactual(&panel, &scenarios).map_err(|e| e.to_string())?;
    let value = |q: &str, scenario: &TradeScenario, c: usize| {
        let label = scenario.label(&panel.agent_names);
        rows.iter()
            .find(|r| r.quarter == q && r.scenario == label && r.country == panel.agent_names[c])
            .map(|r| r.utility)
            .expect("row present")
    };
    let mut lone_ok = true;
    let mut worse_quarters = 0;
    let mut countries_with_drop = 0;
    for c in 0..6 {
        let mut dropped = false;
        for q in &panel.quarters {
            let single = value(q, &TradeScenario::Single(c), c);
            lone_ok &= single >= value(q, &TradeScenario::Honest, c) - 1e-9;
            if value(q, &TradeScenario::All, c) < single {
                worse_quarters += 1;
                dropped = true;
            }
        }
        countries_with_drop += dropped as usize;
    }
    check(
        lone_ok && countries_with_drop == 6,
        format!(
            "lone strategic never below honest: {lone_ok}; {countries_with_drop}/6 countries lose under all-strategic in some quarter ({worse_quarters} country-quarters)"
        ),
    )
}

fn c13_determinism() -> Verdict {
    let err = |e: stratnet::Error| e.to_string();
    let welfare = || run_welfare_sweep(&WelfareConfig::default()).map(|r| welfare_csv(&r));
    let learning = || {
        let cfg = LearningConfig { trials: 4, ..LearningConfig::new(13, vec![2, 3], vec![0, 10]) };
        run_learning_sweep(&cfg).map(|(rows, summary)| learning_csv(&rows) + &summary_csv(&summary))
    };
    let panel = gen_trade_panel(4, 3, 13).map_err(err)?;
    let trade = || run_trade_counterfactual(&panel, &TradeScenario::standard(4)).map(|r| trade_csv(&r));
    let same = [
        welfare().map_err(err)? == welfare().map_err(err)?,
        learning().map_err(err)? == learning().map_err(err)?,
        trade().map_err(err)? == trade().map_err(err)?,
    ];
    check(same.iter().all(|&b| b), format!("byte-identical reruns (welfare, learning, trade): {same:?}"))
}

fn main() {
    let criteria: [(&str, Criterion); 13] = [
        ("closed-form stable point", c1_closed_form_stable_point),
        ("stability first-order conditions", c2_stability_foc),
        ("two-agent equilibrium", c3_two_agent),
        ("three-agent closed forms", c4_investor_closed_forms),
        ("equilibrium concavity", c5_nash_concavity),
        ("contract-shift identity", c6_contract_shift),
        ("welfare sign patterns", c7_welfare_signs),
        ("clean learning", c8_clean_learning),
        ("block-model exact recovery", c9_block_recovery),
        ("learning sweep trend", c10_learning_trend),
        ("round-trip identity", c11_round_trip),
        ("trade counterfactual", c12_trade_lone_agent),
        ("determinism", c13_determinism),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|_| Err("panicked".into()));
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS {:>2} {name}: {detail} [{secs:.2}s]", i + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL {:>2} {name}: {detail} [{secs:.2}s]", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
