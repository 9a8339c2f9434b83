//! Recovering beliefs and the strategic set from one observed network.
//!
//! Beliefs follow a bilinear feature model `M_ij = x_i^T B x_j`. An observed
//! stable network `W'` determines the reported position sum
//! `H' = M' + M'^T = 2 (Sigma W' Gamma + Gamma W' Sigma)`. Entries of `H'` not
//! touched by a strategic agent equal `x_i^T (B + B^T) x_j`, so a robust
//! regression of `vec(H')` on the symmetrized design recovers `B + B^T`; the
//! largest residuals then point at the strategic agents.

use itertools::Itertools;

use crate::error::{Error, Result};
use crate::linalg::{self, ensure_finite, Mat, Vector};
use crate::network::RiskModel;

/// Guard added before flooring `beta * count` so that thresholds computed as
/// `(2 n s - s^2) / n^2` land on the intended integer.
const FLOOR_GUARD: f64 = 1e-9;

/// Largest row count accepted by [`ssc_sss_bruteforce`].
pub const BRUTEFORCE_LIMIT: usize = 20;

/// Agent features `x` (one row per agent) and the coefficient matrix `b`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureModel {
    pub x: Mat,
    pub b: Mat,
}

impl FeatureModel {
    pub fn new(x: Mat, b: Mat) -> Result<Self> {
        if !b.is_square() || b.nrows() != x.ncols() {
            return Err(Error::dims(format!(
                "features have {} columns but coefficients are {}x{}",
                x.ncols(),
                b.nrows(),
                b.ncols()
            )));
        }
        ensure_finite(&x, "features")?;
        ensure_finite(&b, "coefficients")?;
        Ok(FeatureModel { x, b })
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn d(&self) -> usize {
        self.x.ncols()
    }

    /// `M = X B X^T`.
    pub fn beliefs(&self) -> Mat {
        &self.x * &self.b * self.x.transpose()
    }

    /// `B + B^T`, the identifiable part of `B`.
    pub fn symmetric_coefficients(&self) -> Mat {
        &self.b + self.b.transpose()
    }
}

/// Robust-regression settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TorrentConfig {
    /// Fraction of responses that may be corrupted, in `[0, 1)`.
    pub beta: f64,
    pub max_iters: usize,
    /// Stop early once the active residual norm changes by at most this
    /// fraction between iterations.
    pub convergence_tol: f64,
}

impl TorrentConfig {
    pub fn new(beta: f64) -> Result<Self> {
        let cfg = TorrentConfig { beta, max_iters: 100, convergence_tol: 0.0 };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn with_max_iters(mut self, iters: usize) -> Result<Self> {
        self.max_iters = iters;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.beta) {
            return Err(Error::InvalidParameter(format!("corruption threshold must lie in [0, 1), got {}", self.beta)));
        }
        if self.max_iters == 0 {
            return Err(Error::InvalidParameter("iteration count must be positive".into()));
        }
        if !(self.convergence_tol >= 0.0) {
            return Err(Error::InvalidParameter("convergence tolerance must be non-negative".into()));
        }
        Ok(())
    }

    /// Threshold matching `s` corrupted agents out of `n`: `(2 n s - s^2) / n^2`.
    pub fn beta_for(n: usize, s: usize) -> f64 {
        let (n, s) = (n as f64, s as f64);
        (2.0 * n * s - s * s) / (n * n)
    }
}

/// `floor(beta * count)` with a guard against representation error.
pub fn corrupted_count(beta: f64, count: usize) -> usize {
    ((beta * count as f64) + FLOOR_GUARD).floor() as usize
}

/// Reported position sum `H' = 2 (Sigma W' Gamma + Gamma W' Sigma)`, the
/// exact inverse of the stable-network map.
pub fn recover_h(w_prime: &Mat, sigma: &Mat, gamma: &[f64]) -> Result<Mat> {
    let n = gamma.len();
    if w_prime.shape() != (n, n) || sigma.shape() != (n, n) {
        return Err(Error::dims(format!("network, covariance and {n} risk aversions disagree in size")));
    }
    ensure_finite(w_prime, "network")?;
    ensure_finite(sigma, "covariance")?;
    let g = linalg::diag(gamma);
    Ok((sigma * w_prime * &g + &g * w_prime * sigma) * 2.0)
}

/// Design whose coefficients are the upper triangle (diagonal included,
/// row-major) of a symmetric `C`: row `i + j n` holds the coefficients of
/// `x_i^T C x_j`.
pub fn symmetric_design(x: &Mat) -> Mat {
    let (n, d) = x.shape();
    let pairs: Vec<(usize, usize)> = (0..d).flat_map(|a| (a..d).map(move |b| (a, b))).collect();
    let mut design = Mat::zeros(n * n, pairs.len());
    for (c, &(a, b)) in pairs.iter().enumerate() {
        for j in 0..n {
            for i in 0..n {
                let v = if a == b { x[(i, a)] * x[(j, a)] } else { x[(i, a)] * x[(j, b)] + x[(i, b)] * x[(j, a)] };
                design[(i + j * n, c)] = v;
            }
        }
    }
    design
}

/// Upper triangle of a symmetric matrix in [`symmetric_design`] order.
pub fn pack_symmetric(c: &Mat) -> Vector {
    let d = c.nrows();
    Vector::from_iterator(d * (d + 1) / 2, (0..d).flat_map(|a| (a..d).map(move |b| c[(a, b)])))
}

pub fn unpack_symmetric(v: &Vector, d: usize) -> Result<Mat> {
    if v.len() != d * (d + 1) / 2 {
        return Err(Error::dims(format!("{} coefficients do not fill a symmetric {d}x{d} matrix", v.len())));
    }
    let mut c = Mat::zeros(d, d);
    let mut it = v.iter();
    for a in 0..d {
        for b in a..d {
            let e = *it.next().expect("length checked");
            c[(a, b)] = e;
            c[(b, a)] = e;
        }
    }
    Ok(c)
}

/// Least squares on the rows `rows` of `design`.
fn fit_rows(design: &Mat, y: &Vector, rows: &[usize]) -> Result<Vector> {
    let p = design.ncols();
    let sub = design.select_rows(rows);
    let rhs = y.select_rows(rows);
    let svd = sub.svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if rows.len() < p || !(smin > 1e-12 * smax) {
        return Err(Error::RankDeficientActiveSet { rows: rows.len(), cols: p });
    }
    svd.solve(&rhs, 0.0).map_err(|_| Error::RankDeficientActiveSet { rows: rows.len(), cols: p })
}

/// Ordinary least squares over every row.
pub fn least_squares(design: &Mat, y: &Vector) -> Result<Vector> {
    check_regression(design, y)?;
    fit_rows(design, y, &(0..design.nrows()).collect::<Vec<_>>())
}

fn check_regression(design: &Mat, y: &Vector) -> Result<()> {
    if design.nrows() != y.len() {
        return Err(Error::dims(format!("design has {} rows, response has {}", design.nrows(), y.len())));
    }
    ensure_finite(design, "design")?;
    if !y.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("response"));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct TorrentFit {
    pub coef: Vector,
    /// Final active rows, ascending.
    pub active_set: Vec<usize>,
    pub iterations: usize,
    /// Residual norm over the active rows after each fit.
    pub trace: Vec<f64>,
}

/// Fully corrective hard-thresholding regression. Starting from all rows,
/// alternately fit least squares on the active rows and keep the
/// `N - floor(beta N)` rows with the smallest absolute residuals (ties to the
/// lower index), until the active set repeats or `max_iters` fits are done.
pub fn torrent(design: &Mat, y: &Vector, cfg: &TorrentConfig) -> Result<TorrentFit> {
    cfg.validate()?;
    check_regression(design, y)?;
    let (rows, p) = design.shape();
    let keep = rows - corrupted_count(cfg.beta, rows);
    if keep < p {
        return Err(Error::InfeasibleThreshold { keep, rows, cols: p });
    }
    let mut active: Vec<usize> = (0..rows).collect();
    let mut trace = Vec::new();
    let mut coef;
    let mut iterations = 0;
    loop {
        coef = fit_rows(design, y, &active)?;
        iterations += 1;
        let resid = (design * &coef - y).abs();
        trace.push(active.iter().map(|&i| resid[i] * resid[i]).sum::<f64>().sqrt());
        let mut order: Vec<usize> = (0..rows).collect();
        order.sort_by(|&a, &b| resid[a].total_cmp(&resid[b]).then(a.cmp(&b)));
        let mut next = order[..keep].to_vec();
        next.sort_unstable();
        let stalled = match trace.as_slice() {
            [.., prev, last] => (prev - last).abs() <= cfg.convergence_tol * prev.max(f64::MIN_POSITIVE),
            _ => false,
        };
        if next == active || iterations >= cfg.max_iters || (cfg.convergence_tol > 0.0 && stalled) {
            active = next;
            break;
        }
        active = next;
    }
    Ok(TorrentFit { coef, active_set: active, iterations, trace })
}

/// How the strategic cluster is picked from the two spectral clusters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ClusterSelection {
    /// Cluster whose size is nearest `n (1 - sqrt(1 - beta))`, the strategic
    /// set size that produces `beta`.
    #[default]
    NearestSize,
    /// Positive-sign cluster if it is larger than that size, else the other.
    PositiveIfLarger,
}

#[derive(Debug, Clone)]
pub struct LearningEstimate {
    /// Estimate of `B + B^T`.
    pub b_hat_sym: Mat,
    /// Estimated strategic agents, ascending.
    pub s_hat: Vec<usize>,
    pub residuals: Mat,
    pub adjacency: Mat,
    pub active_set_trace: Vec<f64>,
    pub torrent_iterations: usize,
    /// Agents with a positive (sign-fixed) spectral coordinate; empty when
    /// clustering was skipped.
    pub positive_cluster: Vec<usize>,
    pub cluster_target: f64,
    /// `(sqrt(8 beta n) + 1) / 4`, kept for comparison with `cluster_target`.
    pub alternative_target: f64,
    /// True when the residuals were too small to split and `s_hat` is empty.
    pub short_circuit: bool,
}

/// Recovers `B + B^T` and the strategic set from an observed network `w_prime`.
/// Requires unit risk aversions.
pub fn estimate(
    w_prime: &Mat,
    risk: &RiskModel,
    x: &Mat,
    cfg: &TorrentConfig,
    selection: ClusterSelection,
) -> Result<LearningEstimate> {
    if let Some((agent, value)) = risk.is_unit_risk_aversion() {
        return Err(Error::UnsupportedRiskAversion { agent, value });
    }
    let n = risk.n();
    if x.nrows() != n {
        return Err(Error::dims(format!("features have {} rows for {n} agents", x.nrows())));
    }
    if linalg::asymmetry(w_prime) > 1e-9 {
        return Err(Error::AsymmetricInput { asymmetry: linalg::asymmetry(w_prime) });
    }
    let h = recover_h(w_prime, risk.sigma(), risk.gamma())?;
    let d = x.ncols();
    let fit = torrent(&symmetric_design(x), &linalg::vec(&h), cfg)?;
    let b_hat_sym = unpack_symmetric(&fit.coef, d)?;
    let residuals = (&h - x * &b_hat_sym * x.transpose()).abs();

    let m = corrupted_count(cfg.beta, n * n);
    let adjacency = top_entries(&residuals, m);
    let cluster_target = n as f64 * (1.0 - (1.0 - cfg.beta).sqrt());
    let alternative_target = ((8.0 * cfg.beta * n as f64).sqrt() + 1.0) / 4.0;

    let short_circuit = m == 0 || residuals.max() <= 1e-8 * h.norm();
    let (s_hat, positive_cluster) = if short_circuit {
        (Vec::new(), Vec::new())
    } else {
        let positive = spectral_split(&adjacency)?;
        let negative: Vec<usize> = (0..n).filter(|i| !positive.contains(i)).collect();
        let pick_positive = match selection {
            ClusterSelection::NearestSize => {
                (positive.len() as f64 - cluster_target).abs() <= (negative.len() as f64 - cluster_target).abs()
            }
            ClusterSelection::PositiveIfLarger => positive.len() as f64 > cluster_target,
        };
        (if pick_positive { positive.clone() } else { negative }, positive)
    };

    Ok(LearningEstimate {
        b_hat_sym,
        s_hat,
        residuals,
        adjacency,
        active_set_trace: fit.trace,
        torrent_iterations: fit.iterations,
        positive_cluster,
        cluster_target,
        alternative_target,
        short_circuit,
    })
}

/// 0/1 matrix marking the `count` largest entries of `r`; ties go to the
/// lexicographically smaller `(row, col)`.
pub fn top_entries(r: &Mat, count: usize) -> Mat {
    let (rows, cols) = r.shape();
    let mut idx: Vec<(usize, usize)> = (0..rows).cartesian_product(0..cols).collect();
    idx.sort_by(|&(i, j), &(k, l)| r[(k, l)].total_cmp(&r[(i, j)]).then((i, j).cmp(&(k, l))));
    let mut a = Mat::zeros(rows, cols);
    for &(i, j) in idx.iter().take(count) {
        a[(i, j)] = 1.0;
    }
    a
}

/// Agents with a positive coordinate in the eigenvector of the algebraically
/// least non-zero eigenvalue of the symmetrized adjacency. The eigenvector
/// sign is fixed so its largest-magnitude entry (lowest index on ties) is positive.
pub fn spectral_split(adjacency: &Mat) -> Result<Vec<usize>> {
    let sym = (adjacency + adjacency.transpose()) * 0.5;
    let eig = linalg::sym_eig(&sym)?;
    let scale = eig.values.abs().max();
    let Some(idx) = eig.values.iter().position(|v| v.abs() > 1e-9 * scale) else {
        return Ok(Vec::new());
    };
    let mut v = eig.vectors.column(idx).into_owned();
    let lead = v.iter().map(|e| e.abs()).position_max_by(|a, b| a.total_cmp(b)).unwrap_or(0);
    let lead = v.iter().position(|e| (e.abs() - v[lead].abs()).abs() <= 1e-12).unwrap_or(lead);
    if v[lead] < 0.0 {
        v.neg_mut();
    }
    Ok(v.iter().positions(|&e| e > 0.0).collect())
}

/// Subset strong convexity and smoothness constants of the balanced
/// two-block design at level `gamma_level`: `(n^2 (1/4 - gamma), gamma n^2)`.
pub fn ssc_sss_sbm(n: usize, gamma_level: f64) -> (f64, f64) {
    let n2 = (n * n) as f64;
    (n2 * (0.25 - gamma_level), gamma_level * n2)
}

/// Exhaustive subset strong convexity and smoothness constants: the least
/// `lambda_min(X_S^T X_S)` over row subsets of size `ceil((1 - gamma) N)` and
/// the largest `lambda_max(X_S^T X_S)` over subsets of size `floor(gamma N)`.
pub fn ssc_sss_bruteforce(design: &Mat, gamma_level: f64) -> Result<(f64, f64)> {
    let (rows, p) = design.shape();
    if rows > BRUTEFORCE_LIMIT {
        return Err(Error::ProblemTooLarge { n: rows, limit: BRUTEFORCE_LIMIT });
    }
    if !(0.0..=1.0).contains(&gamma_level) {
        return Err(Error::InvalidParameter(format!("level must lie in [0, 1], got {gamma_level}")));
    }
    let big = (((1.0 - gamma_level) * rows as f64) - FLOOR_GUARD).ceil().max(0.0) as usize;
    let small = corrupted_count(gamma_level, rows);
    let gram_eig = |subset: &[usize]| -> Result<linalg::SymEig> {
        if subset.is_empty() {
            return Ok(linalg::SymEig { values: Vector::zeros(p), vectors: Mat::identity(p, p) });
        }
        let xs = design.select_rows(subset);
        linalg::sym_eig(&(xs.transpose() * xs))
    };
    let mut lo = f64::INFINITY;
    for subset in (0..rows).combinations(big) {
        lo = lo.min(gram_eig(&subset)?.values[0]);
    }
    let mut hi = f64::NEG_INFINITY;
    for subset in (0..rows).combinations(small) {
        hi = hi.max(gram_eig(&subset)?.values[p - 1]);
    }
    Ok((lo, hi))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metrics {
    /// `||C_hat - C||_F / ||C||_F` with `C = B + B^T`, or the absolute error
    /// when `C = 0`.
    pub norm_err: f64,
    pub relative: bool,
    pub balanced_acc: f64,
}

/// Regression error of `b_hat_sym` and balanced accuracy of `s_hat` (strategic
/// agents are the positive class). With no strategic agents the accuracy is
/// the true negative rate; with all agents strategic it is the true positive rate.
pub fn metrics(b_hat_sym: &Mat, s_hat: &[usize], truth: &FeatureModel, s_true: &[usize]) -> Result<Metrics> {
    let c = truth.symmetric_coefficients();
    if b_hat_sym.shape() != c.shape() {
        return Err(Error::dims("estimated and true coefficients differ in size"));
    }
    let n = truth.n();
    if let Some(&bad) = s_hat.iter().chain(s_true).find(|&&i| i >= n) {
        return Err(Error::IndexOutOfRange { index: bad, n });
    }
    let err = (b_hat_sym - &c).norm();
    let scale = c.norm();
    let (norm_err, relative) = if scale > 0.0 { (err / scale, true) } else { (err, false) };

    let truth_set: std::collections::BTreeSet<usize> = s_true.iter().copied().collect();
    let est: std::collections::BTreeSet<usize> = s_hat.iter().copied().collect();
    let pos = truth_set.len();
    let neg = n - pos;
    let tp = est.intersection(&truth_set).count();
    let tn = (0..n).filter(|i| !est.contains(i) && !truth_set.contains(i)).count();
    let balanced_acc = match (pos, neg) {
        (0, 0) => 1.0,
        (0, _) => tn as f64 / neg as f64,
        (_, 0) => tp as f64 / pos as f64,
        _ => 0.5 * (tp as f64 / pos as f64 + tn as f64 / neg as f64),
    };
    Ok(Metrics { norm_err, relative, balanced_acc })
}
