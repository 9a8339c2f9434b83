//! Best responses and Nash equilibria of the negotiation game.
//!
//! A deviation `Delta` (column `k` is agent `k`'s misreport, zero off the
//! strategic set) moves contracts by `vec(W' - W) = L vec(Delta)` with
//! `L = 1/2 (K^{-1} + K^{-1} Pi)`, so `w'_k - w_k = sum_j L^{(k,j)} delta_j`
//! where `L^{(k,j)}` is the `n x n` block at block-row `k`, block-column `j`.
//! Setting the gradient of agent `k`'s utility to zero gives
//! `T^{(k,k)} delta_k + sum_{j != k} T^{(k,j)} delta_j = y_k` with
//!
//! - `T^{(k,k)} = L + L^T - 2 gamma_k L^T Sigma L` for `L = L^{(k,k)}`,
//! - `T^{(k,j)} = (I - 2 gamma_k L^{(k,k)T} Sigma) L^{(k,j)}`,
//! - `y_k = (2 gamma_k L^{(k,k)T} Sigma - I) w_k`, `w_k` the honest contracts.
//!
//! Every block is assembled in the eigenbasis of the risk model, so `K` and
//! `L` are only materialized on request.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::linalg::{self, solve_affine, AffineSolutionSet, Mat, Vector, DEFAULT_RANK_TOL};
use crate::network::{NetworkSetting, RiskModel};

/// Relative least-squares residual above which the stacked system has no solution.
pub const EQUILIBRIUM_TOL: f64 = 1e-8;

/// Stacked systems larger than this are solved by LU with a pivot-ratio rank
/// check instead of a full SVD.
pub const SVD_SIZE_LIMIT: usize = 600;

/// Operators of the equilibrium system for one setting.
#[derive(Debug, Clone)]
pub struct LktOperators {
    risk: RiskModel,
    strategic: Vec<usize>,
    l_blocks: BTreeMap<(usize, usize), Mat>,
    t_blocks: BTreeMap<(usize, usize), Mat>,
    y_vecs: BTreeMap<usize, Vector>,
}

impl LktOperators {
    pub fn n(&self) -> usize {
        self.risk.n()
    }

    pub fn strategic(&self) -> &[usize] {
        &self.strategic
    }

    pub fn l_block(&self, k: usize, j: usize) -> Option<&Mat> {
        self.l_blocks.get(&(k, j))
    }

    pub fn t_block(&self, k: usize, j: usize) -> Option<&Mat> {
        self.t_blocks.get(&(k, j))
    }

    pub fn y(&self, k: usize) -> Option<&Vector> {
        self.y_vecs.get(&k)
    }

    /// Dense `K = Gamma (x) Sigma + Sigma (x) Gamma`.
    pub fn k_matrix(&self) -> Result<Mat> {
        linalg::kron_sum(&self.risk.gamma_matrix(), self.risk.sigma())
    }

    /// Dense `L`, from solving `K Z = 1/2 (I + Pi)`.
    pub fn l_matrix(&self) -> Result<Mat> {
        let k = self.k_matrix()?;
        let n2 = k.nrows();
        let pi = linalg::commutation_matrix(self.n()).to_dense();
        let rhs = (Mat::identity(n2, n2) + pi) * 0.5;
        k.lu().solve(&rhs).ok_or(Error::NotPositiveDefinite { min_eigenvalue: 0.0 })
    }

    /// `(T_S, y_S)` over the strategic agents in ascending order.
    pub fn stacked_system(&self) -> (Mat, Vector) {
        let n = self.n();
        let s = self.strategic.len();
        let mut t = Mat::zeros(n * s, n * s);
        let mut y = Vector::zeros(n * s);
        for (a, &k) in self.strategic.iter().enumerate() {
            y.rows_mut(a * n, n).copy_from(&self.y_vecs[&k]);
            for (b, &j) in self.strategic.iter().enumerate() {
                t.view_mut((a * n, b * n), (n, n)).copy_from(&self.t_blocks[&(k, j)]);
            }
        }
        (t, y)
    }
}

/// Block `L^{(k,j)}` of the response map, built from the spectral data of the
/// risk model without forming `L`.
///
/// With `U = Gamma^{-1/2} V`, `u_k` the `k`-th row of `U` and
/// `F_ab = 1 / (2 (lambda_a + lambda_b))`:
/// `L^{(k,j)} = U [diag(F (u_k o u_j)) + diag(u_j) F diag(u_k)] U^T`.
pub fn l_block(risk: &RiskModel, k: usize, j: usize) -> Mat {
    let solver = risk.solver();
    let u = solver.scaled_eigenvectors();
    let lam = solver.eigenvalues();
    let n = risk.n();
    let f = Mat::from_fn(n, n, |a, b| 0.5 / (lam[a] + lam[b]));
    let uk = u.row(k).transpose();
    let uj = u.row(j).transpose();
    let mut core = Mat::from_fn(n, n, |a, b| uj[a] * f[(a, b)] * uk[b]);
    let d1 = &f * uk.component_mul(&uj);
    for a in 0..n {
        core[(a, a)] += d1[a];
    }
    u * core * u.transpose()
}

fn best_response_factor(risk: &RiskModel, l_kk: &Mat, k: usize) -> Mat {
    l_kk.transpose() * risk.sigma() * (2.0 * risk.gamma()[k])
}

fn y_from_contracts(risk: &RiskModel, l_kk: &Mat, k: usize, w_k: &Vector) -> Vector {
    let n = risk.n();
    (best_response_factor(risk, l_kk, k) - Mat::identity(n, n)) * w_k
}

/// L, T and y blocks for the strategic agents of `risk`, with `y_k` built from
/// the honest contracts `honest(k)`.
fn build_operators(risk: &RiskModel, strategic: &[usize], mut honest: impl FnMut(usize) -> Vector) -> LktOperators {
    let n = risk.n();
    let mut l_blocks = BTreeMap::new();
    for &k in strategic {
        for &j in strategic {
            l_blocks.insert((k, j), l_block(risk, k, j));
        }
    }
    let mut t_blocks = BTreeMap::new();
    let mut y_vecs = BTreeMap::new();
    for &k in strategic {
        let l_kk = &l_blocks[&(k, k)];
        let c = best_response_factor(risk, l_kk, k);
        let shift = Mat::identity(n, n) - &c;
        for &j in strategic {
            let block = if j == k { l_kk + l_kk.transpose() - &c * l_kk } else { &shift * &l_blocks[&(k, j)] };
            t_blocks.insert((k, j), block);
        }
        y_vecs.insert(k, y_from_contracts(risk, l_kk, k, &honest(k)));
    }
    LktOperators { risk: risk.clone(), strategic: strategic.to_vec(), l_blocks, t_blocks, y_vecs }
}

/// Equilibrium operators for `setting`.
pub fn lkt(setting: &NetworkSetting) -> Result<LktOperators> {
    let honest = setting.honest_network();
    Ok(build_operators(setting.risk(), setting.strategic(), |k| honest.contracts_of(k)))
}

/// Operators when beliefs are known only through `h = M + M^T`.
pub fn lkt_from_h(risk: &RiskModel, h: &Mat, strategic: &[usize]) -> Result<LktOperators> {
    let n = risk.n();
    if h.shape() != (n, n) {
        return Err(Error::dims(format!("position sum is {}x{}, expected {n}x{n}", h.nrows(), h.ncols())));
    }
    linalg::ensure_finite(h, "position sum")?;
    let strategic = checked_strategic(strategic, n)?;
    let w = risk.contracts_from_h(h);
    Ok(build_operators(risk, &strategic, |k| w.column(k).into_owned()))
}

fn checked_strategic(strategic: &[usize], n: usize) -> Result<Vec<usize>> {
    let mut s = strategic.to_vec();
    s.sort_unstable();
    s.dedup();
    if s.len() != strategic.len() {
        return Err(Error::InvalidStrategicSet("duplicate agent".into()));
    }
    if let Some(&bad) = s.iter().find(|&&k| k >= n) {
        return Err(Error::InvalidStrategicSet(format!("agent {bad} out of range for {n} agents")));
    }
    Ok(s)
}

/// Agent `k`'s best responses given the expected deviations of the other
/// strategic agents. Only first moments matter: the variance of another
/// agent's deviation drops out of the gradient. Agents absent from
/// `mean_others` are taken to deviate by zero in expectation.
pub fn best_response(
    setting: &NetworkSetting,
    ops: &LktOperators,
    k: usize,
    mean_others: &BTreeMap<usize, Vector>,
) -> Result<AffineSolutionSet> {
    let n = setting.n();
    if ops.n() != n {
        return Err(Error::dims("operators were built for a different number of agents"));
    }
    let y = ops.y(k).ok_or_else(|| Error::InvalidStrategicSet(format!("agent {k} is not strategic")))?;
    let mut rhs = y.clone();
    for (&j, mean) in mean_others {
        if j == k {
            continue;
        }
        let t = ops.t_block(k, j).ok_or_else(|| Error::InvalidStrategicSet(format!("agent {j} is not strategic")))?;
        if mean.len() != n {
            return Err(Error::dims(format!("expected deviation of agent {j} has length {}", mean.len())));
        }
        rhs -= t * mean;
    }
    solve_affine(&ops.t_blocks[&(k, k)], &rhs, DEFAULT_RANK_TOL)
}

/// Equilibrium deviations: a particular solution embedded in an `n x n`
/// matrix plus the full solution family over the stacked strategic columns.
#[derive(Debug, Clone)]
pub struct NashSolution {
    /// Particular equilibrium; columns outside the strategic set are zero.
    pub delta: Mat,
    pub family: AffineSolutionSet,
    pub exists: bool,
    pub strategic: Vec<usize>,
}

impl NashSolution {
    /// Turns a missing equilibrium into [`Error::NoEquilibrium`].
    pub fn into_result(self) -> Result<Self> {
        if self.exists {
            Ok(self)
        } else {
            Err(Error::NoEquilibrium { residual: self.family.residual })
        }
    }

    /// Reported positions `M + Delta`.
    pub fn reported(&self, m: &Mat) -> Mat {
        m + &self.delta
    }

    /// Equilibrium in the family at the given nullspace coordinates.
    pub fn delta_at(&self, coeffs: &[f64]) -> Mat {
        embed(&self.family.point(coeffs), self.delta.nrows(), &self.strategic)
    }
}

fn embed(x: &Vector, n: usize, strategic: &[usize]) -> Mat {
    let mut delta = Mat::zeros(n, n);
    for (a, &k) in strategic.iter().enumerate() {
        delta.set_column(k, &x.rows(a * n, n));
    }
    delta
}

/// Solves the stacked system of `ops`.
pub fn solve_operators(ops: &LktOperators) -> Result<NashSolution> {
    let n = ops.n();
    let strategic = ops.strategic.clone();
    if strategic.is_empty() {
        return Ok(NashSolution {
            delta: Mat::zeros(n, n),
            family: AffineSolutionSet {
                particular: Vector::zeros(0),
                nullspace_basis: Vec::new(),
                consistent: true,
                residual: 0.0,
            },
            exists: true,
            strategic,
        });
    }
    let (t, y) = ops.stacked_system();
    let mut family = if t.nrows() > SVD_SIZE_LIMIT {
        match solve_nonsingular(&t, &y) {
            Some(f) => f,
            None => solve_affine(&t, &y, DEFAULT_RANK_TOL)?,
        }
    } else {
        solve_affine(&t, &y, DEFAULT_RANK_TOL)?
    };
    let exists = family.residual <= EQUILIBRIUM_TOL * (1.0 + y.norm());
    family.consistent = exists;
    Ok(NashSolution { delta: embed(&family.particular, n, &strategic), family, exists, strategic })
}

/// LU solve for large systems whose pivots show no sign of rank loss.
fn solve_nonsingular(t: &Mat, y: &Vector) -> Option<AffineSolutionSet> {
    let lu = t.clone().full_piv_lu();
    let u = lu.u();
    let pivots = u.diagonal().map(f64::abs);
    let max = pivots.max();
    if !(max > 0.0) || pivots.min() <= DEFAULT_RANK_TOL * max {
        return None;
    }
    let x = lu.solve(y)?;
    let residual = (t * &x - y).norm();
    Some(AffineSolutionSet { particular: x, nullspace_basis: Vec::new(), consistent: true, residual })
}

/// All Nash equilibria of `setting`. With no strategic agents the unique
/// equilibrium is `Delta = 0`.
pub fn nash_equilibria(setting: &NetworkSetting) -> Result<NashSolution> {
    solve_operators(&lkt(setting)?)
}

/// Equilibria when agent `k` best-responds to its own expectation
/// `expected_m[k]` of the belief matrix. Missing entries default to the true `M`.
pub fn nash_equilibria_stochastic(setting: &NetworkSetting, expected_m: &BTreeMap<usize, Mat>) -> Result<NashSolution> {
    let n = setting.n();
    let risk = setting.risk();
    for (&k, e) in expected_m {
        if !setting.strategic().contains(&k) {
            return Err(Error::InvalidStrategicSet(format!("agent {k} is not strategic")));
        }
        if e.shape() != (n, n) {
            return Err(Error::dims(format!("expected beliefs of agent {k} are {}x{}", e.nrows(), e.ncols())));
        }
        linalg::ensure_finite(e, "expected beliefs")?;
    }
    let honest = setting.honest_network();
    let ops = build_operators(risk, setting.strategic(), |k| match expected_m.get(&k) {
        Some(e) => risk.contracts_from_h(&(e + e.transpose())).column(k).into_owned(),
        None => honest.contracts_of(k),
    });
    solve_operators(&ops)
}

/// Equilibria when beliefs are known only through `h = M + M^T`.
pub fn nash_from_h(risk: &RiskModel, h: &Mat, strategic: &[usize]) -> Result<NashSolution> {
    solve_operators(&lkt_from_h(risk, h, strategic)?)
}

/// Contract-shift matrix `B` with `w'_k - w_k = B delta_k` when only agent `k`
/// deviates: `B = gamma_k^{-1} U A U^T` where `A_ii = V_ki^2 / (4 lambda_i) +
/// sum_l V_kl^2 / (2 (lambda_i + lambda_l))` and
/// `A_ij = V_ki V_kj / (2 (lambda_i + lambda_j))` off the diagonal.
pub fn contract_shift(setting: &NetworkSetting, k: usize) -> Result<Mat> {
    setting.check_agent(k)?;
    let solver = setting.risk().solver();
    let a = shift_core(setting.risk(), k);
    let u = solver.scaled_eigenvectors();
    Ok(u * a * u.transpose() / setting.gamma()[k])
}

fn shift_core(risk: &RiskModel, k: usize) -> Mat {
    let solver = risk.solver();
    let v = solver.eigenvectors();
    let lam = solver.eigenvalues();
    let n = risk.n();
    Mat::from_fn(n, n, |i, j| {
        if i == j {
            v[(k, i)].powi(2) / (4.0 * lam[i])
                + (0..n).map(|l| v[(k, l)].powi(2) / (2.0 * (lam[i] + lam[l]))).sum::<f64>()
        } else {
            v[(k, i)] * v[(k, j)] / (2.0 * (lam[i] + lam[j]))
        }
    })
}

/// Eigenvalues (ascending) of `Lambda^{1/2} A Lambda^{1/2}` for agent `k`.
pub fn shift_spectrum(setting: &NetworkSetting, k: usize) -> Result<Vector> {
    setting.check_agent(k)?;
    let lam = setting.risk().solver().eigenvalues();
    let root = lam.map(f64::sqrt);
    let a = shift_core(setting.risk(), k);
    let kt = Mat::from_fn(a.nrows(), a.ncols(), |i, j| root[i] * a[(i, j)] * root[j]);
    Ok(linalg::sym_eig(&((&kt + kt.transpose()) * 0.5))?.values)
}

/// Hessian of agent `k`'s utility in its own deviation, `-2 (B - gamma_k B Sigma B)`,
/// and the negated largest Hessian eigenvalue. A positive second value
/// certifies strict concavity.
pub fn concavity_certificate(setting: &NetworkSetting, k: usize) -> Result<(Mat, f64)> {
    let b = contract_shift(setting, k)?;
    let b = (&b + b.transpose()) * 0.5;
    let hessian = (&b * setting.sigma() * &b * setting.gamma()[k] - &b) * 2.0;
    let hessian = (&hessian + hessian.transpose()) * 0.5;
    let top = linalg::sym_eig(&hessian)?.values.max();
    Ok((hessian, -top))
}
