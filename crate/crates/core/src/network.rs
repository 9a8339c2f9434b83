//! Network settings, the stable contract network and agent utilities.
//!
//! Agent `i` holds contracts `w_i = W e_i`, believes they return `mu_i`
//! (column `i` of `M`) with covariance `Sigma`, and pays `P[(j, i)]` per unit
//! of contract to agent `j`. Its mean-variance utility is
//! `w_i^T (mu_i - P e_i) - gamma_i w_i^T Sigma w_i`.

use crate::error::{Error, Result};
use crate::linalg::{self, ensure_finite, KronSumSolver, Mat, Vector};

/// Relative eigenvalue floor below which a covariance is rejected.
pub const PD_TOL: f64 = 1e-12;

/// The belief-independent part of a setting: covariance and risk aversions.
#[derive(Debug, Clone)]
pub struct RiskModel {
    sigma: Mat,
    gamma: Vec<f64>,
    solver: KronSumSolver,
}

impl RiskModel {
    pub fn new(sigma: Mat, gamma: Vec<f64>) -> Result<Self> {
        if !sigma.is_square() || sigma.nrows() != gamma.len() {
            return Err(Error::dims(format!(
                "covariance is {}x{} but {} risk aversions were given",
                sigma.nrows(),
                sigma.ncols(),
                gamma.len()
            )));
        }
        ensure_finite(&sigma, "covariance")?;
        for (agent, &value) in gamma.iter().enumerate() {
            if !(value > 0.0 && value.is_finite()) {
                return Err(Error::NonPositiveRiskAversion { agent, value });
            }
        }
        let eig = linalg::sym_eig(&sigma)?;
        let n = gamma.len();
        if n > 0 {
            let lo = eig.values[0];
            let hi = eig.values[n - 1];
            if lo <= PD_TOL * hi.abs().max(f64::MIN_POSITIVE) {
                return Err(Error::NotPositiveDefinite { min_eigenvalue: lo });
            }
        }
        let sigma = (&sigma + sigma.transpose()) * 0.5;
        let solver = KronSumSolver::new(&sigma, &gamma)?;
        Ok(RiskModel { sigma, gamma, solver })
    }

    pub fn n(&self) -> usize {
        self.gamma.len()
    }

    pub fn sigma(&self) -> &Mat {
        &self.sigma
    }

    pub fn gamma(&self) -> &[f64] {
        &self.gamma
    }

    pub fn gamma_matrix(&self) -> Mat {
        linalg::diag(&self.gamma)
    }

    pub fn solver(&self) -> &KronSumSolver {
        &self.solver
    }

    /// Contracts induced by the symmetric position sum `h = M' + M'^T`:
    /// the `W` with `Sigma W Gamma + Gamma W Sigma = h / 2`.
    pub fn contracts_from_h(&self, h: &Mat) -> Mat {
        let w = self.solver.solve(&(h * 0.5));
        (&w + w.transpose()) * 0.5
    }

    /// Inverse of [`RiskModel::contracts_from_h`]: `2 (Sigma W Gamma + Gamma W Sigma)`.
    pub fn h_from_contracts(&self, w: &Mat) -> Mat {
        let g = self.gamma_matrix();
        (&self.sigma * w * &g + &g * w * &self.sigma) * 2.0
    }

    /// Stable network for negotiating positions `reported`.
    pub fn stable_network(&self, reported: &Mat) -> Result<StableNetwork> {
        self.check_square(reported, "negotiating positions")?;
        ensure_finite(reported, "negotiating positions")?;
        let w = self.contracts_from_h(&(reported + reported.transpose()));

        let sigma_inv = self.solver.sigma_inverse();
        let gamma_inv = linalg::diag(&self.gamma.iter().map(|g| 1.0 / g).collect::<Vec<_>>());
        let rhs = &sigma_inv * reported * &gamma_inv - &gamma_inv * reported.transpose() * &sigma_inv;
        let p = self.solver.solve_inverse_sum(&rhs);
        let p = (&p - p.transpose()) * 0.5;
        Ok(StableNetwork { w, p })
    }

    fn check_square(&self, m: &Mat, what: &str) -> Result<()> {
        let n = self.n();
        if m.shape() != (n, n) {
            return Err(Error::dims(format!("{what} is {}x{}, expected {n}x{n}", m.nrows(), m.ncols())));
        }
        Ok(())
    }

    pub fn is_unit_risk_aversion(&self) -> Option<(usize, f64)> {
        self.gamma.iter().enumerate().find(|(_, &g)| (g - 1.0).abs() > 1e-12).map(|(i, &g)| (i, g))
    }
}

/// True beliefs `(M, Gamma, Sigma)` together with the strategic set `S`.
#[derive(Debug, Clone)]
pub struct NetworkSetting {
    risk: RiskModel,
    m: Mat,
    strategic: Vec<usize>,
}

impl NetworkSetting {
    pub fn new(m: Mat, gamma: Vec<f64>, sigma: Mat, strategic: Vec<usize>) -> Result<Self> {
        Self::from_risk(RiskModel::new(sigma, gamma)?, m, strategic)
    }

    pub fn from_risk(risk: RiskModel, m: Mat, strategic: Vec<usize>) -> Result<Self> {
        risk.check_square(&m, "belief matrix")?;
        ensure_finite(&m, "belief matrix")?;
        let strategic = validate_strategic(strategic, risk.n())?;
        Ok(NetworkSetting { risk, m, strategic })
    }

    pub fn with_strategic(&self, strategic: Vec<usize>) -> Result<Self> {
        Self::from_risk(self.risk.clone(), self.m.clone(), strategic)
    }

    pub fn with_beliefs(&self, m: Mat) -> Result<Self> {
        Self::from_risk(self.risk.clone(), m, self.strategic.clone())
    }

    pub fn n(&self) -> usize {
        self.risk.n()
    }

    pub fn m(&self) -> &Mat {
        &self.m
    }

    pub fn sigma(&self) -> &Mat {
        self.risk.sigma()
    }

    pub fn gamma(&self) -> &[f64] {
        self.risk.gamma()
    }

    /// Strategic agents, ascending.
    pub fn strategic(&self) -> &[usize] {
        &self.strategic
    }

    pub fn risk(&self) -> &RiskModel {
        &self.risk
    }

    /// Stable network when every agent reports its true beliefs.
    pub fn honest_network(&self) -> StableNetwork {
        self.risk.stable_network(&self.m).expect("belief matrix validated at construction")
    }

    pub(crate) fn check_agent(&self, i: usize) -> Result<()> {
        if i < self.n() {
            Ok(())
        } else {
            Err(Error::IndexOutOfRange { index: i, n: self.n() })
        }
    }
}

fn validate_strategic(mut strategic: Vec<usize>, n: usize) -> Result<Vec<usize>> {
    if let Some(&bad) = strategic.iter().find(|&&k| k >= n) {
        return Err(Error::InvalidStrategicSet(format!("agent {bad} out of range for {n} agents")));
    }
    strategic.sort_unstable();
    if strategic.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::InvalidStrategicSet("duplicate agent".into()));
    }
    Ok(strategic)
}

/// Contracts `W = W^T` and per-unit payments `P = -P^T`.
#[derive(Debug, Clone, PartialEq)]
pub struct StableNetwork {
    pub w: Mat,
    pub p: Mat,
}

impl StableNetwork {
    pub fn contracts_of(&self, i: usize) -> Vector {
        self.w.column(i).into_owned()
    }
}

/// Unique stable network for negotiating positions `reported` (`M'`).
///
/// `vec(W) = 1/2 K^{-1} vec(M' + M'^T)` with `K = Gamma (x) Sigma + Sigma (x) Gamma`,
/// and `vec(P) = (Gamma^{-1} (x) Sigma^{-1} + Sigma^{-1} (x) Gamma^{-1})^{-1}
/// vec(Sigma^{-1} M' Gamma^{-1} - Gamma^{-1} M'^T Sigma^{-1})`. Both systems are
/// solved in the eigenbasis of `Gamma^{-1/2} Sigma Gamma^{-1/2}`.
pub fn stable_network(setting: &NetworkSetting, reported: &Mat) -> Result<StableNetwork> {
    setting.risk.stable_network(reported)
}

/// Same network as [`stable_network`], computed by LU-solving the dense
/// `n^2 x n^2` Kronecker-sum systems. Refused for `n` above the dense limit.
pub fn stable_network_kron(setting: &NetworkSetting, reported: &Mat) -> Result<StableNetwork> {
    let risk = &setting.risk;
    risk.check_square(reported, "negotiating positions")?;
    ensure_finite(reported, "negotiating positions")?;
    let n = risk.n();
    let g = risk.gamma_matrix();
    let k = linalg::kron_sum(&g, risk.sigma())?;
    let h = reported + reported.transpose();
    let w = k.lu().solve(&(linalg::vec(&h) * 0.5)).ok_or(Error::NotPositiveDefinite { min_eigenvalue: 0.0 })?;

    let sigma_inv = risk.sigma().clone().try_inverse().ok_or(Error::NotPositiveDefinite { min_eigenvalue: 0.0 })?;
    let gamma_inv = linalg::diag(&risk.gamma().iter().map(|v| 1.0 / v).collect::<Vec<_>>());
    let k_inv_sum = linalg::kron_sum(&gamma_inv, &sigma_inv)?;
    let rhs = &sigma_inv * reported * &gamma_inv - &gamma_inv * reported.transpose() * &sigma_inv;
    let p = k_inv_sum.lu().solve(&linalg::vec(&rhs)).ok_or(Error::NotPositiveDefinite { min_eigenvalue: 0.0 })?;
    Ok(StableNetwork { w: linalg::unvec(&w, n, n)?, p: linalg::unvec(&p, n, n)? })
}

/// Agent `i`'s utility at `net`, always evaluated with its true beliefs.
pub fn utility(setting: &NetworkSetting, net: &StableNetwork, i: usize) -> Result<f64> {
    setting.check_agent(i)?;
    check_network(setting, net)?;
    let w = net.w.column(i);
    let mu = setting.m.column(i);
    let pay = net.p.column(i);
    let quad = (setting.sigma() * w).dot(&w);
    Ok(w.dot(&(mu - pay)) - setting.gamma()[i] * quad)
}

/// Agent `k`'s utility at a stable network it reached by reporting
/// `mu_k + delta_k`: `-<delta_k, w'_k> + gamma_k <Sigma w'_k, w'_k>`.
pub fn strategic_utility(
    setting: &NetworkSetting,
    delta_k: &Vector,
    net_prime: &StableNetwork,
    k: usize,
) -> Result<f64> {
    setting.check_agent(k)?;
    check_network(setting, net_prime)?;
    if delta_k.len() != setting.n() {
        return Err(Error::dims(format!("deviation has length {}, expected {}", delta_k.len(), setting.n())));
    }
    Ok(deviation_utility(setting.risk(), delta_k, &net_prime.w.column(k).into_owned(), k))
}

/// `-<delta_k, w_k> + gamma_k <Sigma w_k, w_k>` from raw vectors.
pub fn deviation_utility(risk: &RiskModel, delta_k: &Vector, w_k: &Vector, k: usize) -> f64 {
    -delta_k.dot(w_k) + risk.gamma()[k] * (risk.sigma() * w_k).dot(w_k)
}

fn check_network(setting: &NetworkSetting, net: &StableNetwork) -> Result<()> {
    let n = setting.n();
    if net.w.shape() != (n, n) || net.p.shape() != (n, n) {
        return Err(Error::dims(format!("network is not {n}x{n}")));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rho_sigma(rho: f64) -> Mat {
        Mat::from_row_slice(2, 2, &[1.0, rho, rho, 1.0])
    }

    #[test]
    fn identity_risk_gives_quarter_contracts() {
        let m = Mat::from_row_slice(3, 3, &[1.0, 2.0, -1.0, 0.5, 0.0, 3.0, -2.0, 1.0, 4.0]);
        let s = NetworkSetting::new(m.clone(), vec![1.0; 3], Mat::identity(3, 3), vec![]).unwrap();
        let net = stable_network(&s, &m).unwrap();
        assert!((&net.w - (&m + m.transpose()) / 4.0).norm() < 1e-14);
        assert!((&net.p - (&m - m.transpose()) / 2.0).norm() < 1e-14);
    }

    #[test]
    fn single_agent_first_order_condition() {
        let (mu, gamma, sigma) = (3.0, 2.0, 0.5);
        let s = NetworkSetting::new(Mat::from_element(1, 1, mu), vec![gamma], Mat::from_element(1, 1, sigma), vec![])
            .unwrap();
        let net = s.honest_network();
        assert_close!(net.w[(0, 0)], mu / (2.0 * gamma * sigma), 1e-14);
        assert_eq!(net.p[(0, 0)], 0.0);
        assert_close!(utility(&s, &net, 0).unwrap(), mu * mu / (4.0 * gamma * sigma), 1e-13);
    }

    #[test]
    fn zero_contracts_give_zero_utility() {
        let s = NetworkSetting::new(Mat::identity(2, 2), vec![1.0, 2.0], rho_sigma(0.3), vec![]).unwrap();
        let net = StableNetwork { w: Mat::zeros(2, 2), p: Mat::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0]) };
        for i in 0..2 {
            assert_eq!(utility(&s, &net, i).unwrap(), 0.0);
        }
        assert!(matches!(utility(&s, &net, 2), Err(Error::IndexOutOfRange { index: 2, n: 2 })));
    }

    #[test]
    fn strategic_utility_two_agents_unit_risk() {
        let s = NetworkSetting::new(Mat::identity(2, 2), vec![1.0; 2], Mat::identity(2, 2), vec![1]).unwrap();
        let delta = Vector::from_column_slice(&[1.0, 0.0]);
        let mut reported = s.m().clone();
        reported.column_mut(1).axpy(1.0, &delta, 1.0);
        let net = stable_network(&s, &reported).unwrap();
        let direct = utility(&s, &net, 1).unwrap();
        let via_deviation = strategic_utility(&s, &delta, &net, 1).unwrap();
        assert_close!(direct, via_deviation, 1e-14);
    }

    #[test]
    fn construction_rejects_bad_inputs() {
        let eye = Mat::identity(2, 2);
        assert!(matches!(
            NetworkSetting::new(eye.clone(), vec![1.0, -1.0], eye.clone(), vec![]),
            Err(Error::NonPositiveRiskAversion { agent: 1, .. })
        ));
        assert!(matches!(
            NetworkSetting::new(eye.clone(), vec![1.0; 2], rho_sigma(1.0), vec![]),
            Err(Error::NotPositiveDefinite { .. })
        ));
        assert!(matches!(
            NetworkSetting::new(eye.clone(), vec![1.0; 2], eye.clone(), vec![1, 1]),
            Err(Error::InvalidStrategicSet(_))
        ));
        assert!(matches!(
            NetworkSetting::new(eye.clone(), vec![1.0; 2], eye.clone(), vec![2]),
            Err(Error::InvalidStrategicSet(_))
        ));
        let mut bad = eye.clone();
        bad[(0, 1)] = f64::NAN;
        assert!(matches!(NetworkSetting::new(bad, vec![1.0; 2], eye, vec![]), Err(Error::NonFinite(_))));
    }

    #[test]
    fn strategic_set_is_sorted() {
        let s = NetworkSetting::new(Mat::identity(3, 3), vec![1.0; 3], Mat::identity(3, 3), vec![2, 0]).unwrap();
        assert_eq!(s.strategic(), &[0, 2]);
    }
}
