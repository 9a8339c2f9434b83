//! Seeded synthetic instances.
//!
//! All randomness comes from [`rand_chacha::ChaCha8Rng`] seeded with a `u64`,
//! so instances are identical across runs and platforms. Draw order for
//! [`gen_instance`]: feature rows, then the upper triangle of `B` row by row,
//! then the Gaussian matrix for the covariance basis (column-major), then the
//! covariance scales, then the strategic set.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, Normal, StandardNormal, Uniform};

use crate::error::{Error, Result};
use crate::learning::FeatureModel;
use crate::linalg::Mat;
use crate::network::{stable_network, NetworkSetting, StableNetwork};
use crate::strategy::{nash_equilibria, NashSolution};

pub const DEFAULT_EPS: f64 = 1e-3;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticSpec {
    pub n: usize,
    pub d: usize,
    pub s_size: usize,
    pub seed: u64,
    /// Ridge added to the covariance.
    pub eps: f64,
}

impl SyntheticSpec {
    pub fn new(n: usize, d: usize, s_size: usize, seed: u64) -> Result<Self> {
        let spec = SyntheticSpec { n, d, s_size, seed, eps: DEFAULT_EPS };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.d == 0 || self.d > self.n {
            return Err(Error::InvalidParameter(format!("need 1 <= d <= n, got d = {} and n = {}", self.d, self.n)));
        }
        if self.s_size > self.n {
            return Err(Error::InvalidParameter(format!("{} strategic agents out of {}", self.s_size, self.n)));
        }
        if !(self.eps > 0.0 && self.eps.is_finite()) {
            return Err(Error::InvalidParameter("covariance ridge must be positive".into()));
        }
        Ok(())
    }
}

/// Rows drawn iid from the symmetric Dirichlet with concentration `1/d`.
pub fn dirichlet_features(rng: &mut impl Rng, n: usize, d: usize) -> Mat {
    let gamma = Gamma::new(1.0 / d as f64, 1.0).expect("positive shape");
    let mut x = Mat::zeros(n, d);
    for i in 0..n {
        loop {
            let row: Vec<f64> = (0..d).map(|_| gamma.sample(rng)).collect();
            let total: f64 = row.iter().sum();
            if total > 0.0 {
                for (a, v) in row.into_iter().enumerate() {
                    x[(i, a)] = v / total;
                }
                break;
            }
        }
    }
    x
}

/// Symmetric `d x d` matrix with iid `N(5, 1)` entries on and above the diagonal.
pub fn symmetric_coefficients(rng: &mut impl Rng, d: usize) -> Mat {
    let normal = Normal::new(5.0, 1.0).expect("valid normal");
    let mut b = Mat::zeros(d, d);
    for a in 0..d {
        for c in a..d {
            let v = normal.sample(rng);
            b[(a, c)] = v;
            b[(c, a)] = v;
        }
    }
    b
}

/// `d x d` orthogonal matrix from the QR factorization of a Gaussian matrix,
/// columns signed so that `R` has a positive diagonal.
pub fn random_orthogonal(rng: &mut impl Rng, d: usize) -> Mat {
    let g = DMatrix::from_fn(d, d, |_, _| StandardNormal.sample(rng));
    let qr = g.qr();
    let (mut q, r) = (qr.q(), qr.r());
    for j in 0..d {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}

/// `Sigma = X U D U^T X^T + eps I` with `D` iid `Uniform(1, sqrt(n))`.
pub fn feature_covariance(rng: &mut impl Rng, x: &Mat, eps: f64) -> Mat {
    let (n, d) = x.shape();
    let u = random_orthogonal(rng, d);
    let hi = (n as f64).sqrt().max(1.0 + f64::EPSILON);
    let scales = Uniform::new(1.0, hi).expect("non-empty range");
    let dvals: Vec<f64> = (0..d).map(|_| scales.sample(rng)).collect();
    let core = &u * Mat::from_diagonal(&nalgebra::DVector::from_vec(dvals)) * u.transpose();
    let sigma = x * core * x.transpose() + Mat::identity(n, n) * eps;
    (&sigma + sigma.transpose()) * 0.5
}

/// Uniform `size`-subset of `0..n`, ascending.
pub fn random_subset(rng: &mut impl Rng, n: usize, size: usize) -> Vec<usize> {
    let mut all: Vec<usize> = (0..n).collect();
    let (chosen, _) = all.partial_shuffle(rng, size);
    let mut s = chosen.to_vec();
    s.sort_unstable();
    s
}

/// Features, coefficients, covariance and strategic set of a synthetic instance.
pub fn gen_instance(spec: &SyntheticSpec) -> Result<(FeatureModel, NetworkSetting)> {
    spec.validate()?;
    let mut rng = rng(spec.seed);
    let x = dirichlet_features(&mut rng, spec.n, spec.d);
    let b = symmetric_coefficients(&mut rng, spec.d);
    let sigma = feature_covariance(&mut rng, &x, spec.eps);
    let strategic = random_subset(&mut rng, spec.n, spec.s_size);
    let model = FeatureModel::new(x, b)?;
    let setting = NetworkSetting::new(model.beliefs(), vec![1.0; spec.n], sigma, strategic)?;
    Ok((model, setting))
}

/// Reported positions at a Nash equilibrium and the network they produce.
pub fn simulate_negotiation(setting: &NetworkSetting) -> Result<(Mat, StableNetwork, NashSolution)> {
    let nash = nash_equilibria(setting)?.into_result()?;
    let m_prime = nash.reported(setting.m());
    let net = stable_network(setting, &m_prime)?;
    Ok((m_prime, net, nash))
}

/// Balanced two-block membership features: the first `ceil(n/2)` agents in
/// block 0, the rest in block 1.
pub fn block_features(n: usize) -> Mat {
    Mat::from_fn(n, 2, |i, a| if (i < n.div_ceil(2)) == (a == 0) { 1.0 } else { 0.0 })
}

/// Two-block instance with planted corruption: every strategic agent raises
/// each entry of its reported column by `magnitude * (1 + u)`, `u ~ U(0, 1)`.
/// Returns the features, the setting and the reported positions.
pub fn gen_planted_block(
    n: usize,
    s_size: usize,
    seed: u64,
    magnitude: f64,
) -> Result<(FeatureModel, NetworkSetting, Mat)> {
    if n < 2 || s_size > n {
        return Err(Error::InvalidParameter(format!(
            "need n >= 2 and at most n strategic agents, got n = {n}, s = {s_size}"
        )));
    }
    let mut rng = rng(seed);
    let x = block_features(n);
    let b = symmetric_coefficients(&mut rng, 2);
    let sigma = feature_covariance(&mut rng, &x, DEFAULT_EPS);
    let strategic = random_subset(&mut rng, n, s_size);
    let model = FeatureModel::new(x, b)?;
    let setting = NetworkSetting::new(model.beliefs(), vec![1.0; n], sigma, strategic.clone())?;
    let mut m_prime = setting.m().clone();
    for &k in &strategic {
        for i in 0..n {
            m_prime[(i, k)] += magnitude * (1.0 + rng.random::<f64>());
        }
    }
    Ok((model, setting, m_prime))
}

/// Synthetic quarterly trade panel: a covariance shared by every quarter and
/// symmetric, non-negative volume matrices with zero diagonal.
pub fn gen_trade_panel(countries: usize, quarters: usize, seed: u64) -> Result<crate::experiments::TradePanel> {
    if countries < 2 || quarters == 0 {
        return Err(Error::InvalidParameter("a trade panel needs at least two countries and one quarter".into()));
    }
    let mut rng = rng(seed);
    let a = Mat::from_fn(countries, countries, |_, _| StandardNormal.sample(&mut rng));
    let sigma = &a * a.transpose() / countries as f64 + Mat::identity(countries, countries) * 0.5;
    let sigma = (&sigma + sigma.transpose()) * 0.5;
    let base = Mat::from_fn(countries, countries, |_, _| rng.random_range(1.0..10.0));
    let mut networks = Vec::with_capacity(quarters);
    for _ in 0..quarters {
        let mut w = Mat::zeros(countries, countries);
        for j in 0..countries {
            for i in 0..j {
                let v = base[(i, j)] * rng.random_range(0.8..1.2);
                w[(i, j)] = v;
                w[(j, i)] = v;
            }
        }
        networks.push(w);
    }
    let quarter_labels = (0..quarters).map(|t| format!("{}Q{}", 2000 + t / 4, t % 4 + 1)).collect();
    let agent_names = (0..countries).map(|i| format!("C{i}")).collect();
    crate::experiments::TradePanel::new(quarter_labels, networks, sigma, agent_names)
}
