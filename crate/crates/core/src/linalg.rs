//! Dense linear-algebra kernel: Kronecker products, column-stacking
//! vectorization, the commutation permutation, symmetric eigendecomposition,
//! rank-revealing affine solves and Kronecker-sum systems.
//!
//! All matrices are [`nalgebra::DMatrix<f64>`], stored column-major. `vec`
//! stacks columns, so entry `(i, j)` of an `r x c` matrix sits at index
//! `i + j * r` of its vectorization.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

pub type Mat = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// Largest `n` for which an `n^2 x n^2` Kronecker-sum matrix is materialized.
pub const DENSE_KRON_LIMIT: usize = 150;

/// Default relative rank threshold for [`solve_affine`].
pub const DEFAULT_RANK_TOL: f64 = 1e-9;

/// Relative asymmetry tolerated by [`sym_eig`].
pub const SYMMETRY_TOL: f64 = 1e-10;

pub fn ensure_finite(m: &Mat, what: &'static str) -> Result<()> {
    if m.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what))
    }
}

/// `||m - m^T||_F / ||m||_F`, or the absolute defect for a zero matrix.
pub fn asymmetry(m: &Mat) -> f64 {
    let defect = (m - m.transpose()).norm();
    let scale = m.norm();
    if scale > 0.0 {
        defect / scale
    } else {
        defect
    }
}

pub fn kron(a: &Mat, b: &Mat) -> Mat {
    a.kronecker(b)
}

pub fn vec(m: &Mat) -> Vector {
    Vector::from_column_slice(m.as_slice())
}

pub fn unvec(v: &Vector, rows: usize, cols: usize) -> Result<Mat> {
    if v.len() != rows * cols {
        return Err(Error::dims(format!("cannot reshape a vector of length {} into {rows}x{cols}", v.len())));
    }
    Ok(Mat::from_column_slice(rows, cols, v.as_slice()))
}

/// The commutation matrix `Pi` of order `n`, kept as a permutation:
/// `(Pi v)[p] = v[perm[p]]`, so that `Pi vec(X) = vec(X^T)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Commutation {
    n: usize,
    perm: Vec<usize>,
}

impl Commutation {
    pub fn new(n: usize) -> Self {
        let mut perm = vec![0; n * n];
        for j in 0..n {
            for i in 0..n {
                perm[i + j * n] = j + i * n;
            }
        }
        Commutation { n, perm }
    }

    pub fn order(&self) -> usize {
        self.n
    }

    pub fn permutation(&self) -> &[usize] {
        &self.perm
    }

    pub fn apply(&self, v: &Vector) -> Vector {
        assert_eq!(v.len(), self.perm.len(), "commutation applied to wrong length");
        Vector::from_iterator(v.len(), self.perm.iter().map(|&p| v[p]))
    }

    /// Dense `n^2 x n^2` permutation matrix.
    pub fn to_dense(&self) -> Mat {
        let m = self.perm.len();
        let mut out = Mat::zeros(m, m);
        for (row, &col) in self.perm.iter().enumerate() {
            out[(row, col)] = 1.0;
        }
        out
    }
}

pub fn commutation_matrix(n: usize) -> Commutation {
    Commutation::new(n)
}

/// Eigendecomposition of a symmetric matrix, eigenvalues ascending.
#[derive(Debug, Clone)]
pub struct SymEig {
    pub values: Vector,
    /// Orthonormal eigenvectors as columns, ordered like `values`.
    pub vectors: Mat,
}

impl SymEig {
    pub fn reconstruct(&self) -> Mat {
        &self.vectors * Mat::from_diagonal(&self.values) * self.vectors.transpose()
    }
}

pub fn sym_eig(m: &Mat) -> Result<SymEig> {
    if !m.is_square() {
        return Err(Error::dims(format!("eigendecomposition of a {}x{} matrix", m.nrows(), m.ncols())));
    }
    ensure_finite(m, "symmetric eigendecomposition input")?;
    let asym = asymmetry(m);
    if asym > SYMMETRY_TOL {
        return Err(Error::AsymmetricInput { asymmetry: asym });
    }
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let n = m.nrows();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = Vector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
    let mut vectors = Mat::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    Ok(SymEig { values, vectors })
}

/// Solution set `particular + span(nullspace_basis)` of a linear system.
#[derive(Debug, Clone)]
pub struct AffineSolutionSet {
    /// Minimum-norm least-squares solution.
    pub particular: Vector,
    /// Orthonormal basis of the numerical kernel.
    pub nullspace_basis: Vec<Vector>,
    pub consistent: bool,
    /// `||a x - b||_2` at the particular solution.
    pub residual: f64,
}

impl AffineSolutionSet {
    pub fn dimension(&self) -> usize {
        self.nullspace_basis.len()
    }

    pub fn is_unique(&self) -> bool {
        self.consistent && self.nullspace_basis.is_empty()
    }

    /// `particular + sum_i coeffs[i] * nullspace_basis[i]`.
    pub fn point(&self, coeffs: &[f64]) -> Vector {
        assert_eq!(coeffs.len(), self.nullspace_basis.len());
        let mut x = self.particular.clone();
        for (c, v) in coeffs.iter().zip(&self.nullspace_basis) {
            x.axpy(*c, v, 1.0);
        }
        x
    }
}

/// Rank-revealing solve of `a x = b` through the SVD.
///
/// Singular values at or below `tol * sigma_max` count as zero. The system is
/// consistent when the min-norm residual is at most `tol * (1 + ||b||)`.
pub fn solve_affine(a: &Mat, b: &Vector, tol: f64) -> Result<AffineSolutionSet> {
    if a.nrows() != b.len() {
        return Err(Error::dims(format!("system has {} rows but right-hand side has {} entries", a.nrows(), b.len())));
    }
    ensure_finite(a, "system matrix")?;
    if !b.iter().all(|x| x.is_finite()) {
        return Err(Error::NonFinite("right-hand side"));
    }
    let (rows, cols) = a.shape();
    if cols == 0 {
        let residual = b.norm();
        return Ok(AffineSolutionSet {
            particular: Vector::zeros(0),
            nullspace_basis: Vec::new(),
            consistent: residual <= tol * (1.0 + b.norm()),
            residual,
        });
    }

    // Zero rows leave the solution set unchanged and make V square.
    let padded;
    let (sys, rhs) = if rows < cols {
        padded = (a.clone().resize_vertically(cols, 0.0), b.clone().resize_vertically(cols, 0.0));
        (&padded.0, &padded.1)
    } else {
        (a, b)
    };

    let svd = sys.clone().svd(true, true);
    let u = svd.u.as_ref().expect("svd computed with U");
    let v_t = svd.v_t.as_ref().expect("svd computed with V^T");
    let sigma_max = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    let cutoff = tol * sigma_max;

    let mut particular = Vector::zeros(cols);
    let mut nullspace_basis = Vec::new();
    for (i, &s) in svd.singular_values.iter().enumerate() {
        let v = v_t.row(i).transpose();
        if s > cutoff && s > 0.0 {
            let coeff = u.column(i).dot(rhs) / s;
            particular.axpy(coeff, &v, 1.0);
        } else {
            nullspace_basis.push(v);
        }
    }

    let residual = (a * &particular - b).norm();
    Ok(AffineSolutionSet { particular, nullspace_basis, consistent: residual <= tol * (1.0 + b.norm()), residual })
}

/// Dense `a (x) b + b (x) a`, refused above [`DENSE_KRON_LIMIT`].
pub fn kron_sum(a: &Mat, b: &Mat) -> Result<Mat> {
    if !a.is_square() || a.shape() != b.shape() {
        return Err(Error::dims("Kronecker sum needs two square matrices of equal order"));
    }
    let n = a.nrows();
    if n > DENSE_KRON_LIMIT {
        return Err(Error::ProblemTooLarge { n, limit: DENSE_KRON_LIMIT });
    }
    Ok(a.kronecker(b) + b.kronecker(a))
}

/// Spectral solver for the Kronecker-sum systems built from a covariance
/// `sigma` and a positive diagonal `gamma`.
///
/// With `G = gamma^{-1/2}` and `G sigma G = V diag(lambda) V^T`, the system
/// `(Gamma (x) Sigma + Sigma (x) Gamma) vec(X) = vec(R)` (equivalently
/// `Sigma X Gamma + Gamma X Sigma = R`) has the solution
/// `X = U [(U^T R U) / (lambda_a + lambda_b)] U^T` with `U = G V`. This solves
/// against `K` in `O(n^3)` without forming it.
#[derive(Debug, Clone)]
pub struct KronSumSolver {
    gamma: Vector,
    lambda: Vector,
    v: Mat,
    /// `gamma^{-1/2} V`
    u: Mat,
    /// `gamma^{1/2} V`
    u_dual: Mat,
}

impl KronSumSolver {
    pub fn new(sigma: &Mat, gamma: &[f64]) -> Result<Self> {
        let n = sigma.nrows();
        if !sigma.is_square() || gamma.len() != n {
            return Err(Error::dims(format!(
                "covariance is {}x{} but {} risk aversions were given",
                sigma.nrows(),
                sigma.ncols(),
                gamma.len()
            )));
        }
        for (agent, &g) in gamma.iter().enumerate() {
            if !(g > 0.0 && g.is_finite()) {
                return Err(Error::NonPositiveRiskAversion { agent, value: g });
            }
        }
        let gamma = Vector::from_column_slice(gamma);
        let inv_sqrt = gamma.map(|g| 1.0 / g.sqrt());
        let scaled = Mat::from_fn(n, n, |i, j| sigma[(i, j)] * inv_sqrt[i] * inv_sqrt[j]);
        let eig = sym_eig(&scaled)?;
        if let Some(&min) = eig.values.iter().next() {
            if min <= 0.0 {
                return Err(Error::NotPositiveDefinite { min_eigenvalue: min });
            }
        }
        let v = eig.vectors;
        let u = Mat::from_fn(n, n, |i, j| v[(i, j)] * inv_sqrt[i]);
        let u_dual = Mat::from_fn(n, n, |i, j| v[(i, j)] * gamma[i].sqrt());
        Ok(KronSumSolver { gamma, lambda: eig.values, v, u, u_dual })
    }

    pub fn order(&self) -> usize {
        self.gamma.len()
    }

    /// Eigenvalues of `gamma^{-1/2} sigma gamma^{-1/2}`, ascending.
    pub fn eigenvalues(&self) -> &Vector {
        &self.lambda
    }

    /// Orthonormal eigenvectors of `gamma^{-1/2} sigma gamma^{-1/2}`.
    pub fn eigenvectors(&self) -> &Mat {
        &self.v
    }

    /// `gamma^{-1/2} V`.
    pub fn scaled_eigenvectors(&self) -> &Mat {
        &self.u
    }

    pub fn gamma(&self) -> &Vector {
        &self.gamma
    }

    fn check(&self, r: &Mat) {
        assert_eq!(r.shape(), (self.order(), self.order()), "Kronecker-sum right-hand side has wrong shape");
    }

    /// Solves `sigma X gamma + gamma X sigma = r`.
    pub fn solve(&self, r: &Mat) -> Mat {
        self.check(r);
        let lam = &self.lambda;
        let mut y = self.u.transpose() * r * &self.u;
        for ((a, b), e) in index_pairs(y.nrows()).zip(y.iter_mut()) {
            *e /= lam[a] + lam[b];
        }
        &self.u * y * self.u.transpose()
    }

    /// Solves `sigma^{-1} X gamma^{-1} + gamma^{-1} X sigma^{-1} = r`.
    pub fn solve_inverse_sum(&self, r: &Mat) -> Mat {
        self.check(r);
        let lam = &self.lambda;
        let mut y = self.u_dual.transpose() * r * &self.u_dual;
        for ((a, b), e) in index_pairs(y.nrows()).zip(y.iter_mut()) {
            *e /= 1.0 / lam[a] + 1.0 / lam[b];
        }
        &self.u_dual * y * self.u_dual.transpose()
    }

    /// `sigma^{-1} = U diag(1/lambda) U^T`.
    pub fn sigma_inverse(&self) -> Mat {
        let inv = self.lambda.map(|l| 1.0 / l);
        &self.u * Mat::from_diagonal(&inv) * self.u.transpose()
    }
}

/// `(row, col)` pairs in column-major storage order.
fn index_pairs(n: usize) -> impl Iterator<Item = (usize, usize)> {
    (0..n).flat_map(move |b| (0..n).map(move |a| (a, b)))
}

/// `diag(d)` as a matrix.
pub fn diag(d: &[f64]) -> Mat {
    Mat::from_diagonal(&Vector::from_column_slice(d))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(rows: usize, cols: usize, data: &[f64]) -> Mat {
        Mat::from_row_slice(rows, cols, data)
    }

    #[test]
    fn kron_identity_is_block_diagonal() {
        let b = m(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let k = kron(&Mat::identity(2, 2), &b);
        let mut expect = Mat::zeros(4, 4);
        expect.view_mut((0, 0), (2, 2)).copy_from(&b);
        expect.view_mut((2, 2), (2, 2)).copy_from(&b);
        assert_eq!(k, expect);
        assert_eq!(kron(&m(1, 1, &[2.0]), &m(1, 1, &[3.0])), m(1, 1, &[6.0]));
    }

    #[test]
    fn kron_index_layout() {
        let a = m(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let b = m(3, 2, &[7.0, 8.0, 9.0, 10.0, 11.0, 12.0]);
        let k = kron(&a, &b);
        for i in 0..2 {
            for kk in 0..3 {
                for j in 0..3 {
                    for l in 0..2 {
                        assert_eq!(k[(i * 3 + j, kk * 2 + l)], a[(i, kk)] * b[(j, l)]);
                    }
                }
            }
        }
    }

    #[test]
    fn vec_stacks_columns() {
        let x = m(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(vec(&x).as_slice(), &[1.0, 3.0, 2.0, 4.0]);
        assert!(matches!(unvec(&vec(&x), 3, 1), Err(Error::DimensionMismatch(_))));
    }

    #[test]
    fn commutation_small_orders() {
        assert_eq!(commutation_matrix(1).to_dense(), m(1, 1, &[1.0]));
        assert_eq!(commutation_matrix(2).permutation(), &[0, 2, 1, 3]);
    }

    #[test]
    fn sym_eig_closed_forms() {
        let e = sym_eig(&Mat::identity(3, 3)).unwrap();
        assert_eq!(e.values.as_slice(), &[1.0, 1.0, 1.0]);
        let e = sym_eig(&m(2, 2, &[1.0, 0.5, 0.5, 1.0])).unwrap();
        assert_close!(e.values[0], 0.5, 1e-14);
        assert_close!(e.values[1], 1.5, 1e-14);
        assert!(matches!(sym_eig(&m(2, 2, &[1.0, 0.5, 0.4, 1.0])), Err(Error::AsymmetricInput { .. })));
    }

    #[test]
    fn solve_affine_examples() {
        let b = Vector::from_column_slice(&[3.0, -1.0, 2.0]);
        let s = solve_affine(&Mat::identity(3, 3), &b, DEFAULT_RANK_TOL).unwrap();
        assert!(s.is_unique());
        assert!((s.particular - &b).norm() < 1e-14);

        let s = solve_affine(&m(1, 2, &[1.0, 1.0]), &Vector::from_column_slice(&[2.0]), DEFAULT_RANK_TOL).unwrap();
        assert!(s.consistent);
        assert_close!(s.particular[0], 1.0, 1e-14);
        assert_close!(s.particular[1], 1.0, 1e-14);
        assert_eq!(s.dimension(), 1);
        let n = &s.nullspace_basis[0];
        assert_close!(n[0] + n[1], 0.0, 1e-14);
        assert_close!(n.norm(), 1.0, 1e-14);

        let s = solve_affine(&m(2, 1, &[1.0, 1.0]), &Vector::from_column_slice(&[0.0, 1.0]), DEFAULT_RANK_TOL).unwrap();
        assert!(!s.consistent);
    }

    #[test]
    fn solve_affine_rejects_mismatched_rhs() {
        let r = solve_affine(&Mat::identity(2, 2), &Vector::zeros(3), DEFAULT_RANK_TOL);
        assert!(matches!(r, Err(Error::DimensionMismatch(_))));
    }

    #[test]
    fn kron_sum_guard() {
        let big = Mat::identity(DENSE_KRON_LIMIT + 1, DENSE_KRON_LIMIT + 1);
        assert!(matches!(kron_sum(&big, &big), Err(Error::ProblemTooLarge { .. })));
    }

    #[test]
    fn kron_sum_solver_matches_dense_solve() {
        let sigma = m(3, 3, &[2.0, 0.3, -0.2, 0.3, 1.5, 0.1, -0.2, 0.1, 1.0]);
        let gamma = [0.5, 2.0, 1.3];
        let solver = KronSumSolver::new(&sigma, &gamma).unwrap();
        let r = m(3, 3, &[1.0, -2.0, 0.5, 0.7, 0.0, 3.0, -1.0, 1.0, 2.0]);
        let x = solver.solve(&r);
        let g = diag(&gamma);
        let back = &sigma * &x * &g + &g * &x * &sigma;
        assert!((back - &r).norm() < 1e-12);

        let si = sigma.clone().try_inverse().unwrap();
        let gi = diag(&gamma.map(|v| 1.0 / v));
        let p = solver.solve_inverse_sum(&r);
        let back = &si * &p * &gi + &gi * &p * &si;
        assert!((back - &r).norm() < 1e-12);
        assert!((solver.sigma_inverse() - si).norm() < 1e-12);
    }

    #[test]
    fn kron_sum_solver_rejects_bad_inputs() {
        let sigma = Mat::identity(2, 2);
        assert!(matches!(
            KronSumSolver::new(&sigma, &[1.0, 0.0]),
            Err(Error::NonPositiveRiskAversion { agent: 1, .. })
        ));
        let indefinite = m(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(matches!(KronSumSolver::new(&indefinite, &[1.0, 1.0]), Err(Error::NotPositiveDefinite { .. })));
    }
}
