//! Closed-form normal-approximation bounds for chaos elements: the
//! fourth-moment discrepancy, the total-variation bound for a single chaos,
//! its variance-based intermediate form, and the multivariate smooth-test /
//! Wasserstein bounds, together with the small symmetric eigensolver they
//! need for operator norms.

use std::hash::{Hash, Hasher};

use serde::Serialize;

use crate::chaos_algebra::{kappa_of_symmetric, ChaosExpansion};
use crate::error::{Error, Result};
use crate::grid_kernel::{binomial, factorial, Contraction, Grid, Kernel};

/// A vector of pure chaos components over a shared grid, sorted by order.
#[derive(Debug, Clone)]
pub struct ChaosVector {
    grid: Grid,
    components: Vec<(usize, Kernel)>,
}

impl ChaosVector {
    /// Components are symmetrized on entry and stably sorted by order.
    pub fn new(components: Vec<(usize, Kernel)>) -> Result<Self> {
        let first = components
            .first()
            .ok_or_else(|| Error::InvalidParameter("chaos vector needs a component".into()))?;
        let grid = first.1.grid.clone();
        let mut comps = Vec::with_capacity(components.len());
        for (p, f) in components {
            if f.grid != grid {
                return Err(Error::GridMismatch("chaos vector components need a shared grid".into()));
            }
            if f.order != p {
                return Err(Error::OrderMismatch {
                    expected: p,
                    got: f.order,
                });
            }
            comps.push((p, f.symmetrize()));
        }
        comps.sort_by_key(|&(p, _)| p);
        Ok(ChaosVector {
            grid,
            components: comps,
        })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn dim(&self) -> usize {
        self.components.len()
    }

    pub fn components(&self) -> &[(usize, Kernel)] {
        &self.components
    }

    pub fn min_order(&self) -> usize {
        self.components[0].0
    }

    pub fn expansions(&self) -> Result<Vec<ChaosExpansion>> {
        self.components
            .iter()
            .map(|(p, f)| ChaosExpansion::from_kernel(*p, f))
            .collect()
    }

    /// Order-insensitive fingerprint of the input data, for report provenance.
    pub fn inputs_hash(&self) -> String {
        let mut h = std::collections::hash_map::DefaultHasher::new();
        for m in self.grid.measures() {
            m.to_bits().hash(&mut h);
        }
        for (p, f) in &self.components {
            p.hash(&mut h);
            for c in &f.coeffs {
                c.to_bits().hash(&mut h);
            }
        }
        format!("{:016x}", h.finish())
    }
}

/// A small dense symmetric matrix with an exact-symmetry storage contract.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SymMatrix {
    d: usize,
    data: Vec<f64>,
}

impl SymMatrix {
    pub fn zeros(d: usize) -> Self {
        SymMatrix {
            d,
            data: vec![0.0; d * d],
        }
    }

    pub fn identity(d: usize) -> Self {
        let mut m = Self::zeros(d);
        for i in 0..d {
            m.data[i * d + i] = 1.0;
        }
        m
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.d + j]
    }

    /// Sets both `(i,j)` and `(j,i)`.
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.d + j] = v;
        self.data[j * self.d + i] = v;
    }

    pub fn trace(&self) -> f64 {
        (0..self.d).map(|i| self.get(i, i)).sum()
    }

    pub fn trace_of_square(&self) -> f64 {
        let mut acc = 0.0;
        for i in 0..self.d {
            for j in 0..self.d {
                acc += self.get(i, j) * self.get(j, i);
            }
        }
        acc
    }

    pub fn frobenius(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    /// Cyclic Jacobi eigendecomposition. Returns eigenvalues sorted
    /// descending and the matching eigenvectors as columns (row-major `d*d`).
    /// The input is symmetrized by averaging with its transpose first.
    pub fn sym_eig(&self) -> (Vec<f64>, Vec<f64>) {
        let d = self.d;
        let mut a = vec![0.0f64; d * d];
        for i in 0..d {
            for j in 0..d {
                a[i * d + j] = 0.5 * (self.data[i * d + j] + self.data[j * d + i]);
            }
        }
        let mut v = vec![0.0f64; d * d];
        for i in 0..d {
            v[i * d + i] = 1.0;
        }
        let norm = self.frobenius().max(f64::MIN_POSITIVE);
        let tol = 1e-12 * norm;
        for _sweep in 0..100 {
            let mut off = 0.0;
            for i in 0..d {
                for j in (i + 1)..d {
                    off += 2.0 * a[i * d + j] * a[i * d + j];
                }
            }
            if off.sqrt() <= tol {
                break;
            }
            for p in 0..d {
                for q in (p + 1)..d {
                    let apq = a[p * d + q];
                    if apq.abs() <= tol / (d as f64 * d as f64) {
                        continue;
                    }
                    let app = a[p * d + p];
                    let aqq = a[q * d + q];
                    let theta = 0.5 * (aqq - app) / apq;
                    let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                    let c = 1.0 / (t * t + 1.0).sqrt();
                    let s = t * c;
                    for k in 0..d {
                        let akp = a[k * d + p];
                        let akq = a[k * d + q];
                        a[k * d + p] = c * akp - s * akq;
                        a[k * d + q] = s * akp + c * akq;
                    }
                    for k in 0..d {
                        let apk = a[p * d + k];
                        let aqk = a[q * d + k];
                        a[p * d + k] = c * apk - s * aqk;
                        a[q * d + k] = s * apk + c * aqk;
                    }
                    for k in 0..d {
                        let vkp = v[k * d + p];
                        let vkq = v[k * d + q];
                        v[k * d + p] = c * vkp - s * vkq;
                        v[k * d + q] = s * vkp + c * vkq;
                    }
                }
            }
        }
        let mut order: Vec<usize> = (0..d).collect();
        order.sort_by(|&i, &j| a[j * d + j].partial_cmp(&a[i * d + i]).expect("finite eigenvalues"));
        let eigenvalues: Vec<f64> = order.iter().map(|&i| a[i * d + i]).collect();
        let mut vectors = vec![0.0f64; d * d];
        for (col, &src) in order.iter().enumerate() {
            for k in 0..d {
                vectors[k * d + col] = v[k * d + src];
            }
        }
        (eigenvalues, vectors)
    }

    pub fn op_norm(&self) -> f64 {
        let (eig, _) = self.sym_eig();
        eig.iter().fold(0.0f64, |acc, &l| acc.max(l.abs()))
    }
}

fn spd_eigenvalues(sigma: &SymMatrix) -> Result<Vec<f64>> {
    let (eig, _) = sigma.sym_eig();
    let lmax = eig[0];
    let lmin = eig[eig.len() - 1];
    if !(lmax > 0.0) || lmin <= 1e-12 * lmax {
        return Err(Error::SingularCovariance(format!(
            "eigenvalue range [{lmin:e}, {lmax:e}]"
        )));
    }
    Ok(eig)
}

/// Fourth-moment discrepancy `E[F^4] - 3 sigma^4` of `I_p(f)`, computed as
/// the non-negative contraction-norm sum rather than by subtraction.
pub fn kappa(f: &Kernel, p: usize) -> Result<f64> {
    if p != f.order {
        return Err(Error::OrderMismatch {
            expected: p,
            got: f.order,
        });
    }
    kappa_of_symmetric(p, &f.symmetrize())
}

fn chaos_variance(f: &Kernel, p: usize) -> Result<f64> {
    let sym = f.symmetrize();
    let sigma2 = factorial(p) * sym.inner(&sym)?;
    if sigma2 <= 0.0 {
        return Err(Error::InvalidParameter("chaos element has zero variance".into()));
    }
    Ok(sigma2)
}

/// Total-variation bound against `N(0, sigma^2)` for a single order-`p`
/// chaos: `(2/sigma^2) * sqrt((p-1)/(3p)) * sqrt(kappa)`.
pub fn tv_bound(f: &Kernel, p: usize) -> Result<f64> {
    let sigma2 = chaos_variance(f, p)?;
    let k = kappa(f, p)?;
    Ok(2.0 / sigma2 * (((p - 1) as f64) / (3.0 * p as f64)).sqrt() * k.sqrt())
}

/// Variance of the quadratic functional `p * int I_{p-1}(f(x,.))^2 dx`,
/// from the contraction-norm identity.
pub fn intermediate_variance(f: &Kernel, p: usize) -> Result<f64> {
    let sym = f.symmetrize();
    let mut acc = 0.0;
    for r in 1..p {
        let c = sym.contract(&sym, r)?.unwrap_kernel().symmetrize();
        let w = (r as f64 / p as f64).powi(2)
            * factorial(r).powi(2)
            * binomial(p, r).powi(4)
            * factorial(2 * p - 2 * r);
        acc += w * c.inner(&c)?;
    }
    Ok(acc)
}

/// Variance-majorized total-variation bound `(2/sigma^2) * sqrt(V)` with
/// `V = Var(p * int I_{p-1}(f(x,.))^2 dx)`; never exceeds [`tv_bound`].
pub fn intermediate_bound(f: &Kernel, p: usize) -> Result<f64> {
    let sigma2 = chaos_variance(f, p)?;
    Ok(2.0 / sigma2 * intermediate_variance(f, p)?.sqrt())
}

/// Chaos expansion of `p * int I_{p-1}(f(x,.))^2 dx`; its mean is the
/// variance of `I_p(f)`.
pub fn integral_expansion(f: &Kernel, p: usize) -> Result<ChaosExpansion> {
    let sym = f.symmetrize();
    let mut out = ChaosExpansion::zero(sym.grid.clone());
    for r in 1..=p {
        let coef = (r as f64 / p as f64) * factorial(r) * binomial(p, r).powi(2);
        match sym.contract(&sym, r)? {
            Contraction::Scalar(s) => out.add_constant(coef * s),
            Contraction::Kernel(k) => out.add_kernel(2 * p - 2 * r, &k.scale(coef))?,
        }
    }
    Ok(out)
}

/// Chaos expansion of `p_i p_j * int I_{p_i-1}(f_i(x,.)) I_{p_j-1}(f_j(x,.)) dx`.
pub fn cross_integral_expansion(
    pi: usize,
    fi: &Kernel,
    pj: usize,
    fj: &Kernel,
) -> Result<ChaosExpansion> {
    let si = fi.symmetrize();
    let sj = fj.symmetrize();
    let mut out = ChaosExpansion::zero(si.grid.clone());
    for r in 1..=pi.min(pj) {
        let coef = r as f64 * factorial(r) * binomial(pi, r) * binomial(pj, r);
        match si.contract(&sj, r)? {
            Contraction::Scalar(s) => out.add_constant(coef * s),
            Contraction::Kernel(k) => out.add_kernel(pi + pj - 2 * r, &k.scale(coef))?,
        }
    }
    Ok(out)
}

/// Covariance matrix of a chaos vector: `sigma_ij = p_i! <f_i, f_j>` when
/// the orders match, zero otherwise (orthogonality of distinct chaoses).
pub fn covariance(v: &ChaosVector) -> Result<SymMatrix> {
    let d = v.dim();
    let mut out = SymMatrix::zeros(d);
    for i in 0..d {
        for j in i..d {
            let (pi, fi) = &v.components()[i];
            let (pj, fj) = &v.components()[j];
            if pi == pj {
                out.set(i, j, factorial(*pi) * fi.inner(fj)?);
            }
        }
    }
    Ok(out)
}

/// Matrix of quadratic-functional variances
/// `V_ij = Var(p_i p_j * int I_{p_i-1}(f_i(x,.)) I_{p_j-1}(f_j(x,.)) dx)`.
pub fn s_variance_matrix(v: &ChaosVector) -> Result<SymMatrix> {
    let d = v.dim();
    let mut out = SymMatrix::zeros(d);
    for i in 0..d {
        for j in i..d {
            let (pi, fi) = &v.components()[i];
            let (pj, fj) = &v.components()[j];
            out.set(i, j, cross_integral_expansion(*pi, fi, *pj, fj)?.variance());
        }
    }
    Ok(out)
}

/// A computed bound with its ingredients and provenance metadata.
#[derive(Debug, Clone, Serialize)]
pub struct BoundReport {
    pub name: String,
    pub value: f64,
    pub ingredients: Vec<(String, f64)>,
    pub notes: Vec<String>,
    pub inputs_hash: String,
}

/// Multivariate Wasserstein bound
/// `2 ||Sigma^{-1/2}||_op / (p_1 sqrt(2 pi)) * sqrt(sum_ij V_ij)`.
pub fn wasserstein_bound(v: &ChaosVector) -> Result<BoundReport> {
    let sigma = covariance(v)?;
    let eig = spd_eigenvalues(&sigma)?;
    let lmin = eig[eig.len() - 1];
    let p1 = v.min_order() as f64;
    let vmat = s_variance_matrix(v)?;
    let sum_v = vmat.sum();
    let inv_sqrt_op = lmin.powf(-0.5);
    let value = 2.0 * inv_sqrt_op / (p1 * std::f64::consts::TAU.sqrt()) * sum_v.max(0.0).sqrt();
    Ok(BoundReport {
        name: "wasserstein_bound".into(),
        value,
        ingredients: vec![
            ("inv_sqrt_cov_op_norm".into(), inv_sqrt_op),
            ("min_order".into(), p1),
            ("sum_V".into(), sum_v),
        ],
        notes: vec![
            "denominator uses the smallest component order (the stated bound's exponent subscript \
             is read as the smallest order, consistently with the diagonal order matrix)"
                .into(),
        ],
        inputs_hash: v.inputs_hash(),
    })
}

/// Smooth-test bound `sqrt(d) * M2 / (2 p_1) * sqrt(sum_ij V_ij)` for test
/// functions with Hessian operator norm at most `M2`.
pub fn smooth_bound(v: &ChaosVector, m2: f64) -> Result<f64> {
    if m2 < 0.0 || !m2.is_finite() {
        return Err(Error::InvalidParameter("M2 must be non-negative".into()));
    }
    let d = v.dim() as f64;
    let p1 = v.min_order() as f64;
    let sum_v = s_variance_matrix(v)?.sum();
    Ok(d.sqrt() * m2 / (2.0 * p1) * sum_v.max(0.0).sqrt())
}

/// Exact `E[||F||^4]`: the second moment of the expansion of `sum_k F_k^2`.
pub fn fourth_moment_norm(v: &ChaosVector) -> Result<f64> {
    let exps = v.expansions()?;
    let mut norm_sq = ChaosExpansion::zero(v.grid().clone());
    for e in &exps {
        norm_sq = norm_sq.add(&e.multiply(e)?)?;
    }
    Ok(norm_sq.second_moment())
}

/// `E[||N||^4] = (tr Sigma)^2 + 2 tr(Sigma^2)` for `N ~ N(0, Sigma)`.
pub fn gaussian_fourth_moment_norm(sigma: &SymMatrix) -> f64 {
    let t = sigma.trace();
    t * t + 2.0 * sigma.trace_of_square()
}

/// Fourth-moment Wasserstein bound
/// `sqrt(d) ||Sigma||_op^{1/2} ||Sigma^{-1}||_op sqrt(E||F||^4 - E||N||^4)`.
pub fn nprr_bound(v: &ChaosVector) -> Result<BoundReport> {
    let sigma = covariance(v)?;
    let eig = spd_eigenvalues(&sigma)?;
    let (lmax, lmin) = (eig[0], eig[eig.len() - 1]);
    let ef4 = fourth_moment_norm(v)?;
    let en4 = gaussian_fourth_moment_norm(&sigma);
    let mut radicand = ef4 - en4;
    if radicand < -1e-10 * en4.max(1.0) {
        return Err(Error::InvalidParameter(format!(
            "fourth-moment radicand is negative: {radicand:e}"
        )));
    }
    radicand = radicand.max(0.0);
    let d = v.dim() as f64;
    let value = d.sqrt() * lmax.sqrt() / lmin * radicand.sqrt();
    let sum_v = s_variance_matrix(v)?.sum();
    Ok(BoundReport {
        name: "nprr_bound".into(),
        value,
        ingredients: vec![
            ("cov_op_norm".into(), lmax),
            ("inv_cov_op_norm".into(), 1.0 / lmin),
            ("fourth_moment_norm".into(), ef4),
            ("gaussian_fourth_moment_norm".into(), en4),
            ("radicand".into(), radicand),
            ("sum_V".into(), sum_v),
        ],
        notes: vec![],
        inputs_hash: v.inputs_hash(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chaos_algebra::fourth_moment_pure;
    use crate::families::qvar_kernel;
    use crate::mc_lab::CounterRng;
    use approx::assert_relative_eq;

    fn random_symmetric(m: usize, p: usize, seed: u64) -> Kernel {
        let g = Grid::uniform(m).unwrap();
        let rng = CounterRng::new(seed, 2);
        let mut i = 0u64;
        Kernel::from_fn(g, p, |_| {
            i += 1;
            rng.normal_at(i)
        })
        .unwrap()
        .symmetrize()
    }

    #[test]
    fn kappa_examples() {
        let f1 = random_symmetric(4, 1, 1);
        assert_eq!(kappa(&f1, 1).unwrap(), 0.0);

        for n in [4usize, 16, 64] {
            let f = qvar_kernel(n, 64).unwrap();
            assert_relative_eq!(kappa(&f, 2).unwrap(), 12.0 / n as f64, max_relative = 1e-12);
        }

        let f2 = random_symmetric(5, 2, 3);
        let sigma2 = 2.0 * f2.inner(&f2).unwrap();
        assert_relative_eq!(
            kappa(&f2, 2).unwrap(),
            fourth_moment_pure(2, &f2).unwrap() - 3.0 * sigma2 * sigma2,
            max_relative = 1e-10
        );
        assert!(kappa(&f2, 2).unwrap() >= 0.0);
    }

    #[test]
    fn tv_bound_examples() {
        let f1 = random_symmetric(4, 1, 5);
        assert_eq!(tv_bound(&f1, 1).unwrap(), 0.0);

        let f = qvar_kernel(64, 64).unwrap();
        assert_relative_eq!(
            tv_bound(&f, 2).unwrap(),
            2.0 * 2.0f64.sqrt() / 8.0,
            epsilon = 1e-12
        );

        // invariance under kernel scaling
        let f2 = random_symmetric(5, 3, 7);
        let base = tv_bound(&f2, 3).unwrap();
        for c in [0.5, 2.0, 10.0] {
            assert_relative_eq!(tv_bound(&f2.scale(c), 3).unwrap(), base, max_relative = 1e-10);
        }
    }

    #[test]
    fn intermediate_below_tv() {
        for (p, seed) in [(2usize, 11u64), (3, 12), (4, 13)] {
            let f = random_symmetric(4, p, seed);
            let i = intermediate_bound(&f, p).unwrap();
            let t = tv_bound(&f, p).unwrap();
            assert!(i <= t * (1.0 + 1e-12), "p={p}: {i} vs {t}");
        }
    }

    #[test]
    fn integral_expansion_mean_is_variance() {
        let f = random_symmetric(5, 3, 21);
        let a = integral_expansion(&f, 3).unwrap();
        assert_relative_eq!(a.mean(), 6.0 * f.inner(&f).unwrap(), max_relative = 1e-12);
        // its variance matches the closed-form intermediate variance
        assert_relative_eq!(
            a.variance(),
            intermediate_variance(&f, 3).unwrap(),
            max_relative = 1e-10
        );
    }

    #[test]
    fn quadratic_functional_identity() {
        // (1/3) kappa = E[F^2 (p int I_{p-1}^2 dx - sigma^2)], both sides
        // computed through independent routes
        for (m, p, seed) in [(4usize, 2usize, 31u64), (5, 3, 32), (4, 4, 33)] {
            let f = random_symmetric(m, p, seed);
            let e = ChaosExpansion::from_kernel(p, &f).unwrap();
            let sigma2 = e.variance();
            let f2 = e.multiply(&e).unwrap();
            let a = integral_expansion(&f, p).unwrap();
            let rhs = f2.expectation_product(&a).unwrap() - sigma2 * f2.mean();
            assert_relative_eq!(kappa(&f, p).unwrap() / 3.0, rhs, max_relative = 1e-10);
        }
    }

    #[test]
    fn covariance_examples() {
        let f = random_symmetric(4, 2, 41);
        let single = ChaosVector::new(vec![(2, f.clone())]).unwrap();
        let c = covariance(&single).unwrap();
        assert_relative_eq!(c.get(0, 0), 2.0 * f.inner(&f).unwrap(), max_relative = 1e-13);

        let g = random_symmetric(4, 1, 42);
        let mixed = ChaosVector::new(vec![(2, f.clone()), (1, g)]).unwrap();
        assert_eq!(mixed.components()[0].0, 1); // sorted by order
        let cm = covariance(&mixed).unwrap();
        assert_eq!(cm.get(0, 1), 0.0);

        let dup = ChaosVector::new(vec![(2, f.clone()), (2, f)]).unwrap();
        let cd = covariance(&dup).unwrap();
        assert!(spd_eigenvalues(&cd).is_err()); // rank-1 flagged singular
    }

    #[test]
    fn s_variance_d1_consistency() {
        let f = random_symmetric(4, 3, 51);
        let v = ChaosVector::new(vec![(3, f.clone())]).unwrap();
        let vm = s_variance_matrix(&v).unwrap();
        // the matrix entry carries both order factors, the intermediate
        // variance only one: V_11 = p^2 * V_intermediate
        assert_relative_eq!(
            vm.get(0, 0),
            9.0 * intermediate_variance(&f, 3).unwrap(),
            max_relative = 1e-10
        );
    }

    #[test]
    fn s_variance_disjoint_supports() {
        let g = Grid::uniform(8).unwrap();
        let mut f1 = Kernel::zeros(g.clone(), 2).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                f1.set(&[i, j], 1.0 + (i * j) as f64);
            }
        }
        let mut f2 = Kernel::zeros(g, 2).unwrap();
        for i in 4..8 {
            for j in 4..8 {
                f2.set(&[i, j], 2.0 - (i + j) as f64 / 10.0);
            }
        }
        let v = ChaosVector::new(vec![(2, f1.symmetrize()), (2, f2.symmetrize())]).unwrap();
        let vm = s_variance_matrix(&v).unwrap();
        assert!(vm.get(0, 1).abs() < 1e-20);
    }

    #[test]
    fn sym_eig_examples() {
        let id = SymMatrix::identity(3);
        let (e, _) = id.sym_eig();
        for l in e {
            assert_relative_eq!(l, 1.0);
        }

        let mut d = SymMatrix::zeros(2);
        d.set(0, 0, 4.0);
        d.set(1, 1, 1.0);
        let (e, _) = d.sym_eig();
        assert_relative_eq!(e[0], 4.0);
        assert_relative_eq!(e[1], 1.0);
        assert_relative_eq!(d.op_norm(), 4.0);

        // random SPD reconstruction
        let rng = CounterRng::new(99, 3);
        let mut b = vec![0.0f64; 9];
        for (i, slot) in b.iter_mut().enumerate() {
            *slot = rng.normal_at(i as u64);
        }
        let mut a = SymMatrix::zeros(3);
        for i in 0..3 {
            for j in i..3 {
                let mut acc = 0.0;
                for k in 0..3 {
                    acc += b[i * 3 + k] * b[j * 3 + k];
                }
                a.set(i, j, acc + if i == j { 0.5 } else { 0.0 });
            }
        }
        let (eig, vecs) = a.sym_eig();
        for i in 0..3 {
            for j in 0..3 {
                let mut rec = 0.0;
                for k in 0..3 {
                    rec += vecs[i * 3 + k] * eig[k] * vecs[j * 3 + k];
                }
                assert_relative_eq!(rec, a.get(i, j), epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn nprr_d1_reduces_to_kappa() {
        let f = random_symmetric(4, 2, 61);
        let v = ChaosVector::new(vec![(2, f.clone())]).unwrap();
        let r = nprr_bound(&v).unwrap();
        let sigma2 = 2.0 * f.inner(&f).unwrap();
        let expected = kappa(&f, 2).unwrap().sqrt() / sigma2.sqrt();
        assert_relative_eq!(r.value, expected, max_relative = 1e-9);
    }

    #[test]
    fn gaussian_vector_gives_zero_bounds() {
        let g = Grid::uniform(8).unwrap();
        let mut f1 = Kernel::zeros(g.clone(), 1).unwrap();
        for i in 0..4 {
            f1.set(&[i], 2.0f64.sqrt());
        }
        let mut f2 = Kernel::zeros(g, 1).unwrap();
        for i in 4..8 {
            f2.set(&[i], 2.0f64.sqrt());
        }
        let v = ChaosVector::new(vec![(1, f1), (1, f2)]).unwrap();
        let w = wasserstein_bound(&v).unwrap();
        assert!(w.value.abs() < 1e-12);
        let n = nprr_bound(&v).unwrap();
        assert!(n.value.abs() < 1e-9, "nprr {}", n.value);
        assert_relative_eq!(smooth_bound(&v, 5.0).unwrap(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn gaussian_fourth_moment_formula() {
        let sigma = SymMatrix::identity(2);
        assert_relative_eq!(gaussian_fourth_moment_norm(&sigma), 8.0);
        let mut s = SymMatrix::zeros(2);
        s.set(0, 0, 2.0);
        s.set(1, 1, 3.0);
        s.set(0, 1, 1.0);
        // (2+3)^2 + 2*(4+9+2*1) = 25 + 30 = 55
        assert_relative_eq!(gaussian_fourth_moment_norm(&s), 55.0);
    }

    #[test]
    fn sum_v_below_fourth_moment_gap() {
        let f1 = random_symmetric(5, 1, 71);
        let f2 = random_symmetric(5, 2, 72);
        let v = ChaosVector::new(vec![(1, f1), (2, f2)]).unwrap();
        let sum_v = s_variance_matrix(&v).unwrap().sum();
        let gap = fourth_moment_norm(&v).unwrap()
            - gaussian_fourth_moment_norm(&covariance(&v).unwrap());
        assert!(sum_v <= gap + 1e-10 * gap.abs().max(1.0), "{sum_v} vs {gap}");
    }
}
