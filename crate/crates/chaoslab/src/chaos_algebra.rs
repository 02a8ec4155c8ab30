//! Finite chaos expansions over a grid: product formula, exact moments,
//! Ornstein-Uhlenbeck generator, carre du champ and pointwise evaluation on
//! Gaussian samples via probabilists' Hermite polynomials.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid_kernel::{
    binomial, decode_tuple, factorial, Contraction, Grid, Kernel,
};

/// A finite map order -> symmetric kernel, plus a constant (order-0) term.
/// Absent orders are implicitly zero; the constant is the mean.
#[derive(Debug, Clone, PartialEq)]
pub struct ChaosExpansion {
    grid: Grid,
    constant: f64,
    terms: BTreeMap<usize, Kernel>,
}

#[derive(Serialize, Deserialize)]
struct TermRepr {
    order: usize,
    kernel: Kernel,
}

#[derive(Serialize, Deserialize)]
struct ExpansionRepr {
    grid: Grid,
    constant: f64,
    terms: Vec<TermRepr>,
}

impl Serialize for ChaosExpansion {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        ExpansionRepr {
            grid: self.grid.clone(),
            constant: self.constant,
            terms: self
                .terms
                .iter()
                .map(|(&order, kernel)| TermRepr {
                    order,
                    kernel: kernel.clone(),
                })
                .collect(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for ChaosExpansion {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let repr = ExpansionRepr::deserialize(d)?;
        let mut out = ChaosExpansion::constant_expansion(repr.grid, repr.constant);
        for t in repr.terms {
            out.add_kernel(t.order, &t.kernel)
                .map_err(serde::de::Error::custom)?;
        }
        Ok(out)
    }
}

impl ChaosExpansion {
    pub fn constant_expansion(grid: Grid, c: f64) -> Self {
        ChaosExpansion {
            grid,
            constant: c,
            terms: BTreeMap::new(),
        }
    }

    pub fn zero(grid: Grid) -> Self {
        Self::constant_expansion(grid, 0.0)
    }

    /// Pure chaos element `I_p(f)`. The kernel is symmetrized on entry.
    pub fn from_kernel(p: usize, f: &Kernel) -> Result<Self> {
        if p != f.order {
            return Err(Error::OrderMismatch {
                expected: p,
                got: f.order,
            });
        }
        let mut out = Self::zero(f.grid.clone());
        out.add_kernel(p, f)?;
        Ok(out)
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn constant(&self) -> f64 {
        self.constant
    }

    pub fn terms(&self) -> impl Iterator<Item = (usize, &Kernel)> {
        self.terms.iter().map(|(&q, k)| (q, k))
    }

    pub fn kernel(&self, order: usize) -> Option<&Kernel> {
        self.terms.get(&order)
    }

    pub fn max_order(&self) -> usize {
        self.terms.keys().next_back().copied().unwrap_or(0)
    }

    pub fn add_constant(&mut self, c: f64) {
        self.constant += c;
    }

    /// Adds `I_q(f)` to the expansion; `f` is symmetrized first.
    pub fn add_kernel(&mut self, order: usize, f: &Kernel) -> Result<()> {
        if f.grid != self.grid {
            return Err(Error::GridMismatch("expansion terms need a shared grid".into()));
        }
        if order != f.order {
            return Err(Error::OrderMismatch {
                expected: order,
                got: f.order,
            });
        }
        let sym = f.symmetrize();
        match self.terms.remove(&order) {
            Some(existing) => {
                let mut merged = existing.axpy(1.0, &sym)?;
                merged.symmetric = true;
                self.terms.insert(order, merged);
            }
            None => {
                self.terms.insert(order, sym);
            }
        }
        Ok(())
    }

    pub fn scale(&self, c: f64) -> Self {
        let mut out = self.clone();
        out.constant *= c;
        for k in out.terms.values_mut() {
            let mut scaled = k.scale(c);
            scaled.symmetric = true;
            *k = scaled;
        }
        out
    }

    /// `self + c * other`.
    pub fn axpy(&self, c: f64, other: &Self) -> Result<Self> {
        if self.grid != other.grid {
            return Err(Error::GridMismatch("expansion addition needs a shared grid".into()));
        }
        let mut out = self.clone();
        out.constant += c * other.constant;
        for (&q, k) in &other.terms {
            out.add_kernel(q, &k.scale(c))?;
        }
        Ok(out)
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.axpy(1.0, other)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.axpy(-1.0, other)
    }

    pub fn mean(&self) -> f64 {
        self.constant
    }

    /// `E[F^2] = c^2 + sum_q q! <f_q, f_q>`.
    pub fn second_moment(&self) -> f64 {
        let mut acc = self.constant * self.constant;
        for (&q, k) in &self.terms {
            acc += factorial(q) * k.inner(k).expect("inner with self");
        }
        acc
    }

    pub fn variance(&self) -> f64 {
        (self.second_moment() - self.mean() * self.mean()).max(0.0)
    }

    pub fn l2_norm(&self) -> f64 {
        self.second_moment().max(0.0).sqrt()
    }

    /// `E[F G]` by chaos orthogonality, without forming the product.
    pub fn expectation_product(&self, other: &Self) -> Result<f64> {
        if self.grid != other.grid {
            return Err(Error::GridMismatch("expectation needs a shared grid".into()));
        }
        let mut acc = self.constant * other.constant;
        for (&q, k) in &self.terms {
            if let Some(o) = other.terms.get(&q) {
                acc += factorial(q) * k.inner(o)?;
            }
        }
        Ok(acc)
    }

    /// Product formula applied term-pair-wise; every contraction is
    /// symmetrized immediately.
    pub fn multiply(&self, other: &Self) -> Result<Self> {
        if self.grid != other.grid {
            return Err(Error::GridMismatch("product needs a shared grid".into()));
        }
        let mut out = Self::constant_expansion(self.grid.clone(), self.constant * other.constant);
        if other.constant != 0.0 {
            for (&p, f) in &self.terms {
                out.add_kernel(p, &f.scale(other.constant))?;
            }
        }
        if self.constant != 0.0 {
            for (&q, g) in &other.terms {
                out.add_kernel(q, &g.scale(self.constant))?;
            }
        }
        for (&p, f) in &self.terms {
            for (&q, g) in &other.terms {
                for r in 0..=p.min(q) {
                    let coef = factorial(r) * binomial(p, r) * binomial(q, r);
                    match f.contract(g, r)? {
                        Contraction::Scalar(s) => out.constant += coef * s,
                        Contraction::Kernel(k) => out.add_kernel(p + q - 2 * r, &k.scale(coef))?,
                    }
                }
            }
        }
        Ok(out)
    }

    /// Ornstein-Uhlenbeck generator: multiplication by `-q` on the order-`q`
    /// chaos, zero on constants.
    pub fn ou_generator(&self) -> Self {
        let mut out = Self::zero(self.grid.clone());
        for (&q, k) in &self.terms {
            let mut scaled = k.scale(-(q as f64));
            scaled.symmetric = true;
            out.terms.insert(q, scaled);
        }
        out
    }

    /// Carre du champ `Γ(F,G) = (L(FG) - F LG - G LF) / 2`.
    pub fn carre_du_champ(&self, other: &Self) -> Result<Self> {
        let prod = self.multiply(other)?;
        let lfg = prod.ou_generator();
        let f_lg = self.multiply(&other.ou_generator())?;
        let g_lf = other.multiply(&self.ou_generator())?;
        Ok(lfg.sub(&f_lg)?.sub(&g_lf)?.scale(0.5))
    }

    /// Largest absolute coefficient difference against `other`, taken over
    /// constants and kernels on the union of stored orders.
    pub fn max_abs_difference(&self, other: &Self) -> f64 {
        let mut worst = (self.constant - other.constant).abs();
        let orders: std::collections::BTreeSet<usize> = self
            .terms
            .keys()
            .chain(other.terms.keys())
            .copied()
            .collect();
        for q in orders {
            match (self.terms.get(&q), other.terms.get(&q)) {
                (Some(a), Some(b)) => {
                    for (x, y) in a.coeffs.iter().zip(&b.coeffs) {
                        worst = worst.max((x - y).abs());
                    }
                }
                (Some(a), None) | (None, Some(a)) => {
                    for x in &a.coeffs {
                        worst = worst.max(x.abs());
                    }
                }
                (None, None) => {}
            }
        }
        worst
    }

    /// Largest absolute coefficient across all terms and the constant.
    pub fn max_abs_coeff(&self) -> f64 {
        let mut worst = self.constant.abs();
        for k in self.terms.values() {
            for x in &k.coeffs {
                worst = worst.max(x.abs());
            }
        }
        worst
    }
}

/// `E[I_p(f)^4]` for symmetric `f`, evaluated through the contraction-norm
/// identity `E[F^4] = 3 sigma^4 + 3 sum_{r=1}^{p-1} (r/p) r!^2 C(p,r)^4
/// (2p-2r)! ||f ~o_r f||^2`, which never materializes the order-`2p` tensor.
pub fn fourth_moment_pure(p: usize, f: &Kernel) -> Result<f64> {
    if p != f.order {
        return Err(Error::OrderMismatch {
            expected: p,
            got: f.order,
        });
    }
    let sym = f.symmetrize();
    let sigma2 = factorial(p) * sym.inner(&sym)?;
    Ok(3.0 * sigma2 * sigma2 + kappa_of_symmetric(p, &sym)?)
}

/// Fourth-moment discrepancy `E[F^4] - 3 sigma^4` of a symmetric kernel,
/// as a sum of non-negative contraction-norm terms.
pub(crate) fn kappa_of_symmetric(p: usize, sym: &Kernel) -> Result<f64> {
    let mut acc = 0.0;
    for r in 1..p {
        let c = match sym.contract(sym, r)? {
            Contraction::Kernel(k) => k.symmetrize(),
            Contraction::Scalar(_) => unreachable!("r < p keeps a positive order"),
        };
        let w = factorial(r).powi(2)
            * binomial(p, r).powi(4)
            * factorial(2 * p - 2 * r)
            * (r as f64 / p as f64);
        acc += 3.0 * w * c.inner(&c)?;
    }
    Ok(acc)
}

/// Hypercontractivity constant `c_{4,p} = sum_r r!^2 C(p,r)^4 (2p-2r)! / p!^2`.
pub fn hypercontractivity_constant(p: usize) -> f64 {
    let mut acc = 0.0;
    for r in 0..=p {
        acc += factorial(r).powi(2) * binomial(p, r).powi(4) * factorial(2 * p - 2 * r);
    }
    acc / factorial(p).powi(2)
}

/// Independent standard normal draws, one per grid cell: the normalized
/// increments `xi_i = ΔB_i / sqrt(measure_i)`.
#[derive(Debug, Clone)]
pub struct GaussianSample {
    pub grid: Grid,
    pub xi: Vec<f64>,
    pub seed: Option<u64>,
}

impl GaussianSample {
    pub fn new(grid: Grid, xi: Vec<f64>) -> Result<Self> {
        if xi.len() != grid.cells() {
            return Err(Error::InvalidParameter(format!(
                "sample needs {} draws, got {}",
                grid.cells(),
                xi.len()
            )));
        }
        Ok(GaussianSample {
            grid,
            xi,
            seed: None,
        })
    }
}

/// Probabilists' Hermite polynomial `He_k(x)`.
pub fn hermite(k: usize, x: f64) -> f64 {
    match k {
        0 => 1.0,
        1 => x,
        _ => {
            let mut prev = 1.0;
            let mut cur = x;
            for n in 1..k {
                let next = x * cur - n as f64 * prev;
                prev = cur;
                cur = next;
            }
            cur
        }
    }
}

/// Compiled form of a chaos expansion for fast repeated evaluation.
///
/// Each order-`q` kernel is grouped by the multiset of its tuple's cells;
/// a multiset with multiplicities `(k_i)` evaluates to the product of
/// `He_{k_i}(xi_i)`, and its coefficient absorbs the `sqrt(measure)` factors
/// and the orbit count. The normalization is pinned by the linear case
/// (`I_1(f) = sum f_i ΔB_i`) and the diagonal-cell case
/// (`I_2(1_{(i,i)}) = ΔB_i^2 - measure_i`).
#[derive(Debug, Clone)]
pub struct Evaluator {
    grid: Grid,
    constant: f64,
    terms: Vec<EvalTerm>,
}

#[derive(Debug, Clone)]
struct EvalTerm {
    factors: Vec<(usize, usize)>, // (cell, hermite degree)
    coeff: f64,
}

impl Evaluator {
    pub fn new(expansion: &ChaosExpansion) -> Self {
        let grid = expansion.grid().clone();
        let m = grid.cells();
        let sqrt_measure: Vec<f64> = grid.measures().iter().map(|w| w.sqrt()).collect();
        let mut grouped: BTreeMap<Vec<usize>, f64> = BTreeMap::new();
        for (q, kernel) in expansion.terms() {
            let mut tuple = vec![0usize; q];
            for (idx, &c) in kernel.coeffs.iter().enumerate() {
                if c == 0.0 {
                    continue;
                }
                decode_tuple(idx, m, &mut tuple);
                let scaled = tuple.iter().fold(c, |acc, &i| acc * sqrt_measure[i]);
                let mut key = tuple.clone();
                key.sort_unstable();
                *grouped.entry(key).or_insert(0.0) += scaled;
            }
        }
        let terms = grouped
            .into_iter()
            .filter(|&(_, coeff)| coeff != 0.0)
            .map(|(key, coeff)| {
                let mut factors: Vec<(usize, usize)> = Vec::new();
                for &cell in &key {
                    match factors.last_mut() {
                        Some((c, k)) if *c == cell => *k += 1,
                        _ => factors.push((cell, 1)),
                    }
                }
                EvalTerm { factors, coeff }
            })
            .collect();
        Evaluator {
            grid,
            constant: expansion.constant(),
            terms,
        }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    /// Number of grouped multiset terms (zero-coefficient tuples are dropped).
    pub fn term_count(&self) -> usize {
        self.terms.len()
    }

    /// Evaluates at a vector of normalized increments.
    pub fn value(&self, xi: &[f64]) -> f64 {
        let mut acc = self.constant;
        for term in &self.terms {
            let mut prod = term.coeff;
            for &(cell, k) in &term.factors {
                prod *= hermite(k, xi[cell]);
            }
            acc += prod;
        }
        acc
    }
}

/// Deterministic pointwise evaluation of `F` at a Gaussian sample.
pub fn evaluate(expansion: &ChaosExpansion, sample: &GaussianSample) -> Result<f64> {
    if sample.grid != *expansion.grid() {
        return Err(Error::GridMismatch("sample grid does not match expansion".into()));
    }
    Ok(Evaluator::new(expansion).value(&sample.xi))
}
