//! Discretized kernel algebra on `[0,1]^p`: dense storage, symmetrization,
//! measure-weighted inner products, contractions, linear pushforwards and
//! coordinate-support restriction.
//!
//! A [`Grid`] is a finite partition of the base interval into cells with
//! explicit measures. A [`Kernel`] of order `p` is a dense coefficient array
//! indexed by `p`-tuples of cells in lexicographic (row-major) order.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default cap on dense tensor sizes (number of entries).
pub const DEFAULT_TENSOR_BUDGET: usize = 1 << 24;

/// Current tensor budget; `CHAOSLAB_BUDGET` overrides the default.
pub fn tensor_budget() -> usize {
    std::env::var("CHAOSLAB_BUDGET")
        .ok()
        .and_then(|s| s.parse().ok())
        .unwrap_or(DEFAULT_TENSOR_BUDGET)
}

fn check_budget(cells: usize, order: usize) -> Result<usize> {
    let budget = tensor_budget();
    let entries = (cells as u128).pow(order as u32);
    if entries > budget as u128 {
        return Err(Error::BudgetExceeded { entries, budget });
    }
    Ok(entries as usize)
}

/// A finite partition of the base interval into cells with strictly positive
/// measures. A doubled grid carries two copies of a base grid back to back;
/// cells `0..m` are the first half and `m..2m` the second.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "GridRepr", into = "GridRepr")]
pub struct Grid {
    measures: Vec<f64>,
    doubled: bool,
}

#[derive(Serialize, Deserialize)]
struct GridRepr {
    m: usize,
    measures: Vec<f64>,
    doubled: bool,
}

impl From<Grid> for GridRepr {
    fn from(g: Grid) -> Self {
        GridRepr {
            m: g.measures.len(),
            measures: g.measures,
            doubled: g.doubled,
        }
    }
}

impl TryFrom<GridRepr> for Grid {
    type Error = Error;
    fn try_from(r: GridRepr) -> Result<Grid> {
        if r.m != r.measures.len() {
            return Err(Error::InvalidParameter(format!(
                "grid cell count {} does not match {} measures",
                r.m,
                r.measures.len()
            )));
        }
        Grid::new(r.measures, r.doubled)
    }
}

impl PartialEq for Grid {
    fn eq(&self, other: &Self) -> bool {
        self.doubled == other.doubled && self.measures == other.measures
    }
}

impl Grid {
    pub fn new(measures: Vec<f64>, doubled: bool) -> Result<Self> {
        if measures.is_empty() {
            return Err(Error::InvalidParameter("grid needs at least one cell".into()));
        }
        if measures.iter().any(|&w| !w.is_finite() || w <= 0.0) {
            return Err(Error::InvalidParameter(
                "all cell measures must be strictly positive".into(),
            ));
        }
        if doubled {
            let n = measures.len();
            if n % 2 != 0 {
                return Err(Error::InvalidParameter(
                    "doubled grid must have an even number of cells".into(),
                ));
            }
            let m = n / 2;
            for i in 0..m {
                if measures[i] != measures[i + m] {
                    return Err(Error::InvalidParameter(
                        "doubled grid halves must carry equal measures".into(),
                    ));
                }
            }
        }
        Ok(Grid { measures, doubled })
    }

    /// Uniform base grid with `m` cells of measure `1/m`.
    pub fn uniform(m: usize) -> Result<Self> {
        if m == 0 {
            return Err(Error::InvalidParameter("grid needs at least one cell".into()));
        }
        Grid::new(vec![1.0 / m as f64; m], false)
    }

    /// Doubled variant of a base grid: two copies of its cells.
    pub fn doubled(&self) -> Result<Self> {
        if self.doubled {
            return Err(Error::InvalidParameter("grid is already doubled".into()));
        }
        let mut measures = self.measures.clone();
        measures.extend_from_slice(&self.measures);
        Grid::new(measures, true)
    }

    /// Base grid of a doubled grid (its first half).
    pub fn first_half_grid(&self) -> Result<Self> {
        if !self.doubled {
            return Err(Error::GridMismatch("grid is not doubled".into()));
        }
        Grid::new(self.measures[..self.base_cells()].to_vec(), false)
    }

    pub fn cells(&self) -> usize {
        self.measures.len()
    }

    pub fn is_doubled(&self) -> bool {
        self.doubled
    }

    /// Number of cells in one half for a doubled grid, total count otherwise.
    pub fn base_cells(&self) -> usize {
        if self.doubled {
            self.measures.len() / 2
        } else {
            self.measures.len()
        }
    }

    pub fn measure(&self, cell: usize) -> f64 {
        self.measures[cell]
    }

    pub fn measures(&self) -> &[f64] {
        &self.measures
    }

    pub fn total_measure(&self) -> f64 {
        self.measures.iter().sum()
    }
}

/// Decode a row-major index into a tuple of cell indices.
#[inline]
pub(crate) fn decode_tuple(mut idx: usize, cells: usize, tuple: &mut [usize]) {
    for slot in tuple.iter_mut().rev() {
        *slot = idx % cells;
        idx /= cells;
    }
}

/// Encode a tuple of cell indices into its row-major index.
#[inline]
pub(crate) fn encode_tuple(tuple: &[usize], cells: usize) -> usize {
    tuple.iter().fold(0, |acc, &t| acc * cells + t)
}

pub fn factorial(n: usize) -> f64 {
    (1..=n).fold(1.0, |acc, k| acc * k as f64)
}

pub fn binomial(n: usize, k: usize) -> f64 {
    if k > n {
        return 0.0;
    }
    factorial(n) / (factorial(k) * factorial(n - k))
}

/// Visit every index of an order-`p` tensor over `grid` together with the
/// product of the cell measures of its tuple. Lexicographic order.
pub(crate) fn for_each_weight(grid: &Grid, order: usize, mut visit: impl FnMut(usize, f64)) {
    let m = grid.cells();
    let len = m.pow(order as u32);
    let mut tuple = vec![0usize; order];
    // partial[k] = product of measures of tuple[..k]
    let mut partial = vec![1.0f64; order + 1];
    for k in 0..order {
        partial[k + 1] = partial[k] * grid.measure(0);
    }
    for idx in 0..len {
        visit(idx, partial[order]);
        if idx + 1 == len {
            break;
        }
        // odometer increment
        let mut k = order - 1;
        loop {
            tuple[k] += 1;
            if tuple[k] < m {
                break;
            }
            tuple[k] = 0;
            k -= 1;
        }
        for j in k..order {
            partial[j + 1] = partial[j] * grid.measure(tuple[j]);
        }
    }
}

/// Either a kernel or, for full contractions, a plain scalar.
#[derive(Debug, Clone)]
pub enum Contraction {
    Scalar(f64),
    Kernel(Kernel),
}

impl Contraction {
    pub fn unwrap_kernel(self) -> Kernel {
        match self {
            Contraction::Kernel(k) => k,
            Contraction::Scalar(_) => panic!("expected a kernel, found a scalar contraction"),
        }
    }

    pub fn unwrap_scalar(self) -> f64 {
        match self {
            Contraction::Scalar(s) => s,
            Contraction::Kernel(_) => panic!("expected a scalar, found a kernel contraction"),
        }
    }
}

/// A discretized function on the `p`-fold product of a grid. Coefficients are
/// stored densely in row-major (lexicographic) tuple order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Kernel {
    pub grid: Grid,
    pub order: usize,
    pub coeffs: Vec<f64>,
    pub symmetric: bool,
}

impl Kernel {
    pub fn new(grid: Grid, order: usize, coeffs: Vec<f64>) -> Result<Self> {
        if order == 0 {
            return Err(Error::InvalidParameter(
                "kernel order must be at least 1; order-0 objects are plain scalars".into(),
            ));
        }
        let len = check_budget(grid.cells(), order)?;
        if coeffs.len() != len {
            return Err(Error::InvalidParameter(format!(
                "kernel of order {} over {} cells needs {} coefficients, got {}",
                order,
                grid.cells(),
                len,
                coeffs.len()
            )));
        }
        if coeffs.iter().any(|c| !c.is_finite()) {
            return Err(Error::NonFinite);
        }
        Ok(Kernel {
            grid,
            order,
            coeffs,
            symmetric: false,
        })
    }

    pub fn zeros(grid: Grid, order: usize) -> Result<Self> {
        let len = check_budget(grid.cells(), order)?;
        Kernel::new(grid, order, vec![0.0; len])
    }

    pub fn from_fn(grid: Grid, order: usize, mut f: impl FnMut(&[usize]) -> f64) -> Result<Self> {
        let m = grid.cells();
        let len = check_budget(m, order)?;
        let mut coeffs = vec![0.0; len];
        let mut tuple = vec![0usize; order];
        for (idx, slot) in coeffs.iter_mut().enumerate() {
            decode_tuple(idx, m, &mut tuple);
            *slot = f(&tuple);
        }
        Kernel::new(grid, order, coeffs)
    }

    /// Validates invariants after deserialization.
    pub fn validate(&self) -> Result<()> {
        let len = check_budget(self.grid.cells(), self.order)?;
        if self.order == 0 || self.coeffs.len() != len {
            return Err(Error::InvalidParameter("kernel shape is inconsistent".into()));
        }
        if self.coeffs.iter().any(|c| !c.is_finite()) {
            return Err(Error::NonFinite);
        }
        if self.symmetric && !self.is_symmetric(1e-12) {
            return Err(Error::InvalidParameter(
                "kernel flagged symmetric but coefficients are not".into(),
            ));
        }
        Ok(())
    }

    pub fn get(&self, tuple: &[usize]) -> f64 {
        self.coeffs[encode_tuple(tuple, self.grid.cells())]
    }

    pub fn set(&mut self, tuple: &[usize], value: f64) {
        let idx = encode_tuple(tuple, self.grid.cells());
        self.coeffs[idx] = value;
        self.symmetric = false;
    }

    /// Exhaustive symmetry check under all coordinate permutations.
    pub fn is_symmetric(&self, tol: f64) -> bool {
        let m = self.grid.cells();
        let p = self.order;
        let mut tuple = vec![0usize; p];
        let mut sorted = vec![0usize; p];
        for (idx, &c) in self.coeffs.iter().enumerate() {
            decode_tuple(idx, m, &mut tuple);
            sorted.copy_from_slice(&tuple);
            sorted.sort_unstable();
            let canon = encode_tuple(&sorted, m);
            let scale = c.abs().max(self.coeffs[canon].abs()).max(1.0);
            if (c - self.coeffs[canon]).abs() > tol * scale {
                return false;
            }
        }
        true
    }

    /// Permutation average `(1/p!) * sum over coordinate permutations`.
    ///
    /// Computed by orbit accumulation rather than explicit permutation loops,
    /// so the cost is `O(m^p * p log p)` regardless of `p!`.
    pub fn symmetrize(&self) -> Kernel {
        if self.symmetric {
            return self.clone();
        }
        let m = self.grid.cells();
        let p = self.order;
        let mut acc = vec![0.0f64; self.coeffs.len()];
        let mut tuple = vec![0usize; p];
        let mut sorted = vec![0usize; p];
        for (idx, &c) in self.coeffs.iter().enumerate() {
            decode_tuple(idx, m, &mut tuple);
            sorted.copy_from_slice(&tuple);
            sorted.sort_unstable();
            acc[encode_tuple(&sorted, m)] += c;
        }
        let p_fact = factorial(p);
        let mut out = vec![0.0f64; self.coeffs.len()];
        for (idx, slot) in out.iter_mut().enumerate() {
            decode_tuple(idx, m, &mut tuple);
            sorted.copy_from_slice(&tuple);
            sorted.sort_unstable();
            // multiplicity factor: product of multiplicities' factorials
            let mut rep = 1.0;
            let mut run = 1usize;
            for k in 1..p {
                if sorted[k] == sorted[k - 1] {
                    run += 1;
                    rep *= run as f64;
                } else {
                    run = 1;
                }
            }
            *slot = acc[encode_tuple(&sorted, m)] * rep / p_fact;
        }
        Kernel {
            grid: self.grid.clone(),
            order: p,
            coeffs: out,
            symmetric: true,
        }
    }

    /// Measure-weighted inner product `<f, g>`.
    pub fn inner(&self, other: &Kernel) -> Result<f64> {
        if self.grid != other.grid {
            return Err(Error::GridMismatch("inner product needs a shared grid".into()));
        }
        if self.order != other.order {
            return Err(Error::OrderMismatch {
                expected: self.order,
                got: other.order,
            });
        }
        let mut acc = 0.0;
        for_each_weight(&self.grid, self.order, |idx, w| {
            acc += self.coeffs[idx] * other.coeffs[idx] * w;
        });
        Ok(acc)
    }

    pub fn norm(&self) -> f64 {
        self.inner(self).expect("inner with self").max(0.0).sqrt()
    }

    /// `r`-th contraction `f ⊗_r g`: integrates out `r` shared coordinates
    /// with measure weights. The result is NOT symmetrized. A full
    /// contraction (`r = p = q`) returns a scalar.
    pub fn contract(&self, other: &Kernel, r: usize) -> Result<Contraction> {
        if self.grid != other.grid {
            return Err(Error::GridMismatch("contraction needs a shared grid".into()));
        }
        let (p, q) = (self.order, other.order);
        if r > p.min(q) {
            return Err(Error::ContractionRange { r, p, q });
        }
        let m = self.grid.cells();
        let out_order = p + q - 2 * r;
        // measure weights over the integrated r-tuple
        let mut weights = vec![1.0f64];
        for _ in 0..r {
            let mut next = Vec::with_capacity(weights.len() * m);
            for &w in &weights {
                for j in 0..m {
                    next.push(w * self.grid.measure(j));
                }
            }
            weights = next;
        }
        let ur = weights.len(); // m^r
        let xr = m.pow((p - r) as u32);
        let yr = m.pow((q - r) as u32);
        if out_order == 0 {
            let mut acc = 0.0;
            for u in 0..ur {
                acc += self.coeffs[u] * other.coeffs[u] * weights[u];
            }
            return Ok(Contraction::Scalar(acc));
        }
        check_budget(m, out_order)?;
        let mut coeffs = vec![0.0f64; xr * yr];
        for x in 0..xr {
            let frow = &self.coeffs[x * ur..(x + 1) * ur];
            for y in 0..yr {
                let grow = &other.coeffs[y * ur..(y + 1) * ur];
                let mut acc = 0.0;
                for u in 0..ur {
                    acc += frow[u] * grow[u] * weights[u];
                }
                coeffs[x * yr + y] = acc;
            }
        }
        Ok(Contraction::Kernel(Kernel {
            grid: self.grid.clone(),
            order: out_order,
            coeffs,
            symmetric: false,
        }))
    }

    /// Keeps a coefficient iff ALL coordinates lie in `cells`; zeroes the rest.
    pub fn restrict_support(&self, cells: &[usize]) -> Result<Kernel> {
        let m = self.grid.cells();
        let mut keep = vec![false; m];
        for &c in cells {
            if c >= m {
                return Err(Error::InvalidCell { index: c, cells: m });
            }
            keep[c] = true;
        }
        Ok(self.restrict_support_mask(&keep))
    }

    pub(crate) fn restrict_support_mask(&self, keep: &[bool]) -> Kernel {
        let m = self.grid.cells();
        let p = self.order;
        let mut out = self.coeffs.clone();
        let mut tuple = vec![0usize; p];
        for (idx, slot) in out.iter_mut().enumerate() {
            decode_tuple(idx, m, &mut tuple);
            if tuple.iter().any(|&t| !keep[t]) {
                *slot = 0.0;
            }
        }
        Kernel {
            grid: self.grid.clone(),
            order: p,
            coeffs: out,
            symmetric: false,
        }
    }

    pub fn scale(&self, c: f64) -> Kernel {
        let mut out = self.clone();
        for v in &mut out.coeffs {
            *v *= c;
        }
        out
    }

    /// `self + c * other`.
    pub fn axpy(&self, c: f64, other: &Kernel) -> Result<Kernel> {
        if self.grid != other.grid {
            return Err(Error::GridMismatch("kernel addition needs a shared grid".into()));
        }
        if self.order != other.order {
            return Err(Error::OrderMismatch {
                expected: self.order,
                got: other.order,
            });
        }
        let mut out = self.clone();
        out.symmetric = self.symmetric && other.symmetric;
        for (v, o) in out.coeffs.iter_mut().zip(&other.coeffs) {
            *v += c * o;
        }
        Ok(out)
    }
}

/// A linear cell map `a[target][source]` applied coordinate-wise to kernels,
/// i.e. `A^{⊗p} f`.
#[derive(Debug, Clone)]
pub struct CellMap {
    pub source: Grid,
    pub target: Grid,
    // target-major: matrix[t * source_cells + s]
    matrix: Vec<f64>,
}

impl CellMap {
    pub fn new(source: Grid, target: Grid, matrix: Vec<f64>) -> Result<Self> {
        if matrix.len() != source.cells() * target.cells() {
            return Err(Error::InvalidParameter(format!(
                "cell map needs {}x{} entries, got {}",
                target.cells(),
                source.cells(),
                matrix.len()
            )));
        }
        Ok(CellMap {
            source,
            target,
            matrix,
        })
    }

    pub fn identity(grid: &Grid) -> Self {
        let m = grid.cells();
        let mut matrix = vec![0.0; m * m];
        for i in 0..m {
            matrix[i * m + i] = 1.0;
        }
        CellMap {
            source: grid.clone(),
            target: grid.clone(),
            matrix,
        }
    }

    /// Mehler interpolation: cell `i` maps to `e^{-t}` on first-half `i`
    /// and `sqrt(1 - e^{-2t})` on second-half `i`.
    pub fn mehler(base: &Grid, t: f64) -> Result<Self> {
        if base.is_doubled() {
            return Err(Error::GridMismatch("mehler map starts from a base grid".into()));
        }
        if t <= 0.0 || !t.is_finite() {
            return Err(Error::InvalidParameter("interpolation time must be positive".into()));
        }
        let m = base.cells();
        let target = base.doubled()?;
        let (a, b) = (f64::exp(-t), (1.0 - f64::exp(-2.0 * t)).sqrt());
        let mut matrix = vec![0.0; 2 * m * m];
        for i in 0..m {
            matrix[i * m + i] = a;
            matrix[(i + m) * m + i] = b;
        }
        CellMap::new(base.clone(), target, matrix)
    }

    /// Embeds a base grid into the first half of its doubled grid.
    pub fn embed_first_half(base: &Grid) -> Result<Self> {
        if base.is_doubled() {
            return Err(Error::GridMismatch("embedding starts from a base grid".into()));
        }
        let m = base.cells();
        let target = base.doubled()?;
        let mut matrix = vec![0.0; 2 * m * m];
        for i in 0..m {
            matrix[i * m + i] = 1.0;
        }
        CellMap::new(base.clone(), target, matrix)
    }

    /// Block-swap map: cells inside `block` read from the second half of the
    /// doubled grid, the rest from the first half.
    pub fn block_swap(base: &Grid, block: std::ops::Range<usize>) -> Result<Self> {
        if base.is_doubled() {
            return Err(Error::GridMismatch("block swap starts from a base grid".into()));
        }
        let m = base.cells();
        if block.end > m {
            return Err(Error::InvalidCell {
                index: block.end,
                cells: m,
            });
        }
        let target = base.doubled()?;
        let mut matrix = vec![0.0; 2 * m * m];
        for i in 0..m {
            if block.contains(&i) {
                matrix[(i + m) * m + i] = 1.0;
            } else {
                matrix[i * m + i] = 1.0;
            }
        }
        CellMap::new(base.clone(), target, matrix)
    }

    pub fn entry(&self, target: usize, source: usize) -> f64 {
        self.matrix[target * self.source.cells() + source]
    }

    /// Applies the map to every coordinate of `f` (mode products).
    pub fn push_forward(&self, f: &Kernel) -> Result<Kernel> {
        if f.grid != self.source {
            return Err(Error::GridMismatch(
                "push_forward source grid does not match the kernel grid".into(),
            ));
        }
        let ms = self.source.cells();
        let mt = self.target.cells();
        let p = f.order;
        check_budget(mt.max(ms), p)?;
        let mut data = f.coeffs.clone();
        for _ in 0..p {
            let rest = data.len() / ms;
            let mut next = vec![0.0f64; mt * rest];
            for t in 0..mt {
                let dst = &mut next[t * rest..(t + 1) * rest];
                for s in 0..ms {
                    let a = self.matrix[t * ms + s];
                    if a == 0.0 {
                        continue;
                    }
                    let src = &data[s * rest..(s + 1) * rest];
                    for (d, v) in dst.iter_mut().zip(src) {
                        *d += a * v;
                    }
                }
            }
            // move the freshly mapped first axis to the back
            let mut rotated = vec![0.0f64; mt * rest];
            for t in 0..mt {
                for j in 0..rest {
                    rotated[j * mt + t] = next[t * rest + j];
                }
            }
            data = rotated;
        }
        Kernel::new(self.target.clone(), p, data)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn grid4() -> Grid {
        Grid::uniform(4).unwrap()
    }

    #[test]
    fn symmetrize_fixed_point() {
        let g = grid4();
        let f = Kernel::from_fn(g, 2, |t| (t[0] + t[1]) as f64).unwrap();
        let s = f.symmetrize();
        assert!(s.symmetric);
        for (a, b) in f.coeffs.iter().zip(&s.coeffs) {
            assert_relative_eq!(a, b, max_relative = 1e-15);
        }
    }

    #[test]
    fn symmetrize_pair_indicator() {
        let g = grid4();
        let mut f = Kernel::zeros(g, 2).unwrap();
        f.set(&[1, 2], 1.0);
        let s = f.symmetrize();
        assert_relative_eq!(s.get(&[1, 2]), 0.5);
        assert_relative_eq!(s.get(&[2, 1]), 0.5);
        assert_relative_eq!(s.get(&[0, 0]), 0.0);
    }

    #[test]
    fn symmetrize_idempotent_p3() {
        let g = grid4();
        let f = Kernel::from_fn(g, 3, |t| {
            ((t[0] * 31 + t[1] * 7 + t[2] * 3) % 11) as f64 - 5.0
        })
        .unwrap();
        let s1 = f.symmetrize();
        let mut s1b = s1.clone();
        s1b.symmetric = false; // force recomputation
        let s2 = s1b.symmetrize();
        for (a, b) in s1.coeffs.iter().zip(&s2.coeffs) {
            assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
        }
        assert!(s1.is_symmetric(1e-12));
    }

    #[test]
    fn inner_single_cell_indicator() {
        let g = grid4();
        let mut f = Kernel::zeros(g, 1).unwrap();
        f.set(&[2], 1.0);
        assert_relative_eq!(f.inner(&f).unwrap(), 0.25);
    }

    #[test]
    fn inner_disjoint_supports() {
        let g = grid4();
        let mut f = Kernel::zeros(g.clone(), 1).unwrap();
        f.set(&[0], 3.0);
        let mut h = Kernel::zeros(g, 1).unwrap();
        h.set(&[3], -2.0);
        assert_relative_eq!(f.inner(&h).unwrap(), 0.0);
    }

    #[test]
    fn inner_constants_total_measure() {
        let g = Grid::uniform(2).unwrap();
        let f = Kernel::from_fn(g.clone(), 2, |_| 1.0).unwrap();
        let h = Kernel::from_fn(g, 2, |_| 2.5).unwrap();
        assert_relative_eq!(f.inner(&h).unwrap(), 2.5, max_relative = 1e-14);
    }

    #[test]
    fn inner_rejects_mismatches() {
        let f = Kernel::zeros(grid4(), 1).unwrap();
        let h = Kernel::zeros(grid4(), 2).unwrap();
        assert!(matches!(f.inner(&h), Err(Error::OrderMismatch { .. })));
        let other = Kernel::zeros(Grid::uniform(3).unwrap(), 1).unwrap();
        assert!(matches!(f.inner(&other), Err(Error::GridMismatch(_))));
    }

    #[test]
    fn contract_r0_is_tensor_product() {
        let g = Grid::uniform(2).unwrap();
        let f = Kernel::new(g.clone(), 1, vec![1.0, 2.0]).unwrap();
        let h = Kernel::new(g, 1, vec![3.0, 4.0]).unwrap();
        let k = f.contract(&h, 0).unwrap().unwrap_kernel();
        assert_eq!(k.order, 2);
        assert_eq!(k.coeffs, vec![3.0, 4.0, 6.0, 8.0]);
    }

    #[test]
    fn contract_full_equals_inner() {
        let g = grid4();
        let f = Kernel::from_fn(g.clone(), 2, |t| (t[0] * 2 + t[1]) as f64).unwrap();
        let h = Kernel::from_fn(g, 2, |t| (t[0] + 3 * t[1]) as f64).unwrap();
        let s = f.contract(&h, 2).unwrap().unwrap_scalar();
        assert_relative_eq!(s, f.inner(&h).unwrap(), max_relative = 1e-13);
    }

    #[test]
    fn contract_hand_sum() {
        let g = Grid::uniform(2).unwrap(); // measures 1/2
        let f = Kernel::new(g.clone(), 1, vec![1.0, 2.0]).unwrap();
        let h = Kernel::new(g, 1, vec![3.0, 4.0]).unwrap();
        let s = f.contract(&h, 1).unwrap().unwrap_scalar();
        assert_relative_eq!(s, 5.5);
    }

    #[test]
    fn contract_rejects_out_of_range() {
        let g = grid4();
        let f = Kernel::zeros(g.clone(), 2).unwrap();
        let h = Kernel::zeros(g, 1).unwrap();
        assert!(matches!(
            f.contract(&h, 2),
            Err(Error::ContractionRange { .. })
        ));
    }

    #[test]
    fn push_forward_identity_and_permutation() {
        let g = grid4();
        let f = Kernel::from_fn(g.clone(), 2, |t| (3 * t[0] + t[1]) as f64).unwrap();
        let id = CellMap::identity(&g);
        let pf = id.push_forward(&f).unwrap();
        assert_eq!(pf.coeffs, f.coeffs);

        // cyclic permutation of cells
        let m = g.cells();
        let mut matrix = vec![0.0; m * m];
        for s in 0..m {
            matrix[((s + 1) % m) * m + s] = 1.0;
        }
        let perm = CellMap::new(g.clone(), g, matrix).unwrap();
        let pp = perm.push_forward(&f).unwrap();
        assert_relative_eq!(pp.get(&[1, 2]), f.get(&[0, 1]));
        assert_relative_eq!(pp.get(&[0, 0]), f.get(&[3, 3]));
    }

    #[test]
    fn push_forward_mehler_order1() {
        let g = grid4();
        let t = 0.7;
        let f = Kernel::new(g.clone(), 1, vec![1.0, -2.0, 0.5, 3.0]).unwrap();
        let map = CellMap::mehler(&g, t).unwrap();
        let pf = map.push_forward(&f).unwrap();
        let (a, b) = (f64::exp(-t), (1.0 - f64::exp(-2.0 * t)).sqrt());
        for i in 0..4 {
            assert_relative_eq!(pf.coeffs[i], a * f.coeffs[i], max_relative = 1e-14);
            assert_relative_eq!(pf.coeffs[i + 4], b * f.coeffs[i], max_relative = 1e-14);
        }
    }

    #[test]
    fn mehler_map_preserves_inner_products() {
        let g = grid4();
        let f = Kernel::from_fn(g.clone(), 2, |t| (t[0] as f64) - 0.3 * (t[1] as f64)).unwrap();
        let h = Kernel::from_fn(g.clone(), 2, |t| 1.0 + (t[0] * t[1]) as f64).unwrap();
        for &t in &[0.05, 0.5, 2.0] {
            let map = CellMap::mehler(&g, t).unwrap();
            let pf = map.push_forward(&f).unwrap();
            let ph = map.push_forward(&h).unwrap();
            assert_relative_eq!(
                pf.inner(&ph).unwrap(),
                f.inner(&h).unwrap(),
                max_relative = 1e-12
            );
        }
    }

    #[test]
    fn restrict_support_cases() {
        let g = grid4();
        let f = Kernel::from_fn(g.clone(), 2, |_| 1.0).unwrap();
        let all = f.restrict_support(&[0, 1, 2, 3]).unwrap();
        assert_eq!(all.coeffs, f.coeffs);
        let none = f.restrict_support(&[]).unwrap();
        assert!(none.coeffs.iter().all(|&c| c == 0.0));
        // surviving mass: 4 tuples over {0,1}^2, each weight 1/16
        let half = f.restrict_support(&[0, 1]).unwrap();
        assert_relative_eq!(half.inner(&half).unwrap(), 0.25, max_relative = 1e-14);
        assert!(matches!(
            f.restrict_support(&[7]),
            Err(Error::InvalidCell { .. })
        ));
    }

    #[test]
    fn symmetrization_is_self_adjoint_projection() {
        let g = grid4();
        let f = Kernel::from_fn(g.clone(), 3, |t| ((t[0] * 5 + t[1] * 2 + t[2]) % 7) as f64).unwrap();
        let h = Kernel::from_fn(g, 3, |t| ((t[0] + t[1] * 3 + t[2] * 4) % 5) as f64).unwrap();
        let fs = f.symmetrize();
        assert_relative_eq!(
            fs.inner(&h.symmetrize()).unwrap(),
            fs.inner(&h).unwrap(),
            max_relative = 1e-12
        );
    }

    #[test]
    fn contraction_norm_cauchy_schwarz() {
        let g = grid4();
        let f = Kernel::from_fn(g, 2, |t| ((t[0] * 3 + t[1] * 5) % 4) as f64 - 1.5)
            .unwrap()
            .symmetrize();
        let n2 = f.inner(&f).unwrap();
        for r in 0..=2usize {
            let c = f.contract(&f, r).unwrap();
            let norm = match c {
                Contraction::Scalar(s) => s.abs(),
                Contraction::Kernel(k) => k.norm(),
            };
            assert!(norm <= n2 * (1.0 + 1e-12), "r={r}: {norm} vs {n2}");
        }
    }

    #[test]
    fn budget_is_enforced() {
        let g = Grid::uniform(64).unwrap();
        assert!(matches!(
            Kernel::zeros(g, 5),
            Err(Error::BudgetExceeded { .. })
        ));
    }

    #[test]
    fn kernel_json_round_trip() {
        let g = grid4();
        let f = Kernel::from_fn(g, 2, |t| (t[0] + 2 * t[1]) as f64)
            .unwrap()
            .symmetrize();
        let json = serde_json::to_string(&f).unwrap();
        let back: Kernel = serde_json::from_str(&json).unwrap();
        back.validate().unwrap();
        assert_eq!(back, f);
    }
}
