//! Built-in kernel families used by the experiments: the block quadratic
//! variation kernel, random diagonal-free symmetric kernels, and a
//! two-component (order 1, order 2) vector family.

use crate::error::{Error, Result};
use crate::grid_kernel::{factorial, Grid, Kernel};
use crate::mc_lab::CounterRng;
use crate::stein_bounds::ChaosVector;

/// Quadratic-variation kernel: `sqrt(n/2)` on every cell pair lying in the
/// same of `n` contiguous blocks of an `m`-cell uniform grid, zero elsewhere.
/// `I_2` of it is the centered, unit-variance block quadratic variation.
pub fn qvar_kernel(n: usize, m: usize) -> Result<Kernel> {
    if n == 0 || m == 0 || m % n != 0 {
        return Err(Error::BlockMismatch { n, m });
    }
    let g = Grid::uniform(m)?;
    let block = m / n;
    let c = (n as f64 / 2.0).sqrt();
    let mut f = Kernel::from_fn(g, 2, |t| if t[0] / block == t[1] / block { c } else { 0.0 })?;
    f.symmetric = true;
    Ok(f)
}

/// Random symmetric order-`p` kernel vanishing whenever two coordinates
/// coincide, normalized to unit chaos variance.
pub fn offdiag_rand_kernel(p: usize, m: usize, seed: u64) -> Result<Kernel> {
    if p == 0 || m < p {
        return Err(Error::InvalidParameter(format!(
            "diagonal-free kernel needs at least p={p} cells, got m={m}"
        )));
    }
    let g = Grid::uniform(m)?;
    let rng = CounterRng::new(seed, 4);
    let mut i = 0u64;
    let raw = Kernel::from_fn(g, p, |t| {
        i += 1;
        for a in 0..p {
            for b in (a + 1)..p {
                if t[a] == t[b] {
                    return 0.0;
                }
            }
        }
        rng.normal_at(i)
    })?;
    // zeroing repeated-index tuples commutes with permutation averaging,
    // so the symmetrization is still diagonal-free
    let sym = raw.symmetrize();
    let sigma2 = factorial(p) * sym.inner(&sym)?;
    if sigma2 <= 0.0 {
        return Err(Error::InvalidParameter("degenerate random kernel".into()));
    }
    let mut out = sym.scale(1.0 / sigma2.sqrt());
    out.symmetric = true;
    Ok(out)
}

/// Two-component vector family: an order-1 component of unit variance
/// (constant kernel 1) and the order-2 quadratic-variation component.
/// Its covariance matrix is the 2x2 identity.
pub fn pair2d(m: usize, n: usize) -> Result<ChaosVector> {
    let g = Grid::uniform(m)?;
    let mut f1 = Kernel::from_fn(g, 1, |_| 1.0)?;
    f1.symmetric = true;
    let f2 = qvar_kernel(n, m)?;
    ChaosVector::new(vec![(1, f1), (2, f2)])
}
