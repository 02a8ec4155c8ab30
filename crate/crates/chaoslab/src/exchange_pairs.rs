//! Exchangeable pairs on the grid: the Ornstein-Uhlenbeck (Mehler)
//! interpolation pair and the Gibbs block-resampling pair, with exact
//! conditional-moment diagnostics.
//!
//! All conditional moments are computed exactly through the doubled-grid
//! kernel algebra (transport, product formula, first-half restriction) —
//! never by conditional Monte Carlo regression. The discretized model is
//! itself a finite Gaussian space, so the limit statements hold exactly in
//! it and become testable rate tables.

use serde::Serialize;

use crate::chaos_algebra::{fourth_moment_pure, ChaosExpansion, Evaluator};
use crate::error::{Error, Result};
use crate::grid_kernel::{binomial, decode_tuple, encode_tuple, factorial, CellMap, Grid, Kernel};
use crate::mc_lab::CounterRng;

/// The interpolated-noise pair at time `t`: the base noise is rotated into a
/// doubled grid with weight `e^{-t}` on the first half and
/// `sqrt(1 - e^{-2t})` on an independent second half.
#[derive(Debug, Clone)]
pub struct MehlerPair {
    pub t: f64,
    pub base: Grid,
    pub doubled: Grid,
    pub map: CellMap,
}

impl MehlerPair {
    pub fn new(base: &Grid, t: f64) -> Result<Self> {
        let map = CellMap::mehler(base, t)?;
        Ok(MehlerPair {
            t,
            base: base.clone(),
            doubled: map.target.clone(),
            map,
        })
    }
}

/// The block-resampling pair: `n` contiguous equal blocks of an `m`-cell
/// grid; the pair redraws the noise on one uniformly chosen block.
#[derive(Debug, Clone)]
pub struct GibbsBlocks {
    pub n: usize,
    pub base: Grid,
}

impl GibbsBlocks {
    pub fn new(base: &Grid, n: usize) -> Result<Self> {
        let m = base.cells();
        if n == 0 || m % n != 0 {
            return Err(Error::BlockMismatch { n, m });
        }
        Ok(GibbsBlocks {
            n,
            base: base.clone(),
        })
    }

    pub fn block_size(&self) -> usize {
        self.base.cells() / self.n
    }

    pub fn block_range(&self, v: usize) -> std::ops::Range<usize> {
        let s = self.block_size();
        v * s..(v + 1) * s
    }
}

/// Rewrites `F` over the doubled grid through the interpolation map;
/// preserves the second moment exactly.
pub fn mehler_transport(f: &ChaosExpansion, t: f64) -> Result<ChaosExpansion> {
    let map = CellMap::mehler(f.grid(), t)?;
    push_expansion(f, &map)
}

/// Embeds `F` into the first half of the doubled grid unchanged.
pub fn embed_doubled(f: &ChaosExpansion) -> Result<ChaosExpansion> {
    let map = CellMap::embed_first_half(f.grid())?;
    push_expansion(f, &map)
}

fn push_expansion(f: &ChaosExpansion, map: &CellMap) -> Result<ChaosExpansion> {
    let mut out = ChaosExpansion::constant_expansion(map.target.clone(), f.constant());
    for (q, k) in f.terms() {
        out.add_kernel(q, &map.push_forward(k)?)?;
    }
    Ok(out)
}

/// Re-indexes a doubled-grid kernel onto the base grid, keeping only tuples
/// whose coordinates all lie in the first half.
fn restrict_to_base(k: &Kernel) -> Result<Kernel> {
    let base = k.grid.first_half_grid()?;
    let m = base.cells();
    let cells = k.grid.cells();
    let mut out = Kernel::zeros(base, k.order)?;
    let mut tuple = vec![0usize; k.order];
    for (idx, slot) in out.coeffs.iter_mut().enumerate() {
        decode_tuple(idx, m, &mut tuple);
        *slot = k.coeffs[encode_tuple(&tuple, cells)];
    }
    out.symmetric = k.symmetric;
    Ok(out)
}

/// Conditional expectation given the first-half noise: every chaos term with
/// a second-half coordinate is centered and independent, so each kernel is
/// restricted to first-half tuples and re-indexed onto the base grid.
pub fn condition_on_first_half(h: &ChaosExpansion) -> Result<ChaosExpansion> {
    let base = h.grid().first_half_grid()?;
    let mut out = ChaosExpansion::constant_expansion(base, h.constant());
    for (q, k) in h.terms() {
        out.add_kernel(q, &restrict_to_base(k)?)?;
    }
    Ok(out)
}

/// Exact L2 distance of the normalized conditional drift from its limit:
/// `|| (1/t) E[F_t - F | first half] + p F ||`. Computed through the algebra;
/// equals `|(e^{-pt} - 1)/t + p| * sqrt(p!) * ||f~||` by the conditional
/// contraction identity.
pub fn mehler_drift_check(f: &Kernel, p: usize, t: f64) -> Result<f64> {
    let big_f = ChaosExpansion::from_kernel(p, f)?;
    let cond = condition_on_first_half(&mehler_transport(&big_f, t)?)?;
    let expr = cond.sub(&big_f)?.scale(1.0 / t).axpy(p as f64, &big_f)?;
    Ok(expr.second_moment().sqrt())
}

/// Limit of the normalized conditional quadratic moment:
/// `T = 2 sum_{r=1}^p r r! C(p,r)^2 I_{2p-2r}(f ~o_r f)`, whose `r = p` term
/// is the constant `2 p sigma^2`.
pub fn quadratic_target(f: &Kernel, p: usize) -> Result<ChaosExpansion> {
    let sym = f.symmetrize();
    let mut out = ChaosExpansion::zero(sym.grid.clone());
    for r in 1..=p {
        let coef = 2.0 * r as f64 * factorial(r) * binomial(p, r).powi(2);
        if r == p {
            out.add_constant(coef * sym.inner(&sym)?);
        } else {
            let k = sym.contract(&sym, r)?.unwrap_kernel();
            out.add_kernel(2 * p - 2 * r, &k.scale(coef))?;
        }
    }
    Ok(out)
}

/// Difference kernel of the pair: transported minus embedded `f`.
fn pair_difference(f: &Kernel, p: usize, t: f64) -> Result<Kernel> {
    if p != f.order {
        return Err(Error::OrderMismatch {
            expected: p,
            got: f.order,
        });
    }
    let map = CellMap::mehler(&f.grid, t)?;
    let emb = CellMap::embed_first_half(&f.grid)?;
    map.push_forward(f)?.axpy(-1.0, &emb.push_forward(f)?)
}

/// Normalized conditional quadratic moment of a difference chaos
/// `D = I_p(d)` over a doubled grid, as a base-grid expansion:
/// `(1/t) E[D^2 | first half]`, assembled term-by-term from the product
/// formula. The top-order (`r = 0`) term is built by restricting `d` first
/// and tensoring on the base grid — the restriction of a tensor square
/// factorizes — which keeps the largest tensor at `m^{2p}` instead of
/// `(2m)^{2p}` entries.
fn conditional_quadratic(d: &Kernel, p: usize, t: f64) -> Result<ChaosExpansion> {
    let base = d.grid.first_half_grid()?;
    let mut q = ChaosExpansion::zero(base);
    for r in 0..=p {
        let coef = factorial(r) * binomial(p, r).powi(2);
        if r == p {
            q.add_constant(coef * d.inner(d)?);
        } else if r == 0 {
            let d1 = restrict_to_base(d)?;
            let k = d1.contract(&d1, 0)?.unwrap_kernel();
            q.add_kernel(2 * p, &k.scale(coef))?;
        } else {
            let k = restrict_to_base(&d.contract(d, r)?.unwrap_kernel())?;
            q.add_kernel(2 * p - 2 * r, &k.scale(coef))?;
        }
    }
    Ok(q.scale(1.0 / t))
}

/// L2 distance of `(1/t) E[(F_t - F)^2 | first half]` from its limit
/// [`quadratic_target`]; decays linearly in `t`.
pub fn mehler_quadratic_check(f: &Kernel, p: usize, t: f64) -> Result<f64> {
    let d = pair_difference(f, p, t)?;
    let q = conditional_quadratic(&d, p, t)?;
    Ok(q.sub(&quadratic_target(f, p)?)?.second_moment().sqrt())
}

/// Normalized fourth moment of the pair difference,
/// `(1/t) E[(F_t - F)^4]`; decays linearly in `t`.
pub fn mehler_fourth_check(f: &Kernel, p: usize, t: f64) -> Result<f64> {
    let d = pair_difference(f, p, t)?;
    Ok(fourth_moment_pure(p, &d)? / t)
}

/// Exact second moment of the pair difference, `E[(F_t - F)^2]`
/// `= 2 sigma^2 (1 - e^{-pt})` for pure order-`p` chaos.
pub fn pair_difference_second_moment(f: &Kernel, p: usize, t: f64) -> Result<f64> {
    let d = pair_difference(f, p, t)?;
    let sym = d.symmetrize();
    Ok(factorial(p) * sym.inner(&sym)?)
}

/// Exact chaos expansion of the scaled conditional Gibbs drift
/// `n E[F' - F | noise] = sum_v (I_p(f restricted off block v) - F)`,
/// together with its L2 distance from `-p F`.
pub fn gibbs_drift(f: &Kernel, p: usize, n: usize) -> Result<(ChaosExpansion, f64)> {
    if p != f.order {
        return Err(Error::OrderMismatch {
            expected: p,
            got: f.order,
        });
    }
    let blocks = GibbsBlocks::new(&f.grid, n)?;
    let sym = f.symmetrize();
    let m = f.grid.cells();
    let mut g = sym.scale(-(n as f64));
    for v in 0..n {
        let range = blocks.block_range(v);
        let mut keep = vec![true; m];
        for c in range {
            keep[c] = false;
        }
        g = g.axpy(1.0, &sym.restrict_support_mask(&keep))?;
    }
    let drift = ChaosExpansion::from_kernel(p, &g)?;
    let limit_gap = drift.axpy(p as f64, &ChaosExpansion::from_kernel(p, &sym)?)?;
    Ok((drift, limit_gap.second_moment().sqrt()))
}

/// Gibbs analog of [`mehler_quadratic_check`]: the scaled conditional
/// quadratic moment `n E[(F' - F)^2 | noise]`, assembled from one block-swap
/// transport per block and averaged, then compared to the same target `T`.
pub fn gibbs_quadratic_check(f: &Kernel, p: usize, n: usize) -> Result<f64> {
    if p != f.order {
        return Err(Error::OrderMismatch {
            expected: p,
            got: f.order,
        });
    }
    let blocks = GibbsBlocks::new(&f.grid, n)?;
    let emb = CellMap::embed_first_half(&f.grid)?;
    let embedded = emb.push_forward(f)?;
    let base = f.grid.clone();
    let mut q = ChaosExpansion::zero(base);
    for v in 0..n {
        let swap = CellMap::block_swap(&f.grid, blocks.block_range(v))?;
        let d = swap.push_forward(f)?.axpy(-1.0, &embedded)?;
        // scaled average over blocks: n * (1/n) * sum_v = sum_v
        q = q.add(&conditional_quadratic(&d, p, 1.0)?)?;
    }
    Ok(q.sub(&quadratic_target(f, p)?)?.second_moment().sqrt())
}

/// Least-squares slope of `ln(distance)` against `ln(parameter)`,
/// skipping non-positive entries.
pub fn log_log_slope(params: &[f64], distances: &[f64]) -> f64 {
    let pts: Vec<(f64, f64)> = params
        .iter()
        .zip(distances)
        .filter(|(&x, &y)| x > 0.0 && y > 0.0)
        .map(|(&x, &y)| (x.ln(), y.ln()))
        .collect();
    if pts.len() < 2 {
        return f64::NAN;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    sxy / sxx
}

/// One measured diagnostic: a construction, its small parameter, the exact
/// distance to the limit, the limit's own norm, and the fitted decay rate.
#[derive(Debug, Clone, Serialize)]
pub struct DiagnosticsRow {
    pub construction: String,
    pub parameter: f64,
    pub distance: f64,
    pub target_norm: f64,
    pub rate_estimate: f64,
}

#[derive(Debug, Clone, Serialize, Default)]
pub struct DiagnosticsReport {
    pub rows: Vec<DiagnosticsRow>,
}

impl DiagnosticsReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("construction,parameter,distance,target_norm,rate_estimate\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                r.construction, r.parameter, r.distance, r.target_norm, r.rate_estimate
            ));
        }
        out
    }

    fn push_series(
        &mut self,
        construction: &str,
        params: &[f64],
        distances: &[f64],
        target_norm: f64,
    ) {
        let slope = log_log_slope(params, distances);
        for (&t, &d) in params.iter().zip(distances) {
            self.rows.push(DiagnosticsRow {
                construction: construction.into(),
                parameter: t,
                distance: d,
                target_norm,
                rate_estimate: slope,
            });
        }
    }
}

/// Runs the three interpolation-pair diagnostics over a grid of times.
pub fn mehler_rate_table(f: &Kernel, p: usize, ts: &[f64]) -> Result<DiagnosticsReport> {
    let sym = f.symmetrize();
    let sigma2 = factorial(p) * sym.inner(&sym)?;
    let mut report = DiagnosticsReport::default();
    let drift: Vec<f64> = ts
        .iter()
        .map(|&t| mehler_drift_check(&sym, p, t))
        .collect::<Result<_>>()?;
    report.push_series("mehler_drift", ts, &drift, p as f64 * sigma2.sqrt());
    let target = quadratic_target(&sym, p)?;
    let quad: Vec<f64> = ts
        .iter()
        .map(|&t| mehler_quadratic_check(&sym, p, t))
        .collect::<Result<_>>()?;
    report.push_series("mehler_quadratic", ts, &quad, target.second_moment().sqrt());
    let fourth: Vec<f64> = ts
        .iter()
        .map(|&t| mehler_fourth_check(&sym, p, t))
        .collect::<Result<_>>()?;
    report.push_series("mehler_fourth", ts, &fourth, 0.0);
    Ok(report)
}

/// Runs the Gibbs drift (and quadratic, when affordable) diagnostics over a
/// grid of block counts.
pub fn gibbs_rate_table(
    f: &Kernel,
    p: usize,
    ns: &[usize],
    with_quadratic: bool,
) -> Result<DiagnosticsReport> {
    let sym = f.symmetrize();
    let sigma2 = factorial(p) * sym.inner(&sym)?;
    let params: Vec<f64> = ns.iter().map(|&n| 1.0 / n as f64).collect();
    let mut report = DiagnosticsReport::default();
    let drift: Vec<f64> = ns
        .iter()
        .map(|&n| gibbs_drift(&sym, p, n).map(|(_, d)| d))
        .collect::<Result<_>>()?;
    report.push_series("gibbs_drift", &params, &drift, p as f64 * sigma2.sqrt());
    if with_quadratic {
        let target = quadratic_target(&sym, p)?;
        let quad: Vec<f64> = ns
            .iter()
            .map(|&n| gibbs_quadratic_check(&sym, p, n))
            .collect::<Result<_>>()?;
        report.push_series("gibbs_quadratic", &params, &quad, target.second_moment().sqrt());
    }
    Ok(report)
}

/// How the second element of a sampled pair is produced.
#[derive(Debug, Clone, Copy)]
pub enum PairSampler {
    /// Interpolated noise at time `t`.
    Mehler { t: f64 },
    /// Redraw of one uniform block out of `n`.
    Gibbs { n: usize },
    /// `F' = F` (trivially exchangeable).
    Degenerate,
    /// Constant drift `delta` added to every increment of the second copy —
    /// a deliberately non-exchangeable negative control.
    Shifted { delta: f64 },
}

#[derive(Debug, Clone, Serialize)]
pub struct ExchangeabilityRow {
    pub phi: String,
    pub mean: f64,
    pub stderr: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ExchangeabilityReport {
    pub rows: Vec<ExchangeabilityRow>,
    pub n: usize,
    pub pass: bool,
}

const PHI_NAMES: [&str; 4] = ["x*y^2", "x^2*y", "x^3*y", "min(x,y)*x"];

fn phi(idx: usize, x: f64, y: f64) -> f64 {
    match idx {
        0 => x * y * y,
        1 => x * x * y,
        2 => x * x * x * y,
        _ => x.min(y) * x,
    }
}

/// Statistical surrogate for exchangeability of the pair law: compares
/// `E[phi(F, F')]` against `E[phi(F', F)]` over a fixed battery; passes when
/// every paired discrepancy is within four standard errors of zero.
pub fn exchangeability_mc_test(
    f: &ChaosExpansion,
    sampler: &PairSampler,
    n: usize,
    seed: u64,
) -> Result<ExchangeabilityReport> {
    if n < 10_000 {
        return Err(Error::InvalidParameter(
            "exchangeability test needs at least 10000 samples".into(),
        ));
    }
    let m = f.grid().cells();
    let eval = Evaluator::new(f);
    let rng = CounterRng::new(seed, 10);
    let aux = CounterRng::new(seed, 11);

    // per-sample evaluation of (F, F') under the pair construction
    let mut transported = None;
    let gibbs_blocks = match *sampler {
        PairSampler::Mehler { t } => {
            transported = Some(Evaluator::new(&mehler_transport(f, t)?));
            None
        }
        PairSampler::Gibbs { n: blocks } => Some(GibbsBlocks::new(f.grid(), blocks)?),
        _ => None,
    };
    let stride = match *sampler {
        PairSampler::Mehler { .. } => 2 * m,
        PairSampler::Gibbs { .. } => 2 * m, // block redraw bounded by m
        _ => m,
    } as u64;

    let mut sums = [0.0f64; 4];
    let mut sumsqs = [0.0f64; 4];
    let mut xi = vec![0.0f64; m];
    let mut scratch = vec![0.0f64; 2 * m];
    for i in 0..n {
        let base = i as u64 * stride;
        for (c, slot) in xi.iter_mut().enumerate() {
            *slot = rng.normal_at(base + c as u64);
        }
        let x = eval.value(&xi);
        let y = match *sampler {
            PairSampler::Mehler { .. } => {
                scratch[..m].copy_from_slice(&xi);
                for c in 0..m {
                    scratch[m + c] = rng.normal_at(base + (m + c) as u64);
                }
                transported.as_ref().expect("mehler evaluator").value(&scratch[..2 * m])
            }
            PairSampler::Gibbs { .. } => {
                let blocks = gibbs_blocks.as_ref().expect("gibbs blocks");
                let v = (aux.u64_at(i as u64) % blocks.n as u64) as usize;
                scratch[..m].copy_from_slice(&xi);
                for (off, c) in blocks.block_range(v).enumerate() {
                    scratch[c] = rng.normal_at(base + (m + off) as u64);
                }
                eval.value(&scratch[..m])
            }
            PairSampler::Degenerate => x,
            PairSampler::Shifted { delta } => {
                for (c, slot) in scratch[..m].iter_mut().enumerate() {
                    *slot = xi[c] + delta;
                }
                eval.value(&scratch[..m])
            }
        };
        for (k, (sum, sumsq)) in sums.iter_mut().zip(sumsqs.iter_mut()).enumerate() {
            let d = phi(k, x, y) - phi(k, y, x);
            *sum += d;
            *sumsq += d * d;
        }
    }

    let mut rows = Vec::with_capacity(4);
    let mut pass = true;
    for k in 0..4 {
        let mean = sums[k] / n as f64;
        let var = (sumsqs[k] / n as f64 - mean * mean).max(0.0);
        let stderr = (var / n as f64).sqrt();
        if mean.abs() > 4.0 * stderr {
            pass = false;
        }
        rows.push(ExchangeabilityRow {
            phi: PHI_NAMES[k].into(),
            mean,
            stderr,
        });
    }
    Ok(ExchangeabilityReport { rows, n, pass })
}
