//! Experiment runner: reproducible bound computations, exchangeable-pair
//! diagnostics and Monte Carlo confrontations, emitted as CSV/JSON reports.

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use chaoslab::chaos_algebra::{evaluate, fourth_moment_pure, ChaosExpansion, GaussianSample};
use chaoslab::error::{Error, Result};
use chaoslab::exchange_pairs::{
    condition_on_first_half, gibbs_rate_table, mehler_rate_table, mehler_transport,
};
use chaoslab::families::{offdiag_rand_kernel, pair2d, qvar_kernel};
use chaoslab::grid_kernel::{Grid, Kernel};
use chaoslab::mc_lab::{
    sample, sample_vector, smooth_discrepancy, tv_binned, w1_empirical, CounterRng, SmoothFn,
};
use chaoslab::stein_bounds::{
    covariance, intermediate_bound, kappa, nprr_bound, s_variance_matrix, smooth_bound, tv_bound,
    wasserstein_bound, ChaosVector,
};

#[derive(Parser)]
#[command(name = "chaoslab", version, about = "Finite-grid Wiener chaos laboratory")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Compute the normal-approximation bounds for a kernel or vector family
    Bound(CommonArgs),
    /// Run the exchangeable-pair diagnostics over a t-grid or n-grid
    Diagnose(CommonArgs),
    /// Sample the functional and pair empirical distances with the bounds
    Mc(CommonArgs),
    /// Run the exact-identity suite at small sizes
    Selftest,
}

#[derive(Args, Clone)]
struct CommonArgs {
    /// JSON config file; command-line flags override its fields
    #[arg(long)]
    config: Option<PathBuf>,
    /// Path to a serialized kernel (or chaos-vector component list)
    #[arg(long)]
    kernel: Option<PathBuf>,
    /// Built-in family: qvar | offdiag-rand | pair2d
    #[arg(long)]
    family: Option<String>,
    /// Grid cell count
    #[arg(long)]
    m: Option<usize>,
    /// Chaos order (offdiag-rand)
    #[arg(long)]
    p: Option<usize>,
    /// Block count (qvar, pair2d)
    #[arg(long)]
    n: Option<usize>,
    /// Block-count sweep, comma separated
    #[arg(long, value_delimiter = ',')]
    n_grid: Option<Vec<usize>>,
    /// Interpolation-time sweep, comma separated
    #[arg(long, value_delimiter = ',')]
    t_grid: Option<Vec<f64>>,
    /// Monte Carlo sample count
    #[arg(long = "N")]
    n_mc: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Histogram bins for the total-variation estimate
    #[arg(long)]
    bins: Option<usize>,
    /// Pair construction for diagnose: mehler | gibbs
    #[arg(long)]
    construction: Option<String>,
    /// Output file (stdout when omitted)
    #[arg(long)]
    out: Option<PathBuf>,
    /// Additionally emit a tidy long-format table for plotting
    #[arg(long)]
    plot_data: bool,
}

/// The resolved experiment description embedded into every report.
#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(default)]
struct ExperimentConfig {
    command: String,
    kernel: Option<PathBuf>,
    family: Option<String>,
    m: Option<usize>,
    p: Option<usize>,
    n: Option<usize>,
    n_grid: Option<Vec<usize>>,
    t_grid: Option<Vec<f64>>,
    n_mc: Option<usize>,
    seed: Option<u64>,
    bins: Option<usize>,
    construction: Option<String>,
    out: Option<PathBuf>,
    plot_data: Option<bool>,
}

impl ExperimentConfig {
    fn resolve(command: &str, args: &CommonArgs) -> Result<Self> {
        let mut cfg = match &args.config {
            Some(path) => serde_json::from_str(&std::fs::read_to_string(path)?)?,
            None => ExperimentConfig::default(),
        };
        cfg.command = command.to_string();
        // flags win over config fields
        macro_rules! take {
            ($field:ident) => {
                if args.$field.is_some() {
                    cfg.$field = args.$field.clone();
                }
            };
        }
        take!(kernel);
        take!(family);
        take!(m);
        take!(p);
        take!(n);
        take!(n_grid);
        take!(t_grid);
        take!(n_mc);
        take!(seed);
        take!(bins);
        take!(construction);
        take!(out);
        if args.plot_data {
            cfg.plot_data = Some(true);
        }
        Ok(cfg)
    }

    fn hash(&self) -> String {
        let canon = serde_json::to_string(self).expect("config serializes");
        let mut h = DefaultHasher::new();
        canon.hash(&mut h);
        format!("{:016x}", h.finish())
    }

    fn seed(&self) -> u64 {
        self.seed.unwrap_or(1)
    }

    fn n_mc(&self) -> usize {
        self.n_mc.unwrap_or(1_000_000)
    }

    fn bins(&self) -> usize {
        self.bins.unwrap_or(200)
    }

    fn t_grid(&self) -> Vec<f64> {
        self.t_grid.clone().unwrap_or_else(|| vec![1e-1, 1e-2, 1e-3])
    }

    fn n_grid(&self) -> Vec<usize> {
        self.n_grid.clone().unwrap_or_else(|| vec![4, 16, 64])
    }
}

enum Input {
    Single { p: usize, kernel: Kernel, label: String },
    Vector { v: ChaosVector, label: String },
}

fn resolve_input(cfg: &ExperimentConfig) -> Result<Input> {
    if let Some(path) = &cfg.kernel {
        let text = std::fs::read_to_string(path)?;
        if let Ok(k) = serde_json::from_str::<Kernel>(&text) {
            k.validate()?;
            return Ok(Input::Single {
                p: k.order,
                label: format!("file:{}", path.display()),
                kernel: k,
            });
        }
        let comps: Vec<(usize, Kernel)> = serde_json::from_str(&text)?;
        for (_, k) in &comps {
            k.validate()?;
        }
        return Ok(Input::Vector {
            v: ChaosVector::new(comps)?,
            label: format!("file:{}", path.display()),
        });
    }
    match cfg.family.as_deref() {
        Some("qvar") => {
            let n = cfg.n.unwrap_or(64);
            let m = cfg.m.unwrap_or(n);
            Ok(Input::Single {
                p: 2,
                kernel: qvar_kernel(n, m)?,
                label: format!("qvar(n={n},m={m})"),
            })
        }
        Some("offdiag-rand") => {
            let p = cfg.p.unwrap_or(2);
            let m = cfg.m.unwrap_or(8);
            let seed = cfg.seed();
            Ok(Input::Single {
                p,
                kernel: offdiag_rand_kernel(p, m, seed)?,
                label: format!("offdiag-rand(p={p},m={m},seed={seed})"),
            })
        }
        Some("pair2d") => {
            let m = cfg.m.unwrap_or(16);
            let n = cfg.n.unwrap_or(8);
            Ok(Input::Vector {
                v: pair2d(m, n)?,
                label: format!("pair2d(m={m},n={n})"),
            })
        }
        Some(other) => Err(Error::InvalidParameter(format!("unknown family: {other}"))),
        None => Err(Error::InvalidParameter(
            "provide --family or --kernel".into(),
        )),
    }
}

fn write_out(out: Option<&PathBuf>, content: &str) -> Result<()> {
    match out {
        Some(path) => std::fs::write(path, content)?,
        None => print!("{content}"),
    }
    Ok(())
}

fn cmd_bound(cfg: &ExperimentConfig) -> Result<()> {
    let input = resolve_input(cfg)?;
    let mut report = serde_json::Map::new();
    report.insert("config".into(), serde_json::to_value(cfg)?);
    report.insert("config_hash".into(), cfg.hash().into());
    match input {
        Input::Single { p, kernel, label } => {
            let sym = kernel.symmetrize();
            let sigma2 = chaoslab::grid_kernel::factorial(p) * sym.inner(&sym)?;
            let k = kappa(&sym, p)?;
            let tv = tv_bound(&sym, p)?;
            let inter = intermediate_bound(&sym, p)?;
            let mut notes = Vec::new();
            if tv > 1.0 {
                notes.push("tv_bound exceeds 1: valid but vacuous".to_string());
            }
            report.insert("input".into(), label.into());
            report.insert(
                "ingredients".into(),
                serde_json::json!({
                    "order": p,
                    "sigma2": sigma2,
                    "kappa": k,
                    "fourth_moment": fourth_moment_pure(p, &sym)?,
                }),
            );
            report.insert(
                "bounds".into(),
                serde_json::json!({
                    "tv_bound": tv,
                    "intermediate_bound": inter,
                }),
            );
            report.insert("notes".into(), serde_json::json!(notes));
        }
        Input::Vector { v, label } => {
            let sigma = covariance(&v)?;
            let vmat = s_variance_matrix(&v)?;
            let wass = wasserstein_bound(&v)?;
            let nprr = nprr_bound(&v)?;
            let smooth: Vec<serde_json::Value> = SmoothFn::battery(v.dim())
                .iter()
                .map(|g| -> Result<serde_json::Value> {
                    Ok(serde_json::json!({
                        "g": g.id(),
                        "M2": g.m2(),
                        "bound": smooth_bound(&v, g.m2())?,
                    }))
                })
                .collect::<Result<_>>()?;
            report.insert("input".into(), label.into());
            report.insert("sigma".into(), serde_json::to_value(&sigma)?);
            report.insert("V".into(), serde_json::to_value(&vmat)?);
            report.insert(
                "bounds".into(),
                serde_json::json!({
                    "wasserstein_bound": wass,
                    "nprr_bound": nprr,
                    "smooth_bounds": smooth,
                }),
            );
        }
    }
    let mut text = serde_json::to_string_pretty(&serde_json::Value::Object(report))?;
    text.push('\n');
    write_out(cfg.out.as_ref(), &text)
}

fn cmd_diagnose(cfg: &ExperimentConfig) -> Result<()> {
    let (p, kernel, label) = match resolve_input(cfg)? {
        Input::Single { p, kernel, label } => (p, kernel, label),
        Input::Vector { .. } => {
            return Err(Error::InvalidParameter(
                "diagnose runs on a single kernel, not a vector family".into(),
            ))
        }
    };
    let construction = cfg.construction.as_deref().unwrap_or("mehler");
    let table = match construction {
        "mehler" => mehler_rate_table(&kernel, p, &cfg.t_grid())?,
        "gibbs" => {
            // the quadratic diagnostic is affordable only on small grids
            let with_quadratic = kernel.grid.cells() <= 16;
            gibbs_rate_table(&kernel, p, &cfg.n_grid(), with_quadratic)?
        }
        other => {
            return Err(Error::InvalidParameter(format!(
                "unknown construction: {other}"
            )))
        }
    };
    let mut text = format!(
        "# input: {label}\n# config_hash: {}\n# config: {}\n",
        cfg.hash(),
        serde_json::to_string(cfg)?
    );
    text.push_str(&table.to_csv());
    if cfg.plot_data == Some(true) {
        text.push_str("\n# plot data\nseries,x,y\n");
        for r in &table.rows {
            text.push_str(&format!("{},{},{}\n", r.construction, r.parameter, r.distance));
        }
    }
    write_out(cfg.out.as_ref(), &text)
}

fn mc_csv_header(cfg: &ExperimentConfig, label: &str) -> String {
    format!(
        "# input: {label}\n# config_hash: {}\n# config: {}\nestimator,value,stderr,N,seed,params\n",
        cfg.hash(),
        serde_json::to_string(cfg).expect("config serializes")
    )
}

fn cmd_mc(cfg: &ExperimentConfig) -> Result<()> {
    let n_mc = cfg.n_mc();
    let seed = cfg.seed();
    let bins = cfg.bins();
    let mut plot = String::from("\n# plot data\nseries,x,y\n");
    let text = match cfg.family.as_deref() {
        Some("qvar") | None => {
            let mut out = String::new();
            let grid = cfg.n_grid();
            let m = cfg.m.unwrap_or_else(|| *grid.iter().max().unwrap_or(&64));
            out.push_str(&mc_csv_header(cfg, &format!("qvar sweep m={m}")));
            for &n in &grid {
                let f = qvar_kernel(n, m)?;
                let bound = tv_bound(&f, 2)?;
                let e = ChaosExpansion::from_kernel(2, &f)?;
                let batch = sample(&e, n_mc, seed)?;
                let tv = tv_binned(&batch, 1.0, bins, 6.0)?;
                let w1 = w1_empirical(&batch, 1.0)?;
                let params = format!("family=qvar;n={n};m={m}");
                out.push_str(&format!(
                    "tv_bound,{bound},0,{n_mc},{seed},{params}\n\
                     tv_binned,{},{},{n_mc},{seed},{params}\n\
                     w1,{},{},{n_mc},{seed},{params}\n",
                    tv.value, tv.stderr, w1.value, w1.stderr
                ));
                plot.push_str(&format!(
                    "tv_bound,{n},{bound}\ntv_binned,{n},{}\nw1,{n},{}\n",
                    tv.value, w1.value
                ));
            }
            out
        }
        Some("pair2d") => {
            let m = cfg.m.unwrap_or(16);
            let n = cfg.n.unwrap_or(8);
            let v = pair2d(m, n)?;
            let sigma = covariance(&v)?;
            let batch = sample_vector(&v, n_mc, seed)?;
            let mut out = mc_csv_header(cfg, &format!("pair2d(m={m},n={n})"));
            for g in SmoothFn::battery(v.dim()) {
                let est = smooth_discrepancy(&batch, &sigma, &g.id())?;
                let bound = smooth_bound(&v, g.m2())?;
                let params = format!("family=pair2d;m={m};n={n};g={}", g.id());
                out.push_str(&format!(
                    "smooth_bound,{bound},0,{n_mc},{seed},{params}\n\
                     {},{},{},{n_mc},{seed},{params}\n",
                    est.name, est.value, est.stderr
                ));
                plot.push_str(&format!(
                    "smooth_bound,{},{bound}\nsmooth_estimate,{},{}\n",
                    g.id(),
                    g.id(),
                    est.value
                ));
            }
            out
        }
        Some("gauss1") => {
            // null calibration: the target law sampled against itself
            let m = cfg.m.unwrap_or(8);
            let g = Grid::uniform(m)?;
            let mut f = Kernel::from_fn(g, 1, |_| 1.0)?;
            f.symmetric = true;
            let e = ChaosExpansion::from_kernel(1, &f)?;
            let batch = sample(&e, n_mc, seed)?;
            let tv = tv_binned(&batch, 1.0, bins, 6.0)?;
            let w1 = w1_empirical(&batch, 1.0)?;
            let params = format!("family=gauss1;m={m}");
            let mut out = mc_csv_header(cfg, "gauss1 null calibration");
            out.push_str(&format!(
                "tv_binned,{},{},{n_mc},{seed},{params}\nw1,{},{},{n_mc},{seed},{params}\n",
                tv.value, tv.stderr, w1.value, w1.stderr
            ));
            plot.push_str(&format!("tv_binned,0,{}\nw1,0,{}\n", tv.value, w1.value));
            out
        }
        Some(other) => {
            return Err(Error::InvalidParameter(format!(
                "mc supports families qvar, pair2d, gauss1; got {other}"
            )))
        }
    };
    let mut text = text;
    if cfg.plot_data == Some(true) {
        text.push_str(&plot);
    }
    write_out(cfg.out.as_ref(), &text)
}

fn cmd_selftest() -> Result<()> {
    let mut failures = 0usize;
    let mut check = |name: &str, ok: bool| {
        println!("{} {name}", if ok { "ok  " } else { "FAIL" });
        if !ok {
            failures += 1;
        }
    };

    let g = Grid::uniform(4)?;
    let rng = CounterRng::new(2024, 0);
    let mut ctr = 0u64;
    let mut rand_kernel = |p: usize| -> Result<Kernel> {
        let k = Kernel::from_fn(g.clone(), p, |_| {
            ctr += 1;
            rng.normal_at(ctr)
        })?;
        Ok(k.symmetrize())
    };

    // product formula: pointwise multiplicativity
    let f = ChaosExpansion::from_kernel(2, &rand_kernel(2)?)?;
    let h = ChaosExpansion::from_kernel(1, &rand_kernel(1)?)?;
    let prod = f.multiply(&h)?;
    let mut worst = 0.0f64;
    for s in 0..20u64 {
        let srng = CounterRng::new(7, s);
        let xi: Vec<f64> = (0..4).map(|i| srng.normal_at(i)).collect();
        let sample = GaussianSample::new(g.clone(), xi)?;
        let lhs = evaluate(&prod, &sample)?;
        let rhs = evaluate(&f, &sample)? * evaluate(&h, &sample)?;
        worst = worst.max((lhs - rhs).abs() / rhs.abs().max(1.0));
    }
    check("product formula pointwise (20 samples)", worst < 1e-9);

    // conditional transport contraction
    let mut worst = 0.0f64;
    for p in 1..=2usize {
        for &t in &[1.0, 0.1] {
            let f = ChaosExpansion::from_kernel(p, &rand_kernel(p)?)?;
            let cond = condition_on_first_half(&mehler_transport(&f, t)?)?;
            let gap = cond.sub(&f.scale((-(p as f64) * t).exp()))?;
            worst = worst.max(gap.max_abs_coeff());
        }
    }
    check("conditional transport = exponential contraction", worst < 1e-12);

    // quadratic-functional identity
    let f = rand_kernel(2)?;
    let e = ChaosExpansion::from_kernel(2, &f)?;
    let f2 = e.multiply(&e)?;
    let a = chaoslab::stein_bounds::integral_expansion(&f, 2)?;
    let rhs = f2.expectation_product(&a)? - e.variance() * f2.mean();
    let lhs = kappa(&f, 2)? / 3.0;
    check(
        "quadratic-functional identity",
        (lhs - rhs).abs() <= 1e-10 * lhs.abs().max(1e-12),
    );

    // contraction-norm fourth-moment identity and bound ordering
    let f = rand_kernel(3)?;
    let e = ChaosExpansion::from_kernel(3, &f)?;
    let via_product = e.multiply(&e)?.second_moment();
    let direct = fourth_moment_pure(3, &f)?;
    check(
        "fourth moment via contraction norms",
        (via_product - direct).abs() <= 1e-10 * direct.abs(),
    );
    check(
        "intermediate bound below tv bound",
        intermediate_bound(&f, 3)? <= tv_bound(&f, 3)? * (1.0 + 1e-12),
    );

    if failures > 0 {
        return Err(Error::InvalidParameter(format!("{failures} selftest checks failed")));
    }
    Ok(())
}

fn run() -> Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::Bound(args) => cmd_bound(&ExperimentConfig::resolve("bound", &args)?),
        Command::Diagnose(args) => cmd_diagnose(&ExperimentConfig::resolve("diagnose", &args)?),
        Command::Mc(args) => cmd_mc(&ExperimentConfig::resolve("mc", &args)?),
        Command::Selftest => cmd_selftest(),
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::BudgetExceeded { .. } | Error::SampleBudgetExceeded { .. } => 5,
        Error::SingularCovariance(_) => 3,
        Error::BlockMismatch { .. } => 4,
        _ => 2,
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
