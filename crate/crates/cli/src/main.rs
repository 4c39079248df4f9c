//! Command-line front end: rate computations, isotropic sphere analysis,
//! limiting shapes, chord-power integrals, and Monte Carlo validation,
//! with CSV/JSON emission and figure-data presets.
//!
//! Exit codes: 0 success, 2 configuration error, 3 numerical error,
//! 4 convergence error.

mod config;

use clap::{Args, Parser, Subcommand};
use config::{build_kernel, read_point_set, RunConfig};
use excursion_core::dual::{dual_optimize_problem, DualOptions};
use excursion_core::isotropic::{AnywhereMode, Branch, IsotropicHoleSpec};
use excursion_core::mc::{estimate_psi, Estimator, McConfig};
use excursion_core::primal::{solve_primal, HoleProblem, SolveStatus};
use excursion_core::shape::limiting_shape;
use excursion_core::{geometry, Error, IsotropicKernel, PointSet};
use serde::Serialize;
use std::path::{Path, PathBuf};

/// Relative slope deviation below which a Monte Carlo run is reported as
/// consistent with the predicted rate (an engineering threshold for
/// desk-scale levels, not a limit statement).
const MC_VERDICT_TOL: f64 = 0.15;

#[derive(Parser)]
#[command(name = "excursion", version, about = "rate functions for holes in Gaussian field excursion sets")]
struct Cli {
    /// Declarative TOML configuration; flags override file values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Cap the global thread pool.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Validate the configuration and exit without computing.
    #[arg(long, global = true)]
    dry_run: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct KernelArgs {
    /// Kernel family: squared-exponential | exponential | tabulated.
    #[arg(long)]
    kernel: Option<String>,
    #[arg(long)]
    scale: Option<f64>,
    #[arg(long)]
    variance: Option<f64>,
    /// CSV of (distance, value) rows for the tabulated family.
    #[arg(long)]
    kernel_file: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Primal rate for a (K1, K2) pair read from point-set CSV files.
    Rate {
        #[command(flatten)]
        kernel: KernelArgs,
        #[arg(long)]
        k1: Option<PathBuf>,
        #[arg(long)]
        k2: Option<PathBuf>,
        /// Explicit covariance matrix CSV over the K1 ∪ K2 nodes, for
        /// non-isotropic instances (replaces the kernel and point sets).
        #[arg(long)]
        cov_file: Option<PathBuf>,
        /// Number of leading covariance rows forming K1 (with --cov-file).
        #[arg(long)]
        n1: Option<usize>,
        #[arg(long)]
        r: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Dual (measure) optimization with the duality gap report.
    Dual {
        #[command(flatten)]
        kernel: KernelArgs,
        #[arg(long)]
        k1: Option<PathBuf>,
        #[arg(long)]
        k2: Option<PathBuf>,
        /// Explicit covariance matrix CSV over the K1 ∪ K2 nodes.
        #[arg(long)]
        cov_file: Option<PathBuf>,
        /// Number of leading covariance rows forming K1 (with --cov-file).
        #[arg(long)]
        n1: Option<usize>,
        #[arg(long)]
        r: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Per-radius sphere profile table (rho, R, D, H, W, branch).
    Isotropic {
        #[command(flatten)]
        kernel: KernelArgs,
        #[arg(long)]
        d: Option<usize>,
        #[arg(long)]
        r: Option<f64>,
        #[arg(long)]
        rho_max: Option<f64>,
        #[arg(long)]
        resolution: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// The sphere radius at which a depth-r center hole is cheapest.
    MostLikelyRadius {
        #[command(flatten)]
        kernel: KernelArgs,
        #[arg(long)]
        d: Option<usize>,
        #[arg(long)]
        r: Option<f64>,
        #[arg(long)]
        rho_max: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Radius above which the center is the worst hole location.
    Threshold {
        #[command(flatten)]
        kernel: KernelArgs,
        #[arg(long)]
        d: Option<usize>,
        #[arg(long)]
        rho_max: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Limiting profile section for a sphere with a center hole.
    Shape {
        #[command(flatten)]
        kernel: KernelArgs,
        #[arg(long)]
        d: Option<usize>,
        #[arg(long)]
        rho: Option<f64>,
        #[arg(long)]
        r: Option<f64>,
        #[arg(long)]
        resolution: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Chord-power integral over the unit sphere.
    #[command(name = "integral-I")]
    IntegralI {
        #[arg(long)]
        d: Option<usize>,
        #[arg(long)]
        eps: Option<f64>,
        #[arg(long)]
        resolution: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Hole-anywhere rate with the hypothesis verification.
    Anywhere {
        #[command(flatten)]
        kernel: KernelArgs,
        #[arg(long)]
        d: Option<usize>,
        #[arg(long)]
        r: Option<f64>,
        #[arg(long)]
        rho_max: Option<f64>,
        /// Skip the hypothesis check and report the grid estimate.
        #[arg(long)]
        skip_hypothesis: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Monte Carlo validation of the predicted decay rate.
    McValidate {
        #[command(flatten)]
        kernel: KernelArgs,
        #[arg(long)]
        k1: Option<PathBuf>,
        #[arg(long)]
        k2: Option<PathBuf>,
        /// Explicit covariance matrix CSV over the K1 ∪ K2 nodes.
        #[arg(long)]
        cov_file: Option<PathBuf>,
        /// Number of leading covariance rows forming K1 (with --cov-file).
        #[arg(long)]
        n1: Option<usize>,
        #[arg(long)]
        r: Option<f64>,
        /// Comma-separated levels, e.g. 3,4,5.
        #[arg(long)]
        u: Option<String>,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// crude | tilted.
        #[arg(long)]
        estimator: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Preset data sweeps: integral, dh, or shapes.
    Figures {
        #[arg(long)]
        preset: String,
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
}

fn main() {
    let cli = Cli::parse();
    if let Some(threads) = cli.threads {
        // ignore failure when a pool already exists (tests set one up)
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global();
    }
    let file_cfg = match cli.config.as_deref().map(RunConfig::load).transpose() {
        Ok(cfg) => cfg.unwrap_or_default(),
        Err(e) => fail(&e),
    };
    match run(cli.command, &file_cfg, cli.dry_run) {
        Ok(()) => {}
        Err(e) => fail(&e),
    }
}

fn fail(e: &Error) -> ! {
    eprintln!("error: {e}");
    let code = match e {
        Error::Domain(_) => 2,
        Error::Numerical(_) => 3,
        Error::Convergence(_) => 4,
    };
    std::process::exit(code);
}

fn kernel_from(args: &KernelArgs, cfg: &RunConfig) -> Result<IsotropicKernel, Error> {
    let family = args
        .kernel
        .clone()
        .or_else(|| cfg.kernel.family.clone())
        .unwrap_or_else(|| "squared-exponential".to_string());
    let scale = args.scale.or(cfg.kernel.scale).unwrap_or(1.0);
    let variance = args.variance.or(cfg.kernel.variance).unwrap_or(1.0);
    let file = args
        .kernel_file
        .as_ref()
        .map(|p| p.to_string_lossy().into_owned())
        .or_else(|| cfg.kernel.file.clone());
    build_kernel(&family, scale, variance, file.as_deref())
}

fn required<T>(v: Option<T>, what: &str) -> Result<T, Error> {
    v.ok_or_else(|| Error::domain(format!("missing required parameter: {what}")))
}

fn load_pair(
    k1: Option<&Path>,
    k2: Option<&Path>,
    cfg: &RunConfig,
) -> Result<(PointSet, PointSet), Error> {
    let k1_path = k1
        .map(Path::to_path_buf)
        .or_else(|| cfg.problem.k1.clone().map(PathBuf::from));
    let k1 = read_point_set(&required(k1_path, "--k1")?)?;
    let k2 = match k2
        .map(Path::to_path_buf)
        .or_else(|| cfg.problem.k2.clone().map(PathBuf::from))
    {
        Some(p) => read_point_set(&p)?,
        None => PointSet::empty(k1.dim()),
    };
    Ok((k1, k2))
}

/// Builds the hole instance either from an explicit covariance matrix or
/// from a kernel with point-set files.
fn build_problem(
    kernel: &KernelArgs,
    k1: Option<&Path>,
    k2: Option<&Path>,
    cov_file: Option<&Path>,
    n1: Option<usize>,
    r: f64,
    cfg: &RunConfig,
) -> Result<HoleProblem, Error> {
    if let Some(cov_path) = cov_file {
        let n1 = required(n1, "--n1 (with --cov-file)")?;
        let matrix = read_square_matrix(cov_path)?;
        let n = matrix.nrows();
        let labels = PointSet::new(1, (0..n).map(|i| i as f64).collect())?;
        let cov = excursion_core::CovMatrix::from_matrix(labels, matrix)?;
        HoleProblem::from_matrix(cov, n1, r)
    } else {
        let kernel = kernel_from(kernel, cfg)?;
        let (k1, k2) = load_pair(k1, k2, cfg)?;
        HoleProblem::from_kernel(kernel, k1, k2, r)
    }
}

fn read_square_matrix(path: &Path) -> Result<excursion_core::nalgebra::DMatrix<f64>, Error> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::domain(format!("cannot read {}: {e}", path.display())))?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let row: Option<Vec<f64>> = line
            .split(',')
            .map(|f| f.trim().parse::<f64>().ok())
            .collect();
        match row {
            Some(r) => rows.push(r),
            None if rows.is_empty() => continue, // header
            None => return Err(Error::domain("covariance file has a non-numeric row")),
        }
    }
    let n = rows.len();
    if n == 0 || rows.iter().any(|r| r.len() != n) {
        return Err(Error::domain("covariance file must be a square numeric matrix"));
    }
    Ok(excursion_core::nalgebra::DMatrix::from_fn(n, n, |i, j| {
        rows[i][j]
    }))
}

fn run(cmd: Command, cfg: &RunConfig, dry_run: bool) -> Result<(), Error> {
    match cmd {
        Command::Rate { kernel, k1, k2, cov_file, n1, r, out } => {
            let r = required(r.or(cfg.problem.r), "--r")?;
            let problem = build_problem(
                &kernel,
                k1.as_deref(),
                k2.as_deref(),
                cov_file.as_deref(),
                n1,
                r,
                cfg,
            )?;
            if dry_run {
                return dry_ok(out_path(out, cfg));
            }
            let sol = solve_primal(&problem)?;
            #[derive(Serialize)]
            struct RateOut<'a> {
                value: f64,
                status: &'a str,
                coefficients: &'a [f64],
                residuals: &'a [f64],
                max_violation: f64,
            }
            let payload = RateOut {
                value: sol.value,
                status: match sol.status {
                    SolveStatus::Optimal => "optimal",
                    SolveStatus::Infeasible => "infeasible",
                },
                coefficients: &sol.coefficients,
                residuals: &sol.witness,
                max_violation: sol.max_violation,
            };
            emit(out_path(out, cfg).as_deref(), &to_json(&payload)?)
        }
        Command::Dual { kernel, k1, k2, cov_file, n1, r, seed, out } => {
            let r = required(r.or(cfg.problem.r), "--r")?;
            let problem = build_problem(
                &kernel,
                k1.as_deref(),
                k2.as_deref(),
                cov_file.as_deref(),
                n1,
                r,
                cfg,
            )?;
            if dry_run {
                return dry_ok(out_path(out, cfg));
            }
            let opts = DualOptions {
                seed: seed.or(cfg.mc.seed).unwrap_or(0),
                ..DualOptions::default()
            };
            let res = dual_optimize_problem(&problem, &opts)?;
            #[derive(Serialize)]
            struct DualOut {
                first_min: f64,
                second_min: f64,
                d: f64,
                gap_vs_primal: Option<f64>,
                mu1: Vec<f64>,
                mu2_pair: Option<(Vec<f64>, Vec<f64>)>,
                converged: bool,
            }
            let payload = DualOut {
                first_min: res.first_min,
                second_min: res.second_min,
                d: res.d,
                gap_vs_primal: res.gap_vs_primal,
                mu1: res.mu1_first,
                mu2_pair: res.second_pair,
                converged: res.converged,
            };
            emit(out_path(out, cfg).as_deref(), &to_json(&payload)?)
        }
        Command::Isotropic { kernel, d, r, rho_max, resolution, out } => {
            let spec = spec_from(&kernel, d, r, rho_max, resolution, cfg)?;
            if dry_run {
                return dry_ok(out_path(out, cfg));
            }
            let profile = spec.radius_profile()?;
            let mut csv = String::from("rho,R,D,H,W,branch\n");
            for row in &profile.rows {
                csv.push_str(&format!(
                    "{},{},{},{},{},{}\n",
                    sig(row.rho),
                    sig(row.cov),
                    sig(row.sphere_energy),
                    sig(row.hole_energy),
                    sig(row.rate_reciprocal),
                    match row.branch {
                        Branch::HoleFree => 1,
                        Branch::HoleBinding => 2,
                    }
                ));
            }
            emit(out_path(out, cfg).as_deref(), &csv)
        }
        Command::MostLikelyRadius { kernel, d, r, rho_max, out } => {
            let spec = spec_from(&kernel, d, r, rho_max, None, cfg)?;
            if dry_run {
                return dry_ok(out_path(out, cfg));
            }
            let (rho_star, h_max) = spec.most_likely_radius()?;
            let payload = serde_json::json!({
                "rho_star": rho_star,
                "hole_energy_max": h_max,
                "center_rate": 1.0 / h_max,
            });
            emit(out_path(out, cfg).as_deref(), &to_json(&payload)?)
        }
        Command::Threshold { kernel, d, rho_max, out } => {
            // r plays no role in the threshold condition; any valid value works
            let spec = spec_from(&kernel, d, Some(0.5), rho_max, None, cfg)?;
            if dry_run {
                return dry_ok(out_path(out, cfg));
            }
            let threshold = spec.center_hole_threshold()?;
            let payload = serde_json::json!({
                "threshold": threshold,
                "found": threshold.is_some(),
            });
            emit(out_path(out, cfg).as_deref(), &to_json(&payload)?)
        }
        Command::Shape { kernel, d, rho, r, resolution, out } => {
            let kernel = kernel_from(&kernel, cfg)?;
            let d = d.or(cfg.problem.dim).unwrap_or(2);
            let rho = required(rho.or(cfg.problem.rho), "--rho")?;
            let r = required(r.or(cfg.problem.r), "--r")?;
            let n = resolution
                .or(cfg.grids.resolution)
                .unwrap_or(if d == 2 { 256 } else { 16 });
            let grid = geometry::sphere_grid(d, rho, n)?;
            let hole = vec![0.0; d];
            if dry_run {
                return dry_ok(out_path(out, cfg));
            }
            let shape = limiting_shape(&kernel, grid.measure(), &hole, r)?;
            let mut csv = String::from("t1_over_rho,x_C\n");
            for (s, x) in shape.axis_section(rho, 401) {
                csv.push_str(&format!("{},{}\n", sig(s), sig(x)));
            }
            emit(out_path(out, cfg).as_deref(), &csv)
        }
        Command::IntegralI { d, eps, resolution, out } => {
            let d = required(d.or(cfg.problem.dim), "--d")?;
            let eps = required(eps, "--eps")?;
            let n = resolution
                .or(cfg.grids.resolution)
                .unwrap_or(if d == 2 { 512 } else { 64 });
            if dry_run {
                return dry_ok(out_path(out, cfg));
            }
            let value = geometry::chord_power_integral(d, eps, n)?;
            let payload = serde_json::json!({
                "d": d, "eps": eps, "value": value, "resolution": n,
            });
            emit(out_path(out, cfg).as_deref(), &to_json(&payload)?)
        }
        Command::Anywhere { kernel, d, r, rho_max, skip_hypothesis, out } => {
            let spec = spec_from(&kernel, d, r, rho_max, None, cfg)?;
            if dry_run {
                return dry_ok(out_path(out, cfg));
            }
            let mode = if skip_hypothesis {
                AnywhereMode::SkipHypothesis
            } else {
                AnywhereMode::VerifyHypothesis
            };
            let rate = spec.anywhere_rate(mode)?;
            emit(out_path(out, cfg).as_deref(), &to_json(&rate)?)
        }
        Command::McValidate { kernel, k1, k2, cov_file, n1, r, u, n, seed, estimator, out } => {
            let r = required(r.or(cfg.problem.r), "--r")?;
            let problem = build_problem(
                &kernel,
                k1.as_deref(),
                k2.as_deref(),
                cov_file.as_deref(),
                n1,
                r,
                cfg,
            )?;
            let u_grid = match u {
                Some(text) => text
                    .split(',')
                    .map(|t| {
                        t.trim()
                            .parse::<f64>()
                            .map_err(|_| Error::domain(format!("bad level '{t}' in --u")))
                    })
                    .collect::<Result<Vec<_>, _>>()?,
                None => cfg.mc.u.clone().unwrap_or_else(|| vec![3.0, 4.0, 5.0]),
            };
            let estimator = match estimator
                .or(cfg.mc.estimator.clone())
                .unwrap_or_else(|| "tilted".into())
                .as_str()
            {
                "crude" => Estimator::Crude,
                "tilted" => Estimator::Tilted,
                other => return Err(Error::domain(format!("unknown estimator '{other}'"))),
            };
            let mc = McConfig::new(
                n.or(cfg.mc.samples).unwrap_or(1_000_000),
                u_grid,
                seed.or(cfg.mc.seed).unwrap_or(42),
                estimator,
            )?;
            if dry_run {
                return dry_ok(out_path(out, cfg));
            }
            let est = estimate_psi(&problem, &mc)?;
            let (verdict, rel_dev) = match (&est.fit, est.predicted_rate) {
                (Some(fit), Some(d_pred)) => {
                    let dev = (fit.slope + d_pred).abs() / d_pred;
                    (
                        if dev < MC_VERDICT_TOL { "consistent" } else { "inconsistent" },
                        Some(dev),
                    )
                }
                _ => ("unresolved", None),
            };
            let payload = serde_json::json!({
                "per_u": est.per_u,
                "fit": est.fit,
                "predicted_d": est.predicted_rate,
                "relative_deviation": rel_dev,
                "verdict": verdict,
                "infeasible": est.infeasible,
            });
            emit(out_path(out, cfg).as_deref(), &to_json(&payload)?)
        }
        Command::Figures { preset, out_dir } => {
            let dir = out_dir
                .or_else(|| cfg.output.dir.clone().map(PathBuf::from))
                .unwrap_or_else(|| PathBuf::from("."));
            if dry_run {
                println!("configuration ok");
                return Ok(());
            }
            figures(&preset, &dir)
        }
    }
}

fn spec_from(
    kernel: &KernelArgs,
    d: Option<usize>,
    r: Option<f64>,
    rho_max: Option<f64>,
    resolution: Option<usize>,
    cfg: &RunConfig,
) -> Result<IsotropicHoleSpec, Error> {
    let kernel = kernel_from(kernel, cfg)?;
    let d = d.or(cfg.problem.dim).unwrap_or(2);
    let r = required(r.or(cfg.problem.r), "--r")?;
    let rho_max = rho_max.or(cfg.problem.rho_max).unwrap_or(4.0);
    let mut spec = IsotropicHoleSpec::new(kernel, d, r, rho_max)?;
    if let Some(n) = resolution.or(cfg.grids.resolution) {
        spec = spec.with_resolution(n);
    }
    if let Some(p) = cfg.grids.rho_points {
        spec.rho_grid_points = p;
    }
    if let Some(p) = cfg.grids.b_points {
        spec.b_grid_points = p;
    }
    Ok(spec)
}

fn figures(preset: &str, dir: &Path) -> Result<(), Error> {
    std::fs::create_dir_all(dir)
        .map_err(|e| Error::domain(format!("cannot create {}: {e}", dir.display())))?;
    let se = IsotropicKernel::squared_exponential(1.0, 1.0)?;
    match preset {
        // chord-power integral for d = 2, 3 over an ε grid
        "integral" => {
            let mut csv = String::from("eps,i_d2,i_d3\n");
            for i in 1..=20 {
                let eps = 0.05 * i as f64;
                let i2 = geometry::chord_power_integral(2, eps, 512)?;
                let i3 = geometry::chord_power_integral(3, eps, 64)?;
                csv.push_str(&format!("{},{},{}\n", sig(eps), sig(i2), sig(i3)));
            }
            write_file(&dir.join("integral.csv"), &csv)
        }
        // sphere/hole energies and the most likely radius sweep
        "dh" => {
            let spec = IsotropicHoleSpec::new(se.clone(), 2, 0.5, 4.0)?;
            let mut csv = String::from("rho,D,H\n");
            for i in 0..=400 {
                let rho = 4.0 * i as f64 / 400.0;
                let d = spec.sphere_energy_at(rho);
                let h = spec.hole_energy(rho).unwrap_or(0.0);
                csv.push_str(&format!("{},{},{}\n", sig(rho), sig(d), sig(h)));
            }
            write_file(&dir.join("dh_curves.csv"), &csv)?;
            let mut sweep = String::from("r,rho_star\n");
            for i in 1..=19 {
                let r = 0.05 * i as f64;
                let spec = IsotropicHoleSpec::new(se.clone(), 2, r, 4.0)?;
                let (rho_star, _) = spec.most_likely_radius()?;
                sweep.push_str(&format!("{},{}\n", sig(r), sig(rho_star)));
            }
            write_file(&dir.join("dh_mostlikely.csv"), &sweep)
        }
        // limiting-shape sections for the two sphere radii
        "shapes" => {
            let mut sections = Vec::new();
            for rho in [1.0, 2.0] {
                let grid = geometry::sphere_grid(2, rho, 256)?;
                let shape = limiting_shape(&se, grid.measure(), &[0.0, 0.0], 0.5)?;
                sections.push(shape.axis_section(rho, 401));
            }
            let mut csv = String::from("t1_over_rho,xc_rho1,xc_rho2\n");
            for i in 0..401 {
                csv.push_str(&format!(
                    "{},{},{}\n",
                    sig(sections[0][i].0),
                    sig(sections[0][i].1),
                    sig(sections[1][i].1)
                ));
            }
            write_file(&dir.join("shapes.csv"), &csv)
        }
        other => Err(Error::domain(format!(
            "unknown preset '{other}' (use integral, dh or shapes)"
        ))),
    }
}

fn out_path(flag: Option<PathBuf>, cfg: &RunConfig) -> Option<PathBuf> {
    flag.or_else(|| cfg.output.path.clone().map(PathBuf::from))
}

fn dry_ok(_out: Option<PathBuf>) -> Result<(), Error> {
    println!("configuration ok");
    Ok(())
}

/// 17 significant digits, the regression-fixture format.
fn sig(x: f64) -> String {
    format!("{x:.16e}")
}

fn to_json<T: Serialize>(value: &T) -> Result<String, Error> {
    serde_json::to_string_pretty(value)
        .map(|mut s| {
            s.push('\n');
            s
        })
        .map_err(|e| Error::numerical(format!("serialization failed: {e}")))
}

fn emit(path: Option<&Path>, content: &str) -> Result<(), Error> {
    match path {
        Some(p) => write_file(p, content),
        None => {
            print!("{content}");
            Ok(())
        }
    }
}

fn write_file(path: &Path, content: &str) -> Result<(), Error> {
    std::fs::write(path, content)
        .map_err(|e| Error::domain(format!("cannot write {}: {e}", path.display())))
}
