//! Batch command-line front end.
//!
//! Tabular output goes to `--out` (or standard output), plots to `--plot`
//! (default: the `--out` path with an `.svg` extension, else
//! `<subcommand>.svg`). Summaries and diagnostics go to standard error.
//! Exit codes: 0 success, 1 validation or analysis failure, 2 usage error.

use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::analysis::{self, TestFunctionKind, DEFAULT_SEED};
use crate::config::MapConfig;
use crate::expr::{parse, Expr};
use crate::fmt17;
use crate::gridfn::{variation, variation_default, default_radii_count, GridFunction};
use crate::lorenz::{self, LorenzConfig};
use crate::map_model::PiecewiseMap;
use crate::svg::{Plot, Style};
use crate::transfer;

/// Samples per branch when validating a map loaded from a file.
const VALIDATION_SAMPLES: usize = 4096;

#[derive(Debug, Parser)]
#[command(name = "fpop", version, about = "Transfer operators of piecewise expanding interval maps")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Output {
    /// Write the table here instead of standard output.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write the SVG plot here.
    #[arg(long)]
    plot: Option<PathBuf>,
    /// Skip the SVG plot.
    #[arg(long)]
    no_plot: bool,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Evaluate the slope condition 1/s^(1/p) + 1/s < 1.
    CheckSlope {
        map: PathBuf,
        #[arg(long = "p")]
        p: f64,
    },
    /// Lasota-Yorke constants.
    Ly {
        map: PathBuf,
        #[arg(long = "p")]
        p: f64,
        #[arg(long = "t", default_value_t = 1.0)]
        t: f64,
        #[arg(long = "A", conflicts_with = "auto_a")]
        a: Option<f64>,
        /// Halve A from 1/8 until alpha < 1 (t = 1 only).
        #[arg(long = "auto-A")]
        auto_a: bool,
        /// Equicontinuity constant for t > 1; estimated empirically when absent.
        #[arg(long = "L")]
        l: Option<f64>,
        #[arg(long, default_value_t = DEFAULT_SEED)]
        seed: u64,
        #[command(flatten)]
        output: Output,
    },
    /// Check the Lasota-Yorke inequality on seeded random test functions.
    LyVerify {
        map: PathBuf,
        #[arg(long = "p")]
        p: f64,
        #[arg(long = "A")]
        a: f64,
        #[arg(long, default_value_t = 100)]
        trials: usize,
        #[arg(long, default_value_t = 4096)]
        grid: usize,
        #[arg(long, default_value_t = DEFAULT_SEED)]
        seed: u64,
        #[command(flatten)]
        output: Output,
    },
    /// Invariant density of the Ulam discretization.
    Density {
        map: PathBuf,
        #[arg(long)]
        bins: usize,
        #[arg(long, default_value_t = 1e-12)]
        tol: f64,
        #[arg(long, default_value_t = 100_000)]
        max_iters: usize,
        #[command(flatten)]
        output: Output,
    },
    /// Leading eigenvalues of the Ulam matrix.
    Spectrum {
        map: PathBuf,
        #[arg(long)]
        bins: usize,
        #[arg(long, default_value_t = 10)]
        top: usize,
        #[command(flatten)]
        output: Output,
    },
    /// Generalized variation var_{q,1/p} of an expression.
    Var {
        #[arg(long = "f")]
        f: String,
        /// Lebesgue exponent q; `inf` selects the sup norm.
        #[arg(long = "q", default_value_t = 1.0)]
        q: f64,
        #[arg(long = "p")]
        p: f64,
        #[arg(long = "A", default_value_t = crate::gridfn::DEFAULT_A)]
        a: f64,
        #[arg(long, default_value_t = 1024)]
        grid: usize,
        /// Number of radii in the geometric grid; defaults to ratio 1.2 spacing.
        #[arg(long)]
        radii: Option<usize>,
        #[command(flatten)]
        output: Output,
    },
    /// Decay of correlations.
    Correlate {
        map: PathBuf,
        #[arg(long = "f")]
        f: String,
        #[arg(long = "g")]
        g: String,
        #[arg(long = "N")]
        n_max: usize,
        #[arg(long, default_value_t = 1024)]
        grid: usize,
        #[arg(long, value_enum, default_value_t = Wrt::Lebesgue)]
        wrt: Wrt,
        #[command(flatten)]
        output: Output,
    },
    /// BV norms of the iterates P^k f against the bound C·‖f‖_1.
    Iterates {
        map: PathBuf,
        #[arg(long = "f")]
        f: String,
        #[arg(long = "p")]
        p: f64,
        #[arg(long = "A")]
        a: f64,
        #[arg(long = "n")]
        n_max: usize,
        #[arg(long, default_value_t = 1024)]
        grid: usize,
        #[command(flatten)]
        output: Output,
    },
    /// Integrate the Lorenz system and fit its z-maxima return map.
    Lorenz {
        #[arg(long, default_value_t = 10.0)]
        sigma: f64,
        #[arg(long, default_value_t = 28.0)]
        rho: f64,
        #[arg(long, default_value_t = 8.0 / 3.0)]
        beta: f64,
        #[arg(long, default_value_t = 1.0)]
        x0: f64,
        #[arg(long, default_value_t = 1.0)]
        y0: f64,
        #[arg(long, default_value_t = 1.0)]
        z0: f64,
        #[arg(long, default_value_t = 0.001)]
        dt: f64,
        #[arg(long, default_value_t = 2000.0)]
        t_max: f64,
        #[arg(long, default_value_t = 50.0)]
        transient: f64,
        #[arg(long, default_value_t = 3)]
        fit_degree: usize,
        /// Keep every k-th trajectory sample in trajectory.csv.
        #[arg(long, default_value_t = 10)]
        stride: usize,
        /// Directory receiving trajectory.csv, return_map.csv, fitted_map.json and return_map.svg.
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
        #[arg(long)]
        no_plot: bool,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Wrt {
    Lebesgue,
    Invariant,
}

/// A failed command; carries the one-line diagnostic.
#[derive(Debug)]
struct Failure(String);

impl<E: std::error::Error> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure(e.to_string())
    }
}

type Res<T> = Result<T, Failure>;

/// Runs the command line `args` (program name first) and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let stdout = std::io::stdout();
    let stderr = std::io::stderr();
    run_with(args, &mut stdout.lock(), &mut stderr.lock())
}

/// [`run`] with explicit output streams.
pub fn run_with<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let text = e.render().to_string();
            let _ = if code == 0 { stdout.write_all(text.as_bytes()) } else { stderr.write_all(text.as_bytes()) };
            return code;
        }
    };
    let mut ctx = Ctx { stdout, stderr };
    match ctx.dispatch(cli.command) {
        Ok(()) => 0,
        Err(Failure(msg)) => {
            let line = msg.replace('\n', " ");
            let _ = writeln!(ctx.stderr, "error: {line}");
            1
        }
    }
}

/// Writes `contents` to a temporary sibling of `path`, then renames it.
pub fn write_atomic(path: &Path, contents: &[u8]) -> std::io::Result<()> {
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_else(|| "out".into());
    let tmp = path.with_file_name(format!(".{name}.tmp{}", std::process::id()));
    let result = std::fs::File::create(&tmp).and_then(|mut f| {
        f.write_all(contents)?;
        f.sync_all()
    });
    if let Err(e) = result {
        let _ = std::fs::remove_file(&tmp);
        return Err(e);
    }
    std::fs::rename(&tmp, path).inspect_err(|_| {
        let _ = std::fs::remove_file(&tmp);
    })
}

fn load_map(path: &Path) -> Res<PiecewiseMap> {
    let map = MapConfig::load(path)?.to_map()?;
    let report = map.validate(VALIDATION_SAMPLES)?;
    if !report.accepted {
        let issues: Vec<String> = report
            .branches
            .iter()
            .flat_map(|b| b.violations.iter().map(move |v| format!("branch {}: {v:?}", b.branch)))
            .collect();
        return Err(Failure(format!("{} is not a valid expanding map: {}", path.display(), issues.join("; "))));
    }
    Ok(map)
}

fn parse_expr(flag: &str, text: &str) -> Res<Expr> {
    parse(text).map_err(|e| Failure(format!("--{flag}: {e}")))
}

fn plot_path(output: &Output, command: &str) -> Option<PathBuf> {
    if output.no_plot {
        return None;
    }
    output
        .plot
        .clone()
        .or_else(|| output.out.as_ref().map(|p| p.with_extension("svg")))
        .or_else(|| Some(PathBuf::from(format!("{command}.svg"))))
}

struct Ctx<'a> {
    stdout: &'a mut dyn Write,
    stderr: &'a mut dyn Write,
}

impl Ctx<'_> {
    fn note(&mut self, line: &str) {
        let _ = writeln!(self.stderr, "{line}");
    }

    fn emit(&mut self, output: &Output, table: &str) -> Res<()> {
        match &output.out {
            Some(path) => write_atomic(path, table.as_bytes())
                .map_err(|e| Failure(format!("cannot write {}: {e}", path.display()))),
            None => self.stdout.write_all(table.as_bytes()).map_err(Failure::from),
        }
    }

    fn emit_plot(&mut self, output: &Output, command: &str, plot: impl FnOnce() -> Plot) -> Res<()> {
        if let Some(path) = plot_path(output, command) {
            write_atomic(&path, plot().render().as_bytes())
                .map_err(|e| Failure(format!("cannot write {}: {e}", path.display())))?;
        }
        Ok(())
    }

    fn dispatch(&mut self, command: Command) -> Res<()> {
        match command {
            Command::CheckSlope { map, p } => {
                let map = load_map(&map)?;
                let (value, ok) = map.check_slope_condition(p)?;
                let verdict = if ok { "< 1: admissible" } else { ">= 1: inadmissible" };
                writeln!(self.stdout, "{} {verdict}", fmt17(value))?;
                Ok(())
            }
            Command::Ly { map, p, t, a, auto_a, l, seed, output } => {
                let map = load_map(&map)?;
                let constants = if auto_a {
                    if t != 1.0 {
                        return Err(Failure("--auto-A is only defined for t = 1".into()));
                    }
                    analysis::shrink_a_until_admissible(&map, p)?
                } else {
                    let a = a.unwrap_or(analysis::START_A);
                    let l = match (t > 1.0, l) {
                        (true, None) => {
                            let est = analysis::empirical_equicontinuity(&map, t, 1024, 20, 30, seed)?;
                            self.note(&format!("L = {} estimated empirically (not a rigorous bound)", fmt17(est)));
                            Some(est)
                        }
                        (_, l) => l,
                    };
                    analysis::ly_constants_for_map(&map, p, t, a, l)?
                };
                if !constants.admissible {
                    self.note(&format!("alpha = {} >= 1: constants are not admissible", fmt17(constants.alpha)));
                }
                self.emit(&output, &constants.to_csv())
            }
            Command::LyVerify { map, p, a, trials, grid, seed, output } => {
                let map = load_map(&map)?;
                let v = analysis::ly_verify(&map, p, a, trials, grid, seed)?;
                let mut csv = String::from("trial,kind,var_f,l1_f,lhs,rhs,margin,slack,violated\n");
                for t in &v.trials {
                    let kind = match t.kind {
                        TestFunctionKind::Trigonometric => "trigonometric",
                        TestFunctionKind::Step => "step",
                    };
                    let _ = writeln!(
                        csv,
                        "{},{kind},{},{},{},{},{},{},{}",
                        t.trial,
                        fmt17(t.var_f),
                        fmt17(t.l1_f),
                        fmt17(t.lhs),
                        fmt17(t.rhs),
                        fmt17(t.margin),
                        fmt17(t.slack),
                        t.violated
                    );
                }
                self.note(&format!(
                    "violations: {} of {} (alpha = {}, beta = {}, n = {grid}, seed = {seed})",
                    v.violations,
                    v.trials.len(),
                    fmt17(v.constants.alpha),
                    fmt17(v.constants.beta)
                ));
                self.emit(&output, &csv)
            }
            Command::Density { map, bins, tol, max_iters, output } => {
                let map = load_map(&map)?;
                let op = transfer::ulam_matrix(&map, bins)?;
                let h = transfer::invariant_density(&op, tol, max_iters)?;
                self.emit(&output, &h.to_csv())?;
                self.emit_plot(&output, "density", || {
                    let pts = (0..h.n()).map(|k| (h.midpoint(k), h.values()[k])).collect();
                    Plot::new("invariant density", "x", "h(x)").add(Style::Line, pts)
                })
            }
            Command::Spectrum { map, bins, top, output } => {
                let map = load_map(&map)?;
                let op = transfer::ulam_matrix(&map, bins)?;
                let report = transfer::spectrum(&op, top)?;
                self.note(&format!(
                    "unit_multiplicity = {}, spectral_gap = {}, solver = {}",
                    report.unit_multiplicity,
                    report.spectral_gap.map(fmt17).unwrap_or_else(|| "none".into()),
                    if report.dense { "dense" } else { "arnoldi" }
                ));
                self.emit(&output, &report.to_csv())?;
                self.emit_plot(&output, "spectrum", || {
                    Plot::new("Ulam spectrum", "Re", "Im").complex_plane().add(Style::Points, report.eigenvalues.clone())
                })
            }
            Command::Var { f, q, p, a, grid, radii, output } => {
                let e = parse_expr("f", &f)?;
                let g = GridFunction::project(&e, grid)?;
                if !(p >= 1.0 && (q >= 1.0) && a > 0.0 && a <= 1.0) {
                    return Err(Failure(format!("need p >= 1, q >= 1 and 0 < A <= 1, got p = {p}, q = {q}, A = {a}")));
                }
                let report = match radii {
                    Some(count) => variation(&g, q, p, a, count),
                    None => variation_default(&g, q, p, a),
                };
                let csv = format!(
                    "q,p,A,n,radii,variation,lq_norm,bv_norm,argmax_radius\n{},{},{},{grid},{},{},{},{},{}\n",
                    fmt17(q),
                    fmt17(p),
                    fmt17(a),
                    radii.unwrap_or_else(|| default_radii_count(grid, a)),
                    fmt17(report.variation),
                    fmt17(report.lq_norm),
                    fmt17(report.bv_norm),
                    fmt17(report.argmax_radius)
                );
                self.emit(&output, &csv)?;
                self.emit_plot(&output, "var", || {
                    let pts = report.radii.iter().copied().zip(report.ratios.iter().copied()).collect();
                    Plot::new("osc_q(f, r) / r^(1/p)", "r", "ratio").add(Style::Line, pts)
                })
            }
            Command::Correlate { map, f, g, n_max, grid, wrt, output } => {
                let map = load_map(&map)?;
                let (fe, ge) = (parse_expr("f", &f)?, parse_expr("g", &g)?);
                let series = match wrt {
                    Wrt::Lebesgue => analysis::correlation_lebesgue(&map, &fe, &ge, n_max, grid)?,
                    Wrt::Invariant => analysis::correlation_invariant(&map, &fe, &ge, n_max, grid)?,
                };
                match (series.fitted_rate, series.fit_quality) {
                    (Some(rate), Some(r2)) => {
                        self.note(&format!("fitted_rate = {}, r_squared = {}", fmt17(rate), fmt17(r2)))
                    }
                    _ => self.note("fitted_rate unavailable: fewer than 4 values above the noise floor"),
                }
                self.emit(&output, &series.to_csv())?;
                self.emit_plot(&output, "correlate", || {
                    let pts: Vec<(f64, f64)> =
                        series.n_values.iter().zip(&series.c_values).map(|(&n, &c)| (n as f64, c)).collect();
                    Plot::new("decay of correlations", "N", "C(N)")
                        .log_y()
                        .add(Style::Line, pts.clone())
                        .add(Style::Points, pts)
                })
            }
            Command::Iterates { map, f, p, a, n_max, grid, output } => {
                let map = load_map(&map)?;
                let e = parse_expr("f", &f)?;
                let g = GridFunction::project(&e, grid)?;
                let s = transfer::iterate_norm_series(&map, &g, p, a, n_max)?;
                let mut csv = String::from("n,norm,bound,within_bound\n");
                let bound = s.bound.map(fmt17).unwrap_or_default();
                for (k, (norm, ok)) in s.norms.iter().zip(&s.within_bound).enumerate() {
                    let _ = writeln!(csv, "{k},{},{bound},{ok}", fmt17(*norm));
                }
                self.note(&match (s.bound, s.n0) {
                    (None, _) => "no bound: the constants at (p, A) are not admissible".to_string(),
                    (Some(b), Some(n0)) => format!("bound = {}, n0 = {n0}", fmt17(b)),
                    (Some(b), None) => format!("bound = {} is exceeded at the last iterate", fmt17(b)),
                });
                self.emit(&output, &csv)?;
                self.emit_plot(&output, "iterates", || {
                    let pts: Vec<(f64, f64)> = s.norms.iter().enumerate().map(|(k, &v)| (k as f64, v)).collect();
                    let mut plot = Plot::new("BV norms of iterates", "k", "norm").add(Style::Line, pts);
                    if let Some(b) = s.bound {
                        plot = plot.add(Style::Line, vec![(0.0, b), (n_max as f64, b)]);
                    }
                    plot
                })
            }
            Command::Lorenz {
                sigma,
                rho,
                beta,
                x0,
                y0,
                z0,
                dt,
                t_max,
                transient,
                fit_degree,
                stride,
                out_dir,
                no_plot,
            } => {
                let cfg = LorenzConfig { sigma, rho, beta, x0, y0, z0, dt, t_max, transient };
                std::fs::create_dir_all(&out_dir)
                    .map_err(|e| Failure(format!("cannot create {}: {e}", out_dir.display())))?;
                let write = |name: &str, text: &str| {
                    let path = out_dir.join(name);
                    write_atomic(&path, text.as_bytes())
                        .map_err(|e| Failure(format!("cannot write {}: {e}", path.display())))
                };
                let (traj, data) = lorenz::return_map_from_config(&cfg)?;
                write("trajectory.csv", &traj.to_csv(stride))?;
                write("return_map.csv", &data.to_csv())?;
                let (left, right) = data.monotonicity_violations();
                let fit = lorenz::fit_piecewise(&data, fit_degree);
                if !no_plot {
                    let mut plot = Plot::new("return map of successive z maxima", "z_k (normalized)", "z_k+1 (normalized)")
                        .add(Style::Points, data.normalized_pairs.clone());
                    if let Ok(fit) = &fit {
                        for (b, e) in fit.branches.iter().zip(fit.branch_exprs()) {
                            let curve = (0..=100)
                                .map(|i| b.lo + (b.hi - b.lo) * i as f64 / 100.0)
                                .filter_map(|x| e.eval(x).ok().map(|y| (x, y)))
                                .collect();
                            plot = plot.add(Style::Line, curve);
                        }
                    }
                    write("return_map.svg", &plot.render())?;
                }
                let fit = fit?;
                write("fitted_map.json", &fit.to_config().to_json())?;
                let mut summary = String::from("quantity,value\n");
                let mut row = |k: &str, v: String| {
                    let _ = writeln!(summary, "{k},{v}");
                };
                row("samples", traj.len().to_string());
                row("pairs", data.pairs.len().to_string());
                row("z_min", fmt17(data.z_min));
                row("z_max", fmt17(data.z_max));
                row("cusp", fmt17(fit.cusp));
                row("violations_left", fmt17(left));
                row("violations_right", fmt17(right));
                for (i, b) in fit.branches.iter().enumerate() {
                    row(&format!("branch{i}_residual_rms"), fmt17(b.residual_rms));
                    row(&format!("branch{i}_min_abs_slope"), fmt17(b.min_abs_slope));
                    row(&format!("branch{i}_central_min_abs_slope"), fmt17(b.central_min_abs_slope));
                    row(
                        &format!("branch{i}_holder_exponent_estimate"),
                        b.holder_exponent_estimate.map(fmt17).unwrap_or_default(),
                    );
                }
                self.stdout.write_all(summary.as_bytes())?;
                Ok(())
            }
        }
    }
}
