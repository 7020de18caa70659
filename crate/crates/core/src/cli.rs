//! Command-line front end: loads a [`RunConfig`], runs one subcommand and writes CSVs.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;

use clap::{Parser, Subcommand};
use rayon::prelude::*;

use crate::cache::DiskCache;
use crate::config::RunConfig;
use crate::diagnostics::{
    convergence_sweep, convergence_violations, energy_exchange_beta0, extrapolate_to_zero, merged_symmetry_beta0,
    moment_form_residual, rate_symmetry_beta0, sum_balance_beta0, tables_report, write_convergence_csv,
    write_diagnostics_csv, DiagnosticRow, NOISE_FLOOR,
};
use crate::error::{Error, Result};
use crate::model::{Channel, FloquetModel, SystemSpec, Truncation};
use crate::ness::{boltzmann, ness, thermal_domain_bound, write_bound_csv, write_ness_csv, BoundRow, Populations};
use crate::rates::{fmt_f64, write_rates_csv, zero_temperature_rates, RateEngine, SolutionCache};
use crate::scattering::{build_system, route_deviation, solve_amplitudes, truncation_health, unitarity_report};

/// Largest thermalization residual `check` accepts.
pub const THERMALIZATION_TOL: f64 = 1e-3;

/// Largest optical-theorem residual `check` accepts.
pub const UNITARITY_TOL: f64 = 1e-6;

#[derive(Debug, Parser)]
#[command(name = "floquet-ness", version, about = "Steady states of a periodically driven few-level system in a dilute thermal gas")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,

    /// TOML run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Worker threads (default: available cores).
    #[arg(long, global = true)]
    pub workers: Option<usize>,

    /// Output directory (overrides `run.output_dir`).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,

    /// Solution cache directory (overrides `run.cache_dir`).
    #[arg(long, global = true)]
    pub cache: Option<PathBuf>,
}

#[derive(Debug, Clone, Subcommand)]
pub enum Command {
    /// Rate tables for every β in the run list.
    Rates,
    /// NESS against β, including the β → 0 extrapolated endpoint.
    Ness,
    /// Balance, unitarity and β → 0 diagnostics.
    Check {
        /// Also sweep the e_cut × nu_cut grid.
        #[arg(long)]
        converge: bool,
    },
    /// High-temperature domain bound against λ for every level pair.
    Bound,
    /// β → ∞ limiting rates and NESS.
    Lowt,
    /// a^ν against a^−ν along β.
    Ratesym,
    /// System matrix, amplitudes and T elements for one solve.
    DumpSolve {
        #[arg(long)]
        p: Option<f64>,
        #[arg(long)]
        j_in: Option<usize>,
    },
}

struct Context {
    cfg: RunConfig,
    out: PathBuf,
    cache: Option<DiskCache>,
    header: Vec<String>,
}

impl Context {
    fn engine(&self, spec: SystemSpec, trunc: Truncation) -> Result<RateEngine> {
        let engine = RateEngine::with_cache(FloquetModel::new(spec, trunc)?, self.cache_ref())?;
        self.flush()?;
        Ok(engine)
    }

    fn cache_ref(&self) -> Option<&dyn SolutionCache> {
        self.cache.as_ref().map(|c| c as &dyn SolutionCache)
    }

    fn flush(&self) -> Result<()> {
        self.cache.as_ref().map_or(Ok(()), DiskCache::flush)
    }

    fn default_engine(&self) -> Result<RateEngine> {
        self.engine(self.cfg.spec(), self.cfg.truncation.clone())
    }

    fn comments(&self, extra: &[String]) -> Vec<String> {
        self.header.iter().chain(extra).cloned().collect()
    }

    fn file(&self, name: &str, written: &mut Vec<PathBuf>) -> Result<BufWriter<File>> {
        let path = self.out.join(name);
        written.push(path.clone());
        Ok(BufWriter::new(File::create(path)?))
    }
}

/// Runs the parsed command line and returns the files written.
pub fn run(cli: &Cli) -> Result<Vec<PathBuf>> {
    let path = cli.config.as_deref().ok_or_else(|| Error::Config("--config <path> is required".into()))?;
    let cfg = RunConfig::load(path)?;
    if cli.workers == Some(0) {
        return Err(Error::Config("--workers must be at least 1".into()));
    }
    let out = cli.out.clone().or_else(|| cfg.run.output_dir.clone()).unwrap_or_else(|| PathBuf::from("."));
    std::fs::create_dir_all(&out)?;
    let cache = match cli.cache.clone().or_else(|| cfg.run.cache_dir.clone()) {
        Some(dir) => Some(DiskCache::open(dir)?),
        None => None,
    };
    let header = vec![
        format!("config_hash={}", cfg.hash()),
        format!("level_gap={}", fmt_f64(cfg.spec().level_gap())),
        format!("generator=floquet-ness {}", env!("CARGO_PKG_VERSION")),
    ];
    let ctx = Context { cfg, out, cache, header };
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.workers {
        builder = builder.num_threads(n);
    }
    let pool = builder.build().map_err(|e| Error::Config(e.to_string()))?;
    pool.install(|| dispatch(&ctx, &cli.command))
}

fn dispatch(ctx: &Context, cmd: &Command) -> Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    match cmd {
        Command::Rates => rates_cmd(ctx, &mut written)?,
        Command::Ness => ness_cmd(ctx, &mut written)?,
        Command::Check { converge } => check_cmd(ctx, *converge, &mut written)?,
        Command::Bound => bound_cmd(ctx, &mut written)?,
        Command::Lowt => lowt_cmd(ctx, &mut written)?,
        Command::Ratesym => ratesym_cmd(ctx, &mut written)?,
        Command::DumpSolve { p, j_in } => dump_cmd(ctx, *p, *j_in, &mut written)?,
    }
    Ok(written)
}

fn rates_cmd(ctx: &Context, written: &mut Vec<PathBuf>) -> Result<()> {
    let tables = ctx.default_engine()?.tables(&ctx.cfg.betas())?;
    write_rates_csv(ctx.file("rates.csv", written)?, &tables, &ctx.header)
}

fn ness_cmd(ctx: &Context, written: &mut Vec<PathBuf>) -> Result<()> {
    let engine = ctx.default_engine()?;
    let spec = engine.spec();
    let seq = ctx.cfg.beta0_sequence();
    let seq_pops = engine.tables(&seq)?.par_iter().map(ness).collect::<Result<Vec<_>>>()?;
    let mut p0 = Vec::new();
    let mut err = 0.0f64;
    for j in 0..spec.n_levels() {
        let ys: Vec<f64> = seq_pops.iter().map(|p| p.p[j]).collect();
        let e = extrapolate_to_zero(&seq, &ys)?;
        err = err.max(e.error);
        p0.push(e.value);
    }
    let mut rows = vec![(Populations { beta: 0.0, p: p0 }, boltzmann(spec, 0.0))];
    let tables = engine.tables(&ctx.cfg.betas())?;
    let pops = tables.par_iter().map(ness).collect::<Result<Vec<_>>>()?;
    rows.extend(pops.into_iter().map(|p| {
        let th = boltzmann(spec, p.beta);
        (p, th)
    }));
    let extra = [format!("beta0_extrapolation_error={}", fmt_f64(err))];
    write_ness_csv(ctx.file("ness.csv", written)?, &rows, &ctx.comments(&extra))
}

/// `(p, j_in, check_name, lhs, rhs, residual)`.
type UnitarityRow = (f64, usize, &'static str, f64, f64, f64);

fn unitarity_rows(model: &FloquetModel, points: usize) -> Result<Vec<UnitarityRow>> {
    let p_cut = model.trunc.p_cut(model.spec.mass);
    let grid: Vec<(f64, usize)> = (1..=points)
        .flat_map(|k| {
            let p = p_cut * (k as f64 / points as f64).powi(2);
            (1..=model.n_levels()).map(move |j| (p, j))
        })
        .collect();
    let per = grid
        .par_iter()
        .map(|&(p, j)| -> Result<Vec<_>> {
            let (p, r, sol) = solve_near(model, p, j)?;
            let route = route_deviation(&sol, model)?;
            Ok(vec![
                (p, j, "optical_theorem", r.lhs, r.rhs_out, r.residual()),
                (p, j, "optical_theorem_reversed", r.lhs, r.rhs_in, r.reversed_residual()),
                (p, j, "im_t_diagonal", r.im_diag, 0.0, r.im_diag.max(0.0)),
                (p, j, "t_route_agreement", route, 0.0, route),
                (p, j, "truncation_health", truncation_health(&sol, model), 0.0, truncation_health(&sol, model)),
            ])
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(per.into_iter().flatten().collect())
}

/// Unitarity report and solution at `p`, nudged off a threshold if needed.
fn solve_near(
    model: &FloquetModel,
    p: f64,
    j: usize,
) -> Result<(f64, crate::scattering::UnitarityReport, crate::scattering::ScatteringSolution)> {
    for q in [p, p * (1.0 + crate::rates::COLLISION_SHIFT), p * (1.0 - crate::rates::COLLISION_SHIFT)] {
        match unitarity_report(model, q, Channel::new(j, 0)) {
            Err(Error::ThresholdCollision { .. }) => continue,
            Err(e) => return Err(e),
            Ok(r) => return Ok((q, r, solve_amplitudes(model, q, j)?)),
        }
    }
    Err(Error::RetriesExhausted(p))
}

fn check_cmd(ctx: &Context, converge: bool, written: &mut Vec<PathBuf>) -> Result<()> {
    let engine = ctx.default_engine()?;
    let spec = engine.spec().clone();
    let betas = ctx.cfg.betas();
    let tables = engine.tables(&betas)?;
    let mut rows = tables_report(&spec, &tables)?;
    let mut failures = Vec::new();
    for r in rows.iter().filter(|r| r.check == "thermalization" && r.residual > THERMALIZATION_TOL) {
        failures.push(format!("thermalization residual {:e} at beta={} j={}", r.residual, r.beta, r.j));
    }
    for t in &tables {
        let pops = ness(t)?;
        for j in 1..=spec.n_levels() {
            let r = moment_form_residual(&spec, t, &pops, j)?;
            rows.push(row(t.beta, "moment_form", j, None, None, r, 0.0, r));
        }
    }

    let seq = ctx.cfg.beta0_sequence();
    let ex = energy_exchange_beta0(&engine, &seq)?;
    rows.push(row(0.0, "energy_exchange_beta0", 0, None, None, ex.value, 0.0, ex.value.abs()));
    for (j, e) in merged_symmetry_beta0(&engine, &seq)?.iter().enumerate() {
        rows.push(row(0.0, "merged_symmetry_beta0", j + 1, None, None, e.value, 0.0, e.value.abs()));
    }
    for (j, e) in sum_balance_beta0(&engine, &seq)?.iter().enumerate() {
        rows.push(row(0.0, "sum_balance_beta0", j + 1, None, None, e.value, 1.0, e.value - 1.0));
    }
    rows.extend(rate_symmetry_rows(&engine, &seq)?);
    write_diagnostics_csv(ctx.file("diagnostics.csv", written)?, &rows, &ctx.header)?;

    let urows = unitarity_rows(engine.model(), ctx.cfg.run.unitarity_points)?;
    {
        let mut out = ctx.file("unitarity.csv", written)?;
        write_comments(&mut out, &ctx.header)?;
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["p", "j_in", "check_name", "lhs", "rhs", "residual"])?;
        for (p, j, name, lhs, rhs, res) in &urows {
            w.write_record([fmt_f64(*p), j.to_string(), name.to_string(), fmt_f64(*lhs), fmt_f64(*rhs), fmt_f64(*res)])?;
            let tol = match *name {
                "optical_theorem" | "optical_theorem_reversed" => UNITARITY_TOL,
                "im_t_diagonal" => 0.0,
                _ => f64::INFINITY,
            };
            if *res > tol {
                failures.push(format!("{name} residual {res:e} at p={p} j_in={j}"));
            }
        }
        w.flush()?;
    }

    if converge {
        let r = &ctx.cfg.run;
        let u = ctx.cfg.beta_unit();
        let cbetas: Vec<f64> = r.converge_beta.iter().map(|b| b * u).collect();
        let points = convergence_sweep(
            &spec,
            &ctx.cfg.truncation,
            &r.converge_e_cut,
            &r.converge_nu_cut,
            &cbetas,
            ctx.cache_ref(),
        )?;
        ctx.flush()?;
        write_convergence_csv(ctx.file("convergence.csv", written)?, &points, &ctx.header)?;
        failures.extend(convergence_violations(&points));
    }
    if failures.is_empty() {
        Ok(())
    } else {
        Err(Error::CheckFailed(format!("{} failed checks; first: {}", failures.len(), failures[0])))
    }
}

#[allow(clippy::too_many_arguments)]
fn row(
    beta: f64,
    check: &str,
    j: usize,
    j_prime: Option<usize>,
    nu: Option<i32>,
    lhs: f64,
    rhs: f64,
    residual: f64,
) -> DiagnosticRow {
    DiagnosticRow { beta, check: check.into(), j, j_prime, nu, lhs, rhs, residual }
}

/// β → 0 ratios `a^ν/a^−ν` for inelastic pairs whose rates clear the noise floor.
fn rate_symmetry_rows(engine: &RateEngine, seq: &[f64]) -> Result<Vec<DiagnosticRow>> {
    let n = engine.spec().n_levels();
    let nc = engine.model().trunc.nu_cut as i32;
    let keys: Vec<(usize, usize, i32)> =
        (1..=n).flat_map(|j| (1..=n).filter(move |&jp| jp != j).flat_map(move |jp| (1..=nc).map(move |nu| (j, jp, nu)))).collect();
    let found = keys
        .par_iter()
        .map(|&(j, jp, nu)| match rate_symmetry_beta0(engine, seq, jp, j, nu) {
            Ok(e) => Ok(Some(row(0.0, "rate_symmetry_beta0", j, Some(jp), Some(nu), e.value, 1.0, e.value - 1.0))),
            Err(Error::BelowNoiseFloor(_)) => Ok(None),
            Err(e) => Err(e),
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(found.into_iter().flatten().collect())
}

fn bound_cmd(ctx: &Context, written: &mut Vec<PathBuf>) -> Result<()> {
    let spec = ctx.cfg.spec();
    let n = spec.n_levels();
    let beta_fd = ctx.cfg.beta_fd();
    let mut rows = Vec::new();
    for &lambda in &ctx.cfg.run.lambda_list {
        let engine = ctx.engine(spec.with_lambda(lambda), ctx.cfg.truncation.clone())?;
        for j in 1..=n {
            for jp in (1..=n).filter(|&jp| jp != j) {
                let bound = thermal_domain_bound(&engine, j, jp, beta_fd)?;
                rows.push(BoundRow { j, j_prime: jp, lambda, bound });
            }
        }
    }
    let extra = [format!("beta_fd={}", fmt_f64(beta_fd))];
    write_bound_csv(ctx.file("bound.csv", written)?, &rows, &ctx.comments(&extra))
}

fn lowt_cmd(ctx: &Context, written: &mut Vec<PathBuf>) -> Result<()> {
    let model = FloquetModel::new(ctx.cfg.spec(), ctx.cfg.truncation.clone())?;
    let zt = zero_temperature_rates(&model, ctx.cfg.run.p_min)?;
    let k = zt.exponents.iter().map(u32::to_string).collect::<Vec<_>>().join(",");
    let extra = [format!("rates are lim beta^k * rate with k per incoming level = {k}")];
    write_rates_csv(ctx.file("lowt_rates.csv", written)?, std::slice::from_ref(&zt.table), &ctx.comments(&extra))?;
    if zt.exponents.windows(2).any(|w| w[0] != w[1]) {
        return Err(Error::UnstableLimit(format!("incoming levels scale with different powers of beta ({k})")));
    }
    let pops = ness(&zt.table)?;
    let th = boltzmann(&model.spec, f64::INFINITY);
    write_ness_csv(ctx.file("lowt_ness.csv", written)?, &[(pops, th)], &ctx.header)
}

fn ratesym_cmd(ctx: &Context, written: &mut Vec<PathBuf>) -> Result<()> {
    let engine = ctx.default_engine()?;
    let n = engine.spec().n_levels();
    let nc = engine.model().trunc.nu_cut as i32;
    let seq = ctx.cfg.beta0_sequence();
    let mut betas: Vec<f64> = seq.iter().chain(&ctx.cfg.betas()).copied().collect();
    betas.sort_by(f64::total_cmp);
    betas.dedup();
    let tables = engine.tables(&betas)?;
    let mut out = ctx.file("ratesym.csv", written)?;
    write_comments(&mut out, &ctx.header)?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["beta", "j_from", "j_to", "nu", "rate_plus", "rate_minus", "ratio"])?;
    for r in rate_symmetry_rows(&engine, &seq)? {
        let (jp, nu) = (r.j_prime.unwrap_or(0), r.nu.unwrap_or(0));
        w.write_record(["0.0".into(), r.j.to_string(), jp.to_string(), nu.to_string(), String::new(), String::new(), fmt_f64(r.lhs)])?;
    }
    for t in &tables {
        let floor = NOISE_FLOOR * t.max_rate();
        for j in 1..=n {
            for jp in 1..=n {
                for nu in 1..=nc {
                    let (a, b) = (t.rate(jp, j, nu), t.rate(jp, j, -nu));
                    let ratio = if a > floor && b > floor { fmt_f64(a / b) } else { String::new() };
                    w.write_record([fmt_f64(t.beta), j.to_string(), jp.to_string(), nu.to_string(), fmt_f64(a), fmt_f64(b), ratio])?;
                }
            }
        }
    }
    w.flush()?;
    Ok(())
}

fn dump_cmd(ctx: &Context, p: Option<f64>, j_in: Option<usize>, written: &mut Vec<PathBuf>) -> Result<()> {
    let model = FloquetModel::new(ctx.cfg.spec(), ctx.cfg.truncation.clone())?;
    let p = p.unwrap_or(ctx.cfg.run.dump_p);
    let j_in = j_in.unwrap_or(ctx.cfg.run.dump_j_in);
    if !(p > 0.0 && p.is_finite()) {
        return Err(Error::Config(format!("--p must be positive, got {p}")));
    }
    model.spec.level_index(j_in).map_err(|e| Error::Config(e.to_string()))?;
    let a = build_system(&model, p, j_in)?;
    let sol = solve_amplitudes(&model, p, j_in)?;
    let extra = [format!("p={} j_in={j_in} condition={}", fmt_f64(p), fmt_f64(sol.condition))];
    let comments = ctx.comments(&extra);

    let mut out = ctx.file("dump_matrix.csv", written)?;
    write_comments(&mut out, &comments)?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["row", "col", "re", "im"])?;
    for r in 0..a.nrows() {
        for c in 0..a.ncols() {
            let z = a[(r, c)];
            w.write_record([r.to_string(), c.to_string(), fmt_f64(z.re), fmt_f64(z.im)])?;
        }
    }
    w.flush()?;

    let mut out = ctx.file("dump_solution.csv", written)?;
    write_comments(&mut out, &comments)?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["index", "j", "nu", "p_out", "psi_re", "psi_im", "t_re", "t_im"])?;
    for (i, ch) in model.basis().channels().iter().enumerate() {
        w.write_record([
            i.to_string(),
            ch.j.to_string(),
            ch.nu.to_string(),
            sol.p_out[i].map(fmt_f64).unwrap_or_default(),
            fmt_f64(sol.psi[i].re),
            fmt_f64(sol.psi[i].im),
            fmt_f64(sol.t_row[i].re),
            fmt_f64(sol.t_row[i].im),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn write_comments<W: Write>(out: &mut W, comments: &[String]) -> Result<()> {
    for c in comments {
        writeln!(out, "# {c}")?;
    }
    Ok(())
}

/// Machine-readable error record printed on stderr.
pub fn error_record(e: &Error) -> String {
    serde_json::json!({
        "error": { "kind": e.kind(), "message": e.to_string(), "exit_code": e.exit_code() }
    })
    .to_string()
}

/// Parses `args`, runs, and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(&cli) {
        Ok(_) => 0,
        Err(e) => {
            eprintln!("{}", error_record(&e));
            e.exit_code()
        }
    }
}
