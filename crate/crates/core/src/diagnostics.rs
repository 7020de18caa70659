//! Numerical residuals of the balance conditions that unitarity imposes on the
//! Floquet rates, and their β → 0 limits.

use std::io::Write;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{FloquetModel, SystemSpec, Truncation};
use crate::ness::Populations;
use crate::rates::{exp_moment, fmt_f64, RateEngine, RateTable, SolutionCache};

/// Rates below this fraction of the table maximum are treated as unresolved.
pub const NOISE_FLOOR: f64 = 1e-10;

/// Default β → 0 sequence: 5 points, ratio 1/2, largest `0.05/ΔE`.
pub fn default_beta_sequence(spec: &SystemSpec) -> Vec<f64> {
    geometric_sequence(0.05 / spec.level_gap().abs(), 0.5, 5)
}

pub fn geometric_sequence(start: f64, ratio: f64, count: usize) -> Vec<f64> {
    (0..count).map(|k| start * ratio.powi(k as i32)).collect()
}

/// A value extrapolated to β = 0.
#[derive(Debug, Clone, PartialEq)]
pub struct Extrapolated {
    pub value: f64,
    /// Difference between the two highest-order estimates.
    pub error: f64,
    /// The `(β, value)` samples that were extrapolated.
    pub samples: Vec<(f64, f64)>,
}

/// Value at `x = 0` of the polynomial through all `(xs, ys)` (Neville's scheme).
fn neville_at_zero(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len();
    let mut t = ys.to_vec();
    // After pass k, t[i] holds the interpolant through points i..=i+k.
    for k in 1..n {
        for i in 0..n - k {
            let (xi, xk) = (xs[i], xs[i + k]);
            t[i] = (xk * t[i] - xi * t[i + 1]) / (xk - xi);
        }
    }
    t[0]
}

/// Polynomial (Richardson) extrapolation of `ys(xs)` to `x = 0`.
///
/// The error estimate compares against the extrapolant that omits the sample
/// farthest from zero.
pub fn extrapolate_to_zero(xs: &[f64], ys: &[f64]) -> Result<Extrapolated> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return Err(Error::Extrapolation(format!("need at least 2 matched samples, got {}/{}", xs.len(), ys.len())));
    }
    let value = neville_at_zero(xs, ys);
    let far = (0..xs.len()).max_by(|&a, &b| xs[a].abs().total_cmp(&xs[b].abs())).unwrap();
    let (xr, yr): (Vec<f64>, Vec<f64>) =
        xs.iter().zip(ys).enumerate().filter(|&(i, _)| i != far).map(|(_, (&x, &y))| (x, y)).unzip();
    let lower = neville_at_zero(&xr, &yr);
    if !value.is_finite() || !lower.is_finite() {
        return Err(Error::Extrapolation("non-finite extrapolant".into()));
    }
    Ok(Extrapolated {
        value,
        error: (value - lower).abs(),
        samples: xs.iter().copied().zip(ys.iter().copied()).collect(),
    })
}

/// Terms of a balance check.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Balance {
    pub lhs: f64,
    pub rhs: f64,
}

impl Balance {
    /// `2|lhs − rhs| / (lhs + rhs)`.
    pub fn residual(&self) -> f64 {
        let s = self.lhs + self.rhs;
        if s == 0.0 {
            0.0
        } else {
            2.0 * (self.lhs - self.rhs).abs() / s
        }
    }

    /// Signed version of [`Balance::residual`].
    pub fn signed(&self) -> f64 {
        let s = self.lhs + self.rhs;
        if s == 0.0 {
            0.0
        } else {
            2.0 * (self.lhs - self.rhs) / s
        }
    }
}

/// `a · e^{x}` without overflowing when `a` is tiny and `x` large.
fn weighted(a: f64, x: f64) -> f64 {
    if a <= 0.0 {
        0.0
    } else {
        (a.ln() + x).exp()
    }
}

/// Floquet thermalization condition for level `j`:
/// `Σ_{j',ν} a^{−ν}_{jj'} e^{−βE_{j'ν}} = e^{−βE_{j0}} Σ_{j',ν} a^{ν}_{j'j}`.
///
/// Both sides are multiplied by `e^{βE_{j0}}` so nothing overflows at large β.
pub fn thermalization_balance(spec: &SystemSpec, table: &RateTable, j: usize) -> Result<Balance> {
    let ej = spec.levels[spec.level_index(j)?];
    let hw = spec.hbar * spec.omega;
    let b = table.beta;
    let mut lhs = 0.0;
    let mut rhs = 0.0;
    for jp in 1..=table.n_levels {
        let ejp = spec.levels[jp - 1];
        for nu in table.nus() {
            lhs += weighted(table.rate(j, jp, -nu), -b * (ejp + nu as f64 * hw - ej));
            rhs += table.rate(jp, j, nu);
        }
    }
    if lhs == 0.0 && rhs == 0.0 {
        return Err(Error::EmptySum("thermalization condition"));
    }
    Ok(Balance { lhs, rhs })
}

/// Relative error `2|L − R|/(L + R)` of the thermalization condition for level `j`.
pub fn floquet_thermalization_residual(spec: &SystemSpec, table: &RateTable, j: usize) -> Result<f64> {
    Ok(thermalization_balance(spec, table, j)?.residual())
}

/// `(a^{−ν}_{jj'} e^{−βE_{j'ν}}) / (e^{−βE_{j0}} a^{ν}_{j'j})`; 1 iff pairwise detailed balance holds.
pub fn detailed_balance_ratio(spec: &SystemSpec, table: &RateTable, jp: usize, j: usize, nu: i32) -> Result<f64> {
    let ej = spec.levels[spec.level_index(j)?];
    let ejp = spec.levels[spec.level_index(jp)?];
    let den = table.rate(jp, j, nu);
    let floor = NOISE_FLOOR * table.max_rate();
    if !(den > floor) {
        return Err(Error::BelowNoiseFloor(format!("a^{nu}_{{{jp}{j}}} = {den:e}")));
    }
    let hw = spec.hbar * spec.omega;
    let num = weighted(table.rate(j, jp, -nu), -table.beta * (ejp + nu as f64 * hw - ej));
    Ok(num / den)
}

/// Normalised first moment `Σ ν a^ν_{j'j} / Σ |ν| a^ν_{j'j}` over inelastic pairs.
pub fn energy_exchange(table: &RateTable) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for j in 1..=table.n_levels {
        for jp in 1..=table.n_levels {
            if jp == j {
                continue;
            }
            for nu in table.nus() {
                let a = table.rate(jp, j, nu);
                num += nu as f64 * a;
                den += nu.abs() as f64 * a;
            }
        }
    }
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

/// Energy exchanged with the drive, extrapolated to β = 0.
pub fn energy_exchange_beta0(engine: &RateEngine, betas: &[f64]) -> Result<Extrapolated> {
    let tables = engine.tables(betas)?;
    let ys: Vec<f64> = tables.iter().map(energy_exchange).collect();
    extrapolate_to_zero(betas, &ys)
}

/// `a^ν_{j'j} / a^{−ν}_{j'j}` in one table, with both rates above the noise floor.
pub fn rate_symmetry_ratio(table: &RateTable, jp: usize, j: usize, nu: i32) -> Result<f64> {
    let (a, b) = (table.rate(jp, j, nu), table.rate(jp, j, -nu));
    let floor = NOISE_FLOOR * table.max_rate();
    if !(a > floor && b > floor) {
        return Err(Error::BelowNoiseFloor(format!("a^±{nu}_{{{jp}{j}}} = {a:e}, {b:e}")));
    }
    Ok(a / b)
}

/// `a^ν_{j'j} / a^{−ν}_{j'j}` extrapolated to β = 0.
pub fn rate_symmetry_beta0(engine: &RateEngine, betas: &[f64], jp: usize, j: usize, nu: i32) -> Result<Extrapolated> {
    let tables = engine.tables(betas)?;
    let ys = tables.iter().map(|t| rate_symmetry_ratio(t, jp, j, nu)).collect::<Result<Vec<_>>>()?;
    extrapolate_to_zero(betas, &ys)
}

/// Signed thermalization residual per level, extrapolated to β = 0; at β = 0 the
/// condition is the symmetry of the summed in- and out-rates.
pub fn merged_symmetry_beta0(engine: &RateEngine, betas: &[f64]) -> Result<Vec<Extrapolated>> {
    let spec = engine.spec();
    let tables = engine.tables(betas)?;
    (1..=spec.n_levels())
        .map(|j| {
            let ys = tables
                .iter()
                .map(|t| thermalization_balance(spec, t, j).map(|b| b.signed()))
                .collect::<Result<Vec<_>>>()?;
            extrapolate_to_zero(betas, &ys)
        })
        .collect()
}

/// Largest `|extrapolated residual|` over levels.
pub fn merged_symmetry_residual(engine: &RateEngine, betas: &[f64]) -> Result<f64> {
    Ok(merged_symmetry_beta0(engine, betas)?.iter().map(|e| e.value.abs()).fold(0.0, f64::max))
}

/// Out-sum / in-sum ratio `Σ_{j'} a_{j'j} / Σ_{j'} a_{jj'}` per level, extrapolated to β = 0.
pub fn sum_balance_beta0(engine: &RateEngine, betas: &[f64]) -> Result<Vec<Extrapolated>> {
    let n = engine.spec().n_levels();
    let tables = engine.tables(betas)?;
    (1..=n)
        .map(|j| {
            let ys: Vec<f64> = tables
                .iter()
                .map(|t| {
                    let out: f64 = (1..=n).map(|jp| t.total(jp, j)).sum();
                    let inn: f64 = (1..=n).map(|jp| t.total(j, jp)).sum();
                    out / inn
                })
                .collect();
            extrapolate_to_zero(betas, &ys)
        })
        .collect()
}

/// Steady-state equation written through the exponential moments:
/// `Σ_{j'} a_{jj'} (℘_{j'}/℘_j − e^{−β(E_{j'}−E_j)} ⟨e^{βνħω}⟩_{jj'})`, divided by
/// `Σ_{j'} a_{jj'} ℘_{j'}/℘_j`.
///
/// It differs from the stationarity residual only by the thermalization
/// residual of level `j`, so it vanishes when both do.
pub fn moment_form_residual(spec: &SystemSpec, table: &RateTable, pops: &Populations, j: usize) -> Result<f64> {
    let ej = spec.levels[spec.level_index(j)?];
    let pj = pops.p[j - 1];
    let mut sum = 0.0;
    let mut scale = 0.0;
    for jp in 1..=table.n_levels {
        let a = table.total(j, jp);
        if a == 0.0 {
            continue;
        }
        let ratio = pops.p[jp - 1] / pj;
        let m = exp_moment(table, spec, j, jp)?;
        sum += a * ratio - weighted(a * m, -table.beta * (spec.levels[jp - 1] - ej));
        scale += a * ratio;
    }
    if scale == 0.0 {
        return Err(Error::EmptySum("moment form"));
    }
    Ok(sum.abs() / scale)
}

/// One row of the diagnostics CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagnosticRow {
    pub beta: f64,
    pub check: String,
    pub j: usize,
    pub j_prime: Option<usize>,
    pub nu: Option<i32>,
    pub lhs: f64,
    pub rhs: f64,
    pub residual: f64,
}

/// Thermalization and detailed-balance rows for one table.
pub fn table_report(spec: &SystemSpec, table: &RateTable) -> Result<Vec<DiagnosticRow>> {
    let mut rows = Vec::new();
    let hw = spec.hbar * spec.omega;
    for j in 1..=table.n_levels {
        let b = thermalization_balance(spec, table, j)?;
        rows.push(DiagnosticRow {
            beta: table.beta,
            check: "thermalization".into(),
            j,
            j_prime: None,
            nu: None,
            lhs: b.lhs,
            rhs: b.rhs,
            residual: b.residual(),
        });
    }
    let floor = NOISE_FLOOR * table.max_rate();
    for j in 1..=table.n_levels {
        for jp in 1..=table.n_levels {
            if jp == j {
                continue;
            }
            for nu in table.nus() {
                let den = table.rate(jp, j, nu);
                if !(den > floor) {
                    continue;
                }
                let ej = spec.levels[j - 1];
                let num = weighted(table.rate(j, jp, -nu), -table.beta * (spec.levels[jp - 1] + nu as f64 * hw - ej));
                rows.push(DiagnosticRow {
                    beta: table.beta,
                    check: "detailed_balance".into(),
                    j,
                    j_prime: Some(jp),
                    nu: Some(nu),
                    lhs: num,
                    rhs: den,
                    residual: num / den - 1.0,
                });
            }
        }
    }
    Ok(rows)
}

/// Residual rows for many tables, evaluated in parallel and kept in input order.
pub fn tables_report(spec: &SystemSpec, tables: &[RateTable]) -> Result<Vec<DiagnosticRow>> {
    let parts = tables.par_iter().map(|t| table_report(spec, t)).collect::<Result<Vec<_>>>()?;
    Ok(parts.into_iter().flatten().collect())
}

/// Thermalization residual of one level at one truncation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConvergencePoint {
    pub beta: f64,
    pub e_cut: f64,
    pub nu_cut: u32,
    pub j: usize,
    pub balance: Balance,
}

/// Residuals at rest below this are roundoff and exempt from the monotonicity test.
pub const CONVERGENCE_FLOOR: f64 = 1e-12;

/// Allowed growth between neighbouring truncations before a step counts as an increase.
pub const CONVERGENCE_BAND: f64 = 0.1;

/// Thermalization residuals over the grid `e_cuts × nu_cuts` at each β.
/// Rows are ordered by `(e_cut, nu_cut, β, j)` following the input order.
pub fn convergence_sweep(
    spec: &SystemSpec,
    base: &Truncation,
    e_cuts: &[f64],
    nu_cuts: &[u32],
    betas: &[f64],
    cache: Option<&dyn SolutionCache>,
) -> Result<Vec<ConvergencePoint>> {
    let mut out = Vec::new();
    for &e_cut in e_cuts {
        for &nu_cut in nu_cuts {
            let trunc = Truncation { e_cut, nu_cut, ..base.clone() };
            let engine = RateEngine::with_cache(FloquetModel::new(spec.clone(), trunc)?, cache)?;
            for table in engine.tables(betas)? {
                for j in 1..=spec.n_levels() {
                    let balance = thermalization_balance(spec, &table, j)?;
                    out.push(ConvergencePoint { beta: table.beta, e_cut, nu_cut, j, balance });
                }
            }
        }
    }
    Ok(out)
}

/// Checks that the worst residual over levels does not grow along either cutoff
/// axis by more than [`CONVERGENCE_BAND`]. Returns a description of every violation.
pub fn convergence_violations(points: &[ConvergencePoint]) -> Vec<String> {
    let mut e_cuts: Vec<f64> = points.iter().map(|p| p.e_cut).collect();
    e_cuts.sort_by(f64::total_cmp);
    e_cuts.dedup();
    let mut nu_cuts: Vec<u32> = points.iter().map(|p| p.nu_cut).collect();
    nu_cuts.sort_unstable();
    nu_cuts.dedup();
    let mut betas: Vec<f64> = points.iter().map(|p| p.beta).collect();
    betas.sort_by(f64::total_cmp);
    betas.dedup();
    let worst = |beta: f64, e: f64, n: u32| {
        points
            .iter()
            .filter(|p| p.beta == beta && p.e_cut == e && p.nu_cut == n)
            .map(|p| p.balance.residual())
            .fold(0.0, f64::max)
    };
    let grows = |a: f64, b: f64| b > (1.0 + CONVERGENCE_BAND) * a && b > CONVERGENCE_FLOOR;
    let mut bad = Vec::new();
    for &beta in &betas {
        for &n in &nu_cuts {
            for w in e_cuts.windows(2) {
                let (a, b) = (worst(beta, w[0], n), worst(beta, w[1], n));
                if grows(a, b) {
                    bad.push(format!("beta={beta} nu_cut={n}: e_cut {} -> {} raises {a:e} to {b:e}", w[0], w[1]));
                }
            }
        }
        for &e in &e_cuts {
            for w in nu_cuts.windows(2) {
                let (a, b) = (worst(beta, e, w[0]), worst(beta, e, w[1]));
                if grows(a, b) {
                    bad.push(format!("beta={beta} e_cut={e}: nu_cut {} -> {} raises {a:e} to {b:e}", w[0], w[1]));
                }
            }
        }
    }
    bad
}

pub const CONVERGENCE_COLUMNS: [&str; 7] = ["beta", "e_cut", "nu_cut", "j", "lhs", "rhs", "residual"];

pub fn write_convergence_csv<W: Write>(mut out: W, points: &[ConvergencePoint], comments: &[String]) -> Result<()> {
    for c in comments {
        writeln!(out, "# {c}")?;
    }
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CONVERGENCE_COLUMNS)?;
    for p in points {
        w.write_record([
            fmt_f64(p.beta),
            fmt_f64(p.e_cut),
            p.nu_cut.to_string(),
            p.j.to_string(),
            fmt_f64(p.balance.lhs),
            fmt_f64(p.balance.rhs),
            fmt_f64(p.balance.residual()),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub const DIAGNOSTIC_COLUMNS: [&str; 8] = ["beta", "check_name", "j", "j_prime", "nu", "lhs", "rhs", "residual"];

/// Writes rows in the diagnostics CSV schema; missing `j_prime`/`nu` are empty fields.
pub fn write_diagnostics_csv<W: Write>(mut out: W, rows: &[DiagnosticRow], comments: &[String]) -> Result<()> {
    for c in comments {
        writeln!(out, "# {c}")?;
    }
    let mut w = csv::Writer::from_writer(out);
    w.write_record(DIAGNOSTIC_COLUMNS)?;
    for r in rows {
        w.write_record([
            fmt_f64(r.beta),
            r.check.clone(),
            r.j.to_string(),
            r.j_prime.map(|x| x.to_string()).unwrap_or_default(),
            r.nu.map(|x| x.to_string()).unwrap_or_default(),
            fmt_f64(r.lhs),
            fmt_f64(r.rhs),
            fmt_f64(r.residual),
        ])?;
    }
    w.flush()?;
    Ok(())
}
