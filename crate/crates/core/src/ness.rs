//! Pauli rate equation: generator, steady state, time evolution and the
//! high-temperature expansion of the steady state.

use std::io::Write;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::model::SystemSpec;
use crate::rates::{fmt_f64, moment_curvature_at_zero, RateEngine, RateTable};

/// Population vector at a given inverse temperature.
#[derive(Debug, Clone, PartialEq)]
pub struct Populations {
    pub beta: f64,
    pub p: Vec<f64>,
}

/// Kernel dimension test: second-smallest singular value below this times ‖W‖.
pub const KERNEL_TOL: f64 = 1e-12;

/// Stationarity residual accepted for a steady state, relative to ‖W‖.
pub const STATIONARITY_TOL: f64 = 1e-10;

/// `W[j][j'] = a_{jj'}` off the diagonal, `W[j][j] = −Σ_{j'≠j} a_{j'j}`.
/// Elastic totals `a_{jj}` cancel from the rate equation and are left out.
pub fn build_generator(table: &RateTable) -> DMatrix<f64> {
    let n = table.n_levels;
    let mut w = DMatrix::zeros(n, n);
    for j in 1..=n {
        for jp in 1..=n {
            if jp != j {
                w[(j - 1, jp - 1)] = table.total(j, jp);
            }
        }
    }
    for j in 0..n {
        let out: f64 = (0..n).filter(|&k| k != j).map(|k| w[(k, j)]).sum();
        w[(j, j)] = -out;
    }
    w
}

/// Normalised kernel vector of `W`.
///
/// One equation (the row with the largest diagonal magnitude) is replaced by
/// the normalisation row and the square system is solved directly.
pub fn steady_state(w: &DMatrix<f64>) -> Result<Vec<f64>> {
    let n = w.nrows();
    let sv = w.clone().singular_values();
    let norm = sv.max();
    if norm == 0.0 {
        return Err(Error::DegenerateKernel { sigma: 0.0, norm });
    }
    let mut sorted: Vec<f64> = sv.iter().copied().collect();
    sorted.sort_by(f64::total_cmp);
    if n > 1 && sorted[1] < KERNEL_TOL * norm {
        return Err(Error::DegenerateKernel { sigma: sorted[1], norm });
    }
    let r = (0..n).max_by(|&a, &b| w[(a, a)].abs().total_cmp(&w[(b, b)].abs())).unwrap_or(0);
    let mut m = w.clone();
    m.row_mut(r).fill(1.0);
    let mut rhs = DVector::zeros(n);
    rhs[r] = 1.0;
    let x = m.lu().solve(&rhs).ok_or(Error::Singular)?;
    let resid = (w * &x).amax();
    if !(resid <= STATIONARITY_TOL * norm.max(1.0)) {
        return Err(Error::DegenerateKernel { sigma: sorted.get(1).copied().unwrap_or(0.0), norm });
    }
    let mut p: Vec<f64> = x.iter().map(|&v| if v < 0.0 && v > -1e-12 { 0.0 } else { v }).collect();
    if p.iter().any(|&v| v < 0.0) {
        return Err(Error::DegenerateKernel { sigma: sorted.get(1).copied().unwrap_or(0.0), norm });
    }
    let s: f64 = p.iter().sum();
    p.iter_mut().for_each(|v| *v /= s);
    Ok(p)
}

/// Steady state of the generator built from `table`.
pub fn ness(table: &RateTable) -> Result<Populations> {
    Ok(Populations { beta: table.beta, p: steady_state(&build_generator(table))? })
}

/// Fixed-step RK4 integration of `ṗ = W p`, returning `(t, p(t))` at every step.
pub fn evolve(w: &DMatrix<f64>, p0: &[f64], t_final: f64, dt: f64) -> Result<Vec<(f64, Vec<f64>)>> {
    if !(dt > 0.0) || !(t_final >= 0.0) {
        return Err(Error::StepTooLarge(format!("need dt > 0 and t_final >= 0, got dt={dt}, t_final={t_final}")));
    }
    let s0: f64 = p0.iter().sum();
    let mut p = DVector::from_column_slice(p0);
    let steps = (t_final / dt).ceil() as usize;
    let mut out = Vec::with_capacity(steps + 1);
    out.push((0.0, p0.to_vec()));
    for k in 1..=steps {
        let h = if k == steps { t_final - dt * (steps - 1) as f64 } else { dt };
        let k1 = w * &p;
        let k2 = w * (&p + &k1 * (0.5 * h));
        let k3 = w * (&p + &k2 * (0.5 * h));
        let k4 = w * (&p + &k3 * h);
        p += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
        let drift = (p.sum() - s0).abs();
        let escaped = p.iter().any(|&v| !(v >= -1e-8 && v <= s0 + 1e-8));
        if drift > 1e-10 || escaped {
            return Err(Error::StepTooLarge(format!("dt={dt} is unstable (step {k}, drift {drift:e})")));
        }
        let t = if k == steps { t_final } else { k as f64 * dt };
        out.push((t, p.iter().copied().collect()));
    }
    Ok(out)
}

/// Boltzmann populations over the undisplaced quasi-energies.
pub fn boltzmann(spec: &SystemSpec, beta: f64) -> Populations {
    let e0 = spec.levels.iter().copied().fold(f64::INFINITY, f64::min);
    let mut p: Vec<f64> = spec.levels.iter().map(|&e| (-beta * (e - e0)).exp()).collect();
    if beta.is_infinite() {
        p = spec.levels.iter().map(|&e| if e == e0 { 1.0 } else { 0.0 }).collect();
    }
    let s: f64 = p.iter().sum();
    p.iter_mut().for_each(|v| *v /= s);
    Populations { beta, p }
}

/// Default high-temperature grid, in units of `1/(E_2 − E_1)`.
pub const DEFAULT_SLOPE_GRID: [f64; 4] = [0.02, 0.04, 0.06, 0.08];

/// Fit of `ln(℘_{j'}/℘_j)` against β near β = 0.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SlopeFit {
    /// Linear coefficient of a least-squares quadratic with intercept; the
    /// curvature term absorbs the O(β²) part of the expansion.
    pub slope: f64,
    /// Slope of a plain least-squares line, biased by the O(β²) term.
    pub linear_slope: f64,
}

/// High-temperature slope of `ln(℘_{j'}/℘_j)`; its expected value is `−(E_{j'} − E_j)`.
pub fn high_t_slope(engine: &RateEngine, j: usize, jp: usize, beta_grid: &[f64]) -> Result<SlopeFit> {
    if beta_grid.len() < 3 {
        return Err(Error::InvalidSpec(format!("slope fit needs at least 3 beta values, got {}", beta_grid.len())));
    }
    engine.spec().level_index(j)?;
    engine.spec().level_index(jp)?;
    let tables = engine.tables(beta_grid)?;
    let ys = tables
        .iter()
        .map(|t| ness(t).map(|p| (p.p[jp - 1] / p.p[j - 1]).ln()))
        .collect::<Result<Vec<_>>>()?;
    let slope = if beta_grid.len() >= 4 { polyfit(beta_grid, &ys, 2)?[1] } else { polyfit(beta_grid, &ys, 1)?[1] };
    let linear_slope = polyfit(beta_grid, &ys, 1)?[1];
    Ok(SlopeFit { slope, linear_slope })
}

/// Least-squares polynomial coefficients, lowest order first.
pub fn polyfit(xs: &[f64], ys: &[f64], degree: usize) -> Result<Vec<f64>> {
    let a = DMatrix::from_fn(xs.len(), degree + 1, |r, c| xs[r].powi(c as i32));
    let b = DVector::from_column_slice(ys);
    let c = a.svd(true, true).solve(&b, 1e-14).map_err(|e| Error::InvalidSpec(e.to_string()))?;
    Ok(c.iter().copied().collect())
}

/// Right-hand side of the high-temperature criterion
/// `β ≪ 2Δ / (d²⟨e^{βνħω}⟩_{jj'}/dβ²|₀ + Δ²)`, `Δ = E_{j'} − E_j`.
pub fn thermal_domain_bound(engine: &RateEngine, j: usize, jp: usize, beta_fd: f64) -> Result<f64> {
    if j == jp {
        return Err(Error::InvalidSpec("bound needs two different levels".into()));
    }
    let spec = engine.spec();
    let delta = spec.levels[spec.level_index(jp)?] - spec.levels[spec.level_index(j)?];
    let curvature = moment_curvature_at_zero(engine, j, jp, beta_fd)?;
    Ok(2.0 * delta / (curvature + delta * delta))
}

pub const NESS_COLUMNS: [&str; 5] = ["beta", "j", "population", "thermal_population", "deviation"];

/// Writes `(NESS, thermal)` pairs in the NESS CSV schema.
pub fn write_ness_csv<W: Write>(mut out: W, rows: &[(Populations, Populations)], comments: &[String]) -> Result<()> {
    for c in comments {
        writeln!(out, "# {c}")?;
    }
    let mut w = csv::Writer::from_writer(out);
    w.write_record(NESS_COLUMNS)?;
    for (ness, thermal) in rows {
        for (j, (p, t)) in ness.p.iter().zip(&thermal.p).enumerate() {
            w.write_record([fmt_f64(ness.beta), (j + 1).to_string(), fmt_f64(*p), fmt_f64(*t), fmt_f64(p - t)])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// One row of the bound CSV.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundRow {
    pub j: usize,
    pub j_prime: usize,
    pub lambda: f64,
    pub bound: f64,
}

pub const BOUND_COLUMNS: [&str; 4] = ["j", "j_prime", "lambda", "bound"];

pub fn write_bound_csv<W: Write>(mut out: W, rows: &[BoundRow], comments: &[String]) -> Result<()> {
    for c in comments {
        writeln!(out, "# {c}")?;
    }
    let mut w = csv::Writer::from_writer(out);
    w.write_record(BOUND_COLUMNS)?;
    for r in rows {
        w.write_record([r.j.to_string(), r.j_prime.to_string(), fmt_f64(r.lambda), fmt_f64(r.bound)])?;
    }
    w.flush()?;
    Ok(())
}
