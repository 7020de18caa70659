//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Criteria listed in `KNOWN_FAILURES` are reported but do not fail the run;
//! every other failure exits non-zero.

#![allow(clippy::needless_range_loop)]

mod common;

use std::time::Instant;

use floquet_ness::diagnostics::{
    convergence_sweep, convergence_violations, default_beta_sequence, detailed_balance_ratio, energy_exchange_beta0,
    extrapolate_to_zero, floquet_thermalization_residual, rate_symmetry_beta0,
};
use floquet_ness::error::{Error, Result};
use floquet_ness::model::{floquet_coupling, Channel, FloquetModel, SystemSpec, Truncation};
use floquet_ness::ness::{boltzmann, high_t_slope, ness, steady_state, thermal_domain_bound, DEFAULT_SLOPE_GRID};
use floquet_ness::rates::{momentum_nodes, COLLISION_SHIFT, transition_rate, zero_temperature_rates, RateEngine, DEFAULT_BETA_FD, DEFAULT_P_MIN};
use floquet_ness::scattering::{route_deviation, solve_amplitudes, unitarity_report};
use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::{bessel_series, rate_oracle, small_model, stationary_by_minors};

const KNOWN_FAILURES: [&str; 2] = ["A3", "A7"];

/// β·(E_2 − E_1) values spanning the A3/A4 range.
const NORMALIZED_BETAS: [f64; 8] = [0.05, 0.1, 0.2, 0.5, 1.0, 2.0, 5.0, 10.0];

struct Fixture {
    spec: SystemSpec,
    gap: f64,
    engine: RateEngine,
}

impl Fixture {
    fn betas(&self, normalized: &[f64]) -> Vec<f64> {
        normalized.iter().map(|b| b / self.gap).collect()
    }
}

type Outcome = Result<(bool, String)>;

fn a1(fx: &Fixture) -> Outcome {
    let model = fx.engine.model();
    let p_cut = model.trunc.p_cut(fx.spec.mass);
    let mut worst = 0.0f64;
    let mut worst_rev = 0.0f64;
    let mut max_im = f64::NEG_INFINITY;
    for k in 1..=20 {
        // quadratic spacing concentrates points where channels open
        let p = p_cut * (k as f64 / 20.0).powi(2);
        for j in 1..=fx.spec.n_levels() {
            // a grid point may land exactly on a channel opening; nudge it off
            let r = match unitarity_report(model, p, Channel::new(j, 0)) {
                Err(Error::ThresholdCollision { .. }) => unitarity_report(model, p * (1.0 + COLLISION_SHIFT), Channel::new(j, 0))?,
                r => r?,
            };
            worst = worst.max(r.residual());
            worst_rev = worst_rev.max(r.reversed_residual());
            max_im = max_im.max(r.im_diag);
        }
    }
    let pass = worst < 1e-6 && worst_rev < 1e-6 && max_im <= 0.0;
    Ok((pass, format!("max residual {worst:.2e}, reversed {worst_rev:.2e}, max Im T_nn {max_im:.2e}")))
}

fn a2(fx: &Fixture) -> Outcome {
    let model = fx.engine.model();
    let mut worst = 0.0f64;
    let mut count = 0;
    for j in 1..=fx.spec.n_levels() {
        for node in momentum_nodes(model, j)? {
            let sol = solve_amplitudes(model, node.p, j)?;
            worst = worst.max(route_deviation(&sol, model)?);
            count += 1;
        }
    }
    Ok((worst <= 1e-8, format!("max relative route deviation {worst:.2e} over {count} quadrature momenta")))
}

fn a3(fx: &Fixture) -> Outcome {
    let tables = fx.engine.tables(&fx.betas(&NORMALIZED_BETAS))?;
    let mut worst = 0.0f64;
    for t in &tables {
        for j in 1..=fx.spec.n_levels() {
            worst = worst.max(floquet_thermalization_residual(&fx.spec, t, j)?);
        }
    }
    let sweep_betas = fx.betas(&[0.1, 0.5, 5.0]);
    let points =
        convergence_sweep(&fx.spec, &Truncation::default(), &[2.0, 4.0, 8.0, 16.0, 32.0], &[1, 2, 3, 4], &sweep_betas, None)?;
    let bad = convergence_violations(&points);
    let mut msg = format!("max residual {worst:.2e} (limit 1e-3); sweep steps above the 10% band: {}", bad.len());
    if let Some(first) = bad.first() {
        msg += &format!(" (first: {first})");
    }
    Ok((worst < 1e-3 && bad.is_empty(), msg))
}

fn a4(fx: &Fixture) -> Outcome {
    let spec = fx.spec.with_lambda(0.0);
    let engine = RateEngine::new(FloquetModel::new(spec.clone(), Truncation::default())?)?;
    let mut worst = 0.0f64;
    for t in engine.tables(&fx.betas(&NORMALIZED_BETAS))? {
        let p = ness(&t)?;
        let th = boltzmann(&spec, t.beta);
        worst = p.p.iter().zip(&th.p).map(|(a, b)| (a - b).abs()).fold(worst, f64::max);
    }
    Ok((worst < 1e-6, format!("max |NESS - Boltzmann| {worst:.2e} at lambda = 0")))
}

fn a5(fx: &Fixture) -> Outcome {
    let seq = default_beta_sequence(&fx.spec);
    let pops = fx.engine.tables(&seq)?.iter().map(ness).collect::<Result<Vec<_>>>()?;
    let mut ness0 = Vec::new();
    for j in 0..fx.spec.n_levels() {
        let ys: Vec<f64> = pops.iter().map(|p| p.p[j]).collect();
        ness0.push(extrapolate_to_zero(&seq, &ys)?.value);
    }
    let dev = ness0.iter().map(|p| (p - 1.0 / 3.0).abs()).fold(0.0, f64::max);
    let exchange = energy_exchange_beta0(&fx.engine, &seq)?.value;
    let (mut lo, mut hi, mut n_ratios) = (f64::INFINITY, f64::NEG_INFINITY, 0);
    let n = fx.spec.n_levels();
    for j in 1..=n {
        for jp in (1..=n).filter(|&jp| jp != j) {
            for nu in 1..=fx.engine.model().trunc.nu_cut as i32 {
                match rate_symmetry_beta0(&fx.engine, &seq, jp, j, nu) {
                    Ok(e) => {
                        lo = lo.min(e.value);
                        hi = hi.max(e.value);
                        n_ratios += 1;
                    }
                    Err(Error::BelowNoiseFloor(_)) => {}
                    Err(e) => return Err(e),
                }
            }
        }
    }
    let pass = dev < 0.01 && exchange.abs() < 0.01 && n_ratios > 0 && lo > 0.98 && hi < 1.02;
    Ok((
        pass,
        format!(
            "NESS(0) = ({:.7}, {:.7}, {:.7}); energy exchange {exchange:.2e}; {n_ratios} inelastic ratios in [{lo:.4}, {hi:.4}]",
            ness0[0], ness0[1], ness0[2]
        ),
    ))
}

fn a6(fx: &Fixture) -> Outcome {
    let grid = fx.betas(&DEFAULT_SLOPE_GRID);
    let fit = high_t_slope(&fx.engine, 1, 2, &grid)?;
    let expected = -(fx.spec.levels[1] - fx.spec.levels[0]);
    let rel = (fit.slope - expected).abs() / expected.abs();
    Ok((
        rel < 0.02,
        format!(
            "slope {:.5} vs {expected} ({:.2}% off); straight-line fit gives {:.5}",
            fit.slope,
            100.0 * rel,
            fit.linear_slope
        ),
    ))
}

fn a7(fx: &Fixture) -> Outcome {
    let lambdas: Vec<f64> = (0..=8).map(|k| 0.25 * k as f64).collect();
    let pairs = [(1, 2), (2, 3), (1, 3)];
    let beta_fd = DEFAULT_BETA_FD / fx.gap;
    let mut curves = vec![Vec::new(); pairs.len()];
    for &lambda in &lambdas {
        let engine = RateEngine::new(FloquetModel::new(fx.spec.with_lambda(lambda), Truncation::default())?)?;
        for (c, &(j, jp)) in curves.iter_mut().zip(&pairs) {
            c.push(thermal_domain_bound(&engine, j, jp, beta_fd)?);
        }
    }
    // top quartile of λ ∈ [0, 2] is [1.5, 2]
    let top: Vec<usize> = (0..lambdas.len()).filter(|&i| lambdas[i] >= 1.5).collect();
    let mut pass = true;
    let mut parts = Vec::new();
    for (c, &(j, jp)) in curves.iter().zip(&pairs) {
        let vals: Vec<f64> = top.iter().map(|&i| c[i]).collect();
        let hi = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lo = vals.iter().copied().fold(f64::INFINITY, f64::min);
        let change = (hi - lo) / hi.abs();
        let last = *c.last().unwrap();
        let ok = change < 0.05 && (0.1..=0.4).contains(&last);
        pass &= ok;
        parts.push(format!("({j},{jp}): {:.3} at lambda=0 -> {last:.3} at 2, top-quartile change {:.1}%", c[0], 100.0 * change));
    }
    Ok((pass, parts.join("; ")))
}

fn a8(fx: &Fixture) -> Outcome {
    let table = fx.engine.table(1.0 / fx.gap)?;
    let mut max_dev = 0.0f64;
    for nu in table.nus() {
        match detailed_balance_ratio(&fx.spec, &table, 2, 1, nu) {
            Ok(r) => max_dev = max_dev.max((r - 1.0).abs()),
            Err(Error::BelowNoiseFloor(_)) => {}
            Err(e) => return Err(e),
        }
    }
    let therm = (1..=fx.spec.n_levels())
        .map(|j| floquet_thermalization_residual(&fx.spec, &table, j))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .fold(0.0, f64::max);
    Ok((
        max_dev > 0.01 && therm < 1e-3,
        format!("max |pairwise ratio - 1| for (1,2) = {max_dev:.3}; thermalization residual {therm:.2e}"),
    ))
}

fn a9(fx: &Fixture) -> Outcome {
    let beta = 20.0 / fx.gap;
    let p = ness(&fx.engine.table(beta)?)?;
    let th = boltzmann(&fx.spec, beta);
    let min_p = p.p.iter().copied().fold(f64::INFINITY, f64::min);
    let dev = p.p.iter().zip(&th.p).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let zt = zero_temperature_rates(fx.engine.model(), DEFAULT_P_MIN)?;
    let n = fx.spec.n_levels();
    let min_total = (1..=n).flat_map(|j| (1..=n).map(move |jp| (jp, j))).map(|(jp, j)| zt.table.total(jp, j)).fold(f64::INFINITY, f64::min);
    Ok((
        min_p > 1e-3 && dev > 0.05 && min_total > 0.0,
        format!(
            "NESS ({:.4}, {:.4}, {:.4}); max deviation from Boltzmann {dev:.3}; min limiting total {min_total:.3e}",
            p.p[0], p.p[1], p.p[2]
        ),
    ))
}

fn a10(_fx: &Fixture) -> Outcome {
    let model = small_model(6, 200.0);
    let gap = model.spec.level_gap();
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let mut worst_rate = 0.0f64;
    for _ in 0..10 {
        let jp = rng.gen_range(1..=3);
        let j = rng.gen_range(1..=3);
        let nu = rng.gen_range(-3..=3);
        let beta = 10f64.powf(rng.gen_range(-1.0..1.0)) / gap;
        let got = transition_rate(&model, jp, j, nu, beta)?;
        let want = rate_oracle(&model, jp, j, nu, beta, 5);
        worst_rate = worst_rate.max((got - want).abs() / want.abs());
    }

    let spec = SystemSpec::toy_model().with_lambda(1.3);
    let trunc = Truncation { nu_cut: 6, ..Truncation::default() };
    let mut worst_bessel = 0.0f64;
    for (a, b) in [(1, 2), (1, 3), (2, 3), (3, 1), (2, 2)] {
        let base: Complex64 = spec
            .coupling_vectors
            .iter()
            .zip(&spec.coupling_strengths)
            .map(|(row, &v)| row[a - 1].conj() * row[b - 1] * v)
            .sum();
        let k = (spec.drive_profile[a - 1] - spec.drive_profile[b - 1]) as f64 * spec.lambda_drive / (spec.hbar * spec.omega);
        for d in -6..=6 {
            let got = floquet_coupling(&spec, &trunc, Channel::new(a, d), Channel::new(b, 0))?;
            let want = base * bessel_series(d, k);
            worst_bessel = worst_bessel.max((got - want).norm());
        }
    }

    let mut worst_null = 0.0f64;
    for _ in 0..50 {
        let mut w = [[0.0; 3]; 3];
        for (r, row) in w.iter_mut().enumerate() {
            for (c, x) in row.iter_mut().enumerate() {
                if r != c {
                    *x = 10f64.powf(rng.gen_range(-2.0..1.0));
                }
            }
        }
        for c in 0..3 {
            w[c][c] = -(0..3).filter(|&r| r != c).map(|r| w[r][c]).sum::<f64>();
        }
        let m = DMatrix::from_fn(3, 3, |r, c| w[r][c]);
        let got = steady_state(&m)?;
        let want = stationary_by_minors(&w);
        worst_null = got.iter().zip(want).map(|(a, b)| (a - b).abs()).fold(worst_null, f64::max);
    }
    Ok((
        worst_rate < 1e-4 && worst_bessel < 1e-10 && worst_null < 1e-10,
        format!("rate vs oracle {worst_rate:.2e}; coupling vs Bessel series {worst_bessel:.2e}; NESS vs minors {worst_null:.2e}"),
    ))
}

fn main() {
    let start = Instant::now();
    let spec = SystemSpec::toy_model();
    let gap = spec.level_gap();
    let engine = RateEngine::new(FloquetModel::new(spec.clone(), Truncation::default()).expect("model")).expect("engine");
    let fx = Fixture { spec, gap, engine };

    type Criterion = (&'static str, &'static str, fn(&Fixture) -> Outcome);
    let criteria: [Criterion; 10] = [
        ("A1", "optical theorem", a1),
        ("A2", "T extraction routes agree", a2),
        ("A3", "Floquet thermalization conditions", a3),
        ("A4", "undriven NESS is Boltzmann", a4),
        ("A5", "beta -> 0 limit", a5),
        ("A6", "high-temperature slope", a6),
        ("A7", "thermal-domain bound saturates", a7),
        ("A8", "detailed balance violated, thermalization holds", a8),
        ("A9", "low-temperature asymptote", a9),
        ("A10", "oracle equivalences", a10),
    ];
    // ACCEPTANCE_ONLY=A1,A10 restricts the run
    let only: Option<Vec<String>> =
        std::env::var("ACCEPTANCE_ONLY").ok().map(|v| v.split(',').map(|s| s.trim().to_string()).collect());
    let mut unexpected = Vec::new();
    for (id, name, f) in criteria {
        if only.as_ref().is_some_and(|o| !o.iter().any(|x| x == id)) {
            continue;
        }
        let t = Instant::now();
        let (pass, detail) = match f(&fx) {
            Ok(r) => r,
            Err(e) => (false, format!("error: {e}")),
        };
        let tag = match (pass, KNOWN_FAILURES.contains(&id)) {
            (true, _) => "PASS",
            (false, true) => "FAIL (known)",
            (false, false) => {
                unexpected.push(id);
                "FAIL"
            }
        };
        println!("{id:<4} {tag:<12} {name}: {detail} [{:.1}s]", t.elapsed().as_secs_f64());
    }
    println!("acceptance finished in {:.1}s", start.elapsed().as_secs_f64());
    if !unexpected.is_empty() {
        eprintln!("unexpected failures: {unexpected:?}");
        std::process::exit(1);
    }
}
