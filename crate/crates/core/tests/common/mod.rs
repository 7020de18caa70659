//! Independent reference implementations shared by the integration tests.
#![allow(dead_code, clippy::needless_range_loop)]

use std::f64::consts::PI;

use floquet_ness::model::{quasi_energy, Channel, FloquetModel, SystemSpec, Truncation};
use floquet_ness::scattering::solve_amplitudes;
use num_complex::Complex64 as C;

/// The toy-model parameters at a truncation cheap enough for dense oracles.
pub fn small_model(nu_cut: u32, e_cut: f64) -> FloquetModel {
    FloquetModel::new(SystemSpec::toy_model(), Truncation { nu_cut, e_cut, ..Truncation::default() }).unwrap()
}

/// Tanh-sinh quadrature of `f` on `[a, b]` with step `2^-level`.
///
/// Nodes closer than `skip` (relative) to an endpoint are dropped, which loses
/// O(sqrt(skip)) for the inverse-square-root endpoint singularities met here.
pub fn tanh_sinh(f: impl Fn(f64) -> f64, a: f64, b: f64, level: u32, skip: f64) -> f64 {
    let h = 0.5f64.powi(level as i32);
    let half = 0.5 * (b - a);
    let mut sum = 0.0;
    let mut k = 0i64;
    loop {
        let t = k as f64 * h;
        let u = 0.5 * PI * t.sinh();
        let w = 0.5 * PI * t.cosh() / u.cosh().powi(2);
        // distance from the endpoint, computed without cancellation
        let d = 2.0 * half / (1.0 + (2.0 * u).exp());
        if d < skip * b.abs().max(1.0) {
            break;
        }
        let mut term = f(b - d);
        if k > 0 {
            term += f(a + d);
        }
        sum += w * term;
        k += 1;
    }
    half * h * sum
}

/// Momenta below `p_cut` at which some channel opens for incoming level `j`.
pub fn thresholds(model: &FloquetModel, j: usize) -> Vec<f64> {
    let spec = &model.spec;
    let e_in = quasi_energy(spec, Channel::new(j, 0)).unwrap();
    let p_cut = model.trunc.p_cut(spec.mass);
    let mut t: Vec<f64> = model
        .basis()
        .channels()
        .iter()
        .map(|&ch| quasi_energy(spec, ch).unwrap() - e_in)
        .filter(|&de| de > 0.0)
        .map(|de| (2.0 * spec.mass * de).sqrt())
        .filter(|&p| p < p_cut)
        .collect();
    t.sort_by(f64::total_cmp);
    t.dedup();
    t
}

/// Thermal rate into `(jp, nu)` from `(j, 0)` by tanh-sinh integration between
/// consecutive thresholds, solving the scattering problem at every node.
pub fn rate_oracle(model: &FloquetModel, jp: usize, j: usize, nu: i32, beta: f64, level: u32) -> f64 {
    let spec = &model.spec;
    let m = spec.mass;
    let e_in = quasi_energy(spec, Channel::new(j, 0)).unwrap();
    let e_out = quasi_energy(spec, Channel::new(jp, nu)).unwrap();
    let idx = model.basis().index(Channel::new(jp, nu)).unwrap();
    let integrand = |p: f64| {
        let r = p * p + 2.0 * m * (e_in - e_out);
        // T vanishes linearly at p = 0, where the incoming Green factor diverges
        if r <= 0.0 || p < 1e-6 {
            return 0.0;
        }
        let sol = solve_amplitudes(model, p, j).unwrap();
        (-beta * p * p / (2.0 * m)).exp() * (m / r.sqrt()) * 2.0 * sol.t_row[idx].norm_sqr()
    };
    let mut edges = vec![0.0];
    edges.extend(thresholds(model, j));
    edges.push(model.trunc.p_cut(m));
    let integral: f64 = edges.windows(2).map(|w| tanh_sinh(integrand, w[0], w[1], level, 1e-13)).sum();
    2.0 * spec.density / (2.0 * PI * m / beta).sqrt() * integral
}

/// `J_n(x)` from its power series.
pub fn bessel_series(n: i32, x: f64) -> f64 {
    let k = n.unsigned_abs() as i32;
    let mut term = (0.5 * x).powi(k) / (1..=k).map(f64::from).product::<f64>();
    let mut sum = term;
    for s in 1..80 {
        term *= -(0.25 * x * x) / (s as f64 * (s + k) as f64);
        sum += term;
        if term.abs() < 1e-18 * sum.abs().max(1e-300) {
            break;
        }
    }
    if n < 0 && k % 2 == 1 {
        -sum
    } else {
        sum
    }
}

/// Solves `A x = b` by Gaussian elimination with complete pivoting.
pub fn complete_pivot_solve(a: &[Vec<C>], b: &[C]) -> Vec<C> {
    let n = b.len();
    let mut m: Vec<Vec<C>> = a.iter().zip(b).map(|(r, &v)| r.iter().copied().chain([v]).collect()).collect();
    let mut perm: Vec<usize> = (0..n).collect();
    for k in 0..n {
        let (mut pr, mut pc, mut best) = (k, k, -1.0);
        for (r, row) in m.iter().enumerate().skip(k) {
            for (c, z) in row.iter().enumerate().take(n).skip(k) {
                if z.norm() > best {
                    (pr, pc, best) = (r, c, z.norm());
                }
            }
        }
        m.swap(k, pr);
        for row in m.iter_mut() {
            row.swap(k, pc);
        }
        perm.swap(k, pc);
        for r in k + 1..n {
            let f = m[r][k] / m[k][k];
            for c in k..=n {
                let v = m[k][c];
                m[r][c] -= f * v;
            }
        }
    }
    let mut y = vec![C::new(0.0, 0.0); n];
    for k in (0..n).rev() {
        let s: C = (k + 1..n).map(|c| m[k][c] * y[c]).sum();
        y[k] = (m[k][n] - s) / m[k][k];
    }
    let mut x = vec![C::new(0.0, 0.0); n];
    for (k, &p) in perm.iter().enumerate() {
        x[p] = y[k];
    }
    x
}

/// Stationary distribution of a 3-level generator from the matrix-tree
/// theorem: `p_j` is proportional to the principal minor of `−W` without `j`.
pub fn stationary_by_minors(w: &[[f64; 3]; 3]) -> [f64; 3] {
    let mut p = [0.0; 3];
    for (j, pj) in p.iter_mut().enumerate() {
        let idx: Vec<usize> = (0..3).filter(|&k| k != j).collect();
        let (a, b) = (idx[0], idx[1]);
        *pj = w[a][a] * w[b][b] - w[a][b] * w[b][a];
    }
    let s: f64 = p.iter().sum();
    p.map(|v| v / s)
}
