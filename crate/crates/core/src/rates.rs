//! Floquet transition rates from thermal momentum quadrature.
//!
//! `a^ν_{j'j}(β)` is the rate from `(j, 0)` into `(j', ν)`:
//!
//! ```text
//! a = (𝒩/Z) ∫ dp e^{−βp²/2m} (m/p̃) Σ_± |T(±p̃, (j'ν); p, (j0))|²,   Z = sqrt(2πm/β)
//! ```
//!
//! The momentum integral runs over both signs of `p`, which is twice the
//! integral over `[0, p_cut]`. The T solves do not depend on β, so the
//! integrand is stored per node as `(m/p̃) Σ_±|T|²` and every β reuses it.

use std::f64::consts::PI;
use std::io::{BufRead, Write};

use gauss_quad::legendre::GaussLegendre;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{Channel, FloquetModel, SystemSpec, Truncation};
use crate::scattering::{solve_amplitudes, ScatteringSolution};

/// Relative displacement applied to a node that lands on a channel threshold.
pub const COLLISION_SHIFT: f64 = 1e-9;

/// Persistent or in-memory store for scattering solutions.
pub trait SolutionCache: Sync {
    fn get(&self, model: &FloquetModel, j_in: usize, p: f64) -> Option<ScatteringSolution>;
    /// Stores `sol` under the requested momentum `p` (the solve may have been displaced off a threshold).
    fn put(&self, model: &FloquetModel, p: f64, sol: &ScatteringSolution);
}

/// One quadrature node on `[0, p_cut]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Node {
    pub p: f64,
    pub w: f64,
    /// On panels just above a threshold the integration variable is the
    /// outgoing momentum `u` of the channel opening there; it is kept so that
    /// `p̃ = u` holds exactly for that channel.
    pub anchor: Option<(usize, f64)>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Panel {
    Plain,
    /// Lower end is the threshold of the given channel: `p = sqrt(u² + a²)`.
    Above(usize),
    /// Upper end is a threshold: `p = sqrt(b² − u²)`.
    Below,
}

/// Quadrature nodes for incoming level `j_in`.
///
/// Panels are split at every channel opening below `p_cut`. Below the last
/// threshold panels are at most `panel_width` wide, above it they grow
/// geometrically. Panels touching a threshold use a square-root substitution
/// that removes both the `1/p̃` endpoint singularity of the opening channel
/// and the square-root cusp that closed channels leave in T.
pub fn momentum_nodes(model: &FloquetModel, j_in: usize) -> Result<Vec<Node>> {
    model.spec.level_index(j_in)?;
    let m = model.spec.mass;
    let trunc = &model.trunc;
    let p_cut = trunc.p_cut(m);
    let e0 = model.level_energy(j_in);

    let mut thresholds: Vec<(f64, usize)> = model
        .energies()
        .iter()
        .enumerate()
        .filter(|(_, &e)| e > e0)
        .map(|(i, &e)| ((2.0 * m * (e - e0)).sqrt(), i))
        .filter(|&(p, _)| p < p_cut)
        .collect();
    thresholds.sort_by(|a, b| a.0.total_cmp(&b.0));

    let mut breaks = vec![(0.0, None)];
    breaks.extend(thresholds.iter().map(|&(p, i)| (p, Some(i))));
    breaks.push((p_cut, None));
    let last_threshold = thresholds.last().map_or(0.0, |t| t.0);

    let mut panels: Vec<(f64, f64, Panel)> = Vec::new();
    for pair in breaks.windows(2) {
        let ((a, lo), (b, hi)) = (pair[0], pair[1]);
        let cuts = subdivide(a, b, last_threshold, trunc);
        let n = cuts.len() - 1;
        for k in 0..n {
            let (s0, s1) = (cuts[k], cuts[k + 1]);
            let above = if k == 0 { lo } else { None };
            let below = k == n - 1 && hi.is_some();
            match (above, below) {
                (Some(c), true) => {
                    let mid = 0.5 * (s0 + s1);
                    panels.push((s0, mid, Panel::Above(c)));
                    panels.push((mid, s1, Panel::Below));
                }
                (Some(c), false) => panels.push((s0, s1, Panel::Above(c))),
                (None, true) if s0 == 0.0 => {
                    let mid = 0.5 * s1;
                    panels.push((0.0, mid, Panel::Plain));
                    panels.push((mid, s1, Panel::Below));
                }
                (None, true) => panels.push((s0, s1, Panel::Below)),
                (None, false) => panels.push((s0, s1, Panel::Plain)),
            }
        }
    }

    let rule = gauss_rule(trunc.quad_points)?;
    let mut nodes = Vec::with_capacity(panels.len() * rule.len());
    for (s0, s1, kind) in panels {
        match kind {
            Panel::Plain => {
                let (h, c) = (0.5 * (s1 - s0), 0.5 * (s1 + s0));
                nodes.extend(rule.iter().map(|&(x, w)| Node { p: c + h * x, w: h * w, anchor: None }));
            }
            Panel::Above(ch) => {
                let umax = (s1 * s1 - s0 * s0).sqrt();
                for &(x, w) in &rule {
                    let u = 0.5 * umax * (x + 1.0);
                    let p = (u * u + s0 * s0).sqrt();
                    nodes.push(Node { p, w: 0.5 * umax * w * u / p, anchor: Some((ch, u)) });
                }
            }
            Panel::Below => {
                let umax = (s1 * s1 - s0 * s0).sqrt();
                for &(x, w) in &rule {
                    let u = 0.5 * umax * (x + 1.0);
                    let p = (s1 * s1 - u * u).sqrt();
                    nodes.push(Node { p, w: 0.5 * umax * w * u / p, anchor: None });
                }
            }
        }
    }
    Ok(nodes)
}

/// Gauss–Legendre nodes on `[-1, 1]` in ascending order.
fn gauss_rule(n: usize) -> Result<Vec<(f64, f64)>> {
    let gl = GaussLegendre::new(n).map_err(|e| Error::InvalidTruncation(e.to_string()))?;
    let mut rule: Vec<(f64, f64)> = gl.as_node_weight_pairs().to_vec();
    rule.sort_by(|a, b| a.0.total_cmp(&b.0));
    Ok(rule)
}

fn subdivide(a: f64, b: f64, fine_until: f64, trunc: &Truncation) -> Vec<f64> {
    let mut cuts = vec![a];
    loop {
        let x = *cuts.last().unwrap();
        let h = if x < fine_until { trunc.panel_width } else { trunc.panel_width.max(x * (trunc.panel_growth - 1.0)) };
        // Avoid slivers: absorb a remainder shorter than a fifth of a panel.
        if b - (x + h) > 0.2 * h {
            cuts.push(x + h);
        } else {
            cuts.push(b);
            break;
        }
    }
    cuts
}

/// β-independent integrand samples for one incoming level.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelSamples {
    pub j_in: usize,
    pub nodes: Vec<Node>,
    /// `q[n][c] = (m/p̃_c) Σ_± |T_c|²` at node `n`, zero for closed channels.
    pub q: Vec<Vec<f64>>,
}

/// Solves at `p`, displacing the momentum slightly if it hits a channel threshold.
pub fn solve_with_retry(model: &FloquetModel, p: f64, j_in: usize) -> Result<ScatteringSolution> {
    match solve_amplitudes(model, p, j_in) {
        Err(Error::ThresholdCollision { .. }) => {}
        other => return other,
    }
    for shift in [COLLISION_SHIFT, -COLLISION_SHIFT] {
        match solve_amplitudes(model, p * (1.0 + shift), j_in) {
            Err(Error::ThresholdCollision { .. }) => continue,
            other => return other,
        }
    }
    Err(Error::RetriesExhausted(p))
}

impl LevelSamples {
    pub fn compute(model: &FloquetModel, j_in: usize, cache: Option<&dyn SolutionCache>) -> Result<Self> {
        let nodes = momentum_nodes(model, j_in)?;
        let m = model.spec.mass;
        let q = nodes
            .par_iter()
            .map(|node| -> Result<Vec<f64>> {
                let sol = match cache.and_then(|c| c.get(model, j_in, node.p)) {
                    Some(s) => s,
                    None => {
                        let s = solve_with_retry(model, node.p, j_in)?;
                        if let Some(c) = cache {
                            c.put(model, node.p, &s);
                        }
                        s
                    }
                };
                Ok(sol
                    .t_row
                    .iter()
                    .zip(&sol.p_out)
                    .enumerate()
                    .map(|(c, (t, pt))| {
                        let pt = match node.anchor {
                            Some((a, u)) if a == c => Some(u),
                            _ => *pt,
                        };
                        match pt {
                            Some(pt) => (m / pt) * 2.0 * t.norm_sqr(),
                            None => 0.0,
                        }
                    })
                    .collect())
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(LevelSamples { j_in, nodes, q })
    }

    /// Rates from `(j_in, 0)` into every channel of the basis.
    pub fn rates(&self, spec: &SystemSpec, beta: f64) -> Result<Vec<f64>> {
        check_beta(beta)?;
        let m = spec.mass;
        let pref = 2.0 * spec.density / (2.0 * PI * m / beta).sqrt();
        let n_ch = self.q.first().map_or(0, Vec::len);
        let mut acc = vec![0.0; n_ch];
        for (node, q) in self.nodes.iter().zip(&self.q) {
            let wb = node.w * (-beta * node.p * node.p / (2.0 * m)).exp();
            if wb == 0.0 {
                continue;
            }
            for (a, &x) in acc.iter_mut().zip(q) {
                *a += wb * x;
            }
        }
        Ok(acc.into_iter().map(|a| pref * a).collect())
    }
}

fn check_beta(beta: f64) -> Result<()> {
    if beta > 0.0 && beta.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidBeta(beta))
    }
}

/// Scattering samples for every incoming level; produces rate tables at any β.
#[derive(Debug, Clone)]
pub struct RateEngine {
    model: FloquetModel,
    levels: Vec<LevelSamples>,
}

impl RateEngine {
    pub fn new(model: FloquetModel) -> Result<Self> {
        Self::with_cache(model, None)
    }

    pub fn with_cache(model: FloquetModel, cache: Option<&dyn SolutionCache>) -> Result<Self> {
        let levels = (1..=model.n_levels())
            .map(|j| LevelSamples::compute(&model, j, cache))
            .collect::<Result<Vec<_>>>()?;
        Ok(RateEngine { model, levels })
    }

    pub fn model(&self) -> &FloquetModel {
        &self.model
    }

    pub fn spec(&self) -> &SystemSpec {
        &self.model.spec
    }

    pub fn samples(&self, j_in: usize) -> &LevelSamples {
        &self.levels[j_in - 1]
    }

    /// Single rate `a^ν_{j'j}(β)`.
    pub fn rate(&self, jp: usize, j: usize, nu: i32, beta: f64) -> Result<f64> {
        self.model.spec.level_index(j)?;
        let c = self.model.basis().index(Channel::new(jp, nu))?;
        Ok(self.levels[j - 1].rates(&self.model.spec, beta)?[c])
    }

    pub fn table(&self, beta: f64) -> Result<RateTable> {
        let n = self.model.n_levels();
        let nc = self.model.trunc.nu_cut;
        let mut table = RateTable::zeros(beta, n, self.model.trunc.clone());
        for (j0, level) in self.levels.iter().enumerate() {
            let r = level.rates(&self.model.spec, beta)?;
            for (c, ch) in self.model.basis().channels().iter().enumerate() {
                table.per_nu[table_index(n, nc, ch.j, j0 + 1, ch.nu)] = r[c];
            }
        }
        table.refresh_totals();
        Ok(table)
    }

    /// Tables for several β, evaluated concurrently and returned in input order.
    pub fn tables(&self, betas: &[f64]) -> Result<Vec<RateTable>> {
        betas.par_iter().map(|&b| self.table(b)).collect()
    }
}

/// Single rate `a^ν_{j'j}(β)`; solves only for the incoming level `j`.
pub fn transition_rate(model: &FloquetModel, jp: usize, j: usize, nu: i32, beta: f64) -> Result<f64> {
    check_beta(beta)?;
    model.spec.level_index(j)?;
    let c = model.basis().index(Channel::new(jp, nu))?;
    let s = LevelSamples::compute(model, j, None)?;
    Ok(s.rates(&model.spec, beta)?[c])
}

/// Rate table at `beta`.
pub fn rate_table(model: &FloquetModel, beta: f64) -> Result<RateTable> {
    check_beta(beta)?;
    RateEngine::new(model.clone())?.table(beta)
}

fn table_index(n: usize, nu_cut: u32, jp: usize, j: usize, nu: i32) -> usize {
    let w = 2 * nu_cut as usize + 1;
    ((jp - 1) * n + (j - 1)) * w + (nu + nu_cut as i32) as usize
}

/// Floquet rates `a^ν_{j'j}` and totals `a_{j'j}` at one inverse temperature.
#[derive(Debug, Clone, PartialEq)]
pub struct RateTable {
    pub beta: f64,
    pub n_levels: usize,
    pub trunc: Truncation,
    per_nu: Vec<f64>,
    totals: Vec<f64>,
}

impl RateTable {
    pub fn zeros(beta: f64, n_levels: usize, trunc: Truncation) -> Self {
        let w = 2 * trunc.nu_cut as usize + 1;
        RateTable {
            beta,
            n_levels,
            per_nu: vec![0.0; n_levels * n_levels * w],
            totals: vec![0.0; n_levels * n_levels],
            trunc,
        }
    }

    pub fn nu_cut(&self) -> u32 {
        self.trunc.nu_cut
    }

    /// `a^ν_{j'j}`: rate from `(j, 0)` into `(j', ν)`; zero outside the ν window.
    pub fn rate(&self, jp: usize, j: usize, nu: i32) -> f64 {
        if nu.unsigned_abs() > self.trunc.nu_cut {
            return 0.0;
        }
        self.per_nu[table_index(self.n_levels, self.trunc.nu_cut, jp, j, nu)]
    }

    pub fn set_rate(&mut self, jp: usize, j: usize, nu: i32, value: f64) {
        let i = table_index(self.n_levels, self.trunc.nu_cut, jp, j, nu);
        self.per_nu[i] = value;
        self.refresh_totals();
    }

    /// `a_{j'j} = Σ_ν a^ν_{j'j}`.
    pub fn total(&self, jp: usize, j: usize) -> f64 {
        self.totals[(jp - 1) * self.n_levels + (j - 1)]
    }

    /// Copy with every rate multiplied by `c`.
    pub fn scaled(&self, c: f64) -> Self {
        let mut t = self.clone();
        t.per_nu.iter_mut().for_each(|x| *x *= c);
        t.refresh_totals();
        t
    }

    /// Largest per-ν rate in the table.
    pub fn max_rate(&self) -> f64 {
        self.per_nu.iter().copied().fold(0.0, f64::max)
    }

    pub fn nus(&self) -> std::ops::RangeInclusive<i32> {
        let nc = self.trunc.nu_cut as i32;
        -nc..=nc
    }

    fn refresh_totals(&mut self) {
        let n = self.n_levels;
        let nc = self.trunc.nu_cut as i32;
        for jp in 1..=n {
            for j in 1..=n {
                let s: f64 = (-nc..=nc).map(|nu| self.rate(jp, j, nu)).sum();
                self.totals[(jp - 1) * n + (j - 1)] = s;
            }
        }
    }

    /// Builds a table from an iterator of `(j', j, ν, rate)` entries.
    pub fn from_entries(
        beta: f64,
        n_levels: usize,
        trunc: Truncation,
        entries: impl IntoIterator<Item = (usize, usize, i32, f64)>,
    ) -> Result<Self> {
        let mut t = RateTable::zeros(beta, n_levels, trunc);
        let nc = t.trunc.nu_cut;
        for (jp, j, nu, r) in entries {
            if jp == 0 || jp > n_levels || j == 0 || j > n_levels {
                return Err(Error::InvalidLevel { index: jp.max(j), levels: n_levels });
            }
            if nu.unsigned_abs() > nc {
                return Err(Error::ChannelOutsideBasis(Channel::new(jp, nu)));
            }
            t.per_nu[table_index(n_levels, nc, jp, j, nu)] = r;
        }
        t.refresh_totals();
        Ok(t)
    }
}

/// `⟨e^{βνħω}⟩_{jj'}`: moment of the rates from `j'` into `j`.
pub fn exp_moment(table: &RateTable, spec: &SystemSpec, j: usize, jp: usize) -> Result<f64> {
    let total = table.total(j, jp);
    if !(total > 0.0) {
        return Err(Error::UndefinedMoment { to: j, from: jp });
    }
    let hw = spec.hbar * spec.omega;
    let num: f64 = table.nus().map(|nu| table.rate(j, jp, nu) * (table.beta * nu as f64 * hw).exp()).sum();
    Ok(num / total)
}

/// Finite-difference step for the β = 0 curvature, in units of `1/(E_2 − E_1)`.
pub const DEFAULT_BETA_FD: f64 = 0.005;

/// Second β-derivative of `⟨e^{βνħω}⟩_{jj'}` at β = 0.
///
/// β = 0 itself cannot be evaluated, so the second difference
/// `D(h) = [f(h) − 2f(2h) + f(3h)]/h²` (centred at 2h) is combined as
/// `2D(h/2) − D(h)`, which cancels the first-order offset.
pub fn moment_curvature_at_zero(engine: &RateEngine, j: usize, jp: usize, beta_fd: f64) -> Result<f64> {
    check_beta(beta_fd)?;
    let spec = engine.spec();
    let h = beta_fd;
    let betas = [0.5 * h, h, 1.5 * h, 2.0 * h, 3.0 * h];
    let tables = engine.tables(&betas)?;
    let f = tables.iter().map(|t| exp_moment(t, spec, j, jp)).collect::<Result<Vec<_>>>()?;
    let d_half = (f[0] - 2.0 * f[1] + f[2]) / (0.25 * h * h);
    let d_full = (f[1] - 2.0 * f[3] + f[4]) / (h * h);
    Ok(2.0 * d_half - d_full)
}

/// β → ∞ limiting rates.
///
/// In the contact model the T elements vanish like `p^k` (generically `k = 1`)
/// as the incoming momentum goes to zero, so the literal limit of the rate is
/// zero. The finite quantity is `lim β^k a^ν_{j'j}`; `exponents[j-1]` holds the
/// `k` found for incoming level `j`, and the table holds the rescaled limits.
#[derive(Debug, Clone, PartialEq)]
pub struct ZeroTemperatureRates {
    pub table: RateTable,
    pub exponents: Vec<u32>,
}

/// Default probe momentum, in units of `sqrt(2m ΔE)` with ΔE the first level gap.
pub const DEFAULT_P_MIN: f64 = 1e-4;

/// Relative tolerance on the rescaled limit under halving of the probe momentum.
pub const LIMIT_STABILITY: f64 = 1e-3;

pub fn zero_temperature_rates(model: &FloquetModel, p_min_rel: f64) -> Result<ZeroTemperatureRates> {
    let spec = &model.spec;
    let m = spec.mass;
    let n = model.n_levels();
    let p_min = p_min_rel * (2.0 * m * spec.level_gap().abs()).sqrt();
    if !(p_min > 0.0) {
        return Err(Error::InvalidSpec(format!("probe momentum must be positive, got {p_min}")));
    }
    let mut table = RateTable::zeros(f64::INFINITY, n, model.trunc.clone());
    let mut exponents = Vec::with_capacity(n);
    for j in 1..=n {
        let e0 = model.level_energy(j);
        let a = solve_with_retry(model, p_min, j)?;
        let b = solve_with_retry(model, 0.5 * p_min, j)?;
        let c = solve_with_retry(model, 0.25 * p_min, j)?;
        let mut k_level: Option<u32> = None;
        let mut entries = Vec::new();
        for (i, ch) in model.basis().channels().iter().enumerate() {
            let e_out = model.energies()[i];
            if e_out >= e0 {
                continue;
            }
            let p0 = (2.0 * m * (e0 - e_out)).sqrt();
            let (ta, tb, tc) = (a.t_row[i].norm_sqr(), b.t_row[i].norm_sqr(), c.t_row[i].norm_sqr());
            if ta == 0.0 {
                entries.push((ch.j, ch.nu, 0.0));
                continue;
            }
            let s = (ta / tb).log2();
            let k = (0.5 * s).round().max(0.0) as u32;
            if (s - 2.0 * k as f64).abs() > 0.05 {
                return Err(Error::UnstableLimit(format!(
                    "|T|² for {ch} from level {j} scales like p^{s:.3}, not an even power"
                )));
            }
            match k_level {
                None => k_level = Some(k),
                Some(k0) if k0 != k => {
                    return Err(Error::UnstableLimit(format!(
                        "mixed threshold exponents {k0} and {k} for incoming level {j}"
                    )))
                }
                _ => {}
            }
            let tau_b = tb / (0.5 * p_min).powi(2 * k as i32);
            let tau_c = tc / (0.25 * p_min).powi(2 * k as i32);
            if (tau_b - tau_c).abs() > LIMIT_STABILITY * tau_b.abs().max(tau_c.abs()) {
                return Err(Error::UnstableLimit(format!(
                    "{ch} from level {j}: rescaled |T|² moves from {tau_b:e} to {tau_c:e}"
                )));
            }
            let tau = tau_c;
            let moment = gamma_half_ratio(k) * (2.0 * m).powi(k as i32);
            entries.push((ch.j, ch.nu, 2.0 * spec.density * (m / p0) * tau * moment));
        }
        for (jp, nu, v) in entries {
            table.per_nu[table_index(n, model.trunc.nu_cut, jp, j, nu)] = v;
        }
        exponents.push(k_level.unwrap_or(0));
    }
    table.refresh_totals();
    Ok(ZeroTemperatureRates { table, exponents })
}

/// `Γ(k + 1/2) / Γ(1/2)`.
fn gamma_half_ratio(k: u32) -> f64 {
    (0..k).map(|i| i as f64 + 0.5).product()
}

/// Shortest round-trip decimal form of a float.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:?}")
}

pub const RATE_COLUMNS: [&str; 8] = ["beta", "j_from", "j_to", "nu", "rate", "e_cut", "nu_cut", "quad_points"];

/// Writes tables in the rate CSV schema. Header comments carry `comments` and
/// the truncation parameters not present in the columns.
pub fn write_rates_csv<W: Write>(mut out: W, tables: &[RateTable], comments: &[String]) -> Result<()> {
    for c in comments {
        writeln!(out, "# {c}")?;
    }
    if let Some(t) = tables.first() {
        writeln!(
            out,
            "# degeneracy_tol={} panel_width={} panel_growth={}",
            fmt_f64(t.trunc.degeneracy_tol),
            fmt_f64(t.trunc.panel_width),
            fmt_f64(t.trunc.panel_growth)
        )?;
    }
    let mut w = csv::Writer::from_writer(out);
    w.write_record(RATE_COLUMNS)?;
    for t in tables {
        for j in 1..=t.n_levels {
            for jp in 1..=t.n_levels {
                for nu in t.nus() {
                    w.write_record([
                        fmt_f64(t.beta),
                        j.to_string(),
                        jp.to_string(),
                        nu.to_string(),
                        fmt_f64(t.rate(jp, j, nu)),
                        fmt_f64(t.trunc.e_cut),
                        t.trunc.nu_cut.to_string(),
                        t.trunc.quad_points.to_string(),
                    ])?;
                }
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads tables written by [`write_rates_csv`], in file order.
pub fn read_rates_csv<R: BufRead>(input: R) -> Result<Vec<RateTable>> {
    let mut extra = Truncation::default();
    let mut body = String::new();
    for line in input.lines() {
        let line = line?;
        if let Some(c) = line.strip_prefix('#') {
            for kv in c.split_whitespace() {
                if let Some((k, v)) = kv.split_once('=') {
                    let parse = || v.parse::<f64>().map_err(|e| Error::Config(format!("{k}: {e}")));
                    match k {
                        "degeneracy_tol" => extra.degeneracy_tol = parse()?,
                        "panel_width" => extra.panel_width = parse()?,
                        "panel_growth" => extra.panel_growth = parse()?,
                        _ => {}
                    }
                }
            }
        } else {
            body.push_str(&line);
            body.push('\n');
        }
    }
    let mut rd = csv::Reader::from_reader(body.as_bytes());
    let headers = rd.headers()?.clone();
    if headers.iter().ne(RATE_COLUMNS) {
        return Err(Error::Config(format!("unexpected rate columns: {headers:?}")));
    }
    type Key = (u64, u64, u32, usize);
    type Entry = (usize, usize, i32, f64);
    let mut groups: Vec<(Key, Vec<Entry>)> = Vec::new();
    let bad = |what: &str, e: &dyn std::fmt::Display| Error::Config(format!("bad {what}: {e}"));
    for rec in rd.records() {
        let rec = rec?;
        let beta: f64 = rec[0].parse().map_err(|e| bad("beta", &e))?;
        let j: usize = rec[1].parse().map_err(|e| bad("j_from", &e))?;
        let jp: usize = rec[2].parse().map_err(|e| bad("j_to", &e))?;
        let nu: i32 = rec[3].parse().map_err(|e| bad("nu", &e))?;
        let rate: f64 = rec[4].parse().map_err(|e| bad("rate", &e))?;
        let e_cut: f64 = rec[5].parse().map_err(|e| bad("e_cut", &e))?;
        let nu_cut: u32 = rec[6].parse().map_err(|e| bad("nu_cut", &e))?;
        let qp: usize = rec[7].parse().map_err(|e| bad("quad_points", &e))?;
        let key = (beta.to_bits(), e_cut.to_bits(), nu_cut, qp);
        match groups.last_mut() {
            Some((k, v)) if *k == key => v.push((jp, j, nu, rate)),
            _ => groups.push((key, vec![(jp, j, nu, rate)])),
        }
    }
    groups
        .into_iter()
        .map(|((beta, e_cut, nu_cut, quad_points), entries)| {
            let n = entries.iter().map(|e| e.0.max(e.1)).max().unwrap_or(0);
            let trunc = Truncation { nu_cut, e_cut: f64::from_bits(e_cut), quad_points, ..extra.clone() };
            RateTable::from_entries(f64::from_bits(beta), n, trunc, entries)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::SystemSpec;

    fn model(nu_cut: u32, e_cut: f64) -> FloquetModel {
        FloquetModel::new(SystemSpec::toy_model(), Truncation { nu_cut, e_cut, ..Truncation::default() }).unwrap()
    }

    #[test]
    fn nodes_integrate_smooth_functions() {
        let m = model(2, 50.0);
        for j in 1..=3 {
            let nodes = momentum_nodes(&m, j).unwrap();
            let p_cut = m.trunc.p_cut(1.0);
            let s: f64 = nodes.iter().map(|n| n.w).sum();
            assert!((s - p_cut).abs() < 1e-12 * p_cut);
            let g: f64 = nodes.iter().map(|n| n.w * (-n.p * n.p).exp()).sum();
            assert!((g - PI.sqrt() / 2.0).abs() < 1e-12);
            assert!(nodes.iter().all(|n| n.p > 0.0 && n.p < p_cut && n.w > 0.0));
        }
    }

    #[test]
    fn anchors_match_outgoing_momenta() {
        let m = model(2, 50.0);
        let nodes = momentum_nodes(&m, 1).unwrap();
        let e0 = m.level_energy(1);
        let mut anchored = 0;
        for n in &nodes {
            if let Some((c, u)) = n.anchor {
                anchored += 1;
                let pt = (n.p * n.p + 2.0 * (e0 - m.energies()[c])).sqrt();
                assert!((pt - u).abs() < 1e-9 * (1.0 + u));
            }
        }
        assert!(anchored > 0);
    }

    #[test]
    fn uncoupled_system_has_no_rates() {
        let mut s = SystemSpec::toy_model();
        s.coupling_strengths = vec![0.0; 3];
        let m = FloquetModel::new(s, Truncation { nu_cut: 1, e_cut: 10.0, ..Truncation::default() }).unwrap();
        let t = rate_table(&m, 1.0).unwrap();
        assert_eq!(t.max_rate(), 0.0);
    }

    #[test]
    fn undriven_rates_live_on_nu_zero() {
        let m = FloquetModel::new(
            SystemSpec::toy_model().with_lambda(0.0),
            Truncation { nu_cut: 2, e_cut: 20.0, ..Truncation::default() },
        )
        .unwrap();
        let t = rate_table(&m, 1.0).unwrap();
        for jp in 1..=3 {
            for j in 1..=3 {
                assert!(t.rate(jp, j, 0) > 0.0);
                for nu in [-2, -1, 1, 2] {
                    assert_eq!(t.rate(jp, j, nu), 0.0);
                }
                assert_eq!(exp_moment(&t, &m.spec, jp, j).unwrap(), 1.0);
            }
        }
    }

    #[test]
    fn table_invariants() {
        let m = model(2, 30.0);
        let e = RateEngine::new(m.clone()).unwrap();
        let t = e.table(0.7).unwrap();
        for jp in 1..=3 {
            for j in 1..=3 {
                let s: f64 = t.nus().map(|nu| t.rate(jp, j, nu)).sum();
                assert!((s - t.total(jp, j)).abs() <= 1e-12 * s.max(1e-300));
                for nu in t.nus() {
                    assert!(t.rate(jp, j, nu) >= 0.0);
                }
            }
        }
        assert_eq!(e.rate(2, 1, 1, 0.7).unwrap(), t.rate(2, 1, 1));
        let single = transition_rate(&m, 2, 1, 1, 0.7).unwrap();
        assert_eq!(single, t.rate(2, 1, 1));
        assert!(matches!(e.table(0.0), Err(Error::InvalidBeta(_))));
        // Channels that never open below p_cut carry no rate.
        let p_cut = m.trunc.p_cut(1.0);
        for j in 1..=3 {
            for (i, ch) in m.basis().channels().iter().enumerate() {
                let de = m.energies()[i] - m.level_energy(j);
                if de > 0.0 && (2.0 * de).sqrt() >= p_cut {
                    assert_eq!(t.rate(ch.j, j, ch.nu), 0.0);
                }
            }
        }
    }

    #[test]
    fn csv_round_trip_is_bit_exact() {
        let e = RateEngine::new(model(1, 10.0)).unwrap();
        let tables = e.tables(&[0.3, 2.0]).unwrap();
        let mut buf = Vec::new();
        write_rates_csv(&mut buf, &tables, &["config_hash=abc".into()]).unwrap();
        let back = read_rates_csv(&buf[..]).unwrap();
        assert_eq!(back, tables);
    }

    #[test]
    fn zero_temperature_limits() {
        let m = model(3, 10.0);
        let z = zero_temperature_rates(&m, DEFAULT_P_MIN).unwrap();
        assert_eq!(z.exponents, vec![1, 1, 1]);
        for j in 1..=3 {
            for (i, ch) in m.basis().channels().iter().enumerate() {
                let v = z.table.rate(ch.j, j, ch.nu);
                if m.energies()[i] > m.level_energy(j) {
                    assert_eq!(v, 0.0);
                } else if m.energies()[i] < m.level_energy(j) {
                    assert!(v > 0.0, "{ch} from {j}");
                }
            }
            for jp in 1..=3 {
                assert!(z.table.total(jp, j) > 0.0);
            }
        }
    }

    #[test]
    fn gamma_ratio() {
        assert_eq!(gamma_half_ratio(0), 1.0);
        assert_eq!(gamma_half_ratio(1), 0.5);
        assert_eq!(gamma_half_ratio(2), 0.75);
    }
}
