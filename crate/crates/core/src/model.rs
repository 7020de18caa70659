//! Driven N-level system, its Floquet channels and the Floquet coupling matrix.
//!
//! Levels are labelled `1..=N` everywhere in the public API. The drive is
//! diagonal, `E_j + c_j λ cos(ωt)`, so the Floquet states are known in closed
//! form and the quasi-energy of channel `(j, ν)` is `E_j + ν ħω`.

use std::f64::consts::PI;
use std::fmt;

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Physical description of the driven system, the gas and the contact coupling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemSpec {
    pub levels: Vec<f64>,
    pub omega: f64,
    pub lambda_drive: f64,
    pub hbar: f64,
    pub mass: f64,
    pub density: f64,
    pub coupling_strengths: Vec<f64>,
    /// Overlaps `<χ_ι|φ_j>`, one row per scatterer.
    pub coupling_vectors: Vec<Vec<Complex64>>,
    pub drive_profile: Vec<i32>,
}

impl SystemSpec {
    /// The driven three-level toy model with ħ = m = 𝒩 = 1.
    pub fn toy_model() -> Self {
        let s = 1.0 / 3f64.sqrt();
        let ph = |a: f64| Complex64::from_polar(s, a);
        let (a1, a2) = (4.0 * PI / 3.0, 2.0 * PI / 3.0);
        SystemSpec {
            levels: vec![-0.5, 0.0, 0.4],
            omega: 1.35,
            lambda_drive: 0.5,
            hbar: 1.0,
            mass: 1.0,
            density: 1.0,
            coupling_strengths: vec![1.0, 0.7, 1.5],
            coupling_vectors: vec![
                vec![ph(0.0), ph(0.0), ph(0.0)],
                vec![ph(a1), ph(0.0), ph(a2)],
                vec![ph(-a1), ph(0.0), ph(-a2)],
            ],
            drive_profile: vec![-1, 0, 1],
        }
    }

    pub fn n_levels(&self) -> usize {
        self.levels.len()
    }

    /// Same spec with a different drive strength.
    pub fn with_lambda(&self, lambda: f64) -> Self {
        SystemSpec { lambda_drive: lambda, ..self.clone() }
    }

    /// Checks the structural invariants that do not depend on a truncation.
    pub fn validate(&self) -> Result<()> {
        let n = self.levels.len();
        let bad = |m: String| Err(Error::InvalidSpec(m));
        if n < 2 {
            return bad(format!("need at least 2 levels, got {n}"));
        }
        if self.levels.iter().any(|e| !e.is_finite()) {
            return bad("level energies must be finite".into());
        }
        if !(self.omega > 0.0 && self.omega.is_finite()) {
            return bad(format!("omega must be positive, got {}", self.omega));
        }
        if !(self.lambda_drive >= 0.0 && self.lambda_drive.is_finite()) {
            return bad(format!("lambda_drive must be >= 0, got {}", self.lambda_drive));
        }
        for (name, v) in [("hbar", self.hbar), ("mass", self.mass), ("density", self.density)] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        if self.drive_profile.len() != n {
            return bad(format!("drive_profile has {} entries for {n} levels", self.drive_profile.len()));
        }
        if self.coupling_strengths.is_empty() {
            return bad("at least one scatterer is required".into());
        }
        if self.coupling_strengths.iter().any(|v| !v.is_finite()) {
            return bad("coupling strengths must be finite".into());
        }
        if self.coupling_vectors.len() != self.coupling_strengths.len() {
            return bad(format!(
                "{} coupling vectors for {} coupling strengths",
                self.coupling_vectors.len(),
                self.coupling_strengths.len()
            ));
        }
        for (i, row) in self.coupling_vectors.iter().enumerate() {
            if row.len() != n {
                return bad(format!("coupling vector {} has {} entries, expected {n}", i + 1, row.len()));
            }
            let norm: f64 = row.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
            if (norm - 1.0).abs() > 1e-10 {
                return bad(format!("coupling vector {} is not normalized (norm {norm})", i + 1));
            }
        }
        Ok(())
    }

    /// Zero-based index of level `j`, or an error.
    pub fn level_index(&self, j: usize) -> Result<usize> {
        if j == 0 || j > self.levels.len() {
            return Err(Error::InvalidLevel { index: j, levels: self.levels.len() });
        }
        Ok(j - 1)
    }

    /// Gap between the first two levels; the natural β scale.
    pub fn level_gap(&self) -> f64 {
        quasi_energy(self, Channel::new(2, 0)).unwrap() - quasi_energy(self, Channel::new(1, 0)).unwrap()
    }
}

/// A level together with a Floquet (Brillouin copy) index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Channel {
    pub j: usize,
    pub nu: i32,
}

impl Channel {
    pub const fn new(j: usize, nu: i32) -> Self {
        Channel { j, nu }
    }
}

impl fmt::Display for Channel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.j, self.nu)
    }
}

/// Numerical cutoffs shared by the scattering solver and the thermal quadrature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Truncation {
    pub nu_cut: u32,
    pub e_cut: f64,
    pub quad_points: usize,
    pub degeneracy_tol: f64,
    /// Largest momentum-panel width below the last threshold.
    pub panel_width: f64,
    /// Geometric growth factor of panels beyond the last threshold.
    pub panel_growth: f64,
}

impl Default for Truncation {
    fn default() -> Self {
        Truncation {
            nu_cut: 8,
            e_cut: 4000.0,
            quad_points: 32,
            degeneracy_tol: 1e-9,
            panel_width: 0.5,
            panel_growth: 1.25,
        }
    }
}

impl Truncation {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidTruncation(m));
        if !(self.e_cut > 0.0 && self.e_cut.is_finite()) {
            return bad(format!("e_cut must be positive, got {}", self.e_cut));
        }
        if self.quad_points < 8 {
            return bad(format!("quad_points must be >= 8, got {}", self.quad_points));
        }
        if !(self.degeneracy_tol > 0.0) {
            return bad(format!("degeneracy_tol must be positive, got {}", self.degeneracy_tol));
        }
        if !(self.panel_width > 0.0 && self.panel_width.is_finite()) {
            return bad(format!("panel_width must be positive, got {}", self.panel_width));
        }
        if !(self.panel_growth >= 1.0 && self.panel_growth.is_finite()) {
            return bad(format!("panel_growth must be >= 1, got {}", self.panel_growth));
        }
        Ok(())
    }

    /// Momentum cutoff `sqrt(2 m e_cut)`.
    pub fn p_cut(&self, mass: f64) -> f64 {
        (2.0 * mass * self.e_cut).sqrt()
    }

    /// Number of nodes used for the period average of the drive phase.
    pub fn phase_nodes(&self) -> usize {
        2 * (4 * self.nu_cut as usize + 16)
    }
}

/// Quasi-energy `E_j + ν ħω` of a channel.
pub fn quasi_energy(spec: &SystemSpec, ch: Channel) -> Result<f64> {
    let j = spec.level_index(ch.j)?;
    Ok(spec.levels[j] + ch.nu as f64 * spec.hbar * spec.omega)
}

/// `Σ_ι <φ_j'|χ_ι> V_ι <χ_ι|φ_j''>`.
pub fn coupling_base(spec: &SystemSpec, jp: usize, jpp: usize) -> Result<Complex64> {
    let a = spec.level_index(jp)?;
    let b = spec.level_index(jpp)?;
    Ok(spec
        .coupling_vectors
        .iter()
        .zip(&spec.coupling_strengths)
        .map(|(row, &v)| row[a].conj() * v * row[b])
        .sum())
}

/// Period average of `e^{-i n θ} e^{i k sin θ}` by the trapezoid rule on `nodes` points.
///
/// For integer `n` this is the Bessel value `J_n(k)`; the rule is spectrally
/// accurate because the integrand is periodic and entire.
pub fn phase_factor(k: f64, n: i32, nodes: usize) -> Complex64 {
    if k == 0.0 {
        return if n == 0 { Complex64::new(1.0, 0.0) } else { Complex64::new(0.0, 0.0) };
    }
    let h = 2.0 * PI / nodes as f64;
    let sum: Complex64 = (0..nodes)
        .map(|m| {
            let th = h * m as f64;
            Complex64::from_polar(1.0, k * th.sin() - n as f64 * th)
        })
        .sum();
    sum / nodes as f64
}

/// Argument `(c_j' − c_j'') λ / (ħω)` of the phase factor between two levels.
fn drive_argument(spec: &SystemSpec, a: usize, b: usize) -> f64 {
    (spec.drive_profile[a] - spec.drive_profile[b]) as f64 * spec.lambda_drive / (spec.hbar * spec.omega)
}

/// Floquet coupling element between two channels.
pub fn floquet_coupling(spec: &SystemSpec, trunc: &Truncation, chp: Channel, chpp: Channel) -> Result<Complex64> {
    let base = coupling_base(spec, chp.j, chpp.j)?;
    let k = drive_argument(spec, chp.j - 1, chpp.j - 1);
    Ok(phase_factor(k, chp.nu - chpp.nu, trunc.phase_nodes()) * base)
}

/// Ordered channel set `(j, ν)` with `|ν| ≤ ν_cut`, j-major, ν ascending.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelBasis {
    n_levels: usize,
    nu_cut: u32,
    channels: Vec<Channel>,
}

impl ChannelBasis {
    pub fn new(n_levels: usize, nu_cut: u32) -> Self {
        let nc = nu_cut as i32;
        let channels = (1..=n_levels)
            .flat_map(|j| (-nc..=nc).map(move |nu| Channel::new(j, nu)))
            .collect();
        ChannelBasis { n_levels, nu_cut, channels }
    }

    pub fn len(&self) -> usize {
        self.channels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.channels.is_empty()
    }

    pub fn nu_cut(&self) -> u32 {
        self.nu_cut
    }

    pub fn channels(&self) -> &[Channel] {
        &self.channels
    }

    pub fn get(&self, i: usize) -> Channel {
        self.channels[i]
    }

    pub fn contains(&self, ch: Channel) -> bool {
        ch.j >= 1 && ch.j <= self.n_levels && ch.nu.unsigned_abs() <= self.nu_cut
    }

    /// Row index of a channel.
    pub fn index(&self, ch: Channel) -> Result<usize> {
        if !self.contains(ch) {
            return Err(Error::ChannelOutsideBasis(ch));
        }
        let width = 2 * self.nu_cut as usize + 1;
        Ok((ch.j - 1) * width + (ch.nu + self.nu_cut as i32) as usize)
    }
}

/// A validated spec and truncation with the channel basis, quasi-energies and
/// full Floquet coupling matrix precomputed.
#[derive(Debug, Clone)]
pub struct FloquetModel {
    pub spec: SystemSpec,
    pub trunc: Truncation,
    basis: ChannelBasis,
    energies: Vec<f64>,
    coupling: DMatrix<Complex64>,
}

impl FloquetModel {
    pub fn new(spec: SystemSpec, trunc: Truncation) -> Result<Self> {
        spec.validate()?;
        trunc.validate()?;
        let basis = ChannelBasis::new(spec.n_levels(), trunc.nu_cut);
        let energies: Vec<f64> = basis
            .channels()
            .iter()
            .map(|&c| quasi_energy(&spec, c))
            .collect::<Result<_>>()?;
        check_nondegenerate(&basis, &energies, trunc.degeneracy_tol)?;

        let n = spec.n_levels();
        let nodes = trunc.phase_nodes();
        let span = 2 * trunc.nu_cut as i32;
        // Phase factors depend only on the level pair and ν' − ν''.
        let mut factors = vec![vec![Vec::new(); n]; n];
        for a in 0..n {
            for b in 0..n {
                let k = drive_argument(&spec, a, b);
                factors[a][b] = (-span..=span).map(|d| phase_factor(k, d, nodes)).collect::<Vec<_>>();
            }
        }
        let mut base = vec![vec![Complex64::new(0.0, 0.0); n]; n];
        for a in 0..n {
            for b in 0..n {
                base[a][b] = coupling_base(&spec, a + 1, b + 1)?;
            }
        }
        let dim = basis.len();
        let coupling = DMatrix::from_fn(dim, dim, |r, c| {
            let (x, y) = (basis.get(r), basis.get(c));
            let d = (x.nu - y.nu + span) as usize;
            factors[x.j - 1][y.j - 1][d] * base[x.j - 1][y.j - 1]
        });
        Ok(FloquetModel { spec, trunc, basis, energies, coupling })
    }

    pub fn basis(&self) -> &ChannelBasis {
        &self.basis
    }

    /// Quasi-energies in basis order.
    pub fn energies(&self) -> &[f64] {
        &self.energies
    }

    pub fn coupling(&self) -> &DMatrix<Complex64> {
        &self.coupling
    }

    pub fn n_levels(&self) -> usize {
        self.spec.n_levels()
    }

    /// Quasi-energy of the undisplaced copy of level `j`.
    pub fn level_energy(&self, j: usize) -> f64 {
        self.spec.levels[j - 1]
    }
}

fn check_nondegenerate(basis: &ChannelBasis, energies: &[f64], tol: f64) -> Result<()> {
    let mut order: Vec<usize> = (0..energies.len()).collect();
    order.sort_by(|&a, &b| energies[a].total_cmp(&energies[b]));
    for w in order.windows(2) {
        let gap = energies[w[1]] - energies[w[0]];
        if gap <= tol {
            return Err(Error::Degenerate { a: basis.get(w[0]), b: basis.get(w[1]), gap, tol });
        }
    }
    Ok(())
}
