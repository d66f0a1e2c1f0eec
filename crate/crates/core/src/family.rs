//! `δ = 1/n` families: strong-convergence errors against the finest member,
//! per-member energy pairings and the cross-member convexity defect.
//!
//! Members write their samples as checkpoints and every comparison is read
//! back from those files, so a comparison can be rerun after the fact.

use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use thiserror::Error;

use crate::dynamics::{simulate, DynamicsError, Observer, StepperConfig};
use crate::field::{GridSpec, Spectral};
use crate::flux::EnergyMonitor;
use crate::io::{read_checkpoint, write_checkpoint, CheckpointError, JsonLine};
use crate::kernels;
use crate::quadrature::simpson_uniform;
use crate::real::Real;
use crate::state::{preflow_init_on, InitialDataSpec, SimState, StateError};

pub const FAMILY_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum FamilyError {
    #[error("invalid family: {0}")]
    InvalidSpec(String),
    #[error("incompatible runs: {0}")]
    IncompatibleRuns(String),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    State(#[from] StateError),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Clone, Debug, PartialEq)]
pub struct FamilySpec {
    /// Member `n` runs with `δ = 1/n`.
    pub n_values: Vec<u64>,
    pub grid: GridSpec,
    pub stepper: StepperConfig,
    pub init: InitialDataSpec,
    pub compare_times: Vec<f64>,
    /// Steps between stored samples; every compare time must fall on one.
    pub sample_every: u64,
}

impl FamilySpec {
    pub fn validate(&self) -> Result<(), FamilyError> {
        let bad = |m: String| Err(FamilyError::InvalidSpec(m));
        if self.n_values.is_empty() || self.n_values.contains(&0) {
            return bad("n_values must be a non-empty list of positive integers".into());
        }
        // Repeated values are allowed so that a family can check determinism.
        if self.n_values.windows(2).any(|w| w[1] < w[0]) {
            return bad(format!("n_values must be increasing, got {:?}", self.n_values));
        }
        self.stepper.validate().map_err(FamilyError::InvalidSpec)?;
        self.init.validate()?;
        if self.sample_every == 0 {
            return bad("sample_every must be >= 1".into());
        }
        if self.compare_times.is_empty() {
            return bad("compare_times is empty".into());
        }
        if self.compare_times.windows(2).any(|w| w[1] <= w[0]) || self.compare_times[0] < 0.0 {
            return bad(format!("compare_times must be increasing and >= 0, got {:?}", self.compare_times));
        }
        let h = self.sample_dt();
        for &t in &self.compare_times {
            let k = (t / h).round();
            if !t.is_finite() || (k * h - t).abs() > 1e-9 * h.max(t) {
                return bad(format!("compare time {t} is not a multiple of the sample spacing {h}"));
            }
        }
        Ok(())
    }

    pub fn sample_dt(&self) -> f64 {
        self.stepper.dt * self.sample_every as f64
    }

    pub fn horizon(&self) -> f64 {
        self.compare_times.last().copied().unwrap_or(0.0)
    }

    fn sample_index(&self, t: f64) -> usize {
        (t / self.sample_dt()).round() as usize
    }
}

/// Samples of one run on disk, `sample_000000.vd2d` onwards at spacing
/// `sample_dt` from `t = 0`.
#[derive(Clone, Debug, PartialEq)]
pub struct StoredRun {
    pub dir: PathBuf,
    pub grid: GridSpec,
    pub sample_dt: f64,
    pub samples: usize,
}

impl StoredRun {
    pub fn sample_path(&self, k: usize) -> PathBuf {
        sample_path(&self.dir, k)
    }

    pub fn load<T: Real>(&self, sp: &Arc<Spectral<T>>, k: usize) -> Result<SimState<T>, FamilyError> {
        if k >= self.samples {
            return Err(FamilyError::IncompatibleRuns(format!(
                "sample {k} requested from a run with {} samples",
                self.samples
            )));
        }
        Ok(read_checkpoint(&self.sample_path(k))?.to_state_on(sp)?)
    }
}

fn sample_path(dir: &Path, k: usize) -> PathBuf {
    dir.join(format!("sample_{k:06}.vd2d"))
}

#[derive(Clone, Debug, PartialEq)]
pub enum MemberStatus {
    Completed,
    Failed(String),
}

/// Both sides of the two energy pairings for one member over `[0, T]`, with
/// `P = ∫∇u:(FF^T - I)`. Residuals are relative to `E(0)`.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct PairingBookkeeping {
    /// `∫₀ᵀ P dt`.
    pub pairing_integral: f64,
    /// `(∫P + ½‖u(T)‖² - ½‖u0‖² + ∫(μ‖∇u‖² + δ‖Δu‖²)) / E(0)`.
    pub momentum_residual: f64,
    /// `(½‖F(T) - I‖² - ½‖F0 - I‖² - ∫P) / E(0)`.
    pub transport_residual: f64,
    /// Energy-balance residual of the same run.
    pub energy_residual: f64,
    /// `|momentum + transport - energy|`; the pairings add up to the energy
    /// law, so this only measures quadrature consistency.
    pub energy_mismatch: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MemberSummary {
    pub index: usize,
    pub n: u64,
    pub delta: f64,
    pub status: MemberStatus,
    pub run: StoredRun,
    pub bookkeeping: Option<PairingBookkeeping>,
}

/// Errors of one member against the reference at one compare time.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Comparison {
    pub t: f64,
    pub index: usize,
    pub n: u64,
    /// `‖Fⁿ - F^ref‖_{L²}`.
    pub e_f: f64,
    /// `‖uⁿ - u^ref‖_{L²}`.
    pub e_u: f64,
    /// `∫₀ᵗ∫ ∇u^ref : (Fⁿ(Fⁿ)^T - F^ref(F^ref)^T)`.
    pub defect: f64,
}

/// Ordering checks at one compare time over the surviving members below
/// the reference.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OrderingCheck {
    pub t: f64,
    /// `eⁿ_F` strictly decreasing in `n`, with 5% slack on the last gap.
    pub f_decreasing: bool,
    pub u_decreasing: bool,
    /// `|D(n)|` strictly decreasing in `n`, same slack.
    pub defect_decreasing: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FamilyReport {
    pub members: Vec<MemberSummary>,
    /// Index of the reference member, the largest surviving `n`.
    pub reference: Option<usize>,
    pub comparisons: Vec<Comparison>,
    pub checks: Vec<OrderingCheck>,
    pub warnings: Vec<String>,
}

/// Records `P(t)` at every observation.
struct PairingSeries {
    p: Vec<f64>,
}

impl<T: Real> Observer<T> for PairingSeries {
    fn observe(&mut self, s: &SimState<T>, _step: u64) -> io::Result<()> {
        self.p.push(stress_pairing(s, &stress_of(s)));
        Ok(())
    }
}

/// `∫∇u:S` for the velocity of `s` and symmetric `S = [S11, S12, S22]`,
/// by grid quadrature. The product is band-limited below the grid Nyquist
/// under the two-thirds rule, so the sum is the exact integral.
fn stress_pairing<T: Real>(s: &SimState<T>, stress: &[Vec<T>; 3]) -> f64 {
    let sp = s.spectral();
    let spec = s.spectra();
    let g = kernels::grad_values(sp, &[spec[0].to_vec(), spec[1].to_vec()]);
    let mut acc = 0.0;
    for p in 0..sp.len() {
        let f = |v: &Vec<T>| v[p].to_f64_lossy();
        acc += f(&g[0]) * f(&stress[0]) + (f(&g[1]) + f(&g[2])) * f(&stress[1]) + f(&g[3]) * f(&stress[2]);
    }
    acc * sp.cell_area().to_f64_lossy()
}

fn stress_of<T: Real>(s: &SimState<T>) -> [Vec<T>; 3] {
    let pv = s.perturbation_values();
    let e: [Vec<T>; 4] = std::array::from_fn(|c| pv[c + 2].clone());
    kernels::stress_values(&e)
}

fn rel(num: f64, den: f64) -> f64 {
    if den > 0.0 {
        num / den
    } else {
        num
    }
}

fn half_norms<T: Real>(s: &SimState<T>) -> (f64, f64) {
    (0.5 * s.u.l2_norm_sq().to_f64_lossy(), 0.5 * s.perturbation().l2_norm_sq().to_f64_lossy())
}

/// Run one member and store its samples under `dir`.
pub fn run_member<T: Real>(
    spec: &FamilySpec,
    index: usize,
    dir: &Path,
) -> Result<MemberSummary, FamilyError> {
    let n = spec.n_values[index];
    let delta = 1.0 / n as f64;
    std::fs::create_dir_all(dir)?;
    let run = StoredRun { dir: dir.to_path_buf(), grid: spec.grid, sample_dt: spec.sample_dt(), samples: 0 };
    let sp = Spectral::<T>::new(spec.grid);
    let s0 = preflow_init_on(&spec.init, &sp)?.with_delta(delta);

    let mut energy = EnergyMonitor::new(spec.stepper.mu);
    let mut pairing = PairingSeries { p: Vec::new() };
    let mut stored = 0usize;
    let every = spec.sample_every;
    let mut store = |s: &SimState<T>, step: u64| -> io::Result<()> {
        if step % every == 0 {
            let path = sample_path(dir, stored);
            write_checkpoint(&path, s)?;
            stored += 1;
        }
        Ok(())
    };
    let result = simulate(&s0, spec.horizon(), &spec.stepper, 1, &mut [&mut energy, &mut pairing, &mut store]);
    let run = StoredRun { samples: stored, ..run };
    let (status, bookkeeping) = match result {
        Ok(last) => {
            let (u0, e0) = half_norms(&s0);
            let (u1, e1) = half_norms(&last);
            let dt = spec.stepper.dt;
            let ip = simpson_uniform(dt, &pairing.p);
            let id = simpson_uniform(dt, &energy.dissipation);
            let total0 = u0 + e0;
            let momentum_residual = rel(ip + u1 - u0 + id, total0);
            let transport_residual = rel(e1 - e0 - ip, total0);
            let energy_residual = energy.balance_residual();
            let b = PairingBookkeeping {
                pairing_integral: ip,
                momentum_residual,
                transport_residual,
                energy_residual,
                energy_mismatch: (momentum_residual + transport_residual - energy_residual).abs(),
            };
            (MemberStatus::Completed, Some(b))
        }
        Err(DynamicsError::Sink(e)) => return Err(FamilyError::Io(e)),
        Err(e) => {
            log::warn!("family member n = {n} failed: {e}");
            (MemberStatus::Failed(e.to_string()), None)
        }
    };
    Ok(MemberSummary { index, n, delta, status, run, bookkeeping })
}

/// `D = ∫₀ᵗ∫ ∇u^ref : (FF^T - F^ref(F^ref)^T)` from the stored samples,
/// composite Simpson in time.
pub fn convexity_defect<T: Real>(member: &StoredRun, reference: &StoredRun, t: f64) -> Result<f64, FamilyError> {
    if member.grid != reference.grid {
        return Err(FamilyError::IncompatibleRuns(format!("grids {:?} and {:?}", member.grid, reference.grid)));
    }
    if member.sample_dt.to_bits() != reference.sample_dt.to_bits() {
        return Err(FamilyError::IncompatibleRuns(format!(
            "sample spacings {} and {} differ",
            member.sample_dt, reference.sample_dt
        )));
    }
    let h = member.sample_dt;
    let k = (t / h).round() as usize;
    if (k as f64 * h - t).abs() > 1e-9 * h.max(t) || k >= member.samples.min(reference.samples) {
        return Err(FamilyError::IncompatibleRuns(format!("no common sample at t = {t}")));
    }
    let sp = Spectral::<T>::new(member.grid);
    let mut density = Vec::with_capacity(k + 1);
    for j in 0..=k {
        let a = member.load(&sp, j)?;
        let r = reference.load(&sp, j)?;
        let (sa, sr) = (stress_of(&a), stress_of(&r));
        let diff: [Vec<T>; 3] = std::array::from_fn(|c| sa[c].iter().zip(&sr[c]).map(|(&x, &y)| x - y).collect());
        density.push(stress_pairing(&r, &diff));
    }
    Ok(simpson_uniform(h, &density))
}

/// Strictly decreasing, except that the last step may grow by 5%.
fn decreasing_with_slack(xs: &[f64]) -> bool {
    let m = xs.len();
    xs.windows(2).enumerate().all(|(i, w)| if i + 2 == m { w[1] <= 1.05 * w[0] } else { w[1] < w[0] })
}

/// Run all members (in parallel on the current rayon pool) under `dir`,
/// then compare them from their checkpoints.
pub fn run_family<T: Real>(spec: &FamilySpec, dir: &Path) -> Result<FamilyReport, FamilyError> {
    spec.validate()?;
    let members: Vec<MemberSummary> = (0..spec.n_values.len())
        .into_par_iter()
        .map(|i| run_member::<T>(spec, i, &dir.join(format!("member{i:02}_n{}", spec.n_values[i]))))
        .collect::<Result<_, _>>()?;
    compare_members::<T>(spec, members)
}

/// The comparison stage of [`run_family`] over already-run members.
pub fn compare_members<T: Real>(spec: &FamilySpec, members: Vec<MemberSummary>) -> Result<FamilyReport, FamilyError> {
    let mut warnings = Vec::new();
    if spec.n_values.len() < 2 {
        warnings.push("family has a single member; nothing to compare".to_string());
    }
    let survivors: Vec<&MemberSummary> = members.iter().filter(|m| m.status == MemberStatus::Completed).collect();
    for m in members.iter().filter(|m| m.status != MemberStatus::Completed) {
        warnings.push(format!("member n = {} failed and is excluded", m.n));
    }
    let reference = survivors.last().map(|m| m.index);
    let mut comparisons = Vec::new();
    let mut checks = Vec::new();
    if let (Some(r), true) = (reference, survivors.len() >= 2) {
        let refm = &members[r];
        let sp = Spectral::<T>::new(spec.grid);
        for &t in &spec.compare_times {
            let k = spec.sample_index(t);
            let sr = refm.run.load(&sp, k)?;
            let (er, ur) = (sr.perturbation(), sr.u.clone());
            let mut here = Vec::new();
            for m in survivors.iter().filter(|m| m.index != r) {
                let sm = m.run.load(&sp, k)?;
                let e_f = sm.perturbation().sub(&er).l2_norm_sq().to_f64_lossy().sqrt();
                let e_u = sm.u.sub(&ur).l2_norm_sq().to_f64_lossy().sqrt();
                let defect = convexity_defect::<T>(&m.run, &refm.run, t)?;
                here.push(Comparison { t, index: m.index, n: m.n, e_f, e_u, defect });
            }
            // Members sharing the reference n are determinism checks, not
            // part of the ordering.
            let below: Vec<&Comparison> = here.iter().filter(|c| c.n < refm.n).collect();
            let col = |f: fn(&Comparison) -> f64| below.iter().map(|c| f(c)).collect::<Vec<f64>>();
            checks.push(OrderingCheck {
                t,
                f_decreasing: decreasing_with_slack(&col(|c| c.e_f)),
                u_decreasing: decreasing_with_slack(&col(|c| c.e_u)),
                defect_decreasing: decreasing_with_slack(&col(|c| c.defect.abs())),
            });
            comparisons.extend(here);
        }
    }
    for w in &warnings {
        log::warn!("{w}");
    }
    Ok(FamilyReport { members, reference, comparisons, checks, warnings })
}

impl FamilyReport {
    /// NDJSON: member summaries, then comparisons, then ordering checks and
    /// warnings. Each line carries `kind` and `schema`.
    pub fn write_ndjson(&self, out: &mut impl Write) -> io::Result<()> {
        let schema = FAMILY_SCHEMA_VERSION as i64;
        for m in &self.members {
            let mut j = JsonLine::new()
                .str("kind", "member")
                .int("index", m.index as i64)
                .int("n", m.n as i64)
                .num("delta", m.delta)
                .boolean("reference", Some(m.index) == self.reference);
            j = match &m.status {
                MemberStatus::Completed => j.str("status", "completed").null("error"),
                MemberStatus::Failed(e) => j.str("status", "failed").str("error", e),
            };
            let b = m.bookkeeping;
            j = j
                .opt("pairing_integral", b.map(|b| b.pairing_integral))
                .opt("momentum_residual", b.map(|b| b.momentum_residual))
                .opt("transport_residual", b.map(|b| b.transport_residual))
                .opt("energy_residual", b.map(|b| b.energy_residual))
                .opt("energy_mismatch", b.map(|b| b.energy_mismatch));
            writeln!(out, "{}", j.int("schema", schema).finish())?;
        }
        for c in &self.comparisons {
            let j = JsonLine::new()
                .str("kind", "comparison")
                .num("t", c.t)
                .int("index", c.index as i64)
                .int("n", c.n as i64)
                .num("e_f", c.e_f)
                .num("e_u", c.e_u)
                .num("defect", c.defect)
                .int("schema", schema);
            writeln!(out, "{}", j.finish())?;
        }
        for c in &self.checks {
            let j = JsonLine::new()
                .str("kind", "ordering")
                .num("t", c.t)
                .boolean("f_decreasing", c.f_decreasing)
                .boolean("u_decreasing", c.u_decreasing)
                .boolean("defect_decreasing", c.defect_decreasing)
                .int("schema", schema);
            writeln!(out, "{}", j.finish())?;
        }
        for w in &self.warnings {
            writeln!(out, "{}", JsonLine::new().str("kind", "warning").str("message", w).int("schema", schema).finish())?;
        }
        out.flush()
    }
}
