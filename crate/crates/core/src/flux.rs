//! Effective viscous flux, the A/B functionals and the estimate checks.
//!
//! Every quantity here is a pure function of one or more snapshots. Norms
//! are L² over the torus unless a name says otherwise, and everything
//! reported is `f64` regardless of the solver precision.

use std::io;
use std::sync::Arc;

use thiserror::Error;

use crate::dynamics::Observer;
use crate::field::ops::Componentwise;
use crate::field::{
    curl_curl_rows, divergence, inverse_laplacian, leray_complement, leray_project, matrix_divergence, resample,
    vector_gradient, vector_laplacian, Dealias, GridSpec, MatrixField, ScalarField, Spectral, VectorField,
};
use crate::quadrature::trapezoid;
use crate::real::Real;
use crate::state::{constraint_residuals, epsilon0, ConstraintResiduals, SimState};

#[derive(Debug, Error)]
pub enum FluxError {
    #[error("incomplete history: {0}")]
    IncompleteHistory(String),
    #[error("test function is not divergence-free (|div psi|_inf = {div_linf:e})")]
    InvalidTestFunction { div_linf: f64 },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

/// `σ(t) = min{1, t}`.
pub fn sigma(t: f64) -> f64 {
    t.clamp(0.0, 1.0)
}

fn nsq<F: Componentwise<T>, T: Real>(f: &F) -> f64 {
    f.components().iter().map(|c| c.l2_norm_sq().to_f64_lossy()).sum()
}

/// `a / b` with the convention that a vanishing denominator returns `a`.
fn relative(num: f64, den: f64) -> f64 {
    if den > 0.0 {
        num / den
    } else {
        num
    }
}

/// Dealiased `E E^T` from pointwise products.
fn eet<T: Real>(e: &MatrixField<T>) -> MatrixField<T> {
    e.sync_values();
    let sp = e.spectral();
    let v = |i: usize, j: usize| e.c[i][j].values();
    let prod = |i: usize, j: usize| -> ScalarField<T> {
        let vals = (0..sp.len()).map(|p| v(i, 0)[p] * v(j, 0)[p] + v(i, 1)[p] * v(j, 1)[p]).collect();
        crate::field::dealias(&ScalarField::from_values(sp, vals))
    };
    let off = prod(0, 1);
    MatrixField::new([[prod(0, 0), off.clone()], [off, prod(1, 1)]])
}

/// Dealiased `u·∇u`.
fn advection<T: Real>(u: &VectorField<T>) -> VectorField<T> {
    let g = vector_gradient(u);
    g.sync_values();
    u.sync_values();
    let sp = u.spectral();
    let comp = |i: usize| -> ScalarField<T> {
        let vals = (0..sp.len())
            .map(|p| u.c[0].values()[p] * g.c[i][0].values()[p] + u.c[1].values()[p] * g.c[i][1].values()[p])
            .collect();
        crate::field::dealias(&ScalarField::from_values(sp, vals))
    };
    VectorField::new(comp(0), comp(1))
}

struct Pieces<T: Real> {
    e: MatrixField<T>,
    pdiv: VectorField<T>,
    bilap_u: VectorField<T>,
    pudot: VectorField<T>,
    udot: VectorField<T>,
}

fn pieces<T: Real>(s: &SimState<T>, mu: f64) -> Pieces<T> {
    let e = s.perturbation();
    let stress = e.add(&e.transpose()).add(&eet(&e));
    let pdiv = leray_project(&matrix_divergence(&stress));
    let lap = vector_laplacian(&s.u);
    let bilap_u = vector_laplacian(&lap);
    let pudot = lap.scale(T::lit(mu)).sub(&bilap_u.scale(T::lit(s.delta))).add(&pdiv);
    let udot = pudot.add(&leray_complement(&advection(&s.u)));
    Pieces { e, pdiv, bilap_u, pudot, udot }
}

/// `𝒫u̇ = μΔu - δΔ²u + 𝒫 div(FF^T - I)` and `u̇ = 𝒫u̇ + 𝒬(u·∇u)`, read off the
/// momentum equation (no time differencing).
pub fn material_derivative<T: Real>(s: &SimState<T>, mu: f64) -> (VectorField<T>, VectorField<T>) {
    let p = pieces(s, mu);
    (p.pudot, p.udot)
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct FluxResiduals {
    /// `‖Δ𝒢 - ∇𝒫u̇ - δ∇Δ²u‖ / ‖∇𝒫u̇‖`.
    pub flux_identity: f64,
    /// `‖𝒬 div(F - I)‖ / ‖div(F - I)‖`.
    pub projected_div: f64,
    /// `‖Δ𝔊 - Δ𝒢 + ∇𝒫div(EE^T) + curl_curl E‖ / ‖Δ𝔊‖` with `E = F - I`.
    pub variant_assembly: f64,
}

#[derive(Clone, Debug)]
pub struct FluxFields<T: Real> {
    /// `𝒢 = μ∇u - (-Δ)⁻¹∇𝒫div(FF^T - I)`.
    pub g: MatrixField<T>,
    /// `𝔊 = μ∇u + F - I`.
    pub gf: MatrixField<T>,
    pub pudot: VectorField<T>,
    pub udot: VectorField<T>,
    pub residuals: FluxResiduals,
    /// `‖∇𝒫u̇‖²`, kept because several checks normalize by it.
    pub grad_pudot_sq: f64,
    /// `‖δ∇Δ²u‖²`.
    pub delta_term_sq: f64,
    e: MatrixField<T>,
}

pub fn effective_flux<T: Real>(s: &SimState<T>, mu: f64) -> FluxFields<T> {
    let p = pieces(s, mu);
    let gu = vector_gradient(&s.u).scale(T::lit(mu));
    let g = gu.sub(&inverse_laplacian(&vector_gradient(&p.pdiv)));
    let gf = gu.add(&p.e);

    let grad_pudot = vector_gradient(&p.pudot);
    let delta_term = vector_gradient(&p.bilap_u).scale(T::lit(s.delta));
    let lap_g = vector_laplacian(&g);
    let grad_pudot_sq = nsq(&grad_pudot);
    let flux_identity = relative(nsq(&lap_g.sub(&grad_pudot).sub(&delta_term)).sqrt(), grad_pudot_sq.sqrt());

    let div_e = matrix_divergence(&p.e);
    let projected_div = relative(nsq(&leray_complement(&div_e)).sqrt(), nsq(&div_e).sqrt());

    let lap_gf = vector_laplacian(&gf);
    let assembled = lap_g
        .sub(&vector_gradient(&leray_project(&matrix_divergence(&eet(&p.e)))))
        .sub(&curl_curl_rows(&p.e));
    let variant_assembly = relative(nsq(&lap_gf.sub(&assembled)).sqrt(), nsq(&lap_gf).sqrt());

    if flux_identity > 1e-10 {
        log::warn!("effective flux identity residual {flux_identity:e} at t = {}", s.t);
    }
    FluxFields {
        g,
        gf,
        pudot: p.pudot,
        udot: p.udot,
        residuals: FluxResiduals { flux_identity, projected_div, variant_assembly },
        grad_pudot_sq,
        delta_term_sq: nsq(&delta_term),
        e: p.e,
    }
}

/// Measured ratios for the H¹-type bounds on `𝔊`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct H1BoundReport {
    /// `‖Δ𝔊‖² + ‖curl_curl(F - I)‖² + ‖∇𝒫div(EE^T)‖²`.
    pub lhs: f64,
    /// `‖∇𝒫u̇‖²`.
    pub rhs: f64,
    /// `lhs / rhs`, `None` when both sides vanish.
    pub ratio: Option<f64>,
    /// `‖∇𝔊‖² / ‖𝒫u̇‖²`.
    pub grad_ratio_squared: Option<f64>,
    /// `‖∇𝔊‖ / ‖𝒫u̇‖²`, the literal pairing.
    pub grad_ratio_literal: Option<f64>,
    /// `‖δ∇Δ²u‖ / ‖∇𝒫u̇‖`: size of the regularization correction.
    pub delta_correction: f64,
    pub both_zero: bool,
}

fn guarded(num: f64, den: f64) -> Option<f64> {
    if den > 0.0 {
        Some(num / den)
    } else if num == 0.0 {
        None
    } else {
        Some(f64::INFINITY)
    }
}

pub fn flux_h1_bound_check<T: Real>(s: &SimState<T>, mu: f64) -> H1BoundReport {
    let ff = effective_flux(s, mu);
    let lap_gf = nsq(&vector_laplacian(&ff.gf));
    let cc = nsq(&curl_curl_rows(&ff.e));
    let pd = nsq(&vector_gradient(&leray_project(&matrix_divergence(&eet(&ff.e)))));
    let lhs = lap_gf + cc + pd;
    let rhs = ff.grad_pudot_sq;
    let grad_gf = nsq(&crate::field::ops::matrix_gradient(&ff.gf)[0]) + nsq(&crate::field::ops::matrix_gradient(&ff.gf)[1]);
    let pudot = nsq(&ff.pudot);
    H1BoundReport {
        lhs,
        rhs,
        ratio: guarded(lhs, rhs),
        grad_ratio_squared: guarded(grad_gf, pudot),
        grad_ratio_literal: guarded(grad_gf.sqrt(), pudot),
        delta_correction: relative(ff.delta_term_sq.sqrt(), rhs.sqrt()),
        both_zero: lhs == 0.0 && rhs == 0.0,
    }
}

/// One row of the diagnostic time series. Squared L² norms carry a `_sq`
/// suffix.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct DiagnosticsRecord {
    pub t: f64,
    pub step: u64,
    pub u_sq: f64,
    pub e_sq: f64,
    pub grad_u_sq: f64,
    pub delta_lap_u_sq: f64,
    pub energy: f64,
    pub dissipation: f64,
    pub sigma: f64,
    pub pudot_sq: f64,
    pub udot_sq: f64,
    pub grad_pudot_sq: f64,
    pub sigma_grad_u_sq: f64,
    pub sigma2_pudot_sq: f64,
    pub sigma_udot_sq: f64,
    pub sigma2_grad_pudot_sq: f64,
    /// `‖F - I‖²∞` (Frobenius, pointwise).
    pub e_linf_sq: f64,
    /// Running maximum of `e_linf_sq`, i.e. `B(t)`.
    pub b_running: f64,
    pub constraints: ConstraintResiduals,
    /// `∫|u|⁴`.
    pub u_l4_4: f64,
    /// `∫|u|²|∇u|²`.
    pub u2_grad_u2: f64,
    pub holder_measured: Option<f64>,
    pub holder_bound: Option<f64>,
    pub g_l2: f64,
    pub grad_g_l2: f64,
    pub gf_l2: f64,
    pub grad_gf_l2: f64,
    pub lap_gf_l2: f64,
    pub flux: FluxResiduals,
}

/// Column names of [`DiagnosticsRecord::row`], fixed for the NDJSON and CSV
/// emitters. Bump [`DIAGNOSTICS_SCHEMA_VERSION`] when this changes.
pub const DIAGNOSTICS_COLUMNS: [&str; 35] = [
    "t",
    "step",
    "u_sq",
    "e_sq",
    "grad_u_sq",
    "delta_lap_u_sq",
    "energy",
    "dissipation",
    "sigma",
    "pudot_sq",
    "udot_sq",
    "grad_pudot_sq",
    "sigma_grad_u_sq",
    "sigma2_pudot_sq",
    "sigma_udot_sq",
    "sigma2_grad_pudot_sq",
    "e_linf_sq",
    "b_running",
    "div_u_inf",
    "div_ft_inf",
    "det_drift_inf",
    "compat_inf",
    "u_l4_4",
    "u2_grad_u2",
    "holder_measured",
    "holder_bound",
    "g_l2",
    "grad_g_l2",
    "gf_l2",
    "grad_gf_l2",
    "lap_gf_l2",
    "flux_identity_residual",
    "projected_div_residual",
    "variant_assembly_residual",
    "schema",
];

pub const DIAGNOSTICS_SCHEMA_VERSION: u32 = 1;

impl DiagnosticsRecord {
    /// Values in [`DIAGNOSTICS_COLUMNS`] order; `None` marks an absent
    /// optional field.
    pub fn row(&self) -> Vec<Option<f64>> {
        let c = &self.constraints;
        vec![
            Some(self.t),
            Some(self.step as f64),
            Some(self.u_sq),
            Some(self.e_sq),
            Some(self.grad_u_sq),
            Some(self.delta_lap_u_sq),
            Some(self.energy),
            Some(self.dissipation),
            Some(self.sigma),
            Some(self.pudot_sq),
            Some(self.udot_sq),
            Some(self.grad_pudot_sq),
            Some(self.sigma_grad_u_sq),
            Some(self.sigma2_pudot_sq),
            Some(self.sigma_udot_sq),
            Some(self.sigma2_grad_pudot_sq),
            Some(self.e_linf_sq),
            Some(self.b_running),
            Some(c.div_u_inf),
            Some(c.div_ft_inf),
            Some(c.det_drift_inf),
            Some(c.compat_inf),
            Some(self.u_l4_4),
            Some(self.u2_grad_u2),
            self.holder_measured,
            self.holder_bound,
            Some(self.g_l2),
            Some(self.grad_g_l2),
            Some(self.gf_l2),
            Some(self.grad_gf_l2),
            Some(self.lap_gf_l2),
            Some(self.flux.flux_identity),
            Some(self.flux.projected_div),
            Some(self.flux.variant_assembly),
            Some(DIAGNOSTICS_SCHEMA_VERSION as f64),
        ]
    }

    /// Inverse of [`row`](Self::row).
    pub fn from_row(row: &[Option<f64>]) -> Result<Self, String> {
        if row.len() != DIAGNOSTICS_COLUMNS.len() {
            return Err(format!("expected {} columns, got {}", DIAGNOSTICS_COLUMNS.len(), row.len()));
        }
        let req = |i: usize| row[i].ok_or_else(|| format!("missing {}", DIAGNOSTICS_COLUMNS[i]));
        Ok(DiagnosticsRecord {
            t: req(0)?,
            step: req(1)? as u64,
            u_sq: req(2)?,
            e_sq: req(3)?,
            grad_u_sq: req(4)?,
            delta_lap_u_sq: req(5)?,
            energy: req(6)?,
            dissipation: req(7)?,
            sigma: req(8)?,
            pudot_sq: req(9)?,
            udot_sq: req(10)?,
            grad_pudot_sq: req(11)?,
            sigma_grad_u_sq: req(12)?,
            sigma2_pudot_sq: req(13)?,
            sigma_udot_sq: req(14)?,
            sigma2_grad_pudot_sq: req(15)?,
            e_linf_sq: req(16)?,
            b_running: req(17)?,
            constraints: ConstraintResiduals {
                div_u_inf: req(18)?,
                div_ft_inf: req(19)?,
                det_drift_inf: req(20)?,
                compat_inf: req(21)?,
            },
            u_l4_4: req(22)?,
            u2_grad_u2: req(23)?,
            holder_measured: row[24],
            holder_bound: row[25],
            g_l2: req(26)?,
            grad_g_l2: req(27)?,
            gf_l2: req(28)?,
            grad_gf_l2: req(29)?,
            lap_gf_l2: req(30)?,
            flux: FluxResiduals {
                flux_identity: req(31)?,
                projected_div: req(32)?,
                variant_assembly: req(33)?,
            },
        })
    }

    /// Integrand of the supremum part of `A`.
    pub fn a_sup_integrand(&self) -> f64 {
        self.u_sq + self.e_sq + self.sigma_grad_u_sq + self.sigma2_pudot_sq
    }

    /// Integrand of the time-integral part of `A`.
    pub fn a_time_integrand(&self) -> f64 {
        self.grad_u_sq + self.sigma_udot_sq + self.sigma2_grad_pudot_sq
    }

    /// Every reported quantity is finite (absent optionals excepted).
    pub fn is_finite(&self) -> bool {
        self.row().iter().flatten().all(|x| x.is_finite())
    }
}

/// Hölder-seminorm settings for [`DiagnosticsBuilder`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HolderSettings {
    pub alpha: f64,
    pub lattice: usize,
}

/// Builds [`DiagnosticsRecord`]s; carries the running `B` and `ε0` between
/// calls, so feed it states in time order.
#[derive(Clone, Debug)]
pub struct DiagnosticsBuilder {
    pub mu: f64,
    pub holder: Option<HolderSettings>,
    eps0: Option<f64>,
    b_running: f64,
}

impl DiagnosticsBuilder {
    pub fn new(mu: f64, holder: Option<HolderSettings>) -> Self {
        DiagnosticsBuilder { mu, holder, eps0: None, b_running: 0.0 }
    }

    /// `ε0` of the first state seen, if any.
    pub fn eps0(&self) -> Option<f64> {
        self.eps0
    }

    pub fn record<T: Real>(&mut self, s: &SimState<T>, step: u64) -> DiagnosticsRecord {
        let eps0 = *self.eps0.get_or_insert_with(|| epsilon0(s));
        let ff = effective_flux(s, self.mu);
        let sg = sigma(s.t);
        let u_sq = nsq(&s.u);
        let e_sq = nsq(&ff.e);
        let grad_u = vector_gradient(&s.u);
        let grad_u_sq = nsq(&grad_u);
        let delta_lap_u_sq = s.delta * nsq(&vector_laplacian(&s.u));
        let pudot_sq = nsq(&ff.pudot);
        let udot_sq = nsq(&ff.udot);
        let grad_pudot_sq = ff.grad_pudot_sq;

        let e_linf = ff.e.linf_frobenius().to_f64_lossy();
        let e_linf_sq = e_linf * e_linf;
        self.b_running = if e_linf_sq.is_nan() { f64::NAN } else { self.b_running.max(e_linf_sq) };

        let (u_l4_4, u2_grad_u2) = l4_pieces(&s.u, &grad_u);
        let (holder_measured, holder_bound) = match self.holder {
            Some(h) => match holder_bound_check(s, h.alpha, h.lattice, eps0, self.b_running, self.mu) {
                Ok(r) => (Some(r.measured), Some(r.bound)),
                Err(e) => {
                    log::warn!("skipping Hölder check: {e}");
                    (None, None)
                }
            },
            None => (None, None),
        };
        let mg = crate::field::ops::matrix_gradient(&ff.g);
        let mgf = crate::field::ops::matrix_gradient(&ff.gf);
        DiagnosticsRecord {
            t: s.t,
            step,
            u_sq,
            e_sq,
            grad_u_sq,
            delta_lap_u_sq,
            energy: 0.5 * (u_sq + e_sq),
            dissipation: self.mu * grad_u_sq + delta_lap_u_sq,
            sigma: sg,
            pudot_sq,
            udot_sq,
            grad_pudot_sq,
            sigma_grad_u_sq: sg * grad_u_sq,
            sigma2_pudot_sq: sg * sg * pudot_sq,
            sigma_udot_sq: sg * udot_sq,
            sigma2_grad_pudot_sq: sg * sg * grad_pudot_sq,
            e_linf_sq,
            b_running: self.b_running,
            constraints: constraint_residuals(s),
            u_l4_4,
            u2_grad_u2,
            holder_measured,
            holder_bound,
            g_l2: nsq(&ff.g).sqrt(),
            grad_g_l2: (nsq(&mg[0]) + nsq(&mg[1])).sqrt(),
            gf_l2: nsq(&ff.gf).sqrt(),
            grad_gf_l2: (nsq(&mgf[0]) + nsq(&mgf[1])).sqrt(),
            lap_gf_l2: nsq(&vector_laplacian(&ff.gf)).sqrt(),
            flux: ff.residuals,
        }
    }
}

/// `(∫|u|⁴, ∫|u|²|∇u|²)` by grid quadrature.
fn l4_pieces<T: Real>(u: &VectorField<T>, grad_u: &MatrixField<T>) -> (f64, f64) {
    u.sync_values();
    grad_u.sync_values();
    let area = u.spectral().cell_area().to_f64_lossy();
    let (mut a, mut b) = (0.0, 0.0);
    for p in 0..u.spectral().len() {
        let u2: f64 = u.c.iter().map(|c| c.values()[p].to_f64_lossy().powi(2)).sum();
        let g2: f64 = grad_u.c.iter().flatten().map(|c| c.values()[p].to_f64_lossy().powi(2)).sum();
        a += u2 * u2;
        b += u2 * g2;
    }
    (a * area, b * area)
}

/// Destination for diagnostics rows.
pub trait RecordSink {
    fn write(&mut self, r: &DiagnosticsRecord) -> io::Result<()>;
    fn flush(&mut self) -> io::Result<()> {
        Ok(())
    }
}

/// [`Observer`] that builds a record per observation, keeps it and forwards
/// it to an optional sink.
pub struct DiagnosticsRecorder<'a> {
    pub builder: DiagnosticsBuilder,
    pub records: Vec<DiagnosticsRecord>,
    sink: Option<&'a mut dyn RecordSink>,
}

impl<'a> DiagnosticsRecorder<'a> {
    pub fn new(builder: DiagnosticsBuilder) -> Self {
        DiagnosticsRecorder { builder, records: Vec::new(), sink: None }
    }

    pub fn with_sink(builder: DiagnosticsBuilder, sink: &'a mut dyn RecordSink) -> Self {
        DiagnosticsRecorder { builder, records: Vec::new(), sink: Some(sink) }
    }
}

impl<T: Real> Observer<T> for DiagnosticsRecorder<'_> {
    fn observe(&mut self, s: &SimState<T>, step: u64) -> io::Result<()> {
        let r = self.builder.record(s, step);
        if let Some(sink) = self.sink.as_mut() {
            sink.write(&r)?;
            sink.flush()?;
        }
        self.records.push(r);
        Ok(())
    }
}

/// Cheap per-step energy bookkeeping from spectral norms only:
/// `E = ½(‖u‖² + ‖F - I‖²)` and `D = μ‖∇u‖² + δ‖Δu‖²`.
#[derive(Clone, Debug, Default)]
pub struct EnergyMonitor {
    pub mu: f64,
    pub t: Vec<f64>,
    pub energy: Vec<f64>,
    pub dissipation: Vec<f64>,
}

impl EnergyMonitor {
    pub fn new(mu: f64) -> Self {
        EnergyMonitor { mu, ..Default::default() }
    }

    /// `(E(T) + ∫D - E(0)) / E(0)`, composite Simpson in time; needs uniform
    /// samples.
    pub fn balance_residual(&self) -> f64 {
        let (Some(&e0), Some(&e1)) = (self.energy.first(), self.energy.last()) else {
            return 0.0;
        };
        let h = if self.t.len() > 1 { self.t[1] - self.t[0] } else { 0.0 };
        let diss = crate::quadrature::simpson_uniform(h, &self.dissipation);
        relative(e1 + diss - e0, e0)
    }
}

impl<T: Real> Observer<T> for EnergyMonitor {
    fn observe(&mut self, s: &SimState<T>, _step: u64) -> io::Result<()> {
        let sp = s.spectral();
        let pf = sp.parseval_factor().to_f64_lossy();
        let spec = s.u_spectra();
        let (mut u2, mut g2, mut l2) = (0.0, 0.0, 0.0);
        for c in &spec {
            for (i, z) in c.iter().enumerate() {
                let a = z.norm_sqr().to_f64_lossy();
                let k2 = sp.k2(i).to_f64_lossy();
                u2 += a;
                g2 += a * k2;
                l2 += a * k2 * k2;
            }
        }
        let e2: f64 = s.e_spectra().iter().flat_map(|c| c.iter()).map(|z| z.norm_sqr().to_f64_lossy()).sum();
        self.t.push(s.t);
        self.energy.push(0.5 * (u2 + e2) * pf);
        self.dissipation.push((self.mu * g2 + s.delta * l2) * pf);
        Ok(())
    }
}

fn check_coverage(history: &[DiagnosticsRecord], t_end: f64) -> Result<usize, FluxError> {
    let first = history.first().ok_or_else(|| FluxError::IncompleteHistory("empty history".into()))?;
    if first.t.abs() > 1e-12 {
        return Err(FluxError::IncompleteHistory(format!("history starts at t = {}", first.t)));
    }
    let tol = 1e-9 * t_end.abs().max(1.0);
    let last = history.last().expect("nonempty").t;
    if last < t_end - tol {
        return Err(FluxError::IncompleteHistory(format!("history ends at t = {last} < T = {t_end}")));
    }
    // records strictly inside [0, T] plus the first one past T
    let upto = history.iter().position(|r| r.t > t_end + tol).unwrap_or(history.len());
    let end = (upto + 1).min(history.len());
    if end >= 3 {
        let h = history[1].t - history[0].t;
        for w in history[..end].windows(2).take(end.saturating_sub(2)) {
            let d = w[1].t - w[0].t;
            if (d - h).abs() > 1e-6 * h {
                return Err(FluxError::IncompleteHistory(format!("gap of {d} at t = {} (cadence {h})", w[0].t)));
            }
        }
    }
    for w in history[..end].windows(2) {
        if !(w[1].t > w[0].t) {
            return Err(FluxError::IncompleteHistory(format!("times not increasing at t = {}", w[0].t)));
        }
    }
    Ok(upto)
}

/// Raw (σ-free) pieces of the time integrand of `A`, interpolated linearly.
fn raw_at(history: &[DiagnosticsRecord], t: f64) -> [f64; 3] {
    let raw = |r: &DiagnosticsRecord| [r.grad_u_sq, r.udot_sq, r.grad_pudot_sq];
    let k = history.partition_point(|r| r.t <= t);
    if k == 0 {
        return raw(&history[0]);
    }
    if k == history.len() {
        return raw(&history[k - 1]);
    }
    let (a, b) = (&history[k - 1], &history[k]);
    let w = (t - a.t) / (b.t - a.t);
    let (ra, rb) = (raw(a), raw(b));
    std::array::from_fn(|i| ra[i] + w * (rb[i] - ra[i]))
}

/// `A(T)` split into its supremum and time-integral parts.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FunctionalA {
    pub sup_part: f64,
    pub integral_part: f64,
}

impl FunctionalA {
    pub fn total(&self) -> f64 {
        self.sup_part + self.integral_part
    }
}

/// `A(T)` from a uniform-cadence history starting at `t = 0`. The time
/// integral is a trapezoid rule whose nodes include `t = 1` (where `σ` has
/// its kink) and `T` itself, with the unweighted integrands interpolated
/// linearly there.
pub fn functional_a(history: &[DiagnosticsRecord], t_end: f64) -> Result<FunctionalA, FluxError> {
    let upto = check_coverage(history, t_end)?;
    let sup_part = history[..upto].iter().map(|r| r.a_sup_integrand()).fold(0.0, f64::max);
    let mut nodes: Vec<f64> = history[..upto].iter().map(|r| r.t).filter(|&t| t <= t_end).collect();
    for extra in [1.0, t_end] {
        if extra > 0.0 && extra <= t_end && !nodes.iter().any(|&t| (t - extra).abs() < 1e-12) {
            nodes.push(extra);
        }
    }
    nodes.sort_by(f64::total_cmp);
    let ys: Vec<f64> = nodes
        .iter()
        .map(|&t| {
            let [g, ud, gp] = raw_at(history, t);
            let s = sigma(t);
            g + s * ud + s * s * gp
        })
        .collect();
    Ok(FunctionalA { sup_part, integral_part: trapezoid(&nodes, &ys) })
}

/// `B(T) = sup ‖F - I‖²∞` over the recorded samples up to `T`.
pub fn functional_b(history: &[DiagnosticsRecord], t_end: f64) -> Result<f64, FluxError> {
    let upto = check_coverage(history, t_end)?;
    Ok(history[..upto].iter().map(|r| r.e_linf_sq).fold(0.0, f64::max))
}

/// Lower-bound estimate of `sup |u(x) - u(y)| / |x - y|^α` over pairs of an
/// `m x m` lattice at periodic distance `≤ π`. The lattice is a subsample of
/// the grid when `m` divides `n`, and a spectral resampling otherwise.
pub fn holder_seminorm<T: Real>(u: &VectorField<T>, alpha: f64, m: usize) -> Result<f64, FluxError> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(FluxError::InvalidArgument(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    if m < 2 {
        return Err(FluxError::InvalidArgument(format!("lattice size must be >= 2, got {m}")));
    }
    let n = u.spectral().n();
    let lattice: [Vec<f64>; 2] = if n >= m && n % m == 0 {
        u.sync_values();
        let stride = n / m;
        std::array::from_fn(|c| {
            let v = u.c[c].values();
            (0..m * m).map(|p| v[(p / m) * stride * n + (p % m) * stride].to_f64_lossy()).collect()
        })
    } else {
        let grid = GridSpec::new(m, Dealias::None).map_err(|e| FluxError::InvalidArgument(e.to_string()))?;
        let target: Arc<Spectral<T>> = Spectral::new(grid);
        std::array::from_fn(|c| resample(&u.c[c], &target).values().iter().map(|x| x.to_f64_lossy()).collect())
    };
    let h = std::f64::consts::TAU / m as f64;
    let mut weight = vec![0.0; m * m];
    for a in 0..m {
        for b in 0..m {
            let dx = a.min(m - a) as f64 * h;
            let dy = b.min(m - b) as f64 * h;
            let d = dx.hypot(dy);
            if d > 0.0 && d <= std::f64::consts::PI + 1e-12 {
                weight[a * m + b] = d.powf(-2.0 * alpha);
            }
        }
    }
    let mut best = 0.0f64;
    for x1 in 0..m {
        for x2 in 0..m {
            let p = x1 * m + x2;
            let (u1, u2) = (lattice[0][p], lattice[1][p]);
            for a in 0..m {
                let row = ((x1 + a) % m) * m;
                for b in 0..m {
                    let w = weight[a * m + b];
                    if w == 0.0 {
                        continue;
                    }
                    let q = row + (x2 + b) % m;
                    let (d1, d2) = (lattice[0][q] - u1, lattice[1][q] - u2);
                    best = best.max((d1 * d1 + d2 * d2) * w);
                }
            }
        }
    }
    Ok(best.sqrt())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HolderReport {
    pub measured: f64,
    /// `(ε0 + ‖∇u‖²)^((1-α)/2) ‖𝒫u̇‖^α + ε0^((1-α)/2) B^(α/2)`.
    pub bound: f64,
    /// `measured / bound`: the implied constant.
    pub constant: Option<f64>,
}

pub fn holder_bound_check<T: Real>(
    s: &SimState<T>,
    alpha: f64,
    m: usize,
    eps0: f64,
    b: f64,
    mu: f64,
) -> Result<HolderReport, FluxError> {
    let measured = holder_seminorm(&s.u, alpha, m)?;
    let (pudot, _) = material_derivative(s, mu);
    let grad_u_sq = nsq(&vector_gradient(&s.u));
    let bound = (eps0 + grad_u_sq).powf(0.5 * (1.0 - alpha)) * nsq(&pudot).powf(0.5 * alpha)
        + eps0.powf(0.5 * (1.0 - alpha)) * b.powf(0.5 * alpha);
    Ok(HolderReport { measured, bound, constant: guarded(measured, bound) })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct L4Report {
    /// `sup_t ∫|u|⁴`.
    pub sup_l4: f64,
    /// `∫∫|u|²|∇u|²`.
    pub dissipation: f64,
    pub lhs: f64,
    /// `∫|u0|⁴`.
    pub initial_l4: f64,
    /// `ε0 B(T)`.
    pub eps0_b: f64,
    pub ratio: Option<f64>,
}

pub fn l4_energy_check(history: &[DiagnosticsRecord], eps0: f64) -> Result<L4Report, FluxError> {
    let first = history.first().ok_or_else(|| FluxError::IncompleteHistory("empty history".into()))?;
    let ts: Vec<f64> = history.iter().map(|r| r.t).collect();
    let ys: Vec<f64> = history.iter().map(|r| r.u2_grad_u2).collect();
    let sup_l4 = history.iter().map(|r| r.u_l4_4).fold(0.0, f64::max);
    let dissipation = trapezoid(&ts, &ys);
    let b = history.iter().map(|r| r.e_linf_sq).fold(0.0, f64::max);
    let lhs = sup_l4 + dissipation;
    let rhs = first.u_l4_4 + eps0 * b;
    Ok(L4Report { sup_l4, dissipation, lhs, initial_l4: first.u_l4_4, eps0_b: eps0 * b, ratio: guarded(lhs, rhs) })
}

/// One Fourier mode of a closed-form vector profile:
/// `cos(k·x) a + sin(k·x) b`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ProfileMode {
    pub k: [i64; 2],
    pub cos: [f64; 2],
    pub sin: [f64; 2],
}

/// Smooth bump `exp(1 - 1/(1 - s²))` supported on `(t0, t1)`, with
/// `s = (2t - t0 - t1) / (t1 - t0)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Bump {
    pub t0: f64,
    pub t1: f64,
}

impl Bump {
    fn s(&self, t: f64) -> f64 {
        (2.0 * t - self.t0 - self.t1) / (self.t1 - self.t0)
    }

    pub fn value(&self, t: f64) -> f64 {
        let s = self.s(t);
        if s.abs() >= 1.0 {
            0.0
        } else {
            (1.0 - 1.0 / (1.0 - s * s)).exp()
        }
    }

    pub fn derivative(&self, t: f64) -> f64 {
        let s = self.s(t);
        if s.abs() >= 1.0 {
            return 0.0;
        }
        let q = 1.0 - s * s;
        self.value(t) * (-2.0 * s / (q * q)) * (2.0 / (self.t1 - self.t0))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TestFunction {
    pub modes: Vec<ProfileMode>,
    pub bump: Bump,
}

impl TestFunction {
    fn profile<T: Real>(&self, sp: &Arc<Spectral<T>>) -> VectorField<T> {
        let modes = self.modes.clone();
        VectorField::from_fn(sp, move |x1, x2| {
            let mut v = [0.0; 2];
            for m in &modes {
                let ph = m.k[0] as f64 * x1 + m.k[1] as f64 * x2;
                let (s, c) = ph.sin_cos();
                for i in 0..2 {
                    v[i] += c * m.cos[i] + s * m.sin[i];
                }
            }
            v
        })
    }
}

/// Which weak identity a test function is paired with.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum WeakForm {
    /// Conservative transport of column `j` of `F`, tested against `β`.
    Transport { column: usize },
    /// Momentum balance tested against a divergence-free `ψ`; the viscous
    /// term carries `μ` and the regularization adds `δ∫∫Δu·Δψ`.
    Momentum,
}

struct PreparedTest<T: Real> {
    form: WeakForm,
    bump: Bump,
    phi: VectorField<T>,
    grad_phi: MatrixField<T>,
    lap_phi: VectorField<T>,
}

/// Accumulates space-time weak-form residuals on the fly. Feed it every
/// stored state (via [`Observer`]) and read [`residuals`](Self::residuals)
/// at the end; the time integrals use the trapezoid rule over the observed
/// instants.
pub struct WeakFormProbe<T: Real> {
    mu: f64,
    tests: Vec<PreparedTest<T>>,
    times: Vec<f64>,
    integrands: Vec<Vec<f64>>,
}

fn grid_dot<T: Real>(area: f64, a: &[&[T]], b: &[&[T]]) -> f64 {
    let mut s = 0.0;
    for (x, y) in a.iter().zip(b.iter()) {
        for (p, q) in x.iter().zip(y.iter()) {
            s += p.to_f64_lossy() * q.to_f64_lossy();
        }
    }
    s * area
}

impl<T: Real> WeakFormProbe<T> {
    pub fn new(sp: &Arc<Spectral<T>>, mu: f64, tests: &[(WeakForm, TestFunction)]) -> Result<Self, FluxError> {
        let mut prepared = Vec::with_capacity(tests.len());
        for (form, tf) in tests {
            if let WeakForm::Transport { column } = form {
                if *column > 1 {
                    return Err(FluxError::InvalidArgument(format!("column {column} out of range")));
                }
            }
            if !(tf.bump.t1 > tf.bump.t0) {
                return Err(FluxError::InvalidArgument("bump support must have t1 > t0".into()));
            }
            let phi = tf.profile(sp);
            if *form == WeakForm::Momentum {
                let div_linf = divergence(&phi).linf().to_f64_lossy();
                if div_linf > 1e-10 {
                    return Err(FluxError::InvalidTestFunction { div_linf });
                }
            }
            let grad_phi = vector_gradient(&phi);
            let lap_phi = vector_laplacian(&phi);
            phi.sync_values();
            grad_phi.sync_values();
            lap_phi.sync_values();
            prepared.push(PreparedTest { form: *form, bump: tf.bump, phi, grad_phi, lap_phi });
        }
        Ok(WeakFormProbe { mu, tests: prepared, times: Vec::new(), integrands: vec![Vec::new(); tests.len()] })
    }

    fn integrand(&self, test: &PreparedTest<T>, s: &SimState<T>, grad_u_vals: &[Vec<T>; 4], lap_u: &[Vec<T>; 2]) -> f64 {
        let (th, dth) = (test.bump.value(s.t), test.bump.derivative(s.t));
        if th == 0.0 && dth == 0.0 {
            return 0.0;
        }
        let sp = s.spectral();
        let area = sp.cell_area().to_f64_lossy();
        let v = s.grid_values();
        let (u, f) = ([v[0], v[1]], [[v[2], v[3]], [v[4], v[5]]]);
        let phi = [test.phi.c[0].values(), test.phi.c[1].values()];
        // ∂_k φ_i
        let gphi = |i: usize, k: usize| test.grad_phi.c[i][k].values();
        let len = sp.len();
        match test.form {
            WeakForm::Transport { column: j } => {
                let fj = [f[0][j], f[1][j]];
                let mut flux = 0.0;
                for p in 0..len {
                    for i in 0..2 {
                        for k in 0..2 {
                            let m = fj[i][p] * u[k][p] - u[i][p] * fj[k][p];
                            flux += m.to_f64_lossy() * gphi(i, k)[p].to_f64_lossy();
                        }
                    }
                }
                dth * grid_dot(area, &fj, &phi) + th * flux * area
            }
            WeakForm::Momentum => {
                let mut conv = 0.0;
                let mut visc = 0.0;
                for p in 0..len {
                    for i in 0..2 {
                        for k in 0..2 {
                            let ffk = f[i][0][p] * f[k][0][p] + f[i][1][p] * f[k][1][p];
                            let m = u[i][p] * u[k][p] - ffk;
                            let g = gphi(i, k)[p].to_f64_lossy();
                            conv += m.to_f64_lossy() * g;
                            visc += grad_u_vals[2 * i + k][p].to_f64_lossy() * g;
                        }
                    }
                }
                let lap_phi = [test.lap_phi.c[0].values(), test.lap_phi.c[1].values()];
                let lap_u = [lap_u[0].as_slice(), lap_u[1].as_slice()];
                let reg = s.delta * grid_dot(area, &lap_u, &lap_phi);
                dth * grid_dot(area, &u, &phi) + th * (area * (conv - self.mu * visc) - reg)
            }
        }
    }

    /// `|∫∫ ...|` per test function, in construction order. Both ends of each
    /// bump's support must be covered by the observed times.
    pub fn residuals(&self) -> Result<Vec<f64>, FluxError> {
        let (Some(&first), Some(&last)) = (self.times.first(), self.times.last()) else {
            return Err(FluxError::IncompleteHistory("no states observed".into()));
        };
        self.tests
            .iter()
            .zip(&self.integrands)
            .map(|(t, ys)| {
                if t.bump.t0 < first - 1e-12 || t.bump.t1 > last + 1e-12 {
                    return Err(FluxError::IncompleteHistory(format!(
                        "bump ({}, {}) not covered by [{first}, {last}]",
                        t.bump.t0, t.bump.t1
                    )));
                }
                Ok(trapezoid(&self.times, ys).abs())
            })
            .collect()
    }
}

impl<T: Real> Observer<T> for WeakFormProbe<T> {
    fn observe(&mut self, s: &SimState<T>, _step: u64) -> io::Result<()> {
        let sp = s.spectral();
        let us = s.u_spectra();
        let grad_u = crate::kernels::grad_values(sp, &us);
        let lap: Vec<_> = us
            .iter()
            .map(|c| c.iter().enumerate().map(|(i, &z)| z * (-sp.k2(i))).collect::<Vec<_>>())
            .collect();
        let lap_u = [sp.inverse_real(&lap[0]), sp.inverse_real(&lap[1])];
        let vals: Vec<f64> = self.tests.iter().map(|t| self.integrand(t, s, &grad_u, &lap_u)).collect();
        self.times.push(s.t);
        for (acc, v) in self.integrands.iter_mut().zip(vals) {
            acc.push(v);
        }
        Ok(())
    }
}

/// Pointwise residual of the stress transport identity
/// `∂t(FF^T) + u·∇(FF^T) - ∇u FF^T - FF^T ∇u^T = 0` at `cur`, with the time
/// derivative from the centered difference of `prev` and `next`. Returned
/// relative to `‖∂t(FF^T)‖∞`.
pub fn stress_transport_residual<T: Real>(prev: &SimState<T>, cur: &SimState<T>, next: &SimState<T>) -> f64 {
    let sp = cur.spectral();
    let h2 = next.t - prev.t;
    let stress = |s: &SimState<T>| -> [Vec<f64>; 3] {
        let e = s.perturbation_values();
        let ev = [e[2].clone(), e[3].clone(), e[4].clone(), e[5].clone()];
        crate::kernels::stress_values(&ev).map(|v| v.into_iter().map(|x| x.to_f64_lossy()).collect())
    };
    let (sa, sb) = (stress(prev), stress(next));
    let sc = stress(cur);
    // spatial derivatives of the stress at `cur` (unmasked, computed spectrally)
    let sc_t: Vec<Vec<T>> = sc.iter().map(|v| v.iter().map(|&x| T::lit(x)).collect()).collect();
    let spec: Vec<_> = sc_t.iter().map(|v| sp.forward_real(v)).collect();
    let d = |c: usize, axis: usize| -> Vec<f64> {
        sp.inverse_real(&crate::kernels::deriv(sp, &spec[c], axis)).into_iter().map(|x| x.to_f64_lossy()).collect()
    };
    let grads: Vec<[Vec<f64>; 2]> = (0..3).map(|c| [d(c, 0), d(c, 1)]).collect();
    let gu = crate::kernels::grad_values(sp, &cur.u_spectra());
    let uv = cur.grid_values();
    let (mut res, mut scale) = (0.0f64, 0.0f64);
    let sym = |s: &[Vec<f64>; 3], p: usize| [[s[0][p] + 1.0, s[1][p]], [s[1][p], s[2][p] + 1.0]];
    for p in 0..sp.len() {
        let g = [
            [gu[0][p].to_f64_lossy(), gu[1][p].to_f64_lossy()],
            [gu[2][p].to_f64_lossy(), gu[3][p].to_f64_lossy()],
        ];
        let s = sym(&sc, p);
        let (u1, u2) = (uv[0][p].to_f64_lossy(), uv[1][p].to_f64_lossy());
        for (c, (i, j)) in [(0, 0), (0, 1), (1, 1)].into_iter().enumerate() {
            let dt = (sb[c][p] - sa[c][p]) / h2;
            let adv = u1 * grads[c][0][p] + u2 * grads[c][1][p];
            let stretch = (g[i][0] * s[0][j] + g[i][1] * s[1][j]) + (s[i][0] * g[j][0] + s[i][1] * g[j][1]);
            res = res.max((dt + adv - stretch).abs());
            scale = scale.max(dt.abs());
        }
    }
    relative(res, scale)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{simulate, Scheme, StepperConfig};
    use crate::field::ops;
    use crate::state::{preflow_init_on, InitialDataSpec};

    fn sp(n: usize) -> Arc<Spectral<f64>> {
        Spectral::new(GridSpec::new(n, Dealias::TwoThirds).unwrap())
    }

    fn small(s: &Arc<Spectral<f64>>, amp: f64, delta: f64) -> SimState<f64> {
        let spec = InitialDataSpec { amplitude: amp, preflow_time: 1.0, ..Default::default() };
        preflow_init_on(&spec, s).unwrap().with_delta(delta)
    }

    #[test]
    fn equilibrium_flux_vanishes() {
        let s = SimState::equilibrium(&sp(16), 0.1);
        let ff = effective_flux(&s, 1.0);
        assert_eq!(nsq(&ff.g), 0.0);
        assert_eq!(nsq(&ff.gf), 0.0);
        assert_eq!(nsq(&ff.pudot), 0.0);
        assert_eq!(nsq(&ff.udot), 0.0);
        let r = flux_h1_bound_check(&s, 1.0);
        assert!(r.both_zero && r.ratio.is_none());
    }

    #[test]
    fn stokes_material_derivative() {
        let g = sp(32);
        let u = crate::state::random_solenoidal(&g, (1.0, 4.0), 3, 1.0);
        let s = SimState::new(u.clone(), MatrixField::identity(&g), 0.0, 0.05);
        let (pudot, _) = material_derivative(&s, 0.7);
        let lap = vector_laplacian(&u);
        let expect = lap.scale(0.7).sub(&vector_laplacian(&lap).scale(0.05));
        assert!(nsq(&pudot.sub(&expect)).sqrt() <= 1e-12 * nsq(&expect).sqrt());
        // F ≡ I: both fluxes reduce to μ∇u
        let ff = effective_flux(&s, 0.7);
        let gu = vector_gradient(&u).scale(0.7);
        assert!(nsq(&ff.g.sub(&gu)).sqrt() < 1e-12);
        assert!(nsq(&ff.gf.sub(&gu)).sqrt() < 1e-12);
    }

    #[test]
    fn flux_identities_hold_on_generic_state() {
        let g = sp(64);
        let s = small(&g, 0.2, 1.0 / 16.0);
        let ff = effective_flux(&s, 1.0);
        assert!(ff.residuals.flux_identity <= 1e-10, "{:?}", ff.residuals);
        assert!(constraint_residuals(&s).div_ft_inf <= 1e-8);
        assert!(ff.residuals.variant_assembly <= 1e-8, "{:?}", ff.residuals);
        assert!(ff.residuals.projected_div <= 1e-8, "{:?}", ff.residuals);
    }

    #[test]
    fn h1_ratio_without_stress_is_near_one() {
        // F ≡ I: lhs = ‖Δ∇u‖² (μ = 1) and ∇𝒫u̇ = ∇Δu - δ∇Δ²u
        let g = sp(32);
        let u = crate::state::random_solenoidal(&g, (1.0, 3.0), 5, 1.0);
        let delta = 1e-3;
        let s = SimState::new(u, MatrixField::identity(&g), 0.0, delta);
        let r = flux_h1_bound_check(&s, 1.0);
        let ratio = r.ratio.unwrap();
        assert!(ratio <= 1.0 + 30.0 * delta && ratio > 0.9, "{ratio}");
        assert!(r.delta_correction < 20.0 * delta);
    }

    #[test]
    fn material_derivative_matches_time_difference() {
        let g = sp(32);
        let s0 = small(&g, 0.2, 1.0 / 16.0);
        let mu = 1.0;
        let mut errs = Vec::new();
        for h in [4e-3, 2e-3] {
            let cfg = StepperConfig { dt: h, scheme: Scheme::IfRk4, mu, ..Default::default() };
            let mut st = crate::dynamics::Stepper::new(&g, &cfg, s0.delta);
            let s1 = st.step(&s0, 1).unwrap();
            let s2 = st.step(&s1, 2).unwrap();
            let (_, udot) = material_derivative(&s1, mu);
            let dudt = s2.u.sub(&s0.u).scale(0.5 / h);
            let oracle = dudt.add(&advection(&s1.u));
            errs.push(nsq(&udot.sub(&oracle)).sqrt() / nsq(&udot).sqrt());
        }
        assert!(errs[0] < 1e-3, "{errs:?}");
        let order = (errs[0] / errs[1]).log2();
        assert!(order > 1.8, "{errs:?}");
    }

    fn history(dt: f64, t_end: f64, cadence: u64) -> Vec<DiagnosticsRecord> {
        let g = sp(32);
        let s0 = small(&g, 0.1, 1.0 / 16.0);
        let cfg = StepperConfig { dt, ..Default::default() };
        let mut rec = DiagnosticsRecorder::new(DiagnosticsBuilder::new(1.0, None));
        simulate(&s0, t_end, &cfg, cadence, &mut [&mut rec]).unwrap();
        rec.records
    }

    #[test]
    fn functionals_on_equilibrium_are_zero() {
        let g = sp(16);
        let s = SimState::equilibrium(&g, 0.1);
        let mut b = DiagnosticsBuilder::new(1.0, Some(HolderSettings { alpha: 0.5, lattice: 16 }));
        let hist: Vec<_> = (0..5).map(|k| b.record(&s.clone().with_time(0.25 * k as f64), k)).collect();
        let a = functional_a(&hist, 1.0).unwrap();
        assert_eq!(a.total(), 0.0);
        assert_eq!(functional_b(&hist, 1.0).unwrap(), 0.0);
        assert!(hist.iter().all(|r| r.is_finite()));
        let single = &hist[..1];
        let a0 = functional_a(single, 0.0).unwrap();
        assert_eq!(a0.integral_part, 0.0);
        assert_eq!(a0.sup_part, single[0].a_sup_integrand());
    }

    #[test]
    fn functionals_monotone_and_cadence_converges() {
        let fine = history(0.01, 1.5, 5);
        let coarse = history(0.01, 1.5, 10);
        let mut prev = (0.0, 0.0);
        for k in 1..=15 {
            let t = 0.1 * k as f64;
            let a = functional_a(&fine, t).unwrap().total();
            let b = functional_b(&fine, t).unwrap();
            assert!(a >= prev.0 && b >= prev.1, "t = {t}");
            prev = (a, b);
        }
        let (af, ac) = (functional_a(&fine, 1.5).unwrap(), functional_a(&coarse, 1.5).unwrap());
        let rel = (af.integral_part - ac.integral_part).abs() / af.integral_part;
        // trapezoid in t: O(Δt²) with Δt = 0.05 / 0.1
        assert!(rel < 1e-2, "{rel}");
        for r in &fine {
            assert!((0.0..=1.0).contains(&r.sigma));
            assert!(r.is_finite());
        }
    }

    #[test]
    fn gaps_are_rejected() {
        let mut h = history(0.01, 0.5, 5);
        h.remove(3);
        assert!(matches!(functional_a(&h, 0.5), Err(FluxError::IncompleteHistory(_))));
        assert!(matches!(functional_b(&h[..2], 0.5), Err(FluxError::IncompleteHistory(_))));
    }

    #[test]
    fn record_row_round_trip() {
        let h = history(0.01, 0.05, 5);
        for r in &h {
            assert_eq!(r.row().len(), DIAGNOSTICS_COLUMNS.len());
            assert_eq!(&DiagnosticsRecord::from_row(&r.row()).unwrap(), r);
        }
    }

    #[test]
    fn energy_monitor_balances() {
        let g = sp(32);
        let s0 = small(&g, 0.1, 1.0 / 16.0);
        let cfg = StepperConfig { dt: 0.005, ..Default::default() };
        let mut m = EnergyMonitor::new(1.0);
        simulate(&s0, 0.5, &cfg, 1, &mut [&mut m]).unwrap();
        assert!(m.balance_residual().abs() < 1e-8, "{}", m.balance_residual());
    }

    #[test]
    fn holder_constant_field_and_lipschitz_bounds() {
        let g = sp(64);
        let c = VectorField::from_fn(&g, |_, _| [0.3, -1.0]);
        assert_eq!(holder_seminorm(&c, 0.5, 32).unwrap(), 0.0);
        let u = VectorField::from_fn(&g, |x, _| [x.sin(), 0.0]);
        for alpha in [0.2, 0.5, 0.8] {
            let m = 64;
            let h = std::f64::consts::TAU / m as f64;
            let v = holder_seminorm(&u, alpha, m).unwrap();
            // nearest neighbours at the steepest point give a lower bound,
            // the Lipschitz constant an upper one
            let lower = (h.sin()) / h.powf(alpha);
            let upper = std::f64::consts::PI.powf(1.0 - alpha);
            assert!(v >= lower * (1.0 - 1e-12) && v <= upper, "{alpha}: {lower} {v} {upper}");
        }
    }

    #[test]
    fn holder_refines_with_lattice() {
        let g = sp(128);
        let u = crate::state::random_solenoidal(&g, (1.0, 3.0), 2, 1.0);
        let vals: Vec<f64> = [16, 32, 64, 128].iter().map(|&m| holder_seminorm(&u, 0.5, m).unwrap()).collect();
        for w in vals.windows(2) {
            assert!(w[1] >= w[0] * (1.0 - 1e-12), "{vals:?}");
        }
        assert!((vals[3] - vals[2]) / vals[3] < 0.05, "{vals:?}");
        // a lattice finer than the grid goes through spectral resampling
        let coarse = sp(32);
        let uc = crate::state::random_solenoidal(&coarse, (1.0, 3.0), 2, 1.0);
        let r = holder_seminorm(&uc, 0.5, 64).unwrap();
        let direct = holder_seminorm(&crate::state::random_solenoidal(&sp(64), (1.0, 3.0), 2, 1.0), 0.5, 64).unwrap();
        assert!((r - direct).abs() < 1e-12 * direct, "{r} {direct}");
        assert!(holder_seminorm(&u, 1.2, 16).is_err());
        assert!(holder_seminorm(&u, 0.5, 48).is_err());
    }

    #[test]
    fn l4_check_on_equilibrium() {
        let g = sp(16);
        let mut b = DiagnosticsBuilder::new(1.0, None);
        let s = SimState::equilibrium(&g, 0.0);
        let h = vec![b.record(&s, 0)];
        let r = l4_energy_check(&h, 0.0).unwrap();
        assert_eq!(r.lhs, 0.0);
        assert!(r.ratio.is_none());
    }

    #[test]
    fn l4_pieces_match_closed_form() {
        // u = (sin x2, 0): ∫|u|⁴ = 4π²·3/8, |∇u|² = cos² x2
        let g = sp(32);
        let u = VectorField::from_fn(&g, |_, y| [y.sin(), 0.0]);
        let (a, b) = l4_pieces(&u, &vector_gradient(&u));
        let pi2 = std::f64::consts::PI.powi(2);
        assert!((a - 4.0 * pi2 * 0.375).abs() < 1e-12);
        assert!((b - 4.0 * pi2 * 0.125).abs() < 1e-12);
    }

    fn tests_set() -> Vec<(WeakForm, TestFunction)> {
        let bump = Bump { t0: 0.1, t1: 0.4 };
        vec![
            (WeakForm::Transport { column: 0 }, TestFunction { modes: vec![ProfileMode { k: [1, 0], cos: [1.0, 0.5], sin: [0.0, 0.0] }], bump }),
            (WeakForm::Transport { column: 1 }, TestFunction { modes: vec![ProfileMode { k: [1, 1], cos: [0.0, 0.0], sin: [0.3, 1.0] }], bump }),
            // ψ ⊥ k for each mode
            (
                WeakForm::Momentum,
                TestFunction {
                    modes: vec![
                        ProfileMode { k: [1, 0], cos: [0.0, 1.0], sin: [0.0, 0.0] },
                        ProfileMode { k: [1, 1], cos: [0.0, 0.0], sin: [1.0, -1.0] },
                    ],
                    bump,
                },
            ),
        ]
    }

    #[test]
    fn invalid_test_function_rejected() {
        let g = sp(16);
        let tf = TestFunction { modes: vec![ProfileMode { k: [1, 0], cos: [1.0, 0.0], sin: [0.0, 0.0] }], bump: Bump { t0: 0.0, t1: 1.0 } };
        assert!(matches!(
            WeakFormProbe::new(&g, 1.0, &[(WeakForm::Momentum, tf)]),
            Err(FluxError::InvalidTestFunction { .. })
        ));
    }

    #[test]
    fn weak_forms_on_equilibrium_and_zero_test() {
        let g = sp(16);
        let s0 = SimState::equilibrium(&g, 0.1);
        let mut tests = tests_set();
        tests.push((WeakForm::Momentum, TestFunction { modes: vec![], bump: Bump { t0: 0.1, t1: 0.4 } }));
        let mut probe = WeakFormProbe::new(&g, 1.0, &tests).unwrap();
        let cfg = StepperConfig { dt: 0.01, ..Default::default() };
        simulate(&s0, 0.5, &cfg, 1, &mut [&mut probe]).unwrap();
        let r = probe.residuals().unwrap();
        assert!(r.iter().all(|&x| x < 1e-12), "{r:?}");
        assert_eq!(r[3], 0.0);
    }

    #[test]
    fn weak_residuals_shrink_with_dt_and_cadence() {
        let g = sp(32);
        let s0 = small(&g, 0.1, 1.0 / 16.0);
        let tests = tests_set();
        let mut res = Vec::new();
        for dt in [0.01, 0.005] {
            let cfg = StepperConfig { dt, ..Default::default() };
            let mut probe = WeakFormProbe::new(&g, 1.0, &tests).unwrap();
            simulate(&s0, 0.5, &cfg, 1, &mut [&mut probe]).unwrap();
            res.push(probe.residuals().unwrap());
        }
        for i in 0..tests.len() {
            assert!(res[1][i] * 4.0 <= res[0][i], "{res:?}");
        }
    }

    #[test]
    fn stress_transport_identity_second_order() {
        let g = sp(32);
        let s0 = small(&g, 0.2, 1.0 / 16.0);
        let mut out = Vec::new();
        for h in [4e-3, 2e-3] {
            let cfg = StepperConfig { dt: h, ..Default::default() };
            let mut st = crate::dynamics::Stepper::new(&g, &cfg, s0.delta);
            let s1 = st.step(&s0, 1).unwrap();
            let s2 = st.step(&s1, 2).unwrap();
            out.push(stress_transport_residual(&s0, &s1, &s2));
        }
        assert!(out[0] < 1e-3, "{out:?}");
        assert!(out[0] / out[1] > 3.5, "{out:?}");
    }

    #[test]
    fn sigma_weight() {
        assert_eq!(sigma(0.0), 0.0);
        assert_eq!(sigma(0.5), 0.5);
        assert_eq!(sigma(3.0), 1.0);
        let _ = ops::laplacian::<f64>;
    }
}
