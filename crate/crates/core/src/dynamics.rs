//! Integrating-factor Runge-Kutta time stepping of the regularized system.
//!
//! The linear momentum operator `μΔ - δΔ²` is diagonal in Fourier space and
//! is integrated exactly (Lawson form); advection, elastic stress and the
//! transport of `F` are explicit and dealiased.

use std::sync::Arc;

use rustfft::num_complex::Complex;
use thiserror::Error;

use crate::field::{MatrixField, ScalarField, Spectral, VectorField};
use crate::kernels::{self, Spec};
use crate::real::Real;
use crate::state::SimState;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Scheme {
    IfRk2,
    IfRk4,
}

impl Scheme {
    pub fn order(self) -> u32 {
        match self {
            Scheme::IfRk2 => 2,
            Scheme::IfRk4 => 4,
        }
    }
}

impl std::fmt::Display for Scheme {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Scheme::IfRk2 => "if_rk2",
            Scheme::IfRk4 => "if_rk4",
        })
    }
}

impl std::str::FromStr for Scheme {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "if_rk2" => Ok(Scheme::IfRk2),
            "if_rk4" => Ok(Scheme::IfRk4),
            _ => Err(format!("unknown scheme {s:?} (expected if_rk2 or if_rk4)")),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepperConfig {
    pub dt: f64,
    pub scheme: Scheme,
    pub mu: f64,
    /// Constant `c` of the step ceiling `c / ((max|u| + max|F|) n)`.
    pub cfl: f64,
    /// Hold `F` fixed (no transport, no stretching).
    pub freeze_f: bool,
    /// Drop the advective terms `u·∇u` and `u·∇F`.
    pub drop_nonlinear: bool,
}

impl Default for StepperConfig {
    fn default() -> Self {
        StepperConfig { dt: 1e-3, scheme: Scheme::IfRk4, mu: 1.0, cfl: 0.5, freeze_f: false, drop_nonlinear: false }
    }
}

#[derive(Debug, Error)]
pub enum DynamicsError<T: Real> {
    #[error("non-finite values after step {step} (t = {t}); last good state kept")]
    StepDiverged { step: u64, t: f64, last_good: Box<SimState<T>> },
    #[error("dt = {dt} exceeds the stability ceiling {ceiling} at t = {t}")]
    DtAboveCeiling { dt: f64, ceiling: f64, t: f64 },
    #[error("invalid stepper configuration: {0}")]
    InvalidConfig(String),
    #[error("diagnostics sink failed: {0}")]
    Sink(#[from] std::io::Error),
}

impl StepperConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err("dt must be finite and > 0".into());
        }
        if !(self.mu > 0.0 && self.mu.is_finite()) {
            return Err("mu must be finite and > 0".into());
        }
        if !(self.cfl > 0.0 && self.cfl.is_finite()) {
            return Err("cfl must be finite and > 0".into());
        }
        Ok(())
    }

    /// Largest admissible `dt` for the given state. The speed combines the
    /// advection speed with the elastic wave speed, bounded by the spectral
    /// norm of `F`.
    pub fn dt_ceiling<T: Real>(&self, s: &SimState<T>) -> f64 {
        let v = s.grid_values();
        let mut umax = 0.0f64;
        let mut fmax = 0.0f64;
        for p in 0..v[0].len() {
            let (a, b) = (v[0][p].to_f64_lossy(), v[1][p].to_f64_lossy());
            umax = umax.max((a * a + b * b).sqrt());
            let m = [
                [v[2][p].to_f64_lossy(), v[3][p].to_f64_lossy()],
                [v[4][p].to_f64_lossy(), v[5][p].to_f64_lossy()],
            ];
            fmax = fmax.max(spectral_norm(&m));
        }
        let speed = if self.drop_nonlinear { 0.0 } else { umax } + if self.freeze_f { 0.0 } else { fmax };
        if speed == 0.0 {
            f64::INFINITY
        } else {
            self.cfl / (speed * s.grid().n() as f64)
        }
    }
}

/// Largest singular value of a 2x2 matrix.
pub fn spectral_norm(m: &[[f64; 2]; 2]) -> f64 {
    let fro2 = m[0][0].powi(2) + m[0][1].powi(2) + m[1][0].powi(2) + m[1][1].powi(2);
    let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
    let disc = (fro2 * fro2 - 4.0 * det * det).max(0.0).sqrt();
    (0.5 * (fro2 + disc)).sqrt()
}

/// Explicit part of the tendency at one stage.
struct Tendency<T: Real> {
    u: [Spec<T>; 2],
    f: Option<[Spec<T>; 4]>,
}

/// Stepper bound to a grid, configuration and `δ`, with the per-mode
/// integrating factors precomputed.
pub struct Stepper<T: Real> {
    sp: Arc<Spectral<T>>,
    cfg: StepperConfig,
    delta: f64,
    lin: Vec<f64>,
    e_half: Vec<T>,
    e_full: Vec<T>,
    h: f64,
}

impl<T: Real> Stepper<T> {
    pub fn new(sp: &Arc<Spectral<T>>, cfg: &StepperConfig, delta: f64) -> Self {
        let lin: Vec<f64> = (0..sp.len())
            .map(|i| {
                let k2 = sp.k2(i).to_f64_lossy();
                -cfg.mu * k2 - delta * k2 * k2
            })
            .collect();
        let mut st = Stepper { sp: sp.clone(), cfg: cfg.clone(), delta, lin, e_half: vec![], e_full: vec![], h: 0.0 };
        st.set_h(cfg.dt);
        st
    }

    fn set_h(&mut self, h: f64) {
        if h == self.h {
            return;
        }
        self.h = h;
        self.e_half = self.lin.iter().map(|&l| T::lit((0.5 * h * l).exp())).collect();
        self.e_full = self.lin.iter().map(|&l| T::lit((h * l).exp())).collect();
    }

    pub fn config(&self) -> &StepperConfig {
        &self.cfg
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    /// Symbol of the linear momentum operator, `-μ|k|² - δ|k|⁴`.
    pub fn linear_symbol(&self) -> &[f64] {
        &self.lin
    }

    /// Explicit tendency from the spectra of `u` and `E = F - I`; `vals`, when
    /// given, are the matching grid values.
    fn tendency(&self, u: &[Spec<T>; 2], f: &[Spec<T>; 4], vals: Option<[&[T]; 6]>) -> Tendency<T> {
        let sp = &*self.sp;
        let owned;
        let v: [&[T]; 6] = match vals {
            Some(v) => v,
            None => {
                let refs = [&u[0][..], &u[1][..], &f[0][..], &f[1][..], &f[2][..], &f[3][..]];
                owned = kernels::inverse_many(sp, &refs);
                std::array::from_fn(|i| owned[i].as_slice())
            }
        };
        let uv = [v[0].to_vec(), v[1].to_vec()];
        let ev = [v[2].to_vec(), v[3].to_vec(), v[4].to_vec(), v[5].to_vec()];
        let gu = kernels::grad_values(sp, u);
        let advect = !self.cfg.drop_nonlinear;

        let stress = kernels::stress_values(&ev);
        let mut grid: Vec<&[T]> = stress.iter().map(|x| x.as_slice()).collect();
        let adv = if advect { Some(kernels::advection_values(&uv, &gu)) } else { None };
        if let Some(a) = &adv {
            grid.push(&a[0]);
            grid.push(&a[1]);
        }
        let spec = kernels::forward_many_masked(sp, &grid);
        let mut nu = kernels::div_symmetric(sp, &spec[..3]);
        if advect {
            for c in 0..2 {
                for (x, a) in nu[c].iter_mut().zip(&spec[3 + c]) {
                    *x = *x - *a;
                }
            }
        }
        {
            let [a, b] = &mut nu;
            kernels::project_in_place(sp, a, b);
        }
        let nf = if self.cfg.freeze_f {
            None
        } else {
            let gf = if advect { Some(kernels::matrix_grad_values(sp, f)) } else { None };
            Some(kernels::transport_tendency(sp, &uv, &gu, &ev, gf.as_ref(), advect))
        };
        Tendency { u: nu, f: nf }
    }

    /// One step of length `h`; the result is canonicalized.
    fn advance(&mut self, s: &SimState<T>, h: f64) -> SimState<T> {
        self.set_h(h);
        let u0 = s.u_spectra();
        let f0 = s.e_spectra();
        let pv = s.perturbation_values();
        let pv: [&[T]; 6] = std::array::from_fn(|c| pv[c].as_slice());
        let len = self.sp.len();
        let ht = T::lit(h);
        let hh = T::lit(0.5 * h);
        let (e1, e2) = (&self.e_half, &self.e_full);
        let fstage = |t: &Tendency<T>, w: T| -> [Spec<T>; 4] {
            match &t.f {
                Some(k) => std::array::from_fn(|c| f0[c].iter().zip(&k[c]).map(|(&a, &b)| a + b * w).collect()),
                None => f0.clone(),
            }
        };
        let (u_new, f_new) = match self.cfg.scheme {
            Scheme::IfRk4 => {
                let k1 = self.tendency(&u0, &f0, Some(pv));
                let ua: [Spec<T>; 2] =
                    std::array::from_fn(|c| (0..len).map(|i| (u0[c][i] + k1.u[c][i] * hh) * e1[i]).collect());
                let k2 = self.tendency(&ua, &fstage(&k1, hh), None);
                let ub: [Spec<T>; 2] =
                    std::array::from_fn(|c| (0..len).map(|i| u0[c][i] * e1[i] + k2.u[c][i] * hh).collect());
                let k3 = self.tendency(&ub, &fstage(&k2, hh), None);
                let uc: [Spec<T>; 2] =
                    std::array::from_fn(|c| (0..len).map(|i| u0[c][i] * e2[i] + k3.u[c][i] * (ht * e1[i])).collect());
                let k4 = self.tendency(&uc, &fstage(&k3, ht), None);
                let sixth = T::lit(h / 6.0);
                let two = T::lit(2.0);
                let u: [Spec<T>; 2] = std::array::from_fn(|c| {
                    (0..len)
                        .map(|i| {
                            u0[c][i] * e2[i]
                                + (k1.u[c][i] * e2[i] + (k2.u[c][i] + k3.u[c][i]) * (two * e1[i]) + k4.u[c][i]) * sixth
                        })
                        .collect()
                });
                let f = match (&k1.f, &k2.f, &k3.f, &k4.f) {
                    (Some(a), Some(b), Some(c3), Some(d)) => std::array::from_fn(|c| {
                        (0..len).map(|i| f0[c][i] + (a[c][i] + (b[c][i] + c3[c][i]) * two + d[c][i]) * sixth).collect()
                    }),
                    _ => f0.clone(),
                };
                (u, f)
            }
            Scheme::IfRk2 => {
                let k1 = self.tendency(&u0, &f0, Some(pv));
                let us: [Spec<T>; 2] =
                    std::array::from_fn(|c| (0..len).map(|i| (u0[c][i] + k1.u[c][i] * ht) * e2[i]).collect());
                let k2 = self.tendency(&us, &fstage(&k1, ht), None);
                let u: [Spec<T>; 2] = std::array::from_fn(|c| {
                    (0..len).map(|i| (u0[c][i] + k1.u[c][i] * hh) * e2[i] + k2.u[c][i] * hh).collect()
                });
                let f = match (&k1.f, &k2.f) {
                    (Some(a), Some(b)) => {
                        std::array::from_fn(|c| (0..len).map(|i| f0[c][i] + (a[c][i] + b[c][i]) * hh).collect())
                    }
                    _ => f0.clone(),
                };
                (u, f)
            }
        };
        let t = s.t + h;
        let spectra = [&u_new[0][..], &u_new[1], &f_new[0], &f_new[1], &f_new[2], &f_new[3]];
        SimState::from_perturbation_spectra(&self.sp, spectra, t, s.delta)
    }

    /// Advance by the configured `dt`.
    pub fn step(&mut self, s: &SimState<T>, step_index: u64) -> Result<SimState<T>, DynamicsError<T>> {
        let ceiling = self.cfg.dt_ceiling(s);
        if self.cfg.dt > ceiling {
            return Err(DynamicsError::DtAboveCeiling { dt: self.cfg.dt, ceiling, t: s.t });
        }
        let next = self.advance(s, self.cfg.dt);
        if !next.is_finite() {
            return Err(DynamicsError::StepDiverged { step: step_index, t: next.t, last_good: Box::new(s.clone()) });
        }
        Ok(next)
    }

    /// Full time derivative `(∂t u, ∂t F)` as spectra.
    pub(crate) fn rhs_spectra(&self, s: &SimState<T>) -> ([Spec<T>; 2], [Spec<T>; 4]) {
        let u = s.u_spectra();
        let f = s.e_spectra();
        let pv = s.perturbation_values();
        let k = self.tendency(&u, &f, Some(std::array::from_fn(|c| pv[c].as_slice())));
        let du = std::array::from_fn(|c| {
            k.u[c].iter().zip(&u[c]).zip(&self.lin).map(|((&a, &b), &l)| a + b * T::lit(l)).collect()
        });
        let zero = vec![kernels::czero(); self.sp.len()];
        let df = k.f.unwrap_or_else(|| std::array::from_fn(|_| zero.clone()));
        (du, df)
    }
}

/// `(∂t u, ∂t F)` for the state under `cfg`.
pub fn rhs<T: Real>(s: &SimState<T>, cfg: &StepperConfig) -> (VectorField<T>, MatrixField<T>) {
    let sp = s.spectral();
    let st = Stepper::new(sp, cfg, s.delta);
    let (du, df) = st.rhs_spectra(s);
    let [a, b] = du;
    let mk = |x: Vec<Complex<T>>| ScalarField::from_spectrum(sp, x);
    let [f11, f12, f21, f22] = df;
    (VectorField::new(mk(a), mk(b)), MatrixField::new([[mk(f11), mk(f12)], [mk(f21), mk(f22)]]))
}

/// A single step of length `cfg.dt`.
pub fn step<T: Real>(s: &SimState<T>, cfg: &StepperConfig) -> Result<SimState<T>, DynamicsError<T>> {
    let step_index = (s.t / cfg.dt).round() as u64;
    Stepper::new(s.spectral(), cfg, s.delta).step(s, step_index)
}

/// Receives states during [`simulate`]; `step` counts from the run start.
pub trait Observer<T: Real> {
    fn observe(&mut self, s: &SimState<T>, step: u64) -> std::io::Result<()>;
}

impl<T: Real, F: FnMut(&SimState<T>, u64) -> std::io::Result<()>> Observer<T> for F {
    fn observe(&mut self, s: &SimState<T>, step: u64) -> std::io::Result<()> {
        self(s, step)
    }
}

/// Integrate from `s0.t` to `t_end`. Observers see the initial state, every
/// `cadence`-th step and the final state. `t_end - s0.t` must be an integer
/// multiple of `dt`.
pub fn simulate<T: Real>(
    s0: &SimState<T>,
    t_end: f64,
    cfg: &StepperConfig,
    cadence: u64,
    observers: &mut [&mut dyn Observer<T>],
) -> Result<SimState<T>, DynamicsError<T>> {
    cfg.validate().map_err(DynamicsError::InvalidConfig)?;
    let span = t_end - s0.t;
    if span < -1e-12 {
        return Err(DynamicsError::InvalidConfig(format!("horizon {t_end} precedes state time {}", s0.t)));
    }
    let steps = (span / cfg.dt).round().max(0.0) as u64;
    if (steps as f64 * cfg.dt - span).abs() > 1e-9 * cfg.dt.max(span.abs()) {
        return Err(DynamicsError::InvalidConfig(format!("horizon span {span} is not a multiple of dt = {}", cfg.dt)));
    }
    let cadence = cadence.max(1);
    let start = (s0.t / cfg.dt).round() as u64;
    let mut stepper = Stepper::new(s0.spectral(), cfg, s0.delta);
    let mut s = s0.clone();
    for o in observers.iter_mut() {
        o.observe(&s, start)?;
    }
    for k in 1..=steps {
        s = stepper.step(&s, start + k)?;
        if k % cadence == 0 || k == steps {
            for o in observers.iter_mut() {
                o.observe(&s, start + k)?;
            }
        }
    }
    Ok(s)
}
