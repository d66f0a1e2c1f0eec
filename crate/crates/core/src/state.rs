//! Simulation state, constraint monitors and initial-data construction.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::num_complex::Complex;
use thiserror::Error;

use crate::field::{GridError, GridSpec, MatrixField, ScalarField, Spectral, VectorField};
use crate::kernels::{self, Spec};
use crate::real::Real;

#[derive(Debug, Error)]
pub enum StateError {
    #[error("initial deformation too large: max |F0 - I| = {linf:.6} exceeds 1/2")]
    AmplitudeTooLarge { linf: f64 },
    #[error("invalid initial data: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Grid(#[from] GridError),
}

/// Velocity `u`, deformation gradient `F`, time and regularization `δ`.
///
/// States produced by the solver are canonical: the grid values are
/// authoritative and the spectra are the masked (and, for `u`, projected)
/// transforms of those values. Rebuilding from the values alone therefore
/// reproduces the state bit for bit, which is what makes restarts exact.
///
/// Storing `F11 = 1 + E11` rounds the perturbation to the spacing of
/// floating-point numbers near one. Solver states keep the rounding error of
/// both diagonal entries as a correction, so the effective perturbation is
/// `(F_ii - 1) + c_ii`. Editing `f` in place discards that precision
/// silently; rebuild through a constructor instead.
#[derive(Clone, Debug)]
pub struct SimState<T: Real> {
    pub u: VectorField<T>,
    pub f: MatrixField<T>,
    pub t: f64,
    pub delta: f64,
    diag_correction: Option<Arc<[Vec<T>; 2]>>,
}

impl<T: Real> SimState<T> {
    pub fn new(u: VectorField<T>, f: MatrixField<T>, t: f64, delta: f64) -> Self {
        SimState { u, f, t, delta, diag_correction: None }
    }

    pub fn equilibrium(sp: &Arc<Spectral<T>>, delta: f64) -> Self {
        Self::new(VectorField::zeros(sp), MatrixField::identity(sp), 0.0, delta)
    }

    pub fn with_time(mut self, t: f64) -> Self {
        self.t = t;
        self
    }

    /// Canonical state from grid values ordered `u1, u2, F11, F12, F21, F22`.
    /// The spectra of `F` are taken from `F - I` so that transform round-off
    /// scales with the perturbation rather than with the identity.
    pub fn from_grid_values(sp: &Arc<Spectral<T>>, values: [Vec<T>; 6], t: f64, delta: f64) -> Self {
        Self::from_grid_values_corrected(sp, values, None, t, delta)
    }

    /// As [`from_grid_values`](Self::from_grid_values), with the diagonal
    /// corrections `[c11, c22]` (see the type docs).
    pub fn from_grid_values_corrected(
        sp: &Arc<Spectral<T>>,
        values: [Vec<T>; 6],
        correction: Option<[Vec<T>; 2]>,
        t: f64,
        delta: f64,
    ) -> Self {
        let pert: Vec<Vec<T>> = (2..6)
            .map(|c| match (c, &correction) {
                (2 | 5, Some(k)) => {
                    let lo = &k[if c == 2 { 0 } else { 1 }];
                    values[c].iter().zip(lo).map(|(&x, &l)| (x - T::one()) + l).collect()
                }
                (2 | 5, None) => values[c].iter().map(|&x| x - T::one()).collect(),
                _ => values[c].clone(),
            })
            .collect();
        let mut refs: Vec<&[T]> = vec![&values[0], &values[1]];
        refs.extend(pert.iter().map(|v| v.as_slice()));
        let mut spectra = kernels::forward_many_masked(sp, &refs);
        {
            let (a, b) = spectra.split_at_mut(1);
            kernels::project_in_place(sp, &mut a[0], &mut b[0]);
        }
        let nn = T::from_usize_lossy(sp.len());
        spectra[2][0].re = spectra[2][0].re + nn;
        spectra[5][0].re = spectra[5][0].re + nn;
        let mut fields = values.into_iter().zip(spectra).map(|(v, s)| ScalarField::from_parts(sp, v, s));
        let mut next = || fields.next().expect("six fields");
        let u = VectorField::new(next(), next());
        let f = MatrixField::new([[next(), next()], [next(), next()]]);
        SimState { u, f, t, delta, diag_correction: correction.map(Arc::new) }
    }

    /// Diagonal corrections `[c11, c22]`, if the state carries them.
    pub fn diagonal_correction(&self) -> Option<[&[T]; 2]> {
        self.diag_correction.as_ref().map(|c| [c[0].as_slice(), c[1].as_slice()])
    }

    /// Canonical state from the spectra of `u1, u2` and `E = F - I`.
    pub(crate) fn from_perturbation_spectra(
        sp: &Arc<Spectral<T>>,
        spectra: [&[Complex<T>]; 6],
        t: f64,
        delta: f64,
    ) -> Self {
        let mut vals = kernels::inverse_many(sp, &spectra);
        let mut correction: [Vec<T>; 2] = [Vec::new(), Vec::new()];
        for (slot, c) in [2, 5].into_iter().enumerate() {
            correction[slot] = vals[c]
                .iter_mut()
                .map(|x| {
                    let e = *x;
                    *x = e + T::one();
                    e - (*x - T::one())
                })
                .collect();
        }
        let mut it = vals.into_iter();
        let values = std::array::from_fn(|_| it.next().expect("six fields"));
        Self::from_grid_values_corrected(sp, values, Some(correction), t, delta)
    }

    pub fn with_delta(mut self, delta: f64) -> Self {
        self.delta = delta;
        self
    }

    pub fn spectral(&self) -> &Arc<Spectral<T>> {
        self.u.spectral()
    }

    pub fn grid(&self) -> GridSpec {
        self.spectral().grid()
    }

    pub fn components(&self) -> [&ScalarField<T>; 6] {
        let f = &self.f.c;
        [&self.u.c[0], &self.u.c[1], &f[0][0], &f[0][1], &f[1][0], &f[1][1]]
    }

    pub fn grid_values(&self) -> [&[T]; 6] {
        let c = self.components();
        crate::field::sync_values_all(&c);
        c.map(|f| f.values())
    }

    pub fn spectra(&self) -> [&[Complex<T>]; 6] {
        let c = self.components();
        crate::field::sync_spectra_all(&c);
        c.map(|f| f.spectrum())
    }

    pub(crate) fn u_spectra(&self) -> [Spec<T>; 2] {
        let s = self.spectra();
        [s[0].to_vec(), s[1].to_vec()]
    }

    /// Spectra of `E = F - I`.
    pub(crate) fn e_spectra(&self) -> [Spec<T>; 4] {
        let s = self.spectra();
        let mut e = [s[2].to_vec(), s[3].to_vec(), s[4].to_vec(), s[5].to_vec()];
        let nn = T::from_usize_lossy(self.spectral().len());
        e[0][0].re = e[0][0].re - nn;
        e[3][0].re = e[3][0].re - nn;
        e
    }

    /// Grid values of `u` followed by `E = F - I`.
    pub(crate) fn perturbation_values(&self) -> [Vec<T>; 6] {
        let v = self.grid_values();
        let lo = self.diagonal_correction();
        std::array::from_fn(|c| match (c, lo) {
            (2 | 5, Some(k)) => {
                let k = k[if c == 2 { 0 } else { 1 }];
                v[c].iter().zip(k).map(|(&x, &l)| (x - T::one()) + l).collect()
            }
            (2 | 5, None) => v[c].iter().map(|&x| x - T::one()).collect(),
            _ => v[c].to_vec(),
        })
    }

    /// `F - I` with both views consistent with the canonical state.
    pub fn perturbation(&self) -> MatrixField<T> {
        let sp = self.spectral();
        let [_, _, v11, v12, v21, v22] = self.perturbation_values();
        let [s11, s12, s21, s22] = self.e_spectra();
        MatrixField::new([
            [ScalarField::from_parts(sp, v11, s11), ScalarField::from_parts(sp, v12, s12)],
            [ScalarField::from_parts(sp, v21, s21), ScalarField::from_parts(sp, v22, s22)],
        ])
    }

    pub fn is_finite(&self) -> bool {
        self.grid_values().iter().all(|v| v.iter().all(|x| x.is_finite()))
    }
}

/// Sup-norm residuals of the kinematic constraints.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ConstraintResiduals {
    pub div_u_inf: f64,
    /// `max_i ‖∂_j F_ji‖∞`, the divergence of the columns of `F`.
    pub div_ft_inf: f64,
    pub det_drift_inf: f64,
    /// `max ‖F_lk ∂_l F_ij - F_lj ∂_l F_ik‖∞` over `i, j, k`.
    pub compat_inf: f64,
}

impl ConstraintResiduals {
    pub fn max(&self) -> f64 {
        self.div_u_inf.max(self.div_ft_inf).max(self.det_drift_inf).max(self.compat_inf)
    }
}

fn linf<T: Real>(v: &[T]) -> f64 {
    v.iter().fold(0.0f64, |m, x| {
        let a = x.to_f64_lossy().abs();
        if a.is_nan() || m.is_nan() {
            f64::NAN
        } else {
            m.max(a)
        }
    })
}

pub fn constraint_residuals<T: Real>(s: &SimState<T>) -> ConstraintResiduals {
    let sp = s.spectral();
    let spec = s.spectra();
    let du = kernels::grad_values(sp, &[spec[0].to_vec(), spec[1].to_vec()]);
    let div_u: Vec<T> = du[0].iter().zip(&du[3]).map(|(&a, &b)| a + b).collect();
    let fs = s.e_spectra();
    let g = kernels::matrix_grad_values(sp, &fs);
    let fv = s.grid_values();
    let f = [fv[2], fv[3], fv[4], fv[5]];
    let len = sp.len();
    let (mut div_ft, mut det, mut compat) = (0.0f64, 0.0f64, 0.0f64);
    let upd = |m: &mut f64, x: T| {
        let a = x.to_f64_lossy().abs();
        *m = if a.is_nan() || m.is_nan() { f64::NAN } else { m.max(a) };
    };
    for p in 0..len {
        // ∂_l F_ij = g[l][2i+j]
        for i in 0..2 {
            upd(&mut div_ft, g[0][i][p] + g[1][2 + i][p]);
        }
        upd(&mut det, f[0][p] * f[3][p] - f[1][p] * f[2][p] - T::one());
        for i in 0..2 {
            for j in 0..2 {
                for k in 0..2 {
                    if j == k {
                        continue;
                    }
                    let mut r = T::zero();
                    for l in 0..2 {
                        r = r + f[2 * l + k][p] * g[l][2 * i + j][p] - f[2 * l + j][p] * g[l][2 * i + k][p];
                    }
                    upd(&mut compat, r);
                }
            }
        }
    }
    ConstraintResiduals { div_u_inf: linf(&div_u), div_ft_inf: div_ft, det_drift_inf: det, compat_inf: compat }
}

/// Prescribed divergence-free velocity used to manufacture `F0`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum PreflowVelocity {
    /// `(sin x2, sin x1)`.
    Cellular,
    /// Random stream-function field on the initial-data band.
    Random { seed: u64 },
}

impl std::fmt::Display for PreflowVelocity {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            PreflowVelocity::Cellular => write!(f, "cellular"),
            PreflowVelocity::Random { seed } => write!(f, "random:{seed}"),
        }
    }
}

impl std::str::FromStr for PreflowVelocity {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        if s == "cellular" {
            return Ok(PreflowVelocity::Cellular);
        }
        match s.strip_prefix("random:") {
            Some(seed) => seed
                .parse()
                .map(|seed| PreflowVelocity::Random { seed })
                .map_err(|_| format!("bad preflow seed in {s:?}")),
            None => Err(format!("unknown preflow velocity {s:?} (expected cellular or random:<seed>)")),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct InitialDataSpec {
    /// Scales both `u0` and the preflow velocity.
    pub amplitude: f64,
    pub seed: u64,
    /// Wavenumber shell `kmin ≤ |k| ≤ kmax` of the random velocity.
    pub band: (f64, f64),
    pub preflow_time: f64,
    pub preflow_velocity: PreflowVelocity,
    pub preflow_dt: f64,
}

impl Default for InitialDataSpec {
    fn default() -> Self {
        InitialDataSpec {
            amplitude: 0.1,
            seed: 1,
            band: (1.0, 2.0),
            preflow_time: 1.0,
            preflow_velocity: PreflowVelocity::Cellular,
            preflow_dt: 1e-3,
        }
    }
}

impl InitialDataSpec {
    pub fn validate(&self) -> Result<(), StateError> {
        let bad = |m: &str| Err(StateError::InvalidSpec(m.into()));
        if !(self.amplitude >= 0.0 && self.amplitude.is_finite()) {
            return bad("amplitude must be finite and >= 0");
        }
        if !(self.preflow_time >= 0.0 && self.preflow_time.is_finite()) {
            return bad("preflow_time must be finite and >= 0");
        }
        if !(self.preflow_dt > 0.0) {
            return bad("preflow_dt must be > 0");
        }
        let (lo, hi) = self.band;
        if !(lo >= 0.0 && hi >= lo && hi >= 1.0) {
            return bad("band must satisfy 0 <= kmin <= kmax, kmax >= 1");
        }
        Ok(())
    }
}

/// Random solenoidal field `∇⊥ψ` with `ψ` supported on the shell, normalized
/// to `∫|v|² = energy`.
pub fn random_solenoidal<T: Real>(sp: &Arc<Spectral<T>>, band: (f64, f64), seed: u64, energy: f64) -> VectorField<T> {
    let g = sp.grid();
    let kmax = band.1.floor() as i64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut psi = vec![kernels::czero::<T>(); sp.len()];
    let nn = T::from_usize_lossy(sp.len());
    for k1 in 0..=kmax {
        for k2 in -kmax..=kmax {
            if k1 == 0 && k2 <= 0 {
                continue;
            }
            let r = ((k1 * k1 + k2 * k2) as f64).sqrt();
            let a: f64 = rng.random_range(-1.0..1.0);
            let b: f64 = rng.random_range(-1.0..1.0);
            if r < band.0 || r > band.1 || !g.is_retained(k1, k2) {
                continue;
            }
            let c = Complex::new(T::lit(a), T::lit(b)) * nn;
            let (i1, i2) = (g.index_of(k1).unwrap(), g.index_of(k2).unwrap());
            let (j1, j2) = (g.index_of(-k1).unwrap(), g.index_of(-k2).unwrap());
            psi[i1 * g.n() + i2] = c;
            psi[j1 * g.n() + j2] = c.conj();
        }
    }
    let u1: Vec<Complex<T>> = kernels::deriv(sp, &psi, 1).into_iter().map(|c| -c).collect();
    let u2 = kernels::deriv(sp, &psi, 0);
    let v = VectorField::new(ScalarField::from_spectrum(sp, u1), ScalarField::from_spectrum(sp, u2));
    let e = v.l2_norm_sq().to_f64_lossy();
    if e == 0.0 {
        return v;
    }
    v.scale(T::lit((energy / e).sqrt()))
}

fn preflow_profile<T: Real>(sp: &Arc<Spectral<T>>, spec: &InitialDataSpec) -> VectorField<T> {
    let v = match spec.preflow_velocity {
        PreflowVelocity::Cellular => VectorField::from_fn(sp, |x1, x2| [x2.sin(), x1.sin()]),
        PreflowVelocity::Random { seed } => {
            random_solenoidal(sp, spec.band, seed, 4.0 * std::f64::consts::PI.powi(2))
        }
    };
    v.scale(T::lit(spec.amplitude))
}

/// Evolve `F` from `I` under a steady velocity `v` for time `t_end` with
/// classical RK4; returns the spectra of `E = F - I`.
pub(crate) fn transport_from_identity<T: Real>(
    sp: &Arc<Spectral<T>>,
    v: &VectorField<T>,
    t_end: f64,
    dt: f64,
) -> [Spec<T>; 4] {
    let mut e: [Spec<T>; 4] = std::array::from_fn(|_| vec![kernels::czero(); sp.len()]);
    if t_end <= 0.0 {
        return e;
    }
    v.sync_values();
    let vv = [v.c[0].values().to_vec(), v.c[1].values().to_vec()];
    let gv = kernels::grad_values(sp, &[v.c[0].spectrum().to_vec(), v.c[1].spectrum().to_vec()]);
    let tend = |e: &[Spec<T>; 4]| {
        let refs: Vec<&[Complex<T>]> = e.iter().map(|x| x.as_slice()).collect();
        let mut it = kernels::inverse_many(sp, &refs).into_iter();
        let ev: [Vec<T>; 4] = std::array::from_fn(|_| it.next().unwrap());
        let ge = kernels::matrix_grad_values(sp, e);
        kernels::transport_tendency(sp, &vv, &gv, &ev, Some(&ge), true)
    };
    let axpy = |y: &[Spec<T>; 4], h: T, k: &[Spec<T>; 4]| -> [Spec<T>; 4] {
        std::array::from_fn(|c| y[c].iter().zip(&k[c]).map(|(&a, &b)| a + b * h).collect())
    };
    let steps = (t_end / dt).ceil().max(1.0) as usize;
    let h = t_end / steps as f64;
    let (ht, half, sixth) = (T::lit(h), T::lit(0.5 * h), T::lit(h / 6.0));
    for _ in 0..steps {
        let k1 = tend(&e);
        let k2 = tend(&axpy(&e, half, &k1));
        let k3 = tend(&axpy(&e, half, &k2));
        let k4 = tend(&axpy(&e, ht, &k3));
        let two = T::lit(2.0);
        e = std::array::from_fn(|c| {
            (0..sp.len())
                .map(|i| e[c][i] + (k1[c][i] + (k2[c][i] + k3[c][i]) * two + k4[c][i]) * sixth)
                .collect()
        });
    }
    e
}

pub fn preflow_init<T: Real>(spec: &InitialDataSpec, grid: GridSpec) -> Result<SimState<T>, StateError> {
    preflow_init_on(spec, &Spectral::new(grid))
}

/// Initial state on an existing transform context: `u0` is an independent
/// random solenoidal field of energy `amplitude²`, `F0` the deformation
/// gradient of the preflow after `preflow_time`.
pub fn preflow_init_on<T: Real>(spec: &InitialDataSpec, sp: &Arc<Spectral<T>>) -> Result<SimState<T>, StateError> {
    spec.validate()?;
    let u0 = random_solenoidal(sp, spec.band, spec.seed, 1.0).scale(T::lit(spec.amplitude));
    let e = if spec.preflow_time > 0.0 && spec.amplitude > 0.0 {
        transport_from_identity(sp, &preflow_profile(sp, spec), spec.preflow_time, spec.preflow_dt)
    } else {
        std::array::from_fn(|_| vec![kernels::czero(); sp.len()])
    };
    let us = [u0.c[0].spectrum().to_vec(), u0.c[1].spectrum().to_vec()];
    let s = SimState::from_perturbation_spectra(sp, [&us[0], &us[1], &e[0], &e[1], &e[2], &e[3]], 0.0, 0.0);
    let linf = s.perturbation().linf_frobenius().to_f64_lossy();
    if !(linf <= 0.5) {
        return Err(StateError::AmplitudeTooLarge { linf });
    }
    Ok(s)
}

/// `ε0 = ‖F0 - I‖²∞ + ∫(|F0 - I|² + |u0|²)`.
pub fn epsilon0<T: Real>(s: &SimState<T>) -> f64 {
    let e = s.perturbation();
    let sup = e.linf_frobenius().to_f64_lossy();
    sup * sup + e.l2_norm_sq().to_f64_lossy() + s.u.l2_norm_sq().to_f64_lossy()
}

/// Amplitude giving `ε0 = target` (relative tolerance 1e-8), found by a
/// secant iteration in log-log coordinates.
pub fn calibrate_amplitude<T: Real>(
    spec: &InitialDataSpec,
    sp: &Arc<Spectral<T>>,
    target: f64,
) -> Result<f64, StateError> {
    if !(target > 0.0) {
        return Err(StateError::InvalidSpec("target epsilon0 must be > 0".into()));
    }
    let eval = |a: f64| -> Result<f64, StateError> {
        let s = preflow_init_on(&InitialDataSpec { amplitude: a, ..spec.clone() }, sp)?;
        Ok(epsilon0(&s))
    };
    let lt = target.ln();
    let mut a0 = if spec.amplitude > 0.0 { spec.amplitude } else { 0.1 };
    let mut e0 = loop {
        match eval(a0) {
            Ok(e) if e > 0.0 => break e,
            Ok(_) => return Err(StateError::InvalidSpec("epsilon0 vanishes for every amplitude".into())),
            Err(StateError::AmplitudeTooLarge { .. }) if a0 > 1e-12 => a0 *= 0.5,
            Err(err) => return Err(err),
        }
    };
    let mut a1 = a0 * (target / e0).sqrt();
    for _ in 0..60 {
        let e1 = match eval(a1) {
            Ok(e) => e,
            Err(StateError::AmplitudeTooLarge { .. }) => {
                a1 = 0.5 * (a0 + a1);
                continue;
            }
            Err(err) => return Err(err),
        };
        if (e1 / target - 1.0).abs() < 1e-8 {
            return Ok(a1);
        }
        let (la0, la1, le0, le1) = (a0.ln(), a1.ln(), e0.ln(), e1.ln());
        let slope = if (le1 - le0).abs() > 1e-14 { (la1 - la0) / (le1 - le0) } else { 0.5 };
        let next = (la1 + (lt - le1) * slope).exp();
        a0 = a1;
        e0 = e1;
        a1 = next;
    }
    Err(StateError::InvalidSpec(format!("amplitude calibration for epsilon0 = {target} did not converge")))
}
