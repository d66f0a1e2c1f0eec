//! Particle paths `dx/dt = u(x, t)` and Lagrangian checks on `F`.
//!
//! Velocities are evaluated off-grid by direct Fourier summation over the
//! retained modes, which is exact to round-off; the cost per point is
//! `O(n²)`, fine for a few hundred seeds. Between snapshots the spectra are
//! interpolated in time by cubic Lagrange polynomials through four
//! neighbouring snapshots.

use std::collections::VecDeque;
use std::f64::consts::TAU;
use std::io;

use rustfft::num_complex::Complex;
use thiserror::Error;

use crate::dynamics::Observer;
use crate::field::Spectral;
use crate::mat2::{self, Mat2};
use crate::real::Real;
use crate::state::SimState;

#[derive(Clone, Debug, Error, PartialEq)]
pub enum TrajectoryError {
    #[error("snapshot cadence too coarse: {0}")]
    CadenceTooCoarse(String),
    #[error("|F - I| = {norm:.6} exceeds 1/2 for seed {seed} at t = {t}")]
    PrerequisiteViolated { seed: usize, t: f64, norm: f64 },
    #[error("invalid input: {0}")]
    InvalidInput(String),
}

/// Wrap a coordinate into `[0, 2π)`.
pub fn wrap(x: f64) -> f64 {
    let w = x.rem_euclid(TAU);
    if w >= TAU {
        0.0
    } else {
        w
    }
}

/// Signed periodic difference `b - a` mapped into `[-π, π)`.
pub fn periodic_delta(a: f64, b: f64) -> f64 {
    (b - a + std::f64::consts::PI).rem_euclid(TAU) - std::f64::consts::PI
}

/// Snapshot reduced to what path integration needs: spectra of `u` and
/// `E = F - I` as `f64`.
#[derive(Clone, Debug)]
struct Snap {
    t: f64,
    spec: [Vec<Complex<f64>>; 6],
}

impl Snap {
    fn of<T: Real>(s: &SimState<T>) -> Self {
        let u = s.u_spectra();
        let e = s.e_spectra();
        let conv = |v: &[Complex<T>]| v.iter().map(|z| Complex::new(z.re.to_f64_lossy(), z.im.to_f64_lossy())).collect();
        Snap { t: s.t, spec: [conv(&u[0]), conv(&u[1]), conv(&e[0]), conv(&e[1]), conv(&e[2]), conv(&e[3])] }
    }
}

/// Sample of `u`, `∇u` and `E` at a point.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct PointSample {
    pub u: [f64; 2],
    pub grad_u: Mat2<f64>,
    pub e: Mat2<f64>,
}

/// Direct-summation evaluator over the retained modes of one grid.
#[derive(Clone, Debug)]
struct Evaluator {
    n: usize,
    /// retained 1D indices with their wavenumber and derivative symbol
    modes: Vec<(usize, f64, f64)>,
}

impl Evaluator {
    fn new<T: Real>(sp: &Spectral<T>) -> Self {
        let n = sp.n();
        let g = sp.grid();
        let cut = g.cutoff() as i64;
        let modes = (0..n)
            .filter(|&m| g.wavenumber(m).abs() <= cut)
            .map(|m| (m, g.wavenumber(m) as f64, sp.kd(m).to_f64_lossy()))
            .collect();
        Evaluator { n, modes }
    }

    fn phases(&self, x: f64) -> Vec<Complex<f64>> {
        self.modes.iter().map(|&(_, k, _)| Complex::from_polar(1.0, k * x)).collect()
    }

    /// Value and both partial derivatives of each spectrum at `x`.
    fn eval(&self, spectra: &[&[Complex<f64>]], x: [f64; 2]) -> Vec<[f64; 3]> {
        let (p1, p2) = (self.phases(x[0]), self.phases(x[1]));
        let scale = 1.0 / (self.n * self.n) as f64;
        spectra
            .iter()
            .map(|hat| {
                let (mut v, mut d1, mut d2) = (Complex::new(0.0, 0.0), Complex::new(0.0, 0.0), Complex::new(0.0, 0.0));
                for (a, &(m1, _, kd1)) in self.modes.iter().enumerate() {
                    let row = &hat[m1 * self.n..(m1 + 1) * self.n];
                    let (mut s, mut s2) = (Complex::new(0.0, 0.0), Complex::new(0.0, 0.0));
                    for (b, &(m2, _, kd2)) in self.modes.iter().enumerate() {
                        let term = row[m2] * p2[b];
                        s += term;
                        s2 += term * kd2;
                    }
                    let w = p1[a];
                    v += w * s;
                    d1 += w * s * kd1;
                    d2 += w * s2;
                }
                // i·k factors of the derivatives
                [v.re * scale, -d1.im * scale, -d2.im * scale]
            })
            .collect()
    }

    fn sample(&self, spec: &[Vec<Complex<f64>>; 6], x: [f64; 2]) -> PointSample {
        let refs: Vec<&[Complex<f64>]> = spec.iter().map(|v| v.as_slice()).collect();
        let r = self.eval(&refs, x);
        PointSample {
            u: [r[0][0], r[1][0]],
            grad_u: [[r[0][1], r[0][2]], [r[1][1], r[1][2]]],
            e: [[r[2][0], r[3][0]], [r[4][0], r[5][0]]],
        }
    }

    /// Velocity and its gradient only.
    fn velocity(&self, spec: &[Vec<Complex<f64>>; 6], x: [f64; 2]) -> ([f64; 2], Mat2<f64>) {
        let r = self.eval(&[&spec[0], &spec[1]], x);
        ([r[0][0], r[1][0]], [[r[0][1], r[0][2]], [r[1][1], r[1][2]]])
    }
}

/// Cubic Lagrange weights at `t` for the nodes `ts`.
fn lagrange_weights(ts: &[f64; 4], t: f64) -> [f64; 4] {
    std::array::from_fn(|i| {
        let mut w = 1.0;
        for j in 0..4 {
            if j != i {
                w *= (t - ts[j]) / (ts[i] - ts[j]);
            }
        }
        w
    })
}

fn interpolate(nodes: &[&Snap; 4], t: f64) -> [Vec<Complex<f64>>; 6] {
    let ts = [nodes[0].t, nodes[1].t, nodes[2].t, nodes[3].t];
    let w = lagrange_weights(&ts, t);
    std::array::from_fn(|c| {
        let len = nodes[0].spec[c].len();
        (0..len)
            .map(|i| nodes[0].spec[c][i] * w[0] + nodes[1].spec[c][i] * w[1] + nodes[2].spec[c][i] * w[2] + nodes[3].spec[c][i] * w[3])
            .collect()
    })
}

/// Paths, Lagrangian `F` and Eulerian samples for a set of seeds, sampled at
/// every snapshot time. Indexing is `[time][seed]`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrajectoryBundle {
    pub mu: f64,
    pub seeds: Vec<[f64; 2]>,
    pub times: Vec<f64>,
    /// Wrapped into `[0, 2π)²`.
    pub positions: Vec<Vec<[f64; 2]>>,
    /// `F` integrated along the path, `dF/dt = ∇u(x(t), t) F`.
    pub f_path: Vec<Vec<Mat2<f64>>>,
    /// Eulerian `F(x(t), t)`.
    pub f_euler: Vec<Vec<Mat2<f64>>>,
    /// `∇u(x(t), t)`.
    pub grad_u: Vec<Vec<Mat2<f64>>>,
    /// `𝔊 = μ∇u + F - I` at `x(t)` from the Eulerian fields.
    pub gf_path: Vec<Vec<Mat2<f64>>>,
}

pub const TRAJECTORY_COLUMNS: [&str; 16] = [
    "seed", "t", "x1", "x2", "f11", "f12", "f21", "f22", "fe11", "fe12", "fe21", "fe22", "gf11", "gf12", "gf21", "gf22",
];

impl TrajectoryBundle {
    /// Flat rows in [`TRAJECTORY_COLUMNS`] order, per seed per time.
    pub fn rows(&self) -> Vec<Vec<f64>> {
        let mut out = Vec::with_capacity(self.times.len() * self.seeds.len());
        for (k, &t) in self.times.iter().enumerate() {
            for s in 0..self.seeds.len() {
                let (x, f, fe, g) = (self.positions[k][s], self.f_path[k][s], self.f_euler[k][s], self.gf_path[k][s]);
                let mut r = vec![s as f64, t, x[0], x[1]];
                for m in [f, fe, g] {
                    r.extend([m[0][0], m[0][1], m[1][0], m[1][1]]);
                }
                out.push(r);
            }
        }
        out
    }

    /// `max |F_path - F_euler| / max(1, |F_euler|)` over all samples
    /// (Frobenius norms).
    pub fn route_difference(&self) -> f64 {
        let mut worst = 0.0f64;
        for (a, b) in self.f_path.iter().flatten().zip(self.f_euler.iter().flatten()) {
            let d = mat2::frobenius(&mat2::sub(a, b)) / mat2::frobenius(b).max(1.0);
            worst = if d.is_nan() { f64::NAN } else { worst.max(d) };
        }
        worst
    }
}

struct SeedState {
    x: [f64; 2],
    f: Mat2<f64>,
}

/// Streaming tracer: observe the snapshots of a run in time order (every
/// step, or any uniform cadence) and call [`finish`](Self::finish).
pub struct TrajectoryTracer {
    mu: f64,
    substeps: usize,
    eval: Option<Evaluator>,
    window: VecDeque<Snap>,
    seen: usize,
    spacing: Option<f64>,
    max_speed: f64,
    grid_h: f64,
    seeds: Vec<SeedState>,
    bundle: TrajectoryBundle,
    error: Option<TrajectoryError>,
}

impl TrajectoryTracer {
    /// `substeps` RK4 steps per snapshot interval.
    pub fn new(seeds: &[[f64; 2]], mu: f64, substeps: usize) -> Self {
        let seeds_w: Vec<[f64; 2]> = seeds.iter().map(|x| [wrap(x[0]), wrap(x[1])]).collect();
        TrajectoryTracer {
            mu,
            substeps: substeps.max(1),
            eval: None,
            window: VecDeque::with_capacity(4),
            seen: 0,
            spacing: None,
            max_speed: 0.0,
            grid_h: 0.0,
            seeds: seeds_w.iter().map(|&x| SeedState { x, f: mat2::identity() }).collect(),
            bundle: TrajectoryBundle { mu, seeds: seeds_w, ..Default::default() },
            error: None,
        }
    }

    fn record(&mut self, spec: &[Vec<Complex<f64>>; 6], t: f64) {
        let ev = self.eval.as_ref().expect("initialized");
        let mut pos = Vec::with_capacity(self.seeds.len());
        let (mut fp, mut fe, mut gu, mut gf) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
        for s in &self.seeds {
            let p = ev.sample(spec, s.x);
            let f_e = mat2::add(&p.e, &mat2::identity());
            pos.push(s.x);
            fp.push(s.f);
            fe.push(f_e);
            gu.push(p.grad_u);
            gf.push(mat2::add(&mat2::scale(&p.grad_u, self.mu), &p.e));
        }
        self.bundle.times.push(t);
        self.bundle.positions.push(pos);
        self.bundle.f_path.push(fp);
        self.bundle.f_euler.push(fe);
        self.bundle.grad_u.push(gu);
        self.bundle.gf_path.push(gf);
    }

    /// Advance every seed across `[nodes[a].t, nodes[a + 1].t]`.
    fn advance(&mut self, a: usize) {
        let nodes: [&Snap; 4] = [&self.window[0], &self.window[1], &self.window[2], &self.window[3]];
        let (t0, t1) = (nodes[a].t, nodes[a + 1].t);
        let h = (t1 - t0) / self.substeps as f64;
        let ev = self.eval.as_ref().expect("initialized");
        for k in 0..self.substeps {
            let ta = t0 + k as f64 * h;
            let sa = interpolate(&nodes, ta);
            let sm = interpolate(&nodes, ta + 0.5 * h);
            let sb = if k + 1 == self.substeps { nodes[a + 1].spec.clone() } else { interpolate(&nodes, ta + h) };
            for s in self.seeds.iter_mut() {
                let (x, f) = (s.x, s.f);
                let shift = |x: [f64; 2], v: [f64; 2], w: f64| [x[0] + w * v[0], x[1] + w * v[1]];
                let (v1, g1) = ev.velocity(&sa, x);
                let k1f = mat2::mul(&g1, &f);
                let (v2, g2) = ev.velocity(&sm, shift(x, v1, 0.5 * h));
                let f2 = mat2::add(&f, &mat2::scale(&k1f, 0.5 * h));
                let k2f = mat2::mul(&g2, &f2);
                let (v3, g3) = ev.velocity(&sm, shift(x, v2, 0.5 * h));
                let f3 = mat2::add(&f, &mat2::scale(&k2f, 0.5 * h));
                let k3f = mat2::mul(&g3, &f3);
                let (v4, g4) = ev.velocity(&sb, shift(x, v3, h));
                let f4 = mat2::add(&f, &mat2::scale(&k3f, h));
                let k4f = mat2::mul(&g4, &f4);
                let w = h / 6.0;
                s.x = [
                    wrap(x[0] + w * (v1[0] + 2.0 * v2[0] + 2.0 * v3[0] + v4[0])),
                    wrap(x[1] + w * (v1[1] + 2.0 * v2[1] + 2.0 * v3[1] + v4[1])),
                ];
                let incr = mat2::add(&mat2::add(&k1f, &mat2::scale(&mat2::add(&k2f, &k3f), 2.0)), &k4f);
                s.f = mat2::add(&f, &mat2::scale(&incr, w));
            }
        }
        let end = nodes[a + 1].spec.clone();
        self.record(&end, t1);
    }

    fn push(&mut self, snap: Snap) -> Result<(), TrajectoryError> {
        let u_lin: f64 = snap.spec[0].iter().chain(&snap.spec[1]).map(|z| z.norm()).sum::<f64>()
            / (self.eval.as_ref().expect("initialized").n.pow(2)) as f64;
        self.max_speed = self.max_speed.max(u_lin);
        if let Some(prev) = self.window.back() {
            let d = snap.t - prev.t;
            match self.spacing {
                None => self.spacing = Some(d),
                Some(h) if (d - h).abs() > 1e-9 * h.abs().max(1e-300) => {
                    return Err(TrajectoryError::InvalidInput(format!("non-uniform snapshot spacing {d} vs {h}")))
                }
                _ => {}
            }
            if !(d.abs() > 0.0) {
                return Err(TrajectoryError::InvalidInput("repeated snapshot time".into()));
            }
            // a particle must not cross more than one cell between snapshots
            if d.abs() * self.max_speed > self.grid_h {
                return Err(TrajectoryError::CadenceTooCoarse(format!(
                    "spacing {} with speed bound {:.3e} exceeds cell size {:.3e}",
                    d.abs(),
                    self.max_speed,
                    self.grid_h
                )));
            }
        }
        if self.window.len() == 4 {
            self.window.pop_front();
        }
        self.window.push_back(snap);
        self.seen += 1;
        match self.seen {
            1 => {
                let first = self.window[0].spec.clone();
                let ev = self.eval.as_ref().expect("initialized");
                for s in self.seeds.iter_mut() {
                    s.f = mat2::add(&ev.sample(&first, s.x).e, &mat2::identity());
                }
                let t = self.window[0].t;
                self.record(&first, t);
            }
            4 => {
                self.advance(0);
                self.advance(1);
            }
            k if k > 4 => self.advance(1),
            _ => {}
        }
        Ok(())
    }

    pub fn observe_state<T: Real>(&mut self, s: &SimState<T>) -> Result<(), TrajectoryError> {
        if let Some(e) = &self.error {
            return Err(e.clone());
        }
        if self.eval.is_none() {
            self.eval = Some(Evaluator::new(s.spectral()));
            self.grid_h = s.grid().spacing();
        }
        let r = self.push(Snap::of(s));
        if let Err(e) = &r {
            self.error = Some(e.clone());
        }
        r
    }

    /// Integrate the remaining interval and return the bundle.
    pub fn finish(mut self) -> Result<TrajectoryBundle, TrajectoryError> {
        if let Some(e) = self.error.take() {
            return Err(e);
        }
        match self.seen {
            0 => Err(TrajectoryError::InvalidInput("no snapshots".into())),
            1 => Ok(self.bundle),
            2 | 3 => Err(TrajectoryError::CadenceTooCoarse(format!(
                "{} snapshots; cubic interpolation needs at least 4",
                self.seen
            ))),
            _ => {
                self.advance(2);
                Ok(self.bundle)
            }
        }
    }
}

impl<T: Real> Observer<T> for TrajectoryTracer {
    fn observe(&mut self, s: &SimState<T>, _step: u64) -> io::Result<()> {
        self.observe_state(s).map_err(io::Error::other)
    }
}

/// Trace `seeds` through stored snapshots (uniform spacing, time order).
pub fn advect<T: Real>(
    seeds: &[[f64; 2]],
    snapshots: &[SimState<T>],
    substeps: usize,
    mu: f64,
) -> Result<TrajectoryBundle, TrajectoryError> {
    let mut tr = TrajectoryTracer::new(seeds, mu, substeps);
    for s in snapshots {
        tr.observe_state(s)?;
    }
    tr.finish()
}

/// Per-seed outcome of [`pathwise_identity_check`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SeedReport {
    /// `max_t |d/dt(F-I) + (F-I) - 𝔊F + (F-I)² - (1-μ)∇uF|` with the time
    /// derivative from centered differences of the Eulerian `F(x(t), t)`.
    pub identity_residual: f64,
    /// Smallest slack of `4|𝔊||F||E|³ + 4|E|⁵ - (d/dt|E|⁴ + 4|E|⁴)`,
    /// negative means the chain fails.
    pub chain_slack: f64,
    /// Largest `(d/dt|E|⁴ + |E|⁴) / |𝔊|⁴` seen.
    pub tightest_constant: f64,
    /// Number of samples violating `d/dt|E|⁴ + |E|⁴ ≤ 27|F|⁴|𝔊|⁴`.
    pub violations: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PathwiseReport {
    pub seeds: Vec<SeedReport>,
    pub max_identity_residual: f64,
    pub tightest_constant: f64,
    pub total_violations: usize,
}

/// Evaluate the pathwise identity for `F - I` and the differential
/// inequality for `|F - I|⁴` along every stored path.
///
/// The inequality is checked in two forms. The first is the chain
/// `d/dt|E|⁴ + 4|E|⁴ ≤ 4|𝔊||F||E|³ + 4|E|⁵` (plus `4|1-μ||∇u||F||E|³`).
/// The second is the closed bound `d/dt|E|⁴ + |E|⁴ ≤ 27|F|⁴|𝔊|⁴`, which
/// follows from the chain under `|E| ≤ 1/2` via `4|E|⁵ ≤ 2|E|⁴` and Young's
/// inequality `4a|𝔊||E|³ ≤ |E|⁴ + 27a⁴|𝔊|⁴`.
/// Here `E = F - I` is the Eulerian field at the particle and `|·|` is the
/// Frobenius norm. `d/dt|E|⁴ = 4|E|² E : ∇uF` is evaluated exactly, not
/// differenced, so the inequality check carries no time-step error.
pub fn pathwise_identity_check(b: &TrajectoryBundle) -> Result<PathwiseReport, TrajectoryError> {
    let id = mat2::identity::<f64>();
    for (k, row) in b.f_euler.iter().enumerate() {
        for (s, f) in row.iter().enumerate() {
            let norm = mat2::frobenius(&mat2::sub(f, &id));
            if !(norm <= 0.5) {
                return Err(TrajectoryError::PrerequisiteViolated { seed: s, t: b.times[k], norm });
            }
        }
    }
    let nt = b.times.len();
    let mut seeds = Vec::with_capacity(b.seeds.len());
    for s in 0..b.seeds.len() {
        let mut rep = SeedReport { identity_residual: 0.0, chain_slack: f64::INFINITY, tightest_constant: 0.0, violations: 0 };
        for k in 0..nt {
            let f = b.f_euler[k][s];
            let e = mat2::sub(&f, &id);
            let g = b.gf_path[k][s];
            let gu = b.grad_u[k][s];
            let guf = mat2::mul(&gu, &f);
            let rhs_id = mat2::add(
                &mat2::sub(&mat2::mul(&g, &f), &mat2::mul(&e, &e)),
                &mat2::scale(&guf, 1.0 - b.mu),
            );
            if k > 0 && k + 1 < nt {
                let dt = b.times[k + 1] - b.times[k - 1];
                let de = mat2::scale(&mat2::sub(&b.f_euler[k + 1][s], &b.f_euler[k - 1][s]), 1.0 / dt);
                let r = mat2::frobenius(&mat2::sub(&mat2::add(&de, &e), &rhs_id));
                rep.identity_residual = rep.identity_residual.max(r);
            }
            let (ne, nf, ng) = (mat2::frobenius(&e), mat2::frobenius(&f), mat2::frobenius(&g));
            let d4 = 4.0 * ne * ne * mat2::inner(&e, &guf);
            let e4 = ne.powi(4);
            let chain = 4.0 * ng * nf * ne.powi(3)
                + 4.0 * ne.powi(5)
                + 4.0 * (1.0 - b.mu).abs() * mat2::frobenius(&gu) * nf * ne.powi(3);
            let tol = 1e-12 * (chain.abs() + e4);
            rep.chain_slack = rep.chain_slack.min(chain - (d4 + 4.0 * e4) + tol);
            let lhs = d4 + e4;
            let bound = 27.0 * nf.powi(4) * ng.powi(4);
            if lhs > bound + 1e-12 * (bound + e4) {
                rep.violations += 1;
            }
            if ng > 0.0 {
                rep.tightest_constant = rep.tightest_constant.max(lhs / ng.powi(4));
            }
        }
        seeds.push(rep);
    }
    Ok(PathwiseReport {
        max_identity_residual: seeds.iter().map(|r| r.identity_residual).fold(0.0, f64::max),
        tightest_constant: seeds.iter().map(|r| r.tightest_constant).fold(0.0, f64::max),
        total_violations: seeds.iter().map(|r| r.violations).sum(),
        seeds,
    })
}

/// Jacobian determinant of the flow map from seed triads
/// `(X, X + h e1, X + h e2)` at the last stored time.
pub fn triad_jacobians(b: &TrajectoryBundle, triads: &[[usize; 3]], h: f64) -> Vec<f64> {
    let Some(last) = b.positions.last() else {
        return Vec::new();
    };
    triads
        .iter()
        .map(|&[o, a, c]| {
            let d = |i: usize| [periodic_delta(last[o][0], last[i][0]) / h, periodic_delta(last[o][1], last[i][1]) / h];
            let (p, q) = (d(a), d(c));
            p[0] * q[1] - p[1] * q[0]
        })
        .collect()
}
