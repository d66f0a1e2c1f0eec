//! Exact spectral differential and nonlocal operators.
//!
//! Conventions: `(∇v)_ij = ∂_j v_i`, `(div M)_i = ∂_j M_ij` (row divergence),
//! and `curl_curl v := ∇ div v - Δv`, applied row-wise to matrix fields.

use std::sync::Arc;

use rustfft::num_complex::Complex;

use super::fields::{sync_spectra_all, sync_values_all, MatrixField, ScalarField, VectorField};
use super::spectral::Spectral;
use crate::real::Real;

const MEAN_WARN: f64 = 1e-13;

fn zero<T: Real>() -> Complex<T> {
    Complex::new(T::zero(), T::zero())
}

/// Multiply by `i * kd_axis`.
fn deriv_spectrum<T: Real>(f: &ScalarField<T>, axis: usize) -> Vec<Complex<T>> {
    let sp = f.spectral();
    let n = sp.n();
    f.spectrum()
        .iter()
        .enumerate()
        .map(|(i, &c)| {
            let k = if axis == 0 { sp.kd(i / n) } else { sp.kd(i % n) };
            Complex::new(-c.im * k, c.re * k)
        })
        .collect()
}

pub fn partial<T: Real>(f: &ScalarField<T>, axis: usize) -> ScalarField<T> {
    ScalarField::from_spectrum(f.spectral(), deriv_spectrum(f, axis))
}

pub fn gradient<T: Real>(f: &ScalarField<T>) -> VectorField<T> {
    VectorField::new(partial(f, 0), partial(f, 1))
}

pub fn divergence<T: Real>(v: &VectorField<T>) -> ScalarField<T> {
    v.sync_spectra();
    let sp = v.spectral();
    let n = sp.n();
    let (a, b) = (v.c[0].spectrum(), v.c[1].spectrum());
    let out = (0..sp.len())
        .map(|i| {
            let s = a[i] * sp.kd(i / n) + b[i] * sp.kd(i % n);
            Complex::new(-s.im, s.re)
        })
        .collect();
    ScalarField::from_spectrum(sp, out)
}

/// `(div M)_i = ∂_j M_ij`.
pub fn matrix_divergence<T: Real>(m: &MatrixField<T>) -> VectorField<T> {
    m.sync_spectra();
    VectorField::new(divergence(&m.row(0)), divergence(&m.row(1)))
}

/// `(∇v)_ij = ∂_j v_i`.
pub fn vector_gradient<T: Real>(v: &VectorField<T>) -> MatrixField<T> {
    v.sync_spectra();
    MatrixField::from_rows(gradient(&v.c[0]), gradient(&v.c[1]))
}

/// Row-wise gradient of a matrix field: `out[k][i][j] = ∂_k M_ij`.
pub fn matrix_gradient<T: Real>(m: &MatrixField<T>) -> [MatrixField<T>; 2] {
    m.sync_spectra();
    [m.map(|f| partial(f, 0)), m.map(|f| partial(f, 1))]
}

pub fn laplacian<T: Real>(f: &ScalarField<T>) -> ScalarField<T> {
    let sp = f.spectral().clone();
    let out = f.spectrum().iter().enumerate().map(|(i, &c)| c * (-sp.k2(i))).collect();
    ScalarField::from_spectrum(&sp, out)
}

/// Componentwise operators that act the same on every scalar component.
pub trait Componentwise<T: Real>: Sized {
    fn map_components(&self, f: &dyn Fn(&ScalarField<T>) -> ScalarField<T>) -> Self;
    fn spectral_ctx(&self) -> &Arc<Spectral<T>>;
    fn components(&self) -> Vec<&ScalarField<T>>;
}

impl<T: Real> Componentwise<T> for ScalarField<T> {
    fn map_components(&self, f: &dyn Fn(&ScalarField<T>) -> ScalarField<T>) -> Self {
        f(self)
    }
    fn spectral_ctx(&self) -> &Arc<Spectral<T>> {
        self.spectral()
    }
    fn components(&self) -> Vec<&ScalarField<T>> {
        vec![self]
    }
}

impl<T: Real> Componentwise<T> for VectorField<T> {
    fn map_components(&self, f: &dyn Fn(&ScalarField<T>) -> ScalarField<T>) -> Self {
        self.sync_spectra();
        self.map(f)
    }
    fn spectral_ctx(&self) -> &Arc<Spectral<T>> {
        self.spectral()
    }
    fn components(&self) -> Vec<&ScalarField<T>> {
        self.c.iter().collect()
    }
}

impl<T: Real> Componentwise<T> for MatrixField<T> {
    fn map_components(&self, f: &dyn Fn(&ScalarField<T>) -> ScalarField<T>) -> Self {
        self.sync_spectra();
        self.map(f)
    }
    fn spectral_ctx(&self) -> &Arc<Spectral<T>> {
        self.spectral()
    }
    fn components(&self) -> Vec<&ScalarField<T>> {
        self.c.iter().flat_map(|r| r.iter()).collect()
    }
}

pub fn vector_laplacian<F: Componentwise<T>, T: Real>(f: &F) -> F {
    f.map_components(&|c| laplacian(c))
}

/// `(-Δ)⁻¹` with the mean mode set to zero.
///
/// A mean larger than `1e-13` in magnitude is dropped with a logged warning.
pub fn inverse_laplacian<F: Componentwise<T>, T: Real>(f: &F) -> F {
    f.map_components(&|c| {
        let m = c.mean().to_f64_lossy();
        if m.abs() > MEAN_WARN {
            log::warn!("inverse_laplacian: discarding mean {m:e}");
        }
        let sp = c.spectral().clone();
        let out = c
            .spectrum()
            .iter()
            .enumerate()
            .map(|(i, &v)| if i == 0 { zero() } else { v / sp.k2(i) })
            .collect();
        ScalarField::from_spectrum(&sp, out)
    })
}

/// Zero the modes outside the retained band (no-op without dealiasing).
pub fn dealias<F: Componentwise<T>, T: Real>(f: &F) -> F {
    f.map_components(&|c| {
        let mut s = c.spectrum().to_vec();
        c.spectral().apply_mask(&mut s);
        ScalarField::from_spectrum(c.spectral(), s)
    })
}

fn project_modes<T: Real>(v: &VectorField<T>, keep_solenoidal: bool) -> VectorField<T> {
    v.sync_spectra();
    let sp = v.spectral();
    let n = sp.n();
    let (a, b) = (v.c[0].spectrum(), v.c[1].spectrum());
    let mut pa = Vec::with_capacity(sp.len());
    let mut pb = Vec::with_capacity(sp.len());
    for i in 0..sp.len() {
        let (k1, k2) = (sp.kd(i / n), sp.kd(i % n));
        let kk = k1 * k1 + k2 * k2;
        // gradient part: k (k·v) / |k|²
        let (ga, gb) = if kk > T::zero() {
            let dot = (a[i] * k1 + b[i] * k2) / kk;
            (dot * k1, dot * k2)
        } else {
            (zero(), zero())
        };
        if keep_solenoidal {
            pa.push(a[i] - ga);
            pb.push(b[i] - gb);
        } else {
            pa.push(ga);
            pb.push(gb);
        }
    }
    VectorField::new(ScalarField::from_spectrum(sp, pa), ScalarField::from_spectrum(sp, pb))
}

/// Leray projection 𝒫 onto divergence-free fields.
pub fn leray_project<T: Real>(v: &VectorField<T>) -> VectorField<T> {
    project_modes(v, true)
}

/// Complementary projection 𝒬 = Id - 𝒫 onto gradients.
pub fn leray_complement<T: Real>(v: &VectorField<T>) -> VectorField<T> {
    project_modes(v, false)
}

/// `∇ div v - Δv`.
pub fn curl_curl<T: Real>(v: &VectorField<T>) -> VectorField<T> {
    let gd = gradient(&divergence(v));
    gd.sub(&vector_laplacian(v))
}

/// `curl_curl` applied to each row of a matrix field.
pub fn curl_curl_rows<T: Real>(m: &MatrixField<T>) -> MatrixField<T> {
    MatrixField::from_rows(curl_curl(&m.row(0)), curl_curl(&m.row(1)))
}

/// `(∇(div M))_ij = ∂_j (div M)_i`, the gradient of the row divergence.
pub fn grad_div_rows<T: Real>(m: &MatrixField<T>) -> MatrixField<T> {
    vector_gradient(&matrix_divergence(m))
}

/// Pointwise product on the grid followed by dealiasing.
pub fn dealiased_product<T: Real>(a: &ScalarField<T>, b: &ScalarField<T>) -> ScalarField<T> {
    sync_values_all(&[a, b]);
    let v = a.values().iter().zip(b.values()).map(|(&x, &y)| x * y).collect();
    dealias(&ScalarField::from_values(a.spectral(), v))
}

/// Transform a batch of grid arrays to dealiased spectral fields, pairing
/// the FFTs.
pub fn fields_from_values_dealiased<T: Real>(sp: &Arc<Spectral<T>>, arrays: Vec<Vec<T>>) -> Vec<ScalarField<T>> {
    let fields: Vec<ScalarField<T>> = arrays.into_iter().map(|v| ScalarField::from_values(sp, v)).collect();
    {
        let refs: Vec<&ScalarField<T>> = fields.iter().collect();
        sync_spectra_all(&refs);
    }
    fields.iter().map(dealias).collect()
}

/// Spectral interpolation onto another grid: modes representable on both
/// grids are copied (Nyquist rows dropped), everything else is zero.
pub fn resample<T: Real>(f: &ScalarField<T>, target: &Arc<Spectral<T>>) -> ScalarField<T> {
    let src = f.spectral();
    let (ns, nt) = (src.n(), target.n());
    let half = ns.min(nt) as i64 / 2;
    let ratio = T::from_usize_lossy(nt * nt) / T::from_usize_lossy(ns * ns);
    let (gs, gt) = (src.grid(), target.grid());
    let mut out = vec![zero(); target.len()];
    let spec = f.spectrum();
    for m1 in 0..ns {
        let k1 = gs.wavenumber(m1);
        if k1.abs() >= half {
            continue;
        }
        for m2 in 0..ns {
            let k2 = gs.wavenumber(m2);
            if k2.abs() >= half {
                continue;
            }
            let (t1, t2) = (gt.index_of(k1).expect("in range"), gt.index_of(k2).expect("in range"));
            out[t1 * nt + t2] = spec[m1 * ns + m2] * ratio;
        }
    }
    ScalarField::from_spectrum(target, out)
}
