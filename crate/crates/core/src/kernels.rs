//! Array-level spectral kernels shared by the time integrator, the preflow
//! construction and the diagnostics.

use rustfft::num_complex::Complex;

use crate::field::Spectral;
use crate::real::Real;

pub(crate) type Spec<T> = Vec<Complex<T>>;

pub(crate) fn czero<T: Real>() -> Complex<T> {
    Complex::new(T::zero(), T::zero())
}

/// Inverse-transform a batch of Hermitian spectra, two per FFT.
pub(crate) fn inverse_many<T: Real>(sp: &Spectral<T>, spectra: &[&[Complex<T>]]) -> Vec<Vec<T>> {
    let mut out = Vec::with_capacity(spectra.len());
    for pair in spectra.chunks(2) {
        match pair {
            [a, b] => {
                let (x, y) = sp.inverse_pair(a, b);
                out.push(x);
                out.push(y);
            }
            [a] => out.push(sp.inverse_real(a)),
            _ => unreachable!(),
        }
    }
    out
}

/// Forward-transform a batch of real arrays (two per FFT) and apply the
/// dealiasing mask.
pub(crate) fn forward_many_masked<T: Real>(sp: &Spectral<T>, values: &[&[T]]) -> Vec<Spec<T>> {
    let mut out = Vec::with_capacity(values.len());
    for pair in values.chunks(2) {
        match pair {
            [a, b] => {
                let (x, y) = sp.forward_pair_masked(a, b);
                out.push(x);
                out.push(y);
            }
            [a] => {
                let mut x = sp.forward_real(a);
                sp.apply_mask(&mut x);
                out.push(x);
            }
            _ => unreachable!(),
        }
    }
    out
}

/// Spectrum of `∂_axis f`.
pub(crate) fn deriv<T: Real>(sp: &Spectral<T>, hat: &[Complex<T>], axis: usize) -> Spec<T> {
    let n = sp.n();
    hat.iter()
        .enumerate()
        .map(|(i, &c)| {
            let k = if axis == 0 { sp.kd(i / n) } else { sp.kd(i % n) };
            Complex::new(-c.im * k, c.re * k)
        })
        .collect()
}

/// Leray projection of a spectral vector, in place.
pub(crate) fn project_in_place<T: Real>(sp: &Spectral<T>, a: &mut [Complex<T>], b: &mut [Complex<T>]) {
    let n = sp.n();
    for i in 0..sp.len() {
        let (k1, k2) = (sp.kd(i / n), sp.kd(i % n));
        let kk = k1 * k1 + k2 * k2;
        if kk > T::zero() {
            let dot = (a[i] * k1 + b[i] * k2) / kk;
            a[i] = a[i] - dot * k1;
            b[i] = b[i] - dot * k2;
        }
    }
}

/// Grid values of `∂_j v_i` in order `[∂1 v1, ∂2 v1, ∂1 v2, ∂2 v2]`, i.e.
/// row-major `(∇v)_ij`.
pub(crate) fn grad_values<T: Real>(sp: &Spectral<T>, v: &[Spec<T>; 2]) -> [Vec<T>; 4] {
    let d: Vec<Spec<T>> = vec![deriv(sp, &v[0], 0), deriv(sp, &v[0], 1), deriv(sp, &v[1], 0), deriv(sp, &v[1], 1)];
    let refs: Vec<&[Complex<T>]> = d.iter().map(|x| x.as_slice()).collect();
    let mut vals = inverse_many(sp, &refs).into_iter();
    std::array::from_fn(|_| vals.next().expect("four gradients"))
}

/// Grid values of `∂_k F_ij`, indexed `[k][2*i + j]`.
pub(crate) fn matrix_grad_values<T: Real>(sp: &Spectral<T>, f: &[Spec<T>; 4]) -> [[Vec<T>; 4]; 2] {
    let mut d: Vec<Spec<T>> = Vec::with_capacity(8);
    for axis in 0..2 {
        for c in f.iter() {
            d.push(deriv(sp, c, axis));
        }
    }
    let refs: Vec<&[Complex<T>]> = d.iter().map(|x| x.as_slice()).collect();
    let mut vals = inverse_many(sp, &refs).into_iter();
    std::array::from_fn(|_| std::array::from_fn(|_| vals.next().expect("eight gradients")))
}

/// Transport tendency `-u·∇F + ∇u F`, dealiased, per component `2*i + j`,
/// with `F = I + E` supplied through `E` to keep round-off relative to the
/// perturbation.
///
/// `advect = false` drops the `u·∇F` term; `grad_e` is only read then.
pub(crate) fn transport_tendency<T: Real>(
    sp: &Spectral<T>,
    u: &[Vec<T>; 2],
    grad_u: &[Vec<T>; 4],
    e: &[Vec<T>; 4],
    grad_e: Option<&[[Vec<T>; 4]; 2]>,
    advect: bool,
) -> [Spec<T>; 4] {
    let len = sp.len();
    let mut out: [Vec<T>; 4] = std::array::from_fn(|_| vec![T::zero(); len]);
    for p in 0..len {
        let gu = [[grad_u[0][p], grad_u[1][p]], [grad_u[2][p], grad_u[3][p]]];
        let em = [[e[0][p], e[1][p]], [e[2][p], e[3][p]]];
        for i in 0..2 {
            for j in 0..2 {
                let mut v = gu[i][j] + (gu[i][0] * em[0][j] + gu[i][1] * em[1][j]);
                if advect {
                    let g = grad_e.expect("advection needs ∇E");
                    v = v - (u[0][p] * g[0][2 * i + j][p] + u[1][p] * g[1][2 * i + j][p]);
                }
                out[2 * i + j][p] = v;
            }
        }
    }
    let refs: Vec<&[T]> = out.iter().map(|x| x.as_slice()).collect();
    let mut s = forward_many_masked(sp, &refs).into_iter();
    std::array::from_fn(|_| s.next().expect("four components"))
}

/// Grid values of the symmetric stress `FF^T - I = E + E^T + EE^T` as
/// `[S11, S12, S22]`, from `E = F - I`.
pub(crate) fn stress_values<T: Real>(e: &[Vec<T>; 4]) -> [Vec<T>; 3] {
    let len = e[0].len();
    let two = T::lit(2.0);
    let mut s: [Vec<T>; 3] = std::array::from_fn(|_| vec![T::zero(); len]);
    for p in 0..len {
        let (a, b, c, d) = (e[0][p], e[1][p], e[2][p], e[3][p]);
        s[0][p] = two * a + (a * a + b * b);
        s[1][p] = b + c + (a * c + b * d);
        s[2][p] = two * d + (c * c + d * d);
    }
    s
}

/// Spectral `div S` for symmetric `S = [S11, S12, S22]` given as spectra.
pub(crate) fn div_symmetric<T: Real>(sp: &Spectral<T>, s: &[Spec<T>]) -> [Spec<T>; 2] {
    let n = sp.n();
    let mut out: [Spec<T>; 2] = std::array::from_fn(|_| vec![czero(); sp.len()]);
    for idx in 0..sp.len() {
        let (k1, k2) = (sp.kd(idx / n), sp.kd(idx % n));
        let d0 = s[0][idx] * k1 + s[1][idx] * k2;
        let d1 = s[1][idx] * k1 + s[2][idx] * k2;
        out[0][idx] = Complex::new(-d0.im, d0.re);
        out[1][idx] = Complex::new(-d1.im, d1.re);
    }
    out
}

/// Grid values of `u·∇u`.
pub(crate) fn advection_values<T: Real>(u: &[Vec<T>; 2], grad_u: &[Vec<T>; 4]) -> [Vec<T>; 2] {
    let len = u[0].len();
    let mut a: [Vec<T>; 2] = std::array::from_fn(|_| vec![T::zero(); len]);
    for p in 0..len {
        a[0][p] = u[0][p] * grad_u[0][p] + u[1][p] * grad_u[1][p];
        a[1][p] = u[0][p] * grad_u[2][p] + u[1][p] * grad_u[3][p];
    }
    a
}
