use std::sync::{Arc, OnceLock};

use rustfft::num_complex::Complex;

use super::grid::GridSpec;
use super::spectral::Spectral;
use crate::real::Real;

/// A real periodic scalar field with lazily synchronized grid and spectral
/// views. At least one view is always populated; the other is filled on
/// first access and then cached.
#[derive(Clone)]
pub struct ScalarField<T: Real> {
    sp: Arc<Spectral<T>>,
    values: OnceLock<Vec<T>>,
    spectrum: OnceLock<Vec<Complex<T>>>,
}

impl<T: Real> std::fmt::Debug for ScalarField<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ScalarField")
            .field("grid", &self.sp.grid())
            .field("has_values", &self.values.get().is_some())
            .field("has_spectrum", &self.spectrum.get().is_some())
            .finish()
    }
}

impl<T: Real> ScalarField<T> {
    pub fn from_values(sp: &Arc<Spectral<T>>, values: Vec<T>) -> Self {
        assert_eq!(values.len(), sp.len(), "grid size mismatch");
        let f = ScalarField { sp: sp.clone(), values: OnceLock::new(), spectrum: OnceLock::new() };
        let _ = f.values.set(values);
        f
    }

    pub fn from_spectrum(sp: &Arc<Spectral<T>>, spectrum: Vec<Complex<T>>) -> Self {
        assert_eq!(spectrum.len(), sp.len(), "grid size mismatch");
        let f = ScalarField { sp: sp.clone(), values: OnceLock::new(), spectrum: OnceLock::new() };
        let _ = f.spectrum.set(spectrum);
        f
    }

    /// Both views supplied by the caller, who vouches for their agreement.
    pub(crate) fn from_parts(sp: &Arc<Spectral<T>>, values: Vec<T>, spectrum: Vec<Complex<T>>) -> Self {
        let f = Self::from_values(sp, values);
        let _ = f.spectrum.set(spectrum);
        f
    }

    pub fn zeros(sp: &Arc<Spectral<T>>) -> Self {
        Self::constant(sp, T::zero())
    }

    pub fn constant(sp: &Arc<Spectral<T>>, c: T) -> Self {
        let f = Self::from_values(sp, vec![c; sp.len()]);
        let mut s = vec![Complex::new(T::zero(), T::zero()); sp.len()];
        s[0] = Complex::new(c * T::from_usize_lossy(sp.len()), T::zero());
        let _ = f.spectrum.set(s);
        f
    }

    /// Sample `f(x1, x2)` at the grid nodes.
    pub fn from_fn(sp: &Arc<Spectral<T>>, f: impl Fn(f64, f64) -> f64) -> Self {
        let g = sp.grid();
        let n = g.n();
        let values = (0..n * n).map(|i| T::lit(f(g.coord(i / n), g.coord(i % n)))).collect();
        Self::from_values(sp, values)
    }

    pub fn spectral(&self) -> &Arc<Spectral<T>> {
        &self.sp
    }

    pub fn grid(&self) -> GridSpec {
        self.sp.grid()
    }

    pub fn values(&self) -> &[T] {
        self.values.get_or_init(|| {
            let s = self.spectrum.get().expect("field has no populated view");
            self.sp.inverse_real(s)
        })
    }

    pub fn spectrum(&self) -> &[Complex<T>] {
        self.spectrum.get_or_init(|| {
            let v = self.values.get().expect("field has no populated view");
            self.sp.forward_real(v)
        })
    }

    pub fn has_values(&self) -> bool {
        self.values.get().is_some()
    }

    pub fn has_spectrum(&self) -> bool {
        self.spectrum.get().is_some()
    }

    pub fn into_values(self) -> Vec<T> {
        let _ = self.values();
        self.values.into_inner().expect("populated above")
    }

    pub fn into_spectrum(self) -> Vec<Complex<T>> {
        let _ = self.spectrum();
        self.spectrum.into_inner().expect("populated above")
    }

    /// Drop the grid view, keeping only spectral coefficients.
    pub fn spectral_only(&self) -> Self {
        Self::from_spectrum(&self.sp, self.spectrum().to_vec())
    }

    /// Copy that keeps only the grid samples; the spectrum is recomputed
    /// from them on demand.
    pub fn grid_only(&self) -> Self {
        Self::from_values(&self.sp, self.values().to_vec())
    }

    pub fn mean(&self) -> T {
        self.spectrum()[0].re / T::from_usize_lossy(self.sp.len())
    }

    pub fn map_values(&self, f: impl Fn(T) -> T) -> Self {
        Self::from_values(&self.sp, self.values().iter().map(|&v| f(v)).collect())
    }

    /// Apply a per-mode multiplier `f(k1, k2, c)` in spectral space.
    pub fn map_modes(&self, f: impl Fn(T, T, Complex<T>) -> Complex<T>) -> Self {
        let n = self.sp.n();
        let s = self.spectrum();
        let out = (0..s.len()).map(|i| f(self.sp.k(i / n), self.sp.k(i % n), s[i])).collect();
        Self::from_spectrum(&self.sp, out)
    }

    /// Linear combination `a*self + b*other`, computed in whichever view
    /// both operands already share.
    pub fn lincomb(&self, a: T, other: &Self, b: T) -> Self {
        if self.has_spectrum() && other.has_spectrum() || !(self.has_values() && other.has_values()) {
            let s = self.spectrum().iter().zip(other.spectrum()).map(|(&x, &y)| x * a + y * b).collect();
            Self::from_spectrum(&self.sp, s)
        } else {
            let v = self.values().iter().zip(other.values()).map(|(&x, &y)| x * a + y * b).collect();
            Self::from_values(&self.sp, v)
        }
    }

    pub fn add(&self, other: &Self) -> Self {
        self.lincomb(T::one(), other, T::one())
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.lincomb(T::one(), other, -T::one())
    }

    pub fn scale(&self, a: T) -> Self {
        if self.has_spectrum() {
            Self::from_spectrum(&self.sp, self.spectrum().iter().map(|&c| c * a).collect())
        } else {
            self.map_values(|v| v * a)
        }
    }

    /// ∫ f² dx via Parseval.
    pub fn l2_norm_sq(&self) -> T {
        let s: T = self.spectrum().iter().fold(T::zero(), |acc, c| acc + c.norm_sqr());
        s * self.sp.parseval_factor()
    }

    /// ∫ f² dx via the grid trapezoid rule.
    pub fn l2_norm_sq_grid(&self) -> T {
        let s: T = self.values().iter().fold(T::zero(), |acc, &v| acc + v * v);
        s * self.sp.cell_area()
    }

    /// ∫ f g dx via Parseval.
    pub fn inner(&self, other: &Self) -> T {
        let s: T = self
            .spectrum()
            .iter()
            .zip(other.spectrum())
            .fold(T::zero(), |acc, (a, b)| acc + (a * b.conj()).re);
        s * self.sp.parseval_factor()
    }

    pub fn linf(&self) -> T {
        self.values().iter().fold(T::zero(), |acc, &v| acc.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.values().iter().all(|v| v.is_finite())
    }
}

/// Make both grid views available, sharing one complex FFT when both are
/// missing.
pub(crate) fn sync_values_pair<T: Real>(a: &ScalarField<T>, b: &ScalarField<T>) {
    if !a.has_values() && !b.has_values() {
        let (va, vb) = a.sp.inverse_pair(a.spectrum(), b.spectrum());
        let _ = a.values.set(va);
        let _ = b.values.set(vb);
    }
}

pub(crate) fn sync_spectra_pair<T: Real>(a: &ScalarField<T>, b: &ScalarField<T>) {
    if !a.has_spectrum() && !b.has_spectrum() {
        let (sa, sb) = a.sp.forward_pair(a.values(), b.values());
        let _ = a.spectrum.set(sa);
        let _ = b.spectrum.set(sb);
    }
}

pub(crate) fn sync_values_all<T: Real>(fields: &[&ScalarField<T>]) {
    let missing: Vec<&&ScalarField<T>> = fields.iter().filter(|f| !f.has_values()).collect();
    for pair in missing.chunks(2) {
        match pair {
            [a, b] => sync_values_pair(a, b),
            [a] => {
                let _ = a.values();
            }
            _ => unreachable!(),
        }
    }
}

pub(crate) fn sync_spectra_all<T: Real>(fields: &[&ScalarField<T>]) {
    let missing: Vec<&&ScalarField<T>> = fields.iter().filter(|f| !f.has_spectrum()).collect();
    for pair in missing.chunks(2) {
        match pair {
            [a, b] => sync_spectra_pair(a, b),
            [a] => {
                let _ = a.spectrum();
            }
            _ => unreachable!(),
        }
    }
}

/// Two-component vector field `(v1, v2)`.
#[derive(Clone, Debug)]
pub struct VectorField<T: Real> {
    pub c: [ScalarField<T>; 2],
}

impl<T: Real> VectorField<T> {
    pub fn new(c1: ScalarField<T>, c2: ScalarField<T>) -> Self {
        VectorField { c: [c1, c2] }
    }

    pub fn zeros(sp: &Arc<Spectral<T>>) -> Self {
        Self::new(ScalarField::zeros(sp), ScalarField::zeros(sp))
    }

    pub fn from_fn(sp: &Arc<Spectral<T>>, f: impl Fn(f64, f64) -> [f64; 2]) -> Self {
        Self::new(ScalarField::from_fn(sp, |x, y| f(x, y)[0]), ScalarField::from_fn(sp, |x, y| f(x, y)[1]))
    }

    pub fn spectral(&self) -> &Arc<Spectral<T>> {
        self.c[0].spectral()
    }

    pub fn grid(&self) -> GridSpec {
        self.c[0].grid()
    }

    pub fn sync_values(&self) {
        sync_values_pair(&self.c[0], &self.c[1]);
    }

    pub fn sync_spectra(&self) {
        sync_spectra_pair(&self.c[0], &self.c[1]);
    }

    pub fn map(&self, f: impl Fn(&ScalarField<T>) -> ScalarField<T>) -> Self {
        VectorField { c: [f(&self.c[0]), f(&self.c[1])] }
    }

    pub fn zip(&self, other: &Self, f: impl Fn(&ScalarField<T>, &ScalarField<T>) -> ScalarField<T>) -> Self {
        VectorField { c: [f(&self.c[0], &other.c[0]), f(&self.c[1], &other.c[1])] }
    }

    pub fn add(&self, other: &Self) -> Self {
        self.zip(other, |a, b| a.add(b))
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.zip(other, |a, b| a.sub(b))
    }

    pub fn scale(&self, a: T) -> Self {
        self.map(|f| f.scale(a))
    }

    pub fn l2_norm_sq(&self) -> T {
        self.c[0].l2_norm_sq() + self.c[1].l2_norm_sq()
    }

    pub fn inner(&self, other: &Self) -> T {
        self.c[0].inner(&other.c[0]) + self.c[1].inner(&other.c[1])
    }

    /// max over the grid of the Euclidean magnitude.
    pub fn linf(&self) -> T {
        self.sync_values();
        let (a, b) = (self.c[0].values(), self.c[1].values());
        a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc.max((x * x + y * y).sqrt()))
    }

    /// max over the grid and components of |v_i|.
    pub fn linf_component(&self) -> T {
        self.c[0].linf().max(self.c[1].linf())
    }

    pub fn is_finite(&self) -> bool {
        self.c.iter().all(|c| c.is_finite())
    }

    pub fn spectral_only(&self) -> Self {
        self.map(|f| f.spectral_only())
    }
}

/// 2x2 matrix field with components `m[i][j]` (row i, column j).
#[derive(Clone, Debug)]
pub struct MatrixField<T: Real> {
    pub c: [[ScalarField<T>; 2]; 2],
}

impl<T: Real> MatrixField<T> {
    pub fn new(c: [[ScalarField<T>; 2]; 2]) -> Self {
        MatrixField { c }
    }

    pub fn identity(sp: &Arc<Spectral<T>>) -> Self {
        let one = ScalarField::constant(sp, T::one());
        let zero = ScalarField::zeros(sp);
        MatrixField { c: [[one.clone(), zero.clone()], [zero, one]] }
    }

    pub fn zeros(sp: &Arc<Spectral<T>>) -> Self {
        let z = ScalarField::zeros(sp);
        MatrixField { c: [[z.clone(), z.clone()], [z.clone(), z]] }
    }

    pub fn from_fn(sp: &Arc<Spectral<T>>, f: impl Fn(f64, f64) -> [[f64; 2]; 2]) -> Self {
        let comp = |i: usize, j: usize| ScalarField::from_fn(sp, |x, y| f(x, y)[i][j]);
        MatrixField { c: [[comp(0, 0), comp(0, 1)], [comp(1, 0), comp(1, 1)]] }
    }

    /// Matrix field whose rows are the given vector fields.
    pub fn from_rows(r0: VectorField<T>, r1: VectorField<T>) -> Self {
        let [a, b] = r0.c;
        let [c, d] = r1.c;
        MatrixField { c: [[a, b], [c, d]] }
    }

    pub fn row(&self, i: usize) -> VectorField<T> {
        VectorField::new(self.c[i][0].clone(), self.c[i][1].clone())
    }

    /// Column `j` as a vector field.
    pub fn column(&self, j: usize) -> VectorField<T> {
        VectorField::new(self.c[0][j].clone(), self.c[1][j].clone())
    }

    pub fn spectral(&self) -> &Arc<Spectral<T>> {
        self.c[0][0].spectral()
    }

    pub fn grid(&self) -> GridSpec {
        self.c[0][0].grid()
    }

    fn flat(&self) -> [&ScalarField<T>; 4] {
        [&self.c[0][0], &self.c[0][1], &self.c[1][0], &self.c[1][1]]
    }

    pub fn sync_values(&self) {
        sync_values_all(&self.flat());
    }

    pub fn sync_spectra(&self) {
        sync_spectra_all(&self.flat());
    }

    pub fn map(&self, f: impl Fn(&ScalarField<T>) -> ScalarField<T>) -> Self {
        let c = &self.c;
        MatrixField { c: [[f(&c[0][0]), f(&c[0][1])], [f(&c[1][0]), f(&c[1][1])]] }
    }

    pub fn zip(&self, other: &Self, f: impl Fn(&ScalarField<T>, &ScalarField<T>) -> ScalarField<T>) -> Self {
        let (a, b) = (&self.c, &other.c);
        MatrixField {
            c: [[f(&a[0][0], &b[0][0]), f(&a[0][1], &b[0][1])], [f(&a[1][0], &b[1][0]), f(&a[1][1], &b[1][1])]],
        }
    }

    pub fn add(&self, other: &Self) -> Self {
        self.zip(other, |a, b| a.add(b))
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.zip(other, |a, b| a.sub(b))
    }

    pub fn scale(&self, a: T) -> Self {
        self.map(|f| f.scale(a))
    }

    pub fn transpose(&self) -> Self {
        let c = &self.c;
        MatrixField { c: [[c[0][0].clone(), c[1][0].clone()], [c[0][1].clone(), c[1][1].clone()]] }
    }

    /// `self - I`.
    pub fn minus_identity(&self) -> Self {
        let sp = self.spectral();
        self.sub(&MatrixField::identity(sp))
    }

    /// ∫ |M|² dx with the Frobenius norm.
    pub fn l2_norm_sq(&self) -> T {
        self.flat().iter().fold(T::zero(), |acc, f| acc + f.l2_norm_sq())
    }

    /// ∫ M : N dx.
    pub fn inner(&self, other: &Self) -> T {
        let (a, b) = (self.flat(), other.flat());
        (0..4).fold(T::zero(), |acc, i| acc + a[i].inner(b[i]))
    }

    /// max over the grid of the pointwise Frobenius norm.
    pub fn linf_frobenius(&self) -> T {
        self.sync_values();
        let f = self.flat();
        let v: Vec<&[T]> = f.iter().map(|x| x.values()).collect();
        (0..v[0].len()).fold(T::zero(), |acc, p| {
            let s = v[0][p] * v[0][p] + v[1][p] * v[1][p] + v[2][p] * v[2][p] + v[3][p] * v[3][p];
            acc.max(s.sqrt())
        })
    }

    pub fn linf_component(&self) -> T {
        self.flat().iter().fold(T::zero(), |acc, f| acc.max(f.linf()))
    }

    pub fn is_finite(&self) -> bool {
        self.flat().iter().all(|c| c.is_finite())
    }

    pub fn spectral_only(&self) -> Self {
        self.map(|f| f.spectral_only())
    }
}
