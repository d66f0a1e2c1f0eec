use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use super::grid::GridSpec;
use crate::real::Real;

/// FFT plans and wavenumber tables for one grid.
///
/// Forward transforms are unnormalized, inverse transforms carry the `1/n²`
/// factor, so the mean of a field is `spectrum[0] / n²`.
pub struct Spectral<T: Real> {
    grid: GridSpec,
    forward: Arc<dyn Fft<T>>,
    inverse: Arc<dyn Fft<T>>,
    wavenumber: Vec<T>,
    /// First-derivative symbol per axis; the Nyquist entry is zero so odd
    /// operators keep real fields real.
    deriv: Vec<T>,
    retained: Vec<bool>,
}

impl<T: Real> std::fmt::Debug for Spectral<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Spectral").field("grid", &self.grid).finish()
    }
}

impl<T: Real> Spectral<T> {
    pub fn new(grid: GridSpec) -> Arc<Self> {
        crate::alloc::retain_freed_memory();
        let n = grid.n();
        let mut planner = FftPlanner::new();
        let forward = planner.plan_fft_forward(n);
        let inverse = planner.plan_fft_inverse(n);
        let wavenumber: Vec<T> = (0..n).map(|m| T::lit(grid.wavenumber(m) as f64)).collect();
        let deriv = (0..n)
            .map(|m| if m == n / 2 { T::zero() } else { wavenumber[m] })
            .collect();
        let cut = grid.cutoff() as i64;
        let retained = (0..n)
            .map(|m| match grid.dealias() {
                super::Dealias::TwoThirds => grid.wavenumber(m).abs() <= cut,
                super::Dealias::None => true,
            })
            .collect();
        let sp = Spectral { grid, forward, inverse, wavenumber, deriv, retained };
        sp.check_convention();
        Arc::new(sp)
    }

    fn check_convention(&self) {
        let n = self.grid.n();
        let mut buf = vec![Complex::new(T::one(), T::zero()); n * n];
        self.forward_in_place(&mut buf);
        let expect = T::from_usize_lossy(n * n);
        assert!(
            (buf[0].re - expect).abs() <= expect * T::epsilon() * T::lit(4.0),
            "forward FFT must be unnormalized"
        );
        self.inverse_in_place(&mut buf);
        assert!(
            (buf[n + 1].re - T::one()).abs() <= T::epsilon() * T::lit(64.0),
            "inverse FFT must carry the 1/n^2 factor"
        );
    }

    pub fn grid(&self) -> GridSpec {
        self.grid
    }

    pub fn n(&self) -> usize {
        self.grid.n()
    }

    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Signed wavenumber of FFT index `m`.
    pub fn k(&self, m: usize) -> T {
        self.wavenumber[m]
    }

    /// Derivative symbol of FFT index `m` (Nyquist zeroed).
    pub fn kd(&self, m: usize) -> T {
        self.deriv[m]
    }

    /// |k|² of the flat spectral index.
    pub fn k2(&self, idx: usize) -> T {
        let n = self.n();
        let k1 = self.wavenumber[idx / n];
        let k2 = self.wavenumber[idx % n];
        k1 * k1 + k2 * k2
    }

    pub fn is_retained(&self, idx: usize) -> bool {
        let n = self.n();
        self.retained[idx / n] && self.retained[idx % n]
    }

    /// Flat indices of retained modes, in storage order.
    pub fn retained_indices(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.is_retained(i)).collect()
    }

    /// Spatial quadrature weight `(2π/n)²`.
    pub fn cell_area(&self) -> T {
        let h = T::lit(self.grid.spacing());
        h * h
    }

    /// Factor converting `Σ|ĉ|²` into `∫|f|² dx`.
    pub fn parseval_factor(&self) -> T {
        let n2 = T::from_usize_lossy(self.len());
        T::lit(4.0 * std::f64::consts::PI * std::f64::consts::PI) / (n2 * n2)
    }

    /// Row pass, transpose, row pass, transpose. All-zero rows of the first
    /// pass are skipped (their transform is exactly zero); with `only_retained`
    /// the second pass is limited to retained wavenumbers and the other
    /// entries are left unspecified for the caller to mask.
    fn fft_2d(&self, buf: &mut [Complex<T>], plan: &Arc<dyn Fft<T>>, only_retained: bool) {
        let n = self.n();
        debug_assert_eq!(buf.len(), n * n);
        let zero = Complex::new(T::zero(), T::zero());
        let mut scratch = vec![zero; plan.get_inplace_scratch_len()];
        for row in buf.chunks_exact_mut(n) {
            if row.iter().any(|c| *c != zero) {
                plan.process_with_scratch(row, &mut scratch);
            }
        }
        transpose_square(buf, n);
        for (m, row) in buf.chunks_exact_mut(n).enumerate() {
            if !only_retained || self.retained[m] {
                plan.process_with_scratch(row, &mut scratch);
            }
        }
        transpose_square(buf, n);
    }

    pub fn forward_in_place(&self, buf: &mut [Complex<T>]) {
        self.fft_2d(buf, &self.forward, false);
    }

    pub fn inverse_in_place(&self, buf: &mut [Complex<T>]) {
        self.fft_2d(buf, &self.inverse, false);
        let scale = T::one() / T::from_usize_lossy(self.len());
        for c in buf.iter_mut() {
            *c = *c * scale;
        }
    }

    pub fn forward_real(&self, values: &[T]) -> Vec<Complex<T>> {
        let mut buf: Vec<Complex<T>> = values.iter().map(|&v| Complex::new(v, T::zero())).collect();
        self.forward_in_place(&mut buf);
        buf
    }

    pub fn inverse_real(&self, spectrum: &[Complex<T>]) -> Vec<T> {
        let mut buf = spectrum.to_vec();
        self.inverse_in_place(&mut buf);
        buf.into_iter().map(|c| c.re).collect()
    }

    /// Forward transform of two real fields with one complex FFT.
    pub fn forward_pair(&self, a: &[T], b: &[T]) -> (Vec<Complex<T>>, Vec<Complex<T>>) {
        self.forward_pair_impl(a, b, false)
    }

    /// [`Self::forward_pair`] followed by the dealiasing mask.
    pub(crate) fn forward_pair_masked(&self, a: &[T], b: &[T]) -> (Vec<Complex<T>>, Vec<Complex<T>>) {
        self.forward_pair_impl(a, b, self.grid.dealias() != super::Dealias::None)
    }

    fn forward_pair_impl(&self, a: &[T], b: &[T], masked: bool) -> (Vec<Complex<T>>, Vec<Complex<T>>) {
        let n = self.n();
        let mut z: Vec<Complex<T>> = a.iter().zip(b).map(|(&x, &y)| Complex::new(x, y)).collect();
        self.fft_2d(&mut z, &self.forward, masked);
        let half = T::lit(0.5);
        let zero = Complex::new(T::zero(), T::zero());
        let mut fa = vec![zero; n * n];
        let mut fb = vec![zero; n * n];
        for i1 in 0..n {
            if masked && !self.retained[i1] {
                continue;
            }
            let row = ((n - i1) % n) * n;
            let (ra, rb) = (&mut fa[i1 * n..(i1 + 1) * n], &mut fb[i1 * n..(i1 + 1) * n]);
            for i2 in 0..n {
                if masked && !self.retained[i2] {
                    continue;
                }
                let zk = z[i1 * n + i2];
                let zm = z[row + if i2 == 0 { 0 } else { n - i2 }].conj();
                ra[i2] = (zk + zm) * half;
                // (zk - zm) / 2i
                let d = zk - zm;
                rb[i2] = Complex::new(d.im, -d.re) * half;
            }
        }
        (fa, fb)
    }

    /// Inverse transform of two Hermitian spectra with one complex FFT.
    pub fn inverse_pair(&self, a: &[Complex<T>], b: &[Complex<T>]) -> (Vec<T>, Vec<T>) {
        let mut z: Vec<Complex<T>> =
            a.iter().zip(b).map(|(&x, &y)| Complex::new(x.re - y.im, x.im + y.re)).collect();
        self.inverse_in_place(&mut z);
        let re = z.iter().map(|c| c.re).collect();
        let im = z.iter().map(|c| c.im).collect();
        (re, im)
    }

    /// Zero every non-retained mode in place.
    pub fn apply_mask(&self, spectrum: &mut [Complex<T>]) {
        if self.grid.dealias() == super::Dealias::None {
            return;
        }
        let n = self.n();
        let zero = Complex::new(T::zero(), T::zero());
        for (i1, row) in spectrum.chunks_exact_mut(n).enumerate() {
            if !self.retained[i1] {
                row.fill(zero);
                continue;
            }
            for (c, &keep) in row.iter_mut().zip(&self.retained) {
                if !keep {
                    *c = zero;
                }
            }
        }
    }
}

/// In-place transpose of an `n x n` row-major array, tiled for locality.
fn transpose_square<C: Copy>(buf: &mut [C], n: usize) {
    const B: usize = 16;
    for bi in (0..n).step_by(B) {
        for bj in (bi..n).step_by(B) {
            for i in bi..(bi + B).min(n) {
                let start = if bi == bj { i + 1 } else { bj };
                for j in start..(bj + B).min(n) {
                    buf.swap(i * n + j, j * n + i);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::Dealias;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_values(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n * n).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    #[test]
    fn round_trip_is_identity() {
        let sp = Spectral::<f64>::new(GridSpec::new(32, Dealias::None).unwrap());
        let v = random_values(32, 1);
        let back = sp.inverse_real(&sp.forward_real(&v));
        let err: f64 = v.iter().zip(&back).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let norm: f64 = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        assert!(err / norm < 1e-14, "{err}");
    }

    #[test]
    fn paired_transforms_match_single() {
        let sp = Spectral::<f64>::new(GridSpec::new(16, Dealias::None).unwrap());
        let a = random_values(16, 2);
        let b = random_values(16, 3);
        let (fa, fb) = sp.forward_pair(&a, &b);
        let sa = sp.forward_real(&a);
        let sb = sp.forward_real(&b);
        for i in 0..a.len() {
            assert!((fa[i] - sa[i]).norm() < 1e-12);
            assert!((fb[i] - sb[i]).norm() < 1e-12);
        }
        let (ra, rb) = sp.inverse_pair(&sa, &sb);
        for i in 0..a.len() {
            assert!((ra[i] - a[i]).abs() < 1e-13);
            assert!((rb[i] - b[i]).abs() < 1e-13);
        }
    }

    #[test]
    fn single_mode_lands_on_its_wavenumber() {
        let g = GridSpec::new(16, Dealias::None).unwrap();
        let sp = Spectral::<f64>::new(g);
        let v: Vec<f64> = (0..256)
            .map(|i| {
                let (x1, x2) = (g.coord(i / 16), g.coord(i % 16));
                (3.0 * x1 - 2.0 * x2).cos()
            })
            .collect();
        let s = sp.forward_real(&v);
        let i_pos = g.index_of(3).unwrap() * 16 + g.index_of(-2).unwrap();
        let i_neg = g.index_of(-3).unwrap() * 16 + g.index_of(2).unwrap();
        assert!((s[i_pos].re - 128.0).abs() < 1e-10);
        assert!((s[i_neg].re - 128.0).abs() < 1e-10);
        let total: f64 = s.iter().map(|c| c.norm()).sum();
        assert!((total - 256.0).abs() < 1e-9);
    }

    #[test]
    fn f32_round_trip() {
        let sp = Spectral::<f32>::new(GridSpec::new(16, Dealias::None).unwrap());
        let v: Vec<f32> = random_values(16, 4).into_iter().map(|x| x as f32).collect();
        let back = sp.inverse_real(&sp.forward_real(&v));
        for (a, b) in v.iter().zip(&back) {
            assert!((a - b).abs() < 1e-5);
        }
    }
}
