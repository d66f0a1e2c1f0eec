//! Pointwise 2x2 matrix algebra.

use crate::real::Real;

pub type Mat2<T> = [[T; 2]; 2];

pub fn identity<T: Real>() -> Mat2<T> {
    [[T::one(), T::zero()], [T::zero(), T::one()]]
}

pub fn zero<T: Real>() -> Mat2<T> {
    [[T::zero(); 2]; 2]
}

pub fn mul<T: Real>(a: &Mat2<T>, b: &Mat2<T>) -> Mat2<T> {
    let mut c = zero();
    for (i, row) in c.iter_mut().enumerate() {
        for (j, out) in row.iter_mut().enumerate() {
            *out = a[i][0] * b[0][j] + a[i][1] * b[1][j];
        }
    }
    c
}

pub fn add<T: Real>(a: &Mat2<T>, b: &Mat2<T>) -> Mat2<T> {
    [[a[0][0] + b[0][0], a[0][1] + b[0][1]], [a[1][0] + b[1][0], a[1][1] + b[1][1]]]
}

pub fn sub<T: Real>(a: &Mat2<T>, b: &Mat2<T>) -> Mat2<T> {
    [[a[0][0] - b[0][0], a[0][1] - b[0][1]], [a[1][0] - b[1][0], a[1][1] - b[1][1]]]
}

pub fn scale<T: Real>(a: &Mat2<T>, s: T) -> Mat2<T> {
    [[a[0][0] * s, a[0][1] * s], [a[1][0] * s, a[1][1] * s]]
}

pub fn minus_identity<T: Real>(a: &Mat2<T>) -> Mat2<T> {
    sub(a, &identity())
}

pub fn det<T: Real>(a: &Mat2<T>) -> T {
    a[0][0] * a[1][1] - a[0][1] * a[1][0]
}

/// Frobenius inner product `A : B`.
pub fn inner<T: Real>(a: &Mat2<T>, b: &Mat2<T>) -> T {
    a[0][0] * b[0][0] + a[0][1] * b[0][1] + a[1][0] * b[1][0] + a[1][1] * b[1][1]
}

pub fn frobenius<T: Real>(a: &Mat2<T>) -> T {
    inner(a, a).sqrt()
}

pub fn to_f64<T: Real>(a: &Mat2<T>) -> Mat2<f64> {
    [[a[0][0].to_f64_lossy(), a[0][1].to_f64_lossy()], [a[1][0].to_f64_lossy(), a[1][1].to_f64_lossy()]]
}
