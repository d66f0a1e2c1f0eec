//! One-dimensional quadrature over sampled time series.

/// Trapezoid rule on arbitrary (sorted) abscissae.
pub fn trapezoid(ts: &[f64], ys: &[f64]) -> f64 {
    assert_eq!(ts.len(), ys.len());
    ts.windows(2).zip(ys.windows(2)).map(|(t, y)| 0.5 * (t[1] - t[0]) * (y[0] + y[1])).sum()
}

/// Composite Simpson on a uniform grid with spacing `h`. An odd number of
/// intervals is closed with Simpson's 3/8 rule on the last three; two
/// samples fall back to the trapezoid.
pub fn simpson_uniform(h: f64, ys: &[f64]) -> f64 {
    let m = ys.len().saturating_sub(1);
    match m {
        0 => 0.0,
        1 => 0.5 * h * (ys[0] + ys[1]),
        _ => {
            let (even_end, tail) = if m % 2 == 0 { (m, None) } else { (m - 3, Some(m - 3)) };
            let mut s = 0.0;
            for i in (0..even_end).step_by(2) {
                s += h / 3.0 * (ys[i] + 4.0 * ys[i + 1] + ys[i + 2]);
            }
            if let Some(j) = tail {
                s += 3.0 * h / 8.0 * (ys[j] + 3.0 * ys[j + 1] + 3.0 * ys[j + 2] + ys[j + 3]);
            }
            s
        }
    }
}
