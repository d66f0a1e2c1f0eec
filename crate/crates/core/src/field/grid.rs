use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use thiserror::Error;

/// Dealiasing policy applied to every quadratic product.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Dealias {
    /// Zero every mode with `|k1| > n/3` or `|k2| > n/3`.
    TwoThirds,
    None,
}

impl fmt::Display for Dealias {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Dealias::TwoThirds => write!(f, "two_thirds"),
            Dealias::None => write!(f, "none"),
        }
    }
}

impl FromStr for Dealias {
    type Err = GridError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "two_thirds" => Ok(Dealias::TwoThirds),
            "none" => Ok(Dealias::None),
            other => Err(GridError::UnknownDealias(other.to_string())),
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum GridError {
    #[error("grid size {0} must be a power of two and at least 16")]
    InvalidSize(usize),
    #[error("unknown dealias policy `{0}` (expected two_thirds or none)")]
    UnknownDealias(String),
}

/// Uniform `n x n` discretization of the 2π-periodic torus.
///
/// Sample `(i1, i2)` sits at `x = (2π i1 / n, 2π i2 / n)` and is stored at
/// flat index `i1 * n + i2`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct GridSpec {
    n: usize,
    dealias: Dealias,
}

impl GridSpec {
    pub const MIN_POINTS: usize = 16;

    pub fn new(n: usize, dealias: Dealias) -> Result<Self, GridError> {
        if n < Self::MIN_POINTS || !n.is_power_of_two() {
            return Err(GridError::InvalidSize(n));
        }
        Ok(GridSpec { n, dealias })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn dealias(&self) -> Dealias {
        self.dealias
    }

    pub fn with_dealias(self, dealias: Dealias) -> Self {
        GridSpec { dealias, ..self }
    }

    pub fn box_length(&self) -> f64 {
        2.0 * PI
    }

    pub fn spacing(&self) -> f64 {
        self.box_length() / self.n as f64
    }

    pub fn len(&self) -> usize {
        self.n * self.n
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Largest retained |k| per axis.
    pub fn cutoff(&self) -> usize {
        match self.dealias {
            Dealias::TwoThirds => self.n / 3,
            Dealias::None => self.n / 2,
        }
    }

    pub fn coord(&self, i: usize) -> f64 {
        self.spacing() * i as f64
    }

    /// Signed wavenumber of FFT index `m`; the Nyquist index maps to `-n/2`.
    pub fn wavenumber(&self, m: usize) -> i64 {
        let n = self.n as i64;
        let m = m as i64;
        if m < n / 2 {
            m
        } else {
            m - n
        }
    }

    /// FFT index holding wavenumber `k`, if it is representable.
    pub fn index_of(&self, k: i64) -> Option<usize> {
        let n = self.n as i64;
        if k >= -n / 2 && k < n / 2 {
            Some(k.rem_euclid(n) as usize)
        } else {
            None
        }
    }

    pub fn is_retained(&self, k1: i64, k2: i64) -> bool {
        match self.dealias {
            Dealias::TwoThirds => {
                let c = (self.n / 3) as i64;
                k1.abs() <= c && k2.abs() <= c
            }
            Dealias::None => true,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_small_and_non_power_of_two() {
        assert_eq!(GridSpec::new(8, Dealias::None), Err(GridError::InvalidSize(8)));
        assert_eq!(GridSpec::new(48, Dealias::None), Err(GridError::InvalidSize(48)));
        assert!(GridSpec::new(16, Dealias::TwoThirds).is_ok());
    }

    #[test]
    fn wavenumber_layout() {
        let g = GridSpec::new(16, Dealias::None).unwrap();
        assert_eq!(g.wavenumber(0), 0);
        assert_eq!(g.wavenumber(7), 7);
        assert_eq!(g.wavenumber(8), -8);
        assert_eq!(g.wavenumber(15), -1);
        for m in 0..16 {
            assert_eq!(g.index_of(g.wavenumber(m)), Some(m));
        }
        assert_eq!(g.index_of(8), None);
    }

    #[test]
    fn two_thirds_cutoff() {
        let g = GridSpec::new(64, Dealias::TwoThirds).unwrap();
        assert_eq!(g.cutoff(), 21);
        assert!(g.is_retained(21, -21));
        assert!(!g.is_retained(22, 0));
        assert!(!g.is_retained(0, -31));
    }

    #[test]
    fn dealias_parse_round_trip() {
        for d in [Dealias::TwoThirds, Dealias::None] {
            assert_eq!(d.to_string().parse::<Dealias>().unwrap(), d);
        }
        assert!("half".parse::<Dealias>().is_err());
    }
}
