//! Binary checkpoints.
//!
//! Little-endian. Header: magic `VD2D`, version `u32`, `n` `u32`, `t` `f64`,
//! `δ` `f64`; then six row-major `f64` grids `u1, u2, F11, F12, F21, F22`.
//! Version 2 appends a `u32` flag word (bit 0: no dealiasing, bit 1:
//! diagonal corrections present) and, when bit 1 is set, the grids `c11`,
//! `c22` (see [`SimState`]). Version 1 files are still read; they restore
//! the two-thirds rule and no corrections.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::sync::Arc;

use thiserror::Error;

use crate::field::{Dealias, GridError, GridSpec, Spectral};
use crate::real::Real;
use crate::state::SimState;

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"VD2D";
pub const CHECKPOINT_VERSION: u32 = 2;

const FLAG_NO_DEALIAS: u32 = 1;
const FLAG_CORRECTION: u32 = 2;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("not a checkpoint (bad magic {0:?})")]
    BadMagic([u8; 4]),
    #[error("unsupported checkpoint version {0}")]
    UnsupportedVersion(u32),
    #[error("malformed checkpoint: {0}")]
    Malformed(String),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Checkpoint contents in `f64`, independent of the run precision.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub grid: GridSpec,
    pub t: f64,
    pub delta: f64,
    pub values: [Vec<f64>; 6],
    pub correction: Option<[Vec<f64>; 2]>,
}

impl Checkpoint {
    pub fn from_state<T: Real>(s: &SimState<T>) -> Self {
        let conv = |v: &[T]| v.iter().map(|x| x.to_f64_lossy()).collect::<Vec<f64>>();
        let gv = s.grid_values();
        Checkpoint {
            grid: s.grid(),
            t: s.t,
            delta: s.delta,
            values: std::array::from_fn(|c| conv(gv[c])),
            correction: s.diagonal_correction().map(|c| [conv(c[0]), conv(c[1])]),
        }
    }

    /// Canonical state on `sp`, which must match the checkpoint grid.
    pub fn to_state_on<T: Real>(&self, sp: &Arc<Spectral<T>>) -> Result<SimState<T>, CheckpointError> {
        if sp.grid() != self.grid {
            return Err(CheckpointError::Malformed(format!(
                "checkpoint grid {:?} does not match {:?}",
                self.grid,
                sp.grid()
            )));
        }
        let conv = |v: &[f64]| v.iter().map(|&x| T::lit(x)).collect::<Vec<T>>();
        let values = std::array::from_fn(|c| conv(&self.values[c]));
        let corr = self.correction.as_ref().map(|c| [conv(&c[0]), conv(&c[1])]);
        Ok(SimState::from_grid_values_corrected(sp, values, corr, self.t, self.delta))
    }

    pub fn to_state<T: Real>(&self) -> Result<SimState<T>, CheckpointError> {
        self.to_state_on(&Spectral::new(self.grid))
    }

    pub fn write_to(&self, w: &mut impl Write) -> io::Result<()> {
        w.write_all(&CHECKPOINT_MAGIC)?;
        w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
        w.write_all(&(self.grid.n() as u32).to_le_bytes())?;
        w.write_all(&self.t.to_le_bytes())?;
        w.write_all(&self.delta.to_le_bytes())?;
        let put = |w: &mut dyn Write, g: &[f64]| -> io::Result<()> {
            let mut buf = Vec::with_capacity(8 * g.len());
            for x in g {
                buf.extend_from_slice(&x.to_le_bytes());
            }
            w.write_all(&buf)
        };
        for g in &self.values {
            put(w, g)?;
        }
        let mut flags = 0;
        if self.grid.dealias() == Dealias::None {
            flags |= FLAG_NO_DEALIAS;
        }
        if self.correction.is_some() {
            flags |= FLAG_CORRECTION;
        }
        w.write_all(&flags.to_le_bytes())?;
        if let Some(c) = &self.correction {
            put(w, &c[0])?;
            put(w, &c[1])?;
        }
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self, CheckpointError> {
        let short = |e: io::Error| match e.kind() {
            io::ErrorKind::UnexpectedEof => CheckpointError::Malformed("truncated file".into()),
            _ => CheckpointError::Io(e),
        };
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(short)?;
        if magic != CHECKPOINT_MAGIC {
            return Err(CheckpointError::BadMagic(magic));
        }
        let mut b4 = [0u8; 4];
        let mut b8 = [0u8; 8];
        r.read_exact(&mut b4).map_err(short)?;
        let version = u32::from_le_bytes(b4);
        if version != 1 && version != 2 {
            return Err(CheckpointError::UnsupportedVersion(version));
        }
        r.read_exact(&mut b4).map_err(short)?;
        let n = u32::from_le_bytes(b4) as usize;
        // Reject absurd sizes before allocating.
        if n > 1 << 14 {
            return Err(CheckpointError::Malformed(format!("grid size {n} out of range")));
        }
        let grid = GridSpec::new(n, Dealias::TwoThirds)?;
        r.read_exact(&mut b8).map_err(short)?;
        let t = f64::from_le_bytes(b8);
        r.read_exact(&mut b8).map_err(short)?;
        let delta = f64::from_le_bytes(b8);
        let take = |r: &mut dyn Read| -> Result<Vec<f64>, CheckpointError> {
            let mut raw = vec![0u8; 8 * n * n];
            r.read_exact(&mut raw).map_err(short)?;
            Ok(raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect())
        };
        let mut vals = Vec::with_capacity(6);
        for _ in 0..6 {
            vals.push(take(r)?);
        }
        let mut it = vals.into_iter();
        let values = std::array::from_fn(|_| it.next().expect("six grids"));
        let (grid, correction) = if version == 1 {
            (grid, None)
        } else {
            r.read_exact(&mut b4).map_err(short)?;
            let flags = u32::from_le_bytes(b4);
            if flags & !(FLAG_NO_DEALIAS | FLAG_CORRECTION) != 0 {
                return Err(CheckpointError::Malformed(format!("unknown flags {flags:#x}")));
            }
            let grid = if flags & FLAG_NO_DEALIAS != 0 { grid.with_dealias(Dealias::None) } else { grid };
            let corr = if flags & FLAG_CORRECTION != 0 { Some([take(r)?, take(r)?]) } else { None };
            (grid, corr)
        };
        let mut rest = [0u8; 1];
        if r.read(&mut rest)? != 0 {
            return Err(CheckpointError::Malformed("trailing bytes".into()));
        }
        Ok(Checkpoint { grid, t, delta, values, correction })
    }
}

pub fn write_checkpoint<T: Real>(path: &Path, s: &SimState<T>) -> io::Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    Checkpoint::from_state(s).write_to(&mut w)?;
    w.flush()
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint, CheckpointError> {
    Checkpoint::read_from(&mut BufReader::new(File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{simulate, StepperConfig};
    use crate::state::{preflow_init_on, InitialDataSpec};

    fn evolved() -> SimState<f64> {
        let sp = Spectral::new(GridSpec::new(16, Dealias::TwoThirds).unwrap());
        let spec = InitialDataSpec { amplitude: 0.2, ..Default::default() };
        let s0 = preflow_init_on(&spec, &sp).unwrap().with_delta(0.1);
        simulate(&s0, 0.05, &StepperConfig { dt: 0.01, ..Default::default() }, 1, &mut []).unwrap()
    }

    fn bytes(c: &Checkpoint) -> Vec<u8> {
        let mut b = Vec::new();
        c.write_to(&mut b).unwrap();
        b
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let s = evolved();
        let c = Checkpoint::from_state(&s);
        assert!(c.correction.is_some());
        let b = bytes(&c);
        assert_eq!(b.len(), 28 + 8 * 8 * 256 + 4);
        let back = Checkpoint::read_from(&mut b.as_slice()).unwrap();
        assert_eq!(back, c);
        let s2: SimState<f64> = back.to_state().unwrap();
        let (a, b) = (s.spectra(), s2.spectra());
        for c in 0..6 {
            assert_eq!(a[c], b[c]);
        }
        assert_eq!(bytes(&Checkpoint::from_state(&s2)), bytes(&c));
    }

    #[test]
    fn version_one_is_read() {
        let c = Checkpoint::from_state(&evolved());
        let mut b = bytes(&c);
        b[4..8].copy_from_slice(&1u32.to_le_bytes());
        b.truncate(28 + 6 * 8 * 256);
        let back = Checkpoint::read_from(&mut b.as_slice()).unwrap();
        assert_eq!(back.values, c.values);
        assert_eq!(back.correction, None);
    }

    #[test]
    fn corrupt_headers_rejected() {
        let b = bytes(&Checkpoint::from_state(&evolved()));
        let mut m = b.clone();
        m[0] = b'X';
        assert!(matches!(Checkpoint::read_from(&mut m.as_slice()), Err(CheckpointError::BadMagic(_))));
        let mut v = b.clone();
        v[4..8].copy_from_slice(&9u32.to_le_bytes());
        assert!(matches!(Checkpoint::read_from(&mut v.as_slice()), Err(CheckpointError::UnsupportedVersion(9))));
        assert!(matches!(Checkpoint::read_from(&mut &b[..100]), Err(CheckpointError::Malformed(_))));
        let mut n = b.clone();
        n[8..12].copy_from_slice(&12u32.to_le_bytes());
        assert!(matches!(Checkpoint::read_from(&mut n.as_slice()), Err(CheckpointError::Grid(_))));
        let mut long = b;
        long.push(0);
        assert!(matches!(Checkpoint::read_from(&mut long.as_slice()), Err(CheckpointError::Malformed(_))));
    }

    #[test]
    fn dealias_flag_survives() {
        let sp = Spectral::<f64>::new(GridSpec::new(16, Dealias::None).unwrap());
        let s = SimState::equilibrium(&sp, 0.0);
        let back = Checkpoint::read_from(&mut bytes(&Checkpoint::from_state(&s)).as_slice()).unwrap();
        assert_eq!(back.grid.dealias(), Dealias::None);
    }
}
