//! Binary and CSV file formats. All binary integers and floats are
//! little-endian; every binary file starts with a 4-byte magic and a `u32`
//! format version.
//!
//! | file          | magic  | header after version                                   | payload                         |
//! |---------------|--------|--------------------------------------------------------|---------------------------------|
//! | measurement   | `FKMS` | u64 L, u64 F, f64 σ_w², f64 0, F × f64 freqs           | L·F × (f64 re, f64 im)          |
//! | f-k diagram   | `FKZD` | u64 N, u64 F, f64 k_min, f64 k_max, F × f64 freqs      | N·F × (f64 re, f64 im)          |
//! | support       | `FKSP` | u64 N, u64 F, f64 k_min, f64 k_max                     | packed bits                     |
//! | dataset       | `SUPP` | u64 count, u64 NF, u64 N, u64 F, f64 k_min, f64 k_max  | count × packed bits             |
//! | RBM params    | `RBM1` | u64 NF, u64 P, u64 N, u64 F, f64 k_min, f64 k_max      | b (NF), a (P), W (NF×P row-major) |
//!
//! Bits are packed frequency-major, least significant bit first, each
//! vector padded to a whole byte.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use num_complex::Complex64;

use crate::dictionary::{FkDiagram, Support, WavenumberGrid};
use crate::error::{Error, Result};
use crate::waveguide::Measurement;

pub const FORMAT_VERSION: u32 = 1;

pub const MAGIC_MEASUREMENT: &[u8; 4] = b"FKMS";
pub const MAGIC_DIAGRAM: &[u8; 4] = b"FKZD";
pub const MAGIC_SUPPORT: &[u8; 4] = b"FKSP";
pub const MAGIC_DATASET: &[u8; 4] = b"SUPP";
pub const MAGIC_RBM: &[u8; 4] = b"RBM1";

/// Grid layout carried in file headers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridMeta {
    pub n_grid: usize,
    pub n_freq: usize,
    pub k_min: f64,
    pub k_max: f64,
}

impl GridMeta {
    pub fn new(grid: &WavenumberGrid, n_freq: usize) -> Self {
        GridMeta {
            n_grid: grid.points,
            n_freq,
            k_min: grid.k_min,
            k_max: grid.k_max,
        }
    }

    pub fn n_coeffs(&self) -> usize {
        self.n_grid * self.n_freq
    }
}

pub(crate) struct LeWriter<W: Write> {
    inner: W,
}

impl<W: Write> LeWriter<W> {
    pub fn new(inner: W) -> Self {
        LeWriter { inner }
    }

    pub fn header(&mut self, magic: &[u8; 4]) -> Result<()> {
        self.inner.write_all(magic)?;
        self.u32(FORMAT_VERSION)
    }

    pub fn u32(&mut self, v: u32) -> Result<()> {
        Ok(self.inner.write_all(&v.to_le_bytes())?)
    }

    pub fn u64(&mut self, v: usize) -> Result<()> {
        Ok(self.inner.write_all(&(v as u64).to_le_bytes())?)
    }

    pub fn f64(&mut self, v: f64) -> Result<()> {
        Ok(self.inner.write_all(&v.to_le_bytes())?)
    }

    pub fn f64s(&mut self, vs: &[f64]) -> Result<()> {
        vs.iter().try_for_each(|&v| self.f64(v))
    }

    pub fn complexes(&mut self, vs: &[Complex64]) -> Result<()> {
        vs.iter().try_for_each(|v| {
            self.f64(v.re)?;
            self.f64(v.im)
        })
    }

    pub fn bytes(&mut self, b: &[u8]) -> Result<()> {
        Ok(self.inner.write_all(b)?)
    }

    pub fn finish(mut self) -> Result<()> {
        Ok(self.inner.flush()?)
    }
}

pub(crate) struct LeReader<R: Read> {
    inner: R,
}

impl<R: Read> LeReader<R> {
    pub fn new(inner: R) -> Self {
        LeReader { inner }
    }

    pub fn header(&mut self, magic: &[u8; 4]) -> Result<()> {
        let mut found = [0u8; 4];
        self.inner.read_exact(&mut found)?;
        if &found != magic {
            return Err(Error::Format(format!(
                "expected magic {:?}, found {:?}",
                String::from_utf8_lossy(magic),
                String::from_utf8_lossy(&found)
            )));
        }
        let version = self.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::Format(format!(
                "unsupported format version {version} (expected {FORMAT_VERSION})"
            )));
        }
        Ok(())
    }

    pub fn u32(&mut self) -> Result<u32> {
        let mut b = [0u8; 4];
        self.inner.read_exact(&mut b)?;
        Ok(u32::from_le_bytes(b))
    }

    pub fn u64(&mut self) -> Result<usize> {
        let mut b = [0u8; 8];
        self.inner.read_exact(&mut b)?;
        usize::try_from(u64::from_le_bytes(b)).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn f64(&mut self) -> Result<f64> {
        let mut b = [0u8; 8];
        self.inner.read_exact(&mut b)?;
        Ok(f64::from_le_bytes(b))
    }

    pub fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        (0..n).map(|_| self.f64()).collect()
    }

    pub fn complexes(&mut self, n: usize) -> Result<Vec<Complex64>> {
        (0..n)
            .map(|_| Ok(Complex64::new(self.f64()?, self.f64()?)))
            .collect()
    }

    pub fn bytes(&mut self, n: usize) -> Result<Vec<u8>> {
        let mut b = vec![0u8; n];
        self.inner.read_exact(&mut b)?;
        Ok(b)
    }

    /// Fails unless the input is exhausted.
    pub fn expect_end(&mut self) -> Result<()> {
        let mut b = [0u8; 1];
        match self.inner.read(&mut b)? {
            0 => Ok(()),
            _ => Err(Error::Format("trailing bytes after payload".into())),
        }
    }
}

pub(crate) fn create(path: &Path) -> Result<LeWriter<BufWriter<File>>> {
    Ok(LeWriter::new(BufWriter::new(File::create(path)?)))
}

pub(crate) fn open(path: &Path) -> Result<LeReader<BufReader<File>>> {
    Ok(LeReader::new(BufReader::new(File::open(path)?)))
}

pub fn packed_len(bits: usize) -> usize {
    bits.div_ceil(8)
}

pub fn pack_bits(bits: &[bool]) -> Vec<u8> {
    let mut out = vec![0u8; packed_len(bits.len())];
    for (i, &b) in bits.iter().enumerate() {
        if b {
            out[i / 8] |= 1 << (i % 8);
        }
    }
    out
}

pub fn unpack_bits(bytes: &[u8], len: usize) -> Vec<bool> {
    (0..len).map(|i| bytes[i / 8] >> (i % 8) & 1 == 1).collect()
}

fn write_grid_meta<W: Write>(w: &mut LeWriter<W>, meta: &GridMeta) -> Result<()> {
    w.u64(meta.n_grid)?;
    w.u64(meta.n_freq)?;
    w.f64(meta.k_min)?;
    w.f64(meta.k_max)
}

fn read_grid_meta<R: Read>(r: &mut LeReader<R>) -> Result<GridMeta> {
    Ok(GridMeta {
        n_grid: r.u64()?,
        n_freq: r.u64()?,
        k_min: r.f64()?,
        k_max: r.f64()?,
    })
}

pub fn write_measurement(path: &Path, m: &Measurement) -> Result<()> {
    m.validate()?;
    let mut w = create(path)?;
    w.header(MAGIC_MEASUREMENT)?;
    w.u64(m.n_sensors)?;
    w.u64(m.freqs.len())?;
    w.f64(m.noise_variance)?;
    w.f64(0.0)?;
    w.f64s(&m.freqs)?;
    w.complexes(&m.y)?;
    w.finish()
}

pub fn read_measurement(path: &Path) -> Result<Measurement> {
    let mut r = open(path)?;
    r.header(MAGIC_MEASUREMENT)?;
    let n_sensors = r.u64()?;
    let n_freq = r.u64()?;
    let noise_variance = r.f64()?;
    let _reserved = r.f64()?;
    let freqs = r.f64s(n_freq)?;
    let y = r.complexes(n_sensors * n_freq)?;
    r.expect_end()?;
    let m = Measurement {
        n_sensors,
        freqs,
        y,
        noise_variance,
    };
    m.validate()?;
    Ok(m)
}

pub fn write_measurement_csv(path: &Path, m: &Measurement) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    writeln!(out, "freq_index,freq_hz,sensor,re,im")?;
    for (fi, f) in m.freqs.iter().enumerate() {
        for l in 0..m.n_sensors {
            let v = m.y[fi * m.n_sensors + l];
            writeln!(out, "{fi},{f},{l},{:e},{:e}", v.re, v.im)?;
        }
    }
    Ok(out.flush()?)
}

pub fn write_diagram(path: &Path, z: &FkDiagram, meta: &GridMeta, freqs: &[f64]) -> Result<()> {
    check_meta(meta, z.n_grid, z.n_freq)?;
    let mut w = create(path)?;
    w.header(MAGIC_DIAGRAM)?;
    write_grid_meta(&mut w, meta)?;
    w.f64s(freqs)?;
    w.complexes(&z.values)?;
    w.finish()
}

pub fn read_diagram(path: &Path) -> Result<(FkDiagram, GridMeta, Vec<f64>)> {
    let mut r = open(path)?;
    r.header(MAGIC_DIAGRAM)?;
    let meta = read_grid_meta(&mut r)?;
    let freqs = r.f64s(meta.n_freq)?;
    let values = r.complexes(meta.n_coeffs())?;
    r.expect_end()?;
    Ok((
        FkDiagram {
            n_freq: meta.n_freq,
            n_grid: meta.n_grid,
            values,
        },
        meta,
        freqs,
    ))
}

pub fn write_support(path: &Path, s: &Support, meta: &GridMeta) -> Result<()> {
    check_meta(meta, s.n_grid, s.n_freq)?;
    let mut w = create(path)?;
    w.header(MAGIC_SUPPORT)?;
    write_grid_meta(&mut w, meta)?;
    w.bytes(&pack_bits(&s.bits))?;
    w.finish()
}

pub fn read_support(path: &Path) -> Result<(Support, GridMeta)> {
    let mut r = open(path)?;
    r.header(MAGIC_SUPPORT)?;
    let meta = read_grid_meta(&mut r)?;
    let bytes = r.bytes(packed_len(meta.n_coeffs()))?;
    r.expect_end()?;
    let bits = unpack_bits(&bytes, meta.n_coeffs());
    Ok((Support::from_bits(meta.n_freq, meta.n_grid, bits)?, meta))
}

fn check_meta(meta: &GridMeta, n_grid: usize, n_freq: usize) -> Result<()> {
    if meta.n_grid != n_grid {
        return Err(Error::dim("grid points", meta.n_grid, n_grid));
    }
    if meta.n_freq != n_freq {
        return Err(Error::dim("frequencies", meta.n_freq, n_freq));
    }
    Ok(())
}

/// Writes `header` followed by one comma-separated line per row.
pub fn write_csv<I, R>(path: &Path, header: &str, rows: I) -> Result<()>
where
    I: IntoIterator<Item = R>,
    R: AsRef<str>,
{
    let mut out = BufWriter::new(File::create(path)?);
    writeln!(out, "{header}")?;
    for row in rows {
        writeln!(out, "{}", row.as_ref())?;
    }
    Ok(out.flush()?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn bit_packing_round_trips(bits in proptest::collection::vec(any::<bool>(), 0..200)) {
            let packed = pack_bits(&bits);
            prop_assert_eq!(packed.len(), packed_len(bits.len()));
            prop_assert_eq!(unpack_bits(&packed, bits.len()), bits);
        }
    }

    #[test]
    fn measurement_round_trip_and_layout() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.fkm");
        let m = Measurement {
            n_sensors: 2,
            freqs: vec![10.0, 20.0, 30.0],
            y: (0..6).map(|i| Complex64::new(i as f64, -0.5 * i as f64)).collect(),
            noise_variance: 0.25,
        };
        write_measurement(&path, &m).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        assert_eq!(&bytes[..4], b"FKMS");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
        assert_eq!(u64::from_le_bytes(bytes[8..16].try_into().unwrap()), 2);
        assert_eq!(u64::from_le_bytes(bytes[16..24].try_into().unwrap()), 3);
        assert_eq!(bytes.len(), 8 + 16 + 16 + 3 * 8 + 6 * 16);
        assert_eq!(read_measurement(&path).unwrap(), m);
    }

    #[test]
    fn wrong_magic_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.bin");
        let meta = GridMeta {
            n_grid: 3,
            n_freq: 2,
            k_min: 0.0,
            k_max: 1.0,
        };
        write_support(&path, &Support::zeros(2, 3), &meta).unwrap();
        assert!(matches!(read_measurement(&path), Err(Error::Format(_))));
        let (s, m) = read_support(&path).unwrap();
        assert_eq!(s, Support::zeros(2, 3));
        assert_eq!(m, meta);
    }
}
