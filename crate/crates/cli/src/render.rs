//! Portable graymap rendering of f-k magnitude maps.
//!
//! Row f is frequency index f (ascending top to bottom), column k is grid
//! index k (ascending left to right). Linear mode maps `v/max` to
//! `round(255·v/max)`. dB mode maps `20·log10(v/max)` clipped to
//! `[−range, 0]` onto `[0, 255]`; zeros render black.

use std::io::Write;
use std::path::Path;

use crate::error::{CliError, CliResult};

pub fn pixels(values: &[f64], db: bool, range_db: f64) -> Vec<u8> {
    let max = values.iter().cloned().fold(0.0, f64::max);
    if max <= 0.0 {
        return vec![0; values.len()];
    }
    values
        .iter()
        .map(|&v| {
            if v <= 0.0 {
                return 0;
            }
            let level = if db {
                let rel = (20.0 * (v / max).log10()).max(-range_db);
                (rel + range_db) / range_db
            } else {
                v / max
            };
            (255.0 * level).round().clamp(0.0, 255.0) as u8
        })
        .collect()
}

/// Binary (P5) graymap with maxval 255.
pub fn write_pgm(path: &Path, width: usize, height: usize, pixels: &[u8]) -> CliResult<()> {
    assert_eq!(pixels.len(), width * height);
    let io_err = |source| CliError::Io {
        path: path.display().to_string(),
        source,
    };
    let mut file = std::io::BufWriter::new(std::fs::File::create(path).map_err(io_err)?);
    write!(file, "P5\n{width} {height}\n255\n").map_err(io_err)?;
    file.write_all(pixels).map_err(io_err)?;
    file.flush().map_err(io_err)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_zero_is_black() {
        assert_eq!(pixels(&[0.0; 6], false, 40.0), vec![0; 6]);
        assert_eq!(pixels(&[0.0; 6], true, 40.0), vec![0; 6]);
    }

    #[test]
    fn single_bin_is_the_only_bright_pixel() {
        let mut v = vec![0.0; 12];
        v[7] = 3.5;
        let p = pixels(&v, false, 40.0);
        assert_eq!(p[7], 255);
        assert_eq!(p.iter().filter(|&&x| x > 0).count(), 1);
    }

    #[test]
    fn db_mode_matches_hand_formula() {
        let v = [1.0, 0.1, 0.01, 1e-4];
        let p = pixels(&v, true, 40.0);
        // 0 dB, −20 dB, −40 dB, clipped below −40 dB
        assert_eq!(p, vec![255, 128, 0, 0]);
        let p = pixels(&[2.0, 1.0], true, 30.0);
        let expected = (255.0 * (30.0 + 20.0 * 0.5f64.log10()) / 30.0).round() as u8;
        assert_eq!(p[1], expected);
    }

    #[test]
    fn pgm_layout() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.pgm");
        write_pgm(&path, 3, 2, &[0, 1, 2, 3, 4, 5]).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        assert_eq!(&bytes[..11], b"P5\n3 2\n255\n");
        assert_eq!(&bytes[11..], &[0, 1, 2, 3, 4, 5]);
    }
}
