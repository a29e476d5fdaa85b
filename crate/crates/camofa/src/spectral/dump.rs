//! On-disk spectrum dumps: one binary file per channel.
//!
//! Layout: magic `"CFSP"`, little-endian `u32` version (currently 1),
//! `u32` height, `u32` width, then `H*W` `(f64 re, f64 im)` pairs in the
//! DC-centered layout, row-major.

use std::fs::File;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use num_complex::Complex64;

use super::{Spectrum, SpectralError};

const MAGIC: [u8; 4] = *b"CFSP";
const VERSION: u32 = 1;

/// A single decoded channel dump.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumDump {
    pub h: usize,
    pub w: usize,
    /// Centered layout, row-major.
    pub bins: Vec<Complex64>,
}

/// Serializes one channel of a spectrum.
pub fn write_dump(spec: &Spectrum, channel: usize, out: &mut impl Write) -> Result<(), SpectralError> {
    let (h, w, _) = spec.dims();
    out.write_all(&MAGIC)?;
    out.write_all(&VERSION.to_le_bytes())?;
    out.write_all(&(h as u32).to_le_bytes())?;
    out.write_all(&(w as u32).to_le_bytes())?;
    let mut payload = Vec::with_capacity(h * w * 16);
    for z in spec.channel(channel) {
        payload.extend_from_slice(&z.re.to_le_bytes());
        payload.extend_from_slice(&z.im.to_le_bytes());
    }
    out.write_all(&payload)?;
    Ok(())
}

/// Parses a channel dump, validating magic, version, and payload length.
pub fn read_dump(input: &mut impl Read) -> Result<SpectrumDump, SpectralError> {
    let mut header = [0u8; 16];
    let mut read = 0;
    while read < header.len() {
        let n = input.read(&mut header[read..])?;
        if n == 0 {
            return Err(SpectralError::Truncated {
                expected: header.len(),
                actual: read,
            });
        }
        read += n;
    }
    let mut magic = [0u8; 4];
    magic.copy_from_slice(&header[..4]);
    if magic != MAGIC {
        return Err(SpectralError::BadMagic { found: magic });
    }
    let version = u32::from_le_bytes(header[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(SpectralError::BadVersion { found: version });
    }
    let h = u32::from_le_bytes(header[8..12].try_into().unwrap()) as usize;
    let w = u32::from_le_bytes(header[12..16].try_into().unwrap()) as usize;
    let expected = h * w * 16;
    let mut payload = Vec::new();
    input.read_to_end(&mut payload)?;
    if payload.len() != expected {
        return Err(SpectralError::Truncated {
            expected,
            actual: payload.len(),
        });
    }
    let bins = payload
        .chunks_exact(16)
        .map(|chunk| {
            Complex64::new(
                f64::from_le_bytes(chunk[..8].try_into().unwrap()),
                f64::from_le_bytes(chunk[8..].try_into().unwrap()),
            )
        })
        .collect();
    Ok(SpectrumDump { h, w, bins })
}

/// Writes every channel of a spectrum to `dir` as `{stem}.c{n}.cfsp`;
/// returns the written paths.
pub fn dump_spectrum(
    spec: &Spectrum,
    dir: &Path,
    stem: &str,
) -> Result<Vec<PathBuf>, SpectralError> {
    let (_, _, c) = spec.dims();
    let mut paths = Vec::with_capacity(c);
    for ch in 0..c {
        let path = dir.join(format!("{stem}.c{ch}.cfsp"));
        let mut file = File::create(&path)?;
        write_dump(spec, ch, &mut file)?;
        paths.push(path);
    }
    Ok(paths)
}
