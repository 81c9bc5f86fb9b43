//! PFM/PPM interchange and atomic file output.
//!
//! Depth maps are grayscale Portable FloatMaps (`Pf`), 32-bit floats, rows
//! stored bottom-up. We always write little-endian (negative scale) and read
//! either byte order. Images are binary PPM (`P6`).

use std::fs;
use std::io::Write;
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use crffuse_core::{DepthMap, RgbImage};
use tempfile::NamedTempFile;

/// Writes `bytes` to a temp file next to `path`, then renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut tmp = NamedTempFile::new_in(dir).with_context(|| format!("creating temp file in {}", dir.display()))?;
    tmp.write_all(bytes).with_context(|| format!("writing {}", path.display()))?;
    // temp files are created owner-only; outputs should look like ordinary files
    #[cfg(unix)]
    {
        use std::os::unix::fs::PermissionsExt;
        tmp.as_file().set_permissions(fs::Permissions::from_mode(0o644))?;
    }
    tmp.persist(path).map_err(|e| anyhow!(e.error)).with_context(|| format!("renaming into {}", path.display()))?;
    Ok(())
}

pub fn encode_pfm(map: &DepthMap) -> Vec<u8> {
    let (w, h) = (map.width(), map.height());
    let mut out = format!("Pf\n{w} {h}\n-1.0\n").into_bytes();
    out.reserve(4 * w * h);
    for y in (0..h).rev() {
        for &v in &map.values()[y * w..(y + 1) * w] {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    out
}

pub fn decode_pfm(bytes: &[u8]) -> Result<DepthMap> {
    let mut header = Header::new(bytes);
    match header.token()? {
        "Pf" => {}
        "PF" => bail!("color PFM (PF) is not a depth map; expected grayscale Pf"),
        other => bail!("not a PFM file (magic {other:?})"),
    }
    let w: usize = header.number("width")?;
    let h: usize = header.number("height")?;
    let scale: f32 = header.number("scale")?;
    if scale == 0.0 || !scale.is_finite() {
        bail!("invalid PFM scale {scale}");
    }
    let body = header.body()?;
    let need = w.checked_mul(h).and_then(|n| n.checked_mul(4)).ok_or_else(|| anyhow!("PFM size overflows"))?;
    if body.len() != need {
        bail!("PFM {w}x{h} needs {need} data bytes, found {}", body.len());
    }
    let mut values = vec![0.0f64; w * h];
    for (k, chunk) in body.chunks_exact(4).enumerate() {
        let raw = [chunk[0], chunk[1], chunk[2], chunk[3]];
        let v = if scale < 0.0 { f32::from_le_bytes(raw) } else { f32::from_be_bytes(raw) };
        let (row, x) = (k / w, k % w);
        values[(h - 1 - row) * w + x] = v as f64;
    }
    Ok(DepthMap::new(w, h, values)?)
}

pub fn encode_ppm(img: &RgbImage) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", img.width(), img.height()).into_bytes();
    for px in img.pixels() {
        out.extend(px.iter().map(|c| (c * 255.0).round() as u8));
    }
    out
}

pub fn decode_ppm(bytes: &[u8]) -> Result<RgbImage> {
    let mut header = Header::new(bytes);
    let magic = header.token()?;
    if magic != "P6" {
        bail!("not a binary PPM file (magic {magic:?})");
    }
    let w: usize = header.number("width")?;
    let h: usize = header.number("height")?;
    let maxval: u32 = header.number("maxval")?;
    if maxval == 0 || maxval > 255 {
        bail!("unsupported PPM maxval {maxval} (1..=255)");
    }
    let body = header.body()?;
    if body.len() != 3 * w * h {
        bail!("PPM {w}x{h} needs {} data bytes, found {}", 3 * w * h, body.len());
    }
    let m = maxval as f64;
    let pixels = body
        .chunks_exact(3)
        .map(|c| [c[0] as f64 / m, c[1] as f64 / m, c[2] as f64 / m])
        .collect::<Vec<_>>();
    if pixels.iter().flatten().any(|c| *c > 1.0) {
        bail!("PPM sample exceeds maxval {maxval}");
    }
    Ok(RgbImage::new(w, h, pixels)?)
}

pub fn read_pfm(path: &Path) -> Result<DepthMap> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    decode_pfm(&bytes).with_context(|| format!("malformed depth file {}", path.display()))
}

pub fn write_pfm(path: &Path, map: &DepthMap) -> Result<()> {
    write_atomic(path, &encode_pfm(map))
}

pub fn read_ppm(path: &Path) -> Result<RgbImage> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    decode_ppm(&bytes).with_context(|| format!("malformed image file {}", path.display()))
}

pub fn write_ppm(path: &Path, img: &RgbImage) -> Result<()> {
    write_atomic(path, &encode_ppm(img))
}

/// Netpbm-style header: whitespace separated tokens, `#` comments, and a
/// single whitespace byte before the binary body.
struct Header<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Header<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    fn token(&mut self) -> Result<&'a str> {
        loop {
            match self.bytes.get(self.pos) {
                Some(b'#') => {
                    while self.bytes.get(self.pos).is_some_and(|b| *b != b'\n') {
                        self.pos += 1;
                    }
                }
                Some(b) if b.is_ascii_whitespace() => self.pos += 1,
                Some(_) => break,
                None => bail!("truncated header"),
            }
        }
        let start = self.pos;
        while self.bytes.get(self.pos).is_some_and(|b| !b.is_ascii_whitespace()) {
            self.pos += 1;
        }
        std::str::from_utf8(&self.bytes[start..self.pos]).map_err(|_| anyhow!("header is not ASCII"))
    }

    fn number<T: std::str::FromStr>(&mut self, what: &str) -> Result<T> {
        let tok = self.token()?;
        tok.parse().map_err(|_| anyhow!("bad {what} {tok:?} in header"))
    }

    fn body(self) -> Result<&'a [u8]> {
        match self.bytes.get(self.pos) {
            Some(b) if b.is_ascii_whitespace() => Ok(&self.bytes[self.pos + 1..]),
            _ => bail!("truncated header"),
        }
    }
}
