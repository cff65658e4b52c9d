//! Netpbm image IO and atomic file writes.
//!
//! Reads and writes binary PPM (`P6`, RGB) and PGM (`P5`, gray), 8-bit or
//! 16-bit. Sample values map to `[0, 1]` by division by `maxval`.

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Write `bytes` to a sibling temp file, then rename over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty());
    let file_name = path
        .file_name()
        .ok_or_else(|| Error::invalid(format!("not a file path: {}", path.display())))?;
    let mut tmp_name = std::ffi::OsString::from(".");
    tmp_name.push(file_name);
    tmp_name.push(format!(".tmp{}", std::process::id()));
    let tmp = match dir {
        Some(d) => d.join(&tmp_name),
        None => tmp_name.into(),
    };
    let result = (|| {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        std::fs::rename(&tmp, path)
    })();
    if let Err(e) = result {
        let _ = std::fs::remove_file(&tmp);
        return Err(Error::io(path, e));
    }
    Ok(())
}

fn quantize(v: f32, maxval: u32) -> u32 {
    (v.clamp(0.0, 1.0) as f64 * maxval as f64).round() as u32
}

/// Encode a `1×C×H×W` tensor (C = 1 or 3) as binary Netpbm.
pub fn encode_pnm(image: &Tensor, maxval: u32) -> Result<Vec<u8>> {
    let (n, c, h, w) = image.dims4()?;
    if n != 1 || (c != 1 && c != 3) {
        return Err(Error::shape(format!(
            "image must be 1x1xHxW or 1x3xHxW, got {:?}",
            image.shape()
        )));
    }
    if !(1..=65535).contains(&maxval) {
        return Err(Error::invalid(format!("maxval {maxval} outside 1..=65535")));
    }
    let magic = if c == 3 { "P6" } else { "P5" };
    let mut out = format!("{magic}\n{w} {h}\n{maxval}\n").into_bytes();
    for y in 0..h {
        for x in 0..w {
            for ci in 0..c {
                let q = quantize(image.at4(0, ci, y, x), maxval);
                if maxval < 256 {
                    out.push(q as u8);
                } else {
                    out.extend_from_slice(&(q as u16).to_be_bytes());
                }
            }
        }
    }
    Ok(out)
}

struct Header<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Header<'_> {
    fn skip_space_and_comments(&mut self) {
        while self.pos < self.bytes.len() {
            match self.bytes[self.pos] {
                b'#' => {
                    while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                        self.pos += 1;
                    }
                }
                b if b.is_ascii_whitespace() => self.pos += 1,
                _ => break,
            }
        }
    }

    fn number(&mut self, what: &str) -> Result<u32> {
        self.skip_space_and_comments();
        let start = self.pos;
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::ImageFormat(format!("malformed header: bad {what}")))
    }
}

/// Decode binary PPM/PGM into a `1×C×H×W` tensor in `[0, 1]`.
pub fn decode_pnm(bytes: &[u8]) -> Result<Tensor> {
    if bytes.len() < 2 {
        return Err(Error::ImageFormat("file too short for a header".into()));
    }
    let channels = match &bytes[..2] {
        b"P6" => 3,
        b"P5" => 1,
        other => {
            return Err(Error::ImageFormat(format!(
                "wrong magic {:?}, expected P6 or P5",
                String::from_utf8_lossy(other)
            )))
        }
    };
    let mut hdr = Header { bytes, pos: 2 };
    let w = hdr.number("width")? as usize;
    let h = hdr.number("height")? as usize;
    let maxval = hdr.number("maxval")?;
    if w == 0 || h == 0 {
        return Err(Error::ImageFormat(format!("zero extent {w}x{h}")));
    }
    if !(1..=65535).contains(&maxval) {
        return Err(Error::ImageFormat(format!("maxval {maxval} outside 1..=65535")));
    }
    match bytes.get(hdr.pos) {
        Some(b) if b.is_ascii_whitespace() => hdr.pos += 1,
        _ => return Err(Error::ImageFormat("malformed header: missing separator".into())),
    }
    let bps = if maxval < 256 { 1 } else { 2 };
    let need = w * h * channels * bps;
    let raster = &bytes[hdr.pos..];
    if raster.len() < need {
        return Err(Error::ImageFormat(format!(
            "raster truncated: need {need} bytes, have {}",
            raster.len()
        )));
    }
    let sample = |i: usize| -> f32 {
        let v = if bps == 1 {
            raster[i] as u32
        } else {
            u16::from_be_bytes([raster[2 * i], raster[2 * i + 1]]) as u32
        };
        (v as f64 / maxval as f64) as f32
    };
    Ok(Tensor::from_fn4([1, channels, h, w], |_, c, y, x| {
        sample((y * w + x) * channels + c)
    }))
}

pub fn read_image(path: &Path) -> Result<Tensor> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_pnm(&bytes)
}

/// Write an 8-bit PPM (3 channels) or PGM (1 channel).
pub fn write_image(path: &Path, image: &Tensor) -> Result<()> {
    write_atomic(path, &encode_pnm(image, 255)?)
}

/// Write a 16-bit PGM from a single-channel tensor in `[0, 1]`.
pub fn write_gray16(path: &Path, image: &Tensor) -> Result<()> {
    write_atomic(path, &encode_pnm(image, 65535)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn white_pixel() {
        let t = decode_pnm(b"P6\n1 1\n255\n\xff\xff\xff").unwrap();
        assert_eq!(t.shape(), &[1, 3, 1, 1]);
        assert!(t.data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn comments_in_header() {
        let t = decode_pnm(b"P5\n# made by hand\n2 1\n# max\n255\n\x00\x80").unwrap();
        assert_eq!(t.data()[0], 0.0);
        assert!((t.data()[1] - 128.0 / 255.0).abs() < 1e-7);
    }

    #[test]
    fn bad_magic_and_truncation() {
        assert!(matches!(decode_pnm(b"P3\n1 1\n255\n1 2 3"), Err(Error::ImageFormat(_))));
        assert!(matches!(decode_pnm(b"P6\n2 2\n255\n\x00"), Err(Error::ImageFormat(_))));
        assert!(matches!(decode_pnm(b"P6\nx 2\n255\n"), Err(Error::ImageFormat(_))));
    }

    #[test]
    fn sixteen_bit_roundtrip() {
        let t = Tensor::from_fn4([1, 1, 2, 3], |_, _, y, x| (y * 3 + x) as f32 / 5.0);
        let back = decode_pnm(&encode_pnm(&t, 65535).unwrap()).unwrap();
        assert!(back.max_abs_diff(&t).unwrap() <= 0.5 / 65535.0 + 1e-7);
    }
}
