//! Binary PGM (P5, 8-bit) import and export. Foreground is written as 255;
//! on import any nonzero sample counts as foreground.

use std::io::{Read, Write};

use super::{RasterError, RasterImage};

pub fn write_pgm<W: Write>(img: &RasterImage, mut out: W) -> Result<(), RasterError> {
    write!(out, "P5\n{} {}\n255\n", img.width(), img.height())?;
    let bytes: Vec<u8> = img.pixels().iter().map(|&p| if p { 255 } else { 0 }).collect();
    out.write_all(&bytes)?;
    Ok(())
}

pub fn read_pgm<R: Read>(mut input: R) -> Result<RasterImage, RasterError> {
    let mut buf = Vec::new();
    input.read_to_end(&mut buf)?;
    let mut pos = 0;
    let mut token = || -> Result<String, RasterError> {
        loop {
            while pos < buf.len() && buf[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < buf.len() && buf[pos] == b'#' {
                while pos < buf.len() && buf[pos] != b'\n' {
                    pos += 1;
                }
                continue;
            }
            break;
        }
        let start = pos;
        while pos < buf.len() && !buf[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(RasterError::Pgm("truncated header".into()));
        }
        Ok(String::from_utf8_lossy(&buf[start..pos]).into_owned())
    };
    let magic = token()?;
    if magic != "P5" {
        return Err(RasterError::Pgm(format!("expected P5, found {magic:?}")));
    }
    let mut number = |what: &str| -> Result<usize, RasterError> {
        let t = token()?;
        t.parse().map_err(|_| RasterError::Pgm(format!("bad {what}: {t:?}")))
    };
    let width = number("width")?;
    let height = number("height")?;
    let maxval = number("maxval")?;
    if maxval == 0 || maxval > 255 {
        return Err(RasterError::Pgm(format!("unsupported maxval {maxval}")));
    }
    // exactly one whitespace byte separates the header from the raster
    let data_start = pos + 1;
    let need = width * height;
    if buf.len() < data_start + need {
        return Err(RasterError::Pgm(format!(
            "expected {need} pixel bytes, found {}",
            buf.len().saturating_sub(data_start)
        )));
    }
    let pixels = buf[data_start..data_start + need].iter().map(|&b| b != 0).collect();
    RasterImage::from_pixels(width, height, pixels)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let img = RasterImage::from_ascii(&["#..#", ".##.", "...."]);
        let mut bytes = Vec::new();
        write_pgm(&img, &mut bytes).unwrap();
        assert!(bytes.starts_with(b"P5\n4 3\n255\n"));
        assert_eq!(read_pgm(&bytes[..]).unwrap(), img);
    }

    #[test]
    fn header_comments_and_errors() {
        let mut bytes = b"P5\n# made by hand\n2 1\n255\n".to_vec();
        bytes.extend([0u8, 200]);
        let img = read_pgm(&bytes[..]).unwrap();
        assert!(!img.get(0, 0) && img.get(1, 0));
        assert!(read_pgm(&b"P2\n2 1\n255\n00"[..]).is_err());
        assert!(read_pgm(&b"P5\n2 2\n255\n\x00"[..]).is_err());
    }
}
