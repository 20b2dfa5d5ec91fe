use crate::error::{FrescoError, Result};
use crate::scalar::Real;
use crate::tensor::Grid;

/// Encode an RGB grid as binary P6 with maxval 255. Values are clamped to
/// `[0, 1]` and rounded to the nearest level.
pub fn encode_ppm<T: Real>(frame: &Grid<T>) -> Vec<u8> {
    assert_eq!(frame.channels(), 3, "PPM frames are RGB");
    let mut out = format!("P6\n{} {}\n255\n", frame.width(), frame.height()).into_bytes();
    out.reserve(frame.data().len());
    for &v in frame.data() {
        let q = (v.to_f64_lossy().clamp(0.0, 1.0) * 255.0).round() as u8;
        out.push(q);
    }
    out
}

struct Header<'a> {
    rest: &'a [u8],
}

impl<'a> Header<'a> {
    fn skip_ws_and_comments(&mut self) {
        loop {
            while let Some((&c, tail)) = self.rest.split_first() {
                if c.is_ascii_whitespace() {
                    self.rest = tail;
                } else {
                    break;
                }
            }
            if self.rest.first() == Some(&b'#') {
                let end = self.rest.iter().position(|&c| c == b'\n').unwrap_or(self.rest.len());
                self.rest = &self.rest[end..];
            } else {
                return;
            }
        }
    }

    fn number(&mut self, what: &str) -> Result<usize> {
        self.skip_ws_and_comments();
        let end = self.rest.iter().position(|c| !c.is_ascii_digit()).unwrap_or(self.rest.len());
        if end == 0 {
            return Err(FrescoError::format(format!("PPM header: missing {what}")));
        }
        let s = std::str::from_utf8(&self.rest[..end]).unwrap();
        self.rest = &self.rest[end..];
        s.parse().map_err(|_| FrescoError::format(format!("PPM header: bad {what}")))
    }
}

/// Decode a binary P6 PPM (maxval ≤ 255) to an RGB grid scaled to `[0, 1]`.
pub fn decode_ppm<T: Real>(bytes: &[u8]) -> Result<Grid<T>> {
    if !bytes.starts_with(b"P6") {
        return Err(FrescoError::format("not a binary PPM (missing P6 magic)"));
    }
    let mut h = Header { rest: &bytes[2..] };
    let width = h.number("width")?;
    let height = h.number("height")?;
    let maxval = h.number("maxval")?;
    if maxval == 0 || maxval > 255 {
        return Err(FrescoError::format(format!("unsupported PPM maxval {maxval}")));
    }
    match h.rest.split_first() {
        Some((c, tail)) if c.is_ascii_whitespace() => h.rest = tail,
        _ => return Err(FrescoError::format("PPM header: missing separator before pixel data")),
    }
    let n = width * height * 3;
    if h.rest.len() < n {
        return Err(FrescoError::format(format!(
            "truncated PPM: expected {n} bytes of pixel data, found {}",
            h.rest.len()
        )));
    }
    let scale = T::one() / T::from_usize_lossy(maxval);
    Grid::from_vec(
        height,
        width,
        3,
        h.rest[..n].iter().map(|&b| T::from_usize_lossy(b as usize) * scale).collect(),
    )
}
