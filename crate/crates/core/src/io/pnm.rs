use super::{malformed, with_path, IoError};
use crate::element::Element;
use crate::tensor::Tensor;
use std::path::Path;

/// An 8-bit binary PGM (P5, one channel) or PPM (P6, three channels).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PnmImage {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    /// Interleaved samples, row-major, `maxval` 255.
    pub data: Vec<u8>,
}

/// `floor(255·v + 0.5)` clamped to `[0, 255]`.
pub fn unit_to_byte(v: f64) -> u8 {
    (255.0 * v + 0.5).floor().clamp(0.0, 255.0) as u8
}

pub fn byte_to_unit(b: u8) -> f64 {
    b as f64 / 255.0
}

pub fn encode_pnm(img: &PnmImage) -> Vec<u8> {
    let magic = if img.channels == 3 { "P6" } else { "P5" };
    let mut out = format!("{magic}\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend_from_slice(&img.data);
    out
}

struct Header<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Header<'_> {
    fn skip_space_and_comments(&mut self) {
        while let Some(&b) = self.bytes.get(self.pos) {
            if b == b'#' {
                while self.bytes.get(self.pos).is_some_and(|&c| c != b'\n') {
                    self.pos += 1;
                }
            } else if b.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn number(&mut self, what: &str) -> Result<usize, IoError> {
        self.skip_space_and_comments();
        let start = self.pos;
        while self.bytes.get(self.pos).is_some_and(u8::is_ascii_digit) {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(malformed("PNM", start, format!("expected {what}")));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .unwrap()
            .parse()
            .map_err(|_| malformed("PNM", start, format!("{what} out of range")))
    }
}

pub fn decode_pnm(bytes: &[u8]) -> Result<PnmImage, IoError> {
    let channels = match bytes.get(..2) {
        Some(b"P5") => 1,
        Some(b"P6") => 3,
        _ => return Err(malformed("PNM", 0, "expected P5 or P6 magic")),
    };
    let mut h = Header { bytes, pos: 2 };
    let width = h.number("width")?;
    let height = h.number("height")?;
    let max_at = h.pos;
    let maxval = h.number("maxval")?;
    if width == 0 || height == 0 {
        return Err(malformed("PNM", max_at, "zero image dimension"));
    }
    if !(1..=255).contains(&maxval) {
        return Err(malformed("PNM", max_at, format!("maxval {maxval} is not 8-bit")));
    }
    match bytes.get(h.pos) {
        Some(b) if b.is_ascii_whitespace() => h.pos += 1,
        _ => return Err(malformed("PNM", h.pos, "expected whitespace before pixel data")),
    }
    let n = width * height * channels;
    let data = bytes
        .get(h.pos..h.pos + n)
        .ok_or_else(|| malformed("PNM", bytes.len(), format!("expected {n} pixel bytes")))?;
    let data = if maxval == 255 {
        data.to_vec()
    } else {
        data.iter()
            .map(|&b| unit_to_byte(b as f64 / maxval as f64))
            .collect()
    };
    Ok(PnmImage {
        width,
        height,
        channels,
        data,
    })
}

impl PnmImage {
    /// Planar `[C,H,W]` tensor with values `b / 255`.
    pub fn to_tensor<E: Element>(&self) -> Tensor<E> {
        let (c, hw) = (self.channels, self.width * self.height);
        Tensor::from_fn(&[c, self.height, self.width], |i| {
            let (ch, p) = (i / hw, i % hw);
            E::from_f64(byte_to_unit(self.data[p * c + ch]))
        })
    }

    /// Accepts `[H,W]`, `[C,H,W]` or `[1,C,H,W]` with one or three channels.
    pub fn from_tensor<E: Element>(t: &Tensor<E>) -> Result<Self, IoError> {
        let (c, h, w) = match *t.shape() {
            [h, w] => (1, h, w),
            [c, h, w] | [1, c, h, w] => (c, h, w),
            _ => return Err(malformed("PNM", 0, format!("cannot store shape {:?}", t.shape()))),
        };
        if c != 1 && c != 3 {
            return Err(malformed("PNM", 0, format!("{c} channels; PGM/PPM hold 1 or 3")));
        }
        let hw = h * w;
        let data = (0..c * hw)
            .map(|i| {
                let (p, ch) = (i / c, i % c);
                unit_to_byte(t.data()[ch * hw + p].to_f64())
            })
            .collect();
        Ok(PnmImage {
            width: w,
            height: h,
            channels: c,
            data,
        })
    }
}

/// Reads a PGM/PPM as a `[C,H,W]` tensor in `[0, 1]`.
pub fn read_image<E: Element>(path: impl AsRef<Path>) -> Result<Tensor<E>, IoError> {
    let path = path.as_ref();
    let bytes = with_path(path, std::fs::read(path))?;
    let img = decode_pnm(&bytes).map_err(|e| match e {
        IoError::Malformed { offset, detail, .. } => malformed(
            "PNM",
            offset,
            format!("{}: {detail}", path.display()),
        ),
        e => e,
    })?;
    Ok(img.to_tensor())
}

/// Writes P5 for one channel, P6 for three.
pub fn write_image<E: Element>(path: impl AsRef<Path>, t: &Tensor<E>) -> Result<(), IoError> {
    let path = path.as_ref();
    let img = PnmImage::from_tensor(t)?;
    with_path(path, std::fs::write(path, encode_pnm(&img)))
}

/// Reads a single-channel mask as `[H,W]` with values in `{0, 1}` (byte > 127).
pub fn read_mask<E: Element>(path: impl AsRef<Path>) -> Result<Tensor<E>, IoError> {
    let path = path.as_ref();
    let bytes = with_path(path, std::fs::read(path))?;
    let img = decode_pnm(&bytes)?;
    if img.channels != 1 {
        return Err(malformed("PNM", 0, format!("{}: mask must be P5", path.display())));
    }
    Ok(Tensor::from_fn(&[img.height, img.width], |i| {
        if img.data[i] > 127 {
            E::one()
        } else {
            E::zero()
        }
    }))
}

/// Writes a `{0, 1}` mask as a P5 image with bytes 0 and 255.
pub fn write_mask<E: Element>(path: impl AsRef<Path>, mask: &Tensor<E>) -> Result<(), IoError> {
    write_image(path, mask)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn byte_conversion_endpoints() {
        assert_eq!(unit_to_byte(1.0), 255);
        assert_eq!(unit_to_byte(0.0), 0);
        assert_eq!(unit_to_byte(0.5), 128);
        assert_eq!(unit_to_byte(-3.0), 0);
        assert_eq!(unit_to_byte(7.0), 255);
    }

    #[test]
    fn header_with_comments() {
        let mut bytes = b"P5\n# made by hand\n2 1\n255\n".to_vec();
        bytes.extend_from_slice(&[0, 200]);
        let img = decode_pnm(&bytes).unwrap();
        assert_eq!((img.width, img.height, img.channels), (2, 1, 1));
        assert_eq!(img.data, vec![0, 200]);
        assert_eq!(decode_pnm(&encode_pnm(&img)).unwrap(), img);
    }

    #[test]
    fn malformed_headers_name_offsets() {
        match decode_pnm(b"P7\n1 1\n255\n\0") {
            Err(IoError::Malformed { offset, .. }) => assert_eq!(offset, 0),
            other => panic!("{other:?}"),
        }
        match decode_pnm(b"P5\n1 x\n255\n\0") {
            Err(IoError::Malformed { offset, .. }) => assert_eq!(offset, 5),
            other => panic!("{other:?}"),
        }
        match decode_pnm(b"P5\n2 2\n255\n\0\0") {
            Err(IoError::Malformed { offset, .. }) => assert_eq!(offset, 13),
            other => panic!("{other:?}"),
        }
        assert!(decode_pnm(b"P5\n1 1\n65535\n\0\0").is_err());
    }

    #[test]
    fn ppm_tensor_is_planar() {
        let img = PnmImage {
            width: 2,
            height: 1,
            channels: 3,
            data: vec![255, 0, 0, 0, 0, 255],
        };
        let t: Tensor<f32> = img.to_tensor();
        assert_eq!(t.shape(), &[3, 1, 2]);
        assert_eq!(t.data(), &[1.0, 0.0, 0.0, 0.0, 0.0, 1.0]);
        assert_eq!(PnmImage::from_tensor(&t).unwrap(), img);
    }
}
