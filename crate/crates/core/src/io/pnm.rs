//! Binary netpbm images: `P5` (gray) and `P6` (RGB), 8-bit, maxval 255.

use std::fs;
use std::path::Path;

use crate::density::{to_gray, GrayImage, RgbImage};
use crate::{Error, Result};

const KIND: &str = "PNM image";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Channels {
    Gray,
    Rgb,
}

impl Channels {
    fn count(self) -> usize {
        match self {
            Channels::Gray => 1,
            Channels::Rgb => 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PnmImage {
    pub width: usize,
    pub height: usize,
    pub channels: Channels,
    pub data: Vec<u8>,
}

impl PnmImage {
    /// BT.601 luma for RGB, `v / 255` for gray.
    pub fn to_gray(&self) -> Result<GrayImage> {
        match self.channels {
            Channels::Gray => GrayImage::from_luma8(self.width, self.height, &self.data),
            Channels::Rgb => to_gray(&RgbImage::new(self.width, self.height, self.data.clone())?),
        }
    }
}

struct Header<'a> {
    rest: &'a [u8],
}

impl<'a> Header<'a> {
    fn skip_space_and_comments(&mut self) {
        loop {
            match self.rest.first() {
                Some(b) if b.is_ascii_whitespace() => self.rest = &self.rest[1..],
                Some(b'#') => {
                    let end = self
                        .rest
                        .iter()
                        .position(|&b| b == b'\n')
                        .unwrap_or(self.rest.len());
                    self.rest = &self.rest[end..];
                }
                _ => return,
            }
        }
    }

    fn number(&mut self, what: &str) -> Result<usize> {
        self.skip_space_and_comments();
        let len = self.rest.iter().take_while(|b| b.is_ascii_digit()).count();
        if len == 0 {
            return Err(Error::format(KIND, format!("missing {what}")));
        }
        let text = std::str::from_utf8(&self.rest[..len]).expect("ascii digits");
        self.rest = &self.rest[len..];
        text.parse()
            .map_err(|_| Error::format(KIND, format!("{what} {text} out of range")))
    }
}

pub fn decode(bytes: &[u8]) -> Result<PnmImage> {
    let channels = match bytes.get(..2) {
        Some(b"P5") => Channels::Gray,
        Some(b"P6") => Channels::Rgb,
        Some(m) => {
            return Err(Error::format(
                KIND,
                format!(
                    "unsupported magic {:?}, expected P5 or P6",
                    String::from_utf8_lossy(m)
                ),
            ))
        }
        None => return Err(Error::format(KIND, "file too short")),
    };
    let mut header = Header { rest: &bytes[2..] };
    let width = header.number("width")?;
    let height = header.number("height")?;
    let maxval = header.number("maxval")?;
    if width == 0 || height == 0 {
        return Err(Error::format(KIND, "zero-sized image"));
    }
    if maxval != 255 {
        return Err(Error::format(
            KIND,
            format!("maxval {maxval} unsupported, expected 255"),
        ));
    }
    match header.rest.first() {
        Some(b) if b.is_ascii_whitespace() => {}
        _ => return Err(Error::format(KIND, "missing whitespace after maxval")),
    }
    let body = &header.rest[1..];
    let expected = width
        .checked_mul(height)
        .and_then(|p| p.checked_mul(channels.count()))
        .ok_or_else(|| Error::format(KIND, "dimensions overflow"))?;
    if body.len() < expected {
        return Err(Error::format(
            KIND,
            format!("raster has {} bytes, expected {expected}", body.len()),
        ));
    }
    Ok(PnmImage {
        width,
        height,
        channels,
        data: body[..expected].to_vec(),
    })
}

pub fn encode(img: &PnmImage) -> Vec<u8> {
    let magic = match img.channels {
        Channels::Gray => "P5",
        Channels::Rgb => "P6",
    };
    let mut out = format!("{magic}\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend_from_slice(&img.data);
    out
}

pub fn read_file(path: impl AsRef<Path>) -> Result<PnmImage> {
    decode(&fs::read(path)?)
}

pub fn write_file(path: impl AsRef<Path>, img: &PnmImage) -> Result<()> {
    fs::write(path, encode(img))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn decodes_gray_with_comments() {
        let mut bytes = b"P5\n# made by hand\n3 2 # width height\n255\n".to_vec();
        bytes.extend_from_slice(&[0, 128, 255, 1, 2, 3]);
        let img = decode(&bytes).unwrap();
        assert_eq!(
            (img.width, img.height, img.channels),
            (3, 2, Channels::Gray)
        );
        assert_eq!(img.data, vec![0, 128, 255, 1, 2, 3]);
        let g = img.to_gray().unwrap();
        assert_eq!(g.get(0, 2), 1.0);
    }

    #[test]
    fn decodes_rgb_and_round_trips() {
        let img = PnmImage {
            width: 2,
            height: 1,
            channels: Channels::Rgb,
            // A 10 byte happens to be ASCII whitespace; it must survive as data.
            data: vec![255, 0, 0, 10, 10, 10],
        };
        let back = decode(&encode(&img)).unwrap();
        assert_eq!(back, img);
        assert!((back.to_gray().unwrap().get(0, 0) - 0.299).abs() < 1e-12);
    }

    #[test]
    fn rejects_malformed() {
        for bytes in [
            &b"P3\n1 1\n255\n\x00"[..],
            b"P5\n1 1\n65535\n\x00\x00",
            b"P5\n2 2\n255\n\x00",
            b"P5\n0 2\n255\n",
            b"P5\n2\n",
            b"P",
            b"P5\n1 1\n255",
        ] {
            assert!(
                matches!(decode(bytes), Err(Error::Format { .. })),
                "{bytes:?}"
            );
        }
    }
}
