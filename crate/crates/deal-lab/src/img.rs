//! RGB images, binary masks, and their on-disk formats (binary PPM/PGM).

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// H×W×3 image, values in [0,1], row-major with interleaved RGB.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    pub h: usize,
    pub w: usize,
    pub data: Vec<f64>,
}

impl Image {
    pub fn new(h: usize, w: usize) -> Self {
        Image {
            h,
            w,
            data: vec![0.0; h * w * 3],
        }
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> f64 {
        self.data[(y * self.w + x) * 3 + c]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, c: usize, v: f64) {
        self.data[(y * self.w + x) * 3 + c] = v;
    }

    /// Planar NCHW tensor [1, 3, h, w].
    pub fn to_tensor(&self) -> Tensor {
        let mut out = vec![0.0; 3 * self.h * self.w];
        for c in 0..3 {
            for y in 0..self.h {
                for x in 0..self.w {
                    out[(c * self.h + y) * self.w + x] = self.get(y, x, c);
                }
            }
        }
        Tensor::new(vec![1, 3, self.h, self.w], out).expect("image tensor shape")
    }

    pub fn flipped_horizontal(&self) -> Image {
        let mut out = Image::new(self.h, self.w);
        for y in 0..self.h {
            for x in 0..self.w {
                for c in 0..3 {
                    out.set(y, x, c, self.get(y, self.w - 1 - x, c));
                }
            }
        }
        out
    }

    pub fn flipped_vertical(&self) -> Image {
        let mut out = Image::new(self.h, self.w);
        for y in 0..self.h {
            for x in 0..self.w {
                for c in 0..3 {
                    out.set(y, x, c, self.get(self.h - 1 - y, x, c));
                }
            }
        }
        out
    }
}

/// Stack images into an NCHW batch tensor [n, 3, h, w].
pub fn batch_tensor(images: &[&Image]) -> Tensor {
    assert!(!images.is_empty());
    let (h, w) = (images[0].h, images[0].w);
    let mut out = vec![0.0; images.len() * 3 * h * w];
    for (i, img) in images.iter().enumerate() {
        assert_eq!((img.h, img.w), (h, w));
        for c in 0..3 {
            for y in 0..h {
                for x in 0..w {
                    out[((i * 3 + c) * h + y) * w + x] = img.get(y, x, c);
                }
            }
        }
    }
    Tensor::new(vec![images.len(), 3, h, w], out).expect("batch tensor shape")
}

/// H×W binary mask (true = foreground).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mask {
    pub h: usize,
    pub w: usize,
    pub data: Vec<bool>,
}

impl Mask {
    pub fn empty(h: usize, w: usize) -> Self {
        Mask {
            h,
            w,
            data: vec![false; h * w],
        }
    }

    pub fn full(h: usize, w: usize) -> Self {
        Mask {
            h,
            w,
            data: vec![true; h * w],
        }
    }

    /// Binarize a probability map at a strict threshold (`p > t`).
    pub fn from_prob(map: &[f64], h: usize, w: usize, t: f64) -> Self {
        Mask {
            h,
            w,
            data: map.iter().map(|&p| p > t).collect(),
        }
    }

    /// Binarize at an inclusive threshold (`p >= t`), used for CAM cuts.
    pub fn from_prob_inclusive(map: &[f64], h: usize, w: usize, t: f64) -> Self {
        Mask {
            h,
            w,
            data: map.iter().map(|&p| p >= t).collect(),
        }
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.data.iter().any(|&b| b)
    }

    /// Foreground fraction of 0/1 values as f64, for loss targets.
    pub fn to_f64(&self) -> Vec<f64> {
        self.data.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect()
    }

    /// True iff every foreground pixel of `self` is also foreground in `other`.
    pub fn subset_of(&self, other: &Mask) -> bool {
        self.data
            .iter()
            .zip(&other.data)
            .all(|(&a, &b)| !a || b)
    }
}

fn read_header(r: &mut impl Read, path: &Path, magic: &str) -> Result<(usize, usize)> {
    // Read bytes one at a time; PNM headers are tiny.
    let mut bytes = Vec::new();
    let mut tokens = Vec::new();
    let mut cur = String::new();
    let mut one = [0u8; 1];
    while tokens.len() < 4 {
        r.read_exact(&mut one).map_err(|e| Error::io(path, e))?;
        bytes.push(one[0]);
        let ch = one[0] as char;
        if ch == '#' {
            // comment until newline
            loop {
                r.read_exact(&mut one).map_err(|e| Error::io(path, e))?;
                if one[0] == b'\n' {
                    break;
                }
            }
            continue;
        }
        if ch.is_whitespace() {
            if !cur.is_empty() {
                tokens.push(std::mem::take(&mut cur));
            }
        } else {
            cur.push(ch);
        }
    }
    if tokens[0] != magic {
        return Err(Error::Schema(format!(
            "{}: expected {} file, got {:?}",
            path.display(),
            magic,
            tokens[0]
        )));
    }
    let w: usize = tokens[1]
        .parse()
        .map_err(|_| Error::Schema(format!("{}: bad width", path.display())))?;
    let h: usize = tokens[2]
        .parse()
        .map_err(|_| Error::Schema(format!("{}: bad height", path.display())))?;
    if tokens[3] != "255" {
        return Err(Error::Schema(format!(
            "{}: only maxval 255 supported",
            path.display()
        )));
    }
    Ok((w, h))
}

pub fn write_ppm(path: &Path, img: &Image) -> Result<()> {
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(f);
    write!(w, "P6\n{} {}\n255\n", img.w, img.h).map_err(|e| Error::io(path, e))?;
    let bytes: Vec<u8> = img
        .data
        .iter()
        .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    w.write_all(&bytes).map_err(|e| Error::io(path, e))
}

pub fn read_ppm(path: &Path) -> Result<Image> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(f);
    let (w, h) = read_header(&mut r, path, "P6")?;
    let mut bytes = vec![0u8; w * h * 3];
    r.read_exact(&mut bytes).map_err(|e| Error::io(path, e))?;
    Ok(Image {
        h,
        w,
        data: bytes.iter().map(|&b| b as f64 / 255.0).collect(),
    })
}

/// 255 = foreground, 0 = background.
pub fn write_pgm(path: &Path, mask: &Mask) -> Result<()> {
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(f);
    write!(w, "P5\n{} {}\n255\n", mask.w, mask.h).map_err(|e| Error::io(path, e))?;
    let bytes: Vec<u8> = mask.data.iter().map(|&b| if b { 255 } else { 0 }).collect();
    w.write_all(&bytes).map_err(|e| Error::io(path, e))
}

pub fn read_pgm(path: &Path) -> Result<Mask> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(f);
    let (w, h) = read_header(&mut r, path, "P5")?;
    let mut bytes = vec![0u8; w * h];
    r.read_exact(&mut bytes).map_err(|e| Error::io(path, e))?;
    Ok(Mask {
        h,
        w,
        data: bytes.iter().map(|&b| b >= 128).collect(),
    })
}

/// Grayscale [0,1] map written as PGM with 8-bit quantization.
pub fn write_pgm_gray(path: &Path, map: &[f64], h: usize, w: usize) -> Result<()> {
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut wr = BufWriter::new(f);
    write!(wr, "P5\n{} {}\n255\n", w, h).map_err(|e| Error::io(path, e))?;
    let bytes: Vec<u8> = map
        .iter()
        .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    wr.write_all(&bytes).map_err(|e| Error::io(path, e))
}
