//! 8-bit RGB rasters, binary masks, and their PPM/PGM codecs.

use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RasterError {
    #[error("dimension mismatch: {a_width}x{a_height} vs {b_width}x{b_height}")]
    DimensionMismatch {
        a_width: u32,
        a_height: u32,
        b_width: u32,
        b_height: u32,
    },
    #[error("raster io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed netpbm file: {0}")]
    BadFormat(String),
}

/// 8-bit RGB image, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageRaster {
    pub width: u32,
    pub height: u32,
    pub data: Vec<u8>,
}

impl ImageRaster {
    pub fn filled(width: u32, height: u32, rgb: [u8; 3]) -> Self {
        let mut data = Vec::with_capacity((3 * width * height) as usize);
        for _ in 0..width * height {
            data.extend_from_slice(&rgb);
        }
        ImageRaster {
            width,
            height,
            data,
        }
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> [u8; 3] {
        let i = (3 * (y * self.width + x)) as usize;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, rgb: [u8; 3]) {
        let i = (3 * (y * self.width + x)) as usize;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    pub fn same_dims(&self, other: &ImageRaster) -> bool {
        self.width == other.width && self.height == other.height
    }
}

/// What a binary mask delineates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaskRole {
    Hand,
    /// In-hand object mask (the grasp response map).
    Object,
    /// Chroma-key background mask.
    Key,
}

/// Binary raster; 1 marks foreground for the mask's role.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskRaster {
    pub width: u32,
    pub height: u32,
    pub data: Vec<u8>,
    pub role: MaskRole,
}

impl MaskRaster {
    pub fn zeros(width: u32, height: u32, role: MaskRole) -> Self {
        MaskRaster {
            width,
            height,
            data: vec![0; (width * height) as usize],
            role,
        }
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> bool {
        self.data[(y * self.width + x) as usize] != 0
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, on: bool) {
        self.data[(y * self.width + x) as usize] = on as u8;
    }

    pub fn count_ones(&self) -> usize {
        self.data.iter().filter(|&&v| v != 0).count()
    }

    pub fn same_dims(&self, other: &MaskRaster) -> bool {
        self.width == other.width && self.height == other.height
    }
}

fn dims_err(aw: u32, ah: u32, bw: u32, bh: u32) -> RasterError {
    RasterError::DimensionMismatch {
        a_width: aw,
        a_height: ah,
        b_width: bw,
        b_height: bh,
    }
}

pub fn require_same_dims_mask(a: &MaskRaster, b: &MaskRaster) -> Result<(), RasterError> {
    if !a.same_dims(b) {
        return Err(dims_err(a.width, a.height, b.width, b.height));
    }
    Ok(())
}

// Binary PPM (P6) and PGM (P5), maxval 255. Masks write 255 for foreground
// and read any value >= 128 as foreground.

pub fn write_ppm<W: Write>(mut writer: W, img: &ImageRaster) -> Result<(), RasterError> {
    write!(writer, "P6\n{} {}\n255\n", img.width, img.height)?;
    writer.write_all(&img.data)?;
    Ok(())
}

pub fn write_pgm<W: Write>(mut writer: W, mask: &MaskRaster) -> Result<(), RasterError> {
    write!(writer, "P5\n{} {}\n255\n", mask.width, mask.height)?;
    let bytes: Vec<u8> = mask.data.iter().map(|&v| if v != 0 { 255 } else { 0 }).collect();
    writer.write_all(&bytes)?;
    Ok(())
}

fn read_header<R: BufRead>(reader: &mut R, magic: &str) -> Result<(u32, u32), RasterError> {
    let mut tokens = Vec::new();
    let mut line = String::new();
    while tokens.len() < 4 {
        line.clear();
        if reader.read_line(&mut line)? == 0 {
            return Err(RasterError::BadFormat("truncated header".into()));
        }
        let content = line.split('#').next().unwrap_or("");
        tokens.extend(content.split_whitespace().map(str::to_string));
    }
    if tokens[0] != magic {
        return Err(RasterError::BadFormat(format!(
            "expected {magic}, got {}",
            tokens[0]
        )));
    }
    let width: u32 = tokens[1]
        .parse()
        .map_err(|_| RasterError::BadFormat("bad width".into()))?;
    let height: u32 = tokens[2]
        .parse()
        .map_err(|_| RasterError::BadFormat("bad height".into()))?;
    if tokens[3] != "255" {
        return Err(RasterError::BadFormat("maxval must be 255".into()));
    }
    Ok((width, height))
}

pub fn read_ppm<R: Read>(reader: R) -> Result<ImageRaster, RasterError> {
    let mut reader = BufReader::new(reader);
    let (width, height) = read_header(&mut reader, "P6")?;
    let mut data = vec![0u8; (3 * width * height) as usize];
    reader.read_exact(&mut data)?;
    Ok(ImageRaster {
        width,
        height,
        data,
    })
}

pub fn read_pgm<R: Read>(reader: R, role: MaskRole) -> Result<MaskRaster, RasterError> {
    let mut reader = BufReader::new(reader);
    let (width, height) = read_header(&mut reader, "P5")?;
    let mut bytes = vec![0u8; (width * height) as usize];
    reader.read_exact(&mut bytes)?;
    Ok(MaskRaster {
        width,
        height,
        data: bytes.iter().map(|&v| (v >= 128) as u8).collect(),
        role,
    })
}

pub fn save_ppm(path: &Path, img: &ImageRaster) -> Result<(), RasterError> {
    let mut buf = Vec::new();
    write_ppm(&mut buf, img)?;
    std::fs::write(path, buf)?;
    Ok(())
}

pub fn load_ppm(path: &Path) -> Result<ImageRaster, RasterError> {
    let data = std::fs::read(path)?;
    read_ppm(data.as_slice())
}

pub fn save_pgm(path: &Path, mask: &MaskRaster) -> Result<(), RasterError> {
    let mut buf = Vec::new();
    write_pgm(&mut buf, mask)?;
    std::fs::write(path, buf)?;
    Ok(())
}

pub fn load_pgm(path: &Path, role: MaskRole) -> Result<MaskRaster, RasterError> {
    let data = std::fs::read(path)?;
    read_pgm(data.as_slice(), role)
}
