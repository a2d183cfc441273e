//! Minimal NIfTI-1 single-file reader and writer.
//!
//! Reads little-endian `.nii` / `.nii.gz` (gzip detected by magic bytes) with
//! datatypes uint8, int16, int32, float32 and float64. Writes float32 with an
//! sform affine. Voxel data is kept in file order (x fastest).

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use flate2::read::GzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;

use crate::error::{Error, Result};

const HEADER_SIZE: usize = 348;
const VOX_OFFSET: usize = 352;

const DT_UINT8: i16 = 2;
const DT_INT16: i16 = 4;
const DT_INT32: i16 = 8;
const DT_FLOAT32: i16 = 16;
const DT_FLOAT64: i16 = 64;

/// A decoded image with intensity scaling already applied.
#[derive(Debug, Clone, PartialEq)]
pub struct NiftiImage {
    /// Extent of each used dimension, `dim[1..=dim[0]]`.
    pub dims: Vec<usize>,
    pub pixdim: [f64; 3],
    /// Voxel to world, row-major.
    pub affine: [[f64; 4]; 4],
    /// Voxel values in file order (first axis fastest).
    pub data: Vec<f64>,
}

fn le_i16(b: &[u8], off: usize) -> i16 {
    i16::from_le_bytes([b[off], b[off + 1]])
}

fn le_i32(b: &[u8], off: usize) -> i32 {
    i32::from_le_bytes(b[off..off + 4].try_into().unwrap())
}

fn le_f32(b: &[u8], off: usize) -> f32 {
    f32::from_le_bytes(b[off..off + 4].try_into().unwrap())
}

fn is_gzip(bytes: &[u8]) -> bool {
    bytes.len() >= 2 && bytes[0] == 0x1f && bytes[1] == 0x8b
}

pub fn read_nifti(path: impl AsRef<Path>) -> Result<NiftiImage> {
    let path = path.as_ref();
    let raw = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_nifti(&raw)
}

/// Decodes an in-memory `.nii` or `.nii.gz` buffer.
pub fn parse_nifti(raw: &[u8]) -> Result<NiftiImage> {
    let inflated;
    let bytes = if is_gzip(raw) {
        let mut out = Vec::new();
        GzDecoder::new(raw)
            .read_to_end(&mut out)
            .map_err(|e| Error::Format(format!("corrupt gzip stream: {e}")))?;
        inflated = out;
        &inflated[..]
    } else {
        raw
    };

    if bytes.len() < HEADER_SIZE {
        return Err(Error::Format(format!(
            "file too small for a NIfTI-1 header ({} bytes)",
            bytes.len()
        )));
    }
    if le_i32(bytes, 0) != HEADER_SIZE as i32 {
        return Err(Error::Format(
            "sizeof_hdr is not 348 (not little-endian NIfTI-1)".into(),
        ));
    }
    if &bytes[344..348] != b"n+1\0" {
        return Err(Error::Format(format!(
            "bad NIfTI magic {:?}, expected single-file \"n+1\"",
            String::from_utf8_lossy(&bytes[344..348])
        )));
    }

    let ndim = le_i16(bytes, 40);
    if !(1..=7).contains(&ndim) {
        return Err(Error::Format(format!("invalid dim[0] = {ndim}")));
    }
    let mut dims = Vec::with_capacity(ndim as usize);
    for i in 1..=ndim as usize {
        let d = le_i16(bytes, 40 + 2 * i);
        if d < 1 {
            return Err(Error::Format(format!("invalid dim[{i}] = {d}")));
        }
        dims.push(d as usize);
    }

    let datatype = le_i16(bytes, 70);
    let width = match datatype {
        DT_UINT8 => 1,
        DT_INT16 => 2,
        DT_INT32 | DT_FLOAT32 => 4,
        DT_FLOAT64 => 8,
        other => {
            return Err(Error::Format(format!("unsupported datatype code {other}")));
        }
    };

    let mut pix = [0f64; 8];
    for (i, p) in pix.iter_mut().enumerate() {
        *p = le_f32(bytes, 76 + 4 * i) as f64;
    }
    let pixdim = [pix[1].abs(), pix[2].abs(), pix[3].abs()];

    let vox_offset = le_f32(bytes, 108);
    if !(vox_offset >= HEADER_SIZE as f32) {
        return Err(Error::Format(format!("invalid vox_offset {vox_offset}")));
    }
    let vox_offset = vox_offset as usize;
    let slope = le_f32(bytes, 112) as f64;
    let inter = le_f32(bytes, 116) as f64;

    let count: usize = dims.iter().product();
    let needed = vox_offset + count * width;
    if bytes.len() < needed {
        return Err(Error::Format(format!(
            "truncated voxel data: need {needed} bytes, have {}",
            bytes.len()
        )));
    }
    let payload = &bytes[vox_offset..needed];
    let mut data: Vec<f64> = match datatype {
        DT_UINT8 => payload.iter().map(|&v| v as f64).collect(),
        DT_INT16 => payload
            .chunks_exact(2)
            .map(|c| i16::from_le_bytes([c[0], c[1]]) as f64)
            .collect(),
        DT_INT32 => payload
            .chunks_exact(4)
            .map(|c| i32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect(),
        DT_FLOAT32 => payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect(),
        _ => payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect(),
    };
    // A zero slope means "no scaling".
    if slope != 0.0 && slope.is_finite() && inter.is_finite() {
        for v in &mut data {
            *v = *v * slope + inter;
        }
    }
    if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
        return Err(Error::Format(format!("non-finite voxel value at index {pos}")));
    }

    let affine = header_affine(bytes, &pix);
    Ok(NiftiImage {
        dims,
        pixdim,
        affine,
        data,
    })
}

fn header_affine(b: &[u8], pix: &[f64; 8]) -> [[f64; 4]; 4] {
    let qform_code = le_i16(b, 252);
    let sform_code = le_i16(b, 254);
    let mut a = [[0.0; 4]; 4];
    a[3][3] = 1.0;
    if sform_code > 0 {
        for (r, row) in a.iter_mut().take(3).enumerate() {
            for (c, v) in row.iter_mut().enumerate() {
                *v = le_f32(b, 280 + 16 * r + 4 * c) as f64;
            }
        }
    } else if qform_code > 0 {
        let qb = le_f32(b, 256) as f64;
        let qc = le_f32(b, 260) as f64;
        let qd = le_f32(b, 264) as f64;
        let qa = (1.0 - (qb * qb + qc * qc + qd * qd)).max(0.0).sqrt();
        let qfac = if pix[0] < 0.0 { -1.0 } else { 1.0 };
        let rot = [
            [
                qa * qa + qb * qb - qc * qc - qd * qd,
                2.0 * (qb * qc - qa * qd),
                2.0 * (qb * qd + qa * qc),
            ],
            [
                2.0 * (qb * qc + qa * qd),
                qa * qa + qc * qc - qb * qb - qd * qd,
                2.0 * (qc * qd - qa * qb),
            ],
            [
                2.0 * (qb * qd - qa * qc),
                2.0 * (qc * qd + qa * qb),
                qa * qa + qd * qd - qc * qc - qb * qb,
            ],
        ];
        let scale = [pix[1], pix[2], qfac * pix[3]];
        for r in 0..3 {
            for c in 0..3 {
                a[r][c] = rot[r][c] * scale[c];
            }
            a[r][3] = le_f32(b, 268 + 4 * r) as f64;
        }
    } else {
        for i in 0..3 {
            a[i][i] = if pix[i + 1] > 0.0 { pix[i + 1] } else { 1.0 };
        }
    }
    a
}

/// Encodes as float32 with an sform affine. Values and affine are rounded to f32.
pub fn encode_nifti(img: &NiftiImage) -> Result<Vec<u8>> {
    if img.dims.is_empty() || img.dims.len() > 7 {
        return Err(Error::Argument(format!(
            "cannot encode {}-dimensional image",
            img.dims.len()
        )));
    }
    let count: usize = img.dims.iter().product();
    if count != img.data.len() {
        return Err(Error::Argument(format!(
            "image has {} values but dims {:?}",
            img.data.len(),
            img.dims
        )));
    }
    if let Some(&d) = img.dims.iter().find(|&&d| d > i16::MAX as usize) {
        return Err(Error::Argument(format!("dimension {d} exceeds NIfTI-1 limit")));
    }

    let mut h = vec![0u8; VOX_OFFSET];
    let put_i16 = |h: &mut [u8], off: usize, v: i16| h[off..off + 2].copy_from_slice(&v.to_le_bytes());
    let put_f32 = |h: &mut [u8], off: usize, v: f32| h[off..off + 4].copy_from_slice(&v.to_le_bytes());

    h[0..4].copy_from_slice(&(HEADER_SIZE as i32).to_le_bytes());
    put_i16(&mut h, 40, img.dims.len() as i16);
    for i in 1..8 {
        let d = img.dims.get(i - 1).copied().unwrap_or(1);
        put_i16(&mut h, 40 + 2 * i, d as i16);
    }
    put_i16(&mut h, 70, DT_FLOAT32);
    put_i16(&mut h, 72, 32);
    put_f32(&mut h, 76, 1.0);
    for i in 0..3 {
        put_f32(&mut h, 80 + 4 * i, img.pixdim[i] as f32);
    }
    for i in 3..7 {
        put_f32(&mut h, 80 + 4 * i, 1.0);
    }
    put_f32(&mut h, 108, VOX_OFFSET as f32);
    put_f32(&mut h, 112, 1.0);
    put_f32(&mut h, 116, 0.0);
    // xyzt_units: mm + sec
    h[123] = 2 | 8;
    put_i16(&mut h, 252, 0);
    put_i16(&mut h, 254, 1);
    for r in 0..3 {
        for c in 0..4 {
            put_f32(&mut h, 280 + 16 * r + 4 * c, img.affine[r][c] as f32);
        }
    }
    h[344..348].copy_from_slice(b"n+1\0");

    let mut out = h;
    out.reserve(count * 4);
    for &v in &img.data {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    Ok(out)
}

/// Writes `img`; the stream is gzip-compressed when the path ends in `.gz`.
pub fn write_nifti(path: impl AsRef<Path>, img: &NiftiImage) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_nifti(img)?;
    let gz = path
        .extension()
        .map(|e| e.eq_ignore_ascii_case("gz"))
        .unwrap_or(false);
    let payload = if gz {
        // Fixed header fields (no mtime, no name) keep the output byte-stable.
        let mut enc = GzEncoder::new(Vec::new(), Compression::default());
        enc.write_all(&bytes).map_err(|e| Error::io(path, e))?;
        enc.finish().map_err(|e| Error::io(path, e))?
    } else {
        bytes
    };
    fs::write(path, payload).map_err(|e| Error::io(path, e))
}
