//! NIfTI-1 header encoding and decoding.
//!
//! Single-file `.nii` / `.nii.gz` only. Both endiannesses are accepted on
//! read (detected from `sizeof_hdr`); files are always written little-endian
//! with `sform_code = 2`.

use byteorder::{BigEndian, ByteOrder, LittleEndian, WriteBytesExt};

use crate::error::{Error, Result};

pub const HEADER_SIZE: usize = 348;
pub const VOX_OFFSET: f32 = 352.0;

pub const DT_UINT8: i16 = 2;
pub const DT_INT16: i16 = 4;
pub const DT_INT32: i16 = 8;
pub const DT_FLOAT32: i16 = 16;
pub const DT_FLOAT64: i16 = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Endian {
    Little,
    Big,
}

/// The subset of the 348-byte NIfTI-1 header this crate reads and writes.
#[derive(Debug, Clone)]
pub struct Header {
    pub dim: [i16; 8],
    pub datatype: i16,
    pub bitpix: i16,
    pub pixdim: [f32; 8],
    pub vox_offset: f32,
    pub scl_slope: f32,
    pub scl_inter: f32,
    pub qform_code: i16,
    pub sform_code: i16,
    pub quatern: [f32; 3],
    pub qoffset: [f32; 3],
    pub srow: [[f32; 4]; 3],
    pub endian: Endian,
}

impl Header {
    pub fn bytes_per_voxel(&self) -> Result<usize> {
        match self.datatype {
            DT_UINT8 => Ok(1),
            DT_INT16 => Ok(2),
            DT_INT32 | DT_FLOAT32 => Ok(4),
            DT_FLOAT64 => Ok(8),
            other => Err(Error::Datatype(other)),
        }
    }

    /// Spatial dims, after checking the file is effectively 3D.
    pub fn dims3(&self) -> Result<(usize, usize, usize)> {
        let nd = self.dim[0];
        if !(1..=7).contains(&nd) {
            return Err(Error::Format(format!("dim[0] = {nd} out of range")));
        }
        if nd > 3 {
            for d in 4..=nd as usize {
                if self.dim[d] > 1 {
                    return Err(Error::UnsupportedShape(format!(
                        "{}D image with dim[{}] = {} timepoints",
                        nd, d, self.dim[d]
                    )));
                }
            }
        }
        let get = |i: usize| -> Result<usize> {
            let v = if (i as i16) <= nd { self.dim[i] } else { 1 };
            if v < 1 {
                return Err(Error::Format(format!("dim[{i}] = {v} not positive")));
            }
            Ok(v as usize)
        };
        Ok((get(1)?, get(2)?, get(3)?))
    }

    /// Voxel-to-world affine: sform if sform_code > 0, else qform, else
    /// diagonal pixdim.
    pub fn affine(&self) -> [[f64; 4]; 4] {
        if self.sform_code > 0 {
            let mut a = [[0.0; 4]; 4];
            for r in 0..3 {
                for c in 0..4 {
                    a[r][c] = self.srow[r][c] as f64;
                }
            }
            a[3] = [0.0, 0.0, 0.0, 1.0];
            a
        } else if self.qform_code > 0 {
            self.qform_affine()
        } else {
            let mut a = [[0.0; 4]; 4];
            for d in 0..3 {
                a[d][d] = self.pixdim[d + 1] as f64;
            }
            a[3][3] = 1.0;
            a
        }
    }

    fn qform_affine(&self) -> [[f64; 4]; 4] {
        let b = self.quatern[0] as f64;
        let c = self.quatern[1] as f64;
        let d = self.quatern[2] as f64;
        let a = (1.0 - b * b - c * c - d * d).max(0.0).sqrt();
        let qfac = if self.pixdim[0] < 0.0 { -1.0 } else { 1.0 };
        let (dx, dy) = (self.pixdim[1] as f64, self.pixdim[2] as f64);
        let dz = self.pixdim[3] as f64 * qfac;
        let r = [
            [
                a * a + b * b - c * c - d * d,
                2.0 * (b * c - a * d),
                2.0 * (b * d + a * c),
            ],
            [
                2.0 * (b * c + a * d),
                a * a + c * c - b * b - d * d,
                2.0 * (c * d - a * b),
            ],
            [
                2.0 * (b * d - a * c),
                2.0 * (c * d + a * b),
                a * a + d * d - b * b - c * c,
            ],
        ];
        let scale = [dx, dy, dz];
        let mut m = [[0.0; 4]; 4];
        for i in 0..3 {
            for j in 0..3 {
                m[i][j] = r[i][j] * scale[j];
            }
            m[i][3] = self.qoffset[i] as f64;
        }
        m[3][3] = 1.0;
        m
    }

    pub fn decode(buf: &[u8]) -> Result<Header> {
        if buf.len() < HEADER_SIZE {
            return Err(Error::Format(format!("header truncated at {} bytes", buf.len())));
        }
        let sizeof_le = LittleEndian::read_i32(&buf[0..4]);
        let sizeof_be = BigEndian::read_i32(&buf[0..4]);
        let endian = if sizeof_le == 348 {
            Endian::Little
        } else if sizeof_be == 348 {
            Endian::Big
        } else {
            return Err(Error::Format(format!(
                "sizeof_hdr = {sizeof_le} (expected 348)"
            )));
        };
        let magic = &buf[344..348];
        if &magic[0..3] != b"n+1" || magic[3] != 0 {
            return Err(Error::Format(format!("magic = {:?}", magic)));
        }
        macro_rules! ri16 {
            ($off:expr) => {
                match endian {
                    Endian::Little => LittleEndian::read_i16(&buf[$off..$off + 2]),
                    Endian::Big => BigEndian::read_i16(&buf[$off..$off + 2]),
                }
            };
        }
        macro_rules! rf32 {
            ($off:expr) => {
                match endian {
                    Endian::Little => LittleEndian::read_f32(&buf[$off..$off + 4]),
                    Endian::Big => BigEndian::read_f32(&buf[$off..$off + 4]),
                }
            };
        }
        let mut dim = [0i16; 8];
        for (i, d) in dim.iter_mut().enumerate() {
            *d = ri16!(40 + 2 * i);
        }
        let mut pixdim = [0f32; 8];
        for (i, p) in pixdim.iter_mut().enumerate() {
            *p = rf32!(76 + 4 * i);
        }
        let mut srow = [[0f32; 4]; 3];
        for (r, row) in srow.iter_mut().enumerate() {
            for (c, v) in row.iter_mut().enumerate() {
                *v = rf32!(280 + 16 * r + 4 * c);
            }
        }
        Ok(Header {
            dim,
            datatype: ri16!(70),
            bitpix: ri16!(72),
            pixdim,
            vox_offset: rf32!(108),
            scl_slope: rf32!(112),
            scl_inter: rf32!(116),
            qform_code: ri16!(252),
            sform_code: ri16!(254),
            quatern: [rf32!(256), rf32!(260), rf32!(264)],
            qoffset: [rf32!(268), rf32!(272), rf32!(276)],
            srow,
            endian: Endian::Little,
        })
    }

    /// Encode as a 348-byte little-endian header (plus 4 pad bytes so data
    /// starts at vox_offset 352).
    pub fn encode(&self) -> Vec<u8> {
        let mut buf = vec![0u8; HEADER_SIZE + 4];
        LittleEndian::write_i32(&mut buf[0..4], 348);
        // regular/dim_info left zero
        for (i, d) in self.dim.iter().enumerate() {
            LittleEndian::write_i16(&mut buf[40 + 2 * i..], *d);
        }
        LittleEndian::write_i16(&mut buf[70..], self.datatype);
        LittleEndian::write_i16(&mut buf[72..], self.bitpix);
        for (i, p) in self.pixdim.iter().enumerate() {
            LittleEndian::write_f32(&mut buf[76 + 4 * i..], *p);
        }
        LittleEndian::write_f32(&mut buf[108..], self.vox_offset);
        LittleEndian::write_f32(&mut buf[112..], self.scl_slope);
        LittleEndian::write_f32(&mut buf[116..], self.scl_inter);
        // xyzt_units: mm (2)
        buf[123] = 2;
        LittleEndian::write_i16(&mut buf[252..], self.qform_code);
        LittleEndian::write_i16(&mut buf[254..], self.sform_code);
        LittleEndian::write_f32(&mut buf[256..], self.quatern[0]);
        LittleEndian::write_f32(&mut buf[260..], self.quatern[1]);
        LittleEndian::write_f32(&mut buf[264..], self.quatern[2]);
        LittleEndian::write_f32(&mut buf[268..], self.qoffset[0]);
        LittleEndian::write_f32(&mut buf[272..], self.qoffset[1]);
        LittleEndian::write_f32(&mut buf[276..], self.qoffset[2]);
        for r in 0..3 {
            for c in 0..4 {
                (&mut buf[280 + 16 * r + 4 * c..284 + 16 * r + 4 * c])
                    .write_f32::<LittleEndian>(self.srow[r][c])
                    .unwrap();
            }
        }
        buf[344..348].copy_from_slice(b"n+1\0");
        buf
    }
}

/// Decode the voxel payload into f64, applying scl_slope/scl_inter when
/// scl_slope != 0.
pub fn decode_data(h: &Header, raw: &[u8], nvox: usize) -> Result<Vec<f64>> {
    let bpv = h.bytes_per_voxel()?;
    if raw.len() < nvox * bpv {
        return Err(Error::Format(format!(
            "data truncated: {} bytes for {} voxels of {} bytes",
            raw.len(),
            nvox,
            bpv
        )));
    }
    let le = h.endian == Endian::Little;
    let mut out = Vec::with_capacity(nvox);
    for i in 0..nvox {
        let off = i * bpv;
        let v = match h.datatype {
            DT_UINT8 => raw[off] as f64,
            DT_INT16 => {
                let s = &raw[off..off + 2];
                (if le {
                    LittleEndian::read_i16(s)
                } else {
                    BigEndian::read_i16(s)
                }) as f64
            }
            DT_INT32 => {
                let s = &raw[off..off + 4];
                (if le {
                    LittleEndian::read_i32(s)
                } else {
                    BigEndian::read_i32(s)
                }) as f64
            }
            DT_FLOAT32 => {
                let s = &raw[off..off + 4];
                (if le {
                    LittleEndian::read_f32(s)
                } else {
                    BigEndian::read_f32(s)
                }) as f64
            }
            DT_FLOAT64 => {
                let s = &raw[off..off + 8];
                if le {
                    LittleEndian::read_f64(s)
                } else {
                    BigEndian::read_f64(s)
                }
            }
            other => return Err(Error::Datatype(other)),
        };
        out.push(v);
    }
    if h.scl_slope != 0.0 && (h.scl_slope != 1.0 || h.scl_inter != 0.0) {
        let (m, b) = (h.scl_slope as f64, h.scl_inter as f64);
        for v in &mut out {
            *v = m * *v + b;
        }
    }
    Ok(out)
}
