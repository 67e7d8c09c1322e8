//! In-memory 3D volumes and subject stacks, with NIfTI-1 read/write.
//!
//! Data is stored x-fastest: linear index `i + nx*(j + ny*k)`.

use std::fs::File;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use flate2::read::MultiGzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;

use crate::error::{Error, Result};
use crate::nifti::{self, Header};

/// A 3D scalar grid with voxel sizes (mm), a voxel-to-world affine, and an
/// optional binary mask of identical dims.
#[derive(Debug, Clone)]
pub struct Volume3D {
    pub dims: (usize, usize, usize),
    pub voxel_size: (f64, f64, f64),
    pub affine: [[f64; 4]; 4],
    pub data: Vec<f64>,
    pub mask: Option<Vec<bool>>,
}

impl Volume3D {
    /// Build a volume with a diagonal affine derived from the voxel size.
    pub fn new(dims: (usize, usize, usize), voxel_size: (f64, f64, f64), data: Vec<f64>) -> Result<Self> {
        let affine = [
            [voxel_size.0, 0.0, 0.0, 0.0],
            [0.0, voxel_size.1, 0.0, 0.0],
            [0.0, 0.0, voxel_size.2, 0.0],
            [0.0, 0.0, 0.0, 1.0],
        ];
        Self::with_affine(dims, voxel_size, affine, data)
    }

    pub fn with_affine(
        dims: (usize, usize, usize),
        voxel_size: (f64, f64, f64),
        affine: [[f64; 4]; 4],
        data: Vec<f64>,
    ) -> Result<Self> {
        let v = Volume3D {
            dims,
            voxel_size,
            affine,
            data,
            mask: None,
        };
        v.validate()?;
        Ok(v)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.nvox();
        if self.data.len() != n {
            return Err(Error::UnsupportedShape(format!(
                "data length {} != {}x{}x{}",
                self.data.len(),
                self.dims.0,
                self.dims.1,
                self.dims.2
            )));
        }
        if self.affine[3] != [0.0, 0.0, 0.0, 1.0] {
            return Err(Error::Format("affine last row must be (0,0,0,1)".into()));
        }
        let vs = [self.voxel_size.0, self.voxel_size.1, self.voxel_size.2];
        for (c, &s) in vs.iter().enumerate() {
            if s <= 0.0 {
                return Err(Error::InvalidArgument(format!("voxel_size[{c}] = {s}")));
            }
            let norm = (0..3).map(|r| self.affine[r][c].powi(2)).sum::<f64>().sqrt();
            if (norm - s).abs() > 1e-6 * s.max(1.0) {
                return Err(Error::Format(format!(
                    "voxel_size[{c}] = {s} but affine column norm = {norm}"
                )));
            }
        }
        if let Some(m) = &self.mask {
            if m.len() != n {
                return Err(Error::UnsupportedShape("mask dims differ from data".into()));
            }
        }
        Ok(())
    }

    pub fn nvox(&self) -> usize {
        self.dims.0 * self.dims.1 * self.dims.2
    }

    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.dims.0 * (j + self.dims.1 * k)
    }

    pub fn coords(&self, idx: usize) -> (usize, usize, usize) {
        let i = idx % self.dims.0;
        let j = (idx / self.dims.0) % self.dims.1;
        let k = idx / (self.dims.0 * self.dims.1);
        (i, j, k)
    }

    /// Voxel index -> world mm via the affine.
    pub fn voxel_to_world(&self, i: usize, j: usize, k: usize) -> (f64, f64, f64) {
        let v = [i as f64, j as f64, k as f64, 1.0];
        let mut w = [0.0; 3];
        for (r, wr) in w.iter_mut().enumerate() {
            *wr = (0..4).map(|c| self.affine[r][c] * v[c]).sum();
        }
        (w[0], w[1], w[2])
    }

    /// World mm -> continuous voxel coordinates (inverse affine).
    pub fn world_to_voxel(&self, x: f64, y: f64, z: f64) -> (f64, f64, f64) {
        let a = &self.affine;
        // invert the upper-left 3x3
        let m = [
            [a[0][0], a[0][1], a[0][2]],
            [a[1][0], a[1][1], a[1][2]],
            [a[2][0], a[2][1], a[2][2]],
        ];
        let det = m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
            - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
        let inv = [
            [
                (m[1][1] * m[2][2] - m[1][2] * m[2][1]) / det,
                (m[0][2] * m[2][1] - m[0][1] * m[2][2]) / det,
                (m[0][1] * m[1][2] - m[0][2] * m[1][1]) / det,
            ],
            [
                (m[1][2] * m[2][0] - m[1][0] * m[2][2]) / det,
                (m[0][0] * m[2][2] - m[0][2] * m[2][0]) / det,
                (m[0][2] * m[1][0] - m[0][0] * m[1][2]) / det,
            ],
            [
                (m[1][0] * m[2][1] - m[1][1] * m[2][0]) / det,
                (m[0][1] * m[2][0] - m[0][0] * m[2][1]) / det,
                (m[0][0] * m[1][1] - m[0][1] * m[1][0]) / det,
            ],
        ];
        let t = [x - a[0][3], y - a[1][3], z - a[2][3]];
        (
            inv[0][0] * t[0] + inv[0][1] * t[1] + inv[0][2] * t[2],
            inv[1][0] * t[0] + inv[1][1] * t[1] + inv[1][2] * t[2],
            inv[2][0] * t[0] + inv[2][1] * t[1] + inv[2][2] * t[2],
        )
    }
}

/// n volumes sharing dims/affine plus the boolean analysis mask that defines
/// which voxels enter statistics.
#[derive(Debug, Clone)]
pub struct VolumeStack {
    pub subject_ids: Vec<String>,
    pub volumes: Vec<Volume3D>,
    pub analysis_mask: Vec<bool>,
}

impl VolumeStack {
    pub fn n_subjects(&self) -> usize {
        self.volumes.len()
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        self.volumes[0].dims
    }

    pub fn voxel_size(&self) -> (f64, f64, f64) {
        self.volumes[0].voxel_size
    }

    pub fn affine(&self) -> [[f64; 4]; 4] {
        self.volumes[0].affine
    }

    pub fn mask_indices(&self) -> Vec<usize> {
        self.analysis_mask
            .iter()
            .enumerate()
            .filter_map(|(i, &m)| if m { Some(i) } else { None })
            .collect()
    }

    pub fn new(subject_ids: Vec<String>, volumes: Vec<Volume3D>, analysis_mask: Vec<bool>) -> Result<Self> {
        if volumes.is_empty() {
            return Err(Error::InvalidArgument("empty stack".into()));
        }
        let first = &volumes[0];
        for (i, v) in volumes.iter().enumerate() {
            if v.dims != first.dims {
                return Err(Error::Conformability(format!(
                    "subject {} dims {:?} != {:?}",
                    subject_ids.get(i).cloned().unwrap_or_default(),
                    v.dims,
                    first.dims
                )));
            }
            if !affines_close(&v.affine, &first.affine, 1e-4) {
                return Err(Error::Conformability(format!(
                    "subject {} affine differs beyond 1e-4",
                    subject_ids.get(i).cloned().unwrap_or_default()
                )));
            }
        }
        if !analysis_mask.iter().any(|&m| m) {
            return Err(Error::EmptyMask);
        }
        Ok(VolumeStack {
            subject_ids,
            volumes,
            analysis_mask,
        })
    }
}

pub fn affines_close(a: &[[f64; 4]; 4], b: &[[f64; 4]; 4], tol: f64) -> bool {
    a.iter()
        .flatten()
        .zip(b.iter().flatten())
        .all(|(x, y)| (x - y).abs() <= tol)
}

/// Rule defining the analysis mask when assembling a stack.
#[derive(Debug, Clone)]
pub enum MaskRule {
    /// Voxels strictly positive in every subject (default).
    Intersection,
    /// An explicit binary mask volume.
    Explicit(PathBuf),
    /// Voxels whose across-subject mean exceeds the threshold.
    MeanThreshold(f64),
}

fn is_gz(path: &Path) -> bool {
    path.extension().map(|e| e == "gz").unwrap_or(false)
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut buf = Vec::new();
    if is_gz(path) {
        MultiGzDecoder::new(f)
            .read_to_end(&mut buf)
            .map_err(|e| Error::io(path, e))?;
    } else {
        let mut f = f;
        f.read_to_end(&mut buf).map_err(|e| Error::io(path, e))?;
    }
    Ok(buf)
}

/// Read a NIfTI-1 volume (.nii or .nii.gz), converting data to f64 and
/// applying any scl_slope/scl_inter scaling.
pub fn read_volume(path: impl AsRef<Path>) -> Result<Volume3D> {
    let path = path.as_ref();
    let buf = read_bytes(path)?;
    let h = Header::decode(&buf)?;
    let (nx, ny, nz) = h.dims3()?;
    let nvox = nx * ny * nz;
    let off = h.vox_offset.max(nifti::HEADER_SIZE as f32) as usize;
    if buf.len() < off {
        return Err(Error::Format(format!("vox_offset {off} beyond file length")));
    }
    let data = nifti::decode_data(&h, &buf[off..], nvox)?;
    let affine = h.affine();
    let voxel_size = (
        (0..3).map(|r| affine[r][0].powi(2)).sum::<f64>().sqrt(),
        (0..3).map(|r| affine[r][1].powi(2)).sum::<f64>().sqrt(),
        (0..3).map(|r| affine[r][2].powi(2)).sum::<f64>().sqrt(),
    );
    Volume3D::with_affine((nx, ny, nz), voxel_size, affine, data)
}

fn header_for(v: &Volume3D, datatype: i16, bitpix: i16) -> Header {
    let mut srow = [[0f32; 4]; 3];
    for r in 0..3 {
        for c in 0..4 {
            srow[r][c] = v.affine[r][c] as f32;
        }
    }
    Header {
        dim: [
            3,
            v.dims.0 as i16,
            v.dims.1 as i16,
            v.dims.2 as i16,
            1,
            1,
            1,
            1,
        ],
        datatype,
        bitpix,
        pixdim: [
            1.0,
            v.voxel_size.0 as f32,
            v.voxel_size.1 as f32,
            v.voxel_size.2 as f32,
            0.0,
            0.0,
            0.0,
            0.0,
        ],
        vox_offset: nifti::VOX_OFFSET,
        scl_slope: 1.0,
        scl_inter: 0.0,
        qform_code: 0,
        sform_code: 2,
        quatern: [0.0; 3],
        qoffset: [0.0; 3],
        srow,
        endian: nifti::Endian::Little,
    }
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    if is_gz(path) {
        let mut enc = GzEncoder::new(f, Compression::default());
        enc.write_all(bytes).map_err(|e| Error::io(path, e))?;
        enc.finish().map_err(|e| Error::io(path, e))?;
    } else {
        let mut f = f;
        f.write_all(bytes).map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

/// Sibling path for a volume's mask: `x.nii` -> `x_mask.nii`,
/// `x.nii.gz` -> `x_mask.nii.gz`.
pub fn mask_path(path: &Path) -> PathBuf {
    let name = path.file_name().unwrap_or_default().to_string_lossy();
    let new = if let Some(stem) = name.strip_suffix(".nii.gz") {
        format!("{stem}_mask.nii.gz")
    } else if let Some(stem) = name.strip_suffix(".nii") {
        format!("{stem}_mask.nii")
    } else {
        format!("{name}_mask.nii")
    };
    path.with_file_name(new)
}

/// Write a volume as little-endian float64 NIfTI-1, sform_code 2. A mask,
/// when present, is written as a sibling uint8 file.
pub fn write_volume(v: &Volume3D, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    v.validate()?;
    let h = header_for(v, nifti::DT_FLOAT64, 64);
    let mut bytes = h.encode();
    for &x in &v.data {
        bytes.extend_from_slice(&x.to_le_bytes());
    }
    write_bytes(path, &bytes)?;
    if let Some(mask) = &v.mask {
        let mh = header_for(v, nifti::DT_UINT8, 8);
        let mut mbytes = mh.encode();
        mbytes.extend(mask.iter().map(|&b| b as u8));
        write_bytes(&mask_path(path), &mbytes)?;
    }
    Ok(())
}

/// Assemble a subject stack from files, applying the mask rule.
pub fn build_stack(paths: &[PathBuf], ids: &[String], rule: &MaskRule) -> Result<VolumeStack> {
    if paths.len() < 3 {
        return Err(Error::InvalidArgument(format!(
            "need at least 3 subjects, got {}",
            paths.len()
        )));
    }
    if paths.len() != ids.len() {
        return Err(Error::InvalidArgument("paths/ids length mismatch".into()));
    }
    let volumes: Vec<Volume3D> = paths
        .iter()
        .map(read_volume)
        .collect::<Result<Vec<_>>>()?;
    build_stack_from_volumes(volumes, ids.to_vec(), rule)
}

/// Stack assembly from already-loaded volumes (used by the phantom module
/// and tests).
pub fn build_stack_from_volumes(
    volumes: Vec<Volume3D>,
    ids: Vec<String>,
    rule: &MaskRule,
) -> Result<VolumeStack> {
    let first_dims = volumes[0].dims;
    let first_aff = volumes[0].affine;
    for (v, id) in volumes.iter().zip(&ids) {
        if v.dims != first_dims || !affines_close(&v.affine, &first_aff, 1e-4) {
            return Err(Error::Conformability(format!("subject {id} not conformable")));
        }
    }
    let nvox = volumes[0].nvox();
    let mask: Vec<bool> = match rule {
        MaskRule::Intersection => (0..nvox)
            .map(|i| volumes.iter().all(|v| v.data[i] > 0.0))
            .collect(),
        MaskRule::Explicit(path) => {
            let m = read_volume(path)?;
            if m.dims != first_dims {
                return Err(Error::Conformability("explicit mask dims differ".into()));
            }
            m.data.iter().map(|&x| x > 0.0).collect()
        }
        MaskRule::MeanThreshold(tau) => {
            let n = volumes.len() as f64;
            (0..nvox)
                .map(|i| volumes.iter().map(|v| v.data[i]).sum::<f64>() / n > *tau)
                .collect()
        }
    };
    if !mask.iter().any(|&m| m) {
        return Err(Error::EmptyMask);
    }
    VolumeStack::new(ids, volumes, mask)
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    fn vol(data: Vec<f64>) -> Volume3D {
        Volume3D::new((2, 2, 2), (1.0, 1.0, 1.0), data).unwrap()
    }

    #[test]
    fn round_trip_identity() {
        let dir = tempdir().unwrap();
        let v = vol((0..8).map(|x| x as f64).collect());
        for name in ["v.nii", "v.nii.gz"] {
            let p = dir.path().join(name);
            write_volume(&v, &p).unwrap();
            let back = read_volume(&p).unwrap();
            assert_eq!(back.dims, v.dims);
            assert_eq!(back.data, v.data);
            assert!(affines_close(&back.affine, &v.affine, 1e-6));
        }
    }

    #[test]
    fn mask_written_as_sibling_uint8() {
        let dir = tempdir().unwrap();
        let mut v = vol(vec![1.0; 8]);
        v.mask = Some(vec![true, false, true, false, true, false, true, false]);
        let p = dir.path().join("m.nii");
        write_volume(&v, &p).unwrap();
        let m = read_volume(dir.path().join("m_mask.nii")).unwrap();
        assert!(m.data.iter().all(|&x| x == 0.0 || x == 1.0));
        assert_eq!(m.data[0], 1.0);
        assert_eq!(m.data[1], 0.0);
    }

    #[test]
    fn unwritable_directory_errors() {
        let v = vol(vec![0.0; 8]);
        assert!(matches!(
            write_volume(&v, "/nonexistent-dir-xyz/v.nii"),
            Err(Error::Io { .. })
        ));
    }

    #[test]
    fn intersection_mask() {
        let vols = vec![vol(vec![1.0; 8]), vol(vec![1.0; 8]), {
            let mut v = vol(vec![1.0; 8]);
            v.data[3] = 0.0;
            v
        }];
        let ids: Vec<String> = (0..3).map(|i| format!("s{i}")).collect();
        let stack = build_stack_from_volumes(vols, ids, &MaskRule::Intersection).unwrap();
        let expected: Vec<bool> = (0..8).map(|i| i != 3).collect();
        assert_eq!(stack.analysis_mask, expected);
    }

    #[test]
    fn threshold_mask_matches_mean_oracle() {
        let vols: Vec<Volume3D> = (0..4)
            .map(|s| vol((0..8).map(|i| (s * i) as f64 * 0.05).collect()))
            .collect();
        // oracle: mean over subjects per voxel
        let means: Vec<f64> = (0..8)
            .map(|i| vols.iter().map(|v| v.data[i]).sum::<f64>() / 4.0)
            .collect();
        let ids: Vec<String> = (0..4).map(|i| format!("s{i}")).collect();
        let stack = build_stack_from_volumes(vols, ids, &MaskRule::MeanThreshold(0.1)).unwrap();
        for i in 0..8 {
            assert_eq!(stack.analysis_mask[i], means[i] > 0.1, "voxel {i}");
        }
    }

    #[test]
    fn permutation_equivariance() {
        let vols: Vec<Volume3D> = (1..=4).map(|s| vol(vec![s as f64; 8])).collect();
        let ids: Vec<String> = (0..4).map(|i| format!("s{i}")).collect();
        let a = build_stack_from_volumes(vols.clone(), ids.clone(), &MaskRule::Intersection).unwrap();
        let perm = [2usize, 0, 3, 1];
        let pv: Vec<Volume3D> = perm.iter().map(|&i| vols[i].clone()).collect();
        let pids: Vec<String> = perm.iter().map(|&i| ids[i].clone()).collect();
        let b = build_stack_from_volumes(pv, pids.clone(), &MaskRule::Intersection).unwrap();
        assert_eq!(b.subject_ids, pids);
        assert_eq!(a.analysis_mask, b.analysis_mask);
    }

    #[test]
    fn world_round_trip() {
        let mut v = vol(vec![0.0; 8]);
        v.affine = [
            [0.0, -1.0, 0.0, 5.0],
            [1.0, 0.0, 0.0, -3.0],
            [0.0, 0.0, 1.0, 2.0],
            [0.0, 0.0, 0.0, 1.0],
        ];
        let (x, y, z) = v.voxel_to_world(1, 0, 1);
        let (i, j, k) = v.world_to_voxel(x, y, z);
        assert!((i - 1.0).abs() < 1e-9 && j.abs() < 1e-9 && (k - 1.0).abs() < 1e-9);
    }

    #[test]
    fn conformability_error_names_subject() {
        let vols = vec![
            vol(vec![1.0; 8]),
            vol(vec![1.0; 8]),
            Volume3D::new((2, 2, 1), (1.0, 1.0, 1.0), vec![1.0; 4]).unwrap(),
        ];
        let ids: Vec<String> = ["a", "b", "bad"].iter().map(|s| s.to_string()).collect();
        match build_stack_from_volumes(vols, ids, &MaskRule::Intersection) {
            Err(Error::Conformability(msg)) => assert!(msg.contains("bad")),
            other => panic!("expected conformability error, got {other:?}"),
        }
    }

    #[test]
    fn empty_mask_error() {
        let vols = vec![vol(vec![0.0; 8]), vol(vec![1.0; 8]), vol(vec![1.0; 8])];
        let ids: Vec<String> = (0..3).map(|i| format!("s{i}")).collect();
        assert!(matches!(
            build_stack_from_volumes(vols, ids, &MaskRule::Intersection),
            Err(Error::EmptyMask)
        ));
    }
}
