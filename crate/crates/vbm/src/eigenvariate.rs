//! Covariate-adjusted ROI eigenvariates: the dominant-variance subject-wise
//! summary of a cluster, scaled as u1*sigma1/sqrt(n) so values sit on the
//! intensity scale of the ROI.

use nalgebra::{DMatrix, DVector};

use crate::design::DesignMatrix;
use crate::error::{Error, Result};
use crate::glm::design_pinv;
use crate::volume::VolumeStack;

#[derive(Debug, Clone)]
pub struct Eigenvariate {
    /// One value per subject, in stack order.
    pub values: Vec<f64>,
    /// sigma1^2 / sum(sigma_i^2) of the adjusted ROI matrix.
    pub explained_variance: f64,
    /// First right singular vector over ROI voxels (sum >= 0).
    pub voxel_weights: Vec<f64>,
    /// Names of the design columns regressed out.
    pub adjustment: Vec<String>,
}

/// Eigenvariate with no covariate adjustment.
pub fn extract_eigenvariate_simple(stack: &VolumeStack, roi: &[usize]) -> Result<Eigenvariate> {
    extract_from_matrix(roi_matrix(stack, roi)?, Vec::new())
}

/// Eigenvariate with the `remove` design columns (centered) regressed out of
/// the ROI matrix. `keep` columns are retained untouched; the two sets must
/// be disjoint.
pub fn extract_eigenvariate(
    stack: &VolumeStack,
    roi: &[usize],
    design: &DesignMatrix,
    keep: &[usize],
    remove: &[usize],
) -> Result<Eigenvariate> {
    if design.subject_ids != stack.subject_ids {
        return Err(Error::OrderMismatch);
    }
    let p = design.p();
    for &c in keep.iter().chain(remove) {
        if c >= p {
            return Err(Error::InvalidArgument(format!("column {c} out of range (p = {p})")));
        }
    }
    if keep.iter().any(|c| remove.contains(c)) {
        return Err(Error::InvalidArgument("keep and remove columns overlap".into()));
    }
    let mut m = roi_matrix(stack, roi)?;
    if !remove.is_empty() {
        let n = stack.n_subjects();
        let mut xr = DMatrix::zeros(n, remove.len());
        for (cj, &c) in remove.iter().enumerate() {
            let col = design.x.column(c);
            let mean = col.sum() / n as f64;
            for r in 0..n {
                xr[(r, cj)] = col[r] - mean;
            }
        }
        let (pinv_xr, _, _) = design_pinv(&xr);
        let proj = &xr * (pinv_xr * &m);
        m -= proj;
    }
    let names = remove.iter().map(|&c| design.columns[c].name.clone()).collect();
    extract_from_matrix(m, names)
}

fn roi_matrix(stack: &VolumeStack, roi: &[usize]) -> Result<DMatrix<f64>> {
    if roi.is_empty() {
        return Err(Error::DegenerateRoi("empty ROI".into()));
    }
    let n = stack.n_subjects();
    let nvox = stack.volumes[0].nvox();
    for &v in roi {
        if v >= nvox {
            return Err(Error::InvalidArgument(format!("ROI voxel {v} out of range")));
        }
    }
    Ok(DMatrix::from_fn(n, roi.len(), |s, j| {
        stack.volumes[s].data[roi[j]]
    }))
}

fn extract_from_matrix(m: DMatrix<f64>, adjustment: Vec<String>) -> Result<Eigenvariate> {
    let n = m.nrows();
    // eigen of the n x n Gram matrix; ROIs are usually much wider than n
    let gram = &m * m.transpose();
    let total: f64 = gram.trace();
    if !(total > 0.0) || !total.is_finite() {
        return Err(Error::DegenerateRoi("adjusted ROI matrix has zero variance".into()));
    }
    let eig = gram.clone().symmetric_eigen();
    let (mut best, mut lambda1) = (0, f64::MIN);
    for (i, &l) in eig.eigenvalues.iter().enumerate() {
        if l > lambda1 {
            lambda1 = l;
            best = i;
        }
    }
    if lambda1 <= 0.0 {
        return Err(Error::DegenerateRoi("adjusted ROI matrix has zero variance".into()));
    }
    let sigma1 = lambda1.sqrt();
    let mut u1 = DVector::from_fn(n, |r, _| eig.eigenvectors[(r, best)]);
    let mut v1 = m.transpose() * &u1 / sigma1;
    if v1.sum() < 0.0 {
        u1 = -u1;
        v1 = -v1;
    }
    let scale = sigma1 / (n as f64).sqrt();
    Ok(Eigenvariate {
        values: u1.iter().map(|&u| u * scale).collect(),
        explained_variance: lambda1 / total,
        voxel_weights: v1.iter().cloned().collect(),
        adjustment,
    })
}
