//! Voxel-wise GLM fitting and contrast t-maps.
//!
//! The design pseudoinverse is computed once via SVD (rank-revealing with
//! tolerance `max(n,p) * eps * sigma_max`) and shared read-only across
//! voxels; per-voxel work is fully independent, so results are identical
//! under any parallel partitioning.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::design::{Contrast, DesignMatrix};
use crate::error::{Error, Result};
use crate::volume::VolumeStack;

/// Per-voxel GLM results over the analysis mask.
#[derive(Debug, Clone)]
pub struct GlmFit {
    /// p coefficient volumes (zero outside the mask).
    pub beta: Vec<Vec<f64>>,
    /// Residual variance RSS/nu per voxel.
    pub sigma2: Vec<f64>,
    /// Error degrees of freedom n - rank(X).
    pub df_error: usize,
    pub rank: usize,
    /// Pseudoinverse of X'X, shared by every contrast variance.
    pub xtx_pinv: DMatrix<f64>,
    /// n volumes of residual / sqrt(RSS), stored at f32 per volume.
    pub standardized_residuals: Vec<Vec<f32>>,
    /// Voxels on the mask whose residual variance is zero (t forced to 0).
    pub zero_variance: Vec<bool>,
    pub mask: Vec<bool>,
    pub dims: (usize, usize, usize),
    pub voxel_size: (f64, f64, f64),
    pub affine: [[f64; 4]; 4],
}

/// A contrast t-map with its degrees of freedom.
#[derive(Debug, Clone)]
pub struct StatMap {
    pub t: Vec<f64>,
    pub df: usize,
    pub contrast: String,
    pub mask: Vec<bool>,
    pub dims: (usize, usize, usize),
    pub voxel_size: (f64, f64, f64),
    pub affine: [[f64; 4]; 4],
}

/// SVD-based pseudoinverse pieces for a design matrix: (pinv(X) p x n,
/// pinv(X'X) p x p, rank).
pub fn design_pinv(x: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>, usize) {
    let (n, p) = (x.nrows(), x.ncols());
    let svd = x.clone().svd(true, true);
    let u = svd.u.as_ref().unwrap();
    let vt = svd.v_t.as_ref().unwrap();
    let smax = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    let tol = n.max(p) as f64 * f64::EPSILON * smax;
    let mut rank = 0;
    let mut sinv = DVector::zeros(svd.singular_values.len());
    let mut sinv2 = DVector::zeros(svd.singular_values.len());
    for (i, &s) in svd.singular_values.iter().enumerate() {
        if s > tol {
            sinv[i] = 1.0 / s;
            sinv2[i] = 1.0 / (s * s);
            rank += 1;
        }
    }
    let v = vt.transpose();
    let pinv_x = &v * DMatrix::from_diagonal(&sinv) * u.transpose();
    let xtx_pinv = &v * DMatrix::from_diagonal(&sinv2) * v.transpose();
    (pinv_x, xtx_pinv, rank)
}

/// Fit the GLM at every masked voxel: beta = pinv(X) y, sigma2 = RSS/nu.
pub fn fit(stack: &VolumeStack, design: &DesignMatrix) -> Result<GlmFit> {
    if stack.subject_ids != design.subject_ids {
        return Err(Error::OrderMismatch);
    }
    let n = stack.n_subjects();
    let p = design.p();
    let (pinv_x, xtx_pinv, rank) = design_pinv(&design.x);
    if n <= rank {
        return Err(Error::InsufficientDf { n, rank });
    }
    let nu = n - rank;
    let nvox = stack.volumes[0].nvox();
    let mask_idx = stack.mask_indices();

    // flattened pinv (row-major p x n) and X (row-major n x p) for the hot loop
    let mut pinv_flat = Vec::with_capacity(p * n);
    for j in 0..p {
        for s in 0..n {
            pinv_flat.push(pinv_x[(j, s)]);
        }
    }
    let mut x_flat = Vec::with_capacity(n * p);
    for s in 0..n {
        for j in 0..p {
            x_flat.push(design.x[(s, j)]);
        }
    }
    let vols: Vec<&[f64]> = stack.volumes.iter().map(|v| v.data.as_slice()).collect();

    struct VoxelFit {
        idx: usize,
        beta: Vec<f64>,
        sigma2: f64,
        std_resid: Vec<f32>,
    }

    let results: Vec<VoxelFit> = mask_idx
        .par_iter()
        .map(|&idx| {
            let mut y = vec![0.0f64; n];
            for (s, v) in vols.iter().enumerate() {
                y[s] = v[idx];
            }
            let mut beta = vec![0.0f64; p];
            for (j, b) in beta.iter_mut().enumerate() {
                let row = &pinv_flat[j * n..(j + 1) * n];
                *b = row.iter().zip(&y).map(|(a, b)| a * b).sum();
            }
            let mut rss = 0.0;
            let mut yss = 0.0;
            let mut resid = vec![0.0f64; n];
            for s in 0..n {
                let xr = &x_flat[s * p..(s + 1) * p];
                let fitted: f64 = xr.iter().zip(&beta).map(|(a, b)| a * b).sum();
                let e = y[s] - fitted;
                resid[s] = e;
                rss += e * e;
                yss += y[s] * y[s];
            }
            // an exactly-fitted voxel leaves only rounding noise in rss
            if rss <= 1e-24 * yss {
                rss = 0.0;
            }
            let sigma2 = rss / nu as f64;
            let inv_srss = if rss > 0.0 { 1.0 / rss.sqrt() } else { 0.0 };
            let std_resid: Vec<f32> = resid.iter().map(|&e| (e * inv_srss) as f32).collect();
            VoxelFit {
                idx,
                beta,
                sigma2,
                std_resid,
            }
        })
        .collect();

    let mut beta = vec![vec![0.0f64; nvox]; p];
    let mut sigma2 = vec![0.0f64; nvox];
    let mut zero_variance = vec![false; nvox];
    let mut standardized_residuals = vec![vec![0.0f32; nvox]; n];
    for r in &results {
        for j in 0..p {
            beta[j][r.idx] = r.beta[j];
        }
        sigma2[r.idx] = r.sigma2;
        if r.sigma2 <= 0.0 {
            zero_variance[r.idx] = true;
        }
        for s in 0..n {
            standardized_residuals[s][r.idx] = r.std_resid[s];
        }
    }

    Ok(GlmFit {
        beta,
        sigma2,
        df_error: nu,
        rank,
        xtx_pinv,
        standardized_residuals,
        zero_variance,
        mask: stack.analysis_mask.clone(),
        dims: stack.dims(),
        voxel_size: stack.voxel_size(),
        affine: stack.affine(),
    })
}

/// t = c'beta / sqrt(sigma2 * c' pinv(X'X) c). Zero-variance voxels get t = 0.
pub fn t_map(fit: &GlmFit, contrast: &Contrast) -> Result<StatMap> {
    let p = fit.beta.len();
    if contrast.weights.len() != p {
        return Err(Error::InvalidArgument(format!(
            "contrast length {} != p = {p}",
            contrast.weights.len()
        )));
    }
    let c = DVector::from_vec(contrast.weights.clone());
    let var_factor = (c.transpose() * &fit.xtx_pinv * &c)[(0, 0)];
    if var_factor <= 0.0 {
        return Err(Error::NotEstimable(format!(
            "c' pinv(X'X) c = {var_factor} for contrast {}",
            contrast.name
        )));
    }
    let nvox = fit.sigma2.len();
    let mut t = vec![0.0f64; nvox];
    for idx in 0..nvox {
        if !fit.mask[idx] || fit.zero_variance[idx] {
            continue;
        }
        let effect: f64 = contrast
            .weights
            .iter()
            .enumerate()
            .map(|(j, &w)| w * fit.beta[j][idx])
            .sum();
        t[idx] = effect / (fit.sigma2[idx] * var_factor).sqrt();
    }
    Ok(StatMap {
        t,
        df: fit.df_error,
        contrast: contrast.name.clone(),
        mask: fit.mask.clone(),
        dims: fit.dims,
        voxel_size: fit.voxel_size,
        affine: fit.affine,
    })
}

/// Upper-tail (one-sided) Student-t probability.
pub fn t_to_p(t: f64, df: usize) -> f64 {
    let dist = StudentsT::new(0.0, 1.0, df as f64).expect("df >= 1");
    dist.sf(t)
}

/// Inverse: the threshold u with upper-tail probability p.
pub fn p_to_t(p: f64, df: usize) -> f64 {
    let dist = StudentsT::new(0.0, 1.0, df as f64).expect("df >= 1");
    dist.inverse_cdf(1.0 - p)
}
