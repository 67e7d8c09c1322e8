//! Random-field cluster inference: smoothness estimation from standardized
//! GLM residuals, resel counting over the analysis mask, cluster-level FWE
//! p-values from the unified Euler-characteristic framework, and a
//! permutation oracle for calibration.

use std::f64::consts::{LN_2, PI};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use statrs::distribution::{ContinuousCDF, StudentsT};
use statrs::function::gamma::ln_gamma;

use crate::cluster::{threshold, Connectivity, Labeler};
use crate::design::{Contrast, DesignMatrix};
use crate::error::{Error, Result};
use crate::glm::{self, GlmFit};
use crate::volume::VolumeStack;

/// Field smoothness and the search-region resel counts derived from it.
#[derive(Debug, Clone)]
pub struct SmoothnessEstimate {
    pub fwhm_voxels: [f64; 3],
    pub fwhm_mm: [f64; 3],
    /// R0..R3 from box-counting the mask in resel units.
    pub resels: [f64; 4],
}

impl SmoothnessEstimate {
    /// Voxel volume of one resel.
    pub fn voxels_per_resel(&self) -> f64 {
        self.fwhm_voxels.iter().product()
    }
}

/// Estimate per-axis smoothness from the pooled squared first differences
/// of the standardized residual volumes. Standardization makes every voxel
/// unit-variance across volumes, so the difference variance v along an axis
/// determines the neighbour correlation of the error field; with the
/// residual degrees-of-freedom correction,
/// lambda = -2 ln(1 - v / (2 (1 - 1/nu))) and fwhm = sqrt(4 ln 2 / lambda).
pub fn estimate_smoothness(
    residuals: &[Vec<f32>],
    mask: &[bool],
    dims: (usize, usize, usize),
    voxel_size: (f64, f64, f64),
    nu: usize,
) -> Result<SmoothnessEstimate> {
    if nu < 2 {
        return Err(Error::SmoothnessUndefined(format!("nu = {nu} leaves no room for the residual correction")));
    }
    if residuals.is_empty() {
        return Err(Error::SmoothnessUndefined("no residual volumes".into()));
    }
    let (nx, ny, nz) = dims;
    let strides = [1usize, nx, nx * ny];
    let voxel = [voxel_size.0, voxel_size.1, voxel_size.2];
    let correction = 2.0 * (1.0 - 1.0 / nu as f64);
    let mut fwhm_voxels = [0.0; 3];
    let mut fwhm_mm = [0.0; 3];
    for d in 0..3 {
        let step = strides[d];
        let mut sum = 0.0f64;
        let mut pairs = 0usize;
        for z in 0..nz {
            for y in 0..ny {
                for x in 0..nx {
                    let upper = [x, y, z][d] + 1;
                    if upper >= [nx, ny, nz][d] {
                        continue;
                    }
                    let i = x + nx * (y + ny * z);
                    if !(mask[i] && mask[i + step]) {
                        continue;
                    }
                    let mut s = 0.0f64;
                    for r in residuals {
                        let diff = (r[i + step] - r[i]) as f64;
                        s += diff * diff;
                    }
                    sum += s;
                    pairs += 1;
                }
            }
        }
        if pairs == 0 {
            return Err(Error::SmoothnessUndefined(format!("mask has no voxel pairs along axis {d}")));
        }
        let v = sum / pairs as f64;
        let ratio = v / correction;
        if !(ratio > 0.0) {
            return Err(Error::SmoothnessUndefined(format!("constant residual field along axis {d}")));
        }
        let lambda = -2.0 * (1.0 - ratio.min(1.0 - 1e-12)).ln();
        fwhm_voxels[d] = (4.0 * LN_2 / lambda).sqrt();
        fwhm_mm[d] = fwhm_voxels[d] * voxel[d];
    }
    let resels = resel_counts(mask, dims, fwhm_voxels);
    Ok(SmoothnessEstimate { fwhm_voxels, fwhm_mm, resels })
}

/// Convenience wrapper over a fitted GLM; zero-variance voxels carry no
/// residual information and are dropped from the estimation mask.
pub fn estimate_smoothness_from_fit(fit: &GlmFit) -> Result<SmoothnessEstimate> {
    let mask: Vec<bool> = fit
        .mask
        .iter()
        .zip(&fit.zero_variance)
        .map(|(&m, &z)| m && !z)
        .collect();
    estimate_smoothness(&fit.standardized_residuals, &mask, fit.dims, fit.voxel_size, fit.df_error)
}

/// Resel counts R0..R3 by box-counting the mask: voxels, axis edges, 2x2
/// faces, and 2x2x2 cubes, combined with the inclusion-exclusion weights of
/// the discrete Euler characteristic and scaled by the fwhm (in voxels).
pub fn resel_counts(mask: &[bool], dims: (usize, usize, usize), fwhm_voxels: [f64; 3]) -> [f64; 4] {
    let (nx, ny, nz) = dims;
    let at = |x: usize, y: usize, z: usize| mask[x + nx * (y + ny * z)];
    let (mut p, mut ex, mut ey, mut ez) = (0u64, 0u64, 0u64, 0u64);
    let (mut fxy, mut fxz, mut fyz, mut c) = (0u64, 0u64, 0u64, 0u64);
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                if !at(x, y, z) {
                    continue;
                }
                p += 1;
                let hx = x + 1 < nx && at(x + 1, y, z);
                let hy = y + 1 < ny && at(x, y + 1, z);
                let hz = z + 1 < nz && at(x, y, z + 1);
                ex += hx as u64;
                ey += hy as u64;
                ez += hz as u64;
                let dxy = hx && hy && at(x + 1, y + 1, z);
                let dxz = hx && hz && at(x + 1, y, z + 1);
                let dyz = hy && hz && at(x, y + 1, z + 1);
                fxy += dxy as u64;
                fxz += dxz as u64;
                fyz += dyz as u64;
                if dxy && dxz && dyz && at(x + 1, y + 1, z + 1) {
                    c += 1;
                }
            }
        }
    }
    let [rx, ry, rz] = fwhm_voxels;
    let (p, ex, ey, ez) = (p as f64, ex as f64, ey as f64, ez as f64);
    let (fxy, fxz, fyz, c) = (fxy as f64, fxz as f64, fyz as f64, c as f64);
    [
        p - (ex + ey + ez) + (fxy + fxz + fyz) - c,
        (ex - fxy - fxz + c) / rx + (ey - fxy - fyz + c) / ry + (ez - fxz - fyz + c) / rz,
        (fxy - c) / (rx * ry) + (fxz - c) / (rx * rz) + (fyz - c) / (ry * rz),
        c / (rx * ry * rz),
    ]
}

/// Euler-characteristic densities of a t-field with nu degrees of freedom
/// at threshold u, dimensions 0..3.
pub fn ec_densities(u: f64, nu: f64) -> [f64; 4] {
    let a = 4.0 * LN_2;
    let shape = (1.0 + u * u / nu).powf(-(nu - 1.0) / 2.0);
    let gratio = (ln_gamma((nu + 1.0) / 2.0) - ln_gamma(nu / 2.0)).exp();
    let rho0 = StudentsT::new(0.0, 1.0, nu).expect("nu >= 1").sf(u);
    let rho1 = a.sqrt() / (2.0 * PI) * shape;
    let rho2 = a / (2.0 * PI).powf(1.5) * gratio / (nu / 2.0).sqrt() * u * shape;
    let rho3 = a.powf(1.5) / (2.0 * PI).powi(2) * ((nu - 1.0) * u * u / nu - 1.0) * shape;
    [rho0, rho1, rho2, rho3]
}

/// Expected number of suprathreshold clusters over the search region.
pub fn expected_clusters(u: f64, nu: f64, resels: &[f64; 4]) -> f64 {
    let ec = ec_densities(u, nu);
    resels
        .iter()
        .zip(&ec)
        .map(|(&r, &rho)| r * rho.max(f64::MIN_POSITIVE))
        .sum()
}

/// Cluster-level FWE-corrected p for a cluster of `k` voxels formed at
/// threshold `u`: Poisson clumping with the exponential extent law
/// P(extent >= k) = exp(-beta k_resel^(2/3)),
/// beta = (Gamma(5/2) / E[resels per cluster])^(2/3).
pub fn cluster_fwe_p(k: usize, u: f64, nu: usize, smoothness: &SmoothnessEstimate) -> Result<f64> {
    let k_resel = k as f64 / smoothness.voxels_per_resel();
    if !(k_resel > 0.0) {
        return Err(Error::InvalidArgument(format!("cluster extent {k} gives non-positive resel volume")));
    }
    let nu = nu as f64;
    let ec = ec_densities(u, nu);
    let em = expected_clusters(u, nu, &smoothness.resels);
    let en = ec[0].max(f64::MIN_POSITIVE) / ec[3].max(f64::MIN_POSITIVE);
    let gamma_5_2 = 0.75 * PI.sqrt(); // Gamma(5/2)
    let beta = (gamma_5_2 / en).powf(2.0 / 3.0);
    let p_extent = (-beta * k_resel.powf(2.0 / 3.0)).exp();
    Ok((1.0 - (-em * p_extent).exp()).clamp(0.0, 1.0))
}

/// Null distribution of the maximum cluster extent under group-label
/// permutation.
#[derive(Debug, Clone)]
pub struct PermutationNull {
    pub max_extents: Vec<usize>,
    pub n_perm: usize,
}

impl PermutationNull {
    /// Empirical FWE p with the add-one correction:
    /// (1 + #{perm max >= k}) / (1 + n_perm).
    pub fn p_for_extent(&self, k: usize) -> f64 {
        let hits = self.max_extents.iter().filter(|&&m| m >= k).count();
        (1 + hits) as f64 / (1 + self.n_perm) as f64
    }
}

/// Permutation oracle for cluster inference: permute the group-indicator
/// columns across subjects (covariates fixed), refit, and record the
/// maximum suprathreshold cluster extent. This is a plain label
/// permutation, not residual permutation; it is exact only under
/// exchangeability, which holds for the synthetic nulls it validates.
pub fn permutation_cluster_p(
    stack: &VolumeStack,
    design: &DesignMatrix,
    contrast: &Contrast,
    u: f64,
    conn: Connectivity,
    n_perm: usize,
    seed: u64,
) -> Result<PermutationNull> {
    if n_perm == 0 {
        return Err(Error::InvalidArgument("need at least one permutation".into()));
    }
    let n = design.n();
    let indicator_cols: Vec<usize> = design
        .columns
        .iter()
        .enumerate()
        .filter(|(_, c)| c.role == crate::design::ColumnRole::Indicator)
        .map(|(j, _)| j)
        .collect();
    if indicator_cols.is_empty() {
        return Err(Error::InvalidArgument("design has no group-indicator columns to permute".into()));
    }
    let max_extents: Vec<usize> = (0..n_perm)
        .into_par_iter()
        .map(|perm| -> Result<usize> {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(perm as u64 + 1);
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(&mut rng);
            let mut permuted = design.clone();
            for &j in &indicator_cols {
                for (row, &src) in order.iter().enumerate() {
                    permuted.x[(row, j)] = design.x[(src, j)];
                }
            }
            let fit = glm::fit(stack, &permuted)?;
            let map = glm::t_map(&fit, contrast)?;
            let grid = threshold(&map, u);
            let mut labeler = Labeler::new();
            let mut labels = Vec::new();
            labeler.label(&grid, map.dims, conn, &mut labels);
            let mut extents = std::collections::HashMap::new();
            for &l in &labels {
                if l != u32::MAX {
                    *extents.entry(l).or_insert(0usize) += 1;
                }
            }
            Ok(extents.into_values().max().unwrap_or(0))
        })
        .collect::<Result<_>>()?;
    Ok(PermutationNull { max_extents, n_perm })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cohort::CohortTable;
    use crate::design::{build_design, make_contrast, ContrastName};
    use crate::phantom::{generate_cohort, GroupSpec, PhantomSpec};
    use approx::assert_abs_diff_eq;

    #[test]
    fn ec_density_zero_order_is_tail_probability() {
        let dist = StudentsT::new(0.0, 1.0, 30.0).unwrap();
        for u in [1.0, 2.5, 4.0] {
            let ec = ec_densities(u, 30.0);
            assert_abs_diff_eq!(ec[0], dist.sf(u), epsilon = 1e-12);
        }
        // rho3 changes sign near u = 1; at realistic thresholds all densities
        // are positive
        for u in [2.5, 4.0] {
            assert!(ec_densities(u, 30.0).iter().all(|&r| r > 0.0));
        }
    }

    #[test]
    fn resels_of_full_box_are_analytic() {
        let dims = (10, 8, 6);
        let mask = vec![true; 480];
        let f = [2.0, 2.5, 4.0];
        let r = resel_counts(&mask, dims, f);
        // Euler characteristic of a solid box
        assert_abs_diff_eq!(r[0], 1.0, epsilon = 1e-9);
        assert_abs_diff_eq!(r[1], 9.0 / 2.0 + 7.0 / 2.5 + 5.0 / 4.0, epsilon = 1e-9);
        assert_abs_diff_eq!(r[2], 63.0 / 5.0 + 45.0 / 8.0 + 35.0 / 10.0, epsilon = 1e-9);
        assert_abs_diff_eq!(r[3], 9.0 * 7.0 * 5.0 / 20.0, epsilon = 1e-9);
    }

    #[test]
    fn resels_of_disjoint_voxels() {
        // two isolated voxels: R0 = 2, higher orders zero
        let mut mask = vec![false; 27];
        mask[0] = true;
        mask[26] = true;
        let r = resel_counts(&mask, (3, 3, 3), [2.0, 2.0, 2.0]);
        assert_abs_diff_eq!(r[0], 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(r[1] + r[2] + r[3], 0.0, epsilon = 1e-12);
    }

    fn toy_smoothness() -> SmoothnessEstimate {
        let mask = vec![true; 64 * 64 * 64];
        let f = [4.0, 4.0, 4.0];
        SmoothnessEstimate {
            fwhm_voxels: f,
            fwhm_mm: [8.0, 8.0, 8.0],
            resels: resel_counts(&mask, (64, 64, 64), f),
        }
    }

    #[test]
    fn fwe_p_monotone_in_extent_and_bounded() {
        let s = toy_smoothness();
        let mut last = 1.0;
        for k in [1, 5, 20, 80, 320, 1280] {
            let p = cluster_fwe_p(k, 3.2, 80, &s).unwrap();
            assert!((0.0..=1.0).contains(&p));
            assert!(p <= last + 1e-12, "k = {k}: {p} > {last}");
            last = p;
        }
    }

    #[test]
    fn fwe_p_limits() {
        let s = toy_smoothness();
        // a large cluster at a high threshold is nearly certain evidence
        assert!(cluster_fwe_p(20000, 4.5, 80, &s).unwrap() < 1e-3);
        // an extreme threshold drives everything to zero
        assert!(cluster_fwe_p(5, 12.0, 80, &s).unwrap() < 1e-6);
        // a 1-voxel cluster approaches the probability of any cluster at all
        let em = expected_clusters(3.2, 80.0, &s.resels);
        let p1 = cluster_fwe_p(1, 3.2, 80, &s).unwrap();
        assert!(p1 <= 1.0 - (-em).exp() + 1e-12);
        assert!(cluster_fwe_p(0, 3.2, 80, &s).is_err());
    }

    #[test]
    fn smoothness_recovered_from_unit_fields() {
        use crate::phantom::smoothed_unit_field;
        // build n pseudo-residual volumes: smooth unit fields, then
        // standardize across volumes exactly as the GLM does
        let dims = (18, 18, 18);
        let nvox = 18 * 18 * 18;
        let n = 40;
        let fwhm = 2.5; // voxels, 1 mm voxel size
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let fields: Vec<_> = (0..n)
            .map(|_| smoothed_unit_field(dims, (1.0, 1.0, 1.0), (fwhm, fwhm, fwhm), &mut rng))
            .collect();
        let mut residuals = vec![vec![0.0f32; nvox]; n];
        for i in 0..nvox {
            let rss: f64 = fields.iter().map(|f| f.data[i] * f.data[i]).sum();
            for (s, f) in fields.iter().enumerate() {
                residuals[s][i] = (f.data[i] / rss.sqrt()) as f32;
            }
        }
        let mask = vec![true; nvox];
        let est = estimate_smoothness(&residuals, &mask, dims, (1.0, 1.0, 1.0), n - 1).unwrap();
        for d in 0..3 {
            let rel = (est.fwhm_voxels[d] - fwhm) / fwhm;
            assert!(rel.abs() < 0.15, "axis {d}: {} vs {fwhm}", est.fwhm_voxels[d]);
        }
        assert!(est.resels[3] > 0.0);
    }

    #[test]
    fn constant_residuals_are_degenerate() {
        let residuals = vec![vec![0.0f32; 27]; 5];
        let mask = vec![true; 27];
        assert!(matches!(
            estimate_smoothness(&residuals, &mask, (3, 3, 3), (1.0, 1.0, 1.0), 4),
            Err(Error::SmoothnessUndefined(_))
        ));
    }

    fn null_fit_inputs() -> (VolumeStack, CohortTable) {
        let spec = PhantomSpec {
            dims: (8, 8, 8),
            voxel_size: (2.0, 2.0, 2.0),
            smoothing_fwhm: (4.0, 4.0, 4.0),
            groups: vec![
                GroupSpec { label: "CN".into(), n: 6, effect: vec![] },
                GroupSpec { label: "AD".into(), n: 6, effect: vec![] },
            ],
            noise_sd: 0.04,
            seed: 11,
            apoe4_frequency: 1.0 / 3.0,
            conversion_rate: 0.07,
        };
        generate_cohort(&spec).unwrap()
    }

    #[test]
    fn permutation_null_basics() {
        let (stack, cohort) = null_fit_inputs();
        let design = build_design(&cohort, &stack.subject_ids).unwrap();
        let contrast = make_contrast(ContrastName::CnGtAd, 5).unwrap();
        let null = permutation_cluster_p(
            &stack,
            &design,
            &contrast,
            2.5,
            Connectivity::Eighteen,
            29,
            99,
        )
        .unwrap();
        assert_eq!(null.max_extents.len(), 29);
        // extent 0 is always reached
        assert_abs_diff_eq!(null.p_for_extent(0), 1.0, epsilon = 1e-12);
        // monotone nonincreasing in k, never below the add-one floor
        let mut last = 1.0;
        for k in [1, 2, 4, 8, 1000] {
            let p = null.p_for_extent(k);
            assert!(p <= last);
            assert!(p >= 1.0 / 30.0);
            last = p;
        }
        assert!(matches!(
            permutation_cluster_p(&stack, &design, &contrast, 2.5, Connectivity::Eighteen, 0, 1),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn permutation_is_schedule_independent() {
        let (stack, cohort) = null_fit_inputs();
        let design = build_design(&cohort, &stack.subject_ids).unwrap();
        let contrast = make_contrast(ContrastName::CnGtAd, 5).unwrap();
        let run = || {
            permutation_cluster_p(&stack, &design, &contrast, 2.0, Connectivity::Six, 15, 4)
                .unwrap()
                .max_extents
        };
        assert_eq!(run(), run());
    }
}
