//! Synthetic cohort generation: smooth Gaussian random fields with
//! optionally injected group-dependent signal, plus synthetic covariates.
//!
//! Every random draw comes from a ChaCha8 stream derived from
//! `(seed, subject index)`, so output is bit-identical across runs and
//! thread schedules.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cohort::{CohortTable, Diagnosis, Sex, Subject};
use crate::error::{Error, Result};
use crate::volume::{build_stack_from_volumes, MaskRule, Volume3D, VolumeStack};

pub const FWHM_TO_SIGMA: f64 = 2.3548200450309493; // 2 sqrt(2 ln 2)

/// A spherical mean offset ("atrophy") injected for one group.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Sphere {
    pub center_mm: (f64, f64, f64),
    pub radius_mm: f64,
    /// Mean offset subtracted inside the sphere.
    pub delta: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GroupSpec {
    pub label: String,
    pub n: usize,
    #[serde(default)]
    pub effect: Vec<Sphere>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PhantomSpec {
    pub dims: (usize, usize, usize),
    pub voxel_size: (f64, f64, f64),
    /// Per-axis smoothing FWHM in mm.
    pub smoothing_fwhm: (f64, f64, f64),
    pub groups: Vec<GroupSpec>,
    pub noise_sd: f64,
    pub seed: u64,
    #[serde(default = "default_apoe4_frequency")]
    pub apoe4_frequency: f64,
    #[serde(default = "default_conversion_rate")]
    pub conversion_rate: f64,
}

fn default_apoe4_frequency() -> f64 {
    1.0 / 3.0
}

fn default_conversion_rate() -> f64 {
    0.07
}

impl PhantomSpec {
    pub fn validate(&self) -> Result<()> {
        let fw = [self.smoothing_fwhm.0, self.smoothing_fwhm.1, self.smoothing_fwhm.2];
        if fw.iter().any(|&f| f < 0.0) {
            return Err(Error::InvalidArgument("smoothing_fwhm must be >= 0".into()));
        }
        if self.noise_sd <= 0.0 {
            return Err(Error::InvalidArgument("noise_sd must be > 0".into()));
        }
        let fov = (
            self.dims.0 as f64 * self.voxel_size.0,
            self.dims.1 as f64 * self.voxel_size.1,
            self.dims.2 as f64 * self.voxel_size.2,
        );
        for g in &self.groups {
            if g.n < 2 {
                return Err(Error::InvalidArgument(format!("group {} has n = {} < 2", g.label, g.n)));
            }
            Diagnosis::parse(&g.label)?;
            for s in &g.effect {
                let inside = s.center_mm.0 - s.radius_mm >= 0.0
                    && s.center_mm.1 - s.radius_mm >= 0.0
                    && s.center_mm.2 - s.radius_mm >= 0.0
                    && s.center_mm.0 + s.radius_mm <= fov.0
                    && s.center_mm.1 + s.radius_mm <= fov.1
                    && s.center_mm.2 + s.radius_mm <= fov.2;
                if !inside {
                    return Err(Error::InvalidArgument(format!(
                        "sphere at {:?} r={} leaves the field of view",
                        s.center_mm, s.radius_mm
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn n_total(&self) -> usize {
        self.groups.iter().map(|g| g.n).sum()
    }
}

/// 1D discrete Gaussian taps truncated at +-4 sigma, unit sum. Empty for
/// sigma = 0 (identity).
fn kernel_1d(fwhm_mm: f64, voxel_mm: f64) -> Vec<f64> {
    let sigma = fwhm_mm / FWHM_TO_SIGMA / voxel_mm;
    if sigma <= 0.0 {
        return vec![1.0];
    }
    let radius = (4.0 * sigma).ceil() as i64;
    let mut w: Vec<f64> = (-radius..=radius)
        .map(|d| (-0.5 * (d as f64 / sigma).powi(2)).exp())
        .collect();
    let s: f64 = w.iter().sum();
    for x in &mut w {
        *x /= s;
    }
    w
}

fn convolve_axis(
    data: &mut [f64],
    scratch: &mut Vec<f64>,
    dims: (usize, usize, usize),
    axis: usize,
    kernel: &[f64],
) {
    if kernel.len() == 1 {
        return;
    }
    let (nx, ny, nz) = dims;
    let len = [nx, ny, nz][axis];
    let radius = (kernel.len() / 2) as i64;
    scratch.clear();
    scratch.resize(len, 0.0);
    let (outer, inner, stride) = match axis {
        0 => (nz * ny, nx, 1usize),
        1 => (nz * nx, ny, nx),
        _ => (ny * nx, nz, nx * ny),
    };
    for line in 0..outer {
        // base index of this line
        let base = match axis {
            0 => line * nx,
            1 => {
                let k = line / nx;
                let i = line % nx;
                i + nx * ny * k
            }
            _ => line,
        };
        for (i, s) in scratch.iter_mut().enumerate().take(inner) {
            *s = data[base + i * stride];
        }
        for i in 0..inner {
            let mut acc = 0.0;
            let mut wsum = 0.0;
            let lo = (i as i64 - radius).max(0);
            let hi = (i as i64 + radius).min(inner as i64 - 1);
            for j in lo..=hi {
                let w = kernel[(j - i as i64 + radius) as usize];
                acc += w * scratch[j as usize];
                wsum += w;
            }
            data[base + i * stride] = acc / wsum;
        }
        let _ = len;
    }
}

/// Separable Gaussian smoothing; kernel truncated at +-4 sigma and
/// renormalized to unit sum (also at the volume boundary, so constants are
/// preserved). fwhm = 0 on an axis is the identity.
pub fn gaussian_smooth(v: &Volume3D, fwhm_mm: (f64, f64, f64)) -> Result<Volume3D> {
    if fwhm_mm.0 < 0.0 || fwhm_mm.1 < 0.0 || fwhm_mm.2 < 0.0 {
        return Err(Error::InvalidArgument("fwhm must be >= 0".into()));
    }
    let mut out = v.clone();
    let kernels = [
        kernel_1d(fwhm_mm.0, v.voxel_size.0),
        kernel_1d(fwhm_mm.1, v.voxel_size.1),
        kernel_1d(fwhm_mm.2, v.voxel_size.2),
    ];
    let mut scratch = Vec::new();
    for (axis, k) in kernels.iter().enumerate() {
        convolve_axis(&mut out.data, &mut scratch, v.dims, axis, k);
    }
    Ok(out)
}

/// Per-voxel variance attenuation of the boundary-renormalized separable
/// convolution applied to unit-variance white noise.
fn variance_map(dims: (usize, usize, usize), kernels: &[Vec<f64>; 3]) -> Vec<f64> {
    let axis_factor = |len: usize, kernel: &Vec<f64>| -> Vec<f64> {
        let radius = (kernel.len() / 2) as i64;
        (0..len as i64)
            .map(|i| {
                let lo = (i - radius).max(0);
                let hi = (i + radius).min(len as i64 - 1);
                let mut s = 0.0;
                let mut s2 = 0.0;
                for j in lo..=hi {
                    let w = kernel[(j - i + radius) as usize];
                    s += w;
                    s2 += w * w;
                }
                s2 / (s * s)
            })
            .collect()
    };
    let (nx, ny, nz) = dims;
    let fx = axis_factor(nx, &kernels[0]);
    let fy = axis_factor(ny, &kernels[1]);
    let fz = axis_factor(nz, &kernels[2]);
    let mut out = Vec::with_capacity(nx * ny * nz);
    for k in 0..nz {
        for j in 0..ny {
            for i in 0..nx {
                out.push(fx[i] * fy[j] * fz[k]);
            }
        }
    }
    out
}

/// A smoothed, exactly unit-voxelwise-variance Gaussian field.
pub fn smoothed_unit_field(
    dims: (usize, usize, usize),
    voxel_size: (f64, f64, f64),
    fwhm_mm: (f64, f64, f64),
    rng: &mut impl Rng,
) -> Volume3D {
    let nvox = dims.0 * dims.1 * dims.2;
    let normal = Normal::new(0.0, 1.0).unwrap();
    let data: Vec<f64> = (0..nvox).map(|_| normal.sample(rng)).collect();
    let v = Volume3D::new(dims, voxel_size, data).unwrap();
    let mut sm = gaussian_smooth(&v, fwhm_mm).unwrap();
    let kernels = [
        kernel_1d(fwhm_mm.0, voxel_size.0),
        kernel_1d(fwhm_mm.1, voxel_size.1),
        kernel_1d(fwhm_mm.2, voxel_size.2),
    ];
    let var = variance_map(dims, &kernels);
    for (x, s2) in sm.data.iter_mut().zip(&var) {
        *x /= s2.sqrt();
    }
    sm
}

fn feather_weight(dist: f64, radius: f64, edge: f64) -> f64 {
    // linear ramp of one voxel centered on the sphere surface
    ((radius + 0.5 * edge - dist) / edge).clamp(0.0, 1.0)
}

/// Voxel weights (index, weight) of a sphere with a one-voxel feathered
/// boundary.
pub fn sphere_weights(
    dims: (usize, usize, usize),
    voxel_size: (f64, f64, f64),
    sphere: &Sphere,
) -> Vec<(usize, f64)> {
    let edge = (voxel_size.0 + voxel_size.1 + voxel_size.2) / 3.0;
    let mut out = Vec::new();
    for k in 0..dims.2 {
        for j in 0..dims.1 {
            for i in 0..dims.0 {
                let p = (
                    i as f64 * voxel_size.0,
                    j as f64 * voxel_size.1,
                    k as f64 * voxel_size.2,
                );
                let d = ((p.0 - sphere.center_mm.0).powi(2)
                    + (p.1 - sphere.center_mm.1).powi(2)
                    + (p.2 - sphere.center_mm.2).powi(2))
                .sqrt();
                let w = feather_weight(d, sphere.radius_mm, edge);
                if w > 0.0 {
                    out.push((i + dims.0 * (j + dims.1 * k), w));
                }
            }
        }
    }
    out
}

/// Voxel indices with full (non-feathered) sphere membership, useful as the
/// ground-truth ROI in recovery tests.
pub fn sphere_indices(
    dims: (usize, usize, usize),
    voxel_size: (f64, f64, f64),
    sphere: &Sphere,
) -> Vec<usize> {
    sphere_weights(dims, voxel_size, sphere)
        .into_iter()
        .filter_map(|(i, w)| if w >= 1.0 { Some(i) } else { None })
        .collect()
}

fn subject_rng(seed: u64, subject: usize, lane: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(2 * subject as u64 + lane);
    rng
}

/// Generate the stack and cohort table for a phantom spec. The analysis
/// mask covers the whole field of view.
pub fn generate_cohort(spec: &PhantomSpec) -> Result<(VolumeStack, CohortTable)> {
    spec.validate()?;
    let kernels = [
        kernel_1d(spec.smoothing_fwhm.0, spec.voxel_size.0),
        kernel_1d(spec.smoothing_fwhm.1, spec.voxel_size.1),
        kernel_1d(spec.smoothing_fwhm.2, spec.voxel_size.2),
    ];
    let var = variance_map(spec.dims, &kernels);
    let inv_sd: Vec<f64> = var.iter().map(|&s2| 1.0 / s2.sqrt()).collect();

    // per-subject group assignment and injected effect
    struct Plan {
        group: Diagnosis,
        effects: Vec<(usize, f64)>, // (voxel, delta * feather weight)
    }
    let mut plans = Vec::new();
    for g in &spec.groups {
        let dx = Diagnosis::parse(&g.label)?;
        let mut effects = Vec::new();
        for s in &g.effect {
            for (idx, w) in sphere_weights(spec.dims, spec.voxel_size, s) {
                effects.push((idx, s.delta * w));
            }
        }
        for _ in 0..g.n {
            plans.push(Plan {
                group: dx,
                effects: effects.clone(),
            });
        }
    }

    let volumes: Vec<Volume3D> = plans
        .par_iter()
        .enumerate()
        .map(|(i, plan)| {
            let mut rng = subject_rng(spec.seed, i, 0);
            let normal = Normal::new(0.0, 1.0).unwrap();
            let nvox = spec.dims.0 * spec.dims.1 * spec.dims.2;
            let data: Vec<f64> = (0..nvox).map(|_| normal.sample(&mut rng)).collect();
            let v = Volume3D::new(spec.dims, spec.voxel_size, data).unwrap();
            let mut sm = gaussian_smooth(&v, spec.smoothing_fwhm).unwrap();
            for (x, isd) in sm.data.iter_mut().zip(&inv_sd) {
                *x = 1.0 + spec.noise_sd * *x * isd;
            }
            for &(idx, d) in &plan.effects {
                sm.data[idx] -= d;
            }
            sm
        })
        .collect();

    let mut subjects = Vec::new();
    for (i, plan) in plans.iter().enumerate() {
        let mut rng = subject_rng(spec.seed, i, 1);
        let age: f64 = Normal::new(73.0, 6.0).unwrap().sample(&mut rng);
        let age = age.clamp(40.0, 110.0);
        let tiv: f64 = Normal::new(1450.0, 130.0).unwrap().sample(&mut rng);
        let tiv = tiv.max(900.0);
        let mmse_mean = match plan.group {
            Diagnosis::Cn => 29.0,
            Diagnosis::Mci => 27.0,
            Diagnosis::Ad => 22.0,
        };
        let mmse: f64 = Normal::new(mmse_mean, 2.0).unwrap().sample(&mut rng);
        let mmse = mmse.clamp(0.0, 30.0);
        let education: f64 = Normal::new(16.0, 2.5).unwrap().sample(&mut rng);
        let education = education.max(6.0);
        let sex = if rng.gen_bool(0.5) { Sex::M } else { Sex::F };
        let apoe4 = rng.gen_bool(spec.apoe4_frequency);
        let converted = if plan.group == Diagnosis::Mci {
            Some(rng.gen_bool(spec.conversion_rate))
        } else {
            None
        };
        subjects.push(Subject {
            id: format!("sub-{i:04}"),
            diagnosis: plan.group,
            age,
            tiv,
            sex,
            education,
            mmse,
            apoe4_carrier: apoe4,
            converted_24mo: converted,
            eigenvariate: None,
        });
    }
    let ids: Vec<String> = subjects.iter().map(|s| s.id.clone()).collect();
    let stack = build_stack_from_volumes(volumes, ids, &MaskRule::MeanThreshold(f64::NEG_INFINITY))?;
    Ok((stack, CohortTable::new(subjects)?))
}

/// Empirical per-axis FWHM (mm) from >= 20 independent null fields, via the
/// variance of first differences after standardizing each field.
pub fn estimate_fwhm_empirical(fields: &[Volume3D]) -> Result<(f64, f64, f64)> {
    if fields.len() < 20 {
        return Err(Error::InsufficientData(format!(
            "need >= 20 null fields, got {}",
            fields.len()
        )));
    }
    let dims = fields[0].dims;
    let voxel = fields[0].voxel_size;
    let (nx, ny, nz) = dims;
    let strides = [1usize, nx, nx * ny];
    let mut fwhm = [0.0f64; 3];
    for (axis, &stride) in strides.iter().enumerate() {
        let mut num = 0.0;
        let mut count = 0usize;
        for f in fields {
            let mean = f.data.iter().sum::<f64>() / f.data.len() as f64;
            let var = f.data.iter().map(|&x| (x - mean).powi(2)).sum::<f64>() / f.data.len() as f64;
            if var <= 0.0 {
                return Err(Error::SmoothnessUndefined("constant field".into()));
            }
            for k in 0..nz {
                for j in 0..ny {
                    for i in 0..nx {
                        let ok = match axis {
                            0 => i + 1 < nx,
                            1 => j + 1 < ny,
                            _ => k + 1 < nz,
                        };
                        if !ok {
                            continue;
                        }
                        let idx = i + nx * (j + ny * k);
                        let d = f.data[idx + stride] - f.data[idx];
                        num += d * d / var;
                        count += 1;
                    }
                }
            }
        }
        let v = (num / count as f64).min(2.0 * (1.0 - 1e-12));
        let lambda = -2.0 * (1.0 - v / 2.0).ln();
        let vs = [voxel.0, voxel.1, voxel.2][axis];
        fwhm[axis] = vs * (4.0 * std::f64::consts::LN_2 / lambda).sqrt();
    }
    Ok((fwhm[0], fwhm[1], fwhm[2]))
}

/// Scale a trial sphere delta so the realized eigenvariate Cohen's d between
/// the first and last groups hits the target, measured over pilot replicates.
/// d is linear in delta, so one measured slope suffices.
pub fn calibrate_sphere_delta(
    base: &PhantomSpec,
    group_with_effect: usize,
    target_d: f64,
    replicates: usize,
) -> Result<f64> {
    use crate::eigenvariate::extract_eigenvariate_simple;
    use crate::stats::cohen_d_from_samples;

    let trial = base.groups[group_with_effect]
        .effect
        .first()
        .ok_or_else(|| Error::InvalidArgument("group has no sphere to calibrate".into()))?
        .delta;
    if trial == 0.0 {
        return Err(Error::InvalidArgument("trial delta must be nonzero".into()));
    }
    let roi = sphere_indices(
        base.dims,
        base.voxel_size,
        &base.groups[group_with_effect].effect[0],
    );
    let mut ds = Vec::new();
    for r in 0..replicates {
        let mut spec = base.clone();
        spec.seed = base.seed.wrapping_add(1 + r as u64);
        let (stack, cohort) = generate_cohort(&spec)?;
        let ev = extract_eigenvariate_simple(&stack, &roi)?;
        let affected: Vec<f64> = cohort
            .subjects
            .iter()
            .zip(&ev.values)
            .filter(|(s, _)| s.diagnosis == Diagnosis::parse(&base.groups[group_with_effect].label).unwrap())
            .map(|(_, &v)| v)
            .collect();
        let reference: Vec<f64> = cohort
            .subjects
            .iter()
            .zip(&ev.values)
            .filter(|(s, _)| s.diagnosis == Diagnosis::parse(&base.groups[0].label).unwrap())
            .map(|(_, &v)| v)
            .collect();
        ds.push(cohen_d_from_samples(&reference, &affected)?);
    }
    let mean_d = ds.iter().sum::<f64>() / ds.len() as f64;
    if mean_d.abs() < 1e-12 {
        return Err(Error::InvalidArgument("pilot effect size is zero".into()));
    }
    Ok(trial * target_d / mean_d)
}
