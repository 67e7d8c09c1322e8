//! Pipeline orchestration: configuration, the end-to-end analysis commands,
//! and report emission. Stages run in pipeline order; every error is tagged
//! with the stage that produced it, and output files are written atomically
//! (temp file + rename) and schema-checked before a command reports success.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::cluster::{self, Cluster, Connectivity};
use crate::cohort::{CohortTable, Diagnosis};
use crate::design::{build_design, make_contrast, ContrastName};
use crate::error::{Error, Result};
use crate::glm;
use crate::phantom::{generate_cohort, PhantomSpec};
use crate::predict::{self, odds_ratio, FeatureSet};
use crate::rft;
use crate::stats::{self, VarianceRule};
use crate::svg;
use crate::volume::{build_stack, read_volume, write_volume, MaskRule, Volume3D, VolumeStack};

pub const CLUSTER_CSV_HEADER: &str = "id,extent,peak_t,peak_x_mm,peak_y_mm,peak_z_mm,fwe_p,label";
pub const EIGENVARIATE_CSV_HEADER: &str = "cluster_id,subject_id,value";
pub const ROC_CSV_HEADER: &str = "fpr,tpr";
pub const STRATIFY_CSV_HEADER: &str = "diagnosis,n_noncarrier,mean_noncarrier,sd_noncarrier,n_carrier,mean_carrier,sd_carrier,carrier_frequency,mean_diff,t,df,p,cohen_d";
pub const ANOVA_CSV_HEADER: &str = "term,ss,df,ms,f,p";
pub const VALUES_CSV_HEADER: &str = "subject_id,value";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub path: PathBuf,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PipelineConfig {
    /// Input volumes for real data; empty when a phantom spec is given.
    #[serde(default)]
    pub manifest: Vec<ManifestEntry>,
    #[serde(default)]
    pub phantom: Option<PhantomSpec>,
    #[serde(default)]
    pub cohort_csv: Option<PathBuf>,
    #[serde(default = "default_contrasts")]
    pub contrasts: Vec<String>,
    #[serde(default = "default_voxel_p")]
    pub voxel_p: f64,
    #[serde(default = "default_alpha")]
    pub fwe_alpha: f64,
    #[serde(default = "default_connectivity")]
    pub connectivity: u8,
    /// Mean-image threshold for the analysis mask; intersection of subject
    /// masks when absent.
    #[serde(default)]
    pub mask_threshold: Option<f64>,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub seed: u64,
    // prediction options
    #[serde(default = "default_feature_sets")]
    pub feature_sets: Vec<String>,
    #[serde(default = "default_folds")]
    pub folds: usize,
    #[serde(default = "default_l2")]
    pub l2: f64,
    #[serde(default = "default_threshold")]
    pub decision_threshold: f64,
    // validate-fwe options
    #[serde(default = "default_n_sims")]
    pub n_sims: usize,
    // eigenvariate command input
    #[serde(default)]
    pub roi_mask: Option<PathBuf>,
}

fn default_contrasts() -> Vec<String> {
    vec!["cn-gt-ad".into(), "mci-gt-ad".into(), "cn-gt-mci".into()]
}
fn default_voxel_p() -> f64 {
    0.001
}
fn default_alpha() -> f64 {
    0.05
}
fn default_connectivity() -> u8 {
    18
}
fn default_feature_sets() -> Vec<String> {
    vec!["clinical".into(), "eigenvariate".into(), "combined".into()]
}
fn default_folds() -> usize {
    5
}
fn default_l2() -> f64 {
    predict::DEFAULT_L2
}
fn default_threshold() -> f64 {
    0.5
}
fn default_n_sims() -> usize {
    200
}

impl PipelineConfig {
    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("voxel_p", self.voxel_p),
            ("fwe_alpha", self.fwe_alpha),
            ("decision_threshold", self.decision_threshold),
        ] {
            if !(v > 0.0 && v < 1.0) {
                return Err(Error::Config(format!("{name} = {v} not in (0, 1)")));
            }
        }
        Connectivity::parse(self.connectivity)
            .map_err(|e| Error::Config(e.to_string()))?;
        if self.folds < 2 {
            return Err(Error::Config(format!("folds = {} < 2", self.folds)));
        }
        if self.n_sims == 0 {
            return Err(Error::Config("n_sims must be >= 1".into()));
        }
        fs::create_dir_all(&self.output_dir)
            .map_err(|e| Error::Config(format!("output_dir {}: {e}", self.output_dir.display())))?;
        Ok(())
    }

    fn mask_rule(&self) -> MaskRule {
        match self.mask_threshold {
            Some(t) => MaskRule::MeanThreshold(t),
            None => MaskRule::Intersection,
        }
    }
}

/// Write bytes atomically: temp file in the destination directory, then
/// rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    let name = path.file_name().unwrap_or_default().to_string_lossy();
    let tmp = dir.join(format!(".{name}.tmp"));
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn write_volume_atomic(v: &Volume3D, path: &Path) -> Result<()> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    let name = path.file_name().unwrap_or_default().to_string_lossy();
    // keep the .nii/.nii.gz suffix so the codec and mask naming stay correct
    let tmp = dir.join(format!("tmp.{name}"));
    write_volume(v, &tmp)?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))?;
    if v.mask.is_some() {
        let tmp_mask = crate::volume::mask_path(&tmp);
        let final_mask = crate::volume::mask_path(path);
        fs::rename(&tmp_mask, &final_mask).map_err(|e| Error::io(&final_mask, e))?;
    }
    Ok(())
}

/// Check a written CSV starts with the documented header.
fn check_csv_header(path: &Path, expected: &str) -> Result<()> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    match text.lines().next() {
        Some(first) if first == expected => Ok(()),
        other => Err(Error::Format(format!(
            "{}: header {:?} != {:?}",
            path.display(),
            other.unwrap_or(""),
            expected
        ))),
    }
}

fn check_json(path: &Path) -> Result<()> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str::<serde_json::Value>(&text)
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    Ok(())
}

fn load_cohort(cfg: &PipelineConfig) -> Result<CohortTable> {
    let path = cfg
        .cohort_csv
        .as_ref()
        .ok_or_else(|| Error::Config("no cohort_csv configured".into()).at_stage("cohort"))?;
    if !path.exists() {
        return Err(Error::Config(format!("cohort CSV {} does not exist", path.display())).at_stage("cohort"));
    }
    CohortTable::read_csv(path).map_err(|e| e.at_stage("cohort"))
}

/// Stack + cohort from either the phantom spec or the manifest + CSV.
fn load_inputs(cfg: &PipelineConfig) -> Result<(VolumeStack, CohortTable)> {
    if let Some(spec) = &cfg.phantom {
        let mut spec = spec.clone();
        spec.seed = cfg.seed;
        return generate_cohort(&spec).map_err(|e| e.at_stage("phantom"));
    }
    if cfg.manifest.is_empty() {
        return Err(Error::Config("neither a phantom spec nor a manifest was given".into()).at_stage("config"));
    }
    let cohort = load_cohort(cfg)?;
    let paths: Vec<PathBuf> = cfg.manifest.iter().map(|m| m.path.clone()).collect();
    let ids: Vec<String> = cfg.manifest.iter().map(|m| m.id.clone()).collect();
    let stack = build_stack(&paths, &ids, &cfg.mask_rule()).map_err(|e| e.at_stage("stack"))?;
    Ok((stack, cohort))
}

fn contrast_groups(name: ContrastName) -> (Diagnosis, Diagnosis) {
    match name {
        ContrastName::CnGtAd => (Diagnosis::Cn, Diagnosis::Ad),
        ContrastName::MciGtAd => (Diagnosis::Mci, Diagnosis::Ad),
        ContrastName::CnGtMci => (Diagnosis::Cn, Diagnosis::Mci),
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct GroupComparisonJson {
    pub group1: String,
    pub group2: String,
    pub t: f64,
    pub df: f64,
    pub p: f64,
    pub cohen_d: f64,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ClusterJson {
    pub id: usize,
    pub extent: usize,
    pub peak_t: f64,
    pub peak_mni: [f64; 3],
    pub fwe_p: f64,
    pub significant: bool,
    pub label: Option<String>,
    pub group_comparison: Option<GroupComparisonJson>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct InferenceReport {
    pub contrast: String,
    pub u: f64,
    pub voxel_p: f64,
    pub df: usize,
    pub fwe_alpha: f64,
    pub fwhm_mm: [f64; 3],
    pub fwhm_voxels: [f64; 3],
    pub resels: [f64; 4],
    pub clusters: Vec<ClusterJson>,
}

fn format_float(v: f64) -> String {
    // shortest round-trip representation keeps CSV output stable
    format!("{v}")
}

/// Full VBM analysis: stack, design, GLM, per-contrast cluster inference,
/// eigenvariates of significant clusters, and group statistics.
pub fn cmd_run(cfg: &PipelineConfig) -> Result<Vec<PathBuf>> {
    cfg.validate().map_err(|e| e.at_stage("config"))?;
    let conn = Connectivity::parse(cfg.connectivity).map_err(|e| e.at_stage("config"))?;
    let (stack, cohort) = load_inputs(cfg)?;
    let design = build_design(&cohort, &stack.subject_ids).map_err(|e| e.at_stage("design"))?;
    let fit = glm::fit(&stack, &design).map_err(|e| e.at_stage("glm"))?;
    let smoothness = rft::estimate_smoothness_from_fit(&fit).map_err(|e| e.at_stage("smoothness"))?;

    let mut written = Vec::new();
    for cname in &cfg.contrasts {
        let name = ContrastName::parse(cname).map_err(|e| e.at_stage("config"))?;
        let contrast = make_contrast(name, design.p()).map_err(|e| e.at_stage("config"))?;
        let map = glm::t_map(&fit, &contrast).map_err(|e| e.at_stage("glm"))?;
        let u = glm::p_to_t(cfg.voxel_p, fit.df_error);
        let grid = cluster::threshold(&map, u);
        let mut clusters = cluster::connected_components(&map, &grid, conn);
        for c in &mut clusters {
            c.fwe_p = Some(
                rft::cluster_fwe_p(c.extent, u, fit.df_error, &smoothness)
                    .map_err(|e| e.at_stage("inference"))?,
            );
        }

        let (g1, g2) = contrast_groups(name);
        let mut eig_rows: Vec<(usize, String, f64)> = Vec::new();
        let mut cluster_json = Vec::new();
        for c in &clusters {
            let fwe = c.fwe_p.unwrap();
            let significant = fwe < cfg.fwe_alpha;
            let group_comparison = if significant {
                let ev = crate::eigenvariate::extract_eigenvariate(&stack, &c.voxels, &design, &[0, 1, 2], &[3, 4])
                    .map_err(|e| e.at_stage("eigenvariate"))?;
                for (id, &v) in stack.subject_ids.iter().zip(&ev.values) {
                    eig_rows.push((c.id, id.clone(), v));
                }
                let pick = |dx: Diagnosis| -> Vec<f64> {
                    cohort
                        .subjects
                        .iter()
                        .filter(|s| s.diagnosis == dx)
                        .filter_map(|s| {
                            stack
                                .subject_ids
                                .iter()
                                .position(|id| id == &s.id)
                                .map(|i| ev.values[i])
                        })
                        .collect()
                };
                let (x1, x2) = (pick(g1), pick(g2));
                if x1.len() >= 2 && x2.len() >= 2 {
                    let cmp = stats::two_sample_t(&g1.to_string(), &x1, &g2.to_string(), &x2, VarianceRule::Pooled)
                        .map_err(|e| e.at_stage("stats"))?;
                    Some(GroupComparisonJson {
                        group1: cmp.label1,
                        group2: cmp.label2,
                        t: cmp.t,
                        df: cmp.df,
                        p: cmp.p,
                        cohen_d: cmp.cohen_d,
                    })
                } else {
                    None
                }
            } else {
                None
            };
            cluster_json.push(ClusterJson {
                id: c.id,
                extent: c.extent,
                peak_t: c.peak_t,
                peak_mni: [c.peak_world.0, c.peak_world.1, c.peak_world.2],
                fwe_p: fwe,
                significant,
                label: c.label.clone(),
                group_comparison,
            });
        }

        let flag = name.flag();
        let cluster_csv = cfg.output_dir.join(format!("clusters_{flag}.csv"));
        write_atomic(&cluster_csv, cluster_table_csv(&clusters).as_bytes())?;
        check_csv_header(&cluster_csv, CLUSTER_CSV_HEADER)?;
        written.push(cluster_csv);

        let eig_csv = cfg.output_dir.join(format!("eigenvariates_{flag}.csv"));
        let mut text = String::from(EIGENVARIATE_CSV_HEADER);
        text.push('\n');
        for (cid, sid, v) in &eig_rows {
            text.push_str(&format!("{cid},{sid},{}\n", format_float(*v)));
        }
        write_atomic(&eig_csv, text.as_bytes())?;
        check_csv_header(&eig_csv, EIGENVARIATE_CSV_HEADER)?;
        written.push(eig_csv);

        let report = InferenceReport {
            contrast: name.to_string(),
            u,
            voxel_p: cfg.voxel_p,
            df: fit.df_error,
            fwe_alpha: cfg.fwe_alpha,
            fwhm_mm: smoothness.fwhm_mm,
            fwhm_voxels: smoothness.fwhm_voxels,
            resels: smoothness.resels,
            clusters: cluster_json,
        };
        let json_path = cfg.output_dir.join(format!("inference_{flag}.json"));
        write_atomic(&json_path, &to_json_bytes(&report)?)?;
        check_json(&json_path)?;
        written.push(json_path);

        let mut tvol = Volume3D::new(map.dims, map.voxel_size, map.t.clone())
            .map_err(|e| e.at_stage("report"))?;
        tvol.affine = map.affine;
        tvol.mask = Some(map.mask.clone());
        let nii_path = cfg.output_dir.join(format!("tmap_{flag}.nii.gz"));
        write_volume_atomic(&tvol, &nii_path).map_err(|e| e.at_stage("report"))?;
        written.push(nii_path);
    }
    Ok(written)
}

fn cluster_table_csv(clusters: &[Cluster]) -> String {
    let mut text = String::from(CLUSTER_CSV_HEADER);
    text.push('\n');
    for c in clusters {
        text.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            c.id,
            c.extent,
            format_float(c.peak_t),
            format_float(c.peak_world.0),
            format_float(c.peak_world.1),
            format_float(c.peak_world.2),
            c.fwe_p.map(format_float).unwrap_or_default(),
            c.label.clone().unwrap_or_default()
        ));
    }
    text
}

fn to_json_bytes<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    Ok(bytes)
}

#[derive(Debug, Serialize, Deserialize)]
pub struct CoefficientJson {
    pub name: String,
    pub beta: f64,
    pub odds_ratio: f64,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct MetricsJson {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub tn: usize,
    pub accuracy: f64,
    pub precision: Option<f64>,
    pub recall: f64,
    pub f1: Option<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct PredictReport {
    pub feature_set: String,
    pub folds: usize,
    pub fold_auc: Vec<Option<f64>>,
    pub mean_auc: f64,
    pub sd_auc: f64,
    pub pooled_auc: f64,
    pub decision_threshold: f64,
    pub metrics: MetricsJson,
    pub coefficients: Vec<CoefficientJson>,
    pub converged: bool,
    pub separation: bool,
    pub warning: Option<String>,
}

/// Conversion prediction over the configured feature sets: one JSON report
/// and ROC CSV per set, plus a combined ROC SVG with the chance diagonal.
pub fn cmd_predict(cfg: &PipelineConfig) -> Result<Vec<PathBuf>> {
    cfg.validate().map_err(|e| e.at_stage("config"))?;
    let cohort = if cfg.phantom.is_some() {
        let (_, c) = load_inputs(cfg)?;
        c
    } else {
        load_cohort(cfg)?
    };
    let mut written = Vec::new();
    let mut curves = Vec::new();
    for set_name in &cfg.feature_sets {
        let set = FeatureSet::parse(set_name).map_err(|e| e.at_stage("config"))?;
        let (names, rows, labels) =
            predict::feature_matrix(&cohort, set).map_err(|e| e.at_stage("features"))?;
        let report = predict::cross_validate(
            &names,
            &rows,
            &labels,
            cfg.folds,
            cfg.seed,
            cfg.l2,
            cfg.decision_threshold,
        )
        .map_err(|e| e.at_stage("predict"))?;

        let mut coefficients = vec![CoefficientJson {
            name: "intercept".into(),
            beta: report.full_model.coefficients[0],
            odds_ratio: odds_ratio(report.full_model.coefficients[0]),
        }];
        for (name, &beta) in names.iter().zip(&report.full_model.coefficients[1..]) {
            coefficients.push(CoefficientJson {
                name: name.clone(),
                beta,
                odds_ratio: odds_ratio(beta),
            });
        }
        let m = report.metrics;
        let json = PredictReport {
            feature_set: set.name().to_string(),
            folds: cfg.folds,
            fold_auc: report.fold_auc.clone(),
            mean_auc: report.mean_auc,
            sd_auc: report.sd_auc,
            pooled_auc: report.pooled_auc,
            decision_threshold: report.threshold,
            metrics: MetricsJson {
                tp: m.tp,
                fp: m.fp,
                fn_: m.fn_,
                tn: m.tn,
                accuracy: m.accuracy,
                precision: m.precision,
                recall: m.recall,
                f1: m.f1,
            },
            coefficients,
            converged: report.full_model.gradient_norm <= 1e-8,
            separation: report.full_model.separation,
            warning: report.warning.clone(),
        };
        let json_path = cfg.output_dir.join(format!("predict_{}.json", set.name()));
        write_atomic(&json_path, &to_json_bytes(&json)?)?;
        check_json(&json_path)?;
        written.push(json_path);

        let roc_path = cfg.output_dir.join(format!("roc_{}.csv", set.name()));
        let mut text = String::from(ROC_CSV_HEADER);
        text.push('\n');
        for (f, t) in &report.roc {
            text.push_str(&format!("{},{}\n", format_float(*f), format_float(*t)));
        }
        write_atomic(&roc_path, text.as_bytes())?;
        check_csv_header(&roc_path, ROC_CSV_HEADER)?;
        written.push(roc_path);

        curves.push((set.name().to_string(), report.roc));
    }
    let svg_path = cfg.output_dir.join("roc.svg");
    write_atomic(&svg_path, svg::roc_svg(&curves).as_bytes())?;
    written.push(svg_path);
    Ok(written)
}

/// Per-diagnosis APOE4 stratification: comparison table, two-way ANOVA
/// block, and box-plot SVG.
pub fn cmd_stratify(cfg: &PipelineConfig) -> Result<Vec<PathBuf>> {
    cfg.validate().map_err(|e| e.at_stage("config"))?;
    let cohort = if cfg.phantom.is_some() {
        let (_, c) = load_inputs(cfg)?;
        c
    } else {
        load_cohort(cfg)?
    };
    let strata = stats::stratified_comparison(&cohort, VarianceRule::Pooled)
        .map_err(|e| e.at_stage("stratify"))?;

    let mut written = Vec::new();
    let mut text = String::from(STRATIFY_CSV_HEADER);
    text.push('\n');
    for s in &strata {
        let c = &s.comparison;
        text.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
            s.diagnosis,
            c.g1.n,
            format_float(c.g1.mean),
            format_float(c.g1.sd),
            c.g2.n,
            format_float(c.g2.mean),
            format_float(c.g2.sd),
            format_float(s.carrier_frequency),
            format_float(c.g1.mean - c.g2.mean),
            format_float(c.t),
            format_float(c.df),
            format_float(c.p),
            format_float(c.cohen_d),
        ));
    }
    let table_path = cfg.output_dir.join("stratify.csv");
    write_atomic(&table_path, text.as_bytes())?;
    check_csv_header(&table_path, STRATIFY_CSV_HEADER)?;
    written.push(table_path);

    // ANOVA over diagnosis x carrier when more than one stratum is present
    if strata.len() > 1 {
        let levels: Vec<Diagnosis> = strata.iter().map(|s| s.diagnosis).collect();
        let mut values = Vec::new();
        let mut fa = Vec::new();
        let mut fb = Vec::new();
        for s in &cohort.subjects {
            if let Some(a) = levels.iter().position(|&d| d == s.diagnosis) {
                let v = s
                    .eigenvariate
                    .ok_or_else(|| Error::Cohort(format!("{}: missing eigenvariate", s.id)).at_stage("stratify"))?;
                values.push(v);
                fa.push(a);
                fb.push(s.apoe4_carrier as usize);
            }
        }
        let anova = stats::two_way_anova(&values, &fa, levels.len(), &fb, 2, stats::SsType::II)
            .map_err(|e| e.at_stage("stratify"))?;
        let mut text = String::from(ANOVA_CSV_HEADER);
        text.push('\n');
        for (term, row) in [
            ("diagnosis", &anova.factor_a),
            ("apoe4", &anova.factor_b),
            ("interaction", &anova.interaction),
        ] {
            text.push_str(&format!(
                "{term},{},{},{},{},{}\n",
                format_float(row.ss),
                row.df,
                format_float(row.ms),
                format_float(row.f),
                format_float(row.p),
            ));
        }
        text.push_str(&format!(
            "residual,{},{},{},,\n",
            format_float(anova.residual_ss),
            anova.residual_df,
            format_float(anova.residual_ss / anova.residual_df as f64),
        ));
        let anova_path = cfg.output_dir.join("stratify_anova.csv");
        write_atomic(&anova_path, text.as_bytes())?;
        check_csv_header(&anova_path, ANOVA_CSV_HEADER)?;
        written.push(anova_path);
    }

    let mut groups = Vec::new();
    for s in &strata {
        for (carrier, suffix) in [(false, "APOE4-"), (true, "APOE4+")] {
            let values: Vec<f64> = cohort
                .subjects
                .iter()
                .filter(|sub| sub.diagnosis == s.diagnosis && sub.apoe4_carrier == carrier)
                .filter_map(|sub| sub.eigenvariate)
                .collect();
            groups.push(svg::BoxGroup {
                label: format!("{} {suffix}", s.diagnosis),
                values,
            });
        }
    }
    let svg_path = cfg.output_dir.join("stratify.svg");
    write_atomic(&svg_path, svg::box_svg(&groups).as_bytes())?;
    written.push(svg_path);
    Ok(written)
}

/// Generate a phantom cohort to disk: volumes, cohort CSV, and a manifest
/// that cmd_run can consume.
pub fn cmd_phantom(cfg: &PipelineConfig) -> Result<Vec<PathBuf>> {
    cfg.validate().map_err(|e| e.at_stage("config"))?;
    let spec = cfg
        .phantom
        .as_ref()
        .ok_or_else(|| Error::Config("phantom command needs a phantom spec".into()).at_stage("config"))?;
    let mut spec = spec.clone();
    spec.seed = cfg.seed;
    let (stack, cohort) = generate_cohort(&spec).map_err(|e| e.at_stage("phantom"))?;

    let vol_dir = cfg.output_dir.join("volumes");
    fs::create_dir_all(&vol_dir).map_err(|e| Error::io(&vol_dir, e))?;
    let mut manifest = Vec::new();
    let mut written = Vec::new();
    for (id, vol) in stack.subject_ids.iter().zip(&stack.volumes) {
        let path = vol_dir.join(format!("{id}.nii.gz"));
        write_volume_atomic(vol, &path).map_err(|e| e.at_stage("report"))?;
        manifest.push(ManifestEntry { id: id.clone(), path: path.clone() });
        written.push(path);
    }
    let csv_path = cfg.output_dir.join("cohort.csv");
    cohort.write_csv(&csv_path).map_err(|e| e.at_stage("report"))?;
    written.push(csv_path);
    let manifest_path = cfg.output_dir.join("manifest.json");
    write_atomic(&manifest_path, &to_json_bytes(&manifest)?)?;
    check_json(&manifest_path)?;
    written.push(manifest_path);
    Ok(written)
}

#[derive(Debug, Serialize, Deserialize)]
pub struct FweValidationReport {
    pub n_sims: usize,
    pub rejections: usize,
    pub empirical_fwe: f64,
    pub nominal_alpha: f64,
    pub voxel_p: f64,
    pub connectivity: u8,
    pub contrast: String,
    pub seed: u64,
}

/// Monte Carlo FWE calibration on null phantoms: fraction of simulations
/// with any FWE-significant cluster in the first configured contrast.
pub fn validate_fwe(cfg: &PipelineConfig) -> Result<FweValidationReport> {
    cfg.validate().map_err(|e| e.at_stage("config"))?;
    let spec = cfg
        .phantom
        .as_ref()
        .ok_or_else(|| Error::Config("validate-fwe needs a phantom spec".into()).at_stage("config"))?;
    if spec.groups.iter().any(|g| !g.effect.is_empty()) {
        return Err(Error::Config("validate-fwe requires null groups (no injected effects)".into()).at_stage("config"));
    }
    let conn = Connectivity::parse(cfg.connectivity).map_err(|e| e.at_stage("config"))?;
    let cname = cfg
        .contrasts
        .first()
        .ok_or_else(|| Error::Config("no contrast configured".into()).at_stage("config"))?;
    let name = ContrastName::parse(cname).map_err(|e| e.at_stage("config"))?;

    let mut rejections = 0usize;
    for sim in 0..cfg.n_sims {
        let mut s = spec.clone();
        s.seed = cfg.seed.wrapping_add(sim as u64);
        let (stack, cohort) = generate_cohort(&s).map_err(|e| e.at_stage("phantom"))?;
        let design = build_design(&cohort, &stack.subject_ids).map_err(|e| e.at_stage("design"))?;
        let fit = glm::fit(&stack, &design).map_err(|e| e.at_stage("glm"))?;
        let smoothness = rft::estimate_smoothness_from_fit(&fit).map_err(|e| e.at_stage("smoothness"))?;
        let contrast = make_contrast(name, design.p()).map_err(|e| e.at_stage("config"))?;
        let map = glm::t_map(&fit, &contrast).map_err(|e| e.at_stage("glm"))?;
        let u = glm::p_to_t(cfg.voxel_p, fit.df_error);
        let grid = cluster::threshold(&map, u);
        let clusters = cluster::connected_components(&map, &grid, conn);
        let any = clusters.iter().try_fold(false, |acc, c| -> Result<bool> {
            Ok(acc || rft::cluster_fwe_p(c.extent, u, fit.df_error, &smoothness)? < cfg.fwe_alpha)
        })?;
        if any {
            rejections += 1;
        }
    }
    Ok(FweValidationReport {
        n_sims: cfg.n_sims,
        rejections,
        empirical_fwe: rejections as f64 / cfg.n_sims as f64,
        nominal_alpha: cfg.fwe_alpha,
        voxel_p: cfg.voxel_p,
        connectivity: cfg.connectivity,
        contrast: name.to_string(),
        seed: cfg.seed,
    })
}

pub fn cmd_validate_fwe(cfg: &PipelineConfig) -> Result<Vec<PathBuf>> {
    let report = validate_fwe(cfg)?;
    let path = cfg.output_dir.join("fwe_validation.json");
    write_atomic(&path, &to_json_bytes(&report)?)?;
    check_json(&path)?;
    Ok(vec![path])
}

/// Covariate-adjusted eigenvariate of an explicit ROI mask over the
/// manifest stack; writes per-subject values and a cohort CSV with the
/// eigenvariate column filled in.
pub fn cmd_eigenvariate(cfg: &PipelineConfig) -> Result<Vec<PathBuf>> {
    cfg.validate().map_err(|e| e.at_stage("config"))?;
    let roi_path = cfg
        .roi_mask
        .as_ref()
        .ok_or_else(|| Error::Config("eigenvariate command needs roi_mask".into()).at_stage("config"))?;
    let (stack, mut cohort) = load_inputs(cfg)?;
    let roi_vol = read_volume(roi_path).map_err(|e| e.at_stage("roi"))?;
    if roi_vol.dims != stack.dims() {
        return Err(Error::Conformability(format!(
            "ROI mask dims {:?} != stack dims {:?}",
            roi_vol.dims,
            stack.dims()
        ))
        .at_stage("roi"));
    }
    let roi: Vec<usize> = roi_vol
        .data
        .iter()
        .enumerate()
        .filter_map(|(i, &v)| if v > 0.5 { Some(i) } else { None })
        .collect();
    let design = build_design(&cohort, &stack.subject_ids).map_err(|e| e.at_stage("design"))?;
    let ev = crate::eigenvariate::extract_eigenvariate(&stack, &roi, &design, &[0, 1, 2], &[3, 4])
        .map_err(|e| e.at_stage("eigenvariate"))?;

    let mut written = Vec::new();
    let mut text = String::from(VALUES_CSV_HEADER);
    text.push('\n');
    for (id, &v) in stack.subject_ids.iter().zip(&ev.values) {
        text.push_str(&format!("{id},{}\n", format_float(v)));
    }
    let values_path = cfg.output_dir.join("eigenvariate.csv");
    write_atomic(&values_path, text.as_bytes())?;
    check_csv_header(&values_path, VALUES_CSV_HEADER)?;
    written.push(values_path);

    for (id, &v) in stack.subject_ids.iter().zip(&ev.values) {
        if let Some(s) = cohort.subjects.iter_mut().find(|s| &s.id == id) {
            s.eigenvariate = Some(v);
        }
    }
    let cohort_path = cfg.output_dir.join("cohort_with_eigenvariate.csv");
    cohort.write_csv(&cohort_path).map_err(|e| e.at_stage("report"))?;
    written.push(cohort_path);
    Ok(written)
}
