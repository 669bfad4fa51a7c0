use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::Serialize;

use super::artifacts::{self, io_err, write_text};
use super::{PipelineConfig, PipelineError, SurvivalConfig};
use crate::forcemap::{
    build_force_map, centroid, inverse_logit, logit_transform, normal_scale_bandwidth, numeric_derivative,
    BivariatePoints, ForceMap, GridSpec, MapOptions,
};
use crate::ingest::{filter_by_activity, parse_epoch_file, IngestError};
use crate::mbi::{classify, model_search, MbiModel, SearchResult};
use crate::par_map;
use crate::survival::{
    cox_fit, kaplan_meier, log_rank_test, mixed_group_label, read_records, CoxFit, CoxFormula, KmCurve, LogRankResult,
    RiskSetOptions, SurvivalRecord, KM_CSV_HEADER,
};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub participant_id: String,
    pub path: PathBuf,
}

/// Participants listed by the manifest, or every CSV in the epochs directory (sorted).
pub fn read_manifest(cfg: &PipelineConfig) -> Result<Vec<ManifestEntry>, PipelineError> {
    if let Some(path) = &cfg.input.manifest {
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let mut rdr = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_path(path)
            .map_err(|e| PipelineError::Ingest(e.into()))?;
        let mut out = Vec::new();
        for row in rdr.records() {
            let row = row.map_err(|e| PipelineError::Ingest(e.into()))?;
            let (Some(id), Some(p)) = (row.get(0), row.get(1)) else {
                return Err(PipelineError::Artifact { path: path.clone(), detail: "need participant_id,path".into() });
            };
            out.push(ManifestEntry { participant_id: id.to_string(), path: base.join(p) });
        }
        return Ok(out);
    }
    if let Some(dir) = &cfg.input.epochs_dir {
        let mut out = Vec::new();
        for entry in fs::read_dir(dir).map_err(io_err(dir))? {
            let path = entry.map_err(io_err(dir))?.path();
            if path.extension().is_some_and(|e| e == "csv") {
                let id = path.file_stem().unwrap_or_default().to_string_lossy().into_owned();
                out.push(ManifestEntry { participant_id: id, path });
            }
        }
        out.sort_by(|a, b| a.participant_id.cmp(&b.participant_id));
        return Ok(out);
    }
    Ok(Vec::new())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IngestRow {
    pub participant_id: String,
    pub rows: usize,
    pub skipped: usize,
    pub segments: usize,
    pub points: usize,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IngestOutcome {
    pub manifest_size: usize,
    /// Derivative clouds of successfully parsed participants, in manifest order.
    pub clouds: Vec<(String, BivariatePoints)>,
    pub rows: Vec<IngestRow>,
}

impl IngestOutcome {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("participant_id,rows,skipped,segments,points,status\n");
        for r in &self.rows {
            let status = r.error.as_deref().map(|e| e.replace([',', '\n'], ";")).unwrap_or_else(|| "ok".into());
            out.push_str(&format!("{},{},{},{},{},{}\n", r.participant_id, r.rows, r.skipped, r.segments, r.points, status));
        }
        out
    }
}

/// Parses every manifest entry and extracts the selected activity's (f, f') cloud.
pub fn ingest_stage(cfg: &PipelineConfig, entries: &[ManifestEntry]) -> Result<IngestOutcome, PipelineError> {
    if entries.is_empty() {
        return Err(IngestError::NoData.into());
    }
    let options = cfg.parse_options();
    let activity = cfg.features.activity;
    let results = par_map(entries, |_, entry| -> Result<(BivariatePoints, IngestRow), String> {
        let file = fs::File::open(&entry.path).map_err(|e| format!("{}: {e}", entry.path.display()))?;
        let (series, stats) =
            parse_epoch_file(std::io::BufReader::new(file), &entry.participant_id, &options).map_err(|e| e.to_string())?;
        let selected = filter_by_activity(&series, activity).map_err(|e| e.to_string())?;
        let points = numeric_derivative(&selected).map_err(|e| e.to_string())?;
        let row = IngestRow {
            participant_id: entry.participant_id.clone(),
            rows: stats.rows,
            skipped: stats.skipped,
            segments: stats.segments,
            points: points.len(),
            error: None,
        };
        Ok((points, row))
    });
    let mut outcome = IngestOutcome { manifest_size: entries.len(), clouds: Vec::new(), rows: Vec::new() };
    for (entry, result) in entries.iter().zip(results) {
        match result {
            Ok((points, row)) => {
                outcome.clouds.push((entry.participant_id.clone(), points));
                outcome.rows.push(row);
            }
            Err(e) => outcome.rows.push(IngestRow {
                participant_id: entry.participant_id.clone(),
                rows: 0,
                skipped: 0,
                segments: 0,
                points: 0,
                error: Some(e),
            }),
        }
    }
    if outcome.clouds.is_empty() {
        return Err(IngestError::NoData.into());
    }
    Ok(outcome)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureOutcome {
    pub grid: GridSpec,
    pub maps: Vec<ForceMap>,
    pub failures: Vec<(String, String)>,
}

/// Force maps on a shared grid for the given clouds.
pub fn build_maps(
    clouds: &[(String, BivariatePoints)],
    grid: &GridSpec,
    options: &MapOptions,
) -> Vec<Result<ForceMap, String>> {
    par_map(clouds, |_, (id, points)| {
        let h = normal_scale_bandwidth(points).map_err(|e| e.to_string())?;
        build_force_map(id, points, grid, &h, options).map_err(|e| e.to_string())
    })
}

/// Pooled grid plus one map per participant with enough points.
pub fn featurize_stage(cfg: &PipelineConfig, ingest: &IngestOutcome) -> Result<FeatureOutcome, PipelineError> {
    let f = &cfg.features;
    let (kept, short): (Vec<_>, Vec<_>) = ingest.clouds.iter().cloned().partition(|(_, p)| p.len() >= f.min_points);
    let mut failures: Vec<(String, String)> = short
        .into_iter()
        .map(|(id, p)| (id, format!("{} derivative points, need {}", p.len(), f.min_points)))
        .collect();
    if kept.is_empty() {
        return Err(crate::forcemap::FeatureError::InsufficientData.into());
    }
    let grid = GridSpec::from_pooled(kept.iter().map(|(_, p)| p), f.bounds_quantile, f.grid_rows, f.grid_cols)?;
    let mut maps = Vec::with_capacity(kept.len());
    for ((id, _), result) in kept.iter().zip(build_maps(&kept, &grid, &MapOptions { floor: f.floor })) {
        match result {
            Ok(m) => maps.push(m),
            Err(e) => failures.push((id.clone(), e)),
        }
    }
    if maps.is_empty() {
        return Err(crate::forcemap::FeatureError::EmptyGrid.into());
    }
    Ok(FeatureOutcome { grid, maps, failures })
}

pub fn logit_maps(maps: &[ForceMap]) -> Result<Vec<DMatrix<f64>>, PipelineError> {
    maps.iter().map(|m| logit_transform(m).map_err(PipelineError::from)).collect()
}

/// Inverse-logit of a mean map, renormalized to total weight one.
fn mean_map_weights(mean: &DMatrix<f64>) -> DMatrix<f64> {
    let w = inverse_logit(mean);
    let total = w.sum();
    w / total
}

/// Reorders components by ascending force centroid of their mean maps, so cluster 1
/// is the least active.
pub fn order_by_force(model: &MbiModel, grid: &GridSpec) -> MbiModel {
    let mut order: Vec<usize> = (0..model.groups()).collect();
    let force = |g: usize| centroid(&mean_map_weights(&model.components[g].params.mean), grid).0;
    order.sort_by(|&a, &b| force(a).total_cmp(&force(b)).then(a.cmp(&b)));
    let mut out = model.clone();
    out.components = order.iter().map(|&g| model.components[g].clone()).collect();
    out.effective_counts = order.iter().map(|&g| model.effective_counts[g]).collect();
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterAssignment {
    pub ids: Vec<String>,
    /// 1-based labels after ordering by force.
    pub labels: Vec<usize>,
    pub model: MbiModel,
}

impl ClusterAssignment {
    pub fn sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.model.groups()];
        for &l in &self.labels {
            sizes[l - 1] += 1;
        }
        sizes
    }

    pub fn lookup(&self) -> HashMap<String, usize> {
        self.ids.iter().cloned().zip(self.labels.iter().copied()).collect()
    }
}

pub fn cluster_assignments(
    model: &MbiModel,
    maps: &[ForceMap],
    grid: &GridSpec,
) -> Result<ClusterAssignment, PipelineError> {
    let ordered = order_by_force(model, grid);
    let labels = classify(&ordered, &logit_maps(maps)?)?;
    Ok(ClusterAssignment { ids: maps.iter().map(|m| m.participant_id.clone()).collect(), labels, model: ordered })
}

/// One survival comparison: KM curves, log-rank and Cox against a reference level.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ContrastReport {
    pub name: String,
    pub n: usize,
    pub n_events: usize,
    pub reference: Option<String>,
    pub group_sizes: BTreeMap<String, usize>,
    pub log_rank: Option<LogRankResult>,
    pub cox: Option<CoxFit>,
    pub error: Option<String>,
    #[serde(skip)]
    pub curves: Vec<KmCurve>,
}

fn contrast(name: &str, records: &[SurvivalRecord], reference: Option<String>, risk: RiskSetOptions) -> ContrastReport {
    let mut group_sizes = BTreeMap::new();
    for r in records {
        *group_sizes.entry(r.group.clone()).or_insert(0) += 1;
    }
    let reference = reference.filter(|r| group_sizes.contains_key(r));
    let mut report = ContrastReport {
        name: name.to_string(),
        n: records.len(),
        n_events: records.iter().filter(|r| r.event).count(),
        reference: reference.clone(),
        group_sizes,
        log_rank: None,
        cox: None,
        error: None,
        curves: Vec::new(),
    };
    let mut errors = Vec::new();
    match kaplan_meier(records, &risk) {
        Ok(c) => report.curves = c,
        Err(e) => errors.push(format!("kaplan-meier: {e}")),
    }
    match log_rank_test(records, &risk) {
        Ok(lr) => report.log_rank = Some(lr),
        Err(e) => errors.push(format!("log-rank: {e}")),
    }
    match cox_fit(records, &CoxFormula::group(reference.as_deref()).with_risk(risk)) {
        Ok(fit) => report.cox = Some(fit),
        Err(e) => errors.push(format!("cox: {e}")),
    }
    if !errors.is_empty() {
        report.error = Some(errors.join("; "));
    }
    report
}

fn relabel(records: &[SurvivalRecord], clusters: &HashMap<String, usize>) -> Vec<SurvivalRecord> {
    records
        .iter()
        .filter_map(|r| {
            clusters.get(&r.participant_id).map(|c| {
                let mut rec = r.clone();
                rec.group = format!("c{c}");
                rec
            })
        })
        .collect()
}

/// Baseline shift contrast and, when clusters are given, per-cluster, cluster 2 vs 3,
/// mixed cluster x shift and sex-stratified contrasts.
pub fn survival_contrasts(
    records: &[SurvivalRecord],
    clusters: Option<&HashMap<String, usize>>,
    cfg: &SurvivalConfig,
) -> Vec<ContrastReport> {
    let risk = RiskSetOptions { left_truncation: cfg.left_truncation };
    let mut out = vec![contrast("shift", records, cfg.shift_reference.clone(), risk)];
    let Some(clusters) = clusters else {
        return out;
    };
    let by_cluster = relabel(records, clusters);
    out.push(contrast("cluster", &by_cluster, Some("c1".into()), risk));
    let two_three: Vec<_> = by_cluster.iter().filter(|r| r.group == "c2" || r.group == "c3").cloned().collect();
    if !two_three.is_empty() {
        out.push(contrast("cluster_2v3", &two_three, Some("c2".into()), risk));
    }
    let shifts: HashMap<String, String> = records.iter().map(|r| (r.participant_id.clone(), r.group.clone())).collect();
    let mixed = mixed_group_label(records, clusters, &shifts);
    let mixed_ref = cfg.shift_reference.as_ref().map(|s| format!("c1:{s}"));
    out.push(contrast("mixed", &mixed.records, mixed_ref, risk));
    if let Some(sex) = &cfg.sex_column {
        let mut levels: Vec<String> = by_cluster.iter().filter_map(|r| r.level(sex)).collect();
        levels.sort();
        levels.dedup();
        for level in levels {
            let subset: Vec<_> = by_cluster.iter().filter(|r| r.level(sex).as_deref() == Some(&level)).cloned().collect();
            out.push(contrast(&format!("{sex}_{level}"), &subset, Some("c1".into()), risk));
        }
    }
    out
}

/// Writes `<name>_km.csv` and `<name>_forest.csv`; returns the paths written.
pub fn write_contrast(dir: &Path, report: &ContrastReport) -> Result<Vec<PathBuf>, PipelineError> {
    let mut written = Vec::new();
    let km_path = dir.join(format!("{}_km.csv", report.name));
    let mut km = format!("{KM_CSV_HEADER}\n");
    for c in &report.curves {
        for row in c.to_csv_rows() {
            km.push_str(&row);
            km.push('\n');
        }
    }
    write_text(&km_path, &km)?;
    written.push(km_path);
    if let Some(fit) = &report.cox {
        let path = dir.join(format!("{}_forest.csv", report.name));
        write_text(&path, &fit.forest_csv())?;
        written.push(path);
    }
    Ok(written)
}

/// Counts at each attrition point.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct Attrition {
    pub manifest: usize,
    pub parsed: usize,
    pub failed: usize,
    pub feature_failures: usize,
    pub clustered: usize,
    pub with_outcome: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BestModelSummary {
    pub groups: usize,
    pub col_factors: usize,
    pub row_factors: usize,
    pub init: String,
    pub bic: f64,
    pub loglik: f64,
    pub converged: bool,
    pub iterations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunReport {
    pub attrition: Attrition,
    pub grid: Option<GridSpec>,
    pub best_model: Option<BestModelSummary>,
    pub cluster_sizes: Vec<usize>,
    pub contrasts: Vec<ContrastReport>,
    /// Paths relative to the output directory, in the order written.
    pub artifacts: Vec<String>,
}

impl RunReport {
    pub fn contrast(&self, name: &str) -> Option<&ContrastReport> {
        self.contrasts.iter().find(|c| c.name == name)
    }

    pub fn to_text(&self) -> String {
        let a = &self.attrition;
        let mut out = format!(
            "participants in manifest: {}\nparsed: {}\nfailed to parse: {}\nfeature-stage failures: {}\nclustered: {}\nwith survival outcome: {}\n",
            a.manifest, a.parsed, a.failed, a.feature_failures, a.clustered, a.with_outcome
        );
        if let Some(b) = &self.best_model {
            out.push_str(&format!(
                "\nbest model: G={} s={} v={} init={} BIC={:.3} loglik={:.3} converged={} iterations={}\n",
                b.groups, b.col_factors, b.row_factors, b.init, b.bic, b.loglik, b.converged, b.iterations
            ));
        }
        for (k, n) in self.cluster_sizes.iter().enumerate() {
            out.push_str(&format!("cluster {}: {n}\n", k + 1));
        }
        for c in &self.contrasts {
            out.push_str(&format!("\n[{}] n={} events={}", c.name, c.n, c.n_events));
            if let Some(r) = &c.reference {
                out.push_str(&format!(" reference={r}"));
            }
            out.push('\n');
            if let Some(lr) = &c.log_rank {
                out.push_str(&format!("  log-rank chi2={:.4} df={} p={:.4e}\n", lr.statistic, lr.df, lr.p_value));
            }
            if let Some(fit) = &c.cox {
                for coef in &fit.coefficients {
                    out.push_str(&format!(
                        "  {:<20} HR={:.4} (95% CI {:.4}-{:.4}) p={:.4e}\n",
                        coef.label(),
                        coef.hazard_ratio,
                        coef.lower,
                        coef.upper,
                        coef.p_value
                    ));
                }
            }
            if let Some(e) = &c.error {
                out.push_str(&format!("  error: {e}\n"));
            }
        }
        out
    }
}

#[derive(Serialize)]
struct Manifest<'a> {
    status: &'a str,
    failed_stage: Option<&'a str>,
    error: Option<String>,
    artifacts: &'a [String],
}

struct Run<'a> {
    out: &'a Path,
    artifacts: Vec<String>,
}

impl Run<'_> {
    fn record(&mut self, path: &Path) {
        let rel = path.strip_prefix(self.out).unwrap_or(path);
        self.artifacts.push(rel.to_string_lossy().replace('\\', "/"));
    }

    fn write(&mut self, rel: &str, contents: &str) -> Result<(), PipelineError> {
        let path = self.out.join(rel);
        write_text(&path, contents)?;
        self.record(&path);
        Ok(())
    }

    fn manifest(&self, status: &str, failed_stage: Option<&str>, error: Option<String>) -> Result<PathBuf, PipelineError> {
        let path = self.out.join("manifest.json");
        let doc = Manifest { status, failed_stage, error, artifacts: &self.artifacts };
        let text = serde_json::to_string_pretty(&doc).expect("manifest serializes");
        write_text(&path, &(text + "\n"))?;
        Ok(path)
    }
}

/// Runs every stage in order and writes all artifacts under `cfg.output_dir`.
///
/// On a stage failure the artifacts completed so far are listed in `manifest.json`
/// and the error names the stage.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<RunReport, PipelineError> {
    cfg.validate()?;
    crate::with_workers(cfg.workers, || {
        let mut run = Run { out: &cfg.output_dir, artifacts: Vec::new() };
        let mut report = RunReport {
            attrition: Attrition::default(),
            grid: None,
            best_model: None,
            cluster_sizes: Vec::new(),
            contrasts: Vec::new(),
            artifacts: Vec::new(),
        };
        match stages(cfg, &mut run, &mut report) {
            Ok(()) => {
                report.artifacts = run.artifacts.clone();
                run.manifest("complete", None, None)?;
                Ok(report)
            }
            Err((stage, e)) => {
                let manifest = run.manifest("failed", Some(stage), Some(e.to_string()))?;
                Err(PipelineError::Stage { stage, source: Box::new(e), manifest })
            }
        }
    })
}

fn stages(cfg: &PipelineConfig, run: &mut Run<'_>, report: &mut RunReport) -> Result<(), (&'static str, PipelineError)> {
    let at = |stage: &'static str| move |e: PipelineError| (stage, e);

    let entries = read_manifest(cfg).map_err(at("ingest"))?;
    report.attrition.manifest = entries.len();
    let ingest = ingest_stage(cfg, &entries).map_err(at("ingest"))?;
    report.attrition.parsed = ingest.clouds.len();
    report.attrition.failed = entries.len() - ingest.clouds.len();
    run.write("ingest.csv", &ingest.to_csv()).map_err(at("ingest"))?;

    let records = match &cfg.input.survival {
        Some(path) => {
            let file = fs::File::open(path).map_err(io_err(path)).map_err(at("baseline"))?;
            let recs = read_records(file, &cfg.survival.schema).map_err(|e| at("baseline")(e.into()))?;
            let baseline = survival_contrasts(&recs, None, &cfg.survival);
            for c in &baseline {
                for p in write_contrast(&run.out.join("survival"), c).map_err(at("baseline"))? {
                    run.record(&p);
                }
            }
            report.contrasts.extend(baseline);
            Some(recs)
        }
        None => None,
    };

    let features = featurize_stage(cfg, &ingest).map_err(at("featurize"))?;
    report.attrition.feature_failures = features.failures.len();
    report.grid = Some(features.grid);
    let maps_path = run.out.join("force_maps.bin");
    artifacts::write_force_maps(&maps_path, &features.grid, &features.maps).map_err(at("featurize"))?;
    run.record(&maps_path);

    let data = logit_maps(&features.maps).map_err(at("search"))?;
    let search: SearchResult =
        model_search(&data, &cfg.search.grid(), &cfg.search.options(cfg.seed)).map_err(|e| at("search")(e.into()))?;
    run.write("search.csv", &search.to_csv()).map_err(at("search"))?;
    let best = &search.best().model;
    report.best_model = Some(BestModelSummary {
        groups: best.spec.groups,
        col_factors: best.spec.col_factors,
        row_factors: best.spec.row_factors,
        init: best.spec.init.as_str().to_string(),
        bic: best.bic,
        loglik: best.loglik,
        converged: best.converged,
        iterations: best.iterations,
    });

    let clusters = cluster_assignments(best, &features.maps, &features.grid).map_err(at("classify"))?;
    let model_path = run.out.join("model.json");
    artifacts::write_model(&model_path, &clusters.model).map_err(at("classify"))?;
    run.record(&model_path);
    run.write("model.txt", &artifacts::model_text(&clusters.model)).map_err(at("classify"))?;
    run.write("clusters.csv", &artifacts::clusters_csv(&clusters.ids, &clusters.labels)).map_err(at("classify"))?;
    for (g, comp) in clusters.model.components.iter().enumerate() {
        let text = artifacts::contour_csv(&mean_map_weights(&comp.params.mean), &features.grid, &format!("cluster_{}", g + 1));
        run.write(&format!("contours/cluster_{}.csv", g + 1), &text).map_err(at("classify"))?;
    }
    report.attrition.clustered = clusters.labels.len();
    report.cluster_sizes = clusters.sizes();

    if let Some(records) = &records {
        let lookup = clusters.lookup();
        report.attrition.with_outcome = records.iter().filter(|r| lookup.contains_key(&r.participant_id)).count();
        let contrasts: Vec<_> = survival_contrasts(records, Some(&lookup), &cfg.survival).into_iter().skip(1).collect();
        for c in &contrasts {
            for p in write_contrast(&run.out.join("survival"), c).map_err(at("survival"))? {
                run.record(&p);
            }
        }
        report.contrasts.extend(contrasts);
    }

    run.write("report.txt", &report.to_text()).map_err(at("report"))?;
    let mut json_report = report.clone();
    json_report.artifacts = run.artifacts.clone();
    let json = serde_json::to_string_pretty(&json_report).expect("report serializes");
    run.write("report.json", &(json + "\n")).map_err(at("report"))?;
    Ok(())
}
