//! Experiment commands behind the CLI: train an ensemble of seeds into
//! checkpoints plus a run manifest, evaluate checkpoints into metric
//! tables, run the analysis suite, grid-search hyperparameters, and emit
//! synthetic fixtures. Every artifact is written atomically; all tables
//! carry a format-version comment line and a header row.

use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::analysis::{
    compare_models, default_noise_sigmas, extract_embedding, kmeans, morris_for_bundle,
    noise_robustness, variance_reduction, ComparisonResult,
};
use crate::checkpoint::{load_checkpoint, save_checkpoint, write_atomic, ModelBundle};
use crate::config::TrainingConfig;
use crate::data::{load_data_root, synth_basins_with, BasinDataset, DateInterval, SynthOptions};
use crate::error::{Error, Result};
use crate::evaluate::{evaluate_bundles, Evaluation};
use crate::metrics::SIGNATURE_NAMES;
use crate::train::{grid_search, train, Candidate, ModelVariant};

pub const TABLE_FORMAT_LINE: &str = "# ealstm-table v1";
pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointEntry {
    pub seed: u64,
    /// Relative to the manifest's directory.
    pub path: PathBuf,
}

/// Snapshot of everything needed to re-run and post-process a training
/// run. Only the timestamps differ between identical re-runs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub format_version: u32,
    pub code_version: String,
    pub created_unix: u64,
    pub wall_clock_secs: f64,
    pub config: TrainingConfig,
    pub checkpoints: Vec<CheckpointEntry>,
    pub training_logs: Vec<PathBuf>,
    /// Directory the relative paths resolve against; set on load.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl RunManifest {
    pub fn manifest_path(out_dir: &Path) -> PathBuf {
        out_dir.join("manifest.json")
    }

    pub fn load(path: &Path) -> Result<RunManifest> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            Error::Io(std::io::Error::new(
                e.kind(),
                format!("{}: {}", path.display(), e),
            ))
        })?;
        let mut manifest: RunManifest = serde_json::from_str(&text)
            .map_err(|e| Error::Parse(format!("{}: {}", path.display(), e)))?;
        manifest.base_dir = path
            .parent()
            .map(|p| p.to_path_buf())
            .unwrap_or_else(|| PathBuf::from("."));
        Ok(manifest)
    }

    pub fn save(&self, out_dir: &Path) -> Result<()> {
        let text =
            serde_json::to_string_pretty(self).map_err(|e| Error::Io(std::io::Error::other(e)))?;
        write_atomic(&Self::manifest_path(out_dir), text.as_bytes())
    }

    pub fn checkpoint_path(&self, entry: &CheckpointEntry) -> PathBuf {
        if entry.path.is_absolute() {
            entry.path.clone()
        } else {
            self.base_dir.join(&entry.path)
        }
    }

    /// Load every checkpoint, in the manifest's seed order.
    pub fn load_bundles(&self) -> Result<Vec<ModelBundle>> {
        self.checkpoints
            .iter()
            .map(|entry| {
                let path = self.checkpoint_path(entry);
                let bundle = load_checkpoint(&path)?;
                if bundle.seed != entry.seed {
                    return Err(Error::Data(format!(
                        "{}: checkpoint seed {} does not match manifest entry {}",
                        path.display(),
                        bundle.seed,
                        entry.seed
                    )));
                }
                Ok(bundle)
            })
            .collect()
    }

    pub fn load_datasets(&self) -> Result<Vec<BasinDataset>> {
        load_data_root(&self.config.data_root, self.config.attribute_schema)
    }
}

/// Write a delimited table: format-version comment, header, then rows.
pub fn write_table(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut text = String::new();
    text.push_str(TABLE_FORMAT_LINE);
    text.push('\n');
    text.push_str(&header.join(","));
    text.push('\n');
    for row in rows {
        debug_assert_eq!(row.len(), header.len());
        text.push_str(&row.join(","));
        text.push('\n');
    }
    write_atomic(path, text.as_bytes())
}

fn fmt(v: f64) -> String {
    if v.is_nan() {
        "nan".to_string()
    } else {
        format!("{v}")
    }
}

/// Train one checkpoint per configured seed and write the run manifest.
pub fn cmd_train(config: &TrainingConfig) -> Result<RunManifest> {
    config.validate()?;
    let started = Instant::now();
    let datasets = load_data_root(&config.data_root, config.attribute_schema)?;
    let split = config.split()?;
    std::fs::create_dir_all(&config.out_dir)?;

    let mut checkpoints = Vec::with_capacity(config.seeds.len());
    let mut training_logs = Vec::with_capacity(config.seeds.len());
    for &seed in &config.seeds {
        let opts = config.train_options(seed);
        let outcome = train(&datasets, &split, &opts, Some(&config.out_dir))?;
        let ck_rel = PathBuf::from(format!("seed_{seed}.ck"));
        save_checkpoint(&config.out_dir.join(&ck_rel), &outcome.bundle)?;
        let log_rel = PathBuf::from(format!("seed_{seed}_log.jsonl"));
        write_training_log(&config.out_dir.join(&log_rel), &outcome.log)?;
        checkpoints.push(CheckpointEntry { seed, path: ck_rel });
        training_logs.push(log_rel);
    }

    let manifest = RunManifest {
        format_version: MANIFEST_VERSION,
        code_version: env!("CARGO_PKG_VERSION").to_string(),
        created_unix: SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0),
        wall_clock_secs: started.elapsed().as_secs_f64(),
        config: config.clone(),
        checkpoints,
        training_logs,
        base_dir: config.out_dir.clone(),
    };
    manifest.save(&config.out_dir)?;
    Ok(manifest)
}

fn write_training_log(path: &Path, log: &crate::train::TrainingLog) -> Result<()> {
    let mut text = String::new();
    for w in &log.warnings {
        text.push_str(&serde_json::json!({ "warning": w }).to_string());
        text.push('\n');
    }
    for r in &log.records {
        text.push_str(
            &serde_json::json!({
                "epoch": r.epoch,
                "step": r.step,
                "loss": r.loss,
                "learning_rate": r.learning_rate,
            })
            .to_string(),
        );
        text.push('\n');
    }
    for (epoch, loss) in log.epoch_losses.iter().enumerate() {
        text.push_str(
            &serde_json::json!({ "epoch": epoch + 1, "epoch_mean_loss": loss }).to_string(),
        );
        text.push('\n');
    }
    write_atomic(path, text.as_bytes())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvalPeriod {
    Validation,
    Training,
}

impl EvalPeriod {
    pub fn interval(&self, config: &TrainingConfig) -> Result<DateInterval> {
        let split = config.split()?;
        Ok(match self {
            EvalPeriod::Validation => split.validation,
            EvalPeriod::Training => split.training,
        })
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            EvalPeriod::Validation => "validation",
            EvalPeriod::Training => "training",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "validation" => Ok(EvalPeriod::Validation),
            "training" => Ok(EvalPeriod::Training),
            other => Err(Error::Config(format!(
                "unknown period '{other}' (expected validation or training)"
            ))),
        }
    }
}

pub struct EvaluateOutput {
    pub per_seed: Vec<(u64, Evaluation)>,
    pub ensemble: Evaluation,
    pub files: Vec<PathBuf>,
}

fn basin_table_rows(eval: &Evaluation) -> Vec<Vec<String>> {
    eval.rows
        .iter()
        .map(|r| {
            let mut row = vec![
                r.basin_id.clone(),
                fmt(r.nse),
                fmt(r.alpha_nse),
                fmt(r.beta_nse),
                fmt(r.fhv_pct),
                fmt(r.fms_pct),
                fmt(r.flv_pct),
            ];
            match &r.signatures {
                Some(s) => row.extend(s.values().iter().map(|v| fmt(*v))),
                None => row.extend(std::iter::repeat_n("nan".to_string(), 13)),
            }
            row
        })
        .collect()
}

fn basin_table_header() -> Vec<&'static str> {
    let mut h = vec![
        "basin_id",
        "nse",
        "alpha_nse",
        "beta_nse",
        "fhv_pct",
        "fms_pct",
        "flv_pct",
    ];
    h.extend(SIGNATURE_NAMES);
    h
}

/// Evaluate every seed checkpoint plus their ensemble over a period,
/// emitting one per-basin table per model and a shared summary table.
pub fn cmd_evaluate(manifest: &RunManifest, period: EvalPeriod) -> Result<EvaluateOutput> {
    let datasets = manifest.load_datasets()?;
    let bundles = manifest.load_bundles()?;
    let interval = period.interval(&manifest.config)?;
    let t_len = manifest.config.sequence_length;
    let out_dir = &manifest.base_dir;
    let mut files = Vec::new();

    let mut per_seed = Vec::with_capacity(bundles.len());
    for bundle in &bundles {
        let eval = evaluate_bundles(&[bundle], &datasets, &interval, t_len, true)?;
        let path = out_dir.join(format!(
            "evaluation_{}_seed_{}.csv",
            period.as_str(),
            bundle.seed
        ));
        write_table(&path, &basin_table_header(), &basin_table_rows(&eval))?;
        files.push(path);
        per_seed.push((bundle.seed, eval));
    }

    let refs: Vec<&ModelBundle> = bundles.iter().collect();
    let ensemble = evaluate_bundles(&refs, &datasets, &interval, t_len, true)?;
    let ens_path = out_dir.join(format!("evaluation_{}_ensemble.csv", period.as_str()));
    write_table(
        &ens_path,
        &basin_table_header(),
        &basin_table_rows(&ensemble),
    )?;
    files.push(ens_path);

    let summary_header = vec![
        "model",
        "n_basins",
        "nse_mean",
        "nse_median",
        "n_nse_nonpositive",
        "alpha_nse_median",
        "beta_nse_median",
        "fhv_median",
        "fms_median",
        "flv_median",
    ];
    let mut summary_rows: Vec<Vec<String>> = per_seed
        .iter()
        .map(|(seed, eval)| summary_row(&format!("seed_{seed}"), eval))
        .collect();
    summary_rows.push(summary_row("ensemble", &ensemble));
    let summary_path = out_dir.join(format!("evaluation_{}_summary.csv", period.as_str()));
    write_table(&summary_path, &summary_header, &summary_rows)?;
    files.push(summary_path);

    Ok(EvaluateOutput {
        per_seed,
        ensemble,
        files,
    })
}

fn summary_row(model: &str, eval: &Evaluation) -> Vec<String> {
    let a = &eval.aggregate;
    vec![
        model.to_string(),
        a.n_basins.to_string(),
        fmt(a.nse_mean),
        fmt(a.nse_median),
        a.n_nse_nonpositive.to_string(),
        fmt(a.alpha_nse_median),
        fmt(a.beta_nse_median),
        fmt(a.fhv_median),
        fmt(a.fms_median),
        fmt(a.flv_median),
    ]
}

fn bundle_for_seed(manifest: &RunManifest, seed: Option<u64>) -> Result<ModelBundle> {
    let entry = match seed {
        Some(s) => manifest
            .checkpoints
            .iter()
            .find(|e| e.seed == s)
            .ok_or_else(|| Error::Config(format!("no checkpoint for seed {s} in manifest")))?,
        None => manifest
            .checkpoints
            .first()
            .ok_or_else(|| Error::Data("manifest lists no checkpoints".into()))?,
    };
    load_checkpoint(&manifest.checkpoint_path(entry))
}

/// Attribute sensitivity of one seed's checkpoint over the validation
/// period: the per-basin elementary-effect table plus the global ranking.
pub fn cmd_analyze_sensitivity(
    manifest: &RunManifest,
    seed: Option<u64>,
) -> Result<(crate::analysis::SensitivityTable, Vec<PathBuf>)> {
    let datasets = manifest.load_datasets()?;
    let bundle = bundle_for_seed(manifest, seed)?;
    let interval = EvalPeriod::Validation.interval(&manifest.config)?;
    let table = morris_for_bundle(
        &bundle,
        &datasets,
        manifest.config.sequence_length,
        &interval,
    )?;
    let out_dir = &manifest.base_dir;

    let mut header = vec!["basin_id"];
    header.extend(table.attribute_names.iter().map(|s| s.as_str()));
    let rows: Vec<Vec<String>> = table
        .basin_ids
        .iter()
        .enumerate()
        .map(|(b, id)| {
            let mut row = vec![id.clone()];
            row.extend(table.per_basin.row(b).iter().map(|v| fmt(*v)));
            row
        })
        .collect();
    let per_basin_path = out_dir.join("sensitivity_per_basin.csv");
    write_table(&per_basin_path, &header, &rows)?;

    let mut order: Vec<usize> = (0..table.attribute_names.len()).collect();
    order.sort_by_key(|&j| table.rank[j]);
    let global_rows: Vec<Vec<String>> = order
        .iter()
        .map(|&j| {
            vec![
                table.rank[j].to_string(),
                table.attribute_names[j].clone(),
                fmt(table.global_score[j]),
            ]
        })
        .collect();
    let global_path = out_dir.join("sensitivity_global.csv");
    write_table(&global_path, &["rank", "attribute", "score"], &global_rows)?;

    Ok((table, vec![per_basin_path, global_path]))
}

/// Noise-robustness protocol over the validation period: raw per-draw NSE
/// rows plus a per-sigma summary.
pub fn cmd_analyze_robustness(
    manifest: &RunManifest,
    seed: Option<u64>,
    sigmas: Option<Vec<f64>>,
    draws: usize,
    noise_seed: u64,
) -> Result<(Vec<crate::analysis::NoiseLevelResult>, Vec<PathBuf>)> {
    let datasets = manifest.load_datasets()?;
    let bundle = bundle_for_seed(manifest, seed)?;
    let interval = EvalPeriod::Validation.interval(&manifest.config)?;
    let sigmas = sigmas.unwrap_or_else(default_noise_sigmas);
    let results = noise_robustness(
        &bundle,
        &datasets,
        &interval,
        manifest.config.sequence_length,
        &sigmas,
        draws,
        noise_seed,
    )?;
    let out_dir = &manifest.base_dir;

    let n_basins = datasets.len();
    let mut raw_rows = Vec::new();
    for level in &results {
        for (i, nse) in level.nses.iter().enumerate() {
            raw_rows.push(vec![
                fmt(level.sigma),
                (i / n_basins).to_string(),
                datasets[i % n_basins].basin_id.clone(),
                fmt(*nse),
            ]);
        }
    }
    let raw_path = out_dir.join("robustness_raw.csv");
    write_table(&raw_path, &["sigma", "draw", "basin_id", "nse"], &raw_rows)?;

    let summary_rows: Vec<Vec<String>> = results
        .iter()
        .map(|level| {
            let mean = level.nses.iter().sum::<f64>() / level.nses.len() as f64;
            vec![fmt(level.sigma), fmt(level.median_nse()), fmt(mean)]
        })
        .collect();
    let summary_path = out_dir.join("robustness_summary.csv");
    write_table(
        &summary_path,
        &["sigma", "median_nse", "mean_nse"],
        &summary_rows,
    )?;

    Ok((results, vec![raw_path, summary_path]))
}

/// Export the catchment embedding of one seed's checkpoint: the container
/// file plus a basin-id sidecar table.
pub fn cmd_analyze_embed(
    manifest: &RunManifest,
    seed: Option<u64>,
) -> Result<(crate::analysis::EmbeddingMatrix, Vec<PathBuf>)> {
    let datasets = manifest.load_datasets()?;
    let bundle = bundle_for_seed(manifest, seed)?;
    let embedding = extract_embedding(&bundle, &datasets)?;
    let out_dir = &manifest.base_dir;
    let container = out_dir.join(format!("embedding_seed_{}.ck", bundle.seed));
    crate::checkpoint::save_embedding(&container, &embedding.basin_ids, &embedding.matrix)?;
    let sidecar = out_dir.join(format!("embedding_seed_{}_basins.csv", bundle.seed));
    let rows: Vec<Vec<String>> = embedding
        .basin_ids
        .iter()
        .enumerate()
        .map(|(i, id)| vec![i.to_string(), id.clone()])
        .collect();
    write_table(&sidecar, &["row", "basin_id"], &rows)?;
    Ok((embedding, vec![container, sidecar]))
}

pub struct ClusterOutput {
    /// (k, mean/min silhouette on the embedding, mean/min on attributes).
    pub silhouettes: Vec<(usize, f64, f64, f64, f64)>,
    pub best_k_embedding: usize,
    pub files: Vec<PathBuf>,
}

/// Silhouette sweep over cluster counts for the embedding and the raw
/// (standardized) attributes, plus labels and per-signature variance
/// reduction at the best embedding k.
pub fn cmd_analyze_cluster(
    manifest: &RunManifest,
    seed: Option<u64>,
    k_range: std::ops::RangeInclusive<usize>,
    restarts: usize,
    cluster_seed: u64,
) -> Result<ClusterOutput> {
    let datasets = manifest.load_datasets()?;
    let bundle = bundle_for_seed(manifest, seed)?;
    let embedding = extract_embedding(&bundle, &datasets)?;

    // Attribute space: standardized with the checkpoint's moments so the
    // Euclidean metric is unit-free.
    let n_attrs = datasets[0].attributes.len();
    let mut attr_matrix = ndarray::Array2::zeros((datasets.len(), n_attrs));
    for (b, ds) in datasets.iter().enumerate() {
        let std_ds = crate::data::apply_standardization(ds, &bundle.stats)?;
        attr_matrix.row_mut(b).assign(&std_ds.attributes);
    }

    let mut silhouettes = Vec::new();
    for k in k_range.clone() {
        if k > datasets.len() {
            break;
        }
        let emb = kmeans(embedding.matrix.view(), k, restarts, cluster_seed)?;
        let attr = kmeans(attr_matrix.view(), k, restarts, cluster_seed)?;
        silhouettes.push((
            k,
            emb.mean_silhouette,
            emb.min_silhouette,
            attr.mean_silhouette,
            attr.min_silhouette,
        ));
    }
    if silhouettes.is_empty() {
        return Err(Error::Config("cluster range contains no feasible k".into()));
    }

    let out_dir = &manifest.base_dir;
    let sil_rows: Vec<Vec<String>> = silhouettes
        .iter()
        .map(|(k, a, b, c, d)| vec![k.to_string(), fmt(*a), fmt(*b), fmt(*c), fmt(*d)])
        .collect();
    let sil_path = out_dir.join("cluster_silhouettes.csv");
    write_table(
        &sil_path,
        &[
            "k",
            "mean_silhouette_embedding",
            "min_silhouette_embedding",
            "mean_silhouette_attributes",
            "min_silhouette_attributes",
        ],
        &sil_rows,
    )?;

    let best_k_embedding = silhouettes
        .iter()
        .max_by(|a, b| a.1.partial_cmp(&b.1).expect("finite silhouettes"))
        .map(|row| row.0)
        .expect("nonempty sweep");
    let best_emb = kmeans(
        embedding.matrix.view(),
        best_k_embedding,
        restarts,
        cluster_seed,
    )?;
    let best_attr_k = silhouettes
        .iter()
        .max_by(|a, b| a.3.partial_cmp(&b.3).expect("finite silhouettes"))
        .map(|row| row.0)
        .expect("nonempty sweep");
    let best_attr = kmeans(attr_matrix.view(), best_attr_k, restarts, cluster_seed)?;

    let label_rows: Vec<Vec<String>> = embedding
        .basin_ids
        .iter()
        .enumerate()
        .map(|(b, id)| vec![id.clone(), best_emb.labels[b].to_string()])
        .collect();
    let labels_path = out_dir.join(format!("cluster_labels_k{best_k_embedding}.csv"));
    write_table(&labels_path, &["basin_id", "cluster"], &label_rows)?;

    // Fractional variance reduction per signature under both label sets;
    // signatures come from the full observed record.
    let mut signature_values: Vec<(usize, &str, Vec<f64>)> = Vec::new();
    let full_sets: Vec<Option<crate::metrics::SignatureSet>> = datasets
        .iter()
        .map(|ds| {
            crate::metrics::signatures(&ds.dates, &ds.discharge, &ds.forcings.column(0).to_vec())
                .ok()
        })
        .collect();
    for (idx, name) in SIGNATURE_NAMES.iter().enumerate() {
        if full_sets.iter().any(|s| s.is_none()) {
            continue;
        }
        let values: Vec<f64> = full_sets
            .iter()
            .map(|s| s.as_ref().unwrap().values()[idx])
            .collect();
        signature_values.push((idx, name, values));
    }
    let mut vr_rows = Vec::new();
    for (_, name, values) in &signature_values {
        let emb_red = variance_reduction(values, &best_emb.labels);
        let attr_red = variance_reduction(values, &best_attr.labels);
        vr_rows.push(vec![
            name.to_string(),
            emb_red.map(fmt).unwrap_or_else(|_| "nan".into()),
            attr_red.map(fmt).unwrap_or_else(|_| "nan".into()),
        ]);
    }
    let vr_path = out_dir.join("cluster_variance_reduction.csv");
    write_table(
        &vr_path,
        &["signature", "reduction_embedding", "reduction_attributes"],
        &vr_rows,
    )?;

    Ok(ClusterOutput {
        silhouettes,
        best_k_embedding,
        files: vec![sil_path, labels_path, vr_path],
    })
}

/// Read the basin-id and NSE columns of a per-basin evaluation table.
pub fn read_nse_column(path: &Path) -> Result<Vec<(String, f64)>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_path(path)
        .map_err(|e| Error::Data(format!("{}: {}", path.display(), e)))?;
    let headers = reader
        .headers()
        .map_err(|e| Error::Parse(format!("{}: {}", path.display(), e)))?
        .clone();
    let id_idx = headers
        .iter()
        .position(|h| h == "basin_id")
        .ok_or_else(|| Error::Data(format!("{}: no basin_id column", path.display())))?;
    let nse_idx = headers
        .iter()
        .position(|h| h == "nse")
        .ok_or_else(|| Error::Data(format!("{}: no nse column", path.display())))?;
    let mut out = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| Error::Parse(format!("{}: {}", path.display(), e)))?;
        let nse: f64 = record[nse_idx].parse().map_err(|_| {
            Error::Parse(format!(
                "{}: bad nse '{}'",
                path.display(),
                &record[nse_idx]
            ))
        })?;
        out.push((record[id_idx].to_string(), nse));
    }
    Ok(out)
}

/// Paired comparison of two per-basin evaluation tables (joined on
/// basin id): Wilcoxon signed-rank p-value and Cohen's d.
pub fn cmd_analyze_compare(
    report_a: &Path,
    report_b: &Path,
    out_path: Option<&Path>,
) -> Result<ComparisonResult> {
    let a = read_nse_column(report_a)?;
    let b = read_nse_column(report_b)?;
    let b_map: std::collections::BTreeMap<&str, f64> =
        b.iter().map(|(id, v)| (id.as_str(), *v)).collect();
    let mut paired_a = Vec::new();
    let mut paired_b = Vec::new();
    for (id, v) in &a {
        if let Some(w) = b_map.get(id.as_str()) {
            paired_a.push(*v);
            paired_b.push(*w);
        }
    }
    if paired_a.is_empty() {
        return Err(Error::Data("the two reports share no basin ids".into()));
    }
    let result = compare_models(&paired_a, &paired_b)?;
    if let Some(path) = out_path {
        write_table(
            path,
            &["n_pairs", "w_statistic", "p_value", "cohens_d"],
            &[vec![
                result.n_used.to_string(),
                fmt(result.w_statistic),
                fmt(result.p_value),
                fmt(result.effect_size),
            ]],
        )?;
    }
    Ok(result)
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SpaceFile {
    candidates: Vec<Candidate>,
}

/// Grid search from a JSON space file; emits the per-candidate table and
/// the winning configuration as a ready-to-use config file.
pub fn cmd_gridsearch(
    config: &TrainingConfig,
    space_path: &Path,
    k: usize,
) -> Result<(Candidate, Vec<PathBuf>)> {
    config.validate()?;
    let text = std::fs::read_to_string(space_path).map_err(|e| {
        Error::Io(std::io::Error::new(
            e.kind(),
            format!("{}: {}", space_path.display(), e),
        ))
    })?;
    let space: SpaceFile = serde_json::from_str(&text)
        .map_err(|e| Error::Parse(format!("{}: {}", space_path.display(), e)))?;

    let datasets = load_data_root(&config.data_root, config.attribute_schema)?;
    let split = config.split()?;
    let base = config.train_options(config.seeds[0]);
    let (best, rows) = grid_search(&datasets, &split, &base, &space.candidates, k)?;

    std::fs::create_dir_all(&config.out_dir)?;
    let table_rows: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.candidate.describe(&base),
                fmt(r.median_nse),
                r.evaluations.to_string(),
            ]
        })
        .collect();
    let table_path = config.out_dir.join("gridsearch_results.csv");
    write_table(
        &table_path,
        &["candidate", "median_nse", "evaluations"],
        &table_rows,
    )?;

    let mut best_config = config.clone();
    let chosen = best.apply(&base);
    best_config.hidden_size = chosen.hidden_size;
    best_config.dropout = chosen.dropout;
    best_config.sequence_length = chosen.sequence_length;
    best_config.epochs = chosen.epochs;
    best_config.batch_size = chosen.batch_size;
    best_config.learning_rate = chosen.learning_rate;
    let best_path = config.out_dir.join("best_config.toml");
    best_config.save(&best_path)?;

    Ok((best, vec![table_path, best_path]))
}

/// Emit a synthetic fixture in the canonical data-root layout, with the
/// generator's ground truth and a ready-to-run config alongside.
pub fn cmd_synth(out_root: &Path, opts: SynthOptions) -> Result<Vec<PathBuf>> {
    let (datasets, truth) = synth_basins_with(opts)?;
    let forcing_dir = out_root.join("forcings");
    let discharge_dir = out_root.join("discharge");
    std::fs::create_dir_all(&forcing_dir)?;
    std::fs::create_dir_all(&discharge_dir)?;
    let mut files = Vec::new();

    for ds in &datasets {
        let mut forcing = String::from("date,prcp,tmin,tmax,srad,vp\n");
        let mut q = String::from("date,discharge\n");
        for (t, date) in ds.dates.iter().enumerate() {
            forcing.push_str(&format!(
                "{},{},{},{},{},{}\n",
                date,
                ds.forcings[[t, 0]],
                ds.forcings[[t, 1]],
                ds.forcings[[t, 2]],
                ds.forcings[[t, 3]],
                ds.forcings[[t, 4]],
            ));
            let v = ds.discharge[t];
            q.push_str(&format!(
                "{},{}\n",
                date,
                if v.is_nan() {
                    crate::data::MISSING_DISCHARGE_SENTINEL.to_string()
                } else {
                    format!("{v}")
                }
            ));
        }
        let fp = forcing_dir.join(format!("{}.csv", ds.basin_id));
        let qp = discharge_dir.join(format!("{}.csv", ds.basin_id));
        write_atomic(&fp, forcing.as_bytes())?;
        write_atomic(&qp, q.as_bytes())?;
        files.push(fp);
        files.push(qp);
    }

    let mut attrs = String::from("basin_id,");
    attrs.push_str(&datasets[0].attribute_names.join(","));
    attrs.push('\n');
    for ds in &datasets {
        attrs.push_str(&ds.basin_id);
        for v in ds.attributes.iter() {
            attrs.push_str(&format!(",{v}"));
        }
        attrs.push('\n');
    }
    let attrs_path = out_root.join("attributes.csv");
    write_atomic(&attrs_path, attrs.as_bytes())?;
    files.push(attrs_path);

    let regime_rows: Vec<Vec<String>> = datasets
        .iter()
        .enumerate()
        .map(|(b, ds)| {
            vec![
                ds.basin_id.clone(),
                truth.regimes[b].to_string(),
                fmt(truth.storage_rate[b]),
                fmt(truth.runoff_coeff[b]),
            ]
        })
        .collect();
    let regimes_path = out_root.join("regimes.csv");
    write_table(
        &regimes_path,
        &["basin_id", "regime", "storage_rate", "runoff_coeff"],
        &regime_rows,
    )?;
    files.push(regimes_path);

    // A config template pointed at this fixture: custom attribute schema,
    // periods split two-thirds/one-third over the generated record.
    let n = datasets[0].n_days();
    let train_days = (2 * n) / 3;
    let mut config = TrainingConfig::with_roots(out_root.to_path_buf(), out_root.join("run"));
    config.attribute_schema = crate::data::AttributeSchema::Custom;
    config.train_start = datasets[0].dates[0];
    config.train_end = datasets[0].dates[train_days - 1];
    config.validation_start = datasets[0].dates[train_days];
    config.validation_end = *datasets[0].dates.last().unwrap();
    config.hidden_size = 32;
    config.sequence_length = 30;
    config.dropout = 0.0;
    config.epochs = 20;
    config.batch_size = 64;
    let config_path = out_root.join("synth_config.toml");
    config.save(&config_path)?;
    files.push(config_path);

    Ok(files)
}

/// The three model configurations share everything but the variant; used
/// by comparison experiments.
pub fn variant_label(v: ModelVariant) -> &'static str {
    v.as_str()
}
