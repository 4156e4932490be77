//! Subcommand implementations. Every command writes into its own output
//! directory, never touches its inputs and records a manifest whose cache key
//! lets an identical rerun return immediately.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use pcc_core::aoa::{write_estimates_csv, TriangulationResult};
use pcc_core::clutter::ClutterModel;
use pcc_core::datamodel::pccd::{load_geometry, DATA_FILE, META_FILE};
use pcc_core::datamodel::{cluster_datapoints, load_dataset, save_dataset, Area};
use pcc_core::dissim::{load_matrix, save_matrix, scale_to_meters};
use pcc_core::eval::{chart_svg, error_cdf, evaluate, write_cdf_csv, write_report, EvalOptions};
use pcc_core::features::{load_features, save_features};
use pcc_core::mlp::{
    train_augmented, train_fingerprint, train_siamese, write_loss_history, BearingContext, ChartModel, TrainConfig,
    TrainingMode,
};
use pcc_core::pipeline::{
    preprocess, simulate_scenario, triangulate_preprocessed, BaselineConfig, PreprocessConfig, Preprocessed,
    ScenarioConfig, SCALE_PAIRS,
};

use crate::artifacts::{
    cached, read_csv, read_json, write_csv, write_json, CacheKey, LabelRow, PredictionRow, RunManifest,
};
use crate::error::CliError;

pub const SCENARIO_FILE: &str = "scenario.json";
pub const CLUTTER_FILE: &str = "clutter.bin";
pub const FEATURES_FILE: &str = "features.bin";
pub const DISSIM_FILE: &str = "dissim.bin";
pub const LABELS_FILE: &str = "labels.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const TRIANGULATION_FILE: &str = "triangulation.json";
pub const ESTIMATES_FILE: &str = "estimates.csv";
pub const PREDICTIONS_FILE: &str = "predictions.csv";
pub const MODEL_FILE: &str = "model.bin";
pub const LOSS_FILE: &str = "loss.csv";
pub const REPORT_FILE: &str = "report.json";
pub const CDF_FILE: &str = "cdf.csv";
pub const CHART_FILE: &str = "chart.svg";

fn require_dir(path: &Path, what: &str) -> Result<(), CliError> {
    if path.is_dir() {
        Ok(())
    } else {
        Err(CliError::Missing(format!("{what} {} does not exist", path.display())))
    }
}

fn require_file(path: &Path, what: &str) -> Result<(), CliError> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::Missing(format!("{what} {} does not exist", path.display())))
    }
}

fn load_config<T: Default + for<'de> Deserialize<'de>>(path: Option<&Path>) -> Result<T, CliError> {
    match path {
        Some(p) => {
            require_file(p, "config")?;
            read_json(p)
        }
        None => Ok(T::default()),
    }
}

fn config_json(value: &impl Serialize) -> serde_json::Value {
    serde_json::to_value(value).expect("configs serialize")
}

fn create_out(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

/// Hashes a dataset directory's data files.
fn hash_dataset(key: &mut CacheKey, dir: &Path) -> Result<(), CliError> {
    require_dir(dir, "dataset")?;
    key.file("meta", &dir.join(META_FILE))?;
    key.file("data", &dir.join(DATA_FILE))
}

/// Area of the scenario a dataset was simulated from, or the standard area.
fn scenario_area(dataset: &Path) -> Result<Area, CliError> {
    let path = dataset.join(SCENARIO_FILE);
    if path.is_file() {
        Ok(read_json::<ScenarioConfig>(&path)?.sim.area)
    } else {
        log::warn!("{} not found, assuming the standard 4.5 m x 4.5 m area", path.display());
        Ok(Area::standard())
    }
}

/// Runs `body` unless `out` already holds a run with the same cache key.
fn stage(
    out: &Path,
    force: bool,
    mut manifest: RunManifest,
    body: impl FnOnce() -> Result<Vec<String>, CliError>,
) -> Result<(), CliError> {
    if !force && cached(out, &manifest.cache_key) {
        log::info!("{}: outputs in {} are up to date", manifest.command, out.display());
        return Ok(());
    }
    create_out(out)?;
    manifest.outputs = body()?;
    manifest.write(out)
}

fn inputs(pairs: &[(&str, &Path)]) -> BTreeMap<String, PathBuf> {
    pairs.iter().map(|(k, p)| (k.to_string(), p.to_path_buf())).collect()
}

pub fn simulate(config: Option<&Path>, out: &Path, force: bool) -> Result<(), CliError> {
    let cfg: ScenarioConfig = load_config(config)?;
    cfg.sim.validate()?;
    let cfg_json = config_json(&cfg);
    let mut key = CacheKey::new("simulate");
    key.bytes("config", cfg_json.to_string().as_bytes());
    let manifest = RunManifest::new("simulate", BTreeMap::new(), key.finish(), cfg_json);
    stage(out, force, manifest, || {
        let dataset = simulate_scenario(&cfg)?;
        save_dataset(&dataset, out)?;
        write_json(&out.join(SCENARIO_FILE), &cfg)?;
        eprintln!("simulate: {} datapoints written to {}", dataset.len(), out.display());
        Ok(vec![META_FILE.into(), DATA_FILE.into(), SCENARIO_FILE.into()])
    })
}

#[derive(Serialize)]
struct PreprocessSummary {
    datapoints: usize,
    clusters: usize,
    clutter_orders: Vec<usize>,
    feature_length: usize,
    time_slope: Option<f64>,
    disconnected_pairs: Option<usize>,
}

fn label_rows(pre: &Preprocessed) -> Vec<LabelRow> {
    pre.clusters
        .iter()
        .enumerate()
        .map(|(id, c)| LabelRow { cluster_id: id as u32, mean_time: c.mean_time, x: c.mean_xy()[0], y: c.mean_xy()[1] })
        .collect()
}

pub fn preprocess_cmd(
    dataset: &Path,
    out: &Path,
    config: Option<&Path>,
    clutter_model: Option<&Path>,
    no_dissim: bool,
    force: bool,
) -> Result<(), CliError> {
    let cfg: PreprocessConfig = load_config(config)?;
    let mut key = CacheKey::new("preprocess");
    hash_dataset(&mut key, dataset)?;
    let cfg_json = config_json(&cfg);
    key.bytes("config", cfg_json.to_string().as_bytes());
    key.bytes("dissimilarities", &[u8::from(!no_dissim)]);
    let mut ins = vec![("dataset", dataset)];
    if let Some(p) = clutter_model {
        key.file("clutter", p)?;
        ins.push(("clutter_model", p));
    }
    let manifest = RunManifest::new("preprocess", inputs(&ins), key.finish(), cfg_json);
    stage(out, force, manifest, || {
        let data = load_dataset(dataset)?;
        let model = clutter_model.map(ClutterModel::load).transpose()?;
        let pre = preprocess(&data, &cfg, model, !no_dissim)?;
        pre.clutter.save(&out.join(CLUTTER_FILE))?;
        save_features(&pre.features, &out.join(FEATURES_FILE))?;
        write_csv(&out.join(LABELS_FILE), &label_rows(&pre))?;
        let mut outputs = vec![CLUTTER_FILE.to_string(), FEATURES_FILE.into(), LABELS_FILE.into()];
        let ids: Vec<u32> = (0..pre.clusters.len() as u32).collect();
        if let Some(d) = &pre.dissimilarities {
            save_matrix(&d.geodesic, &ids, &out.join(DISSIM_FILE))?;
            outputs.push(DISSIM_FILE.into());
        }
        let summary = PreprocessSummary {
            datapoints: data.len(),
            clusters: pre.clusters.len(),
            clutter_orders: pre.clutter.orders(),
            feature_length: pre.features.first().map_or(0, |f| f.values.len()),
            time_slope: pre.dissimilarities.as_ref().map(|d| d.time_slope),
            disconnected_pairs: pre.dissimilarities.as_ref().map(|d| d.disconnected_pairs),
        };
        write_json(&out.join(SUMMARY_FILE), &summary)?;
        outputs.push(SUMMARY_FILE.into());
        eprintln!("preprocess: {} clusters, clutter orders {:?}", summary.clusters, summary.clutter_orders);
        Ok(outputs)
    })
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TriangulationConfig {
    pub baseline: BaselineConfig,
    /// Search area; defaults to the area of the dataset's scenario.
    pub area: Option<Area>,
    /// Used only when no preprocessed directory is given.
    pub preprocess: PreprocessConfig,
}

fn prediction_rows(preds: &[Option<[f64; 2]>]) -> Vec<PredictionRow> {
    preds
        .iter()
        .enumerate()
        .map(|(id, p)| PredictionRow { cluster_id: id as u32, x: p.map(|p| p[0]), y: p.map(|p| p[1]) })
        .collect()
}

pub fn baseline_tri(
    dataset: &Path,
    out: &Path,
    preprocessed: Option<&Path>,
    config: Option<&Path>,
    force: bool,
) -> Result<(), CliError> {
    let cfg: TriangulationConfig = load_config(config)?;
    let mut key = CacheKey::new("baseline-tri");
    hash_dataset(&mut key, dataset)?;
    let cfg_json = config_json(&cfg);
    key.bytes("config", cfg_json.to_string().as_bytes());
    let mut ins = vec![("dataset", dataset)];
    let mut delta_t = cfg.preprocess.delta_t;
    if let Some(p) = preprocessed {
        require_dir(p, "preprocessed directory")?;
        key.file("clutter", &p.join(CLUTTER_FILE))?;
        ins.push(("preprocessed", p));
        let m = RunManifest::read(p).ok_or_else(|| CliError::Validation(format!("{} has no manifest", p.display())))?;
        let pc: PreprocessConfig =
            serde_json::from_value(m.config).map_err(|e| CliError::Validation(format!("{}: {e}", p.display())))?;
        delta_t = pc.delta_t;
    }
    key.bytes("delta_t", &delta_t.to_le_bytes());
    let manifest = RunManifest::new("baseline-tri", inputs(&ins), key.finish(), cfg_json);
    stage(out, force, manifest, || {
        let area = match cfg.area {
            Some(a) => a,
            None => scenario_area(dataset)?,
        };
        area.validate()?;
        let data = load_dataset(dataset)?;
        let clutter = match preprocessed {
            Some(p) => ClutterModel::load(&p.join(CLUTTER_FILE))?,
            None => ClutterModel::fit(&data, cfg.preprocess.clutter_order)?,
        };
        let clean = clutter.apply(&data)?;
        let clusters = cluster_datapoints(&clean, delta_t)?;
        let pre = Preprocessed { clutter, clean, clusters, features: Vec::new(), dissimilarities: None };
        let results = triangulate_preprocessed(&pre, &area, &cfg.baseline)?;
        write_estimates_csv(&results, pre.clean.geometry.num_arrays, &out.join(ESTIMATES_FILE))?;
        let preds: Vec<Option<[f64; 2]>> = results.iter().map(|r| r.position).collect();
        write_csv(&out.join(PREDICTIONS_FILE), &prediction_rows(&preds))?;
        write_json(&out.join(TRIANGULATION_FILE), &results)?;
        write_csv(&out.join(LABELS_FILE), &label_rows(&pre))?;
        let flagged = results.iter().filter(|r| r.position.is_none()).count();
        eprintln!("baseline-tri: {} clusters, {flagged} without a position", results.len());
        Ok(vec![ESTIMATES_FILE.into(), PREDICTIONS_FILE.into(), TRIANGULATION_FILE.into(), LABELS_FILE.into()])
    })
}

#[allow(clippy::too_many_arguments)]
pub fn train(
    dataset: &Path,
    mode: TrainingMode,
    preprocessed: &Path,
    out: &Path,
    config: Option<&Path>,
    triangulation: Option<&Path>,
    force: bool,
) -> Result<(), CliError> {
    let cfg: TrainConfig = load_config(config)?;
    cfg.validate()?;
    require_dir(dataset, "dataset")?;
    if !preprocessed.join(FEATURES_FILE).is_file() {
        return Err(CliError::Validation(format!(
            "no cached features in {}; run `pcc preprocess {} --out {}` first",
            preprocessed.display(),
            dataset.display(),
            preprocessed.display()
        )));
    }
    let needs_dissim = mode != TrainingMode::Fingerprint;
    if needs_dissim && !preprocessed.join(DISSIM_FILE).is_file() {
        return Err(CliError::Validation(format!(
            "mode {} needs cached dissimilarities, but {} has none; rerun `pcc preprocess` without --no-dissim",
            mode_name(mode),
            preprocessed.display()
        )));
    }
    let tri_path = match (mode, triangulation) {
        (TrainingMode::Augmented, Some(t)) => {
            let p = t.join(TRIANGULATION_FILE);
            if !p.is_file() {
                return Err(CliError::Validation(format!(
                    "{} not found; run `pcc baseline-tri` on the training dataset first",
                    p.display()
                )));
            }
            Some(p)
        }
        (TrainingMode::Augmented, None) => {
            return Err(CliError::Validation(
                "mode cc-aug needs --triangulation pointing at a `pcc baseline-tri` output directory".into(),
            ))
        }
        _ => None,
    };
    let mut key = CacheKey::new("train");
    key.bytes("mode", mode_name(mode).as_bytes());
    key.file("meta", &dataset.join(META_FILE))?;
    key.file("features", &preprocessed.join(FEATURES_FILE))?;
    key.file("labels", &preprocessed.join(LABELS_FILE))?;
    if needs_dissim {
        key.file("dissim", &preprocessed.join(DISSIM_FILE))?;
    }
    if let Some(p) = &tri_path {
        key.file("triangulation", p)?;
    }
    let cfg_json = config_json(&cfg);
    key.bytes("config", cfg_json.to_string().as_bytes());
    let mut ins = vec![("dataset", dataset), ("preprocessed", preprocessed)];
    if let Some(t) = triangulation {
        ins.push(("triangulation", t));
    }
    let manifest = RunManifest::new("train", inputs(&ins), key.finish(), cfg_json);
    stage(out, force, manifest, || {
        let features = load_features(&preprocessed.join(FEATURES_FILE))?;
        let rows: Vec<&[f32]> = features.iter().map(|f| f.values.as_slice()).collect();
        let outcome = match mode {
            TrainingMode::Fingerprint => {
                let labels: Vec<LabelRow> = read_csv(&preprocessed.join(LABELS_FILE))?;
                check_ids(labels.iter().map(|l| l.cluster_id), features.iter().map(|f| f.cluster_id))?;
                let xy: Vec<[f64; 2]> = labels.iter().map(|l| [l.x, l.y]).collect();
                train_fingerprint(&rows, &xy, &cfg)?
            }
            TrainingMode::Siamese => {
                let (d, ids) = load_matrix(&preprocessed.join(DISSIM_FILE))?;
                check_ids(ids.into_iter(), features.iter().map(|f| f.cluster_id))?;
                train_siamese(&rows, &d, &cfg)?
            }
            TrainingMode::Augmented => {
                let (d, ids) = load_matrix(&preprocessed.join(DISSIM_FILE))?;
                check_ids(ids.into_iter(), features.iter().map(|f| f.cluster_id))?;
                let results: Vec<TriangulationResult> = read_json(tri_path.as_ref().unwrap())?;
                if results.len() != features.len() {
                    return Err(CliError::Validation(format!(
                        "triangulation covers {} clusters, features {}; both must come from the same dataset",
                        results.len(),
                        features.len()
                    )));
                }
                let positions: Vec<Option<[f64; 2]>> = results.iter().map(|r| r.position).collect();
                let (scaled, s) = scale_to_meters(&d, &positions, SCALE_PAIRS, cfg.seed)?;
                log::info!("metric scale {s:.4} m per dissimilarity unit");
                let (geometry, _) = load_geometry(dataset)?;
                let height = scenario_area(dataset)?.height;
                let bearings = BearingContext::from_triangulation(geometry, height, &results);
                train_augmented(&rows, &scaled, &bearings, &cfg)?
            }
        };
        outcome.model.save(&out.join(MODEL_FILE))?;
        write_loss_history(&outcome.loss_history, &out.join(LOSS_FILE))?;
        let h = &outcome.loss_history;
        eprintln!("train: {} epochs, loss {:.5} -> {:.5}", h.len(), h[0], h[h.len() - 1]);
        Ok(vec![MODEL_FILE.into(), LOSS_FILE.into()])
    })
}

fn check_ids(a: impl Iterator<Item = u32>, b: impl Iterator<Item = u32>) -> Result<(), CliError> {
    if a.eq(b) {
        Ok(())
    } else {
        Err(CliError::Validation("cluster ids of the cached artifacts do not match".into()))
    }
}

pub fn mode_name(mode: TrainingMode) -> &'static str {
    match mode {
        TrainingMode::Fingerprint => "fingerprint",
        TrainingMode::Siamese => "cc",
        TrainingMode::Augmented => "cc-aug",
    }
}

pub fn predict(model: &Path, preprocessed: &Path, out: &Path, force: bool) -> Result<(), CliError> {
    require_file(model, "model")?;
    require_file(&preprocessed.join(FEATURES_FILE), "features")?;
    let mut key = CacheKey::new("predict");
    key.file("model", model)?;
    key.file("features", &preprocessed.join(FEATURES_FILE))?;
    let manifest = RunManifest::new(
        "predict",
        inputs(&[("model", model), ("preprocessed", preprocessed)]),
        key.finish(),
        serde_json::Value::Null,
    );
    stage(out, force, manifest, || {
        let m = ChartModel::load(model)?;
        let features = load_features(&preprocessed.join(FEATURES_FILE))?;
        let rows: Vec<&[f32]> = features.iter().map(|f| f.values.as_slice()).collect();
        let preds = m.predict(&rows)?;
        let out_rows: Vec<PredictionRow> = features
            .iter()
            .zip(&preds)
            .map(|(f, p)| PredictionRow { cluster_id: f.cluster_id, x: Some(p[0]), y: Some(p[1]) })
            .collect();
        write_csv(&out.join(PREDICTIONS_FILE), &out_rows)?;
        eprintln!("predict: {} clusters ({} model)", preds.len(), mode_name(m.mode));
        Ok(vec![PREDICTIONS_FILE.into()])
    })
}

pub fn evaluate_cmd(
    predictions: &Path,
    labels: &Path,
    out: &Path,
    config: Option<&Path>,
    no_align: bool,
    force: bool,
) -> Result<(), CliError> {
    let mut opts: EvalOptions = load_config(config)?;
    if no_align {
        opts.align = false;
    }
    require_file(predictions, "predictions")?;
    require_file(labels, "labels")?;
    let mut key = CacheKey::new("evaluate");
    key.file("predictions", predictions)?;
    key.file("labels", labels)?;
    let cfg_json = config_json(&opts);
    key.bytes("config", cfg_json.to_string().as_bytes());
    let manifest = RunManifest::new(
        "evaluate",
        inputs(&[("predictions", predictions), ("labels", labels)]),
        key.finish(),
        cfg_json,
    );
    stage(out, force, manifest, || {
        let preds: Vec<PredictionRow> = read_csv(predictions)?;
        let labels: Vec<LabelRow> = read_csv(labels)?;
        let by_id: BTreeMap<u32, [f64; 2]> = labels.iter().map(|l| (l.cluster_id, [l.x, l.y])).collect();
        if by_id.len() != labels.len() {
            return Err(CliError::Validation("duplicate cluster ids in labels".into()));
        }
        let mut p = Vec::with_capacity(preds.len());
        let mut l = Vec::with_capacity(preds.len());
        for row in &preds {
            let label = by_id.get(&row.cluster_id).ok_or_else(|| {
                CliError::Validation(format!("prediction for cluster {} has no label", row.cluster_id))
            })?;
            p.push(match (row.x, row.y) {
                (Some(x), Some(y)) => Some([x, y]),
                _ => None,
            });
            l.push(*label);
        }
        let ev = evaluate(&p, &l, &opts)?;
        write_report(&ev.report, &out.join(REPORT_FILE))?;
        write_cdf_csv(&error_cdf(&ev.errors), &out.join(CDF_FILE))?;
        fs::write(out.join(CHART_FILE), chart_svg(&ev.aligned, &ev.labels)).map_err(|e| CliError::io(out, e))?;
        let r = &ev.report;
        eprintln!(
            "evaluate: MAE {:.3} m, DRMS {:.3} m, CEP {:.3} m, R95 {:.3} m, KS {:.3}, CT {:.3}, TW {:.3}",
            r.mae, r.drms, r.cep, r.r95, r.ks, r.ct, r.tw
        );
        Ok(vec![REPORT_FILE.into(), CDF_FILE.into(), CHART_FILE.into()])
    })
}
