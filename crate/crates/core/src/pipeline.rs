//! Stage orchestration shared by the command-line tool and the end-to-end
//! tests: scenario simulation, preprocessing, triangulation and the three
//! network variants.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::aoa::{triangulate_clusters, KappaHeuristic, TriangulationOptions, TriangulationResult};
use crate::clutter::{ClutterModel, ClutterOrder};
use crate::datamodel::{cluster_datapoints, Cluster, Dataset};
use crate::dissim::{
    calibrate_time_slope, combine_cluster_csi, cosine_matrix, fuse_with_time, geodesic_dissimilarities,
    scale_to_meters, CosineForm, DissimilarityMatrix,
};
use crate::error::{Error, Result};
use crate::features::{dataset_features, FeatureVector, TapConfig};
use crate::linalg::C64;
use crate::mlp::{train_augmented, train_fingerprint, train_siamese, BearingContext, TrainConfig, TrainOutcome};
use crate::simulator::{generate_trajectory, simulate_dataset, SimConfig};

/// A simulated recording: room and radio settings plus the target trajectory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub sim: SimConfig,
    /// Trajectory length in seconds.
    pub duration: f64,
    /// Target speed in m/s.
    pub speed: f64,
    pub trajectory_seed: u64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self::standard_train()
    }
}

impl ScenarioConfig {
    /// Ten minutes of walking at 0.25 m/s with four packets per second per
    /// transmitter.
    pub fn standard_train() -> Self {
        Self {
            sim: SimConfig { packet_rate_per_tx: 4.0, seed: 1, ..SimConfig::default() },
            duration: 600.0,
            speed: 0.25,
            trajectory_seed: 11,
        }
    }

    /// Five minutes in the same room on an independent trajectory.
    pub fn standard_test() -> Self {
        let mut cfg = Self::standard_train();
        cfg.sim.seed = 2;
        cfg.duration = 300.0;
        cfg.trajectory_seed = 12;
        cfg
    }
}

pub fn simulate_scenario(cfg: &ScenarioConfig) -> Result<Dataset> {
    let trajectory = generate_trajectory(cfg.trajectory_seed, cfg.duration, &cfg.sim.area, cfg.speed)?;
    simulate_dataset(&cfg.sim, &trajectory)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PreprocessConfig {
    pub clutter_order: ClutterOrder,
    /// Cluster window length in seconds.
    pub delta_t: f64,
    /// Delay taps; `None` selects the defaults for the geometry.
    pub taps: Option<TapConfig>,
    pub cosine: CosineForm,
    /// Time gate of the dissimilarity fusion in seconds.
    pub time_gate: f64,
    /// Seconds-to-dissimilarity slope; `None` calibrates it on the data.
    pub time_slope: Option<f64>,
    pub knn_k: usize,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            clutter_order: ClutterOrder::default(),
            delta_t: 1.0,
            taps: None,
            cosine: CosineForm::Coherent,
            time_gate: 3.0,
            time_slope: None,
            knn_k: 20,
        }
    }
}

#[derive(Clone, Debug)]
pub struct DissimilarityStage {
    pub cosine: DissimilarityMatrix,
    pub time_slope: f64,
    pub geodesic: DissimilarityMatrix,
    pub disconnected_pairs: usize,
}

#[derive(Clone, Debug)]
pub struct Preprocessed {
    pub clutter: ClutterModel,
    pub clean: Dataset,
    pub clusters: Vec<Cluster>,
    pub features: Vec<FeatureVector>,
    pub dissimilarities: Option<DissimilarityStage>,
}

impl Preprocessed {
    pub fn labels(&self) -> Vec<[f64; 2]> {
        self.clusters.iter().map(Cluster::mean_xy).collect()
    }

    pub fn mean_times(&self) -> Vec<f64> {
        self.clusters.iter().map(|c| c.mean_time).collect()
    }

    pub fn feature_rows(&self) -> Vec<&[f32]> {
        self.features.iter().map(|f| f.values.as_slice()).collect()
    }
}

/// Clutter removal, clustering, features and (optionally) the geodesic
/// dissimilarities. A given clutter model is applied as is; otherwise one is
/// fitted on `dataset`.
pub fn preprocess(
    dataset: &Dataset,
    cfg: &PreprocessConfig,
    clutter: Option<ClutterModel>,
    with_dissimilarities: bool,
) -> Result<Preprocessed> {
    let clutter = match clutter {
        Some(m) => m,
        None => ClutterModel::fit(dataset, cfg.clutter_order)?,
    };
    let clean = clutter.apply(dataset)?;
    let clusters = cluster_datapoints(&clean, cfg.delta_t)?;
    let taps = cfg.taps.unwrap_or_else(|| TapConfig::for_geometry(&clean.geometry));
    let features = dataset_features(&clean, &clusters, &taps)?;
    let dissimilarities = if with_dissimilarities { Some(dissimilarity_stage(&clean, &clusters, cfg)?) } else { None };
    Ok(Preprocessed { clutter, clean, clusters, features, dissimilarities })
}

fn dissimilarity_stage(clean: &Dataset, clusters: &[Cluster], cfg: &PreprocessConfig) -> Result<DissimilarityStage> {
    if clusters.len() <= cfg.knn_k {
        return Err(Error::invalid(format!(
            "{} clusters are too few for a {}-nearest-neighbor graph",
            clusters.len(),
            cfg.knn_k
        )));
    }
    let combined = clusters
        .par_iter()
        .map(|c| {
            let members: Vec<&[C64]> = c.indices.iter().map(|&l| clean.datapoints[l].csi.as_slice()).collect();
            combine_cluster_csi(&members, &clean.geometry)
        })
        .collect::<Result<Vec<_>>>()?;
    let cosine = cosine_matrix(&combined, cfg.cosine);
    let times: Vec<f64> = clusters.iter().map(|c| c.mean_time).collect();
    let time_slope = match cfg.time_slope {
        Some(s) => s,
        None => calibrate_time_slope(&cosine, &times, cfg.time_gate)?,
    };
    let fused = fuse_with_time(&cosine, &times, time_slope, cfg.time_gate)?;
    let (geodesic, disconnected_pairs) = geodesic_dissimilarities(&fused, cfg.knn_k)?;
    Ok(DissimilarityStage { cosine, time_slope, geodesic, disconnected_pairs })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineConfig {
    pub kappa: KappaHeuristic,
    pub triangulation: TriangulationOptions,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self { kappa: KappaHeuristic::default(), triangulation: TriangulationOptions::default() }
    }
}

pub fn triangulate_preprocessed(
    pre: &Preprocessed,
    area: &crate::datamodel::Area,
    cfg: &BaselineConfig,
) -> Result<Vec<TriangulationResult>> {
    let results = triangulate_clusters(&pre.clean, &pre.clusters, area, &cfg.kappa, &cfg.triangulation)?;
    let flagged = results.iter().filter(|r| r.flag.is_some()).count();
    if flagged > 0 {
        log::warn!("{flagged} of {} clusters could not be triangulated", results.len());
    }
    Ok(results)
}

/// Pairs used for the metric scale of the augmented variant.
pub const SCALE_PAIRS: usize = 100_000;

fn geodesic(pre: &Preprocessed) -> Result<&DissimilarityMatrix> {
    pre.dissimilarities
        .as_ref()
        .map(|d| &d.geodesic)
        .ok_or_else(|| Error::invalid("dissimilarities were not computed for this dataset"))
}

pub fn fit_fingerprint(pre: &Preprocessed, cfg: &TrainConfig) -> Result<TrainOutcome> {
    train_fingerprint(&pre.feature_rows(), &pre.labels(), cfg)
}

pub fn fit_channel_chart(pre: &Preprocessed, cfg: &TrainConfig) -> Result<TrainOutcome> {
    train_siamese(&pre.feature_rows(), geodesic(pre)?, cfg)
}

/// Geodesic dissimilarities scaled to metres against the triangulated
/// positions, and the scale factor.
pub fn metric_dissimilarities(
    pre: &Preprocessed,
    triangulation: &[TriangulationResult],
    seed: u64,
) -> Result<(DissimilarityMatrix, f64)> {
    if triangulation.len() != pre.clusters.len() {
        return Err(Error::shape(format!(
            "{} triangulation results for {} clusters",
            triangulation.len(),
            pre.clusters.len()
        )));
    }
    let positions: Vec<Option<[f64; 2]>> = triangulation.iter().map(|r| r.position).collect();
    scale_to_meters(geodesic(pre)?, &positions, SCALE_PAIRS, seed)
}

pub fn fit_augmented_chart(
    pre: &Preprocessed,
    triangulation: &[TriangulationResult],
    area_height: f64,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    let (scaled, _) = metric_dissimilarities(pre, triangulation, cfg.seed)?;
    let bearings = BearingContext::from_triangulation(pre.clean.geometry.clone(), area_height, triangulation);
    train_augmented(&pre.feature_rows(), &scaled, &bearings, cfg)
}
