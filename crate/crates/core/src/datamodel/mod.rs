//! Core data types, the PCCD dataset format and time-window clustering.

mod dataset;
mod geometry;
pub mod pccd;

pub use dataset::{cluster_datapoints, Cluster, Datapoint, Dataset};
pub use geometry::{Area, ScenarioGeometry, Vec3, SPEED_OF_LIGHT};
pub use pccd::{load_dataset, save_dataset};

pub(crate) use geometry::distance;
