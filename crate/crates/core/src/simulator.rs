//! Synthetic multi-static CSI.
//!
//! The channel from transmitter `i` to every receive antenna is the sum of a
//! line-of-sight path, a fixed set of specular clutter scatterers and one
//! isotropic point scatterer (the target). Each path contributes amplitude
//! `1 / (product of hop lengths)` and the phase `exp(-j 2 pi f_n tau)` of its
//! exact geometric delay at the absolute subcarrier frequency. Per packet, all
//! receive entries share one random phase and one timing offset, mimicking
//! unsynchronized transmitters in front of phase-coherent receivers.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datamodel::{distance, Area, Datapoint, Dataset, ScenarioGeometry, Vec3, SPEED_OF_LIGHT};
use crate::error::{Error, Result};
use crate::linalg::C64;

const MIN_SEPARATION: f64 = 0.01;
const ARRIVAL_STREAM_BASE: u64 = 1 << 20;
const PACKET_STREAM_BASE: u64 = 1 << 40;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub geometry: ScenarioGeometry,
    pub area: Area,
    pub clutter_paths_per_tx: usize,
    /// Scale of the scattered target path relative to a unit-gain direct path.
    pub target_gain: f64,
    /// Standard deviation of the circular complex noise added to every entry.
    pub noise_std: f64,
    /// Draw a common random phase per packet.
    pub phase_random: bool,
    /// Standard deviation in seconds of the per-packet timing offset.
    pub timing_jitter_std: f64,
    /// Constant receiver timing offset in seconds, shifting zero delay to a
    /// positive delay-domain tap.
    pub timing_offset: f64,
    pub packet_rate_per_tx: f64,
    /// Seed for packet arrivals, phases and noise.
    pub seed: u64,
    /// Seed for the static clutter scatterers; datasets sharing it see the same room.
    pub scene_seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            geometry: ScenarioGeometry::standard(),
            area: Area::standard(),
            clutter_paths_per_tx: 6,
            target_gain: 0.1,
            noise_std: 1e-3,
            phase_random: true,
            timing_jitter_std: 0.0,
            timing_offset: 1.5e-6,
            packet_rate_per_tx: 25.0,
            seed: 0,
            scene_seed: 7,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        self.geometry.validate()?;
        self.area.validate()?;
        let nonneg = [
            ("target_gain", self.target_gain),
            ("noise_std", self.noise_std),
            ("timing_jitter_std", self.timing_jitter_std),
            ("timing_offset", self.timing_offset),
            ("packet_rate_per_tx", self.packet_rate_per_tx),
        ];
        for (name, v) in nonneg {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::invalid(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrajectorySample {
    pub t: f64,
    pub position: Vec3,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub samples: Vec<TrajectorySample>,
}

impl Trajectory {
    pub fn start_time(&self) -> f64 {
        self.samples.first().map_or(0.0, |s| s.t)
    }

    pub fn end_time(&self) -> f64 {
        self.samples.last().map_or(0.0, |s| s.t)
    }

    /// Linearly interpolated position, clamped to the sampled time span.
    pub fn position_at(&self, t: f64) -> Vec3 {
        let s = &self.samples;
        if t <= s[0].t {
            return s[0].position;
        }
        if t >= s[s.len() - 1].t {
            return s[s.len() - 1].position;
        }
        let hi = s.partition_point(|p| p.t <= t);
        let (a, b) = (&s[hi - 1], &s[hi]);
        let w = (t - a.t) / (b.t - a.t);
        std::array::from_fn(|k| a.position[k] + w * (b.position[k] - a.position[k]))
    }

    pub fn path_length(&self) -> f64 {
        self.samples.windows(2).map(|w| distance(w[0].position, w[1].position)).sum()
    }
}

const TRAJECTORY_DT: f64 = 0.01;
const MAX_TURN_RATE: f64 = 1.5;

/// Constant-speed random walk with a bounded, smoothly varying turn rate and
/// reflecting walls, sampled every 10 ms.
pub fn generate_trajectory(seed: u64, duration: f64, area: &Area, speed: f64) -> Result<Trajectory> {
    area.validate()?;
    if !(duration > 0.0) || !duration.is_finite() {
        return Err(Error::invalid(format!("duration must be positive, got {duration}")));
    }
    if !(speed >= 0.0) || !speed.is_finite() {
        return Err(Error::invalid(format!("speed must be non-negative, got {speed}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let turn_noise = Normal::new(0.0, 2.0).unwrap();
    let mut x = area.x_min + rng.random::<f64>() * area.width();
    let mut y = area.y_min + rng.random::<f64>() * area.depth();
    let mut heading = rng.random::<f64>() * 2.0 * PI;
    let mut turn_rate = 0.0f64;

    let steps = (duration / TRAJECTORY_DT).ceil() as usize;
    let mut samples = Vec::with_capacity(steps + 1);
    samples.push(TrajectorySample { t: 0.0, position: [x, y, area.height] });
    for k in 1..=steps {
        turn_rate =
            (turn_rate + turn_noise.sample(&mut rng) * TRAJECTORY_DT.sqrt()).clamp(-MAX_TURN_RATE, MAX_TURN_RATE);
        heading += turn_rate * TRAJECTORY_DT;
        x += speed * TRAJECTORY_DT * heading.cos();
        y += speed * TRAJECTORY_DT * heading.sin();
        if x < area.x_min || x > area.x_max {
            x = if x < area.x_min { 2.0 * area.x_min - x } else { 2.0 * area.x_max - x };
            heading = PI - heading;
        }
        if y < area.y_min || y > area.y_max {
            y = if y < area.y_min { 2.0 * area.y_min - y } else { 2.0 * area.y_max - y };
            heading = -heading;
        }
        x = x.clamp(area.x_min, area.x_max);
        y = y.clamp(area.y_min, area.y_max);
        let t = (k as f64 * TRAJECTORY_DT).min(duration);
        samples.push(TrajectorySample { t, position: [x, y, area.height] });
    }
    Ok(Trajectory { samples })
}

/// Complex gain of a two-hop path `from -> via -> to` at frequency `freq`.
pub fn scattered_path_gain(from: Vec3, via: Vec3, to: Vec3, gain: C64, freq: f64) -> C64 {
    let d1 = distance(from, via);
    let d2 = distance(via, to);
    let tau = (d1 + d2) / SPEED_OF_LIGHT;
    gain / (d1 * d2) * C64::from_polar(1.0, -2.0 * PI * freq * tau)
}

#[derive(Clone, Debug)]
struct Scatterer {
    position: Vec3,
    coefficient: C64,
}

/// One synthesized packet together with its noise-free target contribution.
#[derive(Clone, Debug)]
pub struct PacketRealization {
    pub csi: Vec<C64>,
    /// Target path including this packet's common phase and timing factors.
    pub target_component: Vec<C64>,
}

/// Precomputed static room: element positions and per-transmitter clutter responses.
#[derive(Clone, Debug)]
pub struct Scene {
    config: SimConfig,
    elements: Vec<Vec3>,
    scatterers: Vec<Vec<Scatterer>>,
    static_response: Vec<Vec<C64>>,
}

impl Scene {
    pub fn new(config: &SimConfig) -> Result<Self> {
        config.validate()?;
        let g = &config.geometry;
        let mut elements = Vec::with_capacity(g.num_arrays * g.antennas_per_array());
        for b in 0..g.num_arrays {
            for r in 0..g.rows {
                for c in 0..g.cols {
                    elements.push(g.element_position(b, r, c));
                }
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.scene_seed);
        let a = &config.area;
        let scatterers: Vec<Vec<Scatterer>> = (0..g.num_tx)
            .map(|_| {
                (0..config.clutter_paths_per_tx)
                    .map(|_| Scatterer {
                        position: [
                            a.x_min - 2.0 + rng.random::<f64>() * (a.width() + 4.0),
                            a.y_min - 2.0 + rng.random::<f64>() * (a.depth() + 4.0),
                            rng.random::<f64>() * 3.0,
                        ],
                        coefficient: C64::from_polar(0.3 + 0.7 * rng.random::<f64>(), 2.0 * PI * rng.random::<f64>()),
                    })
                    .collect()
            })
            .collect();

        let mut scene = Self { config: config.clone(), elements, scatterers, static_response: vec![] };
        scene.static_response = (0..g.num_tx).map(|i| scene.clutter_response(i)).collect();
        Ok(scene)
    }

    pub fn config(&self) -> &SimConfig {
        &self.config
    }

    fn clutter_response(&self, tx: usize) -> Vec<C64> {
        let g = &self.config.geometry;
        let src = g.tx_positions[tx];
        let mut out = vec![C64::new(0.0, 0.0); g.csi_len()];
        self.add_path(&mut out, src, 0.0, C64::new(1.0, 0.0));
        for s in &self.scatterers[tx] {
            let d1 = distance(src, s.position);
            self.add_path(&mut out, s.position, d1, s.coefficient / d1);
        }
        out
    }

    /// Adds a path whose last hop leaves `source`; `prefix_len` and `prefix_gain`
    /// describe the earlier hops.
    fn add_path(&self, out: &mut [C64], source: Vec3, prefix_len: f64, prefix_gain: C64) {
        let g = &self.config.geometry;
        let n_sub = g.num_subcarriers;
        for (e, &p) in self.elements.iter().enumerate() {
            let d = distance(source, p);
            let amp = prefix_gain / d;
            let tau = (prefix_len + d) / SPEED_OF_LIGHT;
            let base = e * n_sub;
            for n in 0..n_sub {
                out[base + n] += amp * C64::from_polar(1.0, -2.0 * PI * g.subcarrier_freq(n) * tau);
            }
        }
    }

    /// Noise-free target path response for one-based transmitter `tx`.
    pub fn target_response(&self, target: Vec3, tx: u32) -> Result<Vec<C64>> {
        let g = &self.config.geometry;
        let slot = self.check_tx(tx)?;
        let src = g.tx_positions[slot];
        if distance(src, target) < MIN_SEPARATION || self.elements.iter().any(|&e| distance(e, target) < MIN_SEPARATION)
        {
            return Err(Error::invalid(format!("target {target:?} is collocated with an antenna or transmitter")));
        }
        let mut out = vec![C64::new(0.0, 0.0); g.csi_len()];
        let d1 = distance(src, target);
        self.add_path(&mut out, target, d1, C64::new(self.config.target_gain / d1, 0.0));
        Ok(out)
    }

    /// Static (target-free) response of transmitter `tx`.
    pub fn static_response(&self, tx: u32) -> Result<&[C64]> {
        let slot = self.check_tx(tx)?;
        Ok(&self.static_response[slot])
    }

    fn check_tx(&self, tx: u32) -> Result<usize> {
        let n = self.config.geometry.num_tx;
        if tx < 1 || tx as usize > n {
            return Err(Error::invalid(format!("tx index {tx} outside [1, {n}]")));
        }
        Ok(tx as usize - 1)
    }

    pub fn synthesize<R: Rng + ?Sized>(&self, target: Vec3, tx: u32, rng: &mut R) -> Result<PacketRealization> {
        let cfg = &self.config;
        let g = &cfg.geometry;
        let target_path = self.target_response(target, tx)?;
        let clutter = self.static_response(tx)?;
        let phase = if cfg.phase_random { 2.0 * PI * rng.random::<f64>() } else { 0.0 };
        let jitter = if cfg.timing_jitter_std > 0.0 {
            Normal::new(0.0, cfg.timing_jitter_std).unwrap().sample(rng)
        } else {
            0.0
        };
        let delay = cfg.timing_offset + jitter;
        let per_subcarrier: Vec<C64> = (0..g.num_subcarriers)
            .map(|n| C64::from_polar(1.0, phase - 2.0 * PI * delay * g.subcarrier_offset(n)))
            .collect();
        let noise = Normal::new(0.0, cfg.noise_std / std::f64::consts::SQRT_2).unwrap();
        let n_sub = g.num_subcarriers;
        let mut csi = Vec::with_capacity(target_path.len());
        let mut target_component = Vec::with_capacity(target_path.len());
        for (i, (&t, &c)) in target_path.iter().zip(clutter).enumerate() {
            let f = per_subcarrier[i % n_sub];
            let tgt = f * t;
            let mut h = f * c + tgt;
            if cfg.noise_std > 0.0 {
                h += C64::new(noise.sample(rng), noise.sample(rng));
            }
            csi.push(h);
            target_component.push(tgt);
        }
        Ok(PacketRealization { csi, target_component })
    }
}

/// Synthesizes one packet for `target` seen through transmitter `tx` (one-based).
pub fn synthesize_csi<R: Rng + ?Sized>(config: &SimConfig, target: Vec3, tx: u32, rng: &mut R) -> Result<Vec<C64>> {
    Ok(Scene::new(config)?.synthesize(target, tx, rng)?.csi)
}

struct Arrival {
    t: f64,
    tx: u32,
}

fn arrivals(config: &SimConfig, t0: f64, t1: f64) -> Vec<Arrival> {
    let mut out = Vec::new();
    if config.packet_rate_per_tx <= 0.0 {
        return out;
    }
    let exp = Exp::new(config.packet_rate_per_tx).unwrap();
    for tx in 1..=config.geometry.num_tx as u32 {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(ARRIVAL_STREAM_BASE + tx as u64);
        let mut t = t0 + exp.sample(&mut rng);
        while t < t1 {
            out.push(Arrival { t, tx });
            t += exp.sample(&mut rng);
        }
    }
    out.sort_by(|a, b| a.t.total_cmp(&b.t).then(a.tx.cmp(&b.tx)));
    out
}

/// Simulates Poisson packet arrivals from every transmitter along `trajectory`.
pub fn simulate_dataset(config: &SimConfig, trajectory: &Trajectory) -> Result<Dataset> {
    Ok(simulate_dataset_with_truth(config, trajectory)?.0)
}

/// Like [`simulate_dataset`], additionally returning each datapoint's
/// noise-free target component.
pub fn simulate_dataset_with_truth(config: &SimConfig, trajectory: &Trajectory) -> Result<(Dataset, Vec<Vec<C64>>)> {
    if trajectory.samples.is_empty() {
        return Err(Error::invalid("trajectory has no samples"));
    }
    let scene = Scene::new(config)?;
    let packets = arrivals(config, trajectory.start_time(), trajectory.end_time());
    let realized: Vec<(Datapoint, Vec<C64>)> = packets
        .par_iter()
        .enumerate()
        .map(|(idx, a)| {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            rng.set_stream(PACKET_STREAM_BASE + idx as u64);
            let position = trajectory.position_at(a.t);
            let packet = scene.synthesize(position, a.tx, &mut rng)?;
            Ok((Datapoint { csi: packet.csi, position, timestamp: a.t, tx_index: a.tx }, packet.target_component))
        })
        .collect::<Result<_>>()?;
    let (datapoints, truth): (Vec<_>, Vec<_>) = realized.into_iter().unzip();
    Ok((Dataset::new(config.geometry.clone(), datapoints)?, truth))
}
