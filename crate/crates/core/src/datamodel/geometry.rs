use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

pub type Vec3 = [f64; 3];

pub(crate) fn sub(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub(crate) fn dot(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub(crate) fn norm(a: Vec3) -> f64 {
    dot(a, a).sqrt()
}

pub(crate) fn cross(a: Vec3, b: Vec3) -> Vec3 {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

pub(crate) fn scale(a: Vec3, s: f64) -> Vec3 {
    [a[0] * s, a[1] * s, a[2] * s]
}

pub(crate) fn add(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

pub(crate) fn distance(a: Vec3, b: Vec3) -> f64 {
    norm(sub(a, b))
}

/// Rectangular target area at a fixed, known target height.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Area {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
    pub height: f64,
}

impl Area {
    pub fn new(x_min: f64, x_max: f64, y_min: f64, y_max: f64, height: f64) -> Self {
        Self { x_min, x_max, y_min, y_max, height }
    }

    /// The 4.5 m x 4.5 m measurement footprint with the target at 1 m height.
    pub fn standard() -> Self {
        Self::new(0.0, 4.5, 0.0, 4.5, 1.0)
    }

    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn depth(&self) -> f64 {
        self.y_max - self.y_min
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.x_min, self.x_max, self.y_min, self.y_max, self.height].iter().all(|v| v.is_finite());
        if !finite || !(self.width() > 0.0) || !(self.depth() > 0.0) {
            return Err(Error::invalid(format!("area has zero or invalid extent: {self:?}")));
        }
        Ok(())
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.x_min && x <= self.x_max && y >= self.y_min && y <= self.y_max
    }

    pub fn lift(&self, xy: [f64; 2]) -> Vec3 {
        [xy[0], xy[1], self.height]
    }
}

/// Static sensing setup: receiver arrays, transmitters and the OFDM numerology.
///
/// Serialized field names follow the dataset metadata schema (`B`, `M_r`, ...).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioGeometry {
    #[serde(rename = "B")]
    pub num_arrays: usize,
    #[serde(rename = "M_r")]
    pub rows: usize,
    #[serde(rename = "M_c")]
    pub cols: usize,
    #[serde(rename = "N_sub")]
    pub num_subcarriers: usize,
    #[serde(rename = "N_TX")]
    pub num_tx: usize,
    /// Carrier frequency in Hz.
    #[serde(rename = "f_c")]
    pub carrier_freq: f64,
    /// Occupied bandwidth in Hz.
    #[serde(rename = "W")]
    pub bandwidth: f64,
    pub array_centers: Vec<Vec3>,
    pub array_boresights: Vec<Vec3>,
    pub array_row_axes: Vec<Vec3>,
    pub array_col_axes: Vec<Vec3>,
    /// Element pitch in metres, shared by rows and columns.
    pub element_spacing: f64,
    pub tx_positions: Vec<Vec3>,
}

impl ScenarioGeometry {
    /// Four 2x4 arrays facing inward from the edges of the standard area,
    /// four ceiling transmitters over the area, Wi-Fi channel 13 numerology.
    pub fn standard() -> Self {
        let area = Area::standard();
        let cx = 0.5 * (area.x_min + area.x_max);
        let cy = 0.5 * (area.y_min + area.y_max);
        let offset = 1.0;
        let h = area.height;
        let centers = vec![
            [cx, area.y_min - offset, h],
            [area.x_max + offset, cy, h],
            [cx, area.y_max + offset, h],
            [area.x_min - offset, cy, h],
        ];
        let boresights = vec![[0.0, 1.0, 0.0], [-1.0, 0.0, 0.0], [0.0, -1.0, 0.0], [1.0, 0.0, 0.0]];
        let carrier_freq = 2.472e9;
        // ceiling mounts above the area, 2 m above the target plane
        let tx_positions = vec![[1.5, 1.5, 3.0], [3.0, 1.5, 3.0], [3.0, 3.0, 3.0], [1.5, 3.0, 3.0]];
        Self::with_upright_arrays(4, 2, 4, 53, carrier_freq, 16.56e6, centers, boresights, tx_positions)
    }

    /// Builds a geometry whose arrays stand vertically: the row axis points up and the
    /// column axis is `boresight x up`.
    #[allow(clippy::too_many_arguments)]
    pub fn with_upright_arrays(
        num_arrays: usize,
        rows: usize,
        cols: usize,
        num_subcarriers: usize,
        carrier_freq: f64,
        bandwidth: f64,
        centers: Vec<Vec3>,
        boresights: Vec<Vec3>,
        tx_positions: Vec<Vec3>,
    ) -> Self {
        let up = [0.0, 0.0, 1.0];
        let boresights: Vec<Vec3> = boresights.into_iter().map(|b| scale(b, 1.0 / norm(b))).collect();
        let col_axes = boresights
            .iter()
            .map(|&b| {
                let c = cross(b, up);
                scale(c, 1.0 / norm(c))
            })
            .collect();
        let row_axes = boresights.iter().map(|_| up).collect();
        let wavelength = SPEED_OF_LIGHT / carrier_freq;
        Self {
            num_arrays,
            rows,
            cols,
            num_subcarriers,
            num_tx: tx_positions.len(),
            carrier_freq,
            bandwidth,
            array_centers: centers,
            array_boresights: boresights,
            array_row_axes: row_axes,
            array_col_axes: col_axes,
            element_spacing: 0.5 * wavelength,
            tx_positions,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_arrays < 1 || self.rows < 1 || self.cols < 2 || self.num_subcarriers < 1 || self.num_tx < 1 {
            return Err(Error::invalid(format!(
                "geometry counts out of range: B={}, M_r={}, M_c={}, N_sub={}, N_TX={}",
                self.num_arrays, self.rows, self.cols, self.num_subcarriers, self.num_tx
            )));
        }
        let b = self.num_arrays;
        for (name, len) in [
            ("array_centers", self.array_centers.len()),
            ("array_boresights", self.array_boresights.len()),
            ("array_row_axes", self.array_row_axes.len()),
            ("array_col_axes", self.array_col_axes.len()),
        ] {
            if len != b {
                return Err(Error::invalid(format!("{name} has {len} entries, expected {b}")));
            }
        }
        if self.tx_positions.len() != self.num_tx {
            return Err(Error::invalid(format!(
                "tx_positions has {} entries, expected {}",
                self.tx_positions.len(),
                self.num_tx
            )));
        }
        if !(self.carrier_freq > 0.0) || !(self.bandwidth > 0.0) || !(self.element_spacing > 0.0) {
            return Err(Error::invalid("carrier frequency, bandwidth and element spacing must be positive"));
        }
        const TOL: f64 = 1e-9;
        for i in 0..b {
            let axes = [self.array_boresights[i], self.array_row_axes[i], self.array_col_axes[i]];
            for (p, u) in axes.iter().enumerate() {
                if (norm(*u) - 1.0).abs() > TOL {
                    return Err(Error::invalid(format!("array {i}: axis {p} is not unit length")));
                }
                for v in axes.iter().skip(p + 1) {
                    if dot(*u, *v).abs() > TOL {
                        return Err(Error::invalid(format!("array {i}: axes are not orthogonal")));
                    }
                }
            }
        }
        Ok(())
    }

    /// Length `Q = B * M_r * M_c * N_sub` of a vectorized CSI array.
    pub fn csi_len(&self) -> usize {
        self.num_arrays * self.rows * self.cols * self.num_subcarriers
    }

    pub fn antennas_per_array(&self) -> usize {
        self.rows * self.cols
    }

    /// Row-major offset of `(b, m_r, m_c, n)` in a vectorized CSI array.
    #[inline]
    pub fn csi_index(&self, b: usize, m_r: usize, m_c: usize, n: usize) -> usize {
        ((b * self.rows + m_r) * self.cols + m_c) * self.num_subcarriers + n
    }

    pub fn wavelength(&self) -> f64 {
        SPEED_OF_LIGHT / self.carrier_freq
    }

    /// Element spacing expressed in carrier wavelengths.
    pub fn spacing_wavelengths(&self) -> f64 {
        self.element_spacing / self.wavelength()
    }

    pub fn subcarrier_spacing(&self) -> f64 {
        if self.num_subcarriers > 1 {
            self.bandwidth / (self.num_subcarriers - 1) as f64
        } else {
            0.0
        }
    }

    /// Baseband offset of subcarrier `n` on a grid symmetric about the carrier.
    pub fn subcarrier_offset(&self, n: usize) -> f64 {
        (n as f64 - 0.5 * (self.num_subcarriers as f64 - 1.0)) * self.subcarrier_spacing()
    }

    pub fn subcarrier_freq(&self, n: usize) -> f64 {
        self.carrier_freq + self.subcarrier_offset(n)
    }

    pub fn element_position(&self, b: usize, m_r: usize, m_c: usize) -> Vec3 {
        let r = (m_r as f64 - 0.5 * (self.rows as f64 - 1.0)) * self.element_spacing;
        let c = (m_c as f64 - 0.5 * (self.cols as f64 - 1.0)) * self.element_spacing;
        add(self.array_centers[b], add(scale(self.array_row_axes[b], r), scale(self.array_col_axes[b], c)))
    }

    /// Azimuth of `point` seen from array `b`, measured from the boresight towards the
    /// column axis. `None` if the point projects onto the array center.
    pub fn azimuth(&self, b: usize, point: Vec3) -> Option<f64> {
        let d = sub(point, self.array_centers[b]);
        let across = dot(d, self.array_col_axes[b]);
        let along = dot(d, self.array_boresights[b]);
        if across.hypot(along) < 1e-9 {
            None
        } else {
            Some(across.atan2(along))
        }
    }

    /// Azimuth and its gradient with respect to the horizontal target coordinates.
    pub(crate) fn azimuth_with_gradient(&self, b: usize, point: Vec3) -> Option<(f64, [f64; 2])> {
        let d = sub(point, self.array_centers[b]);
        let col = self.array_col_axes[b];
        let bore = self.array_boresights[b];
        let p = dot(d, col);
        let q = dot(d, bore);
        let r2 = p * p + q * q;
        if r2 < 1e-18 {
            return None;
        }
        let grad = [(q * col[0] - p * bore[0]) / r2, (q * col[1] - p * bore[1]) / r2];
        Some((p.atan2(q), grad))
    }
}
