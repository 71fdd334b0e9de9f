//! Device geometry, path loss, channel coefficients, and SNR matrices.

use ndarray::Array2;
use num_complex::Complex64;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

/// Propagation constant used throughout the link budget.
pub const SPEED_OF_LIGHT: f64 = 2.998e8;

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

/// Base station and device layout.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Geometry {
    pub bs_position: [f64; 3],
    pub device_positions: Vec<[f64; 3]>,
    pub bs_antennas: usize,
}

impl Geometry {
    pub fn device_count(&self) -> usize {
        self.device_positions.len()
    }

    pub fn distance_to_bs(&self, k: usize) -> f64 {
        dist(&self.device_positions[k], &self.bs_position)
    }

    pub fn distance_between(&self, i: usize, j: usize) -> f64 {
        dist(&self.device_positions[i], &self.device_positions[j])
    }

    pub fn validate(&self) -> Result<()> {
        if self.bs_antennas == 0 {
            return Err(Error::InvalidParameter("bs_antennas must be >= 1".into()));
        }
        let finite = |p: &[f64; 3]| p.iter().all(|v| v.is_finite());
        if !finite(&self.bs_position) || !self.device_positions.iter().all(finite) {
            return Err(Error::InvalidParameter("non-finite position".into()));
        }
        Ok(())
    }
}

fn dist(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Small-scale fading model applied on top of the path loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Fading {
    /// Purely deterministic channels; magnitudes follow path loss exactly.
    #[default]
    None,
    /// Complex Gaussian per-antenna coefficients with E[|h|^2] = PL.
    Rayleigh,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChannelParams {
    pub bs_gain_dbi: f64,
    pub device_gain_dbi: f64,
    pub carrier_hz: f64,
    pub pathloss_exp: f64,
    pub noise_power_w: f64,
    pub fading: Fading,
}

impl ChannelParams {
    pub fn validate(&self) -> Result<()> {
        if self.carrier_hz <= 0.0 {
            return Err(Error::InvalidParameter("carrier_hz must be positive".into()));
        }
        if self.noise_power_w <= 0.0 {
            return Err(Error::InvalidParameter("noise_power_w must be positive".into()));
        }
        Ok(())
    }
}

fn path_loss_with_gains(
    distance_m: f64,
    gain_tx_dbi: f64,
    gain_rx_dbi: f64,
    carrier_hz: f64,
    exponent: f64,
) -> Result<f64> {
    if !(distance_m > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "path loss requires positive distance, got {distance_m}"
        )));
    }
    let wavelength_term = SPEED_OF_LIGHT / (4.0 * std::f64::consts::PI * carrier_hz * distance_m);
    Ok(db_to_linear(gain_tx_dbi) * db_to_linear(gain_rx_dbi) * wavelength_term.powf(exponent))
}

/// Device-to-BS linear power path loss
/// `PL = G_BS * G_D * (c / (4 pi f_c d))^P`, gains converted from dBi.
pub fn path_loss(distance_m: f64, params: &ChannelParams) -> Result<f64> {
    path_loss_with_gains(
        distance_m,
        params.bs_gain_dbi,
        params.device_gain_dbi,
        params.carrier_hz,
        params.pathloss_exp,
    )
}

/// Device-to-device path loss; both ends use the device antenna gain.
pub fn path_loss_d2d(distance_m: f64, params: &ChannelParams) -> Result<f64> {
    path_loss_with_gains(
        distance_m,
        params.device_gain_dbi,
        params.device_gain_dbi,
        params.carrier_hz,
        params.pathloss_exp,
    )
}

/// Complex channel coefficients for one layout draw.
#[derive(Debug, Clone)]
pub struct ChannelState {
    /// Row k: the N_a-antenna vector from device k to the BS.
    pub to_bs: Array2<Complex64>,
    /// Reciprocal device-to-device coefficients; diagonal unused (zero).
    pub device_to_device: Array2<Complex64>,
}

impl ChannelState {
    pub fn device_count(&self) -> usize {
        self.to_bs.nrows()
    }

    /// Squared norm of device k's BS channel vector.
    pub fn bs_gain(&self, k: usize) -> f64 {
        self.to_bs.row(k).iter().map(|h| h.norm_sqr()).sum()
    }

    pub fn bs_norm(&self, k: usize) -> f64 {
        self.bs_gain(k).sqrt()
    }

    pub fn d2d_gain(&self, i: usize, j: usize) -> f64 {
        self.device_to_device[(i, j)].norm_sqr()
    }

    /// One CSV row per device: index, BS distance gain, plus the pairwise
    /// gain matrix appended below. Intended for inspection, not ingestion.
    pub fn gains_csv(&self) -> String {
        let k = self.device_count();
        let mut out = String::from("device,bs_gain\n");
        for i in 0..k {
            out.push_str(&format!("{},{}\n", i, self.bs_gain(i)));
        }
        out.push_str("d2d_gains\n");
        for i in 0..k {
            let row: Vec<String> = (0..k).map(|j| format!("{}", self.d2d_gain(i, j))).collect();
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }
}

/// Builds deterministic or Rayleigh-faded channels for a layout.
///
/// With `Fading::None`, `|h|^2` equals the path loss exactly; with Rayleigh
/// fading, per-antenna coefficients are complex Gaussian scaled such that
/// `E[||h_k||^2] = N_a * PL(d_k)`. Fully determined by `seed`.
pub fn build_channels(
    geometry: &Geometry,
    params: &ChannelParams,
    seed: u64,
) -> Result<ChannelState> {
    geometry.validate()?;
    params.validate()?;
    let k = geometry.device_count();
    let na = geometry.bs_antennas;
    let std_normal = Normal::new(0.0, 1.0).expect("unit normal");

    let mut to_bs = Array2::zeros((k, na));
    for dev in 0..k {
        let d = geometry.distance_to_bs(dev);
        if d <= 0.0 {
            return Err(Error::CoincidentPositions(dev, dev));
        }
        let pl = path_loss(d, params)?;
        match params.fading {
            Fading::None => {
                let h = Complex64::new(pl.sqrt(), 0.0);
                for a in 0..na {
                    to_bs[(dev, a)] = h;
                }
            }
            Fading::Rayleigh => {
                let mut rng = rng::stream(seed, &[rng::stage::CHANNEL, 0, dev as u64]);
                let scale = (pl / 2.0).sqrt();
                for a in 0..na {
                    let re = std_normal.sample(&mut rng) * scale;
                    let im = std_normal.sample(&mut rng) * scale;
                    to_bs[(dev, a)] = Complex64::new(re, im);
                }
            }
        }
    }

    let mut d2d = Array2::zeros((k, k));
    for i in 0..k {
        for j in (i + 1)..k {
            let d = geometry.distance_between(i, j);
            if d <= 0.0 {
                return Err(Error::CoincidentPositions(i, j));
            }
            let pl = path_loss_d2d(d, params)?;
            let h = match params.fading {
                Fading::None => Complex64::new(pl.sqrt(), 0.0),
                Fading::Rayleigh => {
                    let mut rng =
                        rng::stream(seed, &[rng::stage::CHANNEL, 1, i as u64, j as u64]);
                    let scale = (pl / 2.0).sqrt();
                    Complex64::new(
                        std_normal.sample(&mut rng) * scale,
                        std_normal.sample(&mut rng) * scale,
                    )
                }
            };
            // reciprocity: h_ij = h_ji
            d2d[(i, j)] = h;
            d2d[(j, i)] = h;
        }
    }

    Ok(ChannelState {
        to_bs,
        device_to_device: d2d,
    })
}

/// Received SNR for transmit power `power_w` over a link with squared
/// channel magnitude `channel_gain` and noise power `noise_w`.
pub fn snr(power_w: f64, channel_gain: f64, noise_w: f64) -> f64 {
    assert!(noise_w > 0.0, "noise power must be positive");
    power_w * channel_gain / noise_w
}

/// Pairwise SNR matrix: diagonal holds device-to-BS SNR, off-diagonals the
/// symmetrized device-to-device SNR.
#[derive(Debug, Clone)]
pub struct SnrMatrix {
    pub gamma: Array2<f64>,
}

impl SnrMatrix {
    pub fn device_count(&self) -> usize {
        self.gamma.nrows()
    }

    pub fn bs_snr(&self, k: usize) -> f64 {
        self.gamma[(k, k)]
    }

    pub fn to_csv(&self) -> String {
        let k = self.device_count();
        let mut out = String::new();
        for i in 0..k {
            let row: Vec<String> = (0..k).map(|j| format!("{}", self.gamma[(i, j)])).collect();
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }
}

/// Builds the SNR matrix from channel state and per-device transmit powers.
///
/// Off-diagonal entries are symmetrized as `min(gamma_ij, gamma_ji)` so the
/// matrix stays symmetric even with unequal powers (conservative link
/// quality).
pub fn snr_matrix(channels: &ChannelState, powers: &[f64], noise_w: f64) -> Result<SnrMatrix> {
    let k = channels.device_count();
    if powers.len() != k {
        return Err(Error::ShapeMismatch(format!(
            "{} powers for {k} devices",
            powers.len()
        )));
    }
    let mut gamma = Array2::zeros((k, k));
    for i in 0..k {
        gamma[(i, i)] = snr(powers[i], channels.bs_gain(i), noise_w);
        for j in (i + 1)..k {
            let ij = snr(powers[j], channels.d2d_gain(i, j), noise_w);
            let ji = snr(powers[i], channels.d2d_gain(j, i), noise_w);
            let g = ij.min(ji);
            gamma[(i, j)] = g;
            gamma[(j, i)] = g;
        }
    }
    Ok(SnrMatrix { gamma })
}
