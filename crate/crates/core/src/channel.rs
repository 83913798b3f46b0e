//! Large-scale gains and per-slot small-scale fading.
//!
//! Shadowing is drawn once per campaign; Rayleigh fading is redrawn per slot
//! from a ChaCha stream keyed by `(seed, slot_index)` with the (BS, user)
//! pair index as the stream id, so any slot can be regenerated in isolation.

use std::io::Write;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::topology::{NetworkLayout, Tier};
use crate::units;

/// Path loss in dB for a BS of the given tier at `d_km` (already floored).
pub fn path_loss_db(tier: Tier, d_km: f64) -> f64 {
    match tier {
        Tier::Macro => 128.1 + 37.6 * d_km.log10(),
        Tier::Pico => 140.7 + 36.7 * d_km.log10(),
    }
}

/// Per-(BS, user) large-scale gains, indexed `[l][k]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LargeScaleGains {
    /// antenna gain - path loss - shadowing, so received = tx_dBm + gain_db.
    pub gain_db: Vec<Vec<f64>>,
    pub shadow_db: Vec<Vec<f64>>,
}

impl LargeScaleGains {
    /// Long-term signal strengths s_{l,k} in dBm, indexed `[l][k]`.
    pub fn strengths_dbm(&self, layout: &NetworkLayout) -> Vec<Vec<f64>> {
        layout
            .base_stations
            .iter()
            .zip(&self.gain_db)
            .map(|(bs, row)| row.iter().map(|g| bs.power_dbm + g).collect())
            .collect()
    }
}

pub fn sample_large_scale<R: Rng + ?Sized>(
    layout: &NetworkLayout,
    shadowing_std_db: f64,
    rng: &mut R,
) -> LargeScaleGains {
    let normal = Normal::new(0.0, shadowing_std_db).expect("shadowing std is finite and >= 0");
    let mut gain_db = Vec::with_capacity(layout.num_bs());
    let mut shadow_db = Vec::with_capacity(layout.num_bs());
    for bs in &layout.base_stations {
        let mut g_row = Vec::with_capacity(layout.num_users());
        let mut s_row = Vec::with_capacity(layout.num_users());
        for user in &layout.users {
            let shadow = if shadowing_std_db > 0.0 { normal.sample(rng) } else { 0.0 };
            let d = layout
                .wrap_distance(bs.position, user.position)
                .max(layout.distance_floor_km);
            g_row.push(layout.antenna_gain_dbi - path_loss_db(bs.tier, d) - shadow);
            s_row.push(shadow);
        }
        gain_db.push(g_row);
        shadow_db.push(s_row);
    }
    LargeScaleGains { gain_db, shadow_db }
}

/// Channel matrices of one slot: `h[k]` is `N x M_t`, column-blocked by BS id.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelRealization {
    pub h: Vec<DMatrix<Complex64>>,
    pub slot_index: u64,
    /// sigma^2 in mW/Hz.
    pub noise_power: f64,
}

impl ChannelRealization {
    pub fn num_users(&self) -> usize {
        self.h.len()
    }

    /// Writes the matrices as `user_id,row,col,re,im` rows.
    pub fn dump_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "user_id,row,col,re,im")?;
        for (k, hk) in self.h.iter().enumerate() {
            for r in 0..hk.nrows() {
                for c in 0..hk.ncols() {
                    let v = hk[(r, c)];
                    writeln!(out, "{k},{r},{c},{:e},{:e}", v.re, v.im)?;
                }
            }
        }
        Ok(())
    }
}

fn slot_key(seed: u64, slot_index: u64) -> u64 {
    // splitmix64 finalizer over the pair
    let mut z = seed ^ slot_index.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(0xD1B5_4A32_D192_ED03);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn sample_channel(
    layout: &NetworkLayout,
    gains: &LargeScaleGains,
    seed: u64,
    slot_index: u64,
) -> ChannelRealization {
    let key = slot_key(seed, slot_index);
    let num_bs = layout.num_bs();
    let total = layout.blocks.total();
    let h = layout
        .users
        .iter()
        .enumerate()
        .map(|(k, user)| {
            let mut hk = DMatrix::zeros(user.antennas, total);
            for l in 0..num_bs {
                let g_db = gains.gain_db[l][k];
                if g_db == f64::NEG_INFINITY {
                    continue;
                }
                let std = (units::db_to_linear(g_db) / 2.0).sqrt();
                let mut rng = ChaCha8Rng::seed_from_u64(key);
                rng.set_stream((k * num_bs + l) as u64);
                for c in layout.blocks.range(l) {
                    for r in 0..user.antennas {
                        let re: f64 = StandardNormal.sample(&mut rng);
                        let im: f64 = StandardNormal.sample(&mut rng);
                        hk[(r, c)] = Complex64::new(std * re, std * im);
                    }
                }
            }
            hk
        })
        .collect();
    ChannelRealization {
        h,
        slot_index,
        noise_power: layout.noise_power,
    }
}
