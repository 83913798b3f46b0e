//! dB / linear conversions and the per-Hz unit conventions.
//!
//! Powers are carried as linear mW/Hz. Rates are bps/Hz over the whole band,
//! so `mbps = bps_per_hz * bandwidth_hz / 1e6`.

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

pub fn linear_to_db(x: f64) -> f64 {
    10.0 * x.log10()
}

/// Total transmit power in dBm spread evenly over the band, as linear mW/Hz.
pub fn dbm_to_mw_per_hz(dbm: f64, bandwidth_hz: f64) -> f64 {
    db_to_linear(dbm - linear_to_db(bandwidth_hz))
}

/// A dBm/Hz level (noise PSD, pruning threshold) as linear mW/Hz.
pub fn dbm_hz_to_mw_hz(dbm_hz: f64) -> f64 {
    db_to_linear(dbm_hz)
}

pub fn mbps_to_bps_hz(mbps: f64, bandwidth_hz: f64) -> f64 {
    mbps * 1e6 / bandwidth_hz
}

pub fn bps_hz_to_mbps(bps_hz: f64, bandwidth_hz: f64) -> f64 {
    bps_hz * bandwidth_hz / 1e6
}
