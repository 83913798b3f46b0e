//! Wrapped-around two-tier hexagonal network.
//!
//! Cells are flat-topped regular hexagons (a vertex on the +x axis) with
//! circumradius `R = ISD / sqrt(3)`. Cell 0 sits at the origin and, for the
//! 7-cell layout, cells 1..=6 sit at distance ISD at azimuths 30° + 60°·i.
//! Each cell holds one macro-BS at its center and three pico-BSs at `2R/3`
//! toward the edge midpoints at 30°, 150° and 270°. BS ids are assigned per
//! cell: the macro gets `4c`, the picos `4c+1..4c+3`.

use std::f64::consts::PI;
use std::fs::File;
use std::io::Write;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::channel::path_loss_db;
use crate::error::{Error, Result};
use crate::units;

pub type Position = [f64; 2];

const PICO_AZIMUTHS_DEG: [f64; 3] = [30.0, 150.0, 270.0];
const PICO_RADIUS_FRACTION: f64 = 2.0 / 3.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Tier {
    Macro,
    Pico,
}

impl std::fmt::Display for Tier {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Tier::Macro => write!(f, "macro"),
            Tier::Pico => write!(f, "pico"),
        }
    }
}

/// Network parameters. Every physical quantity carries its unit in the key.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkConfig {
    pub num_cells: usize,
    pub inter_site_distance_km: f64,
    pub users_per_cell: usize,
    pub macro_antennas: usize,
    pub pico_antennas: usize,
    pub user_antennas: usize,
    pub macro_power_dbm: f64,
    pub pico_power_dbm: f64,
    pub antenna_gain_dbi: f64,
    pub noise_psd_dbm_hz: f64,
    pub bandwidth_hz: f64,
    pub macro_backhaul_mbps: f64,
    pub pico_backhaul_mbps: f64,
    pub shadowing_std_db: f64,
    /// Number of strongest BSs kept as each user's candidate cluster (L_c).
    pub candidate_limit: usize,
    /// Minimum BS-user distance used in the path-loss formulas.
    pub distance_floor_km: f64,
    pub rng_seed: u64,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self::full_scale()
    }
}

impl NetworkConfig {
    /// Table I scale: 7 cells, 30 users per cell, L_c = 8.
    pub fn full_scale() -> Self {
        Self {
            num_cells: 7,
            inter_site_distance_km: 0.8,
            users_per_cell: 30,
            macro_antennas: 4,
            pico_antennas: 2,
            user_antennas: 2,
            macro_power_dbm: 43.0,
            pico_power_dbm: 30.0,
            antenna_gain_dbi: 15.0,
            noise_psd_dbm_hz: -169.0,
            bandwidth_hz: 1e7,
            macro_backhaul_mbps: 690.0,
            pico_backhaul_mbps: 107.0,
            shadowing_std_db: 8.0,
            candidate_limit: 8,
            distance_floor_km: 0.01,
            rng_seed: 0,
        }
    }

    /// Desk-scale acceptance scenario: 7 cells, 8 users per cell, L_c = 5.
    pub fn desk_scale() -> Self {
        Self {
            users_per_cell: 8,
            candidate_limit: 5,
            ..Self::full_scale()
        }
    }

    /// Tiny smoke-test scenario.
    pub fn toy() -> Self {
        Self {
            users_per_cell: 2,
            candidate_limit: 3,
            ..Self::full_scale()
        }
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "full" => Some(Self::full_scale()),
            "desk" => Some(Self::desk_scale()),
            "toy" => Some(Self::toy()),
            _ => None,
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let config: Self = toml::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("network config serializes")
    }

    pub fn num_bs(&self) -> usize {
        self.num_cells * 4
    }

    pub fn validate(&self) -> Result<()> {
        if !matches!(self.num_cells, 1 | 7) {
            return Err(Error::config(
                "num_cells",
                format!("{} not supported (wraparound is defined for 1 or 7 cells)", self.num_cells),
            ));
        }
        let counts = [
            ("macro_antennas", self.macro_antennas),
            ("pico_antennas", self.pico_antennas),
            ("user_antennas", self.user_antennas),
            ("candidate_limit", self.candidate_limit),
        ];
        for (field, value) in counts {
            if value == 0 {
                return Err(Error::config(field, "must be >= 1"));
            }
        }
        let positive = [
            ("inter_site_distance_km", self.inter_site_distance_km),
            ("bandwidth_hz", self.bandwidth_hz),
            ("distance_floor_km", self.distance_floor_km),
        ];
        for (field, value) in positive {
            if !(value.is_finite() && value > 0.0) {
                return Err(Error::config(field, format!("must be finite and > 0, got {value}")));
            }
        }
        let finite = [
            ("macro_power_dbm", self.macro_power_dbm),
            ("pico_power_dbm", self.pico_power_dbm),
            ("antenna_gain_dbi", self.antenna_gain_dbi),
            ("noise_psd_dbm_hz", self.noise_psd_dbm_hz),
        ];
        for (field, value) in finite {
            if !value.is_finite() {
                return Err(Error::config(field, "must be finite"));
            }
        }
        for (field, value) in [
            ("macro_backhaul_mbps", self.macro_backhaul_mbps),
            ("pico_backhaul_mbps", self.pico_backhaul_mbps),
        ] {
            if value.is_nan() || value < 0.0 {
                return Err(Error::config(field, format!("must be >= 0, got {value}")));
            }
        }
        if !(self.shadowing_std_db.is_finite() && self.shadowing_std_db >= 0.0) {
            return Err(Error::config("shadowing_std_db", "must be finite and >= 0"));
        }
        if self.candidate_limit > self.num_bs() {
            return Err(Error::config(
                "candidate_limit",
                format!("{} exceeds the number of BSs ({})", self.candidate_limit, self.num_bs()),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaseStation {
    pub id: usize,
    pub tier: Tier,
    pub cell: usize,
    pub position: Position,
    pub antennas: usize,
    pub power_dbm: f64,
    /// P_l in mW/Hz.
    pub power_budget: f64,
    /// C_l in bps/Hz; `f64::INFINITY` disables the constraint.
    pub backhaul_budget: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserTerminal {
    pub id: usize,
    pub cell: usize,
    pub position: Position,
    pub antennas: usize,
}

/// Antenna index ranges of each BS inside the network-wide beamformer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockMap {
    offsets: Vec<usize>,
    sizes: Vec<usize>,
}

impl BlockMap {
    pub fn new(sizes: Vec<usize>) -> Self {
        let mut offsets = Vec::with_capacity(sizes.len());
        let mut acc = 0;
        for &s in &sizes {
            offsets.push(acc);
            acc += s;
        }
        Self { offsets, sizes }
    }

    pub fn num_blocks(&self) -> usize {
        self.sizes.len()
    }

    pub fn total(&self) -> usize {
        self.offsets.last().map_or(0, |o| o + self.sizes[self.sizes.len() - 1])
    }

    pub fn offset(&self, l: usize) -> usize {
        self.offsets[l]
    }

    pub fn size(&self, l: usize) -> usize {
        self.sizes[l]
    }

    pub fn range(&self, l: usize) -> std::ops::Range<usize> {
        self.offsets[l]..self.offsets[l] + self.sizes[l]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkLayout {
    pub base_stations: Vec<BaseStation>,
    pub users: Vec<UserTerminal>,
    /// Identity followed by the six cluster mirror shifts.
    pub wraparound_offsets: Vec<Position>,
    pub cell_centers: Vec<Position>,
    pub circumradius_km: f64,
    pub distance_floor_km: f64,
    pub antenna_gain_dbi: f64,
    /// sigma^2 in mW/Hz.
    pub noise_power: f64,
    pub bandwidth_hz: f64,
    pub blocks: BlockMap,
}

fn polar(radius: f64, degrees: f64) -> Position {
    let a = degrees * PI / 180.0;
    [radius * a.cos(), radius * a.sin()]
}

fn add(a: Position, b: Position) -> Position {
    [a[0] + b[0], a[1] + b[1]]
}

/// Point-in-hexagon test for a flat-topped hexagon centered at the origin.
pub fn inside_hexagon(p: Position, circumradius: f64) -> bool {
    let (x, y) = (p[0].abs(), p[1].abs());
    let s3 = 3f64.sqrt();
    y <= s3 / 2.0 * circumradius && s3 * x + y <= s3 * circumradius
}

fn cell_centers(num_cells: usize, isd: f64) -> Vec<Position> {
    let mut centers = vec![[0.0, 0.0]];
    if num_cells == 7 {
        centers.extend((0..6).map(|i| polar(isd, 30.0 + 60.0 * i as f64)));
    }
    centers
}

fn wraparound_offsets(num_cells: usize, isd: f64) -> Vec<Position> {
    let mut offsets = vec![[0.0, 0.0]];
    match num_cells {
        1 => offsets.extend((0..6).map(|i| polar(isd, 30.0 + 60.0 * i as f64))),
        _ => {
            // cluster shift 2·n0 + n1 has length sqrt(7)·ISD
            let base = add(polar(2.0 * isd, 30.0), polar(isd, 90.0));
            let angle0 = base[1].atan2(base[0]) * 180.0 / PI;
            let radius = (base[0] * base[0] + base[1] * base[1]).sqrt();
            offsets.extend((0..6).map(|i| polar(radius, angle0 + 60.0 * i as f64)));
        }
    }
    offsets
}

fn uniform_in_hexagon<R: Rng + ?Sized>(rng: &mut R, circumradius: f64) -> Position {
    let half_height = 3f64.sqrt() / 2.0 * circumradius;
    loop {
        let p = [
            rng.random_range(-circumradius..circumradius),
            rng.random_range(-half_height..half_height),
        ];
        if inside_hexagon(p, circumradius) {
            return p;
        }
    }
}

pub fn build_layout<R: Rng + ?Sized>(config: &NetworkConfig, rng: &mut R) -> Result<NetworkLayout> {
    config.validate()?;
    let isd = config.inter_site_distance_km;
    let circumradius = isd / 3f64.sqrt();
    let centers = cell_centers(config.num_cells, isd);
    let bw = config.bandwidth_hz;

    let mut base_stations = Vec::with_capacity(config.num_bs());
    for (cell, &center) in centers.iter().enumerate() {
        base_stations.push(BaseStation {
            id: base_stations.len(),
            tier: Tier::Macro,
            cell,
            position: center,
            antennas: config.macro_antennas,
            power_dbm: config.macro_power_dbm,
            power_budget: units::dbm_to_mw_per_hz(config.macro_power_dbm, bw),
            backhaul_budget: units::mbps_to_bps_hz(config.macro_backhaul_mbps, bw),
        });
        for az in PICO_AZIMUTHS_DEG {
            base_stations.push(BaseStation {
                id: base_stations.len(),
                tier: Tier::Pico,
                cell,
                position: add(center, polar(PICO_RADIUS_FRACTION * circumradius, az)),
                antennas: config.pico_antennas,
                power_dbm: config.pico_power_dbm,
                power_budget: units::dbm_to_mw_per_hz(config.pico_power_dbm, bw),
                backhaul_budget: units::mbps_to_bps_hz(config.pico_backhaul_mbps, bw),
            });
        }
    }

    let mut users = Vec::with_capacity(config.num_cells * config.users_per_cell);
    for (cell, &center) in centers.iter().enumerate() {
        for _ in 0..config.users_per_cell {
            users.push(UserTerminal {
                id: users.len(),
                cell,
                position: add(center, uniform_in_hexagon(rng, circumradius)),
                antennas: config.user_antennas,
            });
        }
    }

    let blocks = BlockMap::new(base_stations.iter().map(|b| b.antennas).collect());
    Ok(NetworkLayout {
        base_stations,
        users,
        wraparound_offsets: wraparound_offsets(config.num_cells, isd),
        cell_centers: centers,
        circumradius_km: circumradius,
        distance_floor_km: config.distance_floor_km,
        antenna_gain_dbi: config.antenna_gain_dbi,
        noise_power: units::dbm_hz_to_mw_hz(config.noise_psd_dbm_hz),
        bandwidth_hz: bw,
        blocks,
    })
}

impl NetworkLayout {
    pub fn num_bs(&self) -> usize {
        self.base_stations.len()
    }

    pub fn num_users(&self) -> usize {
        self.users.len()
    }

    /// Minimum Euclidean distance between `a` and the wraparound images of `b`.
    pub fn wrap_distance(&self, a: Position, b: Position) -> f64 {
        self.wraparound_offsets
            .iter()
            .map(|o| {
                let dx = a[0] - (b[0] + o[0]);
                let dy = a[1] - (b[1] + o[1]);
                (dx * dx + dy * dy).sqrt()
            })
            .fold(f64::INFINITY, f64::min)
    }

    pub fn power_budgets(&self) -> Vec<f64> {
        self.base_stations.iter().map(|b| b.power_budget).collect()
    }

    pub fn backhaul_budgets(&self) -> Vec<f64> {
        self.base_stations.iter().map(|b| b.backhaul_budget).collect()
    }

    /// Copy of the layout with tier-wide backhaul budgets given in Mbps.
    pub fn with_backhaul_mbps(&self, macro_mbps: f64, pico_mbps: f64) -> Self {
        let mut out = self.clone();
        for bs in &mut out.base_stations {
            let mbps = match bs.tier {
                Tier::Macro => macro_mbps,
                Tier::Pico => pico_mbps,
            };
            bs.backhaul_budget = units::mbps_to_bps_hz(mbps, self.bandwidth_hz);
        }
        out
    }

    pub fn bs_of_tier(&self, tier: Tier) -> impl Iterator<Item = &BaseStation> {
        self.base_stations.iter().filter(move |b| b.tier == tier)
    }

    /// Writes `bs_positions.csv` and `user_positions.csv` into `dir`.
    pub fn export_positions(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        let mut bs = File::create(dir.join("bs_positions.csv"))?;
        writeln!(bs, "bs_id,tier,x_km,y_km")?;
        for b in &self.base_stations {
            writeln!(bs, "{},{},{},{}", b.id, b.tier, b.position[0], b.position[1])?;
        }
        let mut us = File::create(dir.join("user_positions.csv"))?;
        writeln!(us, "user_id,x_km,y_km")?;
        for u in &self.users {
            writeln!(us, "{},{},{}", u.id, u.position[0], u.position[1])?;
        }
        Ok(())
    }
}

/// Long-term received signal strength s_{l,k} in dBm: max power plus antenna
/// gain minus path loss over the wraparound distance minus shadowing loss.
pub fn signal_strength_dbm(
    bs: &BaseStation,
    user: &UserTerminal,
    shadow_db: f64,
    layout: &NetworkLayout,
) -> f64 {
    let d = layout
        .wrap_distance(bs.position, user.position)
        .max(layout.distance_floor_km);
    bs.power_dbm + layout.antenna_gain_dbi - path_loss_db(bs.tier, d) - shadow_db
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn layout(config: &NetworkConfig, seed: u64) -> NetworkLayout {
        build_layout(config, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
    }

    #[test]
    fn default_layout_counts() {
        let l = layout(&NetworkConfig::default(), 1);
        assert_eq!(l.num_bs(), 28);
        assert_eq!(l.bs_of_tier(Tier::Macro).count(), 7);
        assert_eq!(l.bs_of_tier(Tier::Pico).count(), 21);
        assert_eq!(l.num_users(), 210);
        assert_eq!(l.wraparound_offsets.len(), 7);
        assert_eq!(l.blocks.total(), 7 * 4 + 21 * 2);
        for c in 0..7 {
            let in_cell: Vec<_> = l.base_stations.iter().filter(|b| b.cell == c).collect();
            assert_eq!(in_cell.len(), 4);
            assert_eq!(in_cell.iter().filter(|b| b.tier == Tier::Macro).count(), 1);
        }
    }

    #[test]
    fn degenerate_single_cell() {
        let config = NetworkConfig {
            num_cells: 1,
            users_per_cell: 0,
            candidate_limit: 2,
            ..NetworkConfig::default()
        };
        let l = layout(&config, 0);
        assert_eq!(l.num_bs(), 4);
        assert_eq!(l.num_users(), 0);
    }

    #[test]
    fn same_seed_same_layout() {
        let c = NetworkConfig::desk_scale();
        assert_eq!(layout(&c, 9), layout(&c, 9));
        let a = layout(&c, 9);
        let b = layout(&c, 10);
        assert_ne!(a.users[0].position, b.users[0].position);
    }

    #[test]
    fn users_inside_exactly_one_cell() {
        let l = layout(&NetworkConfig::default(), 3);
        for u in &l.users {
            let c = l.cell_centers[u.cell];
            assert!(inside_hexagon([u.position[0] - c[0], u.position[1] - c[1]], l.circumradius_km));
            let hits = l
                .cell_centers
                .iter()
                .filter(|c| {
                    inside_hexagon([u.position[0] - c[0], u.position[1] - c[1]], l.circumradius_km * (1.0 - 1e-9))
                })
                .count();
            assert!(hits <= 1);
        }
    }

    #[test]
    fn invalid_config_rejected_with_field() {
        let bad = NetworkConfig {
            bandwidth_hz: 0.0,
            ..NetworkConfig::default()
        };
        let err = bad.validate().unwrap_err().to_string();
        assert!(err.contains("bandwidth_hz"), "{err}");

        let bad = NetworkConfig {
            candidate_limit: 29,
            ..NetworkConfig::default()
        };
        assert!(bad.validate().unwrap_err().to_string().contains("candidate_limit"));

        let bad = NetworkConfig {
            num_cells: 3,
            ..NetworkConfig::default()
        };
        assert!(bad.validate().unwrap_err().to_string().contains("num_cells"));
    }

    #[test]
    fn toml_roundtrip_and_unknown_keys() {
        let c = NetworkConfig::desk_scale();
        let back = NetworkConfig::from_toml_str(&c.to_toml_string()).unwrap();
        assert_eq!(c, back);
        let partial = NetworkConfig::from_toml_str("users_per_cell = 3\nrng_seed = 5\n").unwrap();
        assert_eq!(partial.users_per_cell, 3);
        assert_eq!(partial.inter_site_distance_km, 0.8);
        assert!(NetworkConfig::from_toml_str("bogus_key = 1").is_err());
    }

    #[test]
    fn wrap_distance_identity_and_symmetry() {
        let l = layout(&NetworkConfig::default(), 5);
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for _ in 0..100 {
            let a = l.users[rng.random_range(0..l.num_users())].position;
            let b = l.users[rng.random_range(0..l.num_users())].position;
            assert_eq!(l.wrap_distance(a, a), 0.0);
            let (ab, ba) = (l.wrap_distance(a, b), l.wrap_distance(b, a));
            assert!((ab - ba).abs() < 1e-12);
            let euclid = ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt();
            assert!(ab <= euclid + 1e-12);
        }
    }

    #[test]
    fn wrap_distance_opposite_edges_shorter() {
        let l = layout(&NetworkConfig::default(), 5);
        // points deep in two opposite outer cells
        let a = l.cell_centers[1];
        let b = l.cell_centers[4];
        let euclid = ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt();
        let brute = l
            .wraparound_offsets
            .iter()
            .map(|o| ((a[0] - b[0] - o[0]).powi(2) + (a[1] - b[1] - o[1]).powi(2)).sqrt())
            .fold(f64::INFINITY, f64::min);
        let d = l.wrap_distance(a, b);
        assert!((d - brute).abs() < 1e-12);
        assert!(d < euclid - 1e-6, "wrapped {d} vs euclid {euclid}");
        // in a wrapped 7-cell cluster every pair of cell centers are neighbours
        assert!((d - 0.8).abs() < 1e-9);
    }

    #[test]
    fn wrap_offsets_tile_cluster() {
        let l = layout(&NetworkConfig::default(), 0);
        for o in &l.wraparound_offsets[1..] {
            let r = (o[0] * o[0] + o[1] * o[1]).sqrt();
            assert!((r - 7f64.sqrt() * 0.8).abs() < 1e-12);
        }
    }

    #[test]
    fn signal_strength_reference_values() {
        let mut l = layout(&NetworkConfig::default(), 0);
        l.users.truncate(1);
        l.users[0].position = [1.0, 0.0];
        let macro_bs = l.base_stations[0].clone();
        let s = signal_strength_dbm(&macro_bs, &l.users[0], 0.0, &l);
        assert!((s - (-70.1)).abs() < 1e-9, "{s}");

        let mut pico = l.base_stations[1].clone();
        pico.position = [0.0, 0.0];
        let s = signal_strength_dbm(&pico, &l.users[0], 0.0, &l);
        assert!((s - (-95.7)).abs() < 1e-9, "{s}");

        let shadowed = signal_strength_dbm(&macro_bs, &l.users[0], 8.0, &l);
        assert!(((-70.1 - shadowed) - 8.0).abs() < 1e-9);
    }

    #[test]
    fn zero_distance_clamped_to_floor() {
        let l = layout(&NetworkConfig::default(), 0);
        let mut u = l.users[0].clone();
        u.position = l.base_stations[0].position;
        let s = signal_strength_dbm(&l.base_stations[0], &u, 0.0, &l);
        let expected = 43.0 + 15.0 - (128.1 + 37.6 * 0.01f64.log10());
        assert!((s - expected).abs() < 1e-9);
    }
}
