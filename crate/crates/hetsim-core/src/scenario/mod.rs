//! Scenario description: world geometry, cell sites, user routes, radio
//! parameters and coordination settings.
//!
//! A scenario is a single JSON document with top-level keys `area`,
//! `buildings`, `cells`, `users`, `radio`, `eicic` and `sim`. Powers are dBm,
//! gains/losses/offsets dB, distances meters, times milliseconds unless the
//! field name carries an `_s` suffix. A loaded scenario is immutable and can
//! be shared read-only across parallel simulation runs.

mod generate;

pub use generate::{generate_default_scenario, generate_scenario, GeneratorProfile};

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::eicic::{AbsfDuty, EicicMethod};
use crate::radio::{PathLossModel, ShannonModel};
use crate::types::{BuildingId, CellId, Point, Rect, UserId};

/// Routes may wander outside the area (the macrocell itself is outside),
/// but waypoints further out than this margin are rejected as likely typos.
pub const ROUTE_BBOX_MARGIN_M: f64 = 500.0;

/// Upper bound on femtocell transmit power, dBm (home eNB power class).
pub const FEMTO_MAX_POWER_DBM: f64 = 23.0;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("scenario parse error: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("scenario validation error: {0}")]
    Validation(String),
    #[error("scenario i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// Simulated area extent, origin at (0, 0).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AreaSpec {
    pub width_m: f64,
    pub height_m: f64,
}

impl AreaSpec {
    pub fn center(&self) -> Point {
        Point::new(self.width_m / 2.0, self.height_m / 2.0)
    }
}

/// A rectangular building with a wall penetration loss.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Building {
    pub id: BuildingId,
    pub footprint: Rect,
    pub wall_loss_db: f64,
}

/// Cell transmitter class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CellKind {
    Macro,
    Pico,
    Femto,
}

/// Access control of a cell: open to everyone or restricted to a closed
/// subscriber group.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Access {
    Open,
    Csg(BTreeSet<UserId>),
}

impl Access {
    /// Whether `user` may camp on a cell with this access mode.
    pub fn permits(&self, user: UserId) -> bool {
        match self {
            Access::Open => true,
            Access::Csg(members) => members.contains(&user),
        }
    }
}

/// A transmitter site.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSite {
    pub id: CellId,
    pub kind: CellKind,
    pub position: Point,
    pub max_tx_power_dbm: f64,
    #[serde(default = "default_access")]
    pub access: Access,
    #[serde(default = "default_bandwidth_mhz")]
    pub bandwidth_mhz: f64,
    #[serde(default)]
    pub host_building: Option<BuildingId>,
}

fn default_access() -> Access {
    Access::Open
}

fn default_bandwidth_mhz() -> f64 {
    20.0
}

/// Traffic model of a user terminal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ServiceType {
    #[default]
    Voip,
    FullBuffer,
}

/// A mobile (or stationary) user with a waypoint route.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserSpec {
    pub id: UserId,
    /// Ordered waypoints, meters. A single waypoint means a stationary user.
    pub route: Vec<Point>,
    pub speed_mps: f64,
    #[serde(default)]
    pub service: ServiceType,
    #[serde(default)]
    pub csg_memberships: BTreeSet<CellId>,
}

/// Propagation models per transmitter kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathLossTable {
    pub macro_: PathLossModel,
    pub pico: PathLossModel,
    pub femto: PathLossModel,
}

impl Default for PathLossTable {
    fn default() -> Self {
        Self {
            macro_: PathLossModel::new(128.1, 37.6),
            pico: PathLossModel::new(140.7, 36.7),
            femto: PathLossModel::new(127.0, 30.0),
        }
    }
}

impl PathLossTable {
    pub fn for_kind(&self, kind: CellKind) -> &PathLossModel {
        match kind {
            CellKind::Macro => &self.macro_,
            CellKind::Pico => &self.pico,
            CellKind::Femto => &self.femto,
        }
    }
}

/// Receiver and measurement parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RadioParams {
    pub noise_figure_db: f64,
    pub thermal_noise_dbm_per_hz: f64,
    pub pathloss: PathLossTable,
    /// Floor on femtocell transmit power under power control, dBm.
    pub min_femto_power_dbm: f64,
    pub cqi_report_period_ms: u64,
    /// SINR below which a user is in outage once sustained, dB.
    pub outage_threshold_db: f64,
    /// How long the SINR must stay below the threshold, ms.
    pub outage_window_ms: u64,
    /// Reported SINR below which the macrocell triggers coordination, dB.
    pub trigger_threshold_db: f64,
    /// Measurement ceiling on reported/traced SINR, dB.
    pub sinr_ceiling_db: f64,
    /// Log-normal shadowing sigma; 0 disables shadowing.
    pub shadowing_sigma_db: f64,
    /// Link-to-rate mapping.
    pub shannon: ShannonModel,
    /// Interferers carried per measurement report.
    pub max_report_cells: usize,
}

impl Default for RadioParams {
    fn default() -> Self {
        Self {
            noise_figure_db: 9.0,
            thermal_noise_dbm_per_hz: -174.0,
            pathloss: PathLossTable::default(),
            min_femto_power_dbm: -10.0,
            cqi_report_period_ms: 10,
            outage_threshold_db: -4.0,
            outage_window_ms: 200,
            trigger_threshold_db: -3.0,
            sinr_ceiling_db: 30.0,
            shadowing_sigma_db: 0.0,
            shannon: ShannonModel::default(),
            max_report_cells: 4,
        }
    }
}

impl RadioParams {
    /// Noise floor for a receiver bandwidth, honoring the configured
    /// thermal density.
    pub fn noise_floor_dbm(&self, bandwidth_hz: f64) -> f64 {
        self.thermal_noise_dbm_per_hz + 10.0 * bandwidth_hz.log10() + self.noise_figure_db
    }
}

/// Macro-tier ABSF configuration (picocell protection).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MacroAbsfConfig {
    pub enabled: bool,
    pub duty: AbsfDuty,
    /// Phase offset of the blanked subframes. The default of 1 keeps the
    /// macro pattern off the femto-tier blanked subframes so both
    /// protections can coexist.
    pub offset: u32,
}

impl Default for MacroAbsfConfig {
    fn default() -> Self {
        Self {
            enabled: false,
            duty: AbsfDuty::Half,
            offset: 1,
        }
    }
}

/// Coordination settings: the femto-tier method, biases, backhaul latencies
/// and trigger/release behavior.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EicicConfig {
    /// Method applied at femtocells when the macro triggers them.
    pub femto_method: EicicMethod,
    /// Unconditional ABSF pattern at the macrocell.
    pub macro_absf: MacroAbsfConfig,
    /// Range-expansion bias added to picocell RSS during cell selection.
    pub pico_bias_db: f64,
    /// Handover hysteresis, dB.
    pub handover_hysteresis_db: f64,
    /// Handover time-to-trigger, ms.
    pub time_to_trigger_ms: u64,
    /// Coordination-message latency to a femtocell (consumer backhaul).
    pub backhaul_femto_ms: u64,
    /// Coordination-message latency to a picocell (X2).
    pub backhaul_pico_ms: u64,
    /// Sustained-recovery time before an action is released, ms.
    pub release_hold_ms: u64,
    /// Recovery margin above the trigger threshold, dB.
    pub release_hysteresis_db: f64,
    /// Residual transmit level of a blanked subframe, dB below the cell's
    /// current power. `None` means perfectly blank.
    pub absf_residual_offset_db: Option<f64>,
    /// Sigma of the error applied to path-loss estimates fed to the power
    /// formulas; 0 uses ground truth.
    pub estimation_noise_sigma_db: f64,
}

impl Default for EicicConfig {
    fn default() -> Self {
        Self {
            femto_method: EicicMethod::None,
            macro_absf: MacroAbsfConfig::default(),
            pico_bias_db: 10.0,
            handover_hysteresis_db: 0.0,
            time_to_trigger_ms: 0,
            backhaul_femto_ms: 50,
            backhaul_pico_ms: 10,
            release_hold_ms: 500,
            release_hysteresis_db: 3.0,
            absf_residual_offset_db: None,
            estimation_noise_sigma_db: 0.0,
        }
    }
}

/// Clock, seed and traffic-accounting knobs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimParams {
    pub duration_s: u64,
    /// LTE subframe duration; must be 1.
    pub subframe_ms: u64,
    pub seed: u64,
    /// Fraction of subframes the macro carries traffic on; 1.0 keeps the
    /// macro interfering everywhere it is not blanked.
    pub macro_activity: f64,
    /// A VoIP user needs one subframe per this period.
    pub voip_period_ms: u64,
    /// SINR trace decimation.
    pub trace_sample_ms: u64,
    /// Offset of a femtocell's reference home user from the femto position.
    pub hue_offset_m: [f64; 2],
    /// Whether routes wrap around at the final waypoint.
    pub loop_routes: bool,
}

impl Default for SimParams {
    fn default() -> Self {
        Self {
            duration_s: 600,
            subframe_ms: 1,
            seed: 42,
            macro_activity: 1.0,
            voip_period_ms: 20,
            trace_sample_ms: 10,
            hue_offset_m: [4.9, 4.9],
            loop_routes: false,
        }
    }
}

/// A complete, validated world description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub area: AreaSpec,
    #[serde(default)]
    pub buildings: Vec<Building>,
    pub cells: Vec<CellSite>,
    pub users: Vec<UserSpec>,
    #[serde(default)]
    pub radio: RadioParams,
    #[serde(default)]
    pub eicic: EicicConfig,
    #[serde(default)]
    pub sim: SimParams,
}

impl ScenarioConfig {
    pub fn area_width_m(&self) -> f64 {
        self.area.width_m
    }

    pub fn area_height_m(&self) -> f64 {
        self.area.height_m
    }

    pub fn cell(&self, id: CellId) -> Option<&CellSite> {
        self.cells.iter().find(|c| c.id == id)
    }

    pub fn building(&self, id: BuildingId) -> Option<&Building> {
        self.buildings.iter().find(|b| b.id == id)
    }

    pub fn femto_count(&self) -> usize {
        self.cells.iter().filter(|c| c.kind == CellKind::Femto).count()
    }

    /// Checks every structural invariant, reporting the first violation.
    pub fn validate(&self) -> Result<(), ScenarioError> {
        let fail = |msg: String| Err(ScenarioError::Validation(msg));

        if self.sim.subframe_ms != 1 {
            return fail(format!(
                "subframe_ms must be 1 (LTE subframe), got {}",
                self.sim.subframe_ms
            ));
        }
        if !(self.area.width_m > 0.0 && self.area.height_m > 0.0) {
            return fail("area dimensions must be positive".into());
        }

        let mut building_ids = BTreeSet::new();
        for b in &self.buildings {
            if !(b.footprint.w_m > 0.0 && b.footprint.h_m > 0.0) {
                return fail(format!("building {} footprint must have positive size", b.id.0));
            }
            if b.wall_loss_db < 0.0 {
                return fail(format!("building {} wall_loss_db must be >= 0", b.id.0));
            }
            if !building_ids.insert(b.id) {
                return fail(format!("duplicate building id {}", b.id.0));
            }
        }

        let mut cell_ids = BTreeSet::new();
        let mut macro_count = 0usize;
        for c in &self.cells {
            if !cell_ids.insert(c.id) {
                return fail(format!("duplicate cell id {}", c.id.0));
            }
            if c.bandwidth_mhz <= 0.0 {
                return fail(format!("{}: bandwidth_mhz must be positive", c.id));
            }
            match c.kind {
                CellKind::Macro => macro_count += 1,
                CellKind::Femto => {
                    if c.max_tx_power_dbm > FEMTO_MAX_POWER_DBM {
                        return fail(format!(
                            "{}: femto max_tx_power_dbm {} exceeds {} dBm",
                            c.id, c.max_tx_power_dbm, FEMTO_MAX_POWER_DBM
                        ));
                    }
                }
                CellKind::Pico => {}
            }
            if matches!(c.access, Access::Csg(_)) && c.kind != CellKind::Femto {
                return fail(format!("CSG on non-femto: {} is {:?}", c.id, c.kind));
            }
            if let Some(host) = c.host_building {
                if c.kind != CellKind::Femto {
                    return fail(format!("{}: host_building only applies to femto cells", c.id));
                }
                match self.building(host) {
                    None => {
                        return fail(format!("{}: host building {} does not exist", c.id, host.0))
                    }
                    Some(b) => {
                        if !b.footprint.contains(&c.position) {
                            return fail(format!(
                                "{}: position outside host building {} footprint",
                                c.id, host.0
                            ));
                        }
                    }
                }
            }
        }
        if macro_count != 1 {
            return fail(format!("expected exactly one macro cell, found {}", macro_count));
        }

        let bbox = Rect::new(
            -ROUTE_BBOX_MARGIN_M,
            -ROUTE_BBOX_MARGIN_M,
            self.area.width_m + 2.0 * ROUTE_BBOX_MARGIN_M,
            self.area.height_m + 2.0 * ROUTE_BBOX_MARGIN_M,
        );
        let mut user_ids = BTreeSet::new();
        for u in &self.users {
            if !user_ids.insert(u.id) {
                return fail(format!("duplicate user id {}", u.id.0));
            }
            if u.speed_mps <= 0.0 {
                return fail(format!("{}: speed_mps must be positive", u.id));
            }
            if u.route.is_empty() {
                return fail(format!("{}: route must have at least one waypoint", u.id));
            }
            for (k, wp) in u.route.iter().enumerate() {
                if !bbox.contains(wp) {
                    return fail(format!(
                        "{}: waypoint {} at ({}, {}) outside the route bounding box",
                        u.id, k, wp.x_m, wp.y_m
                    ));
                }
            }
            for m in &u.csg_memberships {
                if !cell_ids.contains(m) {
                    return fail(format!("{}: csg membership names unknown cell {}", u.id, m.0));
                }
            }
        }

        if self.radio.outage_threshold_db >= self.radio.trigger_threshold_db {
            return fail(format!(
                "outage_threshold_db ({}) must be below trigger_threshold_db ({})",
                self.radio.outage_threshold_db, self.radio.trigger_threshold_db
            ));
        }
        if self.radio.cqi_report_period_ms == 0 {
            return fail("cqi_report_period_ms must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.sim.macro_activity) {
            return fail("macro_activity must lie in [0, 1]".into());
        }

        match &self.eicic.femto_method {
            EicicMethod::Power1 { alpha, .. } | EicicMethod::Power4 { alpha, .. } => {
                if *alpha < 0.0 {
                    return fail("power-control alpha must be >= 0".into());
                }
            }
            EicicMethod::Power2 {
                p_ofst_max_db,
                p_ofst_min_db,
            } => {
                if p_ofst_min_db > p_ofst_max_db {
                    return fail("p_ofst_min_db must not exceed p_ofst_max_db".into());
                }
            }
            _ => {}
        }
        let macro_pat = crate::eicic::absf_pattern(self.eicic.macro_absf.duty);
        if self.eicic.macro_absf.offset >= macro_pat.period {
            return fail(format!(
                "macro_absf offset {} outside pattern period {}",
                self.eicic.macro_absf.offset, macro_pat.period
            ));
        }

        Ok(())
    }
}

/// Parses and validates a scenario document.
pub fn load_scenario(text: &str) -> Result<ScenarioConfig, ScenarioError> {
    let config: ScenarioConfig = serde_json::from_str(text)?;
    config.validate()?;
    Ok(config)
}

/// [`load_scenario`] from a file path.
pub fn load_scenario_path(path: &Path) -> Result<ScenarioConfig, ScenarioError> {
    let text = std::fs::read_to_string(path)?;
    load_scenario(&text)
}

/// The building containing a point, boundary inclusive. Overlapping
/// footprints resolve to the lowest building id.
pub fn is_indoor(point: &Point, buildings: &[Building]) -> Option<BuildingId> {
    buildings
        .iter()
        .filter(|b| b.footprint.contains(point))
        .map(|b| b.id)
        .min()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal_json() -> String {
        r#"{
            "area": {"width_m": 300.0, "height_m": 300.0},
            "cells": [
                {"id": 0, "kind": "macro", "position": [350.0, -50.0], "max_tx_power_dbm": 46.0}
            ],
            "users": [
                {"id": 0, "route": [[10.0, 10.0], [20.0, 10.0]], "speed_mps": 1.1}
            ]
        }"#
        .to_string()
    }

    #[test]
    fn minimal_document_loads_with_defaults() {
        let cfg = load_scenario(&minimal_json()).unwrap();
        assert_eq!(cfg.buildings.len(), 0);
        assert_eq!(cfg.cells.len(), 1);
        assert_eq!(cfg.users.len(), 1);
        assert_eq!(cfg.radio.outage_threshold_db, -4.0);
        assert_eq!(cfg.radio.outage_window_ms, 200);
        assert_eq!(cfg.radio.trigger_threshold_db, -3.0);
        assert_eq!(cfg.sim.subframe_ms, 1);
        assert_eq!(cfg.eicic.pico_bias_db, 10.0);
        assert_eq!(cfg.users[0].service, ServiceType::Voip);
    }

    #[test]
    fn csg_on_pico_is_rejected_with_cell_name() {
        let json = r#"{
            "area": {"width_m": 300.0, "height_m": 300.0},
            "cells": [
                {"id": 0, "kind": "macro", "position": [350.0, -50.0], "max_tx_power_dbm": 46.0},
                {"id": 1, "kind": "pico", "position": [0.0, 300.0], "max_tx_power_dbm": 30.0,
                 "access": {"csg": [3]}}
            ],
            "users": [{"id": 0, "route": [[10.0, 10.0]], "speed_mps": 1.0}]
        }"#;
        let err = load_scenario(json).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("CSG on non-femto"), "{msg}");
        assert!(msg.contains("cell1"), "{msg}");
    }

    #[test]
    fn malformed_document_is_a_parse_error() {
        let err = load_scenario("{ not json").unwrap_err();
        assert!(matches!(err, ScenarioError::Parse(_)));
    }

    #[test]
    fn two_macros_are_rejected() {
        let json = r#"{
            "area": {"width_m": 300.0, "height_m": 300.0},
            "cells": [
                {"id": 0, "kind": "macro", "position": [0.0, 0.0], "max_tx_power_dbm": 46.0},
                {"id": 1, "kind": "macro", "position": [10.0, 0.0], "max_tx_power_dbm": 46.0}
            ],
            "users": [{"id": 0, "route": [[10.0, 10.0]], "speed_mps": 1.0}]
        }"#;
        let err = load_scenario(json).unwrap_err();
        assert!(err.to_string().contains("exactly one macro"));
    }

    #[test]
    fn femto_outside_host_building_is_rejected() {
        let json = r#"{
            "area": {"width_m": 300.0, "height_m": 300.0},
            "buildings": [{"id": 0, "footprint": {"x_m": 0.0, "y_m": 0.0, "w_m": 10.0, "h_m": 10.0},
                           "wall_loss_db": 10.0}],
            "cells": [
                {"id": 0, "kind": "macro", "position": [350.0, -50.0], "max_tx_power_dbm": 46.0},
                {"id": 2, "kind": "femto", "position": [50.0, 50.0], "max_tx_power_dbm": 20.0,
                 "access": {"csg": []}, "host_building": 0}
            ],
            "users": [{"id": 0, "route": [[10.0, 10.0]], "speed_mps": 1.0}]
        }"#;
        let err = load_scenario(json).unwrap_err();
        assert!(err.to_string().contains("outside host building"));
    }

    #[test]
    fn outage_threshold_must_stay_below_trigger_threshold() {
        let mut cfg = load_scenario(&minimal_json()).unwrap();
        cfg.radio.outage_threshold_db = -3.0;
        cfg.radio.trigger_threshold_db = -3.0;
        let err = cfg.validate().unwrap_err();
        assert!(err.to_string().contains("outage_threshold_db"));
    }

    #[test]
    fn is_indoor_misses_outside_points() {
        let buildings = vec![Building {
            id: BuildingId(3),
            footprint: Rect::new(0.0, 0.0, 10.0, 10.0),
            wall_loss_db: 10.0,
        }];
        assert_eq!(is_indoor(&Point::new(20.0, 20.0), &buildings), None);
    }

    #[test]
    fn is_indoor_includes_footprint_corner() {
        let buildings = vec![Building {
            id: BuildingId(3),
            footprint: Rect::new(0.0, 0.0, 10.0, 10.0),
            wall_loss_db: 10.0,
        }];
        assert_eq!(
            is_indoor(&Point::new(10.0, 10.0), &buildings),
            Some(BuildingId(3))
        );
    }

    #[test]
    fn is_indoor_breaks_overlap_ties_toward_lowest_id() {
        let buildings = vec![
            Building {
                id: BuildingId(7),
                footprint: Rect::new(0.0, 0.0, 10.0, 10.0),
                wall_loss_db: 10.0,
            },
            Building {
                id: BuildingId(2),
                footprint: Rect::new(5.0, 5.0, 10.0, 10.0),
                wall_loss_db: 10.0,
            },
        ];
        assert_eq!(
            is_indoor(&Point::new(7.0, 7.0), &buildings),
            Some(BuildingId(2))
        );
    }
}
