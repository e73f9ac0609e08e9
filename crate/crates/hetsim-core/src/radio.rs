//! Link-budget arithmetic.
//!
//! Everything here is a pure function: dB/linear conversion, log-distance
//! path loss with per-building wall penetration, linear-domain SINR, thermal
//! noise, an attenuated-Shannon rate map, and the three-way median used by
//! the power-control formulas. Interference is always summed in the linear
//! milliwatt domain and converted back to dB at the end.

use serde::{Deserialize, Serialize};

use crate::scenario::Building;
use crate::types::Point;

/// Thermal noise density at room temperature, dBm/Hz.
pub const THERMAL_NOISE_DBM_PER_HZ: f64 = -174.0;

/// Measurement ceiling applied when an SINR denominator is empty
/// (no interferers, noise disabled). Receivers cannot report an
/// unbounded ratio, so the sentinel is a finite ceiling.
pub const DEFAULT_SINR_CEILING_DB: f64 = 30.0;

/// dBm to linear milliwatts.
#[inline]
pub fn dbm_to_mw(dbm: f64) -> f64 {
    10f64.powf(dbm / 10.0)
}

/// Linear milliwatts to dBm.
#[inline]
pub fn mw_to_dbm(mw: f64) -> f64 {
    10.0 * mw.log10()
}

/// Log-distance path-loss model: `fixed_offset_db + coeff * log10(d / reference)`
/// with `d` in km. Wall penetration is added per building boundary crossed
/// when `count_walls` is set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathLossModel {
    /// Loss at the reference distance, dB.
    pub fixed_offset_db: f64,
    /// Distance slope, dB per decade.
    pub distance_coeff_db: f64,
    /// Reference distance, km.
    #[serde(default = "default_reference_km")]
    pub reference_km: f64,
    /// Whether building wall crossings add penetration loss on this model.
    #[serde(default = "default_true")]
    pub count_walls: bool,
}

fn default_reference_km() -> f64 {
    1.0
}

fn default_true() -> bool {
    true
}

impl PathLossModel {
    pub fn new(fixed_offset_db: f64, distance_coeff_db: f64) -> Self {
        Self {
            fixed_offset_db,
            distance_coeff_db,
            reference_km: 1.0,
            count_walls: true,
        }
    }
}

/// One received-signal sample of a single downlink, as gathered for
/// measurement reports.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkSample {
    pub tx_cell: crate::types::CellId,
    pub rx_user: crate::types::UserId,
    pub rss_dbm: f64,
    pub subframe_index: u64,
}

/// Path loss between two points, dB.
///
/// Distance is floored at 1 m. Each building boundary on the link adds that
/// building's wall loss: one wall if exactly one end is indoors, two walls if
/// the ends are indoors in different buildings, none if both ends share a
/// building.
pub fn path_loss_db(
    model: &PathLossModel,
    tx: Point,
    rx: Point,
    tx_indoor: Option<&Building>,
    rx_indoor: Option<&Building>,
) -> f64 {
    let d_m = tx.distance(&rx).max(1.0);
    let d_km = d_m / 1000.0;
    let mut pl = model.fixed_offset_db + model.distance_coeff_db * (d_km / model.reference_km).log10();
    if model.count_walls {
        match (tx_indoor, rx_indoor) {
            (Some(a), Some(b)) if a.id == b.id => {}
            (Some(a), Some(b)) => pl += a.wall_loss_db + b.wall_loss_db,
            (Some(a), None) => pl += a.wall_loss_db,
            (None, Some(b)) => pl += b.wall_loss_db,
            (None, None) => {}
        }
    }
    pl
}

/// Received signal strength: transmit power minus path loss.
#[inline]
pub fn rss_dbm(tx_power_dbm: f64, path_loss_db: f64) -> f64 {
    tx_power_dbm - path_loss_db
}

/// Linear-domain SINR in dB.
///
/// `noise_floor_dbm = None` disables thermal noise. With an empty denominator
/// (no interferers and noise disabled) the result is the measurement ceiling
/// [`DEFAULT_SINR_CEILING_DB`] rather than an infinity.
pub fn sinr_db(serving_rss_dbm: f64, interferer_rss_dbm: &[f64], noise_floor_dbm: Option<f64>) -> f64 {
    let mut denom_mw = noise_floor_dbm.map_or(0.0, dbm_to_mw);
    for &i in interferer_rss_dbm {
        denom_mw += dbm_to_mw(i);
    }
    if denom_mw <= 0.0 {
        return DEFAULT_SINR_CEILING_DB;
    }
    serving_rss_dbm - mw_to_dbm(denom_mw)
}

/// Thermal noise floor over a bandwidth, dBm.
pub fn noise_floor_dbm(bandwidth_hz: f64, noise_figure_db: f64) -> f64 {
    THERMAL_NOISE_DBM_PER_HZ + 10.0 * bandwidth_hz.log10() + noise_figure_db
}

/// Attenuated-Shannon link-to-rate mapping.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShannonModel {
    /// Attenuation on the Shannon bound.
    pub alpha: f64,
    /// Spectral-efficiency cap, bits/s/Hz.
    pub eta_max_bps_hz: f64,
    /// Below this SINR no data gets through, dB.
    pub sinr_floor_db: f64,
}

impl Default for ShannonModel {
    fn default() -> Self {
        Self {
            alpha: 0.6,
            eta_max_bps_hz: 4.4,
            sinr_floor_db: -10.0,
        }
    }
}

impl ShannonModel {
    /// Achievable rate, bits/s, over `bandwidth_hz` of which `active_fraction`
    /// of subframes are usable.
    pub fn throughput_bps(&self, sinr_db: f64, bandwidth_hz: f64, active_fraction: f64) -> f64 {
        if sinr_db < self.sinr_floor_db {
            return 0.0;
        }
        let eff = (self.alpha * (1.0 + dbm_to_mw(sinr_db)).log2())
            .clamp(0.0, self.eta_max_bps_hz);
        active_fraction * bandwidth_hz * eff
    }
}

/// [`ShannonModel::throughput_bps`] with the default mapping.
pub fn throughput_bps(sinr_db: f64, bandwidth_hz: f64, active_fraction: f64) -> f64 {
    ShannonModel::default().throughput_bps(sinr_db, bandwidth_hz, active_fraction)
}

/// Median of three values.
pub fn med3(a: f64, b: f64, c: f64) -> f64 {
    a.max(b.min(c)).min(b.max(c))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::Rect;
    use proptest::prelude::*;

    fn building(id: u32, x: f64, y: f64, wall_loss_db: f64) -> Building {
        Building {
            id: crate::types::BuildingId(id),
            footprint: Rect::new(x, y, 10.0, 10.0),
            wall_loss_db,
        }
    }

    const MACRO_PL: PathLossModel = PathLossModel {
        fixed_offset_db: 128.1,
        distance_coeff_db: 37.6,
        reference_km: 1.0,
        count_walls: true,
    };

    const FEMTO_PL: PathLossModel = PathLossModel {
        fixed_offset_db: 127.0,
        distance_coeff_db: 30.0,
        reference_km: 1.0,
        count_walls: true,
    };

    #[test]
    fn path_loss_at_reference_distance_is_the_offset() {
        let pl = path_loss_db(
            &MACRO_PL,
            Point::new(0.0, 0.0),
            Point::new(1000.0, 0.0),
            None,
            None,
        );
        assert!((pl - 128.1).abs() < 1e-12);
    }

    #[test]
    fn path_loss_indoor_same_building_has_no_wall_loss() {
        let b = building(0, 0.0, 0.0, 10.0);
        let pl = path_loss_db(
            &FEMTO_PL,
            Point::new(0.0, 0.0),
            Point::new(10.0, 0.0),
            Some(&b),
            Some(&b),
        );
        // 127 + 30*log10(0.01) = 127 - 60 = 67
        assert!((pl - 67.0).abs() < 1e-9);
    }

    #[test]
    fn path_loss_adds_one_wall_when_rx_steps_outside() {
        let b = building(0, 0.0, 0.0, 10.0);
        let pl = path_loss_db(
            &FEMTO_PL,
            Point::new(0.0, 0.0),
            Point::new(10.0, 0.0),
            Some(&b),
            None,
        );
        assert!((pl - 77.0).abs() < 1e-9);
    }

    #[test]
    fn path_loss_two_distinct_buildings_adds_both_walls() {
        let a = building(0, 0.0, 0.0, 10.0);
        let b = building(1, 20.0, 0.0, 7.0);
        let pl = path_loss_db(
            &FEMTO_PL,
            Point::new(5.0, 5.0),
            Point::new(25.0, 5.0),
            Some(&a),
            Some(&b),
        );
        let base = 127.0 + 30.0 * (0.02f64).log10();
        assert!((pl - (base + 17.0)).abs() < 1e-9);
    }

    #[test]
    fn path_loss_floors_distance_at_one_meter() {
        let p = Point::new(3.0, 3.0);
        let pl0 = path_loss_db(&FEMTO_PL, p, p, None, None);
        let pl1 = path_loss_db(&FEMTO_PL, p, Point::new(3.0, 4.0), None, None);
        assert_eq!(pl0, pl1);
    }

    #[test]
    fn rss_is_power_minus_loss() {
        assert!((rss_dbm(46.0, 128.1) - (-82.1)).abs() < 1e-12);
        assert!((rss_dbm(20.0, 67.0) - (-47.0)).abs() < 1e-12);
        assert_eq!(rss_dbm(13.5, 0.0), 13.5);
    }

    #[test]
    fn sinr_noise_only() {
        let s = sinr_db(-60.0, &[], Some(-92.0));
        assert!((s - 32.0).abs() < 1e-12);
    }

    #[test]
    fn sinr_single_interferer_no_noise() {
        let s = sinr_db(-60.0, &[-70.0], None);
        assert!((s - 10.0).abs() < 1e-12);
    }

    #[test]
    fn sinr_two_equal_interferers_costs_three_db() {
        let s = sinr_db(-60.0, &[-70.0, -70.0], None);
        assert!((s - (10.0 - 10.0 * 2f64.log10())).abs() < 1e-9);
    }

    #[test]
    fn sinr_empty_denominator_returns_ceiling() {
        assert_eq!(sinr_db(-60.0, &[], None), DEFAULT_SINR_CEILING_DB);
    }

    #[test]
    fn noise_floor_matches_hand_values() {
        assert!((noise_floor_dbm(20e6, 9.0) - (-91.98970004336019)).abs() < 1e-9);
        assert!((noise_floor_dbm(1.0, 0.0) - (-174.0)).abs() < 1e-12);
        assert!((noise_floor_dbm(20e6, 0.0) - (-100.98970004336019)).abs() < 1e-9);
    }

    #[test]
    fn throughput_floors_below_minus_ten_db() {
        assert_eq!(throughput_bps(-10.001, 20e6, 1.0), 0.0);
    }

    #[test]
    fn throughput_caps_at_eta_max() {
        // 0.6*log2(1001) ~ 5.98 exceeds the 4.4 cap.
        let t = throughput_bps(30.0, 20e6, 1.0);
        assert!((t - 88e6).abs() < 1e-3);
    }

    #[test]
    fn throughput_is_zero_when_fully_blanked() {
        assert_eq!(throughput_bps(25.0, 20e6, 0.0), 0.0);
    }

    #[test]
    fn med3_examples() {
        assert_eq!(med3(10.0, 20.0, -10.0), 10.0);
        assert_eq!(med3(5.0, 5.0, 9.0), 5.0);
        assert_eq!(med3(7.0, 7.0, 7.0), 7.0);
    }

    proptest! {
        #[test]
        fn db_linear_roundtrip(x in -150.0f64..50.0) {
            let y = mw_to_dbm(dbm_to_mw(x));
            prop_assert!((x - y).abs() <= 1e-9 * x.abs().max(1.0));
        }

        #[test]
        fn med3_is_permutation_invariant(a in -100.0f64..100.0, b in -100.0f64..100.0, c in -100.0f64..100.0) {
            let m = med3(a, b, c);
            prop_assert_eq!(m, med3(a, c, b));
            prop_assert_eq!(m, med3(b, a, c));
            prop_assert_eq!(m, med3(b, c, a));
            prop_assert_eq!(m, med3(c, a, b));
            prop_assert_eq!(m, med3(c, b, a));
        }

        #[test]
        fn med3_matches_sorting_oracle(a in -100.0f64..100.0, b in -100.0f64..100.0, c in -100.0f64..100.0) {
            let mut v = [a, b, c];
            v.sort_by(f64::total_cmp);
            prop_assert_eq!(med3(a, b, c), v[1]);
        }

        #[test]
        fn sinr_decreases_when_an_interferer_strengthens(
            serving in -100.0f64..-40.0,
            i0 in -110.0f64..-60.0,
            bump in 0.1f64..20.0,
        ) {
            let weak = sinr_db(serving, &[i0], Some(-92.0));
            let strong = sinr_db(serving, &[i0 + bump], Some(-92.0));
            prop_assert!(strong < weak);
        }

        #[test]
        fn throughput_monotone_in_sinr_and_linear_in_fraction(
            s0 in -15.0f64..35.0,
            ds in 0.0f64..10.0,
            f in 0.0f64..1.0,
        ) {
            let lo = throughput_bps(s0, 20e6, 1.0);
            let hi = throughput_bps(s0 + ds, 20e6, 1.0);
            prop_assert!(hi >= lo);
            let scaled = throughput_bps(s0, 20e6, f);
            prop_assert!((scaled - f * lo).abs() <= 1e-6 * lo.max(1.0));
        }

        #[test]
        fn path_loss_monotone_in_distance(d0 in 1.0f64..2000.0, dd in 0.0f64..500.0) {
            let a = path_loss_db(&MACRO_PL, Point::new(0.0, 0.0), Point::new(d0, 0.0), None, None);
            let b = path_loss_db(&MACRO_PL, Point::new(0.0, 0.0), Point::new(d0 + dd, 0.0), None, None);
            prop_assert!(b >= a);
        }
    }
}
