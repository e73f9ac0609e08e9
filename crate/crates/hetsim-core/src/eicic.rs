//! Interference-coordination primitives.
//!
//! Two families of femtocell actions are modeled. Time-domain coordination
//! blanks a periodic set of subframes (almost blank subframes, ABSF) so that
//! victims of the cell can be scheduled opposite the blanks. Power control
//! recomputes the femtocell downlink power from one of four closed-form
//! policies driven by macro received power, victim path loss, or target SINRs.
//! All power formulas clamp into `[P_min, P_max]` and work in the dB/dBm
//! domain except where a linear-domain sum is explicitly required.

use std::collections::BTreeSet;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::radio::{dbm_to_mw, med3, mw_to_dbm};
use crate::scenario::CellSite;
use crate::types::{CellId, UserId};

/// Supported ABS duty cycles.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AbsfDuty {
    #[serde(rename = "1/8")]
    OneEighth,
    #[serde(rename = "2/8")]
    TwoEighths,
    #[serde(rename = "3/8")]
    ThreeEighths,
    #[serde(rename = "3/20")]
    ThreeTwentieths,
    #[serde(rename = "1/2")]
    Half,
}

impl FromStr for AbsfDuty {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "1/8" => Ok(AbsfDuty::OneEighth),
            "2/8" => Ok(AbsfDuty::TwoEighths),
            "3/8" => Ok(AbsfDuty::ThreeEighths),
            "3/20" => Ok(AbsfDuty::ThreeTwentieths),
            "1/2" => Ok(AbsfDuty::Half),
            other => Err(format!(
                "unsupported ABS duty '{other}' (expected 1/8, 2/8, 3/8, 3/20 or 1/2)"
            )),
        }
    }
}

impl std::fmt::Display for AbsfDuty {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            AbsfDuty::OneEighth => "1/8",
            AbsfDuty::TwoEighths => "2/8",
            AbsfDuty::ThreeEighths => "3/8",
            AbsfDuty::ThreeTwentieths => "3/20",
            AbsfDuty::Half => "1/2",
        };
        f.write_str(s)
    }
}

/// A periodic blanked-subframe schedule.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AbsfPattern {
    pub period: u32,
    pub blanked: BTreeSet<u32>,
}

impl AbsfPattern {
    pub fn duty_cycle(&self) -> f64 {
        self.blanked.len() as f64 / self.period as f64
    }

    /// The same schedule rotated by `offset` subframes.
    pub fn with_offset(&self, offset: u32) -> AbsfPattern {
        AbsfPattern {
            period: self.period,
            blanked: self
                .blanked
                .iter()
                .map(|b| (b + offset) % self.period)
                .collect(),
        }
    }
}

/// The blanked-subframe schedule for a duty cycle. Blanks are spread for
/// maximal minimum gap, earliest offsets on ties; the 1/2 pattern blanks the
/// even subframes.
pub fn absf_pattern(duty: AbsfDuty) -> AbsfPattern {
    let (period, blanked): (u32, &[u32]) = match duty {
        AbsfDuty::Half => (2, &[0]),
        AbsfDuty::OneEighth => (8, &[0]),
        AbsfDuty::TwoEighths => (8, &[0, 3]),
        AbsfDuty::ThreeEighths => (8, &[0, 3, 6]),
        AbsfDuty::ThreeTwentieths => (20, &[0, 7, 14]),
    };
    AbsfPattern {
        period,
        blanked: blanked.iter().copied().collect(),
    }
}

/// Whether `subframe_index` falls on a blank of the pattern.
pub fn is_blanked(pattern: &AbsfPattern, subframe_index: u64) -> bool {
    pattern
        .blanked
        .contains(&((subframe_index % pattern.period as u64) as u32))
}

/// The active coordination policy for the femto tier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum EicicMethod {
    /// Take no action at femtocells.
    #[default]
    None,
    /// Blank subframes on a duty cycle while triggered.
    Time { duty: AbsfDuty },
    /// Power from the strongest macro received power at the femto:
    /// `clamp(alpha * P_M + beta)`.
    Power1 { alpha: f64, beta_db: f64 },
    /// Power from the path loss to the nearest victim:
    /// `med(P_M + med(P_ipl, bounds), P_max, P_min)`.
    Power2 { p_ofst_max_db: f64, p_ofst_min_db: f64 },
    /// Power that restricts the home user to a target SINR.
    Power3 { sinr_tar_hue_db: f64 },
    /// Power that guarantees the victim a target SINR:
    /// `clamp(alpha * P_sinr + beta)`. With `beta_db` unset, beta is derived
    /// at trigger time as `P_max - sinr_tar_mue_db`, the smallest power
    /// offset meeting the target.
    Power4 {
        alpha: f64,
        #[serde(default)]
        beta_db: Option<f64>,
        sinr_tar_mue_db: f64,
    },
}

impl EicicMethod {
    pub fn label(&self) -> String {
        match self {
            EicicMethod::None => "none".into(),
            EicicMethod::Time { duty } => format!("time({duty})"),
            EicicMethod::Power1 { alpha, beta_db } => format!("power1(a={alpha},b={beta_db})"),
            EicicMethod::Power2 { .. } => "power2".into(),
            EicicMethod::Power3 { sinr_tar_hue_db } => format!("power3(tar={sinr_tar_hue_db})"),
            EicicMethod::Power4 { sinr_tar_mue_db, .. } => format!("power4(tar={sinr_tar_mue_db})"),
        }
    }
}

/// Measurements feeding the power-control formulas.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerControlInputs {
    /// Maximum home-eNB transmit power, dBm.
    pub p_max_dbm: f64,
    /// Minimum home-eNB transmit power, dBm.
    pub p_min_dbm: f64,
    /// Received power from the strongest co-channel macro at the femto, dBm.
    pub p_m_dbm: f64,
    /// Indoor path loss plus penetration loss to the nearest victim, dB.
    pub p_ipl_db: f64,
    /// Path-loss estimate from the femto to its home user, dB.
    pub pl_hat_db: f64,
    /// Interference observed by the home user, dBm. `None` disables the term.
    pub interference_dbm: Option<f64>,
    /// Background noise power at the home user, dBm.
    pub noise_dbm: f64,
    /// Victim SINR counting only this femtocell's interference at reference
    /// power, dB.
    pub p_sinr_db: f64,
}

/// Method 1: strongest macro received power at the femto.
pub fn power_method_1(inputs: &PowerControlInputs, alpha: f64, beta_db: f64) -> f64 {
    (alpha * inputs.p_m_dbm + beta_db)
        .min(inputs.p_max_dbm)
        .max(inputs.p_min_dbm)
}

/// Method 2: path loss between the femto and the nearest victim, as a
/// two-stage median.
pub fn power_method_2(inputs: &PowerControlInputs, p_ofst_max_db: f64, p_ofst_min_db: f64) -> f64 {
    let p_ofst = med3(inputs.p_ipl_db, p_ofst_max_db, p_ofst_min_db);
    med3(inputs.p_m_dbm + p_ofst, inputs.p_max_dbm, inputs.p_min_dbm)
}

/// Method 3: hold the home user at a target SINR. The interference and noise
/// terms combine in the linear milliwatt domain.
pub fn power_method_3(inputs: &PowerControlInputs, sinr_tar_hue_db: f64) -> f64 {
    let mut floor_mw = dbm_to_mw(inputs.noise_dbm);
    if let Some(i) = inputs.interference_dbm {
        floor_mw += dbm_to_mw(i);
    }
    let p_rec_hue = mw_to_dbm(floor_mw) + sinr_tar_hue_db;
    (inputs.pl_hat_db + p_rec_hue)
        .min(inputs.p_max_dbm)
        .max(inputs.p_min_dbm)
}

/// Method 4: guarantee the victim a minimum SINR.
pub fn power_method_4(inputs: &PowerControlInputs, alpha: f64, beta_db: f64) -> f64 {
    (alpha * inputs.p_sinr_db + beta_db)
        .min(inputs.p_max_dbm)
        .max(inputs.p_min_dbm)
}

/// Whether a report's quality is bad enough to trigger coordination
/// ("smaller than" is strict).
pub fn should_trigger(report_sinr_db: f64, trigger_threshold_db: f64) -> bool {
    report_sinr_db < trigger_threshold_db
}

/// Per-femto coordination state.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TriggerState {
    /// Whether an action is currently applied at the femto.
    pub active: bool,
    /// The victim the most recent action targeted.
    pub victim_user: Option<UserId>,
    /// Number of distinct actions applied (power recomputations that moved
    /// the power, or pattern activations).
    pub actions_count: u64,
    /// Power applied by the last action, if any.
    pub last_applied_power_dbm: Option<f64>,
}

/// The outcome of dispatching a coordination action.
#[derive(Debug, Clone, PartialEq)]
pub enum EicicAction {
    /// No femto-side change (method `None`).
    NoChange,
    /// Transmit at this power on every subframe.
    Power(f64),
    /// Blank subframes on this pattern.
    Pattern(AbsfPattern),
}

/// Applies `method` at a triggered femto, updating the trigger state.
///
/// `actions_count` increments only when the action actually changes
/// something: a pattern newly activated, or a power differing from the last
/// applied power by more than 0.01 dB. Re-applying identical inputs is a
/// no-op, so refresh triggers are free.
pub fn apply_eicic(
    femto: &CellSite,
    method: &EicicMethod,
    inputs: &PowerControlInputs,
    state: &mut TriggerState,
) -> EicicAction {
    debug_assert_eq!(femto.max_tx_power_dbm, inputs.p_max_dbm);
    let action = match method {
        EicicMethod::None => {
            state.active = true;
            return EicicAction::NoChange;
        }
        EicicMethod::Time { duty } => {
            if !state.active {
                state.actions_count += 1;
            }
            state.active = true;
            return EicicAction::Pattern(absf_pattern(*duty));
        }
        EicicMethod::Power1 { alpha, beta_db } => power_method_1(inputs, *alpha, *beta_db),
        EicicMethod::Power2 {
            p_ofst_max_db,
            p_ofst_min_db,
        } => power_method_2(inputs, *p_ofst_max_db, *p_ofst_min_db),
        EicicMethod::Power3 { sinr_tar_hue_db } => power_method_3(inputs, *sinr_tar_hue_db),
        EicicMethod::Power4 {
            alpha,
            beta_db,
            sinr_tar_mue_db,
        } => {
            let beta = beta_db.unwrap_or(inputs.p_max_dbm - sinr_tar_mue_db);
            power_method_4(inputs, *alpha, beta)
        }
    };
    let changed = state
        .last_applied_power_dbm
        .map_or(true, |prev| (action - prev).abs() > 0.01);
    if changed {
        state.actions_count += 1;
        state.last_applied_power_dbm = Some(action);
    }
    state.active = true;
    EicicAction::Power(state.last_applied_power_dbm.unwrap())
}

/// Coordination message types exchanged between cells.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MessageKind {
    Trigger,
    Release,
}

/// A backhaul-delayed coordination message.
#[derive(Debug, Clone, PartialEq)]
pub struct CoordinationMessage {
    pub kind: MessageKind,
    pub source: CellId,
    pub target: CellId,
    pub victim: UserId,
    pub measurement: crate::engine::CqiReport,
    /// Send time plus the backhaul delay of the target's kind.
    pub deliver_at_ms: u64,
}

/// Whether an active action should be released.
///
/// `recent_reports` holds `(time_ms, recovery_sinr_db)` pairs for the victim,
/// oldest first; the recovery SINR is derived from the report's per-cell
/// measurements at reference power, so a protected victim does not mask its
/// own exposure. Release happens when the victim stayed above
/// `release_threshold_db` continuously for `hold_ms`, or went silent for
/// `hold_ms`.
pub fn release_condition(
    state: &TriggerState,
    recent_reports: &[(u64, f64)],
    release_threshold_db: f64,
    hold_ms: u64,
    now_ms: u64,
) -> bool {
    if !state.active {
        return false;
    }
    let last = match recent_reports.last() {
        None => return true,
        Some(&(t, _)) => t,
    };
    if now_ms.saturating_sub(last) >= hold_ms {
        return true;
    }
    let mut streak_start: Option<u64> = None;
    for &(t, sinr) in recent_reports {
        if sinr > release_threshold_db {
            streak_start.get_or_insert(t);
        } else {
            streak_start = None;
        }
    }
    streak_start.map_or(false, |start| now_ms.saturating_sub(start) >= hold_ms)
}
