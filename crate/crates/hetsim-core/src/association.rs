//! Cell selection and handover bookkeeping.
//!
//! Selection is a biased argmax over received signal strength: each cell
//! kind carries a selection bias (range expansion), CSG cells are excluded
//! for non-members, and ties break toward the lowest cell id. A user sits in
//! the expanded region when its serving cell wins only because of its bias.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::radio::{path_loss_db, rss_dbm};
use crate::scenario::{is_indoor, Building, CellKind, CellSite, PathLossTable, UserSpec};
use crate::types::{CellId, Point, UserId};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum AssociationError {
    #[error("no permitted cell for {0}")]
    NoPermittedCell(UserId),
}

/// Selection bias per cell kind, dB.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BiasTable {
    pub macro_db: f64,
    pub pico_db: f64,
    pub femto_db: f64,
}

impl BiasTable {
    pub fn pico_only(pico_db: f64) -> Self {
        Self {
            macro_db: 0.0,
            pico_db,
            femto_db: 0.0,
        }
    }

    pub fn for_kind(&self, kind: CellKind) -> f64 {
        match kind {
            CellKind::Macro => self.macro_db,
            CellKind::Pico => self.pico_db,
            CellKind::Femto => self.femto_db,
        }
    }
}

/// One candidate cell as seen from a user position.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellEntry {
    pub id: CellId,
    pub kind: CellKind,
    pub permitted: bool,
    pub rss_dbm: f64,
}

/// Propagation context for computing selection-grade RSS.
#[derive(Debug, Clone, Copy)]
pub struct RadioEnv<'a> {
    pub pathloss: &'a PathLossTable,
    pub buildings: &'a [Building],
}

impl RadioEnv<'_> {
    /// Reference RSS of a cell at a position (maximum transmit power, walls
    /// included).
    pub fn reference_rss_dbm(&self, cell: &CellSite, position: &Point) -> f64 {
        let tx_indoor = cell
            .host_building
            .and_then(|id| self.buildings.iter().find(|b| b.id == id))
            .or_else(|| {
                is_indoor(&cell.position, self.buildings)
                    .and_then(|id| self.buildings.iter().find(|b| b.id == id))
            });
        let rx_indoor = is_indoor(position, self.buildings)
            .and_then(|id| self.buildings.iter().find(|b| b.id == id));
        let pl = path_loss_db(
            self.pathloss.for_kind(cell.kind),
            cell.position,
            *position,
            tx_indoor,
            rx_indoor,
        );
        rss_dbm(cell.max_tx_power_dbm, pl)
    }
}

/// Biased argmax over permitted entries. Returns the winner and whether it
/// won only through its bias.
pub fn choose(entries: &[CellEntry], biases: &BiasTable, user: UserId) -> Result<(CellId, bool), AssociationError> {
    let mut best: Option<(&CellEntry, f64)> = None;
    let mut best_unbiased: Option<f64> = None;
    for e in entries.iter().filter(|e| e.permitted) {
        let biased = e.rss_dbm + biases.for_kind(e.kind);
        let better = match best {
            None => true,
            Some((b, b_biased)) => biased > b_biased || (biased == b_biased && e.id < b.id),
        };
        if better {
            best = Some((e, biased));
        }
        best_unbiased = Some(best_unbiased.map_or(e.rss_dbm, |m: f64| m.max(e.rss_dbm)));
    }
    match (best, best_unbiased) {
        (Some((e, _)), Some(max_unbiased)) => Ok((e.id, e.rss_dbm < max_unbiased)),
        _ => Err(AssociationError::NoPermittedCell(user)),
    }
}

/// Spec-level cell selection from the raw world description.
pub fn select_cell(
    user: &UserSpec,
    position: Point,
    cells: &[CellSite],
    biases: &BiasTable,
    env: &RadioEnv<'_>,
) -> Result<(CellId, bool), AssociationError> {
    let entries: Vec<CellEntry> = cells
        .iter()
        .map(|c| CellEntry {
            id: c.id,
            kind: c.kind,
            permitted: c.access.permits(user.id) || user.csg_memberships.contains(&c.id),
            rss_dbm: env.reference_rss_dbm(c, &position),
        })
        .collect();
    choose(&entries, biases, user.id)
}

/// A serving-cell change.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HandoverEvent {
    pub time_ms: u64,
    pub from: CellId,
    pub to: CellId,
}

/// Handover damping knobs; both default to zero (switch immediately).
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct HandoverPolicy {
    pub hysteresis_db: f64,
    pub time_to_trigger_ms: u64,
}

/// Per-user association state.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AssociationState {
    pub serving: Option<CellId>,
    pub expanded_region: bool,
    pub handover_log: Vec<HandoverEvent>,
    pub macro_pico_handovers: u64,
    candidate: Option<(CellId, u64)>,
}

impl AssociationState {
    /// Re-evaluates the serving cell, logging a handover when it changes.
    /// Macro-pico transitions in either direction also bump the dedicated
    /// tally.
    pub fn update_from_entries(
        &mut self,
        entries: &[CellEntry],
        biases: &BiasTable,
        policy: &HandoverPolicy,
        user: UserId,
        time_ms: u64,
    ) -> Result<Option<HandoverEvent>, AssociationError> {
        let (best, _) = choose(entries, biases, user)?;
        let serving = match self.serving {
            None => {
                self.serving = Some(best);
                self.expanded_region = Self::expanded(entries, biases, best);
                return Ok(None);
            }
            Some(s) => s,
        };
        let serving_entry = entries.iter().find(|e| e.id == serving && e.permitted);
        let mut switch_to: Option<CellId> = None;
        match serving_entry {
            None => switch_to = Some(best), // lost permission or cell gone
            Some(se) => {
                if best != serving {
                    let best_entry = entries.iter().find(|e| e.id == best).unwrap();
                    let gain = best_entry.rss_dbm + biases.for_kind(best_entry.kind)
                        - (se.rss_dbm + biases.for_kind(se.kind));
                    if gain > policy.hysteresis_db {
                        match self.candidate {
                            Some((c, since)) if c == best => {
                                if time_ms.saturating_sub(since) >= policy.time_to_trigger_ms {
                                    switch_to = Some(best);
                                }
                            }
                            _ => {
                                self.candidate = Some((best, time_ms));
                                if policy.time_to_trigger_ms == 0 {
                                    switch_to = Some(best);
                                }
                            }
                        }
                    } else {
                        self.candidate = None;
                    }
                } else {
                    self.candidate = None;
                }
            }
        }
        let mut event = None;
        if let Some(to) = switch_to {
            let ev = HandoverEvent { time_ms, from: serving, to };
            let from_kind = entries.iter().find(|e| e.id == serving).map(|e| e.kind);
            let to_kind = entries.iter().find(|e| e.id == to).map(|e| e.kind);
            if matches!(
                (from_kind, to_kind),
                (Some(CellKind::Macro), Some(CellKind::Pico)) | (Some(CellKind::Pico), Some(CellKind::Macro))
            ) {
                self.macro_pico_handovers += 1;
            }
            self.handover_log.push(ev);
            self.serving = Some(to);
            self.candidate = None;
            event = Some(ev);
        }
        let now_serving = self.serving.unwrap();
        self.expanded_region = Self::expanded(entries, biases, now_serving);
        Ok(event)
    }

    fn expanded(entries: &[CellEntry], _biases: &BiasTable, serving: CellId) -> bool {
        let serving_rss = match entries.iter().find(|e| e.id == serving) {
            Some(e) => e.rss_dbm,
            None => return false,
        };
        entries
            .iter()
            .filter(|e| e.permitted)
            .any(|e| e.rss_dbm > serving_rss)
    }
}

/// Spec-level association update from the raw world description.
pub fn update_association(
    state: &mut AssociationState,
    user: &UserSpec,
    position: Point,
    cells: &[CellSite],
    biases: &BiasTable,
    env: &RadioEnv<'_>,
    policy: &HandoverPolicy,
    time_ms: u64,
) -> Result<Option<HandoverEvent>, AssociationError> {
    let entries: Vec<CellEntry> = cells
        .iter()
        .map(|c| CellEntry {
            id: c.id,
            kind: c.kind,
            permitted: c.access.permits(user.id) || user.csg_memberships.contains(&c.id),
            rss_dbm: env.reference_rss_dbm(c, &position),
        })
        .collect();
    state.update_from_entries(&entries, biases, policy, user.id, time_ms)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn entry(id: u32, kind: CellKind, rss: f64) -> CellEntry {
        CellEntry {
            id: CellId(id),
            kind,
            permitted: true,
            rss_dbm: rss,
        }
    }

    #[test]
    fn pico_bias_pulls_the_user_into_the_expanded_region() {
        let entries = [
            entry(0, CellKind::Macro, -75.0),
            entry(1, CellKind::Pico, -80.0),
        ];
        let (id, expanded) = choose(&entries, &BiasTable::pico_only(10.0), UserId(0)).unwrap();
        assert_eq!(id, CellId(1));
        assert!(expanded);
    }

    #[test]
    fn without_bias_the_macro_wins_plainly() {
        let entries = [
            entry(0, CellKind::Macro, -75.0),
            entry(1, CellKind::Pico, -80.0),
        ];
        let (id, expanded) = choose(&entries, &BiasTable::pico_only(0.0), UserId(0)).unwrap();
        assert_eq!(id, CellId(0));
        assert!(!expanded);
    }

    #[test]
    fn csg_femto_is_skipped_for_nonmembers_despite_dominant_rss() {
        let entries = [
            entry(0, CellKind::Macro, -90.0),
            CellEntry {
                id: CellId(2),
                kind: CellKind::Femto,
                permitted: false,
                rss_dbm: -40.0,
            },
        ];
        let (id, _) = choose(&entries, &BiasTable::pico_only(10.0), UserId(0)).unwrap();
        assert_eq!(id, CellId(0));
    }

    #[test]
    fn empty_permitted_set_is_an_error() {
        let entries = [CellEntry {
            id: CellId(2),
            kind: CellKind::Femto,
            permitted: false,
            rss_dbm: -40.0,
        }];
        assert_eq!(
            choose(&entries, &BiasTable::pico_only(0.0), UserId(7)),
            Err(AssociationError::NoPermittedCell(UserId(7)))
        );
    }

    #[test]
    fn ties_break_toward_the_lowest_cell_id() {
        let entries = [
            entry(5, CellKind::Macro, -70.0),
            entry(3, CellKind::Macro, -70.0),
        ];
        let (id, _) = choose(&entries, &BiasTable::pico_only(0.0), UserId(0)).unwrap();
        assert_eq!(id, CellId(3));
    }

    #[test]
    fn boundary_crossing_logs_one_handover_each_way() {
        let biases = BiasTable::pico_only(10.0);
        let policy = HandoverPolicy::default();
        let mut state = AssociationState::default();
        let far = [entry(0, CellKind::Macro, -70.0), entry(1, CellKind::Pico, -90.0)];
        let near = [entry(0, CellKind::Macro, -70.0), entry(1, CellKind::Pico, -75.0)];
        state.update_from_entries(&far, &biases, &policy, UserId(0), 0).unwrap();
        assert_eq!(state.serving, Some(CellId(0)));
        let ev = state
            .update_from_entries(&near, &biases, &policy, UserId(0), 1000)
            .unwrap();
        assert_eq!(
            ev,
            Some(HandoverEvent { time_ms: 1000, from: CellId(0), to: CellId(1) })
        );
        assert!(state.expanded_region);
        state.update_from_entries(&far, &biases, &policy, UserId(0), 2000).unwrap();
        assert_eq!(state.macro_pico_handovers, 2);
        assert_eq!(state.handover_log.len(), 2);
    }

    #[test]
    fn stationary_user_logs_no_handovers() {
        let biases = BiasTable::pico_only(10.0);
        let policy = HandoverPolicy::default();
        let mut state = AssociationState::default();
        let entries = [entry(0, CellKind::Macro, -70.0), entry(1, CellKind::Pico, -85.0)];
        for t in 0..100 {
            state.update_from_entries(&entries, &biases, &policy, UserId(0), t).unwrap();
        }
        assert!(state.handover_log.is_empty());
        assert_eq!(state.macro_pico_handovers, 0);
    }

    #[test]
    fn time_to_trigger_delays_the_switch() {
        let biases = BiasTable::pico_only(0.0);
        let policy = HandoverPolicy { hysteresis_db: 0.0, time_to_trigger_ms: 50 };
        let mut state = AssociationState::default();
        let a = [entry(0, CellKind::Macro, -70.0), entry(1, CellKind::Pico, -90.0)];
        let b = [entry(0, CellKind::Macro, -70.0), entry(1, CellKind::Pico, -60.0)];
        state.update_from_entries(&a, &biases, &policy, UserId(0), 0).unwrap();
        for t in 1..=49 {
            let ev = state.update_from_entries(&b, &biases, &policy, UserId(0), t).unwrap();
            assert!(ev.is_none());
        }
        let ev = state.update_from_entries(&b, &biases, &policy, UserId(0), 51).unwrap();
        assert!(ev.is_some());
    }

    proptest! {
        #[test]
        fn adding_a_constant_to_every_rss_leaves_the_choice_unchanged(
            r0 in -110.0f64..-40.0,
            r1 in -110.0f64..-40.0,
            r2 in -110.0f64..-40.0,
            shift in -30.0f64..30.0,
        ) {
            let biases = BiasTable::pico_only(10.0);
            let base = [
                entry(0, CellKind::Macro, r0),
                entry(1, CellKind::Pico, r1),
                entry(2, CellKind::Macro, r2),
            ];
            let shifted: Vec<CellEntry> = base
                .iter()
                .map(|e| CellEntry { rss_dbm: e.rss_dbm + shift, ..*e })
                .collect();
            let a = choose(&base, &biases, UserId(0)).unwrap();
            let b = choose(&shifted, &biases, UserId(0)).unwrap();
            prop_assert_eq!(a.0, b.0);
        }

        #[test]
        fn growing_pico_bias_never_shrinks_the_pico_region(
            macro_rss in -100.0f64..-50.0,
            pico_rss in -110.0f64..-50.0,
            bias_lo in 0.0f64..15.0,
            extra in 0.0f64..15.0,
        ) {
            let entries = [
                entry(0, CellKind::Macro, macro_rss),
                entry(1, CellKind::Pico, pico_rss),
            ];
            let lo = choose(&entries, &BiasTable::pico_only(bias_lo), UserId(0)).unwrap();
            let hi = choose(&entries, &BiasTable::pico_only(bias_lo + extra), UserId(0)).unwrap();
            if lo.0 == CellId(1) {
                prop_assert_eq!(hi.0, CellId(1));
            }
        }

        #[test]
        fn csg_cells_never_serve_nonmembers(rss in -60.0f64..-20.0, macro_rss in -120.0f64..-70.0) {
            let entries = [
                entry(0, CellKind::Macro, macro_rss),
                CellEntry { id: CellId(9), kind: CellKind::Femto, permitted: false, rss_dbm: rss },
            ];
            let (id, _) = choose(&entries, &BiasTable::pico_only(0.0), UserId(1)).unwrap();
            prop_assert_eq!(id, CellId(0));
        }
    }
}
