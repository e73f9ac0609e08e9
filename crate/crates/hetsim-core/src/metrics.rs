//! Result accumulation and serialization.
//!
//! The report mirrors the evaluation's comparison table: handover and outage
//! counts, femto throughput during triggered windows (absolute and relative
//! to a paired no-coordination baseline), pedestrian and femto-tier sum
//! throughputs, and the coordination-action rate. CSV output is UTF-8 with a
//! header row, `.` decimal separator, two decimals for throughputs and plain
//! integers for counts.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::types::{CellId, UserId};

/// Raw per-run tallies the engine accumulates.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Accumulators {
    pub duration_ms: u64,
    pub femto_count: usize,
    pub macro_pico_handovers: u64,
    pub pue_outages: u64,
    pub mue_outages: u64,
    /// Delivered bits per pedestrian user.
    pub per_user_bits: BTreeMap<UserId, f64>,
    /// Delivered bits per femtocell (reference home user).
    pub per_femto_bits: BTreeMap<CellId, f64>,
    /// Femto bits delivered while a trigger was active on the femto.
    pub window_bits: f64,
    /// Total triggered-window time across femtos, ms.
    pub window_ms: u64,
    /// Coordination actions applied across all femtos.
    pub total_actions: u64,
}

/// The finalized metric suite of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub macro_pico_handovers: u64,
    pub pue_outages: u64,
    pub mue_outages: u64,
    /// Mean femto throughput during triggered windows, Mbps.
    pub femto_eicic_tp_gain_mbps: f64,
    /// Same windows relative to the paired baseline run, percent. Present
    /// only when a baseline was supplied.
    pub femto_eicic_tp_gain_percent: Option<f64>,
    /// Mean summed throughput of the pedestrian users, kbps.
    pub pedestrian_sum_tp_kbps: f64,
    /// Mean summed throughput of the femtocell tier, Mbps.
    pub femto_tier_sum_tp_mbps: f64,
    /// Coordination actions per femtocell per 10 minutes.
    pub eicic_actions_per_femto_per_10min: f64,
}

/// A decimated per-user SINR time series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SinrTrace {
    pub user: UserId,
    /// `(time_ms, sinr_db)`, strictly increasing timestamps.
    pub samples: Vec<(u64, f64)>,
}

impl SinrTrace {
    /// SINR at the latest sample at or before `time_ms`.
    pub fn at(&self, time_ms: u64) -> Option<f64> {
        match self.samples.binary_search_by_key(&time_ms, |s| s.0) {
            Ok(i) => Some(self.samples[i].1),
            Err(0) => None,
            Err(i) => Some(self.samples[i - 1].1),
        }
    }
}

/// Produces the report from raw tallies, optionally pairing against a
/// baseline run for the gain percentage.
pub fn finalize(acc: &Accumulators, baseline: Option<&Accumulators>) -> MetricsReport {
    let duration_s = acc.duration_ms as f64 / 1000.0;
    let window_s = acc.window_ms as f64 / 1000.0;
    let gain_mbps = if window_s > 0.0 {
        acc.window_bits / window_s / 1e6
    } else {
        0.0
    };
    let gain_percent = baseline.and_then(|b| {
        if b.window_bits > 0.0 {
            Some(acc.window_bits / b.window_bits * 100.0)
        } else {
            None
        }
    });
    let pedestrian_kbps = if duration_s > 0.0 {
        acc.per_user_bits.values().sum::<f64>() / duration_s / 1e3
    } else {
        0.0
    };
    let femto_mbps = if duration_s > 0.0 {
        acc.per_femto_bits.values().sum::<f64>() / duration_s / 1e6
    } else {
        0.0
    };
    let actions_rate = if acc.femto_count > 0 && duration_s > 0.0 {
        acc.total_actions as f64 / acc.femto_count as f64 / (duration_s / 600.0)
    } else {
        0.0
    };
    MetricsReport {
        macro_pico_handovers: acc.macro_pico_handovers,
        pue_outages: acc.pue_outages,
        mue_outages: acc.mue_outages,
        femto_eicic_tp_gain_mbps: gain_mbps,
        femto_eicic_tp_gain_percent: gain_percent,
        pedestrian_sum_tp_kbps: pedestrian_kbps,
        femto_tier_sum_tp_mbps: femto_mbps,
        eicic_actions_per_femto_per_10min: actions_rate,
    }
}

pub const METRICS_CSV_HEADER: &str = "run,macro_pico_handovers,pue_outages,mue_outages,\
femto_eicic_tp_gain_mbps,femto_eicic_tp_gain_percent,pedestrian_sum_tp_kbps,\
femto_tier_sum_tp_mbps,eicic_actions_per_femto_per_10min";

fn metrics_row(label: &str, r: &MetricsReport) -> String {
    let percent = r
        .femto_eicic_tp_gain_percent
        .map(|p| format!("{p:.2}"))
        .unwrap_or_default();
    format!(
        "{},{},{},{},{:.2},{},{:.2},{:.2},{:.2}",
        label,
        r.macro_pico_handovers,
        r.pue_outages,
        r.mue_outages,
        r.femto_eicic_tp_gain_mbps,
        percent,
        r.pedestrian_sum_tp_kbps,
        r.femto_tier_sum_tp_mbps,
        r.eicic_actions_per_femto_per_10min
    )
}

/// Writes `metrics.csv` with one row per labeled run, in the given order.
pub fn write_metrics_csv(path: &Path, rows: &[(String, MetricsReport)]) -> std::io::Result<()> {
    let mut out = String::with_capacity(256 * (rows.len() + 1));
    out.push_str(METRICS_CSV_HEADER);
    out.push('\n');
    for (label, report) in rows {
        out.push_str(&metrics_row(label, report));
        out.push('\n');
    }
    atomic_write(path, out.as_bytes())
}

/// Writes one `trace_<user>.csv` per trace into `dir`.
pub fn write_traces(dir: &Path, traces: &[SinrTrace]) -> std::io::Result<()> {
    for trace in traces {
        let mut out = String::with_capacity(16 * trace.samples.len() + 16);
        out.push_str("time_ms,sinr_db\n");
        for (t, sinr) in &trace.samples {
            out.push_str(&format!("{t},{sinr:.3}\n"));
        }
        atomic_write(&dir.join(format!("trace_{}.csv", trace.user.0)), out.as_bytes())?;
    }
    Ok(())
}

/// Writes a single-run `metrics.csv` plus per-user traces under `out_dir`.
pub fn emit_csv(
    label: &str,
    report: &MetricsReport,
    traces: &[SinrTrace],
    out_dir: &Path,
) -> std::io::Result<()> {
    std::fs::create_dir_all(out_dir)?;
    write_metrics_csv(
        &out_dir.join("metrics.csv"),
        &[(label.to_string(), report.clone())],
    )?;
    write_traces(out_dir, traces)
}

// Write through a temp file so an error never leaves a partial artifact.
fn atomic_write(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let tmp = path.with_extension("tmp");
    {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    std::fs::rename(&tmp, path)
}
