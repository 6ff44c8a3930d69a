//! Report, tracker and profile files.
//!
//! Reals are printed with six decimals and counts as integers, so output is
//! byte-stable for equal inputs.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::divergence::DivergenceProfile;
use crate::error::{Error, Result};
use crate::pipeline::{CompressionTracker, ReportRow, Stage, TrackerEvent};

pub const REPORT_HEADER: &str = "step,stage,params,flops,accuracy,delta_accuracy";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    /// JSON array of row objects.
    Json,
}

impl FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(ReportFormat::Csv),
            "json" => Ok(ReportFormat::Json),
            other => Err(Error::Config(format!("unknown report format `{other}`"))),
        }
    }
}

fn real(v: f64) -> String {
    // avoid "-0.000000"
    let s = format!("{v:.6}");
    if s.trim_start_matches('-').bytes().all(|b| b == b'0' || b == b'.') {
        s.trim_start_matches('-').to_string()
    } else {
        s
    }
}

fn json_str(s: &str) -> String {
    serde_json::to_string(s).expect("strings serialise")
}

pub fn render_csv(rows: &[ReportRow]) -> String {
    let mut out = String::from(REPORT_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            r.step,
            r.stage.label(),
            r.params,
            r.flops,
            real(r.accuracy),
            real(r.delta_accuracy)
        );
    }
    out
}

pub fn render_json(rows: &[ReportRow]) -> String {
    let mut out = String::from("[\n");
    for (i, r) in rows.iter().enumerate() {
        let _ = write!(
            out,
            "  {{\"step\": {}, \"stage\": {}, \"params\": {}, \"flops\": {}, \"accuracy\": {}, \"delta_accuracy\": {}}}",
            r.step,
            json_str(r.stage.label()),
            r.params,
            r.flops,
            real(r.accuracy),
            real(r.delta_accuracy)
        );
        out.push_str(if i + 1 < rows.len() { ",\n" } else { "\n" });
    }
    out.push_str("]\n");
    out
}

pub fn write_report(rows: &[ReportRow], path: &Path, format: ReportFormat) -> Result<()> {
    let text = match format {
        ReportFormat::Csv => render_csv(rows),
        ReportFormat::Json => render_json(rows),
    };
    fs::write(path, text)?;
    Ok(())
}

/// Report rows built from a finalized tracker alone, using the counts the
/// tracker recorded.
pub fn tracker_rows(tracker: &CompressionTracker) -> Result<Vec<ReportRow>> {
    if !tracker.is_finalized() {
        return Err(Error::Tracker("tracker has no final event".into()));
    }
    let base = tracker.baseline.accuracy;
    let mut rows = vec![ReportRow {
        step: 1,
        stage: Stage::Baseline,
        params: tracker.baseline_params,
        flops: tracker.baseline_flops,
        accuracy: base,
        delta_accuracy: 0.0,
    }];
    for event in &tracker.events {
        let (stage, params, flops, metrics) = match event {
            TrackerEvent::FilterIteration {
                params, flops, metrics, ..
            } => (Stage::FilterPrune, *params, *flops, metrics),
            TrackerEvent::Removal {
                params, flops, metrics, ..
            } => (Stage::LayerTrunc, *params, *flops, metrics),
            TrackerEvent::Final {
                params, flops, metrics, ..
            } => (Stage::FinalFineTune, *params, *flops, metrics),
            _ => continue,
        };
        rows.push(ReportRow {
            step: rows.len() + 1,
            stage,
            params,
            flops,
            accuracy: metrics.accuracy,
            delta_accuracy: metrics.accuracy - base,
        });
    }
    Ok(rows)
}

pub fn save_tracker(tracker: &CompressionTracker, path: &Path) -> Result<()> {
    let mut text = serde_json::to_string_pretty(tracker)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

pub fn load_tracker(path: &Path) -> Result<CompressionTracker> {
    let text = super::read_text(path)?;
    serde_json::from_str(&text).map_err(|j| Error::Parse {
        path: path.display().to_string(),
        line: j.line(),
        detail: j.to_string(),
    })
}

/// Per-layer profile table: `layer,kind,layer_score,flow_score,trajectory_score,units`.
/// `units` is the number of scored structural units, empty for layers
/// without units.
pub fn render_profile_csv(profile: &DivergenceProfile) -> String {
    let mut out = String::from("layer,kind,layer_score,flow_score,trajectory_score,units\n");
    for i in 0..profile.len() {
        let units = profile.unit_scores[i].as_ref().map(|u| u.len().to_string()).unwrap_or_default();
        let _ = writeln!(
            out,
            "{i},{},{},{},{},{units}",
            profile.layer_kinds[i],
            real(profile.layer_scores[i]),
            real(profile.flow_scores[i]),
            real(profile.trajectory_scores[i]),
        );
    }
    out
}

/// Full profile as JSON, including unit scores.
pub fn render_profile_json(profile: &DivergenceProfile) -> String {
    let list = |v: &[f64]| v.iter().map(|x| real(*x)).collect::<Vec<_>>().join(", ");
    let mut out = String::from("{\n");
    let _ = writeln!(out, "  \"network_fingerprint\": {},", json_str(&profile.network_fingerprint));
    let _ = writeln!(out, "  \"sample_count\": {},", profile.sample_count);
    let _ = writeln!(out, "  \"normalized\": {},", profile.normalized);
    out.push_str("  \"layers\": [\n");
    for i in 0..profile.len() {
        let units = match &profile.unit_scores[i] {
            Some(u) => format!("[{}]", list(u)),
            None => "null".into(),
        };
        let _ = write!(
            out,
            "    {{\"layer\": {i}, \"kind\": {}, \"layer_score\": {}, \"flow_score\": {}, \"trajectory_score\": {}, \"unit_scores\": {units}}}",
            json_str(&profile.layer_kinds[i]),
            real(profile.layer_scores[i]),
            real(profile.flow_scores[i]),
            real(profile.trajectory_scores[i]),
        );
        out.push_str(if i + 1 < profile.len() { ",\n" } else { "\n" });
    }
    out.push_str("  ]\n}\n");
    out
}

pub fn write_profile(profile: &DivergenceProfile, path: &Path, format: ReportFormat) -> Result<()> {
    let text = match format {
        ReportFormat::Csv => render_profile_csv(profile),
        ReportFormat::Json => render_profile_json(profile),
    };
    fs::write(path, text)?;
    Ok(())
}
