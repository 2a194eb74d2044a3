//! Run reports: line-delimited records, one per iteration, plus a summary
//! footer. Reports never contain secrets; endpoints and keys are not part
//! of any record type written here.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::memory::Outcome;
use crate::planner::ActionPlan;

use super::SessionError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    DurationElapsed,
    EnvDisconnect,
    FatalError,
}

/// One loop iteration's outcome, as written to the report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub index: u64,
    pub plan: Option<ActionPlan>,
    pub outcome: Outcome,
    pub memory_id: String,
    pub latency_ms: u64,
    pub gateway_calls: u64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Footer {
    agent_name: String,
    personality: String,
    iterations: u64,
    started_ms: u64,
    ended_ms: u64,
    stop_reason: StopReason,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    stop_detail: Option<String>,
}

/// The full result of one testing session.
#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub agent_name: String,
    pub personality: String,
    pub iterations: Vec<IterationRecord>,
    pub started_ms: u64,
    pub ended_ms: u64,
    pub stop_reason: StopReason,
    pub stop_detail: Option<String>,
}

impl RunReport {
    /// Serialize as line-delimited records: every iteration, then the
    /// summary footer.
    pub fn to_lines(&self) -> String {
        let mut out = String::new();
        for record in &self.iterations {
            out.push_str(&serde_json::to_string(record).expect("record serializes"));
            out.push('\n');
        }
        let footer = Footer {
            agent_name: self.agent_name.clone(),
            personality: self.personality.clone(),
            iterations: self.iterations.len() as u64,
            started_ms: self.started_ms,
            ended_ms: self.ended_ms,
            stop_reason: self.stop_reason,
            stop_detail: self.stop_detail.clone(),
        };
        out.push_str(&serde_json::to_string(&footer).expect("footer serializes"));
        out.push('\n');
        out
    }
}

/// Write the report file. An I/O failure here never loses run data; the
/// memory store already holds every record.
pub fn write_report(report: &RunReport, path: &Path) -> Result<(), SessionError> {
    std::fs::write(path, report.to_lines()).map_err(|source| SessionError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Re-parse a written report (test harnesses and tooling).
pub fn parse_report(text: &str) -> Result<RunReport, String> {
    let lines: Vec<&str> = text.lines().filter(|l| !l.trim().is_empty()).collect();
    let (footer_line, record_lines) = lines.split_last().ok_or("empty report")?;
    let footer: Footer = serde_json::from_str(footer_line).map_err(|e| format!("footer: {e}"))?;
    let mut iterations = Vec::with_capacity(record_lines.len());
    for (idx, line) in record_lines.iter().enumerate() {
        let record: IterationRecord =
            serde_json::from_str(line).map_err(|e| format!("line {}: {e}", idx + 1))?;
        iterations.push(record);
    }
    if iterations.len() as u64 != footer.iterations {
        return Err(format!(
            "footer claims {} iterations, found {}",
            footer.iterations,
            iterations.len()
        ));
    }
    Ok(RunReport {
        agent_name: footer.agent_name,
        personality: footer.personality,
        iterations,
        started_ms: footer.started_ms,
        ended_ms: footer.ended_ms,
        stop_reason: footer.stop_reason,
        stop_detail: footer.stop_detail,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> RunReport {
        RunReport {
            agent_name: "a1".into(),
            personality: "caution".into(),
            iterations: (1..=3)
                .map(|i| IterationRecord {
                    index: i,
                    plan: None,
                    outcome: if i == 2 {
                        Outcome::Failure
                    } else {
                        Outcome::Success
                    },
                    memory_id: format!("m{i}"),
                    latency_ms: 5,
                    gateway_calls: 3,
                    error: (i == 2).then(|| "boom".to_string()),
                })
                .collect(),
            started_ms: 100,
            ended_ms: 200,
            stop_reason: StopReason::DurationElapsed,
            stop_detail: None,
        }
    }

    #[test]
    fn lines_count_is_iterations_plus_footer() {
        let report = sample();
        assert_eq!(report.to_lines().lines().count(), 4);
    }

    #[test]
    fn report_round_trips_field_equal() {
        let report = sample();
        let parsed = parse_report(&report.to_lines()).unwrap();
        assert_eq!(parsed, report);
    }

    #[test]
    fn footer_mismatch_detected() {
        let report = sample();
        let mut text = report.to_lines();
        // Drop the first iteration line.
        text = text.lines().skip(1).collect::<Vec<_>>().join("\n");
        assert!(parse_report(&text).is_err());
    }
}
