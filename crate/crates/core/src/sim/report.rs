//! Run reports and their table / JSON renderings.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::broker::ErrorCode;
use crate::qoc::ContextSample;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PullKind {
    Current,
    Last,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PullOutcome {
    pub at: i64,
    pub kind: PullKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sample: Option<ContextSample>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<ErrorCode>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Notified {
    pub service_id: String,
    pub produced_at: i64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TopicReport {
    /// Selected service after each change, starting with the first
    /// subscription.
    pub selection_history: Vec<Option<String>>,
    pub switches: u64,
    pub notifications: Vec<Notified>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub last_notified: Option<ContextSample>,
    /// Advisories that named this topic.
    pub advisories: u64,
    pub pulls: Vec<PullOutcome>,
}

impl TopicReport {
    pub fn notification_count(&self) -> usize {
        self.notifications.len()
    }

    pub fn current_selection(&self) -> Option<&str> {
        self.selection_history.last().and_then(|s| s.as_deref())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ServiceReport {
    pub publications: u64,
    pub pulls: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub seed: u64,
    pub events: usize,
    /// consumer -> topic -> report
    pub consumers: BTreeMap<String, BTreeMap<String, TopicReport>>,
    pub services: BTreeMap<String, ServiceReport>,
    pub selection_switches: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Table,
    Json,
}

pub const CONSUMER_COLUMNS: [&str; 7] = ["consumer", "topic", "selected", "switches", "notifications", "advisories", "pulls"];
pub const SERVICE_COLUMNS: [&str; 3] = ["service", "publications", "pulls"];

pub fn emit_report(report: &RunReport, format: ReportFormat) -> String {
    match format {
        ReportFormat::Json => serde_json::to_string_pretty(report).expect("report serializes"),
        ReportFormat::Table => {
            let rows: Vec<Vec<String>> = report
                .consumers
                .iter()
                .flat_map(|(consumer, topics)| {
                    topics.iter().map(move |(topic, r)| {
                        vec![
                            consumer.clone(),
                            topic.clone(),
                            r.current_selection().unwrap_or("-").to_string(),
                            r.switches.to_string(),
                            r.notification_count().to_string(),
                            r.advisories.to_string(),
                            r.pulls.len().to_string(),
                        ]
                    })
                })
                .collect();
            let mut out = table(&CONSUMER_COLUMNS, &rows);
            out.push('\n');
            let rows: Vec<Vec<String>> = report
                .services
                .iter()
                .map(|(id, s)| vec![id.clone(), s.publications.to_string(), s.pulls.to_string()])
                .collect();
            out.push_str(&table(&SERVICE_COLUMNS, &rows));
            out
        }
    }
}

pub fn parse_report(text: &str) -> Result<RunReport, serde_json::Error> {
    serde_json::from_str(text)
}

/// Left-aligned columns separated by two spaces.
pub fn table(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = header.iter().map(|h| h.len()).collect();
    for row in rows {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.len());
        }
    }
    let mut out = String::new();
    let mut line = |cells: &mut dyn Iterator<Item = &str>| {
        let parts: Vec<String> = cells
            .zip(&widths)
            .map(|(c, w)| format!("{c:<w$}"))
            .collect();
        let _ = writeln!(out, "{}", parts.join("  ").trim_end());
    };
    line(&mut header.iter().copied());
    for row in rows {
        line(&mut row.iter().map(String::as_str));
    }
    out
}
