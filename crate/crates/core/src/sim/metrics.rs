//! Run metrics: line-delimited JSON records with a versioned header.
//!
//! In deterministic mode every field is a pure function of config + seed, so
//! two identical runs produce byte-identical files. Wall-clock timings are
//! only emitted in wall-clock mode.

use serde::{Deserialize, Serialize};

pub const METRICS_FORMAT: &str = "pannav-metrics";
pub const METRICS_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum MetricsRecord {
    Header {
        format: String,
        version: u32,
        scenario: String,
        seed: u64,
        deterministic: bool,
    },
    Cycle {
        cycle: u64,
        stamp: f64,
        decision: String,
        /// None encodes "no candidate" (planning failed or was skipped).
        candidate_cost: Option<f64>,
        /// None encodes "no current path" or an infinite remaining cost.
        remaining_cost: Option<f64>,
        plan_iterations: u32,
        #[serde(skip_serializing_if = "Option::is_none")]
        plan_wall_ms: Option<f64>,
    },
    Summary {
        ticks: u64,
        cycles: u64,
        replan_count: u64,
        switch_count: u64,
        keep_count: u64,
        stop_count: u64,
        no_path_count: u64,
        violations: u64,
        min_clearance: Option<f64>,
        goal_reached: bool,
        time_to_goal: Option<f64>,
    },
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunMetrics {
    pub records: Vec<MetricsRecord>,
}

impl RunMetrics {
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).expect("metrics serialize"));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(text: &str) -> Result<Self, serde_json::Error> {
        let mut records = Vec::new();
        for line in text.lines() {
            if line.trim().is_empty() {
                continue;
            }
            records.push(serde_json::from_str(line)?);
        }
        Ok(Self { records })
    }

    pub fn summary(&self) -> Option<&MetricsRecord> {
        self.records
            .iter()
            .find(|r| matches!(r, MetricsRecord::Summary { .. }))
    }

    pub fn cycles(&self) -> impl Iterator<Item = &MetricsRecord> {
        self.records
            .iter()
            .filter(|r| matches!(r, MetricsRecord::Cycle { .. }))
    }
}

/// Decision-log record: one line per planning cycle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionRecord {
    pub cycle: u64,
    pub decision: String,
    pub candidate_cost: Option<f64>,
    pub remaining_cost: Option<f64>,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn jsonl_roundtrip() {
        let m = RunMetrics {
            records: vec![
                MetricsRecord::Header {
                    format: METRICS_FORMAT.into(),
                    version: METRICS_VERSION,
                    scenario: "t".into(),
                    seed: 7,
                    deterministic: true,
                },
                MetricsRecord::Cycle {
                    cycle: 0,
                    stamp: 0.0,
                    decision: "switch".into(),
                    candidate_cost: Some(12.5),
                    remaining_cost: None,
                    plan_iterations: 800,
                    plan_wall_ms: None,
                },
                MetricsRecord::Summary {
                    ticks: 100,
                    cycles: 10,
                    replan_count: 10,
                    switch_count: 1,
                    keep_count: 9,
                    stop_count: 0,
                    no_path_count: 0,
                    violations: 0,
                    min_clearance: Some(2.5),
                    goal_reached: true,
                    time_to_goal: Some(9.9),
                },
            ],
        };
        let text = m.to_jsonl();
        let back = RunMetrics::from_jsonl(&text).unwrap();
        assert_eq!(m, back);
        assert_eq!(text, back.to_jsonl());
    }
}
