use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One optimizer step. Distillation fields are absent in contrastive-only
/// runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    pub step: u64,
    pub epoch: u64,
    pub l_infonce: f64,
    pub l_selfsuper: Option<f64>,
    pub combined: f64,
    pub lr: f64,
    /// Entropy (nats) of the batch-mean teacher distribution.
    pub teacher_entropy: Option<f64>,
    pub tau: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricsLog {
    records: Vec<StepMetrics>,
}

impl MetricsLog {
    pub fn push(&mut self, m: StepMetrics) -> Result<()> {
        if let Some(last) = self.records.last() {
            if m.step <= last.step {
                return Err(Error::Contract(format!(
                    "metrics step {} does not follow step {}",
                    m.step, last.step
                )));
            }
        }
        self.records.push(m);
        Ok(())
    }

    pub fn records(&self) -> &[StepMetrics] {
        &self.records
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).expect("plain struct serializes"));
            out.push('\n');
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(self.to_jsonl().as_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut log = Self::default();
        for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let m: StepMetrics = serde_json::from_str(line).map_err(|e| Error::Parse {
                line: i + 1,
                msg: e.to_string(),
            })?;
            log.push(m)?;
        }
        Ok(log)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(step: u64) -> StepMetrics {
        StepMetrics {
            step,
            epoch: 0,
            l_infonce: 1.0,
            l_selfsuper: None,
            combined: 1.0,
            lr: 0.1,
            teacher_entropy: Some(2.0),
            tau: 0.07,
        }
    }

    #[test]
    fn steps_must_increase() {
        let mut log = MetricsLog::default();
        log.push(m(0)).unwrap();
        log.push(m(3)).unwrap();
        assert!(log.push(m(3)).is_err());
        assert_eq!(MetricsLog::parse(&log.to_jsonl()).unwrap(), log);
        assert!(log.to_jsonl().lines().next().unwrap().contains("\"l_selfsuper\":null"));
    }
}
