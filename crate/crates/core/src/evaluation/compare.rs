use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::EvalReport;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportDelta {
    pub class_names: Vec<String>,
    pub accuracy_before: f64,
    pub accuracy_after: f64,
    /// `after - before`.
    pub accuracy_delta: f64,
    pub f1_delta: Vec<f64>,
}

pub fn compare_reports(before: &EvalReport, after: &EvalReport) -> Result<ReportDelta> {
    if before.class_names != after.class_names {
        return Err(Error::InvalidInput(format!(
            "class sets differ: {:?} vs {:?}",
            before.class_names, after.class_names
        )));
    }
    Ok(ReportDelta {
        class_names: before.class_names.clone(),
        accuracy_before: before.accuracy,
        accuracy_after: after.accuracy,
        accuracy_delta: after.accuracy - before.accuracy,
        f1_delta: after
            .f1_per_class
            .iter()
            .zip(&before.f1_per_class)
            .map(|(a, b)| a - b)
            .collect(),
    })
}

/// Rows of per-class F1 plus accuracy, one per evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtilityTable {
    pub class_names: Vec<String>,
    pub rows: Vec<UtilityRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtilityRow {
    pub evaluation: String,
    pub f1: Vec<f64>,
    pub accuracy: f64,
}

impl UtilityTable {
    pub fn new(class_names: Vec<String>) -> Self {
        UtilityTable {
            class_names,
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, evaluation: impl Into<String>, report: &EvalReport) -> Result<()> {
        if report.class_names != self.class_names {
            return Err(Error::InvalidInput(format!(
                "report classes {:?} do not match table classes {:?}",
                report.class_names, self.class_names
            )));
        }
        self.rows.push(UtilityRow {
            evaluation: evaluation.into(),
            f1: report.f1_per_class.clone(),
            accuracy: report.accuracy,
        });
        Ok(())
    }

    pub fn header(&self) -> Vec<String> {
        let mut h = vec!["Evaluation".to_string()];
        h.extend(self.class_names.iter().cloned());
        h.push("Acc".into());
        h
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(self.header())?;
        for r in &self.rows {
            let mut rec = vec![r.evaluation.clone()];
            rec.extend(r.f1.iter().map(|v| format!("{:.4}", v)));
            rec.push(format!("{:.4}", r.accuracy));
            w.write_record(rec)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::InvalidInput(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    /// Tab-separated, two decimals.
    pub fn to_text(&self) -> String {
        let mut s = self.header().join("\t");
        s.push('\n');
        for r in &self.rows {
            s.push_str(&r.evaluation);
            for v in r.f1.iter().chain(std::iter::once(&r.accuracy)) {
                let _ = write!(s, "\t{:.2}", v);
            }
            s.push('\n');
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evaluation::evaluate;

    fn stages() -> Vec<String> {
        ["Wake", "N1", "N2", "N3", "REM"].map(String::from).to_vec()
    }

    #[test]
    fn identical_reports_have_zero_delta() {
        let r = evaluate(&[0, 1, 2, 3, 4, 4], &[0, 1, 2, 3, 4, 3], &stages()).unwrap();
        let d = compare_reports(&r, &r).unwrap();
        assert_eq!(d.accuracy_delta, 0.0);
        assert!(d.f1_delta.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn class_mismatch_is_an_error() {
        let a = evaluate(&[0], &[0], &stages()).unwrap();
        let b = evaluate(&[0], &[0], &stages()[..3]).unwrap();
        assert!(compare_reports(&a, &b).is_err());
        let mut t = UtilityTable::new(stages());
        assert!(t.push("x", &b).is_err());
    }

    #[test]
    fn table_layout() {
        let orig = evaluate(&[0, 1, 2, 3, 4], &[0, 1, 2, 3, 4], &stages()).unwrap();
        let anon = evaluate(&[0, 2, 2, 3, 4], &[0, 1, 2, 3, 4], &stages()).unwrap();
        let mut t = UtilityTable::new(stages());
        t.push("Utility (orig)", &orig).unwrap();
        t.push("Utility (anon)", &anon).unwrap();
        let text = t.to_text();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "Evaluation\tWake\tN1\tN2\tN3\tREM\tAcc");
        assert_eq!(lines[1], "Utility (orig)\t1.00\t1.00\t1.00\t1.00\t1.00\t1.00");
        assert_eq!(lines[2], "Utility (anon)\t1.00\t0.00\t0.67\t1.00\t1.00\t0.80");
        let csv = t.to_csv().unwrap();
        assert!(csv.starts_with("Evaluation,Wake,N1,N2,N3,REM,Acc\n"));
        assert_eq!(csv.lines().count(), 3);
    }
}
