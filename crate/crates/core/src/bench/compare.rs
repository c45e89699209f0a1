use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use super::experiment::RunRecord;
use crate::continual::Strategy;
use crate::error::{Error, Result};
use crate::graph::Scenario;

/// Mean and spread of one strategy's runs on one stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategySummary {
    pub dataset: String,
    pub scenario: Scenario,
    pub tasks: usize,
    pub classes_per_task: usize,
    pub strategy: Strategy,
    pub runs: usize,
    pub ap_mean: f64,
    pub ap_std: f64,
    pub af_mean: Option<f64>,
    pub af_std: Option<f64>,
}

impl StrategySummary {
    fn stream_key(&self) -> (&str, Scenario, usize, usize) {
        (&self.dataset, self.scenario, self.tasks, self.classes_per_task)
    }
}

/// Sample mean and standard deviation (`n - 1` denominator, 0 for one value).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Groups records by strategy, in order of first appearance.
pub fn summarize(records: &[RunRecord]) -> Result<Vec<StrategySummary>> {
    let mut groups: Vec<(Strategy, Vec<&RunRecord>)> = Vec::new();
    for r in records {
        match groups.iter_mut().find(|(s, _)| *s == r.strategy) {
            Some((_, g)) => g.push(r),
            None => groups.push((r.strategy, vec![r])),
        }
    }
    let mut out = Vec::with_capacity(groups.len());
    for (strategy, runs) in groups {
        let first = runs[0];
        let key = |r: &RunRecord| (r.dataset.clone(), r.scenario, r.tasks, r.classes_per_task);
        if runs.iter().any(|r| key(r) != key(first)) {
            return Err(Error::invalid(format!("{strategy} runs come from different streams")));
        }
        let aps: Vec<f64> = runs.iter().map(|r| r.ap).collect();
        let afs: Vec<f64> = runs.iter().filter_map(|r| r.af).collect();
        let (af_mean, af_std) = match afs.len() {
            0 => (None, None),
            n if n == runs.len() => {
                let (m, s) = mean_std(&afs);
                (Some(m), Some(s))
            }
            _ => return Err(Error::invalid(format!("{strategy} mixes defined and undefined forgetting"))),
        };
        let (ap_mean, ap_std) = mean_std(&aps);
        out.push(StrategySummary {
            dataset: first.dataset.clone(),
            scenario: first.scenario,
            tasks: first.tasks,
            classes_per_task: first.classes_per_task,
            strategy,
            runs: runs.len(),
            ap_mean,
            ap_std,
            af_mean,
            af_std,
        });
    }
    Ok(out)
}

/// A fraction as a percentage with one decimal; never prints `-0.0`.
pub fn percent(v: f64) -> String {
    let s = format!("{:.1}", v * 100.0);
    if s == "-0.0" {
        "0.0".to_string()
    } else {
        s
    }
}

fn optional_percent(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), percent)
}

pub fn summary_csv(summaries: &[StrategySummary]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| Error::invalid(format!("csv: {e}"));
    w.write_record(["dataset", "scenario", "T", "strategy", "runs", "ap_mean", "ap_std", "af_mean", "af_std"])
        .map_err(csv_err)?;
    for s in summaries {
        w.write_record([
            s.dataset.clone(),
            s.scenario.to_string(),
            s.tasks.to_string(),
            s.strategy.to_string(),
            s.runs.to_string(),
            percent(s.ap_mean),
            percent(s.ap_std),
            optional_percent(s.af_mean),
            optional_percent(s.af_std),
        ])
        .map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::invalid(format!("csv: {e}")))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// Strategy rows on one stream, best AP first.
#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonTable {
    pub rows: Vec<StrategySummary>,
}

/// Summarizes each result set and ranks strategies by mean AP. All sets must
/// come from the same stream.
pub fn compare_strategies(sets: &[Vec<RunRecord>]) -> Result<ComparisonTable> {
    let mut rows = Vec::new();
    for set in sets {
        if set.is_empty() {
            return Err(Error::invalid("empty result set"));
        }
        rows.extend(summarize(set)?);
    }
    if rows.is_empty() {
        return Err(Error::invalid("nothing to compare"));
    }
    if let Some(bad) = rows.iter().find(|r| r.stream_key() != rows[0].stream_key()) {
        return Err(Error::invalid(format!(
            "{} ran on a different stream than {}",
            bad.strategy, rows[0].strategy
        )));
    }
    for (i, r) in rows.iter().enumerate() {
        if rows[..i].iter().any(|o| o.strategy == r.strategy) {
            return Err(Error::invalid(format!("{} appears in more than one result set", r.strategy)));
        }
    }
    rows.sort_by(|a, b| {
        b.ap_mean
            .partial_cmp(&a.ap_mean)
            .unwrap_or(Ordering::Equal)
            .then(a.strategy.cmp(&b.strategy))
    });
    Ok(ComparisonTable { rows })
}

impl ComparisonTable {
    /// Markdown table with the best mean per column in bold.
    pub fn to_markdown(&self) -> String {
        let best_ap = self.rows.iter().map(|r| percent(r.ap_mean)).max_by(by_value);
        let best_af = self.rows.iter().filter_map(|r| r.af_mean.map(percent)).max_by(by_value);
        let cell = |mean: Option<f64>, std: Option<f64>, best: &Option<String>| match (mean, std) {
            (Some(m), Some(s)) => {
                let text = format!("{} ± {}", percent(m), percent(s));
                if best.as_deref() == Some(percent(m).as_str()) {
                    format!("**{text}**")
                } else {
                    text
                }
            }
            _ => "n/a".to_string(),
        };
        let first = &self.rows[0];
        let mut out = format!(
            "{} ({}, {} tasks)\n\n| Strategy | AP (%) | AF (%) | Runs |\n|---|---|---|---|\n",
            first.dataset, first.scenario, first.tasks
        );
        for r in &self.rows {
            out.push_str(&format!(
                "| {} | {} | {} | {} |\n",
                r.strategy,
                cell(Some(r.ap_mean), Some(r.ap_std), &best_ap),
                cell(r.af_mean, r.af_std, &best_af),
                r.runs
            ));
        }
        out
    }
}

fn by_value(a: &String, b: &String) -> Ordering {
    let num = |s: &String| s.parse::<f64>().unwrap_or(f64::NEG_INFINITY);
    num(a).partial_cmp(&num(b)).unwrap_or(Ordering::Equal)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(strategy: Strategy, seed: u64, matrix: &[f64]) -> RunRecord {
        let m = crate::metrics::AccuracyMatrix::from_lower_triangle(2, matrix).unwrap();
        RunRecord {
            dataset: "toy".into(),
            scenario: Scenario::Gugc,
            strategy,
            seed,
            tasks: 2,
            classes_per_task: 2,
            matrix: matrix.to_vec(),
            ap: crate::metrics::average_performance(&m).unwrap(),
            af: (strategy != Strategy::Independent).then(|| crate::metrics::average_forgetting(&m).unwrap()),
            steps: 10,
        }
    }

    #[test]
    fn mean_and_sample_std() {
        assert_eq!(mean_std(&[0.5]), (0.5, 0.0));
        let (m, s) = mean_std(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m, 2.5);
        assert!((s - (5.0f64 / 3.0).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn percent_formatting() {
        assert_eq!(percent(0.76666), "76.7");
        assert_eq!(percent(-0.0001), "0.0");
        assert_eq!(percent(-0.475), "-47.5");
    }

    #[test]
    fn single_strategy_gives_one_row() {
        let t = compare_strategies(&[vec![rec(Strategy::Er, 0, &[0.9, 0.5, 0.8])]]).unwrap();
        assert_eq!(t.rows.len(), 1);
        assert!(t.to_markdown().contains("| er | **65.0 ± 0.0** | **-40.0 ± 0.0** | 1 |"));
    }

    #[test]
    fn rows_sorted_by_ap_and_best_bolded() {
        let sets = vec![
            vec![rec(Strategy::Finetune, 0, &[0.9, 0.0, 0.9]), rec(Strategy::Finetune, 1, &[0.8, 0.1, 0.9])],
            vec![rec(Strategy::Joint, 0, &[0.9, 0.85, 0.9])],
            vec![rec(Strategy::Independent, 0, &[0.9, 0.9, 0.7])],
            vec![rec(Strategy::Er, 0, &[0.9, 0.6, 0.8])],
        ];
        let t = compare_strategies(&sets).unwrap();
        let order: Vec<Strategy> = t.rows.iter().map(|r| r.strategy).collect();
        let mut brute = t.rows.clone();
        brute.sort_by(|a, b| b.ap_mean.total_cmp(&a.ap_mean));
        assert_eq!(order, brute.iter().map(|r| r.strategy).collect::<Vec<_>>());
        assert_eq!(order[0], Strategy::Joint);
        let md = t.to_markdown();
        assert!(md.contains("| joint | **87.5 ± 0.0** | **-5.0 ± 0.0** |"), "{md}");
        assert!(md.contains("| independent | 80.0 ± 0.0 | n/a |"), "{md}");
    }

    #[test]
    fn identical_sets_give_identical_rows() {
        let a = summarize(&[rec(Strategy::Er, 0, &[0.9, 0.6, 0.8])]).unwrap();
        let b = summarize(&[rec(Strategy::Er, 0, &[0.9, 0.6, 0.8])]).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn mismatched_streams_rejected() {
        let mut other = rec(Strategy::Joint, 0, &[0.9, 0.85, 0.9]);
        other.dataset = "elsewhere".into();
        assert!(compare_strategies(&[vec![rec(Strategy::Er, 0, &[0.9, 0.6, 0.8])], vec![other]]).is_err());
        assert!(compare_strategies(&[vec![rec(Strategy::Er, 0, &[0.9, 0.6, 0.8])], vec![]]).is_err());
    }

    #[test]
    fn csv_marks_independent_forgetting_na() {
        let s = summarize(&[rec(Strategy::Independent, 0, &[0.9, 0.9, 0.7])]).unwrap();
        let csv = summary_csv(&s).unwrap();
        assert_eq!(
            csv,
            "dataset,scenario,T,strategy,runs,ap_mean,ap_std,af_mean,af_std\ntoy,gugc,2,independent,1,80.0,0.0,n/a,n/a\n"
        );
    }
}
