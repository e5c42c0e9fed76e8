//! CSV serialization of run reports and retraining traces, plus the text
//! summary table. All numeric columns are written with fixed precision so
//! identical runs produce byte-identical files.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::episode::RunReport;
use crate::error::Result;
use crate::retrain::RetrainTrace;

fn fmt_f(value: f64) -> String {
    if value.is_nan() {
        String::new()
    } else {
        format!("{value:.6}")
    }
}

fn fmt_opt(value: Option<f64>) -> String {
    value.map(|v| fmt_f(v)).unwrap_or_default()
}

/// `strategy,fold,mean_time_s,stderr_s,n_episodes,frac_drawn,mean_iou_verified`
pub fn run_reports_csv(reports: &[RunReport]) -> String {
    let mut out = String::from("strategy,fold,mean_time_s,stderr_s,n_episodes,frac_drawn,mean_iou_verified\n");
    for r in reports {
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.strategy,
            r.fold,
            fmt_f(r.mean_time_s),
            fmt_f(r.stderr_s),
            r.n_episodes,
            fmt_f(r.frac_drawn()),
            fmt_opt(r.mean_iou_verified),
        )
        .unwrap();
    }
    out
}

/// `strategy,fold,sequence,count`
pub fn composition_csv(reports: &[RunReport]) -> String {
    let mut out = String::from("strategy,fold,sequence,count\n");
    for r in reports {
        for (sequence, count) in &r.composition {
            writeln!(out, "{},{},{},{}", r.strategy, r.fold, sequence, count).unwrap();
        }
    }
    out
}

/// `cum_time_s,frac_boxes`
pub fn trace_curve_csv(trace: &RetrainTrace) -> String {
    let mut out = String::from("cum_time_s,frac_boxes\n");
    for (time, frac) in &trace.curve {
        writeln!(out, "{},{}", fmt_f(*time), fmt_f(*frac)).unwrap();
    }
    out
}

/// One row per batch or sweep phase.
pub fn trace_batches_csv(trace: &RetrainTrace) -> String {
    let mut out = String::from(
        "batch,n_episodes,mean_time_s,stderr_s,detector_strength,drawn_boxes,verified_boxes,mean_iou_verified,frac_with_verification\n",
    );
    for b in &trace.batches {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            b.batch,
            b.n_episodes,
            fmt_f(b.mean_time_s),
            fmt_f(b.stderr_s),
            fmt_f(b.detector_strength),
            b.drawn_boxes,
            b.verified_boxes,
            fmt_opt(b.mean_iou_verified),
            fmt_f(b.frac_with_verification),
        )
        .unwrap();
    }
    out
}

/// `batch,sequence,count`
pub fn trace_composition_csv(trace: &RetrainTrace) -> String {
    let mut out = String::from("batch,sequence,count\n");
    for b in &trace.batches {
        for (sequence, count) in &b.composition {
            writeln!(out, "{},{},{}", b.batch, sequence, count).unwrap();
        }
    }
    out
}

/// Pads or truncates to a fixed display width.
fn cell(s: &str, width: usize) -> String {
    format!("{s:>width$}")
}

/// Plain-text summary: one row per strategy, mean +- stderr averaged over
/// folds.
pub fn run_summary_table(reports: &[RunReport]) -> String {
    let mut strategies: Vec<String> = Vec::new();
    for r in reports {
        if !strategies.contains(&r.strategy) {
            strategies.push(r.strategy.clone());
        }
    }
    let mut out = String::new();
    writeln!(
        out,
        "{}  {}  {}  {}",
        cell("strategy", 14),
        cell("mean_time_s", 12),
        cell("stderr_s", 10),
        cell("episodes", 9)
    )
    .unwrap();
    for strategy in &strategies {
        let rows: Vec<&RunReport> = reports.iter().filter(|r| &r.strategy == strategy).collect();
        let n: usize = rows.iter().map(|r| r.n_episodes).sum();
        let mean = rows.iter().map(|r| r.mean_time_s).sum::<f64>() / rows.len() as f64;
        let stderr = rows.iter().map(|r| r.stderr_s).sum::<f64>() / rows.len() as f64;
        writeln!(
            out,
            "{}  {}  {}  {}",
            cell(strategy, 14),
            cell(&format!("{mean:.2}"), 12),
            cell(&format!("{stderr:.2}"), 10),
            cell(&n.to_string(), 9)
        )
        .unwrap();
    }
    out
}

pub fn write_text(path: &Path, content: &str) -> Result<()> {
    fs::write(path, content)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_report() -> RunReport {
        RunReport {
            strategy: "V1D".into(),
            fold: 2,
            n_episodes: 100,
            mean_time_s: 5.123456789,
            stderr_s: 0.01,
            drawn_boxes: 40,
            verified_boxes: 60,
            mean_iou_verified: Some(0.85),
            composition: vec![("V".into(), 60), ("VX".into(), 40)],
        }
    }

    #[test]
    fn csv_schemas_are_stable() {
        let csv = run_reports_csv(&[sample_report()]);
        let mut lines = csv.lines();
        assert_eq!(
            lines.next().unwrap(),
            "strategy,fold,mean_time_s,stderr_s,n_episodes,frac_drawn,mean_iou_verified"
        );
        assert_eq!(
            lines.next().unwrap(),
            "V1D,2,5.123457,0.010000,100,0.400000,0.850000"
        );

        let comp = composition_csv(&[sample_report()]);
        assert!(comp.starts_with("strategy,fold,sequence,count\n"));
        assert!(comp.contains("V1D,2,VX,40"));
    }

    #[test]
    fn missing_iou_leaves_the_cell_empty() {
        let mut report = sample_report();
        report.mean_iou_verified = None;
        let csv = run_reports_csv(&[report]);
        assert!(csv.lines().nth(1).unwrap().ends_with(','));
    }

    #[test]
    fn summary_averages_over_folds() {
        let mut a = sample_report();
        a.fold = 0;
        a.mean_time_s = 4.0;
        let mut b = sample_report();
        b.fold = 1;
        b.mean_time_s = 6.0;
        let table = run_summary_table(&[a, b]);
        assert!(table.contains("V1D"));
        assert!(table.contains("5.00"));
    }
}
