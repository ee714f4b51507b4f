use std::fmt::Write as _;

use serde::Deserialize;

use super::{EvalError, LabeledScore, MetricsSummary, Truth};

#[derive(Deserialize)]
struct Row {
    sample_id: String,
    truth: String,
    score: f64,
}

/// Reads `sample_id,truth,score` rows (header required). `truth` accepts
/// `healthy`/`wssv`, `0`/`1` or `negative`/`positive`.
pub fn read_labeled_scores(reader: impl std::io::Read) -> Result<Vec<LabeledScore>, EvalError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let mut out = Vec::new();
    for (line, row) in rdr.deserialize::<Row>().enumerate() {
        let row = row?;
        let truth: Truth = row
            .truth
            .parse()
            .map_err(|e| EvalError::Input(format!("row {}: {e}", line + 1)))?;
        let item = LabeledScore::new(row.sample_id, truth, row.score)
            .map_err(|e| EvalError::Input(format!("row {}: {e}", line + 1)))?;
        out.push(item);
    }
    Ok(out)
}

/// Formats a summary as a table of `mean ± stddev` cells, two decimals.
pub fn render_table(summary: &MetricsSummary) -> String {
    let mut s = String::new();
    let (m, d) = (&summary.mean, &summary.stddev);
    let _ = writeln!(s, "{:<8} {:<12} {:<12} {:<12}", "folds", "F1", "AUC", "FNR");
    let _ = writeln!(
        s,
        "{:<8} {:<12} {:<12} {:<12}",
        summary.per_fold.len(),
        format!("{:.2} ± {:.2}", m.f1, d.f1),
        format!("{:.2} ± {:.2}", m.auc, d.auc),
        format!("{:.2} ± {:.2}", m.fnr, d.fnr),
    );
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::{aggregate_folds, FoldMetrics};

    #[test]
    fn parses_all_truth_spellings() {
        let csv = "sample_id,truth,score\na,wssv,0.9\nb,0,0.1\nc,positive,0.5\nd,Healthy,0.2\n";
        let rows = read_labeled_scores(csv.as_bytes()).unwrap();
        let truths: Vec<Truth> = rows.iter().map(|r| r.truth).collect();
        assert_eq!(truths, [Truth::Wssv, Truth::Healthy, Truth::Wssv, Truth::Healthy]);
    }

    #[test]
    fn rejects_bad_rows() {
        assert!(read_labeled_scores("sample_id,truth,score\na,maybe,0.5\n".as_bytes()).is_err());
        assert!(read_labeled_scores("sample_id,truth,score\na,wssv,1.5\n".as_bytes()).is_err());
        assert!(read_labeled_scores("sample_id,truth,score\na,wssv,x\n".as_bytes()).is_err());
    }

    #[test]
    fn table_cells() {
        let s = aggregate_folds(&[FoldMetrics::new(0.84, 1.0, 0.0), FoldMetrics::new(1.0, 1.0, 0.0)]).unwrap();
        let t = render_table(&s);
        assert!(t.contains("0.92 ± 0.08"), "{t}");
        assert!(t.contains("1.00 ± 0.00"), "{t}");
    }
}
