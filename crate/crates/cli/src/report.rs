//! CSV reports. Floats use the shortest round-trip representation so
//! identical runs give identical bytes.

use conformal_ood::io::atomic_write;
use conformal_ood::metrics::{EvaluationReport, FdrSweepRow};
use std::path::Path;

use crate::pipeline::{split_name, DetectRow, HistReport};
use crate::CliError;

fn finish(mut w: csv::Writer<Vec<u8>>) -> Vec<u8> {
    w.flush().expect("in-memory writer");
    w.into_inner().expect("in-memory writer")
}

fn num(x: f64) -> String {
    format!("{x:?}")
}

pub fn detect_csv(rows: &[DetectRow], epsilons: &[f64]) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec![
        "id".to_string(),
        "split".into(),
        "score".into(),
        "p_value".into(),
    ];
    header.extend(epsilons.iter().map(|e| format!("ood@{}", num(*e))));
    w.write_record(&header).expect("in-memory writer");
    for r in rows {
        let mut rec = vec![
            r.id.clone(),
            split_name(r.split).into(),
            num(r.score),
            num(r.p_value),
        ];
        rec.extend(
            r.is_ood
                .iter()
                .map(|&b| if b { "1" } else { "0" }.to_string()),
        );
        w.write_record(&rec).expect("in-memory writer");
    }
    finish(w)
}

pub fn evaluate_csv(reports: &[(usize, EvaluationReport)]) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["n", "metric", "value"])
        .expect("in-memory writer");
    for (n, r) in reports {
        let n = n.to_string();
        let tnr = format!("tnr_at_tpr{}", num(r.tpr_level));
        for (metric, value) in [
            ("auroc", num(r.auroc)),
            (tnr.as_str(), num(r.tnr_at_level)),
            ("n_id", r.n_id.to_string()),
            ("n_ood", r.n_ood.to_string()),
        ] {
            w.write_record([n.as_str(), metric, value.as_str()])
                .expect("in-memory writer");
        }
    }
    finish(w)
}

pub fn fdr_csv(rows: &[FdrSweepRow]) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["epsilon", "replicate_id", "fdr"])
        .expect("in-memory writer");
    for row in rows {
        for (r, fdr) in row.replicate_fdrs.iter().enumerate() {
            w.write_record([num(row.epsilon), r.to_string(), num(*fdr)])
                .expect("in-memory writer");
        }
    }
    finish(w)
}

pub fn hist_csv(report: &HistReport) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["kind", "p_value", "value"])
        .expect("in-memory writer");
    let atoms = (report.k + 1) as f64;
    for (j, count) in report.counts.iter().enumerate() {
        w.write_record([
            "atom".to_string(),
            num((j + 1) as f64 / atoms),
            count.to_string(),
        ])
        .expect("in-memory writer");
    }
    w.write_record([
        "chi_square".to_string(),
        String::new(),
        num(report.chi_square),
    ])
    .expect("in-memory writer");
    w.write_record(["dof".to_string(), String::new(), report.dof().to_string()])
        .expect("in-memory writer");
    finish(w)
}

pub fn write(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    atomic_write(path, bytes).map_err(CliError::from)
}
