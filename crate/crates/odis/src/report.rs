//! Plot-ready CSV tables.

use odis_core::diagnostics::{CorrelationMatrix, DistanceStats, DistributionReport, DISTANCE_BINS};
use odis_core::selector::UpsetCell;

fn writer() -> csv::Writer<Vec<u8>> {
    csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new())
}

fn finish(w: csv::Writer<Vec<u8>>) -> Vec<u8> {
    w.into_inner().expect("in-memory CSV")
}

fn row<I, S>(w: &mut csv::Writer<Vec<u8>>, fields: I)
where
    I: IntoIterator<Item = S>,
    S: AsRef<[u8]>,
{
    w.write_record(fields).expect("in-memory CSV");
}

/// One row per row label; a trailing column flags degenerate series.
pub fn correlation_csv(m: &CorrelationMatrix) -> Vec<u8> {
    let mut w = writer();
    let mut header = vec!["label".to_string()];
    header.extend(m.col_labels.iter().cloned());
    header.push("degenerate".into());
    row(&mut w, &header);
    for (i, label) in m.row_labels.iter().enumerate() {
        let mut r = vec![label.clone()];
        r.extend(m.values[i].iter().map(|v| v.to_string()));
        r.push(m.row_degenerate[i].to_string());
        row(&mut w, &r);
    }
    finish(w)
}

pub fn upset_label(components: &[usize]) -> String {
    components
        .iter()
        .map(|c| format!("PC{}", c + 1))
        .collect::<Vec<_>>()
        .join("&")
}

pub fn upset_csv(cells: &[UpsetCell]) -> Vec<u8> {
    let mut w = writer();
    row(&mut w, ["components", "degree", "docs", "tokens"]);
    for c in cells {
        row(
            &mut w,
            [
                upset_label(&c.components),
                c.components.len().to_string(),
                c.docs.to_string(),
                c.tokens.to_string(),
            ],
        );
    }
    finish(w)
}

/// Long format: one row per (domain, component, bin).
pub fn distribution_csv(r: &DistributionReport) -> Vec<u8> {
    let mut w = writer();
    row(&mut w, ["domain", "pc", "bin_start", "bin_end", "count"]);
    for (domain, per_pc) in &r.histograms {
        for (k, bins) in per_pc.iter().enumerate() {
            for (b, count) in bins.iter().enumerate() {
                row(
                    &mut w,
                    [
                        domain.clone(),
                        format!("PC{}", k + 1),
                        r.bin_start(b).to_string(),
                        r.bin_start(b + 1).to_string(),
                        count.to_string(),
                    ],
                );
            }
        }
    }
    finish(w)
}

/// Summary statistics per named subset, with an optional bootstrap standard
/// error of the mean.
pub fn distance_summary_csv(rows: &[(String, DistanceStats, Option<f64>)]) -> Vec<u8> {
    let mut w = writer();
    row(
        &mut w,
        [
            "subset", "n_sampled", "n_pairs", "mean", "bootstrap_se", "median", "min", "p05", "p25", "p75", "p95", "max",
        ],
    );
    for (name, s, se) in rows {
        row(
            &mut w,
            [
                name.clone(),
                s.n_sampled.to_string(),
                s.n_pairs.to_string(),
                s.mean.to_string(),
                se.map_or(String::new(), |v| v.to_string()),
                s.median.to_string(),
                s.min.to_string(),
                s.p05.to_string(),
                s.p25.to_string(),
                s.p75.to_string(),
                s.p95.to_string(),
                s.max.to_string(),
            ],
        );
    }
    finish(w)
}

pub fn distance_histogram_csv(rows: &[(String, DistanceStats, Option<f64>)]) -> Vec<u8> {
    let mut w = writer();
    row(&mut w, ["subset", "bin_start", "bin_end", "count"]);
    let width = 2.0 / DISTANCE_BINS as f64;
    for (name, s, _) in rows {
        for (b, count) in s.histogram.iter().enumerate() {
            row(
                &mut w,
                [
                    name.clone(),
                    (b as f64 * width).to_string(),
                    ((b + 1) as f64 * width).to_string(),
                    count.to_string(),
                ],
            );
        }
    }
    finish(w)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn correlation_table_layout() {
        let m = CorrelationMatrix {
            row_labels: vec!["a".into(), "b".into()],
            col_labels: vec!["a".into(), "b".into()],
            values: vec![vec![1.0, -0.5], vec![-0.5, 1.0]],
            row_degenerate: vec![false, false],
            col_degenerate: vec![false, false],
        };
        let text = String::from_utf8(correlation_csv(&m)).unwrap();
        assert_eq!(text, "label,a,b,degenerate\na,1,-0.5,false\nb,-0.5,1,false\n");
    }

    #[test]
    fn upset_labels_are_one_based() {
        let cells = vec![UpsetCell {
            components: vec![0, 2],
            docs: 3,
            tokens: 40,
        }];
        let text = String::from_utf8(upset_csv(&cells)).unwrap();
        assert_eq!(text.lines().nth(1), Some("PC1&PC3,2,3,40"));
    }
}
