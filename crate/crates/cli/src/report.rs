//! Comparison tables over evaluation reports.

use orient_core::io::fmt_f64;
use orient_core::EvalReport;

pub const MISSING: &str = "—";

pub type Column = (&'static str, fn(&EvalReport) -> Option<f64>);

/// Column header and accessor, in table order.
pub const COLUMNS: [Column; 7] = [
    ("AOS", |r| Some(r.aos)),
    ("AP", |r| Some(r.ap)),
    ("HOE", |r| r.hoe_all),
    ("FOE-all", |r| r.foe_all),
    ("FOE-moving", |r| r.foe_moving),
    ("ℓ2-all", |r| r.l2_all),
    ("ℓ2-moving", |r| r.l2_moving),
];

#[derive(Clone, Debug, PartialEq)]
pub struct Cell {
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Row {
    pub label: String,
    pub runs: usize,
    pub cells: Vec<Option<Cell>>,
}

fn summarize(values: &[f64]) -> Option<Cell> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    Some(Cell {
        mean,
        std: var.sqrt(),
        n: values.len(),
    })
}

/// One row per distinct label, in first-seen order; cells average over the
/// reports that carry the metric.
pub fn rows(reports: &[EvalReport]) -> Vec<Row> {
    let mut labels: Vec<&str> = Vec::new();
    for r in reports {
        if !labels.contains(&r.label.as_str()) {
            labels.push(&r.label);
        }
    }
    labels
        .into_iter()
        .map(|label| {
            let group: Vec<&EvalReport> = reports.iter().filter(|r| r.label == label).collect();
            let cells = COLUMNS
                .iter()
                .map(|(_, get)| summarize(&group.iter().filter_map(|r| get(r)).collect::<Vec<_>>()))
                .collect();
            Row {
                label: label.to_string(),
                runs: group.len(),
                cells,
            }
        })
        .collect()
}

fn fmt_cell(c: &Option<Cell>, percent: bool) -> String {
    match c {
        None => MISSING.to_string(),
        Some(c) => {
            let k = if percent { 100.0 } else { 1.0 };
            if c.n > 1 {
                format!("{:.2} ± {:.2}", c.mean * k, c.std * k)
            } else {
                format!("{:.2}", c.mean * k)
            }
        }
    }
}

/// Markdown table; AOS and AP in percent, angles in degrees, ℓ2 in metres.
pub fn markdown(rows: &[Row]) -> String {
    let mut out = String::from("| Method | Runs |");
    for (h, _) in COLUMNS {
        out.push_str(&format!(" {h} |"));
    }
    out.push_str("\n|---|---|");
    out.push_str(&"---|".repeat(COLUMNS.len()));
    out.push('\n');
    for r in rows {
        out.push_str(&format!("| {} | {} |", r.label, r.runs));
        for (i, c) in r.cells.iter().enumerate() {
            out.push_str(&format!(" {} |", fmt_cell(c, i < 2)));
        }
        out.push('\n');
    }
    out
}

/// `method,runs,<col>_mean,<col>_std,...` with raw (fractional) values.
pub fn csv(rows: &[Row]) -> String {
    let mut out = String::from("method,runs");
    for (h, _) in COLUMNS {
        out.push_str(&format!(",{h}_mean,{h}_std"));
    }
    out.push('\n');
    for r in rows {
        out.push_str(&format!("{},{}", r.label, r.runs));
        for c in &r.cells {
            match c {
                Some(c) => out.push_str(&format!(",{},{}", fmt_f64(c.mean), fmt_f64(c.std))),
                None => out.push_str(&format!(",{MISSING},{MISSING}")),
            }
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn report(label: &str, aos: f64, foe_moving: Option<f64>) -> EvalReport {
        EvalReport {
            label: label.into(),
            aos,
            ap: 0.9,
            hoe_all: Some(2.0),
            foe_all: Some(5.0),
            foe_moving,
            l2_all: Some(1.0),
            l2_moving: None,
            ..EvalReport::default()
        }
    }

    #[test]
    fn identical_reports_give_identical_rows() {
        let a = report("x", 0.5, Some(1.0));
        let r = rows(&[a.clone(), EvalReport { label: "y".into(), ..a }]);
        assert_eq!(r[0].cells, r[1].cells);
    }

    #[test]
    fn missing_metrics_render_as_dash() {
        let md = markdown(&rows(&[report("x", 0.5, None)]));
        let line = md.lines().nth(2).unwrap();
        assert_eq!(line.matches(MISSING).count(), 2);
    }

    #[test]
    fn column_order_is_fixed() {
        let md = markdown(&[]);
        assert!(md.starts_with("| Method | Runs | AOS | AP | HOE | FOE-all | FOE-moving | ℓ2-all | ℓ2-moving |"));
    }

    #[test]
    fn seeds_are_averaged() {
        let r = rows(&[report("x", 0.4, Some(1.0)), report("x", 0.6, None)]);
        assert_eq!(r.len(), 1);
        let aos = r[0].cells[0].as_ref().unwrap();
        assert!((aos.mean - 0.5).abs() < 1e-12 && (aos.std - 0.1).abs() < 1e-12);
        assert_eq!(r[0].cells[4].as_ref().unwrap().n, 1);
        assert!(markdown(&r).contains("50.00 ± 10.00"));
    }
}
