use std::fmt::Write;

use super::{ConfusionMatrix, TableRow, WeightedSummary};

pub const TABLE_COLUMNS: [&str; 5] = [
    "Dataset",
    "Accuracy",
    "Sensitivity (Included)",
    "Sensitivity (Excluded)",
    "Kappa",
];

/// Three decimals; `undefined` when the ratio has no denominator.
pub fn format_ratio(value: Option<f64>) -> String {
    match value {
        Some(v) => format!("{v:.3}"),
        None => "undefined".to_string(),
    }
}

/// Results table with one row per dataset and the weighted total last.
pub fn table_csv(rows: &[TableRow], summary: &WeightedSummary) -> String {
    let mut wtr = csv::Writer::from_writer(Vec::new());
    wtr.write_record(TABLE_COLUMNS).unwrap();
    for r in rows {
        wtr.write_record([
            r.dataset.clone(),
            format_ratio(Some(r.accuracy)),
            format_ratio(r.sensitivity_included),
            format_ratio(r.sensitivity_excluded),
            format_ratio(r.kappa),
        ])
        .unwrap();
    }
    wtr.write_record([
        summary.label.clone(),
        format_ratio(Some(summary.accuracy)),
        format_ratio(summary.sensitivity_included),
        format_ratio(summary.sensitivity_excluded),
        "-".to_string(),
    ])
    .unwrap();
    String::from_utf8(wtr.into_inner().unwrap()).unwrap()
}

/// 2x2 counts, truth down the side and predictions across the top.
pub fn confusion_csv(cm: &ConfusionMatrix) -> String {
    format!(
        "truth\\predicted,included,excluded\nincluded,{},{}\nexcluded,{},{}\n",
        cm.tp, cm.fn_, cm.fp, cm.tn
    )
}

const CELL: u32 = 120;
const LEFT: u32 = 110;
const TOP: u32 = 70;

/// Annotated 2x2 heatmap. Cell shade scales with the count relative to the
/// largest cell.
pub fn confusion_svg(title: &str, cm: &ConfusionMatrix) -> String {
    let cells = [[cm.tp, cm.fn_], [cm.fp, cm.tn]];
    let max = cells.iter().flatten().copied().max().unwrap_or(0).max(1);
    let width = LEFT + 2 * CELL + 20;
    let height = TOP + 2 * CELL + 50;

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}" font-family="sans-serif">"#
    );
    let _ = writeln!(
        svg,
        r#"  <text x="{}" y="24" text-anchor="middle" font-size="16" font-weight="bold">{}</text>"#,
        LEFT + CELL,
        escape(title)
    );
    let _ = writeln!(
        svg,
        r#"  <text x="{}" y="{}" text-anchor="middle" font-size="13">Predicted</text>"#,
        LEFT + CELL,
        TOP - 28
    );
    for (j, label) in ["included", "excluded"].iter().enumerate() {
        let _ = writeln!(
            svg,
            r#"  <text x="{}" y="{}" text-anchor="middle" font-size="12">{label}</text>"#,
            LEFT + CELL * j as u32 + CELL / 2,
            TOP - 8
        );
        let _ = writeln!(
            svg,
            r#"  <text x="{}" y="{}" text-anchor="end" font-size="12">{label}</text>"#,
            LEFT - 8,
            TOP + CELL * j as u32 + CELL / 2 + 4
        );
    }
    let _ = writeln!(
        svg,
        r#"  <text x="18" y="{y}" text-anchor="middle" font-size="13" transform="rotate(-90 18 {y})">Truth</text>"#,
        y = TOP + CELL
    );
    for (i, row) in cells.iter().enumerate() {
        for (j, &count) in row.iter().enumerate() {
            let x = LEFT + CELL * j as u32;
            let y = TOP + CELL * i as u32;
            let intensity = count as f64 / max as f64;
            let shade = (255.0 - 200.0 * intensity).round() as u8;
            let text_fill = if intensity > 0.6 { "#ffffff" } else { "#000000" };
            let _ = writeln!(
                svg,
                r##"  <rect x="{x}" y="{y}" width="{CELL}" height="{CELL}" fill="rgb({shade},{shade},255)" stroke="#333333"/>"##
            );
            let _ = writeln!(
                svg,
                r#"  <text x="{}" y="{}" text-anchor="middle" font-size="20" fill="{text_fill}">{count}</text>"#,
                x + CELL / 2,
                y + CELL / 2 + 7
            );
        }
    }
    if cm.dropped > 0 {
        let _ = writeln!(
            svg,
            r#"  <text x="{}" y="{}" text-anchor="middle" font-size="11">{} row(s) without a comparable decision</text>"#,
            LEFT + CELL,
            TOP + 2 * CELL + 30,
            cm.dropped
        );
    }
    svg.push_str("</svg>\n");
    svg
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}
