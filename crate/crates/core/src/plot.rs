//! SVG line chart of mIoU against trimap width.

use std::fmt::Write as _;

use crate::eval::TrimapRow;

const WIDTH: f64 = 480.0;
const HEIGHT: f64 = 320.0;
const MARGIN: f64 = 48.0;

fn x_at(i: usize, n: usize) -> f64 {
    if n <= 1 {
        MARGIN + (WIDTH - 2.0 * MARGIN) / 2.0
    } else {
        MARGIN + (WIDTH - 2.0 * MARGIN) * i as f64 / (n - 1) as f64
    }
}

fn y_at(v: f64) -> f64 {
    HEIGHT - MARGIN - (HEIGHT - 2.0 * MARGIN) * v.clamp(0.0, 1.0)
}

fn series(out: &mut String, values: &[Option<f64>], colour: &str, label: &str, slot: usize) {
    let n = values.len();
    let points: Vec<String> = values
        .iter()
        .enumerate()
        .filter_map(|(i, v)| v.map(|v| format!("{:.2},{:.2}", x_at(i, n), y_at(v))))
        .collect();
    let _ = writeln!(
        out,
        r#"<polyline fill="none" stroke="{colour}" stroke-width="2" points="{}"/>"#,
        points.join(" ")
    );
    for p in &points {
        let (x, y) = p.split_once(',').expect("formatted above");
        let _ = writeln!(out, r#"<circle cx="{x}" cy="{y}" r="3" fill="{colour}"/>"#);
    }
    let ly = MARGIN / 2.0 + 14.0 * slot as f64;
    let _ = writeln!(
        out,
        r#"<text x="{:.2}" y="{ly:.2}" font-size="11" fill="{colour}">{label}</text>"#,
        WIDTH - MARGIN - 80.0
    );
}

/// Boundary and interior mIoU per trimap width, with the whole-image mIoU
/// as a dashed reference line. Output depends only on the inputs.
pub fn miou_width_svg(rows: &[TrimapRow], overall: f64) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
    );
    let _ = writeln!(out, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let (x0, x1, y0, y1) = (MARGIN, WIDTH - MARGIN, HEIGHT - MARGIN, MARGIN);
    let _ = writeln!(out, r#"<line x1="{x0}" y1="{y0}" x2="{x1}" y2="{y0}" stroke="black"/>"#);
    let _ = writeln!(out, r#"<line x1="{x0}" y1="{y0}" x2="{x0}" y2="{y1}" stroke="black"/>"#);
    for tick in 0..=4 {
        let v = tick as f64 / 4.0;
        let y = y_at(v);
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{:.2}" font-size="10" text-anchor="end">{v:.2}</text>"#,
            x0 - 4.0,
            y + 3.0
        );
    }
    for (i, row) in rows.iter().enumerate() {
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{:.2}" font-size="10" text-anchor="middle">{}</text>"#,
            x_at(i, rows.len()),
            y0 + 14.0,
            row.width
        );
    }
    let _ = writeln!(
        out,
        r#"<text x="{:.2}" y="{:.2}" font-size="11" text-anchor="middle">trimap width (px)</text>"#,
        (x0 + x1) / 2.0,
        HEIGHT - 8.0
    );
    let _ = writeln!(
        out,
        r#"<text x="12" y="{:.2}" font-size="11" transform="rotate(-90 12 {:.2})" text-anchor="middle">mIoU</text>"#,
        HEIGHT / 2.0,
        HEIGHT / 2.0
    );
    let oy = y_at(overall);
    let _ = writeln!(
        out,
        r#"<line x1="{x0}" y1="{oy:.2}" x2="{x1}" y2="{oy:.2}" stroke="gray" stroke-dasharray="4 3"/>"#
    );
    let boundary: Vec<_> = rows.iter().map(|r| r.boundary.as_ref().map(|m| m.miou)).collect();
    let interior: Vec<_> = rows.iter().map(|r| r.interior.as_ref().map(|m| m.miou)).collect();
    series(&mut out, &boundary, "#c0392b", "boundary", 0);
    series(&mut out, &interior, "#2c7fb8", "interior", 1);
    out.push_str("</svg>\n");
    out
}
