//! Minimal SVG output: a similarity scatter and sequence heatmaps.

use std::fmt::Write as _;

use crate::diary::{ActivityRecord, DAY_MINUTES};
use crate::validate::SimilarityReport;

const SCATTER_SIZE: f64 = 480.0;
const MARGIN: f64 = 50.0;

/// Stable colour for a major category: golden-angle hue steps.
pub fn category_colour(category: u8) -> String {
    let hue = (category as f64 * 137.508) % 360.0;
    let light = if category.is_multiple_of(2) { 45 } else { 60 };
    format!("hsl({hue:.1},65%,{light}%)")
}

/// Mode similarity against Gini correlation, one dot per class, with
/// guides at 0.6 and 0.8.
pub fn scatter_svg(reports: &[SimilarityReport]) -> String {
    let y_min = reports.iter().map(|r| r.gini_r).fold(0.0_f64, f64::min).max(-1.0);
    let full = SCATTER_SIZE + 2.0 * MARGIN;
    let px = |x: f64| MARGIN + x.clamp(0.0, 1.0) * SCATTER_SIZE;
    let py = |y: f64| MARGIN + (1.0 - (y - y_min) / (1.0 - y_min)) * SCATTER_SIZE;

    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{full}" height="{full}" font-family="sans-serif" font-size="12">"#);
    let _ = writeln!(s, r#"<rect width="{full}" height="{full}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<rect x="{MARGIN}" y="{MARGIN}" width="{SCATTER_SIZE}" height="{SCATTER_SIZE}" fill="none" stroke="black"/>"#
    );
    for t in [0.6, 0.8] {
        let _ = writeln!(
            s,
            r##"<line x1="{:.2}" y1="{MARGIN}" x2="{:.2}" y2="{:.2}" stroke="#999" stroke-dasharray="4 3"/>"##,
            px(t),
            px(t),
            MARGIN + SCATTER_SIZE
        );
        if t > y_min {
            let _ = writeln!(
                s,
                r##"<line x1="{MARGIN}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="#999" stroke-dasharray="4 3"/>"##,
                py(t),
                MARGIN + SCATTER_SIZE,
                py(t)
            );
        }
    }
    for r in reports {
        let _ = writeln!(
            s,
            r##"<circle cx="{:.2}" cy="{:.2}" r="4" fill="#2060c0" fill-opacity="0.7"><title>class {}</title></circle>"##,
            px(r.mode_similarity),
            py(r.gini_r),
            r.class_id
        );
    }
    let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">mode similarity</text>"#, full / 2.0, full - 15.0);
    let _ = writeln!(
        s,
        r#"<text x="15" y="{:.1}" text-anchor="middle" transform="rotate(-90 15 {:.1})">Gini correlation</text>"#,
        full / 2.0,
        full / 2.0
    );
    let _ = writeln!(s, r#"<text x="{MARGIN}" y="{:.1}" text-anchor="middle">0</text>"#, full - MARGIN + 15.0);
    let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">1</text>"#, MARGIN + SCATTER_SIZE, full - MARGIN + 15.0);
    let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{y_min:.2}</text>"#, MARGIN - 5.0, py(y_min));
    let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="end">1</text>"#, MARGIN - 5.0, py(1.0) + 4.0);
    s.push_str("</svg>\n");
    s
}

/// One row per sequence, one column per minute, coloured by major category.
/// Each record is drawn as a single run-length rectangle.
pub fn heatmap_svg<'a, I>(sequences: I, title: &str) -> String
where
    I: IntoIterator<Item = &'a [ActivityRecord]>,
{
    const ROW: f64 = 2.0;
    const TOP: f64 = 20.0;
    let rows: Vec<&[ActivityRecord]> = sequences.into_iter().collect();
    let width = DAY_MINUTES as f64 / 2.0;
    let height = TOP + rows.len() as f64 * ROW;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="sans-serif" font-size="12" shape-rendering="crispEdges">"#
    );
    let _ = writeln!(s, r#"<text x="4" y="14">{}</text>"#, escape(title));
    for (i, seq) in rows.iter().enumerate() {
        let y = TOP + i as f64 * ROW;
        for r in *seq {
            let _ = writeln!(
                s,
                r#"<rect x="{:.1}" y="{y:.1}" width="{:.1}" height="{ROW}" fill="{}"/>"#,
                r.start_min as f64 / 2.0,
                r.duration_min as f64 / 2.0,
                category_colour(r.code.major_category())
            );
        }
    }
    s.push_str("</svg>\n");
    s
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diary::{ActivityCode, LocationId};

    #[test]
    fn heatmap_draws_one_rect_per_record() {
        let seq = vec![
            ActivityRecord { code: ActivityCode::new(10101).unwrap(), start_min: 0, duration_min: 480, location: LocationId(1) },
            ActivityRecord { code: ActivityCode::new(50101).unwrap(), start_min: 480, duration_min: 960, location: LocationId(2) },
        ];
        let svg = heatmap_svg([seq.as_slice(), seq.as_slice()], "class <0>");
        assert_eq!(svg.matches("<rect").count(), 4);
        assert!(svg.contains("class &lt;0&gt;"));
    }

    #[test]
    fn scatter_has_a_dot_per_class() {
        let r = |id, m, g| SimilarityReport {
            class_id: id,
            mode_similarity: m,
            gini_r: g,
            gini_degenerate: false,
            n_real: 1,
            n_synth: 1,
        };
        let svg = scatter_svg(&[r(0, 0.9, 0.95), r(1, 0.5, -0.2)]);
        assert_eq!(svg.matches("<circle").count(), 2);
        assert!(svg.starts_with("<svg"));
    }

    #[test]
    fn colours_differ_between_categories() {
        assert_ne!(category_colour(1), category_colour(5));
        assert_eq!(category_colour(12), category_colour(12));
    }
}
