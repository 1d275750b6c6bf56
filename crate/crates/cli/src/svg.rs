//! A tiny SVG emitter: framed panels with polylines, arrows and labels.

use std::fmt::Write;

const PANEL_W: f64 = 420.0;
const PANEL_H: f64 = 300.0;
const MARGIN: f64 = 50.0;

pub struct Series {
    pub xs: Vec<f64>,
    pub ys: Vec<f64>,
    pub color: &'static str,
    pub dashed: bool,
}

pub struct Arrow {
    pub at: (f64, f64),
    pub dir: (f64, f64),
}

#[derive(Default)]
pub struct Panel {
    pub title: String,
    pub x_label: String,
    pub series: Vec<Series>,
    pub arrows: Vec<Arrow>,
}

fn range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-12 {
        return (lo - 0.5, hi + 0.5);
    }
    let pad = 0.05 * (hi - lo);
    (lo - pad, hi + pad)
}

impl Panel {
    fn render(&self, out: &mut String, ox: f64) {
        let xs = self
            .series
            .iter()
            .flat_map(|s| s.xs.iter().copied())
            .chain(self.arrows.iter().map(|a| a.at.0));
        let ys = self
            .series
            .iter()
            .flat_map(|s| s.ys.iter().copied())
            .chain(self.arrows.iter().map(|a| a.at.1));
        let (x0, x1) = range(xs);
        let (y0, y1) = range(ys);
        let w = PANEL_W - 2.0 * MARGIN;
        let h = PANEL_H - 2.0 * MARGIN;
        let px = |x: f64| ox + MARGIN + (x - x0) / (x1 - x0) * w;
        let py = |y: f64| PANEL_H - MARGIN - (y - y0) / (y1 - y0) * h;

        let _ = writeln!(
            out,
            r##"<rect x="{:.1}" y="{MARGIN}" width="{w}" height="{h}" fill="none" stroke="#444"/>"##,
            ox + MARGIN
        );
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="{:.1}" font-size="14" text-anchor="middle">{}</text>"#,
            ox + PANEL_W / 2.0,
            MARGIN - 15.0,
            self.title
        );
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="{:.1}" font-size="12" text-anchor="middle">{}</text>"#,
            ox + PANEL_W / 2.0,
            PANEL_H - 12.0,
            self.x_label
        );
        for (v, anchor, x, y) in [
            (x0, "start", px(x0), PANEL_H - MARGIN + 14.0),
            (x1, "end", px(x1), PANEL_H - MARGIN + 14.0),
        ] {
            let _ = writeln!(out, r#"<text x="{x:.1}" y="{y:.1}" font-size="10" text-anchor="{anchor}">{v:.3}</text>"#);
        }
        for (v, y) in [(y0, py(y0)), (y1, py(y1))] {
            let _ = writeln!(
                out,
                r#"<text x="{:.1}" y="{:.1}" font-size="10" text-anchor="end">{v:.3}</text>"#,
                ox + MARGIN - 4.0,
                y + 4.0
            );
        }
        for s in &self.series {
            let pts: Vec<String> = s
                .xs
                .iter()
                .zip(&s.ys)
                .filter(|(x, y)| x.is_finite() && y.is_finite())
                .map(|(&x, &y)| format!("{:.2},{:.2}", px(x), py(y)))
                .collect();
            let dash = if s.dashed { r#" stroke-dasharray="4 3""# } else { "" };
            let _ = writeln!(
                out,
                r#"<polyline points="{}" fill="none" stroke="{}" stroke-width="1.5"{dash}/>"#,
                pts.join(" "),
                s.color
            );
        }
        // arrows share one length scale so relative sizes are visible
        let longest = self
            .arrows
            .iter()
            .map(|a| a.dir.0.hypot(a.dir.1))
            .filter(|v| v.is_finite())
            .fold(0.0, f64::max);
        let cells = (self.arrows.len() as f64).sqrt().max(1.0);
        let scale = if longest > 0.0 { 0.9 * w / cells / longest } else { 0.0 };
        for a in &self.arrows {
            let (sx, sy) = (px(a.at.0), py(a.at.1));
            let (ex, ey) = (sx + scale * a.dir.0, sy - scale * a.dir.1);
            if ex.is_finite() && ey.is_finite() {
                let _ = writeln!(
                    out,
                    r##"<line x1="{sx:.2}" y1="{sy:.2}" x2="{ex:.2}" y2="{ey:.2}" stroke="#1f5fa8" marker-end="url(#head)"/>"##
                );
            }
        }
    }
}

/// Panels side by side in one document.
pub fn render(panels: &[Panel]) -> String {
    let width = PANEL_W * panels.len().max(1) as f64;
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{PANEL_H}" viewBox="0 0 {width} {PANEL_H}">"#
    );
    out.push_str(
        "<defs><marker id=\"head\" markerWidth=\"6\" markerHeight=\"6\" refX=\"5\" refY=\"3\" orient=\"auto\">\
         <path d=\"M0,0 L6,3 L0,6 z\" fill=\"#1f5fa8\"/></marker></defs>\n",
    );
    out.push_str("<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");
    for (i, p) in panels.iter().enumerate() {
        p.render(&mut out, i as f64 * PANEL_W);
    }
    out.push_str("</svg>\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn renders_lines_and_arrows() {
        let p = Panel {
            title: "t".into(),
            x_label: "x".into(),
            series: vec![Series {
                xs: vec![0.0, 1.0],
                ys: vec![1.0, 2.0],
                color: "black",
                dashed: true,
            }],
            arrows: vec![Arrow {
                at: (0.5, 1.5),
                dir: (1.0, 0.0),
            }],
        };
        let s = render(&[p]);
        assert!(s.starts_with("<svg"));
        assert!(s.contains("<polyline"));
        assert!(s.contains("<line"));
        assert!(s.trim_end().ends_with("</svg>"));
    }
}
