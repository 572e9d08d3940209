//! Static SVG emission: a loss curve from the training log and metric
//! bars from an evaluation report. Hand-written markup, fixed-precision
//! coordinates, no external renderer, so identical inputs give identical
//! bytes.

/// One plotted training epoch.
#[derive(Debug, Clone, Copy)]
pub struct LossPoint {
    pub epoch: usize,
    pub train: f64,
    pub dev: Option<f64>,
}

const TRAIN_COLOR: &str = "#1f6fb4";
const DEV_COLOR: &str = "#d9641e";
const BAR_COLOR: &str = "#4a7fb5";
const AXIS_COLOR: &str = "#444444";

pub fn loss_curve_svg(manifest_hash: &str, points: &[LossPoint]) -> String {
    let w = 640.0;
    let h = 360.0;
    let (l, r, t, b) = (60.0, 20.0, 30.0, 40.0);
    let pw = w - l - r;
    let ph = h - t - b;

    let mut ys: Vec<f64> = points.iter().map(|p| p.train).collect();
    ys.extend(points.iter().filter_map(|p| p.dev));
    let (mut y0, mut y1) = min_max(&ys);
    if y1 - y0 < 1e-12 {
        y0 -= 0.5;
        y1 += 0.5;
    }
    let e0 = points.first().map(|p| p.epoch).unwrap_or(0) as f64;
    let e1 = points.last().map(|p| p.epoch).unwrap_or(0) as f64;
    let espan = if e1 > e0 { e1 - e0 } else { 1.0 };

    let x_of = |e: f64| l + (e - e0) / espan * pw;
    let y_of = |v: f64| t + (1.0 - (v - y0) / (y1 - y0)) * ph;

    let path_of = |series: &[(f64, f64)]| -> String {
        series
            .iter()
            .map(|(x, y)| format!("{:.2},{:.2}", x, y))
            .collect::<Vec<_>>()
            .join(" ")
    };
    let train_pts: Vec<(f64, f64)> =
        points.iter().map(|p| (x_of(p.epoch as f64), y_of(p.train))).collect();
    let dev_pts: Vec<(f64, f64)> = points
        .iter()
        .filter_map(|p| p.dev.map(|d| (x_of(p.epoch as f64), y_of(d))))
        .collect();

    let mut s = String::new();
    s.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">\n"
    ));
    s.push_str(&format!("<!-- manifest: {manifest_hash} -->\n"));
    s.push_str("<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");
    s.push_str(&format!(
        "<text x=\"{:.0}\" y=\"18\" font-family=\"monospace\" font-size=\"13\" fill=\"{AXIS_COLOR}\">training loss by epoch</text>\n",
        l
    ));
    s.push_str(&format!(
        "<line x1=\"{l}\" y1=\"{:.2}\" x2=\"{:.2}\" y2=\"{:.2}\" stroke=\"{AXIS_COLOR}\"/>\n",
        t + ph,
        l + pw,
        t + ph
    ));
    s.push_str(&format!(
        "<line x1=\"{l}\" y1=\"{t}\" x2=\"{l}\" y2=\"{:.2}\" stroke=\"{AXIS_COLOR}\"/>\n",
        t + ph
    ));
    for (v, anchor_y) in [(y1, t + 4.0), (y0, t + ph)] {
        s.push_str(&format!(
            "<text x=\"{:.0}\" y=\"{:.2}\" font-family=\"monospace\" font-size=\"11\" fill=\"{AXIS_COLOR}\" text-anchor=\"end\">{:.4}</text>\n",
            l - 6.0,
            anchor_y,
            v
        ));
    }
    for (e, anchor) in [(e0, "start"), (e1, "end")] {
        s.push_str(&format!(
            "<text x=\"{:.2}\" y=\"{:.2}\" font-family=\"monospace\" font-size=\"11\" fill=\"{AXIS_COLOR}\" text-anchor=\"{anchor}\">{}</text>\n",
            x_of(e),
            t + ph + 16.0,
            e as usize
        ));
    }
    if !train_pts.is_empty() {
        s.push_str(&format!(
            "<polyline points=\"{}\" fill=\"none\" stroke=\"{TRAIN_COLOR}\" stroke-width=\"1.5\"/>\n",
            path_of(&train_pts)
        ));
    }
    if !dev_pts.is_empty() {
        s.push_str(&format!(
            "<polyline points=\"{}\" fill=\"none\" stroke=\"{DEV_COLOR}\" stroke-width=\"1.5\"/>\n",
            path_of(&dev_pts)
        ));
    }
    s.push_str(&format!(
        "<text x=\"{:.0}\" y=\"{:.2}\" font-family=\"monospace\" font-size=\"11\" fill=\"{TRAIN_COLOR}\">train</text>\n",
        l + pw - 90.0,
        t + 14.0
    ));
    s.push_str(&format!(
        "<text x=\"{:.0}\" y=\"{:.2}\" font-family=\"monospace\" font-size=\"11\" fill=\"{DEV_COLOR}\">dev mse</text>\n",
        l + pw - 90.0,
        t + 28.0
    ));
    s.push_str("</svg>\n");
    s
}

/// One bar panel per metric, one bar per model.
pub fn metric_bars_svg(
    manifest_hash: &str,
    split: &str,
    rows: &[(String, f64, f64, f64)],
) -> String {
    let name_w = 230.0;
    let bar_w = 330.0;
    let row_h = 20.0;
    let panel_gap = 34.0;
    let top = 28.0;
    let panel_h = rows.len() as f64 * row_h;
    let w = name_w + bar_w + 90.0;
    let h = top + 3.0 * (panel_h + panel_gap);

    let mut s = String::new();
    s.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w:.0}\" height=\"{h:.0}\" viewBox=\"0 0 {w:.0} {h:.0}\">\n"
    ));
    s.push_str(&format!("<!-- manifest: {manifest_hash} -->\n"));
    s.push_str("<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");
    s.push_str(&format!(
        "<text x=\"10\" y=\"18\" font-family=\"monospace\" font-size=\"13\" fill=\"{AXIS_COLOR}\">metrics on the {split} split</text>\n"
    ));

    let metrics: [(&str, Box<dyn Fn(&(String, f64, f64, f64)) -> f64>); 3] = [
        ("MSE", Box::new(|r| r.1)),
        ("MAE", Box::new(|r| r.2)),
        ("ACC", Box::new(|r| r.3)),
    ];
    for (k, (label, get)) in metrics.iter().enumerate() {
        let y0 = top + k as f64 * (panel_h + panel_gap);
        s.push_str(&format!(
            "<text x=\"10\" y=\"{:.2}\" font-family=\"monospace\" font-size=\"12\" fill=\"{AXIS_COLOR}\">{label}</text>\n",
            y0 + 12.0
        ));
        let max = rows.iter().map(|r| get(r)).fold(0.0_f64, f64::max).max(1e-12);
        for (i, row) in rows.iter().enumerate() {
            let y = y0 + 16.0 + i as f64 * row_h;
            let v = get(row);
            let len = v / max * bar_w;
            s.push_str(&format!(
                "<text x=\"{:.0}\" y=\"{:.2}\" font-family=\"monospace\" font-size=\"11\" fill=\"{AXIS_COLOR}\" text-anchor=\"end\">{}</text>\n",
                name_w - 8.0,
                y + 12.0,
                xml_escape(&row.0)
            ));
            s.push_str(&format!(
                "<rect x=\"{:.0}\" y=\"{:.2}\" width=\"{:.2}\" height=\"{:.0}\" fill=\"{BAR_COLOR}\"/>\n",
                name_w,
                y + 2.0,
                len,
                row_h - 6.0
            ));
            s.push_str(&format!(
                "<text x=\"{:.2}\" y=\"{:.2}\" font-family=\"monospace\" font-size=\"11\" fill=\"{AXIS_COLOR}\">{:.4}</text>\n",
                name_w + len + 6.0,
                y + 12.0,
                v
            ));
        }
    }
    s.push_str("</svg>\n");
    s
}

fn min_max(vals: &[f64]) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for v in vals {
        lo = lo.min(*v);
        hi = hi.max(*v);
    }
    if lo.is_finite() && hi.is_finite() {
        (lo, hi)
    } else {
        (0.0, 1.0)
    }
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn loss_curve_is_deterministic_and_stamped() {
        let pts = [
            LossPoint { epoch: 0, train: 2.0, dev: Some(2.5) },
            LossPoint { epoch: 1, train: 1.0, dev: Some(1.5) },
        ];
        let a = loss_curve_svg("abc", &pts);
        let b = loss_curve_svg("abc", &pts);
        assert_eq!(a, b);
        assert!(a.contains("<!-- manifest: abc -->"));
        assert!(a.contains("<polyline"));
        assert!(a.ends_with("</svg>\n"));
    }

    #[test]
    fn single_epoch_curve_does_not_divide_by_zero() {
        let pts = [LossPoint { epoch: 0, train: 1.0, dev: None }];
        let svg = loss_curve_svg("m", &pts);
        assert!(!svg.contains("NaN"));
        assert!(!svg.contains("inf"));
    }

    #[test]
    fn metric_bars_cover_all_rows_and_escape_names() {
        let rows = vec![
            ("DPML".to_string(), 0.5, 0.4, 0.6),
            ("a<b&c".to_string(), 1.0, 0.8, 0.5),
        ];
        let svg = metric_bars_svg("m", "test", &rows);
        assert_eq!(svg.matches("<rect").count(), 1 + 6);
        assert!(svg.contains("a&lt;b&amp;c"));
        assert!(!svg.contains("a<b"));
    }
}
