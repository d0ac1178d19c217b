//! Minimal deterministic SVG emitters (fixed-precision numbers, no
//! timestamps), so figure files are byte-identical across runs.

fn fmt(v: f64) -> String {
    format!("{v:.3}")
}

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

const PALETTE: [&str; 6] = [
    "#4c78a8", "#f58518", "#54a24b", "#e45756", "#72b7b2", "#b279a2",
];

/// Grouped/stacked bar chart. `series` is (name, values-per-group);
/// `stacked` draws series on top of each other per group.
pub fn bar_chart(
    title: &str,
    groups: &[String],
    series: &[(String, Vec<f64>)],
    stacked: bool,
) -> String {
    let width = 720.0;
    let height = 360.0;
    let margin = 48.0;
    let plot_w = width - 2.0 * margin;
    let plot_h = height - 2.0 * margin - 20.0;
    let max_val = if stacked {
        (0..groups.len())
            .map(|g| series.iter().map(|(_, v)| v.get(g).copied().unwrap_or(0.0)).sum::<f64>())
            .fold(0.0f64, f64::max)
    } else {
        series
            .iter()
            .flat_map(|(_, v)| v.iter().copied())
            .fold(0.0f64, f64::max)
    }
    .max(1e-9);

    let mut out = String::new();
    out.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">\n",
        w = fmt(width),
        h = fmt(height)
    ));
    out.push_str(&format!(
        "<text x=\"{}\" y=\"20\" font-family=\"monospace\" font-size=\"14\">{}</text>\n",
        fmt(margin),
        esc(title)
    ));
    let group_w = plot_w / groups.len().max(1) as f64;
    for (gi, group) in groups.iter().enumerate() {
        let x0 = margin + gi as f64 * group_w;
        if stacked {
            let bar_w = group_w * 0.6;
            let mut y_top = height - margin - 20.0;
            for (si, (_, vals)) in series.iter().enumerate() {
                let v = vals.get(gi).copied().unwrap_or(0.0);
                let bar_h = (v / max_val) * plot_h;
                y_top -= bar_h;
                out.push_str(&format!(
                    "<rect x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\" fill=\"{}\"/>\n",
                    fmt(x0 + group_w * 0.2),
                    fmt(y_top),
                    fmt(bar_w),
                    fmt(bar_h),
                    PALETTE[si % PALETTE.len()]
                ));
            }
        } else {
            let bar_w = group_w * 0.8 / series.len().max(1) as f64;
            for (si, (_, vals)) in series.iter().enumerate() {
                let v = vals.get(gi).copied().unwrap_or(0.0);
                let bar_h = (v / max_val) * plot_h;
                out.push_str(&format!(
                    "<rect x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\" fill=\"{}\"/>\n",
                    fmt(x0 + group_w * 0.1 + si as f64 * bar_w),
                    fmt(height - margin - 20.0 - bar_h),
                    fmt(bar_w * 0.9),
                    fmt(bar_h),
                    PALETTE[si % PALETTE.len()]
                ));
            }
        }
        out.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" font-family=\"monospace\" font-size=\"10\" text-anchor=\"middle\">{}</text>\n",
            fmt(x0 + group_w / 2.0),
            fmt(height - margin),
            esc(group)
        ));
    }
    for (si, (name, _)) in series.iter().enumerate() {
        let y = 36.0 + si as f64 * 14.0;
        out.push_str(&format!(
            "<rect x=\"{}\" y=\"{}\" width=\"10\" height=\"10\" fill=\"{}\"/>\n",
            fmt(width - margin - 130.0),
            fmt(y - 9.0),
            PALETTE[si % PALETTE.len()]
        ));
        out.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" font-family=\"monospace\" font-size=\"10\">{}</text>\n",
            fmt(width - margin - 116.0),
            fmt(y),
            esc(name)
        ));
    }
    out.push_str("</svg>\n");
    out
}

/// Square heatmap with row/column labels; values mapped onto a blue ramp.
pub fn heatmap(title: &str, labels: &[String], values: &[Vec<f64>]) -> String {
    let n = labels.len();
    let cell = 42.0f64;
    let margin = 110.0;
    let width = margin + n as f64 * cell + 20.0;
    let height = margin + n as f64 * cell + 40.0;
    let lo = values
        .iter()
        .flat_map(|r| r.iter().copied())
        .fold(f64::INFINITY, f64::min);
    let hi = values
        .iter()
        .flat_map(|r| r.iter().copied())
        .fold(f64::NEG_INFINITY, f64::max);
    let span = (hi - lo).max(1e-9);
    let mut out = String::new();
    out.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">\n",
        w = fmt(width),
        h = fmt(height)
    ));
    out.push_str(&format!(
        "<text x=\"10\" y=\"20\" font-family=\"monospace\" font-size=\"14\">{}</text>\n",
        esc(title)
    ));
    for (i, row) in values.iter().enumerate() {
        out.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" font-family=\"monospace\" font-size=\"10\" text-anchor=\"end\">{}</text>\n",
            fmt(margin - 6.0),
            fmt(margin + i as f64 * cell + cell * 0.6),
            esc(&labels[i])
        ));
        for (j, &v) in row.iter().enumerate() {
            let t = ((v - lo) / span).clamp(0.0, 1.0);
            let shade = (240.0 - t * 180.0) as u8;
            out.push_str(&format!(
                "<rect x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\" fill=\"rgb({shade},{shade},255)\"/>\n",
                fmt(margin + j as f64 * cell),
                fmt(margin + i as f64 * cell),
                fmt(cell - 1.0),
                fmt(cell - 1.0)
            ));
            out.push_str(&format!(
                "<text x=\"{}\" y=\"{}\" font-family=\"monospace\" font-size=\"9\" text-anchor=\"middle\">{}</text>\n",
                fmt(margin + j as f64 * cell + cell / 2.0),
                fmt(margin + i as f64 * cell + cell * 0.6),
                fmt(v)
            ));
        }
    }
    for (j, label) in labels.iter().enumerate() {
        out.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" font-family=\"monospace\" font-size=\"10\" text-anchor=\"middle\">{}</text>\n",
            fmt(margin + j as f64 * cell + cell / 2.0),
            fmt(margin - 16.0),
            esc(label)
        ));
    }
    out.push_str("</svg>\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn svg_bytes_are_deterministic() {
        let groups = vec!["noun".to_string(), "modifier".to_string()];
        let series = vec![
            ("recall".to_string(), vec![0.81234, 0.5]),
            ("wup".to_string(), vec![0.9, 0.7]),
        ];
        let a = bar_chart("t", &groups, &series, true);
        let b = bar_chart("t", &groups, &series, true);
        assert_eq!(a, b);
        assert!(a.starts_with("<svg"));
    }
}
