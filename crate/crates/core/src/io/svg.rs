use crate::diagnostics::TrendPoint;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const MARGIN: f64 = 56.0;

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Standalone SVG of a temporal trend: the posterior mean as one solid line and
/// the 95% band as two dashed lines.
pub fn trend_svg(points: &[TrendPoint], title: &str) -> String {
    let lo = points.iter().map(|p| p.lower95).fold(f64::INFINITY, f64::min);
    let hi = points.iter().map(|p| p.upper95).fold(f64::NEG_INFINITY, f64::max);
    let (lo, hi) = if lo.is_finite() && hi > lo { (lo, hi) } else { (-1.0, 1.0) };
    let pad = 0.05 * (hi - lo);
    let (lo, hi) = (lo - pad, hi + pad);
    let n = points.len();
    let x = |k: usize| {
        if n > 1 {
            MARGIN + (WIDTH - 2.0 * MARGIN) * k as f64 / (n - 1) as f64
        } else {
            WIDTH / 2.0
        }
    };
    let y = |v: f64| HEIGHT - MARGIN - (HEIGHT - 2.0 * MARGIN) * (v - lo) / (hi - lo);
    let path = |f: &dyn Fn(&TrendPoint) -> f64| {
        points
            .iter()
            .enumerate()
            .map(|(k, p)| format!("{}{:.2},{:.2}", if k == 0 { "M" } else { " L" }, x(k), y(f(p))))
            .collect::<String>()
    };

    let mut s = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" viewBox=\"0 0 {WIDTH} {HEIGHT}\">\n"
    );
    s.push_str(&format!(
        "<text x=\"{}\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"15\">{}</text>\n",
        WIDTH / 2.0,
        escape(title)
    ));
    let (left, right, bottom, top) = (MARGIN, WIDTH - MARGIN, HEIGHT - MARGIN, MARGIN);
    s.push_str(&format!(
        "<g stroke=\"#444\" stroke-width=\"1\">\n<line x1=\"{left}\" y1=\"{bottom}\" x2=\"{right}\" y2=\"{bottom}\"/>\n<line x1=\"{left}\" y1=\"{bottom}\" x2=\"{left}\" y2=\"{top}\"/>\n</g>\n"
    ));
    s.push_str("<g font-family=\"sans-serif\" font-size=\"11\" fill=\"#222\">\n");
    for (k, p) in points.iter().enumerate() {
        s.push_str(&format!(
            "<text x=\"{:.2}\" y=\"{}\" text-anchor=\"middle\">{}</text>\n",
            x(k),
            bottom + 18.0,
            p.year
        ));
    }
    for k in 0..=4 {
        let v = lo + (hi - lo) * k as f64 / 4.0;
        s.push_str(&format!(
            "<text x=\"{}\" y=\"{:.2}\" text-anchor=\"end\">{v:.2}</text>\n",
            left - 6.0,
            y(v) + 4.0
        ));
    }
    s.push_str("</g>\n");
    s.push_str(&format!(
        "<path d=\"{}\" fill=\"none\" stroke=\"#1f4e79\" stroke-width=\"2\"/>\n",
        path(&|p| p.mean)
    ));
    for f in [|p: &TrendPoint| p.lower95, |p: &TrendPoint| p.upper95] {
        s.push_str(&format!(
            "<path d=\"{}\" fill=\"none\" stroke=\"#1f4e79\" stroke-width=\"1.5\" stroke-dasharray=\"6 4\"/>\n",
            path(&f)
        ));
    }
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_solid_two_dashed_paths() {
        let pts: Vec<TrendPoint> = (0..5)
            .map(|k| TrendPoint {
                year: 2010 + k,
                mean: k as f64 * 0.1,
                lower95: k as f64 * 0.1 - 0.3,
                upper95: k as f64 * 0.1 + 0.3,
            })
            .collect();
        let svg = trend_svg(&pts, "Temporal <trend>");
        let paths: Vec<&str> = svg.lines().filter(|l| l.starts_with("<path")).collect();
        assert_eq!(paths.len(), 3);
        assert_eq!(paths.iter().filter(|l| l.contains("stroke-dasharray")).count(), 2);
        assert!(svg.contains("Temporal &lt;trend&gt;"));
        assert!(svg.contains(">2014<"));
    }
}
