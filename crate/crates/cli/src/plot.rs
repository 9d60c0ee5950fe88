//! Minimal SVG line plot.

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 420.0;
const MARGIN: f64 = 60.0;

fn fmt6(v: f64) -> String {
    format!("{v:.6}")
}

/// Ratio against frequency on a logarithmic `omega + shift` axis, with the
/// threshold drawn as a horizontal rule.
pub fn ratio_plot(omegas: &[f64], ratios: &[f64], threshold: f64, shift: f64) -> String {
    let xs: Vec<f64> = omegas.iter().map(|w| (w + shift).log10()).collect();
    let (x_lo, x_hi) = bounds(&xs);
    let mut ys = ratios.to_vec();
    ys.push(threshold);
    let (mut y_lo, y_hi) = bounds(&ys);
    y_lo = y_lo.min(0.0);
    let px = |x: f64| MARGIN + (x - x_lo) / (x_hi - x_lo) * (WIDTH - 2.0 * MARGIN);
    let py = |y: f64| HEIGHT - MARGIN - (y - y_lo) / (y_hi - y_lo) * (HEIGHT - 2.0 * MARGIN);

    let points: Vec<String> = xs
        .iter()
        .zip(ratios)
        .map(|(x, y)| format!("{},{}", fmt6(px(*x)), fmt6(py(*y))))
        .collect();
    let mut svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" viewBox=\"0 0 {WIDTH} {HEIGHT}\">\n"
    );
    svg.push_str("<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");
    let (l, r, t, b) = (MARGIN, WIDTH - MARGIN, MARGIN, HEIGHT - MARGIN);
    svg.push_str(&format!(
        "<path d=\"M{l},{t} L{l},{b} L{r},{b}\" stroke=\"black\" fill=\"none\"/>\n"
    ));
    let ty = py(threshold);
    svg.push_str(&format!(
        "<line x1=\"{l}\" y1=\"{ty:.6}\" x2=\"{r}\" y2=\"{ty:.6}\" stroke=\"red\" stroke-dasharray=\"6,4\"/>\n"
    ));
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"{:.6}\" font-size=\"12\" fill=\"red\" text-anchor=\"end\">threshold {:.6}</text>\n",
        r,
        ty - 4.0,
        threshold
    ));
    svg.push_str(&format!(
        "<polyline points=\"{}\" stroke=\"steelblue\" stroke-width=\"2\" fill=\"none\"/>\n",
        points.join(" ")
    ));
    for p in &points {
        let (x, y) = p.split_once(',').unwrap();
        svg.push_str(&format!(
            "<circle cx=\"{x}\" cy=\"{y}\" r=\"3\" fill=\"steelblue\"/>\n"
        ));
    }
    for (label, value, y) in [("", y_lo, b), ("", y_hi, t)] {
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" font-size=\"11\" text-anchor=\"end\">{label}{:.4}</text>\n",
            l - 6.0,
            y + 4.0,
            value
        ));
    }
    for (value, x) in [(x_lo, l), (x_hi, r)] {
        svg.push_str(&format!(
            "<text x=\"{x}\" y=\"{}\" font-size=\"11\" text-anchor=\"middle\">{:.4}</text>\n",
            b + 16.0,
            10f64.powf(value) - shift
        ));
    }
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" font-size=\"13\" text-anchor=\"middle\">omega (log scale in omega + N)</text>\n",
        WIDTH / 2.0,
        HEIGHT - 16.0
    ));
    svg.push_str(&format!(
        "<text x=\"16\" y=\"{}\" font-size=\"13\" text-anchor=\"middle\" transform=\"rotate(-90 16 {})\">||x phi||^2 / ||phi||^(p+1)</text>\n",
        HEIGHT / 2.0,
        HEIGHT / 2.0
    ));
    svg.push_str("</svg>\n");
    svg
}

fn bounds(v: &[f64]) -> (f64, f64) {
    let lo = v.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if hi > lo {
        (lo, hi)
    } else {
        (lo - 0.5, hi + 0.5)
    }
}
