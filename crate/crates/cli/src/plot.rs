use std::fmt::Write as _;

use pgee::Path;

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 440.0;
const MARGIN: f64 = 56.0;
const LEGEND: f64 = 130.0;
const PALETTE: [&str; 10] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf",
];

/// Coefficient paths of the `top_k` covariates with the largest maximal
/// absolute coefficient, against `log10 λ`.
pub fn path_svg(path: &Path, top_k: usize) -> String {
    let cols: Vec<usize> = (0..path.lambdas.len())
        .filter(|&k| path.valid[k] && path.lambdas[k] > 0.0)
        .collect();
    let peak = |j: usize| {
        cols.iter()
            .map(|&k| path.coefficients[(j, k)].abs())
            .fold(0.0, f64::max)
    };
    let mut order: Vec<usize> = (0..path.coefficients.nrows()).collect();
    order.sort_by(|&a, &b| peak(b).total_cmp(&peak(a)).then(a.cmp(&b)));
    order.truncate(top_k);

    let xs: Vec<f64> = cols.iter().map(|&k| path.lambdas[k].log10()).collect();
    let (x_lo, x_hi) = bounds(xs.iter().copied());
    let (y_lo, y_hi) = bounds(
        order
            .iter()
            .flat_map(|&j| cols.iter().map(move |&k| path.coefficients[(j, k)]))
            .chain([0.0]),
    );
    let plot_w = WIDTH - 2.0 * MARGIN - LEGEND;
    let plot_h = HEIGHT - 2.0 * MARGIN;
    let sx = |x: f64| MARGIN + (x - x_lo) / (x_hi - x_lo) * plot_w;
    let sy = |y: f64| MARGIN + (y_hi - y) / (y_hi - y_lo) * plot_h;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<rect x="{MARGIN}" y="{MARGIN}" width="{plot_w}" height="{plot_h}" fill="none" stroke="black"/>"#
    );
    let _ = writeln!(
        s,
        r##"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="#999" stroke-dasharray="4 3"/>"##,
        sx(x_lo),
        sy(0.0),
        sx(x_hi),
        sy(0.0)
    );
    for t in 0..=4 {
        let fx = x_lo + (x_hi - x_lo) * t as f64 / 4.0;
        let fy = y_lo + (y_hi - y_lo) * t as f64 / 4.0;
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{fx:.2}</text>"#,
            sx(fx),
            HEIGHT - MARGIN + 18.0
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{fy:.2}</text>"#,
            MARGIN - 6.0,
            sy(fy) + 4.0
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">log10(lambda)</text>"#,
        MARGIN + plot_w / 2.0,
        HEIGHT - 12.0
    );
    let _ = writeln!(
        s,
        r#"<text x="16" y="{:.2}" text-anchor="middle" transform="rotate(-90 16 {:.2})">standardized coefficient</text>"#,
        MARGIN + plot_h / 2.0,
        MARGIN + plot_h / 2.0
    );
    let _ = writeln!(
        s,
        r#"<text x="{MARGIN}" y="{:.2}">{} path, alpha = {}</text>"#,
        MARGIN - 14.0,
        path.family,
        path.alpha
    );
    for (rank, &j) in order.iter().enumerate() {
        let colour = PALETTE[rank % PALETTE.len()];
        let points: Vec<String> = cols
            .iter()
            .zip(&xs)
            .map(|(&k, &x)| format!("{:.2},{:.2}", sx(x), sy(path.coefficients[(j, k)])))
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline fill="none" stroke="{colour}" stroke-width="1.5" points="{}"/>"#,
            points.join(" ")
        );
        let ly = MARGIN + 10.0 + 18.0 * rank as f64;
        let lx = WIDTH - MARGIN - LEGEND + 16.0;
        let _ = writeln!(
            s,
            r#"<line x1="{lx:.2}" y1="{ly:.2}" x2="{:.2}" y2="{ly:.2}" stroke="{colour}" stroke-width="2"/>"#,
            lx + 18.0
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}">{}</text>"#,
            lx + 24.0,
            ly + 4.0,
            escape(&path.covariate_names[j])
        );
    }
    s.push_str("</svg>\n");
    s
}

fn bounds(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-12 {
        return (lo - 0.5, hi + 0.5);
    }
    let pad = 0.05 * (hi - lo);
    (lo - pad, hi + pad)
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;
    use pgee::PenaltyFamily;

    #[test]
    fn keeps_largest_paths() {
        let path = Path {
            family: PenaltyFamily::Lasso,
            alpha: 1.0,
            lambdas: vec![1.0, 0.1, 0.01],
            coefficients: DMatrix::from_row_slice(3, 3, &[0.0, 0.1, 0.2, 0.0, -0.9, -1.0, 0.0, 0.0, 0.05]),
            valid: vec![true, true, true],
            converged: vec![true, true, true],
            covariate_names: vec!["a".into(), "b<".into(), "c".into()],
        };
        let svg = path_svg(&path, 2);
        assert!(svg.starts_with("<svg"));
        assert_eq!(svg.matches("<polyline").count(), 2);
        assert!(svg.contains("b&lt;"));
        assert!(!svg.contains(">c</text>"));
    }
}
