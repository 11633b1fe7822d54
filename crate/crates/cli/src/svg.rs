//! Hand-rolled SVG learning curves: one panel per metric, cost on the x-axis,
//! a mean line with a +-stddev band per series. No rendering dependencies;
//! output is deterministic byte-for-byte.

use std::fmt::Write;

pub struct SeriesPoint {
    pub cost: f64,
    pub mean: f64,
    pub std: f64,
}

pub struct Series {
    pub label: String,
    pub points: Vec<SeriesPoint>,
}

pub struct Panel {
    pub title: String,
    pub y_min: f64,
    pub y_max: f64,
    pub series: Vec<Series>,
}

const PANEL_W: f64 = 390.0;
const PANEL_H: f64 = 330.0;
const MARGIN_L: f64 = 52.0;
const MARGIN_R: f64 = 14.0;
const MARGIN_T: f64 = 30.0;
const MARGIN_B: f64 = 42.0;

const PALETTE: [&str; 9] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#7f7f7f",
    "#17becf",
];

pub fn render(panels: &[Panel]) -> String {
    let width = 10.0 + PANEL_W * panels.len() as f64;
    let height = PANEL_H + 20.0;
    let mut out = String::new();
    let _ = write!(
        out,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 {width:.0} {height:.0}\" \
         font-family=\"Helvetica, Arial, sans-serif\" font-size=\"11\">\n"
    );
    out.push_str("<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");
    for (i, panel) in panels.iter().enumerate() {
        render_panel(&mut out, panel, 10.0 + PANEL_W * i as f64, 10.0);
    }
    out.push_str("</svg>\n");
    out
}

fn render_panel(out: &mut String, panel: &Panel, x0: f64, y0: f64) {
    let plot_x = x0 + MARGIN_L;
    let plot_y = y0 + MARGIN_T;
    let plot_w = PANEL_W - MARGIN_L - MARGIN_R;
    let plot_h = PANEL_H - MARGIN_T - MARGIN_B;

    let costs: Vec<f64> = panel
        .series
        .iter()
        .flat_map(|s| s.points.iter().map(|p| p.cost))
        .collect();
    let (x_min, x_max) = match (
        costs.iter().cloned().reduce(f64::min),
        costs.iter().cloned().reduce(f64::max),
    ) {
        (Some(lo), Some(hi)) if hi > lo => (lo, hi),
        (Some(lo), _) => (lo - 1.0, lo + 1.0),
        _ => (0.0, 1.0),
    };
    let sx = move |c: f64| plot_x + (c - x_min) / (x_max - x_min) * plot_w;
    let sy = move |v: f64| {
        let clamped = v.clamp(panel.y_min, panel.y_max);
        plot_y + (panel.y_max - clamped) / (panel.y_max - panel.y_min) * plot_h
    };

    let _ = write!(
        out,
        "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\" font-size=\"13\">{}</text>\n",
        plot_x + plot_w / 2.0,
        y0 + 16.0,
        escape(&panel.title)
    );

    for i in 0..=4 {
        let v = panel.y_min + (panel.y_max - panel.y_min) * i as f64 / 4.0;
        let y = sy(v);
        let _ = write!(
            out,
            "<line x1=\"{plot_x:.1}\" y1=\"{y:.1}\" x2=\"{:.1}\" y2=\"{y:.1}\" \
             stroke=\"#dddddd\" stroke-width=\"1\"/>\n",
            plot_x + plot_w
        );
        let _ = write!(
            out,
            "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"end\">{v:.2}</text>\n",
            plot_x - 6.0,
            y + 3.5
        );
    }
    for i in 0..=4 {
        let c = x_min + (x_max - x_min) * i as f64 / 4.0;
        let x = sx(c);
        let _ = write!(
            out,
            "<line x1=\"{x:.1}\" y1=\"{plot_y:.1}\" x2=\"{x:.1}\" y2=\"{:.1}\" \
             stroke=\"#eeeeee\" stroke-width=\"1\"/>\n",
            plot_y + plot_h
        );
        let _ = write!(
            out,
            "<text x=\"{x:.1}\" y=\"{:.1}\" text-anchor=\"middle\">{c:.0}</text>\n",
            plot_y + plot_h + 16.0
        );
    }
    let _ = write!(
        out,
        "<rect x=\"{plot_x:.1}\" y=\"{plot_y:.1}\" width=\"{plot_w:.1}\" height=\"{plot_h:.1}\" \
         fill=\"none\" stroke=\"#333333\" stroke-width=\"1\"/>\n"
    );
    let _ = write!(
        out,
        "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\">annotation cost (pairs)</text>\n",
        plot_x + plot_w / 2.0,
        plot_y + plot_h + 32.0
    );

    for (i, series) in panel.series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        if series.points.is_empty() {
            continue;
        }
        let mut band = String::new();
        for p in &series.points {
            let _ = write!(band, "{:.1},{:.1} ", sx(p.cost), sy(p.mean + p.std));
        }
        for p in series.points.iter().rev() {
            let _ = write!(band, "{:.1},{:.1} ", sx(p.cost), sy(p.mean - p.std));
        }
        let _ = write!(
            out,
            "<polygon points=\"{}\" fill=\"{color}\" fill-opacity=\"0.15\" stroke=\"none\"/>\n",
            band.trim_end()
        );
        let mut line = String::new();
        for p in &series.points {
            let _ = write!(line, "{:.1},{:.1} ", sx(p.cost), sy(p.mean));
        }
        let _ = write!(
            out,
            "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"1.8\"/>\n",
            line.trim_end()
        );
        for p in &series.points {
            let _ = write!(
                out,
                "<circle cx=\"{:.1}\" cy=\"{:.1}\" r=\"2.2\" fill=\"{color}\"/>\n",
                sx(p.cost),
                sy(p.mean)
            );
        }
        let ly = plot_y + 14.0 + 14.0 * i as f64;
        let _ = write!(
            out,
            "<line x1=\"{:.1}\" y1=\"{:.1}\" x2=\"{:.1}\" y2=\"{:.1}\" \
             stroke=\"{color}\" stroke-width=\"2.5\"/>\n",
            plot_x + 8.0,
            ly - 3.5,
            plot_x + 26.0,
            ly - 3.5
        );
        let _ = write!(
            out,
            "<text x=\"{:.1}\" y=\"{ly:.1}\">{}</text>\n",
            plot_x + 31.0,
            escape(&series.label)
        );
    }
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}
