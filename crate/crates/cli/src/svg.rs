//! Minimal deterministic SVG line plots.
//!
//! Hand-rolled rather than pulled from a plotting crate so that output bytes
//! are a pure function of the data: no timestamps, no font metrics, no
//! randomized element ids. Good enough for the handful of figures the
//! experiment runners emit.

const WIDTH: f64 = 860.0;
const HEIGHT: f64 = 540.0;
const MARGIN_L: f64 = 70.0;
const MARGIN_R: f64 = 20.0;
const MARGIN_T: f64 = 40.0;
const MARGIN_B: f64 = 55.0;

const PALETTE: [&str; 6] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b",
];

pub struct Series {
    pub label: String,
    /// Points with non-finite y are dropped (kernel estimates can be missing
    /// at the horizon).
    pub points: Vec<(f64, f64)>,
    /// Optional confidence band (lo, hi) per point, drawn as a translucent
    /// polygon behind the line.
    pub band: Option<Vec<(f64, f64, f64)>>,
}

impl Series {
    pub fn new(label: &str, points: Vec<(f64, f64)>) -> Series {
        Series {
            label: label.to_string(),
            points,
            band: None,
        }
    }

    pub fn with_band(label: &str, band: Vec<(f64, f64, f64)>) -> Series {
        let points = band.iter().map(|&(x, _, _)| (x, f64::NAN)).collect();
        let mut s = Series::new(label, points);
        s.band = Some(band);
        s
    }
}

pub struct LinePlot {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub series: Vec<Series>,
}

impl LinePlot {
    pub fn new(title: &str, x_label: &str, y_label: &str) -> LinePlot {
        LinePlot {
            title: title.to_string(),
            x_label: x_label.to_string(),
            y_label: y_label.to_string(),
            series: Vec::new(),
        }
    }

    pub fn push(&mut self, series: Series) {
        self.series.push(series);
    }

    fn data_range(&self) -> ((f64, f64), (f64, f64)) {
        let mut xmin = f64::INFINITY;
        let mut xmax = f64::NEG_INFINITY;
        let mut ymin = f64::INFINITY;
        let mut ymax = f64::NEG_INFINITY;
        let mut seen = false;
        for s in &self.series {
            for &(x, y) in &s.points {
                if x.is_finite() {
                    xmin = xmin.min(x);
                    xmax = xmax.max(x);
                }
                if y.is_finite() {
                    ymin = ymin.min(y);
                    ymax = ymax.max(y);
                    seen = true;
                }
            }
            if let Some(band) = &s.band {
                for &(x, lo, hi) in band {
                    if !x.is_finite() {
                        continue;
                    }
                    xmin = xmin.min(x);
                    xmax = xmax.max(x);
                    if lo.is_finite() && hi.is_finite() {
                        ymin = ymin.min(lo);
                        ymax = ymax.max(hi);
                        seen = true;
                    }
                }
            }
        }
        if !seen || !xmin.is_finite() {
            return ((0.0, 1.0), (0.0, 1.0));
        }
        if xmax <= xmin {
            xmax = xmin + 1.0;
        }
        if ymax <= ymin {
            ymax = ymin + 1.0;
        }
        // breathing room on the value axis only; the time axis stays exact
        let pad = 0.06 * (ymax - ymin);
        ((xmin, xmax), (ymin - pad, ymax + pad))
    }

    pub fn render(&self) -> String {
        let ((xmin, xmax), (ymin, ymax)) = self.data_range();
        let px = |x: f64| MARGIN_L + (x - xmin) / (xmax - xmin) * (WIDTH - MARGIN_L - MARGIN_R);
        let py = |y: f64| HEIGHT - MARGIN_B - (y - ymin) / (ymax - ymin) * (HEIGHT - MARGIN_T - MARGIN_B);

        let mut out = String::new();
        out.push_str(&format!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" \
             viewBox=\"0 0 {WIDTH} {HEIGHT}\" font-family=\"sans-serif\">\n"
        ));
        out.push_str(&format!(
            "<rect width=\"{WIDTH}\" height=\"{HEIGHT}\" fill=\"white\"/>\n"
        ));
        out.push_str(&format!(
            "<text x=\"{:.1}\" y=\"24\" font-size=\"16\" text-anchor=\"middle\">{}</text>\n",
            WIDTH / 2.0,
            escape(&self.title)
        ));

        // axes with nice ticks
        for (lo, hi, vertical) in [(xmin, xmax, false), (ymin, ymax, true)] {
            for t in ticks(lo, hi) {
                if vertical {
                    let y = py(t);
                    out.push_str(&format!(
                        "<line x1=\"{:.2}\" y1=\"{y:.2}\" x2=\"{:.2}\" y2=\"{y:.2}\" \
                         stroke=\"#dddddd\" stroke-width=\"1\"/>\n",
                        MARGIN_L,
                        WIDTH - MARGIN_R
                    ));
                    out.push_str(&format!(
                        "<text x=\"{:.2}\" y=\"{:.2}\" font-size=\"11\" text-anchor=\"end\">{}</text>\n",
                        MARGIN_L - 6.0,
                        y + 4.0,
                        fmt_tick(t)
                    ));
                } else {
                    let x = px(t);
                    out.push_str(&format!(
                        "<line x1=\"{x:.2}\" y1=\"{:.2}\" x2=\"{x:.2}\" y2=\"{:.2}\" \
                         stroke=\"#dddddd\" stroke-width=\"1\"/>\n",
                        MARGIN_T,
                        HEIGHT - MARGIN_B
                    ));
                    out.push_str(&format!(
                        "<text x=\"{x:.2}\" y=\"{:.2}\" font-size=\"11\" text-anchor=\"middle\">{}</text>\n",
                        HEIGHT - MARGIN_B + 18.0,
                        fmt_tick(t)
                    ));
                }
            }
        }
        out.push_str(&format!(
            "<rect x=\"{:.1}\" y=\"{:.1}\" width=\"{:.1}\" height=\"{:.1}\" \
             fill=\"none\" stroke=\"#333333\" stroke-width=\"1\"/>\n",
            MARGIN_L,
            MARGIN_T,
            WIDTH - MARGIN_L - MARGIN_R,
            HEIGHT - MARGIN_T - MARGIN_B
        ));
        out.push_str(&format!(
            "<text x=\"{:.1}\" y=\"{:.1}\" font-size=\"13\" text-anchor=\"middle\">{}</text>\n",
            MARGIN_L + (WIDTH - MARGIN_L - MARGIN_R) / 2.0,
            HEIGHT - 12.0,
            escape(&self.x_label)
        ));
        out.push_str(&format!(
            "<text x=\"18\" y=\"{:.1}\" font-size=\"13\" text-anchor=\"middle\" \
             transform=\"rotate(-90 18 {:.1})\">{}</text>\n",
            MARGIN_T + (HEIGHT - MARGIN_T - MARGIN_B) / 2.0,
            MARGIN_T + (HEIGHT - MARGIN_T - MARGIN_B) / 2.0,
            escape(&self.y_label)
        ));

        // bands first so every line stays visible
        for (idx, s) in self.series.iter().enumerate() {
            let color = PALETTE[idx % PALETTE.len()];
            if let Some(band) = &s.band {
                let mut poly = String::new();
                for &(x, lo, _) in band.iter() {
                    if x.is_finite() && lo.is_finite() {
                        poly.push_str(&format!("{:.2},{:.2} ", px(x), py(lo)));
                    }
                }
                for &(x, _, hi) in band.iter().rev() {
                    if x.is_finite() && hi.is_finite() {
                        poly.push_str(&format!("{:.2},{:.2} ", px(x), py(hi)));
                    }
                }
                if !poly.is_empty() {
                    out.push_str(&format!(
                        "<polygon points=\"{}\" fill=\"{color}\" fill-opacity=\"0.15\" stroke=\"none\"/>\n",
                        poly.trim_end()
                    ));
                }
            }
        }
        for (idx, s) in self.series.iter().enumerate() {
            let color = PALETTE[idx % PALETTE.len()];
            let mut path = String::new();
            let mut pen_down = false;
            let pts: Vec<(f64, f64)> = if s.points.iter().any(|p| p.1.is_finite()) {
                s.points.clone()
            } else if let Some(band) = &s.band {
                band.iter().map(|&(x, lo, hi)| (x, 0.5 * (lo + hi))).collect()
            } else {
                Vec::new()
            };
            for (x, y) in pts {
                if x.is_finite() && y.is_finite() {
                    let cmd = if pen_down { 'L' } else { 'M' };
                    path.push_str(&format!("{cmd}{:.2} {:.2} ", px(x), py(y)));
                    pen_down = true;
                } else {
                    pen_down = false;
                }
            }
            if !path.is_empty() {
                out.push_str(&format!(
                    "<path d=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"1.8\"/>\n",
                    path.trim_end()
                ));
            }
        }

        // legend
        for (idx, s) in self.series.iter().enumerate() {
            let color = PALETTE[idx % PALETTE.len()];
            let y = MARGIN_T + 16.0 + 18.0 * idx as f64;
            out.push_str(&format!(
                "<line x1=\"{:.1}\" y1=\"{y:.1}\" x2=\"{:.1}\" y2=\"{y:.1}\" \
                 stroke=\"{color}\" stroke-width=\"2.5\"/>\n",
                MARGIN_L + 10.0,
                MARGIN_L + 34.0
            ));
            out.push_str(&format!(
                "<text x=\"{:.1}\" y=\"{:.1}\" font-size=\"12\">{}</text>\n",
                MARGIN_L + 40.0,
                y + 4.0,
                escape(&s.label)
            ));
        }

        out.push_str("</svg>\n");
        out
    }
}

/// Round-number ticks covering [lo, hi]; between 4 and 9 of them.
fn ticks(lo: f64, hi: f64) -> Vec<f64> {
    let span = hi - lo;
    let raw = span / 5.0;
    let mag = 10f64.powf(raw.log10().floor());
    let norm = raw / mag;
    let step = mag
        * if norm < 1.5 {
            1.0
        } else if norm < 3.5 {
            2.0
        } else if norm < 7.5 {
            5.0
        } else {
            10.0
        };
    let mut t = (lo / step).ceil() * step;
    let mut out = Vec::new();
    while t <= hi + 1e-9 * span {
        // snap -0 to 0 so labels format cleanly
        out.push(if t == 0.0 { 0.0 } else { t });
        t += step;
    }
    out
}

fn fmt_tick(t: f64) -> String {
    if t == t.trunc() && t.abs() < 1e7 {
        format!("{}", t as i64)
    } else {
        let s = format!("{t:.4}");
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
