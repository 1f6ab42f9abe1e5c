//! Self-contained SVG report plots. Output is plain text with fixed-width
//! number formatting, so a plot is byte-identical across runs and platforms
//! for identical inputs.

use crate::error::{Error, Result};
use crate::eval::OffsetStats;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const MARGIN_L: f64 = 60.0;
const MARGIN_R: f64 = 20.0;
const MARGIN_T: f64 = 40.0;
const MARGIN_B: f64 = 50.0;

fn fmt(v: f64) -> String {
    format!("{v:.2}")
}

struct Scale {
    lo: f64,
    hi: f64,
    out_lo: f64,
    out_hi: f64,
}

impl Scale {
    fn map(&self, v: f64) -> f64 {
        self.out_lo + (v - self.lo) / (self.hi - self.lo) * (self.out_hi - self.out_lo)
    }
}

fn header(title: &str) -> String {
    format!(
        concat!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" ",
            "viewBox=\"0 0 {w} {h}\">\n",
            "<rect width=\"{w}\" height=\"{h}\" fill=\"white\"/>\n",
            "<text x=\"{cx}\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\" ",
            "font-size=\"16\">{title}</text>\n"
        ),
        w = WIDTH,
        h = HEIGHT,
        cx = WIDTH / 2.0,
        title = title,
    )
}

fn axis_label_x(text: &str) -> String {
    format!(
        "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">{text}</text>\n",
        (MARGIN_L + WIDTH - MARGIN_R) / 2.0,
        HEIGHT - 12.0,
    )
}

fn x_tick(x: f64, label: &str) -> String {
    let y0 = HEIGHT - MARGIN_B;
    format!(
        concat!(
            "<line x1=\"{x}\" y1=\"{y0}\" x2=\"{x}\" y2=\"{y1}\" stroke=\"black\"/>\n",
            "<text x=\"{x}\" y=\"{ty}\" text-anchor=\"middle\" font-family=\"sans-serif\" ",
            "font-size=\"11\">{label}</text>\n"
        ),
        x = fmt(x),
        y0 = fmt(y0),
        y1 = fmt(y0 + 5.0),
        ty = fmt(y0 + 18.0),
        label = label,
    )
}

/// Histogram of detection offsets (predicted minus annotated approach time).
/// One bar per occupied bin, plus a dashed marker at the mean.
pub fn offset_histogram_svg(stats: &OffsetStats) -> Result<String> {
    if stats.histogram.is_empty() {
        return Err(Error::invalid("histogram has no bins"));
    }
    if !(stats.bin_width_s > 0.0) {
        return Err(Error::invalid("histogram bin width must be positive"));
    }
    let lo = stats.histogram[0].0;
    let hi = stats.histogram.last().unwrap().0 + stats.bin_width_s;
    let max_count = stats.histogram.iter().map(|(_, c)| *c).max().unwrap();
    if max_count == 0 {
        return Err(Error::invalid("histogram is all zeros"));
    }
    let pad = 0.05 * (hi - lo);
    let xs = Scale {
        lo: lo - pad,
        hi: hi + pad,
        out_lo: MARGIN_L,
        out_hi: WIDTH - MARGIN_R,
    };
    let ys = Scale {
        lo: 0.0,
        hi: max_count as f64 * 1.1,
        out_lo: HEIGHT - MARGIN_B,
        out_hi: MARGIN_T,
    };

    let mut out = header("Detection offsets");
    let base = HEIGHT - MARGIN_B;
    for (start, count) in &stats.histogram {
        let x0 = xs.map(*start);
        let x1 = xs.map(*start + stats.bin_width_s);
        let y = ys.map(*count as f64);
        out.push_str(&format!(
            "<rect class=\"bar\" x=\"{x}\" y=\"{y}\" width=\"{w}\" height=\"{h}\" fill=\"#4878a8\" stroke=\"white\"/>\n",
            x = fmt(x0),
            y = fmt(y),
            w = fmt(x1 - x0),
            h = fmt(base - y),
        ));
    }

    // Axes, a few x ticks, integer y ticks.
    out.push_str(&format!(
        "<line x1=\"{l}\" y1=\"{b}\" x2=\"{r}\" y2=\"{b}\" stroke=\"black\"/>\n<line x1=\"{l}\" y1=\"{t}\" x2=\"{l}\" y2=\"{b}\" stroke=\"black\"/>\n",
        l = fmt(MARGIN_L),
        r = fmt(WIDTH - MARGIN_R),
        t = fmt(MARGIN_T),
        b = fmt(base),
    ));
    for frac in [0.0, 0.5, 1.0] {
        let v = lo + frac * (hi - lo);
        out.push_str(&x_tick(xs.map(v), &format!("{v:.3}")));
    }
    let y_step = (max_count / 4).max(1);
    let mut c = 0;
    while c <= max_count {
        let y = ys.map(c as f64);
        out.push_str(&format!(
            concat!(
                "<line x1=\"{x0}\" y1=\"{y}\" x2=\"{x1}\" y2=\"{y}\" stroke=\"black\"/>\n",
                "<text x=\"{tx}\" y=\"{ty}\" text-anchor=\"end\" font-family=\"sans-serif\" ",
                "font-size=\"11\">{c}</text>\n"
            ),
            x0 = fmt(MARGIN_L - 5.0),
            x1 = fmt(MARGIN_L),
            y = fmt(y),
            tx = fmt(MARGIN_L - 8.0),
            ty = fmt(y + 4.0),
            c = c,
        ));
        c += y_step;
    }

    // Mean marker.
    let mx = xs.map(stats.mean_s);
    out.push_str(&format!(
        concat!(
            "<line class=\"mean\" x1=\"{x}\" y1=\"{t}\" x2=\"{x}\" y2=\"{b}\" stroke=\"#b54a32\" ",
            "stroke-dasharray=\"4 3\"/>\n",
            "<text x=\"{x}\" y=\"{ty}\" text-anchor=\"middle\" font-family=\"sans-serif\" ",
            "font-size=\"11\" fill=\"#b54a32\">mean {m:.3} s</text>\n"
        ),
        x = fmt(mx),
        t = fmt(MARGIN_T),
        b = fmt(base),
        ty = fmt(MARGIN_T - 6.0),
        m = stats.mean_s,
    ));
    out.push_str(&axis_label_x("offset (s)"));
    out.push_str("</svg>\n");
    Ok(out)
}

/// Profile maxima of vehicle and background clips as two point rows, with
/// the decision threshold and, when the classes separate, the shaded gap
/// between them.
pub fn maxima_scatter_svg(
    vehicle_maxima: &[f64],
    noise_maxima: &[f64],
    threshold: f64,
) -> Result<String> {
    if vehicle_maxima.is_empty() || noise_maxima.is_empty() {
        return Err(Error::invalid("both maxima sets must be non-empty"));
    }
    if vehicle_maxima
        .iter()
        .chain(noise_maxima)
        .chain(std::iter::once(&threshold))
        .any(|v| !v.is_finite())
    {
        return Err(Error::invalid("maxima and threshold must be finite"));
    }
    let lo = vehicle_maxima
        .iter()
        .chain(noise_maxima)
        .chain(std::iter::once(&threshold))
        .fold(f64::INFINITY, |m, v| m.min(*v));
    let hi = vehicle_maxima
        .iter()
        .chain(noise_maxima)
        .chain(std::iter::once(&threshold))
        .fold(f64::NEG_INFINITY, |m, v| m.max(*v));
    let span = (hi - lo).max(1e-9);
    let xs = Scale {
        lo: lo - 0.05 * span,
        hi: hi + 0.05 * span,
        out_lo: MARGIN_L,
        out_hi: WIDTH - MARGIN_R,
    };
    let y_vehicle = MARGIN_T + (HEIGHT - MARGIN_T - MARGIN_B) / 3.0;
    let y_noise = MARGIN_T + 2.0 * (HEIGHT - MARGIN_T - MARGIN_B) / 3.0;

    let mut out = header("Profile maxima by clip class");

    // Shaded separation band when the classes do not overlap.
    let min_vehicle = vehicle_maxima.iter().copied().fold(f64::INFINITY, f64::min);
    let max_noise = noise_maxima.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if min_vehicle > max_noise {
        let x0 = xs.map(max_noise);
        let x1 = xs.map(min_vehicle);
        out.push_str(&format!(
            "<rect class=\"band\" x=\"{x}\" y=\"{y}\" width=\"{w}\" height=\"{h}\" fill=\"#e8e4a0\" opacity=\"0.6\"/>\n",
            x = fmt(x0),
            y = fmt(MARGIN_T),
            w = fmt(x1 - x0),
            h = fmt(HEIGHT - MARGIN_T - MARGIN_B),
        ));
    }

    for (class, y, color, values) in [
        ("pt-vehicle", y_vehicle, "#2a7d4f", vehicle_maxima),
        ("pt-noise", y_noise, "#b54a32", noise_maxima),
    ] {
        for v in values {
            out.push_str(&format!(
                "<circle class=\"{class}\" cx=\"{x}\" cy=\"{y}\" r=\"4\" fill=\"{color}\" opacity=\"0.7\"/>\n",
                x = fmt(xs.map(*v)),
                y = fmt(y),
            ));
        }
    }
    out.push_str(&format!(
        concat!(
            "<text x=\"{tx}\" y=\"{vy}\" text-anchor=\"end\" font-family=\"sans-serif\" ",
            "font-size=\"12\">vehicle</text>\n",
            "<text x=\"{tx}\" y=\"{ny}\" text-anchor=\"end\" font-family=\"sans-serif\" ",
            "font-size=\"12\">background</text>\n"
        ),
        tx = fmt(MARGIN_L - 8.0),
        vy = fmt(y_vehicle + 4.0),
        ny = fmt(y_noise + 4.0),
    ));

    let t_x = xs.map(threshold);
    out.push_str(&format!(
        concat!(
            "<line class=\"threshold\" x1=\"{x}\" y1=\"{t}\" x2=\"{x}\" y2=\"{b}\" ",
            "stroke=\"black\" stroke-dasharray=\"4 3\"/>\n",
            "<text x=\"{x}\" y=\"{ty}\" text-anchor=\"middle\" font-family=\"sans-serif\" ",
            "font-size=\"11\">threshold {thr:.3}</text>\n"
        ),
        x = fmt(t_x),
        t = fmt(MARGIN_T),
        b = fmt(HEIGHT - MARGIN_B),
        ty = fmt(MARGIN_T - 6.0),
        thr = threshold,
    ));

    // X axis with three value ticks.
    out.push_str(&format!(
        "<line x1=\"{l}\" y1=\"{b}\" x2=\"{r}\" y2=\"{b}\" stroke=\"black\"/>\n",
        l = fmt(MARGIN_L),
        r = fmt(WIDTH - MARGIN_R),
        b = fmt(HEIGHT - MARGIN_B),
    ));
    for frac in [0.0, 0.5, 1.0] {
        let v = lo + frac * (hi - lo);
        out.push_str(&x_tick(xs.map(v), &format!("{v:.2}")));
    }
    out.push_str(&axis_label_x("profile maximum"));
    out.push_str("</svg>\n");
    Ok(out)
}
