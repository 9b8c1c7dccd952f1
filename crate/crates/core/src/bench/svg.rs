//! Hand-written, deterministic SVG figures.

use std::fmt::Write;

use super::{LadderReport, SweepReport};

const W: f64 = 640.0;
const H: f64 = 400.0;
const LEFT: f64 = 90.0;
const RIGHT: f64 = 610.0;
const TOP: f64 = 50.0;
const BOTTOM: f64 = 330.0;
const SERIES: [&str; 2] = ["#1f77b4", "#d62728"];

/// Decade-aligned log axis covering `values`.
struct LogAxis {
    lo: f64,
    hi: f64,
}

impl LogAxis {
    fn covering(values: impl Iterator<Item = f64>) -> Self {
        let (mut min, mut max) = (f64::INFINITY, 0.0f64);
        for v in values.filter(|v| *v > 0.0) {
            min = min.min(v);
            max = max.max(v);
        }
        if !min.is_finite() {
            return LogAxis { lo: 0.0, hi: 1.0 };
        }
        let lo = min.log10().floor();
        let hi = max.log10().ceil().max(lo + 1.0);
        LogAxis { lo, hi }
    }

    fn frac(&self, v: f64) -> f64 {
        let l = if v > 0.0 { v.log10() } else { self.lo };
        ((l - self.lo) / (self.hi - self.lo)).clamp(0.0, 1.0)
    }

    fn decades(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        (self.lo as i32..=self.hi as i32).map(|e| (10f64.powi(e), f64::from(e)))
    }
}

fn y_of(frac: f64) -> f64 {
    BOTTOM - frac * (BOTTOM - TOP)
}

fn x_of(frac: f64) -> f64 {
    LEFT + frac * (RIGHT - LEFT)
}

fn open(out: &mut String, title: &str) {
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(
        out,
        r#"<text x="{}" y="24" text-anchor="middle" font-size="15">{title}</text>"#,
        W / 2.0
    );
    let _ = writeln!(
        out,
        r#"<line x1="{LEFT}" y1="{BOTTOM}" x2="{RIGHT}" y2="{BOTTOM}" stroke="black"/>"#
    );
    let _ = writeln!(
        out,
        r#"<line x1="{LEFT}" y1="{TOP}" x2="{LEFT}" y2="{BOTTOM}" stroke="black"/>"#
    );
}

fn y_label(out: &mut String, label: &str) {
    let _ = writeln!(
        out,
        r#"<text x="20" y="{:.2}" text-anchor="middle" transform="rotate(-90 20 {:.2})">{label}</text>"#,
        (TOP + BOTTOM) / 2.0,
        (TOP + BOTTOM) / 2.0
    );
}

fn x_label(out: &mut String, label: &str) {
    let _ = writeln!(
        out,
        r#"<text x="{:.2}" y="{}" text-anchor="middle">{label}</text>"#,
        (LEFT + RIGHT) / 2.0,
        H - 12.0
    );
}

fn log_y_ticks(out: &mut String, axis: &LogAxis) {
    for (v, e) in axis.decades() {
        let y = y_of(axis.frac(v));
        let _ = writeln!(
            out,
            r##"<line x1="{LEFT}" y1="{y:.2}" x2="{RIGHT}" y2="{y:.2}" stroke="#dddddd"/>"##
        );
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="end">1e{e}</text>"#,
            LEFT - 6.0,
            y + 4.0
        );
    }
}

/// Bar chart of latency per rung on a log axis.
pub fn ladder_svg(r: &LadderReport) -> String {
    let mut out = String::new();
    open(&mut out, &format!("{} latency by rung", r.kernel));
    y_label(&mut out, "latency (us, log scale)");
    let axis = LogAxis::covering(r.rows.iter().map(|row| row.latency_us));
    log_y_ticks(&mut out, &axis);
    let slot = (RIGHT - LEFT) / r.rows.len().max(1) as f64;
    for (i, row) in r.rows.iter().enumerate() {
        let x = LEFT + slot * (i as f64 + 0.2);
        let y = y_of(axis.frac(row.latency_us));
        let _ = writeln!(
            out,
            r##"<rect x="{x:.2}" y="{y:.2}" width="{:.2}" height="{:.2}" fill="#4c72b0"/>"##,
            slot * 0.6,
            BOTTOM - y
        );
        let cx = x + slot * 0.3;
        let _ = writeln!(
            out,
            r#"<text x="{cx:.2}" y="{:.2}" text-anchor="middle">{:.3}</text>"#,
            y - 6.0,
            row.latency_us
        );
        let _ = writeln!(
            out,
            r#"<text x="{cx:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
            BOTTOM + 18.0,
            row.rung.label()
        );
    }
    out.push_str("</svg>\n");
    out
}

fn size_axis(r: &SweepReport) -> LogAxis {
    let (min, max) = r
        .points
        .iter()
        .fold((f64::INFINITY, 0.0f64), |(lo, hi), p| {
            (
                lo.min(f64::from(p.n_elements)),
                hi.max(f64::from(p.n_elements)),
            )
        });
    let lo = min.log10();
    LogAxis {
        lo,
        hi: if max > min { max.log10() } else { lo + 1.0 },
    }
}

fn size_ticks(out: &mut String, r: &SweepReport, xs: &LogAxis) {
    for p in &r.points {
        let x = x_of(xs.frac(f64::from(p.n_elements)));
        let _ = writeln!(
            out,
            r#"<line x1="{x:.2}" y1="{BOTTOM}" x2="{x:.2}" y2="{:.2}" stroke="black"/>"#,
            BOTTOM + 4.0
        );
        let _ = writeln!(
            out,
            r#"<text x="{x:.2}" y="{:.2}" text-anchor="end" transform="rotate(-35 {x:.2} {:.2})">{}</text>"#,
            BOTTOM + 16.0,
            BOTTOM + 16.0,
            p.n_elements
        );
    }
    x_label(out, "elements (log scale)");
}

fn polyline(out: &mut String, points: &[(f64, f64)], color: &str) {
    let pts: Vec<String> = points
        .iter()
        .map(|(x, y)| format!("{x:.2},{y:.2}"))
        .collect();
    let _ = writeln!(
        out,
        r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#,
        pts.join(" ")
    );
}

fn legend(out: &mut String, entries: &[(&str, &str)]) {
    for (i, (name, color)) in entries.iter().enumerate() {
        let y = TOP + 10.0 + 18.0 * i as f64;
        let _ = writeln!(
            out,
            r#"<line x1="{:.2}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="{color}" stroke-width="2"/>"#,
            RIGHT - 150.0,
            RIGHT - 125.0
        );
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{:.2}">{name}</text>"#,
            RIGHT - 118.0,
            y + 4.0
        );
    }
}

/// Single- and multi-threaded latency against size, log-log.
pub fn sweep_latency_svg(r: &SweepReport) -> String {
    let mut out = String::new();
    open(&mut out, &format!("{} latency vs. size", r.kernel));
    y_label(&mut out, "latency (us, log scale)");
    let xs = size_axis(r);
    let ys = LogAxis::covering(
        r.points
            .iter()
            .flat_map(|p| [p.single_thread_us, p.multi_thread_us]),
    );
    log_y_ticks(&mut out, &ys);
    size_ticks(&mut out, r, &xs);
    let series = |f: fn(&super::SweepPoint) -> f64| -> Vec<(f64, f64)> {
        r.points
            .iter()
            .map(|p| (x_of(xs.frac(f64::from(p.n_elements))), y_of(ys.frac(f(p)))))
            .collect()
    };
    polyline(&mut out, &series(|p| p.single_thread_us), SERIES[0]);
    polyline(&mut out, &series(|p| p.multi_thread_us), SERIES[1]);
    legend(
        &mut out,
        &[("single-thread", SERIES[0]), ("multi-thread", SERIES[1])],
    );
    out.push_str("</svg>\n");
    out
}

/// Multi-thread speedup against size, log-x, with the thread count marked.
pub fn sweep_speedup_svg(r: &SweepReport) -> String {
    let mut out = String::new();
    open(
        &mut out,
        &format!("{} multi-thread speedup vs. size", r.kernel),
    );
    y_label(&mut out, "speedup (single / multi)");
    let xs = size_axis(r);
    let threads = f64::from(r.machine.threads);
    let top = r
        .points
        .iter()
        .map(|p| p.speedup)
        .fold(threads, f64::max)
        .ceil()
        .max(1.0);
    let y = |v: f64| y_of(v / top);
    for k in 0..=top as u32 {
        let yy = y(f64::from(k));
        let _ = writeln!(
            out,
            r##"<line x1="{LEFT}" y1="{yy:.2}" x2="{RIGHT}" y2="{yy:.2}" stroke="#dddddd"/>"##
        );
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{k}</text>"#,
            LEFT - 6.0,
            yy + 4.0
        );
    }
    let _ = writeln!(
        out,
        r##"<line x1="{LEFT}" y1="{0:.2}" x2="{RIGHT}" y2="{0:.2}" stroke="#888888" stroke-dasharray="6 4"/>"##,
        y(threads)
    );
    size_ticks(&mut out, r, &xs);
    let pts: Vec<(f64, f64)> = r
        .points
        .iter()
        .map(|p| (x_of(xs.frac(f64::from(p.n_elements))), y(p.speedup)))
        .collect();
    polyline(&mut out, &pts, SERIES[1]);
    legend(
        &mut out,
        &[("speedup", SERIES[1]), ("thread count", "#888888")],
    );
    out.push_str("</svg>\n");
    out
}
