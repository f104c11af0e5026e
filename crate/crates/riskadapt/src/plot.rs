//! Hand-emitted deterministic SVG plots: learning curves with standard-error
//! bands, success-rate bars over target velocities, and CV traces with
//! shaded push windows. No timestamps, fixed viewBox, fixed palette, fixed
//! number formatting — identical inputs yield identical bytes.

use std::fmt::Write as _;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum PlotError {
    #[error("plot input missing column `{0}`")]
    MissingColumn(String),
    #[error("plot input row {row}: {why}")]
    BadRow { row: usize, why: String },
    #[error("unknown plot kind `{0}` (expected learning-curves, velocity-bars, cv-trace)")]
    UnknownKind(String),
}

const WIDTH: f64 = 800.0;
const HEIGHT: f64 = 480.0;
const MARGIN_L: f64 = 70.0;
const MARGIN_R: f64 = 30.0;
const MARGIN_T: f64 = 40.0;
const MARGIN_B: f64 = 55.0;

const PALETTE: [&str; 6] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b",
];

struct Axes {
    x_min: f64,
    x_max: f64,
    y_min: f64,
    y_max: f64,
}

impl Axes {
    fn from_ranges(x: (f64, f64), y: (f64, f64)) -> Self {
        let pad = |lo: f64, hi: f64| {
            if lo == hi {
                (lo - 1.0, hi + 1.0)
            } else {
                let span = hi - lo;
                (lo - 0.04 * span, hi + 0.04 * span)
            }
        };
        let (x_min, x_max) = pad(x.0, x.1);
        let (y_min, y_max) = pad(y.0, y.1);
        Self {
            x_min,
            x_max,
            y_min,
            y_max,
        }
    }

    fn px(&self, x: f64) -> f64 {
        MARGIN_L + (x - self.x_min) / (self.x_max - self.x_min) * (WIDTH - MARGIN_L - MARGIN_R)
    }

    fn py(&self, y: f64) -> f64 {
        HEIGHT - MARGIN_B
            - (y - self.y_min) / (self.y_max - self.y_min) * (HEIGHT - MARGIN_T - MARGIN_B)
    }
}

fn svg_open(out: &mut String, title: &str) {
    let _ = writeln!(
        out,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 {WIDTH} {HEIGHT}\" font-family=\"monospace\" font-size=\"13\">"
    );
    let _ = writeln!(out, "<rect width=\"{WIDTH}\" height=\"{HEIGHT}\" fill=\"white\"/>");
    let _ = writeln!(
        out,
        "<text x=\"{:.2}\" y=\"24\" text-anchor=\"middle\" font-size=\"16\">{title}</text>",
        WIDTH / 2.0
    );
}

fn svg_axes(out: &mut String, axes: &Axes, x_label: &str, y_label: &str) {
    let (x0, y0) = (MARGIN_L, HEIGHT - MARGIN_B);
    let (x1, y1) = (WIDTH - MARGIN_R, MARGIN_T);
    let _ = writeln!(
        out,
        "<line x1=\"{x0:.2}\" y1=\"{y0:.2}\" x2=\"{x1:.2}\" y2=\"{y0:.2}\" stroke=\"black\"/>"
    );
    let _ = writeln!(
        out,
        "<line x1=\"{x0:.2}\" y1=\"{y0:.2}\" x2=\"{x0:.2}\" y2=\"{y1:.2}\" stroke=\"black\"/>"
    );
    for i in 0..=4 {
        let fx = axes.x_min + (axes.x_max - axes.x_min) * i as f64 / 4.0;
        let fy = axes.y_min + (axes.y_max - axes.y_min) * i as f64 / 4.0;
        let px = axes.px(fx);
        let py = axes.py(fy);
        let _ = writeln!(
            out,
            "<line x1=\"{px:.2}\" y1=\"{y0:.2}\" x2=\"{px:.2}\" y2=\"{:.2}\" stroke=\"#cccccc\" stroke-dasharray=\"3,3\"/>",
            MARGIN_T
        );
        let _ = writeln!(
            out,
            "<text x=\"{px:.2}\" y=\"{:.2}\" text-anchor=\"middle\">{}</text>",
            y0 + 18.0,
            format_tick(fx)
        );
        let _ = writeln!(
            out,
            "<line x1=\"{x0:.2}\" y1=\"{py:.2}\" x2=\"{:.2}\" y2=\"{py:.2}\" stroke=\"#eeeeee\"/>",
            WIDTH - MARGIN_R
        );
        let _ = writeln!(
            out,
            "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"end\">{}</text>",
            x0 - 8.0,
            py + 4.0,
            format_tick(fy)
        );
    }
    let _ = writeln!(
        out,
        "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"middle\">{x_label}</text>",
        (MARGIN_L + WIDTH - MARGIN_R) / 2.0,
        HEIGHT - 12.0
    );
    let _ = writeln!(
        out,
        "<text x=\"18\" y=\"{:.2}\" text-anchor=\"middle\" transform=\"rotate(-90 18 {:.2})\">{y_label}</text>",
        (MARGIN_T + HEIGHT - MARGIN_B) / 2.0,
        (MARGIN_T + HEIGHT - MARGIN_B) / 2.0
    );
}

fn format_tick(v: f64) -> String {
    if v == 0.0 {
        "0".to_string()
    } else if v.abs() >= 1000.0 {
        format!("{v:.0}")
    } else if v.abs() >= 1.0 {
        format!("{v:.2}")
    } else {
        format!("{v:.3}")
    }
}

fn no_data_svg(title: &str, x_label: &str, y_label: &str) -> String {
    let mut out = String::new();
    svg_open(&mut out, title);
    let axes = Axes::from_ranges((0.0, 1.0), (0.0, 1.0));
    svg_axes(&mut out, &axes, x_label, y_label);
    let _ = writeln!(
        out,
        "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"middle\" font-size=\"20\" fill=\"#888888\">no data</text>",
        WIDTH / 2.0,
        HEIGHT / 2.0
    );
    out.push_str("</svg>\n");
    out
}

fn polyline(points: &[(f64, f64)], axes: &Axes, color: &str, width: f64) -> String {
    let mut path = String::from("<polyline fill=\"none\" points=\"");
    for (x, y) in points {
        let _ = write!(path, "{:.2},{:.2} ", axes.px(*x), axes.py(*y));
    }
    let _ = writeln!(path, "\" stroke=\"{color}\" stroke-width=\"{width}\"/>");
    path
}

fn column_index(header: &[String], name: &str) -> Result<usize, PlotError> {
    header
        .iter()
        .position(|h| h == name)
        .ok_or_else(|| PlotError::MissingColumn(name.to_string()))
}

fn get_f64(rows: &[Vec<String>], row: usize, col: usize) -> Result<f64, PlotError> {
    rows[row][col].parse::<f64>().map_err(|_| PlotError::BadRow {
        row: row + 2,
        why: format!("cannot parse `{}` as a number", rows[row][col]),
    })
}

/// Reward curves per risk mode with a standard-error band. Accepts the sweep
/// long format (`risk_mode,seeds,iteration,mean_total_reward,stderr_total_reward`)
/// or a single run's stats CSV.
pub fn render_learning_curves(
    header: &[String],
    rows: &[Vec<String>],
) -> Result<String, PlotError> {
    let title = "learning curves";
    if rows.is_empty() {
        return Ok(no_data_svg(title, "iteration", "total reward"));
    }

    struct Series {
        label: String,
        points: Vec<(f64, f64)>,
        band: Vec<(f64, f64, f64)>,
    }
    let mut series: Vec<Series> = Vec::new();

    if header.iter().any(|h| h == "risk_mode") {
        let mode_col = column_index(header, "risk_mode")?;
        let iter_col = column_index(header, "iteration")?;
        let mean_col = column_index(header, "mean_total_reward")?;
        let err_col = column_index(header, "stderr_total_reward")?;
        for r in 0..rows.len() {
            let mode = rows[r][mode_col].clone();
            let x = get_f64(rows, r, iter_col)?;
            let y = get_f64(rows, r, mean_col)?;
            let e = get_f64(rows, r, err_col)?;
            match series.iter_mut().find(|s| s.label == mode) {
                Some(s) => {
                    s.points.push((x, y));
                    s.band.push((x, y - e, y + e));
                }
                None => series.push(Series {
                    label: mode,
                    points: vec![(x, y)],
                    band: vec![(x, y - e, y + e)],
                }),
            }
        }
    } else {
        let iter_col = column_index(header, "iteration")?;
        let reward_col = column_index(header, "total_reward")?;
        let mut points = Vec::with_capacity(rows.len());
        for r in 0..rows.len() {
            points.push((get_f64(rows, r, iter_col)?, get_f64(rows, r, reward_col)?));
        }
        series.push(Series {
            label: "total_reward".into(),
            band: points.iter().map(|&(x, y)| (x, y, y)).collect(),
            points,
        });
    }

    let xs = series.iter().flat_map(|s| s.points.iter().map(|p| p.0));
    let lo_ys = series.iter().flat_map(|s| s.band.iter().map(|b| b.1));
    let hi_ys = series.iter().flat_map(|s| s.band.iter().map(|b| b.2));
    let x_range = (
        xs.clone().fold(f64::INFINITY, f64::min),
        xs.fold(f64::NEG_INFINITY, f64::max),
    );
    let y_range = (
        lo_ys.fold(f64::INFINITY, f64::min),
        hi_ys.fold(f64::NEG_INFINITY, f64::max),
    );
    let axes = Axes::from_ranges(x_range, y_range);

    let mut out = String::new();
    svg_open(&mut out, title);
    svg_axes(&mut out, &axes, "iteration", "total reward");
    for (idx, s) in series.iter().enumerate() {
        let color = PALETTE[idx % PALETTE.len()];
        if s.band.iter().any(|b| b.2 - b.1 > 0.0) {
            let mut poly = String::from("<polygon points=\"");
            for (x, lo, _) in &s.band {
                let _ = write!(poly, "{:.2},{:.2} ", axes.px(*x), axes.py(*lo));
            }
            for (x, _, hi) in s.band.iter().rev() {
                let _ = write!(poly, "{:.2},{:.2} ", axes.px(*x), axes.py(*hi));
            }
            let _ = writeln!(poly, "\" fill=\"{color}\" opacity=\"0.15\"/>");
            out.push_str(&poly);
        }
        out.push_str(&polyline(&s.points, &axes, color, 1.8));
        let _ = writeln!(
            out,
            "<text x=\"{:.2}\" y=\"{:.2}\" fill=\"{color}\">{}</text>",
            MARGIN_L + 10.0,
            MARGIN_T + 16.0 + 16.0 * idx as f64,
            s.label
        );
    }
    out.push_str("</svg>\n");
    Ok(out)
}

/// Success-rate bars over the velocity grid of a metrics CSV.
pub fn render_velocity_bars(
    header: &[String],
    rows: &[Vec<String>],
) -> Result<String, PlotError> {
    let title = "success rate by target velocity";
    let kind_col = column_index(header, "row_kind")?;
    let vel_col = column_index(header, "target_velocity")?;
    let succ_col = column_index(header, "success_rate")?;

    let mut bars: Vec<(f64, f64)> = Vec::new();
    for r in 0..rows.len() {
        if rows[r][kind_col] != "velocity" {
            continue;
        }
        bars.push((get_f64(rows, r, vel_col)?, get_f64(rows, r, succ_col)?));
    }
    if bars.is_empty() {
        return Ok(no_data_svg(title, "target velocity (m/s)", "success rate"));
    }
    bars.sort_by(|a, b| a.0.total_cmp(&b.0));

    let x_range = (bars[0].0, bars[bars.len() - 1].0);
    let axes = Axes::from_ranges(x_range, (0.0, 1.0));
    let slot = (WIDTH - MARGIN_L - MARGIN_R) / bars.len() as f64;
    let bar_w = slot * 0.6;

    let mut out = String::new();
    svg_open(&mut out, title);
    svg_axes(&mut out, &axes, "target velocity (m/s)", "success rate");
    for (x, y) in &bars {
        let cx = axes.px(*x);
        let top = axes.py(*y);
        let base = axes.py(0.0);
        let _ = writeln!(
            out,
            "<rect x=\"{:.2}\" y=\"{top:.2}\" width=\"{bar_w:.2}\" height=\"{:.2}\" fill=\"{}\" opacity=\"0.85\"/>",
            cx - bar_w / 2.0,
            base - top,
            PALETTE[0]
        );
    }
    out.push_str("</svg>\n");
    Ok(out)
}

/// CV trace over time with the velocity deviation and shaded push windows.
pub fn render_cv_trace(header: &[String], rows: &[Vec<String>]) -> Result<String, PlotError> {
    let title = "uncertainty under disturbances";
    if rows.is_empty() {
        return Ok(no_data_svg(title, "time (s)", "mean CV"));
    }
    let t_col = column_index(header, "t_seconds")?;
    let cv_col = column_index(header, "mean_cv")?;
    let dev_col = column_index(header, "velocity_deviation")?;
    let push_col = column_index(header, "push_active")?;

    let mut cv_points = Vec::with_capacity(rows.len());
    let mut dev_points = Vec::with_capacity(rows.len());
    let mut pushes: Vec<(f64, bool)> = Vec::with_capacity(rows.len());
    for r in 0..rows.len() {
        let t = get_f64(rows, r, t_col)?;
        cv_points.push((t, get_f64(rows, r, cv_col)?));
        dev_points.push((t, get_f64(rows, r, dev_col)?));
        pushes.push((t, rows[r][push_col] == "1" || rows[r][push_col] == "true"));
    }

    let y_max = cv_points
        .iter()
        .map(|p| p.1)
        .chain(dev_points.iter().map(|p| p.1))
        .fold(f64::NEG_INFINITY, f64::max);
    let y_min = cv_points
        .iter()
        .map(|p| p.1)
        .chain(dev_points.iter().map(|p| p.1))
        .fold(f64::INFINITY, f64::min);
    let axes = Axes::from_ranges(
        (cv_points[0].0, cv_points[cv_points.len() - 1].0),
        (y_min.min(0.0), y_max),
    );

    let mut out = String::new();
    svg_open(&mut out, title);

    // shade push windows behind everything else
    let mut window_start: Option<f64> = None;
    let mut shaded: Vec<(f64, f64)> = Vec::new();
    for &(t, active) in &pushes {
        match (window_start, active) {
            (None, true) => window_start = Some(t),
            (Some(start), false) => {
                shaded.push((start, t));
                window_start = None;
            }
            _ => {}
        }
    }
    if let Some(start) = window_start {
        shaded.push((start, pushes[pushes.len() - 1].0));
    }
    for (start, end) in shaded {
        let _ = writeln!(
            out,
            "<rect x=\"{:.2}\" y=\"{MARGIN_T:.2}\" width=\"{:.2}\" height=\"{:.2}\" fill=\"#f2c94c\" opacity=\"0.3\"/>",
            axes.px(start),
            axes.px(end) - axes.px(start),
            HEIGHT - MARGIN_T - MARGIN_B
        );
    }

    svg_axes(&mut out, &axes, "time (s)", "mean CV / |v - v_c|");
    out.push_str(&polyline(&cv_points, &axes, PALETTE[0], 1.8));
    out.push_str(&polyline(&dev_points, &axes, PALETTE[1], 1.2));
    let _ = writeln!(
        out,
        "<text x=\"{:.2}\" y=\"{:.2}\" fill=\"{}\">mean CV</text>",
        MARGIN_L + 10.0,
        MARGIN_T + 16.0,
        PALETTE[0]
    );
    let _ = writeln!(
        out,
        "<text x=\"{:.2}\" y=\"{:.2}\" fill=\"{}\">velocity deviation</text>",
        MARGIN_L + 10.0,
        MARGIN_T + 32.0,
        PALETTE[1]
    );
    out.push_str("</svg>\n");
    Ok(out)
}

/// Dispatch by plot kind name.
pub fn render(
    kind: &str,
    header: &[String],
    rows: &[Vec<String>],
) -> Result<String, PlotError> {
    match kind {
        "learning-curves" => render_learning_curves(header, rows),
        "velocity-bars" => render_velocity_bars(header, rows),
        "cv-trace" => render_cv_trace(header, rows),
        other => Err(PlotError::UnknownKind(other.to_string())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn to_rows(text: &str) -> (Vec<String>, Vec<Vec<String>>) {
        let mut lines = text.lines();
        let header: Vec<String> = lines.next().unwrap().split(',').map(str::to_string).collect();
        let rows = lines
            .map(|l| l.split(',').map(str::to_string).collect())
            .collect();
        (header, rows)
    }

    #[test]
    fn empty_data_yields_valid_svg_with_annotation() {
        let (header, _) = to_rows("t_seconds,mean_cv,velocity_deviation,push_active");
        let svg = render_cv_trace(&header, &[]).unwrap();
        assert!(svg.starts_with("<svg"));
        assert!(svg.contains("no data"));
        assert!(svg.ends_with("</svg>\n"));
    }

    #[test]
    fn identical_input_identical_bytes() {
        let (header, rows) = to_rows(
            "risk_mode,seeds,iteration,mean_total_reward,stderr_total_reward\n\
             adaptive,3,0,1.0,0.1\nadaptive,3,1,1.5,0.1\nfixed_neutral,3,0,0.9,0.2\nfixed_neutral,3,1,1.1,0.2",
        );
        let a = render_learning_curves(&header, &rows).unwrap();
        let b = render_learning_curves(&header, &rows).unwrap();
        assert_eq!(a, b);
        assert!(a.contains("polyline"));
        assert!(a.contains("polygon")); // stderr band
    }

    #[test]
    fn stats_csv_renders_single_curve() {
        let (header, rows) = to_rows(
            "iteration,total_reward,tracking_reward,entropy,alpha,batch_cv,clip_fraction,critic_loss\n\
             0,1.0,0.2,1.4,0,0.3,0.1,0.5\n1,1.2,0.3,1.4,0,0.3,0.1,0.4",
        );
        let svg = render_learning_curves(&header, &rows).unwrap();
        assert!(svg.contains("polyline"));
    }

    #[test]
    fn cv_trace_shades_push_windows() {
        let (header, rows) = to_rows(
            "t_seconds,mean_cv,velocity_deviation,push_active\n\
             0,0.1,0.0,0\n0.02,0.1,0.0,0\n0.04,0.3,0.2,1\n0.06,0.3,0.2,1\n0.08,0.15,0.1,0",
        );
        let svg = render_cv_trace(&header, &rows).unwrap();
        assert!(svg.contains("#f2c94c"), "push window shading present");
    }

    #[test]
    fn velocity_bars_and_unknown_kind() {
        let (header, rows) = to_rows(
            "run_id,risk_mode,seed,row_kind,target_velocity,ood,success_rate,x_rmse,mean_return,mean_cv,success_rate_drop\n\
             r,adaptive,0,velocity,-0.5,false,0.8,0.2,100,0.3,\n\
             r,adaptive,0,velocity,0.5,false,0.9,0.15,120,0.25,\n\
             r,adaptive,0,aggregate,,false,0.85,0.175,110,0.275,",
        );
        let svg = render_velocity_bars(&header, &rows).unwrap();
        assert_eq!(svg.matches("<rect").count(), 1 + 2); // background + 2 bars
        assert!(render("bogus", &header, &rows).is_err());
    }
}
