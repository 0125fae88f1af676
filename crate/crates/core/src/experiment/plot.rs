//! SVG charts for the grid outputs.

use plotters::prelude::*;
use plotters::style::text_anchor::{HPos, Pos, VPos};

use crate::metrics::EntropySummary;

const SIZE: (u32, u32) = (720, 460);

#[derive(Clone, Debug, PartialEq)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BoxStat {
    pub label: String,
    pub summary: EntropySummary,
}

pub type PlotResult = Result<String, String>;

fn err<E: std::fmt::Debug>(e: E) -> String {
    format!("{e:?}")
}

/// Padded [lo, hi] that never collapses to a point.
fn range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    let span = hi - lo;
    if span < 1e-12 {
        let pad = lo.abs().max(1.0) * 0.1;
        return (lo - pad, hi + pad);
    }
    (lo - 0.05 * span, hi + 0.05 * span)
}

pub fn line_plot(title: &str, x_label: &str, y_label: &str, series: &[Series]) -> PlotResult {
    let all = || series.iter().flat_map(|s| s.points.iter().copied());
    let (x, y) = (range(all().map(|p| p.0)), range(all().map(|p| p.1)));
    let mut svg = String::new();
    {
        let root = SVGBackend::with_string(&mut svg, SIZE).into_drawing_area();
        root.fill(&WHITE).map_err(err)?;
        let mut chart = ChartBuilder::on(&root)
            .caption(title, ("sans-serif", 18))
            .margin(12)
            .x_label_area_size(45)
            .y_label_area_size(65)
            .build_cartesian_2d(x.0..x.1, y.0..y.1)
            .map_err(err)?;
        chart.configure_mesh().x_desc(x_label).y_desc(y_label).draw().map_err(err)?;
        for (i, s) in series.iter().enumerate() {
            let color = Palette99::pick(i).to_rgba();
            let mut pts = s.points.clone();
            pts.sort_by(|a, b| a.0.total_cmp(&b.0));
            chart
                .draw_series(LineSeries::new(pts.clone(), color.stroke_width(2)))
                .map_err(err)?
                .label(s.label.as_str())
                .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 18, y)], color.stroke_width(2)));
            chart.draw_series(pts.into_iter().map(|p| Circle::new(p, 3, color.filled()))).map_err(err)?;
        }
        if !series.is_empty() {
            chart
                .configure_series_labels()
                .position(SeriesLabelPosition::UpperLeft)
                .background_style(WHITE.mix(0.85))
                .border_style(BLACK)
                .draw()
                .map_err(err)?;
        }
        root.present().map_err(err)?;
    }
    Ok(svg)
}

/// Boxes span the quartiles; whiskers run to the sample extremes.
pub fn box_plot(title: &str, y_label: &str, boxes: &[BoxStat]) -> PlotResult {
    let y = range(boxes.iter().flat_map(|b| [b.summary.min, b.summary.max]));
    let n = boxes.len().max(1) as f64;
    let mut svg = String::new();
    {
        let root = SVGBackend::with_string(&mut svg, SIZE).into_drawing_area();
        root.fill(&WHITE).map_err(err)?;
        let mut chart = ChartBuilder::on(&root)
            .caption(title, ("sans-serif", 18))
            .margin(12)
            .x_label_area_size(45)
            .y_label_area_size(65)
            .build_cartesian_2d(0.0..n, y.0..y.1)
            .map_err(err)?;
        chart
            .configure_mesh()
            .disable_x_mesh()
            .x_labels(0)
            .x_desc("whiskers: sample min/max")
            .y_desc(y_label)
            .draw()
            .map_err(err)?;
        for (i, b) in boxes.iter().enumerate() {
            let s = &b.summary;
            let c = i as f64 + 0.5;
            let color = Palette99::pick(i).to_rgba();
            chart
                .draw_series([Rectangle::new([(c - 0.3, s.q1), (c + 0.3, s.q3)], color.mix(0.35).filled())])
                .map_err(err)?;
            chart
                .draw_series([Rectangle::new([(c - 0.3, s.q1), (c + 0.3, s.q3)], BLACK.stroke_width(1))])
                .map_err(err)?;
            let lines = [
                vec![(c, s.q3), (c, s.max)],
                vec![(c, s.q1), (c, s.min)],
                vec![(c - 0.15, s.max), (c + 0.15, s.max)],
                vec![(c - 0.15, s.min), (c + 0.15, s.min)],
            ];
            chart.draw_series(lines.into_iter().map(|l| PathElement::new(l, BLACK.stroke_width(1)))).map_err(err)?;
            chart
                .draw_series([PathElement::new(vec![(c - 0.3, s.median), (c + 0.3, s.median)], BLACK.stroke_width(3))])
                .map_err(err)?;
            let label_style = ("sans-serif", 12).into_font().color(&BLACK).pos(Pos::new(HPos::Center, VPos::Bottom));
            chart.draw_series([Text::new(b.label.clone(), (c, y.0 + 0.01 * (y.1 - y.0)), label_style)]).map_err(err)?;
        }
        root.present().map_err(err)?;
    }
    Ok(svg)
}
