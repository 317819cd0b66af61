//! Static SVG line charts of per-step correlation.

use std::path::Path;

use plotters::prelude::*;

const PALETTE: [RGBColor; 8] = [
    RGBColor(31, 119, 180),
    RGBColor(255, 127, 14),
    RGBColor(44, 160, 44),
    RGBColor(214, 39, 40),
    RGBColor(148, 103, 189),
    RGBColor(140, 86, 75),
    RGBColor(227, 119, 194),
    RGBColor(127, 127, 127),
];

/// One curve per entry, steps on the x axis starting at 1, and a dashed horizontal threshold.
pub fn line_chart(path: &Path, title: &str, curves: &[(String, Vec<f64>)], threshold: f64) -> Result<(), String> {
    let steps = curves.iter().map(|(_, v)| v.len()).max().unwrap_or(1).max(1);
    let lo = curves.iter().flat_map(|(_, v)| v.iter().copied()).filter(|v| v.is_finite()).fold(threshold, f64::min);
    let y_min = lo.min(0.0);
    let root = SVGBackend::new(path, (800, 500)).into_drawing_area();
    root.fill(&WHITE).map_err(|e| e.to_string())?;
    let mut chart = ChartBuilder::on(&root)
        .caption(title, ("sans-serif", 20))
        .margin(12)
        .x_label_area_size(36)
        .y_label_area_size(48)
        .build_cartesian_2d(1f64..steps as f64, y_min..1.0f64)
        .map_err(|e| e.to_string())?;
    chart.configure_mesh().x_desc("step").y_desc("PCC").draw().map_err(|e| e.to_string())?;
    for (i, (name, values)) in curves.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        chart
            .draw_series(LineSeries::new(values.iter().enumerate().map(|(t, v)| ((t + 1) as f64, *v)), color.stroke_width(2)))
            .map_err(|e| e.to_string())?
            .label(name.as_str())
            .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 16, y)], color.stroke_width(2)));
    }
    let dashes = (0..steps).step_by(2).map(|s| {
        let a = (s + 1) as f64;
        PathElement::new(vec![(a, threshold), ((a + 1.0).min(steps as f64), threshold)], BLACK.stroke_width(1))
    });
    chart.draw_series(dashes).map_err(|e| e.to_string())?;
    chart
        .configure_series_labels()
        .position(SeriesLabelPosition::LowerLeft)
        .background_style(WHITE.mix(0.8))
        .border_style(BLACK)
        .draw()
        .map_err(|e| e.to_string())?;
    root.present().map_err(|e| e.to_string())
}
