//! Deterministic SVG figures: loss curves, protocol tables and PCA scatter
//! of recognizer embeddings.

use std::collections::BTreeMap;
use std::path::Path;

use ndarray::{Array2, Axis};
use plotters::prelude::*;
use serde::{Deserialize, Serialize};
use skelforge::metrics::{centroids, Pca};
use skelforge::{Error, Result};

const SIZE: (u32, u32) = (800, 560);
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

fn color(i: usize) -> RGBColor {
    PALETTE[i % PALETTE.len()]
}

fn draw_err<E: std::fmt::Debug>(e: E) -> Error {
    Error::Data(format!("plot rendering failed: {e:?}"))
}

/// Padded axis range that stays non-empty for a single value.
fn range(values: impl Iterator<Item = f64>) -> std::ops::Range<f64> {
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    let pad = if hi > lo { 0.05 * (hi - lo) } else { lo.abs().max(1.0) * 0.1 };
    (lo - pad)..(hi + pad)
}

/// Named series of (x, y) points.
pub type Series = Vec<(String, Vec<(f64, f64)>)>;

pub fn line_chart(title: &str, x_label: &str, y_label: &str, series: &Series) -> Result<String> {
    let points: Vec<(f64, f64)> = series.iter().flat_map(|(_, p)| p.iter().copied()).collect();
    if points.is_empty() {
        return Err(Error::Data(format!("nothing to plot for `{title}`")));
    }
    let xr = range(points.iter().map(|p| p.0));
    let yr = range(points.iter().map(|p| p.1));
    let mut svg = String::new();
    {
        let root = SVGBackend::with_string(&mut svg, SIZE).into_drawing_area();
        root.fill(&WHITE).map_err(draw_err)?;
        let mut chart = ChartBuilder::on(&root)
            .caption(title, ("sans-serif", 22))
            .margin(12)
            .x_label_area_size(40)
            .y_label_area_size(60)
            .build_cartesian_2d(xr, yr)
            .map_err(draw_err)?;
        chart
            .configure_mesh()
            .x_desc(x_label)
            .y_desc(y_label)
            .draw()
            .map_err(draw_err)?;
        for (i, (name, pts)) in series.iter().enumerate() {
            let c = color(i);
            chart
                .draw_series(LineSeries::new(pts.iter().copied(), c.stroke_width(2)))
                .map_err(draw_err)?
                .label(name.as_str())
                .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 18, y)], c.stroke_width(2)));
            chart
                .draw_series(pts.iter().map(|&p| Circle::new(p, 3, c.filled())))
                .map_err(draw_err)?;
        }
        chart
            .configure_series_labels()
            .background_style(WHITE.mix(0.8))
            .border_style(BLACK)
            .draw()
            .map_err(draw_err)?;
        root.present().map_err(draw_err)?;
    }
    Ok(svg)
}

fn read_csv(path: &Path) -> Result<(Vec<String>, Vec<csv::StringRecord>)> {
    let mut reader = csv::Reader::from_path(path)
        .map_err(|e| Error::Data(format!("reading {}: {e}", path.display())))?;
    let headers = reader
        .headers()
        .map_err(|e| Error::Data(format!("reading {}: {e}", path.display())))?
        .iter()
        .map(str::to_string)
        .collect();
    let rows = reader
        .records()
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| Error::Data(format!("reading {}: {e}", path.display())))?;
    if rows.is_empty() {
        return Err(Error::Data(format!("{} has no rows", path.display())));
    }
    Ok((headers, rows))
}

fn number(field: &str, path: &Path) -> Result<f64> {
    field
        .trim()
        .parse()
        .map_err(|_| Error::Data(format!("{}: `{field}` is not a number", path.display())))
}

fn column(headers: &[String], name: &str, path: &Path) -> Result<usize> {
    headers
        .iter()
        .position(|h| h == name)
        .ok_or_else(|| Error::Data(format!("{} has no `{name}` column", path.display())))
}

/// Loss history CSV: an `epoch` column and one column per loss term.
pub fn loss_plot(path: &Path) -> Result<String> {
    let (headers, rows) = read_csv(path)?;
    let x = column(&headers, "epoch", path)?;
    let mut series = Series::new();
    for (j, h) in headers.iter().enumerate() {
        if j == x || h == "step" || h == "lr" {
            continue;
        }
        let mut pts = Vec::with_capacity(rows.len());
        for r in &rows {
            pts.push((number(&r[x], path)?, number(&r[j], path)?));
        }
        series.push((h.clone(), pts));
    }
    line_chart("Training loss", "epoch", "loss", &series)
}

/// `protocol_results.csv`: mean accuracy against real-data fraction, one
/// line per policy.
pub fn protocol_plot(path: &Path) -> Result<String> {
    let (headers, rows) = read_csv(path)?;
    let f = column(&headers, "fraction", path)?;
    let p = column(&headers, "policy", path)?;
    let m = column(&headers, "mean_acc", path)?;
    let mut by_policy: BTreeMap<String, Vec<(f64, f64)>> = BTreeMap::new();
    for r in &rows {
        by_policy
            .entry(r[p].to_string())
            .or_default()
            .push((number(&r[f], path)?, number(&r[m], path)?));
    }
    let series = by_policy
        .into_iter()
        .map(|(k, mut v)| {
            v.sort_by(|a, b| a.0.total_cmp(&b.0));
            (k, v)
        })
        .collect();
    line_chart("Recognition accuracy", "real-data fraction", "mean accuracy", &series)
}

/// Embedding rows tagged with class label and source.
#[derive(Debug, Clone)]
pub struct TaggedEmbeddings {
    pub vectors: Array2<f64>,
    pub labels: Vec<usize>,
    pub synthetic: Vec<bool>,
}

/// Reads the `source,label,e0,e1,...` CSV written by `evaluate-metrics`.
pub fn read_embeddings(path: &Path) -> Result<TaggedEmbeddings> {
    let (headers, rows) = read_csv(path)?;
    let s = column(&headers, "source", path)?;
    let l = column(&headers, "label", path)?;
    let dims: Vec<usize> = (0..headers.len()).filter(|&j| j != s && j != l).collect();
    let mut vectors = Array2::zeros((rows.len(), dims.len()));
    let mut labels = Vec::with_capacity(rows.len());
    let mut synthetic = Vec::with_capacity(rows.len());
    for (i, r) in rows.iter().enumerate() {
        synthetic.push(match &r[s] {
            "real" => false,
            "synthetic" => true,
            other => return Err(Error::Data(format!("{}: unknown source `{other}`", path.display()))),
        });
        labels.push(
            r[l].trim()
                .parse()
                .map_err(|_| Error::Data(format!("{}: bad label `{}`", path.display(), &r[l])))?,
        );
        for (k, &j) in dims.iter().enumerate() {
            vectors[[i, k]] = number(&r[j], path)?;
        }
    }
    Ok(TaggedEmbeddings {
        vectors,
        labels,
        synthetic,
    })
}

/// Projects every row onto the first two principal axes of the real rows.
fn project_on_real(data: &TaggedEmbeddings) -> Result<Array2<f64>> {
    let real_rows: Vec<usize> = (0..data.labels.len()).filter(|&i| !data.synthetic[i]).collect();
    if real_rows.len() < 2 {
        return Err(Error::Data("pca-scatter needs at least two real embeddings".into()));
    }
    let real = data.vectors.select(Axis(0), &real_rows);
    Ok(Pca::fit(&real, 2)?.project(&data.vectors))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassShift {
    pub label: usize,
    /// Distance between the real-only and the real + synthetic centroid.
    pub centroid_shift: f64,
    /// Root-mean-square distance to the centroid.
    pub spread_real: f64,
    pub spread_union: f64,
}

/// How adding synthetic points moves each class in the projected plane.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaSummary {
    pub classes: Vec<ClassShift>,
    /// Largest shift relative to the class's real spread.
    pub max_relative_shift: f64,
    pub shift_threshold: f64,
    pub centroids_stable: bool,
    pub spread_non_decreasing: bool,
}

fn rms_spread(points: &Array2<f64>) -> f64 {
    let c = points.mean_axis(Axis(0)).expect("non-empty");
    let ss: f64 = points.outer_iter().map(|p| (&p - &c).mapv(|v| v * v).sum()).sum();
    (ss / points.nrows() as f64).sqrt()
}

/// Centroid shift and spread per class, real-only versus real + synthetic.
/// Classes without real points are skipped.
pub fn pca_summary(data: &TaggedEmbeddings, shift_threshold: f64) -> Result<PcaSummary> {
    let proj = project_on_real(data)?;
    let n = data.labels.len();
    let real_rows: Vec<usize> = (0..n).filter(|&i| !data.synthetic[i]).collect();
    let real_labels: Vec<usize> = real_rows.iter().map(|&i| data.labels[i]).collect();
    let real_centroids = centroids(&proj.select(Axis(0), &real_rows), &real_labels);
    let all_centroids = centroids(&proj, &data.labels);
    let mut classes = Vec::new();
    for (&label, rc) in &real_centroids {
        let rows_real: Vec<usize> = real_rows.iter().copied().filter(|&i| data.labels[i] == label).collect();
        let rows_all: Vec<usize> = (0..n).filter(|&i| data.labels[i] == label).collect();
        classes.push(ClassShift {
            label,
            centroid_shift: (&all_centroids[&label] - rc).mapv(|v| v * v).sum().sqrt(),
            spread_real: rms_spread(&proj.select(Axis(0), &rows_real)),
            spread_union: rms_spread(&proj.select(Axis(0), &rows_all)),
        });
    }
    let max_relative_shift = classes
        .iter()
        .map(|c| if c.spread_real > 0.0 { c.centroid_shift / c.spread_real } else { f64::INFINITY })
        .fold(0.0, f64::max);
    Ok(PcaSummary {
        centroids_stable: max_relative_shift <= shift_threshold,
        spread_non_decreasing: classes.iter().all(|c| c.spread_union >= c.spread_real),
        classes,
        max_relative_shift,
        shift_threshold,
    })
}

/// Real points as circles, synthetic points as triangles, colored by class,
/// in the plane of the first two principal components of the real points.
pub fn pca_scatter(data: &TaggedEmbeddings) -> Result<String> {
    let proj = project_on_real(data)?;
    let xr = range(proj.column(0).iter().copied());
    let yr = range(proj.column(1).iter().copied());
    let mut svg = String::new();
    {
        let root = SVGBackend::with_string(&mut svg, SIZE).into_drawing_area();
        root.fill(&WHITE).map_err(draw_err)?;
        let mut chart = ChartBuilder::on(&root)
            .caption("Embeddings (PCA)", ("sans-serif", 22))
            .margin(12)
            .x_label_area_size(40)
            .y_label_area_size(60)
            .build_cartesian_2d(xr, yr)
            .map_err(draw_err)?;
        chart
            .configure_mesh()
            .x_desc("PC1")
            .y_desc("PC2")
            .draw()
            .map_err(draw_err)?;
        let point = |i: usize| (proj[[i, 0]], proj[[i, 1]]);
        chart
            .draw_series(
                (0..data.labels.len())
                    .filter(|&i| !data.synthetic[i])
                    .map(|i| Circle::new(point(i), 4, color(data.labels[i]).filled())),
            )
            .map_err(draw_err)?
            .label("real")
            .legend(|(x, y)| Circle::new((x + 8, y), 4, BLACK.filled()));
        chart
            .draw_series(
                (0..data.labels.len())
                    .filter(|&i| data.synthetic[i])
                    .map(|i| TriangleMarker::new(point(i), 5, color(data.labels[i]).filled())),
            )
            .map_err(draw_err)?
            .label("synthetic")
            .legend(|(x, y)| TriangleMarker::new((x + 8, y), 5, BLACK.filled()));
        chart
            .configure_series_labels()
            .background_style(WHITE.mix(0.8))
            .border_style(BLACK)
            .draw()
            .map_err(draw_err)?;
        root.present().map_err(draw_err)?;
    }
    Ok(svg)
}
