//! Deterministic CSV, JSON and SVG writers.
//!
//! Floats are written in their shortest round-trip form, rows keep their
//! computation order and JSON documents carry a schema name and version.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::bvp::BifurcationDiagram;
use crate::catastrophe::D4LevelSet;
use crate::error::{Error, Result};
use crate::georattle::ConjugateLocus;
use crate::singular::LevelBifurcationSet;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    Csv,
    Json,
    Svg,
}

impl Format {
    pub fn extension(self) -> &'static str {
        match self {
            Format::Csv => "csv",
            Format::Json => "json",
            Format::Svg => "svg",
        }
    }
}

/// Shortest decimal string that parses back to the same `f64`.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

/// A header row and data rows, written as CSV.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new<S: Into<String>>(header: impl IntoIterator<Item = S>) -> Self {
        Table {
            header: header.into_iter().map(Into::into).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let io = |e: csv::Error| Error::Io(std::io::Error::other(e.to_string()));
        w.write_record(&self.header).map_err(io)?;
        for r in &self.rows {
            if r.len() != self.header.len() {
                return Err(Error::InvalidInput(format!(
                    "row has {} cells, header has {}",
                    r.len(),
                    self.header.len()
                )));
            }
            w.write_record(r).map_err(io)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(std::io::Error::other(e.to_string())))?;
        String::from_utf8(bytes).map_err(|e| Error::Parse(e.to_string()))
    }
}

fn numbered(prefix: &str, n: usize) -> Vec<String> {
    (0..n).map(|i| format!("{prefix}_{i}")).collect()
}

fn cells(v: &[f64]) -> Vec<String> {
    v.iter().map(|&x| fmt_f64(x)).collect()
}

fn opt_cells(v: Option<&[f64]>, n: usize) -> Vec<String> {
    match v {
        Some(v) => cells(v),
        None => vec![String::new(); n],
    }
}

#[derive(Serialize)]
struct Envelope<'a, T: Serialize + ?Sized> {
    schema: &'a str,
    schema_version: u32,
    data: &'a T,
}

/// Pretty JSON wrapped in `{"schema", "schema_version", "data"}`.
pub fn json_document<T: Serialize + ?Sized>(schema: &str, data: &T) -> Result<String> {
    let env = Envelope {
        schema,
        schema_version: SCHEMA_VERSION,
        data,
    };
    let mut s = serde_json::to_string_pretty(&env).map_err(|e| Error::Parse(e.to_string()))?;
    s.push('\n');
    Ok(s)
}

/// One layer of a plot.
#[derive(Clone, Debug, PartialEq)]
pub enum Series {
    Points { label: String, points: Vec<[f64; 2]> },
    Line { label: String, points: Vec<[f64; 2]> },
    Segments { label: String, segments: Vec<[[f64; 2]; 2]> },
}

impl Series {
    fn label(&self) -> &str {
        match self {
            Series::Points { label, .. } | Series::Line { label, .. } | Series::Segments { label, .. } => label,
        }
    }

    fn coords(&self) -> Vec<[f64; 2]> {
        match self {
            Series::Points { points, .. } | Series::Line { points, .. } => points.clone(),
            Series::Segments { segments, .. } => segments.iter().flat_map(|s| s.iter().copied()).collect(),
        }
    }
}

/// A 2-D scatter/line plot with labelled axes.
#[derive(Clone, Debug, PartialEq)]
pub struct Plot {
    pub title: String,
    pub xlabel: String,
    pub ylabel: String,
    pub series: Vec<Series>,
}

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];
const WIDTH: f64 = 800.0;
const HEIGHT: f64 = 600.0;
const MARGIN: f64 = 70.0;

fn tick(v: f64) -> String {
    let s = format!("{v:.4}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" { "0".into() } else { s.into() }
}

impl Plot {
    pub fn new(title: &str, xlabel: &str, ylabel: &str) -> Self {
        Plot {
            title: title.into(),
            xlabel: xlabel.into(),
            ylabel: ylabel.into(),
            series: Vec::new(),
        }
    }

    pub fn with(mut self, s: Series) -> Self {
        self.series.push(s);
        self
    }

    pub fn to_svg(&self) -> String {
        let pts: Vec<[f64; 2]> = self
            .series
            .iter()
            .flat_map(|s| s.coords())
            .filter(|p| p[0].is_finite() && p[1].is_finite())
            .collect();
        let (mut x0, mut x1, mut y0, mut y1) = pts.iter().fold(
            (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY),
            |(a, b, c, d), p| (a.min(p[0]), b.max(p[0]), c.min(p[1]), d.max(p[1])),
        );
        if pts.is_empty() {
            (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
        }
        let pad = |lo: f64, hi: f64| {
            let w = if hi > lo { hi - lo } else { lo.abs().max(1.0) };
            (lo - 0.05 * w, hi + 0.05 * w)
        };
        (x0, x1) = pad(x0, x1);
        (y0, y1) = pad(y0, y1);
        let sx = |x: f64| MARGIN + (x - x0) / (x1 - x0) * (WIDTH - 2.0 * MARGIN);
        let sy = |y: f64| HEIGHT - MARGIN - (y - y0) / (y1 - y0) * (HEIGHT - 2.0 * MARGIN);
        let mut s = String::new();
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
        );
        let _ = writeln!(s, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
        let _ = writeln!(
            s,
            r#"<text x="{}" y="30" text-anchor="middle" font-size="16">{}</text>"#,
            WIDTH / 2.0,
            escape(&self.title)
        );
        let _ = writeln!(
            s,
            r#"<rect x="{MARGIN}" y="{MARGIN}" width="{}" height="{}" fill="none" stroke="black"/>"#,
            WIDTH - 2.0 * MARGIN,
            HEIGHT - 2.0 * MARGIN
        );
        for i in 0..=4 {
            let t = i as f64 / 4.0;
            let (xv, yv) = (x0 + t * (x1 - x0), y0 + t * (y1 - y0));
            let (px, py) = (sx(xv), sy(yv));
            let _ = writeln!(
                s,
                r#"<line x1="{px:.2}" y1="{:.2}" x2="{px:.2}" y2="{:.2}" stroke="black"/><text x="{px:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
                HEIGHT - MARGIN,
                HEIGHT - MARGIN + 5.0,
                HEIGHT - MARGIN + 20.0,
                tick(xv)
            );
            let _ = writeln!(
                s,
                r#"<line x1="{:.2}" y1="{py:.2}" x2="{MARGIN}" y2="{py:.2}" stroke="black"/><text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#,
                MARGIN - 5.0,
                MARGIN - 8.0,
                py + 4.0,
                tick(yv)
            );
        }
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
            WIDTH / 2.0,
            HEIGHT - 20.0,
            escape(&self.xlabel)
        );
        let _ = writeln!(
            s,
            r#"<text x="20" y="{}" text-anchor="middle" transform="rotate(-90 20 {})">{}</text>"#,
            HEIGHT / 2.0,
            HEIGHT / 2.0,
            escape(&self.ylabel)
        );
        for (i, ser) in self.series.iter().enumerate() {
            let c = PALETTE[i % PALETTE.len()];
            match ser {
                Series::Points { points, .. } => {
                    let _ = writeln!(s, r#"<g fill="{c}">"#);
                    for p in points.iter().filter(|p| p[0].is_finite() && p[1].is_finite()) {
                        let _ = writeln!(s, r#"<circle cx="{:.2}" cy="{:.2}" r="1.5"/>"#, sx(p[0]), sy(p[1]));
                    }
                    s.push_str("</g>\n");
                }
                Series::Line { points, .. } => {
                    let path: Vec<String> = points
                        .iter()
                        .filter(|p| p[0].is_finite() && p[1].is_finite())
                        .map(|p| format!("{:.2},{:.2}", sx(p[0]), sy(p[1])))
                        .collect();
                    let _ = writeln!(s, r#"<polyline fill="none" stroke="{c}" points="{}"/>"#, path.join(" "));
                }
                Series::Segments { segments, .. } => {
                    let _ = writeln!(s, r#"<g stroke="{c}">"#);
                    for g in segments {
                        let _ = writeln!(
                            s,
                            r#"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}"/>"#,
                            sx(g[0][0]),
                            sy(g[0][1]),
                            sx(g[1][0]),
                            sy(g[1][1])
                        );
                    }
                    s.push_str("</g>\n");
                }
            }
            let ly = MARGIN + 15.0 + 16.0 * i as f64;
            let _ = writeln!(
                s,
                r#"<rect x="{:.2}" y="{:.2}" width="10" height="10" fill="{c}"/><text x="{:.2}" y="{:.2}">{}</text>"#,
                WIDTH - MARGIN - 150.0,
                ly - 9.0,
                WIDTH - MARGIN - 135.0,
                ly,
                escape(ser.label())
            );
        }
        s.push_str("</svg>\n");
        s
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Results that can be written in every format.
pub trait Exportable: Serialize {
    /// Schema name stored in JSON documents.
    fn schema(&self) -> &'static str;
    fn table(&self) -> Table;
    fn plot(&self) -> Plot;

    fn render(&self, format: Format) -> Result<String> {
        match format {
            Format::Csv => self.table().to_csv(),
            Format::Json => json_document(self.schema(), self),
            Format::Svg => Ok(self.plot().to_svg()),
        }
    }
}

impl Exportable for BifurcationDiagram {
    fn schema(&self) -> &'static str {
        "hamshoot/bifurcation_diagram"
    }

    fn table(&self) -> Table {
        let first = self.points().next();
        let (m, n) = first.map_or((1, 1), |p| (p.mu.len(), p.y.len()));
        let mut h = vec!["branch".to_string(), "index".to_string()];
        h.extend(numbered("mu", m));
        h.extend(numbered("y", n));
        h.push("tag".into());
        let mut t = Table::new(h);
        for (b, br) in self.branches.iter().enumerate() {
            for (i, p) in br.points.iter().enumerate() {
                let mut row = vec![b.to_string(), i.to_string()];
                row.extend(cells(&p.mu));
                row.extend(cells(&p.y));
                row.push(serde_json::to_value(p.tag).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default());
                t.push(row);
            }
        }
        t
    }

    fn plot(&self) -> Plot {
        let mut p = Plot::new(&format!("bifurcation diagram ({})", self.method), "mu", "y_0");
        for (i, b) in self.branches.iter().enumerate() {
            let pts = b.points.iter().map(|q| [q.mu[0], q.y[0]]).collect();
            p.series.push(Series::Line {
                label: format!("branch {i}"),
                points: pts,
            });
        }
        p
    }
}

impl Exportable for ConjugateLocus {
    fn schema(&self) -> &'static str {
        "hamshoot/conjugate_locus"
    }

    fn table(&self) -> Table {
        let np = self.rays.first().map_or(1, |r| r.params.len());
        let d = self.q_star.len();
        let mut h = numbered("param", np);
        h.push("arc".into());
        h.extend(numbered("endpoint", d));
        h.push("corank".into());
        let mut t = Table::new(h);
        for r in &self.rays {
            let mut row = cells(&r.params);
            row.push(r.arc.map(fmt_f64).unwrap_or_default());
            row.extend(opt_cells(r.endpoint.as_deref(), d));
            row.push(r.corank.to_string());
            t.push(row);
        }
        t
    }

    fn plot(&self) -> Plot {
        let ends: Vec<[f64; 2]> = self
            .rays
            .iter()
            .filter_map(|r| r.endpoint.as_ref().map(|e| [e[1], e[2]]))
            .collect();
        let cusps = self.cusp_points.iter().map(|c| [c.endpoint[1], c.endpoint[2]]).collect();
        let mut p = Plot::new(&format!("conjugate locus on {}", self.surface), "q_1", "q_2")
            .with(Series::Points {
                label: "first conjugate points".into(),
                points: ends,
            })
            .with(Series::Points {
                label: "cusps".into(),
                points: cusps,
            });
        if let Some(u) = &self.umbilic {
            p.series.push(Series::Points {
                label: "corank two".into(),
                points: vec![[u.endpoint[1], u.endpoint[2]]],
            });
        }
        p
    }
}

impl Exportable for LevelBifurcationSet {
    fn schema(&self) -> &'static str {
        "hamshoot/level_bifurcation_set"
    }

    fn table(&self) -> Table {
        let d = self.grid.dim();
        let m = self.vertices.first().map_or(d, |v| v.image.len());
        let mut h = numbered("w", d);
        h.extend(numbered("image", m));
        h.extend(["det", "trace", "corank", "sigma_ratio", "cusp"].map(String::from));
        let mut t = Table::new(h);
        for v in &self.vertices {
            let mut row = cells(&v.domain);
            row.extend(cells(&v.image));
            row.extend([fmt_f64(v.det), fmt_f64(v.trace), v.corank.to_string(), fmt_f64(v.sigma_ratio), fmt_f64(v.cusp_value())]);
            t.push(row);
        }
        t
    }

    fn plot(&self) -> Plot {
        let (a, b) = if self.grid.dim() == 2 { (0, 1) } else { (1, 2) };
        let xy = |i: usize| {
            let v = &self.vertices[i].image;
            [v[a], v[b]]
        };
        let segs: Vec<[[f64; 2]; 2]> = if self.grid.dim() == 2 {
            self.segments.iter().map(|s| [xy(s[0]), xy(s[1])]).collect()
        } else {
            self.triangles
                .iter()
                .flat_map(|t| [[xy(t[0]), xy(t[1])], [xy(t[1]), xy(t[2])], [xy(t[2]), xy(t[0])]])
                .collect()
        };
        Plot::new("level bifurcation set", &format!("image_{a}"), &format!("image_{b}")).with(Series::Segments {
            label: "det = 0".into(),
            segments: segs,
        })
    }
}

impl Exportable for D4LevelSet {
    fn schema(&self) -> &'static str {
        "hamshoot/d4_level_set"
    }

    fn table(&self) -> Table {
        let mut t = Table::new(["mu3", "branch", "x", "y", "mu1", "mu2", "det", "jac_norm", "cusp"]);
        for s in &self.slices {
            for (b, br) in s.branches.iter().enumerate() {
                for p in br {
                    t.push(vec![
                        fmt_f64(s.mu3),
                        b.to_string(),
                        fmt_f64(p.x),
                        fmt_f64(p.y),
                        fmt_f64(p.mu[0]),
                        fmt_f64(p.mu[1]),
                        fmt_f64(p.det),
                        fmt_f64(p.jac_norm),
                        "0".into(),
                    ]);
                }
            }
            for p in &s.cusps {
                t.push(vec![
                    fmt_f64(s.mu3),
                    String::new(),
                    fmt_f64(p.x),
                    fmt_f64(p.y),
                    fmt_f64(p.mu[0]),
                    fmt_f64(p.mu[1]),
                    fmt_f64(p.det),
                    fmt_f64(p.jac_norm),
                    "1".into(),
                ]);
            }
        }
        t
    }

    fn plot(&self) -> Plot {
        let mut p = Plot::new(
            &format!("D4 {:?} level set, mu4 = {}", self.kind, tick(self.mu4)),
            "mu1",
            "mu2",
        );
        let mut lines = Vec::new();
        for s in &self.slices {
            for br in &s.branches {
                for w in br.windows(2) {
                    lines.push([[w[0].mu[0], w[0].mu[1]], [w[1].mu[0], w[1].mu[1]]]);
                }
            }
        }
        p.series.push(Series::Segments {
            label: "fold sheet slices".into(),
            segments: lines,
        });
        p.series.push(Series::Points {
            label: "cusps".into(),
            points: self.cusps().map(|c| [c.mu[0], c.mu[1]]).collect(),
        });
        p
    }
}

/// Write `value` in each format to `dir/stem.ext`; returns the paths.
pub fn write_all<E: Exportable>(value: &E, dir: &Path, stem: &str, formats: &[Format]) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let mut out = Vec::new();
    for &f in formats {
        let path = dir.join(format!("{stem}.{}", f.extension()));
        std::fs::write(&path, value.render(f)?)?;
        out.push(path);
    }
    Ok(out)
}

/// Write a JSON document.
pub fn write_json<T: Serialize>(value: &T, schema: &str, path: &Path) -> Result<()> {
    if let Some(d) = path.parent() {
        std::fs::create_dir_all(d)?;
    }
    std::fs::write(path, json_document(schema, value)?)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bvp::{Branch, BranchPoint, Tag};
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn floats_round_trip(v in proptest::num::f64::NORMAL | proptest::num::f64::SUBNORMAL | proptest::num::f64::ZERO) {
            let s = fmt_f64(v);
            prop_assert_eq!(s.parse::<f64>().unwrap().to_bits(), v.to_bits());
            prop_assert!(s.trim_start_matches('-').chars().filter(|c| c.is_ascii_digit()).count() <= 17 + 4);
        }
    }

    #[test]
    fn shortest_forms() {
        assert_eq!(fmt_f64(0.1), "0.1");
        assert_eq!(fmt_f64(1.0), "1.0");
        assert_eq!(fmt_f64(3.5092571), "3.5092571");
        assert_eq!(fmt_f64(1e-12), "1e-12");
    }

    #[test]
    fn empty_diagram_is_header_only() {
        let d = BifurcationDiagram::default();
        assert_eq!(d.render(Format::Csv).unwrap(), "branch,index,mu_0,y_0,tag\n");
    }

    #[test]
    fn diagram_rows_and_determinism() {
        let p = BranchPoint {
            mu: vec![0.5],
            y: vec![0.25],
            z_full: vec![0.0, 0.25],
            tag: Tag::Fold,
        };
        let d = BifurcationDiagram {
            branches: vec![Branch {
                points: vec![p],
                termination: None,
            }],
            method: "sv N=20 tau=1".into(),
            empty_cells: vec![],
        };
        let csv = d.render(Format::Csv).unwrap();
        assert_eq!(csv, "branch,index,mu_0,y_0,tag\n0,0,0.5,0.25,fold\n");
        for f in [Format::Csv, Format::Json, Format::Svg] {
            assert_eq!(d.render(f).unwrap(), d.render(f).unwrap());
        }
        let json: serde_json::Value = serde_json::from_str(&d.render(Format::Json).unwrap()).unwrap();
        assert_eq!(json["schema_version"], SCHEMA_VERSION);
        assert_eq!(json["data"]["branches"][0]["points"][0]["tag"], "fold");
        assert!(d.render(Format::Svg).unwrap().contains(">mu</text>"));
    }

    #[test]
    fn ragged_rows_rejected() {
        let mut t = Table::new(["a", "b"]);
        t.push(vec!["1".into()]);
        assert!(t.to_csv().is_err());
    }
}
