// SPDX-License-Identifier: MIT OR Apache-2.0

//! Aggregate tables and their renderings.
//!
//! The CSV form of a [`Table`] is the machine contract. Markdown and SVG are
//! produced from a parsed CSV and never from the analysis results directly.

use std::fmt::Write as _;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(header: Vec<String>) -> Self {
        Self {
            header,
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.header.iter().position(|h| h == name)
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.header).expect("in-memory write");
        for r in &self.rows {
            w.write_record(r).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 cells")
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
        let parse_err = |e: csv::Error| Error::Parse {
            line: e.position().map_or(0, |p| p.line() as usize),
            message: e.to_string(),
        };
        let header = rdr.headers().map_err(parse_err)?.iter().map(String::from).collect();
        let mut t = Table::new(header);
        for rec in rdr.records() {
            t.rows.push(rec.map_err(parse_err)?.iter().map(String::from).collect());
        }
        Ok(t)
    }

    /// GitHub-flavoured Markdown table. Numeric cells are shown with four
    /// decimals.
    pub fn to_markdown(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "| {} |", self.header.join(" | "));
        let _ = writeln!(
            out,
            "|{}|",
            self.header.iter().map(|_| "---").collect::<Vec<_>>().join("|")
        );
        for r in &self.rows {
            let cells: Vec<String> = r.iter().map(|c| format_cell(c)).collect();
            let _ = writeln!(out, "| {} |", cells.join(" | "));
        }
        out
    }
}

fn format_cell(c: &str) -> String {
    match c.parse::<f64>() {
        Ok(x) if c.contains('.') || c.contains('e') => format!("{x:.4}"),
        _ => c.to_string(),
    }
}

/// One plotted series: a name and a y value per category.
#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub name: String,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Chart {
    pub title: String,
    pub y_label: String,
    pub categories: Vec<String>,
    pub series: Vec<Series>,
}

impl Chart {
    /// Categories are the columns listed in `columns` (their names minus
    /// `strip_prefix`), one series per row labelled by `label_column`.
    pub fn from_table(
        table: &Table,
        title: &str,
        y_label: &str,
        label_column: &str,
        columns: &[String],
        strip_prefix: &str,
    ) -> Result<Self> {
        let label = table
            .column(label_column)
            .ok_or_else(|| Error::InvalidArgument(format!("no column {label_column:?}")))?;
        let idx: Vec<usize> = columns
            .iter()
            .map(|c| table.column(c).ok_or_else(|| Error::InvalidArgument(format!("no column {c:?}"))))
            .collect::<Result<_>>()?;
        let series = table
            .rows
            .iter()
            .map(|r| {
                let values = idx
                    .iter()
                    .map(|&i| {
                        r[i].parse::<f64>()
                            .map_err(|_| Error::InvalidArgument(format!("non-numeric cell {:?}", r[i])))
                    })
                    .collect::<Result<_>>()?;
                Ok(Series {
                    name: r[label].clone(),
                    values,
                })
            })
            .collect::<Result<_>>()?;
        Ok(Chart {
            title: title.to_string(),
            y_label: y_label.to_string(),
            categories: columns
                .iter()
                .map(|c| c.strip_prefix(strip_prefix).unwrap_or(c).to_string())
                .collect(),
            series,
        })
    }

    /// Categories from the distinct values of `category_column` and series
    /// from the distinct values of `series_column`, in first-seen order;
    /// y comes from `value_column`. Used for long-format tables.
    pub fn from_long_table(
        table: &Table,
        title: &str,
        y_label: &str,
        series_column: &str,
        category_column: &str,
        value_column: &str,
    ) -> Result<Self> {
        let col = |n: &str| table.column(n).ok_or_else(|| Error::InvalidArgument(format!("no column {n:?}")));
        let (s, c, v) = (col(series_column)?, col(category_column)?, col(value_column)?);
        let mut categories: Vec<String> = Vec::new();
        let mut names: Vec<String> = Vec::new();
        for r in &table.rows {
            if !categories.contains(&r[c]) {
                categories.push(r[c].clone());
            }
            if !names.contains(&r[s]) {
                names.push(r[s].clone());
            }
        }
        let mut series: Vec<Series> = names
            .into_iter()
            .map(|name| Series {
                name,
                values: vec![f64::NAN; categories.len()],
            })
            .collect();
        for r in &table.rows {
            let si = series.iter().position(|x| x.name == r[s]).expect("seen");
            let ci = categories.iter().position(|x| *x == r[c]).expect("seen");
            series[si].values[ci] = r[v]
                .parse()
                .map_err(|_| Error::InvalidArgument(format!("non-numeric cell {:?}", r[v])))?;
        }
        Ok(Chart {
            title: title.to_string(),
            y_label: y_label.to_string(),
            categories,
            series,
        })
    }

    fn y_range(&self) -> (f64, f64) {
        let vals = self.series.iter().flat_map(|s| s.values.iter().copied()).filter(|v| v.is_finite());
        let (lo, hi) = vals.fold((0.0f64, 0.0f64), |(lo, hi), v| (lo.min(v), hi.max(v)));
        if hi - lo < 1e-12 {
            (lo, lo + 1.0)
        } else {
            (lo, hi + 0.05 * (hi - lo))
        }
    }
}

const PALETTE: [&str; 8] = [
    "#4e79a7", "#f28e2b", "#e15759", "#76b7b2", "#59a14f", "#edc948", "#b07aa1", "#9c755f",
];
const W: f64 = 640.0;
const H: f64 = 400.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 150.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 50.0;

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Provenance comments for an SVG: the manifest digest always, a timestamp
/// unless `deterministic`.
#[derive(Debug, Clone, Default)]
pub struct SvgMeta {
    pub manifest_digest: String,
    pub deterministic: bool,
}

fn svg_open(chart: &Chart, meta: &SvgMeta) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(out, "<!-- manifest sha256:{} -->", meta.manifest_digest);
    if !meta.deterministic {
        let secs = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map_or(0, |d| d.as_secs());
        let _ = writeln!(out, "<!-- generated unix:{secs} -->");
    }
    let _ = writeln!(out, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(
        out,
        r#"<text x="{}" y="22" text-anchor="middle" font-size="15">{}</text>"#,
        W / 2.0,
        escape(&chart.title)
    );
    out
}

fn axes(out: &mut String, chart: &Chart, lo: f64, hi: f64) {
    let (x0, x1, y0, y1) = (LEFT, W - RIGHT, H - BOTTOM, TOP);
    let _ = writeln!(out, r#"<line x1="{x0}" y1="{y0}" x2="{x1}" y2="{y0}" stroke="black"/>"#);
    let _ = writeln!(out, r#"<line x1="{x0}" y1="{y0}" x2="{x0}" y2="{y1}" stroke="black"/>"#);
    for t in 0..=4 {
        let v = lo + (hi - lo) * f64::from(t) / 4.0;
        let y = y0 - (y0 - y1) * f64::from(t) / 4.0;
        let _ = writeln!(out, r##"<line x1="{}" y1="{y:.2}" x2="{x0}" y2="{y:.2}" stroke="#888"/>"##, x0 - 4.0);
        let _ = writeln!(
            out,
            r#"<text x="{}" y="{:.2}" text-anchor="end">{v:.3}</text>"#,
            x0 - 6.0,
            y + 4.0
        );
    }
    let _ = writeln!(
        out,
        r#"<text x="16" y="{:.2}" transform="rotate(-90 16 {:.2})" text-anchor="middle">{}</text>"#,
        (y0 + y1) / 2.0,
        (y0 + y1) / 2.0,
        escape(&chart.y_label)
    );
}

fn legend(out: &mut String, chart: &Chart) {
    for (i, s) in chart.series.iter().enumerate() {
        let y = TOP + 18.0 * i as f64;
        let _ = writeln!(
            out,
            r#"<rect x="{}" y="{y}" width="12" height="12" fill="{}"/>"#,
            W - RIGHT + 15.0,
            PALETTE[i % PALETTE.len()]
        );
        let _ = writeln!(
            out,
            r#"<text x="{}" y="{}">{}</text>"#,
            W - RIGHT + 32.0,
            y + 10.0,
            escape(&s.name)
        );
    }
}

fn y_of(v: f64, lo: f64, hi: f64) -> f64 {
    (H - BOTTOM) - (H - BOTTOM - TOP) * (v - lo) / (hi - lo)
}

/// Grouped bar chart: one group per category, one bar per series.
pub fn grouped_bar_svg(chart: &Chart, meta: &SvgMeta) -> String {
    let mut out = svg_open(chart, meta);
    let (lo, hi) = chart.y_range();
    axes(&mut out, chart, lo, hi);
    let n_cat = chart.categories.len().max(1) as f64;
    let slot = (W - RIGHT - LEFT) / n_cat;
    let bar = slot * 0.8 / chart.series.len().max(1) as f64;
    let zero = y_of(0.0f64.clamp(lo, hi), lo, hi);
    for (c, cat) in chart.categories.iter().enumerate() {
        let gx = LEFT + slot * c as f64 + slot * 0.1;
        for (s, series) in chart.series.iter().enumerate() {
            let v = series.values[c];
            if !v.is_finite() {
                continue;
            }
            let y = y_of(v, lo, hi);
            let _ = writeln!(
                out,
                r#"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="{}"><title>{} {}: {v}</title></rect>"#,
                gx + bar * s as f64,
                y.min(zero),
                bar,
                (zero - y).abs(),
                PALETTE[s % PALETTE.len()],
                escape(&series.name),
                escape(cat)
            );
        }
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{}" text-anchor="middle">{}</text>"#,
            LEFT + slot * (c as f64 + 0.5),
            H - BOTTOM + 18.0,
            escape(cat)
        );
    }
    legend(&mut out, chart);
    out.push_str("</svg>\n");
    out
}

/// Line chart: categories along x, one polyline per series.
pub fn line_svg(chart: &Chart, meta: &SvgMeta) -> String {
    let mut out = svg_open(chart, meta);
    let (lo, hi) = chart.y_range();
    axes(&mut out, chart, lo, hi);
    let n_cat = chart.categories.len();
    let x_of = |c: usize| {
        if n_cat <= 1 {
            (LEFT + W - RIGHT) / 2.0
        } else {
            LEFT + 20.0 + (W - RIGHT - LEFT - 40.0) * c as f64 / (n_cat - 1) as f64
        }
    };
    for (c, cat) in chart.categories.iter().enumerate() {
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{}" text-anchor="middle">{}</text>"#,
            x_of(c),
            H - BOTTOM + 18.0,
            escape(cat)
        );
    }
    for (s, series) in chart.series.iter().enumerate() {
        let color = PALETTE[s % PALETTE.len()];
        let pts: Vec<String> = series
            .values
            .iter()
            .enumerate()
            .filter(|(_, v)| v.is_finite())
            .map(|(c, &v)| format!("{:.2},{:.2}", x_of(c), y_of(v, lo, hi)))
            .collect();
        let _ = writeln!(
            out,
            r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#,
            pts.join(" ")
        );
        for p in &pts {
            let (x, y) = p.split_once(',').expect("formatted pair");
            let _ = writeln!(out, r#"<circle cx="{x}" cy="{y}" r="3" fill="{color}"/>"#);
        }
    }
    legend(&mut out, chart);
    out.push_str("</svg>\n");
    out
}
