// SPDX-License-Identifier: MIT OR Apache-2.0

//! Markdown and SVG renderings of the aggregate CSVs. Nothing here computes
//! statistics; every number comes from a parsed CSV.

use std::path::{Path, PathBuf};

use neurocat::report::{grouped_bar_svg, line_svg, Chart, SvgMeta, Table};

use crate::commands::{CliError, CliResult};

struct Figure {
    suffix: &'static str,
    svg: String,
}

fn columns_with_prefix(table: &Table, prefix: &str) -> Vec<String> {
    table.header.iter().filter(|h| h.starts_with(prefix)).cloned().collect()
}

fn series_per_layer(chart: &mut Chart) {
    for s in &mut chart.series {
        if s.name != "all" {
            s.name = format!("layer {}", s.name);
        }
    }
}

fn figures(stem: &str, table: &Table, meta: &SvgMeta) -> neurocat::Result<Vec<Figure>> {
    let mut out = Vec::new();
    if stem.starts_with("topdown_") && stem.ends_with("_aggregate") {
        let mut means = Chart::from_table(
            table,
            "Mean activation per categorical cluster",
            "mu(activation)",
            "layer",
            &columns_with_prefix(table, "mu_"),
            "mu_",
        )?;
        series_per_layer(&mut means);
        out.push(Figure { suffix: "means", svg: grouped_bar_svg(&means, meta) });
        let mut effects = Chart::from_table(
            table,
            "Mean effect size between clusters",
            "mu(d)",
            "layer",
            &columns_with_prefix(table, "d_"),
            "d_",
        )?;
        series_per_layer(&mut effects);
        out.push(Figure { suffix: "effects", svg: grouped_bar_svg(&effects, meta) });
    } else if stem.starts_with("interleave_") && stem.ends_with("_aggregate") {
        let mut rho = Chart::from_long_table(table, "Mean interleaving ratio per cluster", "mu(rho)", "layer", "cluster", "mu_rho")?;
        series_per_layer(&mut rho);
        out.push(Figure { suffix: "rho", svg: grouped_bar_svg(&rho, meta) });
    } else if stem.starts_with("bottomup_") && stem.ends_with("_aggregate") {
        let mut cos = Chart::from_long_table(table, "Mean within-group cosine similarity", "mu(cos)", "layer", "group", "mu_cos")?;
        series_per_layer(&mut cos);
        out.push(Figure { suffix: "cos", svg: line_svg(&cos, meta) });
        let mut neg = Chart::from_long_table(table, "Share of groups below Q3(cos100)", "pi(d < 0) %", "layer", "group", "pi_dneg")?;
        series_per_layer(&mut neg);
        out.push(Figure { suffix: "negative", svg: line_svg(&neg, meta) });
    }
    Ok(out)
}

fn is_rendered(name: &str) -> bool {
    name.ends_with("_aggregate.csv") || name.ends_with("_rise.csv")
}

/// Renders every aggregate CSV in `dir` to `<stem>.md` plus SVG charts.
/// Returns `(role, path)` for each file written, in name order.
pub fn render_dir(dir: &Path, digest: &str, deterministic: bool) -> CliResult<Vec<(String, PathBuf)>> {
    let mut names: Vec<String> = std::fs::read_dir(dir)
        .map_err(|e| CliError::Runtime(format!("{}: {e}", dir.display())))?
        .filter_map(|e| e.ok())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .filter(|n| is_rendered(n))
        .collect();
    names.sort();
    if names.is_empty() {
        return Err(CliError::Validation(format!("no aggregate CSVs in {}", dir.display())));
    }
    let meta = SvgMeta {
        manifest_digest: digest.to_string(),
        deterministic,
    };
    let mut written = Vec::new();
    for name in names {
        let path = dir.join(&name);
        let text = std::fs::read_to_string(&path).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
        let table = Table::from_csv(&text)?;
        let stem = name.trim_end_matches(".csv");
        let figs = if table.rows.is_empty() { Vec::new() } else { figures(stem, &table, &meta)? };

        let mut md = format!("# {stem}\n\nSource: `{name}`. Manifest sha256: `{digest}`.\n\n");
        md.push_str(&table.to_markdown());
        for f in &figs {
            let svg_name = format!("{stem}_{}.svg", f.suffix);
            let svg_path = dir.join(&svg_name);
            std::fs::write(&svg_path, &f.svg).map_err(|e| CliError::Runtime(format!("{}: {e}", svg_path.display())))?;
            md.push_str(&format!("\n![{stem} {}]({svg_name})\n", f.suffix));
            written.push(("svg".to_string(), svg_path));
        }
        let md_path = dir.join(format!("{stem}.md"));
        std::fs::write(&md_path, md).map_err(|e| CliError::Runtime(format!("{}: {e}", md_path.display())))?;
        written.push(("markdown".to_string(), md_path));
    }
    Ok(written)
}
