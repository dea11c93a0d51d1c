//! File formats: graphs, area data, fit reports and the size diagnostic.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::Path;

use serde_json::{json, Map, Value};

use crate::error::{invalid, Error, Result};
use crate::inference::FitResult;
use crate::likelihood::{Dataset, ModelSpec};
use crate::margins::{mean_from_covariates, Family, Link, MarginSpec};
use crate::structures::{CorrelationModel, Graph};

pub const FORMAT_VERSION: u32 = 1;

/// Header comment that starts every CSV this crate writes.
pub const CSV_PREAMBLE: &str = "# format_version: 1\n";

fn reader(text: &str) -> csv::Reader<&[u8]> {
    csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes())
}

fn parse_err(line: usize, message: impl Into<String>) -> Error {
    Error::Parse { line, message: message.into() }
}

fn record_line(rec: &csv::StringRecord) -> usize {
    rec.position().map_or(0, |p| p.line() as usize)
}

fn csv_err(e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line() as usize);
    parse_err(line, e.to_string())
}

fn headers(rdr: &mut csv::Reader<&[u8]>) -> Result<Vec<String>> {
    Ok(rdr.headers().map_err(csv_err)?.iter().map(str::to_ascii_lowercase).collect())
}

fn field<T: std::str::FromStr>(rec: &csv::StringRecord, k: usize, what: &str) -> Result<T> {
    let line = record_line(rec);
    let raw = rec.get(k).ok_or_else(|| parse_err(line, format!("missing {what}")))?;
    raw.parse().map_err(|_| parse_err(line, format!("bad {what} '{raw}'")))
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}

/// Graph from node CSV `id,x,y` and edge CSV `id_a,id_b` (0-based ids).
pub fn parse_graph(nodes_csv: &str, edges_csv: &str) -> Result<Graph> {
    let mut rdr = reader(nodes_csv);
    if headers(&mut rdr)? != ["id", "x", "y"] {
        return Err(parse_err(1, "node header must be id,x,y"));
    }
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(csv_err)?;
        let id: usize = field(&rec, 0, "node id")?;
        let x: f64 = field(&rec, 1, "x")?;
        let y: f64 = field(&rec, 2, "y")?;
        rows.push((record_line(&rec), id, x, y));
    }
    let d = rows.len();
    let mut coords = vec![None; d];
    for &(line, id, x, y) in &rows {
        if id >= d {
            return Err(parse_err(line, format!("node id {id} out of range 0..{d}")));
        }
        if coords[id].is_some() {
            return Err(parse_err(line, format!("duplicate node id {id}")));
        }
        coords[id] = Some((x, y));
    }
    let coords: Vec<(f64, f64)> = coords.into_iter().map(|c| c.unwrap_or_default()).collect();

    let mut rdr = reader(edges_csv);
    if headers(&mut rdr)? != ["id_a", "id_b"] {
        return Err(parse_err(1, "edge header must be id_a,id_b"));
    }
    let mut seen = HashSet::new();
    let mut edges = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(csv_err)?;
        let line = record_line(&rec);
        let a: usize = field(&rec, 0, "id_a")?;
        let b: usize = field(&rec, 1, "id_b")?;
        if a >= d || b >= d {
            return Err(parse_err(line, format!("edge ({a}, {b}) references unknown node")));
        }
        if a == b {
            return Err(parse_err(line, format!("self-loop on node {a}")));
        }
        if !seen.insert((a.min(b), a.max(b))) {
            return Err(parse_err(line, format!("duplicate edge ({a}, {b})")));
        }
        edges.push((a, b));
    }
    let graph = Graph::new(coords, &edges)?;
    if let Some(k) = graph.isolated_node() {
        return Err(Error::IsolatedNode(k));
    }
    Ok(graph)
}

pub fn read_graph(nodes: &Path, edges: &Path) -> Result<Graph> {
    parse_graph(&read(nodes)?, &read(edges)?)
}

/// Parsed area data with the covariate column names.
#[derive(Debug, Clone, PartialEq)]
pub struct AreaData {
    pub dataset: Dataset,
    pub covariate_names: Vec<String>,
}

/// Area data from CSV columns `node,y[,offset],x1..xp`. Rows form
/// observation blocks; a block ends when a node id repeats, and every block
/// must cover nodes `0..d`. With `intercept`, a leading column of ones named
/// `intercept` is added to the design.
pub fn parse_data(text: &str, d: Option<usize>, family: Family, intercept: bool) -> Result<AreaData> {
    let mut rdr = reader(text);
    let head = headers(&mut rdr)?;
    if head.len() < 2 || head[0] != "node" || head[1] != "y" {
        return Err(parse_err(1, "data header must start with node,y"));
    }
    let has_offset = head.get(2).is_some_and(|h| h == "offset");
    let first_x = if has_offset { 3 } else { 2 };
    let mut covariate_names: Vec<String> = head[first_x..].to_vec();
    let p_file = covariate_names.len();

    struct Row {
        y: i64,
        offset: f64,
        x: Vec<f64>,
    }
    let mut blocks: Vec<(usize, Vec<Option<Row>>)> = Vec::new();
    let mut current: Vec<Option<Row>> = Vec::new();
    let mut block_line = 0;
    let mut last_line = 0;
    for rec in rdr.records() {
        let rec = rec.map_err(csv_err)?;
        let line = record_line(&rec);
        last_line = line;
        if rec.len() != head.len() {
            return Err(parse_err(line, format!("expected {} fields, found {}", head.len(), rec.len())));
        }
        let node: usize = field(&rec, 0, "node id")?;
        let y: i64 = field(&rec, 1, "response")?;
        if !family.accepts(y) {
            return Err(parse_err(line, format!("response {y} invalid for {family}")));
        }
        let offset = if has_offset { field(&rec, 2, "offset")? } else { 1.0 };
        if !(offset > 0.0 && f64::is_finite(offset)) {
            return Err(parse_err(line, format!("offset {offset} must be positive")));
        }
        let x = (first_x..head.len()).map(|k| field::<f64>(&rec, k, "covariate")).collect::<Result<Vec<_>>>()?;
        if let Some(bad) = x.iter().find(|v| !v.is_finite()) {
            return Err(parse_err(line, format!("non-finite covariate {bad}")));
        }
        if current.get(node).is_some_and(Option::is_some) {
            blocks.push((block_line, std::mem::take(&mut current)));
        }
        if current.iter().all(Option::is_none) {
            block_line = line;
        }
        if current.len() <= node {
            current.resize_with(node + 1, || None);
        }
        current[node] = Some(Row { y, offset, x });
    }
    if current.iter().any(Option::is_some) {
        blocks.push((block_line, current));
    }
    if blocks.is_empty() {
        return Err(parse_err(last_line.max(1), "no data rows"));
    }
    let d = d.unwrap_or(blocks[0].1.len());
    let n = blocks.len();
    let p = p_file + usize::from(intercept);
    let mut y = Vec::with_capacity(n * d);
    let mut x = Vec::with_capacity(n * d * p);
    let mut offsets = Vec::with_capacity(n * d);
    for (line, block) in blocks {
        if block.len() > d {
            return Err(parse_err(line, format!("block has node id {} but there are {d} nodes", block.len() - 1)));
        }
        for j in 0..d {
            let row = block.get(j).and_then(Option::as_ref).ok_or_else(|| {
                parse_err(line, format!("block starting here has no row for node {j}"))
            })?;
            y.push(row.y);
            offsets.push(row.offset);
            if intercept {
                x.push(1.0);
            }
            x.extend_from_slice(&row.x);
        }
    }
    if intercept {
        covariate_names.insert(0, "intercept".into());
    }
    Ok(AreaData { dataset: Dataset::new(n, d, p, y, x, Some(offsets))?, covariate_names })
}

pub fn read_data(path: &Path, d: Option<usize>, family: Family, intercept: bool) -> Result<AreaData> {
    parse_data(&read(path)?, d, family, intercept)
}

/// Inverse of [`parse_data`] without intercept: writes every covariate column.
pub fn write_data(data: &Dataset, covariate_names: &[String]) -> Result<String> {
    if covariate_names.len() != data.p() {
        return Err(Error::DimensionMismatch { expected: data.p(), found: covariate_names.len() });
    }
    let mut s = String::from(CSV_PREAMBLE);
    s.push_str("node,y,offset");
    for name in covariate_names {
        s.push(',');
        s.push_str(name);
    }
    s.push('\n');
    for i in 0..data.n() {
        for j in 0..data.d() {
            let _ = write!(s, "{j},{},{:?}", data.response(i)[j], data.offset(i, j));
            for v in data.covariates(i, j) {
                let _ = write!(s, ",{v:?}");
            }
            s.push('\n');
        }
    }
    Ok(s)
}

/// Model template for area data: zero coefficients, unit dispersion and a
/// dependence of 0.2. CAR when a graph is given, exchangeable otherwise.
pub fn area_model(family: Family, link: Option<Link>, graph: Option<Graph>, data: &Dataset) -> Result<ModelSpec> {
    let gamma = family.has_dispersion().then_some(1.0);
    let margin = MarginSpec::new(family, link.unwrap_or(family.default_link()), vec![0.0; data.p()], gamma)?;
    let correlation = match graph {
        Some(graph) => CorrelationModel::Car { varrho: 0.2, graph },
        None => CorrelationModel::Exchangeable { d: data.d(), rho: 0.2 },
    };
    let model = ModelSpec { margin, correlation };
    model.check(data)?;
    Ok(model)
}

fn number(v: f64, what: &str, warnings: &mut Vec<String>) -> Value {
    if v.is_finite() {
        json!(v)
    } else {
        warnings.push(format!("{what} is not finite"));
        Value::Null
    }
}

fn optional(v: Option<f64>, what: &str, warnings: &mut Vec<String>) -> Value {
    match v {
        Some(v) => number(v, what, warnings),
        None => Value::Null,
    }
}

/// Fit report document (format version 1).
pub fn report_json(fit: &FitResult, margin: &MarginSpec, structure: &str) -> Value {
    let mut warnings = fit.warnings.clone();
    let mut estimates = Map::new();
    for e in &fit.estimates {
        let est = number(e.estimate, &format!("estimate of {}", e.name), &mut warnings);
        let se = optional(e.se, &format!("se of {}", e.name), &mut warnings);
        let z = optional(e.z, &format!("z of {}", e.name), &mut warnings);
        let p = optional(e.p, &format!("p of {}", e.name), &mut warnings);
        estimates.insert(e.name.clone(), json!({ "est": est, "se": se, "z": z, "p": p }));
    }
    let loglik = number(fit.loglik, "loglik", &mut warnings);
    let aic = number(fit.aic, "aic", &mut warnings);
    let rqmc = match fit.rqmc {
        Some(c) => json!({ "points": c.points_per_shift, "shifts": c.num_shifts }),
        None => Value::Null,
    };
    json!({
        "format_version": FORMAT_VERSION,
        "method": fit.method.to_string(),
        "family": margin.family.to_string(),
        "link": margin.link.to_string(),
        "structure": structure,
        "estimates": estimates,
        "loglik": loglik,
        "aic": aic,
        "converged": fit.converged,
        "iterations": fit.iterations,
        "seed": fit.seed,
        "rqmc": rqmc,
        "warnings": warnings,
    })
}

pub const SIZE_BINS: usize = 20;

/// Histogram of the fitted per-unit probabilities `f_j(y_ij)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SizeDiagnostic {
    pub counts: [usize; SIZE_BINS],
    pub max: f64,
}

impl SizeDiagnostic {
    pub fn to_csv(&self) -> String {
        let mut s = String::from(CSV_PREAMBLE);
        s.push_str("bin_lower,bin_upper,count\n");
        for (k, c) in self.counts.iter().enumerate() {
            let _ = writeln!(s, "{},{},{c}", k as f64 / SIZE_BINS as f64, (k + 1) as f64 / SIZE_BINS as f64);
        }
        let _ = writeln!(s, "# max: {}", self.max);
        s
    }
}

/// Bins `f_j(y_ij)` under `margin` (typically an independence fit) into 20
/// equal bins over `[0, 1]`.
pub fn size_diagnostic(margin: &MarginSpec, data: &Dataset) -> Result<SizeDiagnostic> {
    let mut counts = [0usize; SIZE_BINS];
    let mut max = 0.0f64;
    for i in 0..data.n() {
        for j in 0..data.d() {
            let mu = mean_from_covariates(margin, data.covariates(i, j), data.offset(i, j))?;
            let f = margin.unit(mu)?.pmf(data.response(i)[j]);
            let bin = ((f * SIZE_BINS as f64) as usize).min(SIZE_BINS - 1);
            counts[bin] += 1;
            max = max.max(f);
        }
    }
    Ok(SizeDiagnostic { counts, max })
}

/// Parses a comma-separated list of reals; `inf`, `+inf` and `-inf` are
/// accepted.
pub fn parse_bounds(s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|t| match t.trim() {
            "inf" | "+inf" | "Inf" => Ok(f64::INFINITY),
            "-inf" | "-Inf" => Ok(f64::NEG_INFINITY),
            t => t.parse::<f64>().ok().filter(|v| !v.is_nan()).ok_or(()),
        })
        .collect::<std::result::Result<Vec<_>, ()>>()
        .or_else(|_| invalid(format!("cannot parse bound list '{s}'")))
}
