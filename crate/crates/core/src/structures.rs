//! Latent correlation structures: exchangeable, CAR on a graph, or fixed.

use std::collections::HashSet;

use crate::error::{invalid, Error, Result};
use crate::normal::SymMatrix;

/// Undirected simple graph with planar node coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    coords: Vec<(f64, f64)>,
    edges: Vec<(usize, usize)>,
    degrees: Vec<usize>,
}

impl Graph {
    /// Validates and stores edges as `(min, max)` pairs in input order.
    pub fn new(coords: Vec<(f64, f64)>, edges: &[(usize, usize)]) -> Result<Self> {
        let d = coords.len();
        if d == 0 {
            return invalid("graph has no nodes");
        }
        if coords.iter().any(|(x, y)| !x.is_finite() || !y.is_finite()) {
            return invalid("non-finite node coordinate");
        }
        let mut seen = HashSet::new();
        let mut degrees = vec![0; d];
        let mut stored = Vec::with_capacity(edges.len());
        for &(a, b) in edges {
            if a >= d || b >= d {
                return invalid(format!("edge ({a}, {b}) references a node outside 0..{d}"));
            }
            if a == b {
                return invalid(format!("self-loop at node {a}"));
            }
            let e = (a.min(b), a.max(b));
            if !seen.insert(e) {
                return invalid(format!("duplicate edge ({}, {})", e.0, e.1));
            }
            degrees[a] += 1;
            degrees[b] += 1;
            stored.push(e);
        }
        Ok(Graph { coords, edges: stored, degrees })
    }

    pub fn node_count(&self) -> usize {
        self.coords.len()
    }

    pub fn coords(&self) -> &[(f64, f64)] {
        &self.coords
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn degrees(&self) -> &[usize] {
        &self.degrees
    }

    /// First node with no incident edge.
    pub fn isolated_node(&self) -> Option<usize> {
        self.degrees.iter().position(|&w| w == 0)
    }
}

/// `m × m` grid on the unit square with rook adjacency. Node `(i, j)` has
/// index `i * m + j` and coordinates `(i / (m-1), j / (m-1))`.
pub fn lattice_graph(m: usize) -> Result<Graph> {
    if m < 2 {
        return invalid(format!("lattice side {m} must be at least 2"));
    }
    let step = 1.0 / (m - 1) as f64;
    let coords = (0..m * m).map(|k| ((k / m) as f64 * step, (k % m) as f64 * step)).collect();
    let mut edges = Vec::with_capacity(2 * m * (m - 1));
    for i in 0..m {
        for j in 0..m {
            let k = i * m + j;
            if j + 1 < m {
                edges.push((k, k + 1));
            }
            if i + 1 < m {
                edges.push((k, k + m));
            }
        }
    }
    Graph::new(coords, &edges)
}

fn check_unit_interval(name: &str, v: f64) -> Result<()> {
    if (0.0..1.0).contains(&v) {
        Ok(())
    } else {
        invalid(format!("{name} = {v} outside [0, 1)"))
    }
}

/// `Σ = (D - ϱA)⁻¹` and its marginal standard deviations.
pub fn car_covariance(graph: &Graph, varrho: f64) -> Result<(SymMatrix, Vec<f64>)> {
    check_unit_interval("varrho", varrho)?;
    if let Some(j) = graph.isolated_node() {
        return Err(Error::IsolatedNode(j));
    }
    let d = graph.node_count();
    let mut q = vec![0.0; d * d];
    for (j, &w) in graph.degrees.iter().enumerate() {
        q[j * d + j] = w as f64;
    }
    for &(a, b) in &graph.edges {
        q[a * d + b] = -varrho;
        q[b * d + a] = -varrho;
    }
    let sigma = SymMatrix::new(d, q)?.cholesky()?.inverse();
    let sds = sigma.diagonal().iter().map(|v| v.sqrt()).collect();
    Ok((sigma, sds))
}

/// Rescales a covariance matrix to unit diagonal.
pub fn to_correlation(sigma: &SymMatrix) -> Result<SymMatrix> {
    let sds: Vec<f64> = sigma.diagonal().iter().map(|v| v.sqrt()).collect();
    if let Some(j) = sds.iter().position(|s| !(*s > 0.0)) {
        return Err(Error::NotPositiveDefinite { pivot: j + 1 });
    }
    let r = SymMatrix::from_fn(sigma.order(), |i, j| if i == j { 1.0 } else { sigma.get(i, j) / (sds[i] * sds[j]) });
    r.cholesky()?;
    Ok(r)
}

#[derive(Debug, Clone, PartialEq)]
pub enum CorrelationModel {
    Exchangeable { d: usize, rho: f64 },
    Car { varrho: f64, graph: Graph },
    Fixed(SymMatrix),
}

impl CorrelationModel {
    pub fn dim(&self) -> usize {
        match self {
            CorrelationModel::Exchangeable { d, .. } => *d,
            CorrelationModel::Car { graph, .. } => graph.node_count(),
            CorrelationModel::Fixed(r) => r.order(),
        }
    }

    /// The dependence parameter (`ρ` or `ϱ`), if any.
    pub fn parameter(&self) -> Option<f64> {
        match self {
            CorrelationModel::Exchangeable { rho, .. } => Some(*rho),
            CorrelationModel::Car { varrho, .. } => Some(*varrho),
            CorrelationModel::Fixed(_) => None,
        }
    }

    /// Same structure with a new dependence parameter.
    pub fn with_parameter(&self, value: f64) -> CorrelationModel {
        match self {
            CorrelationModel::Exchangeable { d, .. } => CorrelationModel::Exchangeable { d: *d, rho: value },
            CorrelationModel::Car { graph, .. } => CorrelationModel::Car { varrho: value, graph: graph.clone() },
            CorrelationModel::Fixed(r) => CorrelationModel::Fixed(r.clone()),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            CorrelationModel::Exchangeable { .. } => "exchangeable",
            CorrelationModel::Car { .. } => "car",
            CorrelationModel::Fixed(_) => "fixed",
        }
    }

    /// The latent correlation matrix `R`.
    pub fn materialize(&self) -> Result<SymMatrix> {
        match self {
            CorrelationModel::Exchangeable { d, rho } => {
                check_unit_interval("rho", *rho)?;
                if *d == 0 {
                    return invalid("dimension must be positive");
                }
                Ok(SymMatrix::exchangeable(*d, *rho))
            }
            CorrelationModel::Car { varrho, graph } => to_correlation(&car_covariance(graph, *varrho)?.0),
            CorrelationModel::Fixed(r) => {
                r.validate_correlation()?;
                Ok(r.clone())
            }
        }
    }
}

/// Materializes the correlation matrix; see [`CorrelationModel::materialize`].
pub fn materialize(model: &CorrelationModel) -> Result<SymMatrix> {
    model.materialize()
}
