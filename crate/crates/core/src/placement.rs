//! Sensor placement: greedy selection on the principal basis, the row
//! selection operator `C`, and network connectivity with bridging nodes.

use std::fmt::Write as _;
use std::path::Path;

use crate::data::{FieldSnapshot, GridShape, SnapshotSeries};
use crate::error::{Error, Result};
use crate::linalg::{qr_row_pivot, thin_svd, Matrix};

/// Singular values below this fraction of the largest count as zero when
/// judging whether a series can support `r` sensors.
pub const EFFECTIVE_RANK_TOL: f64 = 1e-10;

/// Ordered sensor locations on a grid. Stands in for the one-hot measurement
/// matrix `C`, which is never materialized.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Placement {
    gamma: Vec<usize>,
    grid: GridShape,
}

impl Placement {
    pub fn new(gamma: Vec<usize>, grid: GridShape) -> Result<Self> {
        if gamma.is_empty() {
            return Err(Error::arg("a placement needs at least one sensor"));
        }
        let m = grid.cells();
        let mut seen = vec![false; m];
        for &g in &gamma {
            if g >= m {
                return Err(Error::arg(format!("sensor index {g} outside grid of {m} cells")));
            }
            if seen[g] {
                return Err(Error::arg(format!("sensor index {g} appears twice")));
            }
            seen[g] = true;
        }
        Ok(Self { gamma, grid })
    }

    pub fn indices(&self) -> &[usize] {
        &self.gamma
    }

    pub fn grid(&self) -> GridShape {
        self.grid
    }

    pub fn len(&self) -> usize {
        self.gamma.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gamma.is_empty()
    }

    pub fn coords(&self) -> Vec<(usize, usize)> {
        self.gamma.iter().map(|&g| self.grid.coords(g)).collect()
    }

    /// Plain-text form: `r H W`, then one flat index per line.
    pub fn to_text(&self) -> String {
        let mut s = format!("{} {} {}\n", self.len(), self.grid.height, self.grid.width);
        for g in &self.gamma {
            writeln!(s, "{g}").expect("writing to a String");
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, header) = lines
            .next()
            .ok_or_else(|| Error::parse("line 1", "empty placement file"))?;
        let head: Vec<usize> = header
            .split_whitespace()
            .map(|f| f.parse::<usize>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::parse("line 1", format!("expected 'r H W', found '{header}'")))?;
        let [r, h, w] = head[..] else {
            return Err(Error::parse("line 1", format!("expected 'r H W', found '{header}'")));
        };
        let mut gamma = Vec::with_capacity(r);
        for (k, line) in lines {
            let g = line.trim().parse::<usize>().map_err(|_| {
                Error::parse(format!("line {}", k + 1), format!("bad index '{}'", line.trim()))
            })?;
            gamma.push(g);
        }
        if gamma.len() != r {
            return Err(Error::parse(
                "body",
                format!("header declares {r} sensors, found {}", gamma.len()),
            ));
        }
        Self::new(gamma, GridShape::new(h, w))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }
}

/// Picks `r` sensor cells by row-pivoted QR of the rank-`r` principal basis
/// `T_r = Ψ_r·Σ_r` of the series. Masked cells are never candidates.
pub fn select_sampling_locations(series: &SnapshotSeries, r: usize) -> Result<Placement> {
    let snapshots = series.len();
    if snapshots < 2 {
        return Err(Error::arg(format!(
            "placement needs at least 2 snapshots, got {snapshots}"
        )));
    }
    let candidates = series.valid_cells();
    if r == 0 || r > candidates.len().min(snapshots) {
        return Err(Error::arg(format!(
            "sensor count {r} must lie in 1..={} (valid cells {}, snapshots {snapshots})",
            candidates.len().min(snapshots),
            candidates.len()
        )));
    }
    let phi = series.to_matrix().select_rows(&candidates)?;
    let svd = thin_svd(&phi)?;
    let effective_rank = effective_rank(&svd.s);
    if effective_rank < r {
        return Err(Error::Degenerate {
            effective_rank,
            requested: r,
        });
    }
    let t_r = svd.u.leading_columns(r).scale_columns(&svd.s[..r]);
    let pivots = qr_row_pivot(&t_r, r)?.pivots;
    Placement::new(
        pivots.into_iter().map(|p| candidates[p]).collect(),
        series.grid(),
    )
}

pub(crate) fn effective_rank(s: &[f64]) -> usize {
    match s.first() {
        Some(&top) if top > 0.0 => s.iter().filter(|&&x| x > EFFECTIVE_RANK_TOL * top).count(),
        _ => 0,
    }
}

/// Sensor readings `y = C·φ`: `y[i] = φ[γ_i]`.
pub fn measure(placement: &Placement, snapshot: &FieldSnapshot) -> Result<Vec<f64>> {
    measure_values(placement, &snapshot.values)
}

pub fn measure_values(placement: &Placement, values: &[f64]) -> Result<Vec<f64>> {
    if values.len() != placement.grid.cells() {
        return Err(Error::arg(format!(
            "field of {} values does not match the {}-cell placement grid",
            values.len(),
            placement.grid.cells()
        )));
    }
    Ok(placement.gamma.iter().map(|&g| values[g]).collect())
}

/// Applies `C` to every column of an `m × K` matrix, giving `r × K`.
pub fn measure_matrix(placement: &Placement, phi: &Matrix) -> Result<Matrix> {
    if phi.rows() != placement.grid.cells() {
        return Err(Error::arg(format!(
            "matrix with {} rows does not match the {}-cell placement grid",
            phi.rows(),
            placement.grid.cells()
        )));
    }
    phi.select_rows(&placement.gamma)
}

/// Nearest-neighbour distances and connectivity of a placement under an ℓ1
/// communication radius, measured in grid cells.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConnectivityReport {
    /// Largest nearest-neighbour distance Ω; `None` for a single sensor.
    pub omega: Option<usize>,
    /// ω_i for each sensor, in placement order.
    pub per_node_nearest: Vec<usize>,
    /// Every sensor has a neighbour within the radius (Ω ≤ τ).
    pub connected: bool,
    /// The radius graph forms a single component.
    pub graph_connected: bool,
    /// Number of components of the radius graph.
    pub components: usize,
    /// Flat indices appended by [`insert_bridges`].
    pub bridges_added: Vec<usize>,
}

fn l1(a: (usize, usize), b: (usize, usize)) -> usize {
    a.0.abs_diff(b.0) + a.1.abs_diff(b.1)
}

/// Component label per node (labels numbered by first appearance).
fn components(points: &[(usize, usize)], tau: usize) -> Vec<usize> {
    let n = points.len();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    for i in 0..n {
        for j in i + 1..n {
            if l1(points[i], points[j]) <= tau {
                let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                if a != b {
                    parent[a.max(b)] = a.min(b);
                }
            }
        }
    }
    let mut labels = vec![usize::MAX; n];
    let mut next = 0;
    let mut root_label = vec![usize::MAX; n];
    for i in 0..n {
        let root = find(&mut parent, i);
        if root_label[root] == usize::MAX {
            root_label[root] = next;
            next += 1;
        }
        labels[i] = root_label[root];
    }
    labels
}

pub fn analyze_connectivity(placement: &Placement, tau_com: usize) -> ConnectivityReport {
    let points = placement.coords();
    let labels = components(&points, tau_com);
    let n_components = labels.iter().max().map_or(0, |m| m + 1);
    if points.len() < 2 {
        return ConnectivityReport {
            omega: None,
            per_node_nearest: Vec::new(),
            connected: false,
            graph_connected: n_components == 1,
            components: n_components,
            bridges_added: Vec::new(),
        };
    }
    let nearest: Vec<usize> = points
        .iter()
        .enumerate()
        .map(|(i, &p)| {
            points
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != i)
                .map(|(_, &q)| l1(p, q))
                .min()
                .expect("at least two sensors")
        })
        .collect();
    let omega = *nearest.iter().max().expect("non-empty");
    ConnectivityReport {
        omega: Some(omega),
        per_node_nearest: nearest,
        connected: omega <= tau_com,
        graph_connected: n_components == 1,
        components: n_components,
        bridges_added: Vec::new(),
    }
}

/// Grid point `step` cells along the ℓ1 path from `a` to `b` that moves
/// along rows first, then columns.
fn path_point(a: (usize, usize), b: (usize, usize), step: usize) -> (usize, usize) {
    let dr = a.0.abs_diff(b.0);
    let toward = |from: usize, to: usize, k: usize| if to >= from { from + k } else { from - k };
    if step <= dr {
        (toward(a.0, b.0, step), a.1)
    } else {
        (b.0, toward(a.1, b.1, step - dr))
    }
}

/// Adds bridging sensors until the radius graph is a single component.
///
/// While more than one component remains, the closest pair of sensors in
/// different components is joined by sensors spaced evenly along an ℓ1
/// shortest path between them, `ceil(d / τ) − 1` of them. Original sensors
/// keep their order; bridges are appended.
pub fn insert_bridges(placement: &Placement, tau_com: usize) -> Result<(Placement, ConnectivityReport)> {
    if tau_com == 0 {
        return Err(Error::arg("bridging needs a communication radius of at least 1"));
    }
    let grid = placement.grid;
    let mut gamma = placement.gamma.clone();
    let mut occupied = vec![false; grid.cells()];
    for &g in &gamma {
        occupied[g] = true;
    }
    let mut bridges = Vec::new();
    loop {
        let points: Vec<(usize, usize)> = gamma.iter().map(|&g| grid.coords(g)).collect();
        let labels = components(&points, tau_com);
        if labels.iter().all(|&l| l == 0) {
            break;
        }
        let mut best: Option<(usize, usize, usize)> = None;
        for i in 0..points.len() {
            for j in i + 1..points.len() {
                if labels[i] != labels[j] {
                    let d = l1(points[i], points[j]);
                    if best.is_none_or(|(bd, _, _)| d < bd) {
                        best = Some((d, i, j));
                    }
                }
            }
        }
        let (d, i, j) = best.expect("two components exist");
        let segments = d.div_ceil(tau_com);
        for k in 1..segments {
            let (r, c) = path_point(points[i], points[j], k * d / segments);
            let idx = grid.index(r, c);
            if !occupied[idx] {
                occupied[idx] = true;
                gamma.push(idx);
                bridges.push(idx);
            }
        }
    }
    let bridged = Placement::new(gamma, grid)?;
    let mut report = analyze_connectivity(&bridged, tau_com);
    report.bridges_added = bridges;
    Ok((bridged, report))
}
