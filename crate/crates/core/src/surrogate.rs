//! Precomputed stand-ins for the FE model over damage grids.
//!
//! A [`GridTable`] stores eigenvalues, top-edge mode-shape rows and static
//! capacity on a uniform damage grid (1D for scour, 2D for corrosion), with
//! MAC-based mode tracking so mode `m` means the same physical mode at every
//! grid point. Lookups are nearest-neighbour; corrosion eigenvalues and
//! capacity additionally get total-degree polynomial response surfaces fitted
//! on the grid, which the likelihood and reliability evaluations use because
//! they are smooth and cheap.

use std::sync::atomic::{AtomicU64, Ordering};

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::fe::{BridgeModel, CapacityEvaluator, DamageKind, DamageSpec};
use crate::vibration::mac;
use crate::{Error, Result};

/// Which outputs a grid build should evaluate and store.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Quantities {
    pub modal: bool,
    pub capacity: bool,
}

impl Default for Quantities {
    fn default() -> Self {
        Self {
            modal: true,
            capacity: true,
        }
    }
}

/// Damage grid description: `points` uniform values over `[0, max]` per
/// axis, optionally extended by a coarse tail segment up to `tail_max` so the
/// capacity curve covers the deep prior tail without inflating the dense
/// region the likelihood relies on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub kind: DamageKind,
    pub max: f64,
    pub points: usize,
    /// Upper end of the coarse tail segment (`None`: no tail).
    pub tail_max: Option<f64>,
    /// Points in the tail segment.
    pub tail_points: usize,
    pub n_modes: usize,
    pub quantities: Quantities,
}

impl GridSpec {
    /// Default scour grid: 301 points over `[0, 30]` plus a coarse tail to
    /// `D = 300` covering the lognormal prior's deep tail, where the middle
    /// support is essentially gone.
    pub fn scour_default() -> Self {
        Self {
            kind: DamageKind::Scour,
            max: 30.0,
            points: 301,
            tail_max: Some(300.0),
            tail_points: 108,
            n_modes: 6,
            quantities: Quantities::default(),
        }
    }

    /// Default corrosion grid: 61×61 points over `[0, 12]²`.
    pub fn corrosion_default() -> Self {
        Self {
            kind: DamageKind::Corrosion,
            max: 12.0,
            points: 61,
            tail_max: None,
            tail_points: 0,
            n_modes: 6,
            quantities: Quantities::default(),
        }
    }

    fn axis(&self) -> Result<Vec<f64>> {
        if self.points < 2 {
            return Err(Error::Config(format!(
                "grid needs at least 2 points per axis, got {}",
                self.points
            )));
        }
        if !(self.max > 0.0) {
            return Err(Error::Config(format!(
                "grid maximum must be positive, got {}",
                self.max
            )));
        }
        let mut axis: Vec<f64> = (0..self.points)
            .map(|i| self.max * i as f64 / (self.points - 1) as f64)
            .collect();
        if let Some(tail_max) = self.tail_max {
            if !(tail_max > self.max) || self.tail_points == 0 {
                return Err(Error::Config(format!(
                    "grid tail must extend beyond {} with at least one point",
                    self.max
                )));
            }
            let step = (tail_max - self.max) / self.tail_points as f64;
            for i in 1..=self.tail_points {
                axis.push(self.max + step * i as f64);
            }
        }
        Ok(axis)
    }
}

/// Tabulated FE outputs over the damage grid.
///
/// `shapes[point][mode]` holds the vertical mode-shape values at every
/// top-edge node, so any sensor layout can be extracted by index later.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GridTable {
    pub kind: DamageKind,
    /// Ascending axis values, one vector per damage dimension.
    pub axes: Vec<Vec<f64>>,
    pub n_modes: usize,
    /// Eigenvalues per grid point, `[point][mode]` (mode-tracked order).
    pub lambdas: Vec<Vec<f64>>,
    /// Top-edge shape rows, `[point][mode][top-edge node]`.
    pub shapes: Vec<Vec<Vec<f64>>>,
    /// Static capacity `R` per grid point (empty if not built).
    pub capacity: Vec<f64>,
    /// Per-section capacity ratios, `[point][section]` (empty if not built).
    pub capacity_components: Vec<Vec<f64>>,
}

impl GridTable {
    pub fn n_points(&self) -> usize {
        self.axes.iter().map(Vec::len).product()
    }

    pub fn dimension(&self) -> usize {
        self.axes.len()
    }

    /// Damage coordinates of a linear point index (row-major over the axes).
    pub fn point_coords(&self, index: usize) -> Vec<f64> {
        match self.axes.len() {
            1 => vec![self.axes[0][index]],
            2 => {
                let n2 = self.axes[1].len();
                vec![self.axes[0][index / n2], self.axes[1][index % n2]]
            }
            d => unreachable!("unsupported grid dimension {d}"),
        }
    }

    fn axis_nearest(axis: &[f64], x: f64) -> usize {
        // Ties break toward the lower index.
        let pos = axis.partition_point(|v| *v < x);
        if pos == 0 {
            return 0;
        }
        if pos >= axis.len() {
            return axis.len() - 1;
        }
        let (lo, hi) = (axis[pos - 1], axis[pos]);
        if (x - lo) <= (hi - x) {
            pos - 1
        } else {
            pos
        }
    }

    fn axis_step(axis: &[f64], edge_low: bool) -> f64 {
        if edge_low {
            axis[1] - axis[0]
        } else {
            axis[axis.len() - 1] - axis[axis.len() - 2]
        }
    }

    /// Linear index of the Euclidean-nearest grid point; errors when the query
    /// leaves the grid by more than one step on any axis.
    pub fn nearest_index(&self, point: &[f64]) -> Result<usize> {
        self.check_dim(point)?;
        let mut index = 0;
        for (d, axis) in self.axes.iter().enumerate() {
            let x = point[d];
            let lo = axis[0] - Self::axis_step(axis, true);
            let hi = axis[axis.len() - 1] + Self::axis_step(axis, false);
            if x < lo || x > hi {
                return Err(Error::Extrapolation(format!(
                    "damage {x:.4} on axis {d} outside tolerance band [{lo:.4}, {hi:.4}]"
                )));
            }
            index = index * axis.len() + Self::axis_nearest(axis, x);
        }
        Ok(index)
    }

    /// Nearest index with queries clamped into the grid hull (hot paths:
    /// samplers may propose beyond the tabulated range).
    pub fn nearest_index_clamped(&self, point: &[f64]) -> usize {
        let mut index = 0;
        for (d, axis) in self.axes.iter().enumerate() {
            let x = point[d].clamp(axis[0], axis[axis.len() - 1]);
            index = index * axis.len() + Self::axis_nearest(axis, x);
        }
        index
    }

    fn check_dim(&self, point: &[f64]) -> Result<()> {
        if point.len() != self.dimension() {
            return Err(Error::Domain(format!(
                "query dimension {} does not match grid dimension {}",
                point.len(),
                self.dimension()
            )));
        }
        Ok(())
    }

    /// Piecewise-linear capacity over a 1D grid, clamped at the ends.
    pub fn capacity_interp1(&self, d: f64) -> f64 {
        let (lo, hi, w) = self.interp1_weights(d);
        self.capacity[lo] * (1.0 - w) + self.capacity[hi] * w
    }

    /// Piecewise-linear eigenvalues over a 1D grid, clamped at the ends.
    /// Nearest-neighbour lookups turn the likelihood into a staircase whose
    /// finite-difference Hessians degenerate; mode-tracked eigenvalues are
    /// smooth along the grid, so interpolation is both safer and closer.
    pub fn lambdas_interp1(&self, d: f64) -> Vec<f64> {
        let (lo, hi, w) = self.interp1_weights(d);
        self.lambdas[lo]
            .iter()
            .zip(&self.lambdas[hi])
            .map(|(a, b)| a * (1.0 - w) + b * w)
            .collect()
    }

    fn interp1_weights(&self, d: f64) -> (usize, usize, f64) {
        let axis = &self.axes[0];
        let x = d.clamp(axis[0], axis[axis.len() - 1]);
        let pos = axis.partition_point(|v| *v < x).clamp(1, axis.len() - 1);
        let (x0, x1) = (axis[pos - 1], axis[pos]);
        ((pos - 1), pos, (x - x0) / (x1 - x0))
    }
}

/// Builds the grid table by running the FE model at every grid point.
///
/// Rows along the first axis run in parallel; within a row the eigensolver is
/// warm-started from the neighbouring point and modes are MAC-tracked against
/// it, so mode `m` never swaps identity along the grid.
pub fn build_grid(model: &BridgeModel, spec: &GridSpec) -> Result<GridTable> {
    let axis = spec.axis()?;
    let dim = spec.kind.dimension();
    let axes: Vec<Vec<f64>> = (0..dim).map(|_| axis.clone()).collect();

    let capacity_eval = if spec.quantities.capacity {
        Some(CapacityEvaluator::new(model, spec.kind)?)
    } else {
        None
    };

    let n_axis = axis.len();
    let rows: Vec<Vec<usize>> = match dim {
        1 => vec![(0..n_axis).collect()],
        2 => (0..n_axis)
            .map(|i1| (0..n_axis).map(|i2| i1 * n_axis + i2).collect())
            .collect(),
        _ => unreachable!(),
    };

    let top_dofs: Vec<usize> = model
        .top_nodes()
        .iter()
        .map(|&n| BridgeModel::vertical_dof(n))
        .collect();

    struct PointRecord {
        index: usize,
        lambdas: Vec<f64>,
        shapes: Vec<Vec<f64>>,
        capacity: Vec<f64>,
    }

    let row_results: Vec<Vec<PointRecord>> = rows
        .par_iter()
        .map(|row| -> Result<Vec<PointRecord>> {
            let mut out = Vec::with_capacity(row.len());
            let mut warm: Option<DMatrix<f64>> = None;
            let mut prev_rows: Option<Vec<Vec<f64>>> = None;
            for &index in row {
                let coords = grid_coords(&axes, index);
                let damage = DamageSpec::from_values(spec.kind, &coords);
                let damaged = model.apply_damage(&damage)?;
                let (lambdas, shapes) = if spec.quantities.modal {
                    let sol = damaged
                        .modal_analysis_warm(spec.n_modes, warm.as_ref())
                        .map_err(|e| {
                            Error::Surrogate(format!("FE failure at grid point {coords:?}: {e}"))
                        })?;
                    let rows_here: Vec<Vec<f64>> = (0..spec.n_modes)
                        .map(|m| top_dofs.iter().map(|&d| sol.shapes[(d, m)]).collect())
                        .collect();
                    let order = match &prev_rows {
                        None => (0..spec.n_modes).collect::<Vec<_>>(),
                        Some(prev) => track_modes(&rows_here, prev),
                    };
                    let lambdas: Vec<f64> = order.iter().map(|&m| sol.eigenvalues[m]).collect();
                    let tracked: Vec<Vec<f64>> =
                        order.iter().map(|&m| rows_here[m].clone()).collect();
                    // Warm-start the neighbour with the tracked eigenvectors.
                    let mut w = DMatrix::zeros(sol.shapes.nrows(), spec.n_modes);
                    for (c, &m) in order.iter().enumerate() {
                        for r in 0..sol.shapes.nrows() {
                            w[(r, c)] = sol.shapes[(r, m)];
                        }
                    }
                    warm = Some(w);
                    prev_rows = Some(tracked.clone());
                    (lambdas, tracked)
                } else {
                    (Vec::new(), Vec::new())
                };
                let capacity = match &capacity_eval {
                    Some(eval) => eval.capacity_components(&damage).map_err(|e| {
                        Error::Surrogate(format!("FE failure at grid point {coords:?}: {e}"))
                    })?,
                    None => Vec::new(),
                };
                out.push(PointRecord {
                    index,
                    lambdas,
                    shapes,
                    capacity,
                });
            }
            Ok(out)
        })
        .collect::<Result<Vec<_>>>()?;

    let n_points: usize = axes.iter().map(Vec::len).product();
    let mut lambdas = vec![Vec::new(); n_points];
    let mut shapes = vec![Vec::new(); n_points];
    let mut capacity = vec![f64::NAN; n_points];
    let mut capacity_components = vec![Vec::new(); n_points];
    for row in row_results {
        for rec in row {
            lambdas[rec.index] = rec.lambdas;
            shapes[rec.index] = rec.shapes;
            capacity[rec.index] = rec.capacity.iter().copied().fold(f64::INFINITY, f64::min);
            capacity_components[rec.index] = rec.capacity;
        }
    }
    if !spec.quantities.capacity {
        capacity.clear();
        capacity_components.clear();
    }
    if !spec.quantities.modal {
        lambdas.clear();
        shapes.clear();
    }
    Ok(GridTable {
        kind: spec.kind,
        axes,
        n_modes: spec.n_modes,
        lambdas,
        shapes,
        capacity,
        capacity_components,
    })
}

fn grid_coords(axes: &[Vec<f64>], index: usize) -> Vec<f64> {
    match axes.len() {
        1 => vec![axes[0][index]],
        2 => {
            let n2 = axes[1].len();
            vec![axes[0][index / n2], axes[1][index % n2]]
        }
        _ => unreachable!(),
    }
}

/// Greedy MAC assignment of current modes onto the reference ordering.
fn track_modes(current: &[Vec<f64>], reference: &[Vec<f64>]) -> Vec<usize> {
    let n = reference.len();
    let mut pairs = Vec::with_capacity(n * n);
    for (m_ref, r) in reference.iter().enumerate() {
        for (m_cur, c) in current.iter().enumerate() {
            pairs.push((mac(c, r), m_ref, m_cur));
        }
    }
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut order = vec![usize::MAX; n];
    let mut used = vec![false; n];
    let mut remaining = n;
    for (_, m_ref, m_cur) in pairs {
        if order[m_ref] != usize::MAX || used[m_cur] {
            continue;
        }
        order[m_ref] = m_cur;
        used[m_cur] = true;
        remaining -= 1;
        if remaining == 0 {
            break;
        }
    }
    order
}

/// Input warp applied before polynomial evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum InputTransform {
    /// Raw damage values.
    Identity,
    /// `u = D / (1 + D)`; linearizes the hyperbolic stiffness-reduction knee
    /// so low total degrees suffice for capacity.
    Rational,
}

impl InputTransform {
    #[inline]
    fn apply(&self, x: f64) -> f64 {
        match self {
            InputTransform::Identity => x,
            InputTransform::Rational => x / (1.0 + x),
        }
    }
}

/// Total-degree polynomial response surface on normalized (optionally warped)
/// inputs.
#[derive(Debug, Serialize, Deserialize)]
pub struct PolySurface {
    pub input_dim: usize,
    pub degree: usize,
    pub transform: InputTransform,
    /// Coefficients matching [`PolySurface::monomials`] order.
    pub coeffs: Vec<f64>,
    /// Input normalization: `x_norm = (x - offset) / scale`.
    pub offset: Vec<f64>,
    pub scale: Vec<f64>,
    /// Fitted range per input, used for clamping.
    pub bounds: Vec<(f64, f64)>,
    /// Max relative residual over the training grid.
    pub max_rel_residual: f64,
    /// Number of evaluations that required clamping (diagnostic).
    #[serde(skip)]
    clamp_count: AtomicU64,
}

impl Clone for PolySurface {
    fn clone(&self) -> Self {
        Self {
            input_dim: self.input_dim,
            degree: self.degree,
            transform: self.transform,
            coeffs: self.coeffs.clone(),
            offset: self.offset.clone(),
            scale: self.scale.clone(),
            bounds: self.bounds.clone(),
            max_rel_residual: self.max_rel_residual,
            clamp_count: AtomicU64::new(self.clamp_count.load(Ordering::Relaxed)),
        }
    }
}

impl PolySurface {
    /// Exponent tuples of the total-degree basis, deterministic order.
    pub fn monomials(input_dim: usize, degree: usize) -> Vec<Vec<usize>> {
        match input_dim {
            1 => (0..=degree).map(|i| vec![i]).collect(),
            2 => {
                let mut out = Vec::new();
                for total in 0..=degree {
                    for i in (0..=total).rev() {
                        out.push(vec![i, total - i]);
                    }
                }
                out
            }
            d => panic!("unsupported response-surface dimension {d}"),
        }
    }

    pub fn n_coeffs(input_dim: usize, degree: usize) -> usize {
        Self::monomials(input_dim, degree).len()
    }

    /// Polynomial value at `point`; queries outside the fitted range are
    /// clamped and counted.
    pub fn eval(&self, point: &[f64]) -> f64 {
        debug_assert_eq!(point.len(), self.input_dim);
        let mut x = [0.0f64; 2];
        let mut clamped = false;
        for d in 0..self.input_dim {
            let mut v = point[d];
            let (lo, hi) = self.bounds[d];
            if v < lo || v > hi {
                clamped = true;
                v = v.clamp(lo, hi);
            }
            x[d] = (self.transform.apply(v) - self.offset[d]) / self.scale[d];
        }
        if clamped {
            self.clamp_count.fetch_add(1, Ordering::Relaxed);
        }
        match self.input_dim {
            1 => {
                // Horner evaluation in the normalized coordinate.
                let mut acc = 0.0;
                for &c in self.coeffs.iter().rev() {
                    acc = acc * x[0] + c;
                }
                acc
            }
            2 => {
                let mut p0 = [0.0f64; 16];
                let mut p1 = [0.0f64; 16];
                p0[0] = 1.0;
                p1[0] = 1.0;
                for k in 1..=self.degree {
                    p0[k] = p0[k - 1] * x[0];
                    p1[k] = p1[k - 1] * x[1];
                }
                let mut acc = 0.0;
                let mut idx = 0;
                for total in 0..=self.degree {
                    for i in (0..=total).rev() {
                        acc += self.coeffs[idx] * p0[i] * p1[total - i];
                        idx += 1;
                    }
                }
                acc
            }
            _ => unreachable!(),
        }
    }

    pub fn clamp_count(&self) -> u64 {
        self.clamp_count.load(Ordering::Relaxed)
    }
}

/// Which tabulated quantity a response surface approximates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Quantity {
    /// Eigenvalue of the given tracked mode.
    Eigenvalue(usize),
    /// Governing capacity (min over sections).
    Capacity,
    /// Capacity ratio of one section (smooth, creaseless).
    CapacityComponent(usize),
}

/// Least-squares fit of a total-degree polynomial to one grid quantity.
pub fn fit_poly_surface(table: &GridTable, quantity: Quantity, degree: usize) -> Result<PolySurface> {
    fit_poly_surface_with(table, quantity, degree, InputTransform::Identity)
}

/// Polynomial fit with an input warp applied to every damage coordinate.
pub fn fit_poly_surface_with(
    table: &GridTable,
    quantity: Quantity,
    degree: usize,
    transform: InputTransform,
) -> Result<PolySurface> {
    let n_points = table.n_points();
    let dim = table.dimension();
    let values: Vec<f64> = match quantity {
        Quantity::Eigenvalue(m) => {
            if m >= table.n_modes || table.lambdas.is_empty() {
                return Err(Error::Surrogate(format!("mode {m} not stored in the grid")));
            }
            table.lambdas.iter().map(|l| l[m]).collect()
        }
        Quantity::Capacity => {
            if table.capacity.is_empty() {
                return Err(Error::Surrogate("grid stores no capacity values".to_string()));
            }
            table.capacity.clone()
        }
        Quantity::CapacityComponent(j) => {
            if table.capacity_components.is_empty() {
                return Err(Error::Surrogate("grid stores no capacity values".to_string()));
            }
            table.capacity_components.iter().map(|c| c[j]).collect()
        }
    };
    let monomials = PolySurface::monomials(dim, degree);
    if n_points < monomials.len() {
        return Err(Error::Surrogate(format!(
            "{n_points} grid points cannot determine {} coefficients",
            monomials.len()
        )));
    }
    // Normalize inputs to [-1, 1] for conditioning.
    let mut offset = vec![0.0; dim];
    let mut scale = vec![1.0; dim];
    let mut bounds = Vec::with_capacity(dim);
    for d in 0..dim {
        let axis = &table.axes[d];
        let (lo, hi) = (axis[0], axis[axis.len() - 1]);
        let (tlo, thi) = (transform.apply(lo), transform.apply(hi));
        offset[d] = 0.5 * (tlo + thi);
        scale[d] = 0.5 * (thi - tlo);
        bounds.push((lo, hi));
    }
    let mut design = DMatrix::zeros(n_points, monomials.len());
    for p in 0..n_points {
        let coords = table.point_coords(p);
        for (c, mono) in monomials.iter().enumerate() {
            let mut v = 1.0;
            for d in 0..dim {
                let xn = (transform.apply(coords[d]) - offset[d]) / scale[d];
                v *= xn.powi(mono[d] as i32);
            }
            design[(p, c)] = v;
        }
    }
    let rhs = DMatrix::from_column_slice(n_points, 1, &values);
    let svd = design.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if !(smin > smax * 1e-12) {
        return Err(Error::Surrogate(format!(
            "normal system ill-conditioned (σ ratio {:.2e}); reduce the polynomial degree",
            smin / smax
        )));
    }
    let sol = svd
        .solve(&rhs, 1e-14)
        .map_err(|e| Error::Surrogate(format!("least-squares solve failed: {e}")))?;
    let coeffs: Vec<f64> = sol.column(0).iter().copied().collect();
    let surface = PolySurface {
        input_dim: dim,
        degree,
        transform,
        coeffs,
        offset,
        scale,
        bounds,
        max_rel_residual: 0.0,
        clamp_count: AtomicU64::new(0),
    };
    let vmax = values.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
    let mut max_rel = 0.0f64;
    for p in 0..n_points {
        let pred = surface.eval(&table.point_coords(p));
        max_rel = max_rel.max((pred - values[p]).abs() / vmax);
    }
    Ok(PolySurface {
        max_rel_residual: max_rel,
        ..surface
    })
}

/// Everything inference and reliability need for one damage case.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SurrogateBundle {
    pub table: GridTable,
    /// One eigenvalue surface per mode (corrosion only).
    pub lambda_surfaces: Vec<PolySurface>,
    /// One capacity-ratio surface per critical section (corrosion only); the
    /// governing capacity is their pointwise minimum.
    pub capacity_surfaces: Vec<PolySurface>,
}

/// Cache format version; bump on any layout change.
pub const BUNDLE_VERSION: u32 = 2;

impl SurrogateBundle {
    /// Builds the per-case bundle: scour keeps nearest-neighbour lookups for
    /// everything, corrosion fits polynomial surfaces for eigenvalues and
    /// capacity while keeping nearest-neighbour for mode shapes.
    pub fn build(model: &BridgeModel, spec: &GridSpec, poly_degree: usize) -> Result<Self> {
        let table = build_grid(model, spec)?;
        let (lambda_surfaces, capacity_surfaces) = match spec.kind {
            DamageKind::Scour => (Vec::new(), Vec::new()),
            DamageKind::Corrosion => {
                let mut surfaces = Vec::with_capacity(spec.n_modes);
                for m in 0..spec.n_modes {
                    surfaces.push(fit_poly_surface(&table, Quantity::Eigenvalue(m), poly_degree)?);
                }
                let mut caps = Vec::new();
                if spec.quantities.capacity {
                    let n_sections = table.capacity_components[0].len();
                    for j in 0..n_sections {
                        caps.push(fit_poly_surface_with(
                            &table,
                            Quantity::CapacityComponent(j),
                            poly_degree,
                            InputTransform::Rational,
                        )?);
                    }
                }
                (surfaces, caps)
            }
        };
        Ok(Self {
            table,
            lambda_surfaces,
            capacity_surfaces,
        })
    }

    pub fn kind(&self) -> DamageKind {
        self.table.kind
    }

    pub fn n_modes(&self) -> usize {
        self.table.n_modes
    }

    /// Model eigenvalues at a damage point (clamped into the grid range):
    /// interpolated table for scour, response surfaces for corrosion.
    pub fn lambdas(&self, damage: &[f64]) -> Vec<f64> {
        match self.kind() {
            DamageKind::Scour => self.table.lambdas_interp1(damage[0]),
            DamageKind::Corrosion => self
                .lambda_surfaces
                .iter()
                .map(|s| s.eval(damage))
                .collect(),
        }
    }

    /// Model mode shapes at the given top-edge sensor indices (nearest grid
    /// point), `[mode][sensor]`.
    pub fn shapes_at(&self, damage: &[f64], top_indices: &[usize]) -> Vec<Vec<f64>> {
        let idx = self.table.nearest_index_clamped(damage);
        self.table.shapes[idx]
            .iter()
            .map(|row| top_indices.iter().map(|&i| row[i]).collect())
            .collect()
    }

    /// Capacity `R` at a damage point: the worst section ratio.
    pub fn capacity(&self, damage: &[f64]) -> f64 {
        if !self.capacity_surfaces.is_empty() {
            return self
                .capacity_surfaces
                .iter()
                .map(|s| s.eval(damage))
                .fold(f64::INFINITY, f64::min);
        }
        match self.kind() {
            DamageKind::Scour => self.table.capacity_interp1(damage[0]),
            DamageKind::Corrosion => {
                let idx = self.table.nearest_index_clamped(damage);
                self.table.capacity[idx]
            }
        }
    }

    pub fn write_binary(&self, mut w: impl std::io::Write) -> Result<()> {
        w.write_all(b"SVGB")?;
        w.write_all(&BUNDLE_VERSION.to_le_bytes())?;
        bincode::serialize_into(&mut w, self)
            .map_err(|e| Error::Surrogate(format!("cache serialization failed: {e}")))
    }

    pub fn read_binary(mut r: impl std::io::Read) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != b"SVGB" {
            return Err(Error::Surrogate("not a surrogate cache file".to_string()));
        }
        let mut b4 = [0u8; 4];
        r.read_exact(&mut b4)?;
        let version = u32::from_le_bytes(b4);
        if version != BUNDLE_VERSION {
            return Err(Error::Surrogate(format!(
                "cache version {version} incompatible with {BUNDLE_VERSION}"
            )));
        }
        bincode::deserialize_from(&mut r)
            .map_err(|e| Error::Surrogate(format!("cache deserialization failed: {e}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fe::{build_model, MeshConfig};
    use approx::assert_relative_eq;
    use rand::Rng;

    fn small_model() -> BridgeModel {
        build_model(&MeshConfig {
            nx: 50,
            ny: 2,
            ..MeshConfig::default()
        })
        .unwrap()
    }

    fn corrosion_model() -> BridgeModel {
        build_model(&MeshConfig {
            nx: 60,
            ny: 4,
            ..MeshConfig::default()
        })
        .unwrap()
    }

    fn small_scour_spec(points: usize) -> GridSpec {
        GridSpec {
            kind: DamageKind::Scour,
            max: 30.0,
            points,
            tail_max: None,
            tail_points: 0,
            n_modes: 4,
            quantities: Quantities::default(),
        }
    }

    #[test]
    fn grid_point_count_and_identity() {
        let model = small_model();
        let spec = small_scour_spec(31);
        let table = build_grid(&model, &spec).unwrap();
        assert_eq!(table.n_points(), 31);
        assert_eq!(table.lambdas.len(), 31);
        // Stored values at D = 0 equal the direct modal solution exactly.
        let direct = model.modal_analysis(4).unwrap();
        assert_eq!(table.lambdas[0], direct.eigenvalues);
        let direct_cap = CapacityEvaluator::new(&model, DamageKind::Scour)
            .unwrap()
            .capacity(&DamageSpec::Scour(0.0))
            .unwrap();
        assert_eq!(table.capacity[0], direct_cap);
    }

    #[test]
    fn nearest_lookup_rules() {
        let model = small_model();
        let table = build_grid(&model, &small_scour_spec(31)).unwrap();
        let step = table.axes[0][1] - table.axes[0][0];
        // On-point query returns that point.
        assert_eq!(table.nearest_index(&[table.axes[0][7]]).unwrap(), 7);
        // Exact midpoint ties toward the lower index.
        let mid = table.axes[0][3] + 0.5 * step;
        assert_eq!(table.nearest_index(&[mid]).unwrap(), 3);
        // Inside the one-step tolerance band clamps to the edge.
        assert_eq!(
            table.nearest_index(&[table.axes[0][30] + 0.5 * step]).unwrap(),
            30
        );
        // Beyond it: extrapolation error.
        assert!(matches!(
            table.nearest_index(&[table.axes[0][30] + 1.5 * step]),
            Err(Error::Extrapolation(_))
        ));
    }

    #[test]
    fn nearest_lookup_matches_brute_force() {
        let model = corrosion_model();
        let spec = GridSpec {
            kind: DamageKind::Corrosion,
            max: 12.0,
            points: 9,
            tail_max: None,
            tail_points: 0,
            n_modes: 3,
            quantities: Quantities {
                modal: true,
                capacity: false,
            },
        };
        let table = build_grid(&model, &spec).unwrap();
        let mut rng = crate::seeds::stream_rng(31, 0);
        for _ in 0..1000 {
            let q = [rng.gen_range(0.0..12.0), rng.gen_range(0.0..12.0)];
            let got = table.nearest_index(&q).unwrap();
            // Brute-force argmin over all grid points, lower index on ties.
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for p in 0..table.n_points() {
                let c = table.point_coords(p);
                let d2 = (c[0] - q[0]).powi(2) + (c[1] - q[1]).powi(2);
                if d2 < best_d - 1e-15 {
                    best_d = d2;
                    best = p;
                }
            }
            assert_eq!(got, best, "query {q:?}");
        }
    }

    #[test]
    fn capacity_monotone_on_2d_grid() {
        let model = corrosion_model();
        let spec = GridSpec {
            kind: DamageKind::Corrosion,
            max: 12.0,
            points: 7,
            tail_max: None,
            tail_points: 0,
            n_modes: 3,
            quantities: Quantities::default(),
        };
        let table = build_grid(&model, &spec).unwrap();
        let n = 7;
        // Non-increasing along each axis up to the load-redistribution
        // cross-talk: damage at one hotspot slightly relieves the other span.
        let slack = 5e-3; // coarse 2-unit steps; the default 0.2-unit grid stays under 1e-3
        for i1 in 0..n {
            for i2 in 0..n {
                let r = table.capacity[i1 * n + i2];
                if i1 + 1 < n {
                    assert!(table.capacity[(i1 + 1) * n + i2] <= r + slack);
                }
                if i2 + 1 < n {
                    assert!(table.capacity[i1 * n + i2 + 1] <= r + slack);
                }
            }
        }
        // Spot-check stored values against direct static solves.
        let eval = CapacityEvaluator::new(&model, DamageKind::Corrosion).unwrap();
        let mut rng = crate::seeds::stream_rng(32, 0);
        for _ in 0..10 {
            let p = rng.gen_range(0..table.n_points());
            let c = table.point_coords(p);
            let direct = eval
                .capacity(&DamageSpec::Corrosion(c[0], c[1]))
                .unwrap();
            assert_relative_eq!(table.capacity[p], direct, max_relative = 1e-12);
        }
    }

    #[test]
    fn mode_tracking_keeps_neighbours_aligned() {
        let model = small_model();
        let table = build_grid(&model, &small_scour_spec(301)).unwrap();
        for p in 1..table.n_points() {
            for m in 0..table.n_modes {
                let value = mac(&table.shapes[p][m], &table.shapes[p - 1][m]);
                assert!(
                    value >= 0.9,
                    "mode {m} MAC {value:.3} between points {p}-{}",
                    p - 1
                );
            }
        }
    }

    #[test]
    fn poly_fit_exact_on_quadratic_data() {
        // Degree-2 data must be reproduced to machine precision.
        let mut table = GridTable {
            kind: DamageKind::Corrosion,
            axes: vec![
                (0..7).map(|i| i as f64).collect(),
                (0..7).map(|i| i as f64).collect(),
            ],
            n_modes: 0,
            lambdas: Vec::new(),
            shapes: Vec::new(),
            capacity: Vec::new(),
            capacity_components: Vec::new(),
        };
        let f = |x: f64, y: f64| 2.0 - 0.3 * x + 0.1 * y - 0.05 * x * y + 0.02 * x * x;
        for p in 0..49 {
            let c = table.point_coords(p);
            table.capacity.push(f(c[0], c[1]));
        }
        let surface = fit_poly_surface(&table, Quantity::Capacity, 2).unwrap();
        assert!(surface.max_rel_residual < 1e-10);
        assert_relative_eq!(surface.eval(&[1.5, 2.5]), f(1.5, 2.5), epsilon = 1e-9);
    }

    #[test]
    fn poly_eval_zero_and_clamping() {
        let surface = PolySurface {
            input_dim: 2,
            degree: 1,
            transform: InputTransform::Identity,
            coeffs: vec![0.0; 3],
            offset: vec![0.0, 0.0],
            scale: vec![1.0, 1.0],
            bounds: vec![(0.0, 1.0), (0.0, 1.0)],
            max_rel_residual: 0.0,
            clamp_count: AtomicU64::new(0),
        };
        assert_eq!(surface.eval(&[0.3, 0.9]), 0.0);
        assert_eq!(surface.clamp_count(), 0);
        let _ = surface.eval(&[2.0, 0.5]);
        assert_eq!(surface.clamp_count(), 1);
    }

    #[test]
    fn corrosion_bundle_accuracy() {
        let model = corrosion_model();
        let spec = GridSpec {
            kind: DamageKind::Corrosion,
            max: 12.0,
            points: 21,
            tail_max: None,
            tail_points: 0,
            n_modes: 3,
            quantities: Quantities::default(),
        };
        let bundle = SurrogateBundle::build(&model, &spec, 4).unwrap();
        // Eigenvalue surfaces reproduce the grid within the 0.5% bound.
        for s in &bundle.lambda_surfaces {
            assert!(
                s.max_rel_residual < 0.005,
                "λ surface residual {}",
                s.max_rel_residual
            );
        }
        // Capacity at the origin is 1 within the worst component residual.
        let cap_res = bundle
            .capacity_surfaces
            .iter()
            .map(|s| s.max_rel_residual)
            .fold(0.0f64, f64::max);
        assert!((bundle.capacity(&[0.0, 0.0]) - 1.0).abs() <= cap_res + 1e-9);

        // Random interior points against direct FE solves.
        let eval = CapacityEvaluator::new(&model, DamageKind::Corrosion).unwrap();
        let mut rng = crate::seeds::stream_rng(33, 0);
        for _ in 0..20 {
            let d = [rng.gen_range(0.0..12.0), rng.gen_range(0.0..12.0)];
            let direct = eval.capacity(&DamageSpec::Corrosion(d[0], d[1])).unwrap();
            let approx = bundle.capacity(&d);
            assert!(
                (approx - direct).abs() / direct < 0.01,
                "capacity surrogate {approx} vs FE {direct} at {d:?}"
            );
        }
    }

    #[test]
    fn scour_bundle_nearest_neighbour_error_bound() {
        let model = small_model();
        let bundle = SurrogateBundle::build(&model, &small_scour_spec(301), 4).unwrap();
        // Nearest-neighbour eigenvalue error bounded by local slope × step/2.
        let axis = &bundle.table.axes[0];
        let step = axis[1] - axis[0];
        let mut rng = crate::seeds::stream_rng(34, 0);
        for _ in 0..25 {
            let d = rng.gen_range(0.0..30.0);
            let direct = model
                .apply_scour(d)
                .unwrap()
                .modal_analysis(4)
                .unwrap()
                .eigenvalues;
            let approx = bundle.lambdas(&[d]);
            let idx = bundle.table.nearest_index(&[d]).unwrap();
            for m in 0..4 {
                let slope = if idx + 1 < axis.len() {
                    (bundle.table.lambdas[idx + 1][m] - bundle.table.lambdas[idx][m]).abs() / step
                } else {
                    (bundle.table.lambdas[idx][m] - bundle.table.lambdas[idx - 1][m]).abs() / step
                };
                let bound = slope * step * 0.5 + 1e-9 * direct[m];
                assert!(
                    (approx[m] - direct[m]).abs() <= bound * 1.5,
                    "mode {m} at D={d}: err {} bound {}",
                    (approx[m] - direct[m]).abs(),
                    bound
                );
            }
        }
    }

    #[test]
    fn bundle_binary_round_trip() {
        let model = small_model();
        let bundle = SurrogateBundle::build(&model, &small_scour_spec(11), 4).unwrap();
        let mut buf = Vec::new();
        bundle.write_binary(&mut buf).unwrap();
        let back = SurrogateBundle::read_binary(std::io::Cursor::new(buf)).unwrap();
        assert_eq!(back.table.lambdas, bundle.table.lambdas);
        assert_eq!(back.table.capacity, bundle.table.capacity);
        assert_eq!(back.kind(), DamageKind::Scour);
    }
}
