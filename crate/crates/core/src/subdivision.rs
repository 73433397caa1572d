//! Event-balanced recursive grid subdivision.
//!
//! The training-period count grid is quartered recursively until every
//! rectangle holds fewer than `tau` events or is no larger than 2 cells on
//! a side. The resulting regions tile the grid exactly and become the nodes
//! of the region graph.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::data::events::EventGrid;
use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// A rectangular block of grid cells: rows `[r0, r1)`, columns `[c0, c1)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Region {
    pub id: usize,
    pub r0: usize,
    pub r1: usize,
    pub c0: usize,
    pub c1: usize,
    /// Rectangle midpoint in normalized coordinates (x, y).
    pub center: (f64, f64),
    pub total_events: u64,
}

impl Region {
    pub fn n_rows(&self) -> usize {
        self.r1 - self.r0
    }

    pub fn n_cols(&self) -> usize {
        self.c1 - self.c0
    }

    pub fn n_cells(&self) -> usize {
        self.n_rows() * self.n_cols()
    }
}

/// Output of the subdivision: ordered regions plus a cell-to-region index.
#[derive(Clone, Debug)]
pub struct Partition {
    pub regions: Vec<Region>,
    pub grid_rows: usize,
    pub grid_cols: usize,
    pub tau: f64,
    cell_region: Vec<u32>,
}

impl Partition {
    /// Build a partition from explicit rectangles, verifying the exact-cover
    /// invariant and reassigning ids to the given order.
    pub fn from_regions(
        mut regions: Vec<Region>,
        grid_rows: usize,
        grid_cols: usize,
        tau: f64,
    ) -> Result<Self> {
        let mut cell_region = vec![u32::MAX; grid_rows * grid_cols];
        for (id, r) in regions.iter_mut().enumerate() {
            r.id = id;
            if r.r0 >= r.r1 || r.c0 >= r.c1 || r.r1 > grid_rows || r.c1 > grid_cols {
                return Err(Error::InvalidArgument(format!(
                    "region {id} rows [{}, {}) cols [{}, {}) outside {grid_rows}x{grid_cols}",
                    r.r0, r.r1, r.c0, r.c1
                )));
            }
            for i in r.r0..r.r1 {
                for j in r.c0..r.c1 {
                    let slot = &mut cell_region[i * grid_cols + j];
                    if *slot != u32::MAX {
                        return Err(Error::Data(format!("cell ({i}, {j}) covered twice")));
                    }
                    *slot = id as u32;
                }
            }
        }
        if let Some(idx) = cell_region.iter().position(|&c| c == u32::MAX) {
            return Err(Error::Data(format!(
                "cell ({}, {}) uncovered",
                idx / grid_cols,
                idx % grid_cols
            )));
        }
        Ok(Partition {
            regions,
            grid_rows,
            grid_cols,
            tau,
            cell_region,
        })
    }

    pub fn len(&self) -> usize {
        self.regions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.regions.is_empty()
    }

    /// Region owning a grid cell.
    pub fn region_of_cell(&self, row: usize, col: usize) -> usize {
        self.cell_region[row * self.grid_cols + col] as usize
    }

    /// Region owning a normalized point in the unit square (the upper
    /// boundary folds into the last row/column, matching rasterization).
    pub fn region_at(&self, x: f64, y: f64) -> Result<usize> {
        if !(0.0..=1.0).contains(&x) || !(0.0..=1.0).contains(&y) {
            return Err(Error::InvalidArgument(format!(
                "point ({x}, {y}) outside the unit square"
            )));
        }
        let row = ((y * self.grid_rows as f64).floor() as usize).min(self.grid_rows - 1);
        let col = ((x * self.grid_cols as f64).floor() as usize).min(self.grid_cols - 1);
        Ok(self.region_of_cell(row, col))
    }

    /// One region per line: `id r0 r1 c0 c1 center_x center_y total`.
    pub fn export_text(&self) -> String {
        let mut out = String::new();
        for r in &self.regions {
            writeln!(
                out,
                "{} {} {} {} {} {} {} {}",
                r.id, r.r0, r.r1, r.c0, r.c1, r.center.0, r.center.1, r.total_events
            )
            .unwrap();
        }
        out
    }
}

struct SummedArea {
    rows: usize,
    cols: usize,
    /// (rows+1) x (cols+1) inclusive prefix sums.
    acc: Vec<f64>,
}

impl SummedArea {
    fn new(q: &Tensor) -> Self {
        let (rows, cols) = (q.shape()[0], q.shape()[1]);
        let mut acc = vec![0.0; (rows + 1) * (cols + 1)];
        for i in 0..rows {
            for j in 0..cols {
                acc[(i + 1) * (cols + 1) + (j + 1)] = q.at(i, j)
                    + acc[i * (cols + 1) + (j + 1)]
                    + acc[(i + 1) * (cols + 1) + j]
                    - acc[i * (cols + 1) + j];
            }
        }
        SummedArea { rows, cols, acc }
    }

    fn sum(&self, r0: usize, r1: usize, c0: usize, c1: usize) -> f64 {
        debug_assert!(r1 <= self.rows && c1 <= self.cols);
        let w = self.cols + 1;
        self.acc[r1 * w + c1] - self.acc[r0 * w + c1] - self.acc[r1 * w + c0]
            + self.acc[r0 * w + c0]
    }
}

/// Quarter a rectangle at floor midpoints. Requires at least 2 rows and
/// 2 columns. Quadrants are emitted row-major: low-row/low-col,
/// low-row/high-col, high-row/low-col, high-row/high-col.
pub fn split_regions(
    r0: usize,
    r1: usize,
    c0: usize,
    c1: usize,
) -> Result<[(usize, usize, usize, usize); 4]> {
    if r1 - r0 < 2 || c1 - c0 < 2 {
        return Err(Error::InvalidArgument(format!(
            "cannot quarter a {}x{} rectangle",
            r1 - r0,
            c1 - c0
        )));
    }
    let rm = (r0 + r1) / 2;
    let cm = (c0 + c1) / 2;
    Ok([
        (r0, rm, c0, cm),
        (r0, rm, cm, c1),
        (rm, r1, c0, cm),
        (rm, r1, cm, c1),
    ])
}

/// Recursively subdivide `q` over the given ranges: a rectangle becomes a
/// region when its event total drops below `tau` or it is no larger than
/// 2 cells on either side; otherwise it is quartered.
pub fn divide_regions(
    q: &Tensor,
    tau: f64,
    rows: std::ops::Range<usize>,
    cols: std::ops::Range<usize>,
) -> Result<Partition> {
    if q.rank() != 2 {
        return Err(Error::InvalidArgument(format!(
            "count grid must be rank-2, got {:?}",
            q.shape()
        )));
    }
    if tau <= 0.0 {
        return Err(Error::InvalidArgument(format!("tau must be positive, got {tau}")));
    }
    let (grid_rows, grid_cols) = (q.shape()[0], q.shape()[1]);
    if rows.is_empty() || cols.is_empty() || rows.end > grid_rows || cols.end > grid_cols {
        return Err(Error::InvalidArgument(format!(
            "empty or out-of-grid range: rows {rows:?}, cols {cols:?} on {grid_rows}x{grid_cols}"
        )));
    }

    let sums = SummedArea::new(q);
    let mut rects = Vec::new();
    recurse(&sums, tau, rows.start, rows.end, cols.start, cols.end, &mut rects);

    let mut regions = Vec::with_capacity(rects.len());
    let mut cell_region = vec![u32::MAX; grid_rows * grid_cols];
    for (id, (r0, r1, c0, c1)) in rects.into_iter().enumerate() {
        let total = sums.sum(r0, r1, c0, c1);
        regions.push(Region {
            id,
            r0,
            r1,
            c0,
            c1,
            center: (
                (c0 + c1) as f64 / 2.0 / grid_cols as f64,
                (r0 + r1) as f64 / 2.0 / grid_rows as f64,
            ),
            total_events: total as u64,
        });
        for i in r0..r1 {
            for j in c0..c1 {
                let slot = &mut cell_region[i * grid_cols + j];
                if *slot != u32::MAX {
                    return Err(Error::Data(format!("cell ({i}, {j}) covered twice")));
                }
                *slot = id as u32;
            }
        }
    }
    for (idx, &owner) in cell_region.iter().enumerate() {
        let (i, j) = (idx / grid_cols, idx % grid_cols);
        if owner == u32::MAX && rows.contains(&i) && cols.contains(&j) {
            return Err(Error::Data(format!("cell ({i}, {j}) uncovered")));
        }
    }
    Ok(Partition {
        regions,
        grid_rows,
        grid_cols,
        tau,
        cell_region,
    })
}

fn recurse(
    sums: &SummedArea,
    tau: f64,
    r0: usize,
    r1: usize,
    c0: usize,
    c1: usize,
    out: &mut Vec<(usize, usize, usize, usize)>,
) {
    let total = sums.sum(r0, r1, c0, c1);
    if total < tau || r1 - r0 <= 2 || c1 - c0 <= 2 {
        out.push((r0, r1, c0, c1));
        return;
    }
    for (qr0, qr1, qc0, qc1) in split_regions(r0, r1, c0, c1).expect("checked size above") {
        recurse(sums, tau, qr0, qr1, qc0, qc1, out);
    }
}

/// Undirected neighbor pairs `(a, b)` with `a < b`. Two regions are
/// neighbors when their rectangles share a boundary segment of at least one
/// cell edge; `include_corners` additionally links rectangles meeting at a
/// single corner point.
pub fn region_adjacency(partition: &Partition, include_corners: bool) -> Vec<(usize, usize)> {
    let regions = &partition.regions;
    let mut edges = Vec::new();
    for a in 0..regions.len() {
        for b in (a + 1)..regions.len() {
            let (ra, rb) = (&regions[a], &regions[b]);
            let row_ov = (ra.r1.min(rb.r1) as i64) - (ra.r0.max(rb.r0) as i64);
            let col_ov = (ra.c1.min(rb.c1) as i64) - (ra.c0.max(rb.c0) as i64);
            let h_adj = ra.c1 == rb.c0 || rb.c1 == ra.c0;
            let v_adj = ra.r1 == rb.r0 || rb.r1 == ra.r0;
            let edge_contact = (h_adj && row_ov >= 1) || (v_adj && col_ov >= 1);
            let corner_contact = h_adj && v_adj && row_ov == 0 && col_ov == 0;
            if edge_contact || (include_corners && corner_contact) {
                edges.push((a, b));
            }
        }
    }
    edges
}

#[derive(Clone, Debug, PartialEq)]
pub struct SparsityStats {
    pub zero_fraction: f64,
    /// Count value -> number of units (cells or regions) with that count.
    pub histogram: BTreeMap<u64, usize>,
}

/// Zero fraction and count histogram over grid cells.
pub fn grid_sparsity(q: &Tensor) -> SparsityStats {
    let mut histogram = BTreeMap::new();
    let mut zeros = 0usize;
    for &v in q.data() {
        let c = v as u64;
        *histogram.entry(c).or_insert(0) += 1;
        if c == 0 {
            zeros += 1;
        }
    }
    SparsityStats {
        zero_fraction: zeros as f64 / q.numel() as f64,
        histogram,
    }
}

/// Zero fraction and count histogram over partition regions.
pub fn partition_sparsity(partition: &Partition) -> SparsityStats {
    let mut histogram = BTreeMap::new();
    let mut zeros = 0usize;
    for r in &partition.regions {
        *histogram.entry(r.total_events).or_insert(0) += 1;
        if r.total_events == 0 {
            zeros += 1;
        }
    }
    SparsityStats {
        zero_fraction: zeros as f64 / partition.len() as f64,
        histogram,
    }
}

/// Per-region, per-category counts for one time slot: `X_t` with shape
/// (N, L).
pub fn region_event_tensor(grid: &EventGrid, partition: &Partition, t: usize) -> Result<Tensor> {
    if t >= grid.slots {
        return Err(Error::Data(format!("slot {t} outside 0..{}", grid.slots)));
    }
    if grid.rows != partition.grid_rows || grid.cols != partition.grid_cols {
        return Err(Error::Data(format!(
            "partition is {}x{}, event grid is {}x{}",
            partition.grid_rows, partition.grid_cols, grid.rows, grid.cols
        )));
    }
    let n = partition.len();
    let l = grid.categories;
    let mut x = Tensor::zeros(&[n, l]);
    for region in &partition.regions {
        for i in region.r0..region.r1 {
            for j in region.c0..region.c1 {
                for cat in 0..l {
                    let v = x.at(region.id, cat) + grid.count(t, i, j, cat) as f64;
                    x.set(region.id, cat, v);
                }
            }
        }
    }
    Ok(x)
}
