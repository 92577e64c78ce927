//! Spatial processing over probabilistic point clouds: a uniform-grid
//! index with bounded ball queries, the neighbor probability density (NPD)
//! score and filter, and the two keypoint samplers (farthest point
//! sampling and its probability-gated variant).

use std::collections::HashMap;

use rayon::prelude::*;

use crate::cloud::ProbabilisticPointCloud;
use crate::error::{Error, Result};

/// NPD scoring and filtering hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NpdParams {
    /// Maximum neighbors aggregated per ball query (`L`).
    pub max_neighbors: usize,
    /// Ball radius in meters (`r`).
    pub radius: f64,
    /// Filter threshold: points with NPD score below `alpha` are removed.
    pub alpha: f64,
    /// Whether the query point itself counts among its neighbors. Including
    /// it lets an isolated but confident return score `Pr / L` instead of 0.
    pub include_self: bool,
}

impl Default for NpdParams {
    fn default() -> Self {
        Self {
            max_neighbors: 64,
            radius: 0.2,
            alpha: 0.003,
            include_self: true,
        }
    }
}

impl NpdParams {
    pub fn validate(&self) -> Result<()> {
        if self.max_neighbors < 1 {
            return Err(Error::invalid("max_neighbors must be at least 1"));
        }
        if !(self.radius > 0.0) {
            return Err(Error::invalid("radius must be positive"));
        }
        if !(self.alpha >= 0.0) {
            return Err(Error::invalid("alpha must be non-negative"));
        }
        Ok(())
    }
}

/// Probability-gated farthest point sampling parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FppsParams {
    /// Probability cutoff for the candidate set.
    pub beta: f64,
    /// Number of keypoints to sample.
    pub count: usize,
}

impl FppsParams {
    pub fn new(count: usize) -> Self {
        Self { beta: 0.01, count }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.beta) {
            return Err(Error::invalid("beta must be in [0, 1]"));
        }
        if self.count < 1 {
            return Err(Error::invalid("sample count must be at least 1"));
        }
        Ok(())
    }
}

// ── uniform grid index ────────────────────────────────────────────────

/// Dense offset tables bigger than this fall back to a hash map of
/// occupied cells.
const DENSE_CELL_LIMIT: usize = 1 << 24;

enum CellTable {
    /// Prefix-sum offsets into the reordered point array, one per cell.
    Dense(Vec<u32>),
    /// Occupied cells only: cell coordinates -> (start, end).
    Sparse(HashMap<[i64; 3], (u32, u32)>),
}

/// A point reordered into its cell, packed so one query touches few
/// cache lines.
#[derive(Clone, Copy)]
#[repr(C)]
struct CellPoint {
    x: f64,
    y: f64,
    z: f64,
    id: u32,
    _pad: u32,
}

/// Uniform grid over a cloud's bounding box, stored as a flat cell list:
/// points are reordered cell by cell into one contiguous array so a query
/// scans a handful of dense ranges. Query results are identical to a
/// brute-force scan; the grid only prunes candidates.
pub struct SpatialIndex {
    cell_size: f64,
    origin: [f64; 3],
    dims: [i64; 3],
    packed: Vec<CellPoint>,
    table: CellTable,
}

impl SpatialIndex {
    /// Build an index with the given cell edge (normally the query radius).
    pub fn build(points: &[[f64; 3]], cell_size: f64) -> Result<Self> {
        if !(cell_size > 0.0) || !cell_size.is_finite() {
            return Err(Error::invalid("cell size must be positive and finite"));
        }
        let mut origin = [f64::INFINITY; 3];
        let mut max = [f64::NEG_INFINITY; 3];
        for p in points {
            for a in 0..3 {
                origin[a] = origin[a].min(p[a]);
                max[a] = max[a].max(p[a]);
            }
        }
        if points.is_empty() {
            origin = [0.0; 3];
            max = [0.0; 3];
        }
        let mut dims = [1i64; 3];
        for a in 0..3 {
            dims[a] = (((max[a] - origin[a]) / cell_size).floor() as i64 + 1).max(1);
        }

        let n = points.len();
        let zero = CellPoint { x: 0.0, y: 0.0, z: 0.0, id: 0, _pad: 0 };
        let mut packed = vec![zero; n];

        let total = dims.iter().map(|d| *d as i128).product::<i128>();
        let table = if total > 0 && total <= DENSE_CELL_LIMIT as i128 {
            // Counting sort by cell id.
            let ncells = total as usize;
            let cell_of: Vec<u32> = points
                .iter()
                .map(|p| dense_index(cell_coords(p, origin, cell_size), dims) as u32)
                .collect();
            let mut offsets = vec![0u32; ncells + 1];
            for c in &cell_of {
                offsets[*c as usize + 1] += 1;
            }
            for i in 0..ncells {
                offsets[i + 1] += offsets[i];
            }
            let mut cursor = offsets.clone();
            for (i, p) in points.iter().enumerate() {
                let slot = cursor[cell_of[i] as usize] as usize;
                cursor[cell_of[i] as usize] += 1;
                packed[slot] = CellPoint { x: p[0], y: p[1], z: p[2], id: i as u32, _pad: 0 };
            }
            CellTable::Dense(offsets)
        } else {
            // Group by cell via a sort of (cell, index) pairs.
            let mut keyed: Vec<([i64; 3], u32)> = points
                .iter()
                .enumerate()
                .map(|(i, p)| (cell_coords(p, origin, cell_size), i as u32))
                .collect();
            keyed.sort_unstable_by(|a, b| a.0.cmp(&b.0).then(a.1.cmp(&b.1)));
            let mut map = HashMap::new();
            for (slot, (cell, i)) in keyed.iter().enumerate() {
                let p = points[*i as usize];
                packed[slot] = CellPoint { x: p[0], y: p[1], z: p[2], id: *i, _pad: 0 };
                map.entry(*cell)
                    .and_modify(|(_, end): &mut (u32, u32)| *end = slot as u32 + 1)
                    .or_insert((slot as u32, slot as u32 + 1));
            }
            CellTable::Sparse(map)
        };

        Ok(Self { cell_size, origin, dims, packed, table })
    }

    fn range(&self, c: [i64; 3]) -> Option<(u32, u32)> {
        match &self.table {
            CellTable::Dense(offsets) => {
                if (0..3).any(|a| c[a] < 0 || c[a] >= self.dims[a]) {
                    None
                } else {
                    let idx = dense_index(c, self.dims);
                    Some((offsets[idx], offsets[idx + 1]))
                }
            }
            CellTable::Sparse(map) => map.get(&c).copied(),
        }
    }

    /// Visit every point within `radius` of `center` as
    /// `(distance^2, original index, slot)`.
    fn for_each_in_ball<F: FnMut(f64, u32, u32)>(
        &self,
        center: [f64; 3],
        radius: f64,
        mut visit: F,
    ) {
        let r2 = radius * radius;
        let lo = cell_coords(
            &[center[0] - radius, center[1] - radius, center[2] - radius],
            self.origin,
            self.cell_size,
        );
        let hi = cell_coords(
            &[center[0] + radius, center[1] + radius, center[2] + radius],
            self.origin,
            self.cell_size,
        );

        // When the radius spans more cells than there are points, walking
        // the cell range would dominate; scan every point instead.
        let span = (0..3)
            .map(|a| (hi[a] - lo[a] + 1) as i128)
            .product::<i128>();
        if span > self.packed.len() as i128 {
            scan_range(&self.packed, 0, self.packed.len() as u32, center, r2, &mut visit);
            return;
        }

        for cz in lo[2]..=hi[2] {
            let dz = axis_gap(center[2], self.origin[2], self.cell_size, cz);
            for cy in lo[1]..=hi[1] {
                let dy = axis_gap(center[1], self.origin[1], self.cell_size, cy);
                if dz * dz + dy * dy > r2 {
                    continue;
                }
                for cx in lo[0]..=hi[0] {
                    let dx = axis_gap(center[0], self.origin[0], self.cell_size, cx);
                    // Skip cells whose closest corner is already outside.
                    if dx * dx + dy * dy + dz * dz > r2 {
                        continue;
                    }
                    if let Some((start, end)) = self.range([cx, cy, cz]) {
                        scan_range(&self.packed, start, end, center, r2, &mut visit);
                    }
                }
            }
        }
    }

    /// Up to `max_results` nearest points within `radius` of `center`,
    /// ordered by (distance, index); ties break to the lower index.
    /// `exclude` removes one point (typically the query point itself).
    pub fn ball_query(
        &self,
        center: [f64; 3],
        radius: f64,
        max_results: usize,
        exclude: Option<u32>,
    ) -> Vec<u32> {
        if max_results == 0 {
            return Vec::new();
        }
        let mut candidates: Vec<(f64, u32)> = Vec::new();
        self.for_each_in_ball(center, radius, |d2, id, _| {
            if exclude != Some(id) {
                candidates.push((d2, id));
            }
        });
        let order = |a: &(f64, u32), b: &(f64, u32)| {
            a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1))
        };
        // Select before sorting so dense neighborhoods stay O(n).
        if candidates.len() > max_results {
            candidates.select_nth_unstable_by(max_results - 1, order);
            candidates.truncate(max_results);
        }
        candidates.sort_unstable_by(order);
        candidates.into_iter().map(|(_, i)| i).collect()
    }
}

#[inline]
fn scan_range<F: FnMut(f64, u32, u32)>(
    packed: &[CellPoint],
    start: u32,
    end: u32,
    center: [f64; 3],
    r2: f64,
    visit: &mut F,
) {
    for (offset, p) in packed[start as usize..end as usize].iter().enumerate() {
        let dx = p.x - center[0];
        let dy = p.y - center[1];
        let dz = p.z - center[2];
        let d2 = dx * dx + dy * dy + dz * dz;
        if d2 <= r2 {
            visit(d2, p.id, start + offset as u32);
        }
    }
}

/// Distance from `coord` to cell `c`'s slab along one axis (0 inside).
fn axis_gap(coord: f64, origin: f64, cell_size: f64, c: i64) -> f64 {
    let lo = origin + c as f64 * cell_size;
    let hi = lo + cell_size;
    if coord < lo {
        lo - coord
    } else if coord > hi {
        coord - hi
    } else {
        0.0
    }
}

fn cell_coords(p: &[f64; 3], origin: [f64; 3], cell_size: f64) -> [i64; 3] {
    [
        ((p[0] - origin[0]) / cell_size).floor() as i64,
        ((p[1] - origin[1]) / cell_size).floor() as i64,
        ((p[2] - origin[2]) / cell_size).floor() as i64,
    ]
}

fn dense_index(c: [i64; 3], dims: [i64; 3]) -> usize {
    ((c[2] * dims[1] + c[1]) * dims[0] + c[0]) as usize
}

// ── NPD ───────────────────────────────────────────────────────────────

/// NPD score per point: the probabilities of up to `L` neighbors within
/// radius `r`, summed and divided by `L`. Points with fewer than `L`
/// neighbors are penalized by the fixed normalizer.
pub fn npd_scores(points: &[[f64; 3]], probabilities: &[f64], params: &NpdParams) -> Result<Vec<f64>> {
    params.validate()?;
    if points.len() != probabilities.len() {
        return Err(Error::dimension("points and probabilities differ in length"));
    }
    let n = points.len();
    if n == 0 {
        return Ok(Vec::new());
    }
    let index = SpatialIndex::build(points, params.radius)?;
    // Probabilities gathered into cell order, and queries issued in cell
    // order: consecutive queries then touch the same neighborhoods.
    let probs_by_slot: Vec<f64> = index
        .packed
        .iter()
        .map(|p| probabilities[p.id as usize])
        .collect();

    let scored: Vec<(u32, f64)> = (0..n)
        .into_par_iter()
        .map_init(
            Vec::new,
            |buf: &mut Vec<(f64, u32, u32)>, slot| {
                let q = index.packed[slot];
                buf.clear();
                index.for_each_in_ball([q.x, q.y, q.z], params.radius, |d2, id, s| {
                    if params.include_self || id != q.id {
                        buf.push((d2, id, s));
                    }
                });
                // Only the membership of the L nearest matters for the
                // sum, so a selection suffices even in dense balls.
                if buf.len() > params.max_neighbors {
                    buf.select_nth_unstable_by(params.max_neighbors - 1, |a, b| {
                        a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1))
                    });
                    buf.truncate(params.max_neighbors);
                }
                let total: f64 = buf.iter().map(|(_, _, s)| probs_by_slot[*s as usize]).sum();
                (q.id, total / params.max_neighbors as f64)
            },
        )
        .collect();

    let mut scores = vec![0.0; n];
    for (id, score) in scored {
        scores[id as usize] = score;
    }
    Ok(scores)
}

/// [`npd_scores`] over a cloud.
pub fn npd_scores_cloud(cloud: &ProbabilisticPointCloud, params: &NpdParams) -> Result<Vec<f64>> {
    npd_scores(&cloud.positions(), &cloud.probabilities(), params)
}

/// Remove the points whose NPD score falls below `alpha`, preserving order.
pub fn npd_filter(
    cloud: &ProbabilisticPointCloud,
    params: &NpdParams,
) -> Result<ProbabilisticPointCloud> {
    let scores = npd_scores_cloud(cloud, params)?;
    let keep: Vec<bool> = scores.iter().map(|s| *s >= params.alpha).collect();
    Ok(cloud.filter_by_mask(&keep))
}

// ── farthest point sampling ───────────────────────────────────────────

/// Greedy max-min farthest point sampling.
///
/// Starts from `start` (the lowest-index point when `None`) and repeatedly
/// selects the unselected point farthest from the selected set; distance
/// ties break to the lower index. Returns indices in selection order.
pub fn fps(points: &[[f64; 3]], count: usize, start: Option<usize>) -> Result<Vec<u32>> {
    if count > points.len() {
        return Err(Error::invalid(format!(
            "cannot sample {count} keypoints from {} points",
            points.len()
        )));
    }
    if count == 0 {
        return Ok(Vec::new());
    }
    let start = start.unwrap_or(0);
    if start >= points.len() {
        return Err(Error::invalid("start index out of range"));
    }

    let n = points.len();
    let mut selected = vec![false; n];
    let mut min_dist2 = vec![f64::INFINITY; n];
    let mut order = Vec::with_capacity(count);

    let mut last = start;
    selected[last] = true;
    order.push(last as u32);

    for _ in 1..count {
        let anchor = points[last];
        let mut best = (f64::NEG_INFINITY, usize::MAX);
        for (i, p) in points.iter().enumerate() {
            let d2 = (p[0] - anchor[0]).powi(2)
                + (p[1] - anchor[1]).powi(2)
                + (p[2] - anchor[2]).powi(2);
            if d2 < min_dist2[i] {
                min_dist2[i] = d2;
            }
            if !selected[i] && min_dist2[i] > best.0 {
                best = (min_dist2[i], i);
            }
        }
        last = best.1;
        selected[last] = true;
        order.push(last as u32);
    }
    Ok(order)
}

/// Farthest probable point sampling: FPS restricted to the candidate set
/// of points with probability `>= beta`.
///
/// Low-probability points stay in the cloud for downstream neighborhood
/// aggregation; they are only barred from being keypoints. If fewer than
/// `count` candidates exist, the remaining slots are filled from the
/// non-candidates in descending probability (ties to the lower index).
/// With `beta = 0` every point is a candidate and the result is
/// index-identical to [`fps`].
pub fn fpps(
    cloud: &ProbabilisticPointCloud,
    params: &FppsParams,
    start: Option<u32>,
) -> Result<Vec<u32>> {
    params.validate()?;
    if cloud.is_empty() {
        return Err(Error::invalid("cannot sample from an empty cloud"));
    }
    if params.count > cloud.len() {
        return Err(Error::invalid(format!(
            "cannot sample {} keypoints from {} points",
            params.count,
            cloud.len()
        )));
    }

    let candidates: Vec<u32> = (0..cloud.len() as u32)
        .filter(|i| cloud.points[*i as usize].probability >= params.beta)
        .collect();

    let local_start = match start {
        None => None,
        Some(s) => {
            let pos = candidates.binary_search(&s).map_err(|_| {
                Error::invalid(format!("start point {s} is not in the candidate set"))
            })?;
            Some(pos)
        }
    };

    if candidates.len() >= params.count {
        let positions: Vec<[f64; 3]> = candidates
            .iter()
            .map(|i| cloud.points[*i as usize].position)
            .collect();
        let local = fps(&positions, params.count, local_start)?;
        return Ok(local.into_iter().map(|i| candidates[i as usize]).collect());
    }

    // Candidate deficit: take every candidate (in FPS order), then fill
    // from the non-candidates by descending probability.
    let positions: Vec<[f64; 3]> = candidates
        .iter()
        .map(|i| cloud.points[*i as usize].position)
        .collect();
    let mut order: Vec<u32> = fps(&positions, positions.len(), local_start)?
        .into_iter()
        .map(|i| candidates[i as usize])
        .collect();

    let mut rest: Vec<u32> = (0..cloud.len() as u32)
        .filter(|i| cloud.points[*i as usize].probability < params.beta)
        .collect();
    rest.sort_by(|a, b| {
        let pa = cloud.points[*a as usize].probability;
        let pb = cloud.points[*b as usize].probability;
        pb.partial_cmp(&pa).unwrap().then(a.cmp(b))
    });
    order.extend(rest.into_iter().take(params.count - order.len()));
    Ok(order)
}

// ══════════════════════════════════════════════════════════════════════
// Tests
// ══════════════════════════════════════════════════════════════════════
