//! Suprathreshold cluster extraction: thresholding, connected-component
//! labeling (6/18/26 connectivity, union-find), peak location, and optional
//! atlas labeling at the peak voxel.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::glm::StatMap;
use crate::volume::Volume3D;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Connectivity {
    Six,
    Eighteen,
    TwentySix,
}

impl Connectivity {
    pub fn parse(v: u8) -> Result<Self> {
        match v {
            6 => Ok(Connectivity::Six),
            18 => Ok(Connectivity::Eighteen),
            26 => Ok(Connectivity::TwentySix),
            other => Err(Error::InvalidArgument(format!("connectivity {other} not in {{6,18,26}}"))),
        }
    }

    /// Neighbor offsets in the non-negative half-space (each unordered pair
    /// visited once).
    fn half_offsets(self) -> Vec<(i64, i64, i64)> {
        let mut out = Vec::new();
        for dz in 0..=1i64 {
            for dy in -1..=1i64 {
                for dx in -1..=1i64 {
                    if (dz, dy, dx) <= (0, 0, 0) {
                        continue;
                    }
                    let manhattan = dx.abs() + dy.abs() + dz.abs();
                    let keep = match self {
                        Connectivity::Six => manhattan == 1,
                        Connectivity::Eighteen => manhattan <= 2,
                        Connectivity::TwentySix => true,
                    };
                    if keep {
                        out.push((dx, dy, dz));
                    }
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct Cluster {
    pub id: usize,
    pub voxels: Vec<usize>,
    pub extent: usize,
    pub peak_t: f64,
    pub peak_index: usize,
    pub peak_world: (f64, f64, f64),
    pub fwe_p: Option<f64>,
    pub label: Option<String>,
}

/// Binary grid: true where t > u and the analysis mask holds.
pub fn threshold(map: &StatMap, u: f64) -> Vec<bool> {
    map.t
        .iter()
        .zip(&map.mask)
        .map(|(&t, &m)| m && t > u)
        .collect()
}

/// Union-find labeler with reusable buffers so repeated labeling of small
/// grids does not reallocate.
pub struct Labeler {
    parent: Vec<u32>,
}

impl Labeler {
    pub fn new() -> Self {
        Labeler { parent: Vec::new() }
    }

    fn find(&mut self, mut i: u32) -> u32 {
        while self.parent[i as usize] != i {
            let g = self.parent[self.parent[i as usize] as usize];
            self.parent[i as usize] = g;
            i = g;
        }
        i
    }

    fn union(&mut self, a: u32, b: u32) {
        let ra = self.find(a);
        let rb = self.find(b);
        if ra != rb {
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.parent[hi as usize] = lo;
        }
    }

    /// Write root labels into `labels` (u32::MAX for background); returns
    /// nothing allocated besides what the caller passed in.
    pub fn label(
        &mut self,
        grid: &[bool],
        dims: (usize, usize, usize),
        conn: Connectivity,
        labels: &mut Vec<u32>,
    ) {
        let (nx, ny, nz) = dims;
        let n = nx * ny * nz;
        debug_assert_eq!(grid.len(), n);
        self.parent.clear();
        self.parent.extend(0..n as u32);
        let offsets = conn.half_offsets();
        for k in 0..nz {
            for j in 0..ny {
                for i in 0..nx {
                    let idx = i + nx * (j + ny * k);
                    if !grid[idx] {
                        continue;
                    }
                    for &(dx, dy, dz) in &offsets {
                        let (ni, nj, nk) = (i as i64 + dx, j as i64 + dy, k as i64 + dz);
                        if ni < 0 || nj < 0 || nk < 0 || ni >= nx as i64 || nj >= ny as i64 || nk >= nz as i64 {
                            continue;
                        }
                        let nidx = (ni + nx as i64 * (nj + ny as i64 * nk)) as usize;
                        if grid[nidx] {
                            self.union(idx as u32, nidx as u32);
                        }
                    }
                }
            }
        }
        labels.clear();
        labels.reserve(n);
        for idx in 0..n {
            if grid[idx] {
                let r = self.find(idx as u32);
                labels.push(r);
            } else {
                labels.push(u32::MAX);
            }
        }
    }
}

impl Default for Labeler {
    fn default() -> Self {
        Self::new()
    }
}

/// Connected components of a thresholded map, ordered by descending extent
/// (ties: ascending peak linear index). Peak ties within a cluster break to
/// the lowest linear index.
pub fn connected_components(map: &StatMap, grid: &[bool], conn: Connectivity) -> Vec<Cluster> {
    let mut labeler = Labeler::new();
    let mut labels = Vec::new();
    labeler.label(grid, map.dims, conn, &mut labels);

    let mut by_root: HashMap<u32, Vec<usize>> = HashMap::new();
    for (idx, &l) in labels.iter().enumerate() {
        if l != u32::MAX {
            by_root.entry(l).or_default().push(idx);
        }
    }
    let vol = Volume3D {
        dims: map.dims,
        voxel_size: map.voxel_size,
        affine: map.affine,
        data: Vec::new(),
        mask: None,
    };
    let mut clusters: Vec<Cluster> = by_root
        .into_values()
        .map(|voxels| {
            let mut peak_index = voxels[0];
            let mut peak_t = map.t[peak_index];
            for &v in &voxels[1..] {
                if map.t[v] > peak_t {
                    peak_t = map.t[v];
                    peak_index = v;
                }
            }
            let (i, j, k) = vol.coords(peak_index);
            Cluster {
                id: 0,
                extent: voxels.len(),
                peak_t,
                peak_index,
                peak_world: vol.voxel_to_world(i, j, k),
                fwe_p: None,
                label: None,
                voxels,
            }
        })
        .collect();
    clusters.sort_by(|a, b| b.extent.cmp(&a.extent).then(a.peak_index.cmp(&b.peak_index)));
    for (i, c) in clusters.iter_mut().enumerate() {
        c.id = i + 1;
    }
    clusters
}

/// Atlas label at the cluster peak; None for background (id 0).
pub fn label_peak(
    cluster: &Cluster,
    atlas: &Volume3D,
    names: &HashMap<u32, String>,
    dims: (usize, usize, usize),
) -> Result<Option<String>> {
    if atlas.dims != dims {
        return Err(Error::Conformability(format!(
            "atlas dims {:?} != map dims {:?}",
            atlas.dims, dims
        )));
    }
    let id = atlas.data[cluster.peak_index].round() as i64;
    if id <= 0 {
        return Ok(None);
    }
    Ok(names.get(&(id as u32)).cloned().or_else(|| Some(format!("region_{id}"))))
}

/// Recursive flood-fill reference labeler, used only by tests and the
/// acceptance oracle suite.
pub fn flood_fill_components(
    grid: &[bool],
    dims: (usize, usize, usize),
    conn: Connectivity,
) -> Vec<Vec<usize>> {
    let (nx, ny, nz) = dims;
    let n = nx * ny * nz;
    let mut seen = vec![false; n];
    let mut comps = Vec::new();
    let mut all_offsets = Vec::new();
    for &(dx, dy, dz) in &conn.half_offsets() {
        all_offsets.push((dx, dy, dz));
        all_offsets.push((-dx, -dy, -dz));
    }
    for start in 0..n {
        if !grid[start] || seen[start] {
            continue;
        }
        let mut comp = Vec::new();
        let mut stack = vec![start];
        seen[start] = true;
        while let Some(idx) = stack.pop() {
            comp.push(idx);
            let i = (idx % nx) as i64;
            let j = ((idx / nx) % ny) as i64;
            let k = (idx / (nx * ny)) as i64;
            for &(dx, dy, dz) in &all_offsets {
                let (ni, nj, nk) = (i + dx, j + dy, k + dz);
                if ni < 0 || nj < 0 || nk < 0 || ni >= nx as i64 || nj >= ny as i64 || nk >= nz as i64 {
                    continue;
                }
                let nidx = (ni + nx as i64 * (nj + ny as i64 * nk)) as usize;
                if grid[nidx] && !seen[nidx] {
                    seen[nidx] = true;
                    stack.push(nidx);
                }
            }
        }
        comp.sort_unstable();
        comps.push(comp);
    }
    comps
}
