//! Masked 3D lattice with six-nearest-neighbour topology.
//!
//! In-mask cells are numbered in row-major order with x fastest, i.e. grid
//! cell `(x, y, z)` has linear index `x + nx * (y + ny * z)` and voxels are
//! the in-mask cells taken in increasing linear index. Every field over the
//! lattice (states, statistics, LIS values) uses this voxel order.
//!
//! There is no wraparound: cells on the grid boundary, or next to masked-out
//! cells, simply have fewer than six neighbours.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const NO_VOXEL: u32 = u32::MAX;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Dims {
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
}

impl Dims {
    pub fn new(nx: usize, ny: usize, nz: usize) -> Self {
        Dims { nx, ny, nz }
    }

    pub fn cube(n: usize) -> Self {
        Dims::new(n, n, n)
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny * self.nz
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn linear(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.nx * (y + self.ny * z)
    }

    pub fn coords(&self, linear: usize) -> (usize, usize, usize) {
        let x = linear % self.nx;
        let rest = linear / self.nx;
        (x, rest % self.ny, rest / self.ny)
    }
}

/// Masked 3D grid with precomputed neighbour lists and group labels.
///
/// Immutable after construction; share it freely between chains.
#[derive(Clone, Debug)]
pub struct Lattice3D {
    dims: Dims,
    grid_to_voxel: Vec<u32>,
    voxel_to_grid: Vec<usize>,
    neighbor_start: Vec<u32>,
    neighbors: Vec<u32>,
    edges: Vec<(u32, u32)>,
    groups: Vec<u32>,
    colors: [Vec<u32>; 2],
}

impl Lattice3D {
    /// Build a lattice from a grid mask and optional per-cell group labels.
    ///
    /// `mask` and `group_labels` are indexed by linear grid index. Labels of
    /// masked-out cells are ignored; when no labels are given every voxel is
    /// in group 0.
    pub fn new(dims: Dims, mask: &[bool], group_labels: Option<&[u32]>) -> Result<Self> {
        if dims.nx == 0 || dims.ny == 0 || dims.nz == 0 {
            return Err(Error::DimensionMismatch(format!(
                "dims must be positive, got {}x{}x{}",
                dims.nx, dims.ny, dims.nz
            )));
        }
        if mask.len() != dims.len() {
            return Err(Error::DimensionMismatch(format!(
                "mask has {} cells, dims {}x{}x{} need {}",
                mask.len(),
                dims.nx,
                dims.ny,
                dims.nz,
                dims.len()
            )));
        }
        if let Some(labels) = group_labels {
            if labels.len() != dims.len() {
                return Err(Error::DimensionMismatch(format!(
                    "group labels have {} cells, expected {}",
                    labels.len(),
                    dims.len()
                )));
            }
        }
        if dims.len() >= NO_VOXEL as usize {
            return Err(Error::DimensionMismatch("grid too large".into()));
        }

        let mut grid_to_voxel = vec![NO_VOXEL; dims.len()];
        let mut voxel_to_grid = Vec::new();
        for (g, &inside) in mask.iter().enumerate() {
            if inside {
                grid_to_voxel[g] = voxel_to_grid.len() as u32;
                voxel_to_grid.push(g);
            }
        }
        if voxel_to_grid.is_empty() {
            return Err(Error::EmptyMask);
        }

        let n = voxel_to_grid.len();
        let mut neighbor_start = Vec::with_capacity(n + 1);
        let mut neighbors = Vec::with_capacity(6 * n);
        let mut edges = Vec::new();
        let mut colors = [Vec::new(), Vec::new()];
        neighbor_start.push(0);
        for (s, &g) in voxel_to_grid.iter().enumerate() {
            let (x, y, z) = dims.coords(g);
            let mut push = |cell: usize| {
                let t = grid_to_voxel[cell];
                if t != NO_VOXEL {
                    neighbors.push(t);
                    if (s as u32) < t {
                        edges.push((s as u32, t));
                    }
                }
            };
            if x > 0 {
                push(g - 1);
            }
            if x + 1 < dims.nx {
                push(g + 1);
            }
            if y > 0 {
                push(g - dims.nx);
            }
            if y + 1 < dims.ny {
                push(g + dims.nx);
            }
            if z > 0 {
                push(g - dims.nx * dims.ny);
            }
            if z + 1 < dims.nz {
                push(g + dims.nx * dims.ny);
            }
            neighbor_start.push(neighbors.len() as u32);
            colors[(x + y + z) % 2].push(s as u32);
        }
        edges.sort_unstable();

        let groups = match group_labels {
            Some(labels) => voxel_to_grid.iter().map(|&g| labels[g]).collect(),
            None => vec![0; n],
        };

        Ok(Lattice3D {
            dims,
            grid_to_voxel,
            voxel_to_grid,
            neighbor_start,
            neighbors,
            edges,
            groups,
            colors,
        })
    }

    /// Fully unmasked grid, single group.
    pub fn full(dims: Dims) -> Result<Self> {
        Lattice3D::new(dims, &vec![true; dims.len()], None)
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    /// Number of in-mask voxels N.
    pub fn len(&self) -> usize {
        self.voxel_to_grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.voxel_to_grid.is_empty()
    }

    pub fn neighbors(&self, s: usize) -> &[u32] {
        let a = self.neighbor_start[s] as usize;
        let b = self.neighbor_start[s + 1] as usize;
        &self.neighbors[a..b]
    }

    pub fn degree(&self, s: usize) -> usize {
        (self.neighbor_start[s + 1] - self.neighbor_start[s]) as usize
    }

    /// Unordered neighbour pairs `(s, t)` with `s < t`, sorted.
    pub fn edges(&self) -> &[(u32, u32)] {
        &self.edges
    }

    pub fn groups(&self) -> &[u32] {
        &self.groups
    }

    /// Distinct group labels in increasing order.
    pub fn group_ids(&self) -> Vec<u32> {
        let mut ids = self.groups.clone();
        ids.sort_unstable();
        ids.dedup();
        ids
    }

    /// The two checkerboard colour classes (parity of x + y + z). No edge
    /// joins two voxels of the same class.
    pub fn color_classes(&self) -> &[Vec<u32>; 2] {
        &self.colors
    }

    pub fn grid_index(&self, s: usize) -> usize {
        self.voxel_to_grid[s]
    }

    pub fn coords(&self, s: usize) -> (usize, usize, usize) {
        self.dims.coords(self.voxel_to_grid[s])
    }

    /// Voxel index of a grid cell, if it is in the mask.
    pub fn voxel_at(&self, x: usize, y: usize, z: usize) -> Option<usize> {
        if x >= self.dims.nx || y >= self.dims.ny || z >= self.dims.nz {
            return None;
        }
        match self.grid_to_voxel[self.dims.linear(x, y, z)] {
            NO_VOXEL => None,
            v => Some(v as usize),
        }
    }

    pub fn voxel_of_grid(&self, linear: usize) -> Option<usize> {
        match self.grid_to_voxel.get(linear) {
            Some(&v) if v != NO_VOXEL => Some(v as usize),
            _ => None,
        }
    }

    pub fn mask(&self) -> Vec<bool> {
        self.grid_to_voxel.iter().map(|&v| v != NO_VOXEL).collect()
    }

    /// Sub-lattice holding the voxels for which `keep` is true; edges leaving
    /// the subset are severed. Returns the sub-lattice and, for each of its
    /// voxels, the index of that voxel in `self`.
    pub fn restrict(&self, keep: impl Fn(usize) -> bool) -> Result<(Lattice3D, Vec<usize>)> {
        let mut mask = vec![false; self.dims.len()];
        let mut labels = vec![0u32; self.dims.len()];
        let mut parent = Vec::new();
        for s in 0..self.len() {
            if keep(s) {
                let g = self.voxel_to_grid[s];
                mask[g] = true;
                labels[g] = self.groups[s];
                parent.push(s);
            }
        }
        let sub = Lattice3D::new(self.dims, &mask, Some(&labels))?;
        Ok((sub, parent))
    }

    /// Sub-lattice of one group.
    pub fn group_lattice(&self, group: u32) -> Result<(Lattice3D, Vec<usize>)> {
        self.restrict(|s| self.groups[s] == group)
    }
}

/// Binary latent states, one per voxel.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct StateField(Vec<u8>);

impl StateField {
    pub fn zeros(n: usize) -> Self {
        StateField(vec![0; n])
    }

    pub fn ones(n: usize) -> Self {
        StateField(vec![1; n])
    }

    pub fn new(values: Vec<u8>) -> Result<Self> {
        if let Some(i) = values.iter().position(|&v| v > 1) {
            return Err(Error::InvalidParameter(format!(
                "state at voxel {i} is {}, expected 0 or 1",
                values[i]
            )));
        }
        Ok(StateField(values))
    }

    pub fn values(&self) -> &[u8] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn count_ones(&self) -> usize {
        self.0.iter().filter(|&&v| v == 1).count()
    }

    pub fn into_inner(self) -> Vec<u8> {
        self.0
    }
}

/// Observed z-scale statistics, one per voxel, all finite.
#[derive(Clone, Debug, PartialEq)]
pub struct StatField(Vec<f64>);

impl StatField {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!(
                "statistic at voxel {i} is {}",
                values[i]
            )));
        }
        Ok(StatField(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

fn check_len(lattice: &Lattice3D, len: usize, what: &str) -> Result<()> {
    if len != lattice.len() {
        return Err(Error::DimensionMismatch(format!(
            "{what} has {len} values, lattice has {} voxels",
            lattice.len()
        )));
    }
    Ok(())
}

pub(crate) fn check_field(lattice: &Lattice3D, field: &StateField) -> Result<()> {
    check_len(lattice, field.len(), "state field")
}

pub(crate) fn check_stats(lattice: &Lattice3D, field: &StatField) -> Result<()> {
    check_len(lattice, field.len(), "statistic field")
}

/// Σ_{t ∈ N(s)} θ_t.
pub fn neighbor_sum(lattice: &Lattice3D, field: &StateField, s: usize) -> Result<u32> {
    check_field(lattice, field)?;
    if s >= lattice.len() {
        return Err(Error::IndexOutOfRange {
            index: s,
            n: lattice.len(),
        });
    }
    Ok(neighbor_sum_unchecked(lattice, field.values(), s))
}

#[inline]
pub(crate) fn neighbor_sum_unchecked(lattice: &Lattice3D, states: &[u8], s: usize) -> u32 {
    lattice
        .neighbors(s)
        .iter()
        .map(|&t| states[t as usize] as u32)
        .sum()
}

/// Ising sufficient statistics `(Σ_<s,t> θ_s θ_t, Σ_s θ_s)`, each unordered
/// neighbour pair counted once.
pub fn sufficient_stats(lattice: &Lattice3D, field: &StateField) -> Result<(u64, u64)> {
    check_field(lattice, field)?;
    Ok(sufficient_stats_unchecked(lattice, field.values()))
}

#[inline]
pub(crate) fn sufficient_stats_unchecked(lattice: &Lattice3D, states: &[u8]) -> (u64, u64) {
    let pairs = lattice
        .edges()
        .iter()
        .map(|&(s, t)| (states[s as usize] & states[t as usize]) as u64)
        .sum();
    let sites = states.iter().map(|&v| v as u64).sum();
    (pairs, sites)
}
