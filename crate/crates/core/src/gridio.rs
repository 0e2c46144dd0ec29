//! Grid files shared by masks, group labels and statistic maps.
//!
//! Binary layout, all integers little-endian:
//!
//! ```text
//! offset  size  field
//! 0       5     magic "HMRF1"
//! 5       1     element kind: 1 = u8, 2 = i32, 3 = f64
//! 6       4     nx (u32)
//! 10      4     ny (u32)
//! 14      4     nz (u32)
//! 18      ...   nx*ny*nz elements, row-major with x fastest
//! ```
//!
//! Masks are u8 (non-zero = in mask), group labels i32, statistics f64.
//! Statistic grids store NaN in cells outside the mask.
//!
//! A text alternative is accepted on input: CSV rows `x,y,z,value` with an
//! optional header line. The grid shape then comes from the caller, and cells
//! not listed take the kind's fill value (0 for integers, NaN for floats).

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::lattice::{Dims, Lattice3D, StatField};

pub const MAGIC: &[u8; 5] = b"HMRF1";
const HEADER_LEN: usize = 18;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ElementKind {
    U8 = 1,
    I32 = 2,
    F64 = 3,
}

impl ElementKind {
    fn from_byte(b: u8) -> Option<Self> {
        match b {
            1 => Some(ElementKind::U8),
            2 => Some(ElementKind::I32),
            3 => Some(ElementKind::F64),
            _ => None,
        }
    }

    fn width(self) -> usize {
        match self {
            ElementKind::U8 => 1,
            ElementKind::I32 => 4,
            ElementKind::F64 => 8,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum GridData {
    U8(Vec<u8>),
    I32(Vec<i32>),
    F64(Vec<f64>),
}

impl GridData {
    pub fn kind(&self) -> ElementKind {
        match self {
            GridData::U8(_) => ElementKind::U8,
            GridData::I32(_) => ElementKind::I32,
            GridData::F64(_) => ElementKind::F64,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            GridData::U8(v) => v.len(),
            GridData::I32(v) => v.len(),
            GridData::F64(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Grid {
    pub dims: Dims,
    pub data: GridData,
}

impl Grid {
    pub fn new(dims: Dims, data: GridData) -> Result<Self> {
        if data.len() != dims.len() {
            return Err(Error::DimensionMismatch(format!(
                "grid payload has {} elements, dims need {}",
                data.len(),
                dims.len()
            )));
        }
        Ok(Grid { dims, data })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let width = self.data.kind().width();
        let mut out = Vec::with_capacity(HEADER_LEN + width * self.dims.len());
        out.extend_from_slice(MAGIC);
        out.push(self.data.kind() as u8);
        for d in [self.dims.nx, self.dims.ny, self.dims.nz] {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        match &self.data {
            GridData::U8(v) => out.extend_from_slice(v),
            GridData::I32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            GridData::F64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let bad = |message: String| Error::Format {
            path: path.to_path_buf(),
            message,
        };
        if bytes.len() < HEADER_LEN || &bytes[..5] != MAGIC {
            return Err(bad("missing HMRF1 header".into()));
        }
        let kind = ElementKind::from_byte(bytes[5])
            .ok_or_else(|| bad(format!("unknown element kind {}", bytes[5])))?;
        let read_u32 = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap()) as usize;
        let dims = Dims::new(read_u32(6), read_u32(10), read_u32(14));
        let payload = &bytes[HEADER_LEN..];
        if payload.len() != dims.len() * kind.width() {
            return Err(bad(format!(
                "payload is {} bytes, expected {} for {}x{}x{} {:?}",
                payload.len(),
                dims.len() * kind.width(),
                dims.nx,
                dims.ny,
                dims.nz,
                kind
            )));
        }
        let data = match kind {
            ElementKind::U8 => GridData::U8(payload.to_vec()),
            ElementKind::I32 => GridData::I32(
                payload
                    .chunks_exact(4)
                    .map(|c| i32::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
            ),
            ElementKind::F64 => GridData::F64(
                payload
                    .chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
            ),
        };
        Ok(Grid { dims, data })
    }
}

pub fn write_grid(path: &Path, grid: &Grid) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    w.write_all(&grid.to_bytes())
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}

/// Read a binary grid file.
pub fn read_grid(path: &Path) -> Result<Grid> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Grid::from_bytes(&bytes, path)
}

/// Read a grid in either binary or `x,y,z,value` CSV form. CSV input needs
/// `dims`; binary input is checked against `dims` when given.
pub fn read_grid_any(path: &Path, dims: Option<Dims>, kind: ElementKind) -> Result<Grid> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.starts_with(MAGIC) {
        let grid = Grid::from_bytes(&bytes, path)?;
        if let Some(d) = dims {
            if d != grid.dims {
                return Err(Error::Format {
                    path: path.to_path_buf(),
                    message: format!(
                        "grid is {}x{}x{}, expected {}x{}x{}",
                        grid.dims.nx, grid.dims.ny, grid.dims.nz, d.nx, d.ny, d.nz
                    ),
                });
            }
        }
        return Ok(grid);
    }
    let dims = dims.ok_or_else(|| Error::Format {
        path: path.to_path_buf(),
        message: "CSV grid input needs known dimensions".into(),
    })?;
    let text = String::from_utf8(bytes).map_err(|_| Error::Format {
        path: path.to_path_buf(),
        message: "neither an HMRF1 grid nor UTF-8 text".into(),
    })?;
    parse_csv_grid(&text, dims, kind)
}

fn parse_csv_grid(text: &str, dims: Dims, kind: ElementKind) -> Result<Grid> {
    let mut values = vec![f64::NAN; dims.len()];
    let mut seen_data = false;
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        let lineno = i + 1;
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 4 {
            return Err(Error::Parse {
                line: lineno,
                message: format!("expected 4 fields x,y,z,value, found {}", fields.len()),
            });
        }
        let coords: std::result::Result<Vec<usize>, _> =
            fields[..3].iter().map(|f| f.parse::<usize>()).collect();
        let coords = match coords {
            Ok(c) => c,
            Err(_) if !seen_data => continue, // header line
            Err(e) => {
                return Err(Error::Parse {
                    line: lineno,
                    message: format!("bad coordinate: {e}"),
                })
            }
        };
        seen_data = true;
        let (x, y, z) = (coords[0], coords[1], coords[2]);
        if x >= dims.nx || y >= dims.ny || z >= dims.nz {
            return Err(Error::Parse {
                line: lineno,
                message: format!("cell ({x},{y},{z}) outside {}x{}x{}", dims.nx, dims.ny, dims.nz),
            });
        }
        let v: f64 = fields[3].parse().map_err(|e| Error::Parse {
            line: lineno,
            message: format!("bad value {:?}: {e}", fields[3]),
        })?;
        values[dims.linear(x, y, z)] = v;
    }
    let data = match kind {
        ElementKind::F64 => GridData::F64(values),
        ElementKind::U8 => GridData::U8(
            values
                .iter()
                .map(|&v| if v.is_nan() { 0 } else { v as u8 })
                .collect(),
        ),
        ElementKind::I32 => GridData::I32(
            values
                .iter()
                .map(|&v| if v.is_nan() { 0 } else { v as i32 })
                .collect(),
        ),
    };
    Grid::new(dims, data)
}

/// Mask from a u8 grid (non-zero = inside).
pub fn grid_to_mask(grid: &Grid) -> Result<Vec<bool>> {
    match &grid.data {
        GridData::U8(v) => Ok(v.iter().map(|&b| b != 0).collect()),
        other => Err(Error::InvalidParameter(format!(
            "mask grid must be u8, found {:?}",
            other.kind()
        ))),
    }
}

/// Group labels from an i32 grid; in-mask cells must be non-negative.
pub fn grid_to_labels(grid: &Grid, mask: &[bool]) -> Result<Vec<u32>> {
    let GridData::I32(v) = &grid.data else {
        return Err(Error::InvalidParameter(format!(
            "label grid must be i32, found {:?}",
            grid.data.kind()
        )));
    };
    v.iter()
        .zip(mask)
        .enumerate()
        .map(|(g, (&label, &inside))| match (inside, label) {
            (false, _) => Ok(0),
            (true, l) if l >= 0 => Ok(l as u32),
            (true, l) => {
                let (x, y, z) = grid.dims.coords(g);
                Err(Error::InvalidParameter(format!(
                    "negative group label {l} at in-mask cell ({x},{y},{z})"
                )))
            }
        })
        .collect()
}

pub fn mask_grid(lattice: &Lattice3D) -> Grid {
    let data = lattice.mask().iter().map(|&b| b as u8).collect();
    Grid {
        dims: lattice.dims(),
        data: GridData::U8(data),
    }
}

pub fn labels_grid(lattice: &Lattice3D) -> Grid {
    let mut data = vec![-1i32; lattice.dims().len()];
    for (s, &g) in lattice.groups().iter().enumerate() {
        data[lattice.grid_index(s)] = g as i32;
    }
    Grid {
        dims: lattice.dims(),
        data: GridData::I32(data),
    }
}

/// Scatter per-voxel values into a full f64 grid, NaN outside the mask.
pub fn values_to_grid(lattice: &Lattice3D, values: &[f64]) -> Grid {
    let mut data = vec![f64::NAN; lattice.dims().len()];
    for (s, &v) in values.iter().enumerate() {
        data[lattice.grid_index(s)] = v;
    }
    Grid {
        dims: lattice.dims(),
        data: GridData::F64(data),
    }
}

/// Scatter per-voxel 0/1 values into a u8 grid, 0 outside the mask.
pub fn flags_to_grid(lattice: &Lattice3D, values: &[u8]) -> Grid {
    let mut data = vec![0u8; lattice.dims().len()];
    for (s, &v) in values.iter().enumerate() {
        data[lattice.grid_index(s)] = v;
    }
    Grid {
        dims: lattice.dims(),
        data: GridData::U8(data),
    }
}

/// Gather per-voxel f64 values from a grid aligned with `lattice`.
pub fn grid_values(lattice: &Lattice3D, grid: &Grid) -> Result<Vec<f64>> {
    if grid.dims != lattice.dims() {
        return Err(Error::DimensionMismatch(
            "grid dims differ from lattice dims".into(),
        ));
    }
    let get = |g: usize| -> f64 {
        match &grid.data {
            GridData::U8(v) => v[g] as f64,
            GridData::I32(v) => v[g] as f64,
            GridData::F64(v) => v[g],
        }
    };
    Ok((0..lattice.len()).map(|s| get(lattice.grid_index(s))).collect())
}

pub fn grid_to_stat_field(lattice: &Lattice3D, grid: &Grid) -> Result<StatField> {
    StatField::new(grid_values(lattice, grid)?)
}
