//! File formats: raw little-endian arrays with JSON sidecars, CSV tables,
//! 16-bit PGM images and binary STL meshes.
//!
//! Raw arrays are stored in C order (last index fastest). A raw file
//! `name.raw` is described by `name.json`.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use ndarray::{Array2, Array3, ArrayView2, ArrayView3};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::dhla::LensVolume;
use crate::error::{Error, Result};
use crate::medium::{AcousticMedium, GridSpec};
use crate::optim::LossReport;
use crate::solver::ComplexField;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DType {
    F32,
    I16,
    /// Interleaved (re, im) pairs of f32.
    Complex64,
}

impl DType {
    fn size(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::I16 => 2,
            DType::Complex64 => 8,
        }
    }
}

/// Sidecar header of a raw array file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub schema_version: u32,
    pub dims: [usize; 3],
    pub spacing_m: [f64; 3],
    pub frequency_hz: f64,
    #[serde(default = "default_c_ref")]
    pub reference_speed_m_s: f64,
    /// Names of the stacked fields, stored one after another.
    pub fields: Vec<String>,
    pub dtype: DType,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_hash: Option<String>,
}

fn default_c_ref() -> f64 {
    1500.0
}

impl Header {
    pub fn for_grid(grid: &GridSpec, fields: &[&str], dtype: DType, config_hash: Option<&str>) -> Self {
        Header {
            schema_version: SCHEMA_VERSION,
            dims: [grid.nx, grid.ny, grid.nz],
            spacing_m: [grid.dx, grid.dy, grid.dz],
            frequency_hz: grid.frequency,
            reference_speed_m_s: grid.c_ref,
            fields: fields.iter().map(|s| s.to_string()).collect(),
            dtype,
            config_hash: config_hash.map(str::to_owned),
        }
    }

    pub fn grid(&self) -> Result<GridSpec> {
        let [nx, ny, nz] = self.dims;
        let g = GridSpec {
            nx,
            ny,
            nz,
            dx: self.spacing_m[0],
            dy: self.spacing_m[1],
            dz: self.spacing_m[2],
            frequency: self.frequency_hz,
            c_ref: self.reference_speed_m_s,
        };
        g.validate()?;
        Ok(g)
    }

    fn n_values(&self) -> usize {
        self.dims.iter().product::<usize>() * self.fields.len()
    }

    /// Same dims, spacing and frequency.
    pub fn compatible(&self, other: &Header) -> bool {
        self.dims == other.dims && self.spacing_m == other.spacing_m && self.frequency_hz == other.frequency_hz
    }
}

pub fn sidecar_path(raw: &Path) -> PathBuf {
    raw.with_extension("json")
}

fn format_err(path: &Path, detail: impl Into<String>) -> Error {
    Error::Format {
        path: path.display().to_string(),
        detail: detail.into(),
    }
}

fn write_raw(path: &Path, header: &Header, bytes: &[u8]) -> Result<()> {
    debug_assert_eq!(bytes.len(), header.n_values() * header.dtype.size());
    std::fs::write(path, bytes)?;
    let mut json = serde_json::to_string_pretty(header)?;
    json.push('\n');
    std::fs::write(sidecar_path(path), json)?;
    Ok(())
}

pub fn read_header(raw: &Path) -> Result<Header> {
    let side = sidecar_path(raw);
    let text = std::fs::read_to_string(&side)?;
    let h: Header = serde_json::from_str(&text).map_err(|e| format_err(&side, e.to_string()))?;
    if h.schema_version > SCHEMA_VERSION {
        return Err(format_err(&side, format!("unsupported schema_version {}", h.schema_version)));
    }
    if h.fields.is_empty() {
        return Err(format_err(&side, "no fields listed"));
    }
    Ok(h)
}

fn read_raw(raw: &Path, dtype: DType) -> Result<(Header, Vec<u8>)> {
    let h = read_header(raw)?;
    if h.dtype != dtype {
        return Err(format_err(raw, format!("expected dtype {dtype:?}, header says {:?}", h.dtype)));
    }
    let mut bytes = Vec::new();
    File::open(raw)?.read_to_end(&mut bytes)?;
    let want = h.n_values() * dtype.size();
    if bytes.len() != want {
        return Err(format_err(raw, format!("expected {want} bytes, found {}", bytes.len())));
    }
    Ok((h, bytes))
}

fn f32_bytes<'a>(arrays: impl IntoIterator<Item = ArrayView3<'a, f64>>) -> Vec<u8> {
    let mut out = Vec::new();
    for a in arrays {
        for &v in a.iter() {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    out
}

fn f32_values(bytes: &[u8]) -> impl Iterator<Item = f64> + '_ {
    bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
}

fn to_array3(dims: [usize; 3], data: Vec<f64>) -> Array3<f64> {
    Array3::from_shape_vec((dims[0], dims[1], dims[2]), data).expect("length checked against header")
}

/// Writes `c`, `rho` and `att` as stacked f32 volumes.
pub fn write_medium(path: &Path, medium: &AcousticMedium, config_hash: Option<&str>) -> Result<()> {
    let h = Header::for_grid(&medium.grid, &["c", "rho", "att"], DType::F32, config_hash);
    write_raw(
        path,
        &h,
        &f32_bytes([medium.c.view(), medium.rho.view(), medium.att.view()]),
    )
}

pub fn read_medium(path: &Path) -> Result<AcousticMedium> {
    let (h, bytes) = read_raw(path, DType::F32)?;
    let want = ["c", "rho", "att"];
    if h.fields != want {
        return Err(format_err(path, format!("expected fields {want:?}, found {:?}", h.fields)));
    }
    let grid = h.grid()?;
    let n = grid.nx * grid.ny * grid.nz;
    let values: Vec<f64> = f32_values(&bytes).collect();
    let mut parts = values.chunks_exact(n).map(|c| to_array3(h.dims, c.to_vec()));
    let (c, rho, att) = (parts.next().unwrap(), parts.next().unwrap(), parts.next().unwrap());
    AcousticMedium::from_arrays(grid, c, rho, att)
}

/// Writes one named real volume as f32.
pub fn write_volume(path: &Path, grid: &GridSpec, name: &str, v: &Array3<f64>, config_hash: Option<&str>) -> Result<()> {
    if v.dim() != grid.shape() {
        let (a, b, c) = grid.shape();
        return Err(Error::shape(&[a, b, c], v.shape()));
    }
    let h = Header::for_grid(grid, &[name], DType::F32, config_hash);
    write_raw(path, &h, &f32_bytes([v.view()]))
}

pub fn read_volume(path: &Path) -> Result<(Header, Array3<f64>)> {
    let (h, bytes) = read_raw(path, DType::F32)?;
    if h.fields.len() != 1 {
        return Err(format_err(path, "expected a single field"));
    }
    let data = f32_values(&bytes).collect();
    Ok((h.clone(), to_array3(h.dims, data)))
}

/// Writes a 2D real map (a design field or a phase map) as a one-plane volume.
pub fn write_map(
    path: &Path,
    grid: &GridSpec,
    name: &str,
    map: &Array2<f64>,
    config_hash: Option<&str>,
) -> Result<()> {
    if map.dim() != (grid.nx, grid.ny) {
        return Err(Error::shape(&[grid.nx, grid.ny], map.shape()));
    }
    let mut h = Header::for_grid(grid, &[name], DType::F32, config_hash);
    h.dims[2] = 1;
    let v = map.view().insert_axis(ndarray::Axis(2));
    write_raw(path, &h, &f32_bytes([v]))
}

pub fn read_map(path: &Path) -> Result<(Header, Array2<f64>)> {
    let (h, bytes) = read_raw(path, DType::F32)?;
    if h.dims[2] != 1 || h.fields.len() != 1 {
        return Err(format_err(path, "expected a single 2D field"));
    }
    let data = f32_values(&bytes).collect();
    let a = Array2::from_shape_vec((h.dims[0], h.dims[1]), data).expect("length checked against header");
    Ok((h, a))
}

fn complex_bytes(v: impl Iterator<Item = Complex64>) -> Vec<u8> {
    let mut out = Vec::new();
    for z in v {
        out.extend_from_slice(&(z.re as f32).to_le_bytes());
        out.extend_from_slice(&(z.im as f32).to_le_bytes());
    }
    out
}

fn complex_values(bytes: &[u8]) -> Vec<Complex64> {
    let re_im: Vec<f64> = f32_values(bytes).collect();
    re_im.chunks_exact(2).map(|p| Complex64::new(p[0], p[1])).collect()
}

/// Writes a complex pressure volume as interleaved complex64.
pub fn write_field(path: &Path, field: &ComplexField, config_hash: Option<&str>) -> Result<()> {
    let h = Header::for_grid(&field.grid, &["pressure"], DType::Complex64, config_hash);
    write_raw(path, &h, &complex_bytes(field.values.iter().copied()))
}

pub fn read_field(path: &Path) -> Result<ComplexField> {
    let (h, values) = read_complex(path)?;
    ComplexField::new(values, h.grid()?)
}

/// Complex volume of any size, e.g. a backprojection over fewer planes than
/// a simulation grid allows.
pub fn read_complex(path: &Path) -> Result<(Header, Array3<Complex64>)> {
    let (h, bytes) = read_raw(path, DType::Complex64)?;
    let values = Array3::from_shape_vec((h.dims[0], h.dims[1], h.dims[2]), complex_values(&bytes))
        .expect("length checked against header");
    Ok((h, values))
}

/// Writes a complex plane (`dims[2] == 1`); `grid` supplies the lateral
/// sampling and frequency.
pub fn write_plane(path: &Path, grid: &GridSpec, plane: ArrayView2<Complex64>, config_hash: Option<&str>) -> Result<()> {
    if plane.dim() != (grid.nx, grid.ny) {
        return Err(Error::shape(&[grid.nx, grid.ny], plane.shape()));
    }
    let mut h = Header::for_grid(grid, &["pressure"], DType::Complex64, config_hash);
    h.dims[2] = 1;
    write_raw(path, &h, &complex_bytes(plane.iter().copied()))
}

pub fn read_plane(path: &Path) -> Result<(Header, Array2<Complex64>)> {
    let (h, bytes) = read_raw(path, DType::Complex64)?;
    if h.dims[2] != 1 {
        return Err(format_err(path, format!("expected a single plane, dims are {:?}", h.dims)));
    }
    if h.dims[0] == 0 || h.dims[1] == 0 {
        return Err(format_err(path, "empty plane"));
    }
    let a = Array2::from_shape_vec((h.dims[0], h.dims[1]), complex_values(&bytes)).expect("length checked against header");
    Ok((h, a))
}

pub fn write_hu(path: &Path, grid: &GridSpec, hu: &Array3<i16>, config_hash: Option<&str>) -> Result<()> {
    if hu.dim() != grid.shape() {
        let (a, b, c) = grid.shape();
        return Err(Error::shape(&[a, b, c], hu.shape()));
    }
    let h = Header::for_grid(grid, &["hu"], DType::I16, config_hash);
    let bytes: Vec<u8> = hu.iter().flat_map(|v| v.to_le_bytes()).collect();
    write_raw(path, &h, &bytes)
}

pub fn read_hu(path: &Path) -> Result<(Header, Array3<i16>)> {
    let (h, bytes) = read_raw(path, DType::I16)?;
    let data: Vec<i16> = bytes.chunks_exact(2).map(|c| i16::from_le_bytes([c[0], c[1]])).collect();
    let a = Array3::from_shape_vec((h.dims[0], h.dims[1], h.dims[2]), data).expect("length checked against header");
    Ok((h, a))
}

/// Comma-separated matrix, one row per `x` index.
pub fn write_matrix_csv(path: &Path, m: &Array2<f64>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for row in m.rows() {
        let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        writeln!(w, "{}", line.join(","))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_matrix_csv(path: &Path) -> Result<Array2<f64>> {
    let text = std::fs::read_to_string(path)?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (n, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let row = line
            .split(',')
            .map(|s| s.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| format_err(path, format!("line {}: {e}", n + 1)))?;
        if let Some(first) = rows.first() {
            if first.len() != row.len() {
                return Err(format_err(path, format!("line {}: ragged row", n + 1)));
            }
        }
        rows.push(row);
    }
    let ncol = rows.first().map_or(0, Vec::len);
    if ncol == 0 {
        return Err(format_err(path, "empty table"));
    }
    let nrow = rows.len();
    Ok(Array2::from_shape_vec((nrow, ncol), rows.concat()).expect("rows are rectangular"))
}

/// Printed column heights in meters (occupied voxels per column times `dz`).
pub fn write_thickness_csv(path: &Path, lens: &LensVolume, dz: f64) -> Result<()> {
    write_matrix_csv(path, &column_heights(lens).mapv(|n| n as f64 * dz))
}

/// 16-bit binary PGM, one row per `x` index, values mapped linearly from
/// `[lo, hi]` to `[0, 65535]`.
pub fn write_pgm16(path: &Path, m: &Array2<f64>, lo: f64, hi: f64) -> Result<()> {
    if !(hi > lo) {
        return Err(Error::InvalidParameter(format!("PGM range [{lo}, {hi}] is empty")));
    }
    let (rows, cols) = m.dim();
    let mut w = BufWriter::new(File::create(path)?);
    write!(w, "P5\n{cols} {rows}\n65535\n")?;
    for &v in m.iter() {
        let s = ((v - lo) / (hi - lo)).clamp(0.0, 1.0);
        w.write_all(&((s * 65535.0).round() as u16).to_be_bytes())?;
    }
    w.flush()?;
    Ok(())
}

/// Column heights in voxels: occupied cells counted from the base plane.
pub fn column_heights(lens: &LensVolume) -> Array2<usize> {
    let (nx, ny, _) = lens.occupancy.dim();
    Array2::from_shape_fn((nx, ny), |(i, j)| {
        lens.occupancy.slice(ndarray::s![i, j, ..]).iter().filter(|&&o| o >= 0.5).count()
    })
}

type Tri = [[f32; 3]; 3];

fn quad(tris: &mut Vec<(Tri, [f32; 3])>, a: [f32; 3], b: [f32; 3], c: [f32; 3], d: [f32; 3], n: [f32; 3]) {
    tris.push(([a, b, c], n));
    tris.push(([a, c, d], n));
}

/// Closed heightmap mesh of the lens built from column prisms, in millimeters.
/// Only exposed voxel faces are emitted, so the surface is closed.
pub fn lens_mesh(lens: &LensVolume, dx: f64, dy: f64, dz: f64) -> Vec<([[f32; 3]; 3], [f32; 3])> {
    let h = column_heights(lens);
    let (nx, ny) = h.dim();
    let (sx, sy, sz) = ((dx * 1e3) as f32, (dy * 1e3) as f32, (dz * 1e3) as f32);
    let height = |i: isize, j: isize| -> usize {
        if i < 0 || j < 0 || i as usize >= nx || j as usize >= ny {
            0
        } else {
            h[[i as usize, j as usize]]
        }
    };
    let mut tris = Vec::new();
    for i in 0..nx {
        for j in 0..ny {
            let hz = h[[i, j]];
            if hz == 0 {
                continue;
            }
            let (x0, x1) = (i as f32 * sx, (i + 1) as f32 * sx);
            let (y0, y1) = (j as f32 * sy, (j + 1) as f32 * sy);
            let top = hz as f32 * sz;
            quad(&mut tris, [x0, y0, top], [x1, y0, top], [x1, y1, top], [x0, y1, top], [0.0, 0.0, 1.0]);
            quad(&mut tris, [x0, y0, 0.0], [x0, y1, 0.0], [x1, y1, 0.0], [x1, y0, 0.0], [0.0, 0.0, -1.0]);
            let (ii, jj) = (i as isize, j as isize);
            let walls = [
                (height(ii + 1, jj), [1.0, 0.0, 0.0]),
                (height(ii - 1, jj), [-1.0, 0.0, 0.0]),
                (height(ii, jj + 1), [0.0, 1.0, 0.0]),
                (height(ii, jj - 1), [0.0, -1.0, 0.0]),
            ];
            for (hn, n) in walls {
                if hn >= hz {
                    continue;
                }
                // one quad per layer keeps every edge shared by exactly two faces
                for l in hn..hz {
                    let (za, zb) = (l as f32 * sz, (l + 1) as f32 * sz);
                    // vertices ordered counter-clockwise seen from outside
                    let (a, b, c, d) = match n {
                        [x, _, _] if x > 0.0 => ([x1, y0, za], [x1, y1, za], [x1, y1, zb], [x1, y0, zb]),
                        [x, _, _] if x < 0.0 => ([x0, y1, za], [x0, y0, za], [x0, y0, zb], [x0, y1, zb]),
                        [_, y, _] if y > 0.0 => ([x1, y1, za], [x0, y1, za], [x0, y1, zb], [x1, y1, zb]),
                        _ => ([x0, y0, za], [x1, y0, za], [x1, y0, zb], [x0, y0, zb]),
                    };
                    quad(&mut tris, a, b, c, d, n);
                }
            }
        }
    }
    tris
}

/// Binary STL of [`lens_mesh`].
pub fn write_stl(path: &Path, lens: &LensVolume, dx: f64, dy: f64, dz: f64) -> Result<()> {
    let tris = lens_mesh(lens, dx, dy, dz);
    let mut w = BufWriter::new(File::create(path)?);
    let mut header = [0u8; 80];
    let tag = b"binary STL, units mm";
    header[..tag.len()].copy_from_slice(tag);
    w.write_all(&header)?;
    w.write_all(&(tris.len() as u32).to_le_bytes())?;
    for (t, n) in &tris {
        for v in n.iter().chain(t.iter().flatten()) {
            w.write_all(&v.to_le_bytes())?;
        }
        w.write_all(&0u16.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_loss_csv(path: &Path, report: &LossReport) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "iteration,total,acc,energy,balance")?;
    for n in 0..report.len() {
        let t = report.get(n).unwrap();
        writeln!(w, "{n},{},{},{},{}", t.total, t.acc, t.energy, t.balance)?;
    }
    w.flush()?;
    Ok(())
}

/// Amplitude of plane `k` of a field as CSV.
pub fn write_plane_csv(path: &Path, field: &ComplexField, k: usize) -> Result<()> {
    if k >= field.grid.nz {
        return Err(Error::OutOfBounds(format!("plane {k} of {}", field.grid.nz)));
    }
    write_matrix_csv(path, &field.plane(k).mapv(|z| z.norm()))
}
