//! Self-describing gridded array files (NetCDF-3 classic subset).
//!
//! Reader and writer for the classic CDF-1 layout with fixed-size (non-record)
//! variables of type `double` or `byte`, named dimensions, and text/double
//! attributes. Files written here open in standard NetCDF tooling; the reader
//! accepts any classic file that stays within this subset.
//!
//! [`save_field`] / [`load_field`] store a space-time field under dimensions
//! `(time, y, x)` with coordinate variables in days and degrees, plus an
//! optional byte observation mask.

use std::io::{Read, Write};
use std::path::Path;

use byteorder::{BigEndian, ByteOrder, ReadBytesExt};
use ndarray::Array3;

use crate::error::{Error, Result};
use crate::grid::{Mask, SpaceTimeField, SpaceTimeGrid};

const MAGIC: [u8; 4] = [b'C', b'D', b'F', 1];
const TAG_DIMENSION: u32 = 0x0A;
const TAG_VARIABLE: u32 = 0x0B;
const TAG_ATTRIBUTE: u32 = 0x0C;
const NC_BYTE: u32 = 1;
const NC_CHAR: u32 = 2;
const NC_DOUBLE: u32 = 6;

#[derive(Debug, Clone, PartialEq)]
pub struct NcDim {
    pub name: String,
    pub len: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub enum NcAttrValue {
    Text(String),
    Doubles(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct NcAttr {
    pub name: String,
    pub value: NcAttrValue,
}

impl NcAttr {
    pub fn text(name: &str, value: &str) -> Self {
        NcAttr { name: name.to_string(), value: NcAttrValue::Text(value.to_string()) }
    }

    pub fn doubles(name: &str, value: Vec<f64>) -> Self {
        NcAttr { name: name.to_string(), value: NcAttrValue::Doubles(value) }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum NcValues {
    Doubles(Vec<f64>),
    Bytes(Vec<i8>),
}

impl NcValues {
    fn nc_type(&self) -> u32 {
        match self {
            NcValues::Doubles(_) => NC_DOUBLE,
            NcValues::Bytes(_) => NC_BYTE,
        }
    }

    fn len(&self) -> usize {
        match self {
            NcValues::Doubles(v) => v.len(),
            NcValues::Bytes(v) => v.len(),
        }
    }

    fn byte_len(&self) -> usize {
        match self {
            NcValues::Doubles(v) => v.len() * 8,
            NcValues::Bytes(v) => v.len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NcVar {
    pub name: String,
    /// Indices into the file's dimension list.
    pub dims: Vec<usize>,
    pub attrs: Vec<NcAttr>,
    pub values: NcValues,
}

/// An in-memory classic NetCDF file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct NcFile {
    pub dims: Vec<NcDim>,
    pub attrs: Vec<NcAttr>,
    pub vars: Vec<NcVar>,
}

fn pad4(n: usize) -> usize {
    (4 - n % 4) % 4
}

fn put_name(buf: &mut Vec<u8>, name: &str) {
    let bytes = name.as_bytes();
    buf.extend_from_slice(&(bytes.len() as u32).to_be_bytes());
    buf.extend_from_slice(bytes);
    buf.extend(std::iter::repeat(0u8).take(pad4(bytes.len())));
}

fn put_attrs(buf: &mut Vec<u8>, attrs: &[NcAttr]) {
    if attrs.is_empty() {
        buf.extend_from_slice(&0u32.to_be_bytes());
        buf.extend_from_slice(&0u32.to_be_bytes());
        return;
    }
    buf.extend_from_slice(&TAG_ATTRIBUTE.to_be_bytes());
    buf.extend_from_slice(&(attrs.len() as u32).to_be_bytes());
    for attr in attrs {
        put_name(buf, &attr.name);
        match &attr.value {
            NcAttrValue::Text(s) => {
                let bytes = s.as_bytes();
                buf.extend_from_slice(&NC_CHAR.to_be_bytes());
                buf.extend_from_slice(&(bytes.len() as u32).to_be_bytes());
                buf.extend_from_slice(bytes);
                buf.extend(std::iter::repeat(0u8).take(pad4(bytes.len())));
            }
            NcAttrValue::Doubles(vs) => {
                buf.extend_from_slice(&NC_DOUBLE.to_be_bytes());
                buf.extend_from_slice(&(vs.len() as u32).to_be_bytes());
                for v in vs {
                    buf.extend_from_slice(&v.to_be_bytes());
                }
            }
        }
    }
}

impl NcFile {
    pub fn dim_id(&self, name: &str) -> Option<usize> {
        self.dims.iter().position(|d| d.name == name)
    }

    pub fn var(&self, name: &str) -> Option<&NcVar> {
        self.vars.iter().find(|v| v.name == name)
    }

    fn validate(&self) -> Result<()> {
        for var in &self.vars {
            let expected: usize = var.dims.iter().map(|&d| self.dims[d].len).product();
            for &d in &var.dims {
                if d >= self.dims.len() {
                    return Err(Error::Format {
                        path: String::new(),
                        reason: format!("variable {} references unknown dimension {d}", var.name),
                    });
                }
            }
            if var.values.len() != expected {
                return Err(Error::Format {
                    path: String::new(),
                    reason: format!(
                        "variable {} has {} values for dimension product {expected}",
                        var.name,
                        var.values.len()
                    ),
                });
            }
        }
        Ok(())
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        self.validate()?;
        let mut header = Vec::new();
        header.extend_from_slice(&MAGIC);
        header.extend_from_slice(&0u32.to_be_bytes()); // numrecs

        if self.dims.is_empty() {
            header.extend_from_slice(&0u32.to_be_bytes());
            header.extend_from_slice(&0u32.to_be_bytes());
        } else {
            header.extend_from_slice(&TAG_DIMENSION.to_be_bytes());
            header.extend_from_slice(&(self.dims.len() as u32).to_be_bytes());
            for dim in &self.dims {
                put_name(&mut header, &dim.name);
                header.extend_from_slice(&(dim.len as u32).to_be_bytes());
            }
        }

        put_attrs(&mut header, &self.attrs);

        let mut begin_patches = Vec::new();
        if self.vars.is_empty() {
            header.extend_from_slice(&0u32.to_be_bytes());
            header.extend_from_slice(&0u32.to_be_bytes());
        } else {
            header.extend_from_slice(&TAG_VARIABLE.to_be_bytes());
            header.extend_from_slice(&(self.vars.len() as u32).to_be_bytes());
            for var in &self.vars {
                put_name(&mut header, &var.name);
                header.extend_from_slice(&(var.dims.len() as u32).to_be_bytes());
                for &d in &var.dims {
                    header.extend_from_slice(&(d as u32).to_be_bytes());
                }
                put_attrs(&mut header, &var.attrs);
                header.extend_from_slice(&var.values.nc_type().to_be_bytes());
                let byte_len = var.values.byte_len();
                let vsize = byte_len + pad4(byte_len);
                header.extend_from_slice(&(vsize as u32).to_be_bytes());
                begin_patches.push(header.len());
                header.extend_from_slice(&0u32.to_be_bytes());
            }
        }

        let mut begin = header.len();
        for (var, patch) in self.vars.iter().zip(&begin_patches) {
            BigEndian::write_u32(&mut header[*patch..*patch + 4], begin as u32);
            let byte_len = var.values.byte_len();
            begin += byte_len + pad4(byte_len);
        }

        let mut file = std::fs::File::create(path)?;
        file.write_all(&header)?;
        for var in &self.vars {
            match &var.values {
                NcValues::Doubles(vs) => {
                    let mut buf = Vec::with_capacity(vs.len() * 8);
                    for v in vs {
                        buf.extend_from_slice(&v.to_be_bytes());
                    }
                    file.write_all(&buf)?;
                }
                NcValues::Bytes(vs) => {
                    let buf: Vec<u8> = vs.iter().map(|&b| b as u8).collect();
                    file.write_all(&buf)?;
                    file.write_all(&vec![0u8; pad4(vs.len())])?;
                }
            }
        }
        Ok(())
    }

    pub fn read(path: &Path) -> Result<NcFile> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        let path_str = path.display().to_string();
        let fail = |reason: &str| Error::Format { path: path_str.clone(), reason: reason.to_string() };

        let mut cur = std::io::Cursor::new(&bytes[..]);
        let mut magic = [0u8; 4];
        cur.read_exact(&mut magic)?;
        if magic != MAGIC {
            return Err(fail("bad magic (not classic CDF-1)"));
        }
        let numrecs = cur.read_u32::<BigEndian>()?;
        if numrecs != 0 {
            return Err(fail("record dimensions are not supported"));
        }

        let read_name = |cur: &mut std::io::Cursor<&[u8]>| -> Result<String> {
            let len = cur.read_u32::<BigEndian>()? as usize;
            let mut buf = vec![0u8; len + pad4(len)];
            cur.read_exact(&mut buf)?;
            buf.truncate(len);
            String::from_utf8(buf).map_err(|_| Error::Format {
                path: path_str.clone(),
                reason: "non-utf8 name".to_string(),
            })
        };

        let read_attrs = |cur: &mut std::io::Cursor<&[u8]>| -> Result<Vec<NcAttr>> {
            let tag = cur.read_u32::<BigEndian>()?;
            let count = cur.read_u32::<BigEndian>()? as usize;
            if tag == 0 && count == 0 {
                return Ok(Vec::new());
            }
            if tag != TAG_ATTRIBUTE {
                return Err(Error::Format { path: path_str.clone(), reason: format!("bad attribute tag {tag:#x}") });
            }
            let mut attrs = Vec::with_capacity(count);
            for _ in 0..count {
                let name = read_name(cur)?;
                let nc_type = cur.read_u32::<BigEndian>()?;
                let nelems = cur.read_u32::<BigEndian>()? as usize;
                let value = match nc_type {
                    NC_CHAR => {
                        let mut buf = vec![0u8; nelems + pad4(nelems)];
                        cur.read_exact(&mut buf)?;
                        buf.truncate(nelems);
                        NcAttrValue::Text(String::from_utf8_lossy(&buf).into_owned())
                    }
                    NC_DOUBLE => {
                        let mut vs = Vec::with_capacity(nelems);
                        for _ in 0..nelems {
                            vs.push(cur.read_f64::<BigEndian>()?);
                        }
                        NcAttrValue::Doubles(vs)
                    }
                    other => {
                        return Err(Error::Format {
                            path: path_str.clone(),
                            reason: format!("unsupported attribute type {other}"),
                        })
                    }
                };
                attrs.push(NcAttr { name, value });
            }
            Ok(attrs)
        };

        let tag = cur.read_u32::<BigEndian>()?;
        let count = cur.read_u32::<BigEndian>()? as usize;
        let mut dims = Vec::new();
        if tag == TAG_DIMENSION {
            for _ in 0..count {
                let name = read_name(&mut cur)?;
                let len = cur.read_u32::<BigEndian>()? as usize;
                if len == 0 {
                    return Err(fail("record dimensions are not supported"));
                }
                dims.push(NcDim { name, len });
            }
        } else if !(tag == 0 && count == 0) {
            return Err(fail("bad dimension tag"));
        }

        let attrs = read_attrs(&mut cur)?;

        let tag = cur.read_u32::<BigEndian>()?;
        let count = cur.read_u32::<BigEndian>()? as usize;
        let mut vars = Vec::new();
        if tag == TAG_VARIABLE {
            for _ in 0..count {
                let name = read_name(&mut cur)?;
                let ndims = cur.read_u32::<BigEndian>()? as usize;
                let mut var_dims = Vec::with_capacity(ndims);
                for _ in 0..ndims {
                    var_dims.push(cur.read_u32::<BigEndian>()? as usize);
                }
                let var_attrs = read_attrs(&mut cur)?;
                let nc_type = cur.read_u32::<BigEndian>()?;
                let _vsize = cur.read_u32::<BigEndian>()?;
                let begin = cur.read_u32::<BigEndian>()? as usize;
                let nelems: usize = var_dims
                    .iter()
                    .map(|&d| dims.get(d).map(|dim| dim.len).unwrap_or(0))
                    .product();
                let values = match nc_type {
                    NC_DOUBLE => {
                        let end = begin + nelems * 8;
                        if end > bytes.len() {
                            return Err(fail("variable data out of bounds"));
                        }
                        let mut vs = Vec::with_capacity(nelems);
                        for k in 0..nelems {
                            vs.push(BigEndian::read_f64(&bytes[begin + 8 * k..begin + 8 * k + 8]));
                        }
                        NcValues::Doubles(vs)
                    }
                    NC_BYTE => {
                        let end = begin + nelems;
                        if end > bytes.len() {
                            return Err(fail("variable data out of bounds"));
                        }
                        NcValues::Bytes(bytes[begin..end].iter().map(|&b| b as i8).collect())
                    }
                    other => return Err(fail(&format!("unsupported variable type {other}"))),
                };
                vars.push(NcVar { name, dims: var_dims, attrs: var_attrs, values });
            }
        } else if !(tag == 0 && count == 0) {
            return Err(fail("bad variable tag"));
        }

        Ok(NcFile { dims, attrs, vars })
    }
}

/// Writes a space-time field (and optional observation mask) with coordinate
/// variables `time` (days), `y`, `x` (degrees).
pub fn save_field(path: &Path, name: &str, field: &SpaceTimeField, mask: Option<&Mask>) -> Result<()> {
    let grid = field.grid();
    let mut nc = NcFile {
        dims: vec![
            NcDim { name: "time".into(), len: grid.n_time },
            NcDim { name: "y".into(), len: grid.w },
            NcDim { name: "x".into(), len: grid.w },
        ],
        attrs: vec![NcAttr::text("title", name)],
        vars: Vec::new(),
    };
    nc.vars.push(NcVar {
        name: "time".into(),
        dims: vec![0],
        attrs: vec![NcAttr::text("units", "days")],
        values: NcValues::Doubles((0..grid.n_time).map(|t| t as f64 * grid.dt).collect()),
    });
    for (axis, dim_id) in [("y", 1usize), ("x", 2usize)] {
        nc.vars.push(NcVar {
            name: axis.into(),
            dims: vec![dim_id],
            attrs: vec![NcAttr::text("units", "degrees")],
            values: NcValues::Doubles((0..grid.w).map(|i| i as f64 * grid.dx).collect()),
        });
    }
    nc.vars.push(NcVar {
        name: name.into(),
        dims: vec![0, 1, 2],
        attrs: vec![NcAttr::text("units", "m")],
        values: NcValues::Doubles(field.data().iter().copied().collect()),
    });
    if let Some(mask) = mask {
        nc.vars.push(NcVar {
            name: format!("{name}_mask"),
            dims: vec![0, 1, 2],
            attrs: vec![NcAttr::text("comment", "1 where observed")],
            values: NcValues::Bytes(mask.data().iter().map(|&b| b as i8).collect()),
        });
    }
    nc.write(path)
}

/// Reads back a field written by [`save_field`].
pub fn load_field(path: &Path, name: &str) -> Result<(SpaceTimeField, Option<Mask>)> {
    let nc = NcFile::read(path)?;
    let path_str = path.display().to_string();
    let missing = |what: &str| Error::Format { path: path_str.clone(), reason: format!("missing {what}") };

    let coord = |axis: &str| -> Result<Vec<f64>> {
        match &nc.var(axis).ok_or_else(|| missing(axis))?.values {
            NcValues::Doubles(v) => Ok(v.clone()),
            _ => Err(missing(&format!("double coordinate {axis}"))),
        }
    };
    let time = coord("time")?;
    let x = coord("x")?;
    let y = coord("y")?;
    if x.len() != y.len() {
        return Err(Error::Format { path: path_str, reason: "non-square spatial grid".to_string() });
    }
    let dt = if time.len() > 1 { time[1] - time[0] } else { 1.0 };
    let dx = if x.len() > 1 { x[1] - x[0] } else { 1.0 };
    let grid = SpaceTimeGrid::new(x.len(), dx, dt, time.len())?;

    let var = nc.var(name).ok_or_else(|| missing(name))?;
    let values = match &var.values {
        NcValues::Doubles(v) => v.clone(),
        _ => return Err(missing("double field variable")),
    };
    let data = Array3::from_shape_vec(grid.shape(), values)
        .map_err(|e| Error::Format { path: path.display().to_string(), reason: e.to_string() })?;

    let mask = match nc.var(&format!("{name}_mask")) {
        Some(mv) => match &mv.values {
            NcValues::Bytes(b) => {
                let bools = Array3::from_shape_vec(grid.shape(), b.iter().map(|&v| v != 0).collect())
                    .map_err(|e| Error::Format { path: path.display().to_string(), reason: e.to_string() })?;
                Some(Mask::new(grid, bools)?)
            }
            _ => None,
        },
        None => None,
    };

    let field = match &mask {
        Some(m) => SpaceTimeField::new_masked(grid, data, m)?,
        None => SpaceTimeField::new(grid, data)?,
    };
    Ok((field, mask))
}
