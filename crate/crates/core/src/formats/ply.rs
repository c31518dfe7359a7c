//! Binary little-endian PLY for Gaussian splats and coloured point clouds.
//!
//! Splat vertices use the common 3DGS layout so third-party viewers can
//! open them: colour is stored as the degree-0 spherical-harmonic
//! coefficient, opacity as a logit, scales as logs, rotation scalar-first.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use nalgebra::Vector3;

use super::{io_err, FormatError};
use crate::radiance::Gaussian3D;
use crate::sfm::SparseModel;

pub const SPLAT_PROPERTIES: [&str; 14] = [
    "x", "y", "z", "f_dc_0", "f_dc_1", "f_dc_2", "opacity", "scale_0", "scale_1", "scale_2", "rot_0", "rot_1", "rot_2",
    "rot_3",
];

/// Degree-0 real spherical harmonic, `1 / (2 sqrt(pi))`.
const SH_C0: f64 = 0.282_094_791_773_878_14;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ColoredPoint {
    pub position: Vector3<f64>,
    pub color: [u8; 3],
}

impl ColoredPoint {
    /// The model's points in id order.
    pub fn from_model(model: &SparseModel) -> Vec<Self> {
        model
            .points
            .values()
            .map(|p| ColoredPoint {
                position: p.position,
                color: p.color.map(|c| (c.clamp(0.0, 1.0) * 255.0).round() as u8),
            })
            .collect()
    }
}

fn header(count: usize, comment: &str, props: &[(&str, &str)]) -> String {
    let mut h = format!("ply\nformat binary_little_endian 1.0\ncomment {comment}\nelement vertex {count}\n");
    for (ty, name) in props {
        h.push_str(&format!("property {ty} {name}\n"));
    }
    h.push_str("end_header\n");
    h
}

/// Streams splats in [`SPLAT_PROPERTIES`] order as 32-bit floats.
pub fn write_splats<W: Write>(mut out: W, gaussians: &[Gaussian3D]) -> std::io::Result<()> {
    if gaussians.is_empty() {
        return Err(std::io::Error::new(std::io::ErrorKind::InvalidInput, "no splats to write"));
    }
    let props: Vec<(&str, &str)> = SPLAT_PROPERTIES.iter().map(|n| ("float", *n)).collect();
    out.write_all(header(gaussians.len(), "regolith gaussian splats", &props).as_bytes())?;
    let mut buf = Vec::with_capacity(gaussians.len() * 14 * 4);
    for g in gaussians {
        let c = g.color.map(|c| (c - 0.5) / SH_C0);
        let vals = [
            g.mean.x,
            g.mean.y,
            g.mean.z,
            c[0],
            c[1],
            c[2],
            g.opacity_logit,
            g.log_scale.x,
            g.log_scale.y,
            g.log_scale.z,
            g.rotation[0],
            g.rotation[1],
            g.rotation[2],
            g.rotation[3],
        ];
        for v in vals {
            buf.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    out.write_all(&buf)?;
    out.flush()
}

pub fn write_splat_ply(gaussians: &[Gaussian3D], path: &Path) -> Result<(), FormatError> {
    if gaussians.is_empty() {
        return Err(FormatError::Empty("splat list is empty"));
    }
    let f = File::create(path).map_err(io_err(path))?;
    write_splats(BufWriter::new(f), gaussians).map_err(io_err(path))
}

pub fn write_point_ply(points: &[ColoredPoint], path: &Path) -> Result<(), FormatError> {
    if points.is_empty() {
        return Err(FormatError::Empty("point list is empty"));
    }
    let props =
        [("float", "x"), ("float", "y"), ("float", "z"), ("uchar", "red"), ("uchar", "green"), ("uchar", "blue")];
    let mut bytes = header(points.len(), "regolith sparse points", &props).into_bytes();
    for p in points {
        for v in p.position.iter() {
            bytes.extend_from_slice(&(*v as f32).to_le_bytes());
        }
        bytes.extend_from_slice(&p.color);
    }
    std::fs::write(path, bytes).map_err(io_err(path))
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Scalar {
    I8,
    U8,
    I16,
    U16,
    I32,
    U32,
    F32,
    F64,
}

impl Scalar {
    fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "char" | "int8" => Scalar::I8,
            "uchar" | "uint8" => Scalar::U8,
            "short" | "int16" => Scalar::I16,
            "ushort" | "uint16" => Scalar::U16,
            "int" | "int32" => Scalar::I32,
            "uint" | "uint32" => Scalar::U32,
            "float" | "float32" => Scalar::F32,
            "double" | "float64" => Scalar::F64,
            _ => return None,
        })
    }

    fn size(self) -> usize {
        match self {
            Scalar::I8 | Scalar::U8 => 1,
            Scalar::I16 | Scalar::U16 => 2,
            Scalar::I32 | Scalar::U32 | Scalar::F32 => 4,
            Scalar::F64 => 8,
        }
    }

    fn decode(self, b: &[u8]) -> f64 {
        match self {
            Scalar::I8 => b[0] as i8 as f64,
            Scalar::U8 => b[0] as f64,
            Scalar::I16 => i16::from_le_bytes([b[0], b[1]]) as f64,
            Scalar::U16 => u16::from_le_bytes([b[0], b[1]]) as f64,
            Scalar::I32 => i32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Scalar::U32 => u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Scalar::F32 => f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Scalar::F64 => f64::from_le_bytes(b[..8].try_into().expect("eight bytes")),
        }
    }
}

/// Vertex element of a binary little-endian PLY: property names and rows.
struct Vertices {
    names: Vec<String>,
    rows: Vec<Vec<f64>>,
}

impl Vertices {
    fn column(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }
}

fn read_vertices<R: BufRead>(mut r: R, path: &Path) -> Result<Vertices, FormatError> {
    let err = |line: usize, message: String| FormatError::Parse { path: path.to_path_buf(), line, message };
    let mut line_no = 0;
    let mut next_line = |r: &mut R| -> Result<(usize, String), FormatError> {
        let mut s = String::new();
        line_no += 1;
        if r.read_line(&mut s).map_err(io_err(path))? == 0 {
            return Err(err(line_no, "unexpected end of header".into()));
        }
        Ok((line_no, s.trim_end().to_string()))
    };
    let (ln, magic) = next_line(&mut r)?;
    if magic != "ply" {
        return Err(err(ln, format!("not a PLY file (starts with {magic:?})")));
    }
    let mut count = None;
    let mut in_vertex = false;
    let mut props: Vec<(Scalar, String)> = Vec::new();
    loop {
        let (ln, line) = next_line(&mut r)?;
        let t: Vec<&str> = line.split_whitespace().collect();
        match t.as_slice() {
            ["end_header"] => break,
            ["format", fmt, _] => {
                if *fmt != "binary_little_endian" {
                    return Err(err(ln, format!("unsupported format {fmt}")));
                }
            }
            ["comment", ..] | ["obj_info", ..] | [] => {}
            ["element", name, n] => {
                if count.is_some() {
                    // elements after the vertices are not read
                    in_vertex = false;
                    continue;
                }
                if *name != "vertex" {
                    return Err(err(ln, format!("element {name} precedes the vertex element")));
                }
                count = Some(n.parse::<usize>().map_err(|_| err(ln, format!("invalid count {n:?}")))?);
                in_vertex = true;
            }
            ["property", "list", ..] if in_vertex => {
                return Err(err(ln, "list properties in vertices are not supported".into()));
            }
            ["property", ty, name] => {
                if in_vertex {
                    let s = Scalar::parse(ty).ok_or_else(|| err(ln, format!("unknown type {ty}")))?;
                    props.push((s, name.to_string()));
                }
            }
            ["property", ..] => {}
            _ => return Err(err(ln, format!("unrecognized header line {line:?}"))),
        }
    }
    let count = count.ok_or_else(|| err(line_no, "no vertex element".into()))?;
    let stride: usize = props.iter().map(|(s, _)| s.size()).sum();
    let mut body = vec![0u8; count * stride];
    r.read_exact(&mut body).map_err(|e| FormatError::Invalid {
        path: path.to_path_buf(),
        message: format!("vertex data truncated: {e}"),
    })?;
    let rows = body
        .chunks_exact(stride.max(1))
        .take(count)
        .map(|row| {
            let mut off = 0;
            props
                .iter()
                .map(|(s, _)| {
                    let v = s.decode(&row[off..off + s.size()]);
                    off += s.size();
                    v
                })
                .collect()
        })
        .collect();
    Ok(Vertices { names: props.into_iter().map(|(_, n)| n).collect(), rows })
}

/// Reads splats; extra vertex properties such as higher SH bands are ignored.
pub fn read_splats<R: BufRead>(r: R, path: &Path) -> Result<Vec<Gaussian3D>, FormatError> {
    let v = read_vertices(r, path)?;
    let cols: Vec<usize> = SPLAT_PROPERTIES
        .iter()
        .map(|n| {
            v.column(n).ok_or_else(|| FormatError::Invalid {
                path: path.to_path_buf(),
                message: format!("missing vertex property {n}"),
            })
        })
        .collect::<Result<_, _>>()?;
    Ok(v.rows
        .iter()
        .map(|row| {
            let g = |k: usize| row[cols[k]];
            Gaussian3D {
                mean: Vector3::new(g(0), g(1), g(2)),
                color: [0.5 + SH_C0 * g(3), 0.5 + SH_C0 * g(4), 0.5 + SH_C0 * g(5)],
                opacity_logit: g(6),
                log_scale: Vector3::new(g(7), g(8), g(9)),
                rotation: [g(10), g(11), g(12), g(13)],
            }
        })
        .collect())
}

pub fn read_splat_ply(path: &Path) -> Result<Vec<Gaussian3D>, FormatError> {
    let f = File::open(path).map_err(io_err(path))?;
    read_splats(BufReader::new(f), path)
}

pub fn read_point_ply(path: &Path) -> Result<Vec<ColoredPoint>, FormatError> {
    let f = File::open(path).map_err(io_err(path))?;
    let v = read_vertices(BufReader::new(f), path)?;
    let col = |n: &str| {
        v.column(n).ok_or_else(|| FormatError::Invalid {
            path: path.to_path_buf(),
            message: format!("missing vertex property {n}"),
        })
    };
    let xyz = [col("x")?, col("y")?, col("z")?];
    let rgb = [col("red")?, col("green")?, col("blue")?];
    Ok(v.rows
        .iter()
        .map(|row| ColoredPoint {
            position: Vector3::new(row[xyz[0]], row[xyz[1]], row[xyz[2]]),
            color: rgb.map(|c| row[c] as u8),
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_white_point() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.ply");
        let p = ColoredPoint { position: Vector3::zeros(), color: [255; 3] };
        write_point_ply(&[p], &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        let text = String::from_utf8_lossy(&bytes);
        let end = text.find("end_header\n").unwrap() + "end_header\n".len();
        assert!(text.starts_with("ply\nformat binary_little_endian 1.0\n"));
        assert!(text[..end].contains("element vertex 1\n"));
        assert_eq!(bytes.len() - end, 3 * 4 + 3);
        assert_eq!(read_point_ply(&path).unwrap(), vec![p]);
    }

    #[test]
    fn empty_lists_are_refused() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(write_splat_ply(&[], &dir.path().join("a.ply")), Err(FormatError::Empty(_))));
        assert!(matches!(write_point_ply(&[], &dir.path().join("b.ply")), Err(FormatError::Empty(_))));
    }

    #[test]
    fn property_order_is_the_splat_layout() {
        let g = Gaussian3D::isotropic(Vector3::new(1.0, 2.0, 3.0), 0.5, 0.7, [0.5, 1.0, 0.0]);
        let mut buf = Vec::new();
        write_splats(&mut buf, &[g.clone()]).unwrap();
        let text = String::from_utf8_lossy(&buf);
        let names: Vec<&str> = text.lines().filter_map(|l| l.strip_prefix("property float ")).collect();
        assert_eq!(names, SPLAT_PROPERTIES);
        let body = &buf[buf.len() - 14 * 4..];
        let f = |k: usize| f32::from_le_bytes(body[4 * k..4 * k + 4].try_into().unwrap());
        assert_eq!((f(0), f(1), f(2)), (1.0, 2.0, 3.0));
        assert_eq!(f(3), 0.0);
        assert!((f(4) as f64 - 0.5 / SH_C0).abs() < 1e-6);
        assert_eq!(f(7), 0.5f64.ln() as f32);
    }

    #[test]
    fn foreign_properties_are_skipped() {
        // a double-precision file with normals in front, as some exporters write
        let mut props = vec![("double", "nx"), ("double", "ny"), ("double", "nz")];
        props.extend(SPLAT_PROPERTIES.iter().map(|n| ("double", *n)));
        props.push(("uchar", "flag"));
        let mut bytes = header(1, "foreign", &props).into_bytes();
        for k in 0..17 {
            bytes.extend_from_slice(&(k as f64).to_le_bytes());
        }
        bytes.push(9);
        let g = read_splats(&bytes[..], Path::new("mem")).unwrap();
        assert_eq!(g[0].mean, Vector3::new(3.0, 4.0, 5.0));
        assert_eq!(g[0].rotation, [13.0, 14.0, 15.0, 16.0]);
        assert_eq!(g[0].opacity_logit, 9.0);
    }
}
