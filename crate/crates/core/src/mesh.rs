//! Triangle meshes and PLY (ascii / binary little-endian) ingestion.

use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::Vec3;

#[derive(Debug, Clone, PartialEq)]
pub struct TriangleMesh {
    pub vertices: Vec<Vec3>,
    pub triangles: Vec<[usize; 3]>,
    pub extents_min: Vec3,
    pub extents_max: Vec3,
    /// Largest pairwise vertex distance (mm).
    pub diameter: f64,
}

impl TriangleMesh {
    pub fn new(vertices: Vec<Vec3>, triangles: Vec<[usize; 3]>) -> Result<Self> {
        if vertices.is_empty() {
            return Err(Error::EmptyMesh);
        }
        let count = vertices.len();
        if let Some(&index) = triangles.iter().flatten().find(|&&i| i >= count) {
            return Err(Error::IndexOutOfRange { index, count });
        }
        let mut lo = vertices[0];
        let mut hi = vertices[0];
        for v in &vertices {
            lo = lo.inf(v);
            hi = hi.sup(v);
        }
        let diameter = max_pairwise_distance(&vertices);
        if !(diameter > 0.0) {
            return Err(Error::EmptyMesh);
        }
        Ok(Self {
            vertices,
            triangles,
            extents_min: lo,
            extents_max: hi,
            diameter,
        })
    }

    fn span(&self) -> Vec3 {
        (self.extents_max - self.extents_min).map(|s| if s > 0.0 { s } else { 1.0 })
    }

    /// Normalized object coordinate of a model point.
    pub fn to_nocs(&self, p: &Vec3) -> [f64; 3] {
        let n = (p - self.extents_min).component_div(&self.span());
        [n.x, n.y, n.z]
    }

    /// Model point for a normalized object coordinate.
    pub fn from_nocs(&self, n: [f64; 3]) -> Vec3 {
        self.extents_min + Vec3::from(n).component_mul(&self.span())
    }

    /// Whether `p` lies inside the extents grown by `frac` of their span on every side.
    pub fn within_extents(&self, p: &Vec3, frac: f64) -> bool {
        let pad = (self.extents_max - self.extents_min) * frac;
        (0..3).all(|i| {
            p[i] >= self.extents_min[i] - pad[i] && p[i] <= self.extents_max[i] + pad[i]
        })
    }

    pub fn to_ply_ascii(&self) -> String {
        let mut s = format!(
            "ply\nformat ascii 1.0\nelement vertex {}\nproperty float x\nproperty float y\nproperty float z\nelement face {}\nproperty list uchar int vertex_indices\nend_header\n",
            self.vertices.len(),
            self.triangles.len()
        );
        for v in &self.vertices {
            s.push_str(&format!("{} {} {}\n", v.x as f32, v.y as f32, v.z as f32));
        }
        for t in &self.triangles {
            s.push_str(&format!("3 {} {} {}\n", t[0], t[1], t[2]));
        }
        s
    }

    pub fn to_ply_binary(&self) -> Vec<u8> {
        let mut out = format!(
            "ply\nformat binary_little_endian 1.0\nelement vertex {}\nproperty float x\nproperty float y\nproperty float z\nelement face {}\nproperty list uchar int vertex_indices\nend_header\n",
            self.vertices.len(),
            self.triangles.len()
        )
        .into_bytes();
        for v in &self.vertices {
            for c in [v.x, v.y, v.z] {
                out.extend_from_slice(&(c as f32).to_le_bytes());
            }
        }
        for t in &self.triangles {
            out.push(3);
            for &i in t {
                out.extend_from_slice(&(i as i32).to_le_bytes());
            }
        }
        out
    }
}

/// Exact diameter; candidates are visited by decreasing distance from the
/// centroid so the triangle-inequality bound prunes most pairs.
fn max_pairwise_distance(vertices: &[Vec3]) -> f64 {
    let centroid = vertices.iter().sum::<Vec3>() / vertices.len() as f64;
    let mut order: Vec<(f64, usize)> = vertices
        .iter()
        .enumerate()
        .map(|(i, v)| ((v - centroid).norm(), i))
        .collect();
    order.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    let mut best = 0.0f64;
    for (a, &(ra, ia)) in order.iter().enumerate() {
        if 2.0 * ra <= best {
            break;
        }
        for &(rb, ib) in &order[a + 1..] {
            if ra + rb <= best {
                break;
            }
            best = best.max((vertices[ia] - vertices[ib]).norm());
        }
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq)]
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
    fn parse(name: &str) -> Result<Self> {
        Ok(match name {
            "char" | "int8" => Scalar::I8,
            "uchar" | "uint8" => Scalar::U8,
            "short" | "int16" => Scalar::I16,
            "ushort" | "uint16" => Scalar::U16,
            "int" | "int32" => Scalar::I32,
            "uint" | "uint32" => Scalar::U32,
            "float" | "float32" => Scalar::F32,
            "double" | "float64" => Scalar::F64,
            other => return Err(Error::UnsupportedElement(format!("property type {other}"))),
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
}

#[derive(Debug)]
enum Property {
    Scalar(String, Scalar),
    List(String, Scalar, Scalar),
}

#[derive(Debug)]
struct Element {
    name: String,
    count: usize,
    properties: Vec<Property>,
}

#[derive(Debug, PartialEq)]
enum Format {
    Ascii,
    BinaryLe,
}

fn parse_header(bytes: &[u8]) -> Result<(Format, Vec<Element>, usize)> {
    const END: &[u8] = b"end_header";
    let end = bytes
        .windows(END.len())
        .position(|w| w == END)
        .ok_or_else(|| Error::MalformedHeader("missing end_header".into()))?;
    let mut body = end + END.len();
    if bytes.get(body) == Some(&b'\r') {
        body += 1;
    }
    if bytes.get(body) != Some(&b'\n') {
        return Err(Error::MalformedHeader("end_header not followed by newline".into()));
    }
    body += 1;
    let text = std::str::from_utf8(&bytes[..end])
        .map_err(|_| Error::MalformedHeader("header is not UTF-8".into()))?;
    let mut lines = text.lines().map(str::trim);
    if lines.next() != Some("ply") {
        return Err(Error::MalformedHeader("missing 'ply' signature".into()));
    }
    let mut format = None;
    let mut elements: Vec<Element> = Vec::new();
    for line in lines {
        let tok: Vec<&str> = line.split_whitespace().collect();
        match tok.as_slice() {
            [] | ["comment", ..] | ["obj_info", ..] => {}
            ["format", "ascii", _] => format = Some(Format::Ascii),
            ["format", "binary_little_endian", _] => format = Some(Format::BinaryLe),
            ["format", other, ..] => {
                return Err(Error::UnsupportedElement(format!("format {other}")))
            }
            ["element", name, count] => elements.push(Element {
                name: name.to_string(),
                count: count
                    .parse()
                    .map_err(|_| Error::MalformedHeader(format!("bad element count '{count}'")))?,
                properties: Vec::new(),
            }),
            ["property", "list", count_ty, item_ty, name] => elements
                .last_mut()
                .ok_or_else(|| Error::MalformedHeader("property before element".into()))?
                .properties
                .push(Property::List(
                    name.to_string(),
                    Scalar::parse(count_ty)?,
                    Scalar::parse(item_ty)?,
                )),
            ["property", ty, name] => elements
                .last_mut()
                .ok_or_else(|| Error::MalformedHeader("property before element".into()))?
                .properties
                .push(Property::Scalar(name.to_string(), Scalar::parse(ty)?)),
            _ => return Err(Error::MalformedHeader(format!("unexpected line '{line}'"))),
        }
    }
    let format = format.ok_or_else(|| Error::MalformedHeader("missing format line".into()))?;
    Ok((format, elements, body))
}

/// Sequential reader over the body of either encoding.
enum Body<'a> {
    Ascii(std::str::SplitAsciiWhitespace<'a>),
    Binary(&'a [u8]),
}

impl Body<'_> {
    fn next(&mut self, ty: Scalar) -> Result<f64> {
        match self {
            Body::Ascii(tokens) => {
                let tok = tokens
                    .next()
                    .ok_or_else(|| Error::MalformedHeader("body shorter than header declares".into()))?;
                tok.parse::<f64>()
                    .map_err(|_| Error::MalformedHeader(format!("bad number '{tok}'")))
            }
            Body::Binary(rest) => {
                let n = ty.size();
                if rest.len() < n {
                    return Err(Error::MalformedHeader("body shorter than header declares".into()));
                }
                let (b, tail) = rest.split_at(n);
                *rest = tail;
                Ok(match ty {
                    Scalar::I8 => b[0] as i8 as f64,
                    Scalar::U8 => b[0] as f64,
                    Scalar::I16 => i16::from_le_bytes([b[0], b[1]]) as f64,
                    Scalar::U16 => u16::from_le_bytes([b[0], b[1]]) as f64,
                    Scalar::I32 => i32::from_le_bytes(b.try_into().unwrap()) as f64,
                    Scalar::U32 => u32::from_le_bytes(b.try_into().unwrap()) as f64,
                    Scalar::F32 => f32::from_le_bytes(b.try_into().unwrap()) as f64,
                    Scalar::F64 => f64::from_le_bytes(b.try_into().unwrap()),
                })
            }
        }
    }
}

fn to_index(v: f64) -> Result<usize> {
    if v < 0.0 || v.fract() != 0.0 {
        return Err(Error::MalformedHeader(format!("invalid vertex index {v}")));
    }
    Ok(v as usize)
}

/// Parses PLY bytes. Polygons with more than three corners are fan-triangulated.
pub fn parse_ply_bytes(bytes: &[u8]) -> Result<TriangleMesh> {
    let (format, elements, body_start) = parse_header(bytes)?;
    let body = &bytes[body_start..];
    let mut reader = match format {
        Format::Ascii => Body::Ascii(
            std::str::from_utf8(body)
                .map_err(|_| Error::MalformedHeader("ascii body is not UTF-8".into()))?
                .split_ascii_whitespace(),
        ),
        Format::BinaryLe => Body::Binary(body),
    };

    let mut vertices = Vec::new();
    let mut triangles = Vec::new();
    let mut saw_vertex = false;
    for el in &elements {
        match el.name.as_str() {
            "vertex" => {
                saw_vertex = true;
                let find = |axis: &str| {
                    el.properties
                        .iter()
                        .position(|p| matches!(p, Property::Scalar(n, _) if n == axis))
                        .ok_or_else(|| Error::UnsupportedElement(format!("vertex lacks '{axis}'")))
                };
                let slots = [find("x")?, find("y")?, find("z")?];
                vertices.reserve(el.count);
                for _ in 0..el.count {
                    let mut xyz = [0.0; 3];
                    for (pi, prop) in el.properties.iter().enumerate() {
                        match prop {
                            Property::Scalar(_, ty) => {
                                let v = reader.next(*ty)?;
                                if let Some(axis) = slots.iter().position(|&s| s == pi) {
                                    xyz[axis] = v;
                                }
                            }
                            Property::List(_, cty, ity) => {
                                let n = to_index(reader.next(*cty)?)?;
                                for _ in 0..n {
                                    reader.next(*ity)?;
                                }
                            }
                        }
                    }
                    vertices.push(Vec3::from(xyz));
                }
            }
            "face" => {
                let list_slot = el
                    .properties
                    .iter()
                    .position(|p| {
                        matches!(p, Property::List(n, _, _) if n == "vertex_indices" || n == "vertex_index")
                    })
                    .ok_or_else(|| Error::UnsupportedElement("face lacks vertex_indices".into()))?;
                triangles.reserve(el.count);
                for _ in 0..el.count {
                    for (pi, prop) in el.properties.iter().enumerate() {
                        match prop {
                            Property::Scalar(_, ty) => {
                                reader.next(*ty)?;
                            }
                            Property::List(_, cty, ity) => {
                                let n = to_index(reader.next(*cty)?)?;
                                let mut idx = Vec::with_capacity(n);
                                for _ in 0..n {
                                    idx.push(to_index(reader.next(*ity)?)?);
                                }
                                if pi == list_slot {
                                    if n < 3 {
                                        return Err(Error::UnsupportedElement(format!(
                                            "face with {n} vertices"
                                        )));
                                    }
                                    for k in 1..n - 1 {
                                        triangles.push([idx[0], idx[k], idx[k + 1]]);
                                    }
                                }
                            }
                        }
                    }
                }
            }
            _ => {
                for _ in 0..el.count {
                    for prop in &el.properties {
                        match prop {
                            Property::Scalar(_, ty) => {
                                reader.next(*ty)?;
                            }
                            Property::List(_, cty, ity) => {
                                let n = to_index(reader.next(*cty)?)?;
                                for _ in 0..n {
                                    reader.next(*ity)?;
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    if !saw_vertex {
        return Err(Error::UnsupportedElement("no vertex element".into()));
    }
    TriangleMesh::new(vertices, triangles)
}

pub fn parse_ply(path: impl AsRef<Path>) -> Result<TriangleMesh> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_ply_bytes(&bytes)
}
