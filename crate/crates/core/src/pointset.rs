//! Point clouds, voxel clouds and PLY input/output.
//!
//! Only the `vertex` element is interpreted. Other elements are skipped,
//! including ones with list properties, so meshes can be read as point sets.

use std::collections::HashMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use thiserror::Error;

use crate::round_half_away;

/// Raw points with optional per-point RGB colors.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PointCloud {
    pub points: Vec<[f64; 3]>,
    pub colors: Option<Vec<[u8; 3]>>,
}

impl PointCloud {
    pub fn new(points: Vec<[f64; 3]>, colors: Option<Vec<[u8; 3]>>) -> Result<Self, CloudError> {
        if let Some(c) = &colors {
            if c.len() != points.len() {
                return Err(CloudError::ColorCount { points: points.len(), colors: c.len() });
            }
        }
        Ok(Self { points, colors })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Integer voxels on a `2^N` grid. Coordinates are unique and colors, when
/// present, follow voxel order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct VoxelCloud {
    resolution_bits: u32,
    voxels: Vec<[u32; 3]>,
    colors: Option<Vec<[u8; 3]>>,
}

impl VoxelCloud {
    pub fn new(
        resolution_bits: u32,
        voxels: Vec<[u32; 3]>,
        colors: Option<Vec<[u8; 3]>>,
    ) -> Result<Self, CloudError> {
        check_resolution(resolution_bits)?;
        let side = 1u32 << resolution_bits;
        if let Some(v) = voxels.iter().find(|v| v.iter().any(|&c| c >= side)) {
            return Err(CloudError::OutOfRange { voxel: *v, resolution_bits });
        }
        if let Some(c) = &colors {
            if c.len() != voxels.len() {
                return Err(CloudError::ColorCount { points: voxels.len(), colors: c.len() });
            }
        }
        let mut seen = std::collections::HashSet::with_capacity(voxels.len());
        if let Some(v) = voxels.iter().find(|v| !seen.insert(**v)) {
            return Err(CloudError::Duplicate(*v));
        }
        Ok(Self { resolution_bits, voxels, colors })
    }

    pub fn resolution_bits(&self) -> u32 {
        self.resolution_bits
    }

    pub fn voxels(&self) -> &[[u32; 3]] {
        &self.voxels
    }

    pub fn colors(&self) -> Option<&[[u8; 3]]> {
        self.colors.as_deref()
    }

    pub fn len(&self) -> usize {
        self.voxels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.voxels.is_empty()
    }

    /// Replaces the color channel; `colors` must match the voxel count.
    pub fn with_colors(self, colors: Option<Vec<[u8; 3]>>) -> Result<Self, CloudError> {
        if let Some(c) = &colors {
            if c.len() != self.voxels.len() {
                return Err(CloudError::ColorCount { points: self.voxels.len(), colors: c.len() });
            }
        }
        Ok(Self { colors, ..self })
    }

    pub fn into_parts(self) -> (u32, Vec<[u32; 3]>, Option<Vec<[u8; 3]>>) {
        (self.resolution_bits, self.voxels, self.colors)
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CloudError {
    #[error("resolution must be between 1 and 16 bits, got {0}")]
    Resolution(u32),
    #[error("voxel {voxel:?} is outside the {resolution_bits}-bit grid")]
    OutOfRange { voxel: [u32; 3], resolution_bits: u32 },
    #[error("duplicate voxel {0:?}")]
    Duplicate([u32; 3]),
    #[error("{colors} colors supplied for {points} points")]
    ColorCount { points: usize, colors: usize },
    #[error("point cloud is empty")]
    Empty,
    #[error("point cloud has non-finite coordinates")]
    NonFinite,
}

fn check_resolution(bits: u32) -> Result<(), CloudError> {
    if (1..=16).contains(&bits) {
        Ok(())
    } else {
        Err(CloudError::Resolution(bits))
    }
}

/// Maps a real-valued cloud onto the `2^N` grid.
///
/// Clouds whose coordinates are already integers inside the grid are only
/// deduplicated. Anything else is shifted to the per-axis minimum and scaled
/// uniformly so that the longest axis spans `[0, 2^N - 1]`. Points landing in
/// the same voxel are merged; the merged color is the rounded mean.
pub fn voxelize(cloud: &PointCloud, resolution_bits: u32) -> Result<VoxelCloud, CloudError> {
    check_resolution(resolution_bits)?;
    if cloud.is_empty() {
        return Err(CloudError::Empty);
    }
    if cloud.points.iter().flatten().any(|c| !c.is_finite()) {
        return Err(CloudError::NonFinite);
    }
    let max_coord = ((1u64 << resolution_bits) - 1) as f64;
    let on_grid = cloud
        .points
        .iter()
        .flatten()
        .all(|&c| c >= 0.0 && c <= max_coord && c.fract() == 0.0);

    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for p in &cloud.points {
        for a in 0..3 {
            lo[a] = lo[a].min(p[a]);
            hi[a] = hi[a].max(p[a]);
        }
    }
    let extent = (0..3).map(|a| hi[a] - lo[a]).fold(0.0f64, f64::max);
    let scale = if extent > 0.0 { max_coord / extent } else { 0.0 };

    let to_voxel = |p: &[f64; 3]| -> [u32; 3] {
        if on_grid {
            return [p[0] as u32, p[1] as u32, p[2] as u32];
        }
        let mut v = [0u32; 3];
        for a in 0..3 {
            let c = round_half_away((p[a] - lo[a]) * scale).clamp(0.0, max_coord);
            v[a] = c as u32;
        }
        v
    };

    let mut slot: HashMap<[u32; 3], usize> = HashMap::with_capacity(cloud.len());
    let mut voxels = Vec::new();
    let mut sums: Vec<([u64; 3], u64)> = Vec::new();
    for (i, p) in cloud.points.iter().enumerate() {
        let v = to_voxel(p);
        let idx = *slot.entry(v).or_insert_with(|| {
            voxels.push(v);
            sums.push(([0; 3], 0));
            voxels.len() - 1
        });
        if let Some(colors) = &cloud.colors {
            let c = colors[i];
            let s = &mut sums[idx];
            for a in 0..3 {
                s.0[a] += u64::from(c[a]);
            }
            s.1 += 1;
        }
    }
    let colors = cloud.colors.as_ref().map(|_| {
        sums.iter()
            .map(|(s, n)| {
                let mut c = [0u8; 3];
                for a in 0..3 {
                    c[a] = round_half_away(s[a] as f64 / *n as f64).clamp(0.0, 255.0) as u8;
                }
                c
            })
            .collect()
    });
    Ok(VoxelCloud { resolution_bits, voxels, colors })
}

/// Emits voxel coordinates verbatim as floating-point points.
pub fn devoxelize(vox: &VoxelCloud) -> PointCloud {
    PointCloud {
        points: vox.voxels.iter().map(|v| [v[0] as f64, v[1] as f64, v[2] as f64]).collect(),
        colors: vox.colors.clone(),
    }
}

#[derive(Debug, Error)]
pub enum PlyError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed PLY header (line {line}): {reason}")]
    MalformedHeader { line: usize, reason: String },
    #[error("unsupported type `{ty}` for property `{property}` of element `{element}`")]
    UnsupportedProperty { element: String, property: String, ty: String },
    #[error("truncated payload in element `{element}`: expected {expected} rows, read {found}")]
    Truncated { element: String, expected: usize, found: usize },
    #[error("malformed value in element `{element}` row {row}: {reason}")]
    MalformedValue { element: String, row: usize, reason: String },
    #[error("{0} trailing bytes after the last element")]
    TrailingData(usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
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
    fn parse(name: &str) -> Option<Self> {
        Some(match name {
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

    fn read_le(self, b: &[u8]) -> f64 {
        match self {
            Scalar::I8 => b[0] as i8 as f64,
            Scalar::U8 => b[0] as f64,
            Scalar::I16 => i16::from_le_bytes([b[0], b[1]]) as f64,
            Scalar::U16 => u16::from_le_bytes([b[0], b[1]]) as f64,
            Scalar::I32 => i32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Scalar::U32 => u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Scalar::F32 => f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Scalar::F64 => f64::from_le_bytes(b[..8].try_into().unwrap()),
        }
    }

    fn is_float(self) -> bool {
        matches!(self, Scalar::F32 | Scalar::F64)
    }
}

#[derive(Clone, Debug)]
enum PropertyKind {
    Scalar(Scalar),
    List { count: Scalar, item: Scalar },
}

#[derive(Clone, Debug)]
struct Property {
    name: String,
    kind: PropertyKind,
}

#[derive(Clone, Debug)]
struct Element {
    name: String,
    count: usize,
    properties: Vec<Property>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PlyFormat {
    Ascii,
    BinaryLittleEndian,
}

struct Header {
    format: PlyFormat,
    elements: Vec<Element>,
    body_offset: usize,
}

fn parse_header(data: &[u8]) -> Result<Header, PlyError> {
    let bad = |line: usize, reason: &str| PlyError::MalformedHeader { line, reason: reason.to_string() };
    let mut offset = 0;
    let mut lineno = 0;
    let mut format = None;
    let mut elements: Vec<Element> = Vec::new();
    loop {
        let end = data[offset..]
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| bad(lineno + 1, "missing end_header"))?;
        let raw = &data[offset..offset + end];
        offset += end + 1;
        lineno += 1;
        let line = std::str::from_utf8(raw).map_err(|_| bad(lineno, "header is not UTF-8"))?;
        let line = line.trim_end_matches('\r').trim();
        let mut words = line.split_whitespace();
        let keyword = words.next().unwrap_or("");
        if lineno == 1 {
            if line != "ply" {
                return Err(bad(1, "missing `ply` magic"));
            }
            continue;
        }
        match keyword {
            "format" => {
                let f = match words.next() {
                    Some("ascii") => PlyFormat::Ascii,
                    Some("binary_little_endian") => PlyFormat::BinaryLittleEndian,
                    Some(other) => return Err(bad(lineno, &format!("unsupported format `{other}`"))),
                    None => return Err(bad(lineno, "format line without a format")),
                };
                format = Some(f);
            }
            "comment" | "obj_info" | "" => {}
            "element" => {
                let name = words.next().ok_or_else(|| bad(lineno, "element without a name"))?;
                let count = words
                    .next()
                    .and_then(|c| c.parse::<usize>().ok())
                    .ok_or_else(|| bad(lineno, "element without a valid count"))?;
                elements.push(Element { name: name.to_string(), count, properties: Vec::new() });
            }
            "property" => {
                let element = elements.last_mut().ok_or_else(|| bad(lineno, "property before any element"))?;
                let words: Vec<&str> = words.collect();
                let unsupported = |prop: &str, ty: &str| PlyError::UnsupportedProperty {
                    element: element.name.clone(),
                    property: prop.to_string(),
                    ty: ty.to_string(),
                };
                let property = match words.as_slice() {
                    ["list", count, item, name] => {
                        let c = Scalar::parse(count).ok_or_else(|| unsupported(name, count))?;
                        let i = Scalar::parse(item).ok_or_else(|| unsupported(name, item))?;
                        if c.is_float() {
                            return Err(unsupported(name, count));
                        }
                        Property { name: name.to_string(), kind: PropertyKind::List { count: c, item: i } }
                    }
                    [ty, name] => {
                        let s = Scalar::parse(ty).ok_or_else(|| unsupported(name, ty))?;
                        Property { name: name.to_string(), kind: PropertyKind::Scalar(s) }
                    }
                    _ => return Err(bad(lineno, "malformed property line")),
                };
                element.properties.push(property);
            }
            "end_header" => break,
            other => return Err(bad(lineno, &format!("unknown keyword `{other}`"))),
        }
    }
    let format = format.ok_or_else(|| bad(lineno, "missing format line"))?;
    Ok(Header { format, elements, body_offset: offset })
}

/// Column positions of the properties the reader cares about.
struct VertexLayout {
    xyz: [usize; 3],
    rgb: Option<[usize; 3]>,
}

fn vertex_layout(element: &Element) -> Result<VertexLayout, PlyError> {
    let find = |name: &str| element.properties.iter().position(|p| p.name == name);
    let mut xyz = [0; 3];
    for (a, name) in ["x", "y", "z"].iter().enumerate() {
        let idx = find(name).ok_or_else(|| PlyError::MalformedHeader {
            line: 0,
            reason: format!("vertex element has no `{name}` property"),
        })?;
        if let PropertyKind::List { .. } = element.properties[idx].kind {
            return Err(PlyError::UnsupportedProperty {
                element: element.name.clone(),
                property: name.to_string(),
                ty: "list".into(),
            });
        }
        xyz[a] = idx;
    }
    let rgb = match (find("red"), find("green"), find("blue")) {
        (Some(r), Some(g), Some(b)) => {
            for &i in &[r, g, b] {
                let p = &element.properties[i];
                if !matches!(p.kind, PropertyKind::Scalar(Scalar::U8)) {
                    let ty = match &p.kind {
                        PropertyKind::Scalar(s) => format!("{s:?}").to_lowercase(),
                        PropertyKind::List { .. } => "list".into(),
                    };
                    return Err(PlyError::UnsupportedProperty {
                        element: element.name.clone(),
                        property: p.name.clone(),
                        ty,
                    });
                }
            }
            Some([r, g, b])
        }
        _ => None,
    };
    Ok(VertexLayout { xyz, rgb })
}

/// Reads the `vertex` element of an ASCII or binary little-endian PLY file.
pub fn read_ply(path: impl AsRef<Path>) -> Result<PointCloud, PlyError> {
    let data = fs::read(path)?;
    parse_ply(&data)
}

pub fn parse_ply(data: &[u8]) -> Result<PointCloud, PlyError> {
    let header = parse_header(data)?;
    let vertex_idx = header
        .elements
        .iter()
        .position(|e| e.name == "vertex")
        .ok_or_else(|| PlyError::MalformedHeader { line: 0, reason: "no vertex element".into() })?;
    let layout = vertex_layout(&header.elements[vertex_idx])?;
    let body = &data[header.body_offset..];
    match header.format {
        PlyFormat::Ascii => read_ascii_body(body, &header.elements, vertex_idx, &layout),
        PlyFormat::BinaryLittleEndian => read_binary_body(body, &header.elements, vertex_idx, &layout),
    }
}

fn read_ascii_body(
    body: &[u8],
    elements: &[Element],
    vertex_idx: usize,
    layout: &VertexLayout,
) -> Result<PointCloud, PlyError> {
    let text = String::from_utf8_lossy(body);
    let mut tokens = text.split_ascii_whitespace();
    let mut cloud = PointCloud::default();
    let mut row_values: Vec<f64> = Vec::new();
    for (ei, element) in elements.iter().enumerate() {
        let is_vertex = ei == vertex_idx;
        if is_vertex {
            cloud.points.reserve(element.count);
            if layout.rgb.is_some() {
                cloud.colors = Some(Vec::with_capacity(element.count));
            }
        }
        for row in 0..element.count {
            row_values.clear();
            for prop in &element.properties {
                let mut next = || -> Result<f64, PlyError> {
                    let tok = tokens.next().ok_or_else(|| PlyError::Truncated {
                        element: element.name.clone(),
                        expected: element.count,
                        found: row,
                    })?;
                    tok.parse::<f64>().map_err(|_| PlyError::MalformedValue {
                        element: element.name.clone(),
                        row,
                        reason: format!("cannot parse `{tok}` as `{}`", prop.name),
                    })
                };
                match prop.kind {
                    PropertyKind::Scalar(_) => row_values.push(next()?),
                    PropertyKind::List { .. } => {
                        let n = next()?;
                        for _ in 0..n as usize {
                            next()?;
                        }
                        row_values.push(f64::NAN);
                    }
                }
            }
            if is_vertex {
                push_vertex(&mut cloud, &row_values, layout, &element.name, row)?;
            }
        }
    }
    Ok(cloud)
}

fn read_binary_body(
    body: &[u8],
    elements: &[Element],
    vertex_idx: usize,
    layout: &VertexLayout,
) -> Result<PointCloud, PlyError> {
    let mut pos = 0usize;
    let mut cloud = PointCloud::default();
    let mut row_values: Vec<f64> = Vec::new();
    for (ei, element) in elements.iter().enumerate() {
        let is_vertex = ei == vertex_idx;
        if is_vertex {
            cloud.points.reserve(element.count);
            if layout.rgb.is_some() {
                cloud.colors = Some(Vec::with_capacity(element.count));
            }
        }
        for row in 0..element.count {
            row_values.clear();
            let truncated = || PlyError::Truncated {
                element: element.name.clone(),
                expected: element.count,
                found: row,
            };
            for prop in &element.properties {
                match prop.kind {
                    PropertyKind::Scalar(s) => {
                        let bytes = body.get(pos..pos + s.size()).ok_or_else(truncated)?;
                        row_values.push(s.read_le(bytes));
                        pos += s.size();
                    }
                    PropertyKind::List { count, item } => {
                        let bytes = body.get(pos..pos + count.size()).ok_or_else(truncated)?;
                        let n = count.read_le(bytes);
                        if n < 0.0 {
                            return Err(PlyError::MalformedValue {
                                element: element.name.clone(),
                                row,
                                reason: "negative list length".into(),
                            });
                        }
                        pos += count.size() + n as usize * item.size();
                        if pos > body.len() {
                            return Err(truncated());
                        }
                        row_values.push(f64::NAN);
                    }
                }
            }
            if is_vertex {
                push_vertex(&mut cloud, &row_values, layout, &element.name, row)?;
            }
        }
    }
    if pos < body.len() {
        return Err(PlyError::TrailingData(body.len() - pos));
    }
    Ok(cloud)
}

fn push_vertex(
    cloud: &mut PointCloud,
    row: &[f64],
    layout: &VertexLayout,
    element: &str,
    index: usize,
) -> Result<(), PlyError> {
    cloud.points.push([row[layout.xyz[0]], row[layout.xyz[1]], row[layout.xyz[2]]]);
    if let (Some(rgb), Some(colors)) = (layout.rgb, cloud.colors.as_mut()) {
        let mut c = [0u8; 3];
        for a in 0..3 {
            let v = row[rgb[a]];
            if !(0.0..=255.0).contains(&v) || v.fract() != 0.0 {
                return Err(PlyError::MalformedValue {
                    element: element.to_string(),
                    row: index,
                    reason: format!("color component {v} is not a byte"),
                });
            }
            c[a] = v as u8;
        }
        colors.push(c);
    }
    Ok(())
}

/// Writes `cloud` as binary little-endian PLY.
///
/// Coordinates are stored as `float` when every value survives the f32 round
/// trip, `double` otherwise.
pub fn write_ply(cloud: &PointCloud, path: impl AsRef<Path>) -> Result<(), PlyError> {
    write_ply_as(cloud, path, PlyFormat::BinaryLittleEndian)
}

pub fn write_ply_as(cloud: &PointCloud, path: impl AsRef<Path>, format: PlyFormat) -> Result<(), PlyError> {
    let file = fs::File::create(path)?;
    let mut out = BufWriter::new(file);
    out.write_all(&encode_ply(cloud, format))?;
    out.flush()?;
    Ok(())
}

pub fn encode_ply(cloud: &PointCloud, format: PlyFormat) -> Vec<u8> {
    let single = cloud.points.iter().flatten().all(|&c| (c as f32) as f64 == c);
    let coord_ty = if single { "float" } else { "double" };
    let fmt_name = match format {
        PlyFormat::Ascii => "ascii",
        PlyFormat::BinaryLittleEndian => "binary_little_endian",
    };
    let mut header = format!("ply\nformat {fmt_name} 1.0\nelement vertex {}\n", cloud.len());
    for axis in ["x", "y", "z"] {
        header.push_str(&format!("property {coord_ty} {axis}\n"));
    }
    if cloud.colors.is_some() {
        header.push_str("property uchar red\nproperty uchar green\nproperty uchar blue\n");
    }
    header.push_str("end_header\n");
    let mut out = header.into_bytes();
    for (i, p) in cloud.points.iter().enumerate() {
        let color = cloud.colors.as_ref().map(|c| c[i]);
        match format {
            PlyFormat::Ascii => {
                let mut line = if single {
                    format!("{} {} {}", p[0] as f32, p[1] as f32, p[2] as f32)
                } else {
                    format!("{} {} {}", p[0], p[1], p[2])
                };
                if let Some(c) = color {
                    line.push_str(&format!(" {} {} {}", c[0], c[1], c[2]));
                }
                line.push('\n');
                out.extend_from_slice(line.as_bytes());
            }
            PlyFormat::BinaryLittleEndian => {
                for &c in p {
                    if single {
                        out.extend_from_slice(&(c as f32).to_le_bytes());
                    } else {
                        out.extend_from_slice(&c.to_le_bytes());
                    }
                }
                if let Some(c) = color {
                    out.extend_from_slice(&c);
                }
            }
        }
    }
    out
}
