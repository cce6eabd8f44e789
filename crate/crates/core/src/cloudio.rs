//! Point cloud loading and canonicalization.
//!
//! Reads PLY files in ASCII or binary little-endian encoding. Only the
//! `vertex` element is kept; any other element is parsed and skipped.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct PointCloud {
    pub positions: Vec<[f64; 3]>,
    /// RGB in `[0, 1]`.
    pub colors: Vec<[f64; 3]>,
    pub name: String,
}

impl PointCloud {
    pub fn new(positions: Vec<[f64; 3]>, colors: Vec<[f64; 3]>, name: impl Into<String>) -> Result<Self> {
        let pc = Self {
            positions,
            colors,
            name: name.into(),
        };
        pc.validate()?;
        Ok(pc)
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.positions.is_empty() {
            return Err(Error::Degenerate("point cloud has no points".into()));
        }
        if self.positions.len() != self.colors.len() {
            return Err(Error::shape(format!(
                "{} positions but {} colors",
                self.positions.len(),
                self.colors.len()
            )));
        }
        if let Some(i) = self.positions.iter().position(|p| p.iter().any(|v| !v.is_finite())) {
            return Err(Error::PlyData(format!("non-finite coordinate at point {i}")));
        }
        if let Some(i) = self
            .colors
            .iter()
            .position(|c| c.iter().any(|v| !(0.0..=1.0).contains(v)))
        {
            return Err(Error::PlyData(format!("color outside [0,1] at point {i}")));
        }
        Ok(())
    }

    /// Axis-aligned bounding box as (min, max).
    pub fn bounds(&self) -> ([f64; 3], [f64; 3]) {
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for p in &self.positions {
            for a in 0..3 {
                lo[a] = lo[a].min(p[a]);
                hi[a] = hi[a].max(p[a]);
            }
        }
        (lo, hi)
    }
}

/// Center the bounding box at the origin and scale uniformly so the longest
/// axis spans `[-1, 1]`.
pub fn canonicalize(pc: &PointCloud) -> Result<PointCloud> {
    if pc.is_empty() {
        return Err(Error::Degenerate("point cloud has no points".into()));
    }
    let (lo, hi) = pc.bounds();
    let extent = (0..3).map(|a| hi[a] - lo[a]).fold(0.0, f64::max);
    if !(extent > 0.0) {
        return Err(Error::Degenerate("all points coincide".into()));
    }
    let center = [0, 1, 2].map(|a| 0.5 * (lo[a] + hi[a]));
    let scale = 2.0 / extent;
    let positions = pc
        .positions
        .iter()
        .map(|p| [0, 1, 2].map(|a| (p[a] - center[a]) * scale))
        .collect();
    Ok(PointCloud {
        positions,
        colors: pc.colors.clone(),
        name: pc.name.clone(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PlyFormat {
    Ascii,
    BinaryLittleEndian,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum ScalarType {
    I8,
    U8,
    I16,
    U16,
    I32,
    U32,
    F32,
    F64,
}

impl ScalarType {
    fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "char" | "int8" => Self::I8,
            "uchar" | "uint8" => Self::U8,
            "short" | "int16" => Self::I16,
            "ushort" | "uint16" => Self::U16,
            "int" | "int32" => Self::I32,
            "uint" | "uint32" => Self::U32,
            "float" | "float32" => Self::F32,
            "double" | "float64" => Self::F64,
            _ => return None,
        })
    }

    fn size(self) -> usize {
        match self {
            Self::I8 | Self::U8 => 1,
            Self::I16 | Self::U16 => 2,
            Self::I32 | Self::U32 | Self::F32 => 4,
            Self::F64 => 8,
        }
    }

    fn is_float(self) -> bool {
        matches!(self, Self::F32 | Self::F64)
    }

    /// Full-scale value used to map unsigned integer colors into `[0, 1]`.
    fn color_scale(self) -> f64 {
        match self {
            Self::U16 => 65535.0,
            _ => 255.0,
        }
    }

    fn read_le(self, b: &[u8]) -> f64 {
        match self {
            Self::I8 => b[0] as i8 as f64,
            Self::U8 => b[0] as f64,
            Self::I16 => i16::from_le_bytes([b[0], b[1]]) as f64,
            Self::U16 => u16::from_le_bytes([b[0], b[1]]) as f64,
            Self::I32 => i32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Self::U32 => u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Self::F32 => f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Self::F64 => f64::from_le_bytes(b[..8].try_into().unwrap()),
        }
    }
}

#[derive(Clone, Debug)]
enum Property {
    Scalar(ScalarType, String),
    List { count: ScalarType, item: ScalarType },
}

#[derive(Clone, Debug)]
struct Element {
    name: String,
    count: usize,
    props: Vec<Property>,
}

struct Header {
    format: PlyFormat,
    elements: Vec<Element>,
    /// Byte offset of the body.
    body_start: usize,
    /// Number of header lines, for line numbers in ASCII body errors.
    lines: usize,
}

fn header_err(line: usize, message: impl Into<String>) -> Error {
    Error::PlyParse {
        line,
        message: message.into(),
    }
}

fn parse_header(bytes: &[u8]) -> Result<Header> {
    let mut pos = 0;
    let mut line_no = 0;
    let mut format = None;
    let mut elements: Vec<Element> = Vec::new();
    loop {
        let Some(nl) = bytes[pos..].iter().position(|&b| b == b'\n') else {
            return Err(header_err(line_no + 1, "header ended without end_header"));
        };
        line_no += 1;
        let raw = &bytes[pos..pos + nl];
        pos += nl + 1;
        let line = std::str::from_utf8(raw)
            .map_err(|_| header_err(line_no, "header line is not valid UTF-8"))?
            .trim_end_matches('\r')
            .trim();
        let mut tok = line.split_whitespace();
        let keyword = tok.next().unwrap_or("");
        if line_no == 1 {
            if line != "ply" {
                return Err(header_err(1, format!("expected magic `ply`, found `{line}`")));
            }
            continue;
        }
        match keyword {
            "format" => {
                let kind = tok.next().unwrap_or("");
                format = Some(match kind {
                    "ascii" => PlyFormat::Ascii,
                    "binary_little_endian" => PlyFormat::BinaryLittleEndian,
                    other => {
                        return Err(header_err(line_no, format!("unsupported format `{other}`")));
                    }
                });
            }
            "comment" | "obj_info" | "" => {}
            "element" => {
                let name = tok
                    .next()
                    .ok_or_else(|| header_err(line_no, "element without a name"))?;
                let count = tok
                    .next()
                    .and_then(|c| c.parse::<usize>().ok())
                    .ok_or_else(|| header_err(line_no, format!("bad element count in `{line}`")))?;
                elements.push(Element {
                    name: name.to_string(),
                    count,
                    props: Vec::new(),
                });
            }
            "property" => {
                let element = elements
                    .last_mut()
                    .ok_or_else(|| header_err(line_no, "property before any element"))?;
                let ty = tok.next().unwrap_or("");
                if ty == "list" {
                    let count = tok.next().and_then(ScalarType::parse);
                    let item = tok.next().and_then(ScalarType::parse);
                    match (count, item, tok.next()) {
                        (Some(count), Some(item), Some(_)) => {
                            element.props.push(Property::List { count, item })
                        }
                        _ => return Err(header_err(line_no, format!("malformed list property `{line}`"))),
                    }
                } else {
                    let ty = ScalarType::parse(ty)
                        .ok_or_else(|| header_err(line_no, format!("unknown property type `{ty}`")))?;
                    let name = tok
                        .next()
                        .ok_or_else(|| header_err(line_no, "property without a name"))?;
                    element.props.push(Property::Scalar(ty, name.to_string()));
                }
            }
            "end_header" => break,
            other => return Err(header_err(line_no, format!("unknown header keyword `{other}`"))),
        }
    }
    let format = format.ok_or_else(|| header_err(line_no, "missing format line"))?;
    Ok(Header {
        format,
        elements,
        body_start: pos,
        lines: line_no,
    })
}

/// Column indices of the properties we need inside the vertex element.
struct VertexLayout {
    xyz: [usize; 3],
    rgb: [usize; 3],
    rgb_type: ScalarType,
}

fn vertex_layout(el: &Element) -> Result<VertexLayout> {
    let find = |name: &str| {
        el.props.iter().position(|p| matches!(p, Property::Scalar(_, n) if n == name))
    };
    let mut xyz = [0; 3];
    for (slot, axis) in xyz.iter_mut().zip(["x", "y", "z"]) {
        *slot = find(axis).ok_or_else(|| Error::PlyData(format!("vertex element lacks `{axis}`")))?;
    }
    let rgb = match (find("red"), find("green"), find("blue")) {
        (Some(r), Some(g), Some(b)) => [r, g, b],
        _ => match (find("r"), find("g"), find("b")) {
            (Some(r), Some(g), Some(b)) => [r, g, b],
            _ => {
                return Err(Error::PlyData(
                    "vertex element has no color properties (red/green/blue or r/g/b)".into(),
                ))
            }
        },
    };
    let types: Vec<ScalarType> = rgb
        .iter()
        .map(|&i| match &el.props[i] {
            Property::Scalar(t, _) => *t,
            Property::List { .. } => unreachable!(),
        })
        .collect();
    if types.iter().any(|t| *t != types[0]) {
        return Err(Error::PlyData("color channels have mixed types".into()));
    }
    Ok(VertexLayout {
        xyz,
        rgb,
        rgb_type: types[0],
    })
}

fn to_unit_color(v: f64, ty: ScalarType) -> Result<f64> {
    let c = if ty.is_float() { v } else { v / ty.color_scale() };
    if !(0.0..=1.0).contains(&c) {
        return Err(Error::PlyData(format!("color value {v} outside the representable range")));
    }
    Ok(c)
}

pub fn load_ply(path: impl AsRef<Path>) -> Result<PointCloud> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    parse_ply(&bytes, name)
}

pub fn parse_ply(bytes: &[u8], name: impl Into<String>) -> Result<PointCloud> {
    let header = parse_header(bytes)?;
    let vertex_idx = header
        .elements
        .iter()
        .position(|e| e.name == "vertex")
        .ok_or_else(|| Error::PlyData("no vertex element".into()))?;
    let layout = vertex_layout(&header.elements[vertex_idx])?;
    let body = &bytes[header.body_start..];
    let rows = match header.format {
        PlyFormat::Ascii => read_ascii(body, &header, vertex_idx)?,
        PlyFormat::BinaryLittleEndian => read_binary(body, &header, vertex_idx)?,
    };
    let mut positions = Vec::with_capacity(rows.len());
    let mut colors = Vec::with_capacity(rows.len());
    for row in &rows {
        positions.push(layout.xyz.map(|i| row[i]));
        let mut c = [0.0; 3];
        for (slot, &i) in c.iter_mut().zip(&layout.rgb) {
            *slot = to_unit_color(row[i], layout.rgb_type)?;
        }
        colors.push(c);
    }
    PointCloud::new(positions, colors, name)
}

/// Scalar rows of the vertex element; list properties are skipped.
fn read_ascii(body: &[u8], header: &Header, vertex_idx: usize) -> Result<Vec<Vec<f64>>> {
    let text = std::str::from_utf8(body).map_err(|_| Error::PlyData("ascii body is not UTF-8".into()))?;
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (header.lines + i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty());
    let mut vertices = Vec::new();
    for (ei, el) in header.elements.iter().enumerate() {
        for n in 0..el.count {
            let Some((line_no, line)) = lines.next() else {
                return Err(Error::PlyData(format!(
                    "element `{}` declares {} entries but the file ends after {}",
                    el.name, el.count, n
                )));
            };
            let mut tok = line.split_whitespace();
            let mut row = Vec::with_capacity(el.props.len());
            for prop in &el.props {
                let mut next = || -> Result<f64> {
                    let t = tok
                        .next()
                        .ok_or_else(|| header_err(line_no, format!("too few values in `{line}`")))?;
                    t.parse::<f64>()
                        .map_err(|_| header_err(line_no, format!("cannot parse `{t}` as a number")))
                };
                match prop {
                    Property::Scalar(..) => row.push(next()?),
                    Property::List { .. } => {
                        let count = next()? as usize;
                        for _ in 0..count {
                            next()?;
                        }
                        row.push(f64::NAN);
                    }
                }
            }
            if tok.next().is_some() {
                return Err(header_err(line_no, format!("too many values in `{line}`")));
            }
            if ei == vertex_idx {
                vertices.push(row);
            }
        }
    }
    Ok(vertices)
}

fn read_binary(body: &[u8], header: &Header, vertex_idx: usize) -> Result<Vec<Vec<f64>>> {
    let mut pos = 0;
    let mut vertices = Vec::new();
    let take = |pos: &mut usize, n: usize, el: &Element, i: usize| -> Result<std::ops::Range<usize>> {
        if *pos + n > body.len() {
            return Err(Error::PlyData(format!(
                "element `{}` declares {} entries but the file ends inside entry {}",
                el.name, el.count, i
            )));
        }
        let r = *pos..*pos + n;
        *pos += n;
        Ok(r)
    };
    for (ei, el) in header.elements.iter().enumerate() {
        for i in 0..el.count {
            let mut row = Vec::with_capacity(el.props.len());
            for prop in &el.props {
                match prop {
                    Property::Scalar(t, _) => {
                        let r = take(&mut pos, t.size(), el, i)?;
                        row.push(t.read_le(&body[r]));
                    }
                    Property::List { count, item } => {
                        let r = take(&mut pos, count.size(), el, i)?;
                        let n = count.read_le(&body[r]) as usize;
                        take(&mut pos, n * item.size(), el, i)?;
                        row.push(f64::NAN);
                    }
                }
            }
            if ei == vertex_idx {
                vertices.push(row);
            }
        }
    }
    Ok(vertices)
}

/// How colors are stored by [`write_ply`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ColorEncoding {
    /// `uchar red/green/blue`, quantized to 1/255.
    Uchar,
    /// `double r/g/b`, lossless.
    Double,
}

pub fn write_ply(
    pc: &PointCloud,
    path: impl AsRef<Path>,
    format: PlyFormat,
    colors: ColorEncoding,
) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_ply(pc, format, colors);
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn encode_ply(pc: &PointCloud, format: PlyFormat, colors: ColorEncoding) -> Vec<u8> {
    let mut out = Vec::new();
    let fmt = match format {
        PlyFormat::Ascii => "ascii",
        PlyFormat::BinaryLittleEndian => "binary_little_endian",
    };
    let (cty, cnames) = match colors {
        ColorEncoding::Uchar => ("uchar", ["red", "green", "blue"]),
        ColorEncoding::Double => ("double", ["r", "g", "b"]),
    };
    writeln!(out, "ply\nformat {fmt} 1.0\ncomment afqnet\nelement vertex {}", pc.len()).unwrap();
    for axis in ["x", "y", "z"] {
        writeln!(out, "property double {axis}").unwrap();
    }
    for c in cnames {
        writeln!(out, "property {cty} {c}").unwrap();
    }
    writeln!(out, "end_header").unwrap();
    let quant = |v: f64| (v * 255.0).round().clamp(0.0, 255.0) as u8;
    for (p, c) in pc.positions.iter().zip(&pc.colors) {
        match format {
            PlyFormat::Ascii => {
                // `{:?}` prints the shortest representation that round-trips.
                write!(out, "{:?} {:?} {:?}", p[0], p[1], p[2]).unwrap();
                match colors {
                    ColorEncoding::Uchar => writeln!(out, " {} {} {}", quant(c[0]), quant(c[1]), quant(c[2])),
                    ColorEncoding::Double => writeln!(out, " {:?} {:?} {:?}", c[0], c[1], c[2]),
                }
                .unwrap();
            }
            PlyFormat::BinaryLittleEndian => {
                for v in p {
                    out.extend_from_slice(&v.to_le_bytes());
                }
                for &v in c {
                    match colors {
                        ColorEncoding::Uchar => out.push(quant(v)),
                        ColorEncoding::Double => out.extend_from_slice(&v.to_le_bytes()),
                    }
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const RGB_ASCII: &str = "ply\nformat ascii 1.0\nelement vertex 3\nproperty float x\nproperty float y\nproperty float z\nproperty uchar red\nproperty uchar green\nproperty uchar blue\nend_header\n0 0 0 255 0 0\n1 0 0 0 255 0\n0 1 0 0 0 255\n";

    #[test]
    fn ascii_colors_rescaled() {
        let pc = parse_ply(RGB_ASCII.as_bytes(), "t").unwrap();
        assert_eq!(pc.colors, vec![[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]);
        assert_eq!(pc.positions[1], [1.0, 0.0, 0.0]);
    }

    #[test]
    fn binary_matches_ascii() {
        let ascii = parse_ply(RGB_ASCII.as_bytes(), "t").unwrap();
        let bin = encode_ply(&ascii, PlyFormat::BinaryLittleEndian, ColorEncoding::Uchar);
        let back = parse_ply(&bin, "t").unwrap();
        assert_eq!(ascii, back);
    }

    #[test]
    fn truncated_ascii_body_is_an_error() {
        let mut text = String::from(
            "ply\nformat ascii 1.0\nelement vertex 10\nproperty float x\nproperty float y\nproperty float z\nproperty uchar red\nproperty uchar green\nproperty uchar blue\nend_header\n",
        );
        for i in 0..9 {
            text.push_str(&format!("{i} 0 0 1 2 3\n"));
        }
        let err = parse_ply(text.as_bytes(), "t").unwrap_err();
        assert!(matches!(err, Error::PlyData(_)), "{err}");
        assert!(err.to_string().contains("declares 10"));
    }

    #[test]
    fn truncated_binary_body_is_an_error() {
        let pc = parse_ply(RGB_ASCII.as_bytes(), "t").unwrap();
        let mut bin = encode_ply(&pc, PlyFormat::BinaryLittleEndian, ColorEncoding::Uchar);
        bin.truncate(bin.len() - 5);
        assert!(matches!(parse_ply(&bin, "t"), Err(Error::PlyData(_))));
    }

    #[test]
    fn malformed_header_names_the_line() {
        let text = "ply\nformat ascii 1.0\nelement vertex three\nend_header\n";
        match parse_ply(text.as_bytes(), "t") {
            Err(Error::PlyParse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
        let text = "ply\nformat ascii 1.0\nelement vertex 1\nproperty quaternion x\nend_header\n";
        match parse_ply(text.as_bytes(), "t") {
            Err(Error::PlyParse { line, message }) => {
                assert_eq!(line, 4);
                assert!(message.contains("quaternion"));
            }
            other => panic!("unexpected {other:?}"),
        }
        let text = "plx\n";
        assert!(matches!(parse_ply(text.as_bytes(), "t"), Err(Error::PlyParse { line: 1, .. })));
    }

    #[test]
    fn colorless_cloud_rejected() {
        let text = "ply\nformat ascii 1.0\nelement vertex 1\nproperty float x\nproperty float y\nproperty float z\nend_header\n0 0 0\n";
        let err = parse_ply(text.as_bytes(), "t").unwrap_err();
        assert!(err.to_string().contains("no color"), "{err}");
    }

    #[test]
    fn float_rgb_and_extra_elements() {
        let text = "ply\nformat ascii 1.0\ncomment x\nelement vertex 2\nproperty double x\nproperty double y\nproperty double z\nproperty float r\nproperty float g\nproperty float b\nproperty float nx\nelement face 1\nproperty list uchar int vertex_indices\nend_header\n0 0 0 0.5 0.25 1 9\n1 2 3 0 0 0 9\n3 0 1 1\n";
        let pc = parse_ply(text.as_bytes(), "t").unwrap();
        assert_eq!(pc.colors[0], [0.5, 0.25, 1.0]);
        assert_eq!(pc.positions[1], [1.0, 2.0, 3.0]);
    }

    #[test]
    fn canonicalize_unit_cube() {
        let mut pos = Vec::new();
        for i in 0..8 {
            pos.push([10.0 + (i & 1) as f64, 10.0 + ((i >> 1) & 1) as f64, 10.0 + ((i >> 2) & 1) as f64]);
        }
        let pc = PointCloud::new(pos, vec![[0.5; 3]; 8], "cube").unwrap();
        let c = canonicalize(&pc).unwrap();
        for p in &c.positions {
            for v in p {
                assert!((v.abs() - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn canonicalize_keeps_aspect_ratio() {
        let pc = PointCloud::new(
            vec![[0.0, 0.0, 0.0], [4.0, 2.0, 2.0]],
            vec![[0.0; 3]; 2],
            "box",
        )
        .unwrap();
        let c = canonicalize(&pc).unwrap();
        let (lo, hi) = c.bounds();
        let ext: Vec<f64> = (0..3).map(|a| hi[a] - lo[a]).collect();
        assert_eq!(ext, vec![2.0, 1.0, 1.0]);
        assert_eq!(c.colors, pc.colors);
    }

    #[test]
    fn canonicalize_rejects_degenerate() {
        let pc = PointCloud::new(vec![[1.0, 2.0, 3.0]; 4], vec![[0.0; 3]; 4], "p").unwrap();
        assert!(matches!(canonicalize(&pc), Err(Error::Degenerate(_))));
    }

    fn cloud_strategy() -> impl Strategy<Value = PointCloud> {
        prop::collection::vec(
            (prop::array::uniform3(-50.0f64..50.0), prop::array::uniform3(0.0f64..=1.0)),
            2..40,
        )
        .prop_filter("non-degenerate", |pts| {
            pts.iter().any(|(p, _)| (0..3).any(|a| (p[a] - pts[0].0[a]).abs() > 1e-3))
        })
        .prop_map(|pts| {
            let (p, c): (Vec<_>, Vec<_>) = pts.into_iter().unzip();
            PointCloud::new(p, c, "prop").unwrap()
        })
    }

    proptest! {
        #[test]
        fn ply_round_trip(pc in cloud_strategy(), binary in any::<bool>()) {
            let format = if binary { PlyFormat::BinaryLittleEndian } else { PlyFormat::Ascii };
            let back = parse_ply(&encode_ply(&pc, format, ColorEncoding::Double), "prop").unwrap();
            for (a, b) in pc.positions.iter().zip(&back.positions) {
                for k in 0..3 { prop_assert!((a[k] - b[k]).abs() <= 1e-6); }
            }
            for (a, b) in pc.colors.iter().zip(&back.colors) {
                for k in 0..3 { prop_assert!((a[k] - b[k]).abs() <= 1e-6); }
            }
        }

        #[test]
        fn canonicalize_idempotent_and_similarity_invariant(
            pc in cloud_strategy(),
            scale in 0.01f64..100.0,
            shift in prop::array::uniform3(-100.0f64..100.0),
        ) {
            let c1 = canonicalize(&pc).unwrap();
            let c2 = canonicalize(&c1).unwrap();
            let moved = PointCloud {
                positions: pc.positions.iter().map(|p| [0, 1, 2].map(|a| scale * p[a] + shift[a])).collect(),
                ..pc.clone()
            };
            let c3 = canonicalize(&moved).unwrap();
            for ((a, b), c) in c1.positions.iter().zip(&c2.positions).zip(&c3.positions) {
                for k in 0..3 {
                    prop_assert!((a[k] - b[k]).abs() <= 1e-6);
                    prop_assert!((a[k] - c[k]).abs() <= 1e-6);
                }
            }
            let (lo, hi) = c1.bounds();
            let ext = (0..3).map(|a| hi[a] - lo[a]).fold(0.0, f64::max);
            prop_assert!((ext - 2.0).abs() < 1e-9);
            for a in 0..3 { prop_assert!((lo[a] + hi[a]).abs() < 1e-9); }
        }
    }
}
