//! XYZ text and binary PLY point-cloud files, plus the small metadata block
//! (`pad`, `transform`) that `embed` hands to `restore`.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::{NormalizationTransform, Point3, PointCloud};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CloudFormat {
    Xyz,
    Ply,
}

impl CloudFormat {
    /// `.ply` selects PLY; anything else is XYZ.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("ply") => Self::Ply,
            _ => Self::Xyz,
        }
    }
}

/// Side information carried in file comments.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CloudMeta {
    /// Points appended to make the count divisible by the sampling rate.
    pub pad: usize,
    /// Normalization that maps the file's coordinates into the model frame.
    pub transform: Option<NormalizationTransform>,
}

impl CloudMeta {
    fn comment_lines(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.pad > 0 {
            out.push(format!("pad {}", self.pad));
        }
        if let Some(t) = &self.transform {
            out.push(format!(
                "transform {} {} {} {}",
                t.center[0], t.center[1], t.center[2], t.scale
            ));
        }
        out
    }

    /// Absorbs one comment; unknown comments are ignored.
    fn absorb(&mut self, comment: &str, path: &Path, line: usize) -> Result<()> {
        let mut words = comment.split_whitespace();
        let bad = |msg: &str| Error::Parse {
            path: path.to_path_buf(),
            line,
            msg: msg.to_string(),
        };
        match words.next() {
            Some("pad") => {
                self.pad = words
                    .next()
                    .and_then(|w| w.parse().ok())
                    .ok_or_else(|| bad("malformed pad comment"))?;
            }
            Some("transform") => {
                let v: Vec<f64> = words
                    .map(|w| w.parse::<f64>())
                    .collect::<Result<_, _>>()
                    .map_err(|_| bad("malformed transform comment"))?;
                if v.len() != 4 || !v.iter().all(|x| x.is_finite()) || v[3] <= 0.0 {
                    return Err(bad("transform needs cx cy cz scale with scale > 0"));
                }
                self.transform = Some(NormalizationTransform {
                    center: [v[0], v[1], v[2]],
                    scale: v[3],
                });
            }
            _ => {}
        }
        Ok(())
    }
}

pub fn read_cloud(path: &Path) -> Result<(PointCloud, CloudMeta)> {
    let bytes = std::fs::read(path)?;
    match CloudFormat::from_path(path) {
        CloudFormat::Xyz => parse_xyz(&bytes, path),
        CloudFormat::Ply => parse_ply(&bytes, path),
    }
}

pub fn write_cloud(path: &Path, cloud: &PointCloud, meta: &CloudMeta) -> Result<()> {
    let bytes = match CloudFormat::from_path(path) {
        CloudFormat::Xyz => xyz_string(cloud, meta).into_bytes(),
        CloudFormat::Ply => ply_bytes(cloud, meta),
    };
    std::fs::write(path, bytes)?;
    Ok(())
}

/// One `x y z` line per point at nine significant digits.
pub fn xyz_string(cloud: &PointCloud, meta: &CloudMeta) -> String {
    let mut out = String::new();
    for c in meta.comment_lines() {
        let _ = writeln!(out, "# {c}");
    }
    for p in cloud.points() {
        let _ = writeln!(out, "{:.8e} {:.8e} {:.8e}", p[0], p[1], p[2]);
    }
    out
}

pub fn parse_xyz(bytes: &[u8], path: &Path) -> Result<(PointCloud, CloudMeta)> {
    let text = std::str::from_utf8(bytes).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        line: 0,
        msg: format!("not UTF-8: {e}"),
    })?;
    let mut meta = CloudMeta::default();
    let mut points = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let trimmed = raw.trim();
        if let Some(comment) = trimmed.strip_prefix('#') {
            meta.absorb(comment, path, line)?;
            continue;
        }
        if trimmed.is_empty() {
            continue;
        }
        let fields: Vec<&str> = trimmed.split_whitespace().collect();
        let bad = |msg: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            msg,
        };
        if fields.len() != 3 {
            return Err(bad(format!("expected 3 coordinates, found {}", fields.len())));
        }
        let mut p = [0.0; 3];
        for (c, f) in p.iter_mut().zip(&fields) {
            *c = f
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| bad(format!("invalid coordinate `{f}`")))?;
        }
        points.push(p);
    }
    finish(points, meta, path)
}

fn finish(points: Vec<Point3>, meta: CloudMeta, path: &Path) -> Result<(PointCloud, CloudMeta)> {
    if points.is_empty() {
        return Err(Error::InvalidInput(format!(
            "{} contains no points",
            path.display()
        )));
    }
    Ok((PointCloud::new(points)?, meta))
}

/// Binary little-endian PLY with float32 `x y z` vertices.
pub fn ply_bytes(cloud: &PointCloud, meta: &CloudMeta) -> Vec<u8> {
    let mut header = String::from("ply\nformat binary_little_endian 1.0\n");
    for c in meta.comment_lines() {
        let _ = writeln!(header, "comment {c}");
    }
    let _ = write!(
        header,
        "element vertex {}\nproperty float x\nproperty float y\nproperty float z\nend_header\n",
        cloud.len()
    );
    let mut out = header.into_bytes();
    for p in cloud.points() {
        for c in p {
            out.extend_from_slice(&(*c as f32).to_le_bytes());
        }
    }
    out
}

fn ply_type_size(name: &str) -> Option<usize> {
    Some(match name {
        "char" | "uchar" | "int8" | "uint8" => 1,
        "short" | "ushort" | "int16" | "uint16" => 2,
        "int" | "uint" | "float" | "int32" | "uint32" | "float32" => 4,
        "double" | "float64" => 8,
        _ => return None,
    })
}

struct Element {
    name: String,
    count: usize,
    /// (name, type, byte size)
    props: Vec<(String, String, usize)>,
}

pub fn parse_ply(bytes: &[u8], path: &Path) -> Result<(PointCloud, CloudMeta)> {
    let bad = |line: usize, msg: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let mut pos = 0;
    let mut line_no = 0;
    let mut next_line = |pos: &mut usize| -> Option<(usize, String)> {
        let rest = &bytes[*pos..];
        let end = rest.iter().position(|&b| b == b'\n')?;
        let line = String::from_utf8_lossy(&rest[..end])
            .trim_end_matches('\r')
            .to_string();
        *pos += end + 1;
        line_no += 1;
        Some((line_no, line))
    };
    let mut meta = CloudMeta::default();
    let mut elements: Vec<Element> = Vec::new();
    match next_line(&mut pos) {
        Some((_, l)) if l.trim() == "ply" => {}
        _ => return Err(bad(1, "missing `ply` magic".into())),
    }
    let mut saw_format = false;
    loop {
        let Some((n, line)) = next_line(&mut pos) else {
            return Err(bad(line_no + 1, "header ends without end_header".into()));
        };
        let words: Vec<&str> = line.split_whitespace().collect();
        match words.as_slice() {
            ["end_header"] => break,
            ["format", "binary_little_endian", "1.0"] => saw_format = true,
            ["format", other, ..] => return Err(bad(n, format!("unsupported format `{other}`"))),
            ["comment", ..] => meta.absorb(line.trim_start()["comment".len()..].trim(), path, n)?,
            ["obj_info", ..] => {}
            ["element", name, count] => elements.push(Element {
                name: name.to_string(),
                count: count
                    .parse()
                    .map_err(|_| bad(n, format!("invalid count `{count}`")))?,
                props: Vec::new(),
            }),
            ["property", "list", ..] => return Err(bad(n, "list properties are not supported".into())),
            ["property", ty, name] => {
                let size = ply_type_size(ty).ok_or_else(|| bad(n, format!("unknown type `{ty}`")))?;
                elements
                    .last_mut()
                    .ok_or_else(|| bad(n, "property before element".into()))?
                    .props
                    .push((name.to_string(), ty.to_string(), size));
            }
            _ => return Err(bad(n, format!("unrecognized header line `{line}`"))),
        }
    }
    if !saw_format {
        return Err(bad(line_no, "missing format line".into()));
    }
    let mut body = &bytes[pos..];
    let mut points = None;
    for el in &elements {
        let stride: usize = el.props.iter().map(|p| p.2).sum();
        let size = el
            .count
            .checked_mul(stride)
            .filter(|&s| s <= body.len())
            .ok_or_else(|| bad(line_no, format!("element `{}` is truncated", el.name)))?;
        let (data, rest) = body.split_at(size);
        body = rest;
        if el.name != "vertex" {
            continue;
        }
        let mut offsets = [None; 3];
        let mut offset = 0;
        for (name, ty, s) in &el.props {
            if let Some(axis) = ["x", "y", "z"].iter().position(|a| a == name) {
                if ty != "float" && ty != "float32" {
                    return Err(bad(line_no, format!("property `{name}` must be float32")));
                }
                offsets[axis] = Some(offset);
            }
            offset += s;
        }
        let [Some(ox), Some(oy), Some(oz)] = offsets else {
            return Err(bad(line_no, "vertex element lacks x, y or z".into()));
        };
        let read = |row: &[u8], o: usize| f64::from(f32::from_le_bytes(row[o..o + 4].try_into().unwrap()));
        points = Some(
            data.chunks_exact(stride)
                .map(|row| [read(row, ox), read(row, oy), read(row, oz)])
                .collect::<Vec<_>>(),
        );
    }
    let points = points.ok_or_else(|| bad(line_no, "no vertex element".into()))?;
    if points.iter().flatten().any(|v| !v.is_finite()) {
        return Err(bad(line_no, "non-finite coordinate".into()));
    }
    finish(points, meta, path)
}
