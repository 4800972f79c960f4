//! ASCII OFF, OBJ and PLY readers plus an OFF/OBJ writer.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::Point3;

use super::mesh::TriMesh;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MeshFormat {
    Off,
    Obj,
    Ply,
}

impl MeshFormat {
    pub fn from_path(path: &Path) -> Option<Self> {
        let ext = path.extension()?.to_str()?.to_ascii_lowercase();
        match ext.as_str() {
            "off" => Some(MeshFormat::Off),
            "obj" => Some(MeshFormat::Obj),
            "ply" => Some(MeshFormat::Ply),
            _ => None,
        }
    }
}

/// Reads a mesh, picking the parser from the file extension.
pub fn load_mesh(path: &Path) -> Result<TriMesh> {
    let format = MeshFormat::from_path(path)
        .ok_or_else(|| Error::UnsupportedFormat(path.display().to_string()))?;
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let text = String::from_utf8(bytes).map_err(|_| Error::Parse {
        path: path.to_path_buf(),
        line: 0,
        msg: "file is not ASCII/UTF-8 text (binary formats are not supported)".into(),
    })?;
    parse_mesh(&text, format, path)
}

pub fn parse_mesh(text: &str, format: MeshFormat, path: &Path) -> Result<TriMesh> {
    match format {
        MeshFormat::Off => parse_off(text, path),
        MeshFormat::Obj => parse_obj(text, path),
        MeshFormat::Ply => parse_ply(text, path),
    }
}

/// Non-empty, non-comment lines with their 1-based line numbers.
fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines().enumerate().filter_map(|(i, raw)| {
        let line = raw.split('#').next().unwrap_or("").trim();
        (!line.is_empty()).then_some((i + 1, line))
    })
}

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse { path: path.to_path_buf(), line, msg: msg.into() }
}

fn numbers<T: std::str::FromStr>(tokens: &[&str], path: &Path, line: usize) -> Result<Vec<T>> {
    tokens
        .iter()
        .map(|t| t.parse::<T>().map_err(|_| parse_err(path, line, format!("cannot parse `{t}`"))))
        .collect()
}

fn check_mesh(vertices: Vec<Point3<f64>>, faces: Vec<[usize; 3]>, path: &Path) -> Result<TriMesh> {
    TriMesh::new(vertices, faces).map_err(|e| match e {
        Error::InvalidMesh(msg) => Error::InvalidMesh(format!("{}: {msg}", path.display())),
        other => other,
    })
}

pub fn parse_off(text: &str, path: &Path) -> Result<TriMesh> {
    let mut lines = content_lines(text);
    let (hline, header) = lines.next().ok_or_else(|| parse_err(path, 0, "empty file"))?;
    let mut tokens: Vec<&str> = header.split_whitespace().collect();
    if tokens[0] != "OFF" {
        return Err(parse_err(path, hline, format!("expected `OFF` header, found `{}`", tokens[0])));
    }
    tokens.remove(0);
    let (cline, counts) = if tokens.is_empty() {
        let (l, s) = lines.next().ok_or_else(|| parse_err(path, hline, "missing counts line"))?;
        (l, s.split_whitespace().collect::<Vec<_>>())
    } else {
        (hline, tokens)
    };
    if counts.len() < 2 {
        return Err(parse_err(path, cline, "counts line needs vertex and face counts"));
    }
    let counts: Vec<usize> = numbers(&counts[..2], path, cline)?;
    let (nv, nf) = (counts[0], counts[1]);

    let mut vertices = Vec::with_capacity(nv);
    for k in 0..nv {
        let (l, s) = lines
            .next()
            .ok_or_else(|| parse_err(path, cline, format!("declared {nv} vertices, found {k}")))?;
        let t: Vec<&str> = s.split_whitespace().collect();
        if t.len() != 3 {
            return Err(parse_err(path, l, format!("vertex line needs 3 coordinates, found {}", t.len())));
        }
        let c: Vec<f64> = numbers(&t, path, l)?;
        vertices.push(Point3::new(c[0], c[1], c[2]));
    }
    let mut faces = Vec::with_capacity(nf);
    for k in 0..nf {
        let (l, s) = lines
            .next()
            .ok_or_else(|| parse_err(path, cline, format!("declared {nf} faces, found {k}")))?;
        let t: Vec<usize> = numbers(&s.split_whitespace().collect::<Vec<_>>(), path, l)?;
        if t.first() != Some(&3) || t.len() != 4 {
            return Err(parse_err(path, l, "only triangle faces (`3 i j k`) are supported"));
        }
        if let Some(&bad) = t[1..].iter().find(|&&i| i >= nv) {
            return Err(parse_err(path, l, format!("face index {bad} out of range (0..{nv})")));
        }
        faces.push([t[1], t[2], t[3]]);
    }
    if let Some((l, _)) = lines.next() {
        return Err(parse_err(path, l, "trailing data after declared faces"));
    }
    check_mesh(vertices, faces, path)
}

pub fn parse_obj(text: &str, path: &Path) -> Result<TriMesh> {
    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    for (l, s) in content_lines(text) {
        let mut t = s.split_whitespace();
        match t.next() {
            Some("v") => {
                let c: Vec<f64> = numbers(&t.collect::<Vec<_>>(), path, l)?;
                if c.len() < 3 {
                    return Err(parse_err(path, l, "vertex needs 3 coordinates"));
                }
                vertices.push(Point3::new(c[0], c[1], c[2]));
            }
            Some("f") => {
                let refs: Vec<&str> = t.collect();
                if refs.len() != 3 {
                    return Err(parse_err(path, l, format!("only triangles are supported, face has {} vertices", refs.len())));
                }
                let mut face = [0usize; 3];
                for (slot, r) in face.iter_mut().zip(&refs) {
                    let idx_str = r.split('/').next().unwrap_or("");
                    let idx: i64 = idx_str
                        .parse()
                        .map_err(|_| parse_err(path, l, format!("cannot parse face index `{r}`")))?;
                    let n = vertices.len() as i64;
                    let zero_based = match idx {
                        i if i > 0 => i - 1,
                        i if i < 0 => n + i,
                        _ => return Err(parse_err(path, l, "OBJ indices are 1-based; found 0")),
                    };
                    if zero_based < 0 || zero_based >= n {
                        return Err(parse_err(path, l, format!("face index {idx} out of range")));
                    }
                    *slot = zero_based as usize;
                }
                faces.push(face);
            }
            _ => {}
        }
    }
    check_mesh(vertices, faces, path)
}

struct PlyElement {
    name: String,
    count: usize,
    props: Vec<String>,
    list_prop: bool,
}

pub fn parse_ply(text: &str, path: &Path) -> Result<TriMesh> {
    let mut lines = text.lines().enumerate().map(|(i, s)| (i + 1, s.trim()));
    match lines.next() {
        Some((_, "ply")) => {}
        _ => return Err(parse_err(path, 1, "missing `ply` magic")),
    }
    let mut elements: Vec<PlyElement> = Vec::new();
    let mut header_done = false;
    for (l, s) in lines.by_ref() {
        let t: Vec<&str> = s.split_whitespace().collect();
        match t.first().copied() {
            Some("format") => {
                if t.get(1) != Some(&"ascii") {
                    return Err(Error::UnsupportedFormat(format!(
                        "{}: binary PLY is not supported",
                        path.display()
                    )));
                }
            }
            Some("element") => {
                if t.len() != 3 {
                    return Err(parse_err(path, l, "malformed element line"));
                }
                elements.push(PlyElement {
                    name: t[1].to_string(),
                    count: numbers::<usize>(&t[2..3], path, l)?[0],
                    props: Vec::new(),
                    list_prop: false,
                });
            }
            Some("property") => {
                let el = elements
                    .last_mut()
                    .ok_or_else(|| parse_err(path, l, "property before any element"))?;
                if t.get(1) == Some(&"list") {
                    el.list_prop = true;
                }
                el.props.push(t.last().unwrap_or(&"").to_string());
            }
            Some("end_header") => {
                header_done = true;
                break;
            }
            _ => {}
        }
    }
    if !header_done {
        return Err(parse_err(path, 0, "missing end_header"));
    }

    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    let mut body = lines.filter(|(_, s)| !s.is_empty());
    let mut last_line = 0;
    for el in &elements {
        let xyz = ["x", "y", "z"].map(|n| el.props.iter().position(|p| p == n));
        for k in 0..el.count {
            let (l, s) = body.next().ok_or_else(|| {
                parse_err(path, last_line, format!("element `{}` declares {} rows, found {k}", el.name, el.count))
            })?;
            last_line = l;
            let t: Vec<&str> = s.split_whitespace().collect();
            match el.name.as_str() {
                "vertex" => {
                    let vals: Vec<f64> = numbers(&t, path, l)?;
                    let get = |i: Option<usize>| {
                        i.and_then(|i| vals.get(i).copied())
                            .ok_or_else(|| parse_err(path, l, "vertex row lacks x/y/z"))
                    };
                    vertices.push(Point3::new(get(xyz[0])?, get(xyz[1])?, get(xyz[2])?));
                }
                "face" if el.list_prop => {
                    let vals: Vec<usize> = numbers(&t, path, l)?;
                    if vals.first() != Some(&3) || vals.len() < 4 {
                        return Err(parse_err(path, l, "only triangle faces are supported"));
                    }
                    faces.push([vals[1], vals[2], vals[3]]);
                }
                _ => {}
            }
        }
    }
    let nv = vertices.len();
    if let Some(f) = faces.iter().find(|f| f.iter().any(|&i| i >= nv)) {
        return Err(Error::InvalidMesh(format!("{}: face {f:?} out of range", path.display())));
    }
    check_mesh(vertices, faces, path)
}

pub fn to_off_string(mesh: &TriMesh) -> String {
    let mut s = String::with_capacity(32 * (mesh.vertex_count() + mesh.face_count()));
    let _ = writeln!(s, "OFF\n{} {} 0", mesh.vertex_count(), mesh.face_count());
    for v in mesh.vertices() {
        let _ = writeln!(s, "{} {} {}", v.x, v.y, v.z);
    }
    for f in mesh.faces() {
        let _ = writeln!(s, "3 {} {} {}", f[0], f[1], f[2]);
    }
    s
}

pub fn to_obj_string(mesh: &TriMesh) -> String {
    let mut s = String::new();
    for v in mesh.vertices() {
        let _ = writeln!(s, "v {} {} {}", v.x, v.y, v.z);
    }
    for f in mesh.faces() {
        let _ = writeln!(s, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1);
    }
    s
}

/// Writes the mesh in the format implied by the extension (OFF or OBJ).
pub fn save_mesh(mesh: &TriMesh, path: &Path) -> Result<()> {
    let text = match MeshFormat::from_path(path) {
        Some(MeshFormat::Off) => to_off_string(mesh),
        Some(MeshFormat::Obj) => to_obj_string(mesh),
        _ => return Err(Error::UnsupportedFormat(path.display().to_string())),
    };
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}
