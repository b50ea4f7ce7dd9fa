//! Text formats: OBJ/OFF meshes, site files, breakline files and an OBJ writer.
//!
//! Site records, one per line:
//!
//! ```text
//! p <face> <b1> <b2> <b3> [w]        point site in barycentric coordinates
//! c <x1> <y1> <z1> <x2> ... [w]      polyline site, optional trailing weight
//! ```
//!
//! Breakline files use the `c` record without a weight. Blank lines and
//! lines starting with `#` are ignored.

use std::fmt::Write as _;
use std::path::Path;

use crate::mesh::{MeshError, TriangleMesh, Vec3};
use crate::solvers::{SiteGeometry, SiteSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MeshFormat {
    Obj,
    Off,
}

impl MeshFormat {
    pub fn from_path(path: &Path) -> Option<Self> {
        let ext = path.extension()?.to_str()?.to_ascii_lowercase();
        match ext.as_str() {
            "obj" => Some(Self::Obj),
            "off" => Some(Self::Off),
            _ => None,
        }
    }
}

pub fn load_mesh(path: &Path, format: MeshFormat) -> Result<TriangleMesh, MeshError> {
    let text = std::fs::read_to_string(path)?;
    match format {
        MeshFormat::Obj => parse_obj(&text),
        MeshFormat::Off => parse_off(&text),
    }
}

fn parse_err(line: usize, message: impl Into<String>) -> MeshError {
    MeshError::Parse {
        line,
        message: message.into(),
    }
}

fn parse_f64(tok: &str, line: usize) -> Result<f64, MeshError> {
    tok.parse::<f64>()
        .map_err(|_| parse_err(line, format!("expected a number, found `{tok}`")))
}

fn fan(poly: &[usize], faces: &mut Vec<[usize; 3]>) {
    for k in 1..poly.len() - 1 {
        faces.push([poly[0], poly[k], poly[k + 1]]);
    }
}

pub fn parse_obj(text: &str) -> Result<TriangleMesh, MeshError> {
    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let lineno = i + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        let mut toks = line.split_whitespace();
        match toks.next() {
            Some("v") => {
                let c: Vec<f64> = toks
                    .take(3)
                    .map(|t| parse_f64(t, lineno))
                    .collect::<Result<_, _>>()?;
                if c.len() != 3 {
                    return Err(parse_err(lineno, "vertex needs three coordinates"));
                }
                vertices.push(Vec3::new(c[0], c[1], c[2]));
            }
            Some("f") => {
                let mut poly = Vec::new();
                for t in toks {
                    let idx = t.split('/').next().unwrap_or("");
                    let k: i64 = idx
                        .parse()
                        .map_err(|_| parse_err(lineno, format!("bad face index `{t}`")))?;
                    let resolved = if k > 0 {
                        k - 1
                    } else if k < 0 {
                        vertices.len() as i64 + k
                    } else {
                        return Err(parse_err(lineno, "face index 0 is invalid in OBJ"));
                    };
                    if resolved < 0 {
                        return Err(parse_err(lineno, format!("face index `{t}` out of range")));
                    }
                    poly.push(resolved as usize);
                }
                if poly.len() < 3 {
                    return Err(parse_err(lineno, "face needs at least three vertices"));
                }
                fan(&poly, &mut faces);
            }
            _ => {}
        }
    }
    TriangleMesh::new(vertices, faces)
}

pub fn parse_off(text: &str) -> Result<TriangleMesh, MeshError> {
    // tokens with their line numbers, comments stripped
    let mut toks = text.lines().enumerate().flat_map(|(i, l)| {
        l.split('#')
            .next()
            .unwrap_or("")
            .split_whitespace()
            .map(move |t| (i + 1, t))
    });
    let (l0, header) = toks.next().ok_or_else(|| parse_err(1, "empty file"))?;
    let mut pending = None;
    if header != "OFF" {
        if let Some(rest) = header.strip_prefix("OFF") {
            pending = Some((l0, rest));
        } else {
            return Err(parse_err(l0, "missing OFF header"));
        }
    }
    let mut next = |what: &str| -> Result<(usize, &str), MeshError> {
        if let Some(p) = pending.take() {
            return Ok(p);
        }
        toks.next()
            .ok_or_else(|| parse_err(0, format!("unexpected end of file, expected {what}")))
    };
    fn as_count((l, t): (usize, &str), what: &str) -> Result<usize, MeshError> {
        t.parse::<usize>()
            .map_err(|_| parse_err(l, format!("expected {what}, found `{t}`")))
    }
    let nv = as_count(next("vertex count")?, "vertex count")?;
    let nf = as_count(next("face count")?, "face count")?;
    let _ne = as_count(next("edge count")?, "edge count")?;
    let mut vertices = Vec::with_capacity(nv);
    for _ in 0..nv {
        let mut c = [0.0; 3];
        for slot in &mut c {
            let (l, t) = next("coordinate")?;
            *slot = parse_f64(t, l)?;
        }
        vertices.push(Vec3::new(c[0], c[1], c[2]));
    }
    let mut faces = Vec::with_capacity(nf);
    for _ in 0..nf {
        let k = as_count(next("polygon size")?, "polygon size")?;
        if k < 3 {
            return Err(parse_err(0, "polygon needs at least three vertices"));
        }
        let mut poly = Vec::with_capacity(k);
        for _ in 0..k {
            poly.push(as_count(next("vertex index")?, "vertex index")?);
        }
        fan(&poly, &mut faces);
    }
    TriangleMesh::new(vertices, faces)
}

/// Serializes a mesh as OBJ.
pub fn mesh_to_obj(mesh: &TriangleMesh) -> String {
    let mut w = ObjWriter::new();
    let ids: Vec<usize> = mesh.vertices().iter().map(|v| w.vertex(v)).collect();
    for f in mesh.faces() {
        w.face(&[ids[f[0]], ids[f[1]], ids[f[2]]]);
    }
    w.finish()
}

/// Incremental OBJ text builder with 1-based vertex numbering.
#[derive(Debug, Default)]
pub struct ObjWriter {
    out: String,
    vertices: usize,
}

impl ObjWriter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn comment(&mut self, text: &str) {
        let _ = writeln!(self.out, "# {text}");
    }

    pub fn mtllib(&mut self, name: &str) {
        let _ = writeln!(self.out, "mtllib {name}");
    }

    pub fn group(&mut self, name: &str) {
        let _ = writeln!(self.out, "g {name}");
    }

    pub fn usemtl(&mut self, name: &str) {
        let _ = writeln!(self.out, "usemtl {name}");
    }

    /// Emits a vertex and returns its 1-based index.
    pub fn vertex(&mut self, p: &Vec3) -> usize {
        let _ = writeln!(self.out, "v {} {} {}", p.x, p.y, p.z);
        self.vertices += 1;
        self.vertices
    }

    pub fn face(&mut self, idx: &[usize]) {
        self.element('f', idx);
    }

    pub fn line(&mut self, idx: &[usize]) {
        self.element('l', idx);
    }

    fn element(&mut self, tag: char, idx: &[usize]) {
        self.out.push(tag);
        for i in idx {
            let _ = write!(self.out, " {i}");
        }
        self.out.push('\n');
    }

    pub fn finish(self) -> String {
        self.out
    }
}

#[derive(Debug, thiserror::Error)]
#[error("line {line}: {message}")]
pub struct RecordError {
    pub line: usize,
    pub message: String,
}

fn rec_err(line: usize, message: impl Into<String>) -> RecordError {
    RecordError {
        line,
        message: message.into(),
    }
}

fn numbers(toks: &[&str], line: usize) -> Result<Vec<f64>, RecordError> {
    toks.iter()
        .map(|t| {
            t.parse::<f64>()
                .map_err(|_| rec_err(line, format!("expected a number, found `{t}`")))
        })
        .collect()
}

fn polyline(values: &[f64], line: usize) -> Result<Vec<Vec3>, RecordError> {
    if values.len() < 6 || values.len() % 3 != 0 {
        return Err(rec_err(line, "polyline needs at least two 3D points"));
    }
    Ok(values
        .chunks(3)
        .map(|c| Vec3::new(c[0], c[1], c[2]))
        .collect())
}

fn records(text: &str) -> impl Iterator<Item = (usize, Vec<&str>)> {
    text.lines().enumerate().filter_map(|(i, l)| {
        let l = l.split('#').next().unwrap_or("").trim();
        (!l.is_empty()).then(|| (i + 1, l.split_whitespace().collect()))
    })
}

pub fn parse_sites(text: &str) -> Result<Vec<SiteSpec>, RecordError> {
    let mut out = Vec::new();
    for (line, toks) in records(text) {
        match toks[0] {
            "p" => {
                let v = numbers(&toks[1..], line)?;
                if v.len() != 4 && v.len() != 5 {
                    return Err(rec_err(line, "point record is `p face b1 b2 b3 [w]`"));
                }
                if v[0] < 0.0 || v[0].fract() != 0.0 {
                    return Err(rec_err(line, "face id must be a nonnegative integer"));
                }
                out.push(SiteSpec {
                    geometry: SiteGeometry::Point {
                        face: v[0] as usize,
                        bary: [v[1], v[2], v[3]],
                    },
                    weight: v.get(4).copied().unwrap_or(0.0),
                });
            }
            "c" => {
                let v = numbers(&toks[1..], line)?;
                let (pts, weight) = if v.len() % 3 == 1 {
                    (&v[..v.len() - 1], v[v.len() - 1])
                } else {
                    (&v[..], 0.0)
                };
                out.push(SiteSpec {
                    geometry: SiteGeometry::Curve(polyline(pts, line)?),
                    weight,
                });
            }
            other => return Err(rec_err(line, format!("unknown record type `{other}`"))),
        }
    }
    Ok(out)
}

pub fn parse_breaklines(text: &str) -> Result<Vec<Vec<Vec3>>, RecordError> {
    records(text)
        .map(|(line, toks)| {
            if toks[0] != "c" {
                return Err(rec_err(line, "breakline records start with `c`"));
            }
            polyline(&numbers(&toks[1..], line)?, line)
        })
        .collect()
}

pub fn write_sites(sites: &[SiteSpec]) -> String {
    let mut out = String::new();
    for s in sites {
        match &s.geometry {
            SiteGeometry::Point { face, bary } => {
                let _ = write!(out, "p {face} {} {} {}", bary[0], bary[1], bary[2]);
            }
            SiteGeometry::Curve(pts) => {
                out.push('c');
                for p in pts {
                    let _ = write!(out, " {} {} {}", p.x, p.y, p.z);
                }
            }
        }
        if s.weight != 0.0 {
            let _ = write!(out, " {}", s.weight);
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn off_single_triangle() {
        let m = parse_off("OFF\n3 1 0\n0 0 0\n1 0 0\n0 1 0\n3 0 1 2\n").unwrap();
        assert_eq!(m.num_vertices(), 3);
        assert_eq!(m.num_faces(), 1);
    }

    #[test]
    fn obj_quad_is_fanned() {
        let m = parse_obj("v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf 1/1 2/2 3/3 4/4\n").unwrap();
        assert_eq!(m.num_faces(), 2);
        assert_eq!(m.faces(), &[[0, 1, 2], [0, 2, 3]]);
    }

    #[test]
    fn obj_negative_indices() {
        let m = parse_obj("v 0 0 0\nv 1 0 0\nv 0 1 0\nf -3 -2 -1\n").unwrap();
        assert_eq!(m.faces(), &[[0, 1, 2]]);
    }

    #[test]
    fn obj_bad_number_is_parse_error() {
        let err = parse_obj("v 0 zero 0\n").unwrap_err();
        assert!(matches!(err, MeshError::Parse { line: 1, .. }));
    }

    #[test]
    fn off_truncated_is_parse_error() {
        assert!(matches!(
            parse_off("OFF\n3 1 0\n0 0 0\n1 0 0\n"),
            Err(MeshError::Parse { .. })
        ));
    }

    #[test]
    fn site_records() {
        let s = parse_sites("# sites\np 3 0.2 0.3 0.5\np 0 1 0 0 2.5\nc 0 0 0 1 0 0 1 1 0 0.5\n")
            .unwrap();
        assert_eq!(s.len(), 3);
        assert_eq!(s[1].weight, 2.5);
        match &s[2].geometry {
            SiteGeometry::Curve(p) => assert_eq!(p.len(), 3),
            _ => panic!("expected curve"),
        }
        assert_eq!(s[2].weight, 0.5);
        let again = parse_sites(&write_sites(&s)).unwrap();
        assert_eq!(again.len(), 3);
    }

    #[test]
    fn bad_site_record() {
        assert!(parse_sites("p 1 0.5 0.5\n").is_err());
        assert!(parse_sites("q 1 2 3\n").is_err());
        assert!(parse_breaklines("c 0 0 0\n").is_err());
    }
}
