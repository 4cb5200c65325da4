//! Triangle mesh ingestion and the on-disk subject format.
//!
//! Supported readers: OFF, ASCII PLY (positions + triangular faces only) and
//! the internal per-subject directory layout (`mesh.off`, `sulc.txt`,
//! `labels.txt`).

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

/// A triangulated surface with one sulcal-depth scalar per vertex and an
/// optional per-vertex label (`-1` marks unlabeled vertices).
#[derive(Debug, Clone, PartialEq)]
pub struct SurfaceMesh {
    pub vertices: Vec<[f64; 3]>,
    pub faces: Vec<[usize; 3]>,
    pub sulcal_depth: Vec<f64>,
    pub labels: Option<Vec<i64>>,
}

/// Mesh file formats accepted by [`load_mesh`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MeshFormat {
    Off,
    PlyAscii,
    /// A subject directory holding `mesh.off`, `sulc.txt` and `labels.txt`.
    Internal,
}

impl SurfaceMesh {
    /// Validates invariants and builds the mesh. Vertex order is preserved.
    pub fn new(
        vertices: Vec<[f64; 3]>,
        faces: Vec<[usize; 3]>,
        sulcal_depth: Vec<f64>,
        labels: Option<Vec<i64>>,
    ) -> Result<Self> {
        let n = vertices.len();
        if n == 0 {
            return Err(Error::InvalidMesh("mesh has no vertices".into()));
        }
        if sulcal_depth.len() != n {
            return Err(Error::InvalidMesh(format!(
                "sulcal depth has {} entries for {} vertices",
                sulcal_depth.len(),
                n
            )));
        }
        if let Some(labels) = &labels {
            if labels.len() != n {
                return Err(Error::InvalidMesh(format!(
                    "labels have {} entries for {} vertices",
                    labels.len(),
                    n
                )));
            }
            if let Some(&bad) = labels.iter().find(|&&l| l < -1) {
                return Err(Error::InvalidMesh(format!("label {bad} is negative")));
            }
        }
        for (f, face) in faces.iter().enumerate() {
            for &idx in face {
                if idx >= n {
                    return Err(Error::FaceIndexOutOfRange {
                        face: f,
                        index: idx,
                        n_vertices: n,
                    });
                }
            }
            if face[0] == face[1] || face[1] == face[2] || face[0] == face[2] {
                return Err(Error::InvalidMesh(format!(
                    "face {f} is degenerate: {face:?}"
                )));
            }
        }
        if let Some(&bad) = sulcal_depth.iter().find(|v| !v.is_finite()) {
            return Err(Error::InvalidMesh(format!("non-finite sulcal depth {bad}")));
        }
        if let Some(bad) = vertices.iter().find(|v| v.iter().any(|c| !c.is_finite())) {
            return Err(Error::InvalidMesh(format!("non-finite vertex {bad:?}")));
        }

        let mesh = SurfaceMesh {
            vertices,
            faces,
            sulcal_depth,
            labels,
        };
        let sizes = mesh.component_sizes();
        if sizes.len() > 1 {
            return Err(Error::DisconnectedMesh { sizes });
        }
        Ok(mesh)
    }

    pub fn n_vertices(&self) -> usize {
        self.vertices.len()
    }

    /// Unique undirected edges, sorted lexicographically.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut set = BTreeSet::new();
        for face in &self.faces {
            for (a, b) in [(0, 1), (1, 2), (2, 0)] {
                let (i, j) = (face[a].min(face[b]), face[a].max(face[b]));
                set.insert((i, j));
            }
        }
        set.into_iter().collect()
    }

    /// Neighbor lists over the mesh edge graph (no self entries), sorted.
    pub fn neighbor_lists(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.n_vertices()];
        for (i, j) in self.edges() {
            adj[i].push(j);
            adj[j].push(i);
        }
        for list in &mut adj {
            list.sort_unstable();
        }
        adj
    }

    /// Connected component sizes of the edge graph, largest first.
    fn component_sizes(&self) -> Vec<usize> {
        let n = self.n_vertices();
        let adj = {
            let mut adj = vec![Vec::new(); n];
            for face in &self.faces {
                for (a, b) in [(0, 1), (1, 2), (2, 0)] {
                    adj[face[a]].push(face[b]);
                    adj[face[b]].push(face[a]);
                }
            }
            adj
        };
        let mut seen = vec![false; n];
        let mut sizes = Vec::new();
        let mut stack = Vec::new();
        for start in 0..n {
            if seen[start] {
                continue;
            }
            let mut size = 0usize;
            seen[start] = true;
            stack.push(start);
            while let Some(v) = stack.pop() {
                size += 1;
                for &u in &adj[v] {
                    if !seen[u] {
                        seen[u] = true;
                        stack.push(u);
                    }
                }
            }
            sizes.push(size);
        }
        sizes.sort_unstable_by(|a, b| b.cmp(a));
        sizes
    }
}

/// Loads a mesh in the named format. See [`MeshFormat`].
pub fn load_mesh(path: &Path, format: MeshFormat) -> Result<SurfaceMesh> {
    match format {
        MeshFormat::Off => load_off(path),
        MeshFormat::PlyAscii => load_ply_ascii(path),
        MeshFormat::Internal => load_subject_dir(path),
    }
}

fn open_lines(path: &Path) -> Result<impl Iterator<Item = std::io::Result<String>>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(BufReader::new(file).lines())
}

/// Line-oriented token reader that skips blank lines and `#` comments.
struct TokenLines {
    path: PathBuf,
    lines: Vec<(usize, String)>,
    pos: usize,
}

impl TokenLines {
    fn open(path: &Path) -> Result<Self> {
        let mut lines = Vec::new();
        for (idx, line) in open_lines(path)?.enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            let content = match line.find('#') {
                Some(at) => &line[..at],
                None => &line[..],
            };
            if !content.trim().is_empty() {
                lines.push((idx + 1, content.trim().to_string()));
            }
        }
        Ok(TokenLines {
            path: path.to_path_buf(),
            lines,
            pos: 0,
        })
    }

    fn next_line(&mut self, what: &str) -> Result<(usize, String)> {
        if self.pos >= self.lines.len() {
            let line = self.lines.last().map(|(n, _)| *n).unwrap_or(0);
            return Err(Error::parse(
                &self.path,
                line,
                format!("unexpected end of file, expected {what}"),
            ));
        }
        let (num, text) = &self.lines[self.pos];
        self.pos += 1;
        Ok((*num, text.clone()))
    }

    fn err(&self, line: usize, msg: impl Into<String>) -> Error {
        Error::parse(&self.path, line, msg)
    }
}

fn parse_fields<T: std::str::FromStr>(text: &str) -> std::result::Result<Vec<T>, String> {
    text.split_whitespace()
        .map(|tok| {
            tok.parse::<T>()
                .map_err(|_| format!("cannot parse {tok:?}"))
        })
        .collect()
}

fn load_off(path: &Path) -> Result<SurfaceMesh> {
    let mut tl = TokenLines::open(path)?;
    let (line, header) = tl.next_line("OFF header")?;
    let mut counts_text = None;
    if let Some(rest) = header.strip_prefix("OFF") {
        // Counts may share the header line ("OFF 4 4 0") or follow it.
        if !rest.trim().is_empty() {
            counts_text = Some((line, rest.trim().to_string()));
        }
    } else {
        return Err(tl.err(line, "expected OFF header"));
    }
    let (cline, counts) = match counts_text {
        Some((l, t)) => (l, t),
        None => {
            let (l, t) = tl.next_line("vertex/face counts")?;
            (l, t.to_string())
        }
    };
    let counts: Vec<usize> = parse_fields(&counts).map_err(|m| tl.err(cline, m))?;
    if counts.len() < 2 {
        return Err(tl.err(cline, "expected vertex and face counts"));
    }
    let (n_vertices, n_faces) = (counts[0], counts[1]);

    let mut vertices = Vec::with_capacity(n_vertices);
    for _ in 0..n_vertices {
        let (l, t) = tl.next_line("vertex coordinates")?;
        let coords: Vec<f64> = parse_fields(&t).map_err(|m| tl.err(l, m))?;
        if coords.len() < 3 {
            return Err(tl.err(l, "expected 3 coordinates"));
        }
        vertices.push([coords[0], coords[1], coords[2]]);
    }
    let faces = read_face_rows(&mut tl, n_faces)?;
    let n = vertices.len();
    SurfaceMesh::new(vertices, faces, vec![0.0; n], None)
}

fn read_face_rows(tl: &mut TokenLines, n_faces: usize) -> Result<Vec<[usize; 3]>> {
    let mut faces = Vec::with_capacity(n_faces);
    for _ in 0..n_faces {
        let (l, t) = tl.next_line("face row")?;
        let idx: Vec<usize> = parse_fields(&t).map_err(|m| tl.err(l, m))?;
        if idx.is_empty() {
            return Err(tl.err(l, "empty face row"));
        }
        if idx[0] != 3 {
            return Err(tl.err(l, format!("only triangular faces supported, got {}", idx[0])));
        }
        if idx.len() != 4 {
            return Err(tl.err(l, "expected `3 i j k`"));
        }
        faces.push([idx[1], idx[2], idx[3]]);
    }
    Ok(faces)
}

fn load_ply_ascii(path: &Path) -> Result<SurfaceMesh> {
    let mut tl = TokenLines::open(path)?;
    let (l, magic) = tl.next_line("ply header")?;
    if magic != "ply" {
        return Err(tl.err(l, "expected `ply` magic"));
    }

    let mut n_vertices = None;
    let mut n_faces = None;
    // Elements in declaration order with their property counts; only
    // `vertex` and `face` are interpreted.
    let mut elements: Vec<(String, usize, usize)> = Vec::new();
    let mut xyz_cols: [Option<usize>; 3] = [None; 3];
    loop {
        let (l, t) = tl.next_line("ply header line")?;
        let toks: Vec<&str> = t.split_whitespace().collect();
        match toks.as_slice() {
            ["format", fmt, _] => {
                if *fmt != "ascii" {
                    return Err(tl.err(l, format!("only ascii format supported, got {fmt}")));
                }
            }
            ["comment", ..] | ["obj_info", ..] => {}
            ["element", name, count] => {
                let count: usize = count
                    .parse()
                    .map_err(|_| tl.err(l, "bad element count"))?;
                if *name == "vertex" {
                    n_vertices = Some(count);
                } else if *name == "face" {
                    n_faces = Some(count);
                }
                elements.push((name.to_string(), count, 0));
            }
            ["property", "list", ..] => {
                if let Some(last) = elements.last_mut() {
                    last.2 += 1;
                }
            }
            ["property", _ty, name] => {
                if let Some(last) = elements.last_mut() {
                    if last.0 == "vertex" {
                        match *name {
                            "x" => xyz_cols[0] = Some(last.2),
                            "y" => xyz_cols[1] = Some(last.2),
                            "z" => xyz_cols[2] = Some(last.2),
                            _ => {}
                        }
                    }
                    last.2 += 1;
                }
            }
            ["end_header"] => break,
            _ => return Err(tl.err(l, format!("unrecognized header line {t:?}"))),
        }
    }
    let n_vertices = n_vertices.ok_or_else(|| tl.err(l, "missing vertex element"))?;
    let n_faces = n_faces.unwrap_or(0);
    let [Some(cx), Some(cy), Some(cz)] = xyz_cols else {
        return Err(tl.err(l, "vertex element must declare x, y, z properties"));
    };

    let mut vertices = Vec::with_capacity(n_vertices);
    let mut faces = Vec::with_capacity(n_faces);
    for (name, count, _) in &elements {
        match name.as_str() {
            "vertex" => {
                for _ in 0..*count {
                    let (l, t) = tl.next_line("vertex row")?;
                    let vals: Vec<f64> = parse_fields(&t).map_err(|m| tl.err(l, m))?;
                    let need = cx.max(cy).max(cz);
                    if vals.len() <= need {
                        return Err(tl.err(l, "vertex row too short"));
                    }
                    vertices.push([vals[cx], vals[cy], vals[cz]]);
                }
            }
            "face" => {
                for _ in 0..*count {
                    let (l, t) = tl.next_line("face row")?;
                    let idx: Vec<usize> = parse_fields(&t).map_err(|m| tl.err(l, m))?;
                    if idx.is_empty() || idx[0] + 1 != idx.len() {
                        return Err(tl.err(l, "malformed face list"));
                    }
                    if idx[0] != 3 {
                        return Err(tl.err(l, format!("only triangular faces supported, got {}", idx[0])));
                    }
                    faces.push([idx[1], idx[2], idx[3]]);
                }
            }
            _ => {
                // Skip rows of unknown elements.
                for _ in 0..*count {
                    tl.next_line("element row")?;
                }
            }
        }
    }
    let n = vertices.len();
    SurfaceMesh::new(vertices, faces, vec![0.0; n], None)
}

fn read_scalar_file<T: std::str::FromStr>(path: &Path, expect: usize) -> Result<Vec<T>> {
    let mut out = Vec::with_capacity(expect);
    for (idx, line) in open_lines(path)?.enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let t = line.trim();
        if t.is_empty() {
            continue;
        }
        out.push(
            t.parse::<T>()
                .map_err(|_| Error::parse(path, idx + 1, format!("cannot parse {t:?}")))?,
        );
    }
    if out.len() != expect {
        return Err(Error::parse(
            path,
            out.len(),
            format!("expected {expect} values, found {}", out.len()),
        ));
    }
    Ok(out)
}

/// Loads a subject directory: `mesh.off` + `sulc.txt` + `labels.txt`.
pub fn load_subject_dir(dir: &Path) -> Result<SurfaceMesh> {
    let mesh_path = dir.join("mesh.off");
    if !mesh_path.is_file() {
        return Err(Error::MissingArtifact {
            path: mesh_path,
            hint: "subject directory must contain mesh.off".into(),
        });
    }
    let mut mesh = load_off(&mesh_path)?;
    let n = mesh.n_vertices();
    mesh.sulcal_depth = read_scalar_file(&dir.join("sulc.txt"), n)?;
    if let Some(&bad) = mesh.sulcal_depth.iter().find(|v| !v.is_finite()) {
        return Err(Error::InvalidMesh(format!("non-finite sulcal depth {bad}")));
    }
    let labels_path = dir.join("labels.txt");
    if labels_path.is_file() {
        mesh.labels = Some(read_scalar_file(&labels_path, n)?);
    }
    Ok(mesh)
}

/// Writes a mesh as OFF (positions + faces).
pub fn save_off(path: &Path, mesh: &SurfaceMesh) -> Result<()> {
    let mut text = String::new();
    let _ = writeln!(text, "OFF");
    let _ = writeln!(text, "{} {} 0", mesh.n_vertices(), mesh.faces.len());
    for v in &mesh.vertices {
        let _ = writeln!(text, "{} {} {}", v[0], v[1], v[2]);
    }
    for f in &mesh.faces {
        let _ = writeln!(text, "3 {} {} {}", f[0], f[1], f[2]);
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Writes a subject directory in the internal format.
pub fn save_subject_dir(dir: &Path, mesh: &SurfaceMesh) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    save_off(&dir.join("mesh.off"), mesh)?;
    let mut sulc = String::new();
    for v in &mesh.sulcal_depth {
        let _ = writeln!(sulc, "{v}");
    }
    fs::write(dir.join("sulc.txt"), sulc).map_err(|e| Error::io(dir.join("sulc.txt"), e))?;
    let mut labels = String::new();
    match &mesh.labels {
        Some(ls) => {
            for l in ls {
                let _ = writeln!(labels, "{l}");
            }
        }
        None => {
            for _ in 0..mesh.n_vertices() {
                let _ = writeln!(labels, "-1");
            }
        }
    }
    fs::write(dir.join("labels.txt"), labels)
        .map_err(|e| Error::io(dir.join("labels.txt"), e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tetrahedron_off() -> &'static str {
        "OFF\n4 4 0\n1 1 1\n1 -1 -1\n-1 1 -1\n-1 -1 1\n3 0 1 2\n3 0 3 1\n3 0 2 3\n3 1 3 2\n"
    }

    #[test]
    fn off_tetrahedron_counts() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("tet.off");
        fs::write(&path, tetrahedron_off()).unwrap();
        let mesh = load_mesh(&path, MeshFormat::Off).unwrap();
        assert_eq!(mesh.n_vertices(), 4);
        assert_eq!(mesh.faces.len(), 4);
        assert_eq!(mesh.edges().len(), 6);
    }

    #[test]
    fn off_face_index_out_of_range() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.off");
        fs::write(&path, "OFF\n4 1 0\n0 0 0\n1 0 0\n0 1 0\n0 0 1\n3 0 1 9\n").unwrap();
        match load_mesh(&path, MeshFormat::Off) {
            Err(Error::FaceIndexOutOfRange { index: 9, .. }) => {}
            other => panic!("expected out-of-range error, got {other:?}"),
        }
    }

    #[test]
    fn off_malformed_header() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.off");
        fs::write(&path, "PLY\n4 1 0\n").unwrap();
        assert!(matches!(
            load_mesh(&path, MeshFormat::Off),
            Err(Error::Parse { .. })
        ));
    }

    #[test]
    fn disconnected_mesh_rejected_with_component_sizes() {
        // Two disjoint triangles.
        let vertices = vec![
            [0.0, 0.0, 0.0],
            [1.0, 0.0, 0.0],
            [0.0, 1.0, 0.0],
            [5.0, 0.0, 0.0],
            [6.0, 0.0, 0.0],
            [5.0, 1.0, 0.0],
        ];
        let faces = vec![[0, 1, 2], [3, 4, 5]];
        match SurfaceMesh::new(vertices, faces, vec![0.0; 6], None) {
            Err(Error::DisconnectedMesh { sizes }) => assert_eq!(sizes, vec![3, 3]),
            other => panic!("expected DisconnectedMesh, got {other:?}"),
        }
    }

    #[test]
    fn degenerate_face_rejected() {
        let vertices = vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]];
        let err = SurfaceMesh::new(vertices, vec![[0, 1, 1]], vec![0.0; 3], None);
        assert!(matches!(err, Err(Error::InvalidMesh(_))));
    }

    #[test]
    fn ply_ascii_roundtrip_shape() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("tri.ply");
        fs::write(
            &path,
            "ply\nformat ascii 1.0\ncomment test\nelement vertex 3\n\
             property float x\nproperty float y\nproperty float z\n\
             element face 1\nproperty list uchar int vertex_indices\nend_header\n\
             0 0 0\n1 0 0\n0 1 0\n3 0 1 2\n",
        )
        .unwrap();
        let mesh = load_mesh(&path, MeshFormat::PlyAscii).unwrap();
        assert_eq!(mesh.n_vertices(), 3);
        assert_eq!(mesh.faces, vec![[0, 1, 2]]);
        assert_eq!(mesh.vertices[1], [1.0, 0.0, 0.0]);
    }

    #[test]
    fn internal_format_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let sub = dir.path().join("sub-000");
        let mesh = SurfaceMesh::new(
            vec![
                [1.0, 1.0, 1.0],
                [1.0, -1.0, -1.0],
                [-1.0, 1.0, -1.0],
                [-1.0, -1.0, 1.0],
            ],
            vec![[0, 1, 2], [0, 3, 1], [0, 2, 3], [1, 3, 2]],
            vec![0.25, -0.5, 0.125, 1.0],
            Some(vec![0, 1, -1, 0]),
        )
        .unwrap();
        save_subject_dir(&sub, &mesh).unwrap();
        let loaded = load_mesh(&sub, MeshFormat::Internal).unwrap();
        assert_eq!(loaded, mesh);
    }

    #[test]
    fn internal_format_line_count_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let sub = dir.path().join("sub-000");
        fs::create_dir_all(&sub).unwrap();
        fs::write(sub.join("mesh.off"), tetrahedron_off()).unwrap();
        fs::write(sub.join("sulc.txt"), "0.0\n0.0\n").unwrap();
        assert!(matches!(
            load_mesh(&sub, MeshFormat::Internal),
            Err(Error::Parse { .. })
        ));
    }
}
