//! ASCII meshes and small procedural generators.
//!
//! Tet files: line 1 `nv nt`, then `nv` lines `x y z`, then `nt` lines
//! `i0 i1 i2 i3` (zero-based). Triangle files use the same layout with
//! three indices per element. Blank lines and `#` comments are ignored.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::path::Path;

use ipsym_core::energy::QUADRATIC_TET_EDGES;

#[derive(Debug, thiserror::Error)]
pub enum MeshError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("element {element}: {message}")]
    Element { element: usize, message: String },
}

#[derive(Clone, Debug, PartialEq)]
pub struct TetMesh {
    pub vertices: Vec<[f64; 3]>,
    pub tets: Vec<[usize; 4]>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TriMesh {
    pub vertices: Vec<[f64; 3]>,
    pub tris: Vec<[usize; 3]>,
}

/// 10-node tets in VTK order (corners, then edge midpoints).
#[derive(Clone, Debug, PartialEq)]
pub struct QuadraticTetMesh {
    pub vertices: Vec<[f64; 3]>,
    pub tets: Vec<[usize; 10]>,
}

fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

/// Signed volume of a tet.
pub fn tet_volume(v: &[[f64; 3]], t: [usize; 4]) -> f64 {
    dot(sub(v[t[1]], v[t[0]]), cross(sub(v[t[2]], v[t[0]]), sub(v[t[3]], v[t[0]]))) / 6.0
}

pub fn tri_area(v: &[[f64; 3]], t: [usize; 3]) -> f64 {
    let c = cross(sub(v[t[1]], v[t[0]]), sub(v[t[2]], v[t[0]]));
    0.5 * dot(c, c).sqrt()
}

struct Lines<'a> {
    inner: std::iter::Enumerate<std::str::Lines<'a>>,
}

impl<'a> Lines<'a> {
    fn new(text: &'a str) -> Self {
        Lines { inner: text.lines().enumerate() }
    }

    /// Next non-empty line as whitespace-separated fields, with its 1-based number.
    fn next_fields(&mut self) -> Option<(usize, Vec<&'a str>)> {
        for (i, l) in self.inner.by_ref() {
            let l = l.split('#').next().unwrap_or("").trim();
            if !l.is_empty() {
                return Some((i + 1, l.split_whitespace().collect()));
            }
        }
        None
    }
}

fn parse_err(line: usize, message: impl Into<String>) -> MeshError {
    MeshError::Parse { line, message: message.into() }
}

fn parse_numbers<T: std::str::FromStr>(line: usize, fields: &[&str], n: usize, what: &str) -> Result<Vec<T>, MeshError> {
    if fields.len() != n {
        return Err(parse_err(line, format!("expected {n} {what}, found {}", fields.len())));
    }
    fields.iter().map(|f| f.parse::<T>().map_err(|_| parse_err(line, format!("invalid {what} `{f}`")))).collect()
}

fn parse_elements<const N: usize>(text: &str) -> Result<(Vec<[f64; 3]>, Vec<[usize; N]>), MeshError> {
    let mut lines = Lines::new(text);
    let (l, header) = lines.next_fields().ok_or_else(|| parse_err(1, "empty mesh file"))?;
    let counts: Vec<usize> = parse_numbers(l, &header, 2, "counts")?;
    let (nv, ne) = (counts[0], counts[1]);
    let mut vertices = Vec::with_capacity(nv);
    for _ in 0..nv {
        let (l, f) = lines.next_fields().ok_or_else(|| parse_err(l + 1, format!("expected {nv} vertices, file ended")))?;
        let p: Vec<f64> = parse_numbers(l, &f, 3, "coordinates")?;
        if p.iter().any(|x| !x.is_finite()) {
            return Err(parse_err(l, "non-finite coordinate"));
        }
        vertices.push([p[0], p[1], p[2]]);
    }
    let mut elems = Vec::with_capacity(ne);
    for _ in 0..ne {
        let (l, f) = lines.next_fields().ok_or_else(|| parse_err(l + 1, format!("expected {ne} elements, file ended")))?;
        let idx: Vec<usize> = parse_numbers(l, &f, N, "indices")?;
        if let Some(bad) = idx.iter().find(|&&i| i >= nv) {
            return Err(parse_err(l, format!("index {bad} out of range for {nv} vertices")));
        }
        elems.push(std::array::from_fn(|k| idx[k]));
    }
    if let Some((l, _)) = lines.next_fields() {
        return Err(parse_err(l, "unexpected trailing content"));
    }
    Ok((vertices, elems))
}

/// Parses a tet mesh. Tets with negative volume are reoriented (by swapping
/// two vertices) when `reorient` is set and rejected otherwise; degenerate
/// tets are always rejected.
pub fn parse_tet_mesh(text: &str, reorient: bool) -> Result<TetMesh, MeshError> {
    let (vertices, mut tets) = parse_elements::<4>(text)?;
    for (e, t) in tets.iter_mut().enumerate() {
        let v = tet_volume(&vertices, *t);
        let scale = (0..3).map(|k| dot(sub(vertices[t[k + 1]], vertices[t[0]]), sub(vertices[t[k + 1]], vertices[t[0]]))).fold(0.0f64, f64::max);
        if !(v.abs() > 1e-14 * scale.powf(1.5)) {
            return Err(MeshError::Element { element: e, message: "degenerate tet (zero volume)".into() });
        }
        if v < 0.0 {
            if !reorient {
                return Err(MeshError::Element { element: e, message: "inverted tet (negative volume)".into() });
            }
            t.swap(2, 3);
        }
    }
    Ok(TetMesh { vertices, tets })
}

pub fn parse_tri_mesh(text: &str) -> Result<TriMesh, MeshError> {
    let (vertices, tris) = parse_elements::<3>(text)?;
    for (e, t) in tris.iter().enumerate() {
        if !(tri_area(&vertices, *t) > 0.0) {
            return Err(MeshError::Element { element: e, message: "degenerate triangle".into() });
        }
    }
    Ok(TriMesh { vertices, tris })
}

fn read(path: &Path) -> Result<String, MeshError> {
    std::fs::read_to_string(path).map_err(|source| MeshError::Io { path: path.display().to_string(), source })
}

pub fn load_tet_mesh(path: &Path, reorient: bool) -> Result<TetMesh, MeshError> {
    parse_tet_mesh(&read(path)?, reorient)
}

pub fn load_tri_mesh(path: &Path) -> Result<TriMesh, MeshError> {
    parse_tri_mesh(&read(path)?)
}

fn format_elements<const N: usize>(vertices: &[[f64; 3]], elems: &[[usize; N]]) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{} {}", vertices.len(), elems.len());
    for v in vertices {
        let _ = writeln!(s, "{} {} {}", v[0], v[1], v[2]);
    }
    for e in elems {
        let idx: Vec<String> = e.iter().map(|i| i.to_string()).collect();
        let _ = writeln!(s, "{}", idx.join(" "));
    }
    s
}

impl TetMesh {
    pub fn to_text(&self) -> String {
        format_elements(&self.vertices, &self.tets)
    }

    pub fn volume(&self) -> f64 {
        self.tets.iter().map(|&t| tet_volume(&self.vertices, t)).sum()
    }

    /// Boundary faces, oriented outward.
    pub fn boundary_faces(&self) -> Vec<[usize; 3]> {
        boundary_faces(self.tets.iter().copied())
    }

    /// Inserts one midpoint node per edge, numbered after the corners in
    /// order of first appearance.
    pub fn to_quadratic(&self) -> QuadraticTetMesh {
        let mut vertices = self.vertices.clone();
        let mut mid: HashMap<(usize, usize), usize> = HashMap::new();
        let mut tets = Vec::with_capacity(self.tets.len());
        for t in &self.tets {
            let mut q = [0; 10];
            q[..4].copy_from_slice(t);
            for (k, &(a, b)) in QUADRATIC_TET_EDGES.iter().enumerate() {
                let key = (t[a].min(t[b]), t[a].max(t[b]));
                q[4 + k] = *mid.entry(key).or_insert_with(|| {
                    let (pa, pb) = (vertices[key.0], vertices[key.1]);
                    vertices.push(std::array::from_fn(|c| 0.5 * (pa[c] + pb[c])));
                    vertices.len() - 1
                });
            }
            tets.push(q);
        }
        QuadraticTetMesh { vertices, tets }
    }
}

impl TriMesh {
    pub fn to_text(&self) -> String {
        format_elements(&self.vertices, &self.tris)
    }

    /// Interior edges as flaps `[x0, x1, x2, x3]`: shared edge `(x0, x1)`,
    /// opposite vertices `x2` (first triangle) and `x3` (second), sorted by edge.
    pub fn flaps(&self) -> Vec<[usize; 4]> {
        let mut edges: BTreeMap<(usize, usize), Vec<(usize, usize)>> = BTreeMap::new();
        for (f, t) in self.tris.iter().enumerate() {
            for k in 0..3 {
                let (a, b) = (t[k], t[(k + 1) % 3]);
                edges.entry((a.min(b), a.max(b))).or_default().push((f, t[(k + 2) % 3]));
            }
        }
        edges
            .into_iter()
            .filter(|(_, fs)| fs.len() == 2)
            .map(|((a, b), fs)| [a, b, fs[0].1, fs[1].1])
            .collect()
    }
}

/// Faces that belong to exactly one tet, with the orientation seen from
/// outside.
pub fn boundary_faces(tets: impl Iterator<Item = [usize; 4]>) -> Vec<[usize; 3]> {
    let mut count: BTreeMap<[usize; 3], (usize, [usize; 3])> = BTreeMap::new();
    for t in tets {
        // outward orientation for a positively oriented tet
        for f in [[t[0], t[2], t[1]], [t[0], t[1], t[3]], [t[1], t[2], t[3]], [t[0], t[3], t[2]]] {
            let mut key = f;
            key.sort_unstable();
            let e = count.entry(key).or_insert((0, f));
            e.0 += 1;
        }
    }
    count.into_values().filter(|(n, _)| *n == 1).map(|(_, f)| f).collect()
}

/// Axis-aligned box split into `cells` cubes, six tets per cube along the
/// main diagonal. All tets are positively oriented.
pub fn box_tet_mesh(min: [f64; 3], max: [f64; 3], cells: [usize; 3]) -> TetMesh {
    let filled: Vec<[usize; 3]> = (0..cells[2])
        .flat_map(|k| (0..cells[1]).flat_map(move |j| (0..cells[0]).map(move |i| [i, j, k])))
        .collect();
    let h: [f64; 3] = std::array::from_fn(|a| (max[a] - min[a]) / cells[a] as f64);
    voxel_tet_mesh(&filled, min, h)
}

/// Tet mesh of a set of unit voxels (integer cell coordinates) scaled by `h`
/// and shifted to `origin`. Shared vertices are merged.
pub fn voxel_tet_mesh(voxels: &[[usize; 3]], origin: [f64; 3], h: [f64; 3]) -> TetMesh {
    let mut ids: BTreeMap<[usize; 3], usize> = BTreeMap::new();
    let mut vertices = Vec::new();
    let mut tets = Vec::new();
    let perms = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
    for c in voxels {
        let mut vid = |corner: [usize; 3]| -> usize {
            let key = [c[0] + corner[0], c[1] + corner[1], c[2] + corner[2]];
            *ids.entry(key).or_insert_with(|| {
                vertices.push(std::array::from_fn(|a| origin[a] + key[a] as f64 * h[a]));
                vertices.len() - 1
            })
        };
        for p in perms {
            let mut corner = [0usize; 3];
            let mut t = [vid(corner), 0, 0, 0];
            for (step, &axis) in p.iter().enumerate() {
                corner[axis] = 1;
                t[step + 1] = vid(corner);
            }
            tets.push(t);
        }
    }
    for t in &mut tets {
        if tet_volume(&vertices, *t) < 0.0 {
            t.swap(2, 3);
        }
    }
    TetMesh { vertices, tets }
}

/// Regular grid of `cells[0] x cells[1]` quads split into triangles, spanning
/// `origin + s u + t v` for `s, t` in `[0, 1]`.
pub fn grid_tri_mesh(origin: [f64; 3], u: [f64; 3], v: [f64; 3], cells: [usize; 2]) -> TriMesh {
    let (nu, nv) = (cells[0], cells[1]);
    let mut vertices = Vec::with_capacity((nu + 1) * (nv + 1));
    for j in 0..=nv {
        for i in 0..=nu {
            let (s, t) = (i as f64 / nu as f64, j as f64 / nv as f64);
            vertices.push(std::array::from_fn(|a| origin[a] + s * u[a] + t * v[a]));
        }
    }
    let id = |i: usize, j: usize| j * (nu + 1) + i;
    let mut tris = Vec::with_capacity(2 * nu * nv);
    for j in 0..nv {
        for i in 0..nu {
            // alternate the diagonal for a symmetric pattern
            if (i + j) % 2 == 0 {
                tris.push([id(i, j), id(i + 1, j), id(i + 1, j + 1)]);
                tris.push([id(i, j), id(i + 1, j + 1), id(i, j + 1)]);
            } else {
                tris.push([id(i, j), id(i + 1, j), id(i, j + 1)]);
                tris.push([id(i + 1, j), id(i + 1, j + 1), id(i, j + 1)]);
            }
        }
    }
    TriMesh { vertices, tris }
}

#[cfg(test)]
mod tests {
    use super::*;

    const ONE_TET: &str = "4 1\n0 0 0\n1 0 0\n0 1 0\n0 0 1\n0 1 2 3\n";

    #[test]
    fn single_tet() {
        let m = parse_tet_mesh(ONE_TET, false).unwrap();
        assert_eq!(m.vertices.len(), 4);
        assert_eq!(m.tets.len(), 1);
        assert!((m.volume() - 1.0 / 6.0).abs() < 1e-15);
        assert_eq!(m.boundary_faces().len(), 4);
    }

    #[test]
    fn inverted_tet_reoriented_or_rejected() {
        let text = ONE_TET.replace("0 1 2 3", "0 2 1 3");
        assert!(matches!(parse_tet_mesh(&text, false), Err(MeshError::Element { element: 0, .. })));
        let m = parse_tet_mesh(&text, true).unwrap();
        assert!(m.volume() > 0.0);
    }

    #[test]
    fn malformed_files() {
        assert!(matches!(parse_tet_mesh("", false), Err(MeshError::Parse { .. })));
        let err = parse_tet_mesh("4 1\n0 0 0\n1 0 0\n0 1 x\n0 0 1\n0 1 2 3\n", false).unwrap_err();
        assert!(matches!(err, MeshError::Parse { line: 4, .. }), "{err}");
        assert!(parse_tet_mesh("4 1\n0 0 0\n1 0 0\n0 1 0\n0 0 1\n0 1 2 9\n", false).is_err());
        assert!(parse_tet_mesh("4 1\n0 0 0\n1 0 0\n0 1 0\n0 0 1\n", false).is_err());
        assert!(parse_tet_mesh("4 1\n0 0 0\n1 0 0\n2 0 0\n0 0 1\n0 1 2 3\n", false).is_err());
    }

    #[test]
    fn round_trip_and_comments() {
        let m = box_tet_mesh([0.0; 3], [1.0, 2.0, 0.5], [2, 1, 1]);
        let text = format!("# generated\n{}", m.to_text());
        assert_eq!(parse_tet_mesh(&text, false).unwrap(), m);
    }

    #[test]
    fn box_mesh_volume_and_surface() {
        let m = box_tet_mesh([0.0; 3], [1.0, 2.0, 3.0], [2, 3, 1]);
        assert_eq!(m.tets.len(), 36);
        assert_eq!(m.vertices.len(), 3 * 4 * 2);
        assert!((m.volume() - 6.0).abs() < 1e-12);
        assert!(m.tets.iter().all(|&t| tet_volume(&m.vertices, t) > 0.0));
        // surface of a box: 2 triangles per boundary quad
        assert_eq!(m.boundary_faces().len(), 2 * 2 * (2 * 3 + 3 + 2));
    }

    #[test]
    fn quadratic_nodes_are_shared() {
        let m = box_tet_mesh([0.0; 3], [1.0; 3], [1, 1, 1]);
        let q = m.to_quadratic();
        // cube: 12 box edges + 6 face diagonals + 1 main diagonal
        assert_eq!(q.vertices.len(), 8 + 19);
        for t in &q.tets {
            for (k, &(a, b)) in QUADRATIC_TET_EDGES.iter().enumerate() {
                let m = q.vertices[t[4 + k]];
                let (pa, pb) = (q.vertices[t[a]], q.vertices[t[b]]);
                assert!((0..3).all(|c| (m[c] - 0.5 * (pa[c] + pb[c])).abs() < 1e-15));
            }
        }
    }

    #[test]
    fn grid_flaps() {
        let g = grid_tri_mesh([0.0; 3], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [2, 2]);
        assert_eq!(g.tris.len(), 8);
        // interior edges of a 2x2 split grid: 16 edges total, 8 on the border
        assert_eq!(g.flaps().len(), 8);
        for f in g.flaps() {
            assert!(f[2] != f[3]);
        }
    }
}
