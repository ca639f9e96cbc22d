//! Wavefront OBJ surface output. Coordinates are printed with the shortest
//! representation that round-trips, so identical states give identical files.

use std::fmt::Write as _;

/// Surface of one system for a frame.
pub struct ObjGroup<'a> {
    pub name: &'a str,
    /// Flat `x y z` triples.
    pub positions: &'a [f64],
    pub faces: &'a [[usize; 3]],
    /// Vertices written as point elements (for systems without faces).
    pub points: bool,
}

/// One OBJ document with an `o` block per group. Face indices are offset so
/// that every group addresses its own vertices.
pub fn write_obj(groups: &[ObjGroup<'_>]) -> String {
    let mut s = String::new();
    let mut base = 1;
    for g in groups {
        let _ = writeln!(s, "o {}", g.name);
        let n = g.positions.len() / 3;
        for p in g.positions.chunks_exact(3) {
            let _ = writeln!(s, "v {} {} {}", p[0], p[1], p[2]);
        }
        for f in g.faces {
            let _ = writeln!(s, "f {} {} {}", f[0] + base, f[1] + base, f[2] + base);
        }
        if g.points {
            for i in 0..n {
                let _ = writeln!(s, "p {}", i + base);
            }
        }
        base += n;
    }
    s
}
