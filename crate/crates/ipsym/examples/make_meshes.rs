//! Regenerates the mesh files shipped under `scenes/meshes/`.
//!
//! ```text
//! cargo run -p ipsym --example make_meshes -- scenes/meshes
//! ```

use std::path::PathBuf;

use ipsym::mesh::{box_tet_mesh, voxel_tet_mesh};

/// A small blocky figure (legs, torso, arms, head) in voxel coordinates.
fn figure_voxels() -> Vec<[usize; 3]> {
    let mut v = Vec::new();
    let mut fill = |x: std::ops::Range<usize>, y: std::ops::Range<usize>, z: std::ops::Range<usize>| {
        for k in z.clone() {
            for j in y.clone() {
                for i in x.clone() {
                    v.push([i, j, k]);
                }
            }
        }
    };
    fill(1..2, 0..2, 0..2); // left leg
    fill(3..4, 0..2, 0..2); // right leg
    fill(1..4, 0..2, 2..5); // torso
    fill(0..1, 0..2, 4..5); // left arm
    fill(4..5, 0..2, 4..5); // right arm
    fill(2..3, 0..2, 5..6); // head
    v
}

fn main() -> std::io::Result<()> {
    let dir = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "scenes/meshes".into()));
    std::fs::create_dir_all(&dir)?;
    let cube = box_tet_mesh([-0.05; 3], [0.05; 3], [4, 4, 4]);
    std::fs::write(dir.join("cube_4.tet"), cube.to_text())?;
    let fig = voxel_tet_mesh(&figure_voxels(), [-0.05, -0.02, 0.0005], [0.02; 3]);
    std::fs::write(dir.join("armadillo_mini.tet"), fig.to_text())?;
    println!("cube_4: {} vertices, {} tets", cube.vertices.len(), cube.tets.len());
    println!("armadillo_mini: {} vertices, {} tets", fig.vertices.len(), fig.tets.len());
    Ok(())
}
