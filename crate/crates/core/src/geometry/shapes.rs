//! Procedural meshes for tests, benchmarks and the annotation simulation.

use std::collections::HashMap;

use nalgebra::{UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{GeometryError, TriangleMesh};

/// Axis-aligned box centered at `center` with full side lengths `size`.
pub fn cuboid(center: Vector3<f64>, size: Vector3<f64>) -> TriangleMesh {
    let h = size / 2.0;
    let vertices: Vec<Vector3<f64>> = (0..8)
        .map(|i| {
            center
                + Vector3::new(
                    if i & 1 == 0 { -h.x } else { h.x },
                    if i & 2 == 0 { -h.y } else { h.y },
                    if i & 4 == 0 { -h.z } else { h.z },
                )
        })
        .collect();
    // Outward-facing, counter-clockwise when seen from outside.
    let triangles = vec![
        [0, 2, 3], [0, 3, 1], // -z
        [4, 5, 7], [4, 7, 6], // +z
        [0, 1, 5], [0, 5, 4], // -y
        [2, 6, 7], [2, 7, 3], // +y
        [0, 4, 6], [0, 6, 2], // -x
        [1, 3, 7], [1, 7, 5], // +x
    ];
    TriangleMesh::new(vertices, triangles).expect("cuboid is well formed")
}

/// Square of side `side` in the plane z = `z`, centered on the z axis.
pub fn square(side: f64, z: f64) -> TriangleMesh {
    let h = side / 2.0;
    TriangleMesh::new(
        vec![
            Vector3::new(-h, -h, z),
            Vector3::new(h, -h, z),
            Vector3::new(h, h, z),
            Vector3::new(-h, h, z),
        ],
        vec![[0, 1, 2], [0, 2, 3]],
    )
    .expect("square is well formed")
}

/// Icosphere with `subdivisions` rounds of 4-way triangle splitting.
pub fn icosphere(radius: f64, subdivisions: u32) -> TriangleMesh {
    let t = (1.0 + 5f64.sqrt()) / 2.0;
    let mut vertices: Vec<Vector3<f64>> = [
        (-1.0, t, 0.0), (1.0, t, 0.0), (-1.0, -t, 0.0), (1.0, -t, 0.0),
        (0.0, -1.0, t), (0.0, 1.0, t), (0.0, -1.0, -t), (0.0, 1.0, -t),
        (t, 0.0, -1.0), (t, 0.0, 1.0), (-t, 0.0, -1.0), (-t, 0.0, 1.0),
    ]
    .iter()
    .map(|&(x, y, z)| Vector3::new(x, y, z).normalize())
    .collect();
    let mut faces: Vec<[u32; 3]> = vec![
        [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
        [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
        [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
        [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
    ];
    for _ in 0..subdivisions {
        let mut cache: HashMap<(u32, u32), u32> = HashMap::new();
        let mut midpoint = |a: u32, b: u32, verts: &mut Vec<Vector3<f64>>| -> u32 {
            let key = (a.min(b), a.max(b));
            *cache.entry(key).or_insert_with(|| {
                verts.push(((verts[a as usize] + verts[b as usize]) / 2.0).normalize());
                verts.len() as u32 - 1
            })
        };
        let mut next = Vec::with_capacity(faces.len() * 4);
        for [a, b, c] in faces {
            let ab = midpoint(a, b, &mut vertices);
            let bc = midpoint(b, c, &mut vertices);
            let ca = midpoint(c, a, &mut vertices);
            next.extend_from_slice(&[[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]);
        }
        faces = next;
    }
    let vertices = vertices.into_iter().map(|v| v * radius).collect();
    TriangleMesh::new(vertices, faces).expect("icosphere is well formed")
}

/// Closed cylinder along z, centered at the origin.
pub fn cylinder(radius: f64, height: f64, segments: u32) -> TriangleMesh {
    let n = segments.max(3);
    let mut vertices = Vec::with_capacity(2 * n as usize + 2);
    for i in 0..n {
        let a = std::f64::consts::TAU * i as f64 / n as f64;
        let (s, c) = a.sin_cos();
        vertices.push(Vector3::new(radius * c, radius * s, -height / 2.0));
        vertices.push(Vector3::new(radius * c, radius * s, height / 2.0));
    }
    vertices.push(Vector3::new(0.0, 0.0, -height / 2.0));
    vertices.push(Vector3::new(0.0, 0.0, height / 2.0));
    let bottom = 2 * n;
    let top = 2 * n + 1;
    let mut triangles = Vec::new();
    for i in 0..n {
        let j = (i + 1) % n;
        let (b0, t0, b1, t1) = (2 * i, 2 * i + 1, 2 * j, 2 * j + 1);
        triangles.push([b0, b1, t1]);
        triangles.push([b0, t1, t0]);
        triangles.push([bottom, b1, b0]);
        triangles.push([top, t0, t1]);
    }
    TriangleMesh::new(vertices, triangles).expect("cylinder is well formed")
}

/// Icosphere with seeded radial noise and anisotropic scaling: an irregular,
/// symmetry-free blob.
pub fn lumpy_blob(radii: Vector3<f64>, roughness: f64, subdivisions: u32, seed: u64) -> TriangleMesh {
    let base = icosphere(1.0, subdivisions);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Low-frequency bumps: sum of a few random lobes.
    let lobes: Vec<(Vector3<f64>, f64)> = (0..5)
        .map(|_| {
            let d = Vector3::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            )
            .normalize();
            (d, rng.random_range(-1.0..1.0))
        })
        .collect();
    base.transformed(|v| {
        let bump: f64 = lobes.iter().map(|(d, a)| a * v.dot(d).max(0.0).powi(3)).sum();
        let r = 1.0 + roughness * bump;
        Vector3::new(v.x * radii.x, v.y * radii.y, v.z * radii.z) * r
    })
    .expect("blob is well formed")
}

fn rotated(mesh: &TriangleMesh, q: UnitQuaternion<f64>, offset: Vector3<f64>) -> TriangleMesh {
    mesh.transformed(|v| q * v + offset).expect("rigid copy of a valid mesh")
}

fn recentered(mesh: TriangleMesh) -> Result<TriangleMesh, GeometryError> {
    // Bounding-box center at the origin keeps the object frame near the geometry.
    let (mut lo, mut hi) = (Vector3::repeat(f64::INFINITY), Vector3::repeat(f64::NEG_INFINITY));
    for v in mesh.vertices() {
        lo = lo.inf(v);
        hi = hi.sup(v);
    }
    let c = (lo + hi) / 2.0;
    mesh.transformed(|v| v - c)
}

/// Named, asymmetric procedural meshes with diameters between roughly 0.2 and 0.3 m.
///
/// None of them has a nontrivial rotational symmetry, so silhouettes from
/// enough views determine the orientation uniquely.
pub fn procedural_set() -> Vec<(String, TriangleMesh)> {
    let bracket = TriangleMesh::merge(&[
        cuboid(Vector3::new(0.0, 0.0, 0.0), Vector3::new(0.16, 0.04, 0.03)),
        cuboid(Vector3::new(-0.06, 0.05, 0.0), Vector3::new(0.04, 0.08, 0.03)),
        cuboid(Vector3::new(0.05, 0.0, 0.04), Vector3::new(0.03, 0.03, 0.06)),
    ])
    .expect("bracket");
    let mallet = TriangleMesh::merge(&[
        cylinder(0.015, 0.18, 16),
        rotated(
            &cuboid(Vector3::zeros(), Vector3::new(0.10, 0.045, 0.04)),
            UnitQuaternion::from_euler_angles(0.0, 0.0, 0.0),
            Vector3::new(0.03, 0.0, 0.09),
        ),
        cuboid(Vector3::new(0.0, 0.03, -0.07), Vector3::new(0.02, 0.04, 0.02)),
    ])
    .expect("mallet");
    let blob = lumpy_blob(Vector3::new(0.12, 0.08, 0.055), 0.35, 2, 17);
    let wedge = TriangleMesh::new(
        vec![
            Vector3::new(-0.09, -0.05, -0.03),
            Vector3::new(0.11, -0.04, -0.03),
            Vector3::new(-0.07, 0.08, -0.03),
            Vector3::new(-0.08, -0.05, 0.06),
            Vector3::new(0.02, -0.03, 0.05),
            Vector3::new(-0.06, 0.02, 0.08),
        ],
        vec![
            [0, 2, 1], [3, 4, 5], [0, 1, 4], [0, 4, 3],
            [1, 2, 5], [1, 5, 4], [2, 0, 3], [2, 3, 5],
        ],
    )
    .expect("wedge");
    let tee = TriangleMesh::merge(&[
        cuboid(Vector3::new(0.0, 0.0, 0.0), Vector3::new(0.03, 0.03, 0.20)),
        rotated(
            &cuboid(Vector3::zeros(), Vector3::new(0.12, 0.025, 0.03)),
            UnitQuaternion::from_euler_angles(0.0, 0.0, 0.5),
            Vector3::new(0.03, 0.0, 0.085),
        ),
        cuboid(Vector3::new(0.0, 0.04, -0.06), Vector3::new(0.02, 0.06, 0.02)),
    ])
    .expect("tee");
    [
        ("bracket", bracket),
        ("mallet", mallet),
        ("blob", blob),
        ("wedge", wedge),
        ("tee", tee),
    ]
    .into_iter()
    .map(|(n, m)| (n.to_string(), recentered(m).expect("recentering a valid mesh")))
    .collect()
}
