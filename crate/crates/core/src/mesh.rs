//! Triangle meshes: a minimal OBJ-subset loader, angle-weighted vertex
//! normals, and a UV-sphere generator for tests and synthetic scenes.

use std::fs;
use std::path::Path;

use nalgebra::Vector3;

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct TriMesh {
    pub vertices: Vec<Vector3<f64>>,
    pub triangles: Vec<[usize; 3]>,
    /// Unit per-vertex normals, angle-weighted over incident faces.
    pub vertex_normals: Vec<Vector3<f64>>,
}

impl TriMesh {
    pub fn new(vertices: Vec<Vector3<f64>>, triangles: Vec<[usize; 3]>) -> Result<TriMesh> {
        if vertices.is_empty() || triangles.is_empty() {
            return Err(Error::argument("mesh has no triangles"));
        }
        if vertices
            .iter()
            .any(|v| !(v.x.is_finite() && v.y.is_finite() && v.z.is_finite()))
        {
            return Err(Error::argument("mesh vertices must be finite"));
        }
        for tri in &triangles {
            if tri.iter().any(|&i| i >= vertices.len()) {
                return Err(Error::argument("triangle index out of range"));
            }
        }
        let vertex_normals = angle_weighted_normals(&vertices, &triangles);
        Ok(TriMesh {
            vertices,
            triangles,
            vertex_normals,
        })
    }

    /// Reads `v` and `f` lines; everything else is skipped. Face entries may
    /// be `i`, `i/j`, `i/j/k`, or `i//k` (only the position index is used),
    /// and polygons are fan-triangulated.
    pub fn load_obj(path: impl AsRef<Path>) -> Result<TriMesh> {
        let path = path.as_ref();
        let text =
            fs::read_to_string(path).map_err(|e| Error::io(format!("{}: {e}", path.display())))?;
        let mut vertices = Vec::new();
        let mut triangles = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let mut fields = line.split_whitespace();
            let bad = |what: &str| Error::io(format!("{}:{}: {what}", path.display(), lineno + 1));
            match fields.next() {
                Some("v") => {
                    let mut coord = || -> Result<f64> {
                        fields
                            .next()
                            .and_then(|t| t.parse().ok())
                            .ok_or_else(|| bad("malformed vertex"))
                    };
                    let (x, y, z) = (coord()?, coord()?, coord()?);
                    vertices.push(Vector3::new(x, y, z));
                }
                Some("f") => {
                    let corners: Vec<usize> = fields
                        .map(|entry| {
                            let idx: i64 = entry
                                .split('/')
                                .next()
                                .and_then(|t| t.parse().ok())
                                .ok_or_else(|| bad("malformed face entry"))?;
                            if idx < 1 || idx as usize > vertices.len() {
                                return Err(bad("face index out of range"));
                            }
                            Ok(idx as usize - 1)
                        })
                        .collect::<Result<_>>()?;
                    if corners.len() < 3 {
                        return Err(bad("face with fewer than 3 vertices"));
                    }
                    for i in 1..corners.len() - 1 {
                        triangles.push([corners[0], corners[i], corners[i + 1]]);
                    }
                }
                _ => {}
            }
        }
        TriMesh::new(vertices, triangles)
    }

    /// Latitude/longitude sphere with outward-wound triangles.
    pub fn uv_sphere(center: Vector3<f64>, radius: f64, stacks: usize, slices: usize) -> TriMesh {
        assert!(stacks >= 2 && slices >= 3, "sphere tessellation too coarse");
        let mut vertices = vec![center + Vector3::new(0.0, radius, 0.0)];
        for i in 1..stacks {
            let phi = std::f64::consts::PI * i as f64 / stacks as f64;
            for j in 0..slices {
                let theta = std::f64::consts::TAU * j as f64 / slices as f64;
                vertices.push(
                    center
                        + radius
                            * Vector3::new(
                                phi.sin() * theta.cos(),
                                phi.cos(),
                                phi.sin() * theta.sin(),
                            ),
                );
            }
        }
        vertices.push(center - Vector3::new(0.0, radius, 0.0));
        let last = vertices.len() - 1;
        let ring = |i: usize, j: usize| 1 + (i - 1) * slices + j % slices;

        let mut triangles = Vec::new();
        for j in 0..slices {
            triangles.push([0, ring(1, j + 1), ring(1, j)]);
        }
        for i in 1..stacks - 1 {
            for j in 0..slices {
                let (a, b) = (ring(i, j), ring(i + 1, j));
                let (d, c) = (ring(i, j + 1), ring(i + 1, j + 1));
                triangles.push([a, d, b]);
                triangles.push([d, c, b]);
            }
        }
        for j in 0..slices {
            triangles.push([ring(stacks - 1, j), ring(stacks - 1, j + 1), last]);
        }
        TriMesh::new(vertices, triangles).expect("generated sphere is valid")
    }

    pub fn centroid(&self) -> Vector3<f64> {
        self.vertices.iter().sum::<Vector3<f64>>() / self.vertices.len() as f64
    }
}

fn angle_weighted_normals(
    vertices: &[Vector3<f64>],
    triangles: &[[usize; 3]],
) -> Vec<Vector3<f64>> {
    let mut acc = vec![Vector3::zeros(); vertices.len()];
    for tri in triangles {
        let p = [vertices[tri[0]], vertices[tri[1]], vertices[tri[2]]];
        let face = (p[1] - p[0]).cross(&(p[2] - p[0]));
        let norm = face.norm();
        if norm <= 1e-18 {
            continue;
        }
        let face = face / norm;
        for k in 0..3 {
            let e1 = p[(k + 1) % 3] - p[k];
            let e2 = p[(k + 2) % 3] - p[k];
            acc[tri[k]] += e1.angle(&e2) * face;
        }
    }
    acc.into_iter()
        .map(|n| {
            let norm = n.norm();
            if norm <= 1e-12 {
                Vector3::zeros()
            } else {
                n / norm
            }
        })
        .collect()
}
