//! Triangle meshes with a deduplicated edge list, plus OBJ I/O.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::math::Vec3;
use crate::scalar::Real;

#[derive(Clone, Debug, PartialEq)]
pub struct TriMesh<T> {
    pub vertices: Vec<Vec3<T>>,
    /// Unique unordered pairs, stored `(lo, hi)` and sorted.
    pub edges: Vec<(usize, usize)>,
    pub faces: Vec<[usize; 3]>,
    /// Per-vertex unit normals; derived from faces when absent.
    pub normals: Option<Vec<Vec3<T>>>,
    /// Per-vertex RGB in `[0, 1]`.
    pub colors: Option<Vec<Vec3<T>>>,
}

impl<T: Real> TriMesh<T> {
    pub fn from_faces(vertices: Vec<Vec3<T>>, faces: Vec<[usize; 3]>) -> Result<Self> {
        let n = vertices.len();
        for (fi, f) in faces.iter().enumerate() {
            if f.iter().any(|&i| i >= n) {
                return Err(Error::InvalidMesh(format!("face {fi} references a vertex out of range")));
            }
        }
        let edges = edges_of(&faces);
        Ok(Self { vertices, edges, faces, normals: None, colors: None })
    }

    pub fn with_normals(mut self, normals: Vec<Vec3<T>>) -> Result<Self> {
        if normals.len() != self.vertices.len() {
            return Err(Error::DimensionMismatch {
                what: "vertex normals",
                expected: self.vertices.len(),
                got: normals.len(),
            });
        }
        self.normals = Some(normals);
        Ok(self)
    }

    pub fn with_colors(mut self, colors: Vec<Vec3<T>>) -> Result<Self> {
        if colors.len() != self.vertices.len() {
            return Err(Error::DimensionMismatch {
                what: "vertex colors",
                expected: self.vertices.len(),
                got: colors.len(),
            });
        }
        self.colors = Some(colors);
        Ok(self)
    }

    pub fn vertex_count(&self) -> usize {
        self.vertices.len()
    }

    /// Stored normals, or area-weighted face normals accumulated per vertex.
    /// Vectors are returned unnormalized when derived so callers can detect
    /// zero-length normals.
    pub fn vertex_normals(&self) -> Vec<Vec3<T>> {
        if let Some(n) = &self.normals {
            return n.clone();
        }
        let mut acc = vec![Vec3::zero(); self.vertices.len()];
        for f in &self.faces {
            let [a, b, c] = f.map(|i| self.vertices[i]);
            let n = (b - a).cross(&(c - a));
            for &i in f {
                acc[i] += n;
            }
        }
        acc
    }

    /// Mean length of the edges incident to each vertex; `None` for isolated vertices.
    pub fn mean_incident_edge_lengths(&self) -> Vec<Option<T>> {
        let mut sum = vec![T::zero(); self.vertices.len()];
        let mut count = vec![0usize; self.vertices.len()];
        for &(i, j) in &self.edges {
            let l = (self.vertices[i] - self.vertices[j]).norm();
            sum[i] = sum[i] + l;
            sum[j] = sum[j] + l;
            count[i] += 1;
            count[j] += 1;
        }
        sum.into_iter()
            .zip(count)
            .map(|(s, c)| if c == 0 { None } else { Some(s / T::count(c)) })
            .collect()
    }

    pub fn with_vertices(&self, vertices: Vec<Vec3<T>>) -> Self {
        assert_eq!(vertices.len(), self.vertices.len());
        Self {
            vertices,
            edges: self.edges.clone(),
            faces: self.faces.clone(),
            normals: None,
            colors: self.colors.clone(),
        }
    }

    /// Serialize as OBJ: `v` lines (with RGB when colors are present), `vn`
    /// lines when normals are stored, and 1-based `f` triangles.
    pub fn to_obj(&self) -> String {
        let mut s = String::new();
        for (i, v) in self.vertices.iter().enumerate() {
            match &self.colors {
                Some(c) => {
                    let c = c[i];
                    writeln!(s, "v {} {} {} {} {} {}", v[0], v[1], v[2], c[0], c[1], c[2]).unwrap()
                }
                None => writeln!(s, "v {} {} {}", v[0], v[1], v[2]).unwrap(),
            }
        }
        if let Some(ns) = &self.normals {
            for n in ns {
                writeln!(s, "vn {} {} {}", n[0], n[1], n[2]).unwrap();
            }
            for f in &self.faces {
                writeln!(s, "f {0}//{0} {1}//{1} {2}//{2}", f[0] + 1, f[1] + 1, f[2] + 1).unwrap();
            }
        } else {
            for f in &self.faces {
                writeln!(s, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1).unwrap();
            }
        }
        s
    }

    /// Parse OBJ text restricted to `v`, `vn` and triangular `f` records.
    pub fn from_obj(text: &str) -> Result<Self> {
        let mut vertices = Vec::new();
        let mut colors = Vec::new();
        let mut file_normals = Vec::new();
        let mut faces = Vec::new();
        let mut corner_normals: Vec<(usize, usize)> = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            let mut it = line.split_whitespace();
            let Some(tag) = it.next() else { continue };
            let nums = |it: std::str::SplitWhitespace<'_>| -> Result<Vec<T>> {
                it.map(|t| {
                    t.parse::<f64>()
                        .map(T::lit)
                        .map_err(|_| Error::format("obj", format!("line {}: bad number `{t}`", lineno + 1)))
                })
                .collect()
            };
            match tag {
                "v" => {
                    let v = nums(it)?;
                    match v.len() {
                        3 => vertices.push(Vec3::new(v[0], v[1], v[2])),
                        6 => {
                            vertices.push(Vec3::new(v[0], v[1], v[2]));
                            colors.push(Vec3::new(v[3], v[4], v[5]));
                        }
                        n => {
                            return Err(Error::format("obj", format!("line {}: `v` with {n} values", lineno + 1)))
                        }
                    }
                }
                "vn" => {
                    let v = nums(it)?;
                    if v.len() != 3 {
                        return Err(Error::format("obj", format!("line {}: `vn` needs 3 values", lineno + 1)));
                    }
                    file_normals.push(Vec3::new(v[0], v[1], v[2]));
                }
                "f" => {
                    let corners: Vec<&str> = it.collect();
                    if corners.len() != 3 {
                        return Err(Error::format("obj", format!("line {}: only triangles are supported", lineno + 1)));
                    }
                    let mut f = [0usize; 3];
                    for (k, corner) in corners.iter().enumerate() {
                        let mut parts = corner.split('/');
                        let vi = parse_index(parts.next(), lineno)?;
                        f[k] = vi;
                        if let Some(ni) = parts.nth(1) {
                            if !ni.is_empty() {
                                corner_normals.push((vi, parse_index(Some(ni), lineno)?));
                            }
                        }
                    }
                    faces.push(f);
                }
                _ => {}
            }
        }
        let mut mesh = Self::from_faces(vertices, faces)?;
        if !colors.is_empty() {
            mesh = mesh.with_colors(colors)?;
        }
        if !corner_normals.is_empty() {
            let mut normals = vec![Vec3::zero(); mesh.vertices.len()];
            for (vi, ni) in corner_normals {
                let n = *file_normals
                    .get(ni)
                    .ok_or_else(|| Error::format("obj", format!("normal index {} out of range", ni + 1)))?;
                normals[vi] = n;
            }
            mesh = mesh.with_normals(normals)?;
        }
        Ok(mesh)
    }

    pub fn load_obj(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_obj(&text)
    }

    pub fn save_obj(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_obj()).map_err(|e| Error::io(path, e))
    }
}

fn parse_index(tok: Option<&str>, lineno: usize) -> Result<usize> {
    let tok = tok.unwrap_or("");
    match tok.parse::<usize>() {
        Ok(i) if i >= 1 => Ok(i - 1),
        _ => Err(Error::format("obj", format!("line {}: bad index `{tok}`", lineno + 1))),
    }
}

/// Unique sorted `(lo, hi)` edges of a triangle list.
pub fn edges_of(faces: &[[usize; 3]]) -> Vec<(usize, usize)> {
    let mut set = BTreeSet::new();
    for f in faces {
        for k in 0..3 {
            let (a, b) = (f[k], f[(k + 1) % 3]);
            if a != b {
                set.insert((a.min(b), a.max(b)));
            }
        }
    }
    set.into_iter().collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn square() -> TriMesh<f64> {
        TriMesh::from_faces(
            vec![
                Vec3::new(0.0, 0.0, 0.0),
                Vec3::new(1.0, 0.0, 0.0),
                Vec3::new(1.0, 1.0, 0.0),
                Vec3::new(0.0, 1.0, 0.0),
            ],
            vec![[0, 1, 2], [0, 2, 3]],
        )
        .unwrap()
    }

    #[test]
    fn edges_are_deduplicated() {
        assert_eq!(square().edges, vec![(0, 1), (0, 2), (0, 3), (1, 2), (2, 3)]);
    }

    #[test]
    fn obj_roundtrip_keeps_normals_and_colors() {
        let m = square()
            .with_normals(vec![Vec3::new(0.0, 0.0, 1.0); 4])
            .unwrap()
            .with_colors(vec![Vec3::new(0.25, 0.5, 1.0); 4])
            .unwrap();
        let back = TriMesh::<f64>::from_obj(&m.to_obj()).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn quads_are_rejected() {
        let err = TriMesh::<f64>::from_obj("v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf 1 2 3 4\n").unwrap_err();
        assert!(matches!(err, Error::Format { .. }));
    }
}
