use std::fmt::Write as _;
use std::num::NonZero;
use std::path::Path;

use kiddo::{ImmutableKdTree, SquaredEuclidean};
use nalgebra::{Matrix3, SymmetricEigen, Vector3};

use super::pose::Pose;
use crate::error::{Error, Result};

const UNIT_TOL: f64 = 1e-6;

/// Points in meters, optionally with one unit normal per point.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PointCloud {
    points: Vec<Vector3<f64>>,
    normals: Option<Vec<Vector3<f64>>>,
}

/// How estimated normals are oriented.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NormalOrientation {
    /// Flip each normal to face the viewpoint.
    Viewpoint(Vector3<f64>),
    /// Flip each normal to point away from the cloud centroid.
    Outward,
}

impl PointCloud {
    pub fn new(points: Vec<Vector3<f64>>) -> Self {
        Self { points, normals: None }
    }

    pub fn with_normals(points: Vec<Vector3<f64>>, normals: Vec<Vector3<f64>>) -> Result<Self> {
        if normals.len() != points.len() {
            return Err(Error::domain(format!(
                "{} normals for {} points",
                normals.len(),
                points.len()
            )));
        }
        if let Some(i) = normals.iter().position(|n| (n.norm() - 1.0).abs() > UNIT_TOL) {
            return Err(Error::domain(format!(
                "normal {i} has length {}, expected unit length",
                normals[i].norm()
            )));
        }
        Ok(Self {
            points,
            normals: Some(normals),
        })
    }

    pub fn points(&self) -> &[Vector3<f64>] {
        &self.points
    }

    pub fn normals(&self) -> Option<&[Vector3<f64>]> {
        self.normals.as_deref()
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn centroid(&self) -> Option<Vector3<f64>> {
        if self.points.is_empty() {
            return None;
        }
        let sum: Vector3<f64> = self.points.iter().sum();
        Some(sum / self.points.len() as f64)
    }

    /// Cloud with every point (and normal) mapped through `pose`.
    pub fn transformed(&self, pose: &Pose) -> PointCloud {
        PointCloud {
            points: self.points.iter().map(|p| pose.transform_point(p)).collect(),
            normals: self
                .normals
                .as_ref()
                .map(|ns| ns.iter().map(|n| pose.transform_vector(n)).collect()),
        }
    }

    /// Concatenation; normals survive only if both sides carry them.
    pub fn merged(&self, other: &PointCloud) -> PointCloud {
        let mut points = self.points.clone();
        points.extend_from_slice(&other.points);
        let normals = match (&self.normals, &other.normals) {
            (Some(a), Some(b)) => Some(a.iter().chain(b).copied().collect()),
            _ => None,
        };
        PointCloud { points, normals }
    }

    /// Index and distance of the point closest to `q` (linear scan).
    pub fn nearest(&self, q: &Vector3<f64>) -> Option<(usize, f64)> {
        self.points
            .iter()
            .enumerate()
            .map(|(i, p)| (i, (p - q).norm_squared()))
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .map(|(i, d2)| (i, d2.sqrt()))
    }

    /// Normals from the smallest principal direction of each point's `k`
    /// nearest neighbours (the point itself included).
    pub fn estimate_normals(&self, k: usize, orientation: NormalOrientation) -> Result<PointCloud> {
        if k < 3 {
            return Err(Error::domain(format!("normal estimation needs k >= 3, got {k}")));
        }
        if self.points.len() < k {
            return Err(Error::domain(format!(
                "normal estimation with k = {k} needs at least {k} points, cloud has {}",
                self.points.len()
            )));
        }
        let coords: Vec<[f64; 3]> = self.points.iter().map(|p| [p.x, p.y, p.z]).collect();
        let tree: ImmutableKdTree<f64, 3> = ImmutableKdTree::new_from_slice(&coords);
        let centroid = self.centroid().unwrap_or_default();
        let qty = NonZero::new(k).expect("k >= 3");

        let normals = self
            .points
            .iter()
            .map(|p| {
                let neighbours = tree.nearest_n::<SquaredEuclidean>(&[p.x, p.y, p.z], qty);
                let mean: Vector3<f64> = neighbours
                    .iter()
                    .map(|nb| self.points[nb.item as usize])
                    .sum::<Vector3<f64>>()
                    / neighbours.len() as f64;
                let cov = neighbours.iter().fold(Matrix3::zeros(), |acc, nb| {
                    let d = self.points[nb.item as usize] - mean;
                    acc + d * d.transpose()
                });
                let eig = SymmetricEigen::new(cov);
                let (imin, _) = eig
                    .eigenvalues
                    .iter()
                    .enumerate()
                    .min_by(|a, b| a.1.total_cmp(b.1))
                    .expect("3 eigenvalues");
                let mut n: Vector3<f64> = eig.eigenvectors.column(imin).normalize();
                let toward = match orientation {
                    NormalOrientation::Viewpoint(v) => v - p,
                    NormalOrientation::Outward => p - centroid,
                };
                if n.dot(&toward) < 0.0 {
                    n = -n;
                }
                n
            })
            .collect();
        Ok(PointCloud {
            points: self.points.clone(),
            normals: Some(normals),
        })
    }

    /// Loads an ASCII PLY or whitespace-delimited XYZ file, chosen by extension
    /// (`.ply`, anything else is read as XYZ).
    pub fn load(path: &Path) -> Result<PointCloud> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let is_ply = path
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| e.eq_ignore_ascii_case("ply"));
        if is_ply {
            parse_ply(&text, path)
        } else {
            parse_xyz(&text, path)
        }
    }

    /// Writes an ASCII PLY. Coordinates use shortest round-trip formatting,
    /// so loading the file reproduces the cloud bit for bit.
    pub fn save_ply(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_ply()).map_err(|e| Error::io(path, e))
    }

    pub fn to_ply(&self) -> String {
        let mut out = String::new();
        out.push_str("ply\nformat ascii 1.0\n");
        let _ = writeln!(out, "element vertex {}", self.points.len());
        out.push_str("property double x\nproperty double y\nproperty double z\n");
        if self.normals.is_some() {
            out.push_str("property double nx\nproperty double ny\nproperty double nz\n");
        }
        out.push_str("end_header\n");
        for (i, p) in self.points.iter().enumerate() {
            let _ = write!(out, "{} {} {}", p.x, p.y, p.z);
            if let Some(ns) = &self.normals {
                let n = ns[i];
                let _ = write!(out, " {} {} {}", n.x, n.y, n.z);
            }
            out.push('\n');
        }
        out
    }
}

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

fn parse_row(fields: &[&str], path: &Path, line: usize) -> Result<Vec<f64>> {
    fields
        .iter()
        .map(|f| {
            f.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| parse_err(path, line, format!("`{f}` is not a finite number")))
        })
        .collect()
}

fn normalize_normal(n: Vector3<f64>, path: &Path, line: usize) -> Result<Vector3<f64>> {
    let len = n.norm();
    if len < 1e-9 {
        return Err(parse_err(path, line, "zero-length normal"));
    }
    Ok(n / len)
}

/// `x y z` or `x y z nx ny nz` per line; `#` starts a comment.
fn parse_xyz(text: &str, path: &Path) -> Result<PointCloud> {
    let mut points = Vec::new();
    let mut normals = Vec::new();
    let mut width = None;
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let fields: Vec<&str> = content.split_whitespace().collect();
        if fields.len() != 3 && fields.len() != 6 {
            return Err(parse_err(
                path,
                line,
                format!("expected 3 or 6 columns, found {}", fields.len()),
            ));
        }
        if *width.get_or_insert(fields.len()) != fields.len() {
            return Err(parse_err(path, line, "column count changes between rows"));
        }
        let v = parse_row(&fields, path, line)?;
        points.push(Vector3::new(v[0], v[1], v[2]));
        if v.len() == 6 {
            normals.push(normalize_normal(Vector3::new(v[3], v[4], v[5]), path, line)?);
        }
    }
    Ok(if width == Some(6) {
        PointCloud {
            points,
            normals: Some(normals),
        }
    } else {
        PointCloud::new(points)
    })
}

struct PlyElement {
    name: String,
    count: usize,
    properties: Vec<String>,
}

fn parse_ply(text: &str, path: &Path) -> Result<PointCloud> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));
    match lines.next() {
        Some((_, "ply")) => {}
        _ => return Err(parse_err(path, 1, "missing `ply` magic line")),
    }
    let mut elements: Vec<PlyElement> = Vec::new();
    let mut header_done = false;
    for (line, content) in lines.by_ref() {
        let mut tok = content.split_whitespace();
        match tok.next() {
            Some("format") => {
                if tok.next() != Some("ascii") {
                    return Err(parse_err(path, line, "only ASCII PLY is supported"));
                }
            }
            Some("comment") | Some("obj_info") | None => {}
            Some("element") => {
                let name = tok.next().unwrap_or_default().to_string();
                let count = tok
                    .next()
                    .and_then(|c| c.parse().ok())
                    .ok_or_else(|| parse_err(path, line, "element without a valid count"))?;
                elements.push(PlyElement {
                    name,
                    count,
                    properties: Vec::new(),
                });
            }
            Some("property") => {
                let el = elements
                    .last_mut()
                    .ok_or_else(|| parse_err(path, line, "property before any element"))?;
                let name = content.split_whitespace().last().unwrap_or_default();
                el.properties.push(name.to_string());
            }
            Some("end_header") => {
                header_done = true;
                break;
            }
            Some(other) => return Err(parse_err(path, line, format!("unknown header keyword `{other}`"))),
        }
    }
    if !header_done {
        return Err(parse_err(path, text.lines().count(), "header has no `end_header`"));
    }

    let mut body = lines.filter(|(_, l)| !l.is_empty());
    let mut cloud = None;
    for el in &elements {
        if el.name != "vertex" {
            for _ in 0..el.count {
                body.next();
            }
            continue;
        }
        let col = |name: &str| el.properties.iter().position(|p| p == name);
        let (x, y, z) = match (col("x"), col("y"), col("z")) {
            (Some(x), Some(y), Some(z)) => (x, y, z),
            _ => return Err(parse_err(path, 0, "vertex element lacks x, y, z properties")),
        };
        let normal_cols = match (col("nx"), col("ny"), col("nz")) {
            (Some(a), Some(b), Some(c)) => Some((a, b, c)),
            _ => None,
        };
        let mut points = Vec::with_capacity(el.count);
        let mut normals = Vec::new();
        for i in 0..el.count {
            let (line, content) = body
                .next()
                .ok_or_else(|| parse_err(path, 0, format!("expected {} vertices, found {i}", el.count)))?;
            let fields: Vec<&str> = content.split_whitespace().collect();
            if fields.len() != el.properties.len() {
                return Err(parse_err(
                    path,
                    line,
                    format!("expected {} values, found {}", el.properties.len(), fields.len()),
                ));
            }
            let v = parse_row(&fields, path, line)?;
            points.push(Vector3::new(v[x], v[y], v[z]));
            if let Some((a, b, c)) = normal_cols {
                normals.push(normalize_normal(Vector3::new(v[a], v[b], v[c]), path, line)?);
            }
        }
        cloud = Some(PointCloud {
            points,
            normals: normal_cols.map(|_| normals),
        });
        break;
    }
    cloud.ok_or_else(|| parse_err(path, 0, "no vertex element"))
}
