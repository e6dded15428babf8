//! ASCII PLY reading and writing.
//!
//! Point clouds are written as a bare `vertex` element with double `x y z`.
//! Meshes add a `face` element with a `vertex_indices` list and, for labeled
//! meshes, an `int class_id` per face. Coordinates are printed with the
//! shortest representation that round-trips, so writing is deterministic and
//! reading back is exact.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{GeomError, Result};
use crate::geom::{Point, PointCloud, TriangleMesh};

pub fn point_cloud_to_string(cloud: &PointCloud) -> String {
    let mut s = String::with_capacity(32 * cloud.len() + 128);
    s.push_str("ply\nformat ascii 1.0\n");
    let _ = writeln!(s, "element vertex {}", cloud.len());
    s.push_str("property double x\nproperty double y\nproperty double z\nend_header\n");
    for p in &cloud.points {
        let _ = writeln!(s, "{} {} {}", p.x, p.y, p.z);
    }
    s
}

pub fn mesh_to_string(mesh: &TriangleMesh) -> String {
    let mut s = String::with_capacity(32 * mesh.vertices.len() + 24 * mesh.faces.len() + 256);
    s.push_str("ply\nformat ascii 1.0\n");
    let _ = writeln!(s, "element vertex {}", mesh.vertices.len());
    s.push_str("property double x\nproperty double y\nproperty double z\n");
    let _ = writeln!(s, "element face {}", mesh.faces.len());
    s.push_str("property list uchar int vertex_indices\n");
    if mesh.labels.is_some() {
        s.push_str("property int class_id\n");
    }
    s.push_str("end_header\n");
    for p in &mesh.vertices {
        let _ = writeln!(s, "{} {} {}", p.x, p.y, p.z);
    }
    for (i, f) in mesh.faces.iter().enumerate() {
        match &mesh.labels {
            Some(l) => {
                let _ = writeln!(s, "3 {} {} {} {}", f[0], f[1], f[2], l[i]);
            }
            None => {
                let _ = writeln!(s, "3 {} {} {}", f[0], f[1], f[2]);
            }
        }
    }
    s
}

pub fn write_point_cloud(path: impl AsRef<Path>, cloud: &PointCloud) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, point_cloud_to_string(cloud)).map_err(|e| GeomError::io(path, e))
}

pub fn write_mesh(path: impl AsRef<Path>, mesh: &TriangleMesh) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, mesh_to_string(mesh)).map_err(|e| GeomError::io(path, e))
}

pub fn read_point_cloud(path: impl AsRef<Path>) -> Result<PointCloud> {
    read_mesh(path).map(|m| PointCloud::new(m.vertices))
}

pub fn read_mesh(path: impl AsRef<Path>) -> Result<TriangleMesh> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| GeomError::io(path, e))?;
    parse_ply(&text).map_err(|msg| GeomError::Ply {
        path: path.display().to_string(),
        msg,
    })
}

#[derive(Debug)]
enum Property {
    Scalar(String),
    List(String),
}

#[derive(Debug)]
struct Element {
    name: String,
    count: usize,
    props: Vec<Property>,
}

/// Parses ASCII PLY text. Non-triangular faces are fan-triangulated.
pub fn parse_ply(text: &str) -> std::result::Result<TriangleMesh, String> {
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some("ply") {
        return Err("missing 'ply' magic".into());
    }
    let mut elements: Vec<Element> = Vec::new();
    let mut ascii = false;
    loop {
        let line = lines.next().ok_or("unexpected end of header")?.trim();
        let mut tok = line.split_whitespace();
        match tok.next() {
            Some("format") => {
                if tok.next() != Some("ascii") {
                    return Err("only ASCII PLY is supported".into());
                }
                ascii = true;
            }
            Some("comment") | Some("obj_info") | None => {}
            Some("element") => {
                let name = tok.next().ok_or("element without name")?.to_string();
                let count = tok
                    .next()
                    .ok_or("element without count")?
                    .parse()
                    .map_err(|e| format!("bad element count: {e}"))?;
                elements.push(Element {
                    name,
                    count,
                    props: Vec::new(),
                });
            }
            Some("property") => {
                let el = elements.last_mut().ok_or("property before element")?;
                let kind = tok.next().ok_or("property without type")?;
                if kind == "list" {
                    tok.next();
                    tok.next();
                    el.props.push(Property::List(tok.next().ok_or("list without name")?.into()));
                } else {
                    el.props.push(Property::Scalar(tok.next().ok_or("property without name")?.into()));
                }
            }
            Some("end_header") => break,
            Some(other) => return Err(format!("unknown header keyword '{other}'")),
        }
    }
    if !ascii {
        return Err("missing format line".into());
    }

    let mut mesh = TriangleMesh::default();
    let mut labels: Vec<u32> = Vec::new();
    let mut has_labels = false;
    for el in &elements {
        match el.name.as_str() {
            "vertex" => {
                let pos = |n: &str| {
                    el.props
                        .iter()
                        .position(|p| matches!(p, Property::Scalar(s) if s == n))
                        .ok_or(format!("vertex element lacks '{n}'"))
                };
                let (ix, iy, iz) = (pos("x")?, pos("y")?, pos("z")?);
                if el.props.iter().any(|p| matches!(p, Property::List(_))) {
                    return Err("list properties on vertices are not supported".into());
                }
                for _ in 0..el.count {
                    let line = lines.next().ok_or("truncated vertex data")?;
                    let vals: Vec<f64> = line
                        .split_whitespace()
                        .map(|t| t.parse::<f64>().map_err(|e| format!("bad vertex value '{t}': {e}")))
                        .collect::<std::result::Result<_, _>>()?;
                    if vals.len() < el.props.len() {
                        return Err(format!("vertex line has {} values, expected {}", vals.len(), el.props.len()));
                    }
                    mesh.vertices.push(Point::new(vals[ix], vals[iy], vals[iz]));
                }
            }
            "face" => {
                has_labels = el
                    .props
                    .iter()
                    .any(|p| matches!(p, Property::Scalar(s) if s == "class_id"));
                for _ in 0..el.count {
                    let line = lines.next().ok_or("truncated face data")?;
                    let mut tok = line.split_whitespace();
                    let mut poly: Vec<usize> = Vec::new();
                    let mut class = 0u32;
                    for prop in &el.props {
                        match prop {
                            Property::List(name) => {
                                let n: usize = tok
                                    .next()
                                    .ok_or("missing list length")?
                                    .parse()
                                    .map_err(|e| format!("bad list length: {e}"))?;
                                let mut items = Vec::with_capacity(n);
                                for _ in 0..n {
                                    let v: usize = tok
                                        .next()
                                        .ok_or("truncated face list")?
                                        .parse()
                                        .map_err(|e| format!("bad face index: {e}"))?;
                                    items.push(v);
                                }
                                if name == "vertex_indices" || name == "vertex_index" {
                                    poly = items;
                                }
                            }
                            Property::Scalar(name) => {
                                let t = tok.next().ok_or("truncated face line")?;
                                if name == "class_id" {
                                    class = t
                                        .parse::<f64>()
                                        .map_err(|e| format!("bad class_id: {e}"))?
                                        as u32;
                                }
                            }
                        }
                    }
                    if poly.len() < 3 {
                        return Err("face with fewer than 3 vertices".into());
                    }
                    for k in 1..poly.len() - 1 {
                        mesh.faces.push([poly[0], poly[k], poly[k + 1]]);
                        labels.push(class);
                    }
                }
            }
            _ => {
                for _ in 0..el.count {
                    lines.next().ok_or("truncated element data")?;
                }
            }
        }
    }
    if has_labels {
        mesh.labels = Some(labels);
    }
    mesh.validate().map_err(|e| e.to_string())?;
    Ok(mesh)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn labeled_mesh_round_trip() {
        let mesh = TriangleMesh::new(
            vec![Point::new(0.1, 0.2, 0.3), Point::new(1.0, -2.5e-7, 3.0), Point::new(0.0, 1.0, 1e10)],
            vec![[0, 1, 2], [2, 1, 0]],
        )
        .with_labels(vec![0, 14]);
        let back = parse_ply(&mesh_to_string(&mesh)).unwrap();
        assert_eq!(back, mesh);
    }

    #[test]
    fn reads_quads_and_foreign_properties() {
        let text = "ply\nformat ascii 1.0\ncomment made by hand\nelement vertex 4\nproperty float x\nproperty float y\nproperty float z\nproperty uchar red\nelement face 1\nproperty list uchar int vertex_index\nend_header\n0 0 0 255\n1 0 0 255\n1 1 0 255\n0 1 0 255\n4 0 1 2 3\n";
        let m = parse_ply(text).unwrap();
        assert_eq!(m.faces, vec![[0, 1, 2], [0, 2, 3]]);
        assert!(m.labels.is_none());
    }

    #[test]
    fn rejects_binary_and_bad_indices() {
        assert!(parse_ply("ply\nformat binary_little_endian 1.0\nend_header\n").is_err());
        let bad = "ply\nformat ascii 1.0\nelement vertex 1\nproperty double x\nproperty double y\nproperty double z\nelement face 1\nproperty list uchar int vertex_indices\nend_header\n0 0 0\n3 0 1 2\n";
        assert!(parse_ply(bad).is_err());
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.ply");
        let cloud = PointCloud::from_xyz(&[[1.0, 2.0, 3.0], [0.1, 0.2, 0.30000000000000004]]);
        write_point_cloud(&path, &cloud).unwrap();
        assert_eq!(read_point_cloud(&path).unwrap(), cloud);
        assert!(matches!(read_mesh(dir.path().join("missing.ply")), Err(GeomError::Io { .. })));
    }

    proptest! {
        #[test]
        fn cloud_text_round_trip_is_exact(coords in prop::collection::vec(prop::array::uniform3(-1e6..1e6f64), 0..30)) {
            let cloud = PointCloud::from_xyz(&coords);
            let back = parse_ply(&point_cloud_to_string(&cloud)).unwrap();
            prop_assert_eq!(back.vertices, cloud.points);
        }
    }
}
