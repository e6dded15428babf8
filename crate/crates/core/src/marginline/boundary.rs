use std::collections::BTreeMap;

use crate::error::{GeomError, Result};
use crate::geom::TriangleMesh;

/// Closed cycle of boundary edges (edges used by exactly one face).
#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryLoop {
    /// Vertex indices in cycle order; the closing edge back to the first
    /// vertex is implied.
    pub vertices: Vec<usize>,
    pub length: f64,
}

/// Boundary edges in face-winding direction, sorted by their undirected key.
pub fn boundary_edges(mesh: &TriangleMesh) -> Vec<(usize, usize)> {
    let mut uses: BTreeMap<(usize, usize), (u32, (usize, usize))> = BTreeMap::new();
    for f in &mesh.faces {
        for k in 0..3 {
            let (a, b) = (f[k], f[(k + 1) % 3]);
            let e = uses.entry((a.min(b), a.max(b))).or_insert((0, (a, b)));
            e.0 += 1;
        }
    }
    uses.into_values()
        .filter(|(count, _)| *count == 1)
        .map(|(_, dir)| dir)
        .collect()
}

/// Assembles all boundary edges into closed loops.
///
/// Walks follow face winding where possible; at vertices with several open
/// edges the winding-consistent edge with the lowest key is taken. Every
/// boundary edge ends up in exactly one loop.
pub fn boundary_loops(mesh: &TriangleMesh) -> Result<Vec<BoundaryLoop>> {
    let edges = boundary_edges(mesh);
    let mut incident: Vec<Vec<usize>> = vec![Vec::new(); mesh.vertices.len()];
    for (id, &(a, b)) in edges.iter().enumerate() {
        incident[a].push(id);
        incident[b].push(id);
    }
    let mut used = vec![false; edges.len()];
    let mut loops = Vec::new();
    for start_edge in 0..edges.len() {
        if used[start_edge] {
            continue;
        }
        used[start_edge] = true;
        let (start, mut current) = edges[start_edge];
        let mut vertices = vec![start];
        let mut length = (mesh.vertices[start] - mesh.vertices[current]).norm();
        while current != start {
            vertices.push(current);
            let next = incident[current]
                .iter()
                .copied()
                .filter(|&e| !used[e])
                .min_by_key(|&e| (edges[e].0 != current, e))
                .ok_or_else(|| {
                    GeomError::Topology(format!("boundary walk from vertex {start} dead-ends at vertex {current}"))
                })?;
            used[next] = true;
            let (a, b) = edges[next];
            let other = if a == current { b } else { a };
            length += (mesh.vertices[current] - mesh.vertices[other]).norm();
            current = other;
        }
        loops.push(BoundaryLoop { vertices, length });
    }
    Ok(loops)
}

/// Picks the margin loop: greatest length, ties (within 1e-9) resolved in
/// favor of the loop holding the lowest vertex index.
pub fn select_margin_loop(loops: &[BoundaryLoop]) -> Option<&BoundaryLoop> {
    let min_vertex = |l: &BoundaryLoop| l.vertices.iter().copied().min().unwrap_or(usize::MAX);
    loops.iter().reduce(|best, l| {
        if l.length > best.length + 1e-9 {
            l
        } else if (l.length - best.length).abs() <= 1e-9 && min_vertex(l) < min_vertex(best) {
            l
        } else {
            best
        }
    })
}
