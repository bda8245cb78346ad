//! Incremental Bowyer–Watson Delaunay triangulation.
//!
//! The convex hull is closed off with ghost triangles that share a vertex at
//! infinity, so points outside the current hull need no super-triangle. All
//! decisions go through exact orientation and in-circle predicates. Points are
//! inserted in index order and a point exactly on a circumcircle does not
//! conflict with that triangle, which settles cocircular ties the same way on
//! every run.

use std::collections::HashSet;

use robust::{incircle, orient2d, Coord};

use crate::error::{GrnnError, Result};

const GHOST: usize = usize::MAX;

fn coord(p: [f64; 2]) -> Coord<f64> {
    Coord { x: p[0], y: p[1] }
}

/// Positive if `a, b, c` turn counterclockwise.
pub fn orient(a: [f64; 2], b: [f64; 2], c: [f64; 2]) -> f64 {
    orient2d(coord(a), coord(b), coord(c))
}

/// Positive if `d` lies strictly inside the circle through counterclockwise `a, b, c`.
pub fn in_circle(a: [f64; 2], b: [f64; 2], c: [f64; 2], d: [f64; 2]) -> f64 {
    incircle(coord(a), coord(b), coord(c), coord(d))
}

fn strictly_between(a: [f64; 2], b: [f64; 2], p: [f64; 2]) -> bool {
    // p is collinear with a, b
    let inside = |lo: f64, hi: f64, v: f64| (lo.min(hi) < v && v < lo.max(hi)) || (lo == hi && v == lo);
    inside(a[0], b[0], p[0]) && inside(a[1], b[1], p[1]) && p != a && p != b
}

/// Triangles as counterclockwise index triples.
pub fn triangulate(points: &[[f64; 2]]) -> Result<Vec<[usize; 3]>> {
    if points.len() < 3 {
        return Err(GrnnError::Geometry(format!("need at least 3 points, got {}", points.len())));
    }
    if let Some(p) = points.iter().find(|p| !p[0].is_finite() || !p[1].is_finite()) {
        return Err(GrnnError::Geometry(format!("non-finite point {p:?}")));
    }
    let mut seen = HashSet::new();
    for (i, p) in points.iter().enumerate() {
        if !seen.insert((p[0].to_bits(), p[1].to_bits())) {
            return Err(GrnnError::Geometry(format!("duplicate point {i} at {p:?}")));
        }
    }
    let third = (2..points.len())
        .find(|&k| orient(points[0], points[1], points[k]) != 0.0)
        .ok_or_else(|| GrnnError::Geometry("all points are collinear".into()))?;

    let (a, b, c) = if orient(points[0], points[1], points[third]) > 0.0 {
        (0, 1, third)
    } else {
        (1, 0, third)
    };
    // real triangles are counterclockwise; ghost (u, v, GHOST) has the
    // outside of the hull to the left of u -> v
    let mut tris: Vec<[usize; 3]> = vec![[a, b, c], [b, a, GHOST], [c, b, GHOST], [a, c, GHOST]];

    let mut bad = Vec::new();
    let mut edges: HashSet<(usize, usize)> = HashSet::new();
    for (i, &p) in points.iter().enumerate() {
        if i == a || i == b || i == c {
            continue;
        }
        bad.clear();
        for (t, tri) in tris.iter().enumerate() {
            let conflict = if tri[2] == GHOST {
                let (u, v) = (points[tri[0]], points[tri[1]]);
                let o = orient(u, v, p);
                o > 0.0 || (o == 0.0 && strictly_between(u, v, p))
            } else {
                in_circle(points[tri[0]], points[tri[1]], points[tri[2]], p) > 0.0
            };
            if conflict {
                bad.push(t);
            }
        }
        debug_assert!(!bad.is_empty(), "point {i} conflicts with nothing");
        edges.clear();
        for &t in &bad {
            let tri = tris[t];
            for k in 0..3 {
                edges.insert((tri[k], tri[(k + 1) % 3]));
            }
        }
        let boundary: Vec<(usize, usize)> = edges
            .iter()
            .copied()
            .filter(|&(u, v)| !edges.contains(&(v, u)))
            .collect();
        for &t in bad.iter().rev() {
            tris.swap_remove(t);
        }
        for (u, v) in boundary {
            // keep GHOST in the last slot, preserving the cyclic order
            let tri = if u == GHOST {
                [v, i, GHOST]
            } else if v == GHOST {
                [i, u, GHOST]
            } else {
                [u, v, i]
            };
            tris.push(tri);
        }
    }
    let mut out: Vec<[usize; 3]> = tris.into_iter().filter(|t| t[2] != GHOST).collect();
    for t in &mut out {
        // rotate so the smallest index comes first
        let m = (0..3).min_by_key(|&k| t[k]).unwrap();
        t.rotate_left(m);
    }
    out.sort_unstable();
    Ok(out)
}

/// Unique undirected edges `(lo, hi)` of a triangle set, sorted.
pub fn triangle_edges(tris: &[[usize; 3]]) -> Vec<(usize, usize)> {
    let mut set = HashSet::new();
    for t in tris {
        for k in 0..3 {
            let (u, v) = (t[k], t[(k + 1) % 3]);
            set.insert((u.min(v), u.max(v)));
        }
    }
    let mut out: Vec<_> = set.into_iter().collect();
    out.sort_unstable();
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Edges of every triangle whose circumcircle holds no other point, by exhaustive search.
    fn brute_force_edges(p: &[[f64; 2]]) -> Vec<(usize, usize)> {
        let n = p.len();
        let mut tris = Vec::new();
        for i in 0..n {
            for j in i + 1..n {
                for k in j + 1..n {
                    let o = orient(p[i], p[j], p[k]);
                    if o == 0.0 {
                        continue;
                    }
                    let (a, b) = if o > 0.0 { (i, j) } else { (j, i) };
                    if (0..n).all(|m| m == i || m == j || m == k || in_circle(p[a], p[b], p[k], p[m]) <= 0.0) {
                        tris.push([i, j, k]);
                    }
                }
            }
        }
        triangle_edges(&tris)
    }

    fn random_points(rng: &mut ChaCha8Rng, n: usize) -> Vec<[f64; 2]> {
        (0..n).map(|_| [rng.gen_range(-10.0..10.0), rng.gen_range(-10.0..10.0)]).collect()
    }

    #[test]
    fn three_points_one_triangle() {
        let t = triangulate(&[[0.0, 0.0], [0.0, 1.0], [1.0, 0.0]]).unwrap();
        assert_eq!(t, vec![[0, 2, 1]]);
    }

    #[test]
    fn unit_square_splits_on_one_diagonal() {
        let sq = [[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]];
        let t = triangulate(&sq).unwrap();
        assert_eq!(t.len(), 2);
        let e = triangle_edges(&t);
        assert_eq!(e.len(), 5);
        assert!(e.contains(&(0, 2)) ^ e.contains(&(1, 3)));
        // both triangles have all four corners on or outside their circles
        for tri in &t {
            for q in sq {
                assert!(in_circle(sq[tri[0]], sq[tri[1]], sq[tri[2]], q) <= 0.0);
            }
        }
        assert_eq!(triangulate(&sq).unwrap(), t);
    }

    #[test]
    fn degenerate_inputs_are_rejected() {
        assert!(triangulate(&[[0.0, 0.0], [1.0, 1.0]]).is_err());
        assert!(triangulate(&[[0.0, 0.0], [1.0, 1.0], [2.0, 2.0], [3.0, 3.0]]).is_err());
        assert!(triangulate(&[[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [1.0, 0.0]]).is_err());
    }

    #[test]
    fn collinear_prefix_and_hull_points() {
        // first points collinear, some later ones on hull edges and their extensions
        let pts = [
            [0.0, 0.0],
            [1.0, 0.0],
            [2.0, 0.0],
            [3.0, 0.0],
            [1.5, 2.0],
            [0.5, 0.0],
            [4.0, 0.0],
            [-1.0, 0.0],
            [1.5, -1.0],
        ];
        let t = triangulate(&pts).unwrap();
        for tri in &t {
            assert!(orient(pts[tri[0]], pts[tri[1]], pts[tri[2]]) > 0.0);
            for q in pts {
                assert!(in_circle(pts[tri[0]], pts[tri[1]], pts[tri[2]], q) <= 0.0);
            }
        }
        // Euler: 2n - 2 - h triangles with h hull vertices; here h counts collinear hull points
        let used: HashSet<usize> = t.iter().flatten().copied().collect();
        assert_eq!(used.len(), pts.len());
    }

    #[test]
    fn grid_points_are_triangulated_consistently() {
        let pts: Vec<[f64; 2]> = (0..5).flat_map(|i| (0..5).map(move |j| [i as f64, j as f64])).collect();
        let t = triangulate(&pts).unwrap();
        assert_eq!(t.len(), 32);
        for tri in &t {
            assert!(orient(pts[tri[0]], pts[tri[1]], pts[tri[2]]) > 0.0);
            for &q in &pts {
                assert!(in_circle(pts[tri[0]], pts[tri[1]], pts[tri[2]], q) <= 0.0);
            }
        }
    }

    #[test]
    fn matches_brute_force_on_random_sets() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let n = rng.gen_range(3..=30);
            let pts = random_points(&mut rng, n);
            let t = triangulate(&pts).unwrap();
            assert_eq!(triangle_edges(&t), brute_force_edges(&pts));
        }
    }

    #[test]
    fn fifty_points_empty_circumcircles() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let pts = random_points(&mut rng, 50);
        for tri in triangulate(&pts).unwrap() {
            for (m, &q) in pts.iter().enumerate() {
                if !tri.contains(&m) {
                    assert!(in_circle(pts[tri[0]], pts[tri[1]], pts[tri[2]], q) < 0.0);
                }
            }
        }
    }
}
