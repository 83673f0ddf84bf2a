//! Bowyer-Watson Delaunay triangulation and convex hull for small point sets.

use std::collections::{BTreeSet, HashMap};

use crate::error::{Error, Result};
use crate::Vec2;

fn orient(a: Vec2, b: Vec2, c: Vec2) -> f64 {
    (b.x - a.x) * (c.y - a.y) - (b.y - a.y) * (c.x - a.x)
}

/// Positive when `d` lies strictly inside the circumcircle of the
/// counter-clockwise triangle `abc`.
pub fn in_circle(a: Vec2, b: Vec2, c: Vec2, d: Vec2) -> f64 {
    let (adx, ady) = (a.x - d.x, a.y - d.y);
    let (bdx, bdy) = (b.x - d.x, b.y - d.y);
    let (cdx, cdy) = (c.x - d.x, c.y - d.y);
    let ad = adx * adx + ady * ady;
    let bd = bdx * bdx + bdy * bdy;
    let cd = cdx * cdx + cdy * cdy;
    adx * (bdy * cd - bd * cdy) - ady * (bdx * cd - bd * cdx) + ad * (bdx * cdy - bdy * cdx)
}

/// Counter-clockwise triangles of the Delaunay triangulation, as point indices.
///
/// Hull edges are closed off by triangles on a single vertex at infinity; such
/// a triangle `(a, b, inf)` "contains" `p` when `p` is strictly left of `a -> b`
/// or lies strictly inside the segment `ab`.
pub fn delaunay_triangles(points: &[Vec2]) -> Result<Vec<[usize; 3]>> {
    if points.len() < 3 {
        return Err(Error::DegenerateInput(format!(
            "need at least 3 points, got {}",
            points.len()
        )));
    }
    let (mut lo, mut hi) = (points[0], points[0]);
    for p in points {
        lo = lo.inf(p);
        hi = hi.sup(p);
    }
    let span = (hi - lo).max().max(f64::MIN_POSITIVE);
    let orient_tol = 1e-12 * span * span;
    let circle_tol = 1e-10 * span.powi(4);

    let p0 = points[0];
    let Some(i1) = points.iter().position(|&q| q != p0) else {
        return Err(Error::DegenerateInput("all points coincide".into()));
    };
    let (i2, area) = points
        .iter()
        .enumerate()
        .map(|(i, &q)| (i, orient(p0, points[i1], q)))
        .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
        .expect("non-empty");
    if area.abs() <= orient_tol {
        return Err(Error::DegenerateInput("all points are collinear".into()));
    }
    let (a, b, c) = if area > 0.0 { (0, i1, i2) } else { (0, i2, i1) };
    let ghost = points.len();
    let mut tris: Vec<[usize; 3]> = vec![[a, b, c], [b, a, ghost], [c, b, ghost], [a, c, ghost]];

    let contains = |t: &[usize; 3], p: Vec2| -> bool {
        if t[2] == ghost {
            let (u, v) = (points[t[0]], points[t[1]]);
            let o = orient(u, v, p);
            if o.abs() > orient_tol {
                return o > 0.0;
            }
            (p - u).dot(&(v - u)) > 0.0 && (p - v).dot(&(u - v)) > 0.0
        } else {
            in_circle(points[t[0]], points[t[1]], points[t[2]], p) > circle_tol
        }
    };

    for (p_idx, &p) in points.iter().enumerate() {
        if p_idx == a || p_idx == b || p_idx == c {
            continue;
        }
        let (bad, good): (Vec<[usize; 3]>, Vec<[usize; 3]>) = tris.drain(..).partition(|t| contains(t, p));
        if bad.is_empty() {
            return Err(Error::DegenerateInput(format!("point {p_idx} is duplicated")));
        }
        let mut boundary: HashMap<(usize, usize), usize> = HashMap::new();
        for t in &bad {
            for k in 0..3 {
                let (u, v) = (t[k], t[(k + 1) % 3]);
                *boundary.entry((u.min(v), u.max(v))).or_default() += 1;
            }
        }
        let mut next = good;
        for t in &bad {
            for k in 0..3 {
                let (u, v) = (t[k], t[(k + 1) % 3]);
                if boundary[&(u.min(v), u.max(v))] == 1 {
                    // keep the vertex at infinity in the last slot
                    next.push(if u == ghost {
                        [v, p_idx, ghost]
                    } else if v == ghost {
                        [p_idx, u, ghost]
                    } else {
                        [u, v, p_idx]
                    });
                }
            }
        }
        tris = next;
    }
    let mut out: Vec<[usize; 3]> = tris.into_iter().filter(|t| t[2] != ghost).collect();
    out.retain(|t| orient(points[t[0]], points[t[1]], points[t[2]]) > orient_tol);
    Ok(out)
}

/// Unique undirected edges `(i, j)` with `i < j` of the Delaunay triangulation.
pub fn delaunay_triangulate(points: &[Vec2]) -> Result<Vec<(usize, usize)>> {
    let mut edges = BTreeSet::new();
    for t in delaunay_triangles(points)? {
        for k in 0..3 {
            let (u, v) = (t[k], t[(k + 1) % 3]);
            edges.insert((u.min(v), u.max(v)));
        }
    }
    Ok(edges.into_iter().collect())
}

/// Indices of every point on the convex hull boundary, including points lying
/// on hull edges, in counter-clockwise order.
pub fn convex_hull(points: &[Vec2]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..points.len()).collect();
    idx.sort_by(|&a, &b| {
        points[a]
            .x
            .total_cmp(&points[b].x)
            .then(points[a].y.total_cmp(&points[b].y))
    });
    idx.dedup_by(|a, b| points[*a] == points[*b]);
    if idx.len() < 3 {
        return idx;
    }
    let tol = 1e-12;
    let chain = |order: &mut dyn Iterator<Item = usize>| {
        let mut h: Vec<usize> = Vec::new();
        for i in order {
            while h.len() >= 2
                && orient(points[h[h.len() - 2]], points[h[h.len() - 1]], points[i]) < -tol
            {
                h.pop();
            }
            h.push(i);
        }
        h
    };
    let mut lower = chain(&mut idx.iter().copied());
    let mut upper = chain(&mut idx.iter().rev().copied());
    lower.pop();
    upper.pop();
    lower.extend(upper);
    let mut seen = BTreeSet::new();
    lower.retain(|i| seen.insert(*i));
    lower
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn circumcircle_is_empty(points: &[Vec2], tris: &[[usize; 3]]) -> bool {
        let span: f64 = 10.0;
        tris.iter().all(|t| {
            points.iter().enumerate().all(|(i, &p)| {
                t.contains(&i)
                    || in_circle(points[t[0]], points[t[1]], points[t[2]], p) <= 1e-9 * span.powi(4)
            })
        })
    }

    #[test]
    fn triangle_has_three_edges() {
        let pts = [Vec2::new(0.0, 0.0), Vec2::new(1.0, 0.0), Vec2::new(0.0, 1.0)];
        assert_eq!(delaunay_triangulate(&pts).unwrap(), vec![(0, 1), (0, 2), (1, 2)]);
    }

    #[test]
    fn unit_square_has_five_edges() {
        let pts = [
            Vec2::new(0.0, 0.0),
            Vec2::new(1.0, 0.0),
            Vec2::new(1.0, 1.0),
            Vec2::new(0.0, 1.0),
        ];
        let edges = delaunay_triangulate(&pts).unwrap();
        assert_eq!(edges.len(), 5);
        assert!(circumcircle_is_empty(&pts, &delaunay_triangles(&pts).unwrap()));
    }

    #[test]
    fn collinear_points_are_rejected() {
        let pts: Vec<_> = (0..5).map(|i| Vec2::new(i as f64, 2.0 * i as f64)).collect();
        assert!(matches!(delaunay_triangulate(&pts), Err(Error::DegenerateInput(_))));
    }

    #[test]
    fn random_sets_satisfy_empty_circumcircle() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..50 {
            let pts: Vec<Vec2> = (0..10)
                .map(|_| Vec2::new(rng.random_range(0.0..5.0), rng.random_range(0.0..5.0)))
                .collect();
            let tris = delaunay_triangles(&pts).unwrap();
            assert!(circumcircle_is_empty(&pts, &tris));
            // Euler: a triangulation of n points with h on the hull has 2n - 2 - h triangles.
            let h = convex_hull(&pts).len();
            assert_eq!(tris.len(), 2 * pts.len() - 2 - h);
        }
    }

    #[test]
    fn square_grid_with_cocircular_quads() {
        let pts: Vec<Vec2> = (0..5)
            .flat_map(|i| (0..4).map(move |j| Vec2::new(i as f64, j as f64)))
            .collect();
        let tris = delaunay_triangles(&pts).unwrap();
        assert!(circumcircle_is_empty(&pts, &tris));
        let h = convex_hull(&pts).len();
        assert_eq!(h, 14);
        assert_eq!(tris.len(), 2 * pts.len() - 2 - h);
        let area: f64 = tris
            .iter()
            .map(|t| 0.5 * orient(pts[t[0]], pts[t[1]], pts[t[2]]))
            .sum();
        assert!((area - 12.0).abs() < 1e-12);
    }

    #[test]
    fn sobol_lattice_is_fully_triangulated() {
        for n in [8, 12, 16, 32, 64] {
            let pts = crate::sim::sobol_points(n, 5.0);
            let tris = delaunay_triangles(&pts).unwrap();
            assert!(circumcircle_is_empty(&pts, &tris));
            let h = convex_hull(&pts).len();
            assert_eq!(tris.len(), 2 * n - 2 - h, "n = {n}");
        }
    }

    #[test]
    fn hull_of_square_with_interior_point() {
        let pts = [
            Vec2::new(0.0, 0.0),
            Vec2::new(2.0, 0.0),
            Vec2::new(2.0, 2.0),
            Vec2::new(0.0, 2.0),
            Vec2::new(1.0, 1.0),
            Vec2::new(1.0, 0.0),
        ];
        let mut hull = convex_hull(&pts);
        hull.sort();
        assert_eq!(hull, vec![0, 1, 2, 3, 5]);
    }
}
