//! Nearest-neighbour queries over points and triangles.

use super::{bounding_box, Mesh, Vec3};

/// Below this many points queries scan every point.
pub const BRUTE_FORCE_LIMIT: usize = 5000;

/// Uniform hash grid over a fixed point set.
#[derive(Debug, Clone)]
pub struct PointIndex {
    points: Vec<Vec3>,
    grid: Option<Grid>,
}

#[derive(Debug, Clone)]
struct Grid {
    origin: Vec3,
    cell: f64,
    dims: [usize; 3],
    starts: Vec<usize>,
    items: Vec<usize>,
}

impl Grid {
    fn build(lo: Vec3, hi: Vec3, target_per_cell: f64, boxes: &[(Vec3, Vec3)]) -> Self {
        let extent = (hi - lo).map(|e| e.max(1e-9));
        let volume = extent.x * extent.y * extent.z;
        let n = boxes.len().max(1) as f64;
        let mut cell = (volume * target_per_cell / n).cbrt();
        if !(cell > 0.0) || !cell.is_finite() {
            cell = extent.max();
        }
        // Cap the cell count for very flat sets.
        let max_cells = (8.0 * n).max(64.0);
        loop {
            let c = extent.map(|e| (e / cell).ceil().max(1.0));
            if c.x * c.y * c.z <= max_cells {
                break;
            }
            cell *= 1.25;
        }
        let dims = [
            ((extent.x / cell).ceil() as usize).max(1),
            ((extent.y / cell).ceil() as usize).max(1),
            ((extent.z / cell).ceil() as usize).max(1),
        ];
        let ncell = dims[0] * dims[1] * dims[2];
        let mut g = Grid {
            origin: lo,
            cell,
            dims,
            starts: vec![0; ncell + 1],
            items: Vec::new(),
        };
        let ranges: Vec<([usize; 3], [usize; 3])> = boxes
            .iter()
            .map(|(a, b)| (g.coords(a), g.coords(b)))
            .collect();
        let mut counts = vec![0usize; ncell];
        for (a, b) in &ranges {
            for_each_cell(a, b, |c| counts[g.flat(c)] += 1);
        }
        g.starts[1..].copy_from_slice(&counts);
        for i in 0..ncell {
            g.starts[i + 1] += g.starts[i];
        }
        let mut fill = g.starts.clone();
        let mut items = vec![0; g.starts[ncell]];
        for (item, (a, b)) in ranges.iter().enumerate() {
            for_each_cell(a, b, |c| {
                let f = g.flat(c);
                items[fill[f]] = item;
                fill[f] += 1;
            });
        }
        g.items = items;
        g
    }

    fn coords(&self, p: &Vec3) -> [usize; 3] {
        std::array::from_fn(|a| {
            let c = ((p[a] - self.origin[a]) / self.cell).floor();
            (c.max(0.0) as usize).min(self.dims[a] - 1)
        })
    }

    fn flat(&self, c: [usize; 3]) -> usize {
        (c[2] * self.dims[1] + c[1]) * self.dims[0] + c[0]
    }

    fn cell_items(&self, c: [usize; 3]) -> &[usize] {
        let f = self.flat(c);
        &self.items[self.starts[f]..self.starts[f + 1]]
    }

    /// Visits items in shells of growing Chebyshev radius around `q`.
    /// `visit` returns the current best squared distance.
    fn search(&self, q: &Vec3, mut visit: impl FnMut(&[usize]) -> f64) {
        let qc = self.coords(q);
        let max_r = self.dims.iter().copied().max().unwrap();
        let mut best = f64::INFINITY;
        for r in 0..=max_r {
            // Everything outside the shell of radius r is at least this far away.
            if r > 0 {
                let inner = self.shell_clearance(q, qc, r - 1);
                if inner * inner > best {
                    break;
                }
            }
            let lo: [i64; 3] = std::array::from_fn(|a| qc[a] as i64 - r as i64);
            let hi: [i64; 3] = std::array::from_fn(|a| qc[a] as i64 + r as i64);
            for z in lo[2].max(0)..=hi[2].min(self.dims[2] as i64 - 1) {
                for y in lo[1].max(0)..=hi[1].min(self.dims[1] as i64 - 1) {
                    for x in lo[0].max(0)..=hi[0].min(self.dims[0] as i64 - 1) {
                        let on_shell = x == lo[0]
                            || x == hi[0]
                            || y == lo[1]
                            || y == hi[1]
                            || z == lo[2]
                            || z == hi[2];
                        if !on_shell {
                            continue;
                        }
                        best = visit(self.cell_items([x as usize, y as usize, z as usize]));
                    }
                }
            }
        }
    }

    /// Distance from `q` to the outside of the block of cells within
    /// Chebyshev radius `r` of its cell.
    fn shell_clearance(&self, q: &Vec3, qc: [usize; 3], r: usize) -> f64 {
        let mut d = f64::INFINITY;
        for a in 0..3 {
            let lo_cell = qc[a] as i64 - r as i64;
            let hi_cell = qc[a] as i64 + r as i64 + 1;
            if lo_cell > 0 {
                d = d.min(q[a] - (self.origin[a] + lo_cell as f64 * self.cell));
            }
            if (hi_cell as usize) < self.dims[a] {
                d = d.min(self.origin[a] + hi_cell as f64 * self.cell - q[a]);
            }
        }
        d.max(0.0)
    }
}

fn for_each_cell(a: &[usize; 3], b: &[usize; 3], mut f: impl FnMut([usize; 3])) {
    for z in a[2]..=b[2] {
        for y in a[1]..=b[1] {
            for x in a[0]..=b[0] {
                f([x, y, z]);
            }
        }
    }
}

impl PointIndex {
    pub fn new(points: &[Vec3]) -> Self {
        let grid = (points.len() > BRUTE_FORCE_LIMIT).then(|| {
            let (lo, hi) = bounding_box(points);
            let boxes: Vec<_> = points.iter().map(|p| (*p, *p)).collect();
            Grid::build(lo, hi, 2.0, &boxes)
        });
        Self {
            points: points.to_vec(),
            grid,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Index of the closest point and its squared distance. Ties go to the lowest index.
    pub fn nearest(&self, q: &Vec3) -> (usize, f64) {
        let mut best = (usize::MAX, f64::INFINITY);
        let consider = |i: usize, best: &mut (usize, f64)| {
            let d = (self.points[i] - q).norm_squared();
            if d < best.1 || (d == best.1 && i < best.0) {
                *best = (i, d);
            }
        };
        match &self.grid {
            None => {
                for i in 0..self.points.len() {
                    consider(i, &mut best);
                }
            }
            Some(g) => g.search(q, |items| {
                for &i in items {
                    consider(i, &mut best);
                }
                best.1
            }),
        }
        best
    }
}

/// Closest point on triangle `abc` to `p`.
pub fn closest_point_on_triangle(p: &Vec3, a: &Vec3, b: &Vec3, c: &Vec3) -> Vec3 {
    let ab = b - a;
    let ac = c - a;
    let ap = p - a;
    let d1 = ab.dot(&ap);
    let d2 = ac.dot(&ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return *a;
    }
    let bp = p - b;
    let d3 = ab.dot(&bp);
    let d4 = ac.dot(&bp);
    if d3 >= 0.0 && d4 <= d3 {
        return *b;
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        return a + ab * (d1 / (d1 - d3));
    }
    let cp = p - c;
    let d5 = ab.dot(&cp);
    let d6 = ac.dot(&cp);
    if d6 >= 0.0 && d5 <= d6 {
        return *c;
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        return a + ac * (d2 / (d2 - d6));
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        return b + (c - b) * ((d4 - d3) / ((d4 - d3) + (d5 - d6)));
    }
    let denom = 1.0 / (va + vb + vc);
    a + ab * (vb * denom) + ac * (vc * denom)
}

/// Point-to-surface distance queries against a fixed mesh.
#[derive(Debug, Clone)]
pub struct SurfaceIndex {
    vertices: Vec<Vec3>,
    faces: Vec<[usize; 3]>,
    grid: Grid,
}

impl SurfaceIndex {
    pub fn new(mesh: &Mesh) -> Self {
        let boxes: Vec<(Vec3, Vec3)> = mesh
            .faces
            .iter()
            .map(|f| {
                bounding_box(&[
                    mesh.vertices[f[0]],
                    mesh.vertices[f[1]],
                    mesh.vertices[f[2]],
                ])
            })
            .collect();
        let (lo, hi) = mesh.bounding_box();
        Self {
            vertices: mesh.vertices.clone(),
            faces: mesh.faces.clone(),
            grid: Grid::build(lo, hi, 4.0, &boxes),
        }
    }

    /// Closest surface point to `q` and the distance to it.
    pub fn closest(&self, q: &Vec3) -> (Vec3, f64) {
        let mut best = (Vec3::zeros(), f64::INFINITY);
        self.grid.search(q, |items| {
            for &f in items {
                let [a, b, c] = self.faces[f];
                let p = closest_point_on_triangle(
                    q,
                    &self.vertices[a],
                    &self.vertices[b],
                    &self.vertices[c],
                );
                let d = (p - q).norm_squared();
                if d < best.1 {
                    best = (p, d);
                }
            }
            best.1
        });
        (best.0, best.1.sqrt())
    }

    pub fn distance(&self, q: &Vec3) -> f64 {
        self.closest(q).1
    }
}

/// Mean distance from `points` to the surface of `mesh`.
pub fn mean_distance_to_surface(points: &[Vec3], mesh: &Mesh) -> f64 {
    let index = SurfaceIndex::new(mesh);
    points.iter().map(|p| index.distance(p)).sum::<f64>() / points.len().max(1) as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn grid_nearest_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let pts: Vec<Vec3> = (0..6000)
            .map(|_| {
                Vec3::new(
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-0.2..0.2),
                    rng.random_range(0.0..3.0),
                )
            })
            .collect();
        let index = PointIndex::new(&pts);
        assert!(index.grid.is_some());
        for _ in 0..300 {
            let q = Vec3::new(
                rng.random_range(-1.5..1.5),
                rng.random_range(-1.0..1.0),
                rng.random_range(-0.5..3.5),
            );
            let (i, d) = index.nearest(&q);
            let brute = pts
                .iter()
                .map(|p| (p - q).norm_squared())
                .fold(f64::INFINITY, f64::min);
            assert_eq!(d, brute, "query {q:?} got {i}");
        }
    }

    #[test]
    fn surface_distance_matches_brute_force() {
        let sphere = super::super::tests::icosphere(2);
        let index = SurfaceIndex::new(&sphere);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..200 {
            let q = Vec3::new(
                rng.random_range(-2.0..2.0),
                rng.random_range(-2.0..2.0),
                rng.random_range(-2.0..2.0),
            );
            let brute = sphere
                .faces
                .iter()
                .map(|f| {
                    let p = closest_point_on_triangle(
                        &q,
                        &sphere.vertices[f[0]],
                        &sphere.vertices[f[1]],
                        &sphere.vertices[f[2]],
                    );
                    (p - q).norm()
                })
                .fold(f64::INFINITY, f64::min);
            assert!((index.distance(&q) - brute).abs() < 1e-12);
        }
    }

    #[test]
    fn triangle_regions() {
        let (a, b, c) = (Vec3::zeros(), Vec3::x(), Vec3::y());
        let inside = closest_point_on_triangle(&Vec3::new(0.2, 0.2, 1.0), &a, &b, &c);
        assert!((inside - Vec3::new(0.2, 0.2, 0.0)).norm() < 1e-15);
        assert_eq!(
            closest_point_on_triangle(&Vec3::new(-1.0, -1.0, 0.0), &a, &b, &c),
            a
        );
        assert_eq!(
            closest_point_on_triangle(&Vec3::new(0.5, -1.0, 0.0), &a, &b, &c),
            Vec3::new(0.5, 0.0, 0.0)
        );
    }
}
