//! Procedural meshes and site samplers for tests, benchmarks and the CLI.

use std::collections::HashMap;
use std::f64::consts::PI;

use rand::Rng;

use crate::mesh::{TriangleMesh, Vec3};
use crate::solvers::SiteSpec;

/// Rectangle `[0, w] x [0, h]` in the z = 0 plane, split into `2 nx ny`
/// triangles. Interior vertices move by up to `jitter` cell widths and the
/// diagonal of every cell is picked at random.
pub fn planar_grid(nx: usize, ny: usize, w: f64, h: f64, jitter: f64, rng: &mut impl Rng) -> TriangleMesh {
    let (dx, dy) = (w / nx as f64, h / ny as f64);
    let j = jitter.clamp(0.0, 0.45);
    let mut v = Vec::with_capacity((nx + 1) * (ny + 1));
    for iy in 0..=ny {
        for ix in 0..=nx {
            let mut x = ix as f64 * dx;
            let mut y = iy as f64 * dy;
            if ix > 0 && ix < nx {
                x += rng.gen_range(-j..=j) * dx;
            }
            if iy > 0 && iy < ny {
                y += rng.gen_range(-j..=j) * dy;
            }
            v.push(Vec3::new(x, y, 0.0));
        }
    }
    let id = |i: usize, k: usize| k * (nx + 1) + i;
    let mut f = Vec::with_capacity(2 * nx * ny);
    for iy in 0..ny {
        for ix in 0..nx {
            let (a, b, c, d) = (id(ix, iy), id(ix + 1, iy), id(ix + 1, iy + 1), id(ix, iy + 1));
            if rng.gen_bool(0.5) {
                f.push([a, b, c]);
                f.push([a, c, d]);
            } else {
                f.push([a, b, d]);
                f.push([b, c, d]);
            }
        }
    }
    TriangleMesh::new(v, f).expect("jittered grid is a valid mesh")
}

/// Grid fixture with roughly `faces` triangles over the unit square.
pub fn planar_fixture(faces: usize, rng: &mut impl Rng) -> TriangleMesh {
    let n = ((faces as f64 / 2.0).sqrt().round() as usize).max(1);
    let m = ((faces as f64 / (2.0 * n as f64)).round() as usize).max(1);
    planar_grid(n, m, 1.0, m as f64 / n as f64, 0.3, rng)
}

/// Unit sphere by `level` subdivisions of an icosahedron (`20 * 4^level` faces).
pub fn icosphere(level: usize) -> TriangleMesh {
    let t = (1.0 + 5f64.sqrt()) / 2.0;
    let mut v: Vec<Vec3> = [
        (-1.0, t, 0.0),
        (1.0, t, 0.0),
        (-1.0, -t, 0.0),
        (1.0, -t, 0.0),
        (0.0, -1.0, t),
        (0.0, 1.0, t),
        (0.0, -1.0, -t),
        (0.0, 1.0, -t),
        (t, 0.0, -1.0),
        (t, 0.0, 1.0),
        (-t, 0.0, -1.0),
        (-t, 0.0, 1.0),
    ]
    .iter()
    .map(|&(x, y, z)| Vec3::new(x, y, z).normalize())
    .collect();
    let mut f: Vec<[usize; 3]> = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];
    for _ in 0..level {
        let mut mid: HashMap<(usize, usize), usize> = HashMap::new();
        let mut next = Vec::with_capacity(f.len() * 4);
        let mut midpoint = |a: usize, b: usize, v: &mut Vec<Vec3>| {
            *mid.entry((a.min(b), a.max(b))).or_insert_with(|| {
                v.push(((v[a] + v[b]) * 0.5).normalize());
                v.len() - 1
            })
        };
        for [a, b, c] in f {
            let ab = midpoint(a, b, &mut v);
            let bc = midpoint(b, c, &mut v);
            let ca = midpoint(c, a, &mut v);
            next.extend([[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]);
        }
        f = next;
    }
    TriangleMesh::new(v, f).expect("icosphere is a valid mesh")
}

/// Torus with major radius `big`, minor radius `small`, `2 nu nv` faces.
pub fn torus(big: f64, small: f64, nu: usize, nv: usize) -> TriangleMesh {
    let mut v = Vec::with_capacity(nu * nv);
    for i in 0..nu {
        let u = 2.0 * PI * i as f64 / nu as f64;
        for j in 0..nv {
            let w = 2.0 * PI * j as f64 / nv as f64;
            let r = big + small * w.cos();
            v.push(Vec3::new(r * u.cos(), r * u.sin(), small * w.sin()));
        }
    }
    let id = |i: usize, j: usize| (i % nu) * nv + (j % nv);
    let mut f = Vec::with_capacity(2 * nu * nv);
    for i in 0..nu {
        for j in 0..nv {
            let (a, b, c, d) = (id(i, j), id(i + 1, j), id(i + 1, j + 1), id(i, j + 1));
            f.push([a, b, c]);
            f.push([a, c, d]);
        }
    }
    TriangleMesh::new(v, f).expect("torus is a valid mesh")
}

/// Closed sheet: an icosphere flattened to half-thickness `thickness` along z
/// and stretched to `(sx, sy)` in the plane.
pub fn thin_sheet(level: usize, sx: f64, sy: f64, thickness: f64) -> TriangleMesh {
    let s = icosphere(level);
    let v = s
        .vertices()
        .iter()
        .map(|p| Vec3::new(p.x * sx, p.y * sy, p.z * thickness))
        .collect();
    TriangleMesh::new(v, s.faces().to_vec()).expect("scaled sphere is a valid mesh")
}

/// Uniformly distributed surface point as `(face, barycentric)`.
pub fn sample_surface(mesh: &TriangleMesh, cumulative: &[f64], rng: &mut impl Rng) -> (usize, [f64; 3]) {
    let total = *cumulative.last().expect("mesh has faces");
    let x = rng.gen_range(0.0..total);
    let f = cumulative.partition_point(|&c| c <= x).min(mesh.num_faces() - 1);
    let (r1, r2): (f64, f64) = (rng.gen(), rng.gen());
    let s = r1.sqrt();
    (f, [1.0 - s, s * (1.0 - r2), s * r2])
}

fn cumulative_area(mesh: &TriangleMesh) -> Vec<f64> {
    let mut acc = 0.0;
    (0..mesh.num_faces())
        .map(|f| {
            acc += mesh.face_area(f);
            acc
        })
        .collect()
}

/// `n` area-uniform random point sites.
pub fn random_sites(mesh: &TriangleMesh, n: usize, rng: &mut impl Rng) -> Vec<SiteSpec> {
    let cum = cumulative_area(mesh);
    (0..n)
        .map(|_| {
            let (f, b) = sample_surface(mesh, &cum, rng);
            SiteSpec::point(f, b)
        })
        .collect()
}

/// `n` point sites by dart throwing with a shrinking exclusion radius.
pub fn blue_noise_sites(mesh: &TriangleMesh, n: usize, rng: &mut impl Rng) -> Vec<SiteSpec> {
    let cum = cumulative_area(mesh);
    let area = *cum.last().expect("mesh has faces");
    // hexagonal packing spacing for n points
    let mut r = 0.8 * (2.0 * area / (3f64.sqrt() * n as f64)).sqrt();
    let mut grid: HashMap<(i64, i64, i64), Vec<usize>> = HashMap::new();
    let mut pts: Vec<Vec3> = Vec::with_capacity(n);
    let mut out = Vec::with_capacity(n);
    let mut misses = 0;
    let cell_of = |p: &Vec3, r: f64| ((p.x / r).floor() as i64, (p.y / r).floor() as i64, (p.z / r).floor() as i64);
    while out.len() < n {
        let (f, b) = sample_surface(mesh, &cum, rng);
        let p = mesh.point_from_barycentric(f, b);
        let c = cell_of(&p, r);
        let mut free = true;
        'scan: for dx in -1..=1 {
            for dy in -1..=1 {
                for dz in -1..=1 {
                    if let Some(list) = grid.get(&(c.0 + dx, c.1 + dy, c.2 + dz)) {
                        if list.iter().any(|&i| (pts[i] - p).norm() < r) {
                            free = false;
                            break 'scan;
                        }
                    }
                }
            }
        }
        if free {
            grid.entry(c).or_default().push(pts.len());
            pts.push(p);
            out.push(SiteSpec::point(f, b));
            misses = 0;
        } else {
            misses += 1;
            if misses > 200 {
                r *= 0.9;
                misses = 0;
                grid.clear();
                for (i, q) in pts.iter().enumerate() {
                    grid.entry(cell_of(q, r)).or_default().push(i);
                }
            }
        }
    }
    out
}
