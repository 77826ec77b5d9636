//! Two-dimensional triangular meshes.
//!
//! Text format: a header line `V T`, then `V` lines `x y`, then `T` lines
//! `i j k` with 0-based vertex indices. `#` starts a comment.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

/// Triangles below this area are rejected.
pub const MIN_TRIANGLE_AREA: f64 = 1e-14;

#[derive(Debug, Clone, PartialEq)]
pub struct Mesh2D {
    vertices: Vec<[f64; 2]>,
    triangles: Vec<[usize; 3]>,
}

impl Mesh2D {
    /// Validates the connectivity and reorients every triangle counterclockwise.
    pub fn new(vertices: Vec<[f64; 2]>, mut triangles: Vec<[usize; 3]>) -> Result<Self> {
        let n = vertices.len();
        for (t, tri) in triangles.iter_mut().enumerate() {
            for &index in tri.iter() {
                if index >= n {
                    return Err(Error::DanglingIndex {
                        triangle: t,
                        index,
                        n_vertices: n,
                    });
                }
            }
            let area = signed_area(&vertices, tri);
            if area.abs() < MIN_TRIANGLE_AREA {
                return Err(Error::DegenerateTriangle { triangle: t, area });
            }
            if area < 0.0 {
                tri.swap(1, 2);
            }
        }

        let components = count_components(n, &triangles);
        if components != 1 {
            return Err(Error::Disconnected { components });
        }
        Ok(Mesh2D {
            vertices,
            triangles,
        })
    }

    pub fn vertices(&self) -> &[[f64; 2]] {
        &self.vertices
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    pub fn n_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn n_triangles(&self) -> usize {
        self.triangles.len()
    }

    pub fn triangle_area(&self, t: usize) -> f64 {
        signed_area(&self.vertices, &self.triangles[t])
    }

    pub fn area(&self) -> f64 {
        (0..self.triangles.len()).map(|t| self.triangle_area(t)).sum()
    }

    /// Longest edge over all triangles.
    pub fn max_edge_length(&self) -> f64 {
        let mut h: f64 = 0.0;
        for tri in &self.triangles {
            for e in 0..3 {
                let a = self.vertices[tri[e]];
                let b = self.vertices[tri[(e + 1) % 3]];
                h = h.max(((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt());
            }
        }
        h
    }

    /// Structured mesh of `[0,1]^2` with `n` cells per side, each cell split along its diagonal.
    pub fn unit_square(n: usize) -> Self {
        assert!(n >= 1);
        let mut vertices = Vec::with_capacity((n + 1) * (n + 1));
        for j in 0..=n {
            for i in 0..=n {
                vertices.push([i as f64 / n as f64, j as f64 / n as f64]);
            }
        }
        let id = |i: usize, j: usize| j * (n + 1) + i;
        let mut triangles = Vec::with_capacity(2 * n * n);
        for j in 0..n {
            for i in 0..n {
                triangles.push([id(i, j), id(i + 1, j), id(i + 1, j + 1)]);
                triangles.push([id(i, j), id(i + 1, j + 1), id(i, j + 1)]);
            }
        }
        Mesh2D::new(vertices, triangles).expect("unit square mesh is valid")
    }

    /// Star-shaped mesh of concentric rings (ring `j` carries `6j` vertices) whose
    /// outer boundary follows `radius(theta)`.
    pub fn star_shaped(rings: usize, radius: impl Fn(f64) -> f64) -> Self {
        assert!(rings >= 1);
        let mut vertices = vec![[0.0, 0.0]];
        let mut ring_start = vec![0usize];
        let mut ring_len = vec![1usize];
        for j in 1..=rings {
            ring_start.push(vertices.len());
            let m = 6 * j;
            ring_len.push(m);
            let s = j as f64 / rings as f64;
            for k in 0..m {
                let theta = 2.0 * PI * k as f64 / m as f64;
                let r = s * radius(theta);
                vertices.push([r * theta.cos(), r * theta.sin()]);
            }
        }

        let mut triangles = Vec::new();
        for j in 1..=rings {
            let (inner_start, inner_len) = (ring_start[j - 1], ring_len[j - 1]);
            let (outer_start, outer_len) = (ring_start[j], ring_len[j]);
            if inner_len == 1 {
                for k in 0..outer_len {
                    triangles.push([0, outer_start + k, outer_start + (k + 1) % outer_len]);
                }
                continue;
            }
            // Walk both rings by angle, always advancing the ring whose next vertex comes first.
            let (mut a, mut b) = (0usize, 0usize);
            while a < inner_len || b < outer_len {
                let next_inner = (a + 1) as f64 / inner_len as f64;
                let next_outer = (b + 1) as f64 / outer_len as f64;
                let ia = inner_start + a % inner_len;
                let ob = outer_start + b % outer_len;
                if b < outer_len && (a >= inner_len || next_outer <= next_inner) {
                    triangles.push([ia, ob, outer_start + (b + 1) % outer_len]);
                    b += 1;
                } else {
                    triangles.push([ia, ob, inner_start + (a + 1) % inner_len]);
                    a += 1;
                }
            }
        }
        Mesh2D::new(vertices, triangles).expect("ring mesh is valid")
    }

    /// Axial-like brain slice: an ellipse with a frontal notch and gyral ripples.
    pub fn brain_axial(rings: usize, scale: f64) -> Self {
        Mesh2D::star_shaped(rings, |th| {
            let ellipse = 1.0 / ((th.cos() / 1.25).powi(2) + (th.sin() / 1.0).powi(2)).sqrt();
            let notch = 1.0 - 0.12 * (-(th - PI / 2.0).powi(2) / 0.05).exp();
            let ripple = 1.0 + 0.035 * (7.0 * th).sin() + 0.02 * (11.0 * th + 0.4).cos();
            scale * ellipse * notch * ripple
        })
    }

    /// Sagittal-like brain slice: a rounded egg with a flattened inferior side.
    pub fn brain_sagittal(rings: usize, scale: f64) -> Self {
        Mesh2D::star_shaped(rings, |th| {
            let egg = 1.0 + 0.15 * th.cos() - 0.18 * (-(th + PI / 2.0).powi(2) / 0.3).exp();
            let ripple = 1.0 + 0.03 * (9.0 * th).sin() + 0.015 * (13.0 * th).cos();
            scale * 1.15 * egg * ripple
        })
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let perr = |line: usize, msg: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            msg,
        };
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.split('#').next().unwrap_or("").trim()))
            .filter(|(_, l)| !l.is_empty());

        let (hline, header) = lines
            .next()
            .ok_or_else(|| perr(1, "missing header `V T`".into()))?;
        let counts = parse_fields::<usize>(header, 2).map_err(|m| perr(hline, m))?;
        let (nv, nt) = (counts[0], counts[1]);

        let mut vertices = Vec::with_capacity(nv);
        for _ in 0..nv {
            let (ln, l) = lines
                .next()
                .ok_or_else(|| perr(hline, format!("expected {nv} vertex lines")))?;
            let xy = parse_fields::<f64>(l, 2).map_err(|m| perr(ln, m))?;
            vertices.push([xy[0], xy[1]]);
        }
        let mut triangles = Vec::with_capacity(nt);
        for _ in 0..nt {
            let (ln, l) = lines
                .next()
                .ok_or_else(|| perr(hline, format!("expected {nt} triangle lines")))?;
            let ijk = parse_fields::<usize>(l, 3).map_err(|m| perr(ln, m))?;
            triangles.push([ijk[0], ijk[1], ijk[2]]);
        }
        if let Some((ln, _)) = lines.next() {
            return Err(perr(ln, "unexpected trailing content".into()));
        }
        Mesh2D::new(vertices, triangles)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        writeln!(s, "{} {}", self.vertices.len(), self.triangles.len()).unwrap();
        for v in &self.vertices {
            writeln!(s, "{:.17e} {:.17e}", v[0], v[1]).unwrap();
        }
        for t in &self.triangles {
            writeln!(s, "{} {} {}", t[0], t[1], t[2]).unwrap();
        }
        s
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }
}

pub fn load_mesh(path: impl AsRef<Path>) -> Result<Mesh2D> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Mesh2D::parse(&text, path)
}

fn signed_area(vertices: &[[f64; 2]], tri: &[usize; 3]) -> f64 {
    let [a, b, c] = tri.map(|i| vertices[i]);
    0.5 * ((b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]))
}

fn parse_fields<T: std::str::FromStr>(line: &str, count: usize) -> std::result::Result<Vec<T>, String> {
    let fields: Vec<&str> = line.split_whitespace().collect();
    if fields.len() != count {
        return Err(format!("expected {count} fields, found {}", fields.len()));
    }
    fields
        .iter()
        .map(|f| f.parse::<T>().map_err(|_| format!("cannot parse `{f}`")))
        .collect()
}

fn count_components(n: usize, triangles: &[[usize; 3]]) -> usize {
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    for t in triangles {
        for e in 0..2 {
            let (a, b) = (find(&mut parent, t[e]), find(&mut parent, t[e + 1]));
            if a != b {
                parent[a.max(b)] = a.min(b);
            }
        }
    }
    (0..n).filter(|&i| find(&mut parent, i) == i).count()
}
