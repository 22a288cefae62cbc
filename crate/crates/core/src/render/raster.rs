use super::camera::{Camera, Projected, NEAR};
use super::mesh::{Mesh, Pose, Vec3};
use crate::error::Result;

/// Side length of the square UV texture.
pub const TEXTURE_SIZE: usize = 128;

/// Per-pixel result of rasterizing a posed mesh.
#[derive(Clone, Debug, PartialEq)]
pub struct RasterMap {
    pub height: usize,
    pub width: usize,
    pub triangle: Vec<Option<u32>>,
    /// Perspective-correct barycentrics of covered pixels.
    pub bary: Vec<[f64; 3]>,
    pub uv: Vec<[f64; 2]>,
    pub part: Vec<Option<u8>>,
    /// View-axis depth; infinite where uncovered.
    pub depth: Vec<f64>,
}

impl RasterMap {
    fn empty(height: usize, width: usize) -> Self {
        let n = height * width;
        Self {
            height,
            width,
            triangle: vec![None; n],
            bary: vec![[0.0; 3]; n],
            uv: vec![[0.0; 2]; n],
            part: vec![None; n],
            depth: vec![f64::INFINITY; n],
        }
    }

    pub fn foreground(&self) -> Vec<bool> {
        self.triangle.iter().map(Option::is_some).collect()
    }

    pub fn covered_pixels(&self) -> usize {
        self.triangle.iter().filter(|t| t.is_some()).count()
    }
}

fn edge(a: (f64, f64), b: (f64, f64), p: (f64, f64)) -> f64 {
    (b.0 - a.0) * (p.1 - a.1) - (b.1 - a.1) * (p.0 - a.0)
}

/// Barycentric weights of `p` in the 2-D triangle `v`, or `None` when the
/// triangle is degenerate.
fn barycentric(v: [(f64, f64); 3], p: (f64, f64)) -> Option<[f64; 3]> {
    let area = edge(v[0], v[1], v[2]);
    if area.abs() < 1e-12 {
        return None;
    }
    Some([edge(v[1], v[2], p) / area, edge(v[2], v[0], p) / area, edge(v[0], v[1], p) / area])
}

/// Z-buffered perspective rasterization of `mesh` in `pose`, sampled at pixel
/// centres. Triangles with a vertex behind the near plane and zero-area
/// screen triangles are skipped; on equal depth the earlier triangle wins.
pub fn rasterize(mesh: &Mesh, pose: &Pose, camera: &Camera) -> Result<RasterMap> {
    mesh.validate()?;
    camera.validate()?;
    let verts = mesh.posed_vertices(pose)?;
    let (eye, basis) = (camera.position(), camera.basis());
    let projected: Vec<Projected> = verts.iter().map(|&v| camera.project_with(v, eye, basis)).collect();
    let (h, w) = (camera.height, camera.width);
    let mut out = RasterMap::empty(h, w);

    for (t, tri) in mesh.triangles.iter().enumerate() {
        let p = tri.map(|i| projected[i as usize]);
        if p.iter().any(|q| q.depth < NEAR) {
            continue;
        }
        let screen = p.map(|q| (q.x, q.y));
        if barycentric(screen, screen[0]).is_none() {
            continue;
        }
        let xmin = screen.iter().map(|s| s.0).fold(f64::INFINITY, f64::min);
        let xmax = screen.iter().map(|s| s.0).fold(f64::NEG_INFINITY, f64::max);
        let ymin = screen.iter().map(|s| s.1).fold(f64::INFINITY, f64::min);
        let ymax = screen.iter().map(|s| s.1).fold(f64::NEG_INFINITY, f64::max);
        // Pixel c covers centre c + 0.5.
        let c0 = (xmin - 0.5).ceil().max(0.0) as usize;
        let r0 = (ymin - 0.5).ceil().max(0.0) as usize;
        let c1 = ((xmax - 0.5).floor()).min(w as f64 - 1.0);
        let r1 = ((ymax - 0.5).floor()).min(h as f64 - 1.0);
        if c1 < 0.0 || r1 < 0.0 {
            continue;
        }
        for r in r0..=r1 as usize {
            for c in c0..=c1 as usize {
                let Some(l) = barycentric(screen, (c as f64 + 0.5, r as f64 + 0.5)) else { continue };
                if l.iter().any(|&x| x < 0.0) {
                    continue;
                }
                let inv = [l[0] / p[0].depth, l[1] / p[1].depth, l[2] / p[2].depth];
                let s = inv[0] + inv[1] + inv[2];
                let depth = 1.0 / s;
                let idx = r * w + c;
                if depth >= out.depth[idx] {
                    continue;
                }
                let b = inv.map(|x| x / s);
                let uvs = tri.map(|i| mesh.uvs[i as usize]);
                out.depth[idx] = depth;
                out.triangle[idx] = Some(t as u32);
                out.bary[idx] = b;
                out.uv[idx] = [b[0] * uvs[0][0] + b[1] * uvs[1][0] + b[2] * uvs[2][0], b[0] * uvs[0][1] + b[1] * uvs[1][1] + b[2] * uvs[2][1]];
                out.part[idx] = Some(mesh.triangle_parts[t]);
            }
        }
    }
    Ok(out)
}

/// For every texel of the `TEXTURE_SIZE` square, the triangle whose UV
/// footprint contains the texel centre and its barycentrics there.
///
/// Texel `(i, j)` sits at UV `(j, i) / (TEXTURE_SIZE - 1)`, the same
/// convention as normalized sampling.
pub fn texel_surface(mesh: &Mesh) -> Vec<Option<(u32, [f64; 3])>> {
    let n = TEXTURE_SIZE;
    let scale = (n - 1) as f64;
    let mut out = vec![None; n * n];
    for (t, tri) in mesh.triangles.iter().enumerate() {
        let v = tri.map(|i| {
            let uv = mesh.uvs[i as usize];
            (uv[0] * scale, uv[1] * scale)
        });
        let (lo_x, hi_x) = (v.iter().map(|p| p.0).fold(f64::INFINITY, f64::min), v.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max));
        let (lo_y, hi_y) = (v.iter().map(|p| p.1).fold(f64::INFINITY, f64::min), v.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max));
        for i in (lo_y - 1e-9).ceil().max(0.0) as usize..=((hi_y + 1e-9).floor() as usize).min(n - 1) {
            for j in (lo_x - 1e-9).ceil().max(0.0) as usize..=((hi_x + 1e-9).floor() as usize).min(n - 1) {
                if out[i * n + j].is_some() {
                    continue;
                }
                if let Some(b) = barycentric(v, (j as f64, i as f64)) {
                    if b.iter().all(|&x| x >= -1e-9) {
                        out[i * n + j] = Some((t as u32, b));
                    }
                }
            }
        }
    }
    out
}

/// Depth tolerance, in metres, for deciding that a texel's surface point is
/// the one seen at its pixel.
pub const VISIBILITY_TOLERANCE: f64 = 0.02;

/// Which texels are seen by `camera`: the texel's surface point projects
/// into a covered pixel whose depth matches within
/// [`VISIBILITY_TOLERANCE`]. Texels with no surface are never visible.
pub fn texel_visibility(mesh: &Mesh, surface: &[Option<(u32, [f64; 3])>], pose: &Pose, camera: &Camera, raster: &RasterMap) -> Result<Vec<bool>> {
    let verts = mesh.posed_vertices(pose)?;
    let (eye, basis) = (camera.position(), camera.basis());
    Ok(surface
        .iter()
        .map(|entry| {
            let Some((t, b)) = entry else { return false };
            let tri = mesh.triangles[*t as usize];
            let point: Vec3 = std::array::from_fn(|k| (0..3).map(|v| b[v] * verts[tri[v] as usize][k]).sum());
            let p = camera.project_with(point, eye, basis);
            if p.depth < NEAR || p.x < 0.0 || p.y < 0.0 {
                return false;
            }
            let (c, r) = (p.x as usize, p.y as usize);
            if c >= raster.width || r >= raster.height {
                return false;
            }
            let idx = r * raster.width + c;
            raster.triangle[idx].is_some() && (raster.depth[idx] - p.depth).abs() <= VISIBILITY_TOLERANCE
        })
        .collect())
}
