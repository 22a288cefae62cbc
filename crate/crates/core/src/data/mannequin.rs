use std::f64::consts::PI;

use super::atlas::{AtlasLayout, Part, Rect, NUM_PARTS};
use crate::render::{Mesh, Vec3};

/// Tessellation and shape of one tapered, elliptical tube.
#[derive(Clone, Debug)]
struct Tube {
    top: Vec3,
    bottom: Vec3,
    /// Radius along x and z as a function of the axial parameter in `[0, 1]`.
    radius: fn(f64) -> (f64, f64),
    segments: usize,
    rings: usize,
}

/// Body proportions. `girth` scales all radii, `height` the vertical extent.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Proportions {
    pub height: f64,
    pub girth: f64,
}

impl Default for Proportions {
    fn default() -> Self {
        Self { height: 1.0, girth: 1.0 }
    }
}

fn tubes() -> [Tube; NUM_PARTS] {
    [
        Tube { top: [0.0, 0.62, 0.0], bottom: [0.0, 0.0, 0.0], radius: |t| (0.19 - 0.03 * t, 0.11), segments: 12, rings: 5 },
        Tube {
            top: [0.0, 0.98, 0.0],
            bottom: [0.0, 0.70, 0.0],
            radius: |t| {
                let r = 0.1 * (0.6 + 0.4 * (PI * (0.1 + 0.8 * t)).sin());
                (r, r)
            },
            segments: 10,
            rings: 4,
        },
        Tube {
            top: [0.29, 0.60, 0.0],
            bottom: [0.29, 0.04, 0.0],
            radius: |t| {
                let r = 0.055 - 0.015 * t;
                (r, r)
            },
            segments: 8,
            rings: 3,
        },
        Tube {
            top: [-0.29, 0.60, 0.0],
            bottom: [-0.29, 0.04, 0.0],
            radius: |t| {
                let r = 0.055 - 0.015 * t;
                (r, r)
            },
            segments: 8,
            rings: 3,
        },
        Tube {
            top: [0.1, -0.02, 0.0],
            bottom: [0.1, -0.92, 0.0],
            radius: |t| {
                let r = 0.08 - 0.03 * t;
                (r, r)
            },
            segments: 8,
            rings: 3,
        },
        Tube {
            top: [-0.1, -0.02, 0.0],
            bottom: [-0.1, -0.92, 0.0],
            radius: |t| {
                let r = 0.08 - 0.03 * t;
                (r, r)
            },
            segments: 8,
            rings: 3,
        },
    ]
}

/// Pivot of each part: shoulders and hips for the limbs, neck for the head,
/// pelvis for the torso.
fn pivot(part: Part, tube: &Tube) -> Vec3 {
    match part {
        Part::Torso => [0.0, 0.0, 0.0],
        _ => tube.top,
    }
}

/// Builds the six-part mannequin with UVs laid out by `atlas`.
///
/// Each part is a closed tube. Around the axis, the parameter `s` in `[0, 1]`
/// starts at the back (`-z`), passes `-x` at `s = 0.25`, faces the front
/// (`+z`) at `s = 0.5`, and closes with a duplicated seam column. Along the
/// axis, `t` runs from the top end to the bottom end. `(s, t)` maps linearly
/// onto the texel range `[x0, x1 - 1] x [y0, y1 - 1]` of the part rectangle;
/// the two caps collapse onto the end rows.
pub fn build_mannequin(atlas: &AtlasLayout, prop: Proportions) -> Mesh {
    let mut mesh = Mesh {
        part_names: Part::ALL.iter().map(|p| p.name().to_string()).collect(),
        pivots: Vec::with_capacity(NUM_PARTS),
        vertices: Vec::new(),
        uvs: Vec::new(),
        vertex_parts: Vec::new(),
        triangles: Vec::new(),
        triangle_parts: Vec::new(),
    };
    let scale = |v: Vec3| [v[0], v[1] * prop.height, v[2]];
    for (part, tube) in Part::ALL.into_iter().zip(tubes()) {
        let rect = atlas.rect(part);
        let label = part.label();
        let (top, bottom) = (scale(tube.top), scale(tube.bottom));
        mesh.pivots.push(scale(pivot(part, &tube)));
        let base = mesh.vertices.len() as u32;
        let cols = tube.segments + 1;
        for ring in 0..=tube.rings {
            let t = ring as f64 / tube.rings as f64;
            let centre = lerp3(top, bottom, t);
            let (rx, rz) = (tube.radius)(t);
            for seg in 0..cols {
                let s = seg as f64 / tube.segments as f64;
                let phi = 2.0 * PI * s;
                mesh.vertices.push([centre[0] - phi.sin() * rx * prop.girth, centre[1], centre[2] - phi.cos() * rz * prop.girth]);
                mesh.uvs.push(uv_in(rect, s, t));
                mesh.vertex_parts.push(label);
            }
        }
        for ring in 0..tube.rings as u32 {
            for seg in 0..tube.segments as u32 {
                let a = base + ring * cols as u32 + seg;
                let b = a + 1;
                let c = a + cols as u32;
                let d = c + 1;
                mesh.triangles.extend([[a, c, b], [b, c, d]]);
                mesh.triangle_parts.extend([label, label]);
            }
        }
        for (t, ring) in [(0.0, 0u32), (1.0, tube.rings as u32)] {
            let centre = mesh.vertices.len() as u32;
            mesh.vertices.push(if t == 0.0 { top } else { bottom });
            mesh.uvs.push(uv_in(rect, 0.5, t));
            mesh.vertex_parts.push(label);
            for seg in 0..tube.segments as u32 {
                let a = base + ring * cols as u32 + seg;
                mesh.triangles.push([centre, a, a + 1]);
                mesh.triangle_parts.push(label);
            }
        }
    }
    mesh
}

fn lerp3(a: Vec3, b: Vec3, t: f64) -> Vec3 {
    [a[0] + (b[0] - a[0]) * t, a[1] + (b[1] - a[1]) * t, a[2] + (b[2] - a[2]) * t]
}

fn uv_in(rect: Rect, s: f64, t: f64) -> [f64; 2] {
    let col = rect.x0 as f64 + s * (rect.x1 - 1 - rect.x0) as f64;
    let row = rect.y0 as f64 + t * (rect.y1 - 1 - rect.y0) as f64;
    Rect::texel_uv(row, col)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::render::{rasterize, render_part_masks, texel_surface, Camera, Pose, TEXTURE_SIZE};

    #[test]
    fn mesh_is_valid_with_about_five_hundred_triangles() {
        let mesh = build_mannequin(&AtlasLayout::default(), Proportions::default());
        mesh.validate().unwrap();
        assert_eq!(mesh.num_parts(), 6);
        assert!((400..=600).contains(&mesh.triangles.len()), "{}", mesh.triangles.len());
    }

    #[test]
    fn every_atlas_texel_has_a_surface_point() {
        let atlas = AtlasLayout::default();
        let mesh = build_mannequin(&atlas, Proportions::default());
        let surface = texel_surface(&mesh);
        for (i, used) in atlas.used_mask().iter().enumerate() {
            assert_eq!(surface[i].is_some(), *used, "texel {} {}", i / TEXTURE_SIZE, i % TEXTURE_SIZE);
        }
    }

    #[test]
    fn frontal_view_shows_all_six_parts_inside_the_frame() {
        let mesh = build_mannequin(&AtlasLayout::default(), Proportions::default());
        let cam = Camera { azimuth: 0.0, elevation: 0.0, distance: 4.0, focal: 230.0, height: 128, width: 64 };
        let r = rasterize(&mesh, &Pose::rest(6), &cam).unwrap();
        let masks = render_part_masks::<f64>(&r, 6);
        for p in 0..6 {
            assert!(masks.data()[p * 128 * 64..(p + 1) * 128 * 64].contains(&1.0), "part {p}");
        }
        // Nothing touches the border.
        for (i, fg) in r.foreground().iter().enumerate() {
            let (row, col) = (i / 64, i % 64);
            if row == 0 || row == 127 || col == 0 || col == 63 {
                assert!(!fg);
            }
        }
    }

    #[test]
    fn front_of_the_head_maps_to_the_face_rectangle() {
        let atlas = AtlasLayout::default();
        let mesh = build_mannequin(&atlas, Proportions::default());
        let cam = Camera { azimuth: 0.0, elevation: 0.0, distance: 4.0, focal: 230.0, height: 128, width: 64 };
        let r = rasterize(&mesh, &Pose::rest(6), &cam).unwrap();
        // The head pixel nearest the image centre line sees the face.
        let idx = (0..128 * 64).filter(|&i| r.part[i] == Some(1) && i % 64 == 32).nth(8).unwrap();
        let [u, v] = r.uv[idx];
        assert!(atlas.face.contains((v * 127.0).round() as usize, (u * 127.0).round() as usize));
    }
}
