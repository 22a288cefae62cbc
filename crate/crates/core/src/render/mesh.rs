use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Vec3 = [f64; 3];

pub(crate) fn sub(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub(crate) fn add(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

pub(crate) fn dot(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub(crate) fn cross(a: Vec3, b: Vec3) -> Vec3 {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

pub(crate) fn normalize(a: Vec3) -> Vec3 {
    let n = dot(a, a).sqrt();
    [a[0] / n, a[1] / n, a[2] / n]
}

/// Triangle mesh split into rigid parts.
///
/// Every vertex belongs to exactly one part and every triangle uses vertices
/// of a single part, so a [`Pose`] can rotate each part about its pivot
/// independently. UVs are in `[0, 1]`; `u` runs along texture columns and
/// `v` along rows.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mesh {
    pub part_names: Vec<String>,
    /// Rotation centre of each part, in metres.
    pub pivots: Vec<Vec3>,
    pub vertices: Vec<Vec3>,
    pub uvs: Vec<[f64; 2]>,
    pub vertex_parts: Vec<u8>,
    pub triangles: Vec<[u32; 3]>,
    pub triangle_parts: Vec<u8>,
}

/// Articulation: per-part rotation angles in radians, applied as a rotation
/// about the x axis followed by one about the z axis, both through the
/// part's pivot.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub angles: Vec<[f64; 2]>,
}

impl Pose {
    pub fn rest(parts: usize) -> Self {
        Self { angles: vec![[0.0, 0.0]; parts] }
    }
}

impl Mesh {
    pub fn num_parts(&self) -> usize {
        self.part_names.len()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |detail: String| Err(Error::format("mesh", detail));
        let (n, p) = (self.vertices.len(), self.num_parts());
        if self.pivots.len() != p {
            return bad(format!("{} pivots for {p} parts", self.pivots.len()));
        }
        if self.uvs.len() != n || self.vertex_parts.len() != n {
            return bad(format!("{n} vertices but {} uvs and {} vertex parts", self.uvs.len(), self.vertex_parts.len()));
        }
        if self.triangle_parts.len() != self.triangles.len() {
            return bad("one part label per triangle required".into());
        }
        if let Some(uv) = self.uvs.iter().find(|uv| !(0.0..=1.0).contains(&uv[0]) || !(0.0..=1.0).contains(&uv[1])) {
            return bad(format!("uv {uv:?} outside [0, 1]"));
        }
        if self.vertex_parts.iter().any(|&q| q as usize >= p) {
            return bad("vertex part label out of range".into());
        }
        for (t, (tri, &part)) in self.triangles.iter().zip(&self.triangle_parts).enumerate() {
            if part as usize >= p {
                return bad(format!("triangle {t} has part {part} of {p}"));
            }
            for &v in tri {
                if v as usize >= n {
                    return bad(format!("triangle {t} references vertex {v} of {n}"));
                }
                if self.vertex_parts[v as usize] != part {
                    return bad(format!("triangle {t} spans parts"));
                }
            }
        }
        Ok(())
    }

    /// Vertex positions after applying `pose`.
    pub fn posed_vertices(&self, pose: &Pose) -> Result<Vec<Vec3>> {
        if pose.angles.len() != self.num_parts() {
            return Err(Error::contract("pose", format!("{} angle pairs for {} parts", pose.angles.len(), self.num_parts())));
        }
        let rotations: Vec<[[f64; 3]; 3]> = pose.angles.iter().map(|&[ax, az]| rotation(ax, az)).collect();
        Ok(self
            .vertices
            .iter()
            .zip(&self.vertex_parts)
            .map(|(&v, &part)| {
                let (r, pivot) = (&rotations[part as usize], self.pivots[part as usize]);
                let d = sub(v, pivot);
                add(pivot, [dot(r[0], d), dot(r[1], d), dot(r[2], d)])
            })
            .collect())
    }
}

/// `Rz(az) * Rx(ax)` as row vectors.
fn rotation(ax: f64, az: f64) -> [[f64; 3]; 3] {
    let (sx, cx) = ax.sin_cos();
    let (sz, cz) = az.sin_cos();
    // Rx = [[1,0,0],[0,cx,-sx],[0,sx,cx]], Rz = [[cz,-sz,0],[sz,cz,0],[0,0,1]].
    [[cz, -sz * cx, sz * sx], [sz, cz * cx, -cz * sx], [0.0, sx, cx]]
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_triangle() -> Mesh {
        Mesh {
            part_names: vec!["a".into()],
            pivots: vec![[0.0, 1.0, 0.0]],
            vertices: vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]],
            uvs: vec![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]],
            vertex_parts: vec![0; 3],
            triangles: vec![[0, 1, 2]],
            triangle_parts: vec![0],
        }
    }

    #[test]
    fn validation_catches_bad_indices_and_uvs() {
        let mut m = one_triangle();
        assert!(m.validate().is_ok());
        m.triangles[0][2] = 7;
        assert!(m.validate().is_err());
        let mut m = one_triangle();
        m.uvs[1][0] = 1.5;
        assert!(m.validate().is_err());
    }

    #[test]
    fn quarter_turn_about_z_through_pivot() {
        let m = one_triangle();
        let pose = Pose { angles: vec![[0.0, std::f64::consts::FRAC_PI_2]] };
        let v = m.posed_vertices(&pose).unwrap();
        // (0,0,0) relative to pivot (0,1,0) is (0,-1,0); rotated 90 degrees about z it becomes (1,0,0).
        for (got, want) in v[0].iter().zip([1.0, 1.0, 0.0]) {
            assert!((got - want).abs() < 1e-12);
        }
        assert_eq!(v[2], [0.0, 1.0, 0.0]);
    }

    #[test]
    fn rotation_about_x_tilts_toward_z() {
        let r = rotation(std::f64::consts::FRAC_PI_2, 0.0);
        let down = [0.0, -1.0, 0.0];
        let out = [dot(r[0], down), dot(r[1], down), dot(r[2], down)];
        assert!((out[2] + 1.0).abs() < 1e-12 && out[1].abs() < 1e-12);
    }

    #[test]
    fn json_round_trip() {
        let m = one_triangle();
        let s = serde_json::to_string(&m).unwrap();
        assert_eq!(serde_json::from_str::<Mesh>(&s).unwrap(), m);
    }
}
