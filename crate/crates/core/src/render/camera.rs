use serde::{Deserialize, Serialize};

use super::mesh::{cross, dot, normalize, sub, Vec3};
use crate::error::{Error, Result};

/// Pinhole camera on a sphere around the origin, looking at the origin with
/// world `+y` up. Azimuth 0 views the mannequin from the front (`+z`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    pub azimuth: f64,
    pub elevation: f64,
    pub distance: f64,
    /// Focal length in pixels.
    pub focal: f64,
    pub height: usize,
    pub width: usize,
}

/// Projection of a point: continuous pixel coordinates (pixel `(r, c)` has
/// its centre at `(c + 0.5, r + 0.5)`) and depth along the view axis.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Projected {
    pub x: f64,
    pub y: f64,
    pub depth: f64,
}

/// Points closer than this to the camera plane are not rasterized.
pub const NEAR: f64 = 1e-2;

impl Camera {
    pub fn validate(&self) -> Result<()> {
        if !(self.distance > 0.0) || !(self.focal > 0.0) || self.height == 0 || self.width == 0 {
            return Err(Error::format("camera", format!("{self:?}")));
        }
        Ok(())
    }

    pub fn position(&self) -> Vec3 {
        let (sa, ca) = self.azimuth.sin_cos();
        let (se, ce) = self.elevation.sin_cos();
        [self.distance * sa * ce, self.distance * se, self.distance * ca * ce]
    }

    /// Right, up and forward unit vectors.
    pub fn basis(&self) -> [Vec3; 3] {
        let forward = normalize(sub([0.0; 3], self.position()));
        let right = normalize(cross(forward, [0.0, 1.0, 0.0]));
        let up = cross(right, forward);
        [right, up, forward]
    }

    pub fn project(&self, p: Vec3) -> Projected {
        let [right, up, forward] = self.basis();
        self.project_with(p, self.position(), [right, up, forward])
    }

    pub(crate) fn project_with(&self, p: Vec3, eye: Vec3, [right, up, forward]: [Vec3; 3]) -> Projected {
        let d = sub(p, eye);
        let depth = dot(d, forward);
        Projected {
            x: 0.5 * self.width as f64 + self.focal * dot(d, right) / depth,
            y: 0.5 * self.height as f64 - self.focal * dot(d, up) / depth,
            depth,
        }
    }
}
