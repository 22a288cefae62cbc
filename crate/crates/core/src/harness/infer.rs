use std::fs;
use std::path::{Path, PathBuf};

use crate::data::{view_camera, SampleIdentity, SampleView, NUM_VIEWS};
use crate::error::{Error, Result};
use crate::model::Model;
use crate::nn::{base_coordinate, TAPS};
use crate::render::io::{quantize, write_gray_png, write_png};
use crate::render::{rasterize, render_texture, BACKGROUND, TEXTURE_SIZE};
use crate::scalar::Scalar;
use crate::tensor::{Tape, Tensor};

/// Everything `infer` writes for one input view.
#[derive(Clone, Debug)]
pub struct Inference<S: Scalar> {
    /// `(1, 3, 128, 128)`.
    pub texture: Tensor<S>,
    /// Fusion mask `(1, 1, 128, 128)` in `[0, 1]`.
    pub mask: Tensor<S>,
    /// Render at the input camera.
    pub same_view: Tensor<S>,
    /// Renders at the eight canonical azimuths, keeping the input pose and
    /// elevation.
    pub novel_views: Vec<Tensor<S>>,
}

pub fn infer<S: Scalar>(model: &Model<S>, identity: &SampleIdentity<S>, view: &SampleView<S>) -> Result<Inference<S>> {
    let tape = Tape::inference();
    let est = model.estimate_texture(&tape, tape.constant(view.image.clone()), tape.constant(view.parts.clone()))?;
    let texture = est.output.texture;
    let same_view = render_texture(texture, &[&view.raster], S::lit(BACKGROUND))?.value();
    let elevation = view.camera.elevation.to_degrees();
    let novel_views = (0..NUM_VIEWS)
        .map(|k| {
            let raster = rasterize(&identity.mesh, &view.pose, &view_camera(k, elevation))?;
            Ok(render_texture(texture, &[&raster], S::lit(BACKGROUND))?.value())
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Inference { texture: texture.value(), mask: est.output.mask.value(), same_view, novel_views })
}

impl<S: Scalar> Inference<S> {
    /// Writes `texture.png`, `render_sv.png`, `render_nv{k}.png` and the
    /// grayscale `mask.png`; returns the paths in that order.
    pub fn write(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut paths = vec![dir.join("texture.png"), dir.join("render_sv.png")];
        write_png(&paths[0], &self.texture)?;
        write_png(&paths[1], &self.same_view)?;
        for (k, r) in self.novel_views.iter().enumerate() {
            let p = dir.join(format!("render_nv{k}.png"));
            write_png(&p, r)?;
            paths.push(p);
        }
        let (_, _, h, w) = self.mask.dims4()?;
        let bytes: Vec<u8> = self.mask.data().iter().map(|m| (m.as_f64().clamp(0.0, 1.0) * 255.0).round() as u8).collect();
        let p = dir.join("mask.png");
        write_gray_png(&p, &bytes, w, h)?;
        paths.push(p);
        Ok(paths)
    }
}

/// Sampling positions of the first deformable layer for one texel.
#[derive(Clone, Debug, PartialEq)]
pub struct OffsetMarks {
    /// Texel `(row, col)`.
    pub texel: (usize, usize),
    /// Input-image `(x, y)` of each tap, clamped to the image.
    pub positions: [(f64, f64); TAPS],
}

impl OffsetMarks {
    pub fn centroid(&self) -> (f64, f64) {
        let n = TAPS as f64;
        let (sx, sy) = self.positions.iter().fold((0.0, 0.0), |(a, b), (x, y)| (a + x, b + y));
        (sx / n, sy / n)
    }
}

/// Tap positions for each texel; `None` for models without deformable
/// layers.
pub fn offset_marks<S: Scalar>(model: &Model<S>, view: &SampleView<S>, texels: &[(usize, usize)]) -> Result<Option<Vec<OffsetMarks>>> {
    let tape = Tape::inference();
    let Some(offsets) = model.offsets(&tape, tape.constant(view.image.clone()), tape.constant(view.parts.clone()))? else {
        return Ok(None);
    };
    let off = offsets.value();
    let (_, _, ho, wo) = off.dims4()?;
    let (_, _, h, w) = view.image.dims4()?;
    let p = ho * wo;
    texels
        .iter()
        .map(|&(row, col)| {
            if row >= ho || col >= wo {
                return Err(Error::contract("offsets", format!("texel ({row}, {col}) outside the {ho}x{wo} texture")));
            }
            let pix = row * wo + col;
            let mut positions = [(0.0, 0.0); TAPS];
            for (k, pos) in positions.iter_mut().enumerate() {
                let (dy, dx) = ((k / 3) as f64 - 1.0, (k % 3) as f64 - 1.0);
                let y = base_coordinate(row, h, ho) + dy + off.data()[2 * k * p + pix].as_f64();
                let x = base_coordinate(col, w, wo) + dx + off.data()[(2 * k + 1) * p + pix].as_f64();
                *pos = (x.clamp(0.0, (w - 1) as f64), y.clamp(0.0, (h - 1) as f64));
            }
            Ok(OffsetMarks { texel: (row, col), positions })
        })
        .collect::<Result<Vec<_>>>()
        .map(Some)
}

/// Palette cycled over texels.
const MARK_COLORS: [[u8; 3]; 6] = [[255, 0, 0], [0, 200, 0], [0, 90, 255], [255, 200, 0], [255, 0, 255], [0, 220, 220]];

/// Draws each tap as one pixel of its texel's colour onto `image`
/// `(1, 3, H, W)`; returns interleaved RGB bytes.
pub fn draw_marks<S: Scalar>(image: &Tensor<S>, marks: &[OffsetMarks]) -> Result<Vec<u8>> {
    let (_, c, h, w) = image.dims4()?;
    if c != 3 {
        return Err(Error::shape("draw_marks", format!("image {:?}", image.shape())));
    }
    let mut bytes = vec![0u8; 3 * h * w];
    for i in 0..h * w {
        for ch in 0..3 {
            bytes[3 * i + ch] = quantize(image.data()[ch * h * w + i].as_f64());
        }
    }
    for (n, m) in marks.iter().enumerate() {
        for &(x, y) in &m.positions {
            let i = y.round() as usize * w + x.round() as usize;
            bytes[3 * i..3 * i + 3].copy_from_slice(&MARK_COLORS[n % MARK_COLORS.len()]);
        }
    }
    Ok(bytes)
}

/// Parses `row,col` texel coordinates.
pub fn parse_texel(s: &str) -> Result<(usize, usize)> {
    let bad = || Error::Config(format!("texel {s:?} is not row,col inside the {TEXTURE_SIZE}x{TEXTURE_SIZE} texture"));
    let (r, c) = s.split_once(',').ok_or_else(bad)?;
    let (r, c): (usize, usize) = (r.trim().parse().map_err(|_| bad())?, c.trim().parse().map_err(|_| bad())?);
    if r >= TEXTURE_SIZE || c >= TEXTURE_SIZE {
        return Err(bad());
    }
    Ok((r, c))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::render_dataset;
    use crate::model::{ModelConfig, RefineMode};

    fn fixture() -> (tempfile::TempDir, SampleIdentity<f32>) {
        let dir = tempfile::tempdir().unwrap();
        let m = render_dataset(1, 2, dir.path()).unwrap();
        let id = SampleIdentity::load(dir.path(), &m.identities[0].id).unwrap();
        (dir, id)
    }

    #[test]
    fn zero_offsets_mark_a_grid_around_the_base() {
        let (_dir, id) = fixture();
        let mut model = Model::<f32>::new(ModelConfig { width: 4, refine: RefineMode::Deformable }, 3).unwrap();
        model.zero_offsets();
        let view = &id.views[0];
        let marks = offset_marks(&model, view, &[(64, 64), (10, 100)]).unwrap().unwrap();
        let base = (base_coordinate(64, 64, 128), base_coordinate(64, 128, 128));
        for (k, &(x, y)) in marks[0].positions.iter().enumerate() {
            let want = (base.0 + (k % 3) as f64 - 1.0, base.1 + (k / 3) as f64 - 1.0);
            assert!((x - want.0).abs() < 1e-9 && (y - want.1).abs() < 1e-9, "tap {k}: {x},{y} vs {want:?}");
        }
        assert!((marks[0].centroid().0 - base.0).abs() < 1e-9);
        assert_ne!(marks[0].centroid(), marks[1].centroid());
    }

    #[test]
    fn marks_stay_inside_the_image() {
        let (_dir, id) = fixture();
        let model = Model::<f32>::new(ModelConfig { width: 4, refine: RefineMode::Deformable }, 5).unwrap();
        let corners = [(0, 0), (0, 127), (127, 0), (127, 127)];
        let marks = offset_marks(&model, &id.views[1], &corners).unwrap().unwrap();
        for m in &marks {
            assert!(m.positions.iter().all(|&(x, y)| (0.0..=63.0).contains(&x) && (0.0..=127.0).contains(&y)));
        }
        assert_eq!(draw_marks(&id.views[1].image, &marks).unwrap().len(), 3 * 128 * 64);
        let plain = Model::<f32>::new(ModelConfig { width: 4, refine: RefineMode::Conv }, 5).unwrap();
        assert!(offset_marks(&plain, &id.views[1], &corners).unwrap().is_none());
    }

    #[test]
    fn texels_parse_with_bounds() {
        assert_eq!(parse_texel("3, 120").unwrap(), (3, 120));
        for bad in ["3", "a,b", "128,0", "-1,2"] {
            assert!(matches!(parse_texel(bad), Err(Error::Config(_))), "{bad}");
        }
    }
}
