use super::raster::{RasterMap, TEXTURE_SIZE};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Tensor, Var};

/// Background value in network range (mid-gray).
pub const BACKGROUND: f64 = 0.0;

/// Normalized sampling positions of every pixel, `(B, 2, H, W)`. Uncovered
/// pixels point at the texture centre; their samples are masked away.
pub fn raster_flow<S: Scalar>(rasters: &[&RasterMap]) -> Result<Tensor<S>> {
    let (h, w) = common_size(rasters)?;
    let mut data = Vec::with_capacity(rasters.len() * 2 * h * w);
    for r in rasters {
        for axis in 0..2 {
            data.extend(r.uv.iter().zip(&r.triangle).map(|(uv, t)| if t.is_some() { S::lit(2.0 * uv[axis] - 1.0) } else { S::zero() }));
        }
    }
    Tensor::new(&[rasters.len(), 2, h, w], data)
}

/// Foreground indicator repeated over `channels`, `(B, channels, H, W)`.
pub fn foreground_mask<S: Scalar>(rasters: &[&RasterMap], channels: usize) -> Result<Tensor<S>> {
    let (h, w) = common_size(rasters)?;
    let mut data = Vec::with_capacity(rasters.len() * channels * h * w);
    for r in rasters {
        for _ in 0..channels {
            data.extend(r.triangle.iter().map(|t| if t.is_some() { S::one() } else { S::zero() }));
        }
    }
    Tensor::new(&[rasters.len(), channels, h, w], data)
}

fn common_size(rasters: &[&RasterMap]) -> Result<(usize, usize)> {
    let first = rasters.first().ok_or_else(|| Error::contract("render", "no raster maps"))?;
    if rasters.iter().any(|r| (r.height, r.width) != (first.height, first.width)) {
        return Err(Error::shape("render", "raster maps differ in size"));
    }
    Ok((first.height, first.width))
}

/// Renders a batch of textures `(B, 3, 128, 128)` through one raster map per
/// sample: covered pixels take the bilinear texture value at their UV,
/// uncovered pixels take `background`. Differentiable in the texture only.
pub fn render_texture<'t, S: Scalar>(texture: Var<'t, S>, rasters: &[&RasterMap], background: S) -> Result<Var<'t, S>> {
    let (b, c, th, tw) = texture.dims4()?;
    if (th, tw) != (TEXTURE_SIZE, TEXTURE_SIZE) || b != rasters.len() {
        return Err(Error::shape("render_texture", format!("texture {:?} with {} raster maps", texture.shape(), rasters.len())));
    }
    let tape = texture.tape();
    let flow = tape.constant(raster_flow(rasters)?);
    let mask = foreground_mask::<S>(rasters, c)?;
    let fill = mask.map(|m| (S::one() - m) * background);
    texture.grid_sample(flow)?.mul(tape.constant(mask))?.add(tape.constant(fill))
}

/// Binary per-part masks `(parts, H, W)`: mask `p` is 1 where the pixel is
/// covered by part `p`.
pub fn render_part_masks<S: Scalar>(raster: &RasterMap, parts: usize) -> Tensor<S> {
    let n = raster.height * raster.width;
    Tensor::from_fn(&[parts, raster.height, raster.width], |i| if raster.part[i % n] == Some((i / n) as u8) { S::one() } else { S::zero() })
}

/// Part-index map for the network input: `(label + 1) / parts` on covered
/// pixels and 0 on background, shape `(1, 1, H, W)`.
pub fn part_index_map<S: Scalar>(raster: &RasterMap, parts: usize) -> Tensor<S> {
    Tensor::from_fn(&[1, 1, raster.height, raster.width], |i| match raster.part[i] {
        Some(p) => S::lit((p as f64 + 1.0) / parts as f64),
        None => S::zero(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::render::{rasterize, Camera, Mesh, Pose};
    use crate::tensor::{Mode, Tape};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn camera() -> Camera {
        Camera { azimuth: 0.0, elevation: 0.0, distance: 4.0, focal: 240.0, height: 12, width: 8 }
    }

    fn quad(parts: [u8; 2]) -> Mesh {
        Mesh {
            part_names: vec!["a".into(), "b".into()],
            pivots: vec![[0.0; 3]; 2],
            vertices: vec![[-0.05, -0.05, 0.0], [0.05, -0.05, 0.0], [0.05, 0.08, 0.0], [-0.05, 0.08, 0.0]]
                .into_iter()
                .chain([[-0.05, -0.05, 0.0], [0.05, 0.08, 0.0], [-0.05, 0.08, 0.0]])
                .collect(),
            uvs: vec![[0.1, 0.9], [0.9, 0.9], [0.9, 0.1], [0.1, 0.1], [0.1, 0.9], [0.9, 0.1], [0.1, 0.1]],
            vertex_parts: vec![parts[0], parts[0], parts[0], parts[0], parts[1], parts[1], parts[1]],
            triangles: vec![[0, 1, 2], [4, 5, 6]],
            triangle_parts: vec![parts[0], parts[1]],
        }
    }

    #[test]
    fn constant_texture_gives_constant_foreground() {
        let r = rasterize(&quad([0, 1]), &Pose::rest(2), &camera()).unwrap();
        let tape = Tape::<f64>::inference();
        let img = render_texture(tape.constant(Tensor::full(&[1, 3, 128, 128], 0.4)), &[&r], BACKGROUND).unwrap().value();
        let fg = r.foreground();
        assert!(fg.iter().any(|&f| f) && fg.iter().any(|&f| !f));
        for (i, &v) in img.data().iter().enumerate() {
            let want = if fg[i % fg.len()] { 0.4 } else { BACKGROUND };
            assert!((v - want).abs() < 1e-15);
        }
    }

    #[test]
    fn empty_raster_gives_background_and_no_gradient() {
        let mut mesh = quad([0, 0]);
        mesh.vertices.iter_mut().for_each(|v| v[2] = 10.0);
        let r = rasterize(&mesh, &Pose::rest(2), &camera()).unwrap();
        let tape = Tape::<f64>::new(Mode::Train);
        let t = tape.leaf(Tensor::full(&[1, 3, 128, 128], 0.7));
        let img = render_texture(t, &[&r], 0.25).unwrap();
        assert!(img.value().data().iter().all(|&v| v == 0.25));
        let g = tape.backward(img.sum()).unwrap();
        assert!(g.get(t).unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn gradient_matches_finite_differences_on_sampled_texels() {
        let r = rasterize(&quad([0, 1]), &Pose::rest(2), &camera()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let tex = Tensor::from_fn(&[1, 3, 128, 128], |_| rng.gen_range(-1.0..1.0));
        let weights = Tensor::from_fn(&[1, 3, 12, 8], |_| rng.gen_range(-1.0..1.0));
        let loss = |t: &Tensor| {
            let tape = Tape::<f64>::inference();
            let img = render_texture(tape.constant(t.clone()), &[&r], BACKGROUND).unwrap();
            img.value().zip_map(&weights, |a, b| a * b).unwrap().sum()
        };
        let tape = Tape::<f64>::new(Mode::Train);
        let leaf = tape.leaf(tex.clone());
        let img = render_texture(leaf, &[&r], BACKGROUND).unwrap();
        let g = tape.backward(img.mul(tape.constant(weights.clone())).unwrap().sum()).unwrap();
        let analytic = g.get(leaf).unwrap();
        let touched: Vec<usize> = (0..analytic.numel()).filter(|&i| analytic.data()[i] != 0.0).collect();
        assert!(!touched.is_empty());
        // Every texel with a nonzero gradient plus a sample of untouched ones.
        let probes = touched.iter().copied().chain((0..200).map(|k| k * 241 % analytic.numel()));
        for i in probes {
            let (mut plus, mut minus) = (tex.clone(), tex.clone());
            plus.data_mut()[i] += 1e-6;
            minus.data_mut()[i] -= 1e-6;
            let numeric = (loss(&plus) - loss(&minus)) / 2e-6;
            let a = analytic.data()[i];
            assert!((a - numeric).abs() / (a.abs() + numeric.abs()).max(1e-8) <= 1e-4 || (a - numeric).abs() < 1e-9, "texel {i}: {a} vs {numeric}");
        }
    }

    #[test]
    fn part_masks_partition_the_foreground() {
        let r = rasterize(&quad([0, 1]), &Pose::rest(2), &camera()).unwrap();
        let masks = render_part_masks::<f64>(&r, 2);
        let n = r.height * r.width;
        for (i, fg) in r.foreground().iter().enumerate() {
            let total = masks.data()[i] + masks.data()[n + i];
            assert_eq!(total, if *fg { 1.0 } else { 0.0 });
        }
        assert!(masks.data()[..n].contains(&1.0) && masks.data()[n..].contains(&1.0));
        let single = rasterize(&quad([0, 0]), &Pose::rest(2), &camera()).unwrap();
        let m = render_part_masks::<f64>(&single, 2);
        assert!(m.data()[n..].iter().all(|&v| v == 0.0));
    }
}
