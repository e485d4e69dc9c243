//! CPU splat renderer: projection, tiled compositing with its reverse pass,
//! and the body/cloth/scene layer compositor.

mod camera;
mod project;
mod raster;

pub use camera::{load_cameras, save_cameras, Camera, CameraRecord};
pub use project::{project, project_backward, Projection, DILATION};
pub use raster::{
    contribution_signature, rasterize, rasterize_backward, rasterize_naive, RenderOutput, Splat2D, Splat2DGrad, ALPHA_MAX,
    ALPHA_MIN, TILE, T_MIN,
};

use crate::error::Result;
use crate::image::Image;
use crate::scalar::Real;

/// Soft cloth visibility in `[0, 1]`, one channel.
#[derive(Clone, Debug, PartialEq)]
pub struct Matte<T> {
    pub values: Image<T>,
}

impl<T: Real> Matte<T> {
    pub fn constant(width: usize, height: usize, v: T) -> Self {
        Self { values: Image::filled(width, height, 1, v) }
    }
}

/// Body and scene splats composited together, body first in input order.
pub fn render_base<T: Real>(body: &[Splat2D<T>], scene: &[Splat2D<T>], cam: &Camera<T>, background: [T; 3]) -> RenderOutput<T> {
    let mut all = Vec::with_capacity(body.len() + scene.len());
    all.extend_from_slice(body);
    all.extend_from_slice(scene);
    rasterize(&all, background, cam.width, cam.height)
}

/// Cloth alone over black.
pub fn render_cloth<T: Real>(cloth: &[Splat2D<T>], cam: &Camera<T>) -> RenderOutput<T> {
    rasterize(cloth, [T::zero(); 3], cam.width, cam.height)
}

/// Splat list for the matte pass: cloth white, occluders black.
/// Input order is cloth, then scene, then body (if given).
pub fn matte_splats<T: Real>(cloth: &[Splat2D<T>], scene: &[Splat2D<T>], body: Option<&[Splat2D<T>]>) -> Vec<Splat2D<T>> {
    let white = |s: &Splat2D<T>| Splat2D { color: [T::one(); 3], ..*s };
    let black = |s: &Splat2D<T>| Splat2D { color: [T::zero(); 3], ..*s };
    cloth
        .iter()
        .map(white)
        .chain(scene.iter().map(black))
        .chain(body.into_iter().flatten().map(black))
        .collect()
}

/// Depth-aware cloth matte. Body splats occlude the cloth only when `body` is given.
pub fn render_matte<T: Real>(
    cloth: &[Splat2D<T>],
    scene: &[Splat2D<T>],
    body: Option<&[Splat2D<T>]>,
    cam: &Camera<T>,
) -> (Matte<T>, RenderOutput<T>) {
    let out = rasterize(&matte_splats(cloth, scene, body), [T::zero(); 3], cam.width, cam.height);
    (Matte { values: out.rgb.channel(0) }, out)
}

/// `I_cloth · V + I_base · (1 − V)` per pixel.
pub fn composite_final<T: Real>(cloth: &Image<T>, base: &Image<T>, matte: &Matte<T>) -> Result<Image<T>> {
    cloth.check_same_shape(base)?;
    check_matte(cloth, matte)?;
    let ch = cloth.channels;
    let mut out = Image::new(cloth.width, cloth.height, ch);
    for (i, px) in out.data.chunks_mut(ch).enumerate() {
        let v = matte.values.data[i];
        for (c, o) in px.iter_mut().enumerate() {
            *o = cloth.data[i * ch + c] * v + base.data[i * ch + c] * (T::one() - v);
        }
    }
    Ok(out)
}

pub struct CompositeGrad<T> {
    pub cloth: Image<T>,
    pub base: Image<T>,
    pub matte: Image<T>,
}

pub fn composite_final_backward<T: Real>(
    cloth: &Image<T>,
    base: &Image<T>,
    matte: &Matte<T>,
    d_final: &Image<T>,
) -> Result<CompositeGrad<T>> {
    cloth.check_same_shape(base)?;
    cloth.check_same_shape(d_final)?;
    check_matte(cloth, matte)?;
    let ch = cloth.channels;
    let mut g = CompositeGrad {
        cloth: Image::new(cloth.width, cloth.height, ch),
        base: Image::new(cloth.width, cloth.height, ch),
        matte: Image::new(cloth.width, cloth.height, 1),
    };
    for i in 0..cloth.width * cloth.height {
        let v = matte.values.data[i];
        let mut dv = T::zero();
        for c in 0..ch {
            let k = i * ch + c;
            let up = d_final.data[k];
            g.cloth.data[k] = up * v;
            g.base.data[k] = up * (T::one() - v);
            dv = dv + up * (cloth.data[k] - base.data[k]);
        }
        g.matte.data[i] = dv;
    }
    Ok(g)
}

fn check_matte<T: Real>(img: &Image<T>, matte: &Matte<T>) -> Result<()> {
    if matte.values.width != img.width || matte.values.height != img.height || matte.values.channels != 1 {
        return Err(crate::error::Error::ShapeMismatch(format!(
            "matte {}x{}x{} does not match image {}x{}",
            matte.values.width, matte.values.height, matte.values.channels, img.width, img.height
        )));
    }
    Ok(())
}

/// Lift a single-channel matte gradient to the RGB gradient of the matte pass.
pub fn matte_upstream<T: Real>(d_matte: &Image<T>) -> Image<T> {
    let mut up = Image::new(d_matte.width, d_matte.height, 3);
    for (i, v) in d_matte.data.iter().enumerate() {
        up.data[i * 3] = *v;
    }
    up
}
