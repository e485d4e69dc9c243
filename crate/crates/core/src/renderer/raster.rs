use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};

use rayon::prelude::*;

use crate::image::Image;
use crate::scalar::Real;

use super::project::Projection;

pub const TILE: usize = 16;
pub const ALPHA_MAX: f64 = 0.99;
pub const ALPHA_MIN: f64 = 1.0 / 255.0;
pub const T_MIN: f64 = 1e-4;
const DEPTH_EPS: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Splat2D<T> {
    pub mean2d: [T; 2],
    /// `(a, b, c)` of `[[a, b], [b, c]]`.
    pub cov2d: [T; 3],
    pub depth: T,
    pub color: [T; 3],
    pub alpha_base: T,
}

impl<T: Real> Splat2D<T> {
    pub fn from_projection(p: &Projection<T>, color: [T; 3], alpha_base: T) -> Self {
        Self { mean2d: p.mean2d, cov2d: p.cov2d, depth: p.depth, color, alpha_base }
    }

    fn conic(&self) -> [T; 3] {
        let [a, b, c] = self.cov2d;
        let inv = T::one() / (a * c - b * b);
        [c * inv, -b * inv, a * inv]
    }

    /// Pixel radius beyond which `alpha_base · G < 1/255`, plus one pixel of
    /// slack; `None` if the splat can never reach the skip threshold.
    fn reach(&self) -> Option<f64> {
        let o = self.alpha_base.as_f64();
        if !(o >= ALPHA_MIN) {
            return None;
        }
        let [a, b, c] = self.cov2d.map(|v| v.as_f64());
        let lmax = 0.5 * (a + c) + (0.25 * (a - c) * (a - c) + b * b).sqrt();
        let qmax = 2.0 * (255.0 * o).ln().max(0.0);
        Some((lmax * qmax).sqrt() + 1.0)
    }
}

/// Per-splat gradients produced by [`rasterize_backward`].
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Splat2DGrad<T> {
    pub mean2d: [T; 2],
    /// Gradient on `(a, b, c)`; `b` covers both off-diagonal entries.
    pub cov2d: [T; 3],
    pub color: [T; 3],
    pub alpha_base: T,
}

impl<T: Real> Splat2DGrad<T> {
    fn zero() -> Self {
        Self {
            mean2d: [T::zero(); 2],
            cov2d: [T::zero(); 3],
            color: [T::zero(); 3],
            alpha_base: T::zero(),
        }
    }

    fn add(&mut self, o: &Self) {
        for k in 0..2 {
            self.mean2d[k] = self.mean2d[k] + o.mean2d[k];
        }
        for k in 0..3 {
            self.cov2d[k] = self.cov2d[k] + o.cov2d[k];
            self.color[k] = self.color[k] + o.color[k];
        }
        self.alpha_base = self.alpha_base + o.alpha_base;
    }
}

/// Composited image plus the sort and binning needed by the backward pass.
#[derive(Clone, Debug)]
pub struct RenderOutput<T> {
    pub rgb: Image<T>,
    pub alpha: Image<T>,
    /// Expected depth of the composited splats.
    pub depth: Image<T>,
    pub background: [T; 3],
    conics: Vec<[T; 3]>,
    tiles: Vec<Vec<u32>>,
}

/// One splat's effect on one pixel.
#[derive(Clone, Copy, Debug)]
struct Hit<T> {
    /// Position in the traversal list.
    slot: usize,
    alpha: T,
    t_before: T,
    gauss: T,
    clamped: bool,
    dx: T,
    dy: T,
}

/// Walk `list` front to back at pixel `(px, py)`; returns the final transmittance.
#[inline]
fn walk_pixel<T: Real>(
    splats: &[Splat2D<T>],
    conics: &[[T; 3]],
    list: &[u32],
    px: T,
    py: T,
    mut on_hit: impl FnMut(Hit<T>),
) -> T {
    let amin = T::lit(ALPHA_MIN);
    let amax = T::lit(ALPHA_MAX);
    let tmin = T::lit(T_MIN);
    let half = T::lit(0.5);
    let two = T::lit(2.0);
    let mut t = T::one();
    for (slot, &i) in list.iter().enumerate() {
        let s = &splats[i as usize];
        let k = &conics[i as usize];
        let dx = px - s.mean2d[0];
        let dy = py - s.mean2d[1];
        let q = k[0] * dx * dx + two * k[1] * dx * dy + k[2] * dy * dy;
        let gauss = (-half * q).exp();
        let raw = s.alpha_base * gauss;
        if raw < amin {
            continue;
        }
        let clamped = raw > amax;
        let alpha = if clamped { amax } else { raw };
        on_hit(Hit { slot, alpha, t_before: t, gauss, clamped, dx, dy });
        t = t * (T::one() - alpha);
        if t < tmin {
            break;
        }
    }
    t
}

fn depth_order<T: Real>(splats: &[Splat2D<T>]) -> Vec<u32> {
    let mut order: Vec<u32> = (0..splats.len() as u32).collect();
    order.sort_by(|&a, &b| {
        splats[a as usize]
            .depth
            .partial_cmp(&splats[b as usize].depth)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    order
}

fn tile_grid(width: usize, height: usize) -> (usize, usize) {
    (width.div_ceil(TILE), height.div_ceil(TILE))
}

fn bin<T: Real>(splats: &[Splat2D<T>], order: &[u32], width: usize, height: usize) -> Vec<Vec<u32>> {
    let (tx, ty) = tile_grid(width, height);
    let mut tiles = vec![Vec::new(); tx * ty];
    for &i in order {
        let s = &splats[i as usize];
        let Some(r) = s.reach() else { continue };
        let (mx, my) = (s.mean2d[0].as_f64(), s.mean2d[1].as_f64());
        let x0 = (mx - r).floor().max(0.0);
        let x1 = (mx + r).ceil().min(width as f64 - 1.0);
        let y0 = (my - r).floor().max(0.0);
        let y1 = (my + r).ceil().min(height as f64 - 1.0);
        if !(x0 <= x1 && y0 <= y1) {
            continue;
        }
        let (tx0, tx1) = (x0 as usize / TILE, x1 as usize / TILE);
        let (ty0, ty1) = (y0 as usize / TILE, y1 as usize / TILE);
        for yy in ty0..=ty1 {
            for xx in tx0..=tx1 {
                tiles[yy * tx + xx].push(i);
            }
        }
    }
    tiles
}

struct TilePixels<T> {
    rgb: Vec<[T; 3]>,
    alpha: Vec<T>,
    depth: Vec<T>,
}

fn tile_bounds(tile: usize, tx: usize, width: usize, height: usize) -> (usize, usize, usize, usize) {
    let (x0, y0) = ((tile % tx) * TILE, (tile / tx) * TILE);
    (x0, (x0 + TILE).min(width), y0, (y0 + TILE).min(height))
}

fn shade_tile<T: Real>(
    splats: &[Splat2D<T>],
    conics: &[[T; 3]],
    list: &[u32],
    bounds: (usize, usize, usize, usize),
    background: [T; 3],
) -> TilePixels<T> {
    let (x0, x1, y0, y1) = bounds;
    let n = (x1 - x0) * (y1 - y0);
    let mut out = TilePixels { rgb: Vec::with_capacity(n), alpha: Vec::with_capacity(n), depth: Vec::with_capacity(n) };
    for y in y0..y1 {
        for x in x0..x1 {
            let mut c = [T::zero(); 3];
            let mut d = T::zero();
            let t = walk_pixel(splats, conics, list, T::count(x), T::count(y), |h| {
                let s = &splats[list[h.slot] as usize];
                let w = h.alpha * h.t_before;
                for k in 0..3 {
                    c[k] = c[k] + w * s.color[k];
                }
                d = d + w * s.depth;
            });
            let a = T::one() - t;
            out.rgb.push([c[0] + t * background[0], c[1] + t * background[1], c[2] + t * background[2]]);
            out.alpha.push(a);
            out.depth.push(d / a.max(T::lit(DEPTH_EPS)));
        }
    }
    out
}

fn assemble<T: Real>(
    width: usize,
    height: usize,
    background: [T; 3],
    conics: Vec<[T; 3]>,
    tiles: Vec<Vec<u32>>,
    shaded: Vec<TilePixels<T>>,
) -> RenderOutput<T> {
    let (tx, _) = tile_grid(width, height);
    let mut rgb = Image::new(width, height, 3);
    let mut alpha = Image::new(width, height, 1);
    let mut depth = Image::new(width, height, 1);
    for (tile, px) in shaded.iter().enumerate() {
        let (x0, x1, y0, y1) = tile_bounds(tile, tx, width, height);
        let mut k = 0;
        for y in y0..y1 {
            for x in x0..x1 {
                for c in 0..3 {
                    rgb.set(x, y, c, px.rgb[k][c]);
                }
                alpha.set(x, y, 0, px.alpha[k]);
                depth.set(x, y, 0, px.depth[k]);
                k += 1;
            }
        }
    }
    RenderOutput { rgb, alpha, depth, background, conics, tiles }
}

/// Tiled front-to-back compositing over a global depth sort.
pub fn rasterize<T: Real>(splats: &[Splat2D<T>], background: [T; 3], width: usize, height: usize) -> RenderOutput<T> {
    let conics: Vec<[T; 3]> = splats.iter().map(Splat2D::conic).collect();
    let order = depth_order(splats);
    let tiles = bin(splats, &order, width, height);
    let (tx, _) = tile_grid(width, height);
    let shaded: Vec<TilePixels<T>> = tiles
        .par_iter()
        .enumerate()
        .map(|(tile, list)| shade_tile(splats, &conics, list, tile_bounds(tile, tx, width, height), background))
        .collect();
    assemble(width, height, background, conics, tiles, shaded)
}

/// Reference path: every pixel visits every splat in depth order.
pub fn rasterize_naive<T: Real>(splats: &[Splat2D<T>], background: [T; 3], width: usize, height: usize) -> RenderOutput<T> {
    let conics: Vec<[T; 3]> = splats.iter().map(Splat2D::conic).collect();
    let order = depth_order(splats);
    let (tx, ty) = tile_grid(width, height);
    let tiles = vec![order; tx * ty];
    let shaded: Vec<TilePixels<T>> = tiles
        .iter()
        .enumerate()
        .map(|(tile, list)| shade_tile(splats, &conics, list, tile_bounds(tile, tx, width, height), background))
        .collect();
    assemble(width, height, background, conics, tiles, shaded)
}

/// Exact reverse of [`rasterize`] for an upstream gradient on `rgb`.
/// The depth and alpha maps are not differentiated.
pub fn rasterize_backward<T: Real>(splats: &[Splat2D<T>], out: &RenderOutput<T>, d_rgb: &Image<T>) -> Vec<Splat2DGrad<T>> {
    let (width, height) = (out.rgb.width, out.rgb.height);
    let (tx, _) = tile_grid(width, height);
    let bg = out.background;
    let conics = &out.conics;
    let one = T::one();
    let half = T::lit(0.5);
    let two = T::lit(2.0);

    let per_tile: Vec<Vec<Splat2DGrad<T>>> = out
        .tiles
        .par_iter()
        .enumerate()
        .map(|(tile, list)| {
            let mut local = vec![Splat2DGrad::zero(); list.len()];
            let mut hits = Vec::new();
            let (x0, x1, y0, y1) = tile_bounds(tile, tx, width, height);
            for y in y0..y1 {
                for x in x0..x1 {
                    let up = [d_rgb.get(x, y, 0), d_rgb.get(x, y, 1), d_rgb.get(x, y, 2)];
                    if up.iter().all(|v| *v == T::zero()) {
                        continue;
                    }
                    hits.clear();
                    let t_final = walk_pixel(splats, conics, list, T::count(x), T::count(y), |h| hits.push(h));
                    // suffix Σ_{j>i} c_j α_j T_j + T_final · bg
                    let mut suffix = [bg[0] * t_final, bg[1] * t_final, bg[2] * t_final];
                    for h in hits.iter().rev() {
                        let idx = list[h.slot] as usize;
                        let s = &splats[idx];
                        let g = &mut local[h.slot];
                        let w = h.alpha * h.t_before;
                        let mut d_alpha = T::zero();
                        for c in 0..3 {
                            g.color[c] = g.color[c] + up[c] * w;
                            d_alpha = d_alpha + up[c] * (h.t_before * s.color[c] - suffix[c] / (one - h.alpha));
                            suffix[c] = suffix[c] + s.color[c] * w;
                        }
                        if h.clamped {
                            continue;
                        }
                        g.alpha_base = g.alpha_base + d_alpha * h.gauss;
                        let d_q = -half * h.gauss * s.alpha_base * d_alpha;
                        let k = &conics[idx];
                        g.mean2d[0] = g.mean2d[0] - d_q * two * (k[0] * h.dx + k[1] * h.dy);
                        g.mean2d[1] = g.mean2d[1] - d_q * two * (k[1] * h.dx + k[2] * h.dy);
                        // conic gradient, held in cov2d until the final conversion
                        g.cov2d[0] = g.cov2d[0] + d_q * h.dx * h.dx;
                        g.cov2d[1] = g.cov2d[1] + d_q * two * h.dx * h.dy;
                        g.cov2d[2] = g.cov2d[2] + d_q * h.dy * h.dy;
                    }
                }
            }
            local
        })
        .collect();

    let mut grads = vec![Splat2DGrad::zero(); splats.len()];
    for (list, local) in out.tiles.iter().zip(&per_tile) {
        for (&i, g) in list.iter().zip(local) {
            grads[i as usize].add(g);
        }
    }
    for (g, k) in grads.iter_mut().zip(conics) {
        g.cov2d = conic_to_cov_grad(k, g.cov2d);
    }
    grads
}

/// Chain `(a, b, c)`-parameter gradients of the conic `K = Σ⁻¹` back to `Σ`:
/// `dΣ = −K dK K` on full matrices.
fn conic_to_cov_grad<T: Real>(k: &[T; 3], dk: [T; 3]) -> [T; 3] {
    let half = T::lit(0.5);
    let km = [[k[0], k[1]], [k[1], k[2]]];
    let gm = [[dk[0], half * dk[1]], [half * dk[1], dk[2]]];
    let mut kg = [[T::zero(); 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            kg[i][j] = km[i][0] * gm[0][j] + km[i][1] * gm[1][j];
        }
    }
    let mut r = [[T::zero(); 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            r[i][j] = -(kg[i][0] * km[0][j] + kg[i][1] * km[1][j]);
        }
    }
    [r[0][0], r[0][1] + r[1][0], r[1][1]]
}

/// Hash of which splats contribute to each pixel, whether they hit the
/// opacity clamp, and where compositing stops. Two renders with the same
/// signature are on the same smooth branch of the compositing function.
pub fn contribution_signature<T: Real>(splats: &[Splat2D<T>], width: usize, height: usize) -> u64 {
    let conics: Vec<[T; 3]> = splats.iter().map(Splat2D::conic).collect();
    let order = depth_order(splats);
    let mut hasher = DefaultHasher::new();
    order.hash(&mut hasher);
    for y in 0..height {
        for x in 0..width {
            walk_pixel(splats, &conics, &order, T::count(x), T::count(y), |h| {
                (h.slot, h.clamped).hash(&mut hasher);
            });
            usize::MAX.hash(&mut hasher);
        }
    }
    hasher.finish()
}
