//! Triplane feature fields: three node-centred `res × res × C` grids over the
//! XY, XZ and YZ projections of a world-space box.

use rand::Rng;

use crate::error::{Error, Result};
use crate::math::Vec3;
use crate::scalar::Real;

pub const PLANE_AXES: [(usize, usize); 3] = [(0, 1), (0, 2), (1, 2)];

#[derive(Clone, Debug, PartialEq)]
pub struct TriPlaneField<T> {
    res: usize,
    channels: usize,
    /// `planes[k][(v * res + u) * C + c]`, planes ordered XY, XZ, YZ.
    pub planes: [Vec<T>; 3],
    bbox_min: Vec3<T>,
    bbox_max: Vec3<T>,
}

/// Bilinear footprint of a query on one plane.
#[derive(Clone, Copy, Debug)]
struct Footprint<T> {
    nodes: [usize; 4],
    weights: [T; 4],
}

/// A gradient deposited on one grid node.
#[derive(Clone, Debug, PartialEq)]
pub struct NodeGrad<T> {
    pub plane: usize,
    pub node: usize,
    pub grad: Vec<T>,
}

impl<T: Real> TriPlaneField<T> {
    pub fn zeros(res: usize, channels: usize, bbox_min: Vec3<T>, bbox_max: Vec3<T>) -> Result<Self> {
        if res < 2 {
            return Err(Error::InvalidConfig("triplane resolution must be at least 2".into()));
        }
        if channels == 0 {
            return Err(Error::InvalidConfig("triplane needs at least one channel".into()));
        }
        for a in 0..3 {
            if !(bbox_max[a] > bbox_min[a]) {
                return Err(Error::InvalidConfig(format!("triplane box has no extent on axis {a}")));
            }
        }
        let n = res * res * channels;
        Ok(Self { res, channels, planes: [vec![T::zero(); n], vec![T::zero(); n], vec![T::zero(); n]], bbox_min, bbox_max })
    }

    /// Features drawn uniformly from `[-scale, scale]`.
    pub fn random<R: Rng>(
        res: usize,
        channels: usize,
        bbox_min: Vec3<T>,
        bbox_max: Vec3<T>,
        scale: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let mut f = Self::zeros(res, channels, bbox_min, bbox_max)?;
        for plane in f.planes.iter_mut() {
            for v in plane.iter_mut() {
                *v = T::lit(rng.gen_range(-scale..scale));
            }
        }
        Ok(f)
    }

    pub fn from_planes(res: usize, channels: usize, planes: [Vec<T>; 3], bbox_min: Vec3<T>, bbox_max: Vec3<T>) -> Result<Self> {
        let mut f = Self::zeros(res, channels, bbox_min, bbox_max)?;
        if let Some(p) = planes.iter().find(|p| p.len() != res * res * channels) {
            return Err(Error::DimensionMismatch { what: "triplane plane", expected: res * res * channels, got: p.len() });
        }
        f.planes = planes;
        Ok(f)
    }

    pub fn res(&self) -> usize {
        self.res
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn feature_len(&self) -> usize {
        3 * self.channels
    }

    pub fn bbox(&self) -> (Vec3<T>, Vec3<T>) {
        (self.bbox_min, self.bbox_max)
    }

    pub fn param_count(&self) -> usize {
        3 * self.res * self.res * self.channels
    }

    fn footprints(&self, p: &Vec3<T>) -> [Footprint<T>; 3] {
        let top = T::count(self.res - 1);
        let mut grid = [T::zero(); 3];
        for a in 0..3 {
            let n = ((p[a] - self.bbox_min[a]) / (self.bbox_max[a] - self.bbox_min[a])).clamp_to(T::zero(), T::one());
            grid[a] = n * top;
        }
        PLANE_AXES.map(|(a, b)| {
            let (iu, fu) = split(grid[a], self.res);
            let (iv, fv) = split(grid[b], self.res);
            let one = T::one();
            let node = |u: usize, v: usize| v * self.res + u;
            Footprint {
                nodes: [node(iu, iv), node(iu + 1, iv), node(iu, iv + 1), node(iu + 1, iv + 1)],
                weights: [(one - fu) * (one - fv), fu * (one - fv), (one - fu) * fv, fu * fv],
            }
        })
    }

    /// Bilinear samples of the three planes concatenated `XY ‖ XZ ‖ YZ`.
    pub fn sample(&self, p: &Vec3<T>) -> Vec<T> {
        let mut out = vec![T::zero(); self.feature_len()];
        self.sample_into(p, &mut out);
        out
    }

    pub fn sample_into(&self, p: &Vec3<T>, out: &mut [T]) {
        let c = self.channels;
        for (k, fp) in self.footprints(p).iter().enumerate() {
            let slot = &mut out[k * c..(k + 1) * c];
            slot.iter_mut().for_each(|v| *v = T::zero());
            for (node, w) in fp.nodes.iter().zip(fp.weights) {
                if w == T::zero() {
                    continue;
                }
                let src = &self.planes[k][node * c..(node + 1) * c];
                for (o, s) in slot.iter_mut().zip(src) {
                    *o = *o + w * *s;
                }
            }
        }
    }

    /// Gradients on the (at most 12) grid nodes touched by the query.
    pub fn sample_backward(&self, p: &Vec3<T>, upstream: &[T]) -> Vec<NodeGrad<T>> {
        let c = self.channels;
        let mut out = Vec::with_capacity(12);
        for (k, fp) in self.footprints(p).iter().enumerate() {
            let up = &upstream[k * c..(k + 1) * c];
            for (node, w) in fp.nodes.iter().zip(fp.weights) {
                if w == T::zero() {
                    continue;
                }
                let grad: Vec<T> = up.iter().map(|g| *g * w).collect();
                match out.iter_mut().find(|g: &&mut NodeGrad<T>| g.plane == k && g.node == *node) {
                    Some(existing) => existing.grad.iter_mut().zip(&grad).for_each(|(a, b)| *a = *a + *b),
                    None => out.push(NodeGrad { plane: k, node: *node, grad }),
                }
            }
        }
        out
    }

    /// Scatter `sample_backward` into a dense buffer laid out like `planes`
    /// concatenated (`XY`, then `XZ`, then `YZ`).
    pub fn accumulate_backward(&self, p: &Vec3<T>, upstream: &[T], dense: &mut [T]) {
        let c = self.channels;
        let plane_len = self.res * self.res * c;
        for (k, fp) in self.footprints(p).iter().enumerate() {
            let up = &upstream[k * c..(k + 1) * c];
            for (node, w) in fp.nodes.iter().zip(fp.weights) {
                if w == T::zero() {
                    continue;
                }
                let dst = &mut dense[k * plane_len + node * c..k * plane_len + (node + 1) * c];
                for (d, g) in dst.iter_mut().zip(up) {
                    *d = *d + w * *g;
                }
            }
        }
    }

    /// Gradient of `upstream · sample(p)` with respect to the query point.
    /// Zero along axes where the query is clamped to the box.
    pub fn sample_point_grad(&self, p: &Vec3<T>, upstream: &[T]) -> Vec3<T> {
        let c = self.channels;
        let top = T::count(self.res - 1);
        let mut grid = [T::zero(); 3];
        let mut scale = [T::zero(); 3];
        for a in 0..3 {
            let extent = self.bbox_max[a] - self.bbox_min[a];
            let n = (p[a] - self.bbox_min[a]) / extent;
            grid[a] = n.clamp_to(T::zero(), T::one()) * top;
            if n > T::zero() && n < T::one() {
                scale[a] = top / extent;
            }
        }
        let mut out = Vec3::zero();
        let one = T::one();
        for (k, (a, b)) in PLANE_AXES.iter().enumerate() {
            let (iu, fu) = split(grid[*a], self.res);
            let (iv, fv) = split(grid[*b], self.res);
            let up = &upstream[k * c..(k + 1) * c];
            let plane = &self.planes[k];
            let node = |u: usize, v: usize| &plane[(v * self.res + u) * c..(v * self.res + u + 1) * c];
            let (f00, f10, f01, f11) = (node(iu, iv), node(iu + 1, iv), node(iu, iv + 1), node(iu + 1, iv + 1));
            let (mut du, mut dv) = (T::zero(), T::zero());
            for ch in 0..c {
                let g = up[ch];
                du = du + g * ((one - fv) * (f10[ch] - f00[ch]) + fv * (f11[ch] - f01[ch]));
                dv = dv + g * ((one - fu) * (f01[ch] - f00[ch]) + fu * (f11[ch] - f10[ch]));
            }
            out.0[*a] = out.0[*a] + du * scale[*a];
            out.0[*b] = out.0[*b] + dv * scale[*b];
        }
        out
    }

    pub fn flatten_into(&self, out: &mut Vec<T>) {
        for p in &self.planes {
            out.extend_from_slice(p);
        }
    }

    pub fn load_flat(&mut self, flat: &[T]) {
        let n = self.res * self.res * self.channels;
        for (k, p) in self.planes.iter_mut().enumerate() {
            p.copy_from_slice(&flat[k * n..(k + 1) * n]);
        }
    }
}

/// Lower node index and fraction for a grid coordinate in `[0, res-1]`.
fn split<T: Real>(g: T, res: usize) -> (usize, T) {
    let i = g.floor().to_usize().unwrap_or(0).min(res - 2);
    (i, g - T::count(i))
}

/// Separate body and cloth fields in canonical space.
#[derive(Clone, Debug, PartialEq)]
pub struct AvatarField<T> {
    pub body: TriPlaneField<T>,
    pub cloth: TriPlaneField<T>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn unit_box(res: usize, c: usize) -> TriPlaneField<f64> {
        TriPlaneField::zeros(res, c, Vec3::zero(), Vec3::splat(1.0)).unwrap()
    }

    #[test]
    fn constant_planes_give_constant_features() {
        let mut f = unit_box(5, 4);
        for p in f.planes.iter_mut() {
            p.iter_mut().for_each(|v| *v = 0.7);
        }
        for p in [Vec3::new(0.1, 0.5, 0.9), Vec3::new(-3.0, 2.0, 0.33)] {
            assert!(f.sample(&p).iter().all(|&v| (v - 0.7).abs() < 1e-15));
        }
    }

    #[test]
    fn grid_node_returns_stored_feature() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let f = TriPlaneField::random(5, 3, Vec3::zero(), Vec3::splat(1.0), 1.0, &mut rng).unwrap();
        // (0.25, 0.5, 0.75) sits on nodes (1, 2, 3) of a 5-node axis
        let s = f.sample(&Vec3::new(0.25, 0.5, 0.75));
        let node = |k: usize, u: usize, v: usize| &f.planes[k][(v * 5 + u) * 3..(v * 5 + u + 1) * 3];
        assert_eq!(&s[0..3], node(0, 1, 2));
        assert_eq!(&s[3..6], node(1, 1, 3));
        assert_eq!(&s[6..9], node(2, 2, 3));
    }

    #[test]
    fn cell_midpoint_averages_four_nodes() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let f = TriPlaneField::random(3, 2, Vec3::zero(), Vec3::splat(1.0), 1.0, &mut rng).unwrap();
        let s = f.sample(&Vec3::new(0.25, 0.25, 0.25));
        let xy = &f.planes[0];
        for c in 0..2 {
            let avg: f64 = (xy[c] + xy[2 + c] + xy[6 + c] + xy[8 + c]) / 4.0;
            assert!((s[c] - avg).abs() < 1e-15);
        }
    }

    #[test]
    fn grid_node_backward_deposits_on_single_node() {
        let f = unit_box(5, 2);
        let up = vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let g = f.sample_backward(&Vec3::new(0.25, 0.5, 0.75), &up);
        assert_eq!(g.len(), 3);
        assert_eq!(g[0].grad, vec![1.0, 2.0]);
        assert_eq!(g[2].grad, vec![5.0, 6.0]);
        let zero = f.sample_backward(&Vec3::new(0.3, 0.6, 0.1), &[0.0; 6]);
        assert!(zero.iter().all(|n| n.grad.iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn continuous_across_cell_edges() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let f = TriPlaneField::<f64>::random(9, 3, Vec3::zero(), Vec3::splat(1.0), 1.0, &mut rng).unwrap();
        let edge = 3.0 / 8.0;
        let eps = 1e-7;
        let a = f.sample(&Vec3::new(edge - eps, 0.4, 0.6));
        let b = f.sample(&Vec3::new(edge + eps, 0.4, 0.6));
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-5);
        }
    }

    #[test]
    fn point_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let f = TriPlaneField::random(5, 3, Vec3::new(-1.0, 0.0, -0.5), Vec3::new(1.0, 2.0, 0.5), 1.0, &mut rng).unwrap();
        let up: Vec<f64> = (0..9).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let dot = |p: &Vec3<f64>| f.sample(p).iter().zip(&up).map(|(a, b)| a * b).sum::<f64>();
        for p in [Vec3::new(0.13, 0.71, 0.07), Vec3::new(-0.61, 1.33, -0.29), Vec3::new(0.9, 1.9, 0.41)] {
            let g = f.sample_point_grad(&p, &up);
            for a in 0..3 {
                let mut e = Vec3::zero();
                e.0[a] = 1e-6;
                let n = (dot(&(p + e)) - dot(&(p - e))) / 2e-6;
                assert!((g[a] - n).abs() < 1e-8 * n.abs().max(1.0), "axis {a}: {} vs {n}", g[a]);
            }
        }
        let outside = f.sample_point_grad(&Vec3::new(3.0, -1.0, 9.0), &up);
        assert_eq!(outside, Vec3::zero());
    }

    #[test]
    fn degenerate_box_rejected() {
        assert!(TriPlaneField::<f64>::zeros(4, 2, Vec3::zero(), Vec3::new(1.0, 0.0, 1.0)).is_err());
    }
}
