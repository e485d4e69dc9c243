//! Layered body/cloth/scene Gaussian splatting for clothed avatars, with
//! analytic gradients and a CPU renderer.

pub mod decoders;
pub mod error;
pub mod gaussians;
pub mod gradcheck;
pub mod image;
pub mod losses;
pub mod math;
pub mod mesh;
pub mod renderer;
pub mod scalar;
pub mod skeleton;
pub mod spatial;
pub mod training;
pub mod triplane;

pub use error::{Error, Result};
pub use scalar::Real;

pub type Vec3f = math::Vec3<f32>;
pub type Vec3d = math::Vec3<f64>;
pub type Mat3f = math::Mat3<f32>;
pub type Mat3d = math::Mat3<f64>;
pub type ImageF = image::Image<f32>;
pub type ImageD = image::Image<f64>;
pub type PrimitiveF = gaussians::GaussianPrimitive<f32>;
pub type PrimitiveD = gaussians::GaussianPrimitive<f64>;
pub type LayerF = gaussians::GaussianLayer<f32>;
pub type LayerD = gaussians::GaussianLayer<f64>;
pub type CameraF = renderer::Camera<f32>;
pub type CameraD = renderer::Camera<f64>;
pub type AvatarF = training::Avatar<f32>;
pub type AvatarD = training::Avatar<f64>;
