//! Model-based burst super-resolution.
//!
//! The crate covers the whole classical pipeline for RAW bursts: synthetic
//! burst generation from an sRGB image, robust Lucas-Kanade registration,
//! reconstruction of a higher-resolution linear RGB image by half-quadratic
//! splitting or proximal gradient descent under classical priors, test-time
//! ensembling, and PSNR/SSIM scoring (plain and alignment-based).

pub mod camera;
pub mod cli;
pub mod ensemble;
pub mod error;
pub mod eval;
pub mod forward;
pub mod image;
pub mod motion;
pub mod registration;
pub mod scene;
pub mod solver;

pub use error::{Error, Result};
pub use image::{Burst, CfaPattern, ColorSpace, PixelGrid, RawBayerImage, RgbImage};
pub use motion::{MotionModel, MotionParams};
