//! Transport of passive scalars on the 2-torus along fractal shear flows and
//! binary-swap mixing flows, with exact Lagrangian transport and a viscous
//! advection-diffusion solver.

pub mod ade;
pub mod composite;
pub mod coord;
pub mod flows;
pub mod grid;
pub mod limits;
pub mod schedule;
pub mod spectral;
pub mod transport;

pub use coord::{Coord, Exact};
pub use flows::TorusPoint;
pub use grid::{GridField, Norm};
pub use schedule::Rational;
