//! Differentiable maps, polynomial generators and dynamic system models.

mod map;
mod poly;
mod systems;

pub use map::DifferentiableMap;
pub use poly::{make_quadratic, random_polynomial_map, random_quadratic, Polynomial, QuadraticMap};
pub use systems::{
    fig2_map, generator4, linear_system, registry_get, scalar_demo, system, terrain_height, terrain_nav, tracking3d,
    GeneratorParams, RegistryEntry, SystemModel, SystemSpec, REGISTRY_NAMES,
};
