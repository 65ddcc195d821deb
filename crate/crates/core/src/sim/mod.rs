//! Forward dynamics of a planar articulated chain sliding on a frictional
//! surface.
//!
//! Coordinates are `q = (x, y, yaw, θ_1 .. θ_{n-1})`: the root link's COM
//! position and heading followed by relative joint angles. The integrator is
//! semi-implicit Euler with linearly implicit friction, joint limits and
//! link-link contact resolved by inelastic impulses.

mod dynamics;
mod integrate;
mod kinematics;
mod model;

pub use dynamics::{
    coriolis_matrix, coriolis_matrix_at, coriolis_vector, friction_at, friction_generalized_force,
    friction_sample_offsets, kinetic_energy, link_matrix, mass_matrix, mass_matrix_at,
    mass_matrix_derivatives, Friction, FRICTION_SAMPLES, STICK_VELOCITY,
};
pub(crate) use integrate::{advance_velocity, capsule_contacts, VelocityConstraint};
pub use integrate::{
    forward_acceleration, resolve_constraints, resolve_joint_limits, settle, settle_with, step,
    step_detailed, SimParams, MAX_CONDITION,
};
pub use kinematics::Kinematics;
pub use model::{
    cuboid_unit_inertia, ChainModel, ChainState, DEFAULT_WIDTH, GRAVITY, HARDWARE_JOINT_LIMIT,
    WIDE_JOINT_LIMIT,
};

#[cfg(test)]
mod tests;
