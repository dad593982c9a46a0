//! Quantum state transfer between two optical cavities that share a movable
//! mirror.
//!
//! The mirror is pushed by radiation pressure from the loaded cavity until the
//! two cavity frequencies cross. Near the crossing the weak optical coupling
//! swaps the field adiabatically, so the whole photon state ends up in the
//! other cavity. The crate provides:
//!
//! * [`params`]: physical parameters, the dimensionless builder and the
//!   regime checks (weak coupling, adiabaticity, high-amplitude limit).
//! * [`semiclassical`]: mean-field integration of the 2x2 transmittance matrix
//!   self-consistently coupled to the mirror amplitude.
//! * [`adiabatic`]: the closed-form eigenmode solution and the reduced mirror
//!   equation.
//! * [`fidelity`]: fixed- and moving-target transfer fidelities for Fock,
//!   coherent, cat and displaced squeezed inputs.
//! * [`fock_oracle`]: exact propagation of the three-mode Hamiltonian in a
//!   truncated number basis, used to validate the approximations at toy scale.
//! * [`experiment`]: configs, presets, sweeps and CSV/JSON output behind the
//!   `dynres` command line tool.

pub mod adiabatic;
pub mod error;
pub mod experiment;
pub mod fidelity;
pub mod fock_oracle;
pub mod ode;
pub mod output;
pub mod params;
pub mod semiclassical;

pub use error::{Error, Result};
pub use fidelity::{InputState, Parity};
pub use params::SystemParams;
pub use semiclassical::{Trajectory, Transmittance};

pub use num_complex::Complex64;
