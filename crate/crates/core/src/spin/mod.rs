//! Ground-state spin of the NV center: Hamiltonians, ODMR spectra and the
//! closed-form inversion of the two `m_I = 0` lines into `|B|` and the cone
//! angle between field and NV axis.
//!
//! All frequencies are ordinary frequencies in MHz and fields are in gauss.

mod hamiltonian;
mod inversion;
mod odmr;

pub use hamiltonian::{
    electron_hamiltonian, full_hamiltonian, hyperfine_transitions, transition_frequencies, SpinParams,
    Transition, TransitionPair,
};
pub use inversion::{estimate_field, estimate_field_hyperfine, invert_magnitude, invert_polar_angle, FieldEstimate};
pub use odmr::{fit_odmr_spectrum, simulate_odmr_spectrum, OdmrFit, Spectrum, SpectrumMetadata, Sweep};
