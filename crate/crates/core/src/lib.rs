//! Sharded brute-force simulation of quantum spin systems.
//!
//! `qsv` stores the full `2^N`-amplitude wavefunction of an `N`-qubit system
//! split across a mesh of lockstep workers, one shard per worker, and builds
//! everything else on top of the distributed update `|Ψ⟩ ↦ H|Ψ⟩`:
//!
//! * [`fabric`] — the worker mesh and its deterministic collectives
//!   (all-to-all, all-reduce, broadcast).
//! * [`state`] — the sharded wavefunction: indexing, tiled local permutations,
//!   global↔local qubit swaps, inner products, checkpoints.
//! * [`hamiltonian`] — local-term construction (XXZ, random k-local, files)
//!   and the blocking compiler that merges k-qubit terms into dense
//!   `B`-qubit blocks (default `B = 7`, i.e. 128×128 matrices).
//! * [`apply`] — the distributed `H|Ψ⟩` update: a swap-minimizing schedule,
//!   a tiled multiply-accumulate kernel, and the padded-FLOP cost model.
//! * [`lanczos`] — ground states via the three-term recurrence, including the
//!   memory-efficient two-pass variant that stores no Krylov basis.
//! * [`evolve`] — time evolution by a 6th-order product expansion of
//!   `exp(-i δt H)`.
//! * [`observables`] — energies, connected correlators, reduced density
//!   matrices and second Rényi entropies.
//!
//! The distribution model mirrors a SIMD accelerator pod: the first `N_g`
//! qubits of the basis-state label select the worker ("global" qubits), the
//! remaining `N_l = N - N_g` index amplitudes within a shard ("local"
//! qubits). All heavy operations are written as per-shard transformations
//! plus collective calls, so results are bit-reproducible for a fixed shard
//! count regardless of thread scheduling.
//!
//! ```
//! use qsv::fabric::Mesh;
//! use qsv::state::{ShardedState, Tiling};
//! use qsv::hamiltonian::{build_xxz, block_terms};
//! use qsv::lanczos::{ground_state, GroundStateOpts};
//!
//! let mesh = Mesh::spawn(2)?;
//! let n = 10;
//! let h = block_terms(&build_xxz(n, -1.0, 0.5, true)?, n, 7)?;
//! let opts = GroundStateOpts { seed: 7, krylov_dim: 80, ..Default::default() };
//! let gs = ground_state::<num_complex::Complex64>(&mesh, &h, Tiling::auto(n, mesh.global_bits()), &opts)?;
//! assert!(gs.residual < 1e-8);
//! # Ok::<(), qsv::Error>(())
//! ```

pub mod apply;
pub mod error;
pub mod evolve;
pub mod fabric;
pub mod hamiltonian;
pub mod lanczos;
pub mod observables;
pub mod state;

pub use error::{Error, Result};
