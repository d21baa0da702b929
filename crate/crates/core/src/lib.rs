//! Scheduling toolkit for multi-mode dataflow (MMDF) applications on
//! homogeneous multiprocessors.
//!
//! An MMDF application is a set of tasks whose dataflow behaviour (port
//! rates, execution times, initial tokens) switches between named modes
//! along a mode transition graph. The toolkit maps every task of every
//! mode onto a processor pool so that the processor count is minimised
//! while a global throughput constraint stays satisfied even across mode
//! transitions, where task migration and schedule warm-up silence the
//! output for a while.
//!
//! The crate is organised along the pipeline:
//!
//! * [`model`] holds the graph description, validation and repetition
//!   vectors,
//! * [`schedule`] builds per-mode list schedules and measures latency and
//!   initiation interval,
//! * [`analysis`] turns schedules plus a mapping into transition delays,
//!   per-mode throughput requirements and the output buffer size,
//! * [`ga`] searches for mappings with a genetic algorithm, including the
//!   processor renaming heuristic,
//! * [`baselines`] provides the fixed-mapping and per-mode-optimisation
//!   reference strategies,
//! * [`sim`] replays mode traces against a chosen buffer size to check
//!   that the consumer never starves.

pub mod analysis;
pub mod baselines;
pub mod ga;
pub mod model;
pub mod rational;
pub mod schedule;
pub mod sim;

pub use rational::Rational;
