//! Benchmark generators, problem files and the experiment runner.

pub mod cache;
pub mod experiment;
pub mod file;
pub mod generate;

pub use experiment::{run_experiment, run_experiment_with, spring_mass_suite, BenchInstance, ExperimentConfig, RunReport, RunRow};
pub use file::{read_problem, write_problem};
pub use generate::{gen_random_instance, gen_spring_mass, RandomSpec, SpringMassParams};
