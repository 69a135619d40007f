pub mod autodiff;
pub mod checkpoint;
pub mod config;
pub mod curriculum;
pub mod experiment;
pub mod families;
pub mod nn;
pub mod rng;
pub mod samples;
pub mod sinusoid;
pub mod trainer;
