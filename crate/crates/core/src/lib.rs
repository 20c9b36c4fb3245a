pub mod autodiff;
pub mod bbvi;
pub mod commands;
pub mod config;
pub mod datagen;
pub mod io;
pub mod loss;
pub mod metrics;
pub mod nets;
pub mod node;
pub mod optim;
pub mod sampler;
pub mod trainer;
pub mod trajectory;
