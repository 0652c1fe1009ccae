pub mod analysis;
pub mod autodiff;
pub mod cli;
pub mod data;
pub mod models;
pub mod seed;
pub mod train;
