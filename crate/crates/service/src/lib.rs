//! HTTP service and command line for the food segmentation toolkit.

pub mod api;
pub mod cli;
pub mod config;
pub mod diary;
pub mod models;
pub mod rle;
