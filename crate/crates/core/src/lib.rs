pub mod cli;
pub mod clustering;
pub mod codebook;
pub mod coders;
pub mod corpus;
pub mod gateway;
pub mod merging;
pub mod metrics;
pub mod review;
