pub mod approx;
pub mod assignment_tester;
pub mod cli;
pub mod constraint_core;
pub mod constraint_graph;
pub mod gap_pipeline;
pub mod linear_test;
pub mod midpoint_code;
pub mod numerics;
pub mod reductions;
pub mod seeds;
pub mod stats;
