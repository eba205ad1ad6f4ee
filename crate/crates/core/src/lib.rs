pub mod aggregation;
pub mod experiments;
pub mod forms;
pub mod linalg;
pub mod linesearch;
pub mod pairs;
pub mod problems;
pub mod solver;
