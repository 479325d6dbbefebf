pub mod distfit;
pub mod ingest;
pub mod econsim;
pub mod regress;
pub mod eoe;
pub mod cli;
