//! File formats: the `RTPT` tensor container and binary netpbm images.

pub mod pnm;
pub mod rtt;
