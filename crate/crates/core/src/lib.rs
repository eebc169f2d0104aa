pub mod beamform;
pub mod division;
pub mod error;
pub mod experiment;
pub mod longterm;
pub mod sdp;
pub mod seeds;
pub mod topology;
