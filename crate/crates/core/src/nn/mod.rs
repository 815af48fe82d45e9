pub mod checkpoint;
pub mod layers;
pub mod network;
pub mod reference;
pub mod train;
