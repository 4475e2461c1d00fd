pub mod landscape;
pub mod optimize;
pub mod simulate;
pub mod sweep;
pub mod verify;
