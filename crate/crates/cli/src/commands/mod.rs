pub mod bench;
pub mod dataset;
pub mod detect;
pub mod inspect;
pub mod verify;
