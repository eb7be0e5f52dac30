pub mod banded;
pub mod cli;
pub mod energy;
pub mod extrinsic;
pub mod flow;
pub mod grid;
pub mod init;
pub mod oracle;
pub mod sun;
