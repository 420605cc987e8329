pub mod compact;
pub mod drset;
pub mod lp;
pub mod network;
pub mod uncertainty;
