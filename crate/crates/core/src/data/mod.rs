//! Core signal containers, channel layout, band definitions and the EPO1
//! epoch file format.

mod bands;
mod epo;
pub(crate) mod epoch;
mod layout;

pub use bands::{Band, BandSet};
pub use epo::{load_epochs, save_epochs, sidecar_path, EpochMeta, EPO_MAGIC, EPO_VERSION};
pub use epoch::{validate, Check, EpochSet, ValidationReport, FORGOTTEN, REMEMBERED};
pub use layout::{ChannelLayout, LayoutEntry, MESH_COLS, MESH_ROWS};
