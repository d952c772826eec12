use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MESH_ROWS: usize = 10;
pub const MESH_COLS: usize = 9;

const DEFAULT_LAYOUT: &str = include_str!("../../assets/layout_60.json");

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayoutEntry {
    pub name: String,
    pub row: usize,
    pub col: usize,
}

/// Placement of named electrodes on the 10×9 scalp mesh.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<LayoutEntry>", into = "Vec<LayoutEntry>")]
pub struct ChannelLayout {
    entries: Vec<LayoutEntry>,
    #[serde(skip)]
    index: HashMap<String, usize>,
}

impl ChannelLayout {
    pub fn new(entries: Vec<LayoutEntry>) -> Result<Self> {
        if entries.len() > MESH_ROWS * MESH_COLS {
            return Err(Error::invalid(format!(
                "layout has {} entries, mesh holds {}",
                entries.len(),
                MESH_ROWS * MESH_COLS
            )));
        }
        let mut index = HashMap::with_capacity(entries.len());
        let mut taken = [[false; MESH_COLS]; MESH_ROWS];
        for (i, e) in entries.iter().enumerate() {
            if e.row >= MESH_ROWS || e.col >= MESH_COLS {
                return Err(Error::invalid(format!(
                    "channel '{}' at ({}, {}) is outside the {MESH_ROWS}x{MESH_COLS} mesh",
                    e.name, e.row, e.col
                )));
            }
            if taken[e.row][e.col] {
                return Err(Error::invalid(format!(
                    "mesh cell ({}, {}) assigned twice (second: '{}')",
                    e.row, e.col, e.name
                )));
            }
            taken[e.row][e.col] = true;
            if index.insert(e.name.clone(), i).is_some() {
                return Err(Error::invalid(format!("duplicate channel '{}'", e.name)));
            }
        }
        Ok(ChannelLayout { entries, index })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let entries: Vec<LayoutEntry> = serde_json::from_str(&text)?;
        ChannelLayout::new(entries)
    }

    pub fn entries(&self) -> &[LayoutEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.name.as_str())
    }

    /// `(row, col)` of a channel.
    pub fn slot(&self, name: &str) -> Option<(usize, usize)> {
        self.index
            .get(name)
            .map(|&i| (self.entries[i].row, self.entries[i].col))
    }
}

impl Default for ChannelLayout {
    /// The shipped 60-electrode 10-10 montage, rows running frontal to
    /// occipital.
    fn default() -> Self {
        let entries: Vec<LayoutEntry> =
            serde_json::from_str(DEFAULT_LAYOUT).expect("bundled layout parses");
        ChannelLayout::new(entries).expect("bundled layout is valid")
    }
}

impl TryFrom<Vec<LayoutEntry>> for ChannelLayout {
    type Error = Error;

    fn try_from(v: Vec<LayoutEntry>) -> Result<Self> {
        ChannelLayout::new(v)
    }
}

impl From<ChannelLayout> for Vec<LayoutEntry> {
    fn from(l: ChannelLayout) -> Self {
        l.entries
    }
}
