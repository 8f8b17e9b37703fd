use serde::{Deserialize, Serialize};

use crate::commands::RunOptions;

pub const MANIFEST_VERSION: u32 = 1;

/// Everything needed to reproduce a run: the subcommand, the overrides and
/// the problem file text. Thread counts and timings are deliberately absent.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub manifest_version: u32,
    pub tool: String,
    pub version: String,
    pub subcommand: String,
    pub options: RunOptions,
    pub config_path: Option<String>,
    pub config: Option<String>,
    pub seed: Option<u64>,
    pub outputs: Vec<String>,
}

impl Manifest {
    pub fn file_name(subcommand: &str) -> String {
        format!("manifest-{}.json", subcommand)
    }
}
