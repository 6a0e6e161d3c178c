use std::collections::HashSet;
use std::path::{Path, PathBuf};

use adw_core::io::write_atomic;

use crate::record::{record_path, ExperimentRecord};
use crate::{Invalid, RunConfig};

mod features;
mod prep;
mod protocol;
mod report;
mod score;
mod train;

pub use features::{cmd_features, load_index, FeatureIndex, FeaturesArgs, IndexEntry, INDEX_FILE};
pub use prep::{cmd_prep, PrepArgs};
pub use protocol::{cmd_protocol, ProtocolArgs, REPORT_JSON, REPORT_TABLE};
pub use report::{cmd_report, ReportArgs};
pub use score::{cmd_score, ScoreArgs};
pub use train::{cmd_train, ModelMeta, TrainArgs};

/// File-name-safe form of a sample id.
pub fn safe_name(id: &str) -> String {
    id.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.') {
                c
            } else {
                '_'
            }
        })
        .collect()
}

/// Maps sample ids to unique file stems, failing on collisions.
pub(crate) fn unique_names<'a>(
    ids: impl IntoIterator<Item = &'a str>,
) -> anyhow::Result<Vec<String>> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for id in ids {
        let name = safe_name(id);
        if !seen.insert(name.clone()) {
            return Err(Invalid(format!("sample ids map to the same file name {name:?}")).into());
        }
        out.push(name);
    }
    Ok(out)
}

pub(crate) fn write_text(path: &Path, text: &str) -> anyhow::Result<()> {
    write_atomic(path, text.as_bytes())?;
    Ok(())
}

pub(crate) fn finish(
    command: &str,
    cfg: &RunConfig,
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
    primary: &Path,
    primary_is_dir: bool,
) -> anyhow::Result<Vec<PathBuf>> {
    let rec = ExperimentRecord::new(command, cfg, inputs, outputs.clone())?;
    rec.write(&record_path(primary, primary_is_dir))?;
    Ok(outputs)
}
