mod bench;
mod data;
mod distill;
mod evaluate;
mod generate;
mod train;

pub use bench::bench_cluster;
pub use data::{preprocess, synth};
pub use distill::distill;
pub use evaluate::{default_lexicon, evaluate};
pub use generate::generate;
pub use train::train;

use std::path::Path;

use anyhow::{Context, Result};

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}
