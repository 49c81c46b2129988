pub mod analyze;
pub mod evaluate;
pub mod gen;
pub mod simulate;
pub mod train;

use anyhow::{bail, Result};
use muser_core::data::Split;

pub fn parse_split(s: &str) -> Result<Split> {
    Ok(match s {
        "train" => Split::Train,
        "val" => Split::Val,
        "test" => Split::Test,
        other => bail!("unknown split {other}; expected train, val, or test"),
    })
}
