//! Exit codes: 2 for configuration and input errors, 3 for generation
//! failures, 4 when a problem is too large for the exact solver, 1 otherwise.

use std::fmt;

#[derive(Debug, Clone)]
pub enum Stage {
    Config(String),
    Generation(String),
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Stage::Config(s) | Stage::Generation(s) => f.write_str(s),
        }
    }
}

pub fn config(what: impl Into<String>) -> Stage {
    Stage::Config(what.into())
}

pub fn generation(what: impl Into<String>) -> Stage {
    Stage::Generation(what.into())
}

fn too_large(e: &gridbary_core::Error) -> bool {
    matches!(
        e,
        gridbary_core::Error::TooLarge(_) | gridbary_core::Error::PlanTooLarge { .. }
    )
}

pub fn code_for(e: &anyhow::Error) -> u8 {
    let large = e.chain().any(|c| {
        c.downcast_ref::<gridbary_core::Error>().is_some_and(too_large)
            || matches!(c.downcast_ref::<gridbary_dcnn::Error>(), Some(gridbary_dcnn::Error::Core(inner)) if too_large(inner))
    }) || e.downcast_ref::<gridbary_core::Error>().is_some_and(too_large);
    if large {
        return 4;
    }
    match e.downcast_ref::<Stage>() {
        Some(Stage::Config(_)) => 2,
        Some(Stage::Generation(_)) => 3,
        None => 1,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use anyhow::Context;

    #[test]
    fn codes_follow_the_stage() {
        let e: anyhow::Result<()> = Err(anyhow::anyhow!("boom")).context(config("reading"));
        assert_eq!(code_for(&e.unwrap_err()), 2);
        let e: anyhow::Result<()> = Err(anyhow::anyhow!("boom")).context(generation("shapes"));
        assert_eq!(code_for(&e.unwrap_err()), 3);
        let e: anyhow::Result<()> =
            Err(gridbary_core::Error::TooLarge("64x64".into())).context(config("bary"));
        assert_eq!(code_for(&e.unwrap_err()), 4);
        assert_eq!(code_for(&anyhow::anyhow!("other")), 1);
    }
}
