//! Configuration-driven experiment runner for the radial Klein-Gordon laboratory.

pub mod commands;
pub mod config;

use nlkg_core::LabError;

/// Exit code for an error: 2 for configuration and domain errors, 3 for
/// numerical instability, 4 for violated invariants.
pub fn exit_code(err: &anyhow::Error) -> u8 {
    err.chain()
        .find_map(|e| e.downcast_ref::<LabError>())
        .map_or(2, |e| e.exit_code() as u8)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes_follow_the_error_kind() {
        let code = |e: LabError| exit_code(&anyhow::Error::new(e).context("while running"));
        assert_eq!(code(LabError::Config("x".into())), 2);
        assert_eq!(code(LabError::Bracket("x".into())), 2);
        assert_eq!(
            code(LabError::Instability {
                time: 1.0,
                detail: "nan".into()
            }),
            3
        );
        assert_eq!(code(LabError::HardFailure("x".into())), 4);
        assert_eq!(exit_code(&anyhow::anyhow!("plain")), 2);
    }
}
