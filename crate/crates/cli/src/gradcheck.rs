//! The full gradient-check suite: every differentiable kernel, the LIM
//! pathways and the detector's own pieces.

use std::io::Write;

use anyhow::Result;
use lim_core::gradcheck::{core_checks, run_check, CheckConfig, OpCheck, OpReport};
use lim_detector::gradcheck::detector_checks;

use crate::settings::{parse_settings, Settings};

#[derive(Clone, Debug)]
pub struct GradcheckSettings {
    pub check: CheckConfig,
    /// Run only the named checks; empty means all.
    pub only: Vec<String>,
}

impl Default for GradcheckSettings {
    fn default() -> Self {
        Self {
            check: CheckConfig::default(),
            only: Vec::new(),
        }
    }
}

impl Settings for GradcheckSettings {
    const KEYS: &'static [&'static str] = &["instances", "seed", "fault", "only"];

    fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "instances" => self.check.instances = value.parse()?,
            "seed" => self.check.seed = value.parse()?,
            "fault" => self.check.fault = Some(value.to_string()),
            "only" => self.only = value.split(',').map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect(),
            _ => unreachable!("key list checked by the parser"),
        }
        Ok(())
    }
}

impl GradcheckSettings {
    pub fn from_text(text: &str) -> Result<Self> {
        parse_settings(text)
    }
}

pub fn all_checks() -> Vec<OpCheck> {
    let mut checks = core_checks();
    checks.extend(detector_checks());
    checks
}

pub fn format_report(r: &OpReport) -> String {
    format!(
        "{}: {} (max rel err {:.2e}, tolerance {:.0e}, {} instances, {} redrawn, {} elements)",
        r.name,
        if r.passed() { "PASS" } else { "FAIL" },
        r.max_rel_err,
        r.tolerance,
        r.instances,
        r.rejected,
        r.elements
    )
}

/// Runs the selected checks, writing one line per check as it completes.
pub fn run_gradcheck(settings: &GradcheckSettings, out: &mut dyn Write) -> Result<Vec<OpReport>> {
    let checks: Vec<OpCheck> = all_checks()
        .into_iter()
        .filter(|c| settings.only.is_empty() || settings.only.iter().any(|n| n == c.name))
        .collect();
    if checks.is_empty() {
        anyhow::bail!("no gradient check matches {:?}", settings.only);
    }
    let mut reports = Vec::with_capacity(checks.len());
    for op in &checks {
        let r = run_check(op, &settings.check)?;
        writeln!(out, "{}", format_report(&r))?;
        reports.push(r);
    }
    Ok(reports)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_are_unique() {
        let mut names: Vec<_> = all_checks().iter().map(|c| c.name).collect();
        let n = names.len();
        names.sort_unstable();
        names.dedup();
        assert_eq!(names.len(), n);
    }

    #[test]
    fn fault_names_the_offending_op() {
        let s = GradcheckSettings::from_text("instances = 2\nfault = relu\nonly = relu, conv2d_1x1\n").unwrap();
        let mut buf = Vec::new();
        let reports = run_gradcheck(&s, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.contains("relu: FAIL"), "{text}");
        assert!(text.contains("conv2d_1x1: PASS"), "{text}");
        assert_eq!(reports.iter().filter(|r| !r.passed()).count(), 1);
    }

    #[test]
    fn unknown_check_is_an_error() {
        let s = GradcheckSettings {
            only: vec!["nope".into()],
            ..GradcheckSettings::default()
        };
        assert!(run_gradcheck(&s, &mut Vec::new()).is_err());
    }
}
