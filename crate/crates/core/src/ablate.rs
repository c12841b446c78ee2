//! Component ablations: the same training run with channel attention and/or
//! the real/imaginary branches switched off.

use std::fmt::Write as _;
use std::str::FromStr;

use crate::datasim::DataSource;
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::nn::count_params;
use crate::train::{TrainConfig, Trainer};

/// A component that can be switched off.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Switch {
    /// Channel attention; off means every bin is weighted by one.
    Mulca,
    /// Real and imaginary extractor branches; off means their sub-band
    /// features are zero.
    Phase,
}

impl FromStr for Switch {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "mulca" => Ok(Self::Mulca),
            "phase" => Ok(Self::Phase),
            other => Err(Error::InvalidConfig(format!("unknown ablation flag `{other}`"))),
        }
    }
}

/// Parses a comma-separated flag list such as `mulca,phase`.
pub fn parse_switches(s: &str) -> Result<Vec<Switch>> {
    let mut out: Vec<Switch> = Vec::new();
    for part in s.split(',').filter(|p| !p.trim().is_empty()) {
        let sw: Switch = part.parse()?;
        if !out.contains(&sw) {
            out.push(sw);
        }
    }
    if out.is_empty() {
        return Err(Error::InvalidConfig("no ablation flags given".into()));
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationRow {
    pub name: String,
    pub use_mulca: bool,
    pub use_phase_branches: bool,
    pub params: usize,
    pub valid_loss: f64,
    pub noisy_si_sdr: f64,
    pub enhanced_si_sdr: f64,
}

/// Model configurations of the grid, full model first. Switches not listed
/// in `switches` stay as they are in `base`.
pub fn grid(base: &ModelConfig, switches: &[Switch]) -> Vec<(String, ModelConfig)> {
    let mulca_opts: &[bool] = if switches.contains(&Switch::Mulca) {
        &[true, false]
    } else {
        &[true]
    };
    let phase_opts: &[bool] = if switches.contains(&Switch::Phase) {
        &[true, false]
    } else {
        &[true]
    };
    let mut rows = Vec::new();
    for &m in mulca_opts {
        for &p in phase_opts {
            let mut cfg = base.clone();
            cfg.use_mulca = base.use_mulca && m;
            cfg.use_phase_branches = base.use_phase_branches && p;
            let name = match (m, p) {
                (true, true) => "full",
                (true, false) => "- phase",
                (false, true) => "- mulca",
                (false, false) => "- both",
            };
            rows.push((name.to_string(), cfg));
        }
    }
    rows
}

/// Trains every grid entry for `epochs` epochs with identical data and
/// seeds and reports the final validation scores.
pub fn run_ablation(
    base: &ModelConfig,
    train: &TrainConfig,
    source: &DataSource,
    switches: &[Switch],
    epochs: usize,
) -> Result<Vec<AblationRow>> {
    grid(base, switches)
        .into_iter()
        .map(|(name, cfg)| {
            let mut trainer = Trainer::new(&cfg, train.clone(), source.clone())?;
            trainer.train(epochs)?;
            let (valid_loss, noisy_si_sdr, enhanced_si_sdr) = trainer.validate()?;
            Ok(AblationRow {
                name,
                use_mulca: cfg.use_mulca,
                use_phase_branches: cfg.use_phase_branches,
                params: count_params(&trainer.model),
                valid_loss,
                noisy_si_sdr,
                enhanced_si_sdr,
            })
        })
        .collect()
}

/// Fixed-width text table, one line per row after a header.
pub fn format_table(rows: &[AblationRow]) -> String {
    let mut s = String::new();
    writeln!(
        s,
        "{:<10} {:>6} {:>6} {:>10} {:>11} {:>12} {:>15} {:>11}",
        "model", "mulca", "phase", "params", "valid_loss", "si_sdr_noisy", "si_sdr_enhanced", "si_sdr_gain"
    )
    .unwrap();
    for r in rows {
        writeln!(
            s,
            "{:<10} {:>6} {:>6} {:>10} {:>11.5} {:>12.3} {:>15.3} {:>11.3}",
            r.name,
            if r.use_mulca { "on" } else { "off" },
            if r.use_phase_branches { "on" } else { "off" },
            r.params,
            r.valid_loss,
            r.noisy_si_sdr,
            r.enhanced_si_sdr,
            r.enhanced_si_sdr - r.noisy_si_sdr
        )
        .unwrap();
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_parse() {
        assert_eq!(parse_switches("phase, mulca,phase").unwrap(), vec![Switch::Phase, Switch::Mulca]);
        assert!(parse_switches("").is_err());
        assert!(parse_switches("mulca,stoi").is_err());
    }

    #[test]
    fn grid_has_four_rows_with_both_switches() {
        let rows = grid(&ModelConfig::default(), &[Switch::Mulca, Switch::Phase]);
        let flags: Vec<_> = rows
            .iter()
            .map(|(n, c)| (n.as_str(), c.use_mulca, c.use_phase_branches))
            .collect();
        assert_eq!(
            flags,
            vec![
                ("full", true, true),
                ("- phase", true, false),
                ("- mulca", false, true),
                ("- both", false, false)
            ]
        );
        assert_eq!(grid(&ModelConfig::default(), &[Switch::Phase]).len(), 2);
    }
}
