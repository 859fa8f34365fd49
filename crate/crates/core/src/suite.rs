//! A machine bundled with the obligations that apply to it.

use crate::kernel::Machine;
use crate::obligations::{
    check_invariants, check_refinement, check_variant, machine_variant, ObligationError,
    ObligationReport, RefinementLink,
};
use crate::substitution::{check_switch, SubstitutionConfig};

#[derive(Debug, Clone)]
pub struct Scenario {
    pub name: String,
    pub machine: Machine,
    pub substitution: Option<SubstitutionConfig>,
    pub refinement: Option<RefinementLink>,
}

impl Scenario {
    pub fn new(name: &str, machine: Machine) -> Self {
        Scenario {
            name: name.to_string(),
            machine,
            substitution: None,
            refinement: None,
        }
    }

    /// Runs every applicable obligation, in a fixed order: invariants, one
    /// variant check per system (then the machine variant), refinement, switch.
    pub fn check(&self, cap: usize) -> Result<Vec<ObligationReport>, ObligationError> {
        let m = &self.machine;
        let mut reports = vec![check_invariants(m, cap)?];
        for s in m.partition().systems() {
            reports.push(check_variant(m, s, cap)?);
        }
        if let Some(s) = machine_variant(m) {
            reports.push(check_variant(m, &s, cap)?);
        }
        if let Some(link) = &self.refinement {
            reports.push(check_refinement(link, cap)?);
        }
        if let Some(cfg) = &self.substitution {
            reports.push(check_switch(m, cfg, cap)?);
        }
        Ok(reports)
    }
}
