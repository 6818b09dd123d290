//! Mode-conditioned unequal error protection: pick one policy per utility
//! group to minimize the utility-weighted token error rate under a budget.

use serde::{Deserialize, Serialize};

use crate::error::{Result, TwistError};
use crate::phy::ErrorTable;
use crate::types::{GroupMap, ProtectionPolicy, SyncMode, TokenAlphabet, BITS_PER_SYMBOL};

/// One protection-design problem. Costs and budget share an integer unit
/// (the pipeline uses coded bits).
#[derive(Debug, Clone, PartialEq)]
pub struct UepInstance {
    pub group_sizes: Vec<u64>,
    pub group_utilities: Vec<f64>,
    /// Cost per token of each policy.
    pub costs: Vec<u64>,
    /// `error_rates[g][p]`.
    pub error_rates: Vec<Vec<f64>>,
    pub budget: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UepSolution {
    /// Policy index per group.
    pub policies: Vec<usize>,
    pub objective: f64,
    pub cost: u64,
}

/// Objective values closer than this are treated as ties.
const TIE_EPS: f64 = 1e-12;

impl UepInstance {
    pub fn validate(&self) -> Result<()> {
        let g = self.group_sizes.len();
        if g == 0 || self.costs.is_empty() {
            return Err(TwistError::InvalidParameter(
                "UEP instance needs at least one group and one policy".into(),
            ));
        }
        if self.group_utilities.len() != g || self.error_rates.len() != g {
            return Err(TwistError::DimensionMismatch(
                "group sizes, utilities and error tables differ in length".into(),
            ));
        }
        if self.costs.contains(&0) {
            return Err(TwistError::InvalidParameter("policy costs must be positive".into()));
        }
        for row in &self.error_rates {
            if row.len() != self.costs.len() {
                return Err(TwistError::DimensionMismatch(
                    "error table row does not cover every policy".into(),
                ));
            }
            if row.iter().any(|e| !(0.0..=1.0).contains(e)) {
                return Err(TwistError::InvalidParameter("error rates must lie in [0, 1]".into()));
            }
        }
        Ok(())
    }

    pub fn min_cost(&self) -> u64 {
        let cheapest = *self.costs.iter().min().expect("validated");
        self.group_sizes.iter().map(|&n| n * cheapest).sum()
    }

    pub fn objective(&self, policies: &[usize]) -> f64 {
        policies
            .iter()
            .enumerate()
            .map(|(g, &p)| self.group_utilities[g] * self.error_rates[g][p])
            .sum()
    }

    pub fn cost(&self, policies: &[usize]) -> u64 {
        policies
            .iter()
            .enumerate()
            .map(|(g, &p)| self.group_sizes[g] * self.costs[p])
            .sum()
    }
}

/// Exact optimum by dynamic programming over (group, remaining budget).
/// Among optimal assignments the lexicographically smallest policy-index
/// vector is returned.
pub fn solve_uep(inst: &UepInstance) -> Result<UepSolution> {
    inst.validate()?;
    let required = inst.min_cost();
    if required > inst.budget {
        return Err(TwistError::Infeasible {
            required,
            budget: inst.budget,
        });
    }
    let groups = inst.group_sizes.len();
    let max_cost = *inst.costs.iter().max().expect("validated");
    let cap = inst
        .budget
        .min(inst.group_sizes.iter().map(|&n| n * max_cost).sum()) as usize;

    // best[g][b]: minimal objective of groups g.. with b budget left.
    let mut best = vec![vec![f64::INFINITY; cap + 1]; groups + 1];
    best[groups].fill(0.0);
    for g in (0..groups).rev() {
        for b in 0..=cap {
            let mut v = f64::INFINITY;
            for (p, &c) in inst.costs.iter().enumerate() {
                let spend = (inst.group_sizes[g] * c) as usize;
                if spend <= b {
                    let rest = best[g + 1][b - spend];
                    v = v.min(inst.group_utilities[g] * inst.error_rates[g][p] + rest);
                }
            }
            best[g][b] = v;
        }
    }

    let mut policies = Vec::with_capacity(groups);
    let mut left = cap;
    for g in 0..groups {
        let target = best[g][left];
        let (p, spend) = inst
            .costs
            .iter()
            .enumerate()
            .filter_map(|(p, &c)| {
                let spend = (inst.group_sizes[g] * c) as usize;
                (spend <= left).then_some((p, spend))
            })
            .find(|&(p, spend)| {
                let v = inst.group_utilities[g] * inst.error_rates[g][p] + best[g + 1][left - spend];
                v <= target + TIE_EPS * target.abs().max(1.0)
            })
            .expect("an optimal choice exists at every stage");
        policies.push(p);
        left -= spend;
    }
    Ok(UepSolution {
        objective: inst.objective(&policies),
        cost: inst.cost(&policies),
        policies,
    })
}

/// Protection part of one mode's profile.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeProtection {
    pub mode: SyncMode,
    pub budget: u64,
    pub protection: Vec<ProtectionPolicy>,
    pub objective: f64,
}

fn instance_for(
    groups: &GroupMap,
    table: &ErrorTable,
    alphabet: &TokenAlphabet,
    budget: u64,
    design_snr_db: f64,
) -> Result<UepInstance> {
    let s = table.snr_index(design_snr_db).ok_or_else(|| {
        TwistError::Config(format!(
            "error table does not cover the design SNR {design_snr_db} dB"
        ))
    })?;
    if table.rates.len() != groups.groups {
        return Err(TwistError::DimensionMismatch(
            "error table and group map disagree on G".into(),
        ));
    }
    Ok(UepInstance {
        group_sizes: groups.sizes.iter().map(|&n| n as u64).collect(),
        group_utilities: groups.utilities.clone(),
        costs: table.policies.iter().map(|p| p.bit_cost(alphabet)).collect(),
        error_rates: table
            .rates
            .iter()
            .map(|per_policy| per_policy.iter().map(|r| r[s]).collect())
            .collect(),
        budget: budget * u64::from(BITS_PER_SYMBOL),
    })
}

/// Solves the protection design once per mode at the design SNR.
pub fn build_mode_profiles(
    groups: &GroupMap,
    table: &ErrorTable,
    alphabet: &TokenAlphabet,
    nominal_budget: u64,
    design_snr_db: f64,
) -> Result<Vec<ModeProtection>> {
    SyncMode::ALL
        .iter()
        .map(|&mode| {
            let budget = mode.budget(nominal_budget);
            let inst = instance_for(groups, table, alphabet, budget, design_snr_db)?;
            let sol = solve_uep(&inst)?;
            Ok(ModeProtection {
                mode,
                budget,
                protection: sol.policies.iter().map(|&p| table.policies[p]).collect(),
                objective: sol.objective,
            })
        })
        .collect()
}

/// Uniform-protection baseline: the strongest single policy that fits every
/// group within the mode budget.
pub fn uniform_mode_profiles(
    groups: &GroupMap,
    table: &ErrorTable,
    alphabet: &TokenAlphabet,
    nominal_budget: u64,
    design_snr_db: f64,
) -> Result<Vec<ModeProtection>> {
    SyncMode::ALL
        .iter()
        .map(|&mode| {
            let budget = mode.budget(nominal_budget);
            let inst = instance_for(groups, table, alphabet, budget, design_snr_db)?;
            inst.validate()?;
            let p = uniform_choice(&inst)?;
            let policies = vec![p; groups.groups];
            Ok(ModeProtection {
                mode,
                budget,
                protection: vec![table.policies[p]; groups.groups],
                objective: inst.objective(&policies),
            })
        })
        .collect()
}

/// Index of the most expensive policy whose uniform assignment is affordable.
pub fn uniform_choice(inst: &UepInstance) -> Result<usize> {
    let total: u64 = inst.group_sizes.iter().sum();
    inst.costs
        .iter()
        .enumerate()
        .filter(|(_, &c)| total * c <= inst.budget)
        .max_by_key(|(_, &c)| c)
        .map(|(p, _)| p)
        .ok_or(TwistError::Infeasible {
            required: inst.min_cost(),
            budget: inst.budget,
        })
}
