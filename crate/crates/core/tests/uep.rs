use proptest::prelude::*;

use twist_core::uep::{solve_uep, uniform_choice, UepInstance};
use twist_core::TwistError;

/// Lexicographically smallest optimum by enumerating every assignment.
fn exhaustive(inst: &UepInstance) -> Option<(Vec<usize>, f64)> {
    let g = inst.group_sizes.len();
    let p = inst.costs.len();
    let mut best: Option<(Vec<usize>, f64)> = None;
    for code in 0..p.pow(g as u32) {
        let mut c = code;
        let mut assign = vec![0; g];
        for slot in assign.iter_mut().rev() {
            *slot = c % p;
            c /= p;
        }
        if inst.cost(&assign) > inst.budget {
            continue;
        }
        let obj = inst.objective(&assign);
        let better = match &best {
            None => true,
            Some((_, b)) => obj < b - 1e-12 * b.abs().max(1.0),
        };
        if better {
            best = Some((assign, obj));
        }
    }
    best
}

fn instance() -> impl Strategy<Value = UepInstance> {
    (1usize..=4, 1usize..=4).prop_flat_map(|(g, p)| {
        (
            prop::collection::vec(1u64..6, g),
            prop::collection::vec(0.0f64..5.0, g),
            prop::collection::vec(1u64..5, p),
            prop::collection::vec(prop::collection::vec(0.0f64..1.0, p), g),
            0u64..80,
        )
            .prop_map(|(group_sizes, group_utilities, costs, error_rates, budget)| UepInstance {
                group_sizes,
                group_utilities,
                costs,
                error_rates,
                budget,
            })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn dp_matches_exhaustive(inst in instance()) {
        match (solve_uep(&inst), exhaustive(&inst)) {
            (Ok(sol), Some((assign, obj))) => {
                prop_assert!((sol.objective - obj).abs() <= 1e-9 * obj.abs().max(1.0));
                prop_assert_eq!(sol.policies, assign);
                prop_assert!(sol.cost <= inst.budget);
            }
            (Err(TwistError::Infeasible { .. }), None) => {}
            (a, b) => prop_assert!(false, "dp {:?} vs exhaustive {:?}", a, b),
        }
    }

    #[test]
    fn objective_non_increasing_in_budget(inst in instance(), extra1 in 0u64..20, extra2 in 0u64..20) {
        let b0 = inst.min_cost();
        let budgets = [b0, b0 + extra1, b0 + extra1 + extra2];
        let objs: Vec<f64> = budgets
            .iter()
            .map(|&b| solve_uep(&UepInstance { budget: b, ..inst.clone() }).unwrap().objective)
            .collect();
        prop_assert!(objs[1] <= objs[0] + 1e-12);
        prop_assert!(objs[2] <= objs[1] + 1e-12);
    }

    #[test]
    fn uniform_choice_is_largest_affordable(inst in instance()) {
        let total: u64 = inst.group_sizes.iter().sum();
        let expected = inst
            .costs
            .iter()
            .enumerate()
            .filter(|(_, &c)| c * total <= inst.budget)
            .map(|(_, &c)| c)
            .max();
        match (uniform_choice(&inst), expected) {
            (Ok(p), Some(c)) => prop_assert_eq!(inst.costs[p], c),
            (Err(_), None) => {}
            (a, b) => prop_assert!(false, "{:?} vs {:?}", a, b),
        }
    }
}

#[test]
fn budget_below_cheapest_is_infeasible() {
    let inst = UepInstance {
        group_sizes: vec![4, 4],
        group_utilities: vec![1.0, 1.0],
        costs: vec![6, 12],
        error_rates: vec![vec![0.2, 0.1], vec![0.2, 0.1]],
        budget: 47,
    };
    assert!(matches!(
        solve_uep(&inst),
        Err(TwistError::Infeasible { required: 48, budget: 47 })
    ));
}

#[test]
fn extra_budget_goes_to_the_high_utility_group() {
    let inst = UepInstance {
        group_sizes: vec![4, 4],
        group_utilities: vec![1.0, 3.0],
        costs: vec![6, 12],
        error_rates: vec![vec![0.2, 0.1], vec![0.2, 0.1]],
        budget: 72,
    };
    assert_eq!(solve_uep(&inst).unwrap().policies, vec![0, 1]);
}
