use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fold {
    pub train_groups: Vec<usize>,
    pub val_group: usize,
    pub test_group: usize,
}

/// Users dealt into disjoint groups, rotated so that each group serves once
/// as test and once as validation.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub groups: Vec<Vec<String>>,
    pub folds: Vec<Fold>,
}

impl FoldPlan {
    pub fn n_folds(&self) -> usize {
        self.folds.len()
    }

    pub fn train_users(&self, fold: usize) -> Vec<&str> {
        self.folds[fold]
            .train_groups
            .iter()
            .flat_map(|&g| self.groups[g].iter().map(String::as_str))
            .collect()
    }

    pub fn val_users(&self, fold: usize) -> Vec<&str> {
        self.groups[self.folds[fold].val_group].iter().map(String::as_str).collect()
    }

    pub fn test_users(&self, fold: usize) -> Vec<&str> {
        self.groups[self.folds[fold].test_group].iter().map(String::as_str).collect()
    }
}

/// Seeded shuffle, round-robin deal into `n_groups`, then fold `i` tests on
/// group `i`, validates on group `(i + 1) mod n_groups`, trains on the rest.
pub fn build_fold_plan(users: &[String], n_groups: usize, seed: u64) -> Result<FoldPlan> {
    if n_groups < 3 {
        return Err(Error::InvalidConfig(format!(
            "need at least 3 groups for train/val/test, got {n_groups}"
        )));
    }
    if users.len() < n_groups {
        return Err(Error::InsufficientUsers {
            have: users.len(),
            need: n_groups,
        });
    }
    let mut shuffled = users.to_vec();
    shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut groups = vec![Vec::new(); n_groups];
    for (i, u) in shuffled.into_iter().enumerate() {
        groups[i % n_groups].push(u);
    }
    let folds = (0..n_groups)
        .map(|i| {
            let val = (i + 1) % n_groups;
            Fold {
                train_groups: (0..n_groups).filter(|&g| g != i && g != val).collect(),
                val_group: val,
                test_group: i,
            }
        })
        .collect();
    Ok(FoldPlan { groups, folds })
}

/// Seeded uniform draw of `n_val` validation users; the rest train. Both
/// halves keep the input order.
pub fn split_capture_style(users: &[String], n_val: usize, seed: u64) -> Result<(Vec<String>, Vec<String>)> {
    if users.len() <= n_val {
        return Err(Error::InsufficientUsers {
            have: users.len(),
            need: n_val + 1,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picked = rand::seq::index::sample(&mut rng, users.len(), n_val);
    let mut is_val = vec![false; users.len()];
    picked.iter().for_each(|i| is_val[i] = true);
    let (val, train): (Vec<_>, Vec<_>) = users.iter().cloned().zip(is_val).partition(|(_, v)| *v);
    Ok((
        train.into_iter().map(|(u, _)| u).collect(),
        val.into_iter().map(|(u, _)| u).collect(),
    ))
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeSet;

    use proptest::prelude::*;

    use super::*;

    fn users(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("user{i:03}")).collect()
    }

    pub(crate) fn check_plan(plan: &FoldPlan, all: &[String]) {
        let n = plan.groups.len();
        let mut seen = BTreeSet::new();
        for g in &plan.groups {
            for u in g {
                assert!(seen.insert(u.clone()), "user {u} in two groups");
            }
        }
        assert_eq!(seen, all.iter().cloned().collect());
        let sizes: Vec<usize> = plan.groups.iter().map(Vec::len).collect();
        assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
        let mut tests: Vec<usize> = plan.folds.iter().map(|f| f.test_group).collect();
        let mut vals: Vec<usize> = plan.folds.iter().map(|f| f.val_group).collect();
        tests.sort();
        vals.sort();
        assert_eq!(tests, (0..n).collect::<Vec<_>>());
        assert_eq!(vals, (0..n).collect::<Vec<_>>());
        for (i, f) in plan.folds.iter().enumerate() {
            assert_ne!(f.val_group, f.test_group);
            assert!(!f.train_groups.contains(&f.val_group) && !f.train_groups.contains(&f.test_group));
            assert_eq!(f.train_groups.len(), n - 2);
            let train: BTreeSet<&str> = plan.train_users(i).into_iter().collect();
            let val: BTreeSet<&str> = plan.val_users(i).into_iter().collect();
            let test: BTreeSet<&str> = plan.test_users(i).into_iter().collect();
            assert!(train.is_disjoint(&val) && train.is_disjoint(&test) && val.is_disjoint(&test));
        }
    }

    #[test]
    fn ten_users_five_groups() {
        let all = users(10);
        let plan = build_fold_plan(&all, 5, 0).unwrap();
        assert!(plan.groups.iter().all(|g| g.len() == 2));
        check_plan(&plan, &all);
    }

    #[test]
    fn seven_users_round_robin_sizes() {
        let plan = build_fold_plan(&users(7), 5, 3).unwrap();
        let sizes: Vec<usize> = plan.groups.iter().map(Vec::len).collect();
        assert_eq!(sizes, [2, 2, 1, 1, 1]);
    }

    #[test]
    fn deterministic_and_errors() {
        let all = users(12);
        assert_eq!(build_fold_plan(&all, 5, 9).unwrap(), build_fold_plan(&all, 5, 9).unwrap());
        assert!(matches!(
            build_fold_plan(&users(4), 5, 0),
            Err(Error::InsufficientUsers { have: 4, need: 5 })
        ));
    }

    #[test]
    fn capture_split() {
        let all = users(150);
        let (train, val) = split_capture_style(&all, 16, 0).unwrap();
        assert_eq!((train.len(), val.len()), (134, 16));
        let t: BTreeSet<_> = train.iter().collect();
        assert!(val.iter().all(|u| !t.contains(u)));
        assert_eq!(split_capture_style(&all, 16, 0).unwrap(), (train, val));
        let (train, _) = split_capture_style(&users(17), 16, 1).unwrap();
        assert_eq!(train.len(), 1);
        assert!(split_capture_style(&users(16), 16, 1).is_err());
    }

    proptest! {
        #[test]
        fn plan_invariants_hold(n in 5usize..=30, seed in any::<u64>()) {
            let all = users(n);
            check_plan(&build_fold_plan(&all, 5, seed).unwrap(), &all);
        }
    }
}
