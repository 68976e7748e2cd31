//! Partition roles for the poisoning and unlearning protocol.
//!
//! Every example id gets exactly one role. The clean-counterpart view `D_uc`
//! is not a role of its own: it is the pre-perturbation copy of the
//! protected rows and shares their ids.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::dataset::Dataset;
use crate::error::{Error, Result};
use crate::numcore::RngStream;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    /// Training row that receives an unlearnability perturbation (`D_u`).
    Protected,
    /// Clean training row (`D_c`).
    Clean,
    /// Held-out row (`D_t`).
    Test,
    /// Clean training row of an observation class (`D_tr`).
    Observation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "level", rename_all = "snake_case")]
pub enum ForgetSelector {
    /// Forget every training row of these classes.
    ClassLevel { classes: Vec<usize> },
    /// Forget the protected subset.
    SubsetLevel { ratio: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub roles: BTreeMap<u64, Role>,
    pub forget: ForgetSelector,
    /// Protected fraction inside each protected class.
    pub ratio: f64,
}

/// Named views produced by [`apply_split`]. Rows are in ascending id order.
#[derive(Debug, Clone)]
pub struct SplitViews {
    /// Protected rows in perturbed form.
    pub u: Dataset,
    /// Clean originals of `u`, id-aligned.
    pub uc: Dataset,
    pub c: Dataset,
    pub f: Dataset,
    pub r: Dataset,
    pub t: Dataset,
    pub tr: Dataset,
    /// Full training set `u + c + tr`.
    pub train: Dataset,
}

impl SplitViews {
    /// Test rows of the forgotten classes (`D_ut` / `D_ct`); empty for subset-level plans.
    pub fn forget_test(&self, plan: &SplitPlan) -> Dataset {
        match &plan.forget {
            ForgetSelector::ClassLevel { classes } => self.t.filter_labels(|y| classes.contains(&y)),
            ForgetSelector::SubsetLevel { .. } => self.t.empty_like(),
        }
    }

    /// Clean versions of the forget rows: protected rows are swapped for
    /// their `D_uc` originals.
    pub fn forget_clean(&self) -> Result<Dataset> {
        let uc_index = self.uc.index_by_id();
        let mut values = Vec::with_capacity(self.f.len() * self.f.dim());
        for (i, id) in self.f.ids().iter().enumerate() {
            match uc_index.get(id) {
                Some(&j) => values.extend_from_slice(self.uc.row(j)),
                None => values.extend_from_slice(self.f.row(i)),
            }
        }
        self.f
            .with_features(crate::numcore::Tensor::matrix(self.f.len(), self.f.dim(), values)?)
    }
}

fn per_class_test_split(ds: &Dataset, test_per_class: usize, rng: &mut RngStream) -> Result<Vec<Vec<usize>>> {
    let k = ds.num_classes();
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); k];
    for i in 0..ds.len() {
        by_class[ds.labels()[i]].push(i);
    }
    for (y, rows) in by_class.iter_mut().enumerate() {
        if rows.len() < test_per_class {
            return Err(Error::Split(format!(
                "class {y} has {} rows, fewer than {test_per_class} test rows",
                rows.len()
            )));
        }
        let perm = rng.permutation(rows.len());
        *rows = perm.into_iter().map(|p| rows[p]).collect();
    }
    Ok(by_class)
}

impl SplitPlan {
    /// Every class: `test_per_class` rows to test, then `round(ratio * rest)`
    /// protected and the remainder clean.
    pub fn subset_level(ds: &Dataset, test_per_class: usize, ratio: f64, rng: &RngStream) -> Result<Self> {
        if !(0.0..=1.0).contains(&ratio) {
            return Err(Error::Config(format!("protected ratio {ratio} outside [0, 1]")));
        }
        let mut r = rng.child("split-subset");
        let by_class = per_class_test_split(ds, test_per_class, &mut r)?;
        let mut roles = BTreeMap::new();
        for rows in by_class {
            let train = &rows[test_per_class..];
            let n_prot = (ratio * train.len() as f64).round() as usize;
            for &i in &rows[..test_per_class] {
                roles.insert(ds.ids()[i], Role::Test);
            }
            for (j, &i) in train.iter().enumerate() {
                let role = if j < n_prot { Role::Protected } else { Role::Clean };
                roles.insert(ds.ids()[i], role);
            }
        }
        Ok(Self {
            roles,
            forget: ForgetSelector::SubsetLevel { ratio },
            ratio,
        })
    }

    /// Whole classes are protected; `forget` names the classes to unlearn.
    pub fn class_level(
        ds: &Dataset,
        test_per_class: usize,
        protected: &[usize],
        observation: &[usize],
        forget: &[usize],
        rng: &RngStream,
    ) -> Result<Self> {
        let k = ds.num_classes();
        if let Some(bad) = protected.iter().chain(observation).chain(forget).find(|&&c| c >= k) {
            return Err(Error::Config(format!("class {bad} outside [0, {k})")));
        }
        if protected.iter().any(|c| observation.contains(c)) {
            return Err(Error::Config("a class cannot be both protected and observation".into()));
        }
        let mut r = rng.child("split-class");
        let by_class = per_class_test_split(ds, test_per_class, &mut r)?;
        let mut roles = BTreeMap::new();
        for (y, rows) in by_class.into_iter().enumerate() {
            for (j, &i) in rows.iter().enumerate() {
                let role = if j < test_per_class {
                    Role::Test
                } else if protected.contains(&y) {
                    Role::Protected
                } else if observation.contains(&y) {
                    Role::Observation
                } else {
                    Role::Clean
                };
                roles.insert(ds.ids()[i], role);
            }
        }
        Ok(Self {
            roles,
            forget: ForgetSelector::ClassLevel {
                classes: forget.to_vec(),
            },
            ratio: 1.0,
        })
    }

    pub fn ids_with(&self, role: Role) -> Vec<u64> {
        self.roles
            .iter()
            .filter(|(_, r)| **r == role)
            .map(|(id, _)| *id)
            .collect()
    }
}

/// Builds the role views. `perturbed` must hold a row for every protected id;
/// its other rows are ignored.
pub fn apply_split(clean: &Dataset, perturbed: &Dataset, plan: &SplitPlan) -> Result<SplitViews> {
    let index = clean.index_by_id();
    if let Some(id) = plan.roles.keys().find(|id| !index.contains_key(id)) {
        return Err(Error::Split(format!("plan references id {id} missing from the dataset")));
    }
    if let Some(id) = clean.ids().iter().find(|id| !plan.roles.contains_key(id)) {
        return Err(Error::Split(format!("id {id} has no role in the plan")));
    }
    let u_ids = plan.ids_with(Role::Protected);
    let uc = clean.select_ids(&u_ids)?;
    let u = perturbed
        .select_ids(&u_ids)
        .map_err(|_| Error::Split("perturbed dataset does not cover every protected id".into()))?;
    if u.labels() != uc.labels() {
        return Err(Error::Split("perturbed rows changed labels".into()));
    }
    let c = clean.select_ids(&plan.ids_with(Role::Clean))?;
    let t = clean.select_ids(&plan.ids_with(Role::Test))?;
    let tr = clean.select_ids(&plan.ids_with(Role::Observation))?;
    let train = Dataset::concat(&[&u, &c, &tr])?.sorted_by_id();
    let forget_ids: BTreeSet<u64> = match &plan.forget {
        ForgetSelector::SubsetLevel { .. } => u.ids().iter().copied().collect(),
        ForgetSelector::ClassLevel { classes } => train
            .ids()
            .iter()
            .zip(train.labels())
            .filter(|(_, y)| classes.contains(y))
            .map(|(id, _)| *id)
            .collect(),
    };
    let f_idx: Vec<usize> = (0..train.len()).filter(|&i| forget_ids.contains(&train.ids()[i])).collect();
    let r_idx: Vec<usize> = (0..train.len()).filter(|&i| !forget_ids.contains(&train.ids()[i])).collect();
    Ok(SplitViews {
        f: train.select(&f_idx),
        r: train.select(&r_idx),
        u,
        uc,
        c,
        t,
        tr,
        train,
    })
}
