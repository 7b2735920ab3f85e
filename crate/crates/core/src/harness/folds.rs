use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::phantom::CeCtSequence;

/// Fraction of each training fold held out for model selection.
pub const VALIDATION_FRACTION: f64 = 0.2;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldSplit {
    pub fold: usize,
    pub train: Vec<String>,
    pub validation: Vec<String>,
    pub test: Vec<String>,
}

impl FoldSplit {
    /// Every patient not in the test fold.
    pub fn training_fold(&self) -> impl Iterator<Item = &String> {
        self.train.iter().chain(&self.validation)
    }
}

/// Round-robin assignment of events first, then censored patients, after a seeded shuffle of each.
fn stratified_assign(events: bool, ids: &[(String, bool)], k: usize, rng: &mut ChaCha8Rng, next: &mut usize) -> Vec<(String, usize)> {
    let mut group: Vec<&String> = ids.iter().filter(|(_, e)| *e == events).map(|(id, _)| id).collect();
    group.shuffle(rng);
    group
        .into_iter()
        .map(|id| {
            let f = *next % k;
            *next += 1;
            (id.clone(), f)
        })
        .collect()
}

/// `k` event-stratified outer folds; each training fold sets aside a
/// stratified validation subset.
pub fn make_folds(cohort: &[CeCtSequence], k: usize, seed: u64) -> Result<Vec<FoldSplit>> {
    if k < 2 {
        return Err(Error::invalid(format!("make_folds: k must be at least 2, got {k}")));
    }
    if cohort.len() < 2 * k {
        return Err(Error::invalid(format!(
            "make_folds: {} patients cannot fill {k} folds of at least 2",
            cohort.len()
        )));
    }
    let events = cohort.iter().filter(|s| s.label.event).count();
    if events < k {
        return Err(Error::invalid(format!(
            "make_folds: {events} events cannot be stratified over {k} folds"
        )));
    }
    let ids: Vec<(String, bool)> = cohort.iter().map(|s| (s.patient_id.clone(), s.label.event)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut next = 0;
    let mut assigned = stratified_assign(true, &ids, k, &mut rng, &mut next);
    assigned.extend(stratified_assign(false, &ids, k, &mut rng, &mut next));

    let order = |id: &String| ids.iter().position(|(x, _)| x == id).expect("known id");
    (0..k)
        .map(|f| {
            let mut test: Vec<String> = assigned.iter().filter(|(_, a)| *a == f).map(|(id, _)| id.clone()).collect();
            test.sort_by_key(|id| order(id));
            let rest: Vec<(String, bool)> = ids.iter().filter(|(id, _)| !test.contains(id)).cloned().collect();
            let n_val = ((rest.len() as f64) * VALIDATION_FRACTION).round() as usize;
            let mut val_rng = ChaCha8Rng::seed_from_u64(seed);
            val_rng.set_stream(f as u64 + 1);
            let mut counter = 0;
            let mut inner = stratified_assign(true, &rest, rest.len(), &mut val_rng, &mut counter);
            inner.extend(stratified_assign(false, &rest, rest.len(), &mut val_rng, &mut counter));
            // Every `stride`-th patient of the stratified order goes to validation.
            let stride = if n_val == 0 { usize::MAX } else { rest.len() / n_val };
            let mut train = Vec::new();
            let mut validation = Vec::new();
            for (pos, (id, _)) in inner.into_iter().enumerate() {
                if n_val > 0 && pos % stride == 0 && validation.len() < n_val {
                    validation.push(id);
                } else {
                    train.push(id);
                }
            }
            train.sort_by_key(|id| order(id));
            validation.sort_by_key(|id| order(id));
            Ok(FoldSplit {
                fold: f,
                train,
                validation,
                test,
            })
        })
        .collect()
}
