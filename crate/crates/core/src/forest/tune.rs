use super::{fit_forest, MaxFeatures, RfHyperparams};
use crate::error::{MerfError, Result};
use crate::numerics::{Matrix, RngStream};

/// The grid searched for the plain random-forest baseline: feature fraction,
/// depth, and split/leaf sizes.
pub fn default_grid() -> Vec<RfHyperparams> {
    let mut grid = Vec::new();
    for max_features in [MaxFeatures::OneThird, MaxFeatures::All] {
        for max_depth in [None, Some(6)] {
            for (min_samples_split, min_samples_leaf) in [(2, 1), (5, 2)] {
                grid.push(RfHyperparams {
                    n_trees: 300,
                    max_depth,
                    max_features,
                    min_samples_split,
                    min_samples_leaf,
                    bootstrap: true,
                });
            }
        }
    }
    grid
}

/// Mean validation MAE of each grid entry under k-fold cross-validation.
///
/// Fold membership comes from the `folds` child stream, and fold `k` is
/// always fitted with the `fold-{k}` stream, so identical grid entries get
/// identical scores.
pub fn cross_validate(
    x: &Matrix,
    y: &[f64],
    grid: &[RfHyperparams],
    folds: usize,
    rng: &RngStream,
) -> Result<Vec<f64>> {
    let n = x.rows();
    if folds < 2 {
        return Err(MerfError::InvalidArgument(format!("need at least 2 folds, got {folds}")));
    }
    if n < folds {
        return Err(MerfError::InvalidArgument(format!("{n} rows cannot fill {folds} folds")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    rng.child("folds").shuffle(&mut order);
    let mut assignment = vec![0; n];
    for (pos, &i) in order.iter().enumerate() {
        assignment[i] = pos % folds;
    }
    let splits: Vec<(Vec<usize>, Vec<usize>)> = (0..folds)
        .map(|k| (0..n).partition(|&i| assignment[i] != k))
        .collect();

    grid.iter()
        .map(|hp| {
            let mut total = 0.0;
            for (k, (train, valid)) in splits.iter().enumerate() {
                let ty: Vec<f64> = train.iter().map(|&i| y[i]).collect();
                let forest = fit_forest(&x.select_rows(train), &ty, hp, &rng.child(format!("fold-{k}")))?;
                let pred = forest.predict(&x.select_rows(valid))?;
                let mae = pred.iter().zip(valid).map(|(p, &i)| (p - y[i]).abs()).sum::<f64>() / valid.len() as f64;
                total += mae;
            }
            Ok(total / folds as f64)
        })
        .collect()
}

/// Grid entry with the lowest cross-validated MAE; ties go to the earliest.
pub fn tune_forest(
    x: &Matrix,
    y: &[f64],
    grid: &[RfHyperparams],
    folds: usize,
    rng: &RngStream,
) -> Result<RfHyperparams> {
    if grid.is_empty() {
        return Err(MerfError::InvalidArgument("empty hyperparameter grid".into()));
    }
    let scores = cross_validate(x, y, grid, folds, rng)?;
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate() {
        if s < scores[best] {
            best = i;
        }
    }
    log::debug!("grid search scores {scores:?}, picked entry {best}");
    Ok(grid[best].clone())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn hp(depth: usize) -> RfHyperparams {
        RfHyperparams {
            n_trees: 20,
            max_depth: Some(depth),
            max_features: MaxFeatures::All,
            min_samples_split: 2,
            min_samples_leaf: 1,
            bootstrap: true,
        }
    }

    /// y = 10·1[x0 > 0] + 10·1[x1 > 0]: a stump can capture one step only.
    fn two_step_data() -> (Matrix, Vec<f64>) {
        let mut r = RngStream::new(42, "steps");
        let rows: Vec<[f64; 2]> = (0..90).map(|_| [r.standard_normal(), r.standard_normal()]).collect();
        let y = rows
            .iter()
            .map(|v| 10.0 * f64::from(u8::from(v[0] > 0.0)) + 10.0 * f64::from(u8::from(v[1] > 0.0)))
            .collect();
        (Matrix::from_rows(&rows).unwrap(), y)
    }

    #[test]
    fn single_entry_grid() {
        let (x, y) = two_step_data();
        let chosen = tune_forest(&x, &y, &[hp(2)], 3, &RngStream::new(0, "cv")).unwrap();
        assert_eq!(chosen, hp(2));
    }

    #[test]
    fn duplicate_entries_tie_to_first() {
        let (x, y) = two_step_data();
        let a = hp(3);
        let b = RfHyperparams { n_trees: 21, ..hp(3) };
        let scores = cross_validate(&x, &y, &[a.clone(), a.clone()], 3, &RngStream::new(0, "cv")).unwrap();
        assert_eq!(scores[0], scores[1]);
        let chosen = tune_forest(&x, &y, &[b.clone(), b.clone()], 3, &RngStream::new(0, "cv")).unwrap();
        assert_eq!(chosen, b);
    }

    #[test]
    fn depth_three_beats_stump_on_two_steps() {
        let (x, y) = two_step_data();
        let scores = cross_validate(&x, &y, &[hp(1), hp(3)], 3, &RngStream::new(1, "cv")).unwrap();
        // a stump leaves one 10-point step unexplained: CV MAE near 5
        assert!(scores[0] > 3.0, "{scores:?}");
        assert!(scores[1] < scores[0] / 2.0, "{scores:?}");
        let chosen = tune_forest(&x, &y, &[hp(1), hp(3)], 3, &RngStream::new(1, "cv")).unwrap();
        assert_eq!(chosen.max_depth, Some(3));
    }

    #[test]
    fn rejects_bad_arguments() {
        let (x, y) = two_step_data();
        assert!(tune_forest(&x, &y, &[], 3, &RngStream::new(0, "cv")).is_err());
        assert!(tune_forest(&x, &y, &[hp(1)], 1, &RngStream::new(0, "cv")).is_err());
    }

    #[test]
    fn default_grid_is_valid() {
        let grid = default_grid();
        assert_eq!(grid.len(), 8);
        assert!(grid.iter().all(|g| g.validate().is_ok()));
    }
}
