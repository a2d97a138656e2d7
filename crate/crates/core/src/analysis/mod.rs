//! Distance-based downstream analysis of per-graph embeddings and the
//! simulation runner.

mod experiment;

pub use experiment::{
    run_experiment, ClassificationConfig, CommunityDetectionConfig, EigenvalueBiasConfig,
    ExperimentConfig, ModelErrorConfig, Record, Report, SubspaceErrorConfig, SummaryRow,
    TestingPowerConfig, SCENARIOS,
};

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::linalg::normalize_column_signs;
use crate::spectral::symmetric_eigen_desc;

/// Symmetric, non-negative matrix of pairwise distances with zero diagonal.
#[derive(Clone, Debug, PartialEq)]
pub struct DistanceMatrix(DMatrix<f64>);

impl DistanceMatrix {
    pub fn new(d: DMatrix<f64>) -> Result<Self> {
        let m = d.nrows();
        if d.ncols() != m {
            return Err(Error::DimensionMismatch(format!(
                "distance matrix must be square, got {}x{}",
                m,
                d.ncols()
            )));
        }
        for i in 0..m {
            if d[(i, i)] != 0.0 {
                return Err(Error::InvalidArgument(format!(
                    "distance matrix has non-zero diagonal at {i}"
                )));
            }
            for j in 0..m {
                let x = d[(i, j)];
                if !x.is_finite() || x < 0.0 {
                    return Err(Error::InvalidArgument(format!(
                        "distance ({i}, {j}) = {x} is not a finite non-negative number"
                    )));
                }
                if x != d[(j, i)] {
                    return Err(Error::Asymmetric(i, j));
                }
            }
        }
        Ok(DistanceMatrix(d))
    }

    pub fn m(&self) -> usize {
        self.0.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.0[(i, j)]
    }
}

/// Pairwise Frobenius distances `‖X_i − X_j‖_F` between equally shaped
/// matrices (score matrices, omnibus positions, ...).
pub fn distance_matrix(items: &[DMatrix<f64>]) -> Result<DistanceMatrix> {
    let m = items.len();
    if let Some(first) = items.first() {
        if let Some(bad) = items.iter().position(|x| x.shape() != first.shape()) {
            return Err(Error::DimensionMismatch(format!(
                "item {bad} has shape {:?}, expected {:?}",
                items[bad].shape(),
                first.shape()
            )));
        }
    }
    let mut d = DMatrix::zeros(m, m);
    for i in 0..m {
        for j in i + 1..m {
            let x = (&items[i] - &items[j]).norm();
            d[(i, j)] = x;
            d[(j, i)] = x;
        }
    }
    Ok(DistanceMatrix(d))
}

/// Classical multidimensional scaling into `k` dimensions.
pub fn cmds(d: &DistanceMatrix, k: usize) -> Result<DMatrix<f64>> {
    let m = d.m();
    if k > m {
        return Err(Error::InvalidArgument(format!(
            "cannot embed {m} points into {k} dimensions"
        )));
    }
    if k == 0 || m == 0 {
        return Ok(DMatrix::zeros(m, k));
    }
    let sq = d.matrix().map(|x| x * x);
    let row_means: Vec<f64> = (0..m).map(|i| sq.row(i).mean()).collect();
    let grand = sq.mean();
    let b = DMatrix::from_fn(m, m, |i, j| {
        -0.5 * (sq[(i, j)] - row_means[i] - row_means[j] + grand)
    });
    let (values, vectors) = symmetric_eigen_desc(&b)?;
    let mut coords = vectors.columns(0, k).into_owned();
    normalize_column_signs(&mut coords);
    for j in 0..k {
        let s = values[j].max(0.0).sqrt();
        coords.column_mut(j).scale_mut(s);
    }
    Ok(coords)
}

/// Labels predicted for `test` by a `k`-nearest-neighbour vote over `train`.
///
/// Neighbours are ranked by distance, then index. A vote tie is won by the
/// tied label whose best neighbour ranks first.
pub fn knn_predict<T: Clone + PartialEq>(
    d: &DistanceMatrix,
    labels: &[T],
    train: &[usize],
    test: &[usize],
    k_neighbors: usize,
) -> Result<Vec<T>> {
    if labels.len() != d.m() {
        return Err(Error::DimensionMismatch(format!(
            "{} labels for a {}x{} distance matrix",
            labels.len(),
            d.m(),
            d.m()
        )));
    }
    if train.is_empty() {
        return Err(Error::InvalidArgument("the training set is empty".into()));
    }
    if k_neighbors == 0 {
        return Err(Error::InvalidArgument("k_neighbors must be positive".into()));
    }
    if let Some(&bad) = train.iter().chain(test).find(|&&i| i >= d.m()) {
        return Err(Error::InvalidArgument(format!("index {bad} out of range")));
    }
    let k = k_neighbors.min(train.len());
    Ok(test
        .iter()
        .map(|&u| {
            let mut order = train.to_vec();
            order.sort_by(|&a, &b| d.get(u, a).total_cmp(&d.get(u, b)).then(a.cmp(&b)));
            // (label, votes) in order of first appearance among the neighbours
            let mut votes: Vec<(&T, usize)> = Vec::new();
            for &v in &order[..k] {
                match votes.iter_mut().find(|(l, _)| **l == labels[v]) {
                    Some(entry) => entry.1 += 1,
                    None => votes.push((&labels[v], 1)),
                }
            }
            let best = votes.iter().map(|(_, c)| *c).max().unwrap_or(0);
            votes
                .into_iter()
                .find(|(_, c)| *c == best)
                .map(|(l, _)| l.clone())
                .expect("at least one neighbour")
        })
        .collect())
}

#[derive(Clone, Debug, PartialEq)]
pub struct FoldReport {
    pub test: Vec<usize>,
    pub correct: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CvReport<T> {
    pub accuracy: f64,
    pub folds: Vec<FoldReport>,
    /// Prediction for every item, made when its fold was held out.
    pub predictions: Vec<T>,
}

/// Stratified `folds`-fold cross-validated `k`-NN classification.
///
/// Items of each label are shuffled and dealt to folds in turn, continuing
/// where the previous label stopped, so fold sizes differ by at most one.
pub fn knn_cv_classify<T: Clone + PartialEq, R: Rng + ?Sized>(
    d: &DistanceMatrix,
    labels: &[T],
    folds: usize,
    k_neighbors: usize,
    rng: &mut R,
) -> Result<CvReport<T>> {
    let m = d.m();
    if labels.len() != m {
        return Err(Error::DimensionMismatch(format!(
            "{} labels for {m} items",
            labels.len()
        )));
    }
    if folds < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 folds, got {folds}")));
    }
    if folds > m {
        return Err(Error::InvalidArgument(format!(
            "{folds} folds for only {m} items would leave a fold empty"
        )));
    }
    let mut classes: Vec<&T> = Vec::new();
    for l in labels {
        if !classes.contains(&l) {
            classes.push(l);
        }
    }
    let mut fold_of = vec![0usize; m];
    let mut next = 0usize;
    for class in classes {
        let mut members: Vec<usize> = (0..m).filter(|&i| labels[i] == *class).collect();
        members.shuffle(rng);
        for i in members {
            fold_of[i] = next % folds;
            next += 1;
        }
    }
    let mut predictions: Vec<Option<T>> = vec![None; m];
    let mut reports = Vec::with_capacity(folds);
    let mut total_correct = 0;
    for f in 0..folds {
        let test: Vec<usize> = (0..m).filter(|&i| fold_of[i] == f).collect();
        let train: Vec<usize> = (0..m).filter(|&i| fold_of[i] != f).collect();
        if train.is_empty() {
            return Err(Error::InvalidArgument(format!("fold {f} holds every item")));
        }
        let predicted = knn_predict(d, labels, &train, &test, k_neighbors)?;
        let mut correct = 0;
        for (&i, p) in test.iter().zip(predicted) {
            if p == labels[i] {
                correct += 1;
            }
            predictions[i] = Some(p);
        }
        total_correct += correct;
        reports.push(FoldReport { test, correct });
    }
    Ok(CvReport {
        accuracy: total_correct as f64 / m as f64,
        folds: reports,
        predictions: predictions
            .into_iter()
            .map(|p| p.expect("every item is in one fold"))
            .collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngStream;
    use proptest::prelude::*;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn random_orthogonal(d: usize, rng: &mut impl Rng) -> DMatrix<f64> {
        let g = DMatrix::from_fn(d, d, |_, _| rng.sample::<f64, _>(StandardNormal));
        g.qr().q()
    }

    #[test]
    fn distance_matrix_examples() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 2.0]);
        let same = distance_matrix(&[a.clone(), a.clone(), a.clone()]).unwrap();
        assert_eq!(same.matrix(), &DMatrix::zeros(3, 3));

        let mut b = a.clone();
        b[(1, 1)] += 2.0;
        let d = distance_matrix(&[a.clone(), b]).unwrap();
        assert_eq!(d.get(0, 1), 2.0);
        assert_eq!(d.get(1, 0), 2.0);

        let err = distance_matrix(&[a, DMatrix::zeros(3, 3)]).unwrap_err();
        assert!(matches!(err, Error::DimensionMismatch(_)));
    }

    #[test]
    fn distance_matrix_is_conjugation_invariant() {
        let mut rng = RngStream::new(5).rng();
        let scores: Vec<DMatrix<f64>> = (0..6)
            .map(|_| {
                let g = DMatrix::from_fn(3, 3, |_, _| rng.sample::<f64, _>(StandardNormal));
                &g + g.transpose()
            })
            .collect();
        let w = random_orthogonal(3, &mut rng);
        let rotated: Vec<_> = scores.iter().map(|r| w.transpose() * r * &w).collect();
        let d1 = distance_matrix(&scores).unwrap();
        let d2 = distance_matrix(&rotated).unwrap();
        assert!((d1.matrix() - d2.matrix()).amax() < 1e-12);
    }

    #[test]
    fn distance_matrix_validation() {
        assert!(DistanceMatrix::new(DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 2.0, 0.0])).is_err());
        assert!(DistanceMatrix::new(DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 0.0])).is_err());
        assert!(DistanceMatrix::new(DMatrix::from_row_slice(2, 2, &[0.0, -1.0, -1.0, 0.0])).is_err());
        assert!(DistanceMatrix::new(DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0])).is_ok());
    }

    #[test]
    fn cmds_two_points() {
        let d = DistanceMatrix::new(DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0])).unwrap();
        let x = cmds(&d, 1).unwrap();
        let mut v = [x[(0, 0)], x[(1, 0)]];
        v.sort_by(f64::total_cmp);
        assert!((v[0] + 0.5).abs() < 1e-12 && (v[1] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn cmds_zero_and_contract() {
        let d = DistanceMatrix::new(DMatrix::zeros(4, 4)).unwrap();
        assert_eq!(cmds(&d, 2).unwrap(), DMatrix::zeros(4, 2));
        assert!(cmds(&d, 5).is_err());
    }

    #[test]
    fn cmds_recovers_euclidean_configuration() {
        let mut rng = RngStream::new(11).rng();
        let pts: Vec<DMatrix<f64>> = (0..9)
            .map(|_| DMatrix::from_fn(1, 3, |_, _| rng.sample::<f64, _>(StandardNormal)))
            .collect();
        let d = distance_matrix(&pts).unwrap();
        let x = cmds(&d, 3).unwrap();
        for i in 0..9 {
            for j in 0..9 {
                let e = (x.row(i) - x.row(j)).norm();
                assert!((e - d.get(i, j)).abs() < 1e-8, "{i} {j}");
            }
        }
        for j in 0..3 {
            assert!(x.column(j).mean().abs() < 1e-10);
        }
    }

    fn block_distances(labels: &[usize]) -> DistanceMatrix {
        let m = labels.len();
        DistanceMatrix::new(DMatrix::from_fn(m, m, |i, j| {
            if i == j {
                0.0
            } else if labels[i] == labels[j] {
                0.1
            } else {
                10.0
            }
        }))
        .unwrap()
    }

    #[test]
    fn knn_block_structure_is_perfect() {
        let labels: Vec<usize> = (0..20).map(|i| i % 4).collect();
        let d = block_distances(&labels);
        let mut rng = RngStream::new(1).rng();
        let report = knn_cv_classify(&d, &labels, 5, 1, &mut rng).unwrap();
        assert_eq!(report.accuracy, 1.0);
        assert_eq!(report.folds.len(), 5);
        assert_eq!(report.predictions, labels);
        // stratified: each fold gets one item of each class
        for fold in &report.folds {
            let mut cls: Vec<usize> = fold.test.iter().map(|&i| labels[i]).collect();
            cls.sort();
            assert_eq!(cls, vec![0, 1, 2, 3]);
        }
    }

    #[test]
    fn knn_identical_labels() {
        let mut rng = RngStream::new(2).rng();
        let g = DMatrix::from_fn(7, 7, |i, j| if i == j { 0.0 } else { 1.0 + (i + j) as f64 });
        let d = DistanceMatrix::new(g).unwrap();
        let labels = vec!["a"; 7];
        let report = knn_cv_classify(&d, &labels, 3, 1, &mut rng).unwrap();
        assert_eq!(report.accuracy, 1.0);
    }

    #[test]
    fn knn_contract_errors() {
        let d = DistanceMatrix::new(DMatrix::zeros(3, 3)).unwrap();
        let mut rng = RngStream::new(0).rng();
        assert!(knn_cv_classify(&d, &[0, 1, 0], 1, 1, &mut rng).is_err());
        assert!(knn_cv_classify(&d, &[0, 1, 0], 4, 1, &mut rng).is_err());
        assert!(knn_cv_classify(&d, &[0, 1], 2, 1, &mut rng).is_err());
        assert!(knn_predict(&d, &[0, 1, 0], &[], &[0], 1).is_err());
    }

    #[test]
    fn knn_ties_go_to_lowest_index() {
        let d = DistanceMatrix::new(DMatrix::from_row_slice(
            3,
            3,
            &[0.0, 1.0, 1.0, 1.0, 0.0, 2.0, 1.0, 2.0, 0.0],
        ))
        .unwrap();
        let p = knn_predict(&d, &["x", "y", "z"], &[2, 1], &[0], 1).unwrap();
        assert_eq!(p, vec!["y"]);
        // vote tie between y and z at k = 2: y's neighbour ranks first
        let p = knn_predict(&d, &["x", "y", "z"], &[2, 1], &[0], 2).unwrap();
        assert_eq!(p, vec!["y"]);
    }

    #[test]
    fn knn_random_distances_are_at_chance() {
        let labels: Vec<usize> = (0..40).map(|i| i % 4).collect();
        let mut total = 0.0;
        for seed in 0..100 {
            let mut rng = RngStream::new(seed).rng();
            let mut g = DMatrix::zeros(40, 40);
            for i in 0..40 {
                for j in i + 1..40 {
                    let x: f64 = rng.random();
                    g[(i, j)] = x;
                    g[(j, i)] = x;
                }
            }
            let d = DistanceMatrix::new(g).unwrap();
            total += knn_cv_classify(&d, &labels, 10, 1, &mut rng).unwrap().accuracy;
        }
        let mean = total / 100.0;
        // sd of one accuracy is about sqrt(.25 * .75 / 40) ≈ 0.068
        assert!((mean - 0.25).abs() < 4.0 * 0.068 / 10.0, "{mean}");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn knn_is_invariant_to_monotone_transforms(seed in 0u64..1000, power in 0.2f64..3.0) {
            let mut rng = RngStream::new(seed).rng();
            let m = 15;
            let mut g = DMatrix::zeros(m, m);
            for i in 0..m {
                for j in i + 1..m {
                    let x: f64 = rng.random::<f64>() + 0.01;
                    g[(i, j)] = x;
                    g[(j, i)] = x;
                }
            }
            let labels: Vec<usize> = (0..m).map(|i| i % 3).collect();
            let d1 = DistanceMatrix::new(g.clone()).unwrap();
            let d2 = DistanceMatrix::new(g.map(|x| 3.0 * x.powf(power) + 1.0).map_with_location(|i, j, x| if i == j { 0.0 } else { x })).unwrap();
            let r1 = knn_cv_classify(&d1, &labels, 3, 3, &mut RngStream::new(seed).rng()).unwrap();
            let r2 = knn_cv_classify(&d2, &labels, 3, 3, &mut RngStream::new(seed).rng()).unwrap();
            prop_assert_eq!(r1, r2);
        }

        #[test]
        fn cmds_columns_are_centred(seed in 0u64..1000) {
            let mut rng = RngStream::new(seed).rng();
            let pts: Vec<DMatrix<f64>> = (0..8)
                .map(|_| DMatrix::from_fn(1, 4, |_, _| rng.sample::<f64, _>(StandardNormal)))
                .collect();
            let x = cmds(&distance_matrix(&pts).unwrap(), 3).unwrap();
            for j in 0..3 {
                prop_assert!(x.column(j).mean().abs() < 1e-10);
            }
        }
    }
}
