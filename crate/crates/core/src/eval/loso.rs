use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::metrics::{
    accuracy, confusion, kappa, normalize_rows, ConfusionMatrix, NormalizedMatrix,
};
use super::resample::oversample_indices;
use super::stats::{mean, std_pop};
use crate::error::{Error, Result};
use crate::matrix::{Matrix, Standardizer};
use crate::nn::{self, checkpoint, ModelConfig, Network, Tensor, TrainConfig};
use crate::rng::sub_seed;
use crate::spectral::MeshMap;
use crate::svm::{train_smo, SvmConfig};

/// Pooled trials of a cohort with their subject of origin.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub x: Matrix,
    pub y: Vec<u8>,
    /// Index into `subject_ids` for every row.
    pub subject: Vec<usize>,
    pub subject_ids: Vec<String>,
    /// Needed by mesh-input models.
    pub mesh: Option<MeshMap>,
}

impl Dataset {
    /// Stacks per-subject blocks, ordered by subject id.
    pub fn from_subjects(
        mut parts: Vec<(String, Matrix, Vec<u8>)>,
        mesh: Option<MeshMap>,
    ) -> Result<Self> {
        parts.sort_by(|a, b| a.0.cmp(&b.0));
        if parts.windows(2).any(|w| w[0].0 == w[1].0) {
            return Err(Error::invalid("duplicate subject id in cohort".to_string()));
        }
        let mut subject = Vec::new();
        let mut y = Vec::new();
        for (k, (id, x, labels)) in parts.iter().enumerate() {
            if x.rows() != labels.len() {
                return Err(Error::shape(format!(
                    "subject {id}: {} rows but {} labels",
                    x.rows(),
                    labels.len()
                )));
            }
            subject.extend(std::iter::repeat_n(k, x.rows()));
            y.extend_from_slice(labels);
        }
        let x = Matrix::vstack(&parts.iter().map(|p| &p.1).collect::<Vec<_>>())?;
        Ok(Dataset {
            x,
            y,
            subject,
            subject_ids: parts.into_iter().map(|p| p.0).collect(),
            mesh,
        })
    }

    pub fn n_subjects(&self) -> usize {
        self.subject_ids.len()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Fold {
    pub subject: usize,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// One fold per subject: that subject's rows are the test set, every other
/// row is training data.
pub fn loso_plan(subject: &[usize], n_subjects: usize) -> Result<Vec<Fold>> {
    if n_subjects < 2 {
        return Err(Error::invalid(format!(
            "leave-one-subject-out needs at least 2 subjects, got {n_subjects}"
        )));
    }
    if let Some(&s) = subject.iter().find(|&&s| s >= n_subjects) {
        return Err(Error::invalid(format!("subject index {s} out of range")));
    }
    let folds: Vec<Fold> = (0..n_subjects)
        .map(|k| {
            let (test, train) = (0..subject.len()).partition(|&i| subject[i] == k);
            Fold {
                subject: k,
                train,
                test,
            }
        })
        .collect();
    if let Some(f) = folds.iter().find(|f| f.test.is_empty()) {
        return Err(Error::invalid(format!(
            "subject {} has no trials",
            f.subject
        )));
    }
    Ok(folds)
}

/// Checks the partition: one fold per subject, test rows all from the
/// held-out subject, no held-out rows in training, and every row tested
/// exactly once.
pub fn verify_plan(folds: &[Fold], subject: &[usize], n_subjects: usize) -> Result<()> {
    let fail = |m: String| Err(Error::invalid(format!("LOSO integrity: {m}")));
    if folds.len() != n_subjects {
        return fail(format!("{} folds for {n_subjects} subjects", folds.len()));
    }
    let mut tested = vec![0usize; subject.len()];
    for (k, f) in folds.iter().enumerate() {
        if f.subject != k {
            return fail(format!("fold {k} holds out subject {}", f.subject));
        }
        if let Some(&i) = f.test.iter().find(|&&i| subject[i] != k) {
            return fail(format!("fold {k} tests row {i} of subject {}", subject[i]));
        }
        if let Some(&i) = f.train.iter().find(|&&i| subject[i] == k) {
            return fail(format!("fold {k} trains on held-out row {i}"));
        }
        if f.train.len() + f.test.len() != subject.len() {
            return fail(format!("fold {k} does not cover every row once"));
        }
        for &i in &f.test {
            tested[i] += 1;
        }
    }
    if let Some(i) = tested.iter().position(|&c| c != 1) {
        return fail(format!("row {i} is tested {} times", tested[i]));
    }
    Ok(())
}

/// Everything a classifier sees for one fold. Features are already
/// standardised with training-split statistics.
pub struct FoldInput<'a> {
    pub train_x: &'a Matrix,
    pub train_y: &'a [u8],
    pub test_x: &'a Matrix,
    /// Only read when `select_best_epoch` is set.
    pub test_y: &'a [u8],
    pub mesh: Option<&'a MeshMap>,
    pub seed: u64,
    pub select_best_epoch: bool,
    pub keep_model: bool,
}

#[derive(Debug, Clone, Default)]
pub struct FoldOutput {
    pub pred: Vec<u8>,
    pub loss_curve: Vec<f64>,
    pub selected_epoch: Option<usize>,
    pub model_bytes: Option<Vec<u8>>,
}

pub trait Classifier: Sync {
    fn name(&self) -> String;
    fn fit_predict(&self, f: &FoldInput<'_>) -> Result<FoldOutput>;
}

/// The three shipped model families.
#[derive(Debug, Clone, PartialEq)]
pub enum ModelSpec {
    Svm(SvmConfig),
    Net(ModelConfig, TrainConfig),
}

fn to_tensor(x: &Matrix, model: &ModelConfig, mesh: Option<&MeshMap>) -> Result<Tensor> {
    match model {
        ModelConfig::Mlp(_) => Tensor::new(&[x.rows(), x.cols()], x.as_slice().to_vec()),
        ModelConfig::Cnn(c) => {
            let mesh = mesh.ok_or_else(|| {
                Error::invalid("the CNN needs a channel layout for mesh input".to_string())
            })?;
            Tensor::new(
                &[x.rows(), c.in_channels, c.mesh_rows, c.mesh_cols],
                mesh.mesh_rows(x)?,
            )
        }
    }
}

impl Classifier for ModelSpec {
    fn name(&self) -> String {
        match self {
            ModelSpec::Svm(_) => "svm".to_string(),
            ModelSpec::Net(m, _) => m.name().to_string(),
        }
    }

    fn fit_predict(&self, f: &FoldInput<'_>) -> Result<FoldOutput> {
        match self {
            ModelSpec::Svm(cfg) => {
                let cfg = SvmConfig {
                    seed: f.seed,
                    ..cfg.clone()
                };
                let m = train_smo(f.train_x, f.train_y, &cfg)?;
                Ok(FoldOutput {
                    pred: m.predict(f.test_x)?,
                    model_bytes: if f.keep_model {
                        Some(m.to_bytes()?)
                    } else {
                        None
                    },
                    ..FoldOutput::default()
                })
            }
            ModelSpec::Net(model, train) => {
                let cfg = TrainConfig {
                    seed: f.seed,
                    ..train.clone()
                };
                let xtr = to_tensor(f.train_x, model, f.mesh)?;
                let xte = to_tensor(f.test_x, model, f.mesh)?;
                let mut best: Option<(f64, usize, Network)> = None;
                let mut observe = |epoch: usize, net: &Network| -> Result<()> {
                    if f.select_best_epoch {
                        let (pred, _) = net.predict(&xte)?;
                        let k = kappa(&confusion(f.test_y, &pred)?)?.value;
                        if best.as_ref().is_none_or(|b| k > b.0) {
                            best = Some((k, epoch, net.clone()));
                        }
                    }
                    Ok(())
                };
                let mut trained = nn::train_observed(model, &xtr, f.train_y, &cfg, &mut observe)?;
                let mut selected = None;
                if let Some((_, epoch, net)) = best {
                    trained.network = net;
                    selected = Some(epoch);
                }
                Ok(FoldOutput {
                    pred: trained.predict(&xte)?.0,
                    model_bytes: if f.keep_model {
                        Some(checkpoint::to_bytes(&trained)?)
                    } else {
                        None
                    },
                    loss_curve: trained.loss_curve,
                    selected_epoch: selected,
                })
            }
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LosoOptions {
    pub seed: u64,
    /// Oversample the minority class of every training split.
    pub rebalance: bool,
    /// Score each fold with the training epoch whose held-out κ is highest.
    pub best_epoch: bool,
    pub keep_models: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub fold: usize,
    pub subject: String,
    pub n_train: usize,
    pub n_test: usize,
    pub cm: ConfusionMatrix,
    pub accuracy: f64,
    pub kappa: f64,
    /// Chance agreement was 1 on this fold; κ reported as 0.
    pub kappa_degenerate: bool,
    /// The training split held a single class; the fold predicts that class.
    pub single_class_train: bool,
    pub selected_epoch: Option<usize>,
    #[serde(skip)]
    pub loss_curve: Vec<f64>,
    #[serde(skip)]
    pub model_bytes: Option<Vec<u8>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub std: f64,
}

impl Summary {
    pub fn of(v: &[f64]) -> Self {
        Summary {
            mean: mean(v),
            std: std_pop(v),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelReport {
    pub model: String,
    pub task: String,
    pub folds: Vec<FoldResult>,
    pub accuracy: Summary,
    pub kappa: Summary,
    /// Element-wise sum of the fold matrices.
    pub pooled: ConfusionMatrix,
    pub pooled_normalized: NormalizedMatrix,
}

impl ModelReport {
    pub fn from_folds(model: &str, task: &str, folds: Vec<FoldResult>) -> Result<Self> {
        if folds.is_empty() {
            return Err(Error::invalid(
                "a report needs at least one fold".to_string(),
            ));
        }
        let acc: Vec<f64> = folds.iter().map(|f| f.accuracy).collect();
        let kap: Vec<f64> = folds.iter().map(|f| f.kappa).collect();
        let mut pooled = ConfusionMatrix::default();
        folds.iter().for_each(|f| pooled.add(&f.cm));
        Ok(ModelReport {
            model: model.to_string(),
            task: task.to_string(),
            accuracy: Summary::of(&acc),
            kappa: Summary::of(&kap),
            pooled_normalized: normalize_rows(&pooled)?,
            pooled,
            folds,
        })
    }
}

fn run_fold(
    data: &Dataset,
    clf: &dyn Classifier,
    fold_index: usize,
    fold: &Fold,
    opts: &LosoOptions,
) -> Result<FoldResult> {
    let seed = sub_seed(opts.seed, fold_index as u64);
    let raw_train = data.x.select_rows(&fold.train);
    let test_y: Vec<u8> = fold.test.iter().map(|&i| data.y[i]).collect();
    let mut train_y: Vec<u8> = fold.train.iter().map(|&i| data.y[i]).collect();
    let single = !(train_y.contains(&0) && train_y.contains(&1));

    let out = if single {
        log::warn!(
            "fold {fold_index}: training split has a single class; predicting it everywhere"
        );
        FoldOutput {
            pred: vec![train_y.first().copied().unwrap_or(0); test_y.len()],
            ..FoldOutput::default()
        }
    } else {
        let scaler = Standardizer::fit(&raw_train)?;
        let mut train_x = scaler.transform(&raw_train)?;
        let test_x = scaler.transform(&data.x.select_rows(&fold.test))?;
        if opts.rebalance {
            let idx = oversample_indices(&train_y, sub_seed(seed, 0x7e5a))?;
            train_x = train_x.select_rows(&idx);
            train_y = idx.iter().map(|&i| train_y[i]).collect();
        }
        clf.fit_predict(&FoldInput {
            train_x: &train_x,
            train_y: &train_y,
            test_x: &test_x,
            test_y: &test_y,
            mesh: data.mesh.as_ref(),
            seed,
            select_best_epoch: opts.best_epoch,
            keep_model: opts.keep_models,
        })?
    };
    let cm = confusion(&test_y, &out.pred)?;
    let k = kappa(&cm)?;
    Ok(FoldResult {
        fold: fold_index,
        subject: data.subject_ids[fold.subject].clone(),
        n_train: fold.train.len(),
        n_test: fold.test.len(),
        accuracy: accuracy(&cm)?,
        kappa: k.value,
        kappa_degenerate: k.degenerate,
        single_class_train: single,
        selected_epoch: out.selected_epoch,
        cm,
        loss_curve: out.loss_curve,
        model_bytes: out.model_bytes,
    })
}

/// Leave-one-subject-out evaluation of one classifier. Folds run on the
/// current rayon pool; results come back in subject order regardless.
pub fn loso(
    data: &Dataset,
    clf: &dyn Classifier,
    task: &str,
    opts: &LosoOptions,
) -> Result<ModelReport> {
    let folds = loso_plan(&data.subject, data.n_subjects())?;
    verify_plan(&folds, &data.subject, data.n_subjects())?;
    let results: Vec<FoldResult> = folds
        .par_iter()
        .enumerate()
        .map(|(k, f)| run_fold(data, clf, k, f, opts))
        .collect::<Result<_>>()?;
    ModelReport::from_folds(&clf.name(), task, results)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy(n_subjects: usize, per: usize) -> Dataset {
        let parts = (0..n_subjects)
            .map(|s| {
                let rows: Vec<Vec<f64>> = (0..per)
                    .map(|t| vec![(s * per + t) as f64, (t % 2) as f64 * 3.0])
                    .collect();
                let y = (0..per).map(|t| (t % 2) as u8).collect();
                (format!("S{s:02}"), Matrix::from_rows(&rows).unwrap(), y)
            })
            .collect();
        Dataset::from_subjects(parts, None).unwrap()
    }

    /// Returns the label of an identical training row, else 0.
    struct Memorizer;

    impl Classifier for Memorizer {
        fn name(&self) -> String {
            "memorizer".to_string()
        }

        fn fit_predict(&self, f: &FoldInput<'_>) -> Result<FoldOutput> {
            let pred = (0..f.test_x.rows())
                .map(|i| {
                    (0..f.train_x.rows())
                        .find(|&j| f.train_x.row(j) == f.test_x.row(i))
                        .map_or(0, |j| f.train_y[j])
                })
                .collect();
            Ok(FoldOutput {
                pred,
                ..FoldOutput::default()
            })
        }
    }

    #[test]
    fn plan_is_a_partition() {
        let d = toy(6, 10);
        let folds = loso_plan(&d.subject, 6).unwrap();
        assert_eq!(folds.len(), 6);
        verify_plan(&folds, &d.subject, 6).unwrap();
        let d17 = toy(17, 4);
        assert_eq!(loso_plan(&d17.subject, 17).unwrap().len(), 17);
        assert!(loso_plan(&[0, 0], 1).is_err());
    }

    #[test]
    fn injected_leak_is_caught() {
        let d = toy(6, 10);
        let mut folds = loso_plan(&d.subject, 6).unwrap();
        let leaked = folds[2].test[0];
        folds[2].train.push(leaked);
        assert!(verify_plan(&folds, &d.subject, 6).is_err());

        let mut folds = loso_plan(&d.subject, 6).unwrap();
        let stolen = folds[3].train.pop().unwrap();
        folds[3].test.push(stolen);
        assert!(verify_plan(&folds, &d.subject, 6).is_err());
    }

    #[test]
    fn memorizer_scores_perfectly_on_duplicated_subjects() {
        let rows: Vec<Vec<f64>> = (0..8).map(|t| vec![t as f64, (t * t) as f64]).collect();
        let y: Vec<u8> = vec![1, 0, 0, 1, 1, 1, 0, 0];
        let x = Matrix::from_rows(&rows).unwrap();
        let d = Dataset::from_subjects(
            vec![("A".into(), x.clone(), y.clone()), ("B".into(), x, y)],
            None,
        )
        .unwrap();
        let r = loso(&d, &Memorizer, "picture", &LosoOptions::default()).unwrap();
        assert_eq!(r.folds.len(), 2);
        assert!(r.folds.iter().all(|f| f.accuracy == 1.0 && f.kappa == 1.0));
        assert_eq!(
            r.accuracy,
            Summary {
                mean: 1.0,
                std: 0.0
            }
        );
    }

    #[test]
    fn single_class_training_split_is_flagged() {
        let a = Matrix::from_rows(&[vec![0.0], vec![1.0]]).unwrap();
        let d = Dataset::from_subjects(
            vec![
                ("A".into(), a.clone(), vec![1, 1]),
                ("B".into(), a, vec![0, 1]),
            ],
            None,
        )
        .unwrap();
        let r = loso(&d, &Memorizer, "t", &LosoOptions::default()).unwrap();
        let f = &r.folds[1];
        assert!(f.single_class_train);
        assert_eq!(f.cm.counts, [[1, 0], [1, 0]]);
        assert!(!r.folds[0].single_class_train);
    }

    #[test]
    fn svm_on_toy_cohort_and_thread_independence() {
        let d = toy(4, 20);
        let spec = ModelSpec::Svm(SvmConfig::default());
        let opts = LosoOptions {
            seed: 3,
            ..LosoOptions::default()
        };
        let a = loso(&d, &spec, "t", &opts).unwrap();
        assert!(a.accuracy.mean > 0.95);
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(3)
            .build()
            .unwrap();
        let b = pool.install(|| loso(&d, &spec, "t", &opts)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn rebalanced_training_still_tests_original_rows() {
        let parts = (0..3)
            .map(|s| {
                let rows: Vec<Vec<f64>> = (0..10).map(|t| vec![t as f64 + s as f64]).collect();
                let y = (0..10).map(|t| u8::from(t < 8)).collect();
                (format!("S{s}"), Matrix::from_rows(&rows).unwrap(), y)
            })
            .collect();
        let d = Dataset::from_subjects(parts, None).unwrap();
        let opts = LosoOptions {
            rebalance: true,
            ..LosoOptions::default()
        };
        let r = loso(&d, &Memorizer, "t", &opts).unwrap();
        assert!(r
            .folds
            .iter()
            .all(|f| f.cm.total() == 10 && f.n_train == 20));
    }
}
