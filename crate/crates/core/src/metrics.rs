//! Summed cross-entropy objective, confusion-matrix metrics, k-fold splits.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autograd::{Graph, Var};
use crate::error::{shape_err, Error, Result};
use crate::tensor::{LabelMap, Scalar, Tensor};
use crate::translation::{PipelineOutputs, PipelineVars};

/// Named loss terms and their sum.
#[derive(Clone, Debug, PartialEq)]
pub struct LossReport {
    pub terms: Vec<(String, f64)>,
    pub total: f64,
}

impl LossReport {
    pub fn term_sum(&self) -> f64 {
        self.terms.iter().map(|(_, v)| v).sum()
    }

    /// `|total - Σ terms| <= tol · max(1, |total|)`.
    pub fn is_consistent(&self, tol: f64) -> bool {
        (self.total - self.term_sum()).abs() <= tol * self.total.abs().max(1.0)
    }
}

/// Graph handles of the loss terms.
#[derive(Clone, Debug)]
pub struct LossVars {
    pub terms: Vec<Var>,
    pub total: Var,
}

impl LossVars {
    pub fn report<T: Scalar>(&self, g: &Graph<T>) -> LossReport {
        LossReport {
            terms: self
                .terms
                .iter()
                .enumerate()
                .map(|(i, v)| (format!("loss_{}", i + 1), g.value(*v).item().as_f64()))
                .collect(),
            total: g.value(self.total).item().as_f64(),
        }
    }
}

/// Sums the given scalar terms on the graph.
pub fn sum_terms<T: Scalar>(g: &mut Graph<T>, terms: Vec<Var>) -> Result<LossVars> {
    let mut it = terms.iter().copied();
    let mut total = it
        .next()
        .ok_or_else(|| Error::InvalidArgument("no loss terms".into()))?;
    for t in it {
        total = g.add(total, t)?;
    }
    Ok(LossVars { terms, total })
}

/// Records the pipeline objective: CE of the first network, CE of each
/// second-network output in class order, and (when `include_ensemble`) CE of
/// the ensemble output, summed with unit weights.
pub fn pipeline_loss<T: Scalar>(
    g: &mut Graph<T>,
    vars: &PipelineVars,
    target: &LabelMap,
    include_ensemble: bool,
) -> Result<LossVars> {
    let classes = g.value(vars.logits1).shape()[1];
    if vars.logits2.len() != classes {
        return Err(Error::InvalidArgument(format!(
            "{} second-network outputs for {classes} classes",
            vars.logits2.len()
        )));
    }
    let mut terms = vec![g.softmax_ce(vars.logits1, target)?];
    for l in &vars.logits2 {
        terms.push(g.softmax_ce(*l, target)?);
    }
    if include_ensemble {
        terms.push(g.softmax_ce(vars.ensemble_logits, target)?);
    }
    sum_terms(g, terms)
}

/// Value-level objective with all S + 1 terms.
pub fn total_loss<T: Scalar>(outs: &PipelineOutputs<T>, target: &LabelMap) -> Result<LossReport> {
    let classes = outs.logits1.shape()[1];
    if outs.logits2.len() != classes || outs.ensemble_logits.shape()[1] != classes {
        return Err(Error::InvalidArgument(format!(
            "class-count mismatch: {classes} classes, {} second-network outputs",
            outs.logits2.len()
        )));
    }
    let mut g = Graph::new();
    let parts: Vec<&Tensor<T>> = outs
        .segmentation_outputs()
        .into_iter()
        .chain(std::iter::once(&outs.ensemble_logits))
        .collect();
    let mut terms = Vec::with_capacity(parts.len());
    for p in parts {
        let v = g.leaf(p.clone());
        terms.push(g.softmax_ce(v, target)?);
    }
    let lv = sum_terms(&mut g, terms)?;
    let mut report = lv.report(&g);
    report.total = report.term_sum();
    Ok(report)
}

/// Pixel counts; rows are ground truth, columns are prediction.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfusionMatrix {
    classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        ConfusionMatrix {
            classes,
            counts: vec![0; classes * classes],
        }
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn get(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth * self.classes + pred]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn tp(&self, c: usize) -> u64 {
        self.get(c, c)
    }

    pub fn fp(&self, c: usize) -> u64 {
        (0..self.classes)
            .filter(|&t| t != c)
            .map(|t| self.get(t, c))
            .sum()
    }

    pub fn fn_(&self, c: usize) -> u64 {
        (0..self.classes)
            .filter(|&p| p != c)
            .map(|p| self.get(c, p))
            .sum()
    }

    pub fn is_diagonal(&self) -> bool {
        (0..self.classes).all(|t| (0..self.classes).all(|p| t == p || self.get(t, p) == 0))
    }

    pub fn add_labels(&mut self, pred: &[u8], truth: &[u8]) -> Result<()> {
        if pred.len() != truth.len() {
            return Err(shape_err(
                "confusion",
                format!("{} predictions vs {} labels", pred.len(), truth.len()),
            ));
        }
        for (&p, &t) in pred.iter().zip(truth) {
            let (p, t) = (p as usize, t as usize);
            if p >= self.classes || t >= self.classes {
                return Err(Error::InvalidArgument(format!(
                    "label {} out of range for {} classes",
                    p.max(t),
                    self.classes
                )));
            }
            self.counts[t * self.classes + p] += 1;
        }
        Ok(())
    }

    /// Adds argmax-over-classes predictions (ties → lowest index).
    pub fn accumulate<T: Scalar>(
        &mut self,
        pred_logits: &Tensor<T>,
        target: &LabelMap,
    ) -> Result<()> {
        let [b, c, h, w] = pred_logits.dims4("confusion_accumulate")?;
        if c != self.classes {
            return Err(shape_err(
                "confusion_accumulate",
                format!("{c} logit channels for {} classes", self.classes),
            ));
        }
        if (target.batch(), target.height(), target.width()) != (b, h, w) {
            return Err(shape_err(
                "confusion_accumulate",
                "target shape differs from logits",
            ));
        }
        target.check_range(c)?;
        let pred = argmax_labels(pred_logits)?;
        self.add_labels(pred.labels(), target.labels())
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if other.classes != self.classes {
            return Err(Error::InvalidArgument(
                "merging matrices of different class counts".into(),
            ));
        }
        self.counts
            .iter_mut()
            .zip(&other.counts)
            .for_each(|(a, b)| *a += b);
        Ok(())
    }
}

/// Functional form of [`ConfusionMatrix::accumulate`].
pub fn confusion_accumulate<T: Scalar>(
    mut cm: ConfusionMatrix,
    pred_logits: &Tensor<T>,
    target: &LabelMap,
) -> Result<ConfusionMatrix> {
    cm.accumulate(pred_logits, target)?;
    Ok(cm)
}

/// Per-pixel argmax of `[B,C,H,W]` logits; first maximal class wins.
pub fn argmax_labels<T: Scalar>(logits: &Tensor<T>) -> Result<LabelMap> {
    let [b, c, h, w] = logits.dims4("argmax")?;
    let plane = h * w;
    let d = logits.data();
    let mut out = Vec::with_capacity(b * plane);
    for bi in 0..b {
        for p in 0..plane {
            let mut best = 0;
            let mut best_v = d[bi * c * plane + p];
            for ci in 1..c {
                let v = d[(bi * c + ci) * plane + p];
                if v > best_v {
                    best_v = v;
                    best = ci;
                }
            }
            out.push(best as u8);
        }
    }
    LabelMap::new(b, h, w, out)
}

/// IoU and Dice per class plus their means over classes with nonzero union.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    /// `None` when the class has zero union (absent from both truth and prediction).
    pub iou: Vec<Option<f64>>,
    pub dice: Vec<Option<f64>>,
    pub miou: f64,
    pub mdice: f64,
    pub pixels: u64,
}

pub fn metrics_from_confusion(cm: &ConfusionMatrix) -> Result<MetricsReport> {
    let mut iou = Vec::with_capacity(cm.classes());
    let mut dice = Vec::with_capacity(cm.classes());
    for c in 0..cm.classes() {
        let (tp, fp, fn_) = (cm.tp(c) as f64, cm.fp(c) as f64, cm.fn_(c) as f64);
        if tp + fp + fn_ == 0.0 {
            iou.push(None);
            dice.push(None);
        } else {
            iou.push(Some(tp / (tp + fp + fn_)));
            dice.push(Some(2.0 * tp / (2.0 * tp + fp + fn_)));
        }
    }
    let included: Vec<usize> = (0..cm.classes()).filter(|&c| iou[c].is_some()).collect();
    if included.is_empty() {
        return Err(Error::EmptyEvaluation);
    }
    let mean = |v: &[Option<f64>]| {
        included.iter().map(|&c| v[c].unwrap_or(0.0)).sum::<f64>() / included.len() as f64
    };
    Ok(MetricsReport {
        miou: mean(&iou),
        mdice: mean(&dice),
        iou,
        dice,
        pixels: cm.total(),
    })
}

impl MetricsReport {
    /// Flat `key=value` lines.
    pub fn to_kv(&self, class_names: &[String]) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "pixels={}", self.pixels);
        let _ = writeln!(s, "miou={}", self.miou);
        let _ = writeln!(s, "mdice={}", self.mdice);
        for (c, (i, d)) in self.iou.iter().zip(&self.dice).enumerate() {
            let name = class_label(class_names, c);
            let _ = writeln!(s, "iou.{name}={}", fmt_opt(*i));
            let _ = writeln!(s, "dice.{name}={}", fmt_opt(*d));
        }
        s
    }
}

impl MetricsReport {
    /// Header `metric,mean,<classes>`, then one IoU row and one Dice row.
    pub fn to_csv(&self, class_names: &[String]) -> String {
        let mut s = String::from("metric,mean");
        for c in 0..self.iou.len() {
            let _ = write!(s, ",{}", class_label(class_names, c));
        }
        s.push('\n');
        for (name, mean, per) in [
            ("iou", self.miou, &self.iou),
            ("dice", self.mdice, &self.dice),
        ] {
            let _ = write!(s, "{name},{mean}");
            for v in per {
                let _ = write!(s, ",{}", fmt_opt(*v));
            }
            s.push('\n');
        }
        s
    }
}

fn class_label(names: &[String], c: usize) -> String {
    names.get(c).cloned().unwrap_or_else(|| format!("class{c}"))
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_else(|| "nan".into())
}

/// Sample mean and standard deviation (n − 1 denominator; 0 for one value).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Per-fold reports with mean and std across folds.
#[derive(Clone, Debug, PartialEq)]
pub struct FoldSummary {
    pub folds: Vec<MetricsReport>,
}

impl FoldSummary {
    pub fn classes(&self) -> usize {
        self.folds.first().map_or(0, |f| f.iou.len())
    }

    pub fn miou(&self) -> (f64, f64) {
        mean_std(&self.folds.iter().map(|f| f.miou).collect::<Vec<_>>())
    }

    pub fn mdice(&self) -> (f64, f64) {
        mean_std(&self.folds.iter().map(|f| f.mdice).collect::<Vec<_>>())
    }

    /// Mean/std of class `c` IoU over folds where it was defined.
    pub fn class_iou(&self, c: usize) -> (f64, f64) {
        mean_std(
            &self
                .folds
                .iter()
                .filter_map(|f| f.iou[c])
                .collect::<Vec<_>>(),
        )
    }

    pub fn class_dice(&self, c: usize) -> (f64, f64) {
        mean_std(
            &self
                .folds
                .iter()
                .filter_map(|f| f.dice[c])
                .collect::<Vec<_>>(),
        )
    }

    /// One row per fold followed by `mean` and `std` rows. Values are
    /// fractions in [0, 1].
    pub fn to_csv(&self, class_names: &[String]) -> String {
        let c = self.classes();
        let mut s = String::from("fold,miou");
        for k in 0..c {
            let _ = write!(s, ",iou_{}", class_label(class_names, k));
        }
        s.push_str(",mdice");
        for k in 0..c {
            let _ = write!(s, ",dice_{}", class_label(class_names, k));
        }
        s.push('\n');
        for (i, f) in self.folds.iter().enumerate() {
            let _ = write!(s, "{i},{}", f.miou);
            for v in &f.iou {
                let _ = write!(s, ",{}", fmt_opt(*v));
            }
            let _ = write!(s, ",{}", f.mdice);
            for v in &f.dice {
                let _ = write!(s, ",{}", fmt_opt(*v));
            }
            s.push('\n');
        }
        for (label, pick) in [("mean", 0usize), ("std", 1)] {
            let sel = |p: (f64, f64)| if pick == 0 { p.0 } else { p.1 };
            let _ = write!(s, "{label},{}", sel(self.miou()));
            for k in 0..c {
                let _ = write!(s, ",{}", sel(self.class_iou(k)));
            }
            let _ = write!(s, ",{}", sel(self.mdice()));
            for k in 0..c {
                let _ = write!(s, ",{}", sel(self.class_dice(k)));
            }
            s.push('\n');
        }
        s
    }
}

/// Index sets of one cross-validation fold.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Fold {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// `k` folds whose test sets partition `0..n`; each fold draws `val`
/// validation indices from its remainder. Deterministic per seed.
pub fn kfold_split(n: usize, k: usize, val: usize, seed: u64) -> Result<Vec<Fold>> {
    if k < 2 {
        return Err(Error::InvalidArgument(format!("k must be >= 2, got {k}")));
    }
    if n == 0 || n % k != 0 {
        return Err(Error::InvalidArgument(format!(
            "n = {n} is not divisible by k = {k}"
        )));
    }
    let fold_size = n / k;
    if val >= n - fold_size {
        return Err(Error::InvalidArgument(format!(
            "val = {val} leaves no training data ({} non-test indices)",
            n - fold_size
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut rng);
    let folds = (0..k)
        .map(|f| {
            let mut test = perm[f * fold_size..(f + 1) * fold_size].to_vec();
            let mut rest: Vec<usize> = perm[..f * fold_size]
                .iter()
                .chain(&perm[(f + 1) * fold_size..])
                .copied()
                .collect();
            rest.shuffle(&mut rng);
            let mut v = rest[..val].to_vec();
            let mut train = rest[val..].to_vec();
            test.sort_unstable();
            v.sort_unstable();
            train.sort_unstable();
            Fold {
                train,
                val: v,
                test,
            }
        })
        .collect();
    Ok(folds)
}

/// Seeded split of `0..n` into `(train, val)` with `val` validation indices.
pub fn holdout_split(n: usize, val: usize, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if val >= n {
        return Err(Error::InvalidArgument(format!(
            "val = {val} leaves no training data out of {n}"
        )));
    }
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut v = perm[..val].to_vec();
    let mut train = perm[val..].to_vec();
    v.sort_unstable();
    train.sort_unstable();
    Ok((train, v))
}

/// FNV-1a over every index of every fold; equal hashes ⇒ identical splits
/// (up to collisions).
pub fn split_hash(folds: &[Fold]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    let mut eat = |v: u64| {
        for byte in v.to_le_bytes() {
            h ^= byte as u64;
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
    };
    for f in folds {
        for set in [&f.train, &f.val, &f.test] {
            eat(set.len() as u64);
            set.iter().for_each(|&i| eat(i as u64));
        }
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;

    fn labels(v: &[u8], h: usize, w: usize) -> LabelMap {
        LabelMap::new(1, h, w, v.to_vec()).unwrap()
    }

    #[test]
    fn holdout_partitions_indices() {
        let (train, val) = holdout_split(10, 3, 4).unwrap();
        assert_eq!(val.len(), 3);
        let mut all: Vec<usize> = train.iter().chain(&val).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
        assert_eq!(holdout_split(10, 3, 4).unwrap(), (train, val));
        assert!(holdout_split(3, 3, 0).is_err());
    }

    #[test]
    fn two_by_two_example() {
        let mut cm = ConfusionMatrix::new(2);
        cm.add_labels(&[0, 1, 1, 1], &[0, 1, 0, 1]).unwrap();
        assert_eq!((cm.tp(1), cm.fp(1), cm.fn_(1)), (2, 1, 0));
        assert_eq!((cm.tp(0), cm.fp(0), cm.fn_(0)), (1, 0, 1));
        let m = metrics_from_confusion(&cm).unwrap();
        assert!((m.iou[1].unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert!((m.dice[1].unwrap() - 0.8).abs() < 1e-15);
        assert_eq!(m.iou[0], Some(0.5));
        assert!((m.dice[0].unwrap() - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn perfect_prediction_is_diagonal_and_one() {
        let gt = labels(&[0, 1, 2, 2, 1, 0], 2, 3);
        let logits = gt.one_hot::<f32>(3, 5.0).unwrap();
        let cm = confusion_accumulate(ConfusionMatrix::new(3), &logits, &gt).unwrap();
        assert!(cm.is_diagonal());
        let m = metrics_from_confusion(&cm).unwrap();
        assert_eq!(m.miou, 1.0);
        assert_eq!(m.mdice, 1.0);
    }

    #[test]
    fn argmax_ties_go_to_lowest_class() {
        let t = Tensor::<f32>::new([1, 3, 1, 2], vec![1.0, 0.0, 1.0, 2.0, 0.5, 2.0]).unwrap();
        assert_eq!(argmax_labels(&t).unwrap().labels(), &[0, 1]);
    }

    #[test]
    fn accumulation_is_additive() {
        let a = labels(&[0, 1, 1, 0], 2, 2);
        let b = labels(&[1, 1, 0, 0], 2, 2);
        let la =
            Tensor::<f32>::new([1, 2, 2, 2], vec![0.1, 0.9, 0.2, 0.3, 0.5, 0.1, 0.8, 0.1]).unwrap();
        let lb =
            Tensor::<f32>::new([1, 2, 2, 2], vec![0.7, 0.1, 0.2, 0.3, 0.5, 0.1, 0.8, 0.9]).unwrap();
        let mut two = ConfusionMatrix::new(2);
        two.accumulate(&la, &a).unwrap();
        two.accumulate(&lb, &b).unwrap();
        let both_l = Tensor::cat_batch(&[&la, &lb]).unwrap();
        let both_t = LabelMap::cat_batch(&[&a, &b]).unwrap();
        let mut one = ConfusionMatrix::new(2);
        one.accumulate(&both_l, &both_t).unwrap();
        assert_eq!(one, two);
    }

    #[test]
    fn zero_union_class_is_excluded() {
        let mut cm = ConfusionMatrix::new(3);
        cm.add_labels(&[0, 1, 1], &[0, 1, 0]).unwrap();
        let m = metrics_from_confusion(&cm).unwrap();
        assert_eq!(m.iou[2], None);
        assert!((m.miou - (0.5 + 0.5) / 2.0).abs() < 1e-15);
        assert!(matches!(
            metrics_from_confusion(&ConfusionMatrix::new(2)),
            Err(Error::EmptyEvaluation)
        ));
    }

    #[test]
    fn out_of_range_labels_rejected() {
        let mut cm = ConfusionMatrix::new(2);
        assert!(cm.add_labels(&[0, 2], &[0, 1]).is_err());
        let gt = labels(&[0, 3], 1, 2);
        assert!(cm
            .accumulate(&Tensor::<f32>::zeros([1, 2, 1, 2]), &gt)
            .is_err());
    }

    #[test]
    fn fifty_images_five_folds() {
        let folds = kfold_split(50, 5, 5, 0).unwrap();
        assert_eq!(folds.len(), 5);
        let mut all_test: Vec<usize> = Vec::new();
        for f in &folds {
            assert_eq!((f.train.len(), f.val.len(), f.test.len()), (35, 5, 10));
            let mut u: Vec<usize> = f
                .train
                .iter()
                .chain(&f.val)
                .chain(&f.test)
                .copied()
                .collect();
            u.sort_unstable();
            assert_eq!(u, (0..50).collect::<Vec<_>>());
            all_test.extend(&f.test);
        }
        all_test.sort_unstable();
        assert_eq!(all_test, (0..50).collect::<Vec<_>>());
        assert_eq!(folds, kfold_split(50, 5, 5, 0).unwrap());
        assert_ne!(
            split_hash(&folds),
            split_hash(&kfold_split(50, 5, 5, 1).unwrap())
        );
    }

    #[test]
    fn kfold_preconditions() {
        assert!(kfold_split(51, 5, 5, 0).is_err());
        assert!(kfold_split(50, 5, 40, 0).is_err());
        assert!(kfold_split(50, 1, 0, 0).is_err());
    }

    #[test]
    fn uniform_logits_total() {
        let t = Tensor::<f64>::zeros([1, 3, 2, 2]);
        let outs = PipelineOutputs {
            logits1: t.clone(),
            filters: t.clone(),
            translated: vec![Tensor::zeros([1, 1, 2, 2]); 3],
            logits2: vec![t.clone(); 3],
            ensemble_logits: t,
        };
        let target = labels(&[0, 1, 2, 1], 2, 2);
        let r = total_loss(&outs, &target).unwrap();
        assert_eq!(r.terms.len(), 5);
        assert!((r.total - 5.0 * 3f64.ln()).abs() < 1e-12);
        assert!(r.is_consistent(1e-12));
    }

    #[test]
    fn csv_has_fold_mean_and_std_rows() {
        let mut cm = ConfusionMatrix::new(2);
        cm.add_labels(&[0, 1, 1, 1], &[0, 1, 0, 1]).unwrap();
        let m = metrics_from_confusion(&cm).unwrap();
        let s = FoldSummary {
            folds: vec![m.clone(), m],
        };
        let csv = s.to_csv(&["bg".into(), "membrane".into()]);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(
            lines[0],
            "fold,miou,iou_bg,iou_membrane,mdice,dice_bg,dice_membrane"
        );
        assert_eq!(lines.len(), 5);
        assert!(lines[3].starts_with("mean,"));
        assert!(lines[4].starts_with("std,0,"));
    }
}
