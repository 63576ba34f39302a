//! Evaluation metrics: pixel accuracy, per-class Jaccard index, and
//! whole-test-set reports for a global model.
//!
//! Jaccard over an empty union (class absent from prediction and ground
//! truth alike) is undefined rather than zero — those samples drop out of
//! the per-class test-set mean, so a class nobody asked for cannot dilute
//! the score of a class the model actually missed.

use crate::dataset::{batch_inputs, SegSample, NUM_CLASSES};
use crate::error::{Result, SplitFedError};
use crate::mask::Mask;
use crate::nn::{self, Network};
use crate::numerics::stable_mean;
use crate::params::ParamVector;

/// Fraction of pixels where `pred` and `gt` agree.
pub fn pixel_accuracy(pred: &Mask, gt: &Mask) -> Result<f64> {
    check_dims(pred, gt)?;
    let matches = pred
        .data()
        .iter()
        .zip(gt.data())
        .filter(|(a, b)| a == b)
        .count();
    Ok(matches as f64 / pred.len() as f64)
}

/// Jaccard index `|pred_c ∩ gt_c| / |pred_c ∪ gt_c|` for one class;
/// `None` when the union is empty (the class appears in neither mask).
pub fn jaccard(pred: &Mask, gt: &Mask, class: u8) -> Result<Option<f64>> {
    check_dims(pred, gt)?;
    let mut intersection = 0usize;
    let mut union = 0usize;
    for (a, b) in pred.data().iter().zip(gt.data()) {
        let (in_pred, in_gt) = (*a == class, *b == class);
        intersection += usize::from(in_pred && in_gt);
        union += usize::from(in_pred || in_gt);
    }
    if union == 0 {
        return Ok(None);
    }
    Ok(Some(intersection as f64 / union as f64))
}

fn check_dims(pred: &Mask, gt: &Mask) -> Result<()> {
    if pred.height() != gt.height() || pred.width() != gt.width() {
        return Err(SplitFedError::Data(format!(
            "mask dims disagree: {}x{} vs {}x{}",
            pred.height(),
            pred.width(),
            gt.height(),
            gt.width()
        )));
    }
    Ok(())
}

/// Test-set evaluation of a global model. `per_class_jaccard[c]` is the
/// mean Jaccard of class id `c + 1` over the samples where it is defined;
/// `None` when no sample defines it.
#[derive(Clone, Debug)]
pub struct EvalReport {
    pub loss: f64,
    pub accuracy: f64,
    pub per_class_jaccard: Vec<Option<f64>>,
}

impl EvalReport {
    /// Jaccard for a foreground class id (1-based), if defined anywhere.
    pub fn class_jaccard(&self, class: u8) -> Option<f64> {
        self.per_class_jaccard.get(usize::from(class) - 1).copied().flatten()
    }
}

/// Runs the model over the test set in batches and reports mean loss,
/// mean pixel accuracy, and mean per-class Jaccard across samples. The
/// loss is the same cross-entropy the clients train on.
pub fn evaluate_global(
    net: &Network,
    params: &ParamVector,
    test: &[SegSample],
    batch_size: usize,
) -> Result<EvalReport> {
    if test.is_empty() {
        return Err(SplitFedError::Data("cannot evaluate on an empty test set".into()));
    }
    if batch_size == 0 {
        return Err(SplitFedError::Config("batch size must be positive".into()));
    }
    let mut losses = Vec::with_capacity(test.len());
    let mut accuracies = Vec::with_capacity(test.len());
    let mut jaccards: Vec<Vec<f64>> = vec![Vec::new(); NUM_CLASSES - 1];
    for chunk in test.chunks(batch_size) {
        let (input, gt_masks) = batch_inputs(chunk)?;
        let (logits, _) = nn::forward(net, params, &input)?;
        losses.extend(nn::loss::per_sample_losses(&logits, &gt_masks)?);
        let preds = nn::predictions(&logits)?;
        for (pred, gt) in preds.iter().zip(&gt_masks) {
            accuracies.push(pixel_accuracy(pred, gt)?);
            for class in 1..NUM_CLASSES as u8 {
                if let Some(j) = jaccard(pred, gt, class)? {
                    jaccards[usize::from(class) - 1].push(j);
                }
            }
        }
    }
    let per_class_jaccard = jaccards
        .into_iter()
        .map(|mut scores| {
            if scores.is_empty() {
                None
            } else {
                Some(stable_mean(&mut scores))
            }
        })
        .collect();
    Ok(EvalReport {
        loss: stable_mean(&mut losses),
        accuracy: stable_mean(&mut accuracies),
        per_class_jaccard,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::generate_synthetic;
    use crate::rng::stream;
    use crate::unet::{build, ArchConfig};

    #[test]
    fn identical_masks_score_perfectly() {
        let m = Mask::new(2, 3, vec![0, 1, 2, 3, 4, 1]).unwrap();
        assert_eq!(pixel_accuracy(&m, &m).unwrap(), 1.0);
        for class in 0..5 {
            assert_eq!(jaccard(&m, &m, class).unwrap(), Some(1.0));
        }
    }

    #[test]
    fn complementary_binary_masks_score_zero() {
        let a = Mask::new(2, 2, vec![0, 1, 0, 1]).unwrap();
        let b = Mask::new(2, 2, vec![1, 0, 1, 0]).unwrap();
        assert_eq!(pixel_accuracy(&a, &b).unwrap(), 0.0);
        assert_eq!(jaccard(&a, &b, 1).unwrap(), Some(0.0));
    }

    #[test]
    fn two_by_two_hand_counts() {
        let pred = Mask::new(2, 2, vec![1, 1, 0, 0]).unwrap();
        let gt = Mask::new(2, 2, vec![1, 0, 1, 0]).unwrap();
        // Matches at (0,0) and (1,1): accuracy 2/4.
        assert!((pixel_accuracy(&pred, &gt).unwrap() - 0.5).abs() < 1e-15);
        // Class 1: intersection {(0,0)}, union {(0,0),(0,1),(1,0)}.
        let j = jaccard(&pred, &gt, 1).unwrap().unwrap();
        assert!((j - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn absent_class_is_undefined_not_zero() {
        let a = Mask::filled(3, 3, 0).unwrap();
        let b = Mask::filled(3, 3, 0).unwrap();
        assert_eq!(jaccard(&a, &b, 2).unwrap(), None);
        // Present in ground truth only: defined, and zero.
        let c = Mask::new(3, 3, vec![0, 0, 0, 0, 2, 0, 0, 0, 0]).unwrap();
        assert_eq!(jaccard(&a, &c, 2).unwrap(), Some(0.0));
    }

    #[test]
    fn both_metrics_are_symmetric() {
        let mut rng = stream(3, "metrics", 0);
        use rand::Rng;
        let data_a: Vec<u8> = (0..48).map(|_| rng.gen_range(0..5)).collect();
        let data_b: Vec<u8> = (0..48).map(|_| rng.gen_range(0..5)).collect();
        let a = Mask::new(6, 8, data_a).unwrap();
        let b = Mask::new(6, 8, data_b).unwrap();
        assert_eq!(
            pixel_accuracy(&a, &b).unwrap().to_bits(),
            pixel_accuracy(&b, &a).unwrap().to_bits()
        );
        for class in 0..5 {
            assert_eq!(jaccard(&a, &b, class).unwrap(), jaccard(&b, &a, class).unwrap());
        }
    }

    #[test]
    fn dim_mismatch_is_a_data_error() {
        let a = Mask::filled(2, 2, 0).unwrap();
        let b = Mask::filled(2, 3, 0).unwrap();
        assert!(matches!(pixel_accuracy(&a, &b), Err(SplitFedError::Data(_))));
        assert!(matches!(jaccard(&a, &b, 1), Err(SplitFedError::Data(_))));
    }

    #[test]
    fn untrained_model_reports_valid_ranges() {
        let unet = build(&ArchConfig {
            input_size: 16,
            encoder_filters: vec![4],
            bottleneck_filters: 6,
            ..ArchConfig::default()
        })
        .unwrap();
        let params = unet.network.init_params(5).unwrap();
        let test = generate_synthetic(6, 5, 16, 16).unwrap();
        let report = evaluate_global(&unet.network, &params, &test, 2).unwrap();
        assert!(report.loss.is_finite() && report.loss > 0.0);
        assert!((0.0..=1.0).contains(&report.accuracy));
        for j in report.per_class_jaccard.iter().flatten() {
            assert!((0.0..=1.0).contains(j));
        }
        assert!(evaluate_global(&unet.network, &params, &[], 2).is_err());
    }

    #[test]
    fn report_matches_an_independent_recount() {
        // Recompute accuracy and one class's Jaccard from the model's own
        // predictions, sample by sample, without the report plumbing.
        let unet = build(&ArchConfig {
            input_size: 16,
            encoder_filters: vec![4],
            bottleneck_filters: 6,
            ..ArchConfig::default()
        })
        .unwrap();
        let params = unet.network.init_params(9).unwrap();
        let test = generate_synthetic(10, 3, 16, 16).unwrap();
        let report = evaluate_global(&unet.network, &params, &test, 3).unwrap();

        // One forward over the same batch the report used (batchnorm sees
        // the batch), then recount the metrics per sample by hand.
        let (input, gts) = batch_inputs(&test).unwrap();
        let (logits, _) = nn::forward(&unet.network, &params, &input).unwrap();
        let preds = nn::predictions(&logits).unwrap();
        let mut acc_sum = 0.0;
        let mut zp_scores = Vec::new();
        for (pred, gt) in preds.iter().zip(&gts) {
            let mut hits = 0usize;
            let mut inter = 0usize;
            let mut union = 0usize;
            for (p, g) in pred.data().iter().zip(gt.data()) {
                hits += usize::from(p == g);
                inter += usize::from(*p == 1 && *g == 1);
                union += usize::from(*p == 1 || *g == 1);
            }
            acc_sum += hits as f64 / 256.0;
            if union > 0 {
                zp_scores.push(inter as f64 / union as f64);
            }
        }
        assert!((report.accuracy - acc_sum / 3.0).abs() < 1e-12);
        let zp = report.class_jaccard(1).unwrap();
        let want = zp_scores.iter().sum::<f64>() / zp_scores.len() as f64;
        assert!((zp - want).abs() < 1e-12);
    }

    #[test]
    fn constant_background_model_scores_the_background_share() {
        // A model that always answers background: accuracy must equal the
        // mean background share of the ground truth.
        let test = generate_synthetic(15, 4, 16, 16).unwrap();
        let mut acc = 0.0;
        for sample in &test {
            let pred = Mask::filled(16, 16, 0).unwrap();
            acc += pixel_accuracy(&pred, &sample.mask).unwrap();
        }
        acc /= test.len() as f64;
        let share: f64 =
            test.iter().map(|s| s.mask.class_share(0)).sum::<f64>() / test.len() as f64;
        assert!((acc - share).abs() < 1e-12);
    }
}
