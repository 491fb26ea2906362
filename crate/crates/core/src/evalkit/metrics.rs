//! Classification, multi-label and regression scores.
//!
//! A `None` prediction is an unparseable output: it is wrong for every class
//! metric and costs `|gt|` in the age error.

use std::collections::BTreeSet;

use serde::Serialize;

use crate::error::{Error, Result};

pub const DISFA_AUS: [u32; 8] = [1, 2, 4, 6, 9, 12, 25, 26];
pub const BP4D_AUS: [u32; 12] = [1, 2, 4, 6, 7, 10, 12, 14, 15, 17, 23, 24];

fn check_aligned(a: usize, b: usize) -> Result<()> {
    if a == 0 {
        return Err(Error::EmptyInput("no samples to score".into()));
    }
    if a != b {
        return Err(Error::ShapeMismatch(format!("{a} predictions for {b} ground truths")));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct UarWar {
    pub uar: f64,
    pub war: f64,
}

/// Counts indexed `[gt][pred]`; the extra last column holds unmatched
/// predictions.
pub fn confusion_matrix(preds: &[Option<usize>], gts: &[usize], num_classes: usize) -> Result<Vec<Vec<usize>>> {
    check_aligned(preds.len(), gts.len())?;
    let mut m = vec![vec![0usize; num_classes + 1]; num_classes];
    for (p, &g) in preds.iter().zip(gts) {
        if g >= num_classes || p.is_some_and(|p| p >= num_classes) {
            return Err(Error::InvalidRecord(format!("class index out of range for {num_classes} classes")));
        }
        m[g][p.unwrap_or(num_classes)] += 1;
    }
    Ok(m)
}

/// UAR averages per-class recall over classes present in `gts`; WAR weights
/// each recall by its class frequency.
pub fn compute_uar_war(preds: &[Option<usize>], gts: &[usize], num_classes: usize) -> Result<UarWar> {
    let m = confusion_matrix(preds, gts, num_classes)?;
    let n = gts.len() as f64;
    let mut recall_sum = 0.0;
    let mut present = 0usize;
    let mut war = 0.0;
    for (c, row) in m.iter().enumerate() {
        let support: usize = row.iter().sum();
        if support == 0 {
            continue;
        }
        let recall = row[c] as f64 / support as f64;
        recall_sum += recall;
        present += 1;
        war += support as f64 / n * recall;
    }
    Ok(UarWar {
        uar: recall_sum / present as f64,
        war,
    })
}

pub fn accuracy(preds: &[Option<usize>], gts: &[usize]) -> Result<f64> {
    check_aligned(preds.len(), gts.len())?;
    let hits = preds.iter().zip(gts).filter(|(p, g)| **p == Some(**g)).count();
    Ok(hits as f64 / gts.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct F1Report {
    pub per_au: Vec<(u32, f64)>,
    pub mean: f64,
}

/// Binary F1 per listed AU; an AU with no true positives scores 0.
pub fn compute_avg_f1(preds: &[BTreeSet<u32>], gts: &[BTreeSet<u32>], au_list: &[u32]) -> Result<F1Report> {
    check_aligned(preds.len(), gts.len())?;
    if au_list.is_empty() {
        return Err(Error::EmptyInput("AU list is empty".into()));
    }
    let per_au: Vec<(u32, f64)> = au_list
        .iter()
        .map(|&au| {
            let (mut tp, mut fp, mut fneg) = (0usize, 0usize, 0usize);
            for (p, g) in preds.iter().zip(gts) {
                match (p.contains(&au), g.contains(&au)) {
                    (true, true) => tp += 1,
                    (true, false) => fp += 1,
                    (false, true) => fneg += 1,
                    (false, false) => {}
                }
            }
            let f1 = if tp == 0 {
                0.0
            } else {
                2.0 * tp as f64 / (2 * tp + fp + fneg) as f64
            };
            (au, f1)
        })
        .collect();
    let mean = per_au.iter().map(|(_, f)| f).sum::<f64>() / per_au.len() as f64;
    Ok(F1Report { per_au, mean })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MaeReport {
    pub mae: f64,
    pub parse_failure_rate: f64,
}

pub fn compute_mae(preds: &[Option<i64>], gts: &[i64]) -> Result<MaeReport> {
    check_aligned(preds.len(), gts.len())?;
    let mut total = 0.0;
    let mut failures = 0usize;
    for (p, &g) in preds.iter().zip(gts) {
        total += match p {
            Some(p) => (p - g).abs() as f64,
            None => {
                failures += 1;
                g.abs() as f64
            }
        };
    }
    let n = gts.len() as f64;
    Ok(MaeReport {
        mae: total / n,
        parse_failure_rate: failures as f64 / n,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AttributeReport {
    pub per_attribute: Vec<(String, f64)>,
    pub mean: f64,
}

/// `preds` name the attributes predicted positive; `gts` are binary vectors
/// aligned with `attributes`.
pub fn compute_mean_attr_accuracy(
    preds: &[BTreeSet<String>],
    gts: &[Vec<bool>],
    attributes: &[String],
) -> Result<AttributeReport> {
    check_aligned(preds.len(), gts.len())?;
    if attributes.is_empty() {
        return Err(Error::EmptyInput("attribute list is empty".into()));
    }
    let mut positive = vec![vec![false; attributes.len()]; preds.len()];
    for (row, p) in positive.iter_mut().zip(preds) {
        for name in p {
            let i = attributes
                .iter()
                .position(|a| a == name)
                .ok_or_else(|| Error::UnknownAttribute(name.clone()))?;
            row[i] = true;
        }
    }
    if let Some(g) = gts.iter().find(|g| g.len() != attributes.len()) {
        return Err(Error::ShapeMismatch(format!(
            "ground-truth vector has {} entries for {} attributes",
            g.len(),
            attributes.len()
        )));
    }
    let n = preds.len() as f64;
    let per_attribute: Vec<(String, f64)> = attributes
        .iter()
        .enumerate()
        .map(|(i, a)| {
            let hits = positive.iter().zip(gts).filter(|(p, g)| p[i] == g[i]).count();
            (a.clone(), hits as f64 / n)
        })
        .collect();
    let mean = per_attribute.iter().map(|(_, v)| v).sum::<f64>() / per_attribute.len() as f64;
    Ok(AttributeReport { per_attribute, mean })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uar_war_examples() {
        let perfect = compute_uar_war(&[Some(0), Some(1), Some(2)], &[0, 1, 2], 3).unwrap();
        assert_eq!((perfect.uar, perfect.war), (1.0, 1.0));
        // gts [A,A,B], preds [A,B,B]
        let r = compute_uar_war(&[Some(0), Some(1), Some(1)], &[0, 0, 1], 2).unwrap();
        assert!((r.uar - 0.75).abs() < 1e-15);
        assert!((r.war - 2.0 / 3.0).abs() < 1e-15);
        let constant = compute_uar_war(&[Some(1); 4], &[0, 0, 1, 1], 2).unwrap();
        assert_eq!(constant.uar, 0.5);
        let none = compute_uar_war(&[None, Some(0)], &[0, 0], 2).unwrap();
        assert_eq!((none.uar, none.war), (0.5, 0.5));
    }

    #[test]
    fn empty_and_misaligned() {
        assert!(matches!(compute_uar_war(&[], &[], 2), Err(Error::EmptyInput(_))));
        assert!(matches!(compute_mae(&[Some(1)], &[1, 2]), Err(Error::ShapeMismatch(_))));
        assert!(compute_avg_f1(&[], &[], &DISFA_AUS).is_err());
        assert!(compute_uar_war(&[Some(5)], &[0], 2).is_err());
    }

    #[test]
    fn confusion_layout() {
        let m = confusion_matrix(&[Some(0), None, Some(0)], &[0, 1, 1], 2).unwrap();
        assert_eq!(m, vec![vec![1, 0, 0], vec![1, 0, 1]]);
    }

    #[test]
    fn f1_examples() {
        let s = |v: &[u32]| v.iter().copied().collect::<BTreeSet<u32>>();
        let gts = vec![s(&[1, 2]), s(&[1]), s(&[]), s(&[2, 4])];
        let same = compute_avg_f1(&gts, &gts, &[1, 2, 4]).unwrap();
        assert_eq!(same.mean, 1.0);
        let empty = compute_avg_f1(&vec![s(&[]); 4], &gts, &[1, 2, 4]).unwrap();
        assert_eq!(empty.mean, 0.0);
        // AU1: tp 1 fp 1 fn 1; AU2: tp 1 fp 0 fn 1; AU4: tp 0 fp 1 fn 1
        let preds = vec![s(&[1, 2]), s(&[4]), s(&[1]), s(&[])];
        let r = compute_avg_f1(&preds, &gts, &[1, 2, 4]).unwrap();
        assert_eq!(r.per_au, vec![(1, 0.5), (2, 2.0 / 3.0), (4, 0.0)]);
        assert!((r.mean - (0.5 + 2.0 / 3.0) / 3.0).abs() < 1e-15);
    }

    #[test]
    fn mae_examples() {
        assert_eq!(compute_mae(&[Some(3), Some(9)], &[3, 9]).unwrap().mae, 0.0);
        assert_eq!(compute_mae(&[Some(20), Some(30)], &[25, 25]).unwrap().mae, 5.0);
        let r = compute_mae(&[None, Some(30)], &[40, 30]).unwrap();
        assert_eq!(r.mae, 20.0);
        assert_eq!(r.parse_failure_rate, 0.5);
    }

    #[test]
    fn attribute_examples() {
        let attrs: Vec<String> = ["bald", "male", "young"].iter().map(|s| s.to_string()).collect();
        let set = |v: &[&str]| v.iter().map(|s| s.to_string()).collect::<BTreeSet<_>>();
        let gts = vec![vec![false, true, true], vec![true, true, false], vec![false, false, true]];
        let perfect = compute_mean_attr_accuracy(&[set(&["male", "young"]), set(&["bald", "male"]), set(&["young"])], &gts, &attrs).unwrap();
        assert_eq!(perfect.mean, 1.0);
        let negatives = vec![vec![false; 3]; 3];
        assert_eq!(compute_mean_attr_accuracy(&vec![set(&[]); 3], &negatives, &attrs).unwrap().mean, 1.0);
        // bald 3/3, male 2/3, young 1/3
        let preds = vec![set(&["male"]), set(&["bald", "male", "young"]), set(&["male", "young"])];
        let r = compute_mean_attr_accuracy(&preds, &gts, &attrs).unwrap();
        let acc: Vec<f64> = r.per_attribute.iter().map(|(_, v)| *v).collect();
        assert_eq!(acc, vec![1.0, 2.0 / 3.0, 1.0 / 3.0]);
        assert!(matches!(
            compute_mean_attr_accuracy(&[set(&["hat"])], &[vec![false; 3]], &attrs),
            Err(Error::UnknownAttribute(_))
        ));
    }

    #[test]
    fn uar_invariant_to_class_duplication() {
        let preds = vec![Some(0), Some(1), Some(1), None, Some(2)];
        let gts = vec![0, 0, 1, 2, 2];
        let base = compute_uar_war(&preds, &gts, 3).unwrap();
        let (mut p2, mut g2) = (preds.clone(), gts.clone());
        for (p, g) in preds.iter().zip(&gts) {
            if *g == 2 {
                p2.push(*p);
                g2.push(*g);
            }
        }
        assert!((compute_uar_war(&p2, &g2, 3).unwrap().uar - base.uar).abs() < 1e-15);
    }
}
