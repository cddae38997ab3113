use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::b_cubed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub chosen: usize,
    /// Mean pairwise B³ F1 of each run against the others.
    pub scores: Vec<f64>,
}

/// B³ F1 between two clusterings with neither as gold, averaged over both
/// directions.
pub fn pairwise_consistency(a: &[usize], b: &[usize]) -> Result<f64> {
    let ab = b_cubed(b, a, None)?.f1;
    let ba = b_cubed(a, b, None)?.f1;
    Ok((ab + ba) / 2.0)
}

/// Picks the run whose assignments agree best, on average, with every
/// other run. Ties go to the lowest index.
pub fn select_consistent(assignments: &[Vec<usize>]) -> Result<Selection> {
    let k = assignments.len();
    if k < 2 {
        return Err(Error::invalid("selection needs at least two runs"));
    }
    if assignments.iter().any(|a| a.len() != assignments[0].len()) {
        return Err(Error::invalid("run assignments are not aligned"));
    }
    let mut pair = vec![vec![0.0; k]; k];
    for i in 0..k {
        for j in i + 1..k {
            let f = pairwise_consistency(&assignments[i], &assignments[j])?;
            pair[i][j] = f;
            pair[j][i] = f;
        }
    }
    let scores: Vec<f64> = (0..k)
        .map(|i| (0..k).filter(|&j| j != i).map(|j| pair[i][j]).sum::<f64>() / (k - 1) as f64)
        .collect();
    let mut chosen = 0;
    for (i, &s) in scores.iter().enumerate() {
        if s > scores[chosen] {
            chosen = i;
        }
    }
    Ok(Selection { chosen, scores })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_runs_pick_first() {
        let a = vec![0, 0, 1, 2, 2];
        let s = select_consistent(&vec![a; 5]).unwrap();
        assert_eq!(s.chosen, 0);
        assert!(s.scores.iter().all(|&x| (x - 1.0).abs() < 1e-15));
    }

    #[test]
    fn two_runs_tie() {
        let s = select_consistent(&[vec![0, 0, 1, 1], vec![0, 1, 0, 1]]).unwrap();
        assert_eq!(s.chosen, 0);
        assert_eq!(s.scores[0], s.scores[1]);
    }

    #[test]
    fn needs_aligned_runs() {
        assert!(select_consistent(&[vec![0, 1]]).is_err());
        assert!(select_consistent(&[vec![0, 1], vec![0]]).is_err());
    }

    #[test]
    fn direction_average_is_symmetric() {
        let a = [0, 0, 0, 1, 1, 2];
        let b = [3, 3, 4, 4, 4, 4];
        let x = pairwise_consistency(&a, &b).unwrap();
        let y = pairwise_consistency(&b, &a).unwrap();
        assert_eq!(x, y);
    }
}
