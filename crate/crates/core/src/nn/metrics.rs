use serde::{Deserialize, Serialize};

use crate::doppler::GestureClass;

const K: usize = GestureClass::COUNT;

/// 6x6 counts; rows are the true class, columns the prediction, both in
/// `[LR, RL, P, B, UD, DU]` order.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    counts: [[u64; K]; K],
}

impl ConfusionMatrix {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_counts(counts: [[u64; K]; K]) -> Self {
        Self { counts }
    }

    pub fn record(&mut self, truth: usize, predicted: usize) {
        self.counts[truth][predicted] += 1;
    }

    pub fn counts(&self) -> &[[u64; K]; K] {
        &self.counts
    }

    pub fn get(&self, truth: GestureClass, predicted: GestureClass) -> u64 {
        self.counts[truth.index()][predicted.index()]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn row_sums(&self) -> [u64; K] {
        self.counts.map(|r| r.iter().sum())
    }

    pub fn accuracy(&self) -> f64 {
        let total = self.total();
        if total == 0 {
            return 0.0;
        }
        let trace: u64 = (0..K).map(|i| self.counts[i][i]).sum();
        trace as f64 / total as f64
    }

    /// Per-class precision; classes never predicted get 0.
    pub fn precision(&self) -> [f64; K] {
        std::array::from_fn(|j| {
            let col: u64 = (0..K).map(|i| self.counts[i][j]).sum();
            if col == 0 {
                0.0
            } else {
                self.counts[j][j] as f64 / col as f64
            }
        })
    }

    /// Per-class recall; absent classes get 0.
    pub fn recall(&self) -> [f64; K] {
        let rows = self.row_sums();
        std::array::from_fn(|i| {
            if rows[i] == 0 {
                0.0
            } else {
                self.counts[i][i] as f64 / rows[i] as f64
            }
        })
    }

    /// Share of the examples of classes `a` and `b` that were predicted as
    /// the other one of the pair.
    pub fn pair_cross_error(&self, a: GestureClass, b: GestureClass) -> f64 {
        let cross = self.get(a, b) + self.get(b, a);
        let rows = self.row_sums();
        let n = rows[a.index()] + rows[b.index()];
        if n == 0 {
            0.0
        } else {
            cross as f64 / n as f64
        }
    }
}

impl std::fmt::Display for ConfusionMatrix {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:>4}", "")?;
        for g in GestureClass::ALL {
            write!(f, "{:>6}", g.code())?;
        }
        writeln!(f)?;
        for g in GestureClass::ALL {
            write!(f, "{:>4}", g.code())?;
            for c in self.counts[g.index()] {
                write!(f, "{c:>6}")?;
            }
            writeln!(f)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_and_constant_predictors() {
        let mut perfect = ConfusionMatrix::new();
        let mut constant = ConfusionMatrix::new();
        for (i, n) in [3usize, 1, 2, 4, 5, 5].iter().enumerate() {
            for _ in 0..*n {
                perfect.record(i, i);
                constant.record(i, 2);
            }
        }
        assert_eq!(perfect.accuracy(), 1.0);
        for i in 0..K {
            for j in 0..K {
                if i != j {
                    assert_eq!(perfect.counts()[i][j], 0);
                }
            }
        }
        assert!((constant.accuracy() - 2.0 / 20.0).abs() < 1e-15);
        let nonzero_cols: Vec<usize> = (0..K)
            .filter(|&j| (0..K).any(|i| constant.counts()[i][j] > 0))
            .collect();
        assert_eq!(nonzero_cols, vec![2]);
        assert_eq!(constant.row_sums(), [3, 1, 2, 4, 5, 5]);
        assert_eq!(constant.recall()[2], 1.0);
        assert_eq!(constant.precision()[2], 0.1);
    }

    #[test]
    fn cross_error_of_a_pair() {
        let mut m = ConfusionMatrix::new();
        let (ud, du) = (
            GestureClass::SwipeDown.index(),
            GestureClass::SwipeUp.index(),
        );
        for _ in 0..5 {
            m.record(ud, du);
            m.record(du, du);
        }
        for _ in 0..5 {
            m.record(ud, ud);
            m.record(du, ud);
        }
        assert_eq!(
            m.pair_cross_error(GestureClass::SwipeDown, GestureClass::SwipeUp),
            0.5
        );
    }
}
