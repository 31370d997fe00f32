/// Patience-based stopping on a score that should increase.
#[derive(Debug, Clone, PartialEq)]
pub struct EarlyStopping {
    patience: usize,
    best: Option<(usize, f64)>,
    stale: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Verdict {
    pub improved: bool,
    pub stop: bool,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best: None,
            stale: 0,
        }
    }

    /// Records the score of `epoch` (1-based). Only strict improvements reset
    /// the patience counter.
    pub fn update(&mut self, epoch: usize, score: f64) -> Verdict {
        let improved = self.best.is_none_or(|(_, b)| score > b);
        if improved {
            self.best = Some((epoch, score));
            self.stale = 0;
        } else {
            self.stale += 1;
        }
        Verdict {
            improved,
            stop: self.stale >= self.patience,
        }
    }

    pub fn best_epoch(&self) -> Option<usize> {
        self.best.map(|(e, _)| e)
    }

    pub fn best_score(&self) -> Option<f64> {
        self.best.map(|(_, s)| s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plateau_stops_after_patience() {
        let mut es = EarlyStopping::new(3);
        let scores = [0.5, 0.6, 0.6, 0.6, 0.6, 0.9];
        let mut stopped_at = None;
        for (i, &s) in scores.iter().enumerate() {
            if es.update(i + 1, s).stop {
                stopped_at = Some(i + 1);
                break;
            }
        }
        assert_eq!(stopped_at, Some(5));
        assert_eq!(es.best_epoch(), Some(2));
        assert_eq!(es.best_score(), Some(0.6));
    }

    #[test]
    fn improvements_reset_the_counter() {
        let mut es = EarlyStopping::new(2);
        assert!(!es.update(1, 0.1).stop);
        assert!(!es.update(2, 0.1).stop);
        assert!(!es.update(3, 0.2).stop);
        assert!(!es.update(4, 0.2).stop);
        assert!(es.update(5, 0.1).stop);
        assert_eq!(es.best_epoch(), Some(3));
    }
}
