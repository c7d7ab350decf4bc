/// Smallest change that counts as an improvement.
pub const MIN_DELTA: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    Minimize,
    Maximize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Observation {
    pub improved: bool,
    pub stop: bool,
}

/// Patience-based early stopping. Epochs are numbered from 1.
#[derive(Clone, Debug)]
pub struct EarlyStopper {
    direction: Direction,
    patience: usize,
    best: Option<f64>,
    best_epoch: usize,
    since_best: usize,
}

impl EarlyStopper {
    pub fn new(direction: Direction, patience: usize) -> Self {
        Self {
            direction,
            patience,
            best: None,
            best_epoch: 0,
            since_best: 0,
        }
    }

    pub fn observe(&mut self, epoch: usize, value: f64) -> Observation {
        let improved = match (self.best, self.direction) {
            (None, _) => true,
            (Some(b), Direction::Minimize) => value <= b - MIN_DELTA,
            (Some(b), Direction::Maximize) => value >= b + MIN_DELTA,
        };
        if improved {
            self.best = Some(value);
            self.best_epoch = epoch;
            self.since_best = 0;
        } else {
            self.since_best += 1;
        }
        Observation {
            improved,
            stop: self.since_best >= self.patience,
        }
    }

    pub fn best(&self) -> Option<f64> {
        self.best
    }

    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }
}

/// Replays `history` through an [`EarlyStopper`] capped at `max_epochs`;
/// returns `(last epoch run, best epoch)`.
pub fn simulate(history: &[f64], direction: Direction, patience: usize, max_epochs: usize) -> (usize, usize) {
    let mut stopper = EarlyStopper::new(direction, patience);
    let mut last = 0;
    for (i, &v) in history.iter().take(max_epochs).enumerate() {
        last = i + 1;
        if stopper.observe(last, v).stop {
            break;
        }
    }
    (last, stopper.best_epoch())
}
