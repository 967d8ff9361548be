/// Step learning-rate decay: `initial * factor^floor((epoch-1)/every)` for
/// 1-based epochs, so the first decayed epoch is `every + 1`.
#[derive(Debug, Clone, Copy)]
pub struct StepDecay {
    pub initial: f64,
    pub factor: f64,
    pub every: usize,
}

impl StepDecay {
    pub fn new(initial: f64, factor: f64, every: usize) -> Self {
        assert!(every >= 1, "decay interval must be >= 1");
        Self {
            initial,
            factor,
            every,
        }
    }

    pub fn lr_at(&self, epoch: usize) -> f64 {
        assert!(epoch >= 1, "epochs are 1-based");
        self.initial * self.factor.powi(((epoch - 1) / self.every) as i32)
    }
}

/// Stops when the validation loss has not improved for `patience` epochs.
#[derive(Debug)]
pub struct EarlyStopping {
    patience: usize,
    best: f64,
    pub best_epoch: usize,
    since_best: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best: f64::INFINITY,
            best_epoch: 0,
            since_best: 0,
        }
    }

    /// Records one epoch's validation loss. Returns (is_new_best, should_stop).
    pub fn observe(&mut self, epoch: usize, val_loss: f64) -> (bool, bool) {
        if val_loss < self.best {
            self.best = val_loss;
            self.best_epoch = epoch;
            self.since_best = 0;
            (true, false)
        } else {
            self.since_best += 1;
            (false, self.since_best >= self.patience)
        }
    }

    pub fn best_loss(&self) -> f64 {
        self.best
    }
}
