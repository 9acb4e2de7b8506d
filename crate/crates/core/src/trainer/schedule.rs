/// Learning-rate halving and early stopping driven by the dev FER.
///
/// After each epoch the relative improvement over the best FER seen so far is
/// compared with the threshold; below it, the learning rate halves. Training
/// stops once `patience` consecutive epochs fail to beat the best FER, or at
/// `max_epochs`. The first epoch only sets the reference.
#[derive(Clone, Debug, PartialEq)]
pub struct Schedule {
    eta: f64,
    threshold: f64,
    patience: usize,
    max_epochs: usize,
    epoch: usize,
    best: Option<f64>,
    stale: usize,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Decision {
    /// Learning rate that was used for the epoch just observed.
    pub eta: f64,
    pub next_eta: f64,
    pub improved: bool,
    pub halved: bool,
    pub stop: bool,
}

impl Schedule {
    pub fn new(eta0: f64, threshold: f64, patience: usize, max_epochs: usize) -> Self {
        Schedule { eta: eta0, threshold, patience, max_epochs, epoch: 0, best: None, stale: 0 }
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn best(&self) -> Option<f64> {
        self.best
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn observe(&mut self, dev_fer: f64) -> Decision {
        self.epoch += 1;
        let eta = self.eta;
        let (improved, halved) = match self.best {
            None => (true, false),
            Some(best) => {
                let rel = if best > 0.0 { (best - dev_fer) / best } else { 0.0 };
                (dev_fer < best, rel < self.threshold)
            }
        };
        if improved {
            self.best = Some(dev_fer);
            self.stale = 0;
        } else {
            self.stale += 1;
        }
        if halved {
            self.eta /= 2.0;
        }
        let stop = self.stale >= self.patience || self.epoch >= self.max_epochs;
        Decision { eta, next_eta: self.eta, improved, halved, stop }
    }
}
