use rand::Rng;

/// Categorical distribution over actions, built from unnormalised logits.
#[derive(Debug, Clone, PartialEq)]
pub struct Categorical {
    log_probs: Vec<f64>,
    probs: Vec<f64>,
}

impl Categorical {
    /// Max-subtracted log-softmax, so large logits never overflow.
    pub fn from_logits(logits: &[f64]) -> Self {
        assert!(!logits.is_empty(), "categorical needs at least one logit");
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let log_z = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
        let log_probs: Vec<f64> = logits.iter().map(|l| l - log_z).collect();
        let probs = log_probs.iter().map(|l| l.exp()).collect();
        Self { log_probs, probs }
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn log_probs(&self) -> &[f64] {
        &self.log_probs
    }

    pub fn log_prob(&self, action: usize) -> f64 {
        self.log_probs[action]
    }

    pub fn entropy(&self) -> f64 {
        -self
            .probs
            .iter()
            .zip(&self.log_probs)
            .map(|(p, l)| if *p > 0.0 { p * l } else { 0.0 })
            .sum::<f64>()
    }

    /// Lowest-index maximiser.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, l) in self.log_probs.iter().enumerate() {
            if *l > self.log_probs[best] {
                best = i;
            }
        }
        best
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        for (i, p) in self.probs.iter().enumerate() {
            acc += p;
            if u < acc {
                return i;
            }
        }
        // rounding left `acc` slightly below 1
        self.probs
            .iter()
            .rposition(|p| *p > 0.0)
            .unwrap_or(self.probs.len() - 1)
    }
}
