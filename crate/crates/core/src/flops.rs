use serde::Serialize;
use std::ops::AddAssign;

/// Work categories reported by the compression driver.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Phase {
    Sampling,
    Extraction,
    Id,
    Qr,
    Orthogonalize,
    ComputeSamples,
    ReduceSamples,
}

impl Phase {
    pub const ALL: [Phase; 7] = [
        Phase::Sampling,
        Phase::Extraction,
        Phase::Id,
        Phase::Qr,
        Phase::Orthogonalize,
        Phase::ComputeSamples,
        Phase::ReduceSamples,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Phase::Sampling => "sampling",
            Phase::Extraction => "extraction",
            Phase::Id => "id",
            Phase::Qr => "qr",
            Phase::Orthogonalize => "orthogonalize",
            Phase::ComputeSamples => "compute_samples",
            Phase::ReduceSamples => "reduce_samples",
        }
    }
}

/// Exact integer flop counters, one per [`Phase`].
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct PhaseFlops {
    pub sampling: u64,
    pub extraction: u64,
    pub id: u64,
    pub qr: u64,
    pub orthogonalize: u64,
    pub compute_samples: u64,
    pub reduce_samples: u64,
}

impl PhaseFlops {
    pub fn add(&mut self, phase: Phase, flops: u64) {
        *self.slot(phase) += flops;
    }

    pub fn get(&self, phase: Phase) -> u64 {
        match phase {
            Phase::Sampling => self.sampling,
            Phase::Extraction => self.extraction,
            Phase::Id => self.id,
            Phase::Qr => self.qr,
            Phase::Orthogonalize => self.orthogonalize,
            Phase::ComputeSamples => self.compute_samples,
            Phase::ReduceSamples => self.reduce_samples,
        }
    }

    fn slot(&mut self, phase: Phase) -> &mut u64 {
        match phase {
            Phase::Sampling => &mut self.sampling,
            Phase::Extraction => &mut self.extraction,
            Phase::Id => &mut self.id,
            Phase::Qr => &mut self.qr,
            Phase::Orthogonalize => &mut self.orthogonalize,
            Phase::ComputeSamples => &mut self.compute_samples,
            Phase::ReduceSamples => &mut self.reduce_samples,
        }
    }

    pub fn total(&self) -> u64 {
        Phase::ALL.iter().map(|&p| self.get(p)).sum()
    }
}

impl AddAssign for PhaseFlops {
    fn add_assign(&mut self, rhs: Self) {
        for p in Phase::ALL {
            self.add(p, rhs.get(p));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn total_is_phase_sum() {
        let mut f = PhaseFlops::default();
        for (i, p) in Phase::ALL.iter().enumerate() {
            f.add(*p, (i as u64 + 1) * 10);
        }
        assert_eq!(f.total(), 280);
        let mut g = f;
        g += f;
        assert_eq!(g.total(), 560);
        assert_eq!(g.get(Phase::Qr), 80);
    }
}
