use super::{OpCost, Stage, StageCost};
use crate::hardware::InterposerLink;

/// Moving `bytes` over a link: fixed latency plus serialization.
pub fn transfer_cost(bytes: u64, link: &InterposerLink, energy_per_bit: f64) -> OpCost {
    if bytes == 0 {
        return OpCost::zero();
    }
    let time = link.latency + bytes as f64 / link.bandwidth;
    let mut cost = OpCost::from_stages(
        time,
        [(
            Stage::Transfer,
            StageCost {
                time,
                energy: bytes as f64 * 8.0 * energy_per_bit,
            },
        )],
    );
    cost.bound = super::Bound::MemoryBound;
    cost
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn latency_plus_serialization() {
        let link = InterposerLink {
            bandwidth: 1e9,
            latency: 1e-6,
        };
        let c = transfer_cost(1000, &link, 1e-12);
        assert!((c.latency - 2e-6).abs() < 1e-18);
        assert!((c.energy - 8e-9).abs() < 1e-21);
        assert_eq!(transfer_cost(0, &link, 1.0).latency, 0.0);
    }
}
