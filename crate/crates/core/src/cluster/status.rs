use std::fmt;

use crate::log::majority;

/// Operating mode of one cluster. Both degradations can hold at once.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash)]
pub struct DegradedStatus {
    /// A majority of the cluster's masters is down or cut off: the last
    /// committed configuration stays in force and nothing is rescheduled.
    pub no_quorum: bool,
    /// The WAN is partitioned: edge topics buffer and bridges stall.
    pub wan_down: bool,
}

impl DegradedStatus {
    pub fn is_normal(self) -> bool {
        !self.no_quorum && !self.wan_down
    }
}

impl fmt::Display for DegradedStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (self.no_quorum, self.wan_down) {
            (false, false) => f.write_str("normal"),
            (true, false) => f.write_str("degraded_no_quorum"),
            (false, true) => f.write_str("degraded_wan_down"),
            (true, true) => f.write_str("degraded_no_quorum+degraded_wan_down"),
        }
    }
}

/// Mode of a cluster given how many of its masters can reach each other and
/// whether the WAN is up.
pub fn degraded_mode_status(
    masters_reachable: usize,
    masters_total: usize,
    wan_partitioned: bool,
) -> DegradedStatus {
    DegradedStatus {
        no_quorum: masters_total > 0 && masters_reachable < majority(masters_total),
        wan_down: wan_partitioned,
    }
}
