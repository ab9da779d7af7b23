use serde::{Deserialize, Serialize};

/// Hidden widths of the full model together with a pruning rate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WidthSchedule {
    pub base_widths: Vec<usize>,
    pub rate: f64,
}

impl WidthSchedule {
    pub fn new(base_widths: Vec<usize>, rate: f64) -> Self {
        Self { base_widths, rate }
    }

    /// `max(1, round((1 − ρ) · w))` per hidden layer.
    pub fn pruned_widths(&self) -> Vec<usize> {
        self.base_widths
            .iter()
            .map(|&w| (((1.0 - self.rate) * w as f64).round() as usize).max(1))
            .collect()
    }
}

/// Full dims chain `[input, hidden..., classes]` of the pruned model. Input and
/// output dims are never pruned.
pub fn make_submodel_shape(schedule: &WidthSchedule, input_dim: usize, classes: usize) -> Vec<usize> {
    std::iter::once(input_dim)
        .chain(schedule.pruned_widths())
        .chain(std::iter::once(classes))
        .collect()
}
