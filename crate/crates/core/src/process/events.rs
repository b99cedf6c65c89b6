//! Event-time containers for one unit, one experiment, and many experiments.

use crate::error::{domain, Result};

/// Sorted event times of a single unit on `[0, horizon]`.
#[derive(Debug, Clone, PartialEq)]
pub struct EventStream {
    times: Vec<f64>,
    horizon: f64,
}

impl EventStream {
    /// Builds a stream, sorting the times and dropping exact duplicates so the
    /// result is a simple point process.
    pub fn new(mut times: Vec<f64>, horizon: f64) -> Result<Self> {
        if !(horizon.is_finite() && horizon > 0.0) {
            return domain(format!(
                "horizon must be positive and finite, got {horizon}"
            ));
        }
        if let Some(bad) = times
            .iter()
            .find(|t| !t.is_finite() || **t < 0.0 || **t > horizon)
        {
            return domain(format!("event time {bad} outside [0, {horizon}]"));
        }
        times.sort_by(f64::total_cmp);
        times.dedup();
        Ok(Self { times, horizon })
    }

    pub fn empty(horizon: f64) -> Result<Self> {
        Self::new(Vec::new(), horizon)
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Events strictly before `t`.
    pub fn before(&self, t: f64) -> &[f64] {
        let n = self.times.partition_point(|&s| s < t);
        &self.times[..n]
    }
}

/// The `p` streams recorded during one experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentData {
    streams: Vec<EventStream>,
    horizon: f64,
}

impl ExperimentData {
    pub fn new(streams: Vec<EventStream>) -> Result<Self> {
        let Some(first) = streams.first() else {
            return domain("an experiment needs at least one unit");
        };
        let horizon = first.horizon();
        if streams.iter().any(|s| s.horizon() != horizon) {
            return domain("all streams of an experiment must share one horizon");
        }
        Ok(Self { streams, horizon })
    }

    /// Builds an experiment from raw per-unit time vectors.
    pub fn from_times(times: Vec<Vec<f64>>, horizon: f64) -> Result<Self> {
        let streams = times
            .into_iter()
            .map(|t| EventStream::new(t, horizon))
            .collect::<Result<Vec<_>>>()?;
        Self::new(streams)
    }

    pub fn empty(p: usize, horizon: f64) -> Result<Self> {
        Self::from_times(vec![Vec::new(); p], horizon)
    }

    pub fn num_units(&self) -> usize {
        self.streams.len()
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn streams(&self) -> &[EventStream] {
        &self.streams
    }

    pub fn stream(&self, unit: usize) -> &EventStream {
        &self.streams[unit]
    }

    pub fn total_events(&self) -> usize {
        self.streams.iter().map(EventStream::len).sum()
    }

    /// All events as `(time, unit)` pairs in time order; ties keep unit order.
    pub fn merged(&self) -> Vec<(f64, usize)> {
        let mut all: Vec<(f64, usize)> = self
            .streams
            .iter()
            .enumerate()
            .flat_map(|(u, s)| s.times().iter().map(move |&t| (t, u)))
            .collect();
        all.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        all
    }
}

/// Data from `M` experiments over a common set of `p` units.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiExperimentData {
    experiments: Vec<ExperimentData>,
}

impl MultiExperimentData {
    pub fn new(experiments: Vec<ExperimentData>) -> Result<Self> {
        let Some(first) = experiments.first() else {
            return domain("at least one experiment is required");
        };
        let p = first.num_units();
        if experiments.iter().any(|e| e.num_units() != p) {
            return domain("every experiment must have the same number of units");
        }
        Ok(Self { experiments })
    }

    pub fn num_experiments(&self) -> usize {
        self.experiments.len()
    }

    pub fn num_units(&self) -> usize {
        self.experiments[0].num_units()
    }

    pub fn experiments(&self) -> &[ExperimentData] {
        &self.experiments
    }

    pub fn experiment(&self, m: usize) -> &ExperimentData {
        &self.experiments[m]
    }

    pub fn horizons(&self) -> Vec<f64> {
        self.experiments
            .iter()
            .map(ExperimentData::horizon)
            .collect()
    }

    /// Sum of all experiment horizons.
    pub fn total_horizon(&self) -> f64 {
        self.experiments.iter().map(ExperimentData::horizon).sum()
    }

    pub fn into_experiments(self) -> Vec<ExperimentData> {
        self.experiments
    }
}
