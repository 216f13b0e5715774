//! Per-node state fields and global conditioning parameters.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Node-major `n_nodes × n_channels` values at one instant.
#[derive(Debug, Clone, PartialEq)]
pub struct StateField {
    values: Vec<f64>,
    n_channels: usize,
    channels: Vec<String>,
    pub time: f64,
}

impl StateField {
    pub fn new(values: Vec<f64>, channels: Vec<String>, time: f64) -> Result<Self> {
        let n_channels = channels.len();
        if n_channels == 0 {
            return Err(invalid("a field needs at least one channel"));
        }
        if values.len() % n_channels != 0 {
            return Err(invalid(format!(
                "{} values do not divide into {} channels",
                values.len(),
                n_channels
            )));
        }
        if let Some(k) = values.iter().position(|v| !v.is_finite()) {
            return Err(invalid(format!(
                "non-finite value at node {} channel {}",
                k / n_channels,
                k % n_channels
            )));
        }
        Ok(Self {
            values,
            n_channels,
            channels,
            time,
        })
    }

    /// Builds a field from values that are known to be finite and well-shaped.
    pub(crate) fn from_parts(values: Vec<f64>, channels: Vec<String>, time: f64) -> Self {
        debug_assert_eq!(values.len() % channels.len(), 0);
        Self {
            n_channels: channels.len(),
            values,
            channels,
            time,
        }
    }

    pub fn zeros(n_nodes: usize, channels: Vec<String>, time: f64) -> Self {
        Self::from_parts(vec![0.0; n_nodes * channels.len()], channels, time)
    }

    pub fn n_nodes(&self) -> usize {
        self.values.len() / self.n_channels
    }

    pub fn n_channels(&self) -> usize {
        self.n_channels
    }

    pub fn channels(&self) -> &[String] {
        &self.channels
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    #[inline]
    pub fn get(&self, node: usize, channel: usize) -> f64 {
        self.values[node * self.n_channels + channel]
    }

    pub fn node(&self, node: usize) -> &[f64] {
        &self.values[node * self.n_channels..(node + 1) * self.n_channels]
    }

    /// Copy of one channel across all nodes.
    pub fn channel(&self, channel: usize) -> Vec<f64> {
        self.values
            .iter()
            .skip(channel)
            .step_by(self.n_channels)
            .copied()
            .collect()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Same shape and channel names.
    pub fn same_layout(&self, other: &Self) -> bool {
        self.values.len() == other.values.len() && self.channels == other.channels
    }

    pub fn with_values(&self, values: Vec<f64>, time: f64) -> Self {
        Self::from_parts(values, self.channels.clone(), time)
    }
}

/// Named global scalars, e.g. `p_L`, `rho_L`, `dt`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GlobalParams(BTreeMap<String, f64>);

/// Key under which the per-case timestep is stored.
pub const DT_KEY: &str = "dt";

impl GlobalParams {
    pub fn new(values: impl IntoIterator<Item = (String, f64)>) -> Result<Self> {
        let map: BTreeMap<String, f64> = values.into_iter().collect();
        let gp = Self(map);
        gp.validate()?;
        Ok(gp)
    }

    pub fn validate(&self) -> Result<()> {
        for (k, v) in &self.0 {
            if !v.is_finite() {
                return Err(invalid(format!("global parameter {k} is not finite")));
            }
        }
        if let Some(dt) = self.dt() {
            if dt <= 0.0 {
                return Err(invalid(format!("dt must be positive, got {dt}")));
            }
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<f64> {
        self.0.get(key).copied()
    }

    pub fn dt(&self) -> Option<f64> {
        self.get(DT_KEY)
    }

    pub fn insert(&mut self, key: impl Into<String>, value: f64) {
        self.0.insert(key.into(), value);
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Entries in key order.
    pub fn iter(&self) -> impl Iterator<Item = (&str, f64)> {
        self.0.iter().map(|(k, v)| (k.as_str(), *v))
    }

    pub fn keys(&self) -> Vec<String> {
        self.0.keys().cloned().collect()
    }

    /// Values in the order of `keys`; missing keys are an error.
    pub fn vector(&self, keys: &[String]) -> Result<Vec<f64>> {
        keys.iter()
            .map(|k| {
                self.get(k)
                    .ok_or_else(|| invalid(format!("missing global parameter {k}")))
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_shapes_and_values() {
        assert!(StateField::new(vec![1.0, 2.0, 3.0], vec!["a".into(), "b".into()], 0.0).is_err());
        assert!(StateField::new(vec![1.0, f64::NAN], vec!["a".into()], 0.0).is_err());
        let f = StateField::new(vec![1.0, 2.0, 3.0, 4.0], vec!["a".into(), "b".into()], 0.0)
            .unwrap();
        assert_eq!(f.n_nodes(), 2);
        assert_eq!(f.channel(1), vec![2.0, 4.0]);
    }

    #[test]
    fn dt_must_be_positive() {
        assert!(GlobalParams::new([("dt".to_string(), 0.0)]).is_err());
        assert!(GlobalParams::new([("p".to_string(), f64::INFINITY)]).is_err());
        let g = GlobalParams::new([("dt".to_string(), 0.1), ("k".to_string(), 2.0)]).unwrap();
        assert_eq!(g.dt(), Some(0.1));
        assert_eq!(g.keys(), vec!["dt", "k"]);
    }
}
