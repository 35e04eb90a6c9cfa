//! Throughput, power and area calculator for a single core.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Technology {
    Pcm,
    Sram,
}

/// One read-timing mode. `t_ratio` is `None` for cores with a single timing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeBudget {
    pub t_ratio: Option<u32>,
    pub ops_per_clk: f64,
    pub digital_power_w: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AreaBudget {
    pub crossbar: f64,
    pub sensing: f64,
    pub digital: f64,
    pub bn_memory: f64,
}

impl AreaBudget {
    pub fn total(&self) -> f64 {
        self.crossbar + self.sensing + self.digital + self.bn_memory
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentBudget {
    pub label: Technology,
    pub clock_hz: f64,
    pub modes: Vec<ModeBudget>,
    pub read_power_per_weight_w: f64,
    pub total_read_power_w: f64,
    pub area_mm2: AreaBudget,
}

impl ComponentBudget {
    pub fn validate(&self) -> Result<()> {
        let a = &self.area_mm2;
        let mut vals = vec![
            ("clock_hz", self.clock_hz),
            ("read_power_per_weight_w", self.read_power_per_weight_w),
            ("total_read_power_w", self.total_read_power_w),
            ("area.crossbar", a.crossbar),
            ("area.sensing", a.sensing),
            ("area.digital", a.digital),
            ("area.bn_memory", a.bn_memory),
        ];
        for m in &self.modes {
            vals.push(("ops_per_clk", m.ops_per_clk));
            vals.push(("digital_power_w", m.digital_power_w));
        }
        if let Some((k, v)) = vals.iter().find(|(_, v)| !v.is_finite() || *v < 0.0) {
            return Err(Error::config(format!("budget entry {k} = {v} must be finite and >= 0")));
        }
        if self.modes.is_empty() {
            return Err(Error::config("budget has no modes"));
        }
        if self.area_mm2.total() <= 0.0 {
            return Err(Error::config("budget has zero area"));
        }
        Ok(())
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let b: Self = serde_json::from_str(s)?;
        b.validate()?;
        Ok(b)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let p = path.as_ref();
        let s = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
        Self::from_json_str(&s)
    }

    /// The requested mode; a single untimed mode answers every request.
    pub fn mode(&self, t_ratio: Option<u32>) -> Result<&ModeBudget> {
        if let [only] = self.modes.as_slice() {
            if only.t_ratio.is_none() || t_ratio.is_none() || only.t_ratio == t_ratio {
                return Ok(only);
            }
        }
        match t_ratio {
            Some(r) => self.modes.iter().find(|m| m.t_ratio == Some(r)),
            None => None,
        }
        .ok_or_else(|| Error::config(format!("budget {:?} has no mode {t_ratio:?}", self.label)))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub label: Technology,
    pub t_ratio: Option<u32>,
    pub throughput_gops: f64,
    pub power_w: f64,
    pub area_mm2: f64,
    pub power_eff_gops_per_w: f64,
    pub total_eff_gops_per_w_mm2: f64,
}

pub fn evaluate(b: &ComponentBudget, t_ratio: Option<u32>) -> Result<Evaluation> {
    b.validate()?;
    let m = b.mode(t_ratio)?;
    let power = b.total_read_power_w + m.digital_power_w;
    if power <= 0.0 {
        return Err(Error::config("degenerate budget: zero total power"));
    }
    let throughput = m.ops_per_clk * b.clock_hz / 1e9;
    let area = b.area_mm2.total();
    let power_eff = throughput / power;
    Ok(Evaluation {
        label: b.label,
        t_ratio: m.t_ratio,
        throughput_gops: throughput,
        power_w: power,
        area_mm2: area,
        power_eff_gops_per_w: power_eff,
        total_eff_gops_per_w_mm2: power_eff / area,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub a: Evaluation,
    pub b: Evaluation,
    pub throughput_ratio: f64,
    pub power_eff_ratio: f64,
    pub total_eff_ratio: f64,
}

/// Ratios of `a` over `b` at the given mode.
pub fn compare(a: &ComponentBudget, b: &ComponentBudget, t_ratio: Option<u32>) -> Result<Comparison> {
    let ea = evaluate(a, t_ratio)?;
    let eb = evaluate(b, t_ratio)?;
    Ok(Comparison {
        throughput_ratio: ea.throughput_gops / eb.throughput_gops,
        power_eff_ratio: ea.power_eff_gops_per_w / eb.power_eff_gops_per_w,
        total_eff_ratio: ea.total_eff_gops_per_w_mm2 / eb.total_eff_gops_per_w_mm2,
        a: ea,
        b: eb,
    })
}

/// Multiplicative technology-node factors, supplied by configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NodeScaling {
    pub delay: f64,
    pub power: f64,
    pub area: f64,
}

impl NodeScaling {
    pub fn identity() -> Self {
        NodeScaling {
            delay: 1.0,
            power: 1.0,
            area: 1.0,
        }
    }

    /// Rescales an evaluation: throughput divides by the delay factor, power
    /// and area multiply by theirs.
    pub fn apply(&self, e: &Evaluation) -> Result<Evaluation> {
        if [self.delay, self.power, self.area].iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::config("node scaling factors must be positive"));
        }
        let throughput = e.throughput_gops / self.delay;
        let power = e.power_w * self.power;
        let area = e.area_mm2 * self.area;
        Ok(Evaluation {
            throughput_gops: throughput,
            power_w: power,
            area_mm2: area,
            power_eff_gops_per_w: throughput / power,
            total_eff_gops_per_w_mm2: throughput / power / area,
            ..e.clone()
        })
    }
}
