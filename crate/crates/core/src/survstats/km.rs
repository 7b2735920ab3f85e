use statrs::function::erf::erfc;

use crate::error::{Error, Result};
use crate::losses::{time_groups, SurvivalLabel};

/// Product-limit survival estimate, one entry per distinct event time.
#[derive(Debug, Clone, PartialEq)]
pub struct KmCurve {
    pub event_times: Vec<f64>,
    /// Survival just after each event time.
    pub survival: Vec<f64>,
    pub at_risk: Vec<usize>,
    pub n_events: Vec<usize>,
}

impl KmCurve {
    /// Right-continuous step function; 1 before the first event.
    pub fn survival_at(&self, t: f64) -> f64 {
        match self.event_times.partition_point(|&e| e <= t) {
            0 => 1.0,
            k => self.survival[k - 1],
        }
    }

    pub fn len(&self) -> usize {
        self.event_times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.event_times.is_empty()
    }
}

pub fn kaplan_meier(labels: &[SurvivalLabel]) -> Result<KmCurve> {
    if labels.is_empty() {
        return Err(Error::invalid("kaplan_meier: no subjects"));
    }
    let mut curve = KmCurve {
        event_times: Vec::new(),
        survival: Vec::new(),
        at_risk: Vec::new(),
        n_events: Vec::new(),
    };
    let mut at_risk = labels.len();
    let mut s = 1.0;
    for g in time_groups(labels) {
        let d = g.iter().filter(|&&i| labels[i].event).count();
        if d > 0 {
            s *= 1.0 - d as f64 / at_risk as f64;
            curve.event_times.push(labels[g[0]].time);
            curve.survival.push(s);
            curve.at_risk.push(at_risk);
            curve.n_events.push(d);
        }
        at_risk -= g.len();
    }
    Ok(curve)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogRank {
    pub chi2: f64,
    pub p: f64,
}

/// Two-group log-rank test, chi-square with one degree of freedom.
pub fn log_rank_test(a: &[SurvivalLabel], b: &[SurvivalLabel]) -> Result<LogRank> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::invalid("log_rank_test: both groups must be non-empty"));
    }
    let pooled: Vec<(SurvivalLabel, bool)> = a
        .iter()
        .map(|&l| (l, true))
        .chain(b.iter().map(|&l| (l, false)))
        .collect();
    if !pooled.iter().any(|(l, _)| l.event) {
        return Err(Error::NoEvents);
    }
    let labels: Vec<SurvivalLabel> = pooled.iter().map(|p| p.0).collect();
    let mut n = pooled.len() as f64;
    let mut n1 = a.len() as f64;
    let (mut o_minus_e, mut var) = (0.0, 0.0);
    for g in time_groups(&labels) {
        let d = g.iter().filter(|&&i| pooled[i].0.event).count() as f64;
        let d1 = g.iter().filter(|&&i| pooled[i].0.event && pooled[i].1).count() as f64;
        if d > 0.0 {
            o_minus_e += d1 - d * n1 / n;
            if n > 1.0 {
                var += d * (n1 / n) * (1.0 - n1 / n) * (n - d) / (n - 1.0);
            }
        }
        n -= g.len() as f64;
        n1 -= g.iter().filter(|&&i| pooled[i].1).count() as f64;
    }
    if o_minus_e == 0.0 {
        return Ok(LogRank { chi2: 0.0, p: 1.0 });
    }
    if var <= 0.0 {
        return Err(Error::Numerical("log-rank variance is zero".into()));
    }
    let chi2 = o_minus_e * o_minus_e / var;
    Ok(LogRank {
        chi2,
        p: chi2_sf_1df(chi2),
    }) 
}

/// Upper tail of the chi-square distribution with one degree of freedom.
pub fn chi2_sf_1df(x: f64) -> f64 {
    erfc((x / 2.0).sqrt())
}
