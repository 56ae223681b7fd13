//! Fixed-step RK4 between discrete events, with crossing detection.
//!
//! The ODE state is the continuous variables followed by the integrated
//! hazard of every armed rate-modified timer. Watches are the end-state
//! predicates, the guards of enabled conditional transitions and the hazard
//! thresholds. A watch that becomes true inside a step is located by
//! bisection to within `h / 100`; integration stops at the right end of the
//! final bracket, so the watch holds at the returned clock.

use crate::model::{Bound, CompiledModel, Distribution, EvalCtx, TransitionKind};

use super::{eval_err, SimError, SimState, Simulator, TraceKind};

#[derive(Debug, Clone, PartialEq)]
pub struct Crossing {
    pub time: f64,
    /// `end_state:NAME`, `guard:TRANSITION` or `hazard:TRANSITION`.
    pub watch: String,
}

enum Watch<'a> {
    Predicate { label: String, expr: &'a Bound },
    Hazard { label: String, slot: usize, threshold: f64 },
}

struct HazardTerm<'a> {
    id: &'a str,
    distribution: Distribution,
    modifier: &'a Bound,
    armed_at: f64,
}

struct System<'a> {
    states: &'a [usize],
    rates: Vec<(&'a str, &'a Bound)>,
    hazards: Vec<HazardTerm<'a>>,
}

impl System<'_> {
    fn nv(&self) -> usize {
        self.rates.len()
    }

    fn deriv(&self, t: f64, y: &[f64], out: &mut [f64]) -> Result<(), SimError> {
        let ctx = EvalCtx { t, vars: &y[..self.nv()], states: self.states };
        for (i, (name, rate)) in self.rates.iter().enumerate() {
            let v = rate.num(&ctx).map_err(|e| eval_err(&format!("derivative of {name}"), t, e))?;
            if !v.is_finite() {
                return Err(SimError::NonFinite { what: format!("derivative of {name}"), time: t });
            }
            out[i] = v;
        }
        for (j, h) in self.hazards.iter().enumerate() {
            let factor = h.modifier.num(&ctx).map_err(|e| eval_err(&format!("rate modifier of {}", h.id), t, e))?;
            if factor < 0.0 {
                return Err(SimError::NegativeModifier { transition: h.id.to_string(), value: factor, time: t });
            }
            let v = h.distribution.hazard(t - h.armed_at) * factor;
            if !v.is_finite() {
                return Err(SimError::NonFinite { what: format!("hazard of {}", h.id), time: t });
            }
            out[self.nv() + j] = v;
        }
        Ok(())
    }

    fn rk4(&self, t: f64, y: &[f64], dt: f64) -> Result<Vec<f64>, SimError> {
        let n = y.len();
        let mut k1 = vec![0.0; n];
        let mut k2 = vec![0.0; n];
        let mut k3 = vec![0.0; n];
        let mut k4 = vec![0.0; n];
        let mut tmp = vec![0.0; n];
        self.deriv(t, y, &mut k1)?;
        for i in 0..n {
            tmp[i] = y[i] + 0.5 * dt * k1[i];
        }
        self.deriv(t + 0.5 * dt, &tmp, &mut k2)?;
        for i in 0..n {
            tmp[i] = y[i] + 0.5 * dt * k2[i];
        }
        self.deriv(t + 0.5 * dt, &tmp, &mut k3)?;
        for i in 0..n {
            tmp[i] = y[i] + dt * k3[i];
        }
        self.deriv(t + dt, &tmp, &mut k4)?;
        Ok((0..n)
            .map(|i| y[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
            .collect())
    }

    fn first_true(&self, watches: &[Watch], t: f64, y: &[f64]) -> Result<Option<usize>, SimError> {
        let ctx = EvalCtx { t, vars: &y[..self.nv()], states: self.states };
        for (i, w) in watches.iter().enumerate() {
            let hit = match w {
                Watch::Predicate { label, expr } => expr.truth(&ctx).map_err(|e| eval_err(label, t, e))?,
                Watch::Hazard { slot, threshold, .. } => y[*slot] >= *threshold,
            };
            if hit {
                return Ok(Some(i));
            }
        }
        Ok(None)
    }
}

fn select_rates<'a>(m: &'a CompiledModel, s: &SimState) -> Result<Vec<(&'a str, &'a Bound)>, SimError> {
    let ctx = s.ctx();
    m.vars
        .iter()
        .map(|v| {
            for (when, rate) in &v.clauses {
                let applies = match when {
                    None => true,
                    Some(w) => w
                        .truth(&ctx)
                        .map_err(|e| eval_err(&format!("derivative clause of {}", v.name), s.clock, e))?,
                };
                if applies {
                    return Ok((v.name.as_str(), rate));
                }
            }
            unreachable!("validated models end with a default clause")
        })
        .collect()
}

impl Simulator {
    /// Integrates up to `until`, stopping early at the first watch crossing.
    pub fn integrate(&self, s: &mut SimState, until: f64) -> Result<Option<Crossing>, SimError> {
        if until < s.clock || until.is_nan() {
            return Err(SimError::StepUnderflow { time: s.clock });
        }
        if until == s.clock {
            return Ok(None);
        }
        let m = &*self.model;
        let h = self.opts.h;
        let nv = m.vars.len();

        let mut hazards = Vec::with_capacity(s.hazards.len());
        let mut watches = Vec::new();
        for (i, e) in m.end_states.iter().enumerate() {
            if let Some(p) = e.predicate.as_ref().filter(|p| p.is_continuous()) {
                watches.push(Watch::Predicate { label: format!("end_state:{}", m.end_states[i].name), expr: p });
            }
        }
        for (c, comp) in m.components.iter().enumerate() {
            for t in comp.transitions.iter().filter(|t| t.source == s.states[c]) {
                if let TransitionKind::Conditional { guard, .. } = &t.kind {
                    if guard.is_continuous() {
                        watches.push(Watch::Predicate { label: format!("guard:{}", t.id), expr: guard });
                    }
                }
            }
        }
        for (j, hz) in s.hazards.iter().enumerate() {
            let t = &m.components[hz.comp].transitions[hz.trans];
            let TransitionKind::Timed { distribution, modifier: Some(modifier), .. } = &t.kind else {
                unreachable!("hazard timers belong to rate-modified timed transitions")
            };
            hazards.push(HazardTerm { id: &t.id, distribution: *distribution, modifier, armed_at: hz.armed_at });
            watches.push(Watch::Hazard { label: format!("hazard:{}", t.id), slot: nv + j, threshold: hz.threshold });
        }

        if nv == 0 && watches.is_empty() {
            s.clock = until;
            return Ok(None);
        }

        let sys = System { states: &s.states, rates: select_rates(m, s)?, hazards };
        let mut y: Vec<f64> = s.vars.iter().copied().chain(s.hazards.iter().map(|hz| hz.acc)).collect();
        let t0 = s.clock;
        let mut t = t0;
        let mut n: u64 = 0;
        let mut crossing = None;
        while t < until {
            n += 1;
            let mut next = t0 + n as f64 * h;
            if next >= until - h * 1e-6 {
                next = until;
            }
            let dt = next - t;
            if !(dt > 0.0) {
                return Err(SimError::StepUnderflow { time: t });
            }
            let y1 = sys.rk4(t, &y, dt)?;
            if let Some(i) = y1.iter().position(|v| !v.is_finite()) {
                let what = if i < nv { m.vars[i].name.clone() } else { "hazard accumulator".into() };
                return Err(SimError::NonFinite { what, time: next });
            }
            if sys.first_true(&watches, next, &y1)?.is_some() {
                let (mut lo, mut hi) = (0.0, dt);
                let mut y_hi = y1;
                while hi - lo > h / 100.0 {
                    let mid = 0.5 * (lo + hi);
                    let y_mid = sys.rk4(t, &y, mid)?;
                    if sys.first_true(&watches, t + mid, &y_mid)?.is_some() {
                        hi = mid;
                        y_hi = y_mid;
                    } else {
                        lo = mid;
                    }
                }
                let tc = if hi == dt { next } else { t + hi };
                let w = sys.first_true(&watches, tc, &y_hi)?.expect("watch holds at bracket end");
                let label = match &watches[w] {
                    Watch::Predicate { label, .. } | Watch::Hazard { label, .. } => label.clone(),
                };
                crossing = Some(Crossing { time: tc, watch: label });
                t = tc;
                y = y_hi;
                break;
            }
            t = next;
            y = y1;
        }
        drop(sys);

        s.clock = t;
        s.vars.copy_from_slice(&y[..nv]);
        for (hz, acc) in s.hazards.iter_mut().zip(&y[nv..]) {
            hz.acc = *acc;
        }
        if let Some(c) = &crossing {
            s.record(TraceKind::ThresholdCrossing, c.watch.clone(), None, None);
        }
        Ok(crossing)
    }

    /// Advances by `dt`, accumulating hazard on every armed rate-modified
    /// timer. Returns true when one of them reached its threshold.
    pub fn accumulate_hazard(&self, s: &mut SimState, dt: f64) -> Result<bool, SimError> {
        let until = s.clock + dt;
        self.integrate(s, until)?;
        Ok(s.hazards.iter().any(|hz| hz.acc >= hz.threshold))
    }
}
