//! Travel demand per OD pair: either elastic, through a linear inverse
//! demand function `Θ(Q) = θ0 - θ1·Q` on `[0, U]`, or a fixed volume.

use crate::error::{Error, Result};

/// Linear inverse demand with a demand cap.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearInverseDemand {
    theta0: f64,
    theta1: f64,
    cap: f64,
}

impl LinearInverseDemand {
    /// `cap` defaults to `0.95·θ0/θ1` when `θ1 > 0` and is required otherwise.
    /// The cap must keep `Θ` strictly positive on `[0, cap]`.
    pub fn new(od: &str, theta0: f64, theta1: f64, cap: Option<f64>) -> Result<Self> {
        let fail = |reason: String| Error::Demand {
            od: od.to_string(),
            reason,
        };
        if !(theta0 > 0.0 && theta0.is_finite()) {
            return Err(fail(format!(
                "theta0 = {theta0} must be positive and finite"
            )));
        }
        if !(theta1 >= 0.0 && theta1.is_finite()) {
            return Err(fail(format!(
                "theta1 = {theta1} must be nonnegative and finite"
            )));
        }
        let cap = match cap {
            Some(u) => u,
            None if theta1 > 0.0 => 0.95 * theta0 / theta1,
            None => return Err(fail("a demand cap is required when theta1 = 0".into())),
        };
        if !(cap > 0.0 && cap.is_finite()) {
            return Err(fail(format!("cap = {cap} must be positive and finite")));
        }
        if !(theta0 - theta1 * cap > 0.0) {
            return Err(fail(format!(
                "inverse demand is not positive at the cap: {theta0} - {theta1}·{cap} <= 0"
            )));
        }
        Ok(Self {
            theta0,
            theta1,
            cap,
        })
    }

    pub fn theta0(&self) -> f64 {
        self.theta0
    }

    pub fn theta1(&self) -> f64 {
        self.theta1
    }

    pub fn cap(&self) -> f64 {
        self.cap
    }

    /// `θ0 - θ1·q` without the domain check.
    pub fn eval(&self, q: f64) -> f64 {
        self.theta0 - self.theta1 * q
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OdDemand {
    Elastic(LinearInverseDemand),
    /// Inelastic demand with the volume pinned.
    Fixed {
        volume: f64,
    },
}

impl OdDemand {
    /// Upper bound on the OD volume: the cap, or the pinned volume.
    pub fn cap(&self) -> f64 {
        match self {
            OdDemand::Elastic(inv) => inv.cap(),
            OdDemand::Fixed { volume } => *volume,
        }
    }

    pub fn is_fixed(&self) -> bool {
        matches!(self, OdDemand::Fixed { .. })
    }
}

/// Demand description for every OD pair, indexed like the network's OD list.
#[derive(Debug, Clone, PartialEq)]
pub struct DemandModel {
    ids: Vec<String>,
    per_od: Vec<OdDemand>,
}

impl DemandModel {
    pub fn new(entries: Vec<(String, OdDemand)>) -> Result<Self> {
        for (id, d) in &entries {
            if let OdDemand::Fixed { volume } = d {
                if !(*volume > 0.0 && volume.is_finite()) {
                    return Err(Error::Demand {
                        od: id.clone(),
                        reason: format!("fixed volume {volume} must be positive and finite"),
                    });
                }
            }
        }
        let (ids, per_od) = entries.into_iter().unzip();
        Ok(Self { ids, per_od })
    }

    pub fn len(&self) -> usize {
        self.per_od.len()
    }

    pub fn is_empty(&self) -> bool {
        self.per_od.is_empty()
    }

    pub fn od(&self, w: usize) -> &OdDemand {
        &self.per_od[w]
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn caps(&self) -> Vec<f64> {
        self.per_od.iter().map(OdDemand::cap).collect()
    }

    fn elastic(&self, w: usize) -> Result<&LinearInverseDemand> {
        match &self.per_od[w] {
            OdDemand::Elastic(inv) => Ok(inv),
            OdDemand::Fixed { .. } => Err(Error::Demand {
                od: self.ids[w].clone(),
                reason: "fixed-demand pair has no inverse demand function".into(),
            }),
        }
    }

    /// `Θ_w(Q_w)` for one elastic OD pair; `Q_w` must lie in `[0, U_w]`.
    pub fn theta_od(&self, w: usize, q: f64) -> Result<f64> {
        let inv = self.elastic(w)?;
        if !(0.0..=inv.cap()).contains(&q) {
            return Err(Error::DemandDomain {
                od: self.ids[w].clone(),
                q,
                cap: inv.cap(),
            });
        }
        Ok(inv.eval(q))
    }

    /// Componentwise `Θ(Q)`; every pair must be elastic.
    pub fn theta(&self, q: &[f64]) -> Result<Vec<f64>> {
        self.check_len(q.len())?;
        q.iter()
            .enumerate()
            .map(|(w, &qw)| self.theta_od(w, qw))
            .collect()
    }

    /// `F_w(v) = (θ0 - v)/θ1`, clamped to `[0, U_w]`.
    pub fn theta_inverse_od(&self, w: usize, v: f64) -> Result<f64> {
        let inv = self.elastic(w)?;
        if inv.theta1() == 0.0 {
            if v == inv.theta0() {
                return Ok(0.0);
            }
            return Err(Error::NotInvertible {
                od: self.ids[w].clone(),
                v,
            });
        }
        Ok(((inv.theta0() - v) / inv.theta1()).clamp(0.0, inv.cap()))
    }

    pub fn theta_inverse(&self, v: &[f64]) -> Result<Vec<f64>> {
        self.check_len(v.len())?;
        v.iter()
            .enumerate()
            .map(|(w, &vw)| self.theta_inverse_od(w, vw))
            .collect()
    }

    fn check_len(&self, len: usize) -> Result<()> {
        if len != self.per_od.len() {
            return Err(Error::Shape(format!(
                "{len} values for {} OD pairs",
                self.per_od.len()
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn model(theta0: f64, theta1: f64, cap: Option<f64>) -> DemandModel {
        DemandModel::new(vec![(
            "ij".into(),
            OdDemand::Elastic(LinearInverseDemand::new("ij", theta0, theta1, cap).unwrap()),
        )])
        .unwrap()
    }

    #[test]
    fn theta_examples() {
        let m = model(60.0, 0.5, None);
        assert_eq!(m.theta(&[40.0]).unwrap(), vec![40.0]);
        assert_eq!(m.theta(&[0.0]).unwrap(), vec![60.0]);
        let flat = model(60.0, 0.0, Some(50.0));
        assert_eq!(flat.theta(&[17.0]).unwrap(), vec![60.0]);
    }

    #[test]
    fn theta_domain_error_names_od() {
        let m = model(60.0, 0.5, None);
        let err = m.theta(&[200.0]).unwrap_err();
        assert!(matches!(&err, Error::DemandDomain { od, .. } if od == "ij"));
        assert!(m.theta(&[-1.0]).is_err());
        assert!(m.theta(&[1.0, 2.0]).is_err());
    }

    #[test]
    fn theta_inverse_examples() {
        let m = model(60.0, 0.5, None);
        assert_eq!(m.theta_inverse(&[40.0]).unwrap(), vec![40.0]);
        assert_eq!(m.theta_inverse(&[60.0]).unwrap(), vec![0.0]);
        let v = m.theta(&[37.5]).unwrap();
        assert_eq!(m.theta_inverse(&v).unwrap(), vec![37.5]);
        let flat = model(60.0, 0.0, Some(50.0));
        assert!(matches!(
            flat.theta_inverse(&[55.0]),
            Err(Error::NotInvertible { .. })
        ));
    }

    #[test]
    fn default_cap_and_positivity() {
        let inv = LinearInverseDemand::new("w", 60.0, 0.5, None).unwrap();
        assert!((inv.cap() - 114.0).abs() < 1e-12);
        assert!(inv.eval(inv.cap()) > 0.0);
        assert!(LinearInverseDemand::new("w", 60.0, 0.5, Some(120.0)).is_err());
        assert!(LinearInverseDemand::new("w", 60.0, 0.0, None).is_err());
        assert!(LinearInverseDemand::new("w", -1.0, 0.5, None).is_err());
    }

    proptest! {
        #[test]
        fn inverse_round_trips(theta0 in 1.0..100.0f64, theta1 in 0.01..2.0f64, frac in 0.001..0.999f64) {
            let m = model(theta0, theta1, None);
            let q = frac * m.od(0).cap();
            let v = m.theta(&[q]).unwrap();
            let back = m.theta_inverse(&v).unwrap()[0];
            prop_assert!((back - q).abs() <= 1e-9 * (1.0 + q));
            let q2 = m.theta_inverse(&v).unwrap();
            let v2 = m.theta(&q2).unwrap()[0];
            prop_assert!((v2 - v[0]).abs() <= 1e-9 * (1.0 + v[0]));
        }

        #[test]
        fn monotone_and_positive(theta0 in 1.0..100.0f64, theta1 in 0.0..2.0f64, a in 0.0..1.0f64, b in 0.0..1.0f64) {
            let m = model(theta0, theta1, Some(0.9 * theta0 / theta1.max(0.01)));
            let cap = m.od(0).cap();
            let (lo, hi) = if a < b { (a * cap, b * cap) } else { (b * cap, a * cap) };
            let t_lo = m.theta_od(0, lo).unwrap();
            let t_hi = m.theta_od(0, hi).unwrap();
            prop_assert!(t_hi <= t_lo);
            if theta1 > 0.0 && hi > lo {
                prop_assert!(t_hi < t_lo);
            }
            prop_assert!(t_hi > 0.0);
        }
    }
}
