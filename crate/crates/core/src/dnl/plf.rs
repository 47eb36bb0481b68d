//! Piecewise-linear functions of time given by breakpoints.
//!
//! Values are extrapolated as constants outside the breakpoint range, which
//! is the right convention for cumulative vehicle counts. Breakpoint times
//! are nondecreasing; a repeated time is read right-continuously.

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Plf {
    pts: Vec<(f64, f64)>,
}

impl Plf {
    /// Identically zero.
    pub fn zero() -> Self {
        Self { pts: Vec::new() }
    }

    /// Builds from breakpoints; times must be nondecreasing.
    pub fn from_points(pts: Vec<(f64, f64)>) -> Self {
        debug_assert!(pts.windows(2).all(|w| w[0].0 <= w[1].0));
        Self { pts }
    }

    pub fn points(&self) -> &[(f64, f64)] {
        &self.pts
    }

    pub fn is_empty(&self) -> bool {
        self.pts.is_empty()
    }

    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        self.pts.iter().map(|p| p.0)
    }

    pub fn first_time(&self) -> Option<f64> {
        self.pts.first().map(|p| p.0)
    }

    pub fn last_time(&self) -> Option<f64> {
        self.pts.last().map(|p| p.0)
    }

    /// Value after the last breakpoint.
    pub fn final_value(&self) -> f64 {
        self.pts.last().map_or(0.0, |p| p.1)
    }

    pub fn eval(&self, t: f64) -> f64 {
        let Some(&(t_first, y_first)) = self.pts.first() else {
            return 0.0;
        };
        if t < t_first {
            return y_first;
        }
        let (t_last, y_last) = *self.pts.last().unwrap();
        if t >= t_last {
            return y_last;
        }
        let i = self.pts.partition_point(|p| p.0 <= t) - 1;
        let (t0, y0) = self.pts[i];
        let (t1, y1) = self.pts[i + 1];
        if t1 > t0 {
            y0 + (y1 - y0) * ((t - t0) / (t1 - t0))
        } else {
            y1
        }
    }

    /// `t ↦ self(t - dt)`.
    pub fn shifted(&self, dt: f64) -> Plf {
        Plf {
            pts: self.pts.iter().map(|&(t, y)| (t + dt, y)).collect(),
        }
    }

    /// Pointwise sum.
    pub fn sum<'a>(curves: impl IntoIterator<Item = &'a Plf>) -> Plf {
        let curves: Vec<&Plf> = curves.into_iter().collect();
        let times = merge_times(curves.iter().map(|c| c.times()));
        let pts = times
            .into_iter()
            .map(|t| (t, curves.iter().map(|c| c.eval(t)).sum()))
            .collect();
        Plf { pts }
    }

    /// Slopes of all segments with positive length.
    pub fn slopes(&self) -> impl Iterator<Item = f64> + '_ {
        self.pts
            .windows(2)
            .filter(|w| w[1].0 > w[0].0)
            .map(|w| (w[1].1 - w[0].1) / (w[1].0 - w[0].0))
    }
}

/// Sorted union of several breakpoint sequences with exact duplicates removed.
pub fn merge_times<I, J>(sources: I) -> Vec<f64>
where
    I: IntoIterator<Item = J>,
    J: IntoIterator<Item = f64>,
{
    let mut all: Vec<f64> = sources.into_iter().flatten().collect();
    all.sort_by(f64::total_cmp);
    all.dedup();
    all
}
