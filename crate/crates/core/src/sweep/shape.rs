use serde::{Deserialize, Serialize};

/// Second divided differences `2 [(y2-y1)/(x2-x1) - (y1-y0)/(x1-x0)] / (x2-x0)`
/// at the interior points of a nonuniform grid. Windows touching a
/// non-finite value yield NaN.
pub fn second_differences(x: &[f64], y: &[f64]) -> Vec<f64> {
    assert_eq!(x.len(), y.len(), "abscissa and ordinate lengths differ");
    (1..x.len().saturating_sub(1))
        .map(|k| {
            let s1 = (y[k] - y[k - 1]) / (x[k] - x[k - 1]);
            let s2 = (y[k + 1] - y[k]) / (x[k + 1] - x[k]);
            2.0 * (s2 - s1) / (x[k + 1] - x[k - 1])
        })
        .collect()
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CurvatureCount {
    pub points: usize,
    pub violations: usize,
}

impl CurvatureCount {
    pub fn violation_fraction(&self) -> f64 {
        if self.points == 0 {
            0.0
        } else {
            self.violations as f64 / self.points as f64
        }
    }

    fn add(&mut self, d2: &[f64], violates: impl Fn(f64) -> bool) {
        for &v in d2.iter().filter(|v| v.is_finite()) {
            self.points += 1;
            if violates(v) {
                self.violations += 1;
            }
        }
    }
}

/// Curvature of one fidelity map: concave along gamma, convex along kappa.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ShapeReport {
    pub loss: CurvatureCount,
    pub dephasing: CurvatureCount,
}

impl ShapeReport {
    pub fn combined_fraction(&self) -> f64 {
        let points = self.loss.points + self.dephasing.points;
        if points == 0 {
            0.0
        } else {
            (self.loss.violations + self.dephasing.violations) as f64 / points as f64
        }
    }
}

/// Shape report of `f[i][j]` over `gammas[i]`, `kappas[j]`.
pub fn shape_report(f: &[Vec<f64>], gammas: &[f64], kappas: &[f64]) -> ShapeReport {
    let mut report = ShapeReport::default();
    for j in 0..kappas.len() {
        let row: Vec<f64> = f.iter().map(|r| r[j]).collect();
        report.loss.add(&second_differences(gammas, &row), |v| v > 0.0);
    }
    for col in f {
        report
            .dephasing
            .add(&second_differences(kappas, col), |v| v < 0.0);
    }
    report
}
