use nalgebra::DVector;

/// A dense sample of the desired path. Distances to the path are
/// approximated by the nearest sampled point.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PathCloud {
    points: Vec<DVector<f64>>,
}

impl PathCloud {
    pub fn new(points: Vec<DVector<f64>>) -> Self {
        Self { points }
    }

    pub fn points(&self) -> &[DVector<f64>] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Nearest sampled distance; `+inf` for an empty cloud.
    pub fn distance(&self, x: &DVector<f64>) -> f64 {
        self.points
            .iter()
            .map(|p| {
                p.iter()
                    .zip(x.iter())
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
            })
            .fold(f64::INFINITY, f64::min)
            .sqrt()
    }
}
