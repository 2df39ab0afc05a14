use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::{ParameterField, Partition};

/// Inclusion geometry. Rectangles are half-open, `[x0, x1) x [y0, y1)`, so
/// that adjacent rectangles tile without overlap; disks are open.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case")]
pub enum Shape {
    Rect { x0: f64, x1: f64, y0: f64, y1: f64 },
    Disk { cx: f64, cy: f64, r: f64 },
}

impl Shape {
    pub fn contains(&self, x: f64, y: f64) -> bool {
        match *self {
            Shape::Rect { x0, x1, y0, y1 } => x0 <= x && x < x1 && y0 <= y && y < y1,
            Shape::Disk { cx, cy, r } => {
                let (dx, dy) = (x - cx, y - cy);
                dx * dx + dy * dy < r * r
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Inclusion {
    #[serde(flatten)]
    pub shape: Shape,
    pub contrast: f64,
}

/// Piecewise-constant conductivity: background plus additive contrasts.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhantomSpec {
    pub background: f64,
    #[serde(default)]
    pub inclusions: Vec<Inclusion>,
}

impl PhantomSpec {
    pub fn uniform(background: f64) -> Self {
        Self { background, inclusions: Vec::new() }
    }

    /// Background 3, a C-shaped bar with contrast +2 and a disk with
    /// contrast -2.
    pub fn reference() -> Self {
        let t = |k: f64| k / 30.0;
        let rect = |x0, x1, y0, y1| Inclusion {
            shape: Shape::Rect { x0: t(x0), x1: t(x1), y0: t(y0), y1: t(y1) },
            contrast: 2.0,
        };
        Self {
            background: 3.0,
            inclusions: vec![
                rect(5.0, 9.0, 3.0, 27.0),
                rect(9.0, 27.0, 3.0, 7.0),
                rect(9.0, 27.0, 23.0, 27.0),
                Inclusion { shape: Shape::Disk { cx: t(18.0), cy: t(15.0), r: t(4.0) }, contrast: -2.0 },
            ],
        }
    }

    /// Conductivity at a point: contrasts of all containing inclusions add.
    pub fn value_at(&self, x: f64, y: f64) -> f64 {
        self.background + self.inclusions.iter().filter(|i| i.shape.contains(x, y)).map(|i| i.contrast).sum::<f64>()
    }
}

/// Subdomain value = phantom value at the subdomain center.
pub fn rasterize_phantom(spec: &PhantomSpec, partition: &Partition) -> Result<ParameterField> {
    let values: Vec<f64> = (0..partition.p())
        .map(|k| {
            let (x, y) = partition.subdomain_center(k);
            spec.value_at(x, y)
        })
        .collect();
    if let Some((k, v)) = values.iter().enumerate().find(|(_, v)| !(**v > 0.0 && v.is_finite())) {
        return Err(Error::InvalidPhantom(format!("value {v} on subdomain {k} is not positive")));
    }
    ParameterField::new(values)
}
