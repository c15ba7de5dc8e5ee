use crate::grids::{Grid, SamplePair};
use crate::numerics::{Element, Shape, Tensor};
use crate::preprocess::NormStats;
use crate::{Error, Result};

/// Conditioning of one chain: the low-resolution field in model range (at
/// its own resolution and bilinearly upsampled to the high-resolution grid)
/// plus normalised topography.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionInput {
    pub lr: Grid,
    pub lr_up: Grid,
    pub topo_norm: Grid,
    pub use_topo: bool,
}

impl ConditionInput {
    pub fn new(lr: Grid, lr_up: Grid, topo_norm: Grid, use_topo: bool) -> Result<Self> {
        if lr_up.dims() != topo_norm.dims() {
            return Err(Error::Shape {
                op: "condition",
                detail: format!(
                    "lr_up {:?} and topography {:?} must share the high-resolution grid",
                    lr_up.dims(),
                    topo_norm.dims()
                ),
            });
        }
        Ok(ConditionInput {
            lr,
            lr_up,
            topo_norm,
            use_topo,
        })
    }

    /// Gamma-corrects and rescales `pair.lr`, upsamples it to the
    /// high-resolution grid and standardises the topography with the
    /// training-split `(mean, std)`.
    pub fn from_pair(
        pair: &SamplePair,
        stats: &NormStats,
        topo_moments: (f64, f64),
        use_topo: bool,
    ) -> Result<Self> {
        let (h, w) = pair.hr.dims();
        let lr = stats.encode(pair.lr.grid())?;
        let lr_up = lr.resize_bilinear(h, w)?;
        let topo_norm = pair.topo.normalized(topo_moments.0, topo_moments.1);
        ConditionInput::new(lr, lr_up, topo_norm, use_topo)
    }

    pub fn channels(&self) -> usize {
        if self.use_topo {
            2
        } else {
            1
        }
    }

    pub fn hr_dims(&self) -> (usize, usize) {
        self.lr_up.dims()
    }
}

/// Stacks conditions into a `(B, C, H, W)` tensor with channels
/// `[lr_up, topo_norm]`, or `[lr_up]` when topography is disabled.
pub fn stack_conditions<F: Element>(conds: &[ConditionInput]) -> Result<Tensor<F>> {
    let first = conds.first().ok_or_else(|| Error::Shape {
        op: "stack_conditions",
        detail: "empty batch".into(),
    })?;
    let (h, w) = first.hr_dims();
    let c = first.channels();
    let mut data = Vec::with_capacity(conds.len() * c * h * w);
    for cond in conds {
        if cond.hr_dims() != (h, w) || cond.channels() != c {
            return Err(Error::Shape {
                op: "stack_conditions",
                detail: "conditions in one batch must share dims and channels".into(),
            });
        }
        let to_f = |v: &f32| F::from_f64_lossy(f64::from(*v));
        data.extend(cond.lr_up.values().iter().map(to_f));
        if cond.use_topo {
            data.extend(cond.topo_norm.values().iter().map(to_f));
        }
    }
    Tensor::from_vec(Shape::new(conds.len(), c, h, w), data)
}
