use serde::{Deserialize, Serialize};

use crate::pairgen::Label;
use crate::ranker::model::{Gradient, Mlp, Scalar};

/// Which hinge to optimize.
///
/// `AsWritten` is `max{0, pgt * (s2 - s1) - rho}`: only reversals larger than
/// the margin are penalized. `Margin` is the usual ranking hinge
/// `max{0, rho - pgt * (s1 - s2)}`, which also demands a margin of
/// correctness. In both, `pgt = +1` means the first object is the more
/// salient one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HingeVariant {
    #[default]
    AsWritten,
    Margin,
}

impl HingeVariant {
    fn slack<T: Scalar>(self, s1: T, s2: T, pgt: T, rho: T) -> T {
        match self {
            HingeVariant::AsWritten => pgt * (s2 - s1) - rho,
            HingeVariant::Margin => rho - pgt * (s1 - s2),
        }
    }
}

pub fn hinge_loss(s1: f64, s2: f64, pgt: Label, rho: f64) -> f64 {
    hinge_loss_with(HingeVariant::AsWritten, s1, s2, pgt, rho)
}

pub fn hinge_loss_with<T: Scalar>(variant: HingeVariant, s1: T, s2: T, pgt: Label, rho: T) -> T {
    let slack = variant.slack(s1, s2, pgt.sign::<T>(), rho);
    if slack > T::zero() {
        slack
    } else {
        T::zero()
    }
}

/// Loss of one pair, with its exact gradient accumulated into `grad`.
///
/// Both branches run through the same `model`, so their contributions land
/// in the same parameter block. Where the hinge is inactive nothing is
/// accumulated.
pub fn pair_gradient<T: Scalar>(
    model: &Mlp<T>,
    f1: &[T],
    f2: &[T],
    pgt: Label,
    rho: T,
    variant: HingeVariant,
    grad: &mut Gradient<T>,
) -> T {
    let t1 = model.trace(f1);
    let t2 = model.trace(f2);
    let s1 = t1.last().unwrap()[0];
    let s2 = t2.last().unwrap()[0];
    let y = pgt.sign::<T>();
    let slack = variant.slack(s1, s2, y, rho);
    if slack <= T::zero() {
        return T::zero();
    }
    // Both variants have dL/ds1 = -pgt and dL/ds2 = +pgt when active.
    model.backward(&t1, -y, grad);
    model.backward(&t2, y, grad);
    slack
}
