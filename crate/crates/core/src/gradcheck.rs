//! Central finite-difference verification of tape gradients.

use crate::autodiff::{ParamStore, Tape, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Finite-difference step.
pub const FD_STEP: f64 = 1e-3;

#[derive(Debug, Clone)]
pub struct BlockError {
    pub name: String,
    pub checked: usize,
    pub rel_error: f64,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub blocks: Vec<BlockError>,
    pub max_rel_error: f64,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error < self.tolerance
    }
}

/// Compares tape gradients of `loss_fn` against central differences with
/// step [`FD_STEP`].
///
/// The relative error of a block is `‖g_tape − g_fd‖ / max(‖g_tape‖, ‖g_fd‖)`
/// over the checked entries; blocks with both norms below 1e-12 count as
/// exact. At most `max_per_block` entries of each block are perturbed,
/// spread evenly over the block.
pub fn check_gradients<T, F>(
    params: &mut ParamStore<T>,
    loss_fn: F,
    tolerance: f64,
    max_per_block: usize,
) -> Result<GradCheckReport>
where
    T: Scalar,
    F: Fn(&ParamStore<T>) -> Result<(Tape<T>, Var)>,
{
    let eval = |p: &ParamStore<T>| -> Result<f64> {
        let (tape, loss) = loss_fn(p)?;
        let v = tape.value(loss).data()[0].to_f64c();
        if !v.is_finite() {
            return Err(Error::NonFinite("loss".into()));
        }
        Ok(v)
    };

    params.zero_grad();
    let (tape, loss) = loss_fn(params)?;
    if !tape.value(loss).data()[0].is_finite() {
        return Err(Error::NonFinite("loss".into()));
    }
    tape.backward(loss, params)?;
    let analytic: Vec<Vec<f64>> = params
        .iter()
        .map(|p| p.grad.data().iter().map(|g| g.to_f64c()).collect())
        .collect();

    let mut blocks = Vec::new();
    let ids: Vec<_> = (0..params.len()).map(crate::autodiff::ParamId).collect();
    for (bi, &id) in ids.iter().enumerate() {
        let n = params.get(id).value.len();
        let stride = (n / max_per_block.max(1)).max(1);
        let mut diff2 = 0.0f64;
        let mut a2 = 0.0f64;
        let mut f2 = 0.0f64;
        let mut checked = 0;
        let mut idx = 0;
        while idx < n && checked < max_per_block {
            let orig = params.get(id).value.data()[idx];
            params.get_mut(id).value.data_mut()[idx] = orig + T::lit(FD_STEP);
            let plus = eval(params)?;
            params.get_mut(id).value.data_mut()[idx] = orig - T::lit(FD_STEP);
            let minus = eval(params)?;
            params.get_mut(id).value.data_mut()[idx] = orig;
            let fd = (plus - minus) / (2.0 * FD_STEP);
            let a = analytic[bi][idx];
            diff2 += (a - fd) * (a - fd);
            a2 += a * a;
            f2 += fd * fd;
            checked += 1;
            idx += stride;
        }
        let denom = a2.sqrt().max(f2.sqrt());
        let rel_error = if denom < 1e-12 { 0.0 } else { diff2.sqrt() / denom };
        blocks.push(BlockError {
            name: params.get(id).name.clone(),
            checked,
            rel_error,
        });
    }
    let max_rel_error = blocks.iter().map(|b| b.rel_error).fold(0.0, f64::max);
    Ok(GradCheckReport {
        blocks,
        max_rel_error,
        tolerance,
    })
}
