pub mod demo;

use wasm_bindgen::prelude::*;

fn js_err(e: stc_core::Error) -> JsError {
    JsError::new(&format!("[{}] {e}", e.category()))
}

#[wasm_bindgen]
pub struct Rollout(demo::Trajectory);

#[wasm_bindgen]
impl Rollout {
    pub fn positions(&self) -> Vec<f64> {
        self.0.positions.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn total_return(&self) -> f64 {
        self.0.total_return
    }

    pub fn goal(&self) -> Vec<f64> {
        self.0.goal.to_vec()
    }

    #[wasm_bindgen(getter)]
    pub fn bound(&self) -> f64 {
        self.0.bound
    }
}

#[wasm_bindgen]
pub fn simulate(gravity_scale: f64, believed_scale: f64, noise: f64, seed: u32) -> Result<Rollout, JsError> {
    demo::rollout(gravity_scale, believed_scale, noise, seed as u64).map(Rollout).map_err(js_err)
}

#[wasm_bindgen]
pub struct Bounds(demo::BoundBatch);

#[wasm_bindgen]
impl Bounds {
    pub fn lhs(&self) -> Vec<f64> {
        self.0.lhs.clone()
    }

    pub fn rhs(&self) -> Vec<f64> {
        self.0.rhs.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn violations(&self) -> usize {
        self.0.violations
    }
}

#[wasm_bindgen]
pub fn check_bounds(which: &str, trials: u32, seed: u32) -> Result<Bounds, JsError> {
    demo::bound_batch(which, trials as usize, seed as u64).map(Bounds).map_err(js_err)
}

#[wasm_bindgen]
pub struct Preview(demo::Preview);

#[wasm_bindgen]
impl Preview {
    #[wasm_bindgen(getter)]
    pub fn acceptance_rate(&self) -> f64 {
        self.0.acceptance_rate
    }

    pub fn grid(&self) -> Vec<f64> {
        self.0.grid.clone()
    }

    /// 0 source, 1 corrected, 2 target.
    pub fn density(&self, which: u8) -> Vec<f64> {
        match which {
            0 => self.0.kde_source.clone(),
            1 => self.0.kde_corrected.clone(),
            _ => self.0.kde_target.clone(),
        }
    }

    pub fn w1_source(&self) -> Vec<f64> {
        self.0.w1_source.clone()
    }

    pub fn w1_corrected(&self) -> Vec<f64> {
        self.0.w1_corrected.clone()
    }
}

#[wasm_bindgen]
pub fn preview_correction(target_gravity_scale: f64, lambda: f64, seed: u32) -> Result<Preview, JsError> {
    demo::correction_preview(target_gravity_scale, lambda, seed as u64).map(Preview).map_err(js_err)
}
