use wasm_bindgen::prelude::*;

pub mod demo;

fn js_err(e: egopose::Error) -> JsError {
    JsError::new(&e.to_string())
}

/// A sampled pose and its fisheye projection.
#[wasm_bindgen]
pub struct Scene {
    view: demo::View,
}

#[wasm_bindgen]
impl Scene {
    #[wasm_bindgen(constructor)]
    pub fn new(seed: u32, action: u8, tilt_deg: f64) -> Result<Scene, JsError> {
        demo::View::sample(seed as u64, action, tilt_deg).map(|view| Scene { view }).map_err(js_err)
    }

    #[wasm_bindgen(getter)]
    pub fn action(&self) -> String {
        self.view.action.name().to_string()
    }

    pub fn image_rgba(&self) -> Vec<u8> {
        self.view.image_rgba()
    }

    pub fn joints_px(&self) -> Vec<f64> {
        self.view.joints_px()
    }

    pub fn heatmap_rgba(&self, sigma: f64) -> Result<Vec<u8>, JsError> {
        self.view.heatmap_rgba(sigma).map_err(js_err)
    }

    pub fn decode_errors(&self, sigma: f64) -> Result<Vec<f64>, JsError> {
        self.view.decode_errors(sigma).map_err(js_err)
    }

    pub fn noise_metrics(&self, sigma_mm: f64, seed: u32) -> Result<Vec<f64>, JsError> {
        self.view.noise_metrics(sigma_mm, seed as u64).map(|m| m.to_vec()).map_err(js_err)
    }

    /// Local joint rotations, 16 × (w, x, y, z).
    pub fn rotations(&self) -> Vec<f64> {
        self.view.rotations.iter().flat_map(|q| q.to_array()).collect()
    }
}

#[wasm_bindgen]
pub fn probe_decode(u: f64, v: f64, sigma: f64) -> Result<Vec<f64>, JsError> {
    demo::probe_decode(u, v, sigma).map(|r| r.to_vec()).map_err(js_err)
}

#[wasm_bindgen]
pub fn action_names() -> Vec<String> {
    demo::action_names().into_iter().map(String::from).collect()
}

#[wasm_bindgen]
pub fn image_size() -> usize {
    egopose::camera::IMAGE_SIZE
}

#[wasm_bindgen]
pub fn heatmap_size() -> usize {
    egopose::camera::HEATMAP_SIZE
}
