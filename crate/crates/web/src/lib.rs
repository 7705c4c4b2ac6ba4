//! WebAssembly bindings for the browser demo in `www/`.

pub mod demo;

use wasm_bindgen::prelude::*;

fn js(e: mepck::Error) -> JsError {
    JsError::new(&e.to_string())
}

#[wasm_bindgen]
pub fn dropwave_grid(n: usize) -> Vec<f64> {
    demo::dropwave_grid(n)
}

#[wasm_bindgen]
pub struct DropWaveSurrogate {
    fit: demo::DropWaveFit,
}

#[wasm_bindgen]
impl DropWaveSurrogate {
    #[wasm_bindgen(constructor)]
    pub fn new(divisions: usize, per_cell_n: usize, seed: u32) -> Result<DropWaveSurrogate, JsError> {
        demo::fit_dropwave(divisions, per_cell_n, seed as u64).map(|fit| Self { fit }).map_err(js)
    }

    pub fn grid(&self, n: usize) -> Result<Vec<f64>, JsError> {
        let m = &self.fit.model;
        demo::grid(n, |a, b| m.predict(&[a, b])).map_err(js)
    }

    pub fn points(&self) -> Vec<f64> {
        self.fit.points.clone()
    }

    pub fn r2(&self) -> f64 {
        self.fit.r2
    }

    pub fn nrmse(&self) -> f64 {
        self.fit.nrmse
    }
}

#[wasm_bindgen]
pub fn tds_spectrum(dh1: f64, dh2: f64, log_n1: f64, log_n2: f64, points: usize) -> Result<Vec<f64>, JsError> {
    demo::tds_spectrum([dh1, dh2, log_n1, log_n2], points).map_err(js)
}

#[wasm_bindgen]
pub struct MixtureChain {
    run: demo::MixtureRun,
}

#[wasm_bindgen]
impl MixtureChain {
    #[wasm_bindgen(constructor)]
    pub fn new(separation: f64, t: usize, level: f64, seed: u32) -> Result<MixtureChain, JsError> {
        demo::mixture_run(separation, t, level, seed as u64).map(|run| Self { run }).map_err(js)
    }

    pub fn samples(&self) -> Vec<f64> {
        self.run.samples.clone()
    }

    pub fn intervals(&self) -> Vec<f64> {
        self.run.intervals.clone()
    }

    pub fn acceptance_rate(&self) -> f64 {
        self.run.acceptance_rate
    }
}
