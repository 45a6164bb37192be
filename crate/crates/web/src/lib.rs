//! Browser bindings for the Synt-2D demo page in `www/`.

use wasm_bindgen::prelude::*;

pub mod demo;

fn js(e: String) -> JsError {
    JsError::new(&e)
}

/// Satisfying grid points as flat `(i, j)` pairs.
#[wasm_bindgen(js_name = oraclePoints)]
pub fn oracle_points(threshold: f64) -> Result<Vec<u32>, JsError> {
    demo::oracle(threshold).map(|(p, _)| p).map_err(js)
}

/// Solution counts per quadrant, labelled bit t set iff x_t > 0.
#[wasm_bindgen(js_name = oracleCounts)]
pub fn oracle_counts(threshold: f64) -> Result<Vec<u32>, JsError> {
    demo::oracle(threshold)
        .map(|(_, c)| c.into_iter().map(|v| v as u32).collect())
        .map_err(js)
}

#[wasm_bindgen]
pub fn landscape() -> Vec<f64> {
    demo::landscape()
}

#[wasm_bindgen]
pub fn cardinality() -> usize {
    demo::CARDINALITY
}

#[wasm_bindgen]
pub struct Session {
    inner: demo::Demo,
}

#[wasm_bindgen]
impl Session {
    #[wasm_bindgen(constructor)]
    pub fn new(conditional: bool, alpha: f64, seed: u32) -> Result<Session, JsError> {
        demo::Demo::new(conditional, alpha, seed as u64)
            .map(|inner| Session { inner })
            .map_err(js)
    }

    /// Runs some iterations; returns the last batch's mean reward.
    pub fn train(&mut self, iterations: usize) -> Result<f64, JsError> {
        let rec = self.inner.train(iterations).map_err(js)?;
        Ok(rec.map_or(f64::NAN, |r| r.mean_reward))
    }

    pub fn iteration(&self) -> usize {
        self.inner.iteration()
    }

    #[wasm_bindgen(js_name = numLabels)]
    pub fn num_labels(&self) -> usize {
        self.inner.num_labels()
    }

    pub fn rewards(&self) -> Vec<f64> {
        self.inner.rewards().to_vec()
    }

    /// Flat `(i, j, satisfied)` triples; a negative label samples all classes.
    pub fn sample(&mut self, n: usize, label: i32) -> Result<Vec<u32>, JsError> {
        let label = if label < 0 || !self.inner.is_conditional() {
            None
        } else {
            Some(label as usize)
        };
        self.inner.sample(n, label).map_err(js)
    }

    pub fn marginals(&mut self, label: usize) -> Result<Vec<f64>, JsError> {
        self.inner.marginals(label, 64).map_err(js)
    }

    pub fn confusion(&mut self, per_class: usize) -> Result<Vec<u32>, JsError> {
        self.inner.confusion(per_class).map_err(js)
    }
}
