use pyo3::prelude::*;
use pyo3::types::{PyDict, PyModule};

fn with_module<F: for<'py> FnOnce(Python<'py>, &Bound<'py, PyModule>) -> PyResult<()>>(f: F) {
    Python::attach(|py| {
        let m = PyModule::new(py, "signseg_py")?;
        signseg_py::signseg_py(&m)?;
        f(py, &m)
    })
    .unwrap();
}

#[test]
fn free_functions_match_the_core_crate() {
    with_module(|_, m| {
        let pe: Vec<f64> = m.getattr("positional_encoding")?.call1((3, 8))?.extract()?;
        assert_eq!(pe, signseg::model::positional_encoding(3, 8).unwrap());

        let rows = vec![vec![0.9, 0.1], vec![0.2, 0.8], vec![0.3, 0.7], vec![0.95, 0.05]];
        let out: Vec<(usize, usize, f64)> = m.getattr("post_process")?.call1((rows,))?.extract()?;
        assert_eq!(out, vec![(0, 0, 0.9), (1, 1, 0.8), (0, 3, 0.95)]);

        let n: usize = m.getattr("count_false")?.call1((vec![1usize, 2], vec![1usize, 3, 4]))?.extract()?;
        assert_eq!(n, 2);
        let lr: f64 = m.getattr("lr_at_epoch")?.call1((10,))?.extract()?;
        assert!((lr - 0.0005).abs() < 1e-15);
        let cfg = m.getattr("default_train_config")?.call0()?;
        let cfg = cfg.cast::<PyDict>()?;
        assert_eq!(cfg.get_item("batch_size")?.unwrap().extract::<usize>()?, 50);

        let data: Vec<(Vec<Vec<f64>>, usize)> = m.getattr("make_dataset")?.call1((1, 2, 3, 6, 5, 0.0))?.extract()?;
        assert_eq!(data.len(), 6);
        assert_eq!(data[0].0.len(), 5);
        assert_eq!(data[5].1, 1);
        Ok(())
    });
}

#[test]
fn errors_surface_as_the_module_exception() {
    with_module(|py, m| {
        let exc = m.getattr("SignsegError")?;
        let e = m.getattr("resample_sequence")?.call1((Vec::<Vec<f64>>::new(), 4)).unwrap_err();
        assert!(e.matches(py, exc.clone())?);
        let hand = vec![[0.0f64; 3]; 5];
        let e = m.getattr("normalize_frame")?.call1((vec![hand],)).unwrap_err();
        assert!(e.value(py).to_string().contains("keypoints"));
        Ok(())
    });
}

#[test]
fn model_round_trips_and_classifies() {
    with_module(|_, m| {
        let kwargs = PyDict::new(m.py());
        for (k, v) in [("layers", 1usize), ("heads", 2), ("d_model", 8), ("d_ff", 16), ("window", 4)] {
            kwargs.set_item(k, v)?;
        }
        let model = m.getattr("Model")?.call((6, 3), Some(&kwargs))?;
        let frames = vec![vec![0.1, -0.2, 0.3, 0.0, 0.5, -0.1]; 4];
        let p: Vec<f64> = model.call_method1("classify", (frames.clone(),))?.extract()?;
        assert_eq!(p.len(), 3);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);

        let bytes: Vec<u8> = model.call_method0("to_bytes")?.extract()?;
        let back = m.getattr("Model")?.call_method1("from_bytes", (pyo3::types::PyBytes::new(m.py(), &bytes),))?;
        let q: Vec<f64> = back.call_method1("classify", (frames.clone(),))?.extract()?;
        for (a, b) in p.iter().zip(&q) {
            assert!((a - b).abs() < 1e-5);
        }

        let stream = vec![vec![0.0; 6]; 7];
        let wp: Vec<(usize, Vec<f64>)> = model.call_method1("window_probs", (stream, 2))?.extract()?;
        assert_eq!(wp.iter().map(|w| w.0).collect::<Vec<_>>(), vec![0, 2]);

        let err: f64 = model.call_method1("gradient_check", (frames, 1))?.extract()?;
        assert!(err < 1e-3, "{err}");
        Ok(())
    });
}
