//! Python bindings for `pvdeblur`.
//!
//! Frames, flow fields and pixel volumes are exposed as immutable classes; masks come back as
//! lists of booleans and reports as dictionaries.

use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use pvdeblur::metrics::{self, Metric};
use pvdeblur::pipeline::{self, DeblurrerKind, PipelineConfig};
use pvdeblur::{io, synth, tvl1, volume, warp, Error, FlowField, Frame, PixelVolume};

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Io(io) => PyIOError::new_err(io.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

trait OrRaise<T> {
    fn or_raise(self) -> PyResult<T>;
}

impl<T> OrRaise<T> for pvdeblur::Result<T> {
    fn or_raise(self) -> PyResult<T> {
        self.map_err(to_py)
    }
}

/// Image with samples in `[0, 1]`, stored row-major with interleaved channels.
#[pyclass(name = "Frame", module = "pvdeblur_py", skip_from_py_object, frozen)]
#[derive(Clone)]
pub struct PyFrame {
    inner: Frame,
}

impl From<Frame> for PyFrame {
    fn from(inner: Frame) -> Self {
        PyFrame { inner }
    }
}

#[pymethods]
impl PyFrame {
    #[new]
    fn new(width: usize, height: usize, channels: usize, data: Vec<f32>) -> PyResult<Self> {
        Ok(Frame::new(width, height, channels, data).or_raise()?.into())
    }

    #[staticmethod]
    fn filled(width: usize, height: usize, channels: usize, value: f32) -> PyResult<Self> {
        Ok(Frame::filled(width, height, channels, value)
            .or_raise()?
            .into())
    }

    /// Reads an 8-bit grayscale or RGB PNG.
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(io::load_png(path).or_raise()?.into())
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        io::save_png(&self.inner, path).or_raise()
    }

    #[getter]
    fn width(&self) -> usize {
        self.inner.width()
    }

    #[getter]
    fn height(&self) -> usize {
        self.inner.height()
    }

    #[getter]
    fn channels(&self) -> usize {
        self.inner.channels()
    }

    fn data(&self) -> Vec<f32> {
        self.inner.data().to_vec()
    }

    #[pyo3(signature = (x, y, c = 0))]
    fn get(&self, x: usize, y: usize, c: usize) -> PyResult<f32> {
        if x >= self.inner.width() || y >= self.inner.height() || c >= self.inner.channels() {
            return Err(PyValueError::new_err(format!(
                "({x}, {y}, {c}) is outside the frame"
            )));
        }
        Ok(self.inner.get(x, y, c))
    }

    fn to_grayscale(&self) -> Self {
        self.inner.to_grayscale().into()
    }

    fn quantize(&self) -> Self {
        self.inner.quantize().into()
    }

    /// Content moved by `(dx, dy)`, edges replicated.
    fn translate(&self, dx: i64, dy: i64) -> Self {
        self.inner.translate(dx, dy).into()
    }

    fn __eq__(&self, other: &Self) -> bool {
        self.inner == other.inner
    }

    fn __repr__(&self) -> String {
        format!(
            "Frame({}x{}, {} channel(s))",
            self.inner.width(),
            self.inner.height(),
            self.inner.channels()
        )
    }
}

/// Per-pixel displacement `(u, v)`: pixel `(x, y)` matches `(x + u, y + v)` in the reference.
#[pyclass(
    name = "FlowField",
    module = "pvdeblur_py",
    skip_from_py_object,
    frozen
)]
#[derive(Clone)]
pub struct PyFlowField {
    inner: FlowField,
}

impl From<FlowField> for PyFlowField {
    fn from(inner: FlowField) -> Self {
        PyFlowField { inner }
    }
}

#[pymethods]
impl PyFlowField {
    #[new]
    fn new(width: usize, height: usize, u: Vec<f32>, v: Vec<f32>) -> PyResult<Self> {
        Ok(FlowField::new(width, height, u, v).or_raise()?.into())
    }

    #[staticmethod]
    fn zeros(width: usize, height: usize) -> Self {
        FlowField::zeros(width, height).into()
    }

    #[staticmethod]
    fn constant(width: usize, height: usize, u: f32, v: f32) -> Self {
        FlowField::constant(width, height, u, v).into()
    }

    /// Reads a Middlebury `.flo` file.
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(io::load_flo(path).or_raise()?.into())
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        io::save_flo(&self.inner, path).or_raise()
    }

    #[getter]
    fn width(&self) -> usize {
        self.inner.width()
    }

    #[getter]
    fn height(&self) -> usize {
        self.inner.height()
    }

    fn u(&self) -> Vec<f32> {
        self.inner.u().to_vec()
    }

    fn v(&self) -> Vec<f32> {
        self.inner.v().to_vec()
    }

    fn at(&self, x: usize, y: usize) -> PyResult<(f32, f32)> {
        if x >= self.inner.width() || y >= self.inner.height() {
            return Err(PyValueError::new_err(format!(
                "({x}, {y}) is outside the flow field"
            )));
        }
        Ok(self.inner.at(x, y))
    }

    fn mean_magnitude(&self) -> f64 {
        self.inner.mean_magnitude()
    }

    fn __eq__(&self, other: &Self) -> bool {
        self.inner == other.inner
    }

    fn __repr__(&self) -> String {
        format!("FlowField({}x{})", self.inner.width(), self.inner.height())
    }
}

/// `k²` candidate values per pixel, one slice per window offset.
#[pyclass(
    name = "PixelVolume",
    module = "pvdeblur_py",
    skip_from_py_object,
    frozen
)]
#[derive(Clone)]
pub struct PyPixelVolume {
    inner: PixelVolume,
}

impl From<PixelVolume> for PyPixelVolume {
    fn from(inner: PixelVolume) -> Self {
        PyPixelVolume { inner }
    }
}

impl PyPixelVolume {
    fn check_offset(&self, dx: i64, dy: i64) -> PyResult<()> {
        let r = self.inner.radius();
        if dx.abs() > r || dy.abs() > r {
            return Err(PyValueError::new_err(format!(
                "offset ({dx}, {dy}) is outside the {0}x{0} window",
                self.inner.k()
            )));
        }
        Ok(())
    }
}

#[pymethods]
impl PyPixelVolume {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(io::load_pvol(path).or_raise()?.into())
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        io::save_pvol(&self.inner, path).or_raise()
    }

    #[getter]
    fn width(&self) -> usize {
        self.inner.width()
    }

    #[getter]
    fn height(&self) -> usize {
        self.inner.height()
    }

    #[getter]
    fn k(&self) -> usize {
        self.inner.k()
    }

    fn slice(&self, dx: i64, dy: i64) -> PyResult<Vec<f32>> {
        self.check_offset(dx, dy)?;
        Ok(self.inner.slice(dx, dy).to_vec())
    }

    fn slice_validity(&self, dx: i64, dy: i64) -> PyResult<Vec<bool>> {
        self.check_offset(dx, dy)?;
        Ok(self.inner.slice_validity(dx, dy).to_vec())
    }

    /// `(value, valid, dx, dy)` for every window offset at pixel `(x, y)`.
    fn candidates(&self, x: usize, y: usize) -> PyResult<Vec<(f32, bool, i64, i64)>> {
        if x >= self.inner.width() || y >= self.inner.height() {
            return Err(PyValueError::new_err(format!(
                "({x}, {y}) is outside the volume"
            )));
        }
        Ok(self.inner.candidates(x, y).collect())
    }

    fn __repr__(&self) -> String {
        format!(
            "PixelVolume({}x{}, k={})",
            self.inner.width(),
            self.inner.height(),
            self.inner.k()
        )
    }
}

/// TV-L1 solver settings; `lambda_` weighs the data term on the 0-255 intensity scale.
#[pyclass(
    name = "FlowParams",
    module = "pvdeblur_py",
    skip_from_py_object,
    get_all,
    set_all
)]
#[derive(Clone)]
pub struct PyFlowParams {
    lambda_: f32,
    theta: f32,
    tau: f32,
    warps: usize,
    inner_iterations: usize,
    pyramid_levels: usize,
    zoom: f32,
    median_radius: usize,
}

impl PyFlowParams {
    fn to_core(&self) -> tvl1::FlowParams {
        tvl1::FlowParams {
            lambda: self.lambda_,
            theta: self.theta,
            tau: self.tau,
            warps: self.warps,
            inner_iterations: self.inner_iterations,
            pyramid_levels: self.pyramid_levels,
            zoom: self.zoom,
            median_radius: self.median_radius,
        }
    }
}

#[pymethods]
impl PyFlowParams {
    #[new]
    #[pyo3(signature = (lambda_ = 0.15, theta = 0.3, tau = 0.25, warps = 5, inner_iterations = 30, pyramid_levels = 10, zoom = 0.5, median_radius = 1))]
    #[allow(clippy::too_many_arguments)]
    fn new(
        lambda_: f32,
        theta: f32,
        tau: f32,
        warps: usize,
        inner_iterations: usize,
        pyramid_levels: usize,
        zoom: f32,
        median_radius: usize,
    ) -> PyResult<Self> {
        let p = PyFlowParams {
            lambda_,
            theta,
            tau,
            warps,
            inner_iterations,
            pyramid_levels,
            zoom,
            median_radius,
        };
        p.to_core().validate().or_raise()?;
        Ok(p)
    }

    fn __repr__(&self) -> String {
        format!("FlowParams({:?})", self.to_core())
    }
}

fn flow_params(params: Option<PyRef<'_, PyFlowParams>>) -> tvl1::FlowParams {
    params.map(|p| p.to_core()).unwrap_or_default()
}

/// Synthetic scene description.
#[pyclass(
    name = "SceneSpec",
    module = "pvdeblur_py",
    skip_from_py_object,
    get_all,
    set_all
)]
#[derive(Clone)]
pub struct PySceneSpec {
    seed: u64,
    width: usize,
    height: usize,
    frames: usize,
    texture_sigma: f64,
    substeps: usize,
    velocity_x: f64,
    velocity_y: f64,
    rotation_deg: f64,
    jitter: f64,
    noise_sigma: f64,
}

impl PySceneSpec {
    fn to_core(&self) -> synth::SceneSpec {
        synth::SceneSpec {
            seed: self.seed,
            width: self.width,
            height: self.height,
            frames: self.frames,
            texture_sigma: self.texture_sigma,
            substeps: self.substeps,
            velocity: (self.velocity_x, self.velocity_y),
            rotation_deg: self.rotation_deg,
            jitter: self.jitter,
            noise_sigma: self.noise_sigma,
        }
    }

    fn from_core(s: synth::SceneSpec) -> Self {
        PySceneSpec {
            seed: s.seed,
            width: s.width,
            height: s.height,
            frames: s.frames,
            texture_sigma: s.texture_sigma,
            substeps: s.substeps,
            velocity_x: s.velocity.0,
            velocity_y: s.velocity.1,
            rotation_deg: s.rotation_deg,
            jitter: s.jitter,
            noise_sigma: s.noise_sigma,
        }
    }
}

#[pymethods]
impl PySceneSpec {
    #[new]
    #[pyo3(signature = (seed = 0, width = 128, height = 128, frames = 8, texture_sigma = 1.5, substeps = 1, velocity_x = 0.0, velocity_y = 0.0, rotation_deg = 0.0, jitter = 0.0, noise_sigma = 0.0))]
    #[allow(clippy::too_many_arguments)]
    fn new(
        seed: u64,
        width: usize,
        height: usize,
        frames: usize,
        texture_sigma: f64,
        substeps: usize,
        velocity_x: f64,
        velocity_y: f64,
        rotation_deg: f64,
        jitter: f64,
        noise_sigma: f64,
    ) -> PyResult<Self> {
        let s = PySceneSpec {
            seed,
            width,
            height,
            frames,
            texture_sigma,
            substeps,
            velocity_x,
            velocity_y,
            rotation_deg,
            jitter,
            noise_sigma,
        };
        s.to_core().validate().or_raise()?;
        Ok(s)
    }

    /// Parses `key=value` scene config text.
    #[staticmethod]
    fn parse(text: &str) -> PyResult<Self> {
        Ok(Self::from_core(synth::SceneSpec::parse(text).or_raise()?))
    }

    fn to_config(&self) -> String {
        self.to_core().to_config_string()
    }

    fn __repr__(&self) -> String {
        format!("SceneSpec({:?})", self.to_core())
    }
}

fn frames_of(list: &[PyRef<'_, PyFrame>]) -> Vec<Frame> {
    list.iter().map(|f| f.inner.clone()).collect()
}

fn wrap_frames(frames: Vec<Frame>) -> Vec<PyFrame> {
    frames.into_iter().map(PyFrame::from).collect()
}

/// Renders a scene; returns a dict with `sharp`, `blurred` and `flows` lists.
#[pyfunction]
fn render_sequence<'py>(
    py: Python<'py>,
    spec: PyRef<'py, PySceneSpec>,
) -> PyResult<Bound<'py, PyDict>> {
    let core = spec.to_core();
    let seq = py.detach(|| synth::render_sequence(&core)).or_raise()?;
    let out = PyDict::new(py);
    out.set_item("sharp", wrap_frames(seq.sharp))?;
    out.set_item("blurred", wrap_frames(seq.blurred))?;
    out.set_item(
        "flows",
        seq.flows
            .into_iter()
            .map(PyFlowField::from)
            .collect::<Vec<_>>(),
    )?;
    Ok(out)
}

#[pyfunction]
fn gen_texture(seed: u64, width: usize, height: usize, sigma: f64) -> PyResult<PyFrame> {
    Ok(synth::gen_texture(seed, width, height, sigma)
        .or_raise()?
        .into())
}

/// Samples `reference` at `p + flow(p)`; returns the warped frame and the in-bounds mask.
#[pyfunction]
fn backward_warp(reference: &PyFrame, flow: &PyFlowField) -> PyResult<(PyFrame, Vec<bool>)> {
    let (frame, mask) = warp::backward_warp(&reference.inner, &flow.inner).or_raise()?;
    Ok((frame.into(), mask.values().to_vec()))
}

#[pyfunction]
#[pyo3(signature = (reference, flow, k = 5))]
fn build_pixel_volume(
    reference: &PyFrame,
    flow: &PyFlowField,
    k: usize,
) -> PyResult<PyPixelVolume> {
    Ok(volume::build_pixel_volume(&reference.inner, &flow.inner, k)
        .or_raise()?
        .into())
}

#[pyfunction]
#[pyo3(signature = (reference, flow, k = 5))]
fn build_naive_pixel_volume(
    reference: &PyFrame,
    flow: &PyFlowField,
    k: usize,
) -> PyResult<PyPixelVolume> {
    Ok(
        volume::build_naive_pixel_volume(&reference.inner, &flow.inner, k)
            .or_raise()?
            .into(),
    )
}

#[pyfunction]
fn center_slice(pv: &PyPixelVolume) -> PyFrame {
    volume::center_slice(&pv.inner).into()
}

/// Majority-based warp and the mask of pixels holding a strict majority.
#[pyfunction]
fn majority_warp(pv: &PyPixelVolume) -> (PyFrame, Vec<bool>) {
    let (frame, mask) = volume::majority_warp(&pv.inner);
    (frame.into(), mask.values().to_vec())
}

#[pyfunction]
fn ideal_warp(pv: &PyPixelVolume, gt: &PyFrame) -> PyResult<PyFrame> {
    Ok(volume::ideal_warp(&pv.inner, &gt.inner).or_raise()?.into())
}

#[pyfunction]
#[pyo3(signature = (pv, gt, tolerances = vec![0, 1, 2, 4, 8]))]
fn pv_statistics<'py>(
    py: Python<'py>,
    pv: &PyPixelVolume,
    gt: &PyFrame,
    tolerances: Vec<u32>,
) -> PyResult<Bound<'py, PyDict>> {
    let s = volume::pv_statistics(&pv.inner, &gt.inner, &tolerances).or_raise()?;
    let out = PyDict::new(py);
    out.set_item("total_pixels", s.total_pixels)?;
    out.set_item("evaluated_pixels", s.evaluated_pixels)?;
    out.set_item("majority_fraction", s.majority_fraction)?;
    out.set_item("majority_accuracy", s.majority_accuracy)?;
    out.set_item("region_tolerance", s.region_tolerance)?;
    out.set_item("correct_majority", s.correct_majority)?;
    out.set_item("wrong_majority", s.wrong_majority)?;
    out.set_item("no_majority", s.no_majority)?;
    Ok(out)
}

/// TV-L1 flow mapping `target` pixels onto `reference`.
#[pyfunction]
#[pyo3(signature = (target, reference, params = None))]
fn estimate_flow(
    py: Python<'_>,
    target: &PyFrame,
    reference: &PyFrame,
    params: Option<PyRef<'_, PyFlowParams>>,
) -> PyResult<PyFlowField> {
    let params = flow_params(params);
    let (t, r) = (target.inner.clone(), reference.inner.clone());
    Ok(py
        .detach(|| tvl1::estimate_flow(&t, &r, &params))
        .or_raise()?
        .into())
}

#[pyfunction]
fn psnr(a: &PyFrame, b: &PyFrame) -> PyResult<f64> {
    metrics::psnr(&a.inner, &b.inner).or_raise()
}

#[pyfunction]
fn ssim(a: &PyFrame, b: &PyFrame) -> PyResult<f64> {
    metrics::ssim(&a.inner, &b.inner).or_raise()
}

/// Best score over integer shifts: compares `a(x, y)` with `b(x + dx, y + dy)`.
/// Returns `(score, dx, dy)`.
#[pyfunction]
#[pyo3(signature = (a, b, radius = 10, which = "psnr"))]
fn aligned_metric(
    a: &PyFrame,
    b: &PyFrame,
    radius: usize,
    which: &str,
) -> PyResult<(f64, i64, i64)> {
    let which = match which {
        "psnr" => Metric::Psnr,
        "ssim" => Metric::Ssim,
        other => return Err(PyValueError::new_err(format!("unknown metric '{other}'"))),
    };
    let r = metrics::aligned_metric(&a.inner, &b.inner, radius, which).or_raise()?;
    Ok((r.score, r.dx, r.dy))
}

/// Mean endpoint error over the central `interior` fraction of the frame.
#[pyfunction]
#[pyo3(signature = (flow, gt, interior = 1.0))]
fn endpoint_error(flow: &PyFlowField, gt: &PyFlowField, interior: f64) -> PyResult<f64> {
    if !(interior > 0.0 && interior <= 1.0) {
        return Err(PyValueError::new_err("interior must lie in (0, 1]"));
    }
    let mask = metrics::interior_mask(flow.inner.width(), flow.inner.height(), interior);
    metrics::endpoint_error(&flow.inner, &gt.inner, &mask).or_raise()
}

/// Runs the recurrent deblurring loop over a list of blurry frames.
#[pyfunction]
#[pyo3(signature = (blurry, k = 5, deblurrer = "aggregate", sigma_c = 0.08, params = None))]
fn deblur_sequence(
    py: Python<'_>,
    blurry: Vec<PyRef<'_, PyFrame>>,
    k: usize,
    deblurrer: &str,
    sigma_c: f32,
    params: Option<PyRef<'_, PyFlowParams>>,
) -> PyResult<Vec<PyFrame>> {
    let config = PipelineConfig {
        k,
        flow: flow_params(params),
        deblurrer: deblurrer
            .parse::<DeblurrerKind>()
            .map_err(PyValueError::new_err)?,
        sigma_c,
        ..Default::default()
    };
    let frames = frames_of(&blurry);
    let est = py
        .detach(|| pipeline::deblur_sequence(&frames, &config))
        .or_raise()?;
    Ok(wrap_frames(est))
}

/// Per-frame metric reports as dictionaries.
#[pyfunction]
#[pyo3(signature = (frames, sharp, radius = 10))]
fn evaluate_sequence<'py>(
    py: Python<'py>,
    frames: Vec<PyRef<'py, PyFrame>>,
    sharp: Vec<PyRef<'py, PyFrame>>,
    radius: usize,
) -> PyResult<Vec<Bound<'py, PyDict>>> {
    let (a, b) = (frames_of(&frames), frames_of(&sharp));
    let reports = py
        .detach(|| pipeline::evaluate_sequence(&a, &b, radius))
        .or_raise()?;
    reports
        .into_iter()
        .map(|r| {
            let d = PyDict::new(py);
            d.set_item("frame_index", r.frame_index)?;
            d.set_item("psnr", r.psnr)?;
            d.set_item("ssim", r.ssim)?;
            d.set_item("aligned_psnr", r.aligned_psnr)?;
            d.set_item("aligned_ssim", r.aligned_ssim)?;
            d.set_item("dx", r.dx)?;
            d.set_item("dy", r.dy)?;
            d.set_item("epe", r.epe)?;
            Ok(d)
        })
        .collect()
}

#[pymodule]
fn pvdeblur_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyFrame>()?;
    m.add_class::<PyFlowField>()?;
    m.add_class::<PyPixelVolume>()?;
    m.add_class::<PyFlowParams>()?;
    m.add_class::<PySceneSpec>()?;
    m.add_function(wrap_pyfunction!(render_sequence, m)?)?;
    m.add_function(wrap_pyfunction!(gen_texture, m)?)?;
    m.add_function(wrap_pyfunction!(backward_warp, m)?)?;
    m.add_function(wrap_pyfunction!(build_pixel_volume, m)?)?;
    m.add_function(wrap_pyfunction!(build_naive_pixel_volume, m)?)?;
    m.add_function(wrap_pyfunction!(center_slice, m)?)?;
    m.add_function(wrap_pyfunction!(majority_warp, m)?)?;
    m.add_function(wrap_pyfunction!(ideal_warp, m)?)?;
    m.add_function(wrap_pyfunction!(pv_statistics, m)?)?;
    m.add_function(wrap_pyfunction!(estimate_flow, m)?)?;
    m.add_function(wrap_pyfunction!(psnr, m)?)?;
    m.add_function(wrap_pyfunction!(ssim, m)?)?;
    m.add_function(wrap_pyfunction!(aligned_metric, m)?)?;
    m.add_function(wrap_pyfunction!(endpoint_error, m)?)?;
    m.add_function(wrap_pyfunction!(deblur_sequence, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate_sequence, m)?)?;
    Ok(())
}
