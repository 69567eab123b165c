use std::sync::Arc;

use ndarray::{s, Array2, Axis};

use super::params::{InputSpec, NetworkParams, NetworkSpec};
use super::NeuralError;

/// One observation frame as fed to the network. Grid frames are stored as the
/// indices of their active (value 1) cells; all other cells are 0.
#[derive(Debug, Clone, PartialEq)]
pub enum Frame {
    Grids { lidar: Vec<u16>, bev: Vec<u16> },
    Vector(Vec<f64>),
}

/// One batch element: a frame sequence plus the per-sequence extra scalars
/// appended to every timestep's fused feature.
#[derive(Clone, Copy)]
pub struct SeqInput<'a> {
    pub frames: &'a [Arc<Frame>],
    pub extras: &'a [f64],
}

/// LSTM carry. Zeroed at sequence start.
#[derive(Debug, Clone)]
pub struct HiddenState {
    pub h: Array2<f64>,
    pub c: Array2<f64>,
}

impl HiddenState {
    pub fn zeros(batch: usize, hidden: usize) -> Self {
        HiddenState {
            h: Array2::zeros((batch, hidden)),
            c: Array2::zeros((batch, hidden)),
        }
    }
}

/// Everything `backward` needs: cached activations per timestep plus the
/// sparse input indices for the preprocessing weight gradients.
pub struct Tape {
    spec_hash: u64,
    batch: usize,
    steps: usize,
    frames: Vec<Vec<Arc<Frame>>>, // [t][b]
    fused: Vec<Array2<f64>>,      // tanh-activated features + raw extras
    a1: Vec<Array2<f64>>,
    gates: Vec<Array2<f64>>, // post-nonlinearity, [i|f|g|o]
    cells: Vec<Array2<f64>>,
    tanh_c: Vec<Array2<f64>>,
    hidden: Vec<Array2<f64>>,
    c0: Array2<f64>,
    h0: Array2<f64>,
    a2: Array2<f64>,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn check_frame(spec: &NetworkSpec, frame: &Frame) -> Result<(), NeuralError> {
    match (&spec.input, frame) {
        (
            InputSpec::Grids {
                lidar_cells,
                bev_cells,
                ..
            },
            Frame::Grids { lidar, bev },
        ) => {
            if lidar.iter().any(|&i| i as usize >= *lidar_cells)
                || bev.iter().any(|&i| i as usize >= *bev_cells)
            {
                return Err(NeuralError::Shape("grid cell index out of range".into()));
            }
            Ok(())
        }
        (InputSpec::Vector { dim }, Frame::Vector(v)) => {
            if v.len() != *dim {
                return Err(NeuralError::Shape(format!(
                    "vector frame has {} entries, spec wants {dim}",
                    v.len()
                )));
            }
            Ok(())
        }
        _ => Err(NeuralError::Shape(
            "frame kind does not match input spec".into(),
        )),
    }
}

/// Sparse flatten-and-project of one grid: bias + sum of active weight rows,
/// then tanh, written into `out`.
fn project_grid(
    weight: &Array2<f64>,
    bias: &Array2<f64>,
    active: &[u16],
    out: &mut ndarray::ArrayViewMut1<f64>,
) {
    out.assign(&bias.row(0));
    for &idx in active {
        let row = weight.row(idx as usize);
        out.zip_mut_with(&row, |o, &w| *o += w);
    }
    out.mapv_inplace(f64::tanh);
}

/// Run the network over a batch of equal-length sequences and return the
/// final-step head output together with the tape and the final LSTM carry.
pub fn forward(
    spec: &NetworkSpec,
    params: &NetworkParams,
    seqs: &[SeqInput],
    h0: &HiddenState,
) -> Result<(Array2<f64>, Tape, HiddenState), NeuralError> {
    let batch = seqs.len();
    if batch == 0 {
        return Err(NeuralError::Shape("empty batch".into()));
    }
    let steps = seqs[0].frames.len();
    if steps == 0 {
        return Err(NeuralError::Shape("sequence length must be >= 1".into()));
    }
    for s in seqs {
        if s.frames.len() != steps {
            return Err(NeuralError::Shape("ragged sequence lengths".into()));
        }
        if s.extras.len() != spec.extra_inputs {
            return Err(NeuralError::Shape(format!(
                "{} extras supplied, spec wants {}",
                s.extras.len(),
                spec.extra_inputs
            )));
        }
        if !s.extras.iter().all(|v| v.is_finite()) {
            return Err(NeuralError::NonFinite("extras".into()));
        }
        for f in s.frames {
            check_frame(spec, f)?;
        }
    }
    if h0.h.dim() != (batch, spec.lstm) || h0.c.dim() != (batch, spec.lstm) {
        return Err(NeuralError::Shape("hidden state shape".into()));
    }

    let fused_w = spec.fused_width();
    let in_w = params.record("in_w");
    let in_b = params.record("in_b");
    let wx = params.record("lstm_wx");
    let wh = params.record("lstm_wh");
    let lb = params.record("lstm_b");
    let hidden_w = spec.lstm;

    let mut tape = Tape {
        spec_hash: spec.hash(),
        batch,
        steps,
        frames: Vec::with_capacity(steps),
        fused: Vec::with_capacity(steps),
        a1: Vec::with_capacity(steps),
        gates: Vec::with_capacity(steps),
        cells: Vec::with_capacity(steps),
        tanh_c: Vec::with_capacity(steps),
        hidden: Vec::with_capacity(steps),
        c0: h0.c.clone(),
        h0: h0.h.clone(),
        a2: Array2::zeros((0, 0)),
    };

    let mut h_prev = h0.h.clone();
    let mut c_prev = h0.c.clone();

    for t in 0..steps {
        let mut fused = Array2::zeros((batch, fused_w));
        match &spec.input {
            InputSpec::Grids { feature, .. } => {
                let wl = params.record("pre_lidar_w");
                let bl = params.record("pre_lidar_b");
                let wb = params.record("pre_bev_w");
                let bb = params.record("pre_bev_b");
                for (b, seq) in seqs.iter().enumerate() {
                    let Frame::Grids { lidar, bev } = seq.frames[t].as_ref() else {
                        unreachable!()
                    };
                    let mut row = fused.row_mut(b);
                    project_grid(wl, bl, lidar, &mut row.slice_mut(s![0..*feature]));
                    project_grid(wb, bb, bev, &mut row.slice_mut(s![*feature..2 * feature]));
                    for (j, &e) in seq.extras.iter().enumerate() {
                        row[2 * feature + j] = e;
                    }
                }
            }
            InputSpec::Vector { dim } => {
                for (b, seq) in seqs.iter().enumerate() {
                    let Frame::Vector(v) = seq.frames[t].as_ref() else {
                        unreachable!()
                    };
                    let mut row = fused.row_mut(b);
                    for (j, &x) in v.iter().enumerate() {
                        row[j] = x;
                    }
                    for (j, &e) in seq.extras.iter().enumerate() {
                        row[dim + j] = e;
                    }
                }
            }
        }

        let mut a1 = fused.dot(in_w) + in_b;
        a1.mapv_inplace(f64::tanh);

        let mut gates = a1.dot(wx) + h_prev.dot(wh) + lb;
        let mut cells = Array2::zeros((batch, hidden_w));
        let mut h_t = Array2::zeros((batch, hidden_w));
        let mut tanh_c = Array2::zeros((batch, hidden_w));
        for b in 0..batch {
            for j in 0..hidden_w {
                let i_g = sigmoid(gates[[b, j]]);
                let f_g = sigmoid(gates[[b, hidden_w + j]]);
                let g_g = gates[[b, 2 * hidden_w + j]].tanh();
                let o_g = sigmoid(gates[[b, 3 * hidden_w + j]]);
                gates[[b, j]] = i_g;
                gates[[b, hidden_w + j]] = f_g;
                gates[[b, 2 * hidden_w + j]] = g_g;
                gates[[b, 3 * hidden_w + j]] = o_g;
                let c = f_g * c_prev[[b, j]] + i_g * g_g;
                let tc = c.tanh();
                cells[[b, j]] = c;
                tanh_c[[b, j]] = tc;
                h_t[[b, j]] = o_g * tc;
            }
        }

        tape.frames
            .push(seqs.iter().map(|s| s.frames[t].clone()).collect());
        tape.fused.push(fused);
        tape.a1.push(a1);
        tape.gates.push(gates);
        tape.cells.push(cells.clone());
        tape.tanh_c.push(tanh_c);
        tape.hidden.push(h_t.clone());
        h_prev = h_t;
        c_prev = cells;
    }

    let mut a2 = h_prev.dot(params.record("out_w")) + params.record("out_b");
    a2.mapv_inplace(f64::tanh);
    let output = a2.dot(params.record("head_w")) + params.record("head_b");
    tape.a2 = a2;

    if output.iter().any(|v| !v.is_finite()) {
        return Err(NeuralError::NonFinite("network output".into()));
    }
    let h_out = HiddenState {
        h: h_prev,
        c: c_prev,
    };
    Ok((output, tape, h_out))
}

/// Reverse accumulation through the recorded forward pass. Returns parameter
/// gradients (same layout as `params`) and the gradient with respect to the
/// extra inputs, summed over timesteps.
pub fn backward(
    spec: &NetworkSpec,
    params: &NetworkParams,
    tape: &Tape,
    output_grad: &Array2<f64>,
) -> Result<(NetworkParams, Array2<f64>), NeuralError> {
    if tape.spec_hash != spec.hash() {
        return Err(NeuralError::Tape("tape recorded under a different spec".into()));
    }
    if output_grad.dim() != (tape.batch, spec.head) {
        return Err(NeuralError::Shape(format!(
            "output_grad is {:?}, want ({}, {})",
            output_grad.dim(),
            tape.batch,
            spec.head
        )));
    }

    let batch = tape.batch;
    let hidden_w = spec.lstm;
    let mut grads = spec.zero_params();
    let mut extras_grad = Array2::zeros((batch, spec.extra_inputs));

    // Head and output MLP (final timestep only).
    let a2 = &tape.a2;
    set(&mut grads, "head_w", a2.t().dot(output_grad));
    set(&mut grads, "head_b", colsum(output_grad));
    let da2 = output_grad.dot(&params.record("head_w").t());
    let dz2 = &da2 * &a2.mapv(|v| 1.0 - v * v);
    let h_last = &tape.hidden[tape.steps - 1];
    set(&mut grads, "out_w", h_last.t().dot(&dz2));
    set(&mut grads, "out_b", colsum(&dz2));

    let mut dh = dz2.dot(&params.record("out_w").t());
    let mut dc: Array2<f64> = Array2::zeros((batch, hidden_w));

    let wx = params.record("lstm_wx");
    let wh = params.record("lstm_wh");
    let in_w = params.record("in_w");

    for t in (0..tape.steps).rev() {
        let gates = &tape.gates[t];
        let tanh_c = &tape.tanh_c[t];
        let c_prev = if t > 0 { &tape.cells[t - 1] } else { &tape.c0 };
        let h_prev = if t > 0 { &tape.hidden[t - 1] } else { &tape.h0 };

        let mut dgates = Array2::zeros((batch, 4 * hidden_w));
        let mut dc_prev = Array2::zeros((batch, hidden_w));
        for b in 0..batch {
            for j in 0..hidden_w {
                let i_g = gates[[b, j]];
                let f_g = gates[[b, hidden_w + j]];
                let g_g = gates[[b, 2 * hidden_w + j]];
                let o_g = gates[[b, 3 * hidden_w + j]];
                let tc = tanh_c[[b, j]];
                let dh_bj = dh[[b, j]];
                let dcell = dc[[b, j]] + dh_bj * o_g * (1.0 - tc * tc);
                dgates[[b, j]] = dcell * g_g * i_g * (1.0 - i_g);
                dgates[[b, hidden_w + j]] =
                    dcell * c_prev[[b, j]] * f_g * (1.0 - f_g);
                dgates[[b, 2 * hidden_w + j]] = dcell * i_g * (1.0 - g_g * g_g);
                dgates[[b, 3 * hidden_w + j]] = dh_bj * tc * o_g * (1.0 - o_g);
                dc_prev[[b, j]] = dcell * f_g;
            }
        }

        add(&mut grads, "lstm_wx", &tape.a1[t].t().dot(&dgates));
        add(&mut grads, "lstm_wh", &h_prev.t().dot(&dgates));
        add(&mut grads, "lstm_b", &colsum(&dgates));

        let dx = dgates.dot(&wx.t());
        dh = dgates.dot(&wh.t());
        dc = dc_prev;

        let a1 = &tape.a1[t];
        let dz1 = &dx * &a1.mapv(|v| 1.0 - v * v);
        let fused = &tape.fused[t];
        add(&mut grads, "in_w", &fused.t().dot(&dz1));
        add(&mut grads, "in_b", &colsum(&dz1));
        let dfused = dz1.dot(&in_w.t());

        match &spec.input {
            InputSpec::Grids { feature, .. } => {
                let feat = *feature;
                for which in 0..2 {
                    let (wname, bname, lo) = if which == 0 {
                        ("pre_lidar_w", "pre_lidar_b", 0)
                    } else {
                        ("pre_bev_w", "pre_bev_b", feat)
                    };
                    let dfeat = dfused.slice(s![.., lo..lo + feat]);
                    let featv = fused.slice(s![.., lo..lo + feat]);
                    // tanh backward
                    let dpre = &dfeat.to_owned() * &featv.mapv(|v| 1.0 - v * v);
                    add(&mut grads, bname, &colsum(&dpre));
                    let wrec = grads
                        .records
                        .iter_mut()
                        .find(|r| r.name == wname)
                        .unwrap();
                    for b in 0..batch {
                        let active = match tape.frames[t][b].as_ref() {
                            Frame::Grids { lidar, bev } => {
                                if which == 0 {
                                    lidar
                                } else {
                                    bev
                                }
                            }
                            Frame::Vector(_) => unreachable!(),
                        };
                        let src = dpre.row(b);
                        for &idx in active {
                            let mut dst = wrec.data.row_mut(idx as usize);
                            dst.zip_mut_with(&src, |d, &g| *d += g);
                        }
                    }
                }
                if spec.extra_inputs > 0 {
                    extras_grad += &dfused.slice(s![.., 2 * feat..]);
                }
            }
            InputSpec::Vector { dim } => {
                if spec.extra_inputs > 0 {
                    extras_grad += &dfused.slice(s![.., *dim..]);
                }
            }
        }
    }

    Ok((grads, extras_grad))
}

fn colsum(a: &Array2<f64>) -> Array2<f64> {
    a.sum_axis(Axis(0)).insert_axis(Axis(0))
}

fn set(grads: &mut NetworkParams, name: &str, value: Array2<f64>) {
    let rec = grads.records.iter_mut().find(|r| r.name == name).unwrap();
    rec.data = value;
}

fn add(grads: &mut NetworkParams, name: &str, value: &Array2<f64>) {
    let rec = grads.records.iter_mut().find(|r| r.name == name).unwrap();
    rec.data += value;
}
