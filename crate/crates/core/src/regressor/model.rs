//! The logical-location regressor: geometric stem, sinusoidal position
//! embeddings, self-attention encoders and the cascading base + stacking
//! heads, all built on the autodiff tape.

use ndarray::{Array1, Array2};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::grid::{LogicalLocation, TableCell};
use crate::regressor::tape::{NodeId, Tape};
use crate::regressor::RegressorError;

/// Width of the per-cell geometric descriptor: normalized centroid (2),
/// width, height, and the 8 normalized corner coordinates.
pub const DESCRIPTOR_DIM: usize = 12;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RegressorConfig {
    /// Hidden size; must be divisible by `heads` and by 4.
    pub d: usize,
    pub layers_base: usize,
    /// Zero disables the cascade: a single deeper regressor is trained.
    pub layers_stack: usize,
    pub heads: usize,
    /// Feed-forward sublayer width.
    pub ffn_dim: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    /// Epochs at which the rate is multiplied by `decay_factor`.
    pub decay_epochs: Vec<usize>,
    pub decay_factor: f64,
    pub enable_inter_loss: bool,
    pub enable_intra_loss: bool,
    pub seed: u64,
}

impl Default for RegressorConfig {
    fn default() -> Self {
        Self {
            d: 64,
            layers_base: 3,
            layers_stack: 3,
            heads: 4,
            ffn_dim: 128,
            epochs: 100,
            learning_rate: 1e-3,
            decay_epochs: vec![70, 90],
            decay_factor: 0.1,
            enable_inter_loss: true,
            enable_intra_loss: true,
            seed: 0,
        }
    }
}

impl RegressorConfig {
    pub fn validate(&self) -> Result<(), RegressorError> {
        let fail = |what: &str| Err(RegressorError::Config(what.to_string()));
        if self.d == 0 || self.d % self.heads != 0 {
            return fail("d must be positive and divisible by heads");
        }
        if self.d % 4 != 0 {
            return fail("d must be divisible by 4 for the position embedding");
        }
        if self.layers_base == 0 {
            return fail("layers_base must be at least 1");
        }
        if self.ffn_dim == 0 {
            return fail("ffn_dim must be positive");
        }
        if self.learning_rate <= 0.0 || self.decay_factor <= 0.0 {
            return fail("rates must be positive");
        }
        if self.epochs == 0 {
            return fail("epochs must be at least 1");
        }
        Ok(())
    }
}

/// One self-attention layer: fused QKV/output projections plus the
/// feed-forward sublayer, residual connections around both.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AttentionLayerParams {
    pub wq: Array2<f64>,
    pub bq: Array2<f64>,
    pub wk: Array2<f64>,
    pub bk: Array2<f64>,
    pub wv: Array2<f64>,
    pub bv: Array2<f64>,
    pub wo: Array2<f64>,
    pub bo: Array2<f64>,
    pub w1: Array2<f64>,
    pub b1: Array2<f64>,
    pub w2: Array2<f64>,
    pub b2: Array2<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RegressorParams {
    pub config: RegressorConfig,
    /// Projection of the geometric descriptor to d dimensions.
    pub stem_w: Array2<f64>,
    pub stem_b: Array2<f64>,
    /// Projection of one normalized corner point to d dimensions.
    pub corner_w: Array2<f64>,
    pub corner_b: Array2<f64>,
    /// The four learnable corner mixing weights, as a 1 x 4 row.
    pub corner_weights: Array2<f64>,
    pub base_layers: Vec<AttentionLayerParams>,
    pub base_head_w: Array2<f64>,
    pub base_head_b: Array2<f64>,
    /// 4 x d projection feeding the base prediction into the stack.
    pub stack_proj: Array2<f64>,
    pub stack_layers: Vec<AttentionLayerParams>,
    pub stack_head_w: Array2<f64>,
    pub stack_head_b: Array2<f64>,
}

fn xavier(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    Array2::from_shape_fn((rows, cols), |_| rng.gen_range(-bound..bound))
}

/// See the output-head comment in `RegressorParams::init`.
const HEAD_INIT_SCALE: f64 = 0.1;

fn scaled_xavier(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Array2<f64> {
    let mut w = xavier(rng, rows, cols);
    w.mapv_inplace(|x| scale * x);
    w
}

fn attention_layer(rng: &mut ChaCha8Rng, d: usize, ffn: usize) -> AttentionLayerParams {
    AttentionLayerParams {
        wq: xavier(rng, d, d),
        bq: Array2::zeros((1, d)),
        wk: xavier(rng, d, d),
        bk: Array2::zeros((1, d)),
        wv: xavier(rng, d, d),
        bv: Array2::zeros((1, d)),
        wo: xavier(rng, d, d),
        bo: Array2::zeros((1, d)),
        w1: xavier(rng, d, ffn),
        b1: Array2::zeros((1, ffn)),
        w2: xavier(rng, ffn, d),
        b2: Array2::zeros((1, d)),
    }
}

impl RegressorParams {
    pub fn init(config: &RegressorConfig, rng: &mut ChaCha8Rng) -> Result<Self, RegressorError> {
        config.validate()?;
        let d = config.d;
        let ffn = config.ffn_dim;
        let base_layers =
            (0..config.layers_base).map(|_| attention_layer(rng, d, ffn)).collect();
        let stack_layers =
            (0..config.layers_stack).map(|_| attention_layer(rng, d, ffn)).collect();
        Ok(Self {
            config: config.clone(),
            stem_w: xavier(rng, DESCRIPTOR_DIM, d),
            stem_b: Array2::zeros((1, d)),
            corner_w: xavier(rng, 2, d),
            corner_b: Array2::zeros((1, d)),
            corner_weights: Array2::from_elem((1, 4), 0.25),
            base_layers,
            // Output heads start small and positive. The encoder's residual
            // stream has O(1) per-channel variance but no normalization, so a
            // plain Xavier head emits indices around ~10 at init; the L1 pull
            // back toward small targets then drives the whole ReLU head
            // negative within one epoch and it never recovers. Scaling the
            // head weights by 0.1 and starting the biases at +1 puts the
            // initial outputs near 1 with balanced gradient signs.
            base_head_w: scaled_xavier(rng, d, 4, HEAD_INIT_SCALE),
            base_head_b: Array2::from_elem((1, 4), 1.0),
            stack_proj: xavier(rng, 4, d),
            stack_layers,
            stack_head_w: scaled_xavier(rng, d, 4, HEAD_INIT_SCALE),
            stack_head_b: Array2::from_elem((1, 4), 1.0),
        })
    }

    pub fn cascade(&self) -> bool {
        self.config.layers_stack > 0
    }

    /// All learnable tensors with stable names, in a fixed order.
    pub fn tensors(&self) -> Vec<(String, &Array2<f64>)> {
        let mut out: Vec<(String, &Array2<f64>)> = vec![
            ("stem_w".into(), &self.stem_w),
            ("stem_b".into(), &self.stem_b),
            ("corner_w".into(), &self.corner_w),
            ("corner_b".into(), &self.corner_b),
            ("corner_weights".into(), &self.corner_weights),
        ];
        for (prefix, layers) in
            [("base", &self.base_layers), ("stack", &self.stack_layers)]
        {
            for (i, layer) in layers.iter().enumerate() {
                for (name, tensor) in [
                    ("wq", &layer.wq),
                    ("bq", &layer.bq),
                    ("wk", &layer.wk),
                    ("bk", &layer.bk),
                    ("wv", &layer.wv),
                    ("bv", &layer.bv),
                    ("wo", &layer.wo),
                    ("bo", &layer.bo),
                    ("w1", &layer.w1),
                    ("b1", &layer.b1),
                    ("w2", &layer.w2),
                    ("b2", &layer.b2),
                ] {
                    out.push((format!("{prefix}.{i}.{name}"), tensor));
                }
            }
        }
        out.push(("base_head_w".into(), &self.base_head_w));
        out.push(("base_head_b".into(), &self.base_head_b));
        if self.cascade() {
            out.push(("stack_proj".into(), &self.stack_proj));
            out.push(("stack_head_w".into(), &self.stack_head_w));
            out.push(("stack_head_b".into(), &self.stack_head_b));
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Array2<f64>> {
        let cascade = self.cascade();
        let mut out: Vec<&mut Array2<f64>> = vec![
            &mut self.stem_w,
            &mut self.stem_b,
            &mut self.corner_w,
            &mut self.corner_b,
            &mut self.corner_weights,
        ];
        for layers in [&mut self.base_layers, &mut self.stack_layers] {
            for layer in layers.iter_mut() {
                out.push(&mut layer.wq);
                out.push(&mut layer.bq);
                out.push(&mut layer.wk);
                out.push(&mut layer.bk);
                out.push(&mut layer.wv);
                out.push(&mut layer.bv);
                out.push(&mut layer.wo);
                out.push(&mut layer.bo);
                out.push(&mut layer.w1);
                out.push(&mut layer.b1);
                out.push(&mut layer.w2);
                out.push(&mut layer.b2);
            }
        }
        out.push(&mut self.base_head_w);
        out.push(&mut self.base_head_b);
        if cascade {
            out.push(&mut self.stack_proj);
            out.push(&mut self.stack_head_w);
            out.push(&mut self.stack_head_b);
        }
        out
    }
}

/// Deterministic 2-d sinusoidal embedding: the first d/2 components encode
/// x, the last d/2 encode y, each half as interleaved sine/cosine pairs
/// over geometrically spaced frequencies (base period 1, ratio
/// 10000^(4k/d)).
pub fn position_embedding(x: f64, y: f64, d: usize) -> Result<Array1<f64>, RegressorError> {
    if !(0.0..=1.0).contains(&x) || !(0.0..=1.0).contains(&y) {
        return Err(RegressorError::Domain(format!(
            "position ({x}, {y}) outside the unit square"
        )));
    }
    if d == 0 || d % 4 != 0 {
        return Err(RegressorError::Domain(format!(
            "embedding size {d} must be a positive multiple of 4"
        )));
    }
    let mut out = Array1::zeros(d);
    let pairs = d / 4;
    let tau = std::f64::consts::TAU;
    for (half, coord) in [(0, x), (d / 2, y)] {
        for k in 0..pairs {
            let omega = tau / 10000f64.powf(4.0 * k as f64 / d as f64);
            out[half + 2 * k] = (coord * omega).sin();
            out[half + 2 * k + 1] = (coord * omega).cos();
        }
    }
    Ok(out)
}

/// Geometric inputs of one table, normalized by the image size.
pub struct CellGeometry {
    /// N x DESCRIPTOR_DIM stem input.
    pub descriptors: Array2<f64>,
    /// Four N x 2 corner coordinate blocks, in corner order.
    pub corners: [Array2<f64>; 4],
    /// Four N x d position embedding blocks for the corners.
    pub corner_pe: [Array2<f64>; 4],
}

impl CellGeometry {
    pub fn from_cells(
        cells: &[TableCell],
        image_size: [f64; 2],
        d: usize,
    ) -> Result<Self, RegressorError> {
        if cells.is_empty() {
            return Err(RegressorError::EmptyInput);
        }
        let [w, h] = image_size;
        let n = cells.len();
        let mut descriptors = Array2::zeros((n, DESCRIPTOR_DIM));
        let mut corners = std::array::from_fn(|_| Array2::zeros((n, 2)));
        let mut corner_pe = std::array::from_fn(|_| Array2::zeros((n, d)));
        for (i, cell) in cells.iter().enumerate() {
            let quad = cell.quad.ok_or(RegressorError::MissingQuad { cell: cell.id })?;
            let [cx, cy] = quad.centroid();
            let (x0, y0, x1, y1) = quad.aabb();
            descriptors[[i, 0]] = cx / w;
            descriptors[[i, 1]] = cy / h;
            descriptors[[i, 2]] = (x1 - x0) / w;
            descriptors[[i, 3]] = (y1 - y0) / h;
            for (k, [px, py]) in quad.corners.iter().enumerate() {
                let nx = (px / w).clamp(0.0, 1.0);
                let ny = (py / h).clamp(0.0, 1.0);
                descriptors[[i, 4 + 2 * k]] = nx;
                descriptors[[i, 5 + 2 * k]] = ny;
                corners[k][[i, 0]] = nx;
                corners[k][[i, 1]] = ny;
                let pe = position_embedding(nx, ny, d)?;
                corner_pe[k].row_mut(i).assign(&pe);
            }
        }
        Ok(Self { descriptors, corners, corner_pe })
    }
}

/// Node ids of the taped forward pass.
pub struct ForwardPass {
    /// Parameter leaf ids, in `RegressorParams::tensors` order.
    pub param_nodes: Vec<NodeId>,
    /// Encoder output of the base path.
    pub encoded: NodeId,
    /// Base regressor prediction, N x 4, non-negative.
    pub base_logits: NodeId,
    /// Stacking regressor prediction; absent when the cascade is disabled.
    pub stack_logits: Option<NodeId>,
}

impl ForwardPass {
    /// The prediction used at inference: the stacking output when present.
    pub fn final_logits(&self) -> NodeId {
        self.stack_logits.unwrap_or(self.base_logits)
    }
}

struct LayerNodes {
    wq: NodeId,
    bq: NodeId,
    wk: NodeId,
    bk: NodeId,
    wv: NodeId,
    bv: NodeId,
    wo: NodeId,
    bo: NodeId,
    w1: NodeId,
    b1: NodeId,
    w2: NodeId,
    b2: NodeId,
}

fn encode_layer(tape: &mut Tape, input: NodeId, layer: &LayerNodes, heads: usize) -> NodeId {
    let d = tape.value(input).ncols();
    let head_dim = d / heads;
    let q_lin = tape.matmul(input, layer.wq);
    let q = tape.add_row(q_lin, layer.bq);
    let k_lin = tape.matmul(input, layer.wk);
    let k = tape.add_row(k_lin, layer.bk);
    let v_lin = tape.matmul(input, layer.wv);
    let v = tape.add_row(v_lin, layer.bv);
    let mut head_outputs = Vec::with_capacity(heads);
    for h in 0..heads {
        let (start, end) = (h * head_dim, (h + 1) * head_dim);
        let qh = tape.col_slice(q, start, end);
        let kh = tape.col_slice(k, start, end);
        let vh = tape.col_slice(v, start, end);
        let scores = tape.matmul_transposed(qh, kh);
        let scaled = tape.scale_const(scores, 1.0 / (head_dim as f64).sqrt());
        let attn = tape.softmax_rows(scaled);
        head_outputs.push(tape.matmul(attn, vh));
    }
    let merged = tape.concat_cols(head_outputs);
    let proj_lin = tape.matmul(merged, layer.wo);
    let proj = tape.add_row(proj_lin, layer.bo);
    let after_attn = tape.add(input, proj);
    let ffn_lin = tape.matmul(after_attn, layer.w1);
    let ffn_pre = tape.add_row(ffn_lin, layer.b1);
    let ffn_act = tape.relu(ffn_pre);
    let ffn_out_lin = tape.matmul(ffn_act, layer.w2);
    let ffn_out = tape.add_row(ffn_out_lin, layer.b2);
    tape.add(after_attn, ffn_out)
}

/// Builds the full taped forward pass for one table.
pub fn forward(
    tape: &mut Tape,
    params: &RegressorParams,
    geometry: &CellGeometry,
) -> ForwardPass {
    let mut param_nodes = Vec::new();
    for (_, tensor) in params.tensors() {
        param_nodes.push(tape.leaf(tensor.clone()));
    }
    let mut cursor = 0usize;
    let mut next = || {
        let id = param_nodes[cursor];
        cursor += 1;
        id
    };
    let stem_w = next();
    let stem_b = next();
    let corner_w = next();
    let corner_b = next();
    let corner_weights = next();
    let layer_nodes = |count: usize, next: &mut dyn FnMut() -> NodeId| {
        (0..count)
            .map(|_| LayerNodes {
                wq: next(),
                bq: next(),
                wk: next(),
                bk: next(),
                wv: next(),
                bv: next(),
                wo: next(),
                bo: next(),
                w1: next(),
                b1: next(),
                w2: next(),
                b2: next(),
            })
            .collect::<Vec<_>>()
    };
    let base_layer_nodes = layer_nodes(params.base_layers.len(), &mut next);
    let stack_layer_nodes = layer_nodes(params.stack_layers.len(), &mut next);
    let base_head_w = next();
    let base_head_b = next();
    let (stack_proj, stack_head_w, stack_head_b) = if params.cascade() {
        (Some(next()), Some(next()), Some(next()))
    } else {
        (None, None, None)
    };

    // h = stem(descriptor) + sum_k w_k (corner_stem(corner_k) + PE(corner_k))
    let desc = tape.leaf(geometry.descriptors.clone());
    let stem_lin = tape.matmul(desc, stem_w);
    let mut h = tape.add_row(stem_lin, stem_b);
    for k in 0..4 {
        let corner = tape.leaf(geometry.corners[k].clone());
        let corner_lin = tape.matmul(corner, corner_w);
        let corner_feat = tape.add_row(corner_lin, corner_b);
        let pe = tape.leaf(geometry.corner_pe[k].clone());
        let with_pe = tape.add(corner_feat, pe);
        let weight = tape.col_slice(corner_weights, k, k + 1);
        let scaled = tape.scale_by_scalar(with_pe, weight);
        h = tape.add(h, scaled);
    }

    let heads = params.config.heads;
    let mut encoded = h;
    for layer in &base_layer_nodes {
        encoded = encode_layer(tape, encoded, layer, heads);
    }
    let base_lin = tape.matmul(encoded, base_head_w);
    let base_pre = tape.add_row(base_lin, base_head_b);
    let base_logits = tape.relu(base_pre);

    let stack_logits = if params.cascade() {
        let injected = tape.matmul(base_logits, stack_proj.unwrap());
        let mut z = tape.add(injected, encoded);
        for layer in &stack_layer_nodes {
            z = encode_layer(tape, z, layer, heads);
        }
        let lin = tape.matmul(z, stack_head_w.unwrap());
        let pre = tape.add_row(lin, stack_head_b.unwrap());
        Some(tape.relu(pre))
    } else {
        None
    };

    ForwardPass { param_nodes, encoded, base_logits, stack_logits }
}

/// Rounds raw logits to logical locations: nearest integer (half away from
/// zero), clamped at zero, with inverted intervals repaired to points.
pub fn round_logits(raw: &Array2<f64>) -> Vec<LogicalLocation> {
    raw.rows()
        .into_iter()
        .map(|row| {
            let snap = |v: f64| row_to_index(v);
            let row_start = snap(row[0]);
            let row_end = snap(row[1]).max(row_start);
            let col_start = snap(row[2]);
            let col_end = snap(row[3]).max(col_start);
            LogicalLocation { row_start, row_end, col_start, col_end }
        })
        .collect()
}

fn row_to_index(v: f64) -> usize {
    let rounded = v.round(); // half away from zero
    if rounded < 0.0 {
        0
    } else {
        rounded as usize
    }
}

/// Runs the regressor on one table's cells and rounds the result. Also
/// returns the raw reals for diagnostics.
pub fn infer(
    cells: &[TableCell],
    image_size: [f64; 2],
    params: &RegressorParams,
) -> Result<(Vec<LogicalLocation>, Array2<f64>), RegressorError> {
    let geometry = CellGeometry::from_cells(cells, image_size, params.config.d)?;
    let mut tape = Tape::new();
    let pass = forward(&mut tape, params, &geometry);
    let raw = tape.value(pass.final_logits()).clone();
    Ok((round_logits(&raw), raw))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::SpatialQuad;
    use rand::SeedableRng;

    fn rect_cell(id: usize, x0: f64, y0: f64, x1: f64, y1: f64) -> TableCell {
        TableCell::new(id, LogicalLocation::new(0, 0, 0, 0))
            .with_quad(SpatialQuad::new([[x0, y0], [x1, y0], [x1, y1], [x0, y1]]).unwrap())
    }

    fn small_params(seed: u64) -> RegressorParams {
        let config = RegressorConfig {
            d: 16,
            layers_base: 2,
            layers_stack: 1,
            heads: 2,
            ffn_dim: 32,
            ..Default::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        RegressorParams::init(&config, &mut rng).unwrap()
    }

    #[test]
    fn position_embedding_at_origin() {
        let pe = position_embedding(0.0, 0.0, 16).unwrap();
        for k in 0..8 {
            assert_eq!(pe[2 * k], 0.0, "sine component {k}");
            assert_eq!(pe[2 * k + 1], 1.0, "cosine component {k}");
        }
    }

    #[test]
    fn position_embedding_norm_is_half_d() {
        for (x, y) in [(0.3, 0.7), (1.0, 0.0), (0.51, 0.49)] {
            let pe = position_embedding(x, y, 64).unwrap();
            let norm_sq: f64 = pe.iter().map(|v| v * v).sum();
            assert!((norm_sq - 32.0).abs() < 1e-9, "({x},{y}): {norm_sq}");
        }
    }

    #[test]
    fn position_embedding_rejects_out_of_range() {
        assert!(position_embedding(1.5, 0.0, 16).is_err());
        assert!(position_embedding(0.0, -0.1, 16).is_err());
        assert!(position_embedding(0.5, 0.5, 6).is_err());
    }

    #[test]
    fn features_have_shape_n_by_d() {
        let cells: Vec<_> = (0..7)
            .map(|i| rect_cell(i, 10.0 * i as f64, 0.0, 10.0 * (i + 1) as f64, 10.0))
            .collect();
        let params = small_params(1);
        let geometry = CellGeometry::from_cells(&cells, [100.0, 100.0], 16).unwrap();
        let mut tape = Tape::new();
        let pass = forward(&mut tape, &params, &geometry);
        assert_eq!(tape.value(pass.final_logits()).dim(), (7, 4));
        assert_eq!(tape.value(pass.encoded).dim(), (7, 16));
    }

    #[test]
    fn zero_corner_weights_reduce_to_stem_features() {
        let cells = vec![rect_cell(0, 0.0, 0.0, 10.0, 10.0), rect_cell(1, 10.0, 0.0, 20.0, 10.0)];
        let mut params = small_params(2);
        params.corner_weights.fill(0.0);
        let geometry = CellGeometry::from_cells(&cells, [100.0, 100.0], 16).unwrap();
        let mut tape = Tape::new();
        let desc = tape.leaf(geometry.descriptors.clone());
        let stem_w = tape.leaf(params.stem_w.clone());
        let stem_b = tape.leaf(params.stem_b.clone());
        let lin = tape.matmul(desc, stem_w);
        let expected = tape.add_row(lin, stem_b);
        let expected = tape.value(expected).clone();

        // Rebuild h through the full feature path and compare.
        let mut tape2 = Tape::new();
        let pass = forward(&mut tape2, &params, &geometry);
        // With zero corner weights the encoder input equals the stem output;
        // check through a 0-layer surrogate by recomputing the stem path.
        let _ = pass;
        let mut p0 = params.clone();
        p0.base_layers.clear();
        p0.stack_layers.clear();
        p0.config.layers_base = 0;
        p0.config.layers_stack = 0;
        let mut tape3 = Tape::new();
        let pass0 = forward(&mut tape3, &p0, &geometry);
        let h = tape3.value(pass0.encoded);
        assert!(h.iter().zip(expected.iter()).all(|(a, b)| (a - b).abs() < 1e-12));
    }

    #[test]
    fn translation_changes_features() {
        let params = small_params(3);
        let a = vec![rect_cell(0, 0.0, 0.0, 10.0, 10.0)];
        let b = vec![rect_cell(0, 30.0, 30.0, 40.0, 40.0)];
        let ga = CellGeometry::from_cells(&a, [100.0, 100.0], 16).unwrap();
        let gb = CellGeometry::from_cells(&b, [100.0, 100.0], 16).unwrap();
        let mut ta = Tape::new();
        let pa = forward(&mut ta, &params, &ga);
        let mut tb = Tape::new();
        let pb = forward(&mut tb, &params, &gb);
        assert_ne!(ta.value(pa.encoded), tb.value(pb.encoded));
    }

    #[test]
    fn outputs_are_non_negative() {
        let params = small_params(4);
        let cells: Vec<_> = (0..5)
            .map(|i| rect_cell(i, 5.0 * i as f64, 3.0, 5.0 * (i + 1) as f64, 9.0))
            .collect();
        let (locs, raw) = infer(&cells, [100.0, 100.0], &params).unwrap();
        assert_eq!(locs.len(), 5);
        assert!(raw.iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn encoder_is_permutation_equivariant() {
        let params = small_params(5);
        let cells: Vec<_> = (0..6)
            .map(|i| rect_cell(i, 13.0 * i as f64, 7.0, 13.0 * (i + 1) as f64, 21.0))
            .collect();
        let permutation = [3usize, 0, 5, 1, 4, 2];
        let permuted: Vec<_> = permutation.iter().map(|&i| cells[i].clone()).collect();
        let (_, raw) = infer(&cells, [100.0, 100.0], &params).unwrap();
        let (_, raw_permuted) = infer(&permuted, [100.0, 100.0], &params).unwrap();
        for (out_row, &src) in permutation.iter().enumerate() {
            for c in 0..4 {
                assert!(
                    (raw_permuted[[out_row, c]] - raw[[src, c]]).abs() < 1e-9,
                    "row {out_row} col {c}"
                );
            }
        }
    }

    #[test]
    fn single_cell_attention_is_identity_weight() {
        // With one cell the softmax over a single logit must be exactly 1,
        // so attention contributes vh directly regardless of parameters.
        let mut tape = Tape::new();
        let a = tape.leaf(ndarray::array![[3.7]]);
        let sm = tape.softmax_rows(a);
        assert_eq!(tape.value(sm)[[0, 0]], 1.0);
    }

    fn cascade_outputs(params: &RegressorParams, cells: &[TableCell]) -> (Array2<f64>, Array2<f64>) {
        let geometry = CellGeometry::from_cells(cells, [100.0, 100.0], params.config.d).unwrap();
        let mut tape = Tape::new();
        let pass = forward(&mut tape, params, &geometry);
        (
            tape.value(pass.base_logits).clone(),
            tape.value(pass.stack_logits.unwrap()).clone(),
        )
    }

    #[test]
    fn zero_projection_decouples_stack_from_base_output() {
        // With the injection matrix zeroed, the stacking regressor sees only
        // the encoder features, so changing the base head must not move it.
        let mut reference = small_params(9);
        reference.stack_proj.fill(0.0);
        let mut shifted = reference.clone();
        shifted.base_head_b.fill(3.0);
        let cells: Vec<_> = (0..4)
            .map(|i| rect_cell(i, 20.0 * i as f64, 10.0, 20.0 * (i + 1) as f64, 30.0))
            .collect();
        let (base_a, stack_a) = cascade_outputs(&reference, &cells);
        let (base_b, stack_b) = cascade_outputs(&shifted, &cells);
        assert!(base_a.iter().zip(&base_b).any(|(a, b)| (a - b).abs() > 1e-6));
        for (a, b) in stack_a.iter().zip(&stack_b) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn stack_reads_base_prediction_through_projection() {
        // Complement of the zero-projection case: with the injection matrix
        // live, a base-head shift propagates into the stacking output.
        let reference = small_params(9);
        let mut shifted = reference.clone();
        shifted.base_head_b.fill(3.0);
        let cells: Vec<_> = (0..4)
            .map(|i| rect_cell(i, 20.0 * i as f64, 10.0, 20.0 * (i + 1) as f64, 30.0))
            .collect();
        let (_, stack_a) = cascade_outputs(&reference, &cells);
        let (_, stack_b) = cascade_outputs(&shifted, &cells);
        assert!(stack_a.iter().zip(&stack_b).any(|(a, b)| (a - b).abs() > 1e-6));
    }

    #[test]
    fn rounding_clamps_and_repairs() {
        let raw = ndarray::array![
            [0.4, 1.6, 0.1, 0.9],
            [1.2, 0.8, 0.0, 0.0],
            [-0.4, 0.2, 0.0, 0.0]
        ];
        let locs = round_logits(&raw);
        assert_eq!(locs[0], LogicalLocation::new(0, 2, 0, 1));
        assert_eq!(locs[1], LogicalLocation::new(1, 1, 0, 0));
        assert_eq!(locs[2], LogicalLocation::new(0, 0, 0, 0));
    }

    #[test]
    fn missing_quad_and_empty_input_are_errors() {
        let params = small_params(6);
        let mut cells = vec![rect_cell(0, 0.0, 0.0, 10.0, 10.0)];
        cells[0].quad = None;
        assert!(matches!(
            infer(&cells, [100.0, 100.0], &params),
            Err(RegressorError::MissingQuad { cell: 0 })
        ));
        assert!(matches!(
            infer(&[], [100.0, 100.0], &params),
            Err(RegressorError::EmptyInput)
        ));
    }
}
