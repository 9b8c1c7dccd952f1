//! Benchmark kernels as untransformed tile modules, plus their inputs and
//! double-precision reference outputs.

mod rng;

use serde::{Deserialize, Serialize};

use crate::error::KernelError;
use crate::ir::{
    Affine, BufferDecl, BufferId, Expr, LoopVar, MemSpace, Metadata, Node, Op, TileModule, ViewRef,
    F32_BYTES,
};
use crate::sim::{Arrays, MachineConfig};

pub use rng::SeededGenerator;

/// √(2/π)
pub const GELU_SQRT_2_OVER_PI: f64 = 0.797_884_560_802_865_4;
pub const GELU_CUBIC: f64 = 0.044_715;

/// Largest point of the default GELU sweep.
pub const GELU_MAX_ELEMENTS: u32 = 1_048_576;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KernelKind {
    #[serde(rename = "vec-add-2d")]
    VecAdd2d,
    Gelu,
}

impl KernelKind {
    pub fn name(self) -> &'static str {
        match self {
            KernelKind::VecAdd2d => "vec-add-2d",
            KernelKind::Gelu => "gelu",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "vec-add-2d" => Some(KernelKind::VecAdd2d),
            "gelu" => Some(KernelKind::Gelu),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GeluVariant {
    #[default]
    TanhApprox,
    Erf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelSpec {
    pub kind: KernelKind,
    pub rows: u32,
    pub cols: u32,
    /// Rows per tile (vec-add-2d).
    #[serde(default = "default_tile_rows")]
    pub tile_rows: u32,
    /// Elements per tile (gelu).
    #[serde(default = "default_tile_elems")]
    pub tile_elems: u32,
    #[serde(default)]
    pub gelu_variant: GeluVariant,
    #[serde(default = "default_seed")]
    pub seed: u64,
}

fn default_tile_rows() -> u32 {
    1
}

fn default_tile_elems() -> u32 {
    16384
}

fn default_seed() -> u64 {
    1
}

impl KernelSpec {
    /// `[64, 128 × 128]` elements, one row per tile.
    pub fn vec_add_2d() -> Self {
        KernelSpec {
            kind: KernelKind::VecAdd2d,
            rows: 64,
            cols: 128 * 128,
            tile_rows: default_tile_rows(),
            tile_elems: default_tile_elems(),
            gelu_variant: GeluVariant::default(),
            seed: default_seed(),
        }
    }

    pub fn gelu(n: u32) -> Self {
        KernelSpec {
            kind: KernelKind::Gelu,
            rows: 1,
            cols: n,
            ..KernelSpec::vec_add_2d()
        }
    }

    pub fn default_for(kind: KernelKind) -> Self {
        match kind {
            KernelKind::VecAdd2d => KernelSpec::vec_add_2d(),
            KernelKind::Gelu => KernelSpec::gelu(GELU_MAX_ELEMENTS),
        }
    }

    pub fn with_seed(self, seed: u64) -> Self {
        KernelSpec { seed, ..self }
    }

    pub fn total_elements(&self) -> u64 {
        u64::from(self.rows) * u64::from(self.cols)
    }

    pub fn label(&self) -> String {
        format!("{}[{}x{}]", self.kind.name(), self.rows, self.cols)
    }

    pub fn input_names(&self) -> &'static [&'static str] {
        match self.kind {
            KernelKind::VecAdd2d => &["A", "B"],
            KernelKind::Gelu => &["X"],
        }
    }

    pub fn output_name(&self) -> &'static str {
        match self.kind {
            KernelKind::VecAdd2d => "C",
            KernelKind::Gelu => "Y",
        }
    }
}

/// Builds whichever kernel `spec` describes, checking tile feasibility
/// against `cfg.tcm_capacity`.
pub fn build_kernel(spec: &KernelSpec, cfg: &MachineConfig) -> Result<TileModule, KernelError> {
    let m = match spec.kind {
        KernelKind::VecAdd2d => build_vec_add_2d(spec)?,
        KernelKind::Gelu => build_gelu(spec, cfg.tcm_capacity)?,
    };
    let footprint = m.tcm_footprint();
    if footprint > cfg.tcm_capacity {
        return Err(KernelError::TileTooLarge {
            bytes: footprint,
            capacity: cfg.tcm_capacity,
        });
    }
    Ok(m)
}

/// `C = A + B` over `rows × cols`, tiled by whole rows.
pub fn build_vec_add_2d(spec: &KernelSpec) -> Result<TileModule, KernelError> {
    if spec.kind != KernelKind::VecAdd2d {
        return Err(KernelError::WrongKind);
    }
    if spec.rows == 0 || spec.cols == 0 || spec.tile_rows == 0 {
        return Err(KernelError::Invalid(
            "rows, cols and tile_rows must be >= 1".into(),
        ));
    }
    if spec.tile_rows > spec.rows {
        return Err(KernelError::Invalid(format!(
            "tile_rows {} exceeds rows {}",
            spec.tile_rows, spec.rows
        )));
    }
    if !spec.rows.is_multiple_of(spec.tile_rows) {
        return Err(KernelError::Invalid(format!(
            "rows {} not a multiple of tile_rows {}",
            spec.rows, spec.tile_rows
        )));
    }
    let tiles = spec.rows / spec.tile_rows;
    let iv = LoopVar(0);
    let offset = Affine::var(iv, i64::from(spec.tile_rows), 0);
    let body = normal_form_body(
        &["A", "B"],
        "C",
        |name| {
            ViewRef::new(
                BufferId::new(name),
                offset.clone(),
                spec.tile_rows,
                Affine::constant(0),
                spec.cols,
            )
        },
        (spec.tile_rows, spec.cols),
        Expr::add(Expr::input(0), Expr::input(1)),
    );
    Ok(assemble(
        "vec_add_2d",
        spec,
        &["A", "B"],
        "C",
        iv,
        tiles,
        body,
    ))
}

/// `Y = GELU(X)` over `n` elements in tiles of `tile_elems` (clamped to
/// `n`). `tile_elems` must divide `n`.
pub fn build_gelu(spec: &KernelSpec, tcm_capacity: u64) -> Result<TileModule, KernelError> {
    if spec.kind != KernelKind::Gelu {
        return Err(KernelError::WrongKind);
    }
    if spec.rows != 1 {
        return Err(KernelError::Invalid(
            "gelu is one-dimensional (rows = 1)".into(),
        ));
    }
    if spec.cols == 0 || spec.tile_elems == 0 {
        return Err(KernelError::Invalid("n and tile_elems must be >= 1".into()));
    }
    let tile = spec.tile_elems.min(spec.cols);
    let bytes = 2 * u64::from(tile) * F32_BYTES;
    if bytes > tcm_capacity {
        return Err(KernelError::TileTooLarge {
            bytes,
            capacity: tcm_capacity,
        });
    }
    if !spec.cols.is_multiple_of(tile) {
        return Err(KernelError::Invalid(format!(
            "n {} not a multiple of tile_elems {}",
            spec.cols, tile
        )));
    }
    let iv = LoopVar(0);
    let offset = Affine::var(iv, i64::from(tile), 0);
    let body = normal_form_body(
        &["X"],
        "Y",
        |name| {
            ViewRef::new(
                BufferId::new(name),
                Affine::constant(0),
                1,
                offset.clone(),
                tile,
            )
        },
        (1, tile),
        gelu_expr(spec.gelu_variant),
    );
    Ok(assemble(
        "gelu",
        spec,
        &["X"],
        "Y",
        iv,
        spec.cols / tile,
        body,
    ))
}

pub fn gelu_expr(variant: GeluVariant) -> Expr {
    let x = || Expr::input(0);
    let half_x = Expr::mul(Expr::constant(0.5), x());
    let inner = match variant {
        GeluVariant::TanhApprox => {
            let cube = Expr::mul(Expr::mul(x(), x()), x());
            let poly = Expr::add(x(), Expr::mul(Expr::constant(GELU_CUBIC), cube));
            Expr::tanh(Expr::mul(Expr::constant(GELU_SQRT_2_OVER_PI), poly))
        }
        GeluVariant::Erf => Expr::erf(Expr::mul(
            x(),
            Expr::constant(std::f64::consts::FRAC_1_SQRT_2),
        )),
    };
    Expr::mul(half_x, Expr::add(Expr::constant(1.0), inner))
}

fn tcm_name(ddr: &str) -> String {
    format!("{}_tile", ddr.to_lowercase())
}

fn normal_form_body(
    inputs: &[&str],
    output: &str,
    subview: impl Fn(&str) -> ViewRef,
    tile: (u32, u32),
    expr: Expr,
) -> Vec<Node> {
    let decl = |ddr: &str| BufferDecl::new(tcm_name(ddr), MemSpace::Tcm, tile.0, tile.1);
    let mut body = Vec::new();
    for name in inputs {
        let d = decl(name);
        body.push(Node::new(Op::Copy {
            src: subview(name),
            dst: d.full_view(),
        }));
        body.insert(body.len() - 1, Node::new(Op::AllocTcm { decl: d }));
    }
    let out = decl(output);
    body.push(Node::new(Op::AllocTcm { decl: out.clone() }));
    body.push(Node::new(Op::Compute {
        inputs: inputs.iter().map(|n| decl(n).full_view()).collect(),
        output: out.full_view(),
        expr,
        vector_factor: 1,
    }));
    body.push(Node::new(Op::Copy {
        src: out.full_view(),
        dst: subview(output),
    }));
    for name in inputs.iter().chain([&output]) {
        body.push(Node::new(Op::DeallocTcm {
            id: BufferId::new(tcm_name(name)),
        }));
    }
    body
}

fn assemble(
    name: &str,
    spec: &KernelSpec,
    inputs: &[&str],
    output: &str,
    iv: LoopVar,
    tiles: u32,
    body: Vec<Node>,
) -> TileModule {
    let buffers = inputs
        .iter()
        .chain([&output])
        .map(|b| BufferDecl::new(*b, MemSpace::Ddr, spec.rows, spec.cols))
        .collect();
    TileModule {
        name: name.to_string(),
        buffers,
        inputs: inputs.iter().map(|b| BufferId::new(*b)).collect(),
        outputs: vec![BufferId::new(output)],
        body: vec![Node::new(Op::ForTiles {
            iv,
            tile_count: tiles,
            toggle: false,
            body,
        })],
        metadata: Metadata {
            kernel: spec.label(),
            passes: Vec::new(),
        },
    }
}

/// Seeded inputs in `[-4, 4)`; inputs are drawn in declaration order from
/// one stream.
pub fn generate_inputs(spec: &KernelSpec) -> Arrays {
    let mut g = SeededGenerator::new(spec.seed);
    let n = spec.total_elements() as usize;
    spec.input_names()
        .iter()
        .map(|name| (name.to_string(), g.fill(n)))
        .collect()
}

/// Element-by-element double-precision evaluation, rounded to F32 once.
pub fn reference_output(spec: &KernelSpec, inputs: &Arrays) -> Result<Arrays, KernelError> {
    let n = spec.total_elements() as usize;
    let get = |name: &str| -> Result<&Vec<f32>, KernelError> {
        match inputs.get(name) {
            Some(v) if v.len() == n => Ok(v),
            _ => Err(KernelError::Shape(name.to_string())),
        }
    };
    let out: Vec<f32> = match spec.kind {
        KernelKind::VecAdd2d => {
            let (a, b) = (get("A")?, get("B")?);
            a.iter()
                .zip(b)
                .map(|(&x, &y)| (f64::from(x) + f64::from(y)) as f32)
                .collect()
        }
        KernelKind::Gelu => get("X")?
            .iter()
            .map(|&x| gelu_f64(f64::from(x), spec.gelu_variant) as f32)
            .collect(),
    };
    Ok([(spec.output_name().to_string(), out)]
        .into_iter()
        .collect())
}

pub fn gelu_f64(x: f64, variant: GeluVariant) -> f64 {
    match variant {
        GeluVariant::TanhApprox => {
            0.5 * x * (1.0 + libm::tanh(GELU_SQRT_2_OVER_PI * (x + GELU_CUBIC * (x * x * x))))
        }
        GeluVariant::Erf => 0.5 * x * (1.0 + libm::erf(x * std::f64::consts::FRAC_1_SQRT_2)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::{match_normal_form, verify_module};
    use crate::sim::interpret_functional;

    #[test]
    fn default_vec_add_has_64_row_tiles() {
        let m = build_vec_add_2d(&KernelSpec::vec_add_2d()).unwrap();
        let nf = match_normal_form(&m).unwrap();
        assert_eq!(nf.tile_count, 64);
        assert_eq!(nf.inputs.len(), 2);
        // 3 live tiles of one 16384-element row each.
        assert_eq!(m.tcm_footprint(), 3 * 65536);
        assert!(verify_module(&m, &MachineConfig::default()).is_empty());
    }

    #[test]
    fn tile_rows_larger_than_rows_is_rejected() {
        let spec = KernelSpec {
            tile_rows: 128,
            ..KernelSpec::vec_add_2d()
        };
        assert!(matches!(
            build_vec_add_2d(&spec),
            Err(KernelError::Invalid(_))
        ));
    }

    #[test]
    fn ramp_plus_negated_ramp_is_zero() {
        let spec = KernelSpec {
            rows: 8,
            cols: 64,
            tile_rows: 2,
            ..KernelSpec::vec_add_2d()
        };
        let m = build_vec_add_2d(&spec).unwrap();
        let n = 8 * 64;
        let ramp: Vec<f32> = (0..n).map(|i| i as f32).collect();
        let neg: Vec<f32> = ramp.iter().map(|x| -x).collect();
        let inputs: Arrays = [("A".to_string(), ramp), ("B".to_string(), neg)]
            .into_iter()
            .collect();
        let out = interpret_functional(&m, &inputs).unwrap();
        assert!(out["C"].iter().all(|&x| x == 0.0));
    }

    #[test]
    fn gelu_builder_sizes() {
        let m = build_gelu(&KernelSpec::gelu(GELU_MAX_ELEMENTS), 512 * 1024).unwrap();
        assert_eq!(match_normal_form(&m).unwrap().tile_count, 64);
        let small = build_gelu(&KernelSpec::gelu(4096), 512 * 1024).unwrap();
        assert_eq!(match_normal_form(&small).unwrap().tile_count, 1);
        assert!(matches!(
            build_gelu(&KernelSpec::gelu(40000), 512 * 1024),
            Err(KernelError::Invalid(_))
        ));
        assert!(matches!(
            build_gelu(&KernelSpec::gelu(1 << 20), 64 * 1024),
            Err(KernelError::TileTooLarge { .. })
        ));
    }

    #[test]
    fn gelu_zero_and_asymptote() {
        assert_eq!(gelu_f64(0.0, GeluVariant::TanhApprox), 0.0);
        assert!((gelu_f64(8.0, GeluVariant::TanhApprox) - 8.0).abs() < 1e-4);
        // Direct evaluation: 0.841191990607…
        assert_eq!(
            format!("{:.6}", gelu_f64(1.0, GeluVariant::TanhApprox)),
            "0.841192"
        );
    }

    #[test]
    fn gelu_variants_agree_on_sampled_range() {
        let mut g = SeededGenerator::new(7);
        let worst = (0..100_000)
            .map(|_| f64::from(g.next_f32()))
            .map(|x| (gelu_f64(x, GeluVariant::TanhApprox) - gelu_f64(x, GeluVariant::Erf)).abs())
            .fold(0.0, f64::max);
        assert!(worst < 3e-3, "max deviation {worst}");
    }

    #[test]
    fn expression_matches_direct_formula() {
        let mut g = SeededGenerator::new(3);
        for variant in [GeluVariant::TanhApprox, GeluVariant::Erf] {
            let e = gelu_expr(variant);
            for _ in 0..1000 {
                let x = f64::from(g.next_f32());
                assert_eq!(e.eval_scalar(&[x]), gelu_f64(x, variant));
            }
        }
        assert_eq!(gelu_expr(GeluVariant::TanhApprox).ops_per_element(), 19);
    }
}
