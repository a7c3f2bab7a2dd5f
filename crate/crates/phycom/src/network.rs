//! The mirrored compensation network: ordered compensation layers, forward
//! pass with stored intermediates, nearest-point detection, pilot residual
//! and the backpropagated Jacobian.
//!
//! A network compensating a channel `F_L ... F_1` stacks the layers in
//! reverse: compensation layer l mirrors channel layer L-l+1. With exact
//! parameters (isomorphic kinds applied at their reverse-mapped parameters,
//! FIR applied as an inverse) the noiseless round trip is the identity.
//!
//! The Jacobian of the pilot residual with respect to all trainable
//! parameters is assembled layer by layer from the output side: the
//! selection operator is pushed backwards through the compensation operators
//! (rows stay at the pilot count the whole way), and each layer contributes
//! its local Jacobian columns. Everything is matrix-free except the optional
//! dense FIR mode used for complexity measurements.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::augmented::{AllocationMatrix, AugmentedVector};
use crate::channel::ChannelModel;
use crate::constellation::{Constellation, SymbolVector};
use crate::error::{Error, Result};
use crate::layers::{Layer, LayerKind};

/// One compensation layer plus its training status. Frozen layers still
/// compensate but contribute no Jacobian columns.
#[derive(Debug, Clone)]
pub struct CompLayer {
    pub layer: Layer,
    pub frozen: bool,
}

/// Ordered compensation layers ending in a nearest-point detector.
#[derive(Debug, Clone)]
pub struct PhycomNetwork {
    layers: Vec<CompLayer>,
    constellation: Constellation,
    dense_fir: bool,
}

/// Intermediates of one forward pass: `y_0 ... y_L`, plus any dense
/// compensation operators cached in dense mode.
#[derive(Debug)]
pub struct ForwardTrace {
    intermediates: Vec<AugmentedVector>,
    dense_h: Vec<Option<DMatrix<f64>>>,
}

impl ForwardTrace {
    /// The network output `y_L`.
    pub fn output(&self) -> &AugmentedVector {
        self.intermediates.last().expect("trace holds at least y_0")
    }

    /// Input of layer `l` (0-based), i.e. `y_l`.
    pub fn layer_input(&self, l: usize) -> &AugmentedVector {
        &self.intermediates[l]
    }

    pub fn intermediates(&self) -> &[AugmentedVector] {
        &self.intermediates
    }
}

/// The residual Jacobian, `2 Np x K`, with per-layer column blocks
/// (frozen layers contribute none).
#[derive(Debug, Clone)]
pub struct NetworkJacobian {
    data: DMatrix<f64>,
    block_cols: Vec<Option<std::ops::Range<usize>>>,
}

impl NetworkJacobian {
    pub fn data(&self) -> &DMatrix<f64> {
        &self.data
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.data
    }

    /// Column range contributed by layer `l`, `None` when frozen.
    pub fn block_cols(&self, l: usize) -> Option<std::ops::Range<usize>> {
        self.block_cols[l].clone()
    }
}

impl PhycomNetwork {
    /// Build a network from compensation layers. Every layer must be of a
    /// trainable kind.
    pub fn new(layers: Vec<CompLayer>, constellation: Constellation) -> Result<Self> {
        for cl in &layers {
            if !cl.layer.kind().is_trainable() {
                return Err(Error::Config(format!(
                    "{} layers cannot appear in a compensation network",
                    cl.layer.kind().name()
                )));
            }
        }
        Ok(Self { layers, constellation, dense_fir: false })
    }

    /// The clairvoyant mirror of a channel: layers in reverse order,
    /// isomorphic kinds at their reverse-mapped parameters, FIR at the
    /// channel taps (inverted when applied). Stochastic layers must be
    /// pinned first.
    pub fn mirror_of(model: &ChannelModel, constellation: Constellation) -> Result<Self> {
        let mut layers = Vec::new();
        for layer in model.linear_layers().collect::<Vec<_>>().into_iter().rev() {
            let comp = match layer.kind() {
                LayerKind::Fir { .. } => layer.clone(),
                k if k.is_isomorphic() => layer.reverse_params()?,
                k => {
                    return Err(Error::Config(format!(
                        "cannot mirror a {} layer; pin stochastic layers first",
                        k.name()
                    )))
                }
            };
            layers.push(CompLayer { layer: comp, frozen: false });
        }
        Self::new(layers, constellation)
    }

    /// Toggle the dense FIR compensation path (used to measure the cubic
    /// cost of explicit inversion; the matrix-free path is the default).
    pub fn set_dense_fir(&mut self, dense: bool) {
        self.dense_fir = dense;
    }

    pub fn dense_fir(&self) -> bool {
        self.dense_fir
    }

    pub fn layers(&self) -> &[CompLayer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [CompLayer] {
        &mut self.layers
    }

    pub fn constellation(&self) -> &Constellation {
        &self.constellation
    }

    /// Total number of trainable (unfrozen) parameters.
    pub fn trainable_param_count(&self) -> usize {
        self.layers
            .iter()
            .filter(|cl| !cl.frozen)
            .map(|cl| cl.layer.kind().param_count())
            .sum()
    }

    /// Flattened unfrozen parameters in layer order.
    pub fn params(&self) -> Vec<f64> {
        let mut theta = Vec::with_capacity(self.trainable_param_count());
        for cl in self.layers.iter().filter(|cl| !cl.frozen) {
            theta.extend_from_slice(cl.layer.params());
        }
        theta
    }

    /// Write back a flattened parameter vector.
    pub fn set_params(&mut self, theta: &[f64]) -> Result<()> {
        if theta.len() != self.trainable_param_count() {
            return Err(Error::Shape(format!(
                "expected {} parameters, got {}",
                self.trainable_param_count(),
                theta.len()
            )));
        }
        let mut offset = 0;
        for cl in self.layers.iter_mut().filter(|cl| !cl.frozen) {
            let k = cl.layer.kind().param_count();
            cl.layer.set_params(&theta[offset..offset + k])?;
            offset += k;
        }
        Ok(())
    }

    /// Run all compensation layers, storing every intermediate.
    pub fn forward(&self, y0: &AugmentedVector) -> Result<ForwardTrace> {
        let n = y0.half_len();
        let mut intermediates = Vec::with_capacity(self.layers.len() + 1);
        let mut dense_h = Vec::with_capacity(self.layers.len());
        intermediates.push(y0.clone());
        for cl in &self.layers {
            let current = intermediates.last().expect("non-empty");
            let use_dense = self.dense_fir && matches!(cl.layer.kind(), LayerKind::Fir { .. });
            if use_dense {
                let h = cl.layer.dense_compensation(n)?.into_inner();
                let x = DVector::from_column_slice(current.as_slice());
                let y = &h * x;
                intermediates.push(AugmentedVector::from_raw(y.as_slice().to_vec())?);
                dense_h.push(Some(h));
            } else {
                intermediates.push(cl.layer.apply_compensation(current)?);
                dense_h.push(None);
            }
        }
        Ok(ForwardTrace { intermediates, dense_h })
    }

    /// Project the network output onto the alphabet and rebuild complex
    /// symbols.
    pub fn detect(&self, y_out: &AugmentedVector) -> SymbolVector {
        let symbols = if self.constellation.is_square() {
            let n = y_out.half_len();
            (0..n)
                .map(|i| {
                    num_complex::Complex64::new(
                        self.constellation.project_coordinate(y_out.as_slice()[i]),
                        self.constellation.project_coordinate(y_out.as_slice()[n + i]),
                    )
                })
                .collect()
        } else {
            y_out
                .to_complex()
                .into_iter()
                .map(|z| self.constellation.project_point(z))
                .collect()
        };
        SymbolVector::from_detected(symbols)
    }

    /// Pilot residual `f = x0_pilots - select(y_L)`.
    pub fn residual(
        &self,
        trace: &ForwardTrace,
        pilots: &AugmentedVector,
        alloc: &AllocationMatrix,
    ) -> Result<Vec<f64>> {
        if pilots.len() != 2 * alloc.num_pilots() {
            return Err(Error::Shape(format!(
                "pilot vector has {} entries, allocation selects {}",
                pilots.len(),
                2 * alloc.num_pilots()
            )));
        }
        let selected = alloc.extract(trace.output())?;
        Ok(pilots
            .as_slice()
            .iter()
            .zip(selected.as_slice())
            .map(|(p, y)| p - y)
            .collect())
    }

    /// Backpropagate the pilot selection through the layer stack and stack
    /// the per-layer blocks into the residual Jacobian.
    pub fn jacobian(&self, trace: &ForwardTrace, alloc: &AllocationMatrix) -> Result<NetworkJacobian> {
        let n = alloc.n();
        if trace.output().half_len() != n {
            return Err(Error::Shape(format!(
                "trace covers {} samples, allocation expects {}",
                trace.output().half_len(),
                n
            )));
        }
        let n_p = alloc.num_pilots();
        let k_total = self.trainable_param_count();

        // B_{L+1} = -(I2 (x) P), one sparse row per selected coordinate.
        let mut b: Vec<AugmentedVector> = Vec::with_capacity(2 * n_p);
        for &idx in alloc.pilot_indices() {
            let mut row = vec![0.0; 2 * n];
            row[idx] = -1.0;
            b.push(AugmentedVector::from_raw(row)?);
        }
        for &idx in alloc.pilot_indices() {
            let mut row = vec![0.0; 2 * n];
            row[n + idx] = -1.0;
            b.push(AugmentedVector::from_raw(row)?);
        }

        let mut blocks: Vec<Option<DMatrix<f64>>> = vec![None; self.layers.len()];
        for (l, cl) in self.layers.iter().enumerate().rev() {
            if !cl.frozen {
                let local = cl.layer.local_jacobian(trace.layer_input(l))?;
                let k_l = local.ncols();
                let rows: Vec<Vec<f64>> = b
                    .par_iter()
                    .map(|row| {
                        (0..k_l)
                            .map(|c| {
                                row.as_slice()
                                    .iter()
                                    .zip(local.column(c).iter())
                                    .map(|(a, b)| a * b)
                                    .sum()
                            })
                            .collect()
                    })
                    .collect();
                let mut j_l = DMatrix::zeros(2 * n_p, k_l);
                for (r, vals) in rows.into_iter().enumerate() {
                    for (c, v) in vals.into_iter().enumerate() {
                        j_l[(r, c)] = v;
                    }
                }
                blocks[l] = Some(j_l);
            }
            // B_l = B_{l+1} H_l: multiply each row by H_l from the right,
            // i.e. apply H_l^T to the row vector.
            if let Some(h) = &trace.dense_h[l] {
                b = b
                    .into_par_iter()
                    .map(|row| {
                        let x = DVector::from_column_slice(row.as_slice());
                        let y = h.tr_mul(&x);
                        AugmentedVector::from_raw(y.as_slice().to_vec()).expect("even")
                    })
                    .collect();
            } else {
                b = b
                    .into_par_iter()
                    .map(|row| cl.layer.apply_compensation_transpose(&row))
                    .collect::<Result<Vec<_>>>()?;
            }
        }

        let mut data = DMatrix::zeros(2 * n_p, k_total);
        let mut block_cols = vec![None; self.layers.len()];
        let mut offset = 0;
        for (l, block) in blocks.into_iter().enumerate() {
            if let Some(j_l) = block {
                let k_l = j_l.ncols();
                data.view_mut((0, offset), (2 * n_p, k_l)).copy_from(&j_l);
                block_cols[l] = Some(offset..offset + k_l);
                offset += k_l;
            }
        }
        Ok(NetworkJacobian { data, block_cols })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::ChannelModel;
    use crate::seed::make_rng;
    use num_complex::Complex64;
    use rand::{Rng, RngExt as _};

    fn qam16() -> Constellation {
        Constellation::square_qam(16).unwrap()
    }

    fn fig_style_channel() -> ChannelModel {
        let taps = [
            Complex64::new(0.9, 0.1),
            Complex64::new(0.3, 0.3),
            Complex64::new(0.1, 0.05),
            Complex64::new(0.02, 0.1),
            Complex64::new(0.1, -0.05),
            Complex64::new(0.02, -0.1),
            Complex64::new(0.1, 0.03),
            Complex64::new(0.04, -0.012),
        ];
        ChannelModel::new(vec![
            Layer::fir(&taps),
            Layer::cfo(0.005),
            Layer::iq([1.8, 0.1, 0.13, 0.8]),
        ])
        .unwrap()
    }

    fn random_net(rng: &mut impl Rng) -> PhycomNetwork {
        let taps: Vec<Complex64> = (0..4)
            .map(|i| {
                Complex64::new(
                    if i == 0 { 1.0 } else { rng.random_range(-0.3..0.3) },
                    rng.random_range(-0.3..0.3),
                )
            })
            .collect();
        PhycomNetwork::new(
            vec![
                CompLayer { layer: Layer::iq([1.1, 0.05, -0.02, 0.93]), frozen: false },
                CompLayer { layer: Layer::cfo(0.01), frozen: false },
                CompLayer { layer: Layer::fir(&taps), frozen: false },
                CompLayer { layer: Layer::qs_phase_noise(vec![0.1, -0.2]), frozen: false },
            ],
            qam16(),
        )
        .unwrap()
    }

    #[test]
    fn identity_network_passes_input_through() {
        let net = PhycomNetwork::new(
            vec![
                CompLayer { layer: Layer::iq([1.0, 0.0, 0.0, 1.0]), frozen: false },
                CompLayer { layer: Layer::cfo(0.0), frozen: false },
            ],
            qam16(),
        )
        .unwrap();
        let mut rng = make_rng(0);
        let s = qam16().draw_symbols(16, &mut rng);
        let y0 = AugmentedVector::from_complex(s.symbols());
        let trace = net.forward(&y0).unwrap();
        assert!(trace.output().max_abs_diff(&y0) < 1e-15);
    }

    #[test]
    fn mirror_reverses_layer_order_and_undoes_noiseless_chain() {
        let model = fig_style_channel();
        let net = PhycomNetwork::mirror_of(&model, qam16()).unwrap();
        let kinds: Vec<&str> = net.layers().iter().map(|cl| cl.layer.kind().name()).collect();
        assert_eq!(kinds, vec!["iq", "cfo", "fir"]);

        let mut rng = make_rng(1);
        let s = qam16().draw_symbols(64, &mut rng);
        let y0 = model.propagate(&s, &mut rng).unwrap();
        let trace = net.forward(&y0).unwrap();
        let x0 = AugmentedVector::from_complex(s.symbols());
        assert!(trace.output().max_abs_diff(&x0) < 1e-10);
        assert_eq!(net.detect(trace.output()).symbols(), s.symbols());
    }

    #[test]
    fn mirror_of_single_cfo_negates_omega() {
        let model = ChannelModel::new(vec![Layer::cfo(0.005)]).unwrap();
        let net = PhycomNetwork::mirror_of(&model, qam16()).unwrap();
        assert_eq!(net.layers()[0].layer.params(), &[-0.005]);
    }

    #[test]
    fn forward_matches_dense_operator_product() {
        let mut rng = make_rng(2);
        let n = 8;
        let net = random_net(&mut rng);
        let s = qam16().draw_symbols(n, &mut rng);
        let y0 = AugmentedVector::from_complex(s.symbols());
        let trace = net.forward(&y0).unwrap();

        let mut acc = nalgebra::DMatrix::<f64>::identity(2 * n, 2 * n);
        for cl in net.layers() {
            acc = cl.layer.dense_compensation(n).unwrap().into_inner() * acc;
        }
        let want = &acc * DVector::from_column_slice(y0.as_slice());
        for i in 0..2 * n {
            assert!((trace.output().as_slice()[i] - want[i]).abs() < 1e-10);
        }
    }

    #[test]
    fn detect_is_exact_on_alphabet_points() {
        let net = PhycomNetwork::new(vec![], qam16()).unwrap();
        let mut rng = make_rng(3);
        let s = qam16().draw_symbols(100, &mut rng);
        let y = AugmentedVector::from_complex(s.symbols());
        assert_eq!(net.detect(&y).symbols(), s.symbols());
        // A coordinate at 0.5 projects to the inner level.
        let y = AugmentedVector::from_raw(vec![0.5, 0.0]).unwrap();
        let got = net.detect(&y);
        assert!((got.symbols()[0].re - 0.31622777).abs() < 1e-7);
    }

    #[test]
    fn residual_definitions() {
        let mut rng = make_rng(4);
        let n = 12;
        let s = qam16().draw_symbols(n, &mut rng);
        let x0 = AugmentedVector::from_complex(s.symbols());

        // Identity network with full allocation: f = x0 - y0.
        let net = PhycomNetwork::new(
            vec![CompLayer { layer: Layer::cfo(0.0), frozen: false }],
            qam16(),
        )
        .unwrap();
        let y0 = AugmentedVector::from_raw(
            x0.as_slice().iter().map(|v| v + 0.25).collect(),
        )
        .unwrap();
        let full = AllocationMatrix::full(n);
        let trace = net.forward(&y0).unwrap();
        let f = net.residual(&trace, &x0, &full).unwrap();
        for v in f {
            assert!((v + 0.25).abs() < 1e-14);
        }

        // Clairvoyant mirror on a noiseless channel: zero residual.
        let model = fig_style_channel();
        let mirror = PhycomNetwork::mirror_of(&model, qam16()).unwrap();
        let y = model.propagate(&s, &mut rng).unwrap();
        let alloc = AllocationMatrix::preamble(n, 4).unwrap();
        let pilots = alloc.extract(&x0).unwrap();
        let trace = mirror.forward(&y).unwrap();
        let f = mirror.residual(&trace, &pilots, &alloc).unwrap();
        assert!(f.iter().all(|v| v.abs() < 1e-10));
    }

    #[test]
    fn pilot_vector_shape_is_checked() {
        let net = PhycomNetwork::new(vec![], qam16()).unwrap();
        let y0 = AugmentedVector::zeros(8);
        let trace = net.forward(&y0).unwrap();
        let alloc = AllocationMatrix::preamble(8, 3).unwrap();
        let bad = AugmentedVector::zeros(2);
        assert!(net.residual(&trace, &bad, &alloc).is_err());
    }

    /// Central finite differences of the residual w.r.t. the flattened
    /// parameter vector.
    fn fd_jacobian(
        net: &mut PhycomNetwork,
        y0: &AugmentedVector,
        pilots: &AugmentedVector,
        alloc: &AllocationMatrix,
    ) -> DMatrix<f64> {
        let theta = net.params();
        let m = 2 * alloc.num_pilots();
        let mut j = DMatrix::zeros(m, theta.len());
        for k in 0..theta.len() {
            let eps = 1e-6 * theta[k].abs().max(1.0);
            let mut plus = theta.clone();
            plus[k] += eps;
            net.set_params(&plus).unwrap();
            let fp = net.residual(&net.forward(y0).unwrap(), pilots, alloc).unwrap();
            let mut minus = theta.clone();
            minus[k] -= eps;
            net.set_params(&minus).unwrap();
            let fm = net.residual(&net.forward(y0).unwrap(), pilots, alloc).unwrap();
            for r in 0..m {
                j[(r, k)] = (fp[r] - fm[r]) / (2.0 * eps);
            }
        }
        net.set_params(&theta).unwrap();
        j
    }

    #[test]
    fn backprop_jacobian_matches_finite_differences() {
        let mut rng = make_rng(5);
        let n = 16;
        let mut net = random_net(&mut rng);
        let s = qam16().draw_symbols(n, &mut rng);
        let y0 = AugmentedVector::from_raw(
            AugmentedVector::from_complex(s.symbols())
                .as_slice()
                .iter()
                .map(|v| v + rng.random_range(-0.05..0.05))
                .collect(),
        )
        .unwrap();
        let alloc = AllocationMatrix::periodic(n, 4).unwrap();
        let x0 = AugmentedVector::from_complex(s.symbols());
        let pilots = alloc.extract(&x0).unwrap();

        let trace = net.forward(&y0).unwrap();
        let j = net.jacobian(&trace, &alloc).unwrap();
        let fd = fd_jacobian(&mut net, &y0, &pilots, &alloc);
        let scale = fd.abs().max().max(1.0);
        let err = (j.data() - &fd).abs().max() / scale;
        assert!(err < 1e-6, "rel err {err}");
    }

    #[test]
    fn backprop_matches_naive_block_construction() {
        let mut rng = make_rng(6);
        let n = 10;
        let net = random_net(&mut rng);
        let s = qam16().draw_symbols(n, &mut rng);
        let y0 = AugmentedVector::from_complex(s.symbols());
        let alloc = AllocationMatrix::preamble(n, 4).unwrap();
        let trace = net.forward(&y0).unwrap();
        let j = net.jacobian(&trace, &alloc).unwrap();

        // Naive route: -(I2 (x) P) H_L ... H_{l+1} L_l, all dense.
        let n_p = alloc.num_pilots();
        let mut sel = DMatrix::zeros(2 * n_p, 2 * n);
        for (r, &i) in alloc.pilot_indices().iter().enumerate() {
            sel[(r, i)] = -1.0;
            sel[(r + n_p, i + n)] = -1.0;
        }
        for (l, cl) in net.layers().iter().enumerate() {
            let mut downstream = DMatrix::<f64>::identity(2 * n, 2 * n);
            for cl_after in &net.layers()[l + 1..] {
                downstream = cl_after.layer.dense_compensation(n).unwrap().into_inner() * downstream;
            }
            let local = cl.layer.local_jacobian(trace.layer_input(l)).unwrap();
            let want = &sel * &downstream * &local;
            let cols = j.block_cols(l).unwrap();
            let got = j.data().columns(cols.start, cols.end - cols.start);
            assert!((got - want).abs().max() < 1e-10, "layer {l}");
        }
    }

    #[test]
    fn frozen_layers_contribute_no_columns_but_still_apply() {
        let mut rng = make_rng(7);
        let n = 12;
        let mut net = random_net(&mut rng);
        let s = qam16().draw_symbols(n, &mut rng);
        let y0 = AugmentedVector::from_complex(s.symbols());
        let alloc = AllocationMatrix::preamble(n, 5).unwrap();

        let trace = net.forward(&y0).unwrap();
        let full = net.jacobian(&trace, &alloc).unwrap();
        let k_full = full.data().ncols();

        net.layers_mut()[2].frozen = true; // the FIR layer (8 params)
        let trace2 = net.forward(&y0).unwrap();
        assert!(trace2.output().max_abs_diff(trace.output()) < 1e-15);
        let reduced = net.jacobian(&trace2, &alloc).unwrap();
        assert_eq!(reduced.data().ncols(), k_full - 8);
        assert!(reduced.block_cols(2).is_none());

        // Remaining blocks are unchanged.
        for l in [0usize, 1, 3] {
            let a = full.block_cols(l).unwrap();
            let b = reduced.block_cols(l).unwrap();
            let ga = full.data().columns(a.start, a.end - a.start);
            let gb = reduced.data().columns(b.start, b.end - b.start);
            assert!((ga - gb).abs().max() < 1e-14, "layer {l}");
        }
    }

    #[test]
    fn dense_fir_mode_reproduces_matrix_free_results() {
        let mut rng = make_rng(8);
        let n = 16;
        let mut net = random_net(&mut rng);
        let s = qam16().draw_symbols(n, &mut rng);
        let y0 = AugmentedVector::from_complex(s.symbols());
        let alloc = AllocationMatrix::preamble(n, 6).unwrap();

        let trace = net.forward(&y0).unwrap();
        let j = net.jacobian(&trace, &alloc).unwrap();

        net.set_dense_fir(true);
        let trace_d = net.forward(&y0).unwrap();
        let j_d = net.jacobian(&trace_d, &alloc).unwrap();

        assert!(trace.output().max_abs_diff(trace_d.output()) < 1e-9);
        assert!((j.data() - j_d.data()).abs().max() < 1e-9);
    }

    #[test]
    fn stochastic_layers_are_rejected_in_networks() {
        let res = PhycomNetwork::new(
            vec![CompLayer { layer: Layer::awgn(0.1), frozen: false }],
            qam16(),
        );
        assert!(res.is_err());
        let model = ChannelModel::new(vec![Layer::wiener_phase_noise(1e-4)]).unwrap();
        assert!(PhycomNetwork::mirror_of(&model, qam16()).is_err());
    }
}
