//! The similarity head: score map `v[u] = (phi(z) * phi(x))[u] + b` and its
//! analytic gradients. The bias is a single learnable scalar added to every
//! cell; there is no response normalization or windowing here.

use alloc::format;

use crate::embed::EmbedNet;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{cross_correlate, Grid, Tensor};

/// A 2-D grid of similarity scores plus the feature shapes it came from.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreMap<T = f32> {
    pub values: Grid<T>,
    pub exemplar_shape: [usize; 4],
    pub search_shape: [usize; 4],
}

/// Cross-correlation of the two feature maps with the network's score bias
/// added to every cell.
pub fn score_map<T: Scalar>(
    net: &EmbedNet<T>,
    exemplar_feat: &Tensor<T>,
    search_feat: &Tensor<T>,
) -> Result<ScoreMap<T>> {
    score_map_with_bias(net.score_bias().to_f64(), exemplar_feat, search_feat)
}

/// [`score_map`] with an explicit bias value.
pub fn score_map_with_bias<T: Scalar>(
    bias: f64,
    exemplar_feat: &Tensor<T>,
    search_feat: &Tensor<T>,
) -> Result<ScoreMap<T>> {
    let mut values = cross_correlate(exemplar_feat, search_feat)?;
    let b = T::from_f64(bias);
    for v in values.data_mut() {
        *v += b;
    }
    Ok(ScoreMap {
        values,
        exemplar_shape: exemplar_feat.shape(),
        search_shape: search_feat.shape(),
    })
}

/// Gradients of `sum(upstream * score_map)` with respect to both feature
/// maps and the bias (`d_bias = sum(upstream)`).
pub fn score_map_grad<T: Scalar>(
    upstream: &Grid<T>,
    exemplar_feat: &Tensor<T>,
    search_feat: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>, f64)> {
    if exemplar_feat.channels() != search_feat.channels() {
        return Err(Error::ShapeMismatch(format!(
            "score_map_grad: exemplar channels {} != search channels {}",
            exemplar_feat.channels(),
            search_feat.channels()
        )));
    }
    let (ch, eh, ew) = (
        exemplar_feat.channels(),
        exemplar_feat.height(),
        exemplar_feat.width(),
    );
    let oh = search_feat.height() - eh + 1;
    let ow = search_feat.width() - ew + 1;
    if (upstream.height(), upstream.width()) != (oh, ow) {
        return Err(Error::ShapeMismatch(format!(
            "score_map_grad: upstream {}x{} does not match score map {}x{}",
            upstream.height(),
            upstream.width(),
            oh,
            ow
        )));
    }
    let mut d_exemplar = Tensor::zeros(exemplar_feat.shape());
    let mut d_search = Tensor::zeros(search_feat.shape());
    let mut d_bias = 0.0f64;
    for oy in 0..oh {
        for ox in 0..ow {
            let g = upstream.at(oy, ox);
            d_bias += g.to_f64();
            if g == T::ZERO {
                continue;
            }
            for c in 0..ch {
                for ky in 0..eh {
                    let e = exemplar_feat.index(0, c, ky, 0);
                    let s = search_feat.index(0, c, oy + ky, ox);
                    for kx in 0..ew {
                        d_exemplar.data_mut()[e + kx] += g * search_feat.data()[s + kx];
                        d_search.data_mut()[s + kx] += g * exemplar_feat.data()[e + kx];
                    }
                }
            }
        }
    }
    Ok((d_exemplar, d_search, d_bias))
}
