#pragma once

#include "cect/hu.hpp"
#include "cect/tensor.hpp"

#include <vector>

namespace cect {

struct LossConfig {
    double alpha = 1.0;   // RMSE weight
    double beta = 0.01;   // BCE weight
    double lambda = 0.001; // L2 weight decay
    double s = 10.0;       // sigmoid steepness, applied in normalized units
    double v_th = hu_normalize(300.0);

    void validate() const;
};

/// One paired slice: input CT, target CECT, left-chamber labels, heart region.
/// Images are in normalized units; masks are strictly {0,1}.
struct TrainingSample {
    Tensor ct;
    Tensor cect;
    Tensor chamber_mask;
    Tensor heart_mask;
};

/// Masked root-mean-square error; the mean runs over mask-true pixels only.
/// An empty mask yields 0 with a warning on stderr.
Tensor rmse_term(const Tensor& pred, const Tensor& target, const Tensor& mask);

/// Masked binary cross-entropy between the chamber labels and the steep
/// sigmoid of the prediction, summed (not averaged) over mask-true pixels.
Tensor bce_term(const Tensor& pred, const Tensor& chamber_mask, const Tensor& mask,
                double s, double v_th);

struct LossBreakdown {
    double rmse = 0.0; // alpha * rmse_term
    double bce = 0.0;  // beta * bce_term
    double l2 = 0.0;   // (lambda/2) * sum of squared conv weights
};

struct CompositeLoss {
    Tensor total;
    LossBreakdown parts;
};

/// alpha*RMSE + beta*BCE (both inside heart_mask) + (lambda/2)*sum ||W||^2
/// over the given convolution kernels.
CompositeLoss composite_loss(const Tensor& pred, const TrainingSample& sample,
                             const std::vector<Tensor>& decay_weights, const LossConfig& cfg);

} // namespace cect
