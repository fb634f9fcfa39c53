#include "cect/loss.hpp"

#include "cect/errors.hpp"

#include <iostream>

namespace cect {

void LossConfig::validate() const {
    if (alpha < 0 || beta < 0 || lambda < 0)
        throw ConfigError("loss weights alpha/beta/lambda must be non-negative");
    if (s <= 0) throw ConfigError("sigmoid steepness must be positive");
}

namespace {

// Number of pixels each mask-true entry covers once batch broadcast is
// accounted for, plus the raw true count.
int64_t masked_count(const Tensor& x, const Tensor& mask) {
    int64_t count = 0;
    for (double v : mask.data()) {
        if (v != 0.0 && v != 1.0) throw UsageError("mask must be strictly 0/1 valued");
        if (v == 1.0) ++count;
    }
    if (x.numel() != mask.numel()) count *= x.shape()[0]; // [1,C,H,W] mask over [N,C,H,W]
    return count;
}

} // namespace

Tensor rmse_term(const Tensor& pred, const Tensor& target, const Tensor& mask) {
    const int64_t n = masked_count(pred, mask);
    if (n == 0) {
        std::cerr << "warning: rmse_term over an empty mask, defining the term as 0\n";
        return Tensor::scalar(0.0);
    }
    Tensor diff = masked_select(sub(pred, target), mask);
    Tensor mse = scale(sum(mul(diff, diff)), 1.0 / static_cast<double>(n));
    return sqrt(mse);
}

Tensor bce_term(const Tensor& pred, const Tensor& chamber_mask, const Tensor& mask,
                double s, double v_th) {
    Tensor sig = steep_sigmoid(pred, s, v_th);
    // complement labels computed eagerly; labels carry no gradient
    std::vector<double> inv(chamber_mask.data().size());
    for (size_t i = 0; i < inv.size(); ++i) {
        const double y = chamber_mask.data()[i];
        if (y != 0.0 && y != 1.0) throw UsageError("chamber mask must be strictly 0/1 valued");
        inv[i] = 1.0 - y;
    }
    Tensor pos = mul(chamber_mask, log_clamped(sig));
    Tensor neg = mul(Tensor(chamber_mask.shape(), std::move(inv)),
                     log_clamped(add_scalar(scale(sig, -1.0), 1.0)));
    Tensor total = sum(masked_select(add(pos, neg), mask));
    return scale(total, -1.0);
}

CompositeLoss composite_loss(const Tensor& pred, const TrainingSample& sample,
                             const std::vector<Tensor>& decay_weights, const LossConfig& cfg) {
    cfg.validate();
    if (pred.shape() != sample.cect.shape())
        throw ShapeError("prediction and target shapes differ");

    Tensor rmse = rmse_term(pred, sample.cect, sample.heart_mask);
    Tensor bce = bce_term(pred, sample.chamber_mask, sample.heart_mask, cfg.s, cfg.v_th);

    Tensor l2 = Tensor::scalar(0.0);
    for (const Tensor& w : decay_weights) l2 = add(l2, sum(mul(w, w)));

    Tensor weighted_rmse = scale(rmse, cfg.alpha);
    Tensor weighted_bce = scale(bce, cfg.beta);
    Tensor weighted_l2 = scale(l2, cfg.lambda / 2.0);
    CompositeLoss out;
    out.total = add(add(weighted_rmse, weighted_bce), weighted_l2);
    out.parts.rmse = weighted_rmse.value();
    out.parts.bce = weighted_bce.value();
    out.parts.l2 = weighted_l2.value();
    return out;
}

} // namespace cect
