#pragma once

#include "cect/image.hpp"

namespace cect {

/// Rotation (degrees, about the image center) plus translation (pixels).
/// Forward map: p' = R(theta) * (p - center) + center + (tx, ty).
struct RigidTransform2D {
    double tx = 0.0;
    double ty = 0.0;
    double theta_deg = 0.0;

    RigidTransform2D inverse() const;
    bool near_identity(double tol_px, double tol_deg) const;
};

enum class Interp { Bilinear, Nearest };

/// Mutual information in nats from a joint histogram with bins x bins
/// equal-width cells spanning each image's observed range. When `valid` is
/// given, only pixels with valid != 0 contribute.
double mutual_information(const Slice& a, const Slice& b, int bins = 32,
                          const Slice* valid = nullptr);

/// output(p) = img(t^-1(p)); samples falling outside the image blend with
/// (bilinear) or become (nearest) the fill value.
Slice resample(const Slice& img, const RigidTransform2D& t, Interp interp, float fill);

struct RegisterOptions {
    int bins = 32;
    double translation_range = 8.0; // grid search extent, pixels
    double translation_step = 2.0;
    double theta_range = 15.0; // degrees
    double theta_step = 3.0;
    int refine_iterations = 200;
    float fill = -1000.0f;
};

struct RegisterResult {
    RigidTransform2D transform;
    double mi_initial = 0.0; // at identity
    double mi_final = 0.0;   // at returned transform
    bool converged = true;   // refinement improved on the best grid point
};

/// Finds the transform maximizing MI(resample(moving, t), fixed): coarse grid
/// search over translations and angles, then Nelder-Mead refinement.
RegisterResult register_rigid(const Slice& moving, const Slice& fixed,
                              const RegisterOptions& opts = {});

/// Exact box-filter (area averaging) downsample to size x size.
Slice downsample_to(const Slice& img, int size);

} // namespace cect
