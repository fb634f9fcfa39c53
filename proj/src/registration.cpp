#include "cect/registration.hpp"

#include "cect/errors.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <numbers>
#include <vector>

namespace cect {

namespace {

constexpr double kDegToRad = std::numbers::pi / 180.0;

struct Mapper {
    double cx, cy, tx, ty, cos_t, sin_t;

    Mapper(const RigidTransform2D& t, int width, int height)
        : cx((width - 1) / 2.0),
          cy((height - 1) / 2.0),
          tx(t.tx),
          ty(t.ty),
          cos_t(std::cos(t.theta_deg * kDegToRad)),
          sin_t(std::sin(t.theta_deg * kDegToRad)) {}

    void apply(double x, double y, double& ox, double& oy) const {
        const double dx = x - cx, dy = y - cy;
        ox = cos_t * dx - sin_t * dy + cx + tx;
        oy = sin_t * dx + cos_t * dy + cy + ty;
    }
};

} // namespace

RigidTransform2D RigidTransform2D::inverse() const {
    const double c = std::cos(theta_deg * kDegToRad);
    const double s = std::sin(theta_deg * kDegToRad);
    // p = R(-theta) * (p' - c - t) + c  =>  t' = -R(-theta) * t
    return {-(c * tx + s * ty), -(-s * tx + c * ty), -theta_deg};
}

bool RigidTransform2D::near_identity(double tol_px, double tol_deg) const {
    return std::abs(tx) <= tol_px && std::abs(ty) <= tol_px && std::abs(theta_deg) <= tol_deg;
}

Slice resample(const Slice& img, const RigidTransform2D& t, Interp interp, float fill) {
    Slice out(img.width, img.height);
    const Mapper inv(t.inverse(), img.width, img.height);
    const int W = img.width, H = img.height;
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
            double sx, sy;
            inv.apply(x, y, sx, sy);
            float v;
            if (interp == Interp::Nearest) {
                const long xi = std::lround(sx), yi = std::lround(sy);
                v = (xi < 0 || xi >= W || yi < 0 || yi >= H)
                        ? fill
                        : img.at(static_cast<int>(xi), static_cast<int>(yi));
            } else {
                const double xf = std::floor(sx), yf = std::floor(sy);
                const int x0 = static_cast<int>(xf), y0 = static_cast<int>(yf);
                const double dx = sx - xf, dy = sy - yf;
                auto tap = [&](int xi, int yi) -> double {
                    return (xi < 0 || xi >= W || yi < 0 || yi >= H) ? fill : img.at(xi, yi);
                };
                // zero-weight neighbors are skipped so integer coordinates stay exact
                double acc = 0.0;
                const double w00 = (1.0 - dx) * (1.0 - dy);
                const double w10 = dx * (1.0 - dy);
                const double w01 = (1.0 - dx) * dy;
                const double w11 = dx * dy;
                if (w00 != 0.0) acc += w00 * tap(x0, y0);
                if (w10 != 0.0) acc += w10 * tap(x0 + 1, y0);
                if (w01 != 0.0) acc += w01 * tap(x0, y0 + 1);
                if (w11 != 0.0) acc += w11 * tap(x0 + 1, y0 + 1);
                v = static_cast<float>(acc);
            }
            out.at(x, y) = v;
        }
    return out;
}

double mutual_information(const Slice& a, const Slice& b, int bins, const Slice* valid) {
    if (a.width != b.width || a.height != b.height)
        throw ShapeError("mutual_information inputs must share a pixel grid");
    if (valid && (valid->width != a.width || valid->height != a.height))
        throw ShapeError("validity mask must share the image grid");
    if (bins < 2) throw UsageError("mutual_information needs at least 2 bins");

    float amin = 0, amax = 0, bmin = 0, bmax = 0;
    bool first = true;
    int64_t count = 0;
    const int64_t n = a.numel();
    for (int64_t i = 0; i < n; ++i) {
        if (valid && valid->hu[i] == 0.0f) continue;
        const float av = a.hu[i], bv = b.hu[i];
        if (first) {
            amin = amax = av;
            bmin = bmax = bv;
            first = false;
        } else {
            amin = std::min(amin, av);
            amax = std::max(amax, av);
            bmin = std::min(bmin, bv);
            bmax = std::max(bmax, bv);
        }
        ++count;
    }
    if (count == 0) return 0.0;

    const double ascale = amax > amin ? bins / (double(amax) - amin) : 0.0;
    const double bscale = bmax > bmin ? bins / (double(bmax) - bmin) : 0.0;
    std::vector<int64_t> joint(static_cast<size_t>(bins) * bins, 0);
    for (int64_t i = 0; i < n; ++i) {
        if (valid && valid->hu[i] == 0.0f) continue;
        int ia = static_cast<int>((a.hu[i] - amin) * ascale);
        int ib = static_cast<int>((b.hu[i] - bmin) * bscale);
        ia = std::min(ia, bins - 1);
        ib = std::min(ib, bins - 1);
        ++joint[static_cast<size_t>(ia) * bins + ib];
    }

    std::vector<int64_t> ma(bins, 0), mb(bins, 0);
    for (int ia = 0; ia < bins; ++ia)
        for (int ib = 0; ib < bins; ++ib) {
            const int64_t c = joint[static_cast<size_t>(ia) * bins + ib];
            ma[ia] += c;
            mb[ib] += c;
        }
    const double total = static_cast<double>(count);
    auto entropy = [total](const std::vector<int64_t>& hist) {
        double h = 0.0;
        for (int64_t c : hist)
            if (c > 0) {
                const double p = c / total;
                h -= p * std::log(p);
            }
        return h;
    };
    const double mi = entropy(ma) + entropy(mb) - entropy(joint);
    return std::max(0.0, mi);
}

namespace {

// Nelder-Mead over (tx, ty, theta), minimizing f. Deterministic.
struct Simplex {
    using Point = std::array<double, 3>;

    static Point refine(const std::function<double(const Point&)>& f, Point start,
                        const Point& step, int iterations, double* best_value = nullptr) {
        std::array<Point, 4> xs;
        std::array<double, 4> fs;
        xs[0] = start;
        for (int i = 1; i < 4; ++i) {
            xs[i] = start;
            xs[i][i - 1] += step[i - 1];
        }
        for (int i = 0; i < 4; ++i) fs[i] = f(xs[i]);

        auto order = [&] {
            std::array<int, 4> idx{0, 1, 2, 3};
            std::stable_sort(idx.begin(), idx.end(), [&](int l, int r) { return fs[l] < fs[r]; });
            std::array<Point, 4> nx;
            std::array<double, 4> nf;
            for (int i = 0; i < 4; ++i) {
                nx[i] = xs[idx[i]];
                nf[i] = fs[idx[i]];
            }
            xs = nx;
            fs = nf;
        };
        auto lerp = [](const Point& a, const Point& b, double t) {
            Point p;
            for (int i = 0; i < 3; ++i) p[i] = a[i] + t * (b[i] - a[i]);
            return p;
        };

        for (int it = 0; it < iterations; ++it) {
            order();
            double size = 0.0;
            for (int i = 1; i < 4; ++i)
                for (int d = 0; d < 3; ++d) size = std::max(size, std::abs(xs[i][d] - xs[0][d]));
            if (size < 1e-4) break;

            Point centroid{0, 0, 0};
            for (int i = 0; i < 3; ++i)
                for (int d = 0; d < 3; ++d) centroid[d] += xs[i][d] / 3.0;

            const Point refl = lerp(centroid, xs[3], -1.0);
            const double fr = f(refl);
            if (fr < fs[0]) {
                const Point exp_ = lerp(centroid, xs[3], -2.0);
                const double fe = f(exp_);
                if (fe < fr) {
                    xs[3] = exp_;
                    fs[3] = fe;
                } else {
                    xs[3] = refl;
                    fs[3] = fr;
                }
            } else if (fr < fs[2]) {
                xs[3] = refl;
                fs[3] = fr;
            } else {
                const Point contr = lerp(centroid, xs[3], fr < fs[3] ? -0.5 : 0.5);
                const double fc = f(contr);
                if (fc < std::min(fr, fs[3])) {
                    xs[3] = contr;
                    fs[3] = fc;
                } else {
                    for (int i = 1; i < 4; ++i) {
                        xs[i] = lerp(xs[0], xs[i], 0.5);
                        fs[i] = f(xs[i]);
                    }
                }
            }
        }
        order();
        if (best_value) *best_value = fs[0];
        return xs[0];
    }
};

} // namespace

RegisterResult register_rigid(const Slice& moving, const Slice& fixed,
                              const RegisterOptions& opts) {
    if (moving.width != fixed.width || moving.height != fixed.height)
        throw ShapeError("register_rigid inputs must share a pixel grid");

    Slice ones(moving.width, moving.height, 1.0f);
    auto mi_at = [&](const RigidTransform2D& t) {
        const Slice warped = resample(moving, t, Interp::Bilinear, opts.fill);
        const Slice overlap = resample(ones, t, Interp::Nearest, 0.0f);
        return mutual_information(warped, fixed, opts.bins, &overlap);
    };

    RegisterResult result;
    result.mi_initial = mi_at({0, 0, 0});

    // Coarse sweep. The MI surface is sharply peaked in translation (≲1 px)
    // but shallow in rotation, so a single best grid point often sits on a
    // plateau far from the true basin while the basin's own grid sample ranks
    // lower. Keeping the best candidate of every theta slice guarantees the
    // refinement stage starts inside (or next to) the basin for some slice.
    RigidTransform2D best{0, 0, 0};
    double best_mi = result.mi_initial;
    std::vector<std::pair<RigidTransform2D, double>> slice_best;
    for (double th = -opts.theta_range; th <= opts.theta_range + 1e-9; th += opts.theta_step) {
        RigidTransform2D sb{0, 0, th};
        double sb_mi = -1.0;
        for (double ty = -opts.translation_range; ty <= opts.translation_range + 1e-9;
             ty += opts.translation_step)
            for (double tx = -opts.translation_range; tx <= opts.translation_range + 1e-9;
                 tx += opts.translation_step) {
                const RigidTransform2D t{tx, ty, th};
                const double mi = mi_at(t);
                if (mi > best_mi) {
                    best_mi = mi;
                    best = t;
                }
                if (mi > sb_mi) {
                    sb_mi = mi;
                    sb = t;
                }
            }
        slice_best.emplace_back(sb, sb_mi);
    }

    auto cost = [&](const Simplex::Point& p) {
        return -mi_at({p[0], p[1], p[2]});
    };
    const Simplex::Point step{opts.translation_step / 2.0, opts.translation_step / 2.0,
                              opts.theta_step / 2.0};
    // Restarting the simplex from its own result re-inflates it after a
    // collapse, letting it keep crawling along the shallow rotation axis.
    auto polish = [&](const RigidTransform2D& s, double& out_mi) {
        Simplex::Point cur{s.tx, s.ty, s.theta_deg};
        double prev = 1e300;
        for (int round = 0; round < 6; ++round) {
            double f = 0.0;
            cur = Simplex::refine(cost, cur, step, opts.refine_iterations, &f);
            if (f >= prev - 1e-9) break;
            prev = f;
        }
        out_mi = -prev;
        return RigidTransform2D{cur[0], cur[1], cur[2]};
    };

    RigidTransform2D refined = best;
    double refined_mi = best_mi;
    auto consider = [&](const RigidTransform2D& s) {
        double mi = 0.0;
        const RigidTransform2D t = polish(s, mi);
        if (mi > refined_mi) {
            refined_mi = mi;
            refined = t;
        }
    };
    consider(best);
    for (const auto& [s, mi] : slice_best) {
        if (s.tx == best.tx && s.ty == best.ty && s.theta_deg == best.theta_deg) continue;
        consider(s);
    }

    if (refined_mi > best_mi) {
        result.transform = refined;
        result.mi_final = refined_mi;
        result.converged = true;
    } else {
        result.transform = best;
        result.mi_final = best_mi;
        result.converged = false;
    }
    return result;
}

Slice downsample_to(const Slice& img, int size) {
    if (size <= 0) throw UsageError("downsample size must be positive");
    if (size > img.width || size > img.height)
        throw UsageError("downsample_to cannot upsample");
    if (size == img.width && size == img.height) return img;

    // exact box integration: per output cell, integrate the source over
    // [i*r, (i+1)*r) in each axis
    auto axis_weights = [](int in, int out) {
        const double r = static_cast<double>(in) / out;
        std::vector<std::vector<std::pair<int, double>>> w(out);
        for (int i = 0; i < out; ++i) {
            const double lo = i * r, hi = (i + 1) * r;
            for (int j = static_cast<int>(std::floor(lo)); j < in; ++j) {
                if (j + 1.0 <= lo) continue;
                if (static_cast<double>(j) >= hi) break;
                const double cover = std::min(hi, j + 1.0) - std::max(lo, static_cast<double>(j));
                if (cover > 0) w[i].emplace_back(j, cover / r);
            }
        }
        return w;
    };
    const auto wx = axis_weights(img.width, size);
    const auto wy = axis_weights(img.height, size);

    Slice out(size, size);
    for (int oy = 0; oy < size; ++oy)
        for (int ox = 0; ox < size; ++ox) {
            double acc = 0.0;
            for (const auto& [sy, fy] : wy[oy])
                for (const auto& [sx, fx] : wx[ox]) acc += fy * fx * img.at(sx, sy);
            out.at(ox, oy) = static_cast<float>(acc);
        }
    return out;
}

} // namespace cect
