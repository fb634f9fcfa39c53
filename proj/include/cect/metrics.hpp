#pragma once

#include "cect/image.hpp"

#include <string>
#include <utility>
#include <vector>

namespace cect {

/// Normalized mutual information 2*I(a;b) / (H(a)+H(b)) in [0,1], computed
/// over mask-true pixels with equal-width histograms of `bins` cells.
/// Defined as 1 when both entropies vanish. Empty mask is an error.
double nmi(const Slice& a, const Slice& b, const Slice& mask, int bins = 32);

/// Peak signal-to-noise ratio in dB over mask-true pixels. Identical images
/// give +infinity.
double psnr(const Slice& a, const Slice& b, const Slice& mask, double peak = 4095.0);

/// Binary mask of pixels with pred >= v_th inside the heart mask.
Slice threshold_segment(const Slice& pred, float v_th_hu, const Slice& heart_mask);

/// Dice overlap 2|A∩B| / (|A|+|B|); two empty masks count as 1.
double dice(const Slice& a, const Slice& b);

struct PearsonResult {
    double rho = 0.0;
    double p_value = 1.0;
};

/// Sample correlation with a two-sided p-value from the t distribution
/// (n-2 degrees of freedom). Requires n >= 3 and nonzero variance.
PearsonResult pearson(const std::vector<double>& x, const std::vector<double>& y);

struct BlandAltman {
    double mean_diff = 0.0;
    double sd_diff = 0.0; // sample standard deviation (n-1)
    double loa_low = 0.0;
    double loa_high = 0.0;
    std::vector<std::pair<double, double>> table; // (pair mean, diff = y - x)
};

BlandAltman bland_altman(const std::vector<double>& x, const std::vector<double>& y);

void write_bland_altman_csv(const BlandAltman& ba, const std::string& path);

/// 100 * |v_pred - v_true| / v_true; requires v_true > 0.
double volume_percent_error(double v_pred, double v_true);

struct SliceRecord {
    std::string id;
    double nmi = 0.0;
    double psnr_db = 0.0;
    double dice = 0.0;
};

struct VolumeRecord {
    std::string id;
    double volume_pred_ml = 0.0;
    double volume_true_ml = 0.0;
    double dv_percent = 0.0;
};

struct Aggregate {
    double mean = 0.0;
    double sd = 0.0;
};

struct EvalReport {
    double peak_hu = 4095.0;
    std::vector<SliceRecord> slices;
    std::vector<VolumeRecord> volumes;
    Aggregate nmi_agg, psnr_agg, dice_agg, dv_agg;
    double pearson_rho = 0.0;
    double pearson_p = 1.0;
    BlandAltman volume_agreement;

    /// Recompute aggregates, correlation, and agreement from the records.
    void finalize();

    std::string to_json() const;
    static EvalReport from_json(const std::string& text);
    void save(const std::string& path) const;
    static EvalReport load(const std::string& path);
};

} // namespace cect
