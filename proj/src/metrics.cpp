#include "cect/metrics.hpp"

#include "cect/errors.hpp"

#include <boost/math/distributions/students_t.hpp>
#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>

namespace cect {

namespace {

void check_same_grid(const Slice& a, const Slice& b, const char* what) {
    if (a.width != b.width || a.height != b.height)
        throw ShapeError(std::string(what) + ": images must share a pixel grid");
}

void check_binary(const Slice& m, const char* what) {
    for (float v : m.hu)
        if (v != 0.0f && v != 1.0f)
            throw UsageError(std::string(what) + ": mask must be strictly 0/1 valued");
}

struct MaskedEntropies {
    double ha = 0.0, hb = 0.0, hab = 0.0;
    int64_t count = 0;
};

MaskedEntropies joint_entropies(const Slice& a, const Slice& b, const Slice& mask, int bins) {
    float amin = 0, amax = 0, bmin = 0, bmax = 0;
    bool first = true;
    int64_t count = 0;
    for (int64_t i = 0; i < a.numel(); ++i) {
        if (mask.hu[i] == 0.0f) continue;
        if (first) {
            amin = amax = a.hu[i];
            bmin = bmax = b.hu[i];
            first = false;
        } else {
            amin = std::min(amin, a.hu[i]);
            amax = std::max(amax, a.hu[i]);
            bmin = std::min(bmin, b.hu[i]);
            bmax = std::max(bmax, b.hu[i]);
        }
        ++count;
    }
    MaskedEntropies out;
    out.count = count;
    if (count == 0) return out;

    const double ascale = amax > amin ? bins / (double(amax) - amin) : 0.0;
    const double bscale = bmax > bmin ? bins / (double(bmax) - bmin) : 0.0;
    std::vector<int64_t> joint(static_cast<size_t>(bins) * bins, 0);
    for (int64_t i = 0; i < a.numel(); ++i) {
        if (mask.hu[i] == 0.0f) continue;
        const int ia = std::min(static_cast<int>((a.hu[i] - amin) * ascale), bins - 1);
        const int ib = std::min(static_cast<int>((b.hu[i] - bmin) * bscale), bins - 1);
        ++joint[static_cast<size_t>(ia) * bins + ib];
    }
    std::vector<int64_t> ma(bins, 0), mb(bins, 0);
    for (int ia = 0; ia < bins; ++ia)
        for (int ib = 0; ib < bins; ++ib) {
            ma[ia] += joint[static_cast<size_t>(ia) * bins + ib];
            mb[ib] += joint[static_cast<size_t>(ia) * bins + ib];
        }
    const double total = static_cast<double>(count);
    auto entropy = [total](const std::vector<int64_t>& h) {
        double e = 0.0;
        for (int64_t c : h)
            if (c > 0) {
                const double p = c / total;
                e -= p * std::log(p);
            }
        return e;
    };
    out.ha = entropy(ma);
    out.hb = entropy(mb);
    out.hab = entropy(joint);
    return out;
}

} // namespace

double nmi(const Slice& a, const Slice& b, const Slice& mask, int bins) {
    check_same_grid(a, b, "nmi");
    check_same_grid(a, mask, "nmi");
    if (bins < 2) throw UsageError("nmi needs at least 2 bins");
    check_binary(mask, "nmi");
    const MaskedEntropies e = joint_entropies(a, b, mask, bins);
    if (e.count == 0) throw UsageError("nmi over an empty mask");
    if (e.ha + e.hb == 0.0) return 1.0; // both images constant in the region
    const double mi = std::max(0.0, e.ha + e.hb - e.hab);
    return 2.0 * mi / (e.ha + e.hb);
}

double psnr(const Slice& a, const Slice& b, const Slice& mask, double peak) {
    check_same_grid(a, b, "psnr");
    check_same_grid(a, mask, "psnr");
    if (peak <= 0) throw UsageError("psnr peak must be positive");
    check_binary(mask, "psnr");
    double se = 0.0;
    int64_t count = 0;
    for (int64_t i = 0; i < a.numel(); ++i) {
        if (mask.hu[i] == 0.0f) continue;
        const double d = double(a.hu[i]) - double(b.hu[i]);
        se += d * d;
        ++count;
    }
    if (count == 0) throw UsageError("psnr over an empty mask");
    if (se == 0.0) return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(peak * peak * count / se);
}

Slice threshold_segment(const Slice& pred, float v_th_hu, const Slice& heart_mask) {
    check_same_grid(pred, heart_mask, "threshold_segment");
    check_binary(heart_mask, "threshold_segment");
    Slice out(pred.width, pred.height);
    for (int64_t i = 0; i < pred.numel(); ++i)
        out.hu[i] = (pred.hu[i] >= v_th_hu && heart_mask.hu[i] == 1.0f) ? 1.0f : 0.0f;
    return out;
}

double dice(const Slice& a, const Slice& b) {
    check_same_grid(a, b, "dice");
    check_binary(a, "dice");
    check_binary(b, "dice");
    int64_t na = 0, nb = 0, inter = 0;
    for (int64_t i = 0; i < a.numel(); ++i) {
        if (a.hu[i] == 1.0f) ++na;
        if (b.hu[i] == 1.0f) ++nb;
        if (a.hu[i] == 1.0f && b.hu[i] == 1.0f) ++inter;
    }
    if (na + nb == 0) return 1.0;
    return 2.0 * inter / static_cast<double>(na + nb);
}

PearsonResult pearson(const std::vector<double>& x, const std::vector<double>& y) {
    if (x.size() != y.size()) throw ShapeError("pearson: series lengths differ");
    const size_t n = x.size();
    if (n < 3) throw UsageError("pearson needs at least 3 points");
    double mx = 0, my = 0;
    for (size_t i = 0; i < n; ++i) {
        mx += x[i];
        my += y[i];
    }
    mx /= n;
    my /= n;
    double sxx = 0, syy = 0, sxy = 0;
    for (size_t i = 0; i < n; ++i) {
        sxx += (x[i] - mx) * (x[i] - mx);
        syy += (y[i] - my) * (y[i] - my);
        sxy += (x[i] - mx) * (y[i] - my);
    }
    if (sxx == 0.0 || syy == 0.0) throw UsageError("pearson: a series has zero variance");
    PearsonResult r;
    r.rho = sxy / (std::sqrt(sxx) * std::sqrt(syy));
    r.rho = std::clamp(r.rho, -1.0, 1.0);
    const double df = static_cast<double>(n - 2);
    const double denom = 1.0 - r.rho * r.rho;
    if (denom <= 0.0) {
        r.p_value = 0.0;
    } else {
        const double t = r.rho * std::sqrt(df / denom);
        boost::math::students_t dist(df);
        r.p_value = 2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(t)));
    }
    return r;
}

BlandAltman bland_altman(const std::vector<double>& x, const std::vector<double>& y) {
    if (x.size() != y.size()) throw ShapeError("bland_altman: series lengths differ");
    const size_t n = x.size();
    if (n < 2) throw UsageError("bland_altman needs at least 2 pairs");
    BlandAltman ba;
    ba.table.reserve(n);
    double sum = 0.0;
    for (size_t i = 0; i < n; ++i) {
        const double diff = y[i] - x[i];
        ba.table.emplace_back((x[i] + y[i]) / 2.0, diff);
        sum += diff;
    }
    ba.mean_diff = sum / n;
    double ss = 0.0;
    for (const auto& [m, d] : ba.table) ss += (d - ba.mean_diff) * (d - ba.mean_diff);
    ba.sd_diff = std::sqrt(ss / (n - 1));
    ba.loa_low = ba.mean_diff - 1.96 * ba.sd_diff;
    ba.loa_high = ba.mean_diff + 1.96 * ba.sd_diff;
    return ba;
}

void write_bland_altman_csv(const BlandAltman& ba, const std::string& path) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw IoError("cannot open for writing: " + path);
    os << "mean,diff\n";
    os.precision(17);
    for (const auto& [m, d] : ba.table) os << m << ',' << d << '\n';
    if (!os) throw IoError("write failed: " + path);
}

double volume_percent_error(double v_pred, double v_true) {
    if (!(v_true > 0)) throw UsageError("volume_percent_error needs a positive reference volume");
    return 100.0 * std::abs(v_pred - v_true) / v_true;
}

// ---- report -------------------------------------------------------------

namespace {

using nlohmann::json;

// JSON has no Inf/NaN literals; nonfinite values travel as strings.
json num_to_json(double v) {
    if (std::isfinite(v)) return v;
    if (std::isnan(v)) return "nan";
    return v > 0 ? "+inf" : "-inf";
}

double num_from_json(const json& j) {
    if (j.is_string()) {
        const std::string s = j.get<std::string>();
        if (s == "+inf") return std::numeric_limits<double>::infinity();
        if (s == "-inf") return -std::numeric_limits<double>::infinity();
        if (s == "nan") return std::numeric_limits<double>::quiet_NaN();
        throw FormatError("unrecognized numeric sentinel: " + s);
    }
    return j.get<double>();
}

Aggregate aggregate_of(const std::vector<double>& values) {
    Aggregate a;
    std::vector<double> finite;
    for (double v : values)
        if (std::isfinite(v)) finite.push_back(v);
    if (finite.empty()) {
        // all +inf (e.g. PSNR of identical images): report the sentinel
        a.mean = values.empty() ? 0.0 : values.front();
        a.sd = 0.0;
        return a;
    }
    double sum = 0.0;
    for (double v : finite) sum += v;
    a.mean = sum / finite.size();
    if (finite.size() > 1) {
        double ss = 0.0;
        for (double v : finite) ss += (v - a.mean) * (v - a.mean);
        a.sd = std::sqrt(ss / (finite.size() - 1));
    }
    return a;
}

json aggregate_to_json(const Aggregate& a) {
    return json{{"mean", num_to_json(a.mean)}, {"sd", num_to_json(a.sd)}};
}

Aggregate aggregate_from_json(const json& j) {
    return {num_from_json(j.at("mean")), num_from_json(j.at("sd"))};
}

} // namespace

void EvalReport::finalize() {
    std::vector<double> nmis, psnrs, dices, dvs, vp, vt;
    for (const auto& s : slices) {
        nmis.push_back(s.nmi);
        psnrs.push_back(s.psnr_db);
        dices.push_back(s.dice);
    }
    for (const auto& v : volumes) {
        dvs.push_back(v.dv_percent);
        vp.push_back(v.volume_pred_ml);
        vt.push_back(v.volume_true_ml);
    }
    nmi_agg = aggregate_of(nmis);
    psnr_agg = aggregate_of(psnrs);
    dice_agg = aggregate_of(dices);
    dv_agg = aggregate_of(dvs);
    if (vt.size() >= 3) {
        try {
            const PearsonResult pr = pearson(vt, vp);
            pearson_rho = pr.rho;
            pearson_p = pr.p_value;
        } catch (const UsageError&) {
            pearson_rho = std::numeric_limits<double>::quiet_NaN();
            pearson_p = std::numeric_limits<double>::quiet_NaN();
        }
    }
    if (vt.size() >= 2) volume_agreement = bland_altman(vt, vp);
}

std::string EvalReport::to_json() const {
    json slice_arr = json::array();
    for (const auto& s : slices)
        slice_arr.push_back({{"id", s.id},
                             {"nmi", num_to_json(s.nmi)},
                             {"psnr_db", num_to_json(s.psnr_db)},
                             {"dice", num_to_json(s.dice)}});
    json volume_arr = json::array();
    for (const auto& v : volumes)
        volume_arr.push_back({{"id", v.id},
                              {"volume_pred_ml", num_to_json(v.volume_pred_ml)},
                              {"volume_true_ml", num_to_json(v.volume_true_ml)},
                              {"dv_percent", num_to_json(v.dv_percent)}});
    json doc{
        {"peak_hu", peak_hu},
        {"slices", slice_arr},
        {"volumes", volume_arr},
        {"aggregates",
         {{"nmi", aggregate_to_json(nmi_agg)},
          {"psnr_db", aggregate_to_json(psnr_agg)},
          {"dice", aggregate_to_json(dice_agg)},
          {"dv_percent", aggregate_to_json(dv_agg)},
          {"pearson_rho", num_to_json(pearson_rho)},
          {"pearson_p", num_to_json(pearson_p)},
          {"bland_altman",
           {{"mean_diff", num_to_json(volume_agreement.mean_diff)},
            {"sd_diff", num_to_json(volume_agreement.sd_diff)},
            {"loa_low", num_to_json(volume_agreement.loa_low)},
            {"loa_high", num_to_json(volume_agreement.loa_high)}}}}},
    };
    return doc.dump(2);
}

EvalReport EvalReport::from_json(const std::string& text) {
    json doc;
    try {
        doc = json::parse(text);
    } catch (const json::exception& e) {
        throw FormatError(std::string("bad report JSON: ") + e.what());
    }
    try {
        EvalReport r;
        r.peak_hu = doc.at("peak_hu").get<double>();
        for (const auto& s : doc.at("slices"))
            r.slices.push_back({s.at("id").get<std::string>(), num_from_json(s.at("nmi")),
                                num_from_json(s.at("psnr_db")), num_from_json(s.at("dice"))});
        for (const auto& v : doc.at("volumes"))
            r.volumes.push_back(
                {v.at("id").get<std::string>(), num_from_json(v.at("volume_pred_ml")),
                 num_from_json(v.at("volume_true_ml")), num_from_json(v.at("dv_percent"))});
        const json& agg = doc.at("aggregates");
        r.nmi_agg = aggregate_from_json(agg.at("nmi"));
        r.psnr_agg = aggregate_from_json(agg.at("psnr_db"));
        r.dice_agg = aggregate_from_json(agg.at("dice"));
        r.dv_agg = aggregate_from_json(agg.at("dv_percent"));
        r.pearson_rho = num_from_json(agg.at("pearson_rho"));
        r.pearson_p = num_from_json(agg.at("pearson_p"));
        const json& ba = agg.at("bland_altman");
        r.volume_agreement.mean_diff = num_from_json(ba.at("mean_diff"));
        r.volume_agreement.sd_diff = num_from_json(ba.at("sd_diff"));
        r.volume_agreement.loa_low = num_from_json(ba.at("loa_low"));
        r.volume_agreement.loa_high = num_from_json(ba.at("loa_high"));
        return r;
    } catch (const json::exception& e) {
        throw FormatError(std::string("report JSON missing fields: ") + e.what());
    }
}

void EvalReport::save(const std::string& path) const {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw IoError("cannot open for writing: " + path);
    os << to_json() << '\n';
    if (!os) throw IoError("write failed: " + path);
}

EvalReport EvalReport::load(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open: " + path);
    std::string text((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
    return from_json(text);
}

} // namespace cect
