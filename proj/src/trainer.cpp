#include "cect/trainer.hpp"

#include "cect/hu.hpp"
#include "cect/rng.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>

namespace cect {

namespace fs = std::filesystem;
using nlohmann::json;

void TrainConfig::validate() const {
    if (!(learning_rate > 0)) throw ConfigError("learning_rate must be positive");
    if (batch_size < 1) throw ConfigError("batch_size must be at least 1");
    if (epochs < 1) throw ConfigError("epochs must be at least 1");
    if (checkpoint_every < 0) throw ConfigError("checkpoint_every must be non-negative");
    if (max_rotation_deg < 0) throw ConfigError("max_rotation_deg must be non-negative");
    if (!(beta1 >= 0 && beta1 < 1 && beta2 >= 0 && beta2 < 1))
        throw ConfigError("adam betas must lie in [0,1)");
    if (!(epsilon > 0)) throw ConfigError("adam epsilon must be positive");
    loss.validate();
    model.validate();
}

// ---- Adam ---------------------------------------------------------------

AdamOptimizer::AdamOptimizer(std::vector<Tensor> params, double lr, double beta1, double beta2,
                             double eps)
    : params_(std::move(params)), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
    m_.reserve(params_.size());
    v_.reserve(params_.size());
    for (const Tensor& p : params_) {
        m_.push_back(Tensor::zeros(p.shape()));
        v_.push_back(Tensor::zeros(p.shape()));
    }
}

bool AdamOptimizer::step() {
    for (Tensor& p : params_) {
        if (!p.has_grad()) return false; // backward was never run
        for (double g : p.grad())
            if (!std::isfinite(g)) return false;
    }
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (size_t i = 0; i < params_.size(); ++i) {
        auto& p = params_[i].data();
        const auto& g = params_[i].grad();
        auto& m = m_[i].data();
        auto& v = v_[i].data();
        for (size_t k = 0; k < p.size(); ++k) {
            m[k] = beta1_ * m[k] + (1.0 - beta1_) * g[k];
            v[k] = beta2_ * v[k] + (1.0 - beta2_) * g[k] * g[k];
            const double mhat = m[k] / bc1;
            const double vhat = v[k] / bc2;
            p[k] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
        }
    }
    return true;
}

std::vector<std::pair<std::string, Tensor>> AdamOptimizer::state_tensors() const {
    // deep copies: a snapshot must not keep evolving with the optimizer
    std::vector<std::pair<std::string, Tensor>> out;
    out.reserve(2 * params_.size());
    for (size_t i = 0; i < params_.size(); ++i) {
        out.emplace_back("m/" + std::to_string(i), Tensor(m_[i].shape(), m_[i].data()));
        out.emplace_back("v/" + std::to_string(i), Tensor(v_[i].shape(), v_[i].data()));
    }
    return out;
}

void AdamOptimizer::restore(const std::vector<std::pair<std::string, Tensor>>& state, int64_t t) {
    if (state.size() != 2 * params_.size())
        throw FormatError("optimizer state has wrong tensor count");
    for (size_t i = 0; i < params_.size(); ++i) {
        const auto& [mn, mt] = state[2 * i];
        const auto& [vn, vt] = state[2 * i + 1];
        if (mn != "m/" + std::to_string(i) || vn != "v/" + std::to_string(i))
            throw FormatError("optimizer state records out of order");
        if (mt.shape() != m_[i].shape() || vt.shape() != v_[i].shape())
            throw FormatError("optimizer state shape mismatch at index " + std::to_string(i));
        m_[i].data() = mt.data();
        v_[i].data() = vt.data();
    }
    t_ = t;
}

// ---- checkpoints --------------------------------------------------------

namespace {

std::string ckpt_base(const std::string& dir, int epoch) {
    return (fs::path(dir) / ("checkpoint_" + std::to_string(epoch))).string();
}

} // namespace

void save_checkpoint(const std::string& dir, int epoch, const Model& model,
                     const AdamOptimizer& opt) {
    const std::string base = ckpt_base(dir, epoch);
    model.save(base + ".cwt");
    save_tensors(base + ".opt.cwt", opt.state_tensors());
    json meta{{"epoch", epoch}, {"adam_t", opt.steps_taken()}};
    std::ofstream os(base + ".json", std::ios::trunc);
    if (!os) throw IoError("cannot open for writing: " + base + ".json");
    os << meta.dump(2) << '\n';
    if (!os) throw IoError("write failed: " + base + ".json");
}

CheckpointInfo load_checkpoint(const std::string& dir, int epoch, Model& model,
                               AdamOptimizer& opt) {
    const std::string base = ckpt_base(dir, epoch);
    std::ifstream is(base + ".json");
    if (!is) throw IoError("cannot open: " + base + ".json");
    json meta;
    try {
        is >> meta;
    } catch (const json::exception& e) {
        throw FormatError(std::string("bad checkpoint metadata: ") + e.what());
    }
    CheckpointInfo info;
    info.epoch = meta.at("epoch").get<int>();
    info.adam_t = meta.at("adam_t").get<int64_t>();
    model.load(base + ".cwt");
    opt.restore(load_tensors(base + ".opt.cwt"), info.adam_t);
    return info;
}

// ---- training loop ------------------------------------------------------

namespace {

Tensor stack_batch(const std::vector<TrainingSample>& samples) {
    const Shape& s0 = samples.front().ct.shape();
    const int S = s0[2];
    std::vector<double> data;
    data.reserve(samples.size() * static_cast<size_t>(S) * s0[3]);
    for (const TrainingSample& t : samples)
        data.insert(data.end(), t.ct.data().begin(), t.ct.data().end());
    return Tensor({static_cast<int>(samples.size()), 1, S, s0[3]}, std::move(data));
}

Slice tensor_to_hu_slice(const Tensor& t) {
    const Shape& s = t.shape();
    Slice out(s[3], s[2]);
    for (int64_t i = 0; i < t.numel(); ++i)
        out.hu[i] = static_cast<float>(hu_denormalize(t.data()[i]));
    return out;
}

} // namespace

Slice predict_slice(Model& model, const PhantomPair& pair) {
    const TrainingSample ts = to_training_sample(pair);
    Tensor out = model.forward(ts.ct, Mode::Infer);
    return tensor_to_hu_slice(out);
}

TrainOutcome train(Model& model, AdamOptimizer& opt,
                   const std::vector<VolumeSample>& train_set,
                   const std::vector<VolumeSample>& val_set, const TrainConfig& cfg,
                   const std::string& checkpoint_dir, int start_epoch,
                   TrainHistory resume_history) {
    cfg.validate();
    if (train_set.empty() || val_set.empty())
        throw UsageError("training needs non-empty train and val sets");

    // flatten to slices; the global index g is stable across epochs so the
    // per-sample augmentation stream does not depend on shuffle order
    std::vector<const PhantomPair*> train_slices;
    for (const VolumeSample& v : train_set)
        for (const PhantomPair& p : v.slices) train_slices.push_back(&p);
    std::vector<TrainingSample> val_samples;
    std::vector<const PhantomPair*> val_pairs;
    for (const VolumeSample& v : val_set)
        for (const PhantomPair& p : v.slices) {
            val_samples.push_back(to_training_sample(p));
            val_pairs.push_back(&p);
        }

    const int n = static_cast<int>(train_slices.size());
    if (n < cfg.batch_size)
        throw UsageError("fewer training slices than one batch; partial batches are dropped");
    const int batches_per_epoch = n / cfg.batch_size;

    auto trainable_tensors = [&] {
        std::vector<Tensor> ts;
        for (const auto& [name, t] : model.trainable()) ts.push_back(t);
        return ts;
    }();
    const std::vector<Tensor> decay = model.decay_weights();

    TrainOutcome outcome;
    outcome.history = std::move(resume_history);

    for (int epoch = start_epoch + 1; epoch <= cfg.epochs; ++epoch) {
        std::vector<int> order(n);
        for (int i = 0; i < n; ++i) order[i] = i;
        Rng shuffle_rng(seed_for(cfg.seed, "epoch-shuffle", static_cast<uint64_t>(epoch)));
        for (int i = n - 1; i > 0; --i)
            std::swap(order[i], order[static_cast<int>(
                                    shuffle_rng.below(static_cast<uint64_t>(i) + 1))]);

        EpochRecord rec;
        rec.epoch = epoch;
        for (int b = 0; b < batches_per_epoch; ++b) {
            std::vector<TrainingSample> batch;
            batch.reserve(cfg.batch_size);
            for (int k = 0; k < cfg.batch_size; ++k) {
                const int g = order[b * cfg.batch_size + k];
                const PhantomPair* p = train_slices[g];
                if (cfg.augment) {
                    const PhantomPair rotated =
                        augment(*p, seed_for(cfg.seed, "augment", static_cast<uint64_t>(epoch),
                                             static_cast<uint64_t>(g)),
                                cfg.max_rotation_deg);
                    batch.push_back(to_training_sample(rotated));
                } else {
                    batch.push_back(to_training_sample(*p));
                }
            }

            Tensor x = stack_batch(batch);
            Tensor out = model.forward(x, Mode::Train);

            Tensor data_sum = Tensor::scalar(0.0);
            double rmse_val = 0.0, bce_val = 0.0;
            for (int i = 0; i < cfg.batch_size; ++i) {
                const TrainingSample& ts = batch[i];
                Tensor pred = select_sample(out, i);
                Tensor r = scale(rmse_term(pred, ts.cect, ts.heart_mask), cfg.loss.alpha);
                Tensor c = scale(bce_term(pred, ts.chamber_mask, ts.heart_mask, cfg.loss.s,
                                          cfg.loss.v_th),
                                 cfg.loss.beta);
                rmse_val += r.value();
                bce_val += c.value();
                data_sum = add(data_sum, add(r, c));
            }
            Tensor l2 = Tensor::scalar(0.0);
            for (const Tensor& w : decay) l2 = add(l2, sum(mul(w, w)));
            l2 = scale(l2, cfg.loss.lambda / 2.0);
            Tensor total = add(scale(data_sum, 1.0 / cfg.batch_size), l2);

            const double loss_value = total.value();
            if (!std::isfinite(loss_value))
                throw TrainingError(epoch, b,
                                    "non-finite loss at epoch " + std::to_string(epoch) +
                                        " batch " + std::to_string(b));

            for (Tensor& t : trainable_tensors) t.zero_grad();
            backward(total);
            if (!opt.step()) ++rec.rejected_steps;

            rec.train_loss += loss_value;
            rec.rmse += rmse_val / cfg.batch_size;
            rec.bce += bce_val / cfg.batch_size;
            rec.l2 += l2.value();
        }
        rec.train_loss /= batches_per_epoch;
        rec.rmse /= batches_per_epoch;
        rec.bce /= batches_per_epoch;
        rec.l2 /= batches_per_epoch;

        // validation: loss in inference mode plus the epoch's Dice signal
        double l2_now = 0.0;
        for (const Tensor& w : decay)
            for (double wv : w.data()) l2_now += wv * wv;
        l2_now *= cfg.loss.lambda / 2.0;
        double vloss = 0.0, vdice = 0.0;
        for (size_t i = 0; i < val_samples.size(); ++i) {
            const TrainingSample& ts = val_samples[i];
            Tensor pred = model.forward(ts.ct, Mode::Infer);
            const double r =
                cfg.loss.alpha * rmse_term(pred, ts.cect, ts.heart_mask).value();
            const double c = cfg.loss.beta *
                             bce_term(pred, ts.chamber_mask, ts.heart_mask, cfg.loss.s,
                                      cfg.loss.v_th)
                                 .value();
            vloss += r + c + l2_now;
            const Slice pred_hu = tensor_to_hu_slice(pred);
            const Slice seg = threshold_segment(pred_hu, 300.0f, val_pairs[i]->heart_mask);
            vdice += dice(seg, val_pairs[i]->chamber_mask);
        }
        rec.val_loss = vloss / static_cast<double>(val_samples.size());
        rec.val_dice = vdice / static_cast<double>(val_samples.size());
        outcome.history.epochs.push_back(rec);

        std::cerr << "epoch " << epoch << "/" << cfg.epochs << " train " << rec.train_loss
                  << " val " << rec.val_loss << " dice " << rec.val_dice << "\n";

        if (!checkpoint_dir.empty() && cfg.checkpoint_every > 0 &&
            (epoch % cfg.checkpoint_every == 0 || epoch == cfg.epochs))
            save_checkpoint(checkpoint_dir, epoch, model, opt);
    }
    return outcome;
}

void TrainHistory::save_csv(const std::string& path) const {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw IoError("cannot open for writing: " + path);
    os << "epoch,train_loss,val_loss,val_dice,rmse,bce,l2\n";
    os.precision(17);
    for (const EpochRecord& r : epochs)
        os << r.epoch << ',' << r.train_loss << ',' << r.val_loss << ',' << r.val_dice << ','
           << r.rmse << ',' << r.bce << ',' << r.l2 << '\n';
    if (!os) throw IoError("write failed: " + path);
}

EvalReport evaluate(const std::function<Slice(const PhantomPair&)>& predict,
                    const std::vector<VolumeSample>& test_set, const EvalOptions& opts) {
    if (test_set.empty()) throw UsageError("evaluate needs a non-empty test set");
    EvalReport report;
    report.peak_hu = opts.peak_hu;
    for (const VolumeSample& vol : test_set) {
        int64_t pred_voxels = 0, true_voxels = 0;
        for (size_t z = 0; z < vol.slices.size(); ++z) {
            const PhantomPair& pair = vol.slices[z];
            const Slice pred = predict(pair);
            SliceRecord sr;
            sr.id = vol.id + "/" + std::to_string(z);
            sr.nmi = nmi(pred, pair.cect, pair.heart_mask, opts.bins);
            sr.psnr_db = psnr(pred, pair.cect, pair.heart_mask, opts.peak_hu);
            const Slice seg =
                threshold_segment(pred, static_cast<float>(opts.v_th_hu), pair.heart_mask);
            sr.dice = dice(seg, pair.chamber_mask);
            report.slices.push_back(std::move(sr));
            for (float v : seg.hu)
                if (v == 1.0f) ++pred_voxels;
            true_voxels += pair.chamber_area_px;
        }
        VolumeRecord vr;
        vr.id = vol.id;
        vr.volume_pred_ml = pred_voxels * vol.voxel_ml;
        vr.volume_true_ml = true_voxels * vol.voxel_ml;
        vr.dv_percent = volume_percent_error(vr.volume_pred_ml, vr.volume_true_ml);
        report.volumes.push_back(std::move(vr));
    }
    report.finalize();
    return report;
}

EvalReport evaluate(Model& model, const std::vector<VolumeSample>& test_set,
                    const EvalOptions& opts) {
    return evaluate(
        [&model](const PhantomPair& pair) { return predict_slice(model, pair); }, test_set,
        opts);
}

} // namespace cect
