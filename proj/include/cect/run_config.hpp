#pragma once

#include "cect/phantom.hpp"
#include "cect/trainer.hpp"

#include <string>
#include <vector>

namespace cect {

/// Every knob of the pipeline behind one flat key=value file. Precedence is
/// command-line overrides > file > defaults; finalize() syncs the derived
/// fields and validates, and to_text() emits the complete resolved key set in
/// a fixed order that parses back to an identical configuration.
struct RunConfig {
    uint64_t seed = 0;
    PhantomConfig phantom;
    ModelConfig model = ModelConfig::desk_scale();
    LossConfig loss;
    double loss_v_th_hu = 300.0; // file-facing form of loss.v_th
    TrainConfig train;
    EvalOptions eval;
    RegisterOptions reg;

    /// Applies one assignment; throws ConfigError for unknown keys or
    /// unparsable values.
    void apply(const std::string& key, const std::string& value);

    /// Propagates seed/loss/model into TrainConfig, derives loss.v_th from
    /// loss_v_th_hu, then validates every section.
    void finalize();

    std::string to_text() const;
    void save(const std::string& path) const;

    /// Parses a file (if path non-empty), then overrides ("key=value" each),
    /// then finalizes.
    static RunConfig load(const std::string& path,
                          const std::vector<std::string>& overrides = {});

    /// All recognized keys, in the order to_text() writes them.
    static const std::vector<std::string>& keys();
};

} // namespace cect
