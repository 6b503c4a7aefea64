#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "ct/model.hpp"
#include "metrics.hpp"
#include "phantom.hpp"

namespace ct {

enum class PredSource { CNN_BRANCH, TRANS_BRANCH, ENSEMBLE };

inline const char* pred_source_name(PredSource s) {
    switch (s) {
        case PredSource::CNN_BRANCH: return "cnn";
        case PredSource::TRANS_BRANCH: return "trans";
        default: return "ensemble";
    }
}

struct PredictionVolume {
    std::vector<uint8_t> labels;  // D*H*W
    PredSource source = PredSource::CNN_BRANCH;
    int64_t depth = 0, height = 0, width = 0;
    std::array<float, 3> spacing{1, 1, 10};
};

// Slice-by-slice inference stacked into a volume. CNN_BRANCH / TRANS_BRANCH
// take the respective model's argmax; ENSEMBLE averages the two probability
// maps before the argmax. No post-processing. `second` may be null for
// single-branch sources.
PredictionVolume infer_volume(ModelHandle<float>* first, ModelHandle<float>* second,
                              const Volume& vol, PredSource source);

// DSC (and optionally HD95) of a prediction against the reference volume.
VolumeMetrics evaluate_prediction(const PredictionVolume& pred, const Volume& truth,
                                  int64_t num_categories, bool with_hd);

}  // namespace ct
