#include "eval.hpp"

#include "ct/losses.hpp"

namespace ct {

PredictionVolume infer_volume(ModelHandle<float>* first, ModelHandle<float>* second,
                              const Volume& vol, PredSource source) {
    if (!first) throw ConfigError("infer_volume: primary model missing");
    if (source != PredSource::CNN_BRANCH && !second)
        throw ConfigError("infer_volume: second branch required for this source");

    const int64_t D = vol.depth, H = vol.height, W = vol.width;
    Tensor<float> batch = Tensor<float>::zeros({D, 1, H, W});
    std::copy(vol.image.begin(), vol.image.end(), batch.data().begin());

    Tensor<float> probs;
    switch (source) {
        case PredSource::CNN_BRANCH: probs = predict_probs(*first, batch); break;
        case PredSource::TRANS_BRANCH: probs = predict_probs(*second, batch); break;
        case PredSource::ENSEMBLE: {
            NoTapeScope<float> guard;
            Tensor<float> p1 = predict_probs(*first, batch);
            Tensor<float> p2 = predict_probs(*second, batch);
            probs = mul_scalar(add(p1, p2), 0.5f);
            break;
        }
    }

    PredictionVolume out;
    out.source = source;
    out.depth = D;
    out.height = H;
    out.width = W;
    out.spacing = vol.spacing;
    const auto arg = argmax_axis(probs, 1);
    out.labels.resize(arg.size());
    for (size_t i = 0; i < arg.size(); ++i) out.labels[i] = (uint8_t)arg[i];
    return out;
}

VolumeMetrics evaluate_prediction(const PredictionVolume& pred, const Volume& truth,
                                  int64_t num_categories, bool with_hd) {
    if (pred.labels.size() != truth.label.size())
        throw ShapeError("evaluate_prediction: prediction dims disagree with the volume");
    return evaluate_volume(pred.labels, truth.label, truth.depth, truth.height, truth.width,
                           truth.spacing, num_categories, (int64_t)truth.volume_id, with_hd);
}

}  // namespace ct
