#pragma once

#include <cstdint>
#include <vector>

#include "erode/dataset.hpp"
#include "erode/model.hpp"

namespace erode {

struct TrainConfig {
    int epochs = 40;
    int batch_size = 32;
    double learning_rate = 0.05;
    double momentum = 0.9;
    std::uint64_t seed = 0;
};

struct TrainResult {
    double eval_accuracy = 0.0;
    std::vector<double> epoch_mean_loss;  // one entry per epoch run
};

// Minibatch SGD with momentum on the cross-entropy loss over clean data.
// Deterministic given the seeds; the model is updated in place. Erosion is
// never active during training.
TrainResult train_model(Model& model, const Dataset& data, const TrainConfig& config);

}  // namespace erode
