#include "erode/train.hpp"

#include <cmath>

#include "erode/graph.hpp"
#include "erode/rng.hpp"

namespace erode {

namespace {

constexpr std::uint32_t kShuffleStream = 3;

void shuffle_indices(std::vector<int>& indices, std::uint64_t seed, int epoch) {
    CounterRng rng(derive_seed(seed, kShuffleStream), static_cast<std::uint32_t>(epoch), 0);
    for (std::size_t i = indices.size(); i > 1; --i) {
        const std::size_t j = static_cast<std::size_t>(rng.below(i));
        std::swap(indices[i - 1], indices[j]);
    }
}

}  // namespace

TrainResult train_model(Model& model, const Dataset& data, const TrainConfig& config) {
    if (data.size() == 0 || data.train_indices.empty()) throw ConfigError("train: dataset has no training split");
    if (config.batch_size < 1) throw ConfigError("train: batch size must be >= 1");
    if (config.epochs < 0) throw ConfigError("train: epochs must be >= 0");

    TrainResult result;
    std::vector<Tensor*> params = model.parameters();
    std::vector<Tensor> velocity;
    velocity.reserve(params.size());
    for (Tensor* p : params) velocity.emplace_back(p->shape());

    std::vector<int> order = data.train_indices;
    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        shuffle_indices(order, config.seed, epoch);
        double loss_sum = 0.0;
        int batches = 0;
        for (std::size_t start = 0; start < order.size();
             start += static_cast<std::size_t>(config.batch_size)) {
            const std::size_t end =
                std::min(order.size(), start + static_cast<std::size_t>(config.batch_size));
            const std::vector<int> batch_idx(order.begin() + static_cast<std::ptrdiff_t>(start),
                                             order.begin() + static_cast<std::ptrdiff_t>(end));

            Tape tape;
            Value x = tape.input(data.gather(batch_idx));
            ForwardNodes fwd = forward_graph(tape, model, x, nullptr);
            Value loss = tape.cross_entropy(fwd.logits, data.gather_labels(batch_idx));

            const double batch_loss = tape.value(loss)[0];
            if (!std::isfinite(batch_loss))
                throw TrainingError("train: non-finite loss at epoch " + std::to_string(epoch));
            loss_sum += batch_loss;
            ++batches;

            Gradients grads = tape.backward(loss);
            for (std::size_t i = 0; i < params.size(); ++i) {
                const Tensor& g = grads.at(fwd.params[i]);
                velocity[i].a() = config.momentum * velocity[i].a() + g.a();
                params[i]->a() -= config.learning_rate * velocity[i].a();
            }
        }
        result.epoch_mean_loss.push_back(loss_sum / batches);
    }

    if (!data.eval_indices.empty())
        result.eval_accuracy =
            accuracy(model, data.gather(data.eval_indices), data.gather_labels(data.eval_indices));
    return result;
}

}  // namespace erode
