#pragma once

#include <cstdint>
#include <vector>

#include "erode/tensor.hpp"

namespace erode {

// Labeled image set with pixel values in [0, 255]. Regenerated from its seed
// on demand and never stored on disk.
struct Dataset {
    Tensor inputs;  // N x C x H x W
    std::vector<int> labels;
    std::vector<int> train_indices;
    std::vector<int> eval_indices;
    int class_count = 0;
    Shape example_shape;  // C x H x W

    int size() const { return static_cast<int>(labels.size()); }

    // Copy of example i as a 1 x C x H x W batch.
    Tensor example(int index) const;
    // Batch gather of the given dataset indices.
    Tensor gather(const std::vector<int>& indices) const;
    std::vector<int> gather_labels(const std::vector<int>& indices) const;
};

// Procedurally generated class-structured images: each class owns a grating
// frequency/orientation and a blob position, drawn per (seed, class); every
// example jitters phase, blob center and amplitudes and adds pixel noise.
// Balanced classes, deterministic 80/20 train/eval split by index rule.
Dataset make_synthetic_dataset(std::uint64_t seed, int classes, int per_class, const Shape& shape);

}  // namespace erode
