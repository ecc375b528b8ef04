#pragma once

#include <optional>
#include <vector>

#include "mfusion/data.hpp"

namespace mfusion {

/// Point prediction in original output units. Deterministic models leave
/// `variance` empty.
struct Prediction {
  double mean = 0.0;
  std::optional<double> variance;
};

/// Common surface of every fitted model.
class Predictor {
 public:
  virtual ~Predictor() = default;
  virtual std::vector<Prediction> predict(const MixedDataset& inputs) const = 0;
};

}  // namespace mfusion
