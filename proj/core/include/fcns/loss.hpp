#pragma once

#include <span>
#include <vector>

namespace fcns::train {

struct CrossEntropyResult {
  double loss = 0.0;
  std::vector<double> dlogits;  // N x C, gradient of `loss`
};

// loss = sum_n w[y_n] * -log softmax(logits_n)[y_n] / sum_n w[y_n].
// A batch whose weights sum to zero has loss 0 and zero gradient.
CrossEntropyResult weighted_cross_entropy_grad(std::span<const double> logits,
                                               int num_classes,
                                               std::span<const int> labels,
                                               std::span<const double> weights);

double weighted_cross_entropy(std::span<const double> logits, int num_classes,
                              std::span<const int> labels,
                              std::span<const double> weights);

}  // namespace fcns::train
