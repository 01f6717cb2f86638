#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ctt/model.hpp"

namespace ctt {

class TrainError : public std::runtime_error {
 public:
  enum class Kind { EmptyDataset, LabelOutOfRange };
  TrainError(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

// One preprocessed sample: one 1x1xHxW tensor per model window, binary label.
struct TrainSample {
  std::vector<Tensor> windows;
  int label = 0;
};

struct TrainConfig {
  int epochs = 6;
  int batch_size = 8;
  float lr = 1e-3f;
  std::uint64_t seed = 0;
  bool class_weighted = false;  // weights inversely proportional to class frequency
};

struct EpochStats {
  double train_loss = 0.0;
  double train_accuracy = 0.0;
  double val_accuracy = 0.0;
};

struct TrainHistory {
  std::vector<EpochStats> epochs;
  int best_epoch = -1;  // 0-based epoch whose weights were kept
  double best_val_accuracy = 0.0;
};

// Mini-batch training with a seeded shuffle; deterministic for a fixed seed.
// The model is left holding the weights of the best-validation-accuracy
// epoch (training accuracy stands in when the validation set is empty).
TrainHistory train(CbamdrnModel& model, const std::vector<TrainSample>& train_set,
                   const std::vector<TrainSample>& val_set, const TrainConfig& cfg);

struct ConfusionCounts {
  long tp = 0, tn = 0, fp = 0, fn = 0;
  long total() const { return tp + tn + fp + fn; }
  double accuracy() const { return total() ? static_cast<double>(tp + tn) / total() : 0.0; }
};

// Eval-mode confusion counts; class 1 is the positive class.
ConfusionCounts evaluate(CbamdrnModel& model, const std::vector<TrainSample>& set,
                         int batch_size = 8);

// Eval-mode logits for one sample.
Tensor infer_logits(CbamdrnModel& model, const std::vector<Tensor>& windows);

}  // namespace ctt
