#include "ctt/train.hpp"

#include <algorithm>
#include <numeric>

#include "ctt/rng.hpp"

namespace ctt {

namespace {

// Stacks per-sample window tensors into batch tensors, one per window.
std::vector<Tensor> assemble_batch(const std::vector<TrainSample>& set,
                                   const std::vector<std::size_t>& indices, std::size_t begin,
                                   std::size_t end) {
  const std::size_t batch = end - begin;
  const std::size_t n_windows = set[indices[begin]].windows.size();
  std::vector<Tensor> out;
  out.reserve(n_windows);
  for (std::size_t w = 0; w < n_windows; ++w) {
    const Tensor& proto = set[indices[begin]].windows[w];
    Tensor t({static_cast<int>(batch), proto.dim(1), proto.dim(2), proto.dim(3)});
    const std::size_t stride = proto.numel();
    for (std::size_t b = 0; b < batch; ++b) {
      const Tensor& src = set[indices[begin + b]].windows[w];
      require(src.numel() == stride, "batch: inconsistent window shapes");
      std::copy(src.data.begin(), src.data.end(), t.data.begin() + static_cast<long>(b * stride));
    }
    out.push_back(std::move(t));
  }
  return out;
}

void check_dataset(const std::vector<TrainSample>& set, int num_classes, const char* what) {
  if (set.empty())
    throw TrainError(TrainError::Kind::EmptyDataset, std::string(what) + " set is empty");
  for (const TrainSample& s : set)
    if (s.label < 0 || s.label >= num_classes)
      throw TrainError(TrainError::Kind::LabelOutOfRange,
                       "label " + std::to_string(s.label) + " outside [0, " +
                           std::to_string(num_classes) + ")");
}

double dataset_accuracy(CbamdrnModel& model, const std::vector<TrainSample>& set,
                        int batch_size) {
  const ConfusionCounts c = evaluate(model, set, batch_size);
  return c.accuracy();
}

std::vector<float> inverse_frequency_weights(const std::vector<TrainSample>& set,
                                             int num_classes) {
  std::vector<long> counts(static_cast<std::size_t>(num_classes), 0);
  for (const TrainSample& s : set) ++counts[static_cast<std::size_t>(s.label)];
  std::vector<float> weights(static_cast<std::size_t>(num_classes), 0.0f);
  for (int k = 0; k < num_classes; ++k)
    weights[static_cast<std::size_t>(k)] =
        counts[static_cast<std::size_t>(k)] > 0
            ? static_cast<float>(set.size()) /
                  (static_cast<float>(num_classes) * counts[static_cast<std::size_t>(k)])
            : 0.0f;
  return weights;
}

}  // namespace

TrainHistory train(CbamdrnModel& model, const std::vector<TrainSample>& train_set,
                   const std::vector<TrainSample>& val_set, const TrainConfig& cfg) {
  check_dataset(train_set, model.config.num_classes, "train");
  if (!val_set.empty()) check_dataset(val_set, model.config.num_classes, "validation");

  Rng rng(cfg.seed);
  AdamConfig adam;
  adam.lr = cfg.lr;
  std::optional<std::vector<float>> class_weights;
  if (cfg.class_weighted)
    class_weights = inverse_frequency_weights(train_set, model.config.num_classes);

  std::vector<std::size_t> indices(train_set.size());
  std::iota(indices.begin(), indices.end(), 0u);

  TrainHistory history;
  std::vector<Tensor> best_values;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    rng.shuffle(indices);
    double loss_sum = 0.0;
    long correct = 0;
    for (std::size_t begin = 0; begin < indices.size();
         begin += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t end =
          std::min(indices.size(), begin + static_cast<std::size_t>(cfg.batch_size));
      std::vector<Tensor> inputs = assemble_batch(train_set, indices, begin, end);
      std::vector<int> targets;
      targets.reserve(end - begin);
      for (std::size_t i = begin; i < end; ++i) targets.push_back(train_set[indices[i]].label);

      Graph g;
      ClassifyTaps<float> taps = classify(g, model, inputs, ops::BnMode::Train);
      const Graph::Id loss = g.softmax_cross_entropy(taps.logits, targets, class_weights);
      model.params.zero_grad();
      g.backward(loss);
      model.params.adam_step(adam);

      loss_sum += static_cast<double>(g.value(loss).data[0]) * static_cast<double>(end - begin);
      const Tensor& logits = g.value(taps.logits);
      for (std::size_t b = 0; b < end - begin; ++b)
        if (predict_binary_t(logits, static_cast<int>(b)) == targets[b]) ++correct;
    }

    EpochStats stats;
    stats.train_loss = loss_sum / static_cast<double>(train_set.size());
    stats.train_accuracy = static_cast<double>(correct) / static_cast<double>(train_set.size());
    stats.val_accuracy = val_set.empty()
                             ? dataset_accuracy(model, train_set, cfg.batch_size)
                             : dataset_accuracy(model, val_set, cfg.batch_size);
    history.epochs.push_back(stats);

    if (history.best_epoch < 0 || stats.val_accuracy > history.best_val_accuracy) {
      history.best_epoch = epoch;
      history.best_val_accuracy = stats.val_accuracy;
      best_values = model.params.snapshot_values();
    }
  }
  if (!best_values.empty()) model.params.restore_values(best_values);
  return history;
}

ConfusionCounts evaluate(CbamdrnModel& model, const std::vector<TrainSample>& set,
                         int batch_size) {
  check_dataset(set, model.config.num_classes, "evaluation");
  std::vector<std::size_t> indices(set.size());
  std::iota(indices.begin(), indices.end(), 0u);

  ConfusionCounts counts;
  for (std::size_t begin = 0; begin < set.size();
       begin += static_cast<std::size_t>(batch_size)) {
    const std::size_t end = std::min(set.size(), begin + static_cast<std::size_t>(batch_size));
    std::vector<Tensor> inputs = assemble_batch(set, indices, begin, end);
    Graph g;
    ClassifyTaps<float> taps = classify(g, model, inputs, ops::BnMode::Eval);
    const Tensor& logits = g.value(taps.logits);
    for (std::size_t b = 0; b < end - begin; ++b) {
      const int pred = predict_binary_t(logits, static_cast<int>(b));
      const int truth = set[begin + b].label;
      if (truth == 1)
        pred == 1 ? ++counts.tp : ++counts.fn;
      else
        pred == 1 ? ++counts.fp : ++counts.tn;
    }
  }
  return counts;
}

Tensor infer_logits(CbamdrnModel& model, const std::vector<Tensor>& windows) {
  Graph g;
  ClassifyTaps<float> taps = classify(g, model, windows, ops::BnMode::Eval);
  return g.value(taps.logits);
}

}  // namespace ctt
