#include "ctt/triage.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "ctt/rng.hpp"

namespace ctt {

const char* split_str(Split s) {
  switch (s) {
    case Split::Train: return "TRAIN";
    case Split::Val: return "VAL";
    case Split::Test: return "TEST";
  }
  return "?";
}

Split parse_split(const std::string& s) {
  if (s == "TRAIN") return Split::Train;
  if (s == "VAL") return Split::Val;
  if (s == "TEST") return Split::Test;
  throw TriageError(TriageError::Kind::BadManifest, "unknown split: " + s);
}

void write_manifest(const std::vector<ManifestRow>& rows, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw TriageError(TriageError::Kind::BadManifest, "cannot open for write: " + path);
  for (const ManifestRow& r : rows)
    out << r.path << '\t' << r.patient_id << '\t' << label_str(r.label) << '\t'
        << split_str(r.split) << '\n';
}

std::vector<ManifestRow> read_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw TriageError(TriageError::Kind::BadManifest, "cannot open " + path);
  std::vector<ManifestRow> rows;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream ls(line);
    ManifestRow r;
    std::string label, split;
    if (!std::getline(ls, r.path, '\t') || !std::getline(ls, r.patient_id, '\t') ||
        !std::getline(ls, label, '\t') || !std::getline(ls, split))
      throw TriageError(TriageError::Kind::BadManifest,
                        path + ":" + std::to_string(lineno) + ": expected 4 tab-separated fields");
    try {
      r.label = parse_label(label);
      r.split = parse_split(split);
    } catch (const std::invalid_argument& e) {
      throw TriageError(TriageError::Kind::BadManifest,
                        path + ":" + std::to_string(lineno) + ": " + e.what());
    }
    rows.push_back(std::move(r));
  }
  return rows;
}

std::map<std::string, Split> split_dataset(
    const std::vector<std::pair<std::string, SliceLabel>>& patients, SplitRatios ratios,
    std::uint64_t seed) {
  if (patients.empty())
    throw TriageError(TriageError::Kind::EmptyInput, "split_dataset: no patients");
  if (ratios.train <= 0 || ratios.val < 0 || ratios.test < 0)
    throw TriageError(TriageError::Kind::EmptyInput, "split_dataset: ratios must be positive");

  Rng rng(seed);
  std::map<std::string, Split> assignment;
  const double total = ratios.train + ratios.val + ratios.test;
  for (SliceLabel cls : {SliceLabel::WNL, SliceLabel::OtherDisease, SliceLabel::PE}) {
    std::vector<std::string> members;
    for (const auto& [id, label] : patients)
      if (label == cls) members.push_back(id);
    if (members.empty()) continue;
    rng.shuffle(members);

    const double n = static_cast<double>(members.size());
    const double exact[3] = {n * ratios.train / total, n * ratios.val / total,
                             n * ratios.test / total};
    long counts[3];
    double remainder[3];
    long assigned = 0;
    for (int i = 0; i < 3; ++i) {
      counts[i] = static_cast<long>(std::floor(exact[i]));
      remainder[i] = exact[i] - static_cast<double>(counts[i]);
      assigned += counts[i];
    }
    // Largest remainder; ties favor train, then val, then test.
    while (assigned < static_cast<long>(members.size())) {
      int best = 0;
      for (int i = 1; i < 3; ++i)
        if (remainder[i] > remainder[best]) best = i;
      ++counts[best];
      remainder[best] = -1.0;
      ++assigned;
    }

    std::size_t pos = 0;
    const Split kinds[3] = {Split::Train, Split::Val, Split::Test};
    for (int i = 0; i < 3; ++i)
      for (long k = 0; k < counts[i]; ++k) assignment[members[pos++]] = kinds[i];
  }
  return assignment;
}

std::vector<Tensor> select_inputs(const std::vector<WindowedImage>& images,
                                  const CbamdrnModel& model) {
  std::vector<Tensor> out;
  for (WindowName want : windows_for_mode(model.mode)) {
    const WindowedImage* found = nullptr;
    for (const WindowedImage& img : images)
      if (img.window == want) {
        found = &img;
        break;
      }
    if (!found)
      throw ModelError(ModelError::Kind::WindowSetMismatch,
                       std::string("missing window '") + window_name_str(want) + "' for " +
                           window_mode_str(model.mode) + " model");
    Tensor t({1, 1, found->height, found->width});
    std::copy(found->values.begin(), found->values.end(), t.data.begin());
    out.push_back(std::move(t));
  }
  return out;
}

SlicePrediction triage_slice(const std::vector<WindowedImage>& windows, CbamdrnModel& stage1,
                             CbamdrnModel& stage2, const std::string& slice_id) {
  SlicePrediction pred;
  pred.slice_id = slice_id;

  const Tensor logits1 = infer_logits(stage1, select_inputs(windows, stage1));
  pred.stage1_logits = {logits1.data[0], logits1.data[1]};
  pred.stage1 = predict_binary(logits1.data.data());

  if (pred.stage1 == 1) {
    const Tensor logits2 = infer_logits(stage2, select_inputs(windows, stage2));
    pred.stage2_logits = {logits2.data[0], logits2.data[1]};
    pred.stage2 = predict_binary(logits2.data.data());
  }
  return pred;
}

SliceLabel aggregate_labels(const std::vector<SliceLabel>& labels) {
  if (labels.empty())
    throw TriageError(TriageError::Kind::EmptySliceSet, "no slices to aggregate");
  SliceLabel out = SliceLabel::WNL;
  for (SliceLabel l : labels)
    if (static_cast<int>(l) > static_cast<int>(out)) out = l;
  return out;
}

PatientTriage triage_patient(const std::string& patient_id,
                             std::vector<SlicePrediction> predictions) {
  if (predictions.empty())
    throw TriageError(TriageError::Kind::EmptySliceSet,
                      "patient " + patient_id + " has no slice predictions");
  PatientTriage out;
  out.patient_id = patient_id;
  std::vector<SliceLabel> labels;
  labels.reserve(predictions.size());
  for (const SlicePrediction& p : predictions) labels.push_back(p.final_label());
  out.final = aggregate_labels(labels);
  out.slices = std::move(predictions);
  return out;
}

double Fraction::percent() const {
  if (den == 0) return 0.0;
  return std::floor(1000.0 * static_cast<double>(num) / static_cast<double>(den) + 0.5) / 10.0;
}

std::string Fraction::formatted() const {
  std::ostringstream os;
  const double p = percent();
  os.setf(std::ios::fixed);
  os.precision(1);
  os << p << "% (" << num << "/" << den << ")";
  return os.str();
}

namespace {

MetricsReport score(std::span<const int> preds, std::span<const int> truths,
                    const std::vector<std::string>& class_names, const std::string& level) {
  MetricsReport report;
  report.level = level;
  report.accuracy.den = static_cast<long>(truths.size());
  std::vector<Fraction> per_class(class_names.size());
  for (std::size_t i = 0; i < truths.size(); ++i) {
    const int t = truths[i];
    if (t < 0 || t >= static_cast<int>(class_names.size()))
      throw TriageError(TriageError::Kind::LengthMismatch,
                        "truth label " + std::to_string(t) + " out of range");
    ++per_class[static_cast<std::size_t>(t)].den;
    if (preds[i] == t) {
      ++report.accuracy.num;
      ++per_class[static_cast<std::size_t>(t)].num;
    }
  }
  for (std::size_t k = 0; k < class_names.size(); ++k)
    report.classes.push_back({class_names[k], per_class[k]});
  return report;
}

}  // namespace

MetricsReport compute_metrics(std::span<const int> preds, std::span<const int> truths,
                              const std::vector<std::string>& class_names) {
  if (preds.size() != truths.size())
    throw TriageError(TriageError::Kind::LengthMismatch,
                      "prediction/truth length mismatch: " + std::to_string(preds.size()) +
                          " vs " + std::to_string(truths.size()));
  if (truths.empty()) throw TriageError(TriageError::Kind::EmptyInput, "no samples");
  return score(preds, truths, class_names, "per_slice");
}

MetricsReport compute_patient_metrics(std::span<const std::string> patient_ids,
                                      std::span<const int> preds, std::span<const int> truths,
                                      const std::vector<std::string>& class_names) {
  if (preds.size() != truths.size() || preds.size() != patient_ids.size())
    throw TriageError(TriageError::Kind::LengthMismatch,
                      "patient metrics inputs must have equal lengths");
  if (truths.empty()) throw TriageError(TriageError::Kind::EmptyInput, "no samples");

  // OR rule on both sides: a patient's label is its most severe slice label.
  std::map<std::string, std::pair<int, int>> by_patient;
  std::vector<std::string> order;
  for (std::size_t i = 0; i < truths.size(); ++i) {
    auto [it, inserted] = by_patient.try_emplace(patient_ids[i], preds[i], truths[i]);
    if (inserted) {
      order.push_back(patient_ids[i]);
    } else {
      it->second.first = std::max(it->second.first, preds[i]);
      it->second.second = std::max(it->second.second, truths[i]);
    }
  }
  std::vector<int> p, t;
  for (const std::string& id : order) {
    p.push_back(by_patient[id].first);
    t.push_back(by_patient[id].second);
  }
  return score(p, t, class_names, "per_patient");
}

std::string MetricsReport::to_json() const {
  nlohmann::json j;
  j["level"] = level;
  j["accuracy"] = {{"percent", accuracy.percent()},
                   {"correct", accuracy.num},
                   {"total", accuracy.den}};
  for (const ClassMetric& c : classes)
    j["sensitivity"][c.name] = {{"percent", c.sensitivity.percent()},
                                {"correct", c.sensitivity.num},
                                {"total", c.sensitivity.den}};
  return j.dump(2);
}

}  // namespace ctt
