#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ctt/labels.hpp"
#include "ctt/model.hpp"
#include "ctt/train.hpp"

namespace ctt {

class TriageError : public std::runtime_error {
 public:
  enum class Kind { LengthMismatch, EmptyInput, EmptySliceSet, BadManifest };
  TriageError(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

enum class Split { Train, Val, Test };

const char* split_str(Split s);
Split parse_split(const std::string& s);

// One manifest line: path \t patient_id \t label \t split.
struct ManifestRow {
  std::string path;
  std::string patient_id;
  SliceLabel label = SliceLabel::WNL;
  Split split = Split::Train;
};

void write_manifest(const std::vector<ManifestRow>& rows, const std::string& path);
std::vector<ManifestRow> read_manifest(const std::string& path);

struct SplitRatios {
  int train = 5;
  int val = 3;
  int test = 2;
};

// Stratified patient-level split: per class, patients are shuffled by the
// seeded RNG and partitioned as close to the ratios as integer counts allow.
std::map<std::string, Split> split_dataset(
    const std::vector<std::pair<std::string, SliceLabel>>& patients, SplitRatios ratios,
    std::uint64_t seed);

// Two-stage decision for one slice. Stage 2 runs only when stage 1 flags
// disease; ties at either stage resolve toward the positive class.
struct SlicePrediction {
  std::string slice_id;
  int stage1 = 0;              // 0 = WNL, 1 = disease
  std::optional<int> stage2;   // 0 = other disease, 1 = PE; present iff stage1 == 1
  std::array<float, 2> stage1_logits{};
  std::array<float, 2> stage2_logits{};

  SliceLabel final_label() const {
    if (stage1 == 0) return SliceLabel::WNL;
    return *stage2 == 1 ? SliceLabel::PE : SliceLabel::OtherDisease;
  }
};

// Picks the model's windows out of a preprocessed set by window name;
// missing windows raise ModelError{WindowSetMismatch}.
std::vector<Tensor> select_inputs(const std::vector<WindowedImage>& images,
                                  const CbamdrnModel& model);

SlicePrediction triage_slice(const std::vector<WindowedImage>& windows, CbamdrnModel& stage1,
                             CbamdrnModel& stage2, const std::string& slice_id = "");

struct PatientTriage {
  std::string patient_id;
  std::vector<SlicePrediction> slices;
  SliceLabel final = SliceLabel::WNL;
};

// OR-aggregation: PE if any slice is PE, else OtherDisease if any slice is
// diseased, else WNL. Identical to taking the most severe slice label.
SliceLabel aggregate_labels(const std::vector<SliceLabel>& labels);

PatientTriage triage_patient(const std::string& patient_id,
                             std::vector<SlicePrediction> predictions);

struct Fraction {
  long num = 0;
  long den = 0;
  // Percent rounded half-up to one decimal, matching report formatting.
  double percent() const;
  std::string formatted() const;  // e.g. "96.1% (521/542)"
};

struct ClassMetric {
  std::string name;
  Fraction sensitivity;
};

struct MetricsReport {
  std::string level;  // "per_slice" | "per_patient"
  Fraction accuracy;
  std::vector<ClassMetric> classes;

  std::string to_json() const;
};

// Accuracy and per-class sensitivity over integer labels indexing
// class_names. Labels must be ordered by severity when the per-patient
// variant is used.
MetricsReport compute_metrics(std::span<const int> preds, std::span<const int> truths,
                              const std::vector<std::string>& class_names);

// Groups by patient, aggregates both predictions and truths with the OR
// rule, then scores patients like slices.
MetricsReport compute_patient_metrics(std::span<const std::string> patient_ids,
                                      std::span<const int> preds, std::span<const int> truths,
                                      const std::vector<std::string>& class_names);

}  // namespace ctt
