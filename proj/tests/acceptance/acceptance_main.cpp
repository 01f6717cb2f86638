// Acceptance suite: runs every criterion in order and prints one PASS/FAIL
// line per criterion. Exit code is the number of failed criteria.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "ctt/gradcam.hpp"
#include "ctt/model.hpp"
#include "ctt/phantom.hpp"
#include "ctt/preprocess.hpp"
#include "ctt/rng.hpp"
#include "ctt/train.hpp"
#include "ctt/triage.hpp"
#include "ctt/weights_io.hpp"

using namespace ctt;
namespace fs = std::filesystem;

namespace {

int g_failures = 0;

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

void report(int criterion, bool pass, const std::string& detail) {
  std::printf("[%s] criterion %2d: %s\n", pass ? "PASS" : "FAIL", criterion, detail.c_str());
  std::fflush(stdout);
  if (!pass) ++g_failures;
}

// ---------------------------------------------------------------- criterion 1

void criterion_1_metric_formulas() {
  std::vector<int> truths, preds;
  for (int i = 0; i < 377; ++i) {
    truths.push_back(0);
    preds.push_back(i < 366 ? 0 : 1);
  }
  for (int i = 0; i < 165; ++i) {
    truths.push_back(1);
    preds.push_back(i < 155 ? 1 : 0);
  }
  const MetricsReport r = compute_metrics(preds, truths, {"WNL", "Disease"});
  const bool pass = r.accuracy.formatted() == "96.1% (521/542)" &&
                    r.classes[0].sensitivity.formatted() == "97.1% (366/377)" &&
                    r.classes[1].sensitivity.formatted() == "93.9% (155/165)";
  report(1, pass,
         "metric formulas: " + r.accuracy.formatted() + ", " +
             r.classes[0].sensitivity.formatted() + ", " +
             r.classes[1].sensitivity.formatted());
}

// ---------------------------------------------------------------- criterion 2

void criterion_2_windowing() {
  const auto t0 = std::chrono::steady_clock::now();
  bool pass = true;
  std::string fail_reason;

  Rng rng(2024);
  for (const WindowName name :
       {WindowName::Vascular, WindowName::Mediastinum, WindowName::Lung}) {
    const WindowSpec spec = default_window(name);
    const float center = 0.5f * (spec.hu_low + spec.hu_high);
    HuSlice img(10000, 1);
    for (float& v : img.hu) v = static_cast<float>(rng.uniform(kHuMin, kHuMax));
    img.hu[0] = center;
    img.hu[1] = spec.hu_low;
    img.hu[2] = spec.hu_high;
    img.hu[3] = kHuMin;
    img.hu[4] = kHuMax;
    std::sort(img.hu.begin(), img.hu.end());
    const WindowedImage out = apply_window(img, spec);
    for (std::size_t i = 0; i < out.values.size(); ++i) {
      if (out.values[i] < -1.0f || out.values[i] > 1.0f) pass = false;
      if (i && out.values[i] < out.values[i - 1]) pass = false;
      if (img.hu[i] == center && out.values[i] != 0.0f) pass = false;
      if (img.hu[i] <= spec.hu_low && out.values[i] != -1.0f) pass = false;
      if (img.hu[i] >= spec.hu_high && out.values[i] != 1.0f) pass = false;
    }
  }

  // Exhaustive integer sweep for the lung window.
  const WindowSpec lung = default_window(WindowName::Lung);
  float prev = -2.0f;
  for (int hu = -1024; hu <= 3071; ++hu) {
    HuSlice one(1, 1);
    one.hu[0] = static_cast<float>(hu);
    const float v = apply_window(one, lung).values[0];
    if (v < -1.0f || v > 1.0f || v < prev) pass = false;
    if (hu == 550 && v != 0.0f) pass = false;  // lung window center
    if (hu <= -400 && v != -1.0f) pass = false;
    if (hu >= 1500 && v != 1.0f) pass = false;
    prev = v;
  }

  const double elapsed = seconds_since(t0);
  pass = pass && elapsed < 1.0;
  std::ostringstream os;
  os << "windowing suite: 3x10^4 random + 4096-value sweep in " << elapsed << " s";
  report(2, pass, os.str());
}

// ---------------------------------------------------------------- criterion 3

Tensor random_tensor(Shape shape, Rng& rng) {
  Tensor t(std::move(shape));
  for (float& v : t.data) v = static_cast<float>(rng.normal());
  return t;
}

Tensor conv_oracle(const Tensor& x, const Tensor& w, const Tensor* bias, int stride, int pad,
                   int dilation) {
  const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int O = w.dim(0), Kh = w.dim(2), Kw = w.dim(3);
  const int eff_kh = Kh + (Kh - 1) * (dilation - 1);
  const int eff_kw = Kw + (Kw - 1) * (dilation - 1);
  const int Ho = (H + 2 * pad - eff_kh) / stride + 1;
  const int Wo = (W + 2 * pad - eff_kw) / stride + 1;
  Tensor y({N, O, Ho, Wo});
  for (int n = 0; n < N; ++n)
    for (int o = 0; o < O; ++o)
      for (int oh = 0; oh < Ho; ++oh)
        for (int ow = 0; ow < Wo; ++ow) {
          double acc = bias ? static_cast<double>(bias->data[o]) : 0.0;
          for (int c = 0; c < C; ++c)
            for (int kh = 0; kh < Kh; ++kh)
              for (int kw = 0; kw < Kw; ++kw) {
                const int ih = oh * stride - pad + kh * dilation;
                const int iw = ow * stride - pad + kw * dilation;
                if (ih < 0 || ih >= H || iw < 0 || iw >= W) continue;
                acc += static_cast<double>(x.at({n, c, ih, iw})) * w.at({o, c, kh, kw});
              }
          y.at({n, o, oh, ow}) = static_cast<float>(acc);
        }
  return y;
}

Tensor inflate_kernel(const Tensor& w, int dilation) {
  const int O = w.dim(0), C = w.dim(1), Kh = w.dim(2), Kw = w.dim(3);
  Tensor out({O, C, Kh + (Kh - 1) * (dilation - 1), Kw + (Kw - 1) * (dilation - 1)});
  for (int o = 0; o < O; ++o)
    for (int c = 0; c < C; ++c)
      for (int kh = 0; kh < Kh; ++kh)
        for (int kw = 0; kw < Kw; ++kw)
          out.at({o, c, kh * dilation, kw * dilation}) = w.at({o, c, kh, kw});
  return out;
}

void criterion_3_dilated_conv() {
  const auto t0 = std::chrono::steady_clock::now();
  Rng rng(314);
  float max_err = 0.0f;
  for (int iter = 0; iter < 100; ++iter) {
    const int N = rng.range_int(1, 2);
    const int C = rng.range_int(1, 4);
    const int O = rng.range_int(1, 4);
    const int K = rng.range_int(0, 1) ? 3 : 1;
    const int d = std::array<int, 3>{1, 2, 4}[static_cast<std::size_t>(rng.range_int(0, 2))];
    const int stride = rng.range_int(1, 2);
    const int pad = rng.range_int(0, 3);
    const int eff = K + (K - 1) * (d - 1);
    const int H = eff + rng.range_int(0, 10);
    const int W = eff + rng.range_int(0, 10);
    Tensor x = random_tensor({N, C, H, W}, rng);
    Tensor w = random_tensor({O, C, K, K}, rng);
    Tensor b = random_tensor({O}, rng);

    const Tensor direct = ops::conv2d(x, w, &b, {stride, pad, d});
    const Tensor inflated = ops::conv2d(x, inflate_kernel(w, d), &b, {stride, pad, 1});
    const Tensor oracle = conv_oracle(x, w, &b, stride, pad, d);
    for (std::size_t i = 0; i < direct.numel(); ++i) {
      max_err = std::max(max_err, std::fabs(direct.data[i] - inflated.data[i]));
      max_err = std::max(max_err, std::fabs(direct.data[i] - oracle.data[i]));
    }
  }
  const double elapsed = seconds_since(t0);
  const bool pass = max_err < 1e-5f && elapsed < 30.0;
  std::ostringstream os;
  os << "dilated conv vs inflation + direct summation: 100 cases, max |err| = " << max_err
     << ", " << elapsed << " s";
  report(3, pass, os.str());
}

// ---------------------------------------------------------------- criterion 4

ModelConfig gradcheck_config() {
  ModelConfig cfg;
  cfg.stage_channels = {4, 8};
  cfg.blocks_per_stage = {1, 1};
  cfg.stage_dilations = {1, 2};
  cfg.cbam_reduction = 2;
  cfg.input_w = cfg.input_h = 32;
  return cfg;
}

void criterion_4_gradient_check() {
  const auto t0 = std::chrono::steady_clock::now();
  using DGraph = GraphT<double>;

  CbamdrnModelT<double> model = make_model<double>(gradcheck_config(), WindowMode::DWL, 42);
  const std::size_t n_params = model.params.trainable_scalars();

  Rng rng(7);
  std::vector<TensorT<double>> inputs(2, TensorT<double>({2, 1, 32, 32}));
  for (auto& t : inputs)
    for (double& v : t.data) v = rng.uniform(-1.0, 1.0);
  const std::vector<int> targets{0, 1};

  auto forward = [&]() {
    DGraph g;
    auto taps = classify(g, model, inputs, ops::BnMode::Train);
    auto loss = g.softmax_cross_entropy(taps.logits, targets, std::nullopt);
    return std::pair<DGraph, DGraph::Id>(std::move(g), loss);
  };
  model.params.zero_grad();
  {
    auto [g, loss] = forward();
    g.backward(loss);
  }

  // The loss is only piecewise smooth (relu, max pooling); at h = 1e-3 the
  // central-difference interval regularly crosses kinks, so the check runs
  // at h = 1e-5 where the 64-bit oracle is valid to ~1e-9.
  const double h = 1e-5;
  double max_rel = 0.0;
  std::size_t checked = 0, failed = 0;
  for (std::size_t pi = 0; pi < model.params.size(); ++pi) {
    auto& p = model.params.at(pi);
    if (!p.trainable) continue;
    for (std::size_t i = 0; i < p.value.numel(); ++i) {
      const double orig = p.value.data[i];
      p.value.data[i] = orig + h;
      auto [gp, lp] = forward();
      p.value.data[i] = orig - h;
      auto [gm, lm] = forward();
      p.value.data[i] = orig;
      const double numeric = (gp.value(lp).data[0] - gm.value(lm).data[0]) / (2.0 * h);
      const double analytic = p.grad.data[i];
      const double rel = std::fabs(analytic - numeric) /
                         std::max({std::fabs(analytic), std::fabs(numeric), 1e-6});
      max_rel = std::max(max_rel, rel);
      ++checked;
      if (rel >= 1e-4) ++failed;
    }
  }
  const double elapsed = seconds_since(t0);
  const bool pass = n_params <= 5000 && failed == 0 && elapsed < 300.0;
  std::ostringstream os;
  os << "gradient check (DWL, 32x32, 64-bit): " << checked << " of " << n_params
     << " params, max rel err = " << max_rel << " (tol 1e-4), " << elapsed << " s";
  report(4, pass, os.str());
}

// ---------------------------------------------------------------- criterion 5

void criterion_5_dynamic_crop() {
  const PreprocessConfig cfg;
  int covered_ok = 0, fallbacks = 0;
  double max_ms = 0.0;
  const int n = 200;
  for (int i = 0; i < n; ++i) {
    PhantomSpec spec;
    spec.seed = 5000 + static_cast<std::uint64_t>(i);
    spec.label = i % 3 == 0 ? SliceLabel::WNL
                            : (i % 3 == 1 ? SliceLabel::OtherDisease : SliceLabel::PE);
    const PhantomSlice ph = generate_phantom_slice(spec);

    const auto t0 = std::chrono::steady_clock::now();
    const PreprocessedSlice pre =
        preprocess_slice(ph.image, cfg, {WindowName::Vascular, WindowName::Lung});
    max_ms = std::max(max_ms, seconds_since(t0) * 1000.0);

    if (pre.used_fallback) {
      ++fallbacks;
      continue;
    }
    std::size_t total = 0, covered = 0;
    for (int y = 0; y < 512; ++y)
      for (int x = 0; x < 512; ++x) {
        if (!ph.truth.lung.at(x, y)) continue;
        ++total;
        if (pre.box.contains(x - 56, y - 56)) ++covered;
      }
    if (total > 0 && static_cast<double>(covered) / static_cast<double>(total) >= 0.99)
      ++covered_ok;
  }
  const bool pass = fallbacks == 0 && covered_ok >= static_cast<int>(0.99 * n) && max_ms < 50.0;
  std::ostringstream os;
  os << "dynamic crop: " << covered_ok << "/" << n << " slices cover >=99% of lung, "
     << fallbacks << " fallbacks, max " << max_ms << " ms/slice";
  report(5, pass, os.str());
}

// ---------------------------------------------------------------- criterion 6

struct LabeledSample {
  std::string patient_id;
  SliceLabel truth = SliceLabel::WNL;
  std::vector<WindowedImage> images;  // vascular + lung at 224
};

struct DeskRun {
  CbamdrnModel stage1{};
  CbamdrnModel stage2{};
  std::vector<LabeledSample> test_slices;
  std::string metrics_text;
  double stage1_acc = 0.0;
  double stage2_acc = 0.0;
  int patients_correct = 0;
  int patients_total = 0;
};

std::vector<std::pair<std::string, SliceLabel>> desk_cohort(int pe, int other, int wnl,
                                                            const char* suffix) {
  std::vector<std::pair<std::string, SliceLabel>> out;
  for (int i = 0; i < pe; ++i)
    out.push_back({"PE" + std::to_string(i) + suffix, SliceLabel::PE});
  for (int i = 0; i < other; ++i)
    out.push_back({"OT" + std::to_string(i) + suffix, SliceLabel::OtherDisease});
  for (int i = 0; i < wnl; ++i)
    out.push_back({"NW" + std::to_string(i) + suffix, SliceLabel::WNL});
  return out;
}

TrainSample to_train_sample(const LabeledSample& s, int label) {
  TrainSample out;
  out.label = label;
  out.windows = to_input_tensors<float>(s.images);
  return out;
}

DeskRun run_desk_learning(std::uint64_t master_seed) {
  const PreprocessConfig pre_cfg;
  const int slices_per_patient = 8;

  // 40 training-side patients (30 TRAIN / 10 VAL) mirroring the PE < WNL <
  // other imbalance direction, plus 8 held-out test patients.
  auto cohort = desk_cohort(10, 20, 10, "");
  auto test_cohort_v = desk_cohort(2, 4, 2, "t");

  Rng seed_rng(master_seed);
  auto generate = [&](const std::vector<std::pair<std::string, SliceLabel>>& patients) {
    std::vector<LabeledSample> samples;
    for (const auto& [pid, label] : patients) {
      const PhantomPatient patient =
          generate_patient(seed_rng.next_u64(), label, slices_per_patient);
      for (int i = 0; i < slices_per_patient; ++i) {
        LabeledSample s;
        s.patient_id = pid;
        s.truth = patient.slice_labels[static_cast<std::size_t>(i)];
        s.images = preprocess_slice(patient.slices[static_cast<std::size_t>(i)].image, pre_cfg,
                                    {WindowName::Vascular, WindowName::Lung})
                       .images;
        samples.push_back(std::move(s));
      }
    }
    return samples;
  };
  const std::vector<LabeledSample> train_side = generate(cohort);
  std::vector<LabeledSample> test_side = generate(test_cohort_v);

  // Patient-level TRAIN/VAL carve-out inside the 40 training patients.
  std::map<std::string, bool> is_val;
  {
    std::vector<std::string> ids;
    for (const auto& [pid, label] : cohort) ids.push_back(pid);
    Rng rng(master_seed ^ 0x5eedULL);
    rng.shuffle(ids);
    for (std::size_t i = 0; i < ids.size(); ++i) is_val[ids[i]] = i < 10;
  }

  auto stage_sets = [&](int stage) {
    std::vector<TrainSample> train, val;
    for (const LabeledSample& s : train_side) {
      int label;
      if (stage == 1) {
        label = s.truth == SliceLabel::WNL ? 0 : 1;
      } else {
        if (s.truth == SliceLabel::WNL) continue;
        label = s.truth == SliceLabel::PE ? 1 : 0;
      }
      (is_val[s.patient_id] ? val : train).push_back(to_train_sample(s, label));
    }
    return std::pair(train, val);
  };

  DeskRun run;
  TrainConfig tc;
  tc.epochs = 6;
  tc.batch_size = 8;
  tc.lr = 1e-3f;
  tc.seed = master_seed;

  {
    auto [train_set, val_set] = stage_sets(1);
    run.stage1 = make_model<float>(ModelConfig{}, WindowMode::DWL, master_seed + 1);
    train(run.stage1, train_set, val_set, tc);
  }
  {
    auto [train_set, val_set] = stage_sets(2);
    TrainConfig tc2 = tc;
    tc2.epochs = 10;  // fewer disease slices per epoch
    run.stage2 = make_model<float>(ModelConfig{}, WindowMode::DWL, master_seed + 2);
    train(run.stage2, train_set, val_set, tc2);
  }

  // Held-out per-slice accuracy per stage.
  {
    std::vector<TrainSample> s1;
    for (const LabeledSample& s : test_side)
      s1.push_back(to_train_sample(s, s.truth == SliceLabel::WNL ? 0 : 1));
    run.stage1_acc = evaluate(run.stage1, s1).accuracy();

    std::vector<TrainSample> s2;
    for (const LabeledSample& s : test_side) {
      if (s.truth == SliceLabel::WNL) continue;
      s2.push_back(to_train_sample(s, s.truth == SliceLabel::PE ? 1 : 0));
    }
    run.stage2_acc = evaluate(run.stage2, s2).accuracy();
  }

  // Full two-stage triage per test patient, OR-aggregated.
  std::map<std::string, std::vector<SlicePrediction>> per_patient;
  std::map<std::string, SliceLabel> patient_truth;
  std::ostringstream metrics;
  for (const LabeledSample& s : test_side) {
    SlicePrediction pred = triage_slice(s.images, run.stage1, run.stage2, s.patient_id);
    per_patient[s.patient_id].push_back(std::move(pred));
    auto [it, inserted] = patient_truth.try_emplace(s.patient_id, s.truth);
    if (!inserted && static_cast<int>(s.truth) > static_cast<int>(it->second))
      it->second = s.truth;
  }
  for (auto& [pid, preds] : per_patient) {
    const PatientTriage t = triage_patient(pid, std::move(preds));
    ++run.patients_total;
    if (t.final == patient_truth[pid]) ++run.patients_correct;
    metrics << pid << "=" << label_str(t.final) << "/" << label_str(patient_truth[pid]) << ";";
  }
  metrics << " stage1_acc=" << run.stage1_acc << " stage2_acc=" << run.stage2_acc;
  run.metrics_text = metrics.str();
  run.test_slices = std::move(test_side);
  return run;
}

DeskRun g_desk_run;  // shared with criteria 8 and 10

void criterion_6_desk_learning() {
  const auto t0 = std::chrono::steady_clock::now();
  g_desk_run = run_desk_learning(2026);
  const double elapsed = seconds_since(t0);
  const bool pass = g_desk_run.stage1_acc >= 0.95 && g_desk_run.stage2_acc >= 0.95 &&
                    g_desk_run.patients_correct == 8 && g_desk_run.patients_total == 8 &&
                    elapsed < 1200.0;
  std::ostringstream os;
  os << "desk-scale learning: stage1 " << g_desk_run.stage1_acc * 100 << "%, stage2 "
     << g_desk_run.stage2_acc * 100 << "%, patients " << g_desk_run.patients_correct << "/"
     << g_desk_run.patients_total << ", " << elapsed << " s";
  report(6, pass, os.str());
}

// ---------------------------------------------------------------- criterion 7

void criterion_7_aggregation() {
  const auto t0 = std::chrono::steady_clock::now();
  long total = 0, mismatches = 0;
  for (int k = 1; k <= 10; ++k) {
    long patterns = 1;
    for (int i = 0; i < k; ++i) patterns *= 3;
    for (long code = 0; code < patterns; ++code) {
      long c = code;
      std::vector<SliceLabel> labels;
      std::vector<SlicePrediction> preds;
      for (int i = 0; i < k; ++i) {
        const auto l = static_cast<SliceLabel>(c % 3);
        c /= 3;
        labels.push_back(l);
        SlicePrediction p;
        if (l == SliceLabel::WNL) {
          p.stage1 = 0;
        } else {
          p.stage1 = 1;
          p.stage2 = l == SliceLabel::PE ? 1 : 0;
        }
        preds.push_back(std::move(p));
      }
      bool any_pe = false, any_disease = false;
      for (SliceLabel l : labels) {
        any_pe = any_pe || l == SliceLabel::PE;
        any_disease = any_disease || l != SliceLabel::WNL;
      }
      const SliceLabel expect =
          any_pe ? SliceLabel::PE
                 : (any_disease ? SliceLabel::OtherDisease : SliceLabel::WNL);
      ++total;
      if (triage_patient("p", std::move(preds)).final != expect) ++mismatches;
    }
  }
  const double elapsed = seconds_since(t0);
  const bool pass = mismatches == 0 && elapsed < 10.0;
  std::ostringstream os;
  os << "aggregation oracle: " << total << " exhaustive patterns (k<=10), " << mismatches
     << " mismatches, " << elapsed << " s";
  report(7, pass, os.str());
}

// ---------------------------------------------------------------- criterion 8

void criterion_8_gradcam() {
  bool normalized_ok = true;

  // (a) 50 phantom inferences: nonnegative, max-normalized.
  {
    const PreprocessConfig pre_cfg;
    for (int i = 0; i < 50; ++i) {
      PhantomSpec spec;
      spec.seed = 8800 + static_cast<std::uint64_t>(i);
      spec.label = i % 2 ? SliceLabel::PE : SliceLabel::OtherDisease;
      const PhantomSlice ph = generate_phantom_slice(spec);
      const PreprocessedSlice pre =
          preprocess_slice(ph.image, pre_cfg, {WindowName::Vascular, WindowName::Lung});
      const auto inputs = select_inputs(pre.images, g_desk_run.stage2);
      const auto maps = grad_cam(g_desk_run.stage2, inputs, 1, "final");
      for (const GradCamMap& m : maps) {
        float mx = 0.0f;
        for (float v : m.values) {
          if (v < 0.0f) normalized_ok = false;
          mx = std::max(mx, v);
        }
        if (!(std::fabs(mx - 1.0f) < 1e-6f || mx == 0.0f)) normalized_ok = false;
      }
    }
  }

  // (b) toy closed-form case.
  bool toy_ok = true;
  {
    Tensor acts({1, 2, 2, 2});
    acts.data = {1.0f, 2.0f, 3.0f, 4.0f, 2.0f, 0.0f, -1.0f, 1.0f};
    Tensor grads({1, 2, 2, 2});
    grads.data = {0.1f, 0.1f, 0.1f, 0.1f, -0.2f, -0.2f, -0.2f, -0.2f};
    const GradCamMap map = compute_cam(acts, grads, 2, 2);
    const float expect[4] = {0.0f, 0.4f, 1.0f, 0.4f};
    for (int i = 0; i < 4; ++i)
      if (std::fabs(map.values[static_cast<std::size_t>(i)] - expect[i]) > 1e-6f)
        toy_ok = false;
  }

  // (c) localization: over correctly-classified PE phantoms, the map's
  // center of mass falls inside the lesion box dilated by 16 px.
  int classified = 0, localized = 0;
  {
    const PreprocessConfig pre_cfg;
    for (int i = 0; i < 40; ++i) {
      PhantomSpec spec;
      spec.seed = 9900 + static_cast<std::uint64_t>(i);
      spec.label = SliceLabel::PE;
      const PhantomSlice ph = generate_phantom_slice(spec);
      const PreprocessedSlice pre =
          preprocess_slice(ph.image, pre_cfg, {WindowName::Vascular, WindowName::Lung});
      if (pre.used_fallback) continue;
      const auto inputs = select_inputs(pre.images, g_desk_run.stage2);
      const Tensor logits = infer_logits(g_desk_run.stage2, inputs);
      if (predict_binary(logits.data.data()) != 1) continue;  // not classified PE
      ++classified;

      // Lesion bounding box in 512-space -> 224-space through the crop chain.
      int x0 = 512, y0 = 512, x1 = 0, y1 = 0;
      for (int y = 0; y < 512; ++y)
        for (int x = 0; x < 512; ++x)
          if (ph.truth.lesion.at(x, y)) {
            x0 = std::min(x0, x);
            y0 = std::min(y0, y);
            x1 = std::max(x1, x);
            y1 = std::max(y1, y);
          }
      const double sx = 223.0 / (pre.box.width() - 1);
      const double sy = 223.0 / (pre.box.height() - 1);
      const double bx0 = (x0 - 56 - pre.box.x0) * sx - 16.0;
      const double bx1 = (x1 - 56 - pre.box.x0) * sx + 16.0;
      const double by0 = (y0 - 56 - pre.box.y0) * sy - 16.0;
      const double by1 = (y1 - 56 - pre.box.y0) * sy + 16.0;

      const auto maps = grad_cam(g_desk_run.stage2, inputs, 1, "final");
      bool inside_any = false;
      for (const GradCamMap& m : maps) {
        const Point2f com = center_of_mass(m);
        if (com.x >= bx0 && com.x <= bx1 && com.y >= by0 && com.y <= by1) inside_any = true;
      }
      if (inside_any) ++localized;
    }
  }
  const bool localization_ok =
      classified > 0 && static_cast<double>(localized) / classified >= 0.80;
  const bool pass = normalized_ok && toy_ok && localization_ok;
  std::ostringstream os;
  os << "grad-cam: normalization " << (normalized_ok ? "ok" : "BAD") << ", toy case "
     << (toy_ok ? "ok" : "BAD") << ", localization " << localized << "/" << classified;
  report(8, pass, os.str());
}

// ---------------------------------------------------------------- criterion 9

void criterion_9_dicom_round_trip() {
  const auto t0 = std::chrono::steady_clock::now();
  bool exact = true;
  Rng rng(1926);
  std::vector<std::uint8_t> sample;
  for (int i = 0; i < 100; ++i) {
    PhantomSpec spec;
    spec.seed = 7000 + static_cast<std::uint64_t>(i);
    spec.label = static_cast<SliceLabel>(i % 3);
    spec.width = spec.height = 128;  // round trip covers the format, not scale
    const PhantomSlice ph = generate_phantom_slice(spec);
    const auto bytes = encode_dicom(ph.image, {"P" + std::to_string(i), "S", i});
    const HuSlice back = to_hu(parse_dicom(bytes));
    if (back.hu != ph.image.hu) exact = false;
    if (i == 0) sample = bytes;
  }

  long typed_errors = 0, clean_parses = 0;
  for (int i = 0; i < 1000; ++i) {
    std::vector<std::uint8_t> bytes = sample;
    if (i % 2 == 0) {
      bytes.resize(rng.below(bytes.size()));
    } else {
      for (int k = 0; k < 12; ++k)
        bytes[rng.below(bytes.size())] = static_cast<std::uint8_t>(rng.below(256));
    }
    try {
      (void)parse_dicom(bytes);
      ++clean_parses;
    } catch (const DicomError&) {
      ++typed_errors;
    }
    // anything else escapes and fails the whole suite
  }
  const double elapsed = seconds_since(t0);
  const bool pass = exact && typed_errors + clean_parses == 1000 && elapsed < 30.0;
  std::ostringstream os;
  os << "dicom round trip: 100 exact, fuzz " << typed_errors << " typed errors + "
     << clean_parses << " benign parses, " << elapsed << " s";
  report(9, pass, os.str());
}

// --------------------------------------------------------------- criterion 10

std::string weights_bytes(const ParamStore& store) {
  const fs::path tmp = fs::temp_directory_path() / "ctt_acceptance_weights.ctw";
  save_weights(store, tmp.string());
  std::ifstream in(tmp, std::ios::binary);
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  fs::remove(tmp);
  return bytes;
}

void criterion_10_determinism() {
  const auto t0 = std::chrono::steady_clock::now();
  DeskRun repeat = run_desk_learning(2026);
  const bool weights_equal =
      weights_bytes(repeat.stage1.params) == weights_bytes(g_desk_run.stage1.params) &&
      weights_bytes(repeat.stage2.params) == weights_bytes(g_desk_run.stage2.params);
  const bool metrics_equal = repeat.metrics_text == g_desk_run.metrics_text;
  const double elapsed = seconds_since(t0);
  std::ostringstream os;
  os << "determinism: weights " << (weights_equal ? "bit-identical" : "DIFFER") << ", metrics "
     << (metrics_equal ? "identical" : "DIFFER") << ", " << elapsed << " s";
  report(10, weights_equal && metrics_equal, os.str());
}

}  // namespace

int main() {
  std::printf("acceptance suite\n");
  criterion_1_metric_formulas();
  criterion_2_windowing();
  criterion_3_dilated_conv();
  criterion_4_gradient_check();
  criterion_5_dynamic_crop();
  criterion_6_desk_learning();
  criterion_7_aggregation();
  criterion_8_gradcam();
  criterion_9_dicom_round_trip();
  criterion_10_determinism();
  std::printf("%d of 10 criteria failed\n", g_failures);
  return g_failures;
}
