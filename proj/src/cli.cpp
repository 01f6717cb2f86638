#include "ctt/cli.hpp"

#include <atomic>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <thread>

#include <CLI11.hpp>
#include <json.hpp>

#include "ctt/config.hpp"
#include "ctt/dicom.hpp"
#include "ctt/gradcam.hpp"
#include "ctt/phantom.hpp"
#include "ctt/png_io.hpp"
#include "ctt/preprocess.hpp"
#include "ctt/rng.hpp"
#include "ctt/train.hpp"
#include "ctt/triage.hpp"
#include "ctt/weights_io.hpp"

namespace fs = std::filesystem;

namespace ctt {

namespace {

// Runs fn(i) for i in [0, n) on `jobs` workers. Results must be written into
// preallocated per-index slots, so output order never depends on scheduling.
void parallel_for(std::size_t n, int jobs, const std::function<void(std::size_t)>& fn) {
  if (jobs <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> workers;
  const int count = std::min<int>(jobs, static_cast<int>(n));
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(count));
  for (int w = 0; w < count; ++w)
    workers.emplace_back([&, w] {
      try {
        for (std::size_t i = next.fetch_add(1); i < n; i = next.fetch_add(1)) fn(i);
      } catch (...) {
        errors[static_cast<std::size_t>(w)] = std::current_exception();
      }
    });
  for (auto& t : workers) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

std::vector<WindowName> parse_window_list(const std::string& csv) {
  std::vector<WindowName> out;
  std::istringstream is(csv);
  std::string item;
  while (std::getline(is, item, ',')) {
    if (item == "vascular")
      out.push_back(WindowName::Vascular);
    else if (item == "mediastinum")
      out.push_back(WindowName::Mediastinum);
    else if (item == "lung")
      out.push_back(WindowName::Lung);
    else
      throw ConfigError("unknown window name: " + item);
  }
  if (out.empty()) throw ConfigError("empty window list");
  return out;
}

struct StageSample {
  std::string patient_id;
  std::string path;
  int label = 0;  // stage-relative binary label
};

// Stage-specific relabeling of the three-class manifest. Stage 1 keeps every
// row (WNL=0, diseased=1); stage 2 keeps only diseased rows (OTHER=0, PE=1).
std::vector<std::pair<ManifestRow, int>> stage_rows(const std::vector<ManifestRow>& rows,
                                                    int stage, Split split) {
  std::vector<std::pair<ManifestRow, int>> out;
  for (const ManifestRow& r : rows) {
    if (r.split != split) continue;
    if (stage == 1) {
      out.push_back({r, r.label == SliceLabel::WNL ? 0 : 1});
    } else {
      if (r.label == SliceLabel::WNL) continue;
      out.push_back({r, r.label == SliceLabel::PE ? 1 : 0});
    }
  }
  return out;
}

// Loads, converts, and preprocesses the referenced slices in parallel.
std::vector<TrainSample> load_samples(const std::vector<std::pair<ManifestRow, int>>& rows,
                                      const RunConfig& cfg,
                                      const std::vector<WindowName>& windows) {
  std::vector<TrainSample> samples(rows.size());
  parallel_for(rows.size(), cfg.jobs, [&](std::size_t i) {
    const HuSlice hu = to_hu(parse_dicom(read_file_bytes(rows[i].first.path)));
    const PreprocessedSlice pre = preprocess_slice(hu, cfg.preprocess, windows);
    samples[i].windows = to_input_tensors<float>(pre.images);
    samples[i].label = rows[i].second;
  });
  return samples;
}

CbamdrnModel load_model(const std::string& weights_path) {
  const auto [cfg, mode] = load_model_config(weights_path + ".cfg");
  CbamdrnModel model = make_model<float>(cfg, mode, 0);
  bind_weights(load_weights(weights_path), model.params);
  return model;
}

int cmd_phantom_gen(const std::string& out_dir, int n_pe, int n_other, int n_wnl,
                    int slices_per_patient, std::uint64_t seed, int image_size) {
  fs::create_directories(out_dir);
  Rng rng(seed);

  std::vector<std::pair<std::string, SliceLabel>> patients;
  auto add_patients = [&](SliceLabel label, const char* prefix, int n) {
    for (int i = 0; i < n; ++i) {
      char id[32];
      std::snprintf(id, sizeof(id), "%s%03d", prefix, i);
      patients.push_back({id, label});
    }
  };
  add_patients(SliceLabel::PE, "PE", n_pe);
  add_patients(SliceLabel::OtherDisease, "OTH", n_other);
  add_patients(SliceLabel::WNL, "WNL", n_wnl);
  if (patients.empty()) throw ConfigError("no patients requested");

  const auto splits = split_dataset(patients, {}, seed);

  std::vector<ManifestRow> manifest;
  for (const auto& [pid, label] : patients) {
    const std::uint64_t patient_seed = rng.next_u64();
    const PhantomPatient patient =
        generate_patient(patient_seed, label, slices_per_patient, image_size, image_size);
    const fs::path dir = fs::path(out_dir) / pid;
    fs::create_directories(dir);
    for (int i = 0; i < slices_per_patient; ++i) {
      char name[32];
      std::snprintf(name, sizeof(name), "s%04d.dcm", i);
      const std::string path = (dir / name).string();
      write_dicom(patient.slices[static_cast<std::size_t>(i)].image,
                  {pid, pid + ".series", i}, path);
      write_ground_truth(patient.slices[static_cast<std::size_t>(i)].truth, path + ".gt.txt");
      manifest.push_back({path, pid, patient.slice_labels[static_cast<std::size_t>(i)],
                          splits.at(pid)});
    }
  }
  const std::string manifest_path = (fs::path(out_dir) / "manifest.tsv").string();
  write_manifest(manifest, manifest_path);
  std::cout << "wrote " << manifest.size() << " slices for " << patients.size()
            << " patients; manifest: " << manifest_path << "\n";
  return 0;
}

int cmd_preprocess(const std::string& manifest_path, const std::string& out_dir,
                   const RunConfig& cfg, const std::vector<WindowName>& windows) {
  const auto rows = read_manifest(manifest_path);
  if (rows.empty()) throw TriageError(TriageError::Kind::EmptyInput, "manifest has no rows");
  fs::create_directories(out_dir);

  struct Result {
    CropBox box;
    bool fallback = false;
    std::vector<WindowedImage> images;
  };
  std::vector<Result> results(rows.size());
  parallel_for(rows.size(), cfg.jobs, [&](std::size_t i) {
    const HuSlice hu = to_hu(parse_dicom(read_file_bytes(rows[i].path)));
    PreprocessedSlice pre = preprocess_slice(hu, cfg.preprocess, windows);
    results[i] = {pre.box, pre.used_fallback, std::move(pre.images)};
  });

  std::ofstream report(fs::path(out_dir) / "crop_boxes.tsv");
  report << "path\tx0\ty0\tx1\ty1\tused_fallback\n";
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const Result& r = results[i];
    report << rows[i].path << '\t' << r.box.x0 << '\t' << r.box.y0 << '\t' << r.box.x1 << '\t'
           << r.box.y1 << '\t' << (r.fallback ? 1 : 0) << '\n';
    const std::string stem = fs::path(rows[i].path).stem().string();
    for (const WindowedImage& img : r.images) {
      const std::string png = (fs::path(out_dir) / (rows[i].patient_id + "_" + stem + "_" +
                                                    window_name_str(img.window) + ".png"))
                                  .string();
      write_png_gray(png, img.width, img.height, img.values);
    }
  }
  std::cout << "preprocessed " << rows.size() << " slices into " << out_dir << "\n";
  return 0;
}

int cmd_train(int stage, const std::string& manifest_path, const std::string& out_weights,
              const RunConfig& cfg) {
  const auto rows = read_manifest(manifest_path);
  const auto windows = windows_for_mode(cfg.window_mode);
  const auto train_rows = stage_rows(rows, stage, Split::Train);
  const auto val_rows = stage_rows(rows, stage, Split::Val);
  if (train_rows.empty())
    throw TrainError(TrainError::Kind::EmptyDataset,
                     "no TRAIN rows for stage " + std::to_string(stage));

  ModelConfig model_cfg = cfg.model;
  model_cfg.input_w = cfg.preprocess.model_input_w;
  model_cfg.input_h = cfg.preprocess.model_input_h;
  CbamdrnModel model = make_model<float>(model_cfg, cfg.window_mode, cfg.train.seed);

  const auto train_set = load_samples(train_rows, cfg, windows);
  const auto val_set = load_samples(val_rows, cfg, windows);
  const TrainHistory history = train(model, train_set, val_set, cfg.train);

  const fs::path parent = fs::path(out_weights).parent_path();
  if (!parent.empty()) fs::create_directories(parent);
  save_weights(model.params, out_weights);
  save_model_config(model_cfg, cfg.window_mode, out_weights + ".cfg");

  nlohmann::json j;
  j["stage"] = stage;
  j["best_epoch"] = history.best_epoch;
  j["best_val_accuracy"] = history.best_val_accuracy;
  for (const EpochStats& e : history.epochs)
    j["epochs"].push_back({{"train_loss", e.train_loss},
                           {"train_accuracy", e.train_accuracy},
                           {"val_accuracy", e.val_accuracy}});
  std::ofstream hist(out_weights + ".history.json");
  hist << j.dump(2) << "\n";

  std::cout << "stage " << stage << ": trained on " << train_set.size() << " slices, best val "
            << history.best_val_accuracy << " (epoch " << history.best_epoch + 1 << "), weights: "
            << out_weights << "\n";
  return 0;
}

nlohmann::json report_to_json_obj(const MetricsReport& r) {
  return nlohmann::json::parse(r.to_json());
}

int cmd_eval(int stage, const std::string& manifest_path, const std::string& weights_path,
             Split split, const RunConfig& cfg, const std::string& out_path) {
  const auto rows = read_manifest(manifest_path);
  const auto eval_rows = stage_rows(rows, stage, split);
  if (eval_rows.empty())
    throw TriageError(TriageError::Kind::EmptyInput,
                      "no rows for stage " + std::to_string(stage) + " in the requested split");

  CbamdrnModel model = load_model(weights_path);
  RunConfig run = cfg;  // the weights pin the network input geometry
  run.preprocess.model_input_w = model.config.input_w;
  run.preprocess.model_input_h = model.config.input_h;
  const auto samples = load_samples(eval_rows, run, windows_for_mode(model.mode));

  std::vector<int> preds, truths;
  std::vector<std::string> patient_ids;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const Tensor logits = infer_logits(model, samples[i].windows);
    preds.push_back(predict_binary(logits.data.data()));
    truths.push_back(samples[i].label);
    patient_ids.push_back(eval_rows[i].first.patient_id);
  }

  const std::vector<std::string> class_names =
      stage == 1 ? std::vector<std::string>{"WNL", "Disease"}
                 : std::vector<std::string>{"OtherDisease", "PE"};
  nlohmann::json j;
  j["stage"] = stage;
  j["split"] = split_str(split);
  j["per_slice"] = report_to_json_obj(compute_metrics(preds, truths, class_names));
  j["per_patient"] =
      report_to_json_obj(compute_patient_metrics(patient_ids, preds, truths, class_names));
  const std::string text = j.dump(2);
  if (out_path.empty()) {
    std::cout << text << "\n";
  } else {
    std::ofstream out(out_path);
    out << text << "\n";
    std::cout << "metrics written to " << out_path << "\n";
  }
  return 0;
}

int cmd_triage(const std::string& dicom_dir, const std::string& stage1_weights,
               const std::string& stage2_weights, const std::string& out_dir, bool explain,
               const RunConfig& cfg) {
  std::vector<std::string> files;
  for (const auto& entry : fs::recursive_directory_iterator(dicom_dir))
    if (entry.is_regular_file() && entry.path().extension() == ".dcm")
      files.push_back(entry.path().string());
  std::sort(files.begin(), files.end());
  if (files.empty())
    throw TriageError(TriageError::Kind::EmptyInput, "no .dcm files under " + dicom_dir);

  // Parse everything up front; report every unreadable file, then fail.
  struct Parsed {
    std::string path;
    DicomSlice slice;
  };
  std::vector<Parsed> parsed(files.size());
  std::vector<std::string> failures(files.size());
  parallel_for(files.size(), cfg.jobs, [&](std::size_t i) {
    try {
      parsed[i] = {files[i], parse_dicom(read_file_bytes(files[i]))};
    } catch (const DicomError& e) {
      failures[i] = e.what();
    }
  });
  bool any_failed = false;
  for (std::size_t i = 0; i < files.size(); ++i)
    if (!failures[i].empty()) {
      any_failed = true;
      std::cerr << files[i] << ": " << failures[i] << "\n";
    }
  if (any_failed) throw DicomError(DicomError::Kind::Truncated, "unreadable DICOM files");

  CbamdrnModel stage1 = load_model(stage1_weights);
  CbamdrnModel stage2 = load_model(stage2_weights);
  if (stage1.config.input_w != stage2.config.input_w ||
      stage1.config.input_h != stage2.config.input_h)
    throw ModelError(ModelError::Kind::BadConfig,
                     "stage models disagree on input size");
  RunConfig run = cfg;  // the weights pin the network input geometry
  run.preprocess.model_input_w = stage1.config.input_w;
  run.preprocess.model_input_h = stage1.config.input_h;
  // One preprocessing pass covers both models' window sets.
  std::vector<WindowName> needed;
  for (WindowName w :
       {WindowName::Vascular, WindowName::Mediastinum, WindowName::Lung}) {
    const auto s1 = windows_for_mode(stage1.mode);
    const auto s2 = windows_for_mode(stage2.mode);
    if (std::find(s1.begin(), s1.end(), w) != s1.end() ||
        std::find(s2.begin(), s2.end(), w) != s2.end())
      needed.push_back(w);
  }

  std::map<std::string, std::vector<const Parsed*>> by_patient;
  for (const Parsed& p : parsed) by_patient[p.slice.patient_id].push_back(&p);

  fs::create_directories(out_dir);
  std::ofstream verdicts(fs::path(out_dir) / "verdicts.tsv");
  verdicts << "patient_id\tverdict\tn_slices\tn_pe_slices\n";

  // Patients run in parallel; each worker uses private graphs over the
  // shared frozen weights. Output order follows the sorted patient ids.
  std::vector<std::string> patient_ids;
  for (const auto& [pid, slices] : by_patient) patient_ids.push_back(pid);
  struct PatientResult {
    PatientTriage triage;
    std::vector<std::pair<std::string, std::vector<WindowedImage>>> pe_slices;
  };
  std::vector<PatientResult> results(patient_ids.size());
  parallel_for(patient_ids.size(), cfg.jobs, [&](std::size_t pi) {
    const auto& slices = by_patient[patient_ids[pi]];
    std::vector<const Parsed*> ordered(slices.begin(), slices.end());
    std::sort(ordered.begin(), ordered.end(), [](const Parsed* a, const Parsed* b) {
      return a->slice.instance_number < b->slice.instance_number;
    });
    std::vector<SlicePrediction> preds;
    for (const Parsed* p : ordered) {
      const PreprocessedSlice pre =
          preprocess_slice(to_hu(p->slice), run.preprocess, needed);
      SlicePrediction sp = triage_slice(pre.images, stage1, stage2, p->path);
      if (sp.final_label() == SliceLabel::PE && explain)
        results[pi].pe_slices.push_back({p->path, pre.images});
      preds.push_back(std::move(sp));
    }
    results[pi].triage = triage_patient(patient_ids[pi], std::move(preds));
  });

  for (std::size_t pi = 0; pi < patient_ids.size(); ++pi) {
    const PatientTriage& t = results[pi].triage;
    long pe_count = 0;
    for (const SlicePrediction& p : t.slices)
      pe_count += p.final_label() == SliceLabel::PE;
    verdicts << t.patient_id << '\t' << label_str(t.final) << '\t' << t.slices.size() << '\t'
             << pe_count << '\n';
    if (explain) {
      for (const auto& [path, images] : results[pi].pe_slices) {
        const auto inputs = select_inputs(images, stage2);
        const auto maps = grad_cam(stage2, inputs, 1, "final");
        const std::string stem = fs::path(path).stem().string();
        for (std::size_t m = 0; m < maps.size(); ++m) {
          const WindowedImage* base = nullptr;
          for (const WindowedImage& img : images)
            if (img.window == maps[m].window) base = &img;
          const RgbImage rgb = overlay(maps[m], *base);
          const std::string png =
              (fs::path(out_dir) / (t.patient_id + "_" + stem + "_" +
                                    window_name_str(maps[m].window) + "_cam.png"))
                  .string();
          write_png_rgb(png, rgb.width, rgb.height, rgb.rgb);
        }
      }
    }
  }
  std::cout << "triaged " << patient_ids.size() << " patients into " << out_dir << "\n";
  return 0;
}

int cmd_explain(const std::string& dicom_path, const std::string& weights_path, int class_idx,
                const std::string& layer, const std::string& out_dir, const RunConfig& cfg) {
  CbamdrnModel model = load_model(weights_path);
  RunConfig run = cfg;  // the weights pin the network input geometry
  run.preprocess.model_input_w = model.config.input_w;
  run.preprocess.model_input_h = model.config.input_h;
  const HuSlice hu = to_hu(parse_dicom(read_file_bytes(dicom_path)));
  const PreprocessedSlice pre =
      preprocess_slice(hu, run.preprocess, windows_for_mode(model.mode));
  const auto inputs = select_inputs(pre.images, model);
  const auto maps = grad_cam(model, inputs, class_idx, layer);

  fs::create_directories(out_dir);
  const std::string stem = fs::path(dicom_path).stem().string();
  for (const GradCamMap& map : maps) {
    const WindowedImage* base = nullptr;
    for (const WindowedImage& img : pre.images)
      if (img.window == map.window) base = &img;
    const RgbImage rgb = overlay(map, *base);
    const std::string prefix =
        (fs::path(out_dir) / (stem + "_" + window_name_str(map.window))).string();
    write_png_rgb(prefix + "_cam.png", rgb.width, rgb.height, rgb.rgb);
    write_map(map, prefix + "_cam.bin");
  }
  std::cout << "wrote " << maps.size() << " overlays to " << out_dir << "\n";
  return 0;
}

}  // namespace

int run_cli(int argc, const char* const* argv) {
  CLI::App app{"Two-stage chest-CT triage pipeline (phantom data, CBAMDRN classifier)"};
  app.require_subcommand(1);

  RunConfig cfg;
  std::string config_file;
  std::vector<std::string> overrides;
  app.add_option("--config", config_file, "Key/value config file");
  app.add_option("--set", overrides, "Override a config key, e.g. --set train.epochs=4")
      ->expected(-1);
  app.add_option("--jobs", cfg.jobs, "Worker threads for preprocessing/inference");

  auto* gen = app.add_subcommand("phantom-gen", "Generate a synthetic DICOM tree + manifest");
  std::string gen_out = "phantom_data";
  int gen_pe = 13, gen_other = 26, gen_wnl = 14, gen_slices = 10, gen_size = 512;
  std::uint64_t gen_seed = 1;
  gen->add_option("--out", gen_out, "Output directory");
  gen->add_option("--pe", gen_pe, "PE patients");
  gen->add_option("--other", gen_other, "Other-disease patients");
  gen->add_option("--wnl", gen_wnl, "WNL patients");
  gen->add_option("--slices", gen_slices, "Slices per patient");
  gen->add_option("--seed", gen_seed, "Generator seed");
  gen->add_option("--size", gen_size, "Slice size in pixels");

  auto* pre = app.add_subcommand("preprocess", "Window + crop slices, dump PNGs and crop boxes");
  std::string pre_manifest, pre_out = "preprocess_out", pre_windows = "vascular,lung";
  pre->add_option("--manifest", pre_manifest, "Manifest TSV")->required();
  pre->add_option("--out", pre_out, "Output directory");
  pre->add_option("--windows", pre_windows, "Comma-separated window list");

  auto* tr = app.add_subcommand("train", "Train a stage classifier");
  int tr_stage = 1;
  std::string tr_manifest, tr_out = "stage.ctw";
  tr->add_option("--stage", tr_stage, "1 (WNL vs disease) or 2 (PE vs other)")
      ->check(CLI::Range(1, 2));
  tr->add_option("--manifest", tr_manifest, "Manifest TSV")->required();
  tr->add_option("--out", tr_out, "Output weight file");

  auto* ev = app.add_subcommand("eval", "Evaluate a stage classifier");
  int ev_stage = 1;
  std::string ev_manifest, ev_weights, ev_split = "TEST", ev_out;
  ev->add_option("--stage", ev_stage)->check(CLI::Range(1, 2));
  ev->add_option("--manifest", ev_manifest)->required();
  ev->add_option("--weights", ev_weights)->required();
  ev->add_option("--split", ev_split, "TRAIN, VAL, or TEST");
  ev->add_option("--out", ev_out, "Write metrics JSON here instead of stdout");

  auto* tg = app.add_subcommand("triage", "Run the full two-stage triage over a DICOM tree");
  std::string tg_dir, tg_s1, tg_s2, tg_out = "triage_out";
  bool tg_explain = false;
  tg->add_option("--dicom-dir", tg_dir)->required();
  tg->add_option("--stage1", tg_s1, "Stage-1 weight file")->required();
  tg->add_option("--stage2", tg_s2, "Stage-2 weight file")->required();
  tg->add_option("--out", tg_out, "Output directory");
  tg->add_flag("--explain", tg_explain, "Emit Grad-CAM overlays for slices predicted PE");

  auto* ex = app.add_subcommand("explain", "Grad-CAM overlays for one slice");
  std::string ex_dicom, ex_weights, ex_layer = "final", ex_out = "explain_out";
  int ex_class = 1;
  ex->add_option("--dicom", ex_dicom)->required();
  ex->add_option("--weights", ex_weights)->required();
  ex->add_option("--class", ex_class, "Class index (default: positive)");
  ex->add_option("--layer", ex_layer, "stageN or final");
  ex->add_option("--out", ex_out, "Output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;  // --help exits 0; usage errors exit 2
  }

  try {
    if (!config_file.empty()) cfg.apply_file(config_file);
    for (const std::string& kv : overrides) {
      const std::size_t eq = kv.find('=');
      if (eq == std::string::npos) throw ConfigError("--set expects key=value, got " + kv);
      cfg.apply_kv(kv.substr(0, eq), kv.substr(eq + 1));
    }
    cfg.validate();

    if (gen->parsed())
      return cmd_phantom_gen(gen_out, gen_pe, gen_other, gen_wnl, gen_slices, gen_seed,
                             gen_size);
    if (pre->parsed())
      return cmd_preprocess(pre_manifest, pre_out, cfg, parse_window_list(pre_windows));
    if (tr->parsed()) return cmd_train(tr_stage, tr_manifest, tr_out, cfg);
    if (ev->parsed())
      return cmd_eval(ev_stage, ev_manifest, ev_weights, parse_split(ev_split), cfg, ev_out);
    if (tg->parsed()) return cmd_triage(tg_dir, tg_s1, tg_s2, tg_out, tg_explain, cfg);
    if (ex->parsed()) return cmd_explain(ex_dicom, ex_weights, ex_class, ex_layer, ex_out, cfg);
    return 2;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const ModelError& e) {
    if (e.kind() == ModelError::Kind::BadConfig) {
      std::cerr << "config error: " << e.what() << "\n";
      return 2;
    }
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace ctt
