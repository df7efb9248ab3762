#include "emo/cli.hpp"

#include "emo/data.hpp"
#include "emo/errors.hpp"
#include "emo/evaluation.hpp"
#include "emo/model.hpp"
#include "emo/synthetic.hpp"
#include "emo/training.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

namespace emo::cli {

namespace fs = std::filesystem;
using ojson = nlohmann::ordered_json;

namespace {

std::string slurp(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError(DataError::Kind::kMissing, "cannot open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError(DataError::Kind::kIo, "cannot write " + path.string());
  out << text;
  if (!text.empty() && text.back() != '\n') out << '\n';
}

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw DataError(DataError::Kind::kIo, "cannot create " + dir + ": " + ec.message());
}

Manifest load_manifest(const std::string& path) {
  if (!fs::exists(path)) throw DataError(DataError::Kind::kMissing, "manifest not found: " + path);
  return read_manifest(path);
}

bool use_tconv(const std::string& arch) { return arch == "tcgru"; }

ojson fit_summary(const FitReport& r) {
  ojson j;
  j["best_epoch"] = r.best_epoch;
  j["epochs_run"] = r.epochs.size();
  j["stopped_early"] = r.stopped_early;
  j["best_val_ccc"] = {{"act", r.best_val_ccc[0]}, {"val", r.best_val_ccc[1]},
                       {"dom", r.best_val_ccc[2]}};
  j["best_val_ccc_mean"] = r.best_val_mean;
  return j;
}

struct TrainFlags {
  int hidden = 128;
  int embed_dim = 128;
  int max_epochs = 100;
  int patience = 10;
  int batch_size = kDefaultBatchSize;
  double lr = AdamConfig{}.lr;

  void attach(CLI::App* cmd) {
    cmd->add_option("--hidden", hidden, "recurrent units")->capture_default_str();
    cmd->add_option("--embed-dim", embed_dim, "utterance embedding width")->capture_default_str();
    cmd->add_option("--max-epochs", max_epochs)->capture_default_str();
    cmd->add_option("--patience", patience)->capture_default_str();
    cmd->add_option("--batch-size", batch_size)->capture_default_str();
    cmd->add_option("--lr", lr)->capture_default_str();
  }
  TrainConfig config(std::uint64_t seed) const {
    TrainConfig c;
    c.max_epochs = max_epochs;
    c.patience = patience;
    c.batch_size = batch_size;
    c.adam.lr = lr;
    c.seed = seed;
    return c;
  }
  void echo(ojson& j) const {
    j["hidden"] = hidden;
    j["embed_dim"] = embed_dim;
    j["max_epochs"] = max_epochs;
    j["patience"] = patience;
    j["batch_size"] = batch_size;
    j["lr"] = lr;
  }
};

void print_fit(const FitReport& r) {
  std::cout << "best epoch " << r.best_epoch << " of " << r.epochs.size()
            << (r.stopped_early ? " (early stop)" : "") << "\n"
            << "validation CCC act " << r.best_val_ccc[0] << " val " << r.best_val_ccc[1]
            << " dom " << r.best_val_ccc[2] << "\n";
}

Dataset load_split(const Manifest& m, const std::string& split, const FeatureSource& src) {
  if (split == "all") {
    Dataset all;
    for (auto s : {Split::kTrain, Split::kVal, Split::kTest}) {
      auto part = load_dataset(m, s, src);
      std::move(part.begin(), part.end(), std::back_inserter(all));
    }
    return all;
  }
  return load_dataset(m, parse_split(split), src);
}

std::string features_or_default(const std::string& flag, const EmotionModel& model) {
  if (!flag.empty()) return flag;
  if (model.config().features.empty()) {
    throw UsageError("--features is required: checkpoint does not record its feature source");
  }
  return model.config().features;
}

}  // namespace

int run(const std::vector<std::string>& args) {
  CLI::App app{"Dimensional speech emotion training and evaluation"};
  app.require_subcommand(1);

  // gen-synth
  std::string spec_path, out_dir;
  auto* gen = app.add_subcommand("gen-synth", "generate a synthetic corpus");
  gen->add_option("--spec", spec_path, "synthetic spec JSON")->required();
  gen->add_option("--out", out_dir, "output directory")->required();

  // train
  std::string manifest_path, features, arch = "tcgru";
  std::uint64_t seed = 1;
  TrainFlags train_flags;
  auto* train = app.add_subcommand("train", "train an emotion model");
  train->add_option("--manifest", manifest_path)->required();
  train->add_option("--features", features, "mfb | embed | fused:<a>,<b> | <dir>")->required();
  train->add_option("--arch", arch)->check(CLI::IsMember({"gru", "tcgru"}))->capture_default_str();
  train->add_option("--seed", seed)->capture_default_str();
  train->add_option("--out", out_dir)->required();
  train_flags.attach(train);

  // distill
  std::string teacher_ckpt, teacher_features, student_features;
  ScheduleConfig sched;
  int min_epochs = -1;
  TrainFlags distill_flags;
  auto* distill = app.add_subcommand("distill", "train a student against a cached teacher");
  distill->add_option("--teacher-ckpt", teacher_ckpt)->required();
  distill->add_option("--teacher-features", teacher_features)->required();
  distill->add_option("--student-features", student_features)->required();
  distill->add_option("--manifest", manifest_path)->required();
  distill->add_option("--out", out_dir)->required();
  distill->add_option("--arch", arch)->check(CLI::IsMember({"gru", "tcgru"}))->capture_default_str();
  distill->add_option("--seed", seed)->capture_default_str();
  distill->add_option("--switch-epoch", sched.switch_epoch)->capture_default_str();
  distill->add_option("--kappa-early", sched.kappa_early)->capture_default_str();
  distill->add_option("--lambda-early", sched.lambda_early)->capture_default_str();
  distill->add_option("--kappa-late", sched.kappa_late)->capture_default_str();
  distill->add_option("--lambda-late", sched.lambda_late)->capture_default_str();
  distill->add_option("--min-epochs", min_epochs, "default: switch epoch + 1");
  distill_flags.attach(distill);

  // eval
  std::string ckpt, split = "test", report_path;
  int n_bins = kDefaultValenceBins;
  auto* eval = app.add_subcommand("eval", "split-level CCC and valence-interval RMSE");
  eval->add_option("--ckpt", ckpt)->required();
  eval->add_option("--manifest", manifest_path)->required();
  eval->add_option("--split", split)->capture_default_str();
  eval->add_option("--report", report_path)->required();
  eval->add_option("--features", features, "default: recorded in checkpoint");
  eval->add_option("--bins", n_bins)->capture_default_str();

  // export-embeddings
  std::string out_path;
  auto* exp = app.add_subcommand("export-embeddings", "write utterance embeddings as CSV");
  exp->add_option("--ckpt", ckpt)->required();
  exp->add_option("--manifest", manifest_path)->required();
  exp->add_option("--out", out_path)->required();
  exp->add_option("--split", split)->capture_default_str();
  exp->add_option("--features", features, "default: recorded in checkpoint");

  // inspect
  auto* inspect = app.add_subcommand("inspect", "print the parameter report");
  inspect->add_option("--ckpt", ckpt)->required();

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    std::cout << app.help();
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    std::cerr << e.what() << "\n\n" << app.help();
    return kExitUsage;
  }

  try {
    if (*gen) {
      SyntheticSpec spec;
      try {
        spec = SyntheticSpec::from_json(slurp(spec_path));
      } catch (const nlohmann::json::exception& e) {
        throw DataError(DataError::Kind::kInvalidRecord, spec_path + ": " + e.what());
      }
      ensure_dir(out_dir);
      const auto m = gen_synthetic(spec, out_dir);
      write_text(fs::path(out_dir) / "config.json", spec.to_json());
      std::cout << "wrote " << m.records.size() << " utterances to " << out_dir << "\n";
    } else if (*train) {
      const Manifest m = load_manifest(manifest_path);
      const auto src = FeatureSource::parse(features);
      const Dataset tr = load_dataset(m, Split::kTrain, src);
      const Dataset va = load_dataset(m, Split::kVal, src);
      if (tr.empty()) throw DataError(DataError::Kind::kMissing, "training split is empty");
      ensure_dir(out_dir);

      ModelConfig cfg;
      cfg.input_dim = static_cast<int>(tr.front().frames.cols());
      cfg.use_tconv = use_tconv(arch);
      cfg.hidden = train_flags.hidden;
      cfg.embed_dim = train_flags.embed_dim;
      cfg.features = features;

      ojson echo;
      echo["command"] = "train";
      echo["manifest"] = manifest_path;
      echo["features"] = features;
      echo["arch"] = arch;
      echo["seed"] = seed;
      train_flags.echo(echo);
      write_text(fs::path(out_dir) / "config.json", echo.dump(2));

      EmotionModel model(cfg, seed);
      TrainConfig tc = train_flags.config(seed);
      tc.log_path = (fs::path(out_dir) / "train_log.jsonl").string();
      const auto report = fit(model, tr, va, tc);
      model.save((fs::path(out_dir) / "model.emow").string());
      write_text(fs::path(out_dir) / "fit_report.json", fit_summary(report).dump(2));
      print_fit(report);
    } else if (*distill) {
      const Manifest m = load_manifest(manifest_path);
      const EmotionModel teacher = EmotionModel::load(teacher_ckpt);
      const Dataset teacher_train =
          load_dataset(m, Split::kTrain, FeatureSource::parse(teacher_features));
      const TeacherCache cache = prepare_teacher_cache(teacher, teacher_train);
      ensure_dir(out_dir);
      write_teacher_cache((fs::path(out_dir) / "teacher_cache.emot").string(), cache);

      const auto src = FeatureSource::parse(student_features);
      const Dataset tr = load_dataset(m, Split::kTrain, src);
      const Dataset va = load_dataset(m, Split::kVal, src);
      if (tr.empty()) throw DataError(DataError::Kind::kMissing, "training split is empty");

      ModelConfig cfg;
      cfg.input_dim = static_cast<int>(tr.front().frames.cols());
      cfg.use_tconv = use_tconv(arch);
      cfg.hidden = distill_flags.hidden;
      cfg.embed_dim = teacher.config().embed_dim;
      cfg.features = student_features;

      TrainConfig tc = distill_flags.config(seed);
      tc.schedule = sched;
      tc.min_epochs = min_epochs >= 0 ? min_epochs : sched.switch_epoch + 1;
      tc.log_path = (fs::path(out_dir) / "train_log.jsonl").string();

      ojson echo;
      echo["command"] = "distill";
      echo["manifest"] = manifest_path;
      echo["teacher_ckpt"] = teacher_ckpt;
      echo["teacher_features"] = teacher_features;
      echo["student_features"] = student_features;
      echo["arch"] = arch;
      echo["seed"] = seed;
      distill_flags.echo(echo);
      echo["embed_dim"] = cfg.embed_dim;
      echo["schedule"] = {{"switch_epoch", sched.switch_epoch},
                          {"kappa_early", sched.kappa_early},
                          {"lambda_early", sched.lambda_early},
                          {"kappa_late", sched.kappa_late},
                          {"lambda_late", sched.lambda_late}};
      echo["min_epochs"] = tc.min_epochs;
      write_text(fs::path(out_dir) / "config.json", echo.dump(2));

      EmotionModel student(cfg, seed);
      const auto report = fit(student, tr, va, tc, &cache);
      student.save((fs::path(out_dir) / "model.emow").string());
      write_text(fs::path(out_dir) / "fit_report.json", fit_summary(report).dump(2));
      print_fit(report);
    } else if (*eval) {
      const EmotionModel model = EmotionModel::load(ckpt);
      const Manifest m = load_manifest(manifest_path);
      const auto src = FeatureSource::parse(features_or_default(features, model));
      const Dataset data = load_split(m, split, src);
      if (data.size() < 2) {
        throw DataError(DataError::Kind::kMissing, "split '" + split + "' has fewer than 2 utterances");
      }
      const auto p = predict(model, data);
      const auto report = evaluate_predictions(p);
      const auto bins = rmse_by_valence_bin(p.scores.row(kValence).transpose(),
                                            p.labels.row(kValence).transpose(), n_bins);
      write_text(report_path, report_json(report, bins));
      std::cout << report_table(report, bins);
    } else if (*exp) {
      const EmotionModel model = EmotionModel::load(ckpt);
      const Manifest m = load_manifest(manifest_path);
      const auto src = FeatureSource::parse(features_or_default(features, model));
      const Dataset data = load_split(m, split, src);
      export_embeddings(predict(model, data), out_path);
      std::cout << "wrote " << data.size() << " embeddings to " << out_path << "\n";
    } else if (*inspect) {
      const EmotionModel model = EmotionModel::load(ckpt);
      const auto r = model.param_report();
      const auto& cfg = model.config();
      std::cout << (cfg.use_tconv ? "TCGRU" : "GRU") << " input_dim=" << cfg.input_dim
                << " hidden=" << cfg.hidden << " embed_dim=" << cfg.embed_dim << "\n";
      for (const auto& [name, n] : r.tensors) std::cout << "  " << name << " " << n << "\n";
      std::cout << "parameters " << r.count << " (heads " << r.head_count << ")\n"
                << "size at fp32 " << r.bytes_fp32 << " bytes (" << r.bytes_fp32 / 1.0e6
                << " MB)\n";
    }
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitData;
  }
  return kExitOk;
}

}  // namespace emo::cli
