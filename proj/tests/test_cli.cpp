#include "emo/cli.hpp"
#include "emo/data.hpp"
#include "emo/model.hpp"
#include "test_util.hpp"

#include <doctest.h>
#include <json.hpp>

#include <fstream>
#include <limits>

using namespace emo;
using emo::testing::TempDir;

namespace {

nlohmann::json read_json(const std::string& path) {
  std::ifstream in(path);
  return nlohmann::json::parse(in);
}

int count_lines(const std::string& path) {
  std::ifstream in(path);
  int n = 0;
  for (std::string line; std::getline(in, line);) ++n;
  return n;
}

// Small corpus shared by the end-to-end cases.
class Corpus {
 public:
  Corpus() : dir_("cli") {
    std::ofstream(dir_.str("spec.json"))
        << R"({"n_utts": 40, "seed": 3, "teacher_dim": 6, "student_dim": 4, "max_seconds": 3.0})";
    status_ = cli::run({"gen-synth", "--spec", dir_.str("spec.json"), "--out", dir_.str("corpus")});
  }
  int status() const { return status_; }
  std::string path(const std::string& leaf) const { return dir_.str(leaf); }
  std::string manifest() const { return dir_.str("corpus/manifest.jsonl"); }

 private:
  TempDir dir_;
  int status_;
};

std::vector<std::string> small_train(const Corpus& c, const std::string& features,
                                     const std::string& out) {
  return {"train",     "--manifest",   c.manifest(), "--features",   features,
          "--arch",    "gru",          "--out",      c.path(out),    "--hidden",
          "6",         "--embed-dim",  "5",          "--max-epochs", "2",
          "--batch-size", "8"};
}

}  // namespace

TEST_SUITE("cli") {

TEST_CASE("usage errors exit with 1") {
  CHECK(cli::run({}) == cli::kExitUsage);
  CHECK(cli::run({"frobnicate"}) == cli::kExitUsage);
  CHECK(cli::run({"train", "--manifest", "m.jsonl"}) == cli::kExitUsage);
  CHECK(cli::run({"train", "--manifest", "m", "--features", "f", "--out", "o", "--arch", "lstm"}) ==
        cli::kExitUsage);
  CHECK(cli::run({"--help"}) == cli::kExitOk);
}

TEST_CASE("data errors exit with 2") {
  TempDir dir("cli_data");
  CHECK(cli::run({"train", "--manifest", dir.str("absent.jsonl"), "--features", "mfb", "--out",
                  dir.str("o")}) == cli::kExitData);
  std::ofstream(dir.str("junk.emow")) << "garbage";
  CHECK(cli::run({"inspect", "--ckpt", dir.str("junk.emow")}) == cli::kExitData);
}

TEST_CASE("end to end: train, eval, export, inspect, distill") {
  Corpus c;
  REQUIRE(c.status() == cli::kExitOk);
  CHECK(read_manifest(c.manifest()).records.size() == 40);

  REQUIRE(cli::run(small_train(c, "embed", "teacher")) == cli::kExitOk);
  CHECK(std::filesystem::exists(c.path("teacher/model.emow")));
  CHECK(std::filesystem::exists(c.path("teacher/config.json")));
  CHECK(count_lines(c.path("teacher/train_log.jsonl")) == 2);
  CHECK(read_json(c.path("teacher/fit_report.json")).contains("best_epoch"));
  CHECK(EmotionModel::load(c.path("teacher/model.emow")).config().features == "embed");

  REQUIRE(cli::run({"eval", "--ckpt", c.path("teacher/model.emow"), "--manifest", c.manifest(),
                    "--split", "test", "--report", c.path("report.json")}) == cli::kExitOk);
  auto report = read_json(c.path("report.json"));
  CHECK(report["count"] == 4);
  CHECK(report["valence_rmse_bins"].size() == 6);

  REQUIRE(cli::run({"export-embeddings", "--ckpt", c.path("teacher/model.emow"), "--manifest",
                    c.manifest(), "--split", "val", "--out", c.path("emb.csv")}) == cli::kExitOk);
  CHECK(count_lines(c.path("emb.csv")) == 5);

  CHECK(cli::run({"inspect", "--ckpt", c.path("teacher/model.emow")}) == cli::kExitOk);

  REQUIRE(cli::run({"distill", "--teacher-ckpt", c.path("teacher/model.emow"), "--teacher-features",
                    "embed", "--student-features", "mfb", "--manifest", c.manifest(), "--out",
                    c.path("student"), "--arch", "tcgru", "--switch-epoch", "1"}) == cli::kExitOk);
  CHECK(std::filesystem::exists(c.path("student/teacher_cache.emot")));
  const int epochs = count_lines(c.path("student/train_log.jsonl"));
  CHECK(epochs >= 2);
  EmotionModel student = EmotionModel::load(c.path("student/model.emow"));
  CHECK(student.config().embed_dim == 5);
  CHECK(student.config().input_dim == 4);
  CHECK(student.config().use_tconv);
}

TEST_CASE("fused features and wrong widths") {
  Corpus c;
  REQUIRE(c.status() == cli::kExitOk);
  REQUIRE(cli::run(small_train(c, "fused:embed,mfb", "fused")) == cli::kExitOk);
  CHECK(EmotionModel::load(c.path("fused/model.emow")).config().input_dim == 10);
  // A checkpoint evaluated on features of another width is a data error.
  CHECK(cli::run({"eval", "--ckpt", c.path("fused/model.emow"), "--manifest", c.manifest(),
                  "--features", "mfb", "--report", c.path("r.json")}) == cli::kExitData);
}

TEST_CASE("non-finite features exit with 3") {
  Corpus c;
  REQUIRE(c.status() == cli::kExitOk);
  Manifest m = read_manifest(c.manifest());
  for (const auto& r : m.records) {
    if (r.split != Split::kTrain) continue;
    const std::string p = c.path("corpus/" + r.features.at("mfb"));
    FeatureSequence seq = read_feature_file(p);
    seq.frames(0, 0) = std::numeric_limits<double>::infinity();
    write_feature_file(p, seq);
  }
  CHECK(cli::run(small_train(c, "mfb", "bad")) == cli::kExitNumeric);
}

}  // TEST_SUITE
